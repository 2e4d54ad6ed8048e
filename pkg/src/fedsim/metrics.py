"""Per-round metric records and bit-exact file output.

The CSV schema is a stability contract: header byte-for-byte as below,
floats at 6 significant digits, bit counters as exact integers, optional
eval fields empty when a round was not evaluated. The JSONL mirror carries
the same field names with null for missing values. Identical runs must
produce byte-identical files, so everything here is a pure function of the
recorded rows.

Bit counters are plain python ints (a long run of a megabyte-scale model
crosses 10^11 bits, past 32-bit range) and cumulative fields are validated
prefix sums of the per-round fields.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

CSV_HEADER = (
    "round,train_loss,train_accuracy,eval_loss,eval_accuracy,"
    "broadcast_bits_round,aggregate_bits_round,"
    "cumulative_broadcast_bits,cumulative_aggregate_bits"
)

FIELD_NAMES = tuple(CSV_HEADER.split(","))


class MetricsError(ValueError):
    """Inconsistent metric record or log sequence."""


@dataclass(frozen=True)
class RoundMetrics:
    """One row of the metrics stream.

    eval fields are None on rounds the evaluation cadence skipped. The
    cumulative fields may be left None and are then filled in by
    RunLog.record; when provided they must equal the running prefix sums.
    """

    round: int
    train_loss: float
    train_accuracy: float
    eval_loss: float | None
    eval_accuracy: float | None
    broadcast_bits_round: int
    aggregate_bits_round: int
    cumulative_broadcast_bits: int | None = None
    cumulative_aggregate_bits: int | None = None

    def __post_init__(self):
        if self.round < 1:
            raise MetricsError("round must be >= 1")
        if self.broadcast_bits_round < 0 or self.aggregate_bits_round < 0:
            raise MetricsError("bit counters must be >= 0")
        for label, value in (
            ("train_accuracy", self.train_accuracy),
            ("eval_accuracy", self.eval_accuracy),
        ):
            if value is not None and not 0.0 <= value <= 1.0:
                raise MetricsError(f"{label} must lie in [0, 1], got {value}")
        if (self.eval_loss is None) != (self.eval_accuracy is None):
            raise MetricsError("eval_loss and eval_accuracy must be set together")


class RunLog:
    """Ordered per-round rows with validated cumulative counters."""

    def __init__(self):
        self._rows: list[RoundMetrics] = []

    @property
    def rows(self) -> tuple[RoundMetrics, ...]:
        return tuple(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def record(self, row: RoundMetrics) -> RoundMetrics:
        """Append a row, filling or checking its cumulative counters."""
        if self._rows and row.round <= self._rows[-1].round:
            raise MetricsError(
                f"round {row.round} out of order after {self._rows[-1].round}"
            )
        prev_b = self._rows[-1].cumulative_broadcast_bits if self._rows else 0
        prev_a = self._rows[-1].cumulative_aggregate_bits if self._rows else 0
        cum_b = prev_b + row.broadcast_bits_round
        cum_a = prev_a + row.aggregate_bits_round
        if row.cumulative_broadcast_bits is None and row.cumulative_aggregate_bits is None:
            row = RoundMetrics(
                **{
                    **asdict(row),
                    "cumulative_broadcast_bits": cum_b,
                    "cumulative_aggregate_bits": cum_a,
                }
            )
        elif (row.cumulative_broadcast_bits, row.cumulative_aggregate_bits) != (cum_b, cum_a):
            raise MetricsError(
                f"cumulative bits for round {row.round} do not extend the prefix sums"
            )
        self._rows.append(row)
        return row

    @property
    def total_broadcast_bits(self) -> int:
        return self._rows[-1].cumulative_broadcast_bits if self._rows else 0

    @property
    def total_aggregate_bits(self) -> int:
        return self._rows[-1].cumulative_aggregate_bits if self._rows else 0

    def final_accuracy(self) -> float:
        """Last round's eval accuracy, falling back to train accuracy."""
        if not self._rows:
            raise MetricsError("empty run log")
        last = self._rows[-1]
        return last.eval_accuracy if last.eval_accuracy is not None else last.train_accuracy


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return "%.6g" % value


def csv_lines(log: RunLog) -> list[str]:
    """Header plus one formatted line per round, without newlines."""
    lines = [CSV_HEADER]
    for row in log.rows:
        record = asdict(row)
        lines.append(",".join(_format_value(record[name]) for name in FIELD_NAMES))
    return lines


def write_csv(log: RunLog, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("\n".join(csv_lines(log)) + "\n")


def write_jsonl(log: RunLog, path) -> None:
    """One object per round, same field names as the CSV, null for missing."""
    with open(path, "w", newline="") as f:
        for row in log.rows:
            record = asdict(row)
            f.write(json.dumps({name: record[name] for name in FIELD_NAMES}) + "\n")


def compare_runs(log_a: RunLog, log_b: RunLog) -> dict[str, float]:
    """Per-direction total-bit ratios (A over B) and the final accuracy delta."""
    if len(log_a) != len(log_b):
        raise MetricsError(f"round counts differ: {len(log_a)} vs {len(log_b)}")
    if len(log_a) == 0:
        raise MetricsError("cannot compare empty run logs")
    totals_a = (log_a.total_broadcast_bits, log_a.total_aggregate_bits)
    totals_b = (log_b.total_broadcast_bits, log_b.total_aggregate_bits)
    if min(totals_b) == 0:
        raise MetricsError("run B transmitted zero bits in some direction")
    return {
        "broadcast_bits_ratio": totals_a[0] / totals_b[0],
        "aggregate_bits_ratio": totals_a[1] / totals_b[1],
        "total_bits_ratio": sum(totals_a) / sum(totals_b),
        "final_accuracy_delta": log_a.final_accuracy() - log_b.final_accuracy(),
    }


@dataclass(frozen=True)
class RunSummary:
    """End-of-run rollup: config echo, final accuracy, bit totals, wall time."""

    config: dict
    rounds: int
    final_accuracy: float
    total_broadcast_bits: int
    total_aggregate_bits: int
    wall_time_seconds: float

    @classmethod
    def from_log(cls, config: dict, log: RunLog, wall_time_seconds: float) -> "RunSummary":
        return cls(
            config=config,
            rounds=len(log),
            final_accuracy=log.final_accuracy(),
            total_broadcast_bits=log.total_broadcast_bits,
            total_aggregate_bits=log.total_aggregate_bits,
            wall_time_seconds=wall_time_seconds,
        )

    def write_json(self, path) -> None:
        with open(path, "w", newline="") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

"""Experiment configs, the run pipeline, and the canned recipes.

A config is a JSON object naming a dataset source (IDX file pair or the
synthetic blob generator), a model, a partitioner, and the federated
hyperparameters. Unknown keys are rejected so a typo cannot silently fall
back to a default. Relative IDX paths resolve against the FEDSIM_DATA_DIR
environment variable.

`run` executes the full loop and drops, in the output directory:

  metrics.csv / metrics.jsonl   per-round stream (byte-stable given a seed)
  summary.json                  config echo, final accuracy, bit totals,
                                wall time (the one field that varies rerun
                                to rerun)
  partition.jsonl               per-client sizes and label counts
  *.png                         training, communication and label figures

Two recipes pair runs that differ in exactly one ingredient:

  exp1_compression  identity vs 8-bit uniform-quantized transport on a
                    784-200-10 MLP, IID clients. Desk-scale defaults
                    (100-client pool, 50 rounds); a full-scale variant of
                    the same comparison uses a 3383-client pool for 250
                    rounds, reachable through the override flags.
  exp2_noniid       IID vs one-class-per-client shards on a 784-10-10 MLP,
                    10 clients, full participation, 5 local epochs.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import codecs, data, federation, metrics, models, plots, rng
from .tensor import Tensor

DATA_DIR_ENV = "FEDSIM_DATA_DIR"
GRAD_TOLERANCE = 1e-4
# central differences say nothing within h of a relu kink; see _mlp_kink_margin
KINK_MARGIN = 5e-3


class ConfigError(ValueError):
    """Malformed or contradictory experiment configuration."""


def _check_keys(mapping: dict, allowed: tuple[str, ...], context: str) -> None:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)} (allowed: {list(allowed)})")


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context} is missing required key {key!r}")
    return mapping[key]


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def _as_number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def resolve_data_path(path: str) -> Path:
    """Relative IDX paths resolve against FEDSIM_DATA_DIR (default cwd)."""
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get(DATA_DIR_ENV, ".")) / p


_DATASET_KEYS = {
    "synthetic": ("source", "n_per_class", "num_classes", "input_dim", "noise", "n_test_per_class"),
    "idx": ("source", "images", "labels", "test_images", "test_labels", "num_classes"),
}
_MODEL_KEYS = {
    "mlp": ("kind", "input_dim", "hidden_units", "num_classes"),
    "softmax_regression": ("kind", "input_dim", "num_classes"),
}
_PARTITION_KEYS = {
    "iid": ("kind", "num_clients"),
    "label_skew": ("kind", "num_clients"),
    "quantity_skew": ("kind", "num_clients", "ratio"),
}
_CODEC_KEYS = (
    "scheme",
    "quant_bits",
    "min_elements_threshold",
    "apply_to_broadcast",
    "apply_to_aggregate",
)
_TOP_KEYS = (
    "dataset",
    "model",
    "partition",
    "rounds",
    "clients_per_round",
    "client_fraction",
    "batch_size",
    "local_epochs",
    "client_lr",
    "server_lr",
    "seed",
    "codec",
    "eval_every",
)


def _validate_tagged(mapping, kinds: dict, tag: str, context: str) -> dict:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context} must be an object")
    kind = _require(mapping, tag, context)
    if kind not in kinds:
        raise ConfigError(f"{context} {tag} {kind!r} not one of {sorted(kinds)}")
    _check_keys(mapping, kinds[kind], context)
    return dict(mapping)


@dataclass(frozen=True)
class ExperimentConfig:
    """One validated run: data, model, partitioner and federated settings."""

    dataset: dict
    model: dict
    partition: dict
    rounds: int
    batch_size: int
    local_epochs: int
    client_lr: float
    seed: int
    clients_per_round: int | None = None
    client_fraction: float | None = None
    server_lr: float = 1.0
    codec: dict | None = None
    eval_every: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(raw, _TOP_KEYS, "config")
        dataset = _validate_tagged(_require(raw, "dataset", "config"), _DATASET_KEYS, "source", "dataset")
        model = _validate_tagged(_require(raw, "model", "config"), _MODEL_KEYS, "kind", "model")
        partition = _validate_tagged(
            _require(raw, "partition", "config"), _PARTITION_KEYS, "kind", "partition"
        )
        codec = raw.get("codec")
        if codec is not None:
            if not isinstance(codec, dict):
                raise ConfigError("codec must be an object")
            _check_keys(codec, _CODEC_KEYS, "codec")
            codec = dict(codec)
        config = cls(
            dataset=dataset,
            model=model,
            partition=partition,
            rounds=_as_int(_require(raw, "rounds", "config"), "rounds"),
            batch_size=_as_int(_require(raw, "batch_size", "config"), "batch_size"),
            local_epochs=_as_int(_require(raw, "local_epochs", "config"), "local_epochs"),
            client_lr=_as_number(_require(raw, "client_lr", "config"), "client_lr"),
            seed=_as_int(_require(raw, "seed", "config"), "seed"),
            clients_per_round=(
                _as_int(raw["clients_per_round"], "clients_per_round")
                if "clients_per_round" in raw
                else None
            ),
            client_fraction=(
                _as_number(raw["client_fraction"], "client_fraction")
                if "client_fraction" in raw
                else None
            ),
            server_lr=_as_number(raw.get("server_lr", 1.0), "server_lr"),
            codec=codec,
            eval_every=_as_int(raw.get("eval_every", 1), "eval_every"),
        )
        config.validate()
        return config

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(raw)

    def validate(self) -> None:
        """Cross-field checks; the module constructors re-check their own."""
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0 (0 means final round only)")
        try:
            self.codec_policy()
            self.model_spec()
            self.fed_config()
        except (codecs.CodecError, federation.FederationError, ValueError) as e:
            raise ConfigError(str(e)) from e
        model_classes = self.model["num_classes"]
        declared = self.dataset.get("num_classes")
        if declared is not None and declared != model_classes:
            raise ConfigError(
                f"model expects {model_classes} classes, dataset declares {declared}"
            )
        if self.dataset["source"] == "synthetic":
            if self.dataset["num_classes"] != model_classes:
                raise ConfigError(
                    f"model expects {model_classes} classes, dataset generates "
                    f"{self.dataset['num_classes']}"
                )
            if self.dataset["input_dim"] != self.model["input_dim"]:
                raise ConfigError("model input_dim does not match synthetic input_dim")

    def as_dict(self) -> dict:
        out = {
            "dataset": dict(self.dataset),
            "model": dict(self.model),
            "partition": dict(self.partition),
            "rounds": self.rounds,
            "batch_size": self.batch_size,
            "local_epochs": self.local_epochs,
            "client_lr": self.client_lr,
            "server_lr": self.server_lr,
            "seed": self.seed,
            "codec": dict(self.codec) if self.codec is not None else {"scheme": "identity"},
            "eval_every": self.eval_every,
        }
        if self.clients_per_round is not None:
            out["clients_per_round"] = self.clients_per_round
        if self.client_fraction is not None:
            out["client_fraction"] = self.client_fraction
        return out

    def model_spec(self) -> models.ModelSpec:
        m = self.model
        if m["kind"] == "mlp":
            return models.Mlp(
                input_dim=_as_int(m["input_dim"], "model.input_dim"),
                hidden_units=_as_int(m["hidden_units"], "model.hidden_units"),
                num_classes=_as_int(m["num_classes"], "model.num_classes"),
            )
        return models.SoftmaxRegression(
            input_dim=_as_int(m["input_dim"], "model.input_dim"),
            num_classes=_as_int(m["num_classes"], "model.num_classes"),
        )

    def codec_policy(self) -> codecs.CodecPolicy:
        if self.codec is None:
            return codecs.IDENTITY
        return codecs.CodecPolicy(**self.codec)

    def fed_config(self) -> federation.FedConfig:
        return federation.FedConfig(
            rounds=self.rounds,
            batch_size=self.batch_size,
            local_epochs=self.local_epochs,
            client_lr=self.client_lr,
            seed=self.seed,
            clients_per_round=self.clients_per_round,
            client_fraction=self.client_fraction,
            server_lr=self.server_lr,
            codec=self.codec_policy(),
        )

    def load_datasets(self) -> tuple[data.Dataset, data.Dataset | None]:
        """Training set plus held-out evaluation set (None when unavailable)."""
        d = self.dataset
        if d["source"] == "synthetic":
            n_per_class = _as_int(d["n_per_class"], "dataset.n_per_class")
            n_test = _as_int(
                d.get("n_test_per_class", max(n_per_class // 10, 1)), "dataset.n_test_per_class"
            )
            common = dict(
                num_classes=_as_int(d["num_classes"], "dataset.num_classes"),
                input_dim=_as_int(d["input_dim"], "dataset.input_dim"),
                noise=_as_number(d.get("noise", 0.15), "dataset.noise"),
            )
            train = data.synth_dataset(
                rng.RngStream(self.seed, ("data", "train")), n_per_class, **common
            )
            test = data.synth_dataset(rng.RngStream(self.seed, ("data", "test")), n_test, **common)
            return train, test
        images = resolve_data_path(_require(d, "images", "dataset"))
        labels = resolve_data_path(_require(d, "labels", "dataset"))
        for p in (images, labels):
            if not p.exists():
                raise ConfigError(f"dataset file not found: {p}")
        num_classes = d.get("num_classes")
        train = data.load_idx(images, labels, num_classes=num_classes)
        test = None
        if "test_images" in d or "test_labels" in d:
            if not ("test_images" in d and "test_labels" in d):
                raise ConfigError("test_images and test_labels must be given together")
            test = data.load_idx(
                resolve_data_path(d["test_images"]),
                resolve_data_path(d["test_labels"]),
                num_classes=train.num_classes,
            )
        return train, test

    def build_partition(self, train: data.Dataset) -> data.ClientPartition:
        p = self.partition
        k = _as_int(p["num_clients"], "partition.num_clients")
        stream = rng.RngStream(self.seed, ("partition",))
        if p["kind"] == "iid":
            return data.partition_iid(train, k, stream)
        if p["kind"] == "label_skew":
            return data.partition_label_skew(train, k, stream)
        ratio = _as_number(_require(p, "ratio", "partition"), "partition.ratio")
        return data.partition_quantity_skew(train, k, ratio, stream)


@dataclass(frozen=True)
class RunResult:
    summary: metrics.RunSummary
    log: metrics.RunLog
    out_dir: Path


@dataclass(frozen=True)
class ComparisonResult:
    run_a: RunResult
    run_b: RunResult
    stats: dict


def _should_eval(round_index: int, rounds: int, eval_every: int) -> bool:
    if round_index == rounds:
        return True
    return eval_every > 0 and round_index % eval_every == 0


def run(config: ExperimentConfig, out_dir, make_figures: bool = True) -> RunResult:
    """Execute one federated run and write its whole report."""
    start = time.perf_counter()
    out_dir = Path(out_dir)
    train, test = config.load_datasets()
    if train.input_dim != config.model["input_dim"]:
        raise ConfigError(
            f"model input_dim {config.model['input_dim']} but data has {train.input_dim}"
        )
    if train.num_classes != config.model["num_classes"]:
        raise ConfigError(
            f"model num_classes {config.model['num_classes']} but data has {train.num_classes}"
        )
    spec = config.model_spec()
    partition = config.build_partition(train)
    fed = config.fed_config()
    fed.resolve_m(partition.num_clients)

    state = federation.initialize(spec, fed)
    log = metrics.RunLog()
    for _ in range(config.rounds):
        state, row = federation.next_round(state, spec, train, partition, fed)
        if _should_eval(row.round, config.rounds, config.eval_every):
            if test is not None:
                result = federation.centralized_evaluation(spec, state.params, test)
            else:
                result = federation.federated_evaluation(spec, state.params, train, partition)
            row = replace(row, eval_loss=result.loss, eval_accuracy=result.accuracy)
        log.record(row)

    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(log, out_dir / "metrics.csv")
    metrics.write_jsonl(log, out_dir / "metrics.jsonl")
    data.write_partition_jsonl(train, partition, out_dir / "partition.jsonl")
    summary = metrics.RunSummary.from_log(config.as_dict(), log, time.perf_counter() - start)
    summary.write_json(out_dir / "summary.json")
    if make_figures:
        plots.save_training_curves(log, out_dir / "training_curves.png")
        plots.save_bits_curves(log, out_dir / "bits_curves.png")
        plots.save_label_distribution(
            data.label_histogram(train, partition), out_dir / "label_distribution.png"
        )
    return RunResult(summary=summary, log=log, out_dir=out_dir)


def exp1_base_config(seed: int = 0) -> dict:
    """Identity-transport base run of the compression comparison."""
    return {
        "dataset": {
            "source": "synthetic",
            "n_per_class": 2000,
            "num_classes": 10,
            "input_dim": 784,
            "noise": 0.15,
            "n_test_per_class": 200,
        },
        "model": {"kind": "mlp", "input_dim": 784, "hidden_units": 200, "num_classes": 10},
        "partition": {"kind": "iid", "num_clients": 100},
        "rounds": 50,
        "clients_per_round": 10,
        "batch_size": 20,
        "local_epochs": 1,
        "client_lr": 0.05,
        "server_lr": 1.0,
        "seed": seed,
        "codec": {"scheme": "identity"},
        "eval_every": 1,
    }


def exp2_base_config(seed: int = 0) -> dict:
    """IID base run of the skewed-partition comparison."""
    return {
        "dataset": {
            "source": "synthetic",
            "n_per_class": 200,
            "num_classes": 10,
            "input_dim": 784,
            "noise": 0.15,
            "n_test_per_class": 100,
        },
        "model": {"kind": "mlp", "input_dim": 784, "hidden_units": 10, "num_classes": 10},
        "partition": {"kind": "iid", "num_clients": 10},
        "rounds": 20,
        "clients_per_round": 10,
        "batch_size": 20,
        "local_epochs": 5,
        "client_lr": 0.1,
        "server_lr": 1.0,
        "seed": seed,
        "codec": {"scheme": "identity"},
        "eval_every": 1,
    }


def _apply_overrides(raw: dict, rounds=None, clients_per_round=None, seed=None) -> dict:
    if rounds is not None:
        raw["rounds"] = rounds
    if clients_per_round is not None:
        raw["clients_per_round"] = clients_per_round
    if seed is not None:
        raw["seed"] = seed
    return raw


def exp1_compression(
    out_dir,
    seed: int = 0,
    rounds: int | None = None,
    clients_per_round: int | None = None,
    quant_bits: int = 8,
    make_figures: bool = True,
) -> ComparisonResult:
    """Identity vs uniform-quantized transport, same data, same seed."""
    out_dir = Path(out_dir)
    raw = _apply_overrides(exp1_base_config(seed), rounds, clients_per_round)
    config_a = ExperimentConfig.from_dict(raw)
    raw_b = dict(raw)
    raw_b["codec"] = {
        "scheme": "uniform_quant",
        "quant_bits": quant_bits,
        "min_elements_threshold": 10000,
        "apply_to_broadcast": True,
        "apply_to_aggregate": True,
    }
    config_b = ExperimentConfig.from_dict(raw_b)
    run_a = run(config_a, out_dir / "identity", make_figures=make_figures)
    run_b = run(config_b, out_dir / "quantized", make_figures=make_figures)
    comp = metrics.compare_runs(run_b.log, run_a.log)
    stats = {
        "broadcast_bits_ratio_quantized_over_identity": comp["broadcast_bits_ratio"],
        "aggregate_bits_ratio_quantized_over_identity": comp["aggregate_bits_ratio"],
        "total_bits_ratio_quantized_over_identity": comp["total_bits_ratio"],
        "analytic_ratio": codecs.compression_ratio(
            config_b.model_spec(), config_b.codec_policy()
        ),
        "final_accuracy_identity": run_a.log.final_accuracy(),
        "final_accuracy_quantized": run_b.log.final_accuracy(),
        "accuracy_delta_quantized_minus_identity": comp["final_accuracy_delta"],
    }
    with open(out_dir / "comparison.json", "w", newline="") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
        f.write("\n")
    if make_figures:
        plots.save_comparison_curves(
            run_a.log,
            run_b.log,
            "identity",
            "quantized",
            out_dir / "comparison.png",
            title="Transport codec comparison",
        )
    return ComparisonResult(run_a=run_a, run_b=run_b, stats=stats)


def exp2_noniid(
    out_dir,
    seed: int = 0,
    rounds: int | None = None,
    clients_per_round: int | None = None,
    make_figures: bool = True,
) -> ComparisonResult:
    """IID vs one-class-per-client partitioning, same data, same seed."""
    out_dir = Path(out_dir)
    raw = _apply_overrides(exp2_base_config(seed), rounds, clients_per_round)
    config_a = ExperimentConfig.from_dict(raw)
    raw_b = dict(raw)
    raw_b["partition"] = {"kind": "label_skew", "num_clients": raw["partition"]["num_clients"]}
    config_b = ExperimentConfig.from_dict(raw_b)
    run_a = run(config_a, out_dir / "iid", make_figures=make_figures)
    run_b = run(config_b, out_dir / "label_skew", make_figures=make_figures)
    comp = metrics.compare_runs(run_a.log, run_b.log)
    stats = {
        "final_accuracy_iid": run_a.log.final_accuracy(),
        "final_accuracy_label_skew": run_b.log.final_accuracy(),
        "accuracy_gap_iid_minus_label_skew": comp["final_accuracy_delta"],
    }
    with open(out_dir / "comparison.json", "w", newline="") as f:
        json.dump(stats, f, indent=2, sort_keys=True)
        f.write("\n")
    if make_figures:
        plots.save_comparison_curves(
            run_a.log,
            run_b.log,
            "iid",
            "label_skew",
            out_dir / "comparison.png",
            title="Partitioning comparison",
        )
    return ComparisonResult(run_a=run_a, run_b=run_b, stats=stats)


def _mlp_kink_margin(params: models.ModelParams, batch: models.Batch) -> float:
    """Smallest |pre-activation|; candidates near 0 invalidate central differences."""
    z1 = batch.inputs.array @ params.tensor("W1").array + params.tensor("b1").array
    return float(np.abs(z1).min())


def _random_params(spec: models.ModelSpec, stream: rng.RngStream) -> models.ModelParams:
    out = []
    for name, shape in models.param_shapes(spec):
        flat = rng.normal(stream.child(name), 0.0, 0.5, int(np.prod(shape)))
        out.append(models.Variable(name, Tensor(flat.data.reshape(shape))))
    return models.ModelParams(tuple(out))


def _random_batch(spec: models.ModelSpec, stream: rng.RngStream, n: int) -> models.Batch:
    inputs = rng.uniform(stream.child("x"), 0.0, 1.0, n * spec.input_dim)
    labels = rng.integers(stream.child("y"), 0, spec.num_classes, n)
    return models.Batch(Tensor(inputs.data.reshape(n, spec.input_dim)), labels)


def gradcheck_report(pairs: int = 5, seed: int = 0) -> dict:
    """Finite-difference audit of both model types on random (params, batch) pairs.

    Returns per-model worst relative errors per variable plus an overall
    pass flag at GRAD_TOLERANCE. MLP candidates whose smallest hidden
    pre-activation sits within KINK_MARGIN of the relu kink are skipped
    (the two-sided difference quotient is meaningless astride the kink)
    and replaced by the next candidate.
    """
    specs = {
        "softmax_regression": models.SoftmaxRegression(input_dim=12, num_classes=5),
        "mlp": models.Mlp(input_dim=10, hidden_units=7, num_classes=4),
    }
    report: dict = {"tolerance": GRAD_TOLERANCE, "pairs": pairs, "models": {}}
    worst_overall = 0.0
    for label, spec in specs.items():
        base = rng.RngStream(seed, ("gradcheck", label))
        worst: dict[str, float] = {}
        accepted = 0
        candidate = 0
        while accepted < pairs:
            stream = base.child(candidate)
            candidate += 1
            params = _random_params(spec, stream.child("params"))
            batch = _random_batch(spec, stream.child("batch"), n=9)
            if isinstance(spec, models.Mlp) and _mlp_kink_margin(params, batch) < KINK_MARGIN:
                continue
            errors = models.finite_difference_check(spec, params, batch)
            for name, err in errors.items():
                worst[name] = max(worst.get(name, 0.0), err)
            accepted += 1
        report["models"][label] = worst
        worst_overall = max(worst_overall, max(worst.values()))
    report["max_relative_error"] = worst_overall
    report["passed"] = worst_overall < GRAD_TOLERANCE
    return report


def partition_report(config: ExperimentConfig, out_dir, make_figures: bool = True) -> dict:
    """Build the configured partition and report sizes and label counts."""
    out_dir = Path(out_dir)
    train, _ = config.load_datasets()
    partition = config.build_partition(train)
    hist = data.label_histogram(train, partition)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.write_partition_jsonl(train, partition, out_dir / "partition.jsonl")
    if make_figures:
        plots.save_label_distribution(hist, out_dir / "label_distribution.png")
    return {
        "num_clients": partition.num_clients,
        "sizes": list(partition.sizes),
        "label_counts": hist.tolist(),
        "single_class_clients": int((np.count_nonzero(hist, axis=1) == 1).sum()),
    }

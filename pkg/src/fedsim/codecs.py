"""Transmission codecs for model parameters, with exact bit accounting.

Two schemes. The identity codec passes 32-bit floats through unchanged.
Uniform quantization maps each element of a variable to one of 2^quant_bits
evenly spaced levels between that variable's min and max, but only touches
variables with element_count strictly greater than min_elements_threshold;
smaller variables ride along raw.

Accounting convention, counted per encoded variable:

  raw        bit_count = 32 * element_count
  quantized  bit_count = 64 + quant_bits * element_count

The 64-bit header is the min and max as two 32-bit floats. Payloads are not
physically packed; a simulator measures the cost of sending bytes, it does
not ship them. Rounding is half away from zero so results are reproducible.

Quantized decode is min + code * step with step computed in float64 from the
float32 header, which keeps encode(decode(encode(x))) equal to encode(x) at
the code level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import ModelParams, ModelSpec, Variable, param_shapes
from .tensor import DTYPE, Tensor

SCHEMES = ("identity", "uniform_quant")
DIRECTIONS = ("broadcast", "aggregate")
RAW_BITS_PER_ELEMENT = 32
HEADER_BITS = 64


class CodecError(ValueError):
    """Invalid policy parameters or a malformed encoded payload."""


@dataclass(frozen=True)
class CodecPolicy:
    """What to do to a variable in transit, in either direction."""

    scheme: str
    quant_bits: int = 8
    min_elements_threshold: int = 10000
    apply_to_broadcast: bool = True
    apply_to_aggregate: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise CodecError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not 1 <= self.quant_bits <= 16:
            raise CodecError(f"quant_bits must be in [1, 16], got {self.quant_bits}")
        if self.min_elements_threshold < 0:
            raise CodecError("min_elements_threshold must be >= 0")

    def effective(self, direction: str) -> "CodecPolicy":
        """The policy actually applied in one direction; identity when opted out."""
        if direction not in DIRECTIONS:
            raise CodecError(f"unknown direction {direction!r}, expected one of {DIRECTIONS}")
        flag = self.apply_to_broadcast if direction == "broadcast" else self.apply_to_aggregate
        return self if flag else IDENTITY


IDENTITY = CodecPolicy(scheme="identity")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class EncodedVariable:
    """One variable as it crosses the wire.

    payload keeps the source shape: float32 values when raw, uint16 codes
    when quantized. vmin/vmax are the float32 header (None when raw).
    """

    name: str
    scheme: str
    element_count: int
    bit_count: int
    payload: np.ndarray
    vmin: float | None = None
    vmax: float | None = None
    quant_bits: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "payload", _frozen(self.payload))
        if self.element_count != self.payload.size:
            raise CodecError("element_count does not match payload size")
        if self.scheme == "raw":
            if self.payload.dtype != DTYPE or self.quant_bits is not None:
                raise CodecError("raw payload must be float32 with no quantization fields")
            expected = RAW_BITS_PER_ELEMENT * self.element_count
        elif self.scheme == "quantized":
            if self.payload.dtype != np.uint16:
                raise CodecError("quantized payload must be uint16 codes")
            if self.quant_bits is None or self.vmin is None or self.vmax is None:
                raise CodecError("quantized variable needs quant_bits, vmin and vmax")
            if self.payload.size and int(self.payload.max()) > (1 << self.quant_bits) - 1:
                raise CodecError(f"code out of range for {self.quant_bits}-bit quantization")
            expected = HEADER_BITS + self.quant_bits * self.element_count
        else:
            raise CodecError(f"unknown encoded scheme {self.scheme!r}")
        if self.bit_count != expected:
            raise CodecError(f"bit_count {self.bit_count} does not match formula ({expected})")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.payload.shape


@dataclass(frozen=True)
class EncodedModel:
    """Encoded variables in the source ModelParams order."""

    variables: tuple[EncodedVariable, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))

    @property
    def total_bits(self) -> int:
        return sum(v.bit_count for v in self.variables)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)


def _quantized_bits(count: int, quant_bits: int) -> int:
    return HEADER_BITS + quant_bits * count


def encode_variable(tensor: Tensor, policy: CodecPolicy, name: str = "") -> EncodedVariable:
    """Encode one variable under the policy. Small variables pass through raw."""
    arr = tensor.array
    if not np.isfinite(arr).all():
        raise CodecError(f"non-finite values in {name or 'tensor'}")
    count = arr.size
    if policy.scheme == "identity" or count <= policy.min_elements_threshold:
        return EncodedVariable(
            name=name,
            scheme="raw",
            element_count=count,
            bit_count=RAW_BITS_PER_ELEMENT * count,
            payload=arr,
        )
    vmin = arr.min()
    vmax = arr.max()
    bits = policy.quant_bits
    if vmax == vmin:
        codes = np.zeros(arr.shape, dtype=np.uint16)
    else:
        # float64 math on exact float32 endpoints; x - vmin is exact in float64
        step = (float(vmax) - float(vmin)) / ((1 << bits) - 1)
        scaled = (arr.astype(np.float64) - float(vmin)) / step
        codes = np.floor(scaled + 0.5)
        np.clip(codes, 0, (1 << bits) - 1, out=codes)
        codes = codes.astype(np.uint16)
    return EncodedVariable(
        name=name,
        scheme="quantized",
        element_count=count,
        bit_count=_quantized_bits(count, bits),
        payload=codes,
        vmin=float(vmin),
        vmax=float(vmax),
        quant_bits=bits,
    )


def decode_variable(encoded: EncodedVariable) -> Tensor:
    """Reconstruct the float32 variable; raw decode is bitwise identical."""
    if encoded.scheme == "raw":
        return Tensor(encoded.payload)
    if encoded.vmax == encoded.vmin:
        return Tensor._wrap(np.full(encoded.payload.shape, DTYPE(encoded.vmin)))
    step = (encoded.vmax - encoded.vmin) / ((1 << encoded.quant_bits) - 1)
    values = encoded.vmin + encoded.payload.astype(np.float64) * step
    return Tensor._wrap(values.astype(DTYPE))


def encode_model(params: ModelParams, policy: CodecPolicy) -> EncodedModel:
    """Encode every variable independently, preserving order."""
    return EncodedModel(
        tuple(encode_variable(v.tensor, policy, name=v.name) for v in params.variables)
    )


def decode_model(encoded: EncodedModel) -> ModelParams:
    """Decode back to ModelParams in the encoded order."""
    return ModelParams(
        tuple(Variable(e.name, decode_variable(e)) for e in encoded.variables)
    )


def encoded_bits(count: int, policy: CodecPolicy) -> int:
    """Analytic bit_count for a variable of `count` elements under the policy."""
    if policy.scheme == "uniform_quant" and count > policy.min_elements_threshold:
        return _quantized_bits(count, policy.quant_bits)
    return RAW_BITS_PER_ELEMENT * count


def compression_ratio(spec: ModelSpec, policy: CodecPolicy) -> float:
    """Encoded size over raw size for one full model, computed from shapes alone."""
    counts = [math.prod(shape) for _, shape in param_shapes(spec)]
    raw = RAW_BITS_PER_ELEMENT * sum(counts)
    return sum(encoded_bits(c, policy) for c in counts) / raw

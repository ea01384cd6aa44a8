"""4-bit quantization of the final linear layer and bit-plane decomposition.

Weights are scaled to integers in [-8, 7] and split into four binary
matrices (two's complement: planes 0..2 carry 2^i, plane 3 carries -8).
Each encrypted dot product then involves only binary weights, and the
client recovers exact integer scores from the four plane partial sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateError, ShapeError
from .ttir import LinearLayerSpec

QUANT_BITS = 4
INT_MIN, INT_MAX = -8, 7
# Recombination weights per plane; plane 3 is the two's-complement sign plane.
PLANE_WEIGHTS = (1, 2, 4, -8)


@dataclass(frozen=True, eq=False)
class QuantLinear:
    """A quantized linear layer as four binary planes plus one scale."""

    planes: np.ndarray  # uint8 [4, classes, features]
    int_weights: np.ndarray  # int8 [classes, features], entries in [-8, 7]
    scale: float

    @property
    def classes(self) -> int:
        return int(self.int_weights.shape[0])

    @property
    def features(self) -> int:
        return int(self.int_weights.shape[1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantLinear):
            return NotImplemented
        return (
            self.scale == other.scale
            and np.array_equal(self.int_weights, other.int_weights)
            and np.array_equal(self.planes, other.planes)
        )


def planes_from_ints(int_weights: np.ndarray) -> np.ndarray:
    """Two's-complement bit planes of an integer matrix in [-8, 7]."""
    u = np.bitwise_and(int_weights.astype(np.int64), 0xF)
    return np.stack([((u >> i) & 1).astype(np.uint8) for i in range(QUANT_BITS)])


def ints_from_planes(planes: np.ndarray) -> np.ndarray:
    """Inverse of planes_from_ints; exact integer arithmetic."""
    p = planes.astype(np.int64)
    return p[0] + 2 * p[1] + 4 * p[2] - 8 * p[3]


def quantize_linear(lin: LinearLayerSpec, bits: int = QUANT_BITS) -> QuantLinear:
    """Quantize float weights to 4-bit integers with a per-tensor scale.

    scale = max|w| / 7, rounding is half-away-from-zero, and the symmetric
    clamp keeps every entry in [-8, 7]; the elementwise dequantization error
    is therefore at most scale / 2.
    """
    if bits != QUANT_BITS:
        raise ValueError(f"only {QUANT_BITS}-bit quantization is supported")
    w = lin.weights
    max_abs = float(np.max(np.abs(w))) if w.size else 0.0
    if max_abs == 0.0:
        raise DegenerateError("quantize_linear: all weights are zero, scale is undefined")
    scale = max_abs / INT_MAX
    # round half away from zero (np.round would round half to even)
    ints = np.sign(w) * np.floor(np.abs(w) / scale + 0.5)
    ints = np.clip(ints, INT_MIN, INT_MAX).astype(np.int8)
    planes = planes_from_ints(ints)
    ints.setflags(write=False)
    planes.setflags(write=False)
    return QuantLinear(planes=planes, int_weights=ints, scale=scale)


def plane_partials(q: QuantLinear, feature_bits: Sequence[int]) -> np.ndarray:
    """Integer partial sums per plane: partials[i][c] = planes[i][c] . bits."""
    f = np.asarray(feature_bits, dtype=np.int64)
    if f.shape != (q.features,):
        raise ShapeError(f"expected {q.features} feature bits, got {f.shape}")
    return np.einsum("pcf,f->pc", q.planes.astype(np.int64), f)


def recombine(partials: np.ndarray, scale: float) -> np.ndarray:
    """Client-side recombination of the four plane partial sums.

    score[c] = scale * (p0 + 2*p1 + 4*p2 - 8*p3); integer arithmetic before
    the single float multiply, so the result equals scale * (int_weights .
    features) exactly.
    """
    p = np.asarray(partials)
    if p.ndim != 2 or p.shape[0] != QUANT_BITS:
        raise ShapeError(f"expected partials of shape (4, classes), got {p.shape}")
    p = p.astype(np.int64)
    combined = sum(int(wgt) * p[i] for i, wgt in enumerate(PLANE_WEIGHTS))
    return scale * combined


def dequantized_scores(q: QuantLinear, feature_bits: Sequence[int]) -> np.ndarray:
    """scale * (int_weights . features), the server+client result in one step."""
    f = np.asarray(feature_bits, dtype=np.int64)
    if f.shape != (q.features,):
        raise ShapeError(f"expected {q.features} feature bits, got {f.shape}")
    return q.scale * (q.int_weights.astype(np.int64) @ f)

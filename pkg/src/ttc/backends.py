"""Pluggable execution backend boundary.

The artifact ships a single backend: an identity stub whose "ciphertexts"
are the plain values, with message sizes accounted separately by the cost
module. A real encrypted backend implements the same four operations
(encode, lut_apply, add, decode) over its own handle type and drops in
without changes to circuit or protocol code; ``evaluate_split`` is the
generic driver written only in terms of those operations.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Sequence

import numpy as np

from .circuit import Circuit
from .errors import ShapeError


class CipherBackend(ABC):
    """Minimal operation set an encrypted evaluator must provide."""

    name: str = "abstract"

    @abstractmethod
    def encode(self, values: Sequence[int]) -> list[Any]:
        """Turn cleartext integers into backend handles."""

    @abstractmethod
    def decode(self, handles: Sequence[Any]) -> list[int]:
        """Recover cleartext integers from handles."""

    @abstractmethod
    def lut_apply(self, table_bits: np.ndarray, inputs: Sequence[Any]) -> Any:
        """Apply a 2^n-entry table to n input handles (wire 0 is the LSB)."""

    @abstractmethod
    def add(self, a: Any, b: Any) -> Any:
        """Add two handles."""

    def zero(self) -> Any:
        return self.encode([0])[0]


class IdentityBackend(CipherBackend):
    """Cleartext stand-in: handles are ints, operations are exact."""

    name = "identity"

    def encode(self, values: Sequence[int]) -> list[int]:
        return [int(v) for v in values]

    def decode(self, handles: Sequence[int]) -> list[int]:
        return [int(h) for h in handles]

    def lut_apply(self, table_bits: np.ndarray, inputs: Sequence[int]) -> int:
        idx = 0
        for i, b in enumerate(inputs):
            idx |= (int(b) & 1) << i
        return int(table_bits[idx])

    def add(self, a: int, b: int) -> int:
        return a + b


def evaluate_split(c: Circuit, input_bits: Sequence[int],
                   backend: CipherBackend) -> np.ndarray:
    """Server-side split evaluation expressed purely in backend operations.

    Returns the four per-class plane partial sums (decoded). Every lookup
    uses lut_apply, every sub-sum and cross-chunk addition uses add; nothing
    here inspects handle contents.
    """
    bits = np.asarray(input_bits, dtype=np.int64).reshape(-1)
    if bits.shape[0] != c.input_size:
        raise ShapeError(f"expected {c.input_size} input bits, got {bits.shape[0]}")
    handles = backend.encode(bits.tolist())
    zero = backend.zero()

    wires: dict[int, Any] = dict(enumerate(handles))
    for call in c.lut_calls:
        ins = [zero if w < 0 else wires[int(w)] for w in call.input_wires]
        wires[call.output_wire] = backend.lut_apply(c.tables[call.table_id].bits, ins)

    feature_handles = [wires[int(w)] for w in c.feature_wires]
    partials = np.zeros((4, c.quant.classes), dtype=np.int64)
    for (cls, plane), runs in c.chunk_plan.chunks.items():
        total = zero
        for run in runs:
            sub = zero
            for f in run:
                sub = backend.add(sub, feature_handles[f])
            total = backend.add(total, sub)
        partials[plane, cls] = backend.decode([total])[0]
    return partials

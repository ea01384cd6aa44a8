"""Circuit evaluation: cleartext, simulated-encrypted, and float reference.

The cleartext engine follows exactly what an encrypted backend would do:
table lookups per the static call list, then integer plane sub-sums per the
chunk plan, then recombination. The simulated mode additionally records a
trace (call counts, accumulator high-water marks) and raises when a sub-sum
exceeds the planned accumulator bound. The float path reimplements the
model from its specification with whole-tensor convolution arithmetic and
serves as the independent oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .circuit import Circuit
from .errors import ConstraintViolation, ShapeError
from .ltt import SELU_ALPHA, SELU_LAMBDA
from .quant import recombine
from .ttir import ConvLayerSpec, HeadSpec, ModelSpec


@dataclass(frozen=True)
class EvalTrace:
    """Execution record used by the cost model."""

    lut_calls_by_bitwidth: dict[int, int]
    max_accumulator_value: int
    max_bitwidth_touched: int
    patches_evaluated: int

    @property
    def total_calls(self) -> int:
        return sum(self.lut_calls_by_bitwidth.values())


@dataclass(frozen=True)
class InferenceResult:
    """Scores plus the pre-recombination plane partials of the split setting."""

    scores: np.ndarray  # float [classes]
    label: int
    partials: np.ndarray  # int64 [4, classes]


def argmax_label(scores: np.ndarray) -> int:
    """Lowest index wins ties."""
    return int(np.argmax(scores))


class Evaluator:
    """Prepared evaluation state for one circuit.

    Precomputes gather arrays so a single input costs a handful of numpy
    operations; safe to share across threads once constructed.
    """

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        calls = circuit.lut_calls
        self._ncalls = len(calls)
        self._nmax = max((call.n for call in calls), default=0)
        # Wire gathers use index -1 for padding; input vectors are extended
        # with one trailing 0 so that ZERO_WIRE entries read a constant 0.
        self._call_wires = np.full((self._ncalls, self._nmax), -1, dtype=np.int64)
        self._call_out_feature = np.empty(self._ncalls, dtype=np.int64)
        offsets = []
        flat_bits = []
        pos = 0
        table_offset = {}
        for tid, table in enumerate(circuit.tables):
            table_offset[tid] = pos
            flat_bits.append(table.bits)
            pos += table.bits.shape[0]
        self._table_bits = (np.concatenate(flat_bits) if flat_bits
                            else np.zeros(0, dtype=np.uint8))
        for i, call in enumerate(calls):
            self._call_wires[i, : call.n] = call.input_wires
            self._call_out_feature[i] = call.output_wire - circuit.input_size
            offsets.append(table_offset[call.table_id])
        self._call_table_offset = np.asarray(offsets, dtype=np.int64)
        self._pow2 = (1 << np.arange(self._nmax, dtype=np.int64))
        fw = circuit.feature_wires
        self._identity_features = np.flatnonzero(fw < circuit.input_size)
        self._identity_sources = fw[self._identity_features].astype(np.int64)
        self._planes = circuit.quant.planes.astype(np.int64)

    # -- feature computation ------------------------------------------------

    def _check_input(self, input_bits: Sequence[int]) -> np.ndarray:
        bits = np.asarray(input_bits, dtype=np.int64).reshape(-1)
        if bits.shape[0] != self.circuit.input_size:
            raise ShapeError(
                f"expected {self.circuit.input_size} input bits, got {bits.shape[0]}"
            )
        if bits.size and (bits.min() < 0 or bits.max() > 1):
            raise ShapeError("input bits must be 0 or 1")
        return bits

    def _lut_outputs(self, padded: np.ndarray, threads: int) -> np.ndarray:
        """Evaluate every lookup call on one padded input vector."""
        if self._ncalls == 0:
            return np.zeros(0, dtype=np.int64)
        if threads <= 1:
            gathered = padded[self._call_wires]
            idx = gathered @ self._pow2 + self._call_table_offset
            return self._table_bits[idx].astype(np.int64)
        out = np.empty(self._ncalls, dtype=np.int64)
        bounds = np.linspace(0, self._ncalls, threads + 1, dtype=int)

        def run(lo: int, hi: int) -> None:
            gathered = padded[self._call_wires[lo:hi]]
            idx = gathered @ self._pow2 + self._call_table_offset[lo:hi]
            out[lo:hi] = self._table_bits[idx]

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run, lo, hi)
                       for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for fut in futures:
                fut.result()
        return out

    def features(self, input_bits: Sequence[int], threads: int = 1) -> np.ndarray:
        """The binary feature vector entering the linear layer."""
        bits = self._check_input(input_bits)
        padded = np.concatenate([bits, [0]])
        feats = np.zeros(self.circuit.features, dtype=np.int64)
        lut_out = self._lut_outputs(padded, threads)
        if lut_out.size:
            feats[self._call_out_feature] = lut_out
        if self._identity_features.size:
            feats[self._identity_features] = bits[self._identity_sources]
        return feats

    def features_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Feature vectors for a batch of inputs, one row per sample."""
        arr = np.asarray(inputs, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != self.circuit.input_size:
            raise ShapeError(
                f"expected a batch of {self.circuit.input_size}-bit rows, got {arr.shape}"
            )
        padded = np.concatenate([arr, np.zeros((arr.shape[0], 1), dtype=np.int64)], axis=1)
        feats = np.zeros((arr.shape[0], self.circuit.features), dtype=np.int64)
        if self._ncalls:
            gathered = padded[:, self._call_wires]
            idx = gathered @ self._pow2 + self._call_table_offset
            feats[:, self._call_out_feature] = self._table_bits[idx]
        if self._identity_features.size:
            feats[:, self._identity_features] = arr[:, self._identity_sources]
        return feats

    # -- linear layer -------------------------------------------------------

    def _plane_sums(self, feats: np.ndarray, track: bool) -> tuple[np.ndarray, int]:
        """Per-plane per-class sums via the chunk plan; returns high-water mark."""
        plan = self.circuit.chunk_plan
        q = self.circuit.quant
        partials = np.zeros((4, q.classes), dtype=np.int64)
        bound = (1 << plan.acc_bits) - 1
        high = 0
        for (cls, plane), runs in plan.chunks.items():
            total = 0
            for run in runs:
                sub = int(feats[list(run)].sum())
                if track:
                    if sub > high:
                        high = sub
                    if sub > bound:
                        raise ConstraintViolation(
                            f"sub-sum {sub} for class {cls} plane {plane} exceeds "
                            f"2^{plan.acc_bits} - 1 = {bound}"
                        )
                total += sub
            partials[plane, cls] = total
        return partials, high

    def infer(self, input_bits: Sequence[int], threads: int = 1,
              track: bool = False) -> tuple[InferenceResult, int]:
        feats = self.features(input_bits, threads=threads)
        partials, high = self._plane_sums(feats, track)
        scores = recombine(partials, self.circuit.quant.scale)
        return InferenceResult(scores=scores, label=argmax_label(scores),
                               partials=partials), high

    def trace_skeleton(self, high: int) -> EvalTrace:
        c = self.circuit
        return EvalTrace(
            lut_calls_by_bitwidth=c.calls_by_bitwidth(),
            max_accumulator_value=high,
            max_bitwidth_touched=c.max_bitwidth,
            patches_evaluated=c.patch_count(),
        )


def eval_cleartext(c: Circuit, input_bits: Sequence[int], threads: int = 1) -> InferenceResult:
    """Bit-exact evaluation through tables, chunked sums, and recombination."""
    result, _ = Evaluator(c).infer(input_bits, threads=threads)
    return result


def eval_simulated(c: Circuit, input_bits: Sequence[int],
                   threads: int = 1) -> tuple[InferenceResult, EvalTrace]:
    """Same result as eval_cleartext plus a trace; enforces accumulator bounds."""
    ev = Evaluator(c)
    result, high = ev.infer(input_bits, threads=threads, track=True)
    return result, ev.trace_skeleton(high)


# ---------------------------------------------------------------------------
# Float reference path


def _selu_arr(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(x))


def _conv2d_grouped(x: np.ndarray, layer: ConvLayerSpec) -> np.ndarray:
    """Grouped 2-D convolution of a (C, H, W) tensor, zero padding."""
    if layer.padding:
        x = np.pad(x, ((0, 0), (layer.padding, layer.padding),
                       (layer.padding, layer.padding)))
    kh, kw = layer.kernel
    sh, sw = layer.stride
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    view = view[:, ::sh, ::sw]  # (C, OH, OW, kh, kw)
    in_pg = layer.in_channels // layer.groups
    out_pg = layer.out_channels // layer.groups
    parts = []
    for g in range(layer.groups):
        xg = view[g * in_pg:(g + 1) * in_pg]
        wg = layer.weights[g * out_pg:(g + 1) * out_pg]
        parts.append(np.einsum("cyxhw,ochw->oyx", xg, wg))
    return np.concatenate(parts, axis=0)


def binarize_input(m: ModelSpec, input_values: Sequence[float]) -> np.ndarray:
    """Apply the model's front end; returns the flat input bit vector."""
    vals = np.asarray(input_values, dtype=np.float64).reshape(-1)
    if vals.shape[0] != m.input_size:
        raise ShapeError(f"expected {m.input_size} input values, got {vals.shape[0]}")
    if m.front_end.kind == "binarize":
        assert m.front_end.thresholds is not None
        return (vals - m.front_end.thresholds >= 0).astype(np.int64)
    if not np.all((vals == 0) | (vals == 1)):
        raise ShapeError("precomputed_binary front end requires 0/1 inputs")
    return vals.astype(np.int64)


def _head_features_float(head: HeadSpec, bits_chw: np.ndarray) -> np.ndarray:
    if head.shuffle is not None:
        bits_chw = bits_chw[list(head.shuffle)]
    if head.kind == "identity":
        return bits_chw.reshape(-1).astype(np.float64)
    block = head.block
    assert block is not None
    z1 = _conv2d_grouped(bits_chw.astype(np.float64), block.layer1)
    y1 = block.bn1.apply(z1, channel_axis=0)
    a = _selu_arr(y1)
    z2 = _conv2d_grouped(a, block.layer2)
    y2 = block.bn2.apply(z2, channel_axis=0)
    return (y2 >= 0).astype(np.float64).reshape(-1)


def eval_float(m: ModelSpec, input_values: Sequence[float]) -> np.ndarray:
    """Reference semantics: front end, float heads, float linear layer."""
    bits = binarize_input(m, input_values)
    feats = eval_float_features(m, bits)
    return m.linear.weights @ feats


def eval_float_features(m: ModelSpec, input_bits: Sequence[int]) -> np.ndarray:
    """Binary feature vector of the float pipeline on already-binarized input."""
    bits = np.asarray(input_bits, dtype=np.int64).reshape(-1)
    if bits.shape[0] != m.input_size:
        raise ShapeError(f"expected {m.input_size} input bits, got {bits.shape[0]}")
    chw = bits.reshape(m.input_chw)
    feats = [_head_features_float(h, chw) for h in m.heads]
    return np.concatenate(feats) if feats else np.zeros(0)

"""Exact forward semantics of a truth-table block and its materialization.

A block with an n-bit receptive field is converted to a lookup table by
enumerating all 2^n inputs through the float pipeline. The index convention
is fixed: wire 0 (the first entry of a patch, in channel-major (c, dy, dx)
order) is the least significant bit of the table index.

Two independent code paths compute the same function: ``ltt_forward`` walks
the pipeline with plain scalar arithmetic, while extraction batches all 2^n
inputs through matrix products. Tests compare them exhaustively.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvariantError, ShapeError
from .ttir import (
    MAX_TABLE_BITS,
    SLOW_TABLE_BITS,
    ConvLayerSpec,
    LTTBlockSpec,
    conv_output_hw,
    normalize_input_shape,
)

# Standard SELU constants; the block definition names the activation only.
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

# Pre-binarization values this close to zero make the extracted bit depend
# on rounding; such tables are flagged unstable.
UNSTABLE_MARGIN = 1e-9

# Wire-map entry for a position that falls into zero padding.
ZERO_WIRE = -1


def selu(x: float) -> float:
    """Scaled exponential linear unit with the standard constants."""
    if x > 0:
        return SELU_LAMBDA * x
    return SELU_LAMBDA * SELU_ALPHA * math.expm1(x)


def bin_act(x: float) -> int:
    """Heaviside binarization (1 + sgn(x)) / 2 with sgn(0) taken as +1."""
    return 1 if x >= 0 else 0


def _selu_batch(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(x))


@dataclass(frozen=True, eq=False)
class TruthTable:
    """A materialized Boolean function of n input bits.

    ``bits[k]`` is the output for the input whose wire i carries bit i of k;
    bit 0 of the index is the first wire.
    """

    n: int
    bits: np.ndarray  # uint8 vector of length 2**n
    unstable: bool = False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TruthTable):
            return NotImplemented
        return (self.n == other.n and self.unstable == other.unstable
                and np.array_equal(self.bits, other.bits))

    def __post_init__(self) -> None:
        if self.n < 1:
            raise InvariantError("truth table: n must be >= 1")
        if self.n > MAX_TABLE_BITS:
            raise InvariantError(
                f"truth table: n = {self.n} exceeds the {MAX_TABLE_BITS}-bit limit"
            )
        if self.bits.shape != (1 << self.n,):
            raise InvariantError(
                f"truth table: expected {1 << self.n} bits for n = {self.n}, "
                f"got {self.bits.shape}"
            )

    def lookup(self, wire_bits: Sequence[int]) -> int:
        idx = 0
        for i, b in enumerate(wire_bits):
            idx |= (int(b) & 1) << i
        return int(self.bits[idx])

    def to_bitstring(self) -> str:
        """Export as 2^n characters '0'/'1', index 0 first."""
        return "".join("1" if b else "0" for b in self.bits)

    @classmethod
    def from_bitstring(cls, s: str, unstable: bool = False) -> "TruthTable":
        n = int(len(s)).bit_length() - 1
        if (1 << n) != len(s) or n < 1:
            raise InvariantError(f"truth table: bit string length {len(s)} is not a power of two")
        bits = np.frombuffer(s.encode("ascii"), dtype=np.uint8) - ord("0")
        if np.any(bits > 1):
            raise InvariantError("truth table: bit string must contain only '0' and '1'")
        return cls(n=n, bits=bits.astype(np.uint8), unstable=unstable)

    def content_key(self) -> bytes:
        return bytes([self.n]) + np.packbits(self.bits, bitorder="little").tobytes()


@dataclass(frozen=True, eq=False)
class PatchGeometry:
    """Sliding-window plan mapping input bits to per-patch table wires.

    One patch is the receptive field of one (group, output y, output x)
    position; every output channel of that group reads the same n wires.
    ``wire_map[p, i]`` is the flat input-bit index feeding wire i of patch p,
    or ZERO_WIRE where the window overlaps zero padding.
    """

    n: int
    patch_shape: tuple[int, int, int]  # (channels per group, kh, kw)
    patch_stride: tuple[int, int]
    groups: int
    out_h: int
    out_w: int
    wire_map: np.ndarray  # int32 [patch_count, n]

    @property
    def patch_count(self) -> int:
        return self.groups * self.out_h * self.out_w

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchGeometry):
            return NotImplemented
        return (
            self.n == other.n
            and self.patch_shape == other.patch_shape
            and self.patch_stride == other.patch_stride
            and self.groups == other.groups
            and self.out_h == other.out_h
            and self.out_w == other.out_w
            and np.array_equal(self.wire_map, other.wire_map)
        )

    def patch_index(self, group: int, oy: int, ox: int) -> int:
        return (group * self.out_h + oy) * self.out_w + ox


def receptive_field(
    block: LTTBlockSpec,
    input_shape,
    shuffle: Optional[Sequence[int]] = None,
) -> PatchGeometry:
    """Compose the block's two layers into a patch plan over the input.

    Composition is (k2 - 1) * s1 + k1 per spatial dimension with stride
    s1 * s2; the bit count multiplies in the per-group channel count.
    """
    c, h, w = normalize_input_shape(input_shape)
    groups = block.layer1.groups
    if block.layer1.in_channels != c:
        raise ShapeError(
            f"input channels {c} do not match block in_channels {block.layer1.in_channels}"
        )
    in_pg = block.layer1.in_channels // groups
    ckh, ckw = block.composed_kernel()
    stride = block.composed_stride()
    pad = block.composed_padding()
    n = in_pg * ckh * ckw
    if n > MAX_TABLE_BITS:
        raise InvariantError(
            f"receptive field is {n} bits, above the {MAX_TABLE_BITS}-bit lookup-table limit"
        )
    if n > SLOW_TABLE_BITS:
        warnings.warn(
            f"receptive field is {n} bits; lookup tables above {SLOW_TABLE_BITS} bits "
            f"are disproportionately slow per call",
            stacklevel=2,
        )
    out_h, out_w = conv_output_hw(h, w, (ckh, ckw), stride, pad)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"composed kernel ({ckh}, {ckw}) does not fit a {h}x{w} input")

    if shuffle is not None:
        channel_of = [int(x) for x in shuffle]
    else:
        channel_of = list(range(c))

    wire_map = np.full((groups * out_h * out_w, n), ZERO_WIRE, dtype=np.int32)
    patch = 0
    for g in range(groups):
        for oy in range(out_h):
            y0 = oy * stride[0] - pad
            for ox in range(out_w):
                x0 = ox * stride[1] - pad
                wire = 0
                for ci in range(in_pg):
                    src_c = channel_of[g * in_pg + ci]
                    for dy in range(ckh):
                        y = y0 + dy
                        for dx in range(ckw):
                            x = x0 + dx
                            if 0 <= y < h and 0 <= x < w:
                                wire_map[patch, wire] = (src_c * h + y) * w + x
                            wire += 1
                patch += 1
    wire_map.setflags(write=False)
    return PatchGeometry(
        n=n,
        patch_shape=(in_pg, ckh, ckw),
        patch_stride=stride,
        groups=groups,
        out_h=out_h,
        out_w=out_w,
        wire_map=wire_map,
    )


def composed_input_bits(layer1: ConvLayerSpec, layer2: ConvLayerSpec) -> int:
    """Receptive-field bit count of two stacked conv layers (general kernels)."""
    kh = (layer2.kernel[0] - 1) * layer1.stride[0] + layer1.kernel[0]
    kw = (layer2.kernel[1] - 1) * layer1.stride[1] + layer1.kernel[1]
    return (layer1.in_channels // layer1.groups) * kh * kw


def ltt_forward(block: LTTBlockSpec, inputs: Sequence[int], group: int = 0) -> list[int]:
    """Run one receptive-field patch through the float pipeline.

    ``inputs`` holds the n patch bits in wire order; returns one bit per
    output channel of the given group. Scalar arithmetic throughout: this is
    the reference the batched extractor is checked against.
    """
    n = block.input_bits()
    if len(inputs) != n:
        raise ShapeError(f"expected {n} input bits, got {len(inputs)}")
    groups = block.layer1.groups
    if not 0 <= group < groups:
        raise ShapeError(f"group {group} out of range for {groups} groups")
    in_pg = block.layer1.in_channels // groups
    o1_pg = block.layer1.out_channels // groups
    o2_pg = block.layer2.out_channels // groups
    kh, kw = block.layer1.kernel
    w1 = block.layer1.weights
    w2 = block.layer2.weights
    bn1, bn2 = block.bn1, block.bn2

    x = [float(v) for v in inputs]
    hidden = []
    for j in range(o1_pg):
        ch = group * o1_pg + j
        acc = 0.0
        wire = 0
        for ci in range(in_pg):
            for dy in range(kh):
                for dx in range(kw):
                    acc += w1[ch, ci, dy, dx] * x[wire]
                    wire += 1
        norm = (bn1.gamma[ch] * (acc - bn1.running_mean[ch])
                / math.sqrt(bn1.running_var[ch] + bn1.epsilon) + bn1.beta[ch])
        hidden.append(selu(norm))

    out = []
    for o in range(o2_pg):
        ch = group * o2_pg + o
        acc = 0.0
        for j in range(o1_pg):
            acc += w2[ch, j, 0, 0] * hidden[j]
        norm = (bn2.gamma[ch] * (acc - bn2.running_mean[ch])
                / math.sqrt(bn2.running_var[ch] + bn2.epsilon) + bn2.beta[ch])
        out.append(bin_act(norm))
    return out


@functools.lru_cache(maxsize=32)
def enumerate_input_bits(n: int) -> np.ndarray:
    """All 2^n input rows; row k has bit i of k on wire i."""
    k = np.arange(1 << n, dtype=np.uint32)[:, None]
    bits = ((k >> np.arange(n, dtype=np.uint32)[None, :]) & 1).astype(np.float64)
    bits.setflags(write=False)
    return bits


def _forward_group_batch(block: LTTBlockSpec, group: int, x: np.ndarray) -> np.ndarray:
    """Pre-binarization outputs for a batch of patches of one group."""
    groups = block.layer1.groups
    o1_pg = block.layer1.out_channels // groups
    o2_pg = block.layer2.out_channels // groups
    sl1 = slice(group * o1_pg, (group + 1) * o1_pg)
    sl2 = slice(group * o2_pg, (group + 1) * o2_pg)

    w1 = block.layer1.weights[sl1].reshape(o1_pg, -1)  # (o1_pg, n), wire order
    z1 = x @ w1.T
    bn1 = block.bn1
    y1 = (bn1.gamma[sl1] * (z1 - bn1.running_mean[sl1])
          / np.sqrt(bn1.running_var[sl1] + bn1.epsilon) + bn1.beta[sl1])
    a = _selu_batch(y1)

    w2 = block.layer2.weights[sl2, :, 0, 0]  # (o2_pg, o1_pg)
    z2 = a @ w2.T
    bn2 = block.bn2
    return (bn2.gamma[sl2] * (z2 - bn2.running_mean[sl2])
            / np.sqrt(bn2.running_var[sl2] + bn2.epsilon) + bn2.beta[sl2])


def extract_group_tables(block: LTTBlockSpec, group: int) -> list[TruthTable]:
    """Truth tables for every output channel of one group, by enumeration."""
    n = block.input_bits()
    if n > MAX_TABLE_BITS:
        raise InvariantError(
            f"receptive field is {n} bits, above the {MAX_TABLE_BITS}-bit lookup-table limit"
        )
    if n > SLOW_TABLE_BITS:
        warnings.warn(
            f"enumerating a {n}-bit block; calls above {SLOW_TABLE_BITS} bits are slow",
            stacklevel=2,
        )
    pre = _forward_group_batch(block, group, enumerate_input_bits(n))
    bits = (pre >= 0).astype(np.uint8)
    unstable = np.abs(pre) < UNSTABLE_MARGIN
    return [
        TruthTable(n=n, bits=bits[:, j].copy(), unstable=bool(unstable[:, j].any()))
        for j in range(bits.shape[1])
    ]


def extract_truth_table(block: LTTBlockSpec, out_channel: int) -> TruthTable:
    """Materialize one output channel as a truth table over all 2^n inputs."""
    groups = block.layer1.groups
    o2_pg = block.layer2.out_channels // groups
    if not 0 <= out_channel < block.layer2.out_channels:
        raise ShapeError(
            f"out_channel {out_channel} out of range for {block.layer2.out_channels} channels"
        )
    group, j = divmod(out_channel, o2_pg)
    return extract_group_tables(block, group)[j]


def extract_all_tables(block: LTTBlockSpec) -> list[TruthTable]:
    """Tables for all output channels, ordered by global channel index."""
    tables: list[TruthTable] = []
    for g in range(block.layer1.groups):
        tables.extend(extract_group_tables(block, g))
    return tables

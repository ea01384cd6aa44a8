"""Lowering of a model into a lookup-table circuit.

The compiled form is a flat wire graph: input bits occupy wires
[0, input_size), every truth-table output gets a dedicated wire, and the
final layer is described by the quantized planes plus a chunked sub-sum
plan that keeps every accumulator within its declared bitwidth. Identity
heads contribute features by aliasing input wires directly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np

from .errors import InvariantError, SchemaError
from .ltt import (
    PatchGeometry,
    TruthTable,
    extract_all_tables,
    receptive_field,
)
from .quant import QuantLinear, planes_from_ints, quantize_linear
from .ttir import (
    MAX_TABLE_BITS,
    SLOW_TABLE_BITS,
    FrontEnd,
    ModelSpec,
    binarize_front_end,
    head_feature_count,
    precomputed_front_end,
)

CIRCUIT_FORMAT = "ttc-circuit"
CIRCUIT_VERSION = 1

DEFAULT_ACC_BITS = 4
# A sub-sum of 15 binary terms peaks at 15 = 2^4 - 1, the largest value a
# 4-bit accumulator can hold. Size-16 chunks can reach 16 and force a 5-bit
# accumulator; allowed, but reported.
DEFAULT_CHUNK_SIZE = 15


@dataclass(frozen=True, eq=False)
class LutCall:
    """One table lookup: n source wires in, one destination wire out."""

    table_id: int
    input_wires: np.ndarray  # int32 [n]; ZERO_WIRE entries feed constant 0
    output_wire: int
    n: int

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LutCall):
            return NotImplemented
        return (
            self.table_id == other.table_id
            and self.output_wire == other.output_wire
            and self.n == other.n
            and np.array_equal(self.input_wires, other.input_wires)
        )


@dataclass(frozen=True, eq=False)
class ChunkPlan:
    """Partition of each (class, plane)'s active features into bounded runs."""

    acc_bits: int
    chunk_size: int
    # (class, plane) -> runs of feature indices, each run at most chunk_size long
    chunks: dict[tuple[int, int], tuple[tuple[int, ...], ...]]

    def max_run_length(self) -> int:
        best = 0
        for runs in self.chunks.values():
            for run in runs:
                best = max(best, len(run))
        return best

    def total_chunks(self) -> int:
        return sum(len(runs) for runs in self.chunks.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChunkPlan):
            return NotImplemented
        return (
            self.acc_bits == other.acc_bits
            and self.chunk_size == other.chunk_size
            and self.chunks == other.chunks
        )


@dataclass(frozen=True, eq=False)
class HeadPlan:
    """Per-head lowering record: geometry, table ids, and feature placement."""

    kind: str  # "ltt" | "identity"
    feature_offset: int
    feature_count: int
    shuffle: Optional[tuple[int, ...]] = None
    geometry: Optional[PatchGeometry] = None
    out_channels: int = 0
    table_ids: tuple[int, ...] = ()  # one table per output channel (ltt only)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HeadPlan):
            return NotImplemented
        return (
            (self.kind, self.feature_offset, self.feature_count, self.shuffle,
             self.out_channels, self.table_ids)
            == (other.kind, other.feature_offset, other.feature_count, other.shuffle,
                other.out_channels, other.table_ids)
            and self.geometry == other.geometry
        )


@dataclass(frozen=True, eq=False)
class Circuit:
    """A lowered model ready for bit-exact or simulated-encrypted evaluation."""

    input_shape: Union[int, tuple[int, int, int]]
    front_end: FrontEnd
    tables: tuple[TruthTable, ...]
    heads: tuple[HeadPlan, ...]
    lut_calls: tuple[LutCall, ...]
    quant: QuantLinear
    chunk_plan: ChunkPlan
    feature_wires: np.ndarray  # int32 [features] -> wire id
    max_bitwidth: int
    name: str = "model"
    dataset: str = ""
    setting: str = "full_pr"
    version: str = ""
    acc_raised: bool = False

    @property
    def input_chw(self) -> tuple[int, int, int]:
        if isinstance(self.input_shape, int):
            return (1, self.input_shape, 1)
        return self.input_shape

    @property
    def input_size(self) -> int:
        c, h, w = self.input_chw
        return c * h * w

    @property
    def features(self) -> int:
        return int(self.feature_wires.shape[0])

    @property
    def classes(self) -> int:
        return self.quant.classes

    def patch_count(self) -> int:
        return sum(h.geometry.patch_count for h in self.heads if h.geometry is not None)

    def calls_by_bitwidth(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for call in self.lut_calls:
            counts[call.n] = counts.get(call.n, 0) + 1
        return counts

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Circuit):
            return NotImplemented
        return (
            self.input_chw == other.input_chw
            and self.front_end == other.front_end
            and self.tables == other.tables
            and self.heads == other.heads
            and self.lut_calls == other.lut_calls
            and self.quant == other.quant
            and self.chunk_plan == other.chunk_plan
            and np.array_equal(self.feature_wires, other.feature_wires)
            and self.max_bitwidth == other.max_bitwidth
            and self.name == other.name
            and self.dataset == other.dataset
            and self.setting == other.setting
            and self.version == other.version
            and self.acc_raised == other.acc_raised
        )


def bits_needed(max_value: int) -> int:
    """Accumulator bits required to hold max_value."""
    return max(1, int(max_value).bit_length())


def plan_chunks(planes: np.ndarray, acc_bits: int = DEFAULT_ACC_BITS,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> ChunkPlan:
    """Partition each (class, plane)'s active features into bounded runs.

    Only features whose plane bit is 1 are active; a run of k active bits
    sums to at most k, so chunk_size <= 2^acc_bits - 1 guarantees every
    sub-sum fits the accumulator.
    """
    if chunk_size < 1:
        raise InvariantError("chunk_size: must be >= 1")
    if chunk_size > (1 << acc_bits) - 1:
        raise InvariantError(
            f"chunk_size: a sub-sum of {chunk_size} binary terms can reach {chunk_size}, "
            f"which needs {bits_needed(chunk_size)} bits but acc_bits is {acc_bits}"
        )
    n_planes, classes, _ = planes.shape
    chunks: dict[tuple[int, int], tuple[tuple[int, ...], ...]] = {}
    for c in range(classes):
        for p in range(n_planes):
            active = np.flatnonzero(planes[p, c])
            runs = tuple(
                tuple(int(f) for f in active[i:i + chunk_size])
                for i in range(0, len(active), chunk_size)
            )
            chunks[(c, p)] = runs
    return ChunkPlan(acc_bits=acc_bits, chunk_size=chunk_size, chunks=chunks)


def compile_model(m: ModelSpec, chunk_size: int = DEFAULT_CHUNK_SIZE,
                  acc_bits: int = DEFAULT_ACC_BITS, dedup: bool = True) -> Circuit:
    """Lower a validated model to a lookup-table circuit.

    Tables are deduplicated by content hash unless dedup is False. If
    chunk_size does not fit acc_bits, the accumulator width is raised to
    the required size and the circuit is marked accordingly.
    """
    m.validate()
    chw = m.input_chw
    input_size = m.input_size
    n_features = m.feature_count()

    tables: list[TruthTable] = []
    table_by_key: dict[bytes, int] = {}

    def intern(table: TruthTable) -> int:
        if not dedup:
            tables.append(table)
            return len(tables) - 1
        key = table.content_key()
        if key not in table_by_key:
            table_by_key[key] = len(tables)
            tables.append(table)
        return table_by_key[key]

    heads: list[HeadPlan] = []
    lut_calls: list[LutCall] = []
    c, h, w = chw
    offset = 0
    for i, head in enumerate(m.heads):
        count = head_feature_count(head, chw)
        if head.kind == "identity":
            channel_of = list(head.shuffle) if head.shuffle is not None else list(range(c))
            heads.append(HeadPlan(
                kind="identity", feature_offset=offset, feature_count=count,
                shuffle=head.shuffle,
            ))
        else:
            block = head.block
            assert block is not None
            try:
                geom = receptive_field(block, chw, shuffle=head.shuffle)
            except InvariantError as exc:
                raise InvariantError(f"heads[{i}]: {exc}") from exc
            table_ids = tuple(intern(t) for t in extract_all_tables(block))
            o2_pg = block.out_channels // geom.groups
            oh, ow = geom.out_h, geom.out_w
            for g in range(geom.groups):
                for oy in range(oh):
                    for ox in range(ow):
                        wires = geom.wire_map[geom.patch_index(g, oy, ox)]
                        for j in range(o2_pg):
                            ch = g * o2_pg + j
                            feat = offset + (ch * oh + oy) * ow + ox
                            lut_calls.append(LutCall(
                                table_id=table_ids[ch],
                                input_wires=wires,
                                output_wire=input_size + feat,
                                n=geom.n,
                            ))
            heads.append(HeadPlan(
                kind="ltt", feature_offset=offset, feature_count=count,
                shuffle=head.shuffle, geometry=geom,
                out_channels=block.out_channels, table_ids=table_ids,
            ))
        offset += count

    feature_wires = np.empty(n_features, dtype=np.int32)
    for plan in heads:
        if plan.kind == "identity":
            channel_of = list(plan.shuffle) if plan.shuffle is not None else list(range(c))
            f = plan.feature_offset
            for ci in range(c):
                src = channel_of[ci]
                for y in range(h):
                    for x in range(w):
                        feature_wires[f] = (src * h + y) * w + x
                        f += 1
        else:
            for f in range(plan.feature_offset, plan.feature_offset + plan.feature_count):
                feature_wires[f] = input_size + f
    feature_wires.setflags(write=False)

    q = quantize_linear(m.linear)

    eff_acc = acc_bits
    raised = False
    if chunk_size > (1 << acc_bits) - 1:
        eff_acc = max(acc_bits, bits_needed(chunk_size))
        raised = True
    plan = plan_chunks(q.planes, acc_bits=eff_acc, chunk_size=chunk_size)

    widths = [call.n for call in lut_calls] + [eff_acc]
    max_bw = max(widths)
    if max_bw > MAX_TABLE_BITS:
        raise InvariantError(
            f"circuit max bitwidth {max_bw} exceeds the {MAX_TABLE_BITS}-bit limit"
        )

    circuit = Circuit(
        input_shape=m.input_shape if isinstance(m.input_shape, int) else chw,
        front_end=m.front_end,
        tables=tuple(tables),
        heads=tuple(heads),
        lut_calls=tuple(lut_calls),
        quant=q,
        chunk_plan=plan,
        feature_wires=feature_wires,
        max_bitwidth=max_bw,
        name=m.name,
        dataset=m.dataset,
        setting=m.setting,
        acc_raised=raised,
    )
    digest = hashlib.sha256(_circuit_payload_bytes(circuit)).hexdigest()[:12]
    object.__setattr__(circuit, "version", digest)
    return circuit


@dataclass(frozen=True)
class ConstraintReport:
    """Static verification result for a compiled circuit."""

    max_bitwidth: int
    calls_by_bitwidth: dict[int, int]
    acc_bits: int
    needed_acc_bits: int
    entries: tuple[tuple[str, str], ...]  # (severity, message)

    @property
    def ok(self) -> bool:
        return not any(sev == "error" for sev, _ in self.entries)

    def errors(self) -> list[str]:
        return [msg for sev, msg in self.entries if sev == "error"]

    def warnings(self) -> list[str]:
        return [msg for sev, msg in self.entries if sev == "warning"]


def check_constraints(c: Circuit) -> ConstraintReport:
    """Verify backend constraints and report per-bitwidth call statistics."""
    counts = c.calls_by_bitwidth()
    entries: list[tuple[str, str]] = []
    max_run = c.chunk_plan.max_run_length()
    needed = bits_needed(max_run) if max_run else 1
    acc = c.chunk_plan.acc_bits

    for n in sorted(counts):
        if n > MAX_TABLE_BITS:
            entries.append(("error", f"{counts[n]} lookup calls at {n} bits exceed the "
                                     f"{MAX_TABLE_BITS}-bit limit"))
        elif n > SLOW_TABLE_BITS:
            entries.append(("warning", f"{counts[n]} lookup calls at {n} bits; calls above "
                                       f"{SLOW_TABLE_BITS} bits are prohibitively slow"))
    if max_run > (1 << acc) - 1:
        entries.append(("error", f"a sub-sum can reach {max_run}, which needs {needed} bits "
                                 f"but the accumulator is {acc} bits"))
    if acc > DEFAULT_ACC_BITS:
        entries.append(("note", f"accumulator width is {acc} bits (chunk size "
                                f"{c.chunk_plan.chunk_size})"))
    widths = sorted(counts)
    if len(widths) > 1 or (widths and widths[0] != c.max_bitwidth):
        entries.append(("note", f"uniform-cost rule: all calls are costed at "
                                f"{c.max_bitwidth} bits, the largest bitwidth in the circuit"))
    return ConstraintReport(
        max_bitwidth=c.max_bitwidth,
        calls_by_bitwidth=counts,
        acc_bits=acc,
        needed_acc_bits=needed,
        entries=tuple(entries),
    )


# ---------------------------------------------------------------------------
# Serialization


def _table_to_json(t: TruthTable) -> dict:
    packed = np.packbits(t.bits, bitorder="little").tobytes()
    return {"n": t.n, "bits": base64.b64encode(packed).decode("ascii"),
            "unstable": t.unstable}


def _table_from_json(obj: Any, name: str) -> TruthTable:
    if not isinstance(obj, dict):
        raise SchemaError(f"{name}: expected an object")
    try:
        n = int(obj["n"])
        raw = base64.b64decode(obj["bits"], validate=True)
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{name}: malformed table entry ({exc})") from exc
    if n < 1 or n > MAX_TABLE_BITS:
        raise SchemaError(f"{name}.n: invalid bitwidth {n}")
    expect_bytes = ((1 << n) + 7) // 8
    if len(raw) != expect_bytes:
        raise SchemaError(
            f"{name}.bits: expected {expect_bytes} packed bytes for n = {n}, got {len(raw)}"
        )
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[: 1 << n]
    return TruthTable(n=n, bits=bits.astype(np.uint8), unstable=bool(obj.get("unstable", False)))


def _head_to_json(p: HeadPlan) -> dict:
    out: dict[str, Any] = {
        "kind": p.kind,
        "feature_offset": p.feature_offset,
        "feature_count": p.feature_count,
        "shuffle": list(p.shuffle) if p.shuffle is not None else None,
    }
    if p.geometry is not None:
        g = p.geometry
        out["geometry"] = {
            "n": g.n,
            "patch_shape": list(g.patch_shape),
            "patch_stride": list(g.patch_stride),
            "groups": g.groups,
            "out_h": g.out_h,
            "out_w": g.out_w,
            "wire_map": [[int(v) for v in row] for row in g.wire_map],
        }
        out["out_channels"] = p.out_channels
        out["table_ids"] = list(p.table_ids)
    return out


def _head_from_json(obj: Any, name: str) -> HeadPlan:
    if not isinstance(obj, dict) or obj.get("kind") not in ("ltt", "identity"):
        raise SchemaError(f"{name}: expected a head object with kind 'ltt' or 'identity'")
    shuffle = obj.get("shuffle")
    shuffle_t = tuple(int(x) for x in shuffle) if shuffle is not None else None
    geometry = None
    out_channels = 0
    table_ids: tuple[int, ...] = ()
    if obj["kind"] == "ltt":
        raw = obj.get("geometry")
        if not isinstance(raw, dict):
            raise SchemaError(f"{name}.geometry: required for an ltt head")
        wire_map = np.asarray(raw["wire_map"], dtype=np.int32)
        wire_map.setflags(write=False)
        geometry = PatchGeometry(
            n=int(raw["n"]),
            patch_shape=tuple(int(x) for x in raw["patch_shape"]),
            patch_stride=tuple(int(x) for x in raw["patch_stride"]),
            groups=int(raw["groups"]),
            out_h=int(raw["out_h"]),
            out_w=int(raw["out_w"]),
            wire_map=wire_map,
        )
        out_channels = int(obj.get("out_channels", 0))
        table_ids = tuple(int(x) for x in obj.get("table_ids", ()))
    return HeadPlan(
        kind=obj["kind"],
        feature_offset=int(obj["feature_offset"]),
        feature_count=int(obj["feature_count"]),
        shuffle=shuffle_t,
        geometry=geometry,
        out_channels=out_channels,
        table_ids=table_ids,
    )


def _circuit_to_json(c: Circuit) -> dict:
    front: dict[str, Any] = {"kind": c.front_end.kind}
    if c.front_end.thresholds is not None:
        front["thresholds"] = c.front_end.thresholds.tolist()
    return {
        "format": CIRCUIT_FORMAT,
        "version": CIRCUIT_VERSION,
        "metadata": {"name": c.name, "dataset": c.dataset, "setting": c.setting,
                     "model_version": c.version},
        "input_shape": (c.input_shape if isinstance(c.input_shape, int)
                        else list(c.input_shape)),
        "front_end": front,
        "tables": [_table_to_json(t) for t in c.tables],
        "heads": [_head_to_json(h) for h in c.heads],
        "lut_calls": [
            [call.table_id, call.output_wire, [int(wv) for wv in call.input_wires]]
            for call in c.lut_calls
        ],
        "quant": {
            "scale": c.quant.scale,
            "int_weights": c.quant.int_weights.tolist(),
        },
        "chunk_plan": {
            "acc_bits": c.chunk_plan.acc_bits,
            "chunk_size": c.chunk_plan.chunk_size,
            "chunks": [
                [cls, plane, [list(run) for run in runs]]
                for (cls, plane), runs in sorted(c.chunk_plan.chunks.items())
            ],
        },
        "feature_wires": [int(wv) for wv in c.feature_wires],
        "max_bitwidth": c.max_bitwidth,
        "acc_raised": c.acc_raised,
    }


def _circuit_payload_bytes(c: Circuit) -> bytes:
    obj = _circuit_to_json(c)
    obj["metadata"].pop("model_version", None)
    return json.dumps(obj, sort_keys=True).encode("utf-8")


def serialize_circuit(c: Circuit) -> bytes:
    return json.dumps(_circuit_to_json(c)).encode("utf-8")


def parse_circuit(data: Union[bytes, str]) -> Circuit:
    """Parse a compiled-circuit file; lossless inverse of serialize_circuit."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"circuit: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict) or obj.get("format") != CIRCUIT_FORMAT:
        raise SchemaError(f"format: expected {CIRCUIT_FORMAT!r}")
    if int(obj.get("version", -1)) != CIRCUIT_VERSION:
        raise SchemaError(f"version: unsupported circuit version {obj.get('version')!r}")

    raw_shape = obj.get("input_shape")
    if isinstance(raw_shape, int):
        input_shape: Union[int, tuple[int, int, int]] = raw_shape
    elif isinstance(raw_shape, (list, tuple)) and len(raw_shape) == 3:
        input_shape = tuple(int(x) for x in raw_shape)  # type: ignore[assignment]
    else:
        raise SchemaError("input_shape: expected an int or [c, h, w]")

    raw_front = obj.get("front_end") or {}
    if raw_front.get("kind") == "binarize":
        front = binarize_front_end(raw_front.get("thresholds", []))
    elif raw_front.get("kind") == "precomputed_binary":
        front = precomputed_front_end()
    else:
        raise SchemaError(f"front_end.kind: unknown kind {raw_front.get('kind')!r}")

    tables = tuple(_table_from_json(t, f"tables[{i}]")
                   for i, t in enumerate(obj.get("tables", [])))
    heads = tuple(_head_from_json(h, f"heads[{i}]")
                  for i, h in enumerate(obj.get("heads", [])))

    calls = []
    for i, raw in enumerate(obj.get("lut_calls", [])):
        try:
            table_id, out_wire, wires = raw
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"lut_calls[{i}]: malformed entry") from exc
        if not 0 <= int(table_id) < len(tables):
            raise SchemaError(f"lut_calls[{i}]: table id {table_id} out of range")
        arr = np.asarray(wires, dtype=np.int32)
        if arr.shape != (tables[int(table_id)].n,):
            raise SchemaError(
                f"lut_calls[{i}]: {arr.shape[0] if arr.ndim else 0} wires for an "
                f"{tables[int(table_id)].n}-bit table"
            )
        arr.setflags(write=False)
        calls.append(LutCall(table_id=int(table_id), input_wires=arr,
                             output_wire=int(out_wire), n=tables[int(table_id)].n))

    raw_q = obj.get("quant")
    if not isinstance(raw_q, dict):
        raise SchemaError("quant: expected an object")
    ints = np.asarray(raw_q.get("int_weights"), dtype=np.int8)
    if ints.ndim != 2:
        raise SchemaError("quant.int_weights: expected a 2-D integer matrix")
    if ints.size and (ints.min() < -8 or ints.max() > 7):
        raise SchemaError("quant.int_weights: entries must lie in [-8, 7]")
    planes = planes_from_ints(ints)
    ints.setflags(write=False)
    planes.setflags(write=False)
    q = QuantLinear(planes=planes, int_weights=ints, scale=float(raw_q.get("scale", 1.0)))

    raw_plan = obj.get("chunk_plan") or {}
    chunks: dict[tuple[int, int], tuple[tuple[int, ...], ...]] = {}
    for entry in raw_plan.get("chunks", []):
        try:
            cls, plane, runs = entry
        except (TypeError, ValueError) as exc:
            raise SchemaError("chunk_plan.chunks: malformed entry") from exc
        chunks[(int(cls), int(plane))] = tuple(tuple(int(f) for f in run) for run in runs)
    plan = ChunkPlan(acc_bits=int(raw_plan.get("acc_bits", DEFAULT_ACC_BITS)),
                     chunk_size=int(raw_plan.get("chunk_size", DEFAULT_CHUNK_SIZE)),
                     chunks=chunks)

    feature_wires = np.asarray(obj.get("feature_wires"), dtype=np.int32)
    feature_wires.setflags(write=False)
    meta = obj.get("metadata") or {}
    return Circuit(
        input_shape=input_shape,
        front_end=front,
        tables=tables,
        heads=heads,
        lut_calls=tuple(calls),
        quant=q,
        chunk_plan=plan,
        feature_wires=feature_wires,
        max_bitwidth=int(obj.get("max_bitwidth", 0)),
        name=str(meta.get("name", "model")),
        dataset=str(meta.get("dataset", "")),
        setting=str(meta.get("setting", "full_pr")),
        version=str(meta.get("model_version", "")),
        acc_raised=bool(obj.get("acc_raised", False)),
    )


def load_circuit(path: str) -> Circuit:
    with open(path, "rb") as fh:
        return parse_circuit(fh.read())


def save_circuit(c: Circuit, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_circuit(c))

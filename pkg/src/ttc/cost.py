"""Cost estimation for encrypted execution of a compiled circuit.

Wall time follows the backend's uniform-bitwidth rule: every table call is
costed at the largest bitwidth appearing anywhere in the circuit, additions
are costed at zero, and scaling across cores is assumed perfect. Both
simplifications make the estimate a lower bound on measured times, and
reports are labeled as such.

Message and memory sizes cannot be derived from first principles without a
concrete parameter set, so they come from a calibrated linear model whose
per-bitwidth coefficients were fitted against measured deployments; the
constants ship in an editable config file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .circuit import Circuit
from .engine import EvalTrace
from .errors import SchemaError

MIN_BITS, MAX_BITS = 1, 16


def _load_config(name: str, path: Optional[str]) -> dict:
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    ref = resources.files("ttc.configs").joinpath(name)
    return json.loads(ref.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class LutTimingTable:
    """Milliseconds per table call, keyed by input bitwidth 1..16."""

    ms_per_call: dict[int, float]

    def __post_init__(self) -> None:
        for n in range(MIN_BITS, MAX_BITS + 1):
            if n not in self.ms_per_call:
                raise SchemaError(f"timing table: missing entry for bitwidth {n}")
            if self.ms_per_call[n] <= 0:
                raise SchemaError(f"timing table: entry for bitwidth {n} must be positive")

    def __getitem__(self, bitwidth: int) -> float:
        if not MIN_BITS <= bitwidth <= MAX_BITS:
            raise SchemaError(f"timing table: bitwidth {bitwidth} out of range")
        return self.ms_per_call[bitwidth]


def load_timing_table(path: Optional[str] = None) -> LutTimingTable:
    obj = _load_config("timing_table.json", path)
    try:
        entries = {int(k): float(v) for k, v in obj["ms_per_call"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"timing table: malformed config ({exc})") from exc
    return LutTimingTable(ms_per_call=entries)


def default_timing_table() -> LutTimingTable:
    """The measured per-call times shipped with the package."""
    return load_timing_table()


def _by_bitwidth(obj: dict, key: str) -> dict[int, float]:
    try:
        return {int(k): float(v) for k, v in obj[key].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"size calibration: malformed {key} ({exc})") from exc


@dataclass(frozen=True)
class SizeCalibration:
    """Fitted byte coefficients, keyed by the circuit's max bitwidth.

    Ciphertext and key sizes grow with the parameter set, which is chosen
    from the largest table bitwidth; a missing bitwidth falls back to the
    nearest calibrated one.
    """

    per_input_bit_bytes: dict[int, float]
    per_output_value_bytes: dict[int, float]
    public_key_bytes_by_max_bitwidth: dict[int, float]
    encryption_key_bytes: dict[int, float]
    server_ram_bytes_per_call: dict[int, float]

    def __post_init__(self) -> None:
        for name in ("per_input_bit_bytes", "per_output_value_bytes",
                     "public_key_bytes_by_max_bitwidth", "encryption_key_bytes",
                     "server_ram_bytes_per_call"):
            coeffs = getattr(self, name)
            if not coeffs:
                raise SchemaError(f"size calibration: {name} has no entries")
            if any(v < 0 for v in coeffs.values()):
                raise SchemaError(f"size calibration: {name} must be nonnegative")

    @staticmethod
    def _nearest(coeffs: dict[int, float], bitwidth: int) -> float:
        if bitwidth in coeffs:
            return coeffs[bitwidth]
        key = min(coeffs, key=lambda k: (abs(k - bitwidth), -k))
        return coeffs[key]

    def input_bit_bytes(self, bitwidth: int) -> float:
        return self._nearest(self.per_input_bit_bytes, bitwidth)

    def output_value_bytes(self, bitwidth: int) -> float:
        return self._nearest(self.per_output_value_bytes, bitwidth)

    def public_key_bytes(self, bitwidth: int) -> float:
        return self._nearest(self.public_key_bytes_by_max_bitwidth, bitwidth)

    def encryption_key(self, bitwidth: int) -> float:
        return self._nearest(self.encryption_key_bytes, bitwidth)

    def ram_per_call(self, bitwidth: int) -> float:
        return self._nearest(self.server_ram_bytes_per_call, bitwidth)


def load_size_calibration(path: Optional[str] = None) -> SizeCalibration:
    obj = _load_config("size_calibration.json", path)
    return SizeCalibration(
        per_input_bit_bytes=_by_bitwidth(obj, "per_input_bit_bytes"),
        per_output_value_bytes=_by_bitwidth(obj, "per_output_value_bytes"),
        public_key_bytes_by_max_bitwidth=_by_bitwidth(obj, "public_key_bytes_by_max_bitwidth"),
        encryption_key_bytes=_by_bitwidth(obj, "encryption_key_bytes"),
        server_ram_bytes_per_call=_by_bitwidth(obj, "server_ram_bytes_per_call"),
    )


@dataclass(frozen=True)
class SizeEstimate:
    """Communication and memory estimates for one circuit."""

    input_bytes: float
    output_bytes: float
    public_key_bytes: float
    encryption_key_bytes: float
    server_ram_bytes: float
    input_bits: int
    output_values: int

    @property
    def comm_with_key(self) -> float:
        return self.input_bytes + self.output_bytes + self.public_key_bytes

    @property
    def comm_without_key(self) -> float:
        return self.input_bytes + self.output_bytes


def circuit_size_dims(c: Circuit) -> tuple[int, int, int]:
    """(input bits, output values, lut calls) driving the size model.

    Output values count the bounded sub-sums the server materializes; the
    chunking optimization that keeps accumulators small is what inflates the
    response size.
    """
    return c.input_size, c.chunk_plan.total_chunks(), len(c.lut_calls)


def estimate_sizes(c: Circuit, calib: Optional[SizeCalibration] = None) -> SizeEstimate:
    calib = calib or load_size_calibration()
    bw = c.max_bitwidth
    in_bits, out_values, calls = circuit_size_dims(c)
    return SizeEstimate(
        input_bytes=calib.input_bit_bytes(bw) * in_bits,
        output_bytes=calib.output_value_bytes(bw) * out_values,
        public_key_bytes=calib.public_key_bytes(bw) if calls else 0.0,
        encryption_key_bytes=calib.encryption_key(bw),
        server_ram_bytes=calib.ram_per_call(bw) * calls,
        input_bits=in_bits,
        output_values=out_values,
    )


@dataclass(frozen=True)
class CostReport:
    """Estimated encrypted-inference cost; a documented lower bound."""

    est_seconds: float
    cores: int
    total_calls: int
    uniform_bitwidth_applied: int
    ms_per_call: float
    call_costs: dict[int, float]  # bitwidth -> seconds attributed to those calls
    lower_bound: bool = True
    sizes: Optional[SizeEstimate] = None

    def describe(self) -> str:
        lines = [
            f"estimated wall time: {self.est_seconds:.2f} s on {self.cores} core(s) "
            f"(lower bound)",
            f"  {self.total_calls} table calls, all costed at "
            f"{self.uniform_bitwidth_applied}-bit rate ({self.ms_per_call} ms/call)",
        ]
        for n in sorted(self.call_costs):
            lines.append(f"  {n}-bit calls contribute {self.call_costs[n]:.2f} s")
        if self.sizes is not None:
            s = self.sizes
            lines.append(f"  encrypted input:  {s.input_bytes / 1e6:.2f} MB ({s.input_bits} bits)")
            lines.append(f"  encrypted output: {s.output_bytes / 1e6:.2f} MB "
                         f"({s.output_values} sub-sums)")
            lines.append(f"  public keys:      {s.public_key_bytes / 1e6:.2f} MB")
            lines.append(f"  server RAM:       {s.server_ram_bytes / 1e6:.2f} MB")
        return "\n".join(lines)


def estimate_time(trace: EvalTrace, cores: int = 1,
                  table: Optional[LutTimingTable] = None) -> CostReport:
    """Apply the uniform worst-bitwidth cost rule to an execution trace.

    Every call, whatever its own bitwidth, is charged at the rate of the
    largest bitwidth touched; additions cost zero; core scaling is ideal.
    """
    if cores < 1:
        raise ValueError("cores must be >= 1")
    table = table or default_timing_table()
    total = trace.total_calls
    if total == 0:
        return CostReport(est_seconds=0.0, cores=cores, total_calls=0,
                          uniform_bitwidth_applied=trace.max_bitwidth_touched,
                          ms_per_call=0.0, call_costs={})
    bw = trace.max_bitwidth_touched
    ms = table[bw]
    per_bw = {n: count * ms / 1000.0 / cores
              for n, count in sorted(trace.lut_calls_by_bitwidth.items())}
    return CostReport(
        est_seconds=total * ms / 1000.0 / cores,
        cores=cores,
        total_calls=total,
        uniform_bitwidth_applied=bw,
        ms_per_call=ms,
        call_costs=per_bw,
    )


def full_report(c: Circuit, trace: EvalTrace, cores: int = 1,
                table: Optional[LutTimingTable] = None,
                calib: Optional[SizeCalibration] = None) -> CostReport:
    """Time estimate plus size estimates in one report."""
    report = estimate_time(trace, cores=cores, table=table)
    sizes = estimate_sizes(c, calib)
    return CostReport(
        est_seconds=report.est_seconds,
        cores=report.cores,
        total_calls=report.total_calls,
        uniform_bitwidth_applied=report.uniform_bitwidth_applied,
        ms_per_call=report.ms_per_call,
        call_costs=report.call_costs,
        sizes=sizes,
    )

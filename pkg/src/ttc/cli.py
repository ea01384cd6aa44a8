"""Command-line interface.

Commands: compile, estimate, infer (local or remote), serve, bench.
Input files carry one sample per line as comma-separated reals or bits.
Exit codes: 0 success, 2 schema/shape error, 3 constraint violation,
4 transport error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import circuit as circuit_mod
from . import cost, engine, ltt, protocol, ttir
from .errors import TTCError, exit_code_for


def _load_model_or_circuit(path: str) -> tuple[circuit_mod.Circuit, ttir.ModelSpec | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    head = json.loads(data.decode("utf-8"))
    if head.get("format") == circuit_mod.CIRCUIT_FORMAT:
        return circuit_mod.parse_circuit(data), None
    model = ttir.parse_model(data)
    return circuit_mod.compile_model(model), model


def _read_samples(path: str) -> list[np.ndarray]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            samples.append(np.array([float(x) for x in line.split(",")]))
    return samples


def _cmd_compile(args: argparse.Namespace) -> int:
    model = ttir.load_model(args.model)
    c = circuit_mod.compile_model(model, chunk_size=args.chunk_size,
                                  acc_bits=args.acc_bits)
    circuit_mod.save_circuit(c, args.output)
    report = circuit_mod.check_constraints(c)
    calls = ", ".join(f"{v}x{k}-bit" for k, v in sorted(report.calls_by_bitwidth.items()))
    print(f"compiled {model.name!r}: {len(c.lut_calls)} table calls ({calls or 'none'}), "
          f"{len(c.tables)} unique tables, max bitwidth {c.max_bitwidth}, "
          f"accumulator {report.acc_bits} bits")
    for sev, msg in report.entries:
        print(f"  [{sev}] {msg}")
    if args.tables_out:
        with open(args.tables_out, "w", encoding="utf-8") as fh:
            for i, head in enumerate(model.heads):
                if head.kind != "ltt":
                    continue
                assert head.block is not None
                for ch, table in enumerate(ltt.extract_all_tables(head.block)):
                    fh.write(f"head {i} channel {ch} n {table.n} {table.to_bitstring()}\n")
        print(f"wrote truth-table dump to {args.tables_out}")
    return 0 if report.ok else 3


def _cmd_estimate(args: argparse.Namespace) -> int:
    c, _ = _load_model_or_circuit(args.circuit)
    timing = cost.load_timing_table(args.timing)
    calib = cost.load_size_calibration(args.calibration)
    # the static call list determines the trace; no input needed
    ev = engine.Evaluator(c)
    trace = ev.trace_skeleton(0)
    report = cost.full_report(c, trace, cores=args.cores, table=timing, calib=calib)
    if args.json:
        sizes = report.sizes
        assert sizes is not None
        print(json.dumps({
            "est_seconds": report.est_seconds,
            "cores": report.cores,
            "total_calls": report.total_calls,
            "uniform_bitwidth": report.uniform_bitwidth_applied,
            "lower_bound": report.lower_bound,
            "input_bytes": sizes.input_bytes,
            "output_bytes": sizes.output_bytes,
            "public_key_bytes": sizes.public_key_bytes,
            "encryption_key_bytes": sizes.encryption_key_bytes,
            "server_ram_bytes": sizes.server_ram_bytes,
            "comm_with_key_bytes": sizes.comm_with_key,
            "comm_without_key_bytes": sizes.comm_without_key,
        }, indent=1))
    else:
        print(report.describe())
    return 0


def _cmd_infer(args: argparse.Namespace) -> int:
    c, _ = _load_model_or_circuit(args.model)
    if args.setting:
        want = {"full": "full_pr", "split": "split"}[args.setting]
        if want != c.setting:
            print(f"note: model is declared {c.setting!r}; proceeding with it",
                  file=sys.stderr)
    samples = _read_samples(args.input)
    manifest = protocol.ClientManifest.from_circuit(c)

    if args.remote:
        host, port = protocol.parse_address(args.remote)
        with protocol.RemoteClient(host, port) as client:
            for x in samples:
                req = protocol.client_encode(x, manifest)
                resp = client.request(req)
                scores, label = protocol.client_finalize(resp, manifest.scale)
                _print_prediction(label, scores, args.scores)
    else:
        ev = engine.Evaluator(c)
        for x in samples:
            req = protocol.client_encode(x, manifest)
            result, _ = ev.infer(req.payload_bits)
            _print_prediction(result.label, result.scores, args.scores)
    return 0


def _print_prediction(label: int, scores: np.ndarray, with_scores: bool) -> None:
    if with_scores:
        print(f"{label}\t" + ",".join(f"{s:.6g}" for s in scores))
    else:
        print(label)


def _cmd_serve(args: argparse.Namespace) -> int:
    registry = protocol.ModelRegistry()
    model_dir = Path(args.models)
    loaded = []
    for path in sorted(model_dir.glob("*.json")):
        loaded.append(registry.register_file(str(path)))
    if not loaded:
        print(f"no model or circuit files found in {model_dir}", file=sys.stderr)
        return 2
    host, port = protocol.parse_address(args.listen)
    server = protocol.InferenceServer((host, port), registry)
    print(f"serving {loaded} on {host}:{server.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    c, _ = _load_model_or_circuit(args.circuit)
    samples = _read_samples(args.inputs)
    manifest = protocol.ClientManifest.from_circuit(c)
    high = 0
    labels = []
    trace = None
    for x in samples:
        req = protocol.client_encode(x, manifest)
        result, trace = engine.eval_simulated(c, req.payload_bits)
        high = max(high, trace.max_accumulator_value)
        labels.append(result.label)
    assert trace is not None
    timing = cost.load_timing_table(args.timing)
    report = cost.estimate_time(trace, cores=args.cores, table=timing)
    summary = {
        "samples": len(samples),
        "labels": labels,
        "lut_calls_by_bitwidth": {str(k): v for k, v
                                  in sorted(trace.lut_calls_by_bitwidth.items())},
        "max_accumulator_value": high,
        "max_bitwidth": trace.max_bitwidth_touched,
        "patches": trace.patches_evaluated,
        "est_seconds_per_sample": report.est_seconds,
        "cores": args.cores,
        "lower_bound": report.lower_bound,
    }
    if args.json:
        print(json.dumps(summary, indent=1))
    else:
        print(f"{summary['samples']} samples, trace: "
              f"{summary['lut_calls_by_bitwidth']} calls, "
              f"max accumulator {high}, max bitwidth {trace.max_bitwidth_touched}")
        print(f"estimated encrypted time per sample: {report.est_seconds:.2f} s "
              f"on {args.cores} core(s) (lower bound)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttc",
                                     description="truth-table circuit compiler and runtime")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="lower a model file to a circuit file")
    p.add_argument("model")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--chunk-size", type=int, default=circuit_mod.DEFAULT_CHUNK_SIZE)
    p.add_argument("--acc-bits", type=int, default=circuit_mod.DEFAULT_ACC_BITS)
    p.add_argument("--tables-out", help="also dump per-channel truth tables as bit strings")
    p.set_defaults(func=_cmd_compile)

    p = sub.add_parser("estimate", help="estimate encrypted time, memory, and traffic")
    p.add_argument("circuit")
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--timing", help="timing table config path")
    p.add_argument("--calibration", help="size calibration config path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("infer", help="classify samples locally or against a server")
    p.add_argument("--model", required=True, help="model or circuit file")
    p.add_argument("--input", required=True, help="one sample per line, comma-separated")
    p.add_argument("--remote", help="host:port of a running server")
    p.add_argument("--setting", choices=["full", "split"])
    p.add_argument("--scores", action="store_true", help="print scores next to labels")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("serve", help="serve compiled models over TCP")
    p.add_argument("--models", required=True, help="directory of model/circuit JSON files")
    p.add_argument("--listen", default="127.0.0.1:8631")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench", help="trace circuit execution over an input file")
    p.add_argument("circuit")
    p.add_argument("--inputs", required=True)
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--timing")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TTCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (ConnectionError, TimeoutError, OSError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

import json

import numpy as np
import pytest

from ttc import circuit as cm
from ttc import cli, protocol, ttir
from ttc.presets import adult_model


@pytest.fixture()
def adult_files(tmp_path):
    model_path = tmp_path / "adult.json"
    ttir.save_model(adult_model(), str(model_path))
    inputs = tmp_path / "inputs.csv"
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 2, (5, 18))
    inputs.write_text("\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return model_path, inputs, rows


def test_compile_estimate_infer_flow(adult_files, tmp_path, capsys):
    model_path, inputs, rows = adult_files
    circuit_path = tmp_path / "adult.circuit.json"

    assert cli.main(["compile", str(model_path), "-o", str(circuit_path)]) == 0
    out = capsys.readouterr().out
    assert "384 table calls" in out

    assert cli.main(["estimate", str(circuit_path), "--cores", "4", "--json"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert est["lower_bound"] is True
    assert est["uniform_bitwidth"] == 5
    assert est["est_seconds"] == pytest.approx(384 * 75.2 / 1000 / 4)

    assert cli.main(["infer", "--model", str(circuit_path),
                     "--input", str(inputs)]) == 0
    labels = [int(line) for line in capsys.readouterr().out.split()]
    c = cm.load_circuit(str(circuit_path))
    from ttc import engine
    expect = [engine.eval_cleartext(c, r).label for r in rows]
    assert labels == expect


def test_compile_tables_dump(adult_files, tmp_path, capsys):
    model_path, _, _ = adult_files
    circuit_path = tmp_path / "c.json"
    dump = tmp_path / "tables.txt"
    assert cli.main(["compile", str(model_path), "-o", str(circuit_path),
                     "--tables-out", str(dump)]) == 0
    lines = dump.read_text().strip().splitlines()
    assert len(lines) == 96  # one per output channel, pre-dedup
    first = lines[0].split()
    assert first[:5] == ["head", "0", "channel", "0", "n"]
    assert len(first[6]) == 32  # 2^5 bits


def test_bench_reports_trace(adult_files, tmp_path, capsys):
    model_path, inputs, _ = adult_files
    assert cli.main(["bench", str(model_path), "--inputs", str(inputs),
                     "--cores", "2", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lut_calls_by_bitwidth"] == {"5": 384}
    assert out["samples"] == 5
    assert out["lower_bound"] is True


def test_schema_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\"format\": \"nope\"}")
    assert cli.main(["compile", str(bad), "-o", str(tmp_path / "out.json")]) == 2


def test_remote_infer_against_server(adult_files, tmp_path, capsys):
    model_path, inputs, rows = adult_files
    registry = protocol.ModelRegistry()
    registry.register_file(str(model_path))
    server = protocol.InferenceServer(("127.0.0.1", 0), registry)
    server.serve_in_background()
    try:
        assert cli.main(["infer", "--model", str(model_path), "--input", str(inputs),
                         "--remote", f"127.0.0.1:{server.port}"]) == 0
        remote_labels = [int(line) for line in capsys.readouterr().out.split()]
        assert cli.main(["infer", "--model", str(model_path),
                         "--input", str(inputs)]) == 0
        local_labels = [int(line) for line in capsys.readouterr().out.split()]
        assert remote_labels == local_labels
    finally:
        server.shutdown()


def test_transport_error_exit_code(adult_files, capsys):
    model_path, inputs, _ = adult_files
    code = cli.main(["infer", "--model", str(model_path), "--input", str(inputs),
                     "--remote", "127.0.0.1:1"])  # nothing listens there
    assert code == 4

#!/usr/bin/env python3
"""Fit the size-calibration coefficients from measured deployment targets.

Each coefficient is per max-bitwidth: ciphertext and key sizes depend on the
backend parameter set, which is selected from the largest table in the
circuit. Targets are measured input/output/RAM sizes of three reference
deployments; dividing by the corresponding preset circuit's dimensions
yields the per-unit coefficients. Writes src/ttc/configs/size_calibration.json.
"""

import json
import pathlib

from ttc import circuit, presets
from ttc.cost import circuit_size_dims

# (preset, max bitwidth) -> measured (input bytes, output bytes, server RAM bytes)
TARGETS = {
    "adult": (5, 4.3e6, 1.9e6, 3.4e6),
    "mnist_vgg1b_tt": (4, 9.0e6, 30.0e6, 31.45e6),
    "mnist_full_pr": (6, 100.0e6, 220.0e6, 237.1e6),
}

PUBLIC_KEY_BYTES = {4: 101.9e6, 5: 101.6e6, 6: 440.0e6}
ENCRYPTION_KEY_BYTES = {4: 21.7e3, 5: 21.6e3, 6: 70.9e3}


def main() -> None:
    per_input, per_output, per_call_ram = {}, {}, {}
    for name, (bw, in_bytes, out_bytes, ram_bytes) in TARGETS.items():
        c = circuit.compile_model(presets.build_preset(name))
        in_bits, out_values, calls = circuit_size_dims(c)
        assert c.max_bitwidth == bw, (name, c.max_bitwidth)
        per_input[bw] = round(in_bytes / in_bits, 3)
        per_output[bw] = round(out_bytes / out_values, 3)
        per_call_ram[bw] = round(ram_bytes / calls, 3)
        print(f"{name}: bw={bw} input_bits={in_bits} output_values={out_values} "
              f"calls={calls}")

    config = {
        "description": "Per-bitwidth byte coefficients fitted against measured "
                       "deployment sizes (encrypted input per bit, encrypted "
                       "output per bounded sub-sum, server RAM per table call).",
        "per_input_bit_bytes": {str(k): v for k, v in sorted(per_input.items())},
        "per_output_value_bytes": {str(k): v for k, v in sorted(per_output.items())},
        "public_key_bytes_by_max_bitwidth": {str(k): v for k, v in sorted(PUBLIC_KEY_BYTES.items())},
        "encryption_key_bytes": {str(k): v for k, v in sorted(ENCRYPTION_KEY_BYTES.items())},
        "server_ram_bytes_per_call": {str(k): v for k, v in sorted(per_call_ram.items())},
    }
    out = pathlib.Path(__file__).resolve().parents[1] / "src/ttc/configs/size_calibration.json"
    out.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()

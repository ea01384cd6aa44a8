#!/usr/bin/env python3
"""Write the preset model files to models/ for CLI experiments."""

import pathlib

from ttc import presets, ttir

OUT = pathlib.Path(__file__).resolve().parents[1] / "models"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    for name in presets.PRESETS:
        model = presets.build_preset(name)
        path = OUT / f"{name}.json"
        ttir.save_model(model, str(path))
        print(f"wrote {path} ({model.feature_count()} features, "
              f"{model.linear.classes} classes)")


if __name__ == "__main__":
    main()

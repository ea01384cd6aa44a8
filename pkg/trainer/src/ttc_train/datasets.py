"""Dataset file helpers for the trainer CLI and tests."""

from __future__ import annotations

import csv
from pathlib import Path


def ensure_cancer_csv(path: str | Path) -> Path:
    """Materialize the tumor-diagnosis CSV from the scikit-learn copy."""
    path = Path(path)
    if path.exists():
        return path
    from sklearn.datasets import load_breast_cancer

    ds = load_breast_cancer()
    names = [n.replace(" ", "_") for n in ds.feature_names]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["diagnosis"])
        for row, target in zip(ds.data, ds.target):
            label = "malignant" if target == 0 else "benign"
            writer.writerow([repr(float(v)) for v in row] + [label])
    return path


def dataset_csv(name: str, data_dir: str | Path) -> Path:
    """Locate (or, for cancer, materialize) the dataset CSV."""
    data_dir = Path(data_dir)
    path = data_dir / f"{name}.csv"
    if name == "cancer":
        return ensure_cancer_csv(path)
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found; run scripts/fetch_datasets.py --dataset {name} "
            f"(needs network access to the UCI archive)")
    return path

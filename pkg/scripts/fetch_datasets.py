#!/usr/bin/env python3
"""Fetch the three tabular datasets and normalize them to the schema CSVs.

adult and diabetes download from the UCI archive and need network access;
cancer falls back to the copy bundled with scikit-learn when offline. Each
dataset is written as data/<name>.csv with a header row matching the
corresponding schema in src/ttc/schemas/.
"""

import argparse
import csv
import io
import pathlib
import sys
import urllib.request
import zipfile

DATA_DIR = pathlib.Path(__file__).resolve().parents[1] / "data"

ADULT_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"
ADULT_COLUMNS = ["age", "workclass", "fnlwgt", "education", "education-num",
                 "marital-status", "occupation", "relationship", "race", "sex",
                 "capital-gain", "capital-loss", "hours-per-week",
                 "native-country", "income"]

DIABETES_URL = ("https://archive.ics.uci.edu/ml/machine-learning-databases/00296/"
                "dataset_diabetes.zip")

# ICD-9 chapter grouping for the three diagnosis columns.
ICD_CHAPTERS = [
    (1, 139, "infectious"), (140, 239, "neoplasms"), (240, 279, "endocrine"),
    (280, 289, "blood"), (290, 319, "mental"), (320, 389, "nervous"),
    (390, 459, "circulatory"), (460, 519, "respiratory"), (520, 579, "digestive"),
    (580, 629, "genitourinary"), (630, 679, "pregnancy"), (680, 709, "skin"),
    (710, 739, "musculoskeletal"), (740, 759, "congenital"),
    (760, 779, "perinatal"), (780, 799, "illdefined"), (800, 999, "injury"),
]


def _group_diag(code: str) -> str:
    code = code.strip()
    if code.startswith("E"):
        return "external"
    if code.startswith("V"):
        return "supplementary"
    try:
        num = int(float(code))
    except ValueError:
        return "illdefined"
    for lo, hi, name in ICD_CHAPTERS:
        if lo <= num <= hi:
            return name
    return "illdefined"


def fetch_adult() -> None:
    raw = urllib.request.urlopen(ADULT_URL, timeout=60).read().decode("utf-8")
    out = DATA_DIR / "adult.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ADULT_COLUMNS)
        for line in raw.splitlines():
            line = line.strip()
            if not line:
                continue
            fields = [f.strip().rstrip(".") for f in line.split(",")]
            if len(fields) == len(ADULT_COLUMNS):
                writer.writerow(fields)
    print(f"wrote {out}")


def fetch_cancer() -> None:
    try:
        from sklearn.datasets import load_breast_cancer
    except ImportError:
        print("cancer: scikit-learn not installed and no offline copy available",
              file=sys.stderr)
        raise
    ds = load_breast_cancer()
    names = [n.replace(" ", "_") for n in ds.feature_names]
    out = DATA_DIR / "cancer.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["diagnosis"])
        for row, target in zip(ds.data, ds.target):
            label = "malignant" if target == 0 else "benign"
            writer.writerow([repr(float(v)) for v in row] + [label])
    print(f"wrote {out} ({len(ds.target)} rows)")


def fetch_diabetes() -> None:
    blob = urllib.request.urlopen(DIABETES_URL, timeout=120).read()
    archive = zipfile.ZipFile(io.BytesIO(blob))
    name = next(n for n in archive.namelist() if n.endswith("diabetic_data.csv"))
    reader = csv.DictReader(io.TextIOWrapper(archive.open(name), encoding="utf-8"))
    import json
    schema_path = (pathlib.Path(__file__).resolve().parents[1]
                   / "src/ttc/schemas/diabetes.json")
    schema = json.loads(schema_path.read_text())
    keep = [c["name"] for c in schema["columns"]] + ["readmitted"]
    out = DATA_DIR / "diabetes.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(keep)
        count = 0
        for row in reader:
            for d in ("diag_1", "diag_2", "diag_3"):
                row[d] = _group_diag(row.get(d, ""))
            writer.writerow([row.get(col, "") for col in keep])
            count += 1
    print(f"wrote {out} ({count} rows)")


FETCHERS = {"adult": fetch_adult, "cancer": fetch_cancer, "diabetes": fetch_diabetes}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", choices=[*FETCHERS, "all"], default="all")
    args = parser.parse_args()
    DATA_DIR.mkdir(exist_ok=True)
    targets = list(FETCHERS) if args.dataset == "all" else [args.dataset]
    for name in targets:
        try:
            FETCHERS[name]()
        except Exception as exc:  # keep going; report per-dataset failures
            print(f"{name}: fetch failed ({exc})", file=sys.stderr)


if __name__ == "__main__":
    main()

"""Tabular dataset ingestion, binarization, splits, and the accuracy harness.

Schemas describe how raw columns expand into binary features: binary
passthrough, one-hot categoricals (optionally with an "other" bucket),
threshold indicator bits for numerics, and one-hot interval bins. Columns
declared with quantile specs are fitted on the training rows of each fold;
missing numeric cells are imputed with the training-fold median.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .circuit import Circuit
from .engine import Evaluator
from .errors import InvariantError, ParseError, SchemaError, ShapeError

OTHER_CATEGORY = "__other__"
MISSING_NUMERIC = ("", "?", "na", "nan", "none", "null")


@dataclass(frozen=True)
class ColumnSpec:
    """One raw column and its binary expansion rule."""

    name: str
    kind: str  # "binary" | "categorical" | "numeric" | "binned"
    categories: tuple[str, ...] = ()
    other: bool = False  # categorical: unseen values fall into an extra bucket
    thresholds: tuple[float, ...] = ()
    quantiles: int = 0  # numeric: fit this many thresholds on training rows
    edges: tuple[float, ...] = ()
    quantile_bins: int = 0  # binned: fit this many bins on training rows

    def feature_count(self) -> int:
        if self.kind == "binary":
            return 1
        if self.kind == "categorical":
            return len(self.categories) + (1 if self.other else 0)
        if self.kind == "numeric":
            return self.quantiles if self.quantiles else len(self.thresholds)
        if self.kind == "binned":
            return self.quantile_bins if self.quantile_bins else len(self.edges) + 1
        raise InvariantError(f"column {self.name!r}: unknown kind {self.kind!r}")

    def needs_fit(self) -> bool:
        return (self.kind == "numeric" and self.quantiles > 0) or (
            self.kind == "binned" and self.quantile_bins > 0)


@dataclass(frozen=True)
class TabularSchema:
    name: str
    label_column: str
    label_values: tuple[str, ...]
    columns: tuple[ColumnSpec, ...]
    expected_features: int

    def validate(self) -> None:
        total = sum(col.feature_count() for col in self.columns)
        if total != self.expected_features:
            raise InvariantError(
                f"schema {self.name!r}: columns expand to {total} features, "
                f"declared {self.expected_features}"
            )
        if len(self.label_values) < 2:
            raise InvariantError(f"schema {self.name!r}: need at least two label values")


def schema_from_json(obj: dict) -> TabularSchema:
    try:
        cols = tuple(
            ColumnSpec(
                name=str(c["name"]),
                kind=str(c["kind"]),
                categories=tuple(str(v) for v in c.get("categories", ())),
                other=bool(c.get("other", False)),
                thresholds=tuple(float(t) for t in c.get("thresholds", ())),
                quantiles=int(c.get("quantiles", 0)),
                edges=tuple(float(e) for e in c.get("edges", ())),
                quantile_bins=int(c.get("quantile_bins", 0)),
            )
            for c in obj["columns"]
        )
        schema = TabularSchema(
            name=str(obj.get("name", "dataset")),
            label_column=str(obj["label"]["column"]),
            label_values=tuple(str(v) for v in obj["label"]["values"]),
            columns=cols,
            expected_features=int(obj["expected_features"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"dataset schema: malformed ({exc})") from exc
    schema.validate()
    return schema


def load_schema(path: str) -> TabularSchema:
    with open(path, "r", encoding="utf-8") as fh:
        return schema_from_json(json.load(fh))


def load_builtin_schema(name: str) -> TabularSchema:
    from importlib import resources

    ref = resources.files("ttc.schemas").joinpath(f"{name}.json")
    return schema_from_json(json.loads(ref.read_text(encoding="utf-8")))


def _parse_float(raw: str, row: int, col: str) -> Optional[float]:
    text = raw.strip()
    if text.lower() in MISSING_NUMERIC:
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise ParseError(f"row {row}, column {col!r}: {raw!r} is not numeric") from exc


def _fit_column(col: ColumnSpec, values: list[Optional[float]],
                fit_rows: Sequence[int]) -> ColumnSpec:
    """Resolve quantile specs into concrete thresholds using training rows."""
    sample = np.array([values[i] for i in fit_rows if values[i] is not None])
    if sample.size == 0:
        raise ParseError(f"column {col.name!r}: no numeric values to fit quantiles")
    if col.kind == "numeric":
        qs = np.linspace(0, 1, col.quantiles + 2)[1:-1]
        thresholds = tuple(float(t) for t in np.quantile(sample, qs))
        return ColumnSpec(name=col.name, kind="numeric", thresholds=thresholds)
    qs = np.linspace(0, 1, col.quantile_bins + 1)[1:-1]
    edges = tuple(float(e) for e in np.quantile(sample, qs))
    return ColumnSpec(name=col.name, kind="binned", edges=edges)


def load_tabular(csv_path: str, schema: TabularSchema,
                 fit_rows: Optional[Sequence[int]] = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Expand a CSV into (bit feature matrix, integer labels).

    The file must carry a header naming every schema column plus the label.
    fit_rows (default: all rows) selects the rows used to fit quantile
    thresholds and imputation medians, so test folds never leak into them.
    """
    schema.validate()
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError(f"{csv_path}: empty file")
        missing = [c.name for c in schema.columns if c.name not in reader.fieldnames]
        if schema.label_column not in reader.fieldnames:
            missing.append(schema.label_column)
        if missing:
            raise ParseError(f"{csv_path}: missing columns {missing}")
        rows = list(reader)
    n = len(rows)
    if n == 0:
        raise ParseError(f"{csv_path}: no data rows")
    fit = list(fit_rows) if fit_rows is not None else list(range(n))

    labels = np.empty(n, dtype=np.int64)
    label_of = {v: i for i, v in enumerate(schema.label_values)}
    for r, row in enumerate(rows):
        raw = row[schema.label_column].strip()
        if raw not in label_of:
            raise ParseError(
                f"row {r}, column {schema.label_column!r}: unknown label {raw!r}"
            )
        labels[r] = label_of[raw]

    blocks: list[np.ndarray] = []
    for col in schema.columns:
        if col.kind in ("numeric", "binned"):
            values = [_parse_float(row[col.name], r, col.name)
                      for r, row in enumerate(rows)]
            fitted = _fit_column(col, values, fit) if col.needs_fit() else col
            train_vals = np.array([values[i] for i in fit if values[i] is not None])
            median = float(np.median(train_vals)) if train_vals.size else 0.0
            filled = np.array([v if v is not None else median for v in values])
            if fitted.kind == "numeric":
                block = np.column_stack([(filled >= t).astype(np.uint8)
                                         for t in fitted.thresholds])
            else:
                idx = np.searchsorted(np.asarray(fitted.edges), filled, side="left")
                block = np.zeros((n, len(fitted.edges) + 1), dtype=np.uint8)
                block[np.arange(n), idx] = 1
            expect = col.feature_count()
            if block.shape[1] != expect:
                raise ParseError(
                    f"column {col.name!r}: fitted to {block.shape[1]} features, "
                    f"schema declares {expect}"
                )
        elif col.kind == "categorical":
            cats = list(col.categories)
            index = {v: i for i, v in enumerate(cats)}
            width = col.feature_count()
            block = np.zeros((n, width), dtype=np.uint8)
            for r, row in enumerate(rows):
                raw = row[col.name].strip()
                if raw in index:
                    block[r, index[raw]] = 1
                elif col.other:
                    block[r, width - 1] = 1
                else:
                    raise ParseError(
                        f"row {r}, column {col.name!r}: unknown category {raw!r}"
                    )
        elif col.kind == "binary":
            block = np.zeros((n, 1), dtype=np.uint8)
            for r, row in enumerate(rows):
                raw = row[col.name].strip()
                if raw not in ("0", "1"):
                    raise ParseError(
                        f"row {r}, column {col.name!r}: expected 0/1, got {raw!r}"
                    )
                block[r, 0] = int(raw)
        else:
            raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
        blocks.append(block)

    features = np.concatenate(blocks, axis=1)
    if features.shape[1] != schema.expected_features:
        raise ParseError(
            f"{csv_path}: expanded to {features.shape[1]} features, schema "
            f"declares {schema.expected_features}"
        )
    return features, labels


# ---------------------------------------------------------------------------
# Splits and accuracy


@dataclass(frozen=True)
class SplitPlan:
    k: int = 5
    test_ratio: float = 0.2
    seed: int = 0


def make_splits(n: int, plan: SplitPlan = SplitPlan()) -> list[tuple[np.ndarray, np.ndarray]]:
    """k disjoint test folds covering all rows; deterministic under the seed."""
    if n < plan.k:
        raise InvariantError(f"need at least {plan.k} rows, got {n}")
    rng = np.random.default_rng(plan.seed)
    perm = rng.permutation(n)
    bounds = np.linspace(0, n, plan.k + 1).astype(int)
    splits = []
    for i in range(plan.k):
        test = np.sort(perm[bounds[i]:bounds[i + 1]])
        train = np.sort(np.concatenate([perm[:bounds[i]], perm[bounds[i + 1]:]]))
        splits.append((train, test))
    return splits


def accuracy(circuit: Circuit, features: np.ndarray, labels: np.ndarray,
             rows: Optional[Sequence[int]] = None) -> float:
    """Fraction of rows the compiled circuit classifies correctly."""
    if features.shape[1] != circuit.input_size:
        raise ShapeError(
            f"feature width {features.shape[1]} does not match circuit input "
            f"{circuit.input_size}"
        )
    idx = np.asarray(rows, dtype=np.int64) if rows is not None else np.arange(len(labels))
    ev = Evaluator(circuit)
    feats = ev.features_batch(features[idx])
    ints = circuit.quant.int_weights.astype(np.int64)
    scores = feats @ ints.T
    pred = np.argmax(scores, axis=1)
    return float(np.mean(pred == labels[idx]))


def evaluate_accuracy(circuit: Circuit, features: np.ndarray, labels: np.ndarray,
                      splits: Sequence[tuple[np.ndarray, np.ndarray]]
                      ) -> tuple[float, float, list[float]]:
    """Mean and std of per-fold test accuracy for one circuit."""
    per_fold = [accuracy(circuit, features, labels, rows=test) for _, test in splits]
    arr = np.asarray(per_fold)
    return float(arr.mean()), float(arr.std()), per_fold

import csv

import numpy as np
import pytest

from ttc import circuit as cm
from ttc import data
from ttc.errors import InvariantError, ParseError, ShapeError
from ttc.ttir import HeadSpec, LinearLayerSpec, ModelSpec, precomputed_front_end


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@pytest.fixture(scope="module")
def adult_schema():
    return data.load_builtin_schema("adult")


def synth_adult_rows(rng, n):
    rows = []
    for _ in range(n):
        rows.append([
            int(rng.integers(17, 80)),                       # age
            int(rng.integers(1, 17)),                        # education-num
            rng.choice(["Married-civ-spouse", "Never-married", "Divorced"]),
            rng.choice(["Male", "Female"]),
            int(rng.choice([0, 0, 0, 5000])),                # capital-gain
            int(rng.choice([0, 0, 1500])),                   # capital-loss
            int(rng.integers(10, 80)),                       # hours-per-week
            rng.choice(["Private", "Self-emp-not-inc", "State-gov"]),
            rng.choice(["<=50K", ">50K"]),
        ])
    return rows


ADULT_HEADER = ["age", "education-num", "marital-status", "sex", "capital-gain",
                "capital-loss", "hours-per-week", "workclass", "income"]


class TestSchemas:
    def test_adult_expands_to_18(self, adult_schema, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "adult.csv"
        write_csv(path, ADULT_HEADER, synth_adult_rows(rng, 60))
        feats, labels = data.load_tabular(str(path), adult_schema)
        assert feats.shape == (60, 18)
        assert set(np.unique(labels)) <= {0, 1}

    def test_cancer_expands_to_81(self, tmp_path):
        sklearn_data = pytest.importorskip("sklearn.datasets")
        schema = data.load_builtin_schema("cancer")
        ds = sklearn_data.load_breast_cancer()
        path = tmp_path / "cancer.csv"
        header = [n.replace(" ", "_") for n in ds.feature_names] + ["diagnosis"]
        rows = [[repr(float(v)) for v in row]
                + ["malignant" if t == 0 else "benign"]
                for row, t in zip(ds.data, ds.target)]
        write_csv(path, header, rows)
        feats, labels = data.load_tabular(str(path), schema)
        assert feats.shape == (569, 81)
        assert labels.sum() == int(ds.target.sum())

    def test_diabetes_expands_to_296(self, tmp_path):
        schema = data.load_builtin_schema("diabetes")
        rng = np.random.default_rng(1)
        header = [c.name for c in schema.columns] + ["readmitted"]
        rows = []
        for _ in range(40):
            row = []
            for col in schema.columns:
                if col.kind == "categorical":
                    row.append(rng.choice(col.categories))
                else:
                    row.append(round(float(rng.uniform(0, 50)), 2))
            row.append(rng.choice(["NO", "<30", ">30"]))
            rows.append(row)
        path = tmp_path / "diabetes.csv"
        write_csv(path, header, rows)
        feats, labels = data.load_tabular(str(path), schema)
        assert feats.shape == (40, 296)
        # 291 one-hot bits from the categorical groups, 5 numeric-derived
        binary_width = sum(c.feature_count() for c in schema.columns
                           if c.kind == "categorical")
        assert binary_width == 291

    def test_declared_count_mismatch_rejected(self):
        with pytest.raises(InvariantError, match="expand"):
            data.TabularSchema(
                name="bad", label_column="y", label_values=("a", "b"),
                columns=(data.ColumnSpec(name="x", kind="binary"),),
                expected_features=2,
            ).validate()


class TestLoader:
    def test_one_hot_rows_sum_to_one(self, adult_schema, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "adult.csv"
        write_csv(path, ADULT_HEADER, synth_adult_rows(rng, 30))
        feats, _ = data.load_tabular(str(path), adult_schema)
        # categorical groups: marital (cols 6:9), sex (9:11), workclass (15:18)
        for lo, hi in ((6, 9), (9, 11), (15, 18)):
            assert (feats[:, lo:hi].sum(axis=1) == 1).all()

    def test_unknown_category_names_row_and_column(self, adult_schema, tmp_path):
        rng = np.random.default_rng(3)
        rows = synth_adult_rows(rng, 5)
        rows[3][3] = "Unknown"
        path = tmp_path / "adult.csv"
        write_csv(path, ADULT_HEADER, rows)
        with pytest.raises(ParseError, match="row 3.*sex"):
            data.load_tabular(str(path), adult_schema)

    def test_bad_numeric_cell(self, adult_schema, tmp_path):
        rng = np.random.default_rng(4)
        rows = synth_adult_rows(rng, 4)
        rows[2][0] = "elderly"
        path = tmp_path / "adult.csv"
        write_csv(path, ADULT_HEADER, rows)
        with pytest.raises(ParseError, match="row 2.*age"):
            data.load_tabular(str(path), adult_schema)

    def test_missing_column_listed(self, adult_schema, tmp_path):
        path = tmp_path / "short.csv"
        write_csv(path, ["age"], [[30]])
        with pytest.raises(ParseError, match="missing columns"):
            data.load_tabular(str(path), adult_schema)

    def test_quantile_fit_uses_training_rows_only(self, tmp_path):
        schema = data.TabularSchema(
            name="t", label_column="y", label_values=("0", "1"),
            columns=(data.ColumnSpec(name="x", kind="numeric", quantiles=1),),
            expected_features=1,
        )
        header = ["x", "y"]
        rows = [[i, "0"] for i in range(10)]
        path = tmp_path / "t.csv"
        write_csv(path, header, rows)
        all_fit, _ = data.load_tabular(str(path), schema)
        train_fit, _ = data.load_tabular(str(path), schema, fit_rows=range(5))
        # median over all rows is 4.5; over the first five rows it is 2
        assert all_fit[:, 0].sum() == 5
        assert train_fit[:, 0].sum() == 8

    def test_missing_numeric_imputed_with_train_median(self, tmp_path):
        schema = data.TabularSchema(
            name="t", label_column="y", label_values=("0", "1"),
            columns=(data.ColumnSpec(name="x", kind="numeric", thresholds=(5.0,)),),
            expected_features=1,
        )
        path = tmp_path / "t.csv"
        write_csv(path, ["x", "y"], [[10, "0"], [10, "0"], ["?", "1"], [0, "1"]])
        feats, _ = data.load_tabular(str(path), schema, fit_rows=[0, 1])
        assert feats[2, 0] == 1  # imputed with the training median, 10


class TestSplits:
    def test_fold_sizes(self):
        splits = data.make_splits(10, data.SplitPlan(seed=1))
        for train, test in splits:
            assert len(test) == 2
            assert len(train) == 8
            assert not set(train) & set(test)

    def test_folds_partition_indices(self):
        splits = data.make_splits(103, data.SplitPlan(seed=2))
        all_test = np.concatenate([test for _, test in splits])
        assert sorted(all_test.tolist()) == list(range(103))
        for _, test in splits:
            assert abs(len(test) - 103 * 0.2) <= 1

    def test_same_seed_same_folds(self):
        a = data.make_splits(50, data.SplitPlan(seed=3))
        b = data.make_splits(50, data.SplitPlan(seed=3))
        for (ta, sa), (tb, sb) in zip(a, b):
            assert np.array_equal(ta, tb) and np.array_equal(sa, sb)

    def test_different_seeds_differ(self):
        a = data.make_splits(100, data.SplitPlan(seed=4))
        b = data.make_splits(100, data.SplitPlan(seed=5))
        assert any(not np.array_equal(sa, sb) for (_, sa), (_, sb) in zip(a, b))


class TestAccuracy:
    def _constant_label_circuit(self, width):
        # weights favor class 0 regardless of input
        m = ModelSpec(input_shape=width, front_end=precomputed_front_end(),
                      heads=(HeadSpec(kind="identity"),),
                      linear=LinearLayerSpec(
                          weights=np.vstack([np.ones(width), -np.ones(width)])))
        return cm.compile_model(m)

    def test_constant_circuit_on_balanced_data_is_half(self):
        rng = np.random.default_rng(6)
        feats = rng.integers(0, 2, (40, 8), dtype=np.int64)
        feats[:, 0] = 1  # guarantee a positive score for class 0
        labels = np.array([0, 1] * 20)
        c = self._constant_label_circuit(8)
        acc = data.accuracy(c, feats, labels)
        assert acc == pytest.approx(0.5)

    def test_memorizing_lookup_is_perfect(self):
        # hand-built block whose four channels are one-hot detectors of the
        # four 2-bit patterns; the linear layer then reads off any labeling
        from ttc.ttir import BatchNormSpec, ConvLayerSpec, LTTBlockSpec

        def bn(ch, beta):
            return BatchNormSpec(gamma=np.ones(ch), beta=np.asarray(beta, dtype=float),
                                 running_mean=np.zeros(ch), running_var=np.ones(ch),
                                 epsilon=0.0)

        # hidden: h1 = x0 + x1, h2 = x0 - x1 puts the patterns in general
        # position; each detector is a shifted half-plane firing on one point
        block = LTTBlockSpec(
            layer1=ConvLayerSpec(1, 2, (2, 1), (1, 1),
                                 weights=np.array([[[[1.0], [1.0]]],
                                                   [[[1.0], [-1.0]]]]), dims=1),
            bn1=bn(2, [0.0, 0.0]),
            layer2=ConvLayerSpec(2, 4, (1, 1), (1, 1),
                                 weights=np.array([[-1.0, 0.0], [0.0, 1.0],
                                                   [0.0, -1.0], [1.0, 0.0]]
                                                  ).reshape(4, 2, 1, 1), dims=1),
            bn2=bn(4, [0.5, -0.5, -0.5, -1.6]),
        )
        labels = np.array([0, 1, 1, 0])  # XOR of the two bits
        # channel order is (00, 10, 01, 11); feature p fires on pattern p only
        w = np.array([[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0]])
        model = ModelSpec(input_shape=2, front_end=precomputed_front_end(),
                          heads=(HeadSpec(kind="ltt", block=block),),
                          linear=LinearLayerSpec(weights=w), name="memo")
        model.validate()
        circ = cm.compile_model(model)
        feats = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)
        assert data.accuracy(circ, feats, labels) == 1.0

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(7)
        feats = rng.integers(0, 2, (30, 8), dtype=np.int64)
        labels = rng.integers(0, 2, 30)
        c = self._constant_label_circuit(8)
        perm = rng.permutation(30)
        assert data.accuracy(c, feats, labels) == data.accuracy(
            c, feats[perm], labels[perm])

    def test_evaluate_accuracy_folds(self):
        rng = np.random.default_rng(8)
        feats = rng.integers(0, 2, (50, 8), dtype=np.int64)
        labels = rng.integers(0, 2, 50)
        c = self._constant_label_circuit(8)
        splits = data.make_splits(50, data.SplitPlan(seed=9))
        mean, std, per_fold = data.evaluate_accuracy(c, feats, labels, splits)
        assert len(per_fold) == 5
        assert mean == pytest.approx(np.mean(per_fold))

    def test_width_mismatch(self):
        c = self._constant_label_circuit(8)
        with pytest.raises(ShapeError):
            data.accuracy(c, np.zeros((4, 7), dtype=np.int64), np.zeros(4, dtype=int))

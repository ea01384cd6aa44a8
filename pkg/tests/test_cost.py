import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttc import circuit as cm
from ttc import cost, engine
from ttc.errors import SchemaError
from ttc.presets import adult_model, mnist_full_pr_model, mnist_vgg1b_tt_model

# Frozen copy of the published per-call timings (oracle for the config file).
PUBLISHED_MS = {1: 49.3, 2: 57.6, 3: 57.3, 4: 74.6, 5: 75.2, 6: 169.9, 7: 353.4,
                8: 774.4, 9: 2979.5, 10: 2756, 11: 3023.2, 12: 3732.5, 13: 3956.5,
                14: 4030.1, 15: 4009.4, 16: 4499.5}


def make_trace(counts, max_bw=None, patches=0):
    return engine.EvalTrace(lut_calls_by_bitwidth=dict(counts),
                            max_accumulator_value=0,
                            max_bitwidth_touched=max_bw or max(counts, default=1),
                            patches_evaluated=patches)


class TestTimingTable:
    def test_matches_published_values_exactly(self):
        table = cost.default_timing_table()
        for n, ms in PUBLISHED_MS.items():
            assert table[n] == ms

    def test_spot_values(self):
        table = cost.default_timing_table()
        assert table[1] == 49.3
        assert table[6] == 169.9
        assert table[16] == 4499.5

    def test_missing_entry_rejected(self):
        partial = {n: float(n) for n in range(1, 16)}
        with pytest.raises(SchemaError):
            cost.LutTimingTable(ms_per_call=partial)

    def test_out_of_range_lookup_rejected(self):
        with pytest.raises(SchemaError):
            cost.default_timing_table()[17]


class TestEstimateTime:
    def test_mnist_single_core(self):
        report = cost.estimate_time(make_trace({6: 1600}), cores=1)
        assert report.est_seconds == pytest.approx(1600 * 169.9 / 1000, rel=1e-12)
        assert report.est_seconds == pytest.approx(271.84, abs=1e-9)

    def test_mnist_four_cores_vs_measured(self):
        report = cost.estimate_time(make_trace({6: 1600}), cores=4)
        assert report.est_seconds == pytest.approx(67.96, abs=1e-9)
        # the measured deployment took 83.6 s; the estimate is a lower bound
        assert report.lower_bound
        assert report.est_seconds < 83.6 < 2 * report.est_seconds

    def test_empty_trace_is_free(self):
        report = cost.estimate_time(make_trace({}, max_bw=4), cores=2)
        assert report.est_seconds == 0.0

    def test_uniform_rule_costs_small_calls_at_max(self):
        report = cost.estimate_time(make_trace({4: 10, 6: 1}), cores=1)
        assert report.uniform_bitwidth_applied == 6
        assert report.est_seconds == pytest.approx(11 * 169.9 / 1000)
        assert report.call_costs[4] == pytest.approx(10 * 169.9 / 1000)

    def test_invariant_total_formula(self):
        trace = make_trace({4: 7, 5: 3})
        for cores in (1, 2, 3, 8):
            report = cost.estimate_time(trace, cores=cores)
            table = cost.default_timing_table()
            assert report.est_seconds == pytest.approx(
                10 * table[trace.max_bitwidth_touched] / 1000 / cores)

    @given(st.integers(min_value=1, max_value=16), st.integers(min_value=1, max_value=500))
    @settings(max_examples=40)
    def test_core_scaling_is_exact(self, cores, calls):
        one = cost.estimate_time(make_trace({4: calls}), cores=1)
        many = cost.estimate_time(make_trace({4: calls}), cores=cores)
        assert many.est_seconds == pytest.approx(one.est_seconds / cores, rel=1e-12)

    def test_worst_bitwidth_monotonicity_with_increasing_table(self):
        # the rule itself is monotone whenever the timing table is; the
        # published table has measurement noise between 9 and 15 bits
        table = cost.LutTimingTable(ms_per_call={n: 10.0 * n for n in range(1, 17)})
        rng = np.random.default_rng(0)
        for _ in range(50):
            base_bw = int(rng.integers(1, 15))
            count = int(rng.integers(1, 100))
            bigger = int(rng.integers(base_bw + 1, 17))
            before = cost.estimate_time(make_trace({base_bw: count}), table=table)
            after = cost.estimate_time(
                make_trace({base_bw: count, bigger: 1}, max_bw=bigger), table=table)
            assert after.est_seconds >= before.est_seconds
            assert after.ms_per_call > before.ms_per_call

    def test_monotonicity_holds_on_published_monotone_span(self):
        for low, high in ((4, 6), (6, 8), (8, 16)):
            before = cost.estimate_time(make_trace({low: 20}))
            after = cost.estimate_time(make_trace({low: 20, high: 1}, max_bw=high))
            assert after.est_seconds > before.est_seconds


class TestSizes:
    def test_adult_reproduces_measured_row(self):
        c = cm.compile_model(adult_model())
        sz = cost.estimate_sizes(c)
        assert sz.input_bytes == pytest.approx(4.3e6, rel=0.25)
        assert sz.output_bytes == pytest.approx(1.9e6, rel=0.25)
        assert sz.server_ram_bytes == pytest.approx(3.4e6, rel=0.25)

    def test_mnist_split_reproduces_measured_row(self):
        c = cm.compile_model(mnist_vgg1b_tt_model())
        sz = cost.estimate_sizes(c)
        assert sz.input_bytes == pytest.approx(9e6, rel=0.25)
        assert sz.output_bytes == pytest.approx(30e6, rel=0.25)
        assert sz.server_ram_bytes == pytest.approx(31.45e6, rel=0.25)
        assert sz.public_key_bytes == pytest.approx(101.9e6, rel=0.25)

    def test_zero_dims_estimate_zero(self):
        calib = cost.load_size_calibration()
        assert calib.input_bit_bytes(5) * 0 == 0.0
        assert calib.output_value_bytes(5) * 0 == 0.0

    def test_comm_totals(self):
        c = cm.compile_model(adult_model())
        sz = cost.estimate_sizes(c)
        assert sz.comm_with_key == sz.input_bytes + sz.output_bytes + sz.public_key_bytes
        assert sz.comm_without_key == sz.input_bytes + sz.output_bytes

    def test_nearest_bitwidth_fallback(self):
        calib = cost.load_size_calibration()
        # 7-bit circuits fall back to the closest calibrated entry (6)
        assert calib.input_bit_bytes(7) == calib.input_bit_bytes(6)


def test_full_report_includes_sizes_and_describes():
    c = cm.compile_model(mnist_full_pr_model())
    _, trace = engine.eval_simulated(c, np.zeros(400, dtype=int))
    report = cost.full_report(c, trace, cores=4)
    assert report.sizes is not None
    text = report.describe()
    assert "lower bound" in text
    assert "67.96" in text

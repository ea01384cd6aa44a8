import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import random_quant_ints
from ttc import quant
from ttc.errors import DegenerateError, ShapeError
from ttc.ttir import LinearLayerSpec


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


class TestQuantize:
    def test_reference_values(self):
        lin = LinearLayerSpec(weights=np.array([[7.0, -7.0, 0.0, 3.5]]))
        q = quant.quantize_linear(lin)
        assert q.scale == 1.0
        # 3.5 rounds away from zero to 4
        assert q.int_weights.tolist() == [[7, -7, 0, 4]]

    def test_zero_weight_has_all_zero_planes(self):
        lin = LinearLayerSpec(weights=np.array([[5.0, 0.0], [0.0, -1.0]]))
        q = quant.quantize_linear(lin)
        assert not q.planes[:, 0, 1].any()
        assert not q.planes[:, 1, 0].any()

    def test_minus_three_plane_bits(self):
        planes = quant.planes_from_ints(np.array([[-3]]))
        assert planes[:, 0, 0].tolist() == [1, 0, 1, 1]  # 1 + 0 + 4 - 8 = -3

    def test_all_zero_weights_degenerate(self):
        with pytest.raises(DegenerateError):
            quant.quantize_linear(LinearLayerSpec(weights=np.zeros((2, 3))))

    def test_planes_ints_round_trip_all_values(self):
        ints = np.arange(-8, 8).reshape(1, 16).astype(np.int8)
        assert np.array_equal(quant.ints_from_planes(quant.planes_from_ints(ints)), ints)

    def test_quantization_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = rng.normal(0, rng.uniform(0.1, 10), size=(rng.integers(1, 6),
                                                          rng.integers(1, 40)))
            if not np.abs(w).max():
                continue
            q = quant.quantize_linear(LinearLayerSpec(weights=w))
            err = np.abs(w - q.scale * q.int_weights.astype(float))
            assert err.max() <= q.scale / 2 + np.finfo(float).eps * q.scale

    def test_rounding_matches_half_away_oracle(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(-3, 3, size=(4, 25))
        w[0, 0] = 3.0  # pin the scale so half-integer ratios appear exactly
        q = quant.quantize_linear(LinearLayerSpec(weights=w))
        expect = np.clip(_round_half_away(w / q.scale), -8, 7)
        assert np.array_equal(q.int_weights, expect.astype(np.int8))


class TestRecombine:
    def test_all_zero_partials(self):
        out = quant.recombine(np.zeros((4, 3), dtype=np.int64), scale=0.7)
        assert np.array_equal(out, np.zeros(3))

    def test_single_feature_minus_three(self):
        # one active feature with integer weight -3 and scale 0.5
        partials = np.array([[1], [0], [1], [1]], dtype=np.int64)
        out = quant.recombine(partials, scale=0.5)
        assert out[0] == pytest.approx(-1.5)
        assert out[0] == 0.5 * (1 + 0 + 4 - 8)

    def test_matches_integer_dot_product_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            ints = random_quant_ints(rng, 5, 8)
            planes = quant.planes_from_ints(ints)
            q = quant.QuantLinear(planes=planes, int_weights=ints,
                                  scale=float(rng.uniform(0.01, 2)))
            bits = rng.integers(0, 2, 8)
            partials = quant.plane_partials(q, bits)
            got = quant.recombine(partials, q.scale)
            # brute-force oracle: plain integer matrix-vector product
            expect = q.scale * (ints.astype(np.int64) @ bits.astype(np.int64))
            assert np.array_equal(got, expect)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            quant.recombine(np.zeros((3, 2), dtype=np.int64), scale=1.0)

    @given(st.integers(min_value=-8, max_value=7), st.booleans())
    @settings(max_examples=64)
    def test_single_weight_exactness(self, value, bit):
        ints = np.array([[value]], dtype=np.int8)
        q = quant.QuantLinear(planes=quant.planes_from_ints(ints), int_weights=ints,
                              scale=1.0)
        partials = quant.plane_partials(q, [int(bit)])
        assert quant.recombine(partials, 1.0)[0] == value * int(bit)


def test_dequantized_score_gap_bounded_by_scale():
    # scores from the quantized layer sit within scale * features / 2 of float
    rng = np.random.default_rng(3)
    for _ in range(20):
        w = rng.normal(0, 1, size=(3, 30))
        q = quant.quantize_linear(LinearLayerSpec(weights=w))
        bits = rng.integers(0, 2, 30)
        float_scores = w @ bits
        deq = quant.dequantized_scores(q, bits)
        assert np.all(np.abs(float_scores - deq) <= q.scale * 30 / 2 + 1e-9)

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gen import random_stable_block
from ttc import ltt
from ttc.errors import InvariantError, ShapeError
from ttc.presets import and_gate_block, random_block
from ttc.ttir import BatchNormSpec, ConvLayerSpec, LTTBlockSpec


def make_bn(ch, gamma=1.0, beta=0.0, mean=0.0, var=1.0, eps=0.0):
    return BatchNormSpec(gamma=np.full(ch, gamma), beta=np.full(ch, beta),
                         running_mean=np.full(ch, mean), running_var=np.full(ch, var),
                         epsilon=eps)


def make_block(w1, w2, bn2_beta=0.0, bn2_gamma=1.0, kernel=(2, 1)):
    """1-channel 1-D block with identity bn1 and a shifted bn2."""
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    return LTTBlockSpec(
        layer1=ConvLayerSpec(1, w1.shape[0], kernel, (1, 1), weights=w1, dims=1),
        bn1=make_bn(w1.shape[0]),
        layer2=ConvLayerSpec(w1.shape[0], w2.shape[0], (1, 1), (1, 1), weights=w2, dims=1),
        bn2=make_bn(w2.shape[0], gamma=bn2_gamma, beta=bn2_beta),
    )


class TestScalarOps:
    def test_selu_zero(self):
        assert ltt.selu(0.0) == 0.0

    def test_selu_one_is_lambda(self):
        assert ltt.selu(1.0) == pytest.approx(1.0507009873554805, abs=1e-15)

    def test_selu_saturates_to_minus_lambda_alpha(self):
        # limit of the negative branch, checked by direct evaluation
        expect = ltt.SELU_LAMBDA * ltt.SELU_ALPHA * math.expm1(-20.0)
        assert ltt.selu(-20.0) == expect
        assert ltt.selu(-20.0) == pytest.approx(-1.7580993408473766, abs=1e-8)

    def test_bin_act_values(self):
        assert ltt.bin_act(3.2) == 1
        assert ltt.bin_act(-0.001) == 0
        assert ltt.bin_act(0.0) == 1  # declared tie rule: sgn(0) = +1

    @given(st.floats(allow_nan=False, allow_infinity=False, width=64))
    def test_bin_act_is_a_bit(self, x):
        assert ltt.bin_act(x) in (0, 1)

    def test_bin_act_on_bits_with_zero_threshold_is_constant_one(self):
        assert ltt.bin_act(0) == 1 and ltt.bin_act(1) == 1


class TestForward:
    def test_zero_weights_negative_beta_gives_constant_zero(self):
        block = make_block(np.zeros((1, 1, 2, 1)), np.zeros((1, 1, 1, 1)), bn2_beta=-1.0)
        for k in range(4):
            assert ltt.ltt_forward(block, [(k >> 0) & 1, (k >> 1) & 1]) == [0]

    def test_zero_weights_nonneg_beta_gives_constant_one(self):
        block = make_block(np.zeros((1, 1, 2, 1)), np.zeros((1, 1, 1, 1)), bn2_beta=0.0)
        for k in range(4):
            assert ltt.ltt_forward(block, [(k >> 0) & 1, (k >> 1) & 1]) == [1]

    def test_and_gate_on_all_inputs(self):
        block = and_gate_block()
        got = [ltt.ltt_forward(block, [(k >> 0) & 1, (k >> 1) & 1])[0] for k in range(4)]
        assert got == [0, 0, 0, 1]

    def test_wrong_input_length_raises(self):
        with pytest.raises(ShapeError):
            ltt.ltt_forward(and_gate_block(), [1, 0, 1])


class TestReceptiveField:
    def test_two_layer_composition_example(self):
        # (1, 4, 4, 2) then (4, 1, 2, 2), 1-D: composed field is 6 input bits
        l1 = ConvLayerSpec(1, 4, (4, 1), (2, 1), weights=np.zeros((4, 1, 4, 1)), dims=1)
        l2 = ConvLayerSpec(4, 1, (2, 1), (2, 1), weights=np.zeros((1, 4, 2, 1)), dims=1)
        assert ltt.composed_input_bits(l1, l2) == 6
        block = LTTBlockSpec(layer1=l1, bn1=make_bn(4), layer2=l2, bn2=make_bn(1))
        geom = ltt.receptive_field(block, (1, 10, 1))
        assert geom.n == 6
        assert geom.patch_stride == (4, 1)

    def test_adult_geometry(self):
        rng = np.random.default_rng(0)
        block = random_block(rng, 1, (5, 1), (4, 1), 8, dims=1)
        geom = ltt.receptive_field(block, 18)
        assert geom.n == 5
        assert geom.patch_count == (18 - 5) // 4 + 1 == 4

    def test_kernel_one_field_is_channel_count(self):
        rng = np.random.default_rng(1)
        block = random_block(rng, 3, (1, 1), (1, 1), 3, groups=1)
        geom = ltt.receptive_field(block, (3, 4, 4))
        assert geom.n == 3  # pointwise: per-group channel count

    def test_oversized_field_rejected(self):
        rng = np.random.default_rng(2)
        block = random_block(rng, 1, (17, 1), (1, 1), 2, dims=1)
        with pytest.raises(InvariantError):
            ltt.receptive_field(block, 32)

    def test_slow_field_warns(self):
        rng = np.random.default_rng(3)
        block = random_block(rng, 1, (9, 1), (1, 1), 2, dims=1)
        with pytest.warns(UserWarning):
            ltt.receptive_field(block, 18)

    def test_padding_produces_zero_wires(self):
        rng = np.random.default_rng(4)
        block = random_block(rng, 1, (3, 1), (1, 1), 2, padding=1, dims=1)
        geom = ltt.receptive_field(block, 4)
        assert (geom.wire_map == ltt.ZERO_WIRE).any()
        real = geom.wire_map[geom.wire_map != ltt.ZERO_WIRE]
        assert real.min() >= 0 and real.max() < 4

    def test_patch_coverage_when_stride_le_kernel(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            kh = int(rng.integers(1, 5))
            sh = int(rng.integers(1, kh + 1))
            block = random_block(rng, 1, (kh, 1), (sh, 1), 2, dims=1)
            h = int(rng.integers(kh, 12))
            geom = ltt.receptive_field(block, h)
            covered = set(geom.wire_map[geom.wire_map != ltt.ZERO_WIRE].tolist())
            last = (h - kh) // sh * sh + kh  # bits beyond the last window are dropped
            assert covered == set(range(last))


class TestExtraction:
    def test_and_gate_table(self):
        table = ltt.extract_truth_table(and_gate_block(), 0)
        assert table.to_bitstring() == "0001"

    def test_constant_zero_block(self):
        block = make_block(np.zeros((1, 1, 2, 1)), np.zeros((1, 1, 1, 1)), bn2_beta=-2.0)
        table = ltt.extract_truth_table(block, 0)
        assert not table.bits.any()
        assert len(table.bits) == 4

    def test_table_length_is_power_of_two(self):
        rng = np.random.default_rng(6)
        for n in (2, 3, 5):
            block = random_stable_block(rng, n)
            table = ltt.extract_truth_table(block, 0)
            assert table.n == n
            assert table.bits.shape == (1 << n,)

    def test_extraction_matches_forward_exhaustively(self):
        rng = np.random.default_rng(7)
        for _ in range(8):
            n = int(rng.choice([3, 4, 5, 6]))
            block = random_stable_block(rng, n)
            o2_pg = block.layer2.out_channels // block.layer1.groups
            for ch in range(block.layer2.out_channels):
                table = ltt.extract_truth_table(block, ch)
                group = ch // o2_pg
                for k in range(1 << n):
                    bits = [(k >> i) & 1 for i in range(n)]
                    fwd = ltt.ltt_forward(block, bits, group=group)[ch % o2_pg]
                    assert fwd == table.bits[k]

    def test_extraction_is_deterministic(self):
        rng = np.random.default_rng(8)
        block = random_stable_block(rng, 5)
        a = ltt.extract_all_tables(block)
        b = ltt.extract_all_tables(block)
        assert [t.to_bitstring() for t in a] == [t.to_bitstring() for t in b]

    def test_unstable_flag_set_when_preactivation_hits_zero(self):
        # beta exactly cancels: pre-binarization value is 0 for every input
        block = make_block(np.zeros((1, 1, 2, 1)), np.zeros((1, 1, 1, 1)), bn2_beta=0.0)
        table = ltt.extract_truth_table(block, 0)
        assert table.unstable

    def test_out_channel_range_checked(self):
        with pytest.raises(ShapeError):
            ltt.extract_truth_table(and_gate_block(), 1)


class TestTruthTable:
    def test_bitstring_round_trip(self):
        rng = np.random.default_rng(9)
        bits = rng.integers(0, 2, 16).astype(np.uint8)
        table = ltt.TruthTable(n=4, bits=bits)
        again = ltt.TruthTable.from_bitstring(table.to_bitstring())
        assert np.array_equal(again.bits, bits)

    def test_lookup_uses_wire_zero_as_lsb(self):
        table = ltt.TruthTable(n=2, bits=np.array([0, 1, 0, 0], dtype=np.uint8))
        assert table.lookup([1, 0]) == 1  # wire 0 set -> index 1
        assert table.lookup([0, 1]) == 0  # wire 1 set -> index 2

    def test_bad_length_rejected(self):
        with pytest.raises(InvariantError):
            ltt.TruthTable(n=3, bits=np.zeros(7, dtype=np.uint8))

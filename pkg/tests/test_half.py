import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bwnsim.half import as_half_array, binary_mac_step, half_bits, half_from_bits, relu, round_to_half

finite_half = st.integers(0, 0xFFFF).map(lambda b: half_from_bits(b)[()]).filter(np.isfinite)


@given(finite_half, finite_half, st.sampled_from([1, -1]))
def test_mac_step_is_correctly_rounded(v, x, w):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        got = binary_mac_step(v, x, w)
    exact = float(v) + (float(x) if w > 0 else -float(x))
    assert half_bits(got) == half_bits(np.float16(round_to_half(exact))) or (exact == 0 and got == 0)


@given(finite_half)
def test_bits_roundtrip(v):
    assert half_from_bits(half_bits(v))[()] == v or np.isnan(v)


def test_round_to_half_matches_struct_and_saturates():
    assert round_to_half(1.0 + 2 ** -11) == 1.0
    assert round_to_half(1.0 + 3 * 2 ** -11) == 1.0 + 2 ** -9
    assert round_to_half(1e6) == float("inf")
    assert round_to_half(-1e6) == float("-inf")
    assert round_to_half(0.1) == struct.unpack("<e", struct.pack("<e", 0.1))[0]


def test_overflow_warns():
    with pytest.warns(RuntimeWarning):
        out = binary_mac_step(65504.0, 65504.0, 1)
    assert np.isinf(out)


def test_relu_maps_negative_zero_to_positive_zero():
    out = relu(np.array([-0.0, -1.0, 2.0], dtype=np.float16))
    assert list(half_bits(out)) == [0, 0, half_bits(np.float16(2.0))]


def test_nan_rejected():
    with pytest.raises(ValueError):
        as_half_array([1.0, float("nan")])

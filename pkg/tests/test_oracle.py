import numpy as np
from hypothesis import given, settings, strategies as st

from bwnsim.network import LayerDescriptor
from bwnsim.oracle import conv_reference, conv_reference_scalar
from conftest import random_layer_params


@st.composite
def small_layer(draw):
    n_in = draw(st.integers(1, 4))
    groups = draw(st.sampled_from([1, n_in]))
    n_out = draw(st.integers(1, 3)) * groups
    k = draw(st.sampled_from([1, 3]))
    layer = LayerDescriptor(n_out, kh=k, kw=k, stride=draw(st.sampled_from([1, 2])), groups=groups,
                            pad=draw(st.sampled_from(["same", "none"])) if k == 3 else "same",
                            scale=draw(st.booleans()), bias=draw(st.booleans()), relu=draw(st.booleans()))
    hw = (draw(st.integers(3, 6)), draw(st.integers(3, 6)))
    return layer, n_in, hw, draw(st.integers(0, 2**32 - 1))


@settings(max_examples=40)
@given(small_layer())
def test_vectorized_oracle_equals_scalar_loops(case):
    layer, n_in, (h, w), seed = case
    rng = np.random.default_rng(seed)
    x = rng.uniform(-4, 4, (n_in, h, w)).astype(np.float16)
    p = random_layer_params(rng, layer, n_in)
    a = conv_reference(x, layer, p, cin_chunk=None)
    b = conv_reference_scalar(x, layer, p)
    assert np.array_equal(a.view(np.uint16), b.view(np.uint16))


def test_float64_mode_close_to_binary16():
    rng = np.random.default_rng(1)
    layer = LayerDescriptor(8, scale=True, bias=True)
    x = rng.uniform(-1, 1, (16, 6, 6)).astype(np.float16)
    p = random_layer_params(rng, layer, 16)
    a = conv_reference(x, layer, p).astype(np.float64)
    b = conv_reference(x, layer, p, mode="float64").astype(np.float64)
    assert np.max(np.abs(a - b)) < 0.1


def test_chunks_sum_in_order():
    # one input channel per chunk: total = ((c0) + c1) + c2 in binary16
    rng = np.random.default_rng(2)
    layer = LayerDescriptor(1, kh=1, kw=1)
    x = np.array([[[1000.0]], [[0.3]], [[0.3]]], dtype=np.float16)
    p = random_layer_params(rng, layer, 3)
    got = conv_reference(x, layer, p, cin_chunk=1)
    s = np.where(p.kernel.bits[0, :, 0, 0], 1, -1) * x[:, 0, 0].astype(np.float64)
    want = np.float16(np.float16(np.float16(s[1]) + np.float16(s[0])) + np.float16(s[2]))
    assert got[0, 0, 0] == want


def test_relu_output_never_negative_zero():
    layer = LayerDescriptor(1, kh=1, kw=1, relu=True)
    x = np.zeros((1, 2, 2), dtype=np.float16)
    rng = np.random.default_rng(0)
    out = conv_reference(x, layer, random_layer_params(rng, layer, 1))
    assert not np.signbit(out).any()

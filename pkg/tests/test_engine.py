import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwnsim.engine import EVENT_KINDS, EngineError, layer_cycles, run_conv_layer, run_network
from bwnsim.network import ChipConfig, FeatureMap, LayerDescriptor, NetworkGraph, random_params
from bwnsim.oracle import conv_reference, network_reference
from conftest import random_layer_params


@st.composite
def layer_case(draw):
    n_in = draw(st.integers(1, 20))
    groups = draw(st.sampled_from([1, n_in]))
    n_out = draw(st.integers(1, 20)) if groups == 1 else n_in * draw(st.integers(1, 2))
    k = draw(st.sampled_from([1, 3]))
    layer = LayerDescriptor(n_out, kh=k, kw=k, stride=draw(st.sampled_from([1, 2])), groups=groups,
                            scale=draw(st.booleans()), bias=draw(st.booleans()), relu=draw(st.booleans()))
    return layer, n_in, draw(st.integers(1, 16)), draw(st.integers(1, 16)), draw(st.booleans()), draw(st.integers(0, 2**32))


@settings(max_examples=60)
@given(layer_case())
def test_engine_matches_oracle(case):
    layer, n_in, h, w, with_bypass, seed = case
    rng = np.random.default_rng(seed)
    fm = FeatureMap(rng.uniform(-2, 2, (n_in, h, w)))
    p = random_layer_params(rng, layer, n_in)
    ho, wo = layer.output_hw(h, w)
    byp = FeatureMap(rng.uniform(-1, 1, (layer.n_out, ho, wo))) if with_bypass else None
    got = run_conv_layer(fm, layer, p, bypass=byp)
    want = conv_reference(fm.data, layer, p, None if byp is None else byp.data)
    assert got == FeatureMap(want)


def test_chunked_input_channels_match_oracle():
    cfg = ChipConfig(wbuf_bits=16 * 9 * 4)  # 4 input channels per chunk
    net = NetworkGraph((10, 6, 6), (LayerDescriptor(5, scale=True, bias=True, relu=True),
                                    LayerDescriptor(5, bypass=0)))
    rng = np.random.default_rng(5)
    params = random_params(net, rng)
    fm = FeatureMap(rng.uniform(-1, 1, (10, 6, 6)))
    out, _ = run_network(net, params, fm, cfg)
    assert out == FeatureMap(network_reference(net, params, fm.data, cfg=cfg))


def test_trace_events_and_cycles():
    net = NetworkGraph((2, 3, 3), (LayerDescriptor(2, scale=True),))
    rng = np.random.default_rng(0)
    params = random_params(net, rng)
    _, trace = run_network(net, params, FeatureMap(rng.uniform(-1, 1, (2, 3, 3))), trace=True)
    assert {e.kind for e in trace} <= set(EVENT_KINDS)
    conv, epi = layer_cycles(net.layers[0], 2, 3, 3, ChipConfig())
    assert conv == 9 * 2 and epi == 2
    assert max(e.cycle for e in trace) < conv + epi
    assert sum(e.kind == "stream-consume" for e in trace) >= 1


def test_identity_network_passes_input_through():
    fm = FeatureMap(np.random.default_rng(0).uniform(-1, 1, (2, 3, 3)))
    out, _ = run_network(NetworkGraph((2, 3, 3)), [], fm)
    assert out == fm


def test_bypass_source_must_be_resident():
    net = NetworkGraph((2, 4, 4), (LayerDescriptor(2), LayerDescriptor(2, bypass=0)))
    params = random_params(net, np.random.default_rng(0))
    from bwnsim.engine import Engine
    eng = Engine(net, params)
    eng.load_input(FeatureMap(np.zeros((2, 4, 4))))
    eng.step()
    eng.state.release([eng.fm_seg[0]])
    with pytest.raises(EngineError) as exc:
        eng.step()
    assert exc.value.code == "bypass-source-missing"

import math

import pytest
from hypothesis import given, strategies as st

from bwnsim.mesh import MeshConfig
from bwnsim.network import ChipConfig, LayerDescriptor, NetworkGraph, weight_bits
from bwnsim.perf import (OPERATING_POINTS, OperatingPoint, conv_cycles, elementwise_cycles, energy,
                         io_bits_fm_stationary, io_bits_weight_stationary, network_cycles, sweep)
from bwnsim.zoo import load_fixture, resnet34_body


def test_conv_cycle_examples():
    assert conv_cycles(LayerDescriptor(64), 64, 56, 56) == 147_456
    assert conv_cycles(LayerDescriptor(16, kh=1, kw=1), 16, 7, 7) == 16


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 30), st.integers(1, 30), st.sampled_from([1, 3]))
def test_conv_cycles_monotone_and_linear_in_n_in(n_out, n_in, h, w, k):
    layer = LayerDescriptor(n_out, kh=k, kw=k)
    c = conv_cycles(layer, n_in, h, w)
    assert conv_cycles(layer, 2 * n_in, h, w) == 2 * c
    assert conv_cycles(layer, n_in, h + 1, w) >= c
    assert conv_cycles(layer, n_in, h, w + 1) >= c
    assert conv_cycles(LayerDescriptor(n_out + 1, kh=k, kw=k), n_in, h, w) >= c


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 8), st.sampled_from([1, 3]))
def test_full_grid_without_epilogue_is_full_utilization(a, b, c, n_in, k):
    net = NetworkGraph((n_in, 7 * a, 7 * b), (LayerDescriptor(16 * c, kh=k, kw=k),))
    assert network_cycles(net).utilization == 1.0


def test_epilogue_cycles():
    assert elementwise_cycles(LayerDescriptor(8), 8, 14, 14) == 0
    assert elementwise_cycles(LayerDescriptor(8, scale=True, bias=True, bypass=-1), 8, 14, 14) == 3 * 8 * 4


def test_resnet34_table_rows():
    rep = network_cycles(load_fixture("resnet34"))
    assert rep.conv_cycles == 4_521_984
    bnorm = sum(elementwise_cycles(LayerDescriptor(s.n_out, scale=True), s.n_in, s.h_out, s.w_out)
                for s in load_fixture("resnet34").shapes())
    assert bnorm == 59_904


def test_io_fm_stationary_ignores_intermediates():
    a = NetworkGraph((4, 16, 16), (LayerDescriptor(4), LayerDescriptor(4)))
    b = NetworkGraph((4, 16, 16), (LayerDescriptor(64), LayerDescriptor(4)))
    ia, ib = io_bits_fm_stationary(a), io_bits_fm_stationary(b)
    assert (ia.input_fm, ia.output_fm, ia.halo) == (ib.input_fm, ib.output_fm, 0)


def test_empty_network_io_and_energy():
    net = NetworkGraph((2, 4, 4))
    io = io_bits_fm_stationary(net)
    assert io.weights == 0 and io.input_fm == io.output_fm == 2 * 16 * 16
    rep = energy(net, OPERATING_POINTS["0.5V"])
    assert rep.total_energy == 0


def test_single_layer_weight_stationary_has_no_intermediates():
    net = NetworkGraph((4, 8, 8), (LayerDescriptor(4),))
    ws, fs = io_bits_weight_stationary(net), io_bits_fm_stationary(net)
    assert ws.total == fs.total == fs.input_fm + fs.output_fm + weight_bits(net)


def test_fm_stationary_beats_weight_stationary():
    for res in (224, 448, 672):
        net = resnet34_body(res)
        k = res // 224
        assert io_bits_fm_stationary(net, MeshConfig(k, k)).total < io_bits_weight_stationary(net).total


def test_energy_formula():
    op = OPERATING_POINTS["0.65V"]
    rep = energy(load_fixture("resnet34"), op)
    assert rep.core_energy == rep.cycles / op.frequency * op.power
    assert rep.io_energy == pytest.approx(21e-12 * rep.io_bits.total)
    assert math.isclose(rep.fps, op.frequency / rep.cycles)
    with pytest.raises(ValueError):
        OperatingPoint("bad", 0.5, 0, 1)


def test_sweep_grows_mesh():
    rows = sweep(resnet34_body, [224, 256, 448, 480])
    assert [r.mesh for r in rows] == ["1x1", "2x2", "2x2", "3x3"]
    assert all(r.ratio > 1 for r in rows)

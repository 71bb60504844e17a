import numpy as np
import pytest

from bwnsim.network import (INPUT_ID, BinaryKernelSet, ChipConfig, FeatureMap, LayerDescriptor, NetworkError,
                            NetworkGraph, check_params, count_ops, peak_throughput, random_params,
                            validate_network, weight_bits)
from bwnsim.oracle import mac_count
from bwnsim.zoo import load_fixture


def codes(net):
    return [i.code for i in validate_network(net).issues]


def test_validation_codes():
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, kh=5, kw=5),))) == ["unsupported-kernel"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, stride=3),))) == ["unsupported-stride"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, pad="valid"),))) == ["unsupported-padding"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, groups=2),))) == ["shape-mismatch"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, bypass=0),))) == ["cyclic-bypass"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(4, bypass=INPUT_ID),))) == ["shape-mismatch"]
    assert codes(NetworkGraph((3, 8, 8), (LayerDescriptor(3, bypass=INPUT_ID),))) == []


def test_large_kernel_message_mentions_off_chip():
    issue = validate_network(NetworkGraph((3, 32, 32), (LayerDescriptor(8, kh=7, kw=7),))).issues[0]
    assert "off-chip" in issue.message


def test_shapes_raise_on_invalid():
    with pytest.raises(NetworkError):
        NetworkGraph((3, 8, 8), (LayerDescriptor(4, stride=3),)).shapes()


def test_output_hw():
    assert LayerDescriptor(8, stride=2).output_hw(56, 56) == (28, 28)
    assert LayerDescriptor(8, kh=1, kw=1, stride=2).output_hw(7, 7) == (4, 4)
    assert LayerDescriptor(8, pad="none").output_hw(5, 5) == (3, 3)


def test_feature_map_equality_is_bitwise():
    a = FeatureMap(np.zeros((1, 1, 1)))
    b = FeatureMap(-np.zeros((1, 1, 1)))
    assert a != b
    assert a == FeatureMap(np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 2)))


def test_peak_throughput_default_chip():
    assert peak_throughput(ChipConfig()) == 1568
    assert ChipConfig().cin_chunk(3, 3) == 512


def test_count_ops_matches_loop_count():
    net = NetworkGraph((6, 9, 7), (LayerDescriptor(4, stride=2, scale=True), LayerDescriptor(4, kh=1, kw=1, groups=2),
                                   LayerDescriptor(4, groups=4, bypass=0, bias=True)))
    ops = count_ops(net)
    for layer, s, lo in zip(net.layers, net.shapes(), ops.layers):
        assert lo.conv == 2 * mac_count(layer, s.n_in, s.h_in, s.w_in)
    assert ops.layers[0].scale == 4 * 5 * 4
    assert ops.layers[2].bypass == ops.layers[2].bias == 4 * 5 * 4


def test_resnet34_fixture_totals():
    net = load_fixture("resnet34")
    assert weight_bits(net) == 21_258_240
    assert abs(count_ops(net).conv - 7.09e9) / 7.09e9 < 0.01


def test_check_params_rejects_wrong_kernel():
    net = NetworkGraph((3, 4, 4), (LayerDescriptor(2, scale=True),))
    params = random_params(net, np.random.default_rng(0))
    check_params(net, params)
    bad = [type(params[0])(BinaryKernelSet(np.ones((2, 2, 3, 3))), params[0].scale)]
    with pytest.raises(NetworkError):
        check_params(net, bad)

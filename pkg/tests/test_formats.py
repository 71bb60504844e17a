import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bwnsim.formats import (network_from_dict, network_to_dict, pack_layer_stream, read_feature_map, read_weights,
                            unpack_layer_stream, write_feature_map, write_weights)
from bwnsim.network import BinaryKernelSet, FeatureMap, random_params
from bwnsim.zoo import fixture_names, load_fixture, resnet34_body


@given(st.integers(1, 40), st.integers(1, 40), st.sampled_from([1, 3]), st.integers(1, 32), st.integers(0, 2**32 - 1))
def test_stream_roundtrip(n_out, cpg, k, chunk, seed):
    bits = np.random.default_rng(seed).integers(0, 2, (n_out, cpg, k, k)).astype(bool)
    stream = pack_layer_stream(BinaryKernelSet(bits), 16, chunk)
    assert stream.size == -(-n_out // 16) * 16 * cpg * k * k
    back = unpack_layer_stream(stream, n_out, cpg, k, k, 16, chunk)
    assert np.array_equal(back.bits, bits)


def test_stream_word_order():
    # one tile, one chunk: word (dy, dx, c_in) holds c_out in bit position c_out
    bits = np.zeros((16, 2, 1, 1), dtype=bool)
    bits[3, 1, 0, 0] = True
    stream = pack_layer_stream(BinaryKernelSet(bits), 16, 512).reshape(-1, 16)
    assert stream[1, 3] and stream.sum() == 1


def test_weights_file_roundtrip(tmp_path):
    net = resnet34_body(32)
    params = random_params(net, np.random.default_rng(3))
    write_weights(tmp_path / "w.bin", params)
    assert read_weights(tmp_path / "w.bin") == params
    with open(tmp_path / "w.bin", "ab") as fh:
        fh.write(b"x")
    with pytest.raises(ValueError):
        read_weights(tmp_path / "w.bin")


def test_feature_map_roundtrip(tmp_path):
    fm = FeatureMap(np.random.default_rng(0).normal(size=(3, 5, 7)))
    write_feature_map(tmp_path / "x.fm", fm)
    assert read_feature_map(tmp_path / "x.fm") == fm


@pytest.mark.parametrize("name", fixture_names())
def test_fixture_json_roundtrip(name):
    net = load_fixture(name)
    back, _ = network_from_dict(json.loads(json.dumps(network_to_dict(net))))
    assert back.layers == net.layers and back.input_shape == net.input_shape


def test_explicit_scale_values():
    doc = {"input": [2, 4, 4], "layers": [{"n_out": 2, "kh": 3, "kw": 3, "scale": [0.5, 2.0], "bias": True}]}
    net, values = network_from_dict(doc)
    assert net.layers[0].scale and net.layers[0].bias
    assert list(values[0][0]) == [0.5, 2.0]

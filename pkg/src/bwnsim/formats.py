"""On-disk formats: network JSON, packed weight file, raw feature maps, traces.

Weight stream order for one layer, which is also the order the engine pulls
words from the stream: output-channel tile of C, input-channel chunk that fits
the weight buffer, filter tap (row-major, dy outer), input channel ascending,
then the C output channels of the tile as one word with the lowest channel in
the least significant bit. Bit 1 encodes +1, bit 0 encodes -1. A partial last
tile is padded with zero bits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .half import as_half_array
from .network import (
    BinaryKernelSet,
    FeatureMap,
    LayerDescriptor,
    LayerParams,
    NetworkError,
    NetworkGraph,
)

WEIGHT_MAGIC = b"HBWN"
WEIGHT_VERSION = 1
_LAYER_HEADER = struct.Struct("<IIBBBBI")
_FILE_HEADER = struct.Struct("<4sHHI")
_FM_HEADER = struct.Struct("<III")


# -- weight stream packing -------------------------------------------------

def _chunks(total: int, size: int) -> list[tuple[int, int]]:
    return [(j0, min(j0 + size, total)) for j0 in range(0, total, size)]


def pack_layer_stream(kernel: BinaryKernelSet, C: int, cin_chunk: int) -> np.ndarray:
    """Flatten kernel bits into stream order (bool array, one entry per bit)."""
    n_out, cpg, kh, kw = kernel.bits.shape
    tiles = -(-n_out // C)
    padded = np.zeros((tiles * C, cpg, kh, kw), dtype=bool)
    padded[:n_out] = kernel.bits
    padded = padded.reshape(tiles, C, cpg, kh, kw)
    parts = []
    for t in range(tiles):
        for j0, j1 in _chunks(cpg, cin_chunk):
            # (C, j, kh, kw) -> (kh, kw, j, C)
            parts.append(padded[t, :, j0:j1].transpose(2, 3, 1, 0).reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def unpack_layer_stream(stream: np.ndarray, n_out: int, cpg: int, kh: int, kw: int,
                        C: int, cin_chunk: int) -> BinaryKernelSet:
    tiles = -(-n_out // C)
    expect = tiles * C * cpg * kh * kw
    if stream.size != expect:
        raise ValueError(f"weight stream has {stream.size} bits, expected {expect}")
    padded = np.zeros((tiles, C, cpg, kh, kw), dtype=bool)
    pos = 0
    for t in range(tiles):
        for j0, j1 in _chunks(cpg, cin_chunk):
            n = (j1 - j0) * kh * kw * C
            block = stream[pos:pos + n].reshape(kh, kw, j1 - j0, C)
            padded[t, :, j0:j1] = block.transpose(3, 2, 0, 1)
            pos += n
    return BinaryKernelSet(padded.reshape(tiles * C, cpg, kh, kw)[:n_out])


# -- weight file -------------------------------------------------------------

def write_weights(path, params: Sequence[LayerParams], C: int = 16, wbuf_bits: int = 512 * 3 * 3 * 16) -> None:
    out = bytearray(_FILE_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, C, len(params)))
    for p in params:
        k = p.kernel
        chunk = max(1, wbuf_bits // (C * k.kh * k.kw))
        flags = (1 if p.scale is not None else 0) | (2 if p.bias is not None else 0)
        out += _LAYER_HEADER.pack(k.n_out, k.n_in, k.kh, k.kw, flags, 0, chunk)
        out += np.packbits(pack_layer_stream(k, C, chunk), bitorder="little").tobytes()
        for vec in (p.scale, p.bias):
            if vec is not None:
                out += vec.astype("<f2").tobytes()
    Path(path).write_bytes(bytes(out))


def read_weights(path) -> list[LayerParams]:
    raw = Path(path).read_bytes()
    if len(raw) < _FILE_HEADER.size:
        raise ValueError("weight file truncated")
    magic, version, C, n_layers = _FILE_HEADER.unpack_from(raw, 0)
    if magic != WEIGHT_MAGIC:
        raise ValueError(f"bad weight file magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    pos = _FILE_HEADER.size
    params = []
    for _ in range(n_layers):
        n_out, cpg, kh, kw, flags, _res, chunk = _LAYER_HEADER.unpack_from(raw, pos)
        pos += _LAYER_HEADER.size
        nbits = -(-n_out // C) * C * cpg * kh * kw
        nbytes = -(-nbits // 8)
        bits = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes, pos), bitorder="little")[:nbits].astype(bool)
        pos += nbytes
        kernel = unpack_layer_stream(bits, n_out, cpg, kh, kw, C, chunk)
        vecs = []
        for flag in (1, 2):
            if flags & flag:
                vecs.append(np.frombuffer(raw, "<f2", n_out, pos).astype(np.float16))
                pos += 2 * n_out
            else:
                vecs.append(None)
        params.append(LayerParams(kernel, *vecs))
    if pos != len(raw):
        raise ValueError(f"weight file has {len(raw) - pos} trailing bytes")
    return params


# -- feature maps ------------------------------------------------------------

def write_feature_map(path, fm: FeatureMap) -> None:
    n, h, w = fm.shape
    Path(path).write_bytes(_FM_HEADER.pack(n, h, w) + fm.data.astype("<f2").tobytes())


def read_feature_map(path) -> FeatureMap:
    raw = Path(path).read_bytes()
    n, h, w = _FM_HEADER.unpack_from(raw, 0)
    count = n * h * w
    if len(raw) != _FM_HEADER.size + 2 * count:
        raise ValueError(f"feature map file size does not match header {n}x{h}x{w}")
    data = np.frombuffer(raw, "<f2", count, _FM_HEADER.size).astype(np.float16).reshape(n, h, w)
    return FeatureMap(data)


# -- network description -----------------------------------------------------

def network_to_dict(net: NetworkGraph, params: Optional[Sequence[LayerParams]] = None,
                    notes: str = "") -> dict:
    layers = []
    for i, l in enumerate(net.layers):
        entry = {
            "kernel": [l.kh, l.kw],
            "n_out": l.n_out,
            "stride": l.stride,
            "groups": l.groups,
            "pad": l.pad,
            "scale": l.scale,
            "bias": l.bias,
            "bypass": l.bypass,
            "relu": l.relu,
        }
        if l.source is not None:
            entry["input"] = l.source
        if params is not None:
            if params[i].scale is not None:
                entry["scale"] = [float(v) for v in params[i].scale]
            if params[i].bias is not None:
                entry["bias"] = [float(v) for v in params[i].bias]
        layers.append(entry)
    doc = {"input": list(net.input_shape), "layers": layers}
    if net.name:
        doc["name"] = net.name
    if notes:
        doc["notes"] = notes
    return doc


def network_from_dict(doc: dict) -> tuple[NetworkGraph, dict[int, tuple]]:
    """Parse a network document. Returns the graph plus explicit scale/bias arrays by layer."""
    try:
        shape = tuple(int(v) for v in doc["input"])
        entries = doc.get("layers", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError("shape-mismatch", f"malformed network document: {exc}") from exc
    if len(shape) != 3:
        raise NetworkError("shape-mismatch", "input must be [n, h, w]")
    layers = []
    values: dict[int, tuple] = {}
    for i, e in enumerate(entries):
        kh, kw = (int(v) for v in e.get("kernel", [3, 3]))
        explicit = []
        flags = []
        for key in ("scale", "bias"):
            v = e.get(key, False)
            if isinstance(v, list):
                explicit.append(as_half_array(v, name=f"layer {i} {key}"))
                flags.append(True)
            else:
                explicit.append(None)
                flags.append(bool(v))
        if any(x is not None for x in explicit):
            values[i] = tuple(explicit)
        layers.append(LayerDescriptor(
            n_out=int(e["n_out"]), kh=kh, kw=kw,
            stride=int(e.get("stride", 1)), pad=e.get("pad", "same"),
            groups=int(e.get("groups", 1)), scale=flags[0], bias=flags[1],
            bypass=e.get("bypass"), relu=bool(e.get("relu", False)),
            source=e.get("input"),
        ))
    return NetworkGraph(shape, tuple(layers), name=doc.get("name", "")), values


def save_network(path, net: NetworkGraph, params=None, notes: str = "") -> None:
    Path(path).write_text(json.dumps(network_to_dict(net, params, notes), indent=1) + "\n")


def load_network(path) -> tuple[NetworkGraph, dict[int, tuple]]:
    return network_from_dict(json.loads(Path(path).read_text()))


def apply_explicit_values(params: Sequence[LayerParams], values: dict[int, tuple]) -> list[LayerParams]:
    out = list(params)
    for i, (scale, bias) in values.items():
        p = out[i]
        out[i] = LayerParams(p.kernel, scale if scale is not None else p.scale,
                             bias if bias is not None else p.bias)
    return out


# -- traces --------------------------------------------------------------------

def write_trace(path, events: Iterable) -> int:
    n = 0
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(asdict(ev), separators=(",", ":")) + "\n")
            n += 1
    return n

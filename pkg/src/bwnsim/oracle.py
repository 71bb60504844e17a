"""Reference convolutions used as ground truth.

Nothing here touches the engine's tiling, memory model or weight stream. Two
modes are provided:

* ``"binary16"``: the accumulation order of the accelerator (filter tap with dy
  outer, input channel inner, input-channel chunks summed afterwards) with a
  binary16 rounding after every add. Each add is evaluated exactly in float64
  and rounded once, which is a different rounding path than float16 ufuncs.
* ``"float64"``: double precision throughout, rounded to binary16 once at the end.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .half import round_to_half
from .network import ChipConfig, LayerDescriptor, LayerParams

MODES = ("binary16", "float64")


def _to_half(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return x.astype(np.float16)


def _padded_input(fm: np.ndarray, layer: LayerDescriptor) -> np.ndarray:
    ph, pw = layer.pad_amounts()
    return np.pad(fm.astype(np.float64), ((0, 0), (ph, ph), (pw, pw)))


def _cin_chunks(cpg: int, cin_chunk: Optional[int]) -> list[range]:
    size = cpg if not cin_chunk else cin_chunk
    return [range(j0, min(j0 + size, cpg)) for j0 in range(0, cpg, size)]


def conv_reference(fm_in, layer: LayerDescriptor, params: LayerParams,
                   bypass=None, mode: str = "binary16", cin_chunk: Optional[int] = 512) -> np.ndarray:
    """Direct convolution plus epilogue (scale, bypass, bias, ReLU). Returns float16 (n_out, h, w).

    ``cin_chunk`` mirrors the weight-buffer limit: partial sums of each chunk of
    input channels are added together in ascending order before the epilogue.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    x = np.asarray(fm_in, dtype=np.float16)
    n_in, h_in, w_in = x.shape
    h_out, w_out = layer.output_hw(h_in, w_in)
    cpg = n_in // layer.groups
    opg = layer.n_out // layer.groups
    signs = np.where(params.kernel.bits, 1.0, -1.0)
    xp = _padded_input(x, layer)
    s = layer.stride
    group_of = np.arange(layer.n_out) // opg

    def tap_view(dy, dx):
        return xp[:, dy:dy + s * (h_out - 1) + 1:s, dx:dx + s * (w_out - 1) + 1:s]

    def channel(view, j):
        # input channel j of each output channel's group
        return view[j][None] if layer.groups == 1 else view[group_of * cpg + j]

    if mode == "float64":
        acc = np.zeros((layer.n_out, h_out, w_out))
        for dy in range(layer.kh):
            for dx in range(layer.kw):
                view = tap_view(dy, dx)
                for j in range(cpg):
                    acc += signs[:, j, dy, dx, None, None] * channel(view, j)
        out = acc
        if layer.scale:
            out = out * params.scale.astype(np.float64)[:, None, None]
        if bypass is not None:
            out = out + np.asarray(bypass, dtype=np.float64)
        if layer.bias:
            out = out + params.bias.astype(np.float64)[:, None, None]
        if layer.relu:
            out = np.where(out > 0, out, 0.0)
        return _to_half(out)

    total = None
    for chunk in _cin_chunks(cpg, cin_chunk):
        v = np.zeros((layer.n_out, h_out, w_out), dtype=np.float16)
        for dy in range(layer.kh):
            for dx in range(layer.kw):
                view = tap_view(dy, dx)
                for j in chunk:
                    v = _to_half(v.astype(np.float64) + signs[:, j, dy, dx, None, None] * channel(view, j))
        total = v if total is None else _to_half(v.astype(np.float64) + total.astype(np.float64))
    v = total
    if layer.scale:
        v = _to_half(v.astype(np.float64) * params.scale.astype(np.float64)[:, None, None])
    if bypass is not None:
        v = _to_half(v.astype(np.float64) + np.asarray(bypass, dtype=np.float16).astype(np.float64))
    if layer.bias:
        v = _to_half(v.astype(np.float64) + params.bias.astype(np.float64)[:, None, None])
    if layer.relu:
        v = np.where(v > 0, v, np.float16(0.0))
    return v


def conv_reference_scalar(fm_in, layer: LayerDescriptor, params: LayerParams, bypass=None) -> np.ndarray:
    """Binary16-scheduled convolution as plain nested loops over Python floats. Slow; for small cases."""
    x = np.asarray(fm_in, dtype=np.float16)
    n_in, h_in, w_in = x.shape
    h_out, w_out = layer.output_hw(h_in, w_in)
    ph, pw = layer.pad_amounts()
    cpg = n_in // layer.groups
    opg = layer.n_out // layer.groups
    bits = params.kernel.bits
    out = np.zeros((layer.n_out, h_out, w_out), dtype=np.float16)
    for co in range(layer.n_out):
        g = co // opg
        for y in range(h_out):
            for xo in range(w_out):
                v = 0.0
                for dy in range(layer.kh):
                    for dx in range(layer.kw):
                        for j in range(cpg):
                            iy = y * layer.stride + dy - ph
                            ix = xo * layer.stride + dx - pw
                            pix = float(x[g * cpg + j, iy, ix]) if 0 <= iy < h_in and 0 <= ix < w_in else 0.0
                            v = round_to_half(v + pix if bits[co, j, dy, dx] else v - pix)
                if layer.scale:
                    v = round_to_half(v * float(params.scale[co]))
                if bypass is not None:
                    v = round_to_half(v + float(bypass[co, y, xo]))
                if layer.bias:
                    v = round_to_half(v + float(params.bias[co]))
                if layer.relu:
                    v = v if v > 0 else 0.0
                out[co, y, xo] = v
    return out


def network_reference(net, params, fm_in, mode: str = "binary16", cfg: Optional[ChipConfig] = None) -> np.ndarray:
    """Run a whole network layer by layer with :func:`conv_reference`.

    Only the weight-buffer size of ``cfg`` matters here: it fixes each layer's input-channel chunk.
    """
    cfg = cfg or ChipConfig()
    fms = {-1: np.asarray(fm_in, dtype=np.float16)}
    for i, (layer, p) in enumerate(zip(net.layers, params)):
        src = net.source_of(i)
        byp = fms[layer.bypass] if layer.bypass is not None else None
        fms[i] = conv_reference(fms[src], layer, p, byp, mode=mode, cin_chunk=cfg.cin_chunk(layer.kh, layer.kw))
    return fms[net.output_id]


def mac_count(layer: LayerDescriptor, n_in: int, h_in: int, w_in: int) -> int:
    """Multiply-accumulates of one layer, counted by walking the loop nest."""
    h_out, w_out = layer.output_hw(h_in, w_in)
    cpg = n_in // layer.groups
    per_pixel = 0
    for _dy in range(layer.kh):
        for _dx in range(layer.kw):
            for _j in range(cpg):
                per_pixel += 1
    count = 0
    for _co in range(layer.n_out):
        for _y in range(h_out):
            count += per_pixel * w_out
    return count

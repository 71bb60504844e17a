"""Functional model of one accelerator chip.

Feature maps live in a flat FMM of 16-bit words, laid out by the memory
planner. Binary weights arrive as one bit stream in the packing order of
:mod:`bwnsim.formats` and pass through the weight buffer. Accumulation is pure
binary16 with one rounding per add, in the order: output-channel tile, filter
tap (dy outer), input channel. All pixels of a tile are updated together since
their results are independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .formats import pack_layer_stream
from .network import (
    INPUT_ID,
    ChipConfig,
    FeatureMap,
    LayerDescriptor,
    LayerParams,
    NetworkGraph,
    check_params,
)
from .planner import SegmentPlan, input_chunks, plan_segments

EVENT_KINDS = ("fmm-read", "fmm-write", "wbuf-read", "stream-consume", "bm-read", "cm-read")
NO_TILE = (-1, -1)


class EngineError(RuntimeError):
    def __init__(self, code: str, message: str, layer: Optional[int] = None):
        super().__init__(message)
        self.code = code
        self.layer = layer


@dataclass(frozen=True)
class AccessEvent:
    cycle: int
    kind: str
    address: int
    tile: tuple[int, int] = NO_TILE


# Maps an input pixel in halo-extended coordinates to (kind, address) or None for zero padding.
Resolver = Callable[[int, int, int], Optional[tuple[str, int]]]
# Returns the halo-extended input of a layer: (array, top rows, left cols, resolver).
HaloProvider = Callable[[int, LayerDescriptor, np.ndarray], tuple[np.ndarray, int, int, Optional[Resolver]]]


def layer_cycles(layer: LayerDescriptor, n_in: int, h_out: int, w_out: int, cfg: ChipConfig) -> tuple[int, int]:
    """(conv cycles, epilogue cycles) of one layer on one chip."""
    th, tw = -(-h_out // cfg.M), -(-w_out // cfg.N)
    cpg = n_in // layer.groups
    conv = -(-layer.n_out // cfg.C) * th * tw * layer.kh * layer.kw * cpg
    stages = layer.epilogue_stages + input_chunks(layer, n_in, cfg) - 1
    return conv, layer.n_out * th * tw * stages


@dataclass
class EngineState:
    cfg: ChipConfig = field(default_factory=ChipConfig)
    record_trace: bool = False
    fmm: Optional[np.ndarray] = None
    plan: Optional[SegmentPlan] = None
    live: dict = field(default_factory=dict)
    wbuf: Optional[np.ndarray] = None
    wbuf_used: int = 0
    stream: Optional[np.ndarray] = None
    cursor: int = 0
    cycle: int = 0
    trace: list = field(default_factory=list)
    overflow: list = field(default_factory=list)

    # -- memories -------------------------------------------------------------
    def reset(self, plan: SegmentPlan, stream: np.ndarray) -> None:
        self.plan = plan
        self.fmm = np.zeros(plan.extent_words, dtype=np.float16)
        self.wbuf = np.zeros(self.cfg.wbuf_bits, dtype=bool)
        self.wbuf_used = 0
        self.stream = stream
        self.cursor = 0
        self.cycle = 0
        self.trace = []
        self.overflow = []
        self.live = {plan.input_seg: plan.segment(plan.input_seg)}

    def _segment(self, seg_id: int, layer: Optional[int] = None):
        seg = self.live.get(seg_id)
        if seg is None:
            raise EngineError("bypass-source-missing", f"segment {seg_id} is not resident", layer)
        return seg

    def view(self, seg_id: int, shape) -> np.ndarray:
        seg = self._segment(seg_id)
        n = int(np.prod(shape))
        if n > seg.size or seg.end > self.fmm.size:
            raise EngineError("segment-overflow", f"{n} words do not fit segment {seg_id} of {seg.size}")
        return self.fmm[seg.offset:seg.offset + n].reshape(shape)

    def activate(self, seg_id: int) -> None:
        seg = self.plan.segment(seg_id)
        for other in self.live.values():
            if other.offset < seg.end and seg.offset < other.end and other.id != seg_id:
                if not (other.offset == seg.offset and other.size == seg.size and seg.fm >= 0
                        and self._in_place_pair(other, seg)):
                    raise EngineError("segment-overflow", f"segment {seg_id} overlaps live segment {other.id}")
        if seg.end > self.cfg.fmm_words:
            raise EngineError("segment-overflow", f"segment {seg_id} ends beyond the FMM")
        self.live[seg_id] = seg

    def _in_place_pair(self, old, new) -> bool:
        lp = self.plan.layers[new.fm]
        return lp.in_place and lp.bypass_seg == old.id

    def release(self, seg_ids) -> None:
        for sid in seg_ids:
            self.live.pop(sid, None)

    def load_wbuf(self, nbits: int, layer: int) -> np.ndarray:
        if nbits > self.cfg.wbuf_bits:
            raise EngineError("wbuf-overflow", f"{nbits} weight bits exceed the {self.cfg.wbuf_bits}-bit buffer", layer)
        if self.cursor + nbits > self.stream.size:
            raise EngineError("wbuf-overflow", "weight stream exhausted", layer)
        self.wbuf[:nbits] = self.stream[self.cursor:self.cursor + nbits]
        self.cursor += nbits
        self.wbuf_used = nbits
        return self.wbuf[:nbits]


def weight_stream(net: NetworkGraph, params: Sequence[LayerParams], cfg: ChipConfig) -> np.ndarray:
    parts = [pack_layer_stream(p.kernel, cfg.C, cfg.cin_chunk(l.kh, l.kw)) for l, p in zip(net.layers, params)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def _zero_pad_provider(i: int, layer: LayerDescriptor, x: np.ndarray):
    ph, pw = layer.pad_amounts()
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw))), ph, pw, None


class Engine:
    """Runs a network layer by layer on one chip. ``halo`` supplies neighbour pixels in mesh mode."""

    def __init__(self, net: NetworkGraph, params: Sequence[LayerParams], cfg: Optional[ChipConfig] = None,
                 trace: bool = False, halo: Optional[HaloProvider] = None, plan: Optional[SegmentPlan] = None):
        self.cfg = cfg or ChipConfig()
        check_params(net, params)
        self.net = net
        self.params = list(params)
        self.shapes = net.shapes()
        self.halo = halo or _zero_pad_provider
        self.state = EngineState(self.cfg, record_trace=trace)
        self.state.reset(plan or plan_segments(net, self.cfg), weight_stream(net, params, self.cfg))
        self.fm_seg = {INPUT_ID: self.state.plan.input_seg}
        self.next_layer = 0

    def load_input(self, fm: FeatureMap) -> None:
        if fm.shape != self.net.input_shape:
            raise EngineError("shape-mismatch", f"input shape {fm.shape} != {self.net.input_shape}")
        self.state.view(self.fm_seg[INPUT_ID], fm.shape)[...] = fm.data

    def read_fm(self, fm: int) -> np.ndarray:
        return self.state.view(self.fm_seg[fm], self.net.fm_shape(fm)).copy()

    def step(self) -> int:
        i = self.next_layer
        st = self.state
        lp = st.plan.layers[i]
        layer, s = self.net.layers[i], self.shapes[i]
        src_seg = self.fm_seg[s.source]
        x = st.view(src_seg, (s.n_in, s.h_in, s.w_in))
        byp = None
        if layer.bypass is not None:
            if layer.bypass not in self.fm_seg or self.fm_seg[layer.bypass] not in st.live:
                raise EngineError("bypass-source-missing", f"layer {i}: bypass map {layer.bypass} not resident", i)
            byp = st.view(self.fm_seg[layer.bypass], (s.n_out, s.h_out, s.w_out))
        st.activate(lp.output_seg)
        self.fm_seg[i] = lp.output_seg
        out = st.view(lp.output_seg, (s.n_out, s.h_out, s.w_out))
        ext, top, left, resolver = self.halo(i, layer, x)
        if st.record_trace:
            src_off = st.live[src_seg].offset
            resolver = resolver or _fmm_resolver(src_off, s.h_in, s.w_in, top, left)
            st.trace.extend(_layer_events(st, i, layer, s, top, left, resolver,
                                          st.live[lp.output_seg].offset,
                                          st.live[self.fm_seg[layer.bypass]].offset if byp is not None else None))
        conv_kernel(st, i, layer, self.params[i], s, ext, out, byp)
        conv, epi = layer_cycles(layer, s.n_in, s.h_out, s.w_out, self.cfg)
        st.cycle += conv + epi
        st.release(lp.freed)
        self.next_layer += 1
        return i

    def run(self, fm: FeatureMap) -> FeatureMap:
        self.load_input(fm)
        while self.next_layer < len(self.net.layers):
            self.step()
        return FeatureMap(self.read_fm(self.net.output_id))


def _fmm_resolver(offset: int, h: int, w: int, top: int, left: int) -> Resolver:
    def resolve(c, ye, xe):
        y, x = ye - top, xe - left
        if 0 <= y < h and 0 <= x < w:
            return "fmm-read", offset + (c * h + y) * w + x
        return None
    return resolve


def _layer_events(st: EngineState, i: int, layer: LayerDescriptor, s, top: int, left: int,
                  resolve: Resolver, out_off: int, byp_off: Optional[int]) -> Iterator[AccessEvent]:
    """Per-cycle accesses of one layer in schedule order. Intended for small layers."""
    cfg = st.cfg
    C, M, N = cfg.C, cfg.M, cfg.N
    th, tw = -(-s.h_out // M), -(-s.w_out // N)
    cpg = s.n_in // layer.groups
    opg = layer.n_out // layer.groups
    chunk = cfg.cin_chunk(layer.kh, layer.kw)
    ph, pw = layer.pad_amounts()
    cyc = st.cycle
    word = st.cursor // C
    stages = layer.epilogue_stages
    for c0 in range(0, layer.n_out, C):
        ct = min(C, layer.n_out - c0)
        groups = sorted({(c // opg) for c in range(c0, c0 + ct)})
        for j0 in range(0, cpg, chunk):
            j1 = min(cpg, j0 + chunk)
            last_chunk = j1 == cpg
            for py in range(th):
                for px in range(tw):
                    widx = 0
                    for dy in range(layer.kh):
                        for dx in range(layer.kw):
                            for j in range(j0, j1):
                                if py == 0 and px == 0:
                                    yield AccessEvent(cyc, "stream-consume", word)
                                    word += 1
                                yield AccessEvent(cyc, "wbuf-read", widx)
                                widx += 1
                                for ti in range(M):
                                    for tj in range(N):
                                        y, x = ti * th + py, tj * tw + px
                                        if y >= s.h_out or x >= s.w_out:
                                            continue
                                        ye = y * layer.stride + dy + top - ph
                                        xe = x * layer.stride + dx + left - pw
                                        for g in groups:
                                            hit = resolve(g * cpg + j, ye, xe)
                                            if hit:
                                                yield AccessEvent(cyc, hit[0], hit[1], (ti, tj))
                                cyc += 1
                    n_stages = stages if last_chunk else 0
                    n_stages += 0 if j0 == 0 else 1
                    for stage in range(n_stages):
                        for c in range(ct):
                            for ti in range(M):
                                for tj in range(N):
                                    y, x = ti * th + py, tj * tw + px
                                    if y >= s.h_out or x >= s.w_out:
                                        continue
                                    addr = ((c0 + c) * s.h_out + y) * s.w_out + x
                                    reads_fm = (byp_off is not None and last_chunk and stage == n_stages - 1) or \
                                        (j0 > 0 and stage == 0)
                                    if reads_fm:
                                        base = out_off if j0 > 0 and stage == 0 else byp_off
                                        yield AccessEvent(cyc, "fmm-read", base + addr, (ti, tj))
                                    if stage == n_stages - 1:
                                        yield AccessEvent(cyc, "fmm-write", out_off + addr, (ti, tj))
                            cyc += 1
                    if n_stages == 0:
                        for ti in range(M):
                            for tj in range(N):
                                y, x = ti * th + py, tj * tw + px
                                if y < s.h_out and x < s.w_out:
                                    for c in range(ct):
                                        addr = ((c0 + c) * s.h_out + y) * s.w_out + x
                                        yield AccessEvent(cyc - 1, "fmm-write", out_off + addr, (ti, tj))


def conv_kernel(st: EngineState, i: int, layer: LayerDescriptor, p: LayerParams, s,
                ext: np.ndarray, out: np.ndarray, byp: Optional[np.ndarray]) -> None:
    """Accumulate one layer into ``out``, pulling weights from the stream through the weight buffer."""
    cfg = st.cfg
    C, st_ = cfg.C, layer.stride
    cpg = s.n_in // layer.groups
    opg = layer.n_out // layer.groups
    chunk = cfg.cin_chunk(layer.kh, layer.kw)
    n_chunks = -(-cpg // chunk)
    views = [[ext[:, dy:dy + st_ * (s.h_out - 1) + 1:st_, dx:dx + st_ * (s.w_out - 1) + 1:st_]
              for dx in range(layer.kw)] for dy in range(layer.kh)]
    with np.errstate(over="ignore", invalid="ignore"):
        for c0 in range(0, layer.n_out, C):
            ct = min(C, layer.n_out - c0)
            base = (np.arange(c0, c0 + ct) // opg) * cpg
            for ci in range(n_chunks):
                j0, j1 = ci * chunk, min(cpg, (ci + 1) * chunk)
                nbits = (j1 - j0) * layer.kh * layer.kw * C
                wb = st.load_wbuf(nbits, i).reshape(layer.kh, layer.kw, j1 - j0, C)
                sign = np.where(wb[..., :ct], np.float16(1), np.float16(-1))
                v = np.zeros((ct, s.h_out, s.w_out), dtype=np.float16)
                for dy in range(layer.kh):
                    for dx in range(layer.kw):
                        view = views[dy][dx]
                        for j in range(j1 - j0):
                            xj = view[j0 + j][None] if layer.groups == 1 else view[base + j0 + j]
                            v += sign[dy, dx, j][:, None, None] * xj
                if ci > 0:
                    v += out[c0:c0 + ct]
                if ci < n_chunks - 1:
                    out[c0:c0 + ct] = v
                    continue
                if layer.scale:
                    v *= p.scale[c0:c0 + ct, None, None]
                if byp is not None:
                    v += byp[c0:c0 + ct]
                if layer.bias:
                    v += p.bias[c0:c0 + ct, None, None]
                if layer.relu:
                    v = np.where(v > 0, v, np.float16(0))
                out[c0:c0 + ct] = v
    if np.isinf(out).any():
        msg = f"layer {i}: binary16 overflow to infinity"
        st.overflow.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def run_network(net: NetworkGraph, params: Sequence[LayerParams], fm: FeatureMap,
                cfg: Optional[ChipConfig] = None, trace: bool = False) -> tuple[FeatureMap, list[AccessEvent]]:
    """Run a whole network on one chip. Raises PlanError if it does not fit."""
    eng = Engine(net, params, cfg, trace=trace)
    out = eng.run(fm)
    return out, eng.state.trace


def run_conv_layer(fm: FeatureMap, layer: LayerDescriptor, params: LayerParams, cfg: Optional[ChipConfig] = None,
                   bypass: Optional[FeatureMap] = None) -> FeatureMap:
    """Run a single layer with its input, and optional bypass map, resident on chip."""
    cfg = cfg or ChipConfig().unbounded()
    h_out, w_out = layer.output_hw(fm.height, fm.width)
    if bypass is None and layer.bypass is None:
        return run_network(NetworkGraph(fm.shape, (layer,)), [params], fm, cfg)[0]
    if bypass is None or bypass.shape != (layer.n_out, h_out, w_out):
        raise EngineError("bypass-source-missing", "layer needs a bypass map of the output shape")
    st = EngineState(cfg)
    st.stream = pack_layer_stream(params.kernel, cfg.C, cfg.cin_chunk(layer.kh, layer.kw))
    st.wbuf = np.zeros(cfg.wbuf_bits, dtype=bool)
    shape = NetworkGraph(fm.shape, (replace(layer, bypass=None),)).shapes()[0]
    out = np.zeros((layer.n_out, h_out, w_out), dtype=np.float16)
    ext = _zero_pad_provider(0, layer, fm.data)[0]
    conv_kernel(st, 0, layer, params, shape, ext, out, bypass.data)
    return FeatureMap(out)

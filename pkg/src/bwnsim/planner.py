"""Feature-map memory planning: worst-case layer, ping-pong segments, border and corner sizing.

Layers run in list order. A feature map occupies one FMM segment from the layer
that produces it until the last layer that reads it. A layer whose bypass
source is not needed afterwards writes its result into the bypass segment
(read-add-write), so it needs no new segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .network import INPUT_ID, ChipConfig, LayerDescriptor, NetworkGraph

WORD_BITS = 16


class PlanError(RuntimeError):
    """The network cannot be placed in the FMM."""

    def __init__(self, code: str, message: str, layer: Optional[int] = None, deficit: int = 0):
        super().__init__(message)
        self.code = code
        self.layer = layer
        self.deficit = deficit


@dataclass(frozen=True)
class Segment:
    id: int
    fm: int
    offset: int
    size: int

    @property
    def end(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class LayerPlan:
    layer: int
    input_seg: int
    output_seg: int
    bypass_seg: Optional[int]
    in_place: bool
    live_words: int
    freed: tuple[int, ...]


@dataclass(frozen=True)
class SegmentPlan:
    capacity: int
    input_seg: int
    segments: tuple[Segment, ...]
    layers: tuple[LayerPlan, ...]
    peak_words: int
    peak_layer: Optional[int]
    extent_words: int

    def segment(self, seg_id: int) -> Segment:
        return self.segments[seg_id]

    def to_dict(self) -> dict:
        return {
            "capacity_words": self.capacity,
            "peak_words": self.peak_words,
            "peak_layer": self.peak_layer,
            "extent_words": self.extent_words,
            "input_segment": self.input_seg,
            "segments": [vars(s) for s in self.segments],
            "layers": [
                {**vars(lp), "freed": list(lp.freed)} for lp in self.layers
            ],
        }


# -- liveness ---------------------------------------------------------------

def last_readers(net: NetworkGraph) -> dict[int, int]:
    """Index of the last layer reading each feature map (input or bypass). Unread maps are absent."""
    last: dict[int, int] = {}
    for i, layer in enumerate(net.layers):
        last[net.source_of(i)] = i
        if layer.bypass is not None:
            last[layer.bypass] = i
    return last


def input_chunks(layer: LayerDescriptor, n_in: int, cfg: ChipConfig) -> int:
    cpg = n_in // layer.groups
    return -(-cpg // cfg.cin_chunk(layer.kh, layer.kw))


def can_update_in_place(net: NetworkGraph, i: int, cfg: ChipConfig, last: Optional[dict] = None) -> bool:
    """True if layer ``i`` may overwrite its bypass source with its own output."""
    layer = net.layers[i]
    if layer.bypass is None or layer.bypass == net.source_of(i):
        return False
    last = last_readers(net) if last is None else last
    if last.get(layer.bypass) != i or layer.bypass == net.output_id:
        return False
    # chunked accumulation parks partial sums in the output segment
    return input_chunks(layer, net.shapes()[i].n_in, cfg) == 1


def _fm_words(net: NetworkGraph, fm: int) -> int:
    n, h, w = net.fm_shape(fm)
    return n * h * w


class _Allocator:
    def __init__(self, top_down: bool, limit: int):
        self.top_down = top_down
        self.limit = limit
        self.live: dict[int, tuple[int, int]] = {}

    def alloc(self, seg_id: int, size: int) -> int:
        gaps, cursor = [], 0
        for off, sz in sorted(self.live.values()):
            if off > cursor:
                gaps.append((cursor, off))
            cursor = max(cursor, off + sz)
        gaps.append((cursor, max(self.limit, cursor + size)))
        fitting = [(a, b) for a, b in gaps if b - a >= size]
        if self.top_down:
            a, b = fitting[-1]
            offset = b - size
        else:
            offset = fitting[0][0]
        self.live[seg_id] = (offset, size)
        return offset

    def free(self, seg_id: int) -> None:
        self.live.pop(seg_id)


def _layout(net: NetworkGraph, cfg: ChipConfig, top_down: bool) -> SegmentPlan:
    last = last_readers(net)
    out_id = net.output_id
    alloc = _Allocator(top_down, cfg.fmm_words)
    segments: list[Segment] = []
    fm_seg: dict[int, int] = {}

    def new_segment(fm: int) -> int:
        sid = len(segments)
        size = _fm_words(net, fm)
        offset = alloc.alloc(sid, size)
        segments.append(Segment(sid, fm, offset, size))
        fm_seg[fm] = sid
        return sid

    input_seg = new_segment(INPUT_ID)
    layers: list[LayerPlan] = []
    peak, peak_layer = _fm_words(net, INPUT_ID), None
    for i, layer in enumerate(net.layers):
        in_seg = fm_seg[net.source_of(i)]
        byp_seg = fm_seg[layer.bypass] if layer.bypass is not None else None
        if can_update_in_place(net, i, cfg, last):
            old = segments[byp_seg]
            out_seg = len(segments)
            segments.append(Segment(out_seg, i, old.offset, old.size))
            alloc.live[out_seg] = alloc.live.pop(byp_seg)
            del fm_seg[layer.bypass]
            fm_seg[i] = out_seg
            in_place = True
        else:
            out_seg = new_segment(i)
            in_place = False
        live = sum(size for _, size in alloc.live.values())
        if live > peak:
            peak, peak_layer = live, i
        freed = [byp_seg] if in_place else []
        for fm in sorted(fm_seg):
            if fm == out_id or last.get(fm, -1) > i:
                continue
            sid = fm_seg.pop(fm)
            alloc.free(sid)
            freed.append(sid)
        layers.append(LayerPlan(i, in_seg, out_seg, byp_seg, in_place, live, tuple(freed)))
    extent = max((s.end for s in segments), default=0)
    return SegmentPlan(cfg.fmm_words, input_seg, tuple(segments), tuple(layers), peak, peak_layer, extent)


def liveness(net: NetworkGraph, cfg: Optional[ChipConfig] = None) -> list[int]:
    """Words resident in the FMM while each layer runs."""
    cfg = (cfg or ChipConfig()).unbounded()
    return [lp.live_words for lp in _layout(net, cfg, top_down=False).layers]


def plan_segments(net: NetworkGraph, cfg: Optional[ChipConfig] = None) -> SegmentPlan:
    """Assign every feature map an FMM address range. Deterministic.

    Raises PlanError("does-not-fit") with the deficit when the peak footprint
    exceeds the FMM, or PlanError("fragmentation") if neither allocation policy
    finds a layout.
    """
    cfg = cfg or ChipConfig()
    net.shapes()
    plan = _layout(net, cfg, top_down=False)
    if plan.peak_words > cfg.fmm_words:
        raise PlanError(
            "does-not-fit",
            f"peak footprint {plan.peak_words} words at layer {plan.peak_layer} exceeds "
            f"FMM capacity {cfg.fmm_words} by {plan.peak_words - cfg.fmm_words} words",
            plan.peak_layer, plan.peak_words - cfg.fmm_words)
    if plan.extent_words <= cfg.fmm_words:
        return plan
    plan = _layout(net, cfg, top_down=True)
    if plan.extent_words <= cfg.fmm_words:
        return plan
    raise PlanError("fragmentation", f"no fragmentation-free layout within {cfg.fmm_words} words")


# -- residual block recognition --------------------------------------------

@dataclass(frozen=True)
class Block:
    kind: str
    input_fm: int
    layers: tuple[int, ...]
    closed_form_words: int


CLOSED_FORMS = {
    "basic": (2, 1),
    "strided-basic": (2, 1),
    "bottleneck": (3, 2),
    "strided-bottleneck": (13, 8),
}


def _is(layer: LayerDescriptor, k: int, s: int) -> bool:
    return layer.kh == layer.kw == k and layer.stride == s and layer.groups == 1


def find_blocks(net: NetworkGraph) -> list[Block]:
    """Recognise residual blocks of the four standard shapes through their bypass edges."""
    blocks = []
    for i, layer in enumerate(net.layers):
        b = layer.bypass
        if b is None:
            continue
        chain = [i]
        while len(chain) < 4 and net.source_of(chain[-1]) not in (b, net.source_of(b) if b >= 0 else None):
            chain.append(net.source_of(chain[-1]))
            if chain[-1] < 0:
                break
        x = net.source_of(chain[-1])
        main = chain[::-1]
        if any(m < 0 for m in main):
            continue
        projection = b >= 0 and x == net.source_of(b) and x != b
        if not projection and x != b:
            continue
        n_in = net.fm_shape(x)[0]
        words = _fm_words(net, x)
        L = [net.layers[m] for m in main]
        kind = None
        if len(L) == 2 and not projection and all(_is(l, 3, 1) and l.n_out == n_in for l in L):
            kind = "basic"
        elif (len(L) == 2 and projection and _is(net.layers[b], 1, 2) and _is(L[0], 3, 2) and _is(L[1], 3, 1)
              and L[0].n_out == L[1].n_out == net.layers[b].n_out == 2 * n_in and main[0] < b < main[1]):
            kind = "strided-basic"
        elif (len(L) == 3 and not projection and _is(L[0], 1, 1) and _is(L[1], 3, 1) and _is(L[2], 1, 1)
              and 4 * L[0].n_out == 4 * L[1].n_out == L[2].n_out == n_in):
            kind = "bottleneck"
        elif (len(L) == 3 and projection and _is(net.layers[b], 1, 2) and _is(L[0], 1, 2) and _is(L[1], 3, 1)
              and _is(L[2], 1, 1) and 4 * L[0].n_out == 4 * L[1].n_out == 2 * n_in
              and L[2].n_out == net.layers[b].n_out == 2 * n_in and main[0] < b < main[1]):
            kind = "strided-bottleneck"
        if kind is None:
            continue
        num, den = CLOSED_FORMS[kind]
        members = tuple(sorted(main + ([b] if projection else [])))
        blocks.append(Block(kind, x, members, words * num // den))
    return blocks


@dataclass(frozen=True)
class WclResult:
    words: int
    layer: Optional[int]
    block: Optional[Block]

    @property
    def bits(self) -> int:
        return WORD_BITS * self.words


def wcl_words(net: NetworkGraph, cfg: Optional[ChipConfig] = None) -> WclResult:
    """Worst-case concurrent FMM footprint over the network, with the block that causes it."""
    live = liveness(net, cfg)
    if not live:
        return WclResult(_fm_words(net, INPUT_ID), None, None)
    layer = max(range(len(live)), key=lambda i: (live[i], -i))
    block = next((b for b in find_blocks(net) if layer in b.layers), None)
    return WclResult(live[layer], layer, block)


def plain_pair_words(net: NetworkGraph) -> int:
    """max(n_in h_in w_in + n_out h_out w_out): the footprint ignoring bypass liveness."""
    return max((s.in_words + s.out_words for s in net.shapes()), default=_fm_words(net, INPUT_ID))


# -- border and corner memories -------------------------------------------

@dataclass(frozen=True)
class Halo:
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def __or__(self, other: "Halo") -> "Halo":
        return Halo(max(self.top, other.top), max(self.bottom, other.bottom),
                    max(self.left, other.left), max(self.right, other.right))

    @property
    def empty(self) -> bool:
        return not (self.top or self.bottom or self.left or self.right)


def layer_halo(layer: LayerDescriptor) -> Halo:
    """Neighbour rows/columns a layer reads beyond a chip's own slice of its input."""
    ph, pw = layer.pad_amounts()
    return Halo(ph, max(0, layer.kh - ph - layer.stride), pw, max(0, layer.kw - pw - layer.stride))


def fm_halos(net: NetworkGraph) -> dict[int, Halo]:
    """Halo each feature map needs, over all layers that convolve it."""
    halos = {fm: Halo() for fm in range(INPUT_ID, len(net.layers))}
    for i, layer in enumerate(net.layers):
        src = net.source_of(i)
        halos[src] = halos[src] | layer_halo(layer)
    return halos


def halo_words(shape, halo: Halo) -> tuple[int, int]:
    """(border words, corner words) for one feature map slice."""
    n, h, w = shape
    border = n * (w * (halo.top + halo.bottom) + h * (halo.left + halo.right))
    corner = n * (halo.top + halo.bottom) * (halo.left + halo.right)
    return border, corner


def _last_conv_reader(net: NetworkGraph) -> dict[int, int]:
    last = {}
    for i in range(len(net.layers)):
        if not layer_halo(net.layers[i]).empty:
            last[net.source_of(i)] = i
    return last


def halo_occupancy(net: NetworkGraph) -> list[tuple[int, int]]:
    """(border words, corner words) held while each layer runs.

    A halo is stored from the moment its feature map is produced until the last
    layer that convolves it. For a plain chain this is the input halo of layer l
    plus the output halo of layer l (sized by layer l+1's kernel).
    """
    halos = fm_halos(net)
    last = _last_conv_reader(net)
    occ = []
    for i in range(len(net.layers)):
        b = c = 0
        for fm, lr in last.items():
            if fm <= i <= lr or fm == i:
                hb, hc = halo_words(net.fm_shape(fm), halos[fm])
                b += hb
                c += hc
        occ.append((b, c))
    return occ


def border_memory_bits(net: NetworkGraph) -> int:
    return WORD_BITS * max((b for b, _ in halo_occupancy(net)), default=0)


def corner_memory_bits(net: NetworkGraph) -> int:
    return WORD_BITS * max((c for _, c in halo_occupancy(net)), default=0)


def pair_border_words(n_in: int, h_in: int, w_in: int, k_l: int,
                      n_out: int, h_out: int, w_out: int, k_next: int) -> int:
    """Border words of one stride-1 layer transition, both axes, both sides."""
    left = n_in * h_in * (k_l // 2) + n_out * h_out * (k_next // 2)
    top = n_in * w_in * (k_l // 2) + n_out * w_out * (k_next // 2)
    return 2 * left + 2 * top


def pair_corner_words(n_in: int, k_l: int, n_out: int, k_next: int) -> int:
    return 4 * (n_in * (k_l // 2) ** 2 + n_out * (k_next // 2) ** 2)


# -- report -------------------------------------------------------------------

@dataclass
class MemoryReport:
    wcl_words: int
    wcl_layer: Optional[int]
    wcl_block: Optional[str]
    border_bits: int
    border_bits_at_wcl: int
    corner_bits: int
    capacity: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    @property
    def wcl_bits(self) -> int:
        return WORD_BITS * self.wcl_words

    @property
    def all_fit(self) -> bool:
        return all(self.fits.values())

    def to_dict(self) -> dict:
        return {
            "wcl_words": self.wcl_words,
            "wcl_bits": self.wcl_bits,
            "wcl_layer": self.wcl_layer,
            "wcl_block": self.wcl_block,
            "border_bits": self.border_bits,
            "border_bits_at_wcl": self.border_bits_at_wcl,
            "corner_bits": self.corner_bits,
            "capacity": self.capacity,
            "fits": self.fits,
        }


def memory_report(net: NetworkGraph, cfg: Optional[ChipConfig] = None) -> MemoryReport:
    cfg = cfg or ChipConfig()
    wcl = wcl_words(net, cfg)
    occ = halo_occupancy(net)
    border = WORD_BITS * max((b for b, _ in occ), default=0)
    corner = WORD_BITS * max((c for _, c in occ), default=0)
    at_wcl = WORD_BITS * occ[wcl.layer][0] if wcl.layer is not None else 0
    return MemoryReport(
        wcl_words=wcl.words,
        wcl_layer=wcl.layer,
        wcl_block=wcl.block.kind if wcl.block else None,
        border_bits=border,
        border_bits_at_wcl=at_wcl,
        corner_bits=corner,
        capacity={"fmm_bits": WORD_BITS * cfg.fmm_words, "bm_bits": cfg.bm_bits, "cm_bits": cfg.cm_bits},
        fits={"fmm": wcl.words <= cfg.fmm_words, "bm": border <= cfg.bm_bits, "cm": corner <= cfg.cm_bits},
    )

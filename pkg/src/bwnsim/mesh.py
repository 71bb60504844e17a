"""Multi-chip systolic mesh: tiling, chip roles, halo exchange and traffic accounting.

Every chip owns an equal spatial slice of every feature map. Right after a
feature map is produced, each chip sends the border rows and columns its
neighbours will convolve over, once. Diagonal (corner) pixels travel through
the vertical neighbour, which relays them sideways. Received pixels land in the
border memory (two halves: one for the vertical neighbours N/S, one for the
horizontal neighbours W/E) or the corner memory.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .engine import Engine
from .network import INPUT_ID, ChipConfig, FeatureMap, LayerParams, NetworkGraph
from .planner import WORD_BITS, Halo, fm_halos, layer_halo, plan_segments

WIRE_BITS_PER_PIXEL = 20  # 4 flits of 4 data bits + 1 valid bit
SIDES = ("top", "bottom", "left", "right")
CORNERS = ("nw", "ne", "sw", "se")


class MeshError(RuntimeError):
    def __init__(self, code: str, message: str, chip: Optional[tuple[int, int]] = None):
        super().__init__(message)
        self.code = code
        self.chip = chip


class ChipType(str, Enum):
    NW = "NW"
    N = "N"
    NE = "NE"
    W = "W"
    CENTER = "Center"
    E = "E"
    SW = "SW"
    S = "S"
    SE = "SE"
    SINGLE = "Single"
    ROW_W = "Row-W"
    ROW_INNER = "Row-inner"
    ROW_E = "Row-E"
    COL_N = "Col-N"
    COL_INNER = "Col-inner"
    COL_S = "Col-S"


def assign_chip_type(row: int, col: int, m: int, n: int) -> ChipType:
    if not (0 <= row < m and 0 <= col < n):
        raise ValueError(f"chip ({row}, {col}) outside a {m}x{n} mesh")
    if m == 1 and n == 1:
        return ChipType.SINGLE
    if m == 1:
        return ChipType.ROW_W if col == 0 else ChipType.ROW_E if col == n - 1 else ChipType.ROW_INNER
    if n == 1:
        return ChipType.COL_N if row == 0 else ChipType.COL_S if row == m - 1 else ChipType.COL_INNER
    v = "N" if row == 0 else "S" if row == m - 1 else ""
    h = "W" if col == 0 else "E" if col == n - 1 else ""
    return ChipType(v + h) if v or h else ChipType.CENTER


@dataclass(frozen=True)
class MeshConfig:
    m: int = 1
    n: int = 1

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("mesh dimensions must be >= 1")

    @property
    def chips(self) -> list[tuple[int, int]]:
        return [(r, c) for r in range(self.m) for c in range(self.n)]

    @classmethod
    def parse(cls, text: str) -> "MeshConfig":
        m, n = text.lower().split("x")
        return cls(int(m), int(n))


# -- tiling -------------------------------------------------------------------

@dataclass(frozen=True)
class Tiling:
    slices: dict
    pad: tuple[int, int]
    shape: tuple[int, int, int]


def tile_input(fm: FeatureMap, mesh: MeshConfig) -> Tiling:
    """Split a feature map into per-chip slices, zero-padding bottom/right to a multiple of the mesh."""
    n, h, w = fm.shape
    ph, pw = (-h) % mesh.m, (-w) % mesh.n
    data = np.pad(fm.data, ((0, 0), (0, ph), (0, pw)))
    rh, rw = (h + ph) // mesh.m, (w + pw) // mesh.n
    slices = {(r, c): FeatureMap(data[:, r * rh:(r + 1) * rh, c * rw:(c + 1) * rw]) for r, c in mesh.chips}
    return Tiling(slices, (ph, pw), fm.shape)


def untile(slices: dict, mesh: MeshConfig, crop: Optional[tuple[int, int]] = None) -> FeatureMap:
    rows = [np.concatenate([np.asarray(getattr(slices[(r, c)], "data", slices[(r, c)])) for c in range(mesh.n)],
                           axis=2) for r in range(mesh.m)]
    data = np.concatenate(rows, axis=1)
    if crop is not None:
        data = data[:, :crop[0], :crop[1]]
    return FeatureMap(data)


# -- messages -------------------------------------------------------------------

@dataclass(frozen=True)
class BorderMessage:
    direction: str          # N/S/E/W hop direction
    fm: int                 # feature map id (-1 network input, else producing layer)
    c_out: int
    pixel: tuple[int, int]  # coordinates in the originating chip's slice
    payload: float
    corner_forward: bool = False


@dataclass
class MessageBatch:
    """Block of pixels moving over one link in one hop."""

    sender: tuple[int, int]
    receiver: tuple[int, int]
    direction: str
    fm: int
    origin: tuple[int, int]
    rows: tuple[int, int]
    cols: tuple[int, int]
    data: np.ndarray
    corner_forward: bool = False
    dest: str = ""          # "top"/"bottom"/"left"/"right" in BM or "nw"/... in CM

    @property
    def pixels(self) -> int:
        return int(self.data.size)

    def messages(self) -> list[BorderMessage]:
        out = []
        for c in range(self.data.shape[0]):
            for y in range(self.rows[0], self.rows[1]):
                for x in range(self.cols[0], self.cols[1]):
                    out.append(BorderMessage(self.direction, self.fm, c, (y, x),
                                             float(self.data[c, y - self.rows[0], x - self.cols[0]]),
                                             self.corner_forward))
        return out


_STEP = {"N": (-1, 0), "S": (1, 0), "W": (0, -1), "E": (0, 1)}


# -- chip state -------------------------------------------------------------------

@dataclass
class HaloStore:
    data: np.ndarray
    filled: np.ndarray
    base: int


@dataclass
class ChipState:
    pos: tuple[int, int]
    kind: ChipType
    engine: Optional[Engine] = None
    bm: dict = field(default_factory=lambda: {"vertical": {}, "horizontal": {}})
    cm: dict = field(default_factory=dict)
    words: dict = field(default_factory=lambda: {"vertical": 0, "horizontal": 0, "cm": 0})
    peak: dict = field(default_factory=lambda: {"vertical": 0, "horizontal": 0, "cm": 0, "bm": 0})
    cursor: dict = field(default_factory=lambda: {"vertical": 0, "horizontal": 0, "cm": 0})
    received: set = field(default_factory=set)
    slices: dict = field(default_factory=dict)

    def _account(self, half: str, delta: int) -> None:
        self.words[half] += delta
        self.peak[half] = max(self.peak[half], self.words[half])
        self.peak["bm"] = max(self.peak["bm"], self.words["vertical"] + self.words["horizontal"])

    def expect(self, fm: int, where: str, shape) -> None:
        half = "cm" if where in CORNERS else ("vertical" if where in ("top", "bottom") else "horizontal")
        size = int(np.prod(shape))
        store = HaloStore(np.zeros(shape, np.float16), np.zeros(shape, bool), self.cursor[half])
        self.cursor[half] += size
        (self.cm if half == "cm" else self.bm[half])[(fm, where)] = store
        self._account(half, size)

    def store(self, fm: int, where: str):
        half = "cm" if where in CORNERS else ("vertical" if where in ("top", "bottom") else "horizontal")
        return (self.cm if half == "cm" else self.bm[half]).get((fm, where)), half

    def release(self, fm: int) -> None:
        for half, table in (("vertical", self.bm["vertical"]), ("horizontal", self.bm["horizontal"]), ("cm", self.cm)):
            for key in [k for k in table if k[0] == fm]:
                self._account(half, -table.pop(key).data.size)
        if not self.bm["vertical"] and not self.bm["horizontal"]:
            self.cursor["vertical"] = self.cursor["horizontal"] = 0
        if not self.cm:
            self.cursor["cm"] = 0


def resolve_read(chip: ChipState, fm: int, c: int, y: int, x: int, slice_hw: tuple[int, int],
                 mesh: MeshConfig) -> tuple[str, int]:
    """Where pixel (c, y, x) of ``fm``, in chip-local coordinates, is read from.

    Returns (source, address) with source in {"fmm", "bm-vertical", "bm-horizontal", "cm", "zero-pad"}.
    """
    R, W = slice_hw
    r, col = chip.pos
    vy = -1 if y < 0 else 1 if y >= R else 0
    vx = -1 if x < 0 else 1 if x >= W else 0
    gy, gx = r + vy, col + vx
    if not (0 <= gy < mesh.m and 0 <= gx < mesh.n):
        return "zero-pad", -1
    if vy == 0 and vx == 0:
        return "fmm", (c * R + y) * W + x
    if vy and vx:
        where = ("n" if vy < 0 else "s") + ("w" if vx < 0 else "e")
    else:
        where = "top" if vy < 0 else "bottom" if vy > 0 else "left" if vx < 0 else "right"
    st, half = chip.store(fm, where)
    code = "cm-miss" if half == "cm" else "bm-miss"
    if st is None:
        raise MeshError(code, f"chip {chip.pos}: no {where} halo stored for map {fm}", chip.pos)
    _, hh, hw = st.data.shape
    ly = y + hh if vy < 0 else y - R if vy > 0 else y
    lx = x + hw if vx < 0 else x - W if vx > 0 else x
    if not (0 <= ly < hh and 0 <= lx < hw) or not st.filled[c, ly, lx]:
        raise MeshError(code, f"chip {chip.pos}: halo pixel {(c, y, x)} of map {fm} never received", chip.pos)
    source = "cm" if half == "cm" else f"bm-{half}"
    return source, st.base + (c * hh + ly) * hw + lx


# -- exchange -------------------------------------------------------------------

def _neighbor(pos, direction, mesh: MeshConfig):
    dr, dc = _STEP[direction]
    r, c = pos[0] + dr, pos[1] + dc
    return (r, c) if 0 <= r < mesh.m and 0 <= c < mesh.n else None


def plan_exchange(fm: int, data: dict, halo: Halo, mesh: MeshConfig) -> list[MessageBatch]:
    """All hops needed to deliver the halo of ``fm``; corner relays come after the direct sends."""
    t, b, l, r = halo.top, halo.bottom, halo.left, halo.right
    direct, relay = [], []
    for pos in mesh.chips:
        x = data[pos]
        _, R, W = x.shape
        sends = (
            ("N", "bottom", (0, b), (0, W)),
            ("S", "top", (R - t, R), (0, W)),
            ("W", "right", (0, R), (0, r)),
            ("E", "left", (0, R), (W - l, W)),
        )
        for d, dest, rows, cols in sends:
            nb = _neighbor(pos, d, mesh)
            if nb is None or rows[0] == rows[1] or cols[0] == cols[1]:
                continue
            direct.append(MessageBatch(pos, nb, d, fm, pos, rows, cols,
                                       x[:, rows[0]:rows[1], cols[0]:cols[1]].copy(), False, dest))
        corners = (
            ("N", "W", "se", (0, b), (0, r)),
            ("N", "E", "sw", (0, b), (W - l, W)),
            ("S", "W", "ne", (R - t, R), (0, r)),
            ("S", "E", "nw", (R - t, R), (W - l, W)),
        )
        for v, h, dest, rows, cols in corners:
            mid = _neighbor(pos, v, mesh)
            far = _neighbor(mid, h, mesh) if mid else None
            if far is None or rows[0] == rows[1] or cols[0] == cols[1]:
                continue
            block = x[:, rows[0]:rows[1], cols[0]:cols[1]].copy()
            direct.append(MessageBatch(pos, mid, v, fm, pos, rows, cols, block, True, dest))
            relay.append(MessageBatch(mid, far, h, fm, pos, rows, cols, block, True, dest))
    return direct + relay


@dataclass
class TrafficRow:
    fm: int
    sender: tuple[int, int]
    receiver: tuple[int, int]
    pixels: int

    @property
    def payload_bits(self) -> int:
        return WORD_BITS * self.pixels

    @property
    def wire_bits(self) -> int:
        return WIRE_BITS_PER_PIXEL * self.pixels


@dataclass
class TrafficReport:
    rows: list[TrafficRow] = field(default_factory=list)
    peak_interface_entries: int = 0
    bm_peak_bits: int = 0
    cm_peak_bits: int = 0
    padding: tuple[int, int] = (0, 0)

    @property
    def pixels(self) -> int:
        return sum(r.pixels for r in self.rows)

    @property
    def payload_bits(self) -> int:
        return WORD_BITS * self.pixels

    @property
    def wire_bits(self) -> int:
        return WIRE_BITS_PER_PIXEL * self.pixels

    def per_fm_bits(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.rows:
            out[r.fm] = out.get(r.fm, 0) + r.payload_bits
        return out

    def add(self, batch: MessageBatch) -> None:
        for row in self.rows:
            if (row.fm, row.sender, row.receiver) == (batch.fm, batch.sender, batch.receiver):
                row.pixels += batch.pixels
                return
        self.rows.append(TrafficRow(batch.fm, batch.sender, batch.receiver, batch.pixels))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "edge", "pixels", "payload_bits", "wire_bits"])
        for r in self.rows:
            edge = f"{r.sender[0]},{r.sender[1]}->{r.receiver[0]},{r.receiver[1]}"
            w.writerow([r.fm, edge, r.pixels, r.payload_bits, r.wire_bits])
        return buf.getvalue()


def deliver(chips: dict, batches: Sequence[MessageBatch]) -> None:
    """Store every batch that ends at its destination; relay hops only pass through."""
    for bt in batches:
        origin_r, origin_c = bt.origin
        rr, rc = bt.receiver
        final = not bt.corner_forward or (rr != origin_r and rc != origin_c)
        if not final:
            continue
        chip = chips[bt.receiver]
        st, _ = chip.store(bt.fm, bt.dest)
        if st is None or st.data.shape != bt.data.shape:
            raise MeshError("unresolved-flag", f"chip {bt.receiver} does not expect {bt.dest} halo of map {bt.fm}",
                            bt.receiver)
        if st.filled.any():
            raise MeshError("unresolved-flag", f"chip {bt.receiver} received {bt.dest} halo of map {bt.fm} twice",
                            bt.receiver)
        st.data[...] = bt.data
        st.filled[...] = True


def _expected(pos, halo: Halo, mesh: MeshConfig) -> list[tuple[str, tuple[int, int]]]:
    """Halo pieces a chip must receive, with their (rows, cols) extents."""
    t, b, l, r = halo.top, halo.bottom, halo.left, halo.right
    has = {d: _neighbor(pos, d, mesh) is not None for d in _STEP}
    out = []
    for where, ok, hw in (("top", has["N"], (t, None)), ("bottom", has["S"], (b, None)),
                          ("left", has["W"], (None, l)), ("right", has["E"], (None, r))):
        if ok and (hw[0] or hw[1]):
            out.append((where, hw))
    for where, v, h, hw in (("nw", "N", "W", (t, l)), ("ne", "N", "E", (t, r)),
                            ("sw", "S", "W", (b, l)), ("se", "S", "E", (b, r))):
        if has[v] and has[h] and hw[0] and hw[1]:
            out.append((where, hw))
    return out


def interface_peak_entries(slice_hw: tuple[int, int], halo: Halo, n_out: int, cfg: ChipConfig) -> int:
    """Largest number of pixels one border interface must buffer within one compute step.

    Each TPU on the chip edge produces up to C channel values per step; when the
    halo is deeper than a TPU tile, several TPU rows (columns) feed the same link.
    """
    R, W = slice_hw
    th, tw = -(-R // cfg.M), -(-W // cfg.N)
    ch = min(cfg.C, n_out)
    vert = max(halo.top, halo.bottom)
    horz = max(halo.left, halo.right)
    peak = 0
    if vert:
        peak = max(peak, -(-vert // th) * min(cfg.N, -(-W // tw)) * ch)
    if horz:
        peak = max(peak, -(-horz // tw) * min(cfg.M, -(-R // th)) * ch)
    return peak


def exchange_halos(chips: dict, fm: int, data: dict, halo: Halo, mesh: MeshConfig,
                   report: Optional[TrafficReport] = None) -> list[MessageBatch]:
    """Allocate receive buffers, send every border pixel once, relay corners, check all flags clear."""
    if halo.empty or (mesh.m == 1 and mesh.n == 1):
        return []
    for pos, chip in chips.items():
        n, R, W = data[pos].shape
        if max(halo.top, halo.bottom) > R or max(halo.left, halo.right) > W:
            raise MeshError("uneven-split", f"halo {halo} deeper than the {R}x{W} chip slice", pos)
        for where, (hh, hw) in _expected(pos, halo, mesh):
            shape = (n, hh if hh is not None else R, hw if hw is not None else W)
            chip.expect(fm, where, shape)
    batches = plan_exchange(fm, data, halo, mesh)
    deliver(chips, batches)
    for pos, chip in chips.items():
        for where, _ in _expected(pos, halo, mesh):
            st, _ = chip.store(fm, where)
            if not st.filled.all():
                raise MeshError("unresolved-flag", f"chip {pos}: {where} halo of map {fm} incomplete", pos)
    if report is not None:
        for bt in batches:
            report.add(bt)
    return batches


def halo_closed_form_pixels(shape, halo: Halo, mesh: MeshConfig) -> int:
    """Pixels exchanged for one feature map of global ``shape``, corner relays counted per hop.

    Each of the m-1 horizontal cuts carries t+b full-width rows, each of the n-1
    vertical cuts l+r full-height columns, and every cut crossing four corner blocks.
    """
    n, h, w = shape
    t, b, l, r = halo.top, halo.bottom, halo.left, halo.right
    edges = (mesh.m - 1) * w * (t + b) + (mesh.n - 1) * h * (l + r)
    corners = 2 * (mesh.m - 1) * (mesh.n - 1) * (t + b) * (l + r)
    return n * (edges + corners)


def halo_bits(net: NetworkGraph, mesh: MeshConfig) -> dict[int, int]:
    """Payload bits of halo exchange per feature map (closed form)."""
    if mesh.m == 1 and mesh.n == 1:
        return {}
    halos = fm_halos(net)
    return {fm: WORD_BITS * halo_closed_form_pixels(net.fm_shape(fm), h, mesh)
            for fm, h in halos.items() if not h.empty}


# -- whole-network run ---------------------------------------------------------------

def slice_network(net: NetworkGraph, mesh: MeshConfig) -> NetworkGraph:
    """Per-chip view of a network. Raises MeshError unless every map splits evenly."""
    n, h, w = net.input_shape
    if h % mesh.m or w % mesh.n:
        raise MeshError("uneven-split", f"input {h}x{w} does not split onto a {mesh.m}x{mesh.n} mesh")
    local = net.with_input_hw(h // mesh.m, w // mesh.n)
    for g, s, layer in zip(net.shapes(), local.shapes(), net.layers):
        if (s.h_out * mesh.m, s.w_out * mesh.n) != (g.h_out, g.w_out):
            raise MeshError("uneven-split", f"layer {g.index}: output {g.h_out}x{g.w_out} does not split evenly")
        if layer.pad != "same" and (layer.kh > 1 or layer.kw > 1):
            raise MeshError("uneven-split", f"layer {g.index}: unpadded {layer.kh}x{layer.kw} conv cannot be sliced")
    return local


class _ChipHalo:
    """Builds a layer's halo-extended input from FMM, border and corner memory."""

    def __init__(self, chip: ChipState, net: NetworkGraph, mesh: MeshConfig):
        self.chip, self.net, self.mesh = chip, net, mesh

    def __call__(self, i, layer, x):
        need = layer_halo(layer)
        src = self.net.source_of(i)
        n, R, W = x.shape
        t, b, l, r = need.top, need.bottom, need.left, need.right
        ext = np.zeros((n, t + R + b, l + W + r), dtype=np.float16)
        ext[:, t:t + R, l:l + W] = x
        if not need.empty:
            regions = (
                ("top", (0, t), (l, l + W)), ("bottom", (t + R, t + R + b), (l, l + W)),
                ("left", (t, t + R), (0, l)), ("right", (t, t + R), (l + W, l + W + r)),
                ("nw", (0, t), (0, l)), ("ne", (0, t), (l + W, l + W + r)),
                ("sw", (t + R, t + R + b), (0, l)), ("se", (t + R, t + R + b), (l + W, l + W + r)),
            )
            for where, rows, cols in regions:
                if rows[0] == rows[1] or cols[0] == cols[1]:
                    continue
                rr, cc = rows[1] - rows[0], cols[1] - cols[0]
                probe_y = rows[0] - t
                probe_x = cols[0] - l
                kind, _ = resolve_read(self.chip, src, 0, probe_y, probe_x, (R, W), self.mesh)
                if kind == "zero-pad":
                    continue
                st, _ = self.chip.store(src, where)
                _, sh, sw = st.data.shape
                # stored piece may be deeper than this layer needs; take the part adjacent to the slice
                ys = slice(sh - rr, sh) if where in ("top", "nw", "ne") else slice(0, rr) if where in ("bottom", "sw", "se") else slice(0, sh)
                xs = slice(sw - cc, sw) if where in ("left", "nw", "sw") else slice(0, cc) if where in ("right", "ne", "se") else slice(0, sw)
                if not st.filled[:, ys, xs].all():
                    raise MeshError("cm-miss" if where in CORNERS else "bm-miss",
                                    f"chip {self.chip.pos}: {where} halo of map {src} incomplete", self.chip.pos)
                ext[:, rows[0]:rows[1], cols[0]:cols[1]] = st.data[:, ys, xs]
        resolver = self._resolver(src, (R, W), t, l)
        return ext, t, l, resolver

    def _resolver(self, src, slice_hw, t, l):
        offset = self.chip.engine.state.live[self.chip.engine.fm_seg[src]].offset

        def resolve(c, ye, xe):
            kind, addr = resolve_read(self.chip, src, c, ye - t, xe - l, slice_hw, self.mesh)
            if kind == "zero-pad":
                return None
            if kind == "fmm":
                return "fmm-read", offset + addr
            return ("cm-read" if kind == "cm" else "bm-read"), addr
        return resolve


@dataclass
class MeshResult:
    output: FeatureMap
    traffic: TrafficReport
    chips: dict
    cycles: int


def run_mesh_network(net: NetworkGraph, params: Sequence[LayerParams], fm: FeatureMap, mesh: MeshConfig,
                     cfg: Optional[ChipConfig] = None, trace: bool = False,
                     check_capacity: bool = True) -> MeshResult:
    """Run a network on an m x n mesh; the reassembled output matches the single-chip engine bit for bit."""
    cfg = cfg or ChipConfig()
    local = slice_network(net, mesh)
    plan = plan_segments(local, cfg)
    halos = fm_halos(net)
    last_conv: dict[int, int] = {}
    for i in range(len(net.layers)):
        if not layer_halo(net.layers[i]).empty:
            last_conv[net.source_of(i)] = i
    tiles = tile_input(fm, mesh)
    chips = {}
    for pos in mesh.chips:
        chip = ChipState(pos, assign_chip_type(*pos, mesh.m, mesh.n))
        chip.engine = Engine(local, params, cfg, trace=trace, halo=_ChipHalo(chip, local, mesh), plan=plan)
        chip.engine.load_input(tiles.slices[pos])
        chips[pos] = chip
    report = TrafficReport(padding=tiles.pad)

    def exchange(fm_id: int) -> None:
        halo = halos[fm_id]
        data = {pos: ch.engine.read_fm(fm_id) for pos, ch in chips.items()}
        exchange_halos(chips, fm_id, data, halo, mesh, report)
        if not halo.empty and (mesh.m > 1 or mesh.n > 1):
            n_out = net.fm_shape(fm_id)[0]
            entries = interface_peak_entries(local.fm_shape(fm_id)[1:], halo, n_out, cfg)
            report.peak_interface_entries = max(report.peak_interface_entries, entries)
            if entries > cfg.M * cfg.C:
                raise MeshError("buffer-overflow",
                                f"map {fm_id}: {entries} pixels per step exceed the {cfg.M * cfg.C}-entry link buffer")

    exchange(INPUT_ID)
    for i in range(len(net.layers)):
        for chip in chips.values():
            chip.engine.step()
        # outputs stream to the neighbours while this layer's input halos are still held
        if i in last_conv:
            exchange(i)
        for chip in chips.values():
            if check_capacity:
                _check_capacity(chip, cfg)
        for fm_id, last in last_conv.items():
            if last == i:
                for chip in chips.values():
                    chip.release(fm_id)
    for chip in chips.values():
        report.bm_peak_bits = max(report.bm_peak_bits, WORD_BITS * chip.peak["bm"])
        report.cm_peak_bits = max(report.cm_peak_bits, WORD_BITS * chip.peak["cm"])
    out = untile({pos: ch.engine.read_fm(net.output_id) for pos, ch in chips.items()}, mesh)
    cycles = max(ch.engine.state.cycle for ch in chips.values())
    return MeshResult(out, report, chips, cycles)


def _check_capacity(chip: ChipState, cfg: ChipConfig) -> None:
    half_words = cfg.bm_bits // (2 * WORD_BITS)
    for half in ("vertical", "horizontal"):
        if chip.words[half] > half_words:
            raise MeshError("bm-overflow", f"chip {chip.pos}: {half} border memory needs {chip.words[half]} words, "
                            f"has {half_words}", chip.pos)
    if chip.words["cm"] * WORD_BITS > cfg.cm_bits:
        raise MeshError("cm-overflow", f"chip {chip.pos}: corner memory needs {chip.words['cm']} words", chip.pos)

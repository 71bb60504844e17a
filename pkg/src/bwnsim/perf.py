"""Analytic cycles, utilization, I/O volume and energy.

Cycle counts use the same per-layer formula as the engine. I/O compares the
feature-map-stationary dataflow (weights streamed, maps stay on chip) with a
weight-stationary baseline that streams every intermediate map off and back on.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from .engine import layer_cycles
from .mesh import MeshConfig, halo_closed_form_pixels
from .network import ChipConfig, LayerDescriptor, NetworkGraph, count_ops, peak_throughput, weight_bits
from .planner import WORD_BITS, fm_halos

IO_JOULES_PER_BIT = 21e-12


@dataclass(frozen=True)
class OperatingPoint:
    label: str
    vdd: float
    frequency: float
    power: float

    def __post_init__(self):
        if self.frequency <= 0 or self.power <= 0:
            raise ValueError("frequency and power must be positive")


OPERATING_POINTS = {
    op.label: op for op in (
        OperatingPoint("0.5V", 0.5, 57.42e6, 21.57e-3),
        OperatingPoint("0.65V", 0.65, 135.15e6, 71.65e-3),
        OperatingPoint("0.8V", 0.8, 158.2e6, 133.61e-3),
        OperatingPoint("0.9V", 0.9, 163.28e6, 179.12e-3),
    )
}


def conv_cycles(layer: LayerDescriptor, n_in: int, h_out: int, w_out: int, cfg: Optional[ChipConfig] = None) -> int:
    return layer_cycles(layer, n_in, h_out, w_out, cfg or ChipConfig())[0]


def elementwise_cycles(layer: LayerDescriptor, n_in: int, h_out: int, w_out: int,
                       cfg: Optional[ChipConfig] = None) -> int:
    return layer_cycles(layer, n_in, h_out, w_out, cfg or ChipConfig())[1]


@dataclass
class LayerPerf:
    index: int
    conv_cycles: int
    epilogue_cycles: int
    ops: int

    @property
    def cycles(self) -> int:
        return self.conv_cycles + self.epilogue_cycles


@dataclass
class IoBits:
    input_fm: int = 0
    weights: int = 0
    output_fm: int = 0
    halo: int = 0
    intermediate_fm: int = 0

    @property
    def total(self) -> int:
        return self.input_fm + self.weights + self.output_fm + self.halo + self.intermediate_fm


@dataclass
class PerfReport:
    network: str
    mesh: tuple[int, int]
    layers: list[LayerPerf]
    cycles: int
    conv_cycles: int
    epilogue_cycles: int
    ops: int
    peak_ops_per_cycle: int
    io_bits: IoBits = field(default_factory=IoBits)
    operating_point: Optional[OperatingPoint] = None
    core_energy: float = 0.0
    io_energy: float = 0.0

    @property
    def ops_per_cycle(self) -> float:
        return self.ops / self.cycles if self.cycles else 0.0

    @property
    def utilization(self) -> float:
        return self.ops / (self.cycles * self.peak_ops_per_cycle) if self.cycles else 0.0

    @property
    def total_energy(self) -> float:
        return self.core_energy + self.io_energy

    @property
    def fps(self) -> float:
        if not self.operating_point or not self.cycles:
            return 0.0
        return self.operating_point.frequency / self.cycles

    @property
    def ops_per_second(self) -> float:
        return self.ops * self.fps

    @property
    def ops_per_joule(self) -> float:
        return self.ops / self.total_energy if self.total_energy else 0.0

    def to_dict(self) -> dict:
        return {
            "network": self.network,
            "mesh": list(self.mesh),
            "cycles": self.cycles,
            "conv_cycles": self.conv_cycles,
            "epilogue_cycles": self.epilogue_cycles,
            "ops": self.ops,
            "ops_per_cycle": self.ops_per_cycle,
            "peak_ops_per_cycle": self.peak_ops_per_cycle,
            "utilization": self.utilization,
            "io_bits": {**asdict(self.io_bits), "total": self.io_bits.total},
            "operating_point": asdict(self.operating_point) if self.operating_point else None,
            "core_energy_j": self.core_energy,
            "io_energy_j": self.io_energy,
            "total_energy_j": self.total_energy,
            "fps": self.fps,
            "ops_per_second": self.ops_per_second,
            "ops_per_joule": self.ops_per_joule,
            "layers": [{**asdict(l), "cycles": l.cycles} for l in self.layers],
        }


def _chip_shapes(net: NetworkGraph, mesh: MeshConfig):
    """Per-chip layer shapes: each chip computes a ceil-divided slice of every map."""
    return [(s.n_in, -(-s.h_out // mesh.m), -(-s.w_out // mesh.n)) for s in net.shapes()]


def network_cycles(net: NetworkGraph, cfg: Optional[ChipConfig] = None,
                   mesh: Optional[MeshConfig] = None) -> PerfReport:
    """Cycles per chip (chips run in lock step) and system-wide utilization."""
    cfg = cfg or ChipConfig()
    mesh = mesh or MeshConfig()
    ops = count_ops(net)
    layers = []
    for i, (layer, (n_in, h, w)) in enumerate(zip(net.layers, _chip_shapes(net, mesh))):
        conv, epi = layer_cycles(layer, n_in, h, w, cfg)
        layers.append(LayerPerf(i, conv, epi, ops.layers[i].total))
    conv = sum(l.conv_cycles for l in layers)
    epi = sum(l.epilogue_cycles for l in layers)
    return PerfReport(net.name, (mesh.m, mesh.n), layers, conv + epi, conv, epi, ops.total,
                      peak_throughput(cfg) * mesh.m * mesh.n)


def _fm_bits(net: NetworkGraph, fm: int) -> int:
    return WORD_BITS * math.prod(net.fm_shape(fm))


def halo_payload_bits(net: NetworkGraph, mesh: MeshConfig) -> int:
    if mesh.m == 1 and mesh.n == 1:
        return 0
    return sum(WORD_BITS * halo_closed_form_pixels(net.fm_shape(fm), h, mesh)
               for fm, h in fm_halos(net).items() if not h.empty)


def io_bits_fm_stationary(net: NetworkGraph, mesh: Optional[MeshConfig] = None) -> IoBits:
    """Input map in, weights once per system, output map out, plus halo payload between chips."""
    mesh = mesh or MeshConfig()
    return IoBits(
        input_fm=WORD_BITS * math.prod(net.input_shape),
        weights=weight_bits(net),
        output_fm=_fm_bits(net, net.output_id),
        halo=halo_payload_bits(net, mesh),
    )


def io_bits_weight_stationary(net: NetworkGraph, crossings: float = 2.0) -> IoBits:
    """Baseline: weights once, network input and output once, every other map ``crossings`` times."""
    out = net.output_id
    inter = sum(_fm_bits(net, i) for i in range(len(net.layers)) if i != out)
    return IoBits(
        input_fm=WORD_BITS * math.prod(net.input_shape),
        weights=weight_bits(net),
        output_fm=_fm_bits(net, out) if net.layers else 0,
        intermediate_fm=round(crossings * inter),
    )


def energy(net: NetworkGraph, op: OperatingPoint, mesh: Optional[MeshConfig] = None,
           cfg: Optional[ChipConfig] = None) -> PerfReport:
    """Core energy = cycles / f * P per chip; I/O energy at 21 pJ/bit, halo bits included."""
    mesh = mesh or MeshConfig()
    rep = network_cycles(net, cfg, mesh)
    rep.operating_point = op
    rep.io_bits = io_bits_fm_stationary(net, mesh)
    rep.core_energy = rep.cycles / op.frequency * op.power * mesh.m * mesh.n
    rep.io_energy = IO_JOULES_PER_BIT * rep.io_bits.total if net.layers else 0.0
    return rep


def mesh_for_resolution(resolution: int, base: int = 224) -> MeshConfig:
    """Smallest square mesh whose chips each hold at most a ``base`` x ``base`` image."""
    k = max(1, -(-resolution // base))
    return MeshConfig(k, k)


@dataclass
class SweepRow:
    resolution: int
    mesh: str
    io_bits_ws: int
    io_bits_fms: int

    @property
    def ratio(self) -> float:
        return self.io_bits_ws / self.io_bits_fms if self.io_bits_fms else 0.0


def sweep(builder, resolutions: Iterable[int], crossings: float = 2.0, base: int = 224) -> list[SweepRow]:
    """I/O of both dataflows over image resolutions; the mesh grows as the image outgrows one chip."""
    rows = []
    for res in resolutions:
        net = builder(res)
        mesh = mesh_for_resolution(res, base)
        if not net.layers:
            continue
        rows.append(SweepRow(res, f"{mesh.m}x{mesh.n}",
                             io_bits_weight_stationary(net, crossings).total,
                             io_bits_fm_stationary(net, mesh).total))
    return rows

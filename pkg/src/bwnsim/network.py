"""Network, tensor and chip descriptions.

Feature maps are identified by integer ids: ``-1`` is the network input and
``i >= 0`` is the output of layer ``i``. A layer reads its convolution input
from ``source`` (default: the previous feature map) and may add a ``bypass``
feature map in its epilogue.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .half import as_half_array

INPUT_ID = -1
SUPPORTED_KERNELS = (1, 3)
SUPPORTED_STRIDES = (1, 2)
PAD_MODES = ("same", "none")


class NetworkError(ValueError):
    """Invalid network description. ``code`` is a stable machine-readable tag."""

    def __init__(self, code: str, message: str, layer: Optional[int] = None):
        super().__init__(message)
        self.code = code
        self.layer = layer


@dataclass(frozen=True)
class ChipConfig:
    M: int = 7
    N: int = 7
    C: int = 16
    fmm_words: int = 400 * 1024
    wbuf_bits: int = 512 * 3 * 3 * 16
    bm_bits: int = 4 * 1024 * 112
    cm_bits: int = 4096 * 16

    def __post_init__(self):
        for name in ("M", "N", "C", "fmm_words", "wbuf_bits", "bm_bits", "cm_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"ChipConfig.{name} must be >= 1")

    @property
    def tiles(self) -> int:
        return self.M * self.N

    def cin_chunk(self, kh: int, kw: int) -> int:
        """Input channels whose kernels fit the weight buffer for one output tile."""
        return max(1, self.wbuf_bits // (self.C * kh * kw))

    def unbounded(self) -> "ChipConfig":
        """Same datapath with effectively unlimited memories (the ideal single chip)."""
        big = 1 << 60
        return replace(self, fmm_words=big, bm_bits=big, cm_bits=big)


def peak_throughput(cfg: ChipConfig) -> int:
    """Peak ops per cycle: one add and one (sign) multiply per tile processing unit."""
    return 2 * cfg.M * cfg.N * cfg.C


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Channel-major binary16 tensor of shape (n, h, w)."""

    data: np.ndarray

    def __post_init__(self):
        arr = as_half_array(self.data, name="feature map")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"feature map must have shape (n, h, w) with all dims >= 1, got {arr.shape}")
        arr = np.array(arr, dtype=np.float16, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def bits(self) -> np.ndarray:
        return self.data.view(np.uint16)

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits(), other.bits())

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryKernelSet:
    """Sign bits of a convolution, shape (n_out, n_in, kh, kw); True is +1, False is -1.

    For grouped convolutions ``n_in`` is the number of input channels per group.
    """

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 4:
            raise ValueError("kernel bits must have shape (n_out, n_in, kh, kw)")
        if arr.shape[2] not in SUPPORTED_KERNELS or arr.shape[3] not in SUPPORTED_KERNELS:
            raise ValueError(f"kernel size {arr.shape[2]}x{arr.shape[3]} is not supported")
        arr = np.array(arr != 0, dtype=bool, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def n_out(self) -> int:
        return self.bits.shape[0]

    @property
    def n_in(self) -> int:
        return self.bits.shape[1]

    @property
    def kh(self) -> int:
        return self.bits.shape[2]

    @property
    def kw(self) -> int:
        return self.bits.shape[3]

    def signs(self) -> np.ndarray:
        return np.where(self.bits, 1, -1).astype(np.int8)

    def __eq__(self, other):
        if not isinstance(other, BinaryKernelSet):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class LayerDescriptor:
    n_out: int
    kh: int = 3
    kw: int = 3
    stride: int = 1
    pad: str = "same"
    groups: int = 1
    scale: bool = False
    bias: bool = False
    bypass: Optional[int] = None
    relu: bool = False
    source: Optional[int] = None

    def pad_amounts(self) -> tuple[int, int]:
        if self.pad == "same":
            return self.kh // 2, self.kw // 2
        return 0, 0

    def output_hw(self, h_in: int, w_in: int) -> tuple[int, int]:
        ph, pw = self.pad_amounts()
        h_out = (h_in + 2 * ph - self.kh) // self.stride + 1
        w_out = (w_in + 2 * pw - self.kw) // self.stride + 1
        return h_out, w_out

    @property
    def epilogue_stages(self) -> int:
        return int(self.scale) + int(self.bias) + int(self.bypass is not None)


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Trained values of one layer: kernel bits plus optional scale and bias vectors."""

    kernel: BinaryKernelSet
    scale: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("scale", "bias"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(as_half_array(val, name=name), dtype=np.float16).reshape(-1)
                if arr.size != self.kernel.n_out:
                    raise ValueError(f"{name} needs {self.kernel.n_out} values, got {arr.size}")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, LayerParams):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a.view(np.uint16), b.view(np.uint16))

        return self.kernel == other.kernel and same(self.scale, other.scale) and same(self.bias, other.bias)

    __hash__ = None


@dataclass(frozen=True)
class LayerShape:
    index: int
    source: int
    n_in: int
    h_in: int
    w_in: int
    n_out: int
    h_out: int
    w_out: int

    @property
    def in_words(self) -> int:
        return self.n_in * self.h_in * self.w_in

    @property
    def out_words(self) -> int:
        return self.n_out * self.h_out * self.w_out


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    layer: Optional[int]
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_for_errors(self) -> None:
        if self.issues:
            first = self.issues[0]
            raise NetworkError(first.code, first.message, first.layer)


@dataclass(frozen=True)
class NetworkGraph:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerDescriptor, ...] = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def source_of(self, i: int) -> int:
        src = self.layers[i].source
        return i - 1 if src is None else src

    def bypass_edges(self) -> list[tuple[int, int]]:
        return [(l.bypass, i) for i, l in enumerate(self.layers) if l.bypass is not None]

    def with_input_hw(self, h: int, w: int) -> "NetworkGraph":
        return replace(self, input_shape=(self.input_shape[0], h, w))

    def fm_shape(self, fm: int) -> tuple[int, int, int]:
        if fm == INPUT_ID:
            return self.input_shape
        s = self.shapes()[fm]
        return s.n_out, s.h_out, s.w_out

    def shapes(self) -> list[LayerShape]:
        """Per-layer geometry. Raises NetworkError on inconsistent graphs."""
        return list(self._shapes)

    @cached_property
    def _shapes(self) -> tuple[LayerShape, ...]:
        validate_network(self).raise_for_errors()
        return tuple(_derive_shapes(self))

    def consumers(self, fm: int) -> list[int]:
        """Layers that read ``fm`` as their convolution input."""
        return [i for i in range(len(self.layers)) if self.source_of(i) == fm]

    def readers(self, fm: int) -> list[int]:
        """Layers that read ``fm`` either as input or as bypass."""
        return [i for i, l in enumerate(self.layers) if self.source_of(i) == fm or l.bypass == fm]

    @property
    def output_id(self) -> int:
        return len(self.layers) - 1 if self.layers else INPUT_ID


def _derive_shapes(net: NetworkGraph) -> list[LayerShape]:
    shapes: list[LayerShape] = []
    fm_shapes = {INPUT_ID: net.input_shape}
    for i, layer in enumerate(net.layers):
        src = net.source_of(i)
        n_in, h_in, w_in = fm_shapes[src]
        h_out, w_out = layer.output_hw(h_in, w_in)
        shapes.append(LayerShape(i, src, n_in, h_in, w_in, layer.n_out, h_out, w_out))
        fm_shapes[i] = (layer.n_out, h_out, w_out)
    return shapes


def validate_network(net: NetworkGraph) -> ValidationReport:
    report = ValidationReport()

    def fail(code, i, msg):
        report.issues.append(ValidationIssue(code, i, msg))

    n, h, w = net.input_shape
    if min(n, h, w) < 1:
        fail("shape-mismatch", None, f"input shape {net.input_shape} must be positive")
        return report
    fm_shapes = {INPUT_ID: (n, h, w)}
    for i, layer in enumerate(net.layers):
        if layer.kh not in SUPPORTED_KERNELS or layer.kw not in SUPPORTED_KERNELS:
            msg = f"layer {i}: {layer.kh}x{layer.kw} kernels are unsupported (only 1x1 and 3x3)"
            if max(layer.kh, layer.kw) > 3:
                msg += "; large first-layer kernels must be computed off-chip before loading the feature map"
            fail("unsupported-kernel", i, msg)
        if layer.stride not in SUPPORTED_STRIDES:
            fail("unsupported-stride", i, f"layer {i}: stride {layer.stride} not in {SUPPORTED_STRIDES}")
        if layer.pad not in PAD_MODES:
            fail("unsupported-padding", i, f"layer {i}: pad mode {layer.pad!r} not in {PAD_MODES}")
        if layer.n_out < 1 or layer.groups < 1:
            fail("shape-mismatch", i, f"layer {i}: n_out and groups must be >= 1")
            return report
        src = net.source_of(i)
        if src >= i or src < INPUT_ID:
            fail("cyclic-bypass", i, f"layer {i}: input feature map {src} is not produced earlier")
            return report
        n_in, h_in, w_in = fm_shapes[src]
        if n_in % layer.groups or layer.n_out % layer.groups:
            fail("shape-mismatch", i, f"layer {i}: channels {n_in}->{layer.n_out} not divisible by groups={layer.groups}")
        if report.issues:
            return report
        h_out, w_out = layer.output_hw(h_in, w_in)
        if h_out < 1 or w_out < 1:
            fail("shape-mismatch", i, f"layer {i}: input {h_in}x{w_in} too small for the kernel")
            return report
        fm_shapes[i] = (layer.n_out, h_out, w_out)
        if layer.bypass is not None:
            if layer.bypass >= i or layer.bypass < INPUT_ID:
                fail("cyclic-bypass", i, f"layer {i}: bypass source {layer.bypass} is not an earlier feature map")
                return report
            if fm_shapes[layer.bypass] != fm_shapes[i]:
                fail("shape-mismatch", i,
                     f"layer {i}: bypass shape {fm_shapes[layer.bypass]} != output shape {fm_shapes[i]}")
                return report
    return report


@dataclass(frozen=True)
class LayerOps:
    conv: int
    scale: int
    bias: int
    bypass: int

    @property
    def total(self) -> int:
        return self.conv + self.scale + self.bias + self.bypass


@dataclass(frozen=True)
class OpCounts:
    layers: tuple[LayerOps, ...]

    def _sum(self, attr: str) -> int:
        return sum(getattr(l, attr) for l in self.layers)

    @property
    def conv(self) -> int:
        return self._sum("conv")

    @property
    def scale(self) -> int:
        return self._sum("scale")

    @property
    def bias(self) -> int:
        return self._sum("bias")

    @property
    def bypass(self) -> int:
        return self._sum("bypass")

    @property
    def total(self) -> int:
        return self._sum("total")


def count_ops(net: NetworkGraph) -> OpCounts:
    """Two ops per MAC for convolutions, one op per output value per epilogue stage."""
    per_layer = []
    for layer, s in zip(net.layers, net.shapes()):
        pixels = s.n_out * s.h_out * s.w_out
        conv = 2 * (s.n_in // layer.groups) * layer.kh * layer.kw * pixels
        per_layer.append(LayerOps(
            conv=conv,
            scale=pixels if layer.scale else 0,
            bias=pixels if layer.bias else 0,
            bypass=pixels if layer.bypass is not None else 0,
        ))
    return OpCounts(tuple(per_layer))


def weight_bits(net: NetworkGraph) -> int:
    """Binary kernel bits streamed for one inference."""
    return sum((s.n_in // l.groups) * l.kh * l.kw * s.n_out for l, s in zip(net.layers, net.shapes()))


def random_params(net: NetworkGraph, rng: np.random.Generator) -> list[LayerParams]:
    """Random +-1 kernels with fan-in normalised scales so activations stay O(1)."""
    params = []
    for layer, s in zip(net.layers, net.shapes()):
        cpg = s.n_in // layer.groups
        bits = rng.integers(0, 2, size=(layer.n_out, cpg, layer.kh, layer.kw), dtype=np.uint8).astype(bool)
        scale = bias = None
        if layer.scale:
            fan_in = cpg * layer.kh * layer.kw
            scale = (rng.uniform(0.5, 1.5, layer.n_out) / np.sqrt(fan_in)).astype(np.float16)
        if layer.bias:
            bias = rng.uniform(-0.25, 0.25, layer.n_out).astype(np.float16)
        params.append(LayerParams(BinaryKernelSet(bits), scale, bias))
    return params


def random_feature_map(shape: Sequence[int], rng: np.random.Generator) -> FeatureMap:
    return FeatureMap(rng.uniform(-1.0, 1.0, size=tuple(shape)).astype(np.float16))


def check_params(net: NetworkGraph, params: Sequence[LayerParams]) -> None:
    if len(params) != len(net.layers):
        raise NetworkError("shape-mismatch", f"{len(params)} parameter sets for {len(net.layers)} layers")
    for i, (layer, s, p) in enumerate(zip(net.layers, net.shapes(), params)):
        k = p.kernel
        expect = (layer.n_out, s.n_in // layer.groups, layer.kh, layer.kw)
        if (k.n_out, k.n_in, k.kh, k.kw) != expect:
            raise NetworkError("shape-mismatch", f"layer {i}: kernel shape {k.bits.shape} != {expect}", i)
        if layer.scale and p.scale is None:
            raise NetworkError("shape-mismatch", f"layer {i}: scale enabled but no scale values", i)
        if layer.bias and p.bias is None:
            raise NetworkError("shape-mismatch", f"layer {i}: bias enabled but no bias values", i)

"""Bundled network bodies.

Each builder returns the convolutional body that runs on the accelerator.
Large-kernel stems are left out; they run off-chip. The same networks ship as
JSON fixtures under ``bwnsim/data`` (regenerate with ``python -m bwnsim.zoo``).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .formats import network_from_dict, network_to_dict
from .network import LayerDescriptor, NetworkGraph

BN = dict(scale=True, bias=True)

NOTES = {
    "resnet34": "ResNet-34 (He et al. 2016) conv2_x..conv5_x, basic blocks [3,4,6,3]. "
                "7x7 stem and max-pool run off-chip; input is the 64-channel stem output. "
                "Down-sampling blocks use a 1x1 stride-2 projection shortcut. Batch norm merged into scale+bias.",
    "resnet50": "ResNet-50 (He et al. 2016) conv2_x..conv5_x, bottleneck blocks [3,4,6,3], stride on the "
                "first 1x1 conv of each down-sampling block, 1x1 projection shortcuts. Stem runs off-chip.",
    "shufflenet": "ShuffleNet 1x, g=8 (Zhang et al. 2018) stages 2-4, repeats [4,8,4], widths 384/768/1536. "
                  "Stem runs off-chip. Channel shuffle is a permutation folded into weights. The pooled "
                  "shortcut and concatenation of stride-2 units are not supported; those units instead let the "
                  "last grouped 1x1 conv produce all output channels.",
    "yolov3": "YOLOv3 (Redmon and Farhadi 2018): Darknet-53 backbone plus the three detection heads. "
              "Upsampling and route concatenation are not supported; heads two and three read the backbone "
              "feature map of their scale directly, so their first 1x1 conv sees 512 and 256 instead of 768 "
              "and 384 channels. Leaky ReLU is modelled as ReLU. 255 = 3*(80+5) output channels.",
}


class _Builder:
    def __init__(self, shape):
        self.shape = tuple(shape)
        self.layers: list[LayerDescriptor] = []

    @property
    def last(self) -> int:
        return len(self.layers) - 1

    def add(self, n_out, k=3, stride=1, groups=1, relu=True, bypass=None, source=None, **epi) -> int:
        epi = epi or BN
        self.layers.append(LayerDescriptor(n_out=n_out, kh=k, kw=k, stride=stride, groups=groups,
                                           relu=relu, bypass=bypass, source=source, **epi))
        return self.last

    def build(self, name) -> NetworkGraph:
        return NetworkGraph(self.shape, tuple(self.layers), name=name)


def resnet34_body(resolution: int = 224) -> NetworkGraph:
    b = _Builder((64, resolution // 4, resolution // 4))
    x = -1
    for stage, (blocks, ch) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512))):
        for blk in range(blocks):
            if stage > 0 and blk == 0:
                a = b.add(ch, 3, stride=2, source=x)
                proj = b.add(ch, 1, stride=2, relu=False, source=x)
                x = b.add(ch, 3, source=a, bypass=proj)
            else:
                a = b.add(ch, 3, source=x)
                x = b.add(ch, 3, source=a, bypass=x)
    return b.build("resnet34")


def resnet50_body(resolution: int = 224) -> NetworkGraph:
    b = _Builder((64, resolution // 4, resolution // 4))
    x = -1
    for stage, (blocks, ch) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512))):
        for blk in range(blocks):
            first = blk == 0
            s = 2 if stage > 0 and first else 1
            a = b.add(ch, 1, stride=s, source=x)
            if first:
                proj = b.add(4 * ch, 1, stride=s, relu=False, source=x)
            mid = b.add(ch, 3, source=a)
            x = b.add(4 * ch, 1, source=mid, bypass=proj if first else x)
    return b.build("resnet50")


def shufflenet_body(resolution: int = 224, groups: int = 8) -> NetworkGraph:
    b = _Builder((24, resolution // 4, resolution // 4))
    x = -1
    for stage, (repeats, width) in enumerate(zip((4, 8, 4), (384, 768, 1536))):
        mid = width // 4
        for unit in range(repeats):
            g1 = 1 if stage == 0 and unit == 0 else groups
            stride = 2 if unit == 0 else 1
            a = b.add(mid, 1, groups=g1, source=x)
            dw = b.add(mid, 3, stride=stride, groups=mid, relu=False, source=a)
            if unit == 0:
                x = b.add(width, 1, groups=groups, source=dw)
            else:
                x = b.add(width, 1, groups=groups, source=dw, bypass=x)
    return b.build("shufflenet")


def yolov3_body(resolution: int = 320, classes: int = 80) -> NetworkGraph:
    b = _Builder((3, resolution, resolution))
    det = 3 * (classes + 5)
    x = b.add(32, 3)
    taps = []
    for repeats, ch in zip((1, 2, 8, 8, 4), (64, 128, 256, 512, 1024)):
        x = b.add(ch, 3, stride=2)
        for _ in range(repeats):
            a = b.add(ch // 2, 1, source=x)
            x = b.add(ch, 3, source=a, bypass=x)
        taps.append(x)
    sources = (taps[4], taps[3], taps[2])
    for head, (src, ch) in enumerate(zip(sources, (512, 256, 128))):
        y = src
        for _ in range(3):
            y = b.add(ch, 1, source=y)
            y = b.add(2 * ch, 3)
        route = y - 1
        if head < 2:
            b.add(ch // 2, 1, source=route)
        b.add(det, 1, relu=False, source=y, scale=False, bias=True)
    return b.build("yolov3")


BUILDERS = {
    "resnet34": (resnet34_body, 224),
    "resnet50": (resnet50_body, 224),
    "shufflenet": (shufflenet_body, 224),
    "yolov3": (yolov3_body, 320),
}


def fixture_names() -> list[str]:
    return sorted(BUILDERS)


def load_fixture(name: str) -> NetworkGraph:
    """Load a bundled network description by name."""
    if name not in BUILDERS:
        raise KeyError(f"unknown network {name!r}; bundled: {', '.join(fixture_names())}")
    text = resources.files("bwnsim").joinpath("data").joinpath(f"{name}.json").read_text()
    net, _ = network_from_dict(json.loads(text))
    return net


def write_fixtures(directory) -> None:
    directory = Path(directory)
    for name, (build, res) in BUILDERS.items():
        doc = network_to_dict(build(res), notes=NOTES[name])
        doc["resolution"] = res
        (directory / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    write_fixtures(Path(__file__).parent / "data")

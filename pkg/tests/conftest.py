import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bwnsim.network import BinaryKernelSet, LayerDescriptor, LayerParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


def random_layer_params(rng, layer: LayerDescriptor, n_in: int) -> LayerParams:
    cpg = n_in // layer.groups
    bits = rng.integers(0, 2, size=(layer.n_out, cpg, layer.kh, layer.kw)).astype(bool)
    scale = rng.uniform(0.5, 1.5, layer.n_out).astype(np.float16) if layer.scale else None
    bias = rng.uniform(-0.5, 0.5, layer.n_out).astype(np.float16) if layer.bias else None
    return LayerParams(BinaryKernelSet(bits), scale, bias)

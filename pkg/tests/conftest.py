import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gradings.flows import MafLayer

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def randomize(obj, rng, scale=0.5):
    """Overwrite every parameter of a layer/model with N(0, scale^2); scale bounds drawn in [0.5, 1.5]."""
    for p in obj.parameters():
        p.data = rng.normal(0.0, scale, p.data.shape)
    for layer in getattr(obj, "layers", [obj]):
        if isinstance(layer, MafLayer):
            layer = layer.conditioner
        layer = getattr(layer, "coupling", layer)
        layer.scale.bound.data = rng.uniform(0.5, 1.5, layer.scale.bound.data.shape)
    return obj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

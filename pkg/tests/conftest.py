import numpy as np
import pytest

from fptx import net


def random_config(rng, d=4, hidden=6) -> net.TransformerConfig:
    return net.TransformerConfig(
        rng.standard_normal((hidden, d)), rng.standard_normal(hidden),
        rng.standard_normal((d, hidden)), rng.standard_normal(d),
        rng.standard_normal((d, d)), rng.standard_normal((d, d)),
        rng.standard_normal((d, d)))


def positive_config(rng, d=4, hidden=6) -> net.TransformerConfig:
    """All-positive weights: every cancellation factor equals one."""
    u = lambda *shape: rng.random(shape) + 0.1
    return net.TransformerConfig(u(hidden, d), u(hidden), u(d, hidden), u(d),
                                 u(d, d), u(d, d), u(d, d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

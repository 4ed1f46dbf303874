import numpy as np
import pytest
from hypothesis import settings

from intelligent_trainer.numerics import RngStream

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


class ScriptedRng(RngStream):
    """RngStream whose ``uniform`` replays a fixed script; everything else is seeded."""

    def __init__(self, draws, seed=0):
        super().__init__(seed)
        self.draws = list(draws)
        self.calls = 0

    def uniform(self) -> float:
        v = self.draws[self.calls % len(self.draws)]
        self.calls += 1
        return float(v)


@pytest.fixture
def rng():
    return RngStream(1234)


def finite_difference(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g

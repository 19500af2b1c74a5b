import random
from fractions import Fraction

import pytest
from hypothesis import strategies as st

from rfsplit import LayerSpec, NetworkModel, validate_model, vgg16


def random_model(rng: random.Random, max_layers: int = 10, dense: bool = False) -> NetworkModel:
    """A valid random conv/pool stack with k<=7, s<=3, p<=3."""
    while True:
        size = rng.randint(8, 64)
        channels = rng.randint(1, 8)
        layers, cur, c = [], size, channels
        for _ in range(rng.randint(1, max_layers)):
            k, s, p = rng.randint(1, 7), rng.randint(1, 3), rng.randint(0, 3)
            if (cur + 2 * p - k) // s + 1 < 1:
                continue
            if rng.random() < 0.3:
                layers.append(LayerSpec.pool(k, s, p, c))
            else:
                c_out = rng.randint(1, 16)
                layers.append(LayerSpec.conv(k, s, p, c, c_out))
                c = c_out
            cur = layers[-1].out_size(cur)
        if not layers:
            continue
        if dense:
            layers.append(LayerSpec.dense(cur * cur * c, rng.randint(2, 20)))
        return validate_model(NetworkModel(size, channels, tuple(layers)))


def random_ratios(rng: random.Random, k: int, allow_zero: bool = True) -> tuple[Fraction, ...]:
    while True:
        w = [rng.randint(0 if allow_zero else 1, 5) for _ in range(k)]
        if sum(w):
            return tuple(Fraction(x, sum(w)) for x in w)


@st.composite
def models(draw, max_layers=10):
    return random_model(random.Random(draw(st.integers(0, 2**32 - 1))), max_layers)


@pytest.fixture(scope="session")
def vgg():
    return vgg16()


def conv_stack(size, channels, specs):
    """Model from ``[(k, s, p, c_out) | ("pool", k, s, p)]`` with chained channels."""
    layers, c = [], channels
    for spec in specs:
        if spec[0] == "pool":
            layers.append(LayerSpec.pool(*spec[1:], c))
        else:
            k, s, p, c_out = spec
            layers.append(LayerSpec.conv(k, s, p, c, c_out))
            c = c_out
    return validate_model(NetworkModel(size, channels, tuple(layers)))


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

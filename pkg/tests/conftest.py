import numpy as np
import pytest
from hypothesis import strategies as st

from nested_markov.cadmg import Cadmg, read_graph
from nested_markov.graphs import SOURCES

EXTRA_SOURCES = {
    # X -> M -> Y with X <-> Y
    "front_door": """
        random X M Y
        X -> M
        M -> Y
        X <-> Y
    """,
    "five": """
        random a b c d e
        a -> b
        b -> c
        c -> d
        a -> e
        a <-> c
        b <-> d
        d <-> e
    """,
}

FIXTURE_NAMES = ["verma", "conditional", "iv", "chain_bow", "wls_a", "wls_b", "wls_full",
                 "bidirected_pair", "front_door", "five"]


def fixture_graph(name: str) -> Cadmg:
    return read_graph(SOURCES.get(name) or EXTRA_SOURCES[name])


@pytest.fixture(params=FIXTURE_NAMES)
def fixture(request):
    return request.param, fixture_graph(request.param)


@st.composite
def cadmgs(draw, max_random=6, max_fixed=2, max_total=7):
    """Random CADMGs; vertex index order is a topological order."""
    n = draw(st.integers(1, max_random))
    m = draw(st.integers(0, min(max_fixed, max_total - n)))
    fixed = [f"w{i}" for i in range(m)]
    random = [f"v{i}" for i in range(n)]
    directed = []
    for i in range(n):
        for j in range(i + 1, n):
            if draw(st.booleans()):
                directed.append((random[i], random[j]))
    for w in fixed:
        kids = [v for v in random if draw(st.booleans())]
        if not kids:
            kids = [random[draw(st.integers(0, n - 1))]]
        directed += [(w, v) for v in kids]
    bidirected = [(random[i], random[j]) for i in range(n) for j in range(i + 1, n)
                  if draw(st.integers(0, 2)) == 0]
    return Cadmg(random, fixed, directed, bidirected)


def positive_kernel_table(rng: np.random.Generator, shape, n_random: int) -> np.ndarray:
    """Random strictly positive table normalized over the last ``n_random`` axes."""
    t = rng.uniform(0.05, 1.0, size=shape)
    axes = tuple(range(len(shape) - n_random, len(shape)))
    return t / t.sum(axis=axes, keepdims=True)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

"""Named example graphs, available to the CLI as ``builtin:<name>``."""

from __future__ import annotations

from .cadmg import Cadmg, read_graph

SOURCES = {
    # X -> E -> M -> Y with E <-> Y
    "verma": """
        random X E M Y
        X -> E
        E -> M
        M -> Y
        E <-> Y
    """,
    # fixed 1; 1 -> 2 -> 3 -> 4, 2 <-> 5 <-> 4
    "conditional": """
        random 2 3 4 5
        fixed 1
        1 -> 2
        2 -> 3
        3 -> 4
        4 <-> 5
        2 <-> 5
    """,
    # instrument: Z -> X -> Y, X <-> Y
    "iv": """
        random Z X Y
        Z -> X
        X -> Y
        X <-> Y
    """,
    # 2 -> 3 -> 4, 2 <-> 5 <-> 4
    "chain_bow": """
        random 2 3 4 5
        2 -> 3
        3 -> 4
        4 <-> 5
        2 <-> 5
    """,
    # rejected WLS model: Verma graph plus X -> M
    "wls_a": """
        random X E M Y
        X -> E
        E -> M
        M -> Y
        X -> M
        E <-> Y
    """,
    # accepted WLS model: X -> E -> M, X -> Y, E <-> Y
    "wls_b": """
        random X E M Y
        X -> E
        E -> M
        X -> Y
        E <-> Y
    """,
    # union of both WLS models; every pair adjacent
    "wls_full": """
        random X E M Y
        X -> E
        E -> M
        M -> Y
        X -> M
        X -> Y
        E <-> Y
    """,
    "bidirected_pair": """
        random a b
        a <-> b
    """,
}

LATENT_SOURCES = {
    # latent U confounds E and Y
    "verma_latent": """
        random X E M Y
        latent U
        X -> E
        E -> M
        M -> Y
        U -> E
        U -> Y
    """,
    # Markov-equivalent DAGs without the Verma constraint; no latents
    "verma_dag_left": """
        random X E M Y
        X -> E
        E -> M
        M -> Y
        E -> Y
        X -> Y
    """,
    "verma_dag_right": """
        random X E M Y
        E -> X
        M -> E
        M -> Y
        E -> Y
        X -> Y
    """,
}


def builtin(name: str) -> Cadmg:
    try:
        return read_graph(SOURCES[name])
    except KeyError:
        raise KeyError(f"no builtin graph {name!r}; choose from {sorted(SOURCES)}") from None

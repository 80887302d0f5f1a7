"""Shared instance builders for the test suite."""

import random

from hypothesis import strategies as st

from consensus_lab.graph import build_graph, cycle_with_chords, is_strongly_connected


def random_instance(seed, n_lo=3, n_hi=15, chord_p=(0.2, 0.5), spread=10.0):
    """Seeded strongly connected digraph plus initial values."""
    rng = random.Random(seed)
    n = rng.randint(n_lo, n_hi)
    g = cycle_with_chords(n, rng.uniform(*chord_p), rng)
    values = tuple(rng.uniform(-spread, spread) for _ in range(n))
    return g, values


@st.composite
def digraphs(draw, n_min=2, n_max=12, strongly_connected=False):
    n = draw(st.integers(n_min, n_max))
    pairs = [(j, i) for j in range(1, n + 1) for i in range(1, n + 1) if i != j]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    g = build_graph(n, chosen)
    if strongly_connected and not is_strongly_connected(g):
        ring = [(j % n + 1, j) for j in range(1, n + 1)]
        g = build_graph(n, sorted(set(chosen) | set(ring)))
    return g


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)

import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from relcons.kb import RelationVocabulary, Triple, TripleStore


def random_store(rng, n_triples, n_relations=4, n_entities=6):
    triples = [Triple(f"e{rng.integers(n_entities)}", int(rng.integers(n_relations)), f"e{rng.integers(n_entities)}")
               for _ in range(n_triples)]
    vocab = RelationVocabulary([f"r{k}" for k in range(n_relations)])
    return TripleStore.from_triples(triples, n_relations), vocab


def random_probs(rng, n, r, floor=0.05):
    """Interior probability rows, every entry at least ``floor / r``."""
    p = rng.dirichlet(np.ones(r), size=n)
    return (1 - floor) * p + floor / r


@st.composite
def stores(draw, max_triples=30, max_relations=5, max_entities=6):
    n_rel = draw(st.integers(1, max_relations))
    ents = [f"e{k}" for k in range(draw(st.integers(1, max_entities)))]
    raw = draw(st.lists(st.tuples(st.sampled_from(ents), st.integers(0, n_rel - 1), st.sampled_from(ents)),
                        min_size=1, max_size=max_triples))
    vocab = RelationVocabulary([f"r{k}" for k in range(n_rel)])
    return TripleStore.from_triples([Triple(s, r, o) for s, r, o in raw], n_rel), vocab


def all_pairs(n):
    return itertools.combinations(range(n), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])

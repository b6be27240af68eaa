import numpy as np
import pytest

from kgsampler.graph import from_id_triples


@pytest.fixture
def chain3():
    """a-r-b, b-r-c, c-r-d."""
    return from_id_triples([(0, 0, 1), (1, 0, 2), (2, 0, 3)], n_entities=4, n_relations=1)


@pytest.fixture
def path5():
    """Path a-b-c-d-e: four triples, five entities."""
    return from_id_triples([(0, 0, 1), (1, 0, 2), (2, 0, 3), (3, 0, 4)],
                           n_entities=5, n_relations=1)


@pytest.fixture
def triangle():
    return from_id_triples([(0, 0, 1), (1, 0, 2), (2, 0, 0)], n_entities=3, n_relations=1)


@pytest.fixture
def star6():
    """Hub entity 0 with six spokes."""
    return from_id_triples([(0, 0, i) for i in range(1, 7)], n_entities=7, n_relations=1)


def random_id_triples(rng, n_entities, n_relations, n_triples):
    rows = set()
    while len(rows) < n_triples:
        s = int(rng.integers(n_entities))
        o = int(rng.integers(n_entities))
        if s == o:
            continue
        rows.add((s, int(rng.integers(n_relations)), o))
    return sorted(rows)


@pytest.fixture
def small_random_graph():
    rng = np.random.default_rng(7)
    triples = random_id_triples(rng, n_entities=30, n_relations=3, n_triples=120)
    return from_id_triples(triples[:100], n_entities=30, n_relations=3,
                           valid=triples[100:110], test=triples[110:120])

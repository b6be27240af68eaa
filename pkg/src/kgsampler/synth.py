"""Synthetic graphs for tests, probes, and desk-scale experiments."""

from __future__ import annotations

import os

import numpy as np

from .graph import KnowledgeGraph, from_id_triples


def planted_toy_graph(n_entities: int = 200, step: int = 7, holdout_fraction: float = 0.10,
                      seed: int = 0) -> KnowledgeGraph:
    """Cycle-group graph with planted symmetric and compositional relations.

    Entities sit on a ring of size n. Relation 0 links i to its antipode
    (self-inverse, hence symmetric), relation 1 advances by ``step``, and
    relation 2 advances by ``2 * step`` (the composition of relation 1 with
    itself). A random tenth of the triples is held out, split evenly into
    valid and test.
    """
    if n_entities % 2:
        raise ValueError("need an even entity count for the antipode relation")
    n = n_entities
    triples = []
    for i in range(n):
        triples.append((i, 0, (i + n // 2) % n))
        triples.append((i, 1, (i + step) % n))
        triples.append((i, 2, (i + 2 * step) % n))
    rng = np.random.default_rng(seed)
    triples = np.asarray(triples, dtype=np.int64)
    order = rng.permutation(len(triples))
    n_hold = int(round(holdout_fraction * len(triples)))
    held, kept = order[:n_hold], order[n_hold:]
    half = len(held) // 2
    return from_id_triples(
        train=triples[kept],
        n_entities=n,
        n_relations=3,
        valid=triples[held[:half]],
        test=triples[held[half:]],
    )


def random_graph(n_entities: int, n_relations: int, n_triples: int,
                 seed: int = 0, holdout_fraction: float = 0.0) -> KnowledgeGraph:
    """Uniformly random distinct triples without self-loops."""
    max_possible = n_entities * (n_entities - 1) * n_relations
    if n_triples > max_possible:
        raise ValueError("more triples requested than distinct triples exist")
    rng = np.random.default_rng(seed)
    rows = np.empty((0, 3), dtype=np.int64)
    while len(rows) < n_triples:
        need = n_triples - len(rows)
        s = rng.integers(0, n_entities, size=2 * need)
        r = rng.integers(0, n_relations, size=2 * need)
        o = rng.integers(0, n_entities, size=2 * need)
        cand = np.stack([s, r, o], axis=1)
        cand = cand[cand[:, 0] != cand[:, 2]]
        rows = np.unique(np.concatenate([rows, cand]), axis=0)
    rows = rows[rng.permutation(len(rows))[:n_triples]]
    n_hold = int(round(holdout_fraction * n_triples))
    held, kept = rows[:n_hold], rows[n_hold:]
    half = len(held) // 2
    return from_id_triples(
        train=kept,
        n_entities=n_entities,
        n_relations=n_relations,
        valid=held[:half],
        test=held[half:],
    )


def dense_sampler_graph(seed: int = 0) -> KnowledgeGraph:
    """5k-triple graph over 500 entities (mean degree 20) for sampler studies."""
    return random_graph(n_entities=500, n_relations=5, n_triples=5000, seed=seed)


def variance_probe_graph(seed: int = 0) -> KnowledgeGraph:
    """1000 entities at mean degree 12, the sparsity regime of large KGs."""
    return random_graph(n_entities=1000, n_relations=8, n_triples=6000, seed=seed)


def write_dataset(g: KnowledgeGraph, directory: str) -> None:
    """Write a graph as tab-separated train/valid/test triple files."""
    os.makedirs(directory, exist_ok=True)
    for name, arr in (("train.txt", g.train), ("valid.txt", g.valid), ("test.txt", g.test)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            for s, r, o in arr:
                fh.write(f"{g.entity_names[s]}\t{g.relation_names[r]}\t{g.entity_names[o]}\n")

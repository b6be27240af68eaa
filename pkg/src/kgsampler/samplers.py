"""Minibatch sampling policies over the training graph.

Five policies are provided:

* ``sr``      -- uniformly random triples (the standard policy)
* ``rw``      -- random walk collecting one new incident triple per step
* ``rwr``     -- random walk with restarts to the start node (or a random
                 previously visited node)
* ``rwisg``   -- random walk, then the subgraph induced by its vertices
* ``rwisg_n`` -- induced subgraph plus randomly drawn extra incident
                 triples of the visited vertices

Walks traverse edges ignoring direction; sampled triples keep their stored
direction. All samplers are deterministic given a seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import KnowledgeGraph, induced_subgraph

log = logging.getLogger(__name__)

SAMPLER_KINDS = ("sr", "rw", "rwr", "rwisg", "rwisg_n")
RESTART_TARGETS = ("start_node", "uniform_previous")


@dataclass(frozen=True)
class SamplerPolicy:
    """Which sampler to run and its knobs.

    ``batch_size`` is the target number of positive triples; the induced
    variants may exceed it because the closure adds triples.
    """

    kind: str = "sr"
    batch_size: int = 1024
    restart_probability: float = 0.15      # rwr only
    restart_target: str = "start_node"     # rwr only
    extra_neighbor_fraction: float = 0.5   # rwisg_n only
    extra_neighbor_cap: int = 32           # rwisg_n, per-vertex draw limit
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.restart_probability <= 1.0:
            raise ValueError("restart_probability must be in [0, 1]")
        if self.restart_target not in RESTART_TARGETS:
            raise ValueError(f"restart_target must be one of {RESTART_TARGETS}")
        if not 0.0 <= self.extra_neighbor_fraction <= 1.0:
            raise ValueError("extra_neighbor_fraction must be in [0, 1]")


@dataclass
class Minibatch:
    """A sampled set of positive training triples."""

    positives: np.ndarray          # (m, 3) int64, in collection order, no duplicates
    provenance: SamplerPolicy
    restarts: int = 0              # fresh-restart count of the underlying walk

    def __len__(self):
        return len(self.positives)

    @property
    def vertex_set(self) -> np.ndarray:
        """Sorted unique entity ids appearing in the positives."""
        return np.unique(self.positives[:, [0, 2]])


def _entities_with_edges(g: KnowledgeGraph) -> np.ndarray:
    return np.flatnonzero(g.degrees > 0)


def _clamp_batch_size(g: KnowledgeGraph, b: int) -> int:
    if b > g.n_train:
        log.warning("batch_size %d exceeds train size %d; clamping", b, g.n_train)
        return g.n_train
    return b


def sample_sr(g: KnowledgeGraph, policy: SamplerPolicy, rng=None) -> Minibatch:
    """b distinct train triples, uniformly without replacement."""
    if g.n_train == 0:
        raise ValueError("cannot sample from an empty train split")
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    b = _clamp_batch_size(g, policy.batch_size)
    ids = rng.choice(g.n_train, size=b, replace=False)
    return Minibatch(positives=g.train[ids], provenance=policy)


def _fresh_start(g, rng, n_collected_incident, adj_len, pool):
    """Uniform random entity that still has an uncollected incident triple."""
    for _ in range(200):
        v = int(pool[rng.integers(len(pool))])
        if n_collected_incident[v] < adj_len[v]:
            return v
    candidates = np.flatnonzero((n_collected_incident < adj_len) & (adj_len > 0))
    return int(candidates[rng.integers(len(candidates))])


def _random_walk(g: KnowledgeGraph, b: int, rng,
                 restart_probability: float = 0.0,
                 restart_target: str = "start_node",
                 start_entity=None):
    """Collect b distinct triples by walking the undirected training graph.

    Each step picks uniformly among the not-yet-collected triples incident
    to the current vertex, records it, and moves to its other endpoint.
    A vertex with no uncollected incident triple stalls the walk, which
    then restarts from a fresh uniform random entity (rebasing the restart
    anchor). Returns (triple ids in collection order, visited vertex ids in
    first-visit order, number of fresh restarts).
    """
    if g.n_train == 0:
        raise ValueError("cannot walk an empty train split")
    adj_len = np.diff(g.adj_indptr)
    collected = np.zeros(g.n_train, dtype=bool)
    n_collected_incident = np.zeros(g.n_entities, dtype=np.int64)
    pool = _entities_with_edges(g)

    if start_entity is None:
        current = int(pool[rng.integers(len(pool))])
    else:
        current = int(start_entity)
    anchor = current
    visited = [current]
    visited_mask = np.zeros(g.n_entities, dtype=bool)
    visited_mask[current] = True
    order = []
    restarts = 0

    def visit(v):
        if not visited_mask[v]:
            visited_mask[v] = True
            visited.append(v)

    while len(order) < b:
        if restart_probability > 0.0 and rng.random() < restart_probability:
            if restart_target == "start_node":
                current = anchor
            else:
                current = visited[rng.integers(len(visited))]
        if n_collected_incident[current] == adj_len[current]:
            current = _fresh_start(g, rng, n_collected_incident, adj_len, pool)
            anchor = current
            visit(current)
            restarts += 1
        incident = g.incident_triple_ids(current)
        open_ids = incident[~collected[incident]]
        ti = int(open_ids[rng.integers(len(open_ids))])
        collected[ti] = True
        order.append(ti)
        s, _, o = g.train[ti]
        n_collected_incident[s] += 1
        if o != s:
            n_collected_incident[o] += 1
        current = int(o) if current == s else int(s)
        visit(current)

    return np.asarray(order, dtype=np.int64), np.asarray(visited, dtype=np.int64), restarts


def sample_rw(g: KnowledgeGraph, policy: SamplerPolicy, rng=None, start_entity=None) -> Minibatch:
    """Plain random walk; positives are the walk's triples in collection order."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    b = _clamp_batch_size(g, policy.batch_size)
    order, _, restarts = _random_walk(g, b, rng, start_entity=start_entity)
    return Minibatch(positives=g.train[order], provenance=policy, restarts=restarts)


def sample_rwr(g: KnowledgeGraph, policy: SamplerPolicy, rng=None, start_entity=None) -> Minibatch:
    """Random walk that jumps back to the restart target between steps."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    b = _clamp_batch_size(g, policy.batch_size)
    order, _, restarts = _random_walk(
        g, b, rng,
        restart_probability=policy.restart_probability,
        restart_target=policy.restart_target,
        start_entity=start_entity,
    )
    return Minibatch(positives=g.train[order], provenance=policy, restarts=restarts)


def sample_rwisg(g: KnowledgeGraph, policy: SamplerPolicy, rng=None, start_entity=None) -> Minibatch:
    """Random walk, then the train subgraph induced by the visited vertices."""
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    b = _clamp_batch_size(g, policy.batch_size)
    _, visited, restarts = _random_walk(g, b, rng, start_entity=start_entity)
    return Minibatch(positives=induced_subgraph(g, visited), provenance=policy,
                     restarts=restarts)


def sample_rwisg_n(g: KnowledgeGraph, policy: SamplerPolicy, rng=None, start_entity=None) -> Minibatch:
    """Induced subgraph plus random extra incident triples of visited vertices.

    For each visited vertex v, ceil(fraction * degree(v)) incident triples
    are drawn without replacement, limited by the per-vertex cap.
    """
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    b = _clamp_batch_size(g, policy.batch_size)
    _, visited, restarts = _random_walk(g, b, rng, start_entity=start_entity)
    induced = induced_subgraph(g, visited)

    extra = []
    frac = policy.extra_neighbor_fraction
    if frac > 0.0:
        for v in visited:
            incident = g.incident_triple_ids(int(v))
            if len(incident) == 0:
                continue
            k = int(np.ceil(frac * g.degrees[v]))
            k = min(k, policy.extra_neighbor_cap, len(incident))
            if k > 0:
                extra.append(rng.choice(incident, size=k, replace=False))

    if extra:
        ids = np.unique(np.concatenate(extra))
        merged = np.unique(np.concatenate([induced, g.train[ids]]), axis=0)
    else:
        merged = induced
    return Minibatch(positives=merged, provenance=policy, restarts=restarts)


_SAMPLERS = {
    "sr": sample_sr,
    "rw": sample_rw,
    "rwr": sample_rwr,
    "rwisg": sample_rwisg,
    "rwisg_n": sample_rwisg_n,
}


def sample_minibatch(g: KnowledgeGraph, policy: SamplerPolicy, rng=None, **kwargs) -> Minibatch:
    """Dispatch to the sampler named by ``policy.kind``."""
    fn = _SAMPLERS[policy.kind]
    if policy.kind == "sr":
        kwargs.pop("start_entity", None)
    return fn(g, policy, rng=rng, **kwargs)


def batches_per_epoch(g: KnowledgeGraph, policy: SamplerPolicy) -> int:
    b = min(policy.batch_size, max(g.n_train, 1))
    return -(-g.n_train // b)


def epoch_iterator(g: KnowledgeGraph, policy: SamplerPolicy, rng=None):
    """Yield ceil(n_train / batch_size) minibatches.

    Under ``sr`` the epoch partitions one random permutation of the train
    split, so the union of the epoch's batches is exactly the train set.
    Walk-based policies yield independent samples and fix only the batch
    count. Deterministic given the policy seed (or the supplied rng).
    """
    rng = np.random.default_rng(policy.seed) if rng is None else rng
    n_batches = batches_per_epoch(g, policy)
    if policy.kind == "sr":
        b = min(policy.batch_size, g.n_train)
        perm = rng.permutation(g.n_train)
        for i in range(n_batches):
            ids = perm[i * b:(i + 1) * b]
            yield Minibatch(positives=g.train[ids], provenance=policy)
    else:
        for _ in range(n_batches):
            yield sample_minibatch(g, policy, rng=rng)


def to_dot(m: Minibatch, g: KnowledgeGraph = None) -> str:
    """Render a minibatch subgraph in DOT format.

    Entities become nodes, triples become directed edges labeled with the
    relation. Uses dictionary names when the graph is supplied, raw ids
    otherwise.
    """
    def ename(v):
        return g.entity_names[v] if g is not None else f"e{v}"

    def rname(r):
        return g.relation_names[r] if g is not None else f"r{r}"

    def quote(s):
        return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph minibatch {"]
    for v in m.vertex_set:
        lines.append(f"  n{v} [label={quote(ename(int(v)))}];")
    for s, r, o in m.positives:
        lines.append(f"  n{s} -> n{o} [label={quote(rname(int(r)))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

"""Negative sampling and training objectives.

The base objective is the soft-margin (log-sigmoid) pair loss

    -1/2 [ log sigma(score(t) - margin) + E_neg log sigma(margin - score(neg)) ]

where the expectation over a positive's negatives is a uniform mean, or a
softmax-over-scores weighted mean when the adversarial temperature is
positive (weights are constants: no gradient flows through them).

The neighbor-aware variant adds, for every positive, the pair losses of the
training triples sharing an endpoint with it, the whole group scaled by
1 / (1 + number of neighbors) so a zero-neighbor positive reduces exactly
to the base loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import KnowledgeGraph, Triple, neighbor_triple_ids
from .samplers import Minibatch
from .scorers import EmbeddingStore, score_gradients, score_triples

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 6.0
    negatives_per_positive: int = 64
    adversarial_temperature: float = 1.0   # 0 disables reweighting
    filtered_negatives: bool = True
    neighbors_loss_enabled: bool = False
    neighbor_cap: int = 32                 # None = unlimited
    neighbor_normalizer_precap: bool = False

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ValueError("need at least one negative per positive")
        if not np.isfinite(self.margin):
            raise ValueError("margin must be finite")
        if self.adversarial_temperature < 0:
            raise ValueError("adversarial temperature must be >= 0")


@dataclass
class NegativeBatch:
    """Corrupted triples for a batch of positives.

    ``valid`` is False where filtered generation ran out of retries; such
    entries take no part in the loss.
    """

    triples: np.ndarray         # (m, n, 3)
    head_corrupted: np.ndarray  # (m, n) bool
    valid: np.ndarray           # (m, n) bool


class SparseGrads:
    """Gradient contributions as row-id -> vector maps."""

    def __init__(self):
        self.entities: dict = {}
        self.relations: dict = {}

    @staticmethod
    def _accumulate(dok: dict, ids: np.ndarray, vecs: np.ndarray):
        if len(ids) == 0:
            return
        uniq, inv = np.unique(ids, return_inverse=True)
        acc = np.zeros((len(uniq), vecs.shape[1]))
        np.add.at(acc, inv, vecs)
        for i, row_id in enumerate(uniq):
            row_id = int(row_id)
            if row_id in dok:
                dok[row_id] = dok[row_id] + acc[i]
            else:
                dok[row_id] = acc[i]

    def add_entities(self, ids, vecs):
        self._accumulate(self.entities, ids, vecs)

    def add_relations(self, ids, vecs):
        self._accumulate(self.relations, ids, vecs)


def log_sigmoid(x):
    """log(sigma(x)), safe for the whole float64 range."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def corrupt_batch(g: KnowledgeGraph, positives: np.ndarray, n: int,
                  filtered: bool, rng, max_retries: int = 100) -> NegativeBatch:
    """Corrupt each positive n times by replacing head or tail (fair coin).

    Replacement entities are uniform over all entities except the original.
    With ``filtered`` on, candidates found in the train/valid/test
    membership index are re-drawn; entries still colliding after
    ``max_retries`` rounds are marked invalid and a warning is logged.
    """
    if g.n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    m = len(positives)
    s = positives[:, 0][:, None]
    r = positives[:, 1][:, None]
    o = positives[:, 2][:, None]

    head_mask = rng.random((m, n)) < 0.5
    original = np.where(head_mask, s, o)

    def draw(shape, orig):
        cand = rng.integers(0, g.n_entities - 1, size=shape)
        return cand + (cand >= orig)

    cand = draw((m, n), original)
    valid = np.ones((m, n), dtype=bool)

    if filtered:
        def colliding():
            check = np.stack([
                np.where(head_mask, cand, np.broadcast_to(s, (m, n))),
                np.broadcast_to(r, (m, n)),
                np.where(head_mask, np.broadcast_to(o, (m, n)), cand),
            ], axis=2)
            return g.contains_triples(check)

        pending = colliding()
        for _ in range(max_retries):
            rows, cols = np.nonzero(pending)
            if len(rows) == 0:
                break
            cand[rows, cols] = draw((len(rows),), original[rows, cols])
            pending &= colliding()
        if pending.any():
            valid &= ~pending
            log.warning("filtered corruption exhausted retries for %d negatives",
                        int(pending.sum()))

    neg_s = np.where(head_mask, cand, s)
    neg_o = np.where(head_mask, o, cand)
    triples = np.stack([neg_s, np.broadcast_to(r, (m, n)), neg_o], axis=2)
    return NegativeBatch(triples=triples.astype(np.int64),
                         head_corrupted=head_mask, valid=valid)


def corrupt(g: KnowledgeGraph, t, n: int, filtered: bool, rng) -> list:
    """Negatives for a single positive, invalid entries dropped."""
    batch = corrupt_batch(g, np.asarray(t).reshape(1, 3), n, filtered, rng)
    keep = batch.valid[0]
    return [Triple(*map(int, row)) for row in batch.triples[0][keep]]


def adversarial_weights(scores_of_negatives: np.ndarray, alpha: float) -> np.ndarray:
    """softmax(alpha * scores) along the last axis; uniform when alpha is 0."""
    scores = np.asarray(scores_of_negatives, dtype=np.float64)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    z = alpha * scores
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _masked_weights(neg_scores, valid, alpha):
    """Adversarial (or uniform) weights restricted to valid negatives."""
    if alpha > 0:
        z = np.where(valid, alpha * neg_scores, -np.inf)
        zmax = z.max(axis=-1, keepdims=True)
        zmax = np.where(np.isfinite(zmax), zmax, 0.0)
        e = np.where(valid, np.exp(z - zmax), 0.0)
        total = e.sum(axis=-1, keepdims=True)
        return np.divide(e, total, out=np.zeros_like(e), where=total > 0)
    counts = valid.sum(axis=-1, keepdims=True)
    return np.divide(valid.astype(np.float64), counts,
                     out=np.zeros((valid.shape), dtype=np.float64), where=counts > 0)


def softmargin_batch_loss_and_grads(
    store: EmbeddingStore,
    positives: np.ndarray,
    negatives: NegativeBatch,
    config: LossConfig,
    entry_weights: np.ndarray = None,
    frozen_weights: np.ndarray = None,
):
    """Soft-margin loss summed over positives, plus sparse gradients.

    ``entry_weights`` scales each positive's whole term (used by the
    neighbor-aware loss); ``frozen_weights`` overrides the adversarial
    weights (they are treated as constants either way).
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    m, n = negatives.valid.shape
    if entry_weights is None:
        entry_weights = np.ones(m)
    gamma = config.margin

    pos_scores = score_triples(store, positives)
    flat_negs = negatives.triples.reshape(-1, 3)
    neg_scores = score_triples(store, flat_negs).reshape(m, n)

    if frozen_weights is None:
        weights = _masked_weights(neg_scores, negatives.valid, config.adversarial_temperature)
    else:
        weights = np.where(negatives.valid, frozen_weights, 0.0)

    pos_term = log_sigmoid(pos_scores - gamma)
    neg_term = (weights * log_sigmoid(gamma - neg_scores)).sum(axis=1)
    loss = float(np.dot(entry_weights, -0.5 * (pos_term + neg_term)))

    # d loss / d score, including the per-entry scaling
    dpos = entry_weights * (-0.5) * sigmoid(gamma - pos_scores)
    dneg = (entry_weights[:, None] * 0.5 * weights * sigmoid(neg_scores - gamma)).reshape(-1)

    grads = SparseGrads()
    ds, dr, do = score_gradients(store, positives)
    grads.add_entities(positives[:, 0], dpos[:, None] * ds)
    grads.add_relations(positives[:, 1], dpos[:, None] * dr)
    grads.add_entities(positives[:, 2], dpos[:, None] * do)

    touched = dneg != 0.0
    if touched.any():
        negs = flat_negs[touched]
        coef = dneg[touched][:, None]
        ds, dr, do = score_gradients(store, negs)
        grads.add_entities(negs[:, 0], coef * ds)
        grads.add_relations(negs[:, 1], coef * dr)
        grads.add_entities(negs[:, 2], coef * do)
    return loss, grads


def softmargin_loss_and_grads(store: EmbeddingStore, t, negatives, config: LossConfig,
                              frozen_weights=None):
    """Soft-margin loss of one positive against its negatives."""
    negatives = np.asarray(negatives, dtype=np.int64).reshape(1, -1, 3)
    if negatives.shape[1] == 0:
        raise ValueError("need at least one negative")
    batch = NegativeBatch(
        triples=negatives,
        head_corrupted=np.zeros(negatives.shape[:2], dtype=bool),
        valid=np.ones(negatives.shape[:2], dtype=bool),
    )
    fw = None if frozen_weights is None else np.asarray(frozen_weights).reshape(1, -1)
    return softmargin_batch_loss_and_grads(
        store, np.asarray(t).reshape(1, 3), batch, config, frozen_weights=fw
    )


def _capped_neighbors(g, t, cap, rng):
    """Neighbor triple ids, uniformly subsampled to the cap.

    Consumes randomness only when the cap actually truncates, so a cap of
    zero (or a neighbor set within the cap) is rng-neutral.
    """
    ids = neighbor_triple_ids(g, t)
    if cap is not None and len(ids) > cap:
        if cap == 0:
            return ids[:0], len(ids)
        ids_kept = rng.choice(ids, size=cap, replace=False)
        return np.sort(ids_kept), len(ids)
    return ids, len(ids)


def neighbors_loss_and_grads(g: KnowledgeGraph, store: EmbeddingStore,
                             m: Minibatch, config: LossConfig, rng):
    """Neighbor-aware loss of a minibatch, with sparse gradients.

    For each positive t the scaled group contains t itself and its (capped)
    neighbor triples, every member paired with its own fresh negatives. By
    default the 1/(1+count) normalizer uses the post-cap neighbor count.
    """
    entries = []
    weights = []
    for row in m.positives:
        nbr_ids, pre_cap = _capped_neighbors(g, row, config.neighbor_cap, rng)
        count = pre_cap if config.neighbor_normalizer_precap else len(nbr_ids)
        w = 1.0 / (1.0 + count)
        entries.append(row)
        weights.append(w)
        for i in nbr_ids:
            entries.append(g.train[i])
            weights.append(w)
    entries = np.asarray(entries, dtype=np.int64).reshape(-1, 3)
    weights = np.asarray(weights)
    negs = corrupt_batch(g, entries, config.negatives_per_positive,
                         config.filtered_negatives, rng)
    return softmargin_batch_loss_and_grads(store, entries, negs, config,
                                           entry_weights=weights)


def vanilla_loss_and_grads(g: KnowledgeGraph, store: EmbeddingStore,
                           m: Minibatch, config: LossConfig, rng):
    """Plain soft-margin loss of a minibatch (sum over its positives)."""
    negs = corrupt_batch(g, m.positives, config.negatives_per_positive,
                         config.filtered_negatives, rng)
    return softmargin_batch_loss_and_grads(store, m.positives, negs, config)


def minibatch_loss_and_grads(g, store, m, config: LossConfig, rng):
    """Dispatch between the plain and the neighbor-aware objective."""
    if config.neighbors_loss_enabled:
        return neighbors_loss_and_grads(g, store, m, config, rng)
    return vanilla_loss_and_grads(g, store, m, config, rng)

"""Link-prediction ranking and metrics.

Every evaluated triple is ranked twice: once against all candidate objects
and once against all candidate subjects. Under the filtered protocol,
candidates that form a known triple (train, valid, or test) are ignored.
Ties break pessimistically: a candidate scoring equal to the target counts
as ranked above it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import KnowledgeGraph
from .scorers import EmbeddingStore, score_against_all_objects, score_against_all_subjects

HITS_KS = (1, 3, 10)
PROTOCOLS = ("raw", "filtered")


@dataclass
class RankResult:
    triple: tuple
    head_rank: int
    tail_rank: int
    protocol: str


@dataclass
class Metrics:
    mrr: float
    mr: float
    hits_at: dict
    count: int
    protocol: str

    def as_record(self) -> dict:
        rec = {"mrr": self.mrr, "mr": self.mr}
        rec.update({f"hits{k}": v for k, v in sorted(self.hits_at.items())})
        rec.update({"count": self.count, "protocol": self.protocol})
        return rec

    def as_json_line(self) -> str:
        return json.dumps(self.as_record())

    def as_csv(self) -> str:
        rec = self.as_record()
        keys = list(rec)
        return ",".join(keys) + "\n" + ",".join(str(rec[k]) for k in keys) + "\n"


def _rank_from_scores(scores: np.ndarray, target: int, filtered_ids) -> int:
    allowed = np.ones(len(scores), dtype=bool)
    if filtered_ids is not None and len(filtered_ids):
        allowed[filtered_ids] = False
    allowed[target] = False
    return 1 + int(np.count_nonzero(allowed & (scores >= scores[target])))


def rank_triple(g: KnowledgeGraph, store: EmbeddingStore, t, protocol: str = "filtered") -> RankResult:
    """Filtered or raw head/tail ranks of one triple."""
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    s, r, o = (int(x) for x in t)
    filt = protocol == "filtered"

    obj_scores = score_against_all_objects(store, s, r)
    tail_rank = _rank_from_scores(obj_scores, o, g.filter_objects(s, r) if filt else None)

    subj_scores = score_against_all_subjects(store, r, o)
    head_rank = _rank_from_scores(subj_scores, s, g.filter_subjects(r, o) if filt else None)

    return RankResult(triple=(s, r, o), head_rank=head_rank, tail_rank=tail_rank,
                      protocol=protocol)


def metrics_from_ranks(ranks, protocol: str) -> Metrics:
    ranks = np.asarray(ranks, dtype=np.float64)
    return Metrics(
        mrr=float(np.mean(1.0 / ranks)),
        mr=float(np.mean(ranks)),
        hits_at={k: float(np.mean(ranks <= k)) for k in HITS_KS},
        count=len(ranks),
        protocol=protocol,
    )


def evaluate_split(g: KnowledgeGraph, store: EmbeddingStore, split: str = "test",
                   protocol: str = "filtered") -> Metrics:
    """Rank every triple of a split in both directions and aggregate."""
    triples = g.split(split) if isinstance(split, str) else np.asarray(split)
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    ranks = []
    for t in triples:
        res = rank_triple(g, store, t, protocol)
        ranks.append(res.head_rank)
        ranks.append(res.tail_rank)
    return metrics_from_ranks(ranks, protocol)

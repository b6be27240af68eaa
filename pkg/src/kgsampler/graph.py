"""Knowledge graph loading, indexing, and structural queries.

A knowledge graph is a set of directed labeled edges (subject, relation,
object) over dense integer ids. The train split carries the adjacency
index used by the samplers; valid/test only participate in the membership
index used for filtered ranking and filtered negative generation.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

SPLIT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}


class DataError(Exception):
    """Raised for missing, malformed, or inconsistent dataset files."""


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


@dataclass
class KnowledgeGraph:
    """Immutable triple store with a CSR incidence index over the train split.

    ``adj_indptr``/``adj_indices`` map each entity to the sorted train-triple
    indices in which it appears as subject or object. A self-loop triple
    (s == o) appears once in its entity's list but contributes 2 to the
    entity's total degree.
    """

    entity_names: list[str]
    relation_names: list[str]
    train: np.ndarray          # (n_train, 3) int64
    valid: np.ndarray          # (n_valid, 3) int64
    test: np.ndarray           # (n_test, 3) int64
    adj_indptr: np.ndarray     # (|E| + 1,) int64
    adj_indices: np.ndarray    # (sum of incidence list lengths,) int64
    degrees: np.ndarray        # (|E|,) int64, in-degree + out-degree on train
    membership: frozenset      # {(s, r, o)} over train + valid + test
    _sr_to_o: dict = field(default=None, repr=False, compare=False)
    _or_to_s: dict = field(default=None, repr=False, compare=False)
    _packed: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def n_train(self) -> int:
        return len(self.train)

    def split(self, name: str) -> np.ndarray:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise KeyError(f"unknown split {name!r}; expected train/valid/test")

    def incident_triple_ids(self, v: int) -> np.ndarray:
        """Sorted train-triple indices incident to entity v."""
        return self.adj_indices[self.adj_indptr[v]:self.adj_indptr[v + 1]]

    def filter_objects(self, s: int, r: int) -> np.ndarray:
        """All known objects o with (s, r, o) in train+valid+test."""
        if self._sr_to_o is None:
            self._build_filter_maps()
        return self._sr_to_o.get((s, r), _EMPTY_IDS)

    def filter_subjects(self, r: int, o: int) -> np.ndarray:
        """All known subjects s with (s, r, o) in train+valid+test."""
        if self._or_to_s is None:
            self._build_filter_maps()
        return self._or_to_s.get((o, r), _EMPTY_IDS)

    def pack_triples(self, spo: np.ndarray) -> np.ndarray:
        """Encode (s, r, o) rows as single int64 keys."""
        spo = np.asarray(spo, dtype=np.int64)
        return (spo[..., 0] * self.n_relations + spo[..., 1]) * self.n_entities \
            + spo[..., 2]

    def contains_triples(self, spo: np.ndarray) -> np.ndarray:
        """Vectorized membership test against train + valid + test."""
        if self._packed is None:
            all_rows = np.concatenate([self.train, self.valid, self.test])
            self._packed = np.unique(self.pack_triples(all_rows)) \
                if len(all_rows) else np.empty(0, dtype=np.int64)
        keys = self.pack_triples(spo)
        idx = np.searchsorted(self._packed, keys)
        idx = np.minimum(idx, max(len(self._packed) - 1, 0))
        if len(self._packed) == 0:
            return np.zeros(keys.shape, dtype=bool)
        return self._packed[idx] == keys

    def _build_filter_maps(self):
        sr_to_o: dict = {}
        or_to_s: dict = {}
        for arr in (self.train, self.valid, self.test):
            for s, r, o in arr:
                sr_to_o.setdefault((int(s), int(r)), []).append(int(o))
                or_to_s.setdefault((int(o), int(r)), []).append(int(s))
        self._sr_to_o = {k: np.unique(v) for k, v in sr_to_o.items()}
        self._or_to_s = {k: np.unique(v) for k, v in or_to_s.items()}


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def _parse_split(path: str, entity_ids: dict, relation_ids: dict) -> np.ndarray:
    """Parse one tab-separated triple file, assigning ids in first-seen order."""
    if not os.path.isfile(path):
        raise DataError(f"missing split file: {path}")
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise DataError(
                    f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}"
                )
            s_name, r_name, o_name = cols
            s = entity_ids.setdefault(s_name, len(entity_ids))
            r = relation_ids.setdefault(r_name, len(relation_ids))
            o = entity_ids.setdefault(o_name, len(entity_ids))
            if (s, r, o) in seen:
                raise DataError(f"{path}:{lineno}: duplicate triple within split")
            seen.add((s, r, o))
            rows.append((s, r, o))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def _build_adjacency(train: np.ndarray, n_entities: int):
    """CSR incidence lists; a self-loop triple appears once in its list."""
    n = len(train)
    idx = np.arange(n, dtype=np.int64)
    s, o = train[:, 0], train[:, 2]
    not_loop = s != o
    ents = np.concatenate([s, o[not_loop]])
    tids = np.concatenate([idx, idx[not_loop]])
    order = np.lexsort((tids, ents))
    ents, tids = ents[order], tids[order]
    counts = np.bincount(ents, minlength=n_entities)
    indptr = np.zeros(n_entities + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, tids


def load_dataset(directory: str) -> KnowledgeGraph:
    """Load train/valid/test triple files from a dataset directory.

    Ids are dense integers assigned in first-seen order over train, then
    valid, then test. Adjacency and degrees are built from the train split
    only. Raises :class:`DataError` on missing files, malformed lines, or
    duplicate triples within a split.
    """
    entity_ids: dict = {}
    relation_ids: dict = {}
    splits = {}
    for name, fname in SPLIT_FILES.items():
        splits[name] = _parse_split(os.path.join(directory, fname), entity_ids, relation_ids)

    n_entities = len(entity_ids)
    train = splits["train"]
    indptr, indices = _build_adjacency(train, n_entities)
    degrees = (
        np.bincount(train[:, 0], minlength=n_entities)
        + np.bincount(train[:, 2], minlength=n_entities)
    ).astype(np.int64)

    membership = frozenset(
        (int(s), int(r), int(o))
        for arr in splits.values()
        for s, r, o in arr
    )

    n_loops = int(np.sum(train[:, 0] == train[:, 2]))
    n_all = sum(len(a) for a in splits.values())
    n_cross_dupes = n_all - len(membership)
    if n_loops or n_cross_dupes:
        log.info(
            "dataset %s: %d self-loop train triples, %d duplicate triples across splits",
            directory, n_loops, n_cross_dupes,
        )

    return KnowledgeGraph(
        entity_names=list(entity_ids),
        relation_names=list(relation_ids),
        train=train,
        valid=splits["valid"],
        test=splits["test"],
        adj_indptr=indptr,
        adj_indices=indices,
        degrees=degrees,
        membership=membership,
    )


def from_id_triples(
    train: Iterable[tuple],
    n_entities: int,
    n_relations: int,
    valid: Iterable[tuple] = (),
    test: Iterable[tuple] = (),
) -> KnowledgeGraph:
    """Build a graph directly from integer triples (synthetic graphs, tests)."""
    def to_arr(rows):
        return np.asarray(list(rows), dtype=np.int64).reshape(-1, 3)

    train = to_arr(train)
    valid, test = to_arr(valid), to_arr(test)
    for arr in (train, valid, test):
        if len(arr) and (arr[:, [0, 2]].max() >= n_entities or arr[:, 1].max() >= n_relations):
            raise DataError("triple references an id out of range")
        if len(np.unique(arr, axis=0)) != len(arr):
            raise DataError("duplicate triple within split")
    indptr, indices = _build_adjacency(train, n_entities)
    degrees = (
        np.bincount(train[:, 0], minlength=n_entities)
        + np.bincount(train[:, 2], minlength=n_entities)
    ).astype(np.int64)
    membership = frozenset(
        (int(s), int(r), int(o)) for arr in (train, valid, test) for s, r, o in arr
    )
    return KnowledgeGraph(
        entity_names=[f"e{i}" for i in range(n_entities)],
        relation_names=[f"r{i}" for i in range(n_relations)],
        train=train,
        valid=valid,
        test=test,
        adj_indptr=indptr,
        adj_indices=indices,
        degrees=degrees,
        membership=membership,
    )


def degree(g: KnowledgeGraph, v: int) -> int:
    """Total degree of entity v on the train split (self-loop counts 2)."""
    if not 0 <= v < g.n_entities:
        raise IndexError(f"entity id {v} out of range [0, {g.n_entities})")
    return int(g.degrees[v])


def neighbor_triples(g: KnowledgeGraph, t: Triple) -> set:
    """Train triples sharing an endpoint with t, excluding t itself."""
    ids = neighbor_triple_ids(g, t)
    return {Triple(*map(int, g.train[i])) for i in ids}


def neighbor_triple_ids(g: KnowledgeGraph, t) -> np.ndarray:
    """Indices of train triples incident to t's subject or object, minus t."""
    s, r, o = int(t[0]), int(t[1]), int(t[2])
    ids = np.union1d(g.incident_triple_ids(s), g.incident_triple_ids(o))
    if len(ids) == 0:
        return ids
    rows = g.train[ids]
    is_t = (rows[:, 0] == s) & (rows[:, 1] == r) & (rows[:, 2] == o)
    return ids[~is_t]


def induced_subgraph(g: KnowledgeGraph, vertices) -> np.ndarray:
    """All train triples with both endpoints inside the vertex set.

    Returns the (k, 3) array of matching train triples, in train order.
    """
    mask = np.zeros(g.n_entities, dtype=bool)
    verts = np.asarray(sorted(vertices) if isinstance(vertices, set) else vertices,
                       dtype=np.int64)
    if len(verts):
        mask[verts] = True
    keep = mask[g.train[:, 0]] & mask[g.train[:, 2]]
    return g.train[keep]


def write_dictionaries(g: KnowledgeGraph, directory: str) -> None:
    """Dump id<TAB>name dictionaries (entities.tsv / relations.tsv)."""
    os.makedirs(directory, exist_ok=True)
    for fname, names in (("entities.tsv", g.entity_names),
                         ("relations.tsv", g.relation_names)):
        with open(os.path.join(directory, fname), "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{i}\t{name}\n")

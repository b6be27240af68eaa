import numpy as np
import pytest

from kgsampler.graph import from_id_triples, induced_subgraph
from kgsampler.samplers import (
    SamplerPolicy,
    batches_per_epoch,
    epoch_iterator,
    sample_minibatch,
    sample_rw,
    sample_rwisg,
    sample_rwisg_n,
    sample_rwr,
    sample_sr,
    to_dot,
)
from kgsampler.synth import random_graph


def as_set(positives):
    return {tuple(map(int, row)) for row in positives}


class TestSimplyRandom:
    def test_full_batch_is_train_split(self, small_random_graph):
        g = small_random_graph
        policy = SamplerPolicy(kind="sr", batch_size=g.n_train, seed=1)
        m = sample_sr(g, policy)
        assert as_set(m.positives) == as_set(g.train)

    def test_small_batch_distinct_and_contained(self, small_random_graph):
        g = small_random_graph
        m = sample_sr(g, SamplerPolicy(kind="sr", batch_size=3, seed=2))
        assert len(m) == 3
        assert len(as_set(m.positives)) == 3
        assert as_set(m.positives) <= as_set(g.train)

    def test_clamp_with_warning(self, chain3, caplog):
        with caplog.at_level("WARNING"):
            m = sample_sr(chain3, SamplerPolicy(kind="sr", batch_size=50, seed=0))
        assert len(m) == chain3.n_train
        assert any("clamp" in r.message for r in caplog.records)

    def test_empty_graph_rejected(self):
        g = from_id_triples([], n_entities=1, n_relations=1)
        with pytest.raises(ValueError):
            sample_sr(g, SamplerPolicy(kind="sr", batch_size=1))


class TestRandomWalk:
    def test_path_graph_chain_order(self, path5):
        policy = SamplerPolicy(kind="rw", batch_size=4, seed=0)
        m = sample_rw(path5, policy, start_entity=0)
        assert m.positives.tolist() == [[0, 0, 1], [1, 0, 2], [2, 0, 3], [3, 0, 4]]
        assert m.restarts == 0

    def test_single_step(self, star6):
        m = sample_rw(star6, SamplerPolicy(kind="rw", batch_size=1, seed=3),
                      start_entity=0)
        assert len(m) == 1
        s, _, o = m.positives[0]
        assert 0 in (s, o)

    def test_connected_without_stall(self):
        g = random_graph(n_entities=40, n_relations=2, n_triples=300, seed=5)
        m = sample_rw(g, SamplerPolicy(kind="rw", batch_size=30, seed=9))
        assert m.restarts == 0
        # walk triples form one weakly connected component
        verts = m.vertex_set
        index = {v: i for i, v in enumerate(verts)}
        parent = list(range(len(verts)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for s, _, o in m.positives:
            a, b = find(index[s]), find(index[o])
            parent[a] = b
        assert len({find(i) for i in range(len(verts))}) == 1

    def test_containment(self, small_random_graph):
        g = small_random_graph
        m = sample_rw(g, SamplerPolicy(kind="rw", batch_size=20, seed=11))
        assert as_set(m.positives) <= as_set(g.train)
        assert len(as_set(m.positives)) == len(m)


class TestRandomWalkRestart:
    def test_zero_probability_equals_plain_walk(self, small_random_graph):
        g = small_random_graph
        rw = sample_rw(g, SamplerPolicy(kind="rw", batch_size=15, seed=21))
        rwr = sample_rwr(g, SamplerPolicy(kind="rwr", batch_size=15,
                                          restart_probability=0.0, seed=21))
        assert np.array_equal(rw.positives, rwr.positives)

    def test_always_restart_stays_around_start(self):
        # two hubs joined by a bridge; with p=1 every step leaves the start hub
        triples = [(0, 0, i) for i in range(1, 6)] + [(0, 1, 6)] + \
                  [(6, 0, i) for i in range(7, 12)]
        g = from_id_triples(triples, n_entities=12, n_relations=2)
        policy = SamplerPolicy(kind="rwr", batch_size=5, restart_probability=1.0,
                               restart_target="start_node", seed=4)
        m = sample_rwr(g, policy, start_entity=0)
        if m.restarts == 0:
            assert all(0 in (s, o) for s, _, o in m.positives)

    def test_star_all_spokes(self, star6):
        policy = SamplerPolicy(kind="rwr", batch_size=4, restart_probability=1.0,
                               restart_target="start_node", seed=8)
        m = sample_rwr(star6, policy, start_entity=0)
        assert len(m) == 4
        assert all(s == 0 for s, _, o in m.positives)

    def test_uniform_previous_target(self, small_random_graph):
        policy = SamplerPolicy(kind="rwr", batch_size=10, restart_probability=0.3,
                               restart_target="uniform_previous", seed=17)
        m = sample_rwr(small_random_graph, policy)
        assert len(m) == 10


class TestInducedSubgraphSamplers:
    def test_tree_equals_walk(self, path5):
        seed = 13
        rw = sample_rw(path5, SamplerPolicy(kind="rw", batch_size=3, seed=seed))
        isg = sample_rwisg(path5, SamplerPolicy(kind="rwisg", batch_size=3, seed=seed))
        assert as_set(rw.positives) == as_set(isg.positives)

    def test_triangle_closure(self, triangle):
        # any 2-edge walk visits all three vertices, closing the triangle
        m = sample_rwisg(triangle, SamplerPolicy(kind="rwisg", batch_size=2, seed=0))
        assert as_set(m.positives) == {(0, 0, 1), (1, 0, 2), (2, 0, 0)}

    def test_closed_under_induction(self, small_random_graph):
        g = small_random_graph
        m = sample_rwisg(g, SamplerPolicy(kind="rwisg", batch_size=25, seed=31))
        again = induced_subgraph(g, set(m.vertex_set.tolist()))
        assert as_set(m.positives) == as_set(again)

    def test_rwisg_n_zero_fraction_equals_rwisg(self, small_random_graph):
        g = small_random_graph
        isg = sample_rwisg(g, SamplerPolicy(kind="rwisg", batch_size=20, seed=5))
        n0 = sample_rwisg_n(g, SamplerPolicy(kind="rwisg_n", batch_size=20,
                                             extra_neighbor_fraction=0.0, seed=5))
        assert np.array_equal(isg.positives, n0.positives)

    def test_rwisg_n_full_fraction_star(self, star6):
        policy = SamplerPolicy(kind="rwisg_n", batch_size=1,
                               extra_neighbor_fraction=1.0, seed=2)
        m = sample_rwisg_n(star6, policy, start_entity=0)
        # the hub is visited, so all six spokes are drawn
        assert as_set(m.positives) == {(0, 0, i) for i in range(1, 7)}

    def test_sandwich_with_shared_walk(self, small_random_graph):
        g = small_random_graph
        seed = 77
        rw = sample_rw(g, SamplerPolicy(kind="rw", batch_size=20, seed=seed))
        isg = sample_rwisg(g, SamplerPolicy(kind="rwisg", batch_size=20, seed=seed))
        isg_n = sample_rwisg_n(g, SamplerPolicy(kind="rwisg_n", batch_size=20, seed=seed))
        assert as_set(rw.positives) <= as_set(isg.positives)
        assert as_set(isg.positives) <= as_set(isg_n.positives)


class TestEpochIterator:
    def test_batch_count(self):
        g = random_graph(n_entities=40, n_relations=2, n_triples=100, seed=1)
        policy = SamplerPolicy(kind="sr", batch_size=10, seed=0)
        assert batches_per_epoch(g, policy) == 10
        assert len(list(epoch_iterator(g, policy))) == 10

    def test_batch_count_rounds_up(self):
        g = random_graph(n_entities=40, n_relations=2, n_triples=100, seed=1)
        for kind in ("sr", "rw"):
            policy = SamplerPolicy(kind=kind, batch_size=30, seed=0)
            assert len(list(epoch_iterator(g, policy))) == 4

    def test_sr_epoch_partitions_train(self, small_random_graph):
        g = small_random_graph
        policy = SamplerPolicy(kind="sr", batch_size=13, seed=6)
        batches = list(epoch_iterator(g, policy))
        union = set()
        total = 0
        for m in batches:
            union |= as_set(m.positives)
            total += len(m)
        assert union == as_set(g.train)
        assert total == g.n_train

    @pytest.mark.parametrize("kind", ["sr", "rw", "rwr", "rwisg", "rwisg_n"])
    def test_deterministic_given_seed(self, small_random_graph, kind):
        g = small_random_graph
        policy = SamplerPolicy(kind=kind, batch_size=12, seed=42)
        run1 = [m.positives for m in epoch_iterator(g, policy)]
        run2 = [m.positives for m in epoch_iterator(g, policy)]
        assert len(run1) == len(run2)
        for a, b in zip(run1, run2):
            assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", ["sr", "rw", "rwr", "rwisg", "rwisg_n"])
    def test_containment_all_policies(self, small_random_graph, kind):
        g = small_random_graph
        policy = SamplerPolicy(kind=kind, batch_size=12, seed=3)
        m = sample_minibatch(g, policy)
        assert as_set(m.positives) <= as_set(g.train)


class TestPolicyValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError, match="unknown sampler"):
            SamplerPolicy(kind="metropolis")

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            SamplerPolicy(batch_size=0)

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            SamplerPolicy(restart_probability=1.5)


class TestDotExport:
    def test_edge_count_matches_batch(self, small_random_graph):
        g = small_random_graph
        m = sample_sr(g, SamplerPolicy(kind="sr", batch_size=7, seed=1))
        dot = to_dot(m, g)
        assert dot.startswith("digraph")
        assert dot.count("->") == 7

    def test_ids_without_graph(self, chain3):
        m = sample_sr(chain3, SamplerPolicy(kind="sr", batch_size=3, seed=1))
        dot = to_dot(m)
        assert '"e0"' in dot

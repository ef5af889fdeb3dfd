"""Filtration ordering, the union-find sweep, generators, and the flood-fill oracle."""
import math

import numpy as np
import pytest

import acttopo as at
from acttopo.errors import UsageError
from acttopo.persistence import Filtration, betti0_at, compute_persistence


def filt(edges):
    """edges: list of (u, v, weight) over integer vertex ids."""
    src, dst, w = zip(*edges)
    return Filtration.from_edges(np.array(src), np.array(dst), np.array(w, dtype=float))


# a-b (0.9), c-d (0.8), b-c (0.7) with a,b,c,d = 0,1,2,3
THREE_EDGE = [(0, 1, 0.9), (2, 3, 0.8), (1, 2, 0.7)]


class TestFiltration:
    def test_descending_order(self):
        f = filt([(0, 1, 0.9), (2, 3, 0.7), (1, 2, 0.8)])
        assert f.weight.tolist() == [0.9, 0.8, 0.7]

    def test_tie_break_by_source_then_target(self):
        f = filt([(5, 6, 0.5), (0, 2, 0.5), (0, 1, 0.5)])
        assert list(zip(f.src.tolist(), f.dst.tolist())) == [(0, 1), (0, 2), (5, 6)]

    def test_single_edge(self):
        f = filt([(0, 1, 0.4)])
        assert len(f) == 1

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            Filtration.from_edges(np.array([]), np.array([]), np.array([]))

    def test_graph_tie_break_matches_node_order(self):
        # equal phi everywhere: order must follow (layer, source index, target index)
        spec = at.NetworkSpec(layers=(at.Dense(2, 2, "identity"),), input_shape=(2,))
        w = at.NetworkWeights(((np.ones((2, 2)), np.zeros(2)),))
        rec = at.forward(spec, w, np.ones(2))
        g = at.build_induced_graph(spec, w, rec)
        f = at.build_filtration(g)
        assert list(zip(f.src.tolist(), f.dst.tolist())) == [(0, 2), (0, 3), (1, 2), (1, 3)]


class TestComputePersistence:
    def test_three_edge_hand_trace(self):
        res = compute_persistence(filt(THREE_EDGE))
        pairs = res.pairs
        assert len(pairs) == 2
        infinite = [p for p in pairs if p.is_infinite]
        dead = [p for p in pairs if not p.is_infinite]
        assert len(infinite) == 1 and len(dead) == 1
        assert infinite[0].birth_weight == 0.9
        assert infinite[0].death_weight == 0.0
        assert infinite[0].lifetime == 0.9
        assert dead[0].birth_weight == 0.8
        assert dead[0].death_weight == pytest.approx(0.7)
        assert dead[0].lifetime == pytest.approx(0.1)

        gens = {g.generator_id: g for g in res.generators}
        f = res.filtration
        def edge_set(g):
            return {(int(f.src[np.where(f.orig_index == e)[0][0]]),
                     int(f.dst[np.where(f.orig_index == e)[0][0]])) for e in g.edges}
        g_inf = gens[infinite[0].generator_id]
        g_dead = gens[dead[0].generator_id]
        assert edge_set(g_dead) == {(2, 3)}
        assert g_dead.vertices == {2, 3}
        assert edge_set(g_inf) == {(0, 1), (1, 2)}
        assert g_inf.vertices == {0, 1, 2}

    def test_star_graph_single_generator(self):
        edges = [(0, i, 1.0 - 0.1 * i) for i in range(1, 6)]
        res = compute_persistence(filt(edges))
        assert res.n_generators == 1
        assert res.n_infinite == 1
        assert len(res.generators[0].edges) == 5

    def test_triangle_cycle_edge(self):
        res = compute_persistence(filt([(0, 1, 0.9), (1, 2, 0.8), (0, 2, 0.7)]))
        assert res.n_generators == 1
        assert res.n_infinite == 1
        assert len(res.generators[0].edges) == 3  # the cycle edge joins the lone generator

    def test_elder_rule_survivor(self):
        # two components; the earlier-born one (index 0) survives the merge
        res = compute_persistence(filt(THREE_EDGE))
        by_birth = sorted(res.pairs, key=lambda p: p.birth_index)
        assert by_birth[0].is_infinite
        assert by_birth[1].death_index == 2

    def test_index_lifetime_diagnostic(self):
        res = compute_persistence(filt(THREE_EDGE))
        dead = [p for p in res.pairs if not p.is_infinite][0]
        assert res.index_lifetimes[dead.generator_id] == dead.death_index - dead.birth_index
        inf_gen = [p for p in res.pairs if p.is_infinite][0]
        assert math.isinf(res.index_lifetimes[inf_gen.generator_id])

    def test_lifetimes_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            edges = _random_edges(rng)
            res = compute_persistence(filt(edges))
            assert np.all(res.lifetimes >= 0)

    def test_edge_partition(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            edges = _random_edges(rng)
            res = compute_persistence(filt(edges))
            counted = sum(len(g.edges) for g in res.generators)
            assert counted == len(edges)
            all_edges = set()
            for g in res.generators:
                assert not (all_edges & g.edges)
                all_edges |= g.edges

    def test_infinite_pairs_equal_component_count(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            edges = _random_edges(rng)
            f = filt(edges)
            res = compute_persistence(f)
            assert res.n_infinite == betti0_at(f, 0.0)

    def test_generator_closure_connected(self):
        # a generator together with the generators that died into it is connected
        rng = np.random.default_rng(3)
        for _ in range(10):
            edges = _random_edges(rng)
            f = filt(edges)
            res = compute_persistence(f)
            died_into: dict[int, list[int]] = {}
            for pos in range(len(f)):
                for g in range(res.n_generators):
                    if res.death_index[g] == pos:
                        died_into.setdefault(int(res.edge_gen[pos]), []).append(g)
            def closure(g):
                out = {g}
                stack = [g]
                while stack:
                    for child in died_into.get(stack.pop(), []):
                        if child not in out:
                            out.add(child)
                            stack.append(child)
                return out
            gens = res.generators
            for g in range(res.n_generators):
                members = closure(g)
                srcs, dsts = [], []
                for m in members:
                    for pos in np.nonzero(res.edge_gen == m)[0]:
                        srcs.append(int(f.src[pos]))
                        dsts.append(int(f.dst[pos]))
                from acttopo.persistence import flood_fill_components
                assert flood_fill_components(np.array(srcs), np.array(dsts)) == 1


class TestBetti0:
    def test_threshold_above_everything(self):
        f = filt(THREE_EDGE)
        assert betti0_at(f, 0.95) == 0

    def test_three_edge_thresholds(self):
        f = filt(THREE_EDGE)
        assert betti0_at(f, 0.0) == 1
        assert betti0_at(f, 0.75) == 2
        assert betti0_at(f, 0.85) == 1  # only a-b present

    def test_negative_threshold_rejected(self):
        with pytest.raises(UsageError):
            betti0_at(filt(THREE_EDGE), -0.1)


def _random_edges(rng, max_vertices=30, max_edges=80):
    n_v = int(rng.integers(2, max_vertices))
    n_e = int(rng.integers(1, max_edges))
    pairs = set()
    edges = []
    for _ in range(n_e):
        u, v = rng.integers(n_v), rng.integers(n_v)
        if u == v or (u, v) in pairs or (v, u) in pairs:
            continue
        pairs.add((u, v))
        edges.append((int(u), int(v), float(rng.uniform(0.01, 1.0))))
    if not edges:
        edges = [(0, 1, 0.5)]
    return edges


class TestOracleEquivalence:
    def test_sweep_matches_flood_fill_everywhere(self):
        # live component counts after each insertion == fresh flood fill at that weight
        rng = np.random.default_rng(42)
        for _ in range(30):
            edges = _random_edges(rng)
            f = filt(edges)
            res = compute_persistence(f)
            for i in range(len(f)):
                assert res.live_components[i] == betti0_at(f, float(f.weight[i]))


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        res = compute_persistence(filt(THREE_EDGE))
        res.save(tmp_path / "p.npz")
        back = at.PersistenceResult.load(tmp_path / "p.npz")
        assert np.array_equal(back.diagram(), res.diagram())
        assert np.array_equal(back.edge_gen, res.edge_gen)
        assert np.array_equal(back.birth_index, res.birth_index)
        assert np.array_equal(back.death_index, res.death_index)
        assert back.filtration.n_nodes == res.filtration.n_nodes

    def test_diagram_top_k(self):
        res = compute_persistence(filt(THREE_EDGE))
        assert res.diagram().shape == (2, 2)
        assert res.diagram(top_k=1).shape == (1, 2)
        assert res.diagram(top_k=1)[0, 0] == 0.9  # keeps the most persistent pair

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taborder import metrics
from taborder import rng as rngmod
from taborder import scm
from taborder.scm import Dag, Table

CHAIN = Dag(d=3, edges=frozenset({(0, 1), (1, 2)}), topo_order=(0, 1, 2))


def brute_force_dtop(order, dag):
    pos = {v: i for i, v in enumerate(order)}
    return sum(1 for p, c in dag.edges if pos[p] >= pos[c])


class TestTopologicalDivergence:
    def test_chain_correct_order(self):
        assert metrics.topological_divergence((0, 1, 2), CHAIN) == (0, 0.0)

    def test_chain_reversed(self):
        assert metrics.topological_divergence((2, 1, 0), CHAIN) == (2, 1.0)

    def test_edgeless_graph_normalized_zero(self):
        dag = Dag(d=2, edges=frozenset(), topo_order=(0, 1))
        assert metrics.topological_divergence((1, 0), dag) == (0, 0.0)

    def test_not_a_permutation(self):
        with pytest.raises(ValueError):
            metrics.topological_divergence((0, 0, 2), CHAIN)

    def test_zero_iff_topological_order_small_d(self):
        for seed in range(10):
            dag = scm.sample_dag(4, 4, rngmod.generator(seed))
            pos_topo = {v: i for i, v in enumerate(dag.topo_order)}
            for perm in itertools.permutations(range(4)):
                raw, _ = metrics.topological_divergence(perm, dag)
                pos = {v: i for i, v in enumerate(perm)}
                is_topo = all(pos[p] < pos[c] for p, c in dag.edges)
                assert (raw == 0) == is_topo

    def test_matches_brute_force_random_dags(self):
        for seed in range(100):
            rng = rngmod.generator(seed)
            dag = scm.sample_dag(3, 7, rng)
            perm = tuple(int(v) for v in rng.permutation(dag.d))
            raw, norm = metrics.topological_divergence(perm, dag)
            assert raw == brute_force_dtop(perm, dag)
            if dag.edges:
                assert norm == pytest.approx(raw / len(dag.edges))


class TestRankShift:
    def test_identical_orders(self):
        for node in range(4):
            assert metrics.rank_shift((0, 1, 2, 3), (0, 1, 2, 3), node) == 0

    def test_first_to_last(self):
        assert metrics.rank_shift((1, 2, 3, 4, 0), (0, 1, 2, 3, 4), 0) == 4

    def test_adjacent_swap(self):
        assert metrics.rank_shift((1, 0, 2), (0, 1, 2), 0) == 1
        assert metrics.rank_shift((1, 0, 2), (0, 1, 2), 1) == -1

    def test_node_absent(self):
        with pytest.raises(ValueError):
            metrics.rank_shift((0, 1), (0, 1), 5)

    def test_shifts_sum_to_zero(self):
        rng = rngmod.generator(3)
        for _ in range(20):
            a = tuple(int(v) for v in rng.permutation(6))
            b = tuple(int(v) for v in rng.permutation(6))
            assert sum(metrics.rank_shift(a, b, v) for v in range(6)) == 0


class TestFlipFraction:
    def test_identical(self):
        assert metrics.pairwise_flip_fraction((0, 1, 2), (0, 1, 2), 1) == 0.0

    def test_full_reversal(self):
        for node in range(5):
            assert metrics.pairwise_flip_fraction((4, 3, 2, 1, 0), (0, 1, 2, 3, 4), node) == 1.0

    def test_two_position_hop(self):
        # node 0 moves position 0 -> 2 in d=5: flips against exactly the two hopped nodes
        assert metrics.pairwise_flip_fraction((1, 2, 0, 3, 4), (0, 1, 2, 3, 4), 0) == 0.5

    def test_symmetric_in_the_orders(self):
        rng = rngmod.generator(4)
        for _ in range(20):
            a = tuple(int(v) for v in rng.permutation(5))
            b = tuple(int(v) for v in rng.permutation(5))
            for node in range(5):
                assert metrics.pairwise_flip_fraction(a, b, node) == metrics.pairwise_flip_fraction(b, a, node)

    def test_needs_two_nodes(self):
        with pytest.raises(ValueError):
            metrics.pairwise_flip_fraction((0,), (0,), 0)


class TestImputationRmse:
    def trio(self):
        rng = rngmod.generator(5)
        truth = rng.normal(size=(6, 3))
        targets = np.zeros((6, 3), dtype=bool)
        targets[0, 0] = targets[2, 1] = True
        return truth, targets

    def test_perfect(self):
        truth, targets = self.trio()
        assert metrics.imputation_rmse(truth, truth.copy(), targets) == 0.0

    def test_constant_offset(self):
        truth, targets = self.trio()
        imputed = truth + np.where(targets, 1.0, 0.0)
        assert metrics.imputation_rmse(truth, imputed, targets) == pytest.approx(1.0)

    def test_mixed_errors(self):
        truth, targets = self.trio()
        imputed = truth.copy()
        imputed[2, 1] += 2.0
        assert metrics.imputation_rmse(truth, imputed, targets) == pytest.approx(np.sqrt(2.0))

    def test_accepts_tables(self):
        truth, targets = self.trio()
        t = Table(truth, np.zeros_like(targets))
        assert metrics.imputation_rmse(t, t.copy(), targets) == 0.0

    def test_empty_targets(self):
        truth, _ = self.trio()
        with pytest.raises(ValueError):
            metrics.imputation_rmse(truth, truth, np.zeros((6, 3), dtype=bool))


class TestHeldOutNll:
    def test_closed_form(self):
        targets = np.ones((1, 1), dtype=bool)
        val = metrics.held_out_nll(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)), targets)
        assert val == pytest.approx(0.5 * np.log(2 * np.pi))

    def test_nonpositive_variance(self):
        with pytest.raises(ValueError):
            metrics.held_out_nll(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                                 np.ones((1, 1), dtype=bool))


class TestSachsFixture:
    def test_consensus_graph_shape(self):
        dag = metrics.sachs_consensus_dag()
        assert dag.d == 11
        assert len(dag.edges) == 17

    def test_published_violation_counts(self):
        dag = metrics.sachs_consensus_dag()
        for condition, expected in metrics.SACHS_EDGE_VIOLATIONS.items():
            raw, _ = metrics.topological_divergence(metrics.sachs_order(condition), dag)
            assert raw == expected, condition

    def test_reference_condition_count_is_three(self):
        dag = metrics.sachs_consensus_dag()
        order = metrics.sachs_order(metrics.SACHS_REFERENCE_CONDITION)
        assert metrics.topological_divergence(order, dag)[0] == 3

    def test_orders_cover_all_nodes(self):
        for condition in metrics.SACHS_CONDITION_ORDERS:
            assert sorted(metrics.sachs_order(condition)) == list(range(11))


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(5))))
def test_divergence_bounded_by_edge_count(perm):
    dag = scm.sample_dag(5, 5, rngmod.generator(0))
    raw, norm = metrics.topological_divergence(tuple(perm), dag)
    assert 0 <= raw <= len(dag.edges)
    assert 0.0 <= norm <= 1.0

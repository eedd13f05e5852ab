import itertools

import numpy as np
import pytest

from balgraph.balance import (
    BALANCED_CHT,
    LOGISTIC_UNBALANCED,
    POSITIVE_ONLY,
    SIGNED_AFFINITY,
    WeightScheme,
    assign_weights,
    edge_weight,
    init_polarity,
    is_balanced,
    total_variation_objective,
    update_polarities,
)
from balgraph.errors import MissingDistance
from balgraph.graphs import SignedGraph


def complete_topology(n):
    return SignedGraph.from_edges(n, [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)])


def random_distance_field(rng, n, low=0.05, high=3.0):
    d = rng.uniform(low, high, size=(n, n))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


class TestInitPolarity:
    def test_all_positive_row(self):
        cov = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
        assert np.array_equal(init_polarity(cov, anchor=0), [1, 1, 1])

    def test_sign_read_off(self):
        cov = np.array([[1.0, -0.3, 0.2], [-0.3, 1.0, 0.1], [0.2, 0.1, 1.0]])
        assert np.array_equal(init_polarity(cov, anchor=0), [1, -1, 1])

    def test_zero_covariance_tie_rule(self):
        cov = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.array_equal(init_polarity(cov, anchor=0), [1, 1])

    def test_default_anchor_is_heaviest_row(self):
        cov = np.array([[0.1, 0.0, 0.0], [0.0, 5.0, -4.0], [0.0, -4.0, 5.0]])
        beta = init_polarity(cov)
        # Anchor is row 1 (largest absolute sum); node 2 anti-correlates.
        assert beta[1] == 1 and beta[2] == -1


class TestEdgeWeight:
    def test_cht_same_polarity_d0(self):
        assert edge_weight(WeightScheme(BALANCED_CHT), 0.0, 1, 1) == 1.0

    def test_cht_opposite_polarity_d0(self):
        assert edge_weight(WeightScheme(BALANCED_CHT), 0.0, 1, -1) == 0.0

    def test_logistic_zero_at_d_star(self):
        scheme = WeightScheme(LOGISTIC_UNBALANCED, d_star=0.7)
        assert edge_weight(scheme, 0.7, 1, 1) == pytest.approx(0.0, abs=1e-15)

    def test_logistic_range_and_sign(self):
        scheme = WeightScheme(LOGISTIC_UNBALANCED, d_star=1.0)
        for d in np.linspace(0.0, 6.0, 40):
            w = edge_weight(scheme, d, 1, 1)
            assert -1.0 < w < 1.0
            assert (w > 0) == (d < 1.0) or d == 1.0

    def test_cht_monotone_decreasing_both_branches(self):
        scheme = WeightScheme(BALANCED_CHT)
        ds = np.linspace(0.0, 4.0, 60)
        same = [edge_weight(scheme, d, 1, 1) for d in ds]
        opp = [edge_weight(scheme, d, 1, -1) for d in ds]
        assert np.all(np.diff(same) < 0)
        assert np.all(np.diff(opp) < 0)

    def test_signed_affinity_magnitude(self):
        scheme = WeightScheme(SIGNED_AFFINITY)
        assert edge_weight(scheme, 0.5, 1, -1) == pytest.approx(-np.exp(-0.5))
        assert edge_weight(scheme, 0.5, -1, -1) == pytest.approx(np.exp(-0.5))

    def test_d_star_must_be_positive(self):
        with pytest.raises(ValueError):
            WeightScheme(LOGISTIC_UNBALANCED, d_star=-1.0)


class TestAssignWeights:
    def test_balanced_cht_always_balanced(self):
        rng = np.random.default_rng(100)
        scheme = WeightScheme(BALANCED_CHT)
        for _ in range(200):
            n = int(rng.integers(3, 12))
            topo = complete_topology(n)
            d = random_distance_field(rng, n)
            beta = rng.choice([-1, 1], size=n)
            g = assign_weights(d, beta, scheme, topo)
            check = is_balanced(g)
            assert check.balanced
            for i, j, w in g.edge_list():
                assert np.sign(w) == beta[i] * beta[j]

    def test_missing_distance_rejected(self):
        topo = complete_topology(3)
        d = random_distance_field(np.random.default_rng(1), 3)
        d[0, 1] = d[1, 0] = np.nan
        with pytest.raises(MissingDistance):
            assign_weights(d, np.ones(3, dtype=int), WeightScheme(BALANCED_CHT), topo)

    def test_wrong_shape_rejected(self):
        topo = complete_topology(3)
        with pytest.raises(MissingDistance):
            assign_weights(np.zeros((2, 2)), np.ones(3, dtype=int), WeightScheme(BALANCED_CHT), topo)

    def test_zero_weight_edges_dropped(self):
        # Opposite polarities at distance 0 give weight exactly 0 under the
        # two-branch rule; such edges cannot be stored and are dropped.
        topo = complete_topology(2)
        d = np.zeros((2, 2))
        g = assign_weights(d, np.array([1, -1]), WeightScheme(BALANCED_CHT), topo)
        assert g.n_edges == 0

    def test_positive_scheme_ignores_beta(self):
        topo = complete_topology(4)
        d = random_distance_field(np.random.default_rng(2), 4)
        g = assign_weights(d, None, WeightScheme(POSITIVE_ONLY), topo)
        assert np.all(g.weights > 0)

    def test_logistic_weights_in_open_interval(self):
        topo = complete_topology(5)
        rng = np.random.default_rng(3)
        d = random_distance_field(rng, 5)
        g = assign_weights(d, None, WeightScheme(LOGISTIC_UNBALANCED, d_star=1.0), topo)
        assert np.all(np.abs(g.weights) < 1.0)
        for i, j, w in g.edge_list():
            assert (w > 0) == (d[i, j] < 1.0)


class TestIsBalanced:
    def test_worked_example_balanced(self):
        g = SignedGraph.from_edges(3, [(0, 1, -1.0), (0, 2, -1.0), (1, 2, 2.0)])
        check = is_balanced(g)
        assert check.balanced
        beta = check.polarity
        for i, j, w in g.edge_list():
            assert np.sign(w) == beta[i] * beta[j]

    def test_one_negative_triangle_unbalanced(self):
        g = SignedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, -1.0)])
        check = is_balanced(g)
        assert not check.balanced
        cycle = check.odd_cycle
        assert cycle is not None and len(cycle) >= 3
        # Witness walk closes with an odd number of negative edges.
        signs = {}
        for i, j, w in g.edge_list():
            signs[(i, j)] = signs[(j, i)] = np.sign(w)
        closed = cycle + [cycle[0]]
        negatives = sum(1 for a, b in zip(closed, closed[1:]) if signs[(a, b)] < 0)
        assert negatives % 2 == 1

    def test_all_positive_balanced(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            n = int(rng.integers(3, 10))
            topo = complete_topology(n)
            assert is_balanced(topo).balanced

    def test_disconnected_components(self):
        g = SignedGraph.from_edges(5, [(0, 1, -1.0), (2, 3, 1.0), (3, 4, -2.0), (2, 4, -2.0)])
        assert is_balanced(g).balanced

    def test_unbalanced_five_cycle(self):
        edges = [(0, 1, 1.0), (1, 2, -1.0), (2, 3, -1.0), (3, 4, -1.0), (0, 4, 1.0)]
        assert not is_balanced(SignedGraph.from_edges(5, edges)).balanced


class TestUpdatePolarities:
    def test_constant_signals_no_flip(self):
        g = complete_topology(6)
        beta = np.ones(6, dtype=int)
        signals = [np.full(6, 2.5), np.full(6, -1.0)]
        out = update_polarities(g, beta, signals)
        assert np.array_equal(out.beta, beta)
        assert out.converged

    def test_two_node_antiphase_flips(self):
        # Signals proportional to [1, -1]: enumeration of both choices shows
        # the opposite-polarity (negative-edge) configuration has smaller
        # total variation.
        g = SignedGraph.from_edges(2, [(0, 1, 1.0)])
        signals = [np.array([1.0, -1.0]) * a for a in (1.0, 2.0, 0.5)]
        base = np.ones(2, dtype=int)
        scores = {}
        for b1 in (1, -1):
            cand = np.array([1, b1])
            scores[b1] = total_variation_objective(g, cand, signals)
        assert scores[-1] < scores[1]
        out = update_polarities(g, base, signals)
        assert out.beta[0] * out.beta[1] == -1
        assert out.graph.weights[0] < 0

    @pytest.mark.parametrize("noise", [0.0, 0.01])
    def test_matches_exhaustive_search_small(self, noise):
        # Covariance-seeded start plus sweeps reaches the brute-force optimal
        # objective value on polarity-consistent instances. Single-flip
        # coordinate descent offers no global guarantee in general: with
        # large noise, near-tied configurations exist where it stalls one
        # flip short, so the check is run where signal evidence dominates.
        rng = np.random.default_rng(5)
        checked = 0
        for trial in range(8):
            n = 7
            beta_true = rng.choice([-1, 1], size=n)
            edges = []
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.6:
                        mag = rng.uniform(0.2, 1.5)
                        edges.append((i, j, beta_true[i] * beta_true[j] * mag))
            g = SignedGraph.from_edges(n, edges)
            signals = [
                beta_true * rng.uniform(0.5, 1.5) + rng.normal(scale=noise, size=n)
                for _ in range(6)
            ]
            cov = np.cov(np.stack(signals, axis=1))
            beta0 = init_polarity(cov)
            out = update_polarities(g, beta0, signals, max_sweeps=50)
            if not out.converged:
                continue
            best = min(
                (np.array(c) for c in itertools.product([-1, 1], repeat=n)),
                key=lambda c: total_variation_objective(g, c, signals),
            )
            got = total_variation_objective(g, out.beta, signals)
            want = total_variation_objective(g, best, signals)
            assert got == pytest.approx(want, rel=1e-9, abs=1e-9)
            checked += 1
        assert checked >= 5

    def test_objective_never_increases_between_sweeps(self):
        rng = np.random.default_rng(6)
        n = 10
        topo = complete_topology(n)
        d = random_distance_field(rng, n)
        beta0 = rng.choice([-1, 1], size=n)
        g = assign_weights(d, beta0, WeightScheme(BALANCED_CHT), topo)
        signals = [rng.normal(size=n) for _ in range(5)]
        prev = total_variation_objective(g, beta0, signals)
        beta = beta0
        for _ in range(5):
            out = update_polarities(g, beta, signals, max_sweeps=1)
            cur = total_variation_objective(g, out.beta, signals)
            assert cur <= prev + 1e-12
            prev, beta, g = cur, out.beta, out.graph

    def test_returns_sweep_diagnostics(self):
        g = complete_topology(4)
        out = update_polarities(g, np.ones(4, dtype=int), [np.arange(4.0)], max_sweeps=3)
        assert 1 <= out.sweeps <= 3

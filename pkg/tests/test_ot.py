import itertools

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clot.core import DimensionError, InputError, ParameterError, make_rng
from clot.cost import CostBundle, banded_adjacency, distinct_actions, structure_matrices
from clot.evaluation import segments_of
from clot.ot import (
    Marginals,
    OtConfig,
    decode_labels,
    fused_objective,
    gw_gradient,
    gw_objective,
    solve_entropic_kot,
    solve_fused,
)

# fixed instance for the LP comparison; optimum frozen from vertex enumeration
LP_COST = np.array([
    [0.62, 0.11, 0.93, 0.47],
    [0.25, 0.78, 0.36, 0.05],
    [0.84, 0.52, 0.19, 0.71],
    [0.33, 0.96, 0.58, 0.28],
    [0.07, 0.44, 0.81, 0.66],
])
LP_OPTIMUM = 0.1785


def lp_vertex_optimum(c):
    """Minimum of <C, T> over the balanced transport polytope by enumerating bases."""
    n, m = c.shape
    a = np.zeros((n + m, n * m))
    for i in range(n):
        a[i, i * m : (i + 1) * m] = 1
    for j in range(m):
        a[n + j, j::m] = 1
    b = np.concatenate([np.full(n, 1 / n), np.full(m, 1 / m)])[:-1]
    a = a[:-1]
    combos = np.array(list(itertools.combinations(range(n * m), n + m - 1)))
    mats = a[:, combos].transpose(1, 0, 2)
    ok = np.abs(np.linalg.det(mats)) > 1e-9
    x = np.linalg.solve(mats[ok], np.broadcast_to(b, (ok.sum(), b.size))[..., None])[..., 0]
    feasible = np.all(x >= -1e-12, axis=1)
    return float((c.ravel()[combos[ok]] * x).sum(1)[feasible].min())


def gw_gradient_loops(t, c_rows, c_cols):
    """Gradient of sum_{ikjl} R_ik K_jl T_ij T_kl by explicit loops (halved)."""
    n, m = t.shape
    g = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            total = 0.0
            for k in range(n):
                for l in range(m):
                    # d/dT_ij picks up both factor positions
                    total += c_rows[i, k] * c_cols[j, l] * t[k, l] + c_rows[k, i] * c_cols[l, j] * t[k, l]
            g[i, j] = 0.5 * total
    return g


def bundle_for(cost, radius=1):
    n, m = cost.shape
    return CostBundle(cost, banded_adjacency(n, radius), distinct_actions(m))


# ------------------------------------------------------------------ config


def test_config_validation():
    for kw in ({"alpha": -0.1}, {"alpha": 1.5}, {"epsilon": 0.0}, {"lam": 0.0}, {"tol": 0.0}):
        with pytest.raises(ParameterError):
            OtConfig(**kw)


def test_uniform_marginals():
    marg = Marginals.uniform(4, 3)
    assert marg.mu.sum() == pytest.approx(1.0, abs=1e-12)
    assert marg.nu.sum() == pytest.approx(1.0, abs=1e-12)


# ------------------------------------------------------------------ entropic solver


def test_constant_cost_uniform_plan():
    cfg = OtConfig(epsilon=0.1, lam=1e6)
    plan = solve_entropic_kot(np.full((4, 3), 0.7), Marginals.uniform(4, 3), cfg)
    np.testing.assert_allclose(plan.t, 1 / 12, atol=1e-6)


def _mp_sinkhorn_2x2(eps):
    mpmath.mp.dps = 50
    c = [[0, 1], [1, 0]]
    k = [[mpmath.e ** (-mpmath.mpf(c[i][j]) / eps) for j in range(2)] for i in range(2)]
    u, v = [mpmath.mpf(1)] * 2, [mpmath.mpf(1)] * 2
    for _ in range(200):
        u = [mpmath.mpf(0.5) / sum(k[i][j] * v[j] for j in range(2)) for i in range(2)]
        v = [mpmath.mpf(0.5) / sum(k[i][j] * u[i] for i in range(2)) for j in range(2)]
    return np.array([[float(u[i] * k[i][j] * v[j]) for j in range(2)] for i in range(2)])


def test_two_by_two_matches_extended_precision():
    want = _mp_sinkhorn_2x2(mpmath.mpf("0.05"))
    plan = solve_entropic_kot(np.array([[0.0, 1.0], [1.0, 0.0]]), Marginals.uniform(2, 2),
                              OtConfig(epsilon=0.05, lam=1e6, tol=1e-12, inner_iters=5000))
    assert np.all(np.diag(plan.t) > 0.45)
    np.testing.assert_allclose(plan.t, want, atol=1e-6)


def test_row_marginal_exact(rng):
    marg = Marginals.uniform(10, 5)
    for _ in range(20):
        plan = solve_entropic_kot(rng.random((10, 5)), marg, OtConfig())
        assert plan.converged
        np.testing.assert_allclose(plan.t.sum(1), marg.mu, atol=1e-9)
        np.testing.assert_allclose(plan.row_marginal, plan.t.sum(1), atol=1e-12)
        assert np.all(plan.t >= 0)


def test_non_finite_cost_rejected():
    with pytest.raises(InputError):
        solve_entropic_kot(np.array([[0.0, np.inf]]), Marginals.uniform(1, 2), OtConfig())
    with pytest.raises(DimensionError):
        solve_entropic_kot(np.zeros((2, 2)), Marginals.uniform(3, 2), OtConfig())


def test_non_convergence_is_reported(rng):
    plan = solve_entropic_kot(rng.random((6, 4)), Marginals.uniform(6, 4),
                              OtConfig(epsilon=1e-3, inner_iters=1, tol=1e-14))
    assert plan.converged is False
    np.testing.assert_allclose(plan.t.sum(1), 1 / 6, atol=1e-9)


def test_lp_oracle_reproduces_frozen_optimum():
    assert lp_vertex_optimum(LP_COST) == pytest.approx(LP_OPTIMUM, abs=1e-12)


def test_small_epsilon_near_lp_optimum():
    plan = solve_entropic_kot(LP_COST, Marginals.uniform(5, 4), OtConfig(epsilon=1e-3, lam=1e6))
    assert abs(float(np.sum(LP_COST * plan.t)) - LP_OPTIMUM) <= 0.01 * LP_OPTIMUM


def test_column_relaxation_tightens_with_lambda(rng):
    cost = rng.random((8, 4))
    cost[:, 0] -= 0.5  # make one column attractive
    marg = Marginals.uniform(8, 4)
    gaps = []
    for lam in (0.01, 0.1, 1.0, 10.0, 1e6):
        plan = solve_entropic_kot(cost, marg, OtConfig(lam=lam, epsilon=0.05))
        gaps.append(np.max(np.abs(plan.t.sum(0) - marg.nu)))
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 7), st.integers(2, 5))
def test_permutation_equivariance(seed, n, m):
    rng = make_rng(seed)
    cost = rng.random((n, m))
    perm = rng.permutation(m)
    cfg = OtConfig(alpha=0.4)
    marg = Marginals.uniform(n, m)
    base = solve_fused(bundle_for(cost), marg, cfg)
    cc = distinct_actions(m)[np.ix_(perm, perm)]
    moved = solve_fused(CostBundle(cost[:, perm], banded_adjacency(n, 1), cc), marg, cfg)
    np.testing.assert_allclose(moved.t, base.t[:, perm], atol=1e-10)


# ------------------------------------------------------------------ GW term


def test_gw_zero_structure():
    t = np.full((3, 2), 1 / 6)
    assert np.all(gw_gradient(t, np.zeros((3, 3)), distinct_actions(2)) == 0)


def test_gw_hand_example():
    anti = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(gw_gradient(np.eye(2) / 2, anti, anti), np.eye(2) / 2)


def test_gw_uniform_chain_matches_loops():
    t = np.full((3, 2), 1 / 6)
    r = banded_adjacency(3, 1)
    np.testing.assert_allclose(gw_gradient(t, r, distinct_actions(2)), gw_gradient_loops(t, r, distinct_actions(2)),
                               atol=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_gw_matches_loops_random(seed):
    rng = make_rng(seed)
    n, m = rng.integers(1, 7, size=2)
    t = rng.random((n, m))
    r = banded_adjacency(n, int(rng.integers(0, n + 1)))
    c = distinct_actions(m)
    np.testing.assert_allclose(gw_gradient(t, r, c), gw_gradient_loops(t, r, c), atol=1e-12)


def test_gw_sparse_matches_dense(rng):
    t = rng.random((30, 4))
    dense = gw_gradient(t, banded_adjacency(30, 3), distinct_actions(4))
    sparse = gw_gradient(t, banded_adjacency(30, 3, sparse=True), distinct_actions(4))
    np.testing.assert_allclose(dense, sparse, atol=1e-14)


def test_gw_objective_counts_boundary_mass():
    # two adjacent frames split across two actions: each ordered pair counts once
    t = np.array([[0.5, 0.0], [0.0, 0.5]])
    r = banded_adjacency(2, 1)
    assert gw_objective(t, r, distinct_actions(2)) == pytest.approx(0.5 * 2 * 0.25)


def test_gw_dimension_error():
    with pytest.raises(DimensionError):
        gw_gradient(np.ones((3, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


# ------------------------------------------------------------------ fused solve


def test_alpha_zero_equals_entropic(rng):
    for _ in range(5):
        cost = rng.random((9, 4))
        cfg = OtConfig(alpha=0.0)
        fused = solve_fused(bundle_for(cost, 2), Marginals.uniform(9, 4), cfg)
        plain = solve_entropic_kot(cost, Marginals.uniform(9, 4), cfg)
        np.testing.assert_allclose(fused.t, plain.t, atol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_fused_objective_non_increasing(seed):
    rng = make_rng(seed)
    cost = rng.random((20, 4))
    cfg = OtConfig(alpha=0.5, tol=1e-10, inner_iters=2000)
    c_rows, c_cols = structure_matrices(20, 4, 0.1)
    plan = solve_fused(CostBundle(cost, c_rows, c_cols), Marginals.uniform(20, 4), cfg)
    hist = np.asarray(plan.objective_history)
    assert len(hist) == cfg.outer_iters + 1
    assert np.all(np.diff(hist) <= 1e-9)
    assert plan.objective == pytest.approx(
        fused_objective(CostBundle(cost, c_rows, c_cols), plan.t, Marginals.uniform(20, 4), cfg))


def block_instance(seed=0, noise=0.45):
    """40 frames in three blocks (14/13/13); cost 0 on the true action plus Gaussian noise."""
    rng = make_rng(seed)
    labels = np.repeat([0, 1, 2], [14, 13, 13])
    cost = np.ones((40, 3))
    cost[np.arange(40), labels] = 0.0
    return cost + noise * rng.standard_normal((40, 3)), labels


def decoded_segments(alpha):
    cost, _ = block_instance()
    c_rows, c_cols = structure_matrices(40, 3, 0.05)
    plan = solve_fused(CostBundle(cost, c_rows, c_cols), Marginals.uniform(40, 3), OtConfig(alpha=alpha))
    return len(segments_of(decode_labels(plan)))


def test_structure_term_reduces_fragmentation():
    assert decoded_segments(0.6) <= decoded_segments(0.0)
    assert decoded_segments(0.6) < decoded_segments(0.0)  # the designed instance separates them


def test_row_feasibility_fused(rng):
    for _ in range(10):
        plan = solve_fused(bundle_for(rng.random((10, 5))), Marginals.uniform(10, 5), OtConfig())
        assert np.max(np.abs(plan.t.sum(1) - 0.1)) <= 1e-6


# ------------------------------------------------------------------ decoding


def test_decode_examples():
    assert decode_labels(np.array([[0.2, 0.2, 0.6]]))[0] == 2
    assert decode_labels(np.array([[0.5, 0.5]]))[0] == 0
    block = np.kron(np.eye(3), np.ones((2, 1)))
    np.testing.assert_array_equal(decode_labels(block), [0, 0, 1, 1, 2, 2])

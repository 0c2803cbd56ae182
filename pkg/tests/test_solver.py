"""Monotone scheme tests: exact solutions, oracles, and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from sdgames.grids import StateGrid, constant_like
from sdgames.model import make_spec
from sdgames.solver import (
    SolverError,
    build_tables,
    cfl_limit,
    isaacs_gap,
    solve_discounted,
    solve_parabolic,
)

# -- oracle -------------------------------------------------------------------


def ou_discounted_value(lam, kappa=1.0, sigma=1.0):
    """lam * w_lam(0) for the OU-quadratic problem, by quadrature."""
    val, _ = quad(
        lambda s: lam * math.exp(-lam * s) * sigma**2 / (2 * kappa) * (1 - math.exp(-2 * kappa * s)),
        0, 200.0,
    )
    return val


# -- discounted equation --------------------------------------------------------


def test_constant_payoff_solution():
    # f = c, any dissipative drift: w = c/lam exactly, residual ~ 0
    spec = make_spec("custom_polynomial", {"c1": -1.0, "sigma0": 0.5,
                                           "f_x2": 0.0, "f_0": 2.0},
                     box=np.array([[-3.0, 3.0]]))
    grid = StateGrid.from_box(spec.box, 101)
    w, diag = solve_discounted(spec, grid, 0.5)
    assert np.allclose(w.values, 4.0, atol=1e-10)
    assert diag.converged and diag.residual <= 1e-10


def test_state_independent_minimax():
    # f(u,v) = (u-v)^2 on {0,1}^2, x-independent: inf_u sup_v = 1, w = 1/lam
    spec = make_spec(
        "affine",
        {"state_dim": 1, "C": [[-1.0]], "sigma0": 0.2,
         "f_uv": -2.0, "f_u": 0.0, "f_v": 0.0,
         "u_values": [[0.0], [1.0]], "v_values": [[0.0], [1.0]]},
        box=np.array([[-2.0, 2.0]]),
    )
    # (u-v)^2 = u^2 - 2uv + v^2; on {0,1} u^2 = u, v^2 = v
    spec2 = make_spec(
        "affine",
        {"state_dim": 1, "C": [[-1.0]], "sigma0": 0.2,
         "f_uv": -2.0, "f_u": 1.0, "f_v": 1.0,
         "u_values": [[0.0], [1.0]], "v_values": [[0.0], [1.0]]},
        box=np.array([[-2.0, 2.0]]),
        name="uv_square",
    )
    grid = StateGrid.from_box(spec2.box, 51)
    w, diag = solve_discounted(spec2, grid, 0.25, "infsup")
    assert np.allclose(w.values, 1.0 / 0.25, atol=1e-9)


@pytest.mark.parametrize("lam", [0.5, 0.25, 0.125])
def test_ou_quadratic_discounted(ou_spec, ou_grid, ou_tables, lam):
    w, diag = solve_discounted(ou_spec, ou_grid, lam, tables=ou_tables)
    got = lam * w.values[ou_grid.origin_index()]
    want = ou_discounted_value(lam)
    assert want == pytest.approx(1.0 / (lam + 2.0), abs=1e-9)  # oracle self-check
    assert abs(got - want) <= 0.02 * want
    assert diag.converged


def test_methods_agree_value_vs_policy_iteration(pollution_spec):
    grid = StateGrid.from_box(pollution_spec.box, 61)
    spec = pollution_spec
    w_h, d_h = solve_discounted(spec, grid, 0.25, method="howard", tol=1e-10)
    w_j, d_j = solve_discounted(spec, grid, 0.25, method="jacobi", tol=1e-12,
                                max_iter=200_000)
    assert d_h.converged and d_j.converged
    assert np.max(np.abs(w_h.values - w_j.values)) <= 1e-7


def test_gauss_seidel_matches_jacobi_fixed_point(ou_spec):
    grid = StateGrid.from_box(ou_spec.box, 31)
    w_g, d_g = solve_discounted(ou_spec, grid, 0.5, method="gauss_seidel", tol=1e-11,
                                max_iter=100_000)
    w_j, d_j = solve_discounted(ou_spec, grid, 0.5, method="jacobi", tol=1e-11,
                                max_iter=200_000)
    assert d_g.converged and d_j.converged
    assert np.max(np.abs(w_g.values - w_j.values)) <= 1e-8


def test_lambda_nonpositive_rejected(ou_spec, ou_grid):
    with pytest.raises(SolverError):
        solve_discounted(ou_spec, ou_grid, 0.0)
    with pytest.raises(SolverError):
        solve_discounted(ou_spec, ou_grid, -0.5)


def test_grid_must_span_confinement(ou_spec):
    tiny = StateGrid((-0.2,), (0.2,), (11,))
    with pytest.raises(SolverError):
        solve_discounted(ou_spec, tiny, 0.5)


def test_warm_start_agrees(ou_spec, ou_grid, ou_tables):
    w0, _ = solve_discounted(ou_spec, ou_grid, 0.5, tables=ou_tables)
    w1, _ = solve_discounted(ou_spec, ou_grid, 0.25, tables=ou_tables, w0=w0)
    w2, _ = solve_discounted(ou_spec, ou_grid, 0.25, tables=ou_tables)
    assert np.max(np.abs(w1.values - w2.values)) <= 1e-7


# -- structural properties of the discrete operator ----------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=1e-7, max_value=1e-5))
def test_scheme_monotone_in_neighbors(pollution_spec, pollution_tables, node_seed, eps):
    """Raising any neighbor value never lowers the node's ratio-form update."""
    tables = pollution_tables
    gen = np.random.default_rng(node_seed)
    N = tables.n_nodes
    w = gen.normal(size=N)
    i = int(gen.integers(0, N))
    base = tables.ratio_update(w, 0.25, "infsup")[i]
    for k in range(tables.idxs.shape[0]):
        j = tables.idxs[k, i]
        if j == i:
            continue
        w2 = w.copy()
        w2[j] += eps
        bumped = tables.ratio_update(w2, 0.25, "infsup")[i]
        assert bumped >= base - 1e-13


def test_scheme_monotone_100_random_nodes(pollution_tables):
    """Fixed-budget version: 100 random nodes, eps = 1e-6 perturbations."""
    tables = pollution_tables
    gen = np.random.default_rng(123)
    N = tables.n_nodes
    w = np.sin(np.linspace(0, 5, N)) * 2.0
    base = tables.ratio_update(w, 0.25, "infsup")
    for i in gen.integers(0, N, size=100):
        for k in range(tables.idxs.shape[0]):
            j = tables.idxs[k, int(i)]
            if j == i:
                continue
            w2 = w.copy()
            w2[j] += 1e-6
            assert tables.ratio_update(w2, 0.25, "infsup")[i] >= base[i] - 1e-13


def test_discrete_comparison_preserved(ou_tables):
    gen = np.random.default_rng(5)
    N = ou_tables.n_nodes
    w1 = gen.normal(size=N)
    w2 = w1 + np.abs(gen.normal(size=N))
    for ordering in ("infsup", "supinf"):
        t1 = ou_tables.ratio_update(w1, 0.5, ordering)
        t2 = ou_tables.ratio_update(w2, 0.5, ordering)
        assert np.all(t1 <= t2 + 1e-12)


def test_lambda_contraction_factor(pollution_tables):
    lam = 0.25
    gamma = float(np.max(pollution_tables.rowsum / (lam + pollution_tables.rowsum)))
    assert gamma < 1.0
    gen = np.random.default_rng(9)
    N = pollution_tables.n_nodes
    for _ in range(5):
        w1 = gen.normal(size=N)
        w2 = gen.normal(size=N)
        t1 = pollution_tables.ratio_update(w1, lam, "infsup")
        t2 = pollution_tables.ratio_update(w2, lam, "infsup")
        lhs = np.max(np.abs(t1 - t2))
        rhs = gamma * np.max(np.abs(w1 - w2))
        assert lhs <= rhs + 1e-12


def test_grid_refinement_first_order(ou_spec):
    lam = 0.5
    vals = []
    for nodes in (76, 151, 301):
        grid = StateGrid.from_box(ou_spec.box, nodes)
        w, _ = solve_discounted(ou_spec, grid, lam)
        vals.append(lam * w.values[grid.origin_index()])
    d1 = abs(vals[1] - vals[0])
    d2 = abs(vals[2] - vals[1])
    assert d2 < d1


# -- Isaacs gap -----------------------------------------------------------------


def test_isaacs_gap_zero_separated(pollution_spec, pollution_grid, pollution_tables):
    w, _ = solve_discounted(pollution_spec, pollution_grid, 0.25, tables=pollution_tables)
    assert isaacs_gap(pollution_spec, pollution_grid, w, tables=pollution_tables) <= 1e-10


def test_isaacs_gap_matrix_game(uv_game_spec):
    grid = StateGrid.from_box(uv_game_spec.box, 101)
    w, _ = solve_discounted(uv_game_spec, grid, 0.25, "infsup")
    # w is constant: H at every node reduces to the 2x2 matrix game u*v,
    # whose minimax values differ by 2 (enumeration oracle)
    M = np.array([[uu * vv for vv in (-1, 1)] for uu in (-1, 1)])
    oracle = abs(M.max(axis=1).min() - M.min(axis=0).max())
    assert oracle == 2
    gap = isaacs_gap(uv_game_spec, grid, w)
    assert gap == pytest.approx(2.0, abs=1e-10)


def test_orderings_coincide_without_gap(pollution_spec, pollution_grid, pollution_tables):
    wi, di = solve_discounted(pollution_spec, pollution_grid, 0.25, "infsup",
                              tables=pollution_tables)
    ws, ds = solve_discounted(pollution_spec, pollution_grid, 0.25, "supinf",
                              tables=pollution_tables)
    assert np.max(np.abs(wi.values - ws.values)) <= 1e-7


def test_orderings_ordered_with_gap(uv_game_spec):
    grid = StateGrid.from_box(uv_game_spec.box, 101)
    lam = 0.25
    wi, _ = solve_discounted(uv_game_spec, grid, lam, "infsup")
    ws, _ = solve_discounted(uv_game_spec, grid, lam, "supinf")
    ri = lam * wi.values[grid.origin_index()]
    rs = lam * ws.values[grid.origin_index()]
    assert ri == pytest.approx(1.0, abs=1e-9)
    assert rs == pytest.approx(-1.0, abs=1e-9)
    assert ri >= rs


# -- parabolic ------------------------------------------------------------------


def test_parabolic_constants_exact(ou_spec, ou_grid, ou_tables):
    spec = make_spec("custom_polynomial", {"c1": -1.0, "sigma0": 0.5,
                                           "f_x2": 0.0, "f_0": 0.0},
                     box=np.array([[-3.0, 3.0]]))
    grid = StateGrid.from_box(spec.box, 101)
    tb = build_tables(spec, grid)
    dt = 0.5 * cfl_limit(tb)
    steps = int(np.ceil(1.0 / dt))
    dt = 1.0 / steps
    res = solve_parabolic(spec, grid, constant_like(grid, 4.0), 1.0, dt, tables=tb)
    assert np.allclose(res.values[-1], 4.0, atol=1e-12)


def test_parabolic_pure_time_integration():
    # f = 1, phi = 0: V(t, .) = t exactly
    spec = make_spec("custom_polynomial", {"c1": -1.0, "sigma0": 0.5,
                                           "f_x2": 0.0, "f_0": 1.0},
                     box=np.array([[-3.0, 3.0]]))
    grid = StateGrid.from_box(spec.box, 101)
    tb = build_tables(spec, grid)
    steps = 2 * int(np.ceil(1.0 / (0.9 * cfl_limit(tb))))
    dt = 2.0 / steps
    res = solve_parabolic(spec, grid, constant_like(grid, 0.0), 2.0, dt, tables=tb,
                          checkpoints=[steps // 2 * dt, 2.0])
    assert np.allclose(res.values[0], 1.0, atol=1e-10)
    assert np.allclose(res.values[1], 2.0, atol=1e-10)


def test_parabolic_cfl_rejected(ou_spec, ou_grid, ou_tables):
    dt_bad = 2.0 * cfl_limit(ou_tables)
    with pytest.raises(SolverError) as err:
        solve_parabolic(ou_spec, ou_grid, constant_like(ou_grid, 0.0), 1.0, dt_bad,
                        tables=ou_tables)
    assert "max admissible" in str(err.value)


def test_parabolic_long_run_ratio(ou_spec):
    grid = StateGrid.from_box(ou_spec.box, 301)
    tb = build_tables(ou_spec, grid)
    dt0 = 0.9 * cfl_limit(tb)
    steps = int(np.ceil(20.0 / dt0))
    dt = 20.0 / steps
    res = solve_parabolic(ou_spec, grid, constant_like(grid, 0.0), 20.0, dt, tables=tb)
    ratio = res.values[-1][grid.origin_index()] / 20.0
    assert abs(ratio - 0.5) <= 0.03 * 0.5 + 1.0 / (2 * 20.0)


# -- 2D -------------------------------------------------------------------------


def test_2d_ou_quadratic_discounted():
    spec = make_spec("ou_quadratic", {"kappa": 1.0, "sigma0": 1.0, "state_dim": 2},
                     box=np.array([[-2.5, 2.5], [-2.5, 2.5]]))
    grid = StateGrid.from_box(spec.box, 121)
    lam = 0.25
    w, diag = solve_discounted(spec, grid, lam)
    got = lam * w.values[grid.origin_index()]
    want = 2.0 / (lam + 2.0)  # sum of two independent coordinates
    assert diag.converged
    assert abs(got - want) <= 0.03 * want


def test_2d_cross_term_dominant_accepted_and_solved():
    # sigma with mild correlation: sigma0 = [[1, 0], [0.3, 1]]
    spec = make_spec(
        "affine",
        {"state_dim": 2, "C": [[-1.0, 0.0], [0.0, -1.0]],
         "sigma0": [[1.0, 0.0], [0.3, 1.0]], "f_xx": 1.0},
        box=np.array([[-2.5, 2.5], [-2.5, 2.5]]),
    )
    grid = StateGrid.from_box(spec.box, 61)
    lam = 0.5
    w, diag = solve_discounted(spec, grid, lam)
    assert diag.converged
    # exact: w = a x1^2 + b x2^2 + c x1 x2 + d solves the linear PDE; compare
    # lam*w(0) against the trace formula lam*w(0) = tr(Sigma)/(lam+2) with
    # Sigma = sigma sigma^T/... for quadratic f = |x|^2: E|X_s|^2 from 0 is
    # integral of e^{-2s} tr(sig sig^T) -> stationary tr/2
    ssT = np.array([[1.0, 0.3], [0.3, 1.09]])
    want = np.trace(ssT) / 2.0 * (2.0 / (lam + 2.0))  # lam*w(0) = tr/(lam+2)
    got = lam * w.values[grid.origin_index()]
    assert abs(got - want) <= 0.04 * want


def test_2d_cross_term_rejected_when_not_dominant():
    spec = make_spec(
        "affine",
        {"state_dim": 2, "C": [[-1.0, 0.0], [0.0, -1.0]],
         "sigma0": [[1.0, 0.99], [0.99, 1.0]], "f_xx": 1.0},
        box=np.array([[-2.0, 2.0], [-8.0, 8.0]]),  # bad aspect ratio
    )
    grid = StateGrid((-2.0, -8.0), (2.0, 8.0), (41, 21))
    with pytest.raises(SolverError):
        build_tables(spec, grid)


def test_diagnostics_fields(ou_spec, ou_grid, ou_tables):
    w, diag = solve_discounted(ou_spec, ou_grid, 0.5, tables=ou_tables)
    d = diag.to_dict()
    assert d["converged"] is True
    assert d["method"] == "howard"
    assert d["residual"] <= 1e-8
    assert d["wall_time"] >= 0
    assert "isaacs_gap" in d

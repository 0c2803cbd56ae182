"""Sup/inf-convolution and mollification tests with brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdgames.ergodic import vanishing_discount
from sdgames.grids import GridFunction, StateGrid, constant_like
from sdgames.smoothing import (
    inf_convolve,
    mollify,
    sup_convolve,
    subsolution_defect,
)


def fine_abs_grid():
    g = StateGrid((-2.0,), (2.0,), (401,))
    return GridFunction(g, np.abs(g.nodes()[:, 0]))


def brute_force_sup(w, eps):
    """Independent O(N^2) oracle for the discrete sup-convolution."""
    nodes = w.grid.nodes()
    out = np.empty(w.grid.size)
    for i in range(w.grid.size):
        d2 = np.sum((nodes - nodes[i]) ** 2, axis=1)
        out[i] = np.max(w.values - d2 / (2 * eps))
    return out


def test_sup_convolution_abs_value():
    w = fine_abs_grid()
    eps = 0.1
    conv = sup_convolve(w, eps)
    assert np.array_equal(conv.values, brute_force_sup(w, eps))
    g = w.grid
    i0 = g.origin_index()
    # w^eps(0) = eps/2, attained at y = +/- eps
    assert conv.values[i0] == pytest.approx(eps / 2, abs=1e-9)
    assert abs(abs(g.nodes()[conv.argopt[i0], 0]) - eps) <= g.h[0] + 1e-12
    # for |x| >= eps: w^eps = |x| + eps/2
    x = g.nodes()[:, 0]
    far = (np.abs(x) >= eps) & ~conv.boundary_affected
    assert np.allclose(conv.values[far], np.abs(x[far]) + eps / 2, atol=1e-9)
    # envelope bound sup|w^eps - w| = M^2 eps / 2 with M = 1
    assert conv.uniform_gap == pytest.approx(eps / 2, abs=1e-9)


def test_constants_fixed_points():
    g = StateGrid((-1.0,), (1.0,), (51,))
    w = constant_like(g, 2.0)
    conv = sup_convolve(w, 0.3)
    assert np.allclose(conv.values, 2.0, atol=1e-12)
    assert np.array_equal(conv.argopt, np.arange(g.size))
    mol = mollify(w, 0.2)
    assert np.allclose(mol.values, 2.0, atol=1e-12)


def test_ordering_inf_leq_w_leq_sup():
    w = fine_abs_grid()
    for eps in (0.05, 0.1, 0.3):
        up = sup_convolve(w, eps)
        lo = inf_convolve(w, eps)
        assert np.all(up.values >= w.values - 1e-12)
        assert np.all(lo.values <= w.values + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_convolution_properties_random(seed):
    gen = np.random.default_rng(seed)
    g = StateGrid((-1.0,), (1.0,), (41,))
    w = GridFunction(g, np.cumsum(gen.normal(scale=g.h[0], size=g.size)))
    M = w.lipschitz_seminorm()
    e1, e2 = 0.05, 0.1
    c1 = sup_convolve(w, e1)
    c2 = sup_convolve(w, e2)
    # monotone in eps
    assert np.all(c2.values >= c1.values - 1e-12)
    # Lipschitz preservation
    assert GridFunction(g, c1.values).lipschitz_seminorm() <= M + 1e-9
    # semiconvexity certificate
    assert c1.semiconvexity_margin() >= -1e-9
    # maximizer stays within the search radius 2 M eps
    nodes = g.nodes()[:, 0]
    ok = ~c1.boundary_affected
    dist = np.abs(nodes[c1.argopt] - nodes)
    assert np.all(dist[ok] <= 2 * M * e1 + g.h[0] + 1e-12)


def test_mollify_preserves_linear_interior():
    g = StateGrid((-2.0,), (2.0,), (201,))
    w = GridFunction(g, g.nodes()[:, 0])
    mol = mollify(w, 0.2)
    x = g.nodes()[:, 0]
    interior = np.abs(x) <= 2.0 - 0.25
    assert np.allclose(mol.values[interior], x[interior], atol=1e-10)
    # Lipschitz seminorm does not grow (mollification is an average)
    assert GridFunction(g, mol.values).lipschitz_seminorm() <= w.lipschitz_seminorm() + 1e-9


def test_mollify_abs_at_kink():
    g = StateGrid((-2.0,), (2.0,), (401,))
    w = GridFunction(g, np.abs(g.nodes()[:, 0]))
    delta = 0.2
    mol = mollify(w, delta)
    v0 = mol.values[g.origin_index()]
    # kernel average of |x| at the kink: positive, at most delta
    assert 0.0 < v0 <= delta
    # oracle: direct quadrature of the tabulated kernel against |x|
    from sdgames.smoothing import _bump_weights

    wts = _bump_weights(delta, g.h[0])
    offs = (np.arange(wts.size) - (wts.size - 1) // 2) * g.h[0]
    assert v0 == pytest.approx(float(np.sum(wts * np.abs(offs))), abs=1e-12)


def test_mollify_near_identity_flagged():
    g = StateGrid((-1.0,), (1.0,), (21,))
    w = constant_like(g, 1.0)
    assert mollify(w, 0.05).flagged_near_identity
    assert not mollify(w, 0.5).flagged_near_identity


def test_smoothing_chain_uniform_convergence():
    # mollify(sup_convolve(w, eps), delta) -> w with gap <= M^2 eps/2 + M delta
    w = fine_abs_grid()
    M = w.lipschitz_seminorm()
    for eps, delta in ((0.2, 0.2), (0.1, 0.1), (0.05, 0.05)):
        chain = mollify(sup_convolve(w, eps).as_grid_function(), delta)
        gap = np.max(np.abs(chain.values - w.values))
        assert gap <= M * M * eps / 2 + M * delta + 1e-9


def test_subsolution_defect_classical_solution(pollution_spec, pollution_grid,
                                               pollution_tables):
    """The closed-form pair is classical: w_cost = (d/a) y, rho_cost = -1."""
    y = pollution_grid.nodes()[:, 0]
    w = GridFunction(pollution_grid, 1.0 * y)
    rep = subsolution_defect(pollution_spec, w, rho=-1.0, tables=pollution_tables)
    # defect vanishes up to control-grid discretization of inf_u
    assert rep.max_positive_normalized <= 5e-3
    # lowering rho by 1 shifts the defect by exactly -1
    rep2 = subsolution_defect(pollution_spec, w, rho=-2.0, tables=pollution_tables)
    shift = rep2.values.values - rep.values.values
    assert np.allclose(shift, -1.0, atol=1e-12)


def test_defect_halves_under_smoothing_refinement(ou_spec, ou_grid, ou_tables):
    """On the OU solver output, defect^+/(1+|x|) halves when (eps, delta) halve."""
    sol = vanishing_discount(ou_spec, ou_grid, [2.0**-k for k in range(1, 9)],
                             tables=ou_tables)
    vals = {}
    # fixed evaluation window: the coarsest level's boundary-affected band,
    # so the two levels' maxima are comparable
    margin = 2 * sol.w.lipschitz_seminorm() * 0.2 + 0.2
    for eps, delta in ((0.2, 0.2), (0.1, 0.1)):
        smooth = mollify(sup_convolve(sol.w, eps).as_grid_function(), delta)
        rep = subsolution_defect(ou_spec, smooth.as_grid_function(), sol.rho,
                                 margin=margin, tables=ou_tables)
        vals[eps] = rep.max_positive_normalized
    ratio = vals[0.1] / vals[0.2]
    assert 0.25 <= ratio <= 0.75

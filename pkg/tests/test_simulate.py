"""Simulation engine tests against independent closed-form / quadrature oracles."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erf

from sdgames.model import make_spec
from sdgames.simulate import (
    ConstantControl,
    PiecewiseFrozenFeedback,
    RecordedSequence,
    SimConfig,
    SimulationError,
    companion_gap_report,
    contraction_check,
    density_bound_check,
    estimate_average_payoff,
    increment_moment,
    simulate,
)

# -- oracles ---------------------------------------------------------------


def ou_second_moment(t, x0=0.0, kappa=1.0, sigma=1.0):
    """E[X_t^2] for dX = -kappa X dt + sigma dB."""
    return x0**2 * math.exp(-2 * kappa * t) + sigma**2 / (2 * kappa) * (
        1 - math.exp(-2 * kappa * t)
    )


def ou_discounted_quadratic(lam, T, kappa=1.0, sigma=1.0):
    """lam * int_0^T e^{-lam s} E[X_s^2] ds from x0 = 0, by quadrature."""
    val, _ = quad(lambda s: lam * math.exp(-lam * s) * ou_second_moment(s, 0, kappa, sigma), 0, T)
    return val


def gaussian_cell_prob(mean, var, lo, hi):
    sd = math.sqrt(2 * var)
    return 0.5 * (erf((hi - mean) / sd) - erf((lo - mean) / sd))


# -- deterministic and moment behaviour ------------------------------------


def test_deterministic_ode_limit():
    # sigma = 0, b = -x, x0 = 1: X_t = e^{-t}; Euler error O(dt)
    spec = make_spec("ou_quadratic", {"kappa": 1.0, "sigma0": 0.0},
                     box=np.array([[-3.0, 3.0]]), assumptions={"sigma_bound": 0.0})
    cfg = SimConfig(dt=1e-3, horizon=1.0, paths=2, seed=0)
    b = simulate(spec, [1.0], ConstantControl(0), ConstantControl(0), cfg)
    assert abs(b.states[0, -1, 0] - math.exp(-1.0)) <= 5e-4


def test_constant_payoff_exact():
    # f independent of everything: mean exact, stderr zero
    spec = make_spec("custom_polynomial", {"c1": -1.0, "sigma0": 1.0,
                                           "f_x2": 0.0, "f_0": 3.0},
                     box=np.array([[-4.0, 4.0]]))
    cfg = SimConfig(dt=0.01, horizon=2.0, paths=64, seed=1)
    est = estimate_average_payoff(spec, [0.5], ConstantControl(0), ConstantControl(0), cfg)
    assert est.mean == pytest.approx(3.0, abs=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)


def test_ou_stationary_second_moment(ou_spec):
    cfg = SimConfig(dt=1e-3, horizon=10.0, paths=30_000, seed=7)
    b = simulate(ou_spec, [0.0], ConstantControl(0), ConstantControl(0), cfg)
    xT = b.states[:, -1, 0]
    est = (xT**2).mean()
    se = (xT**2).std(ddof=1) / math.sqrt(xT.size)
    assert abs(est - 0.5) <= 3 * se + 0.5 * cfg.dt  # Euler bias allowance


def test_ou_average_and_discounted_payoff(ou_spec):
    cfg = SimConfig(dt=2e-3, horizon=50.0, paths=8000, seed=11, lam_list=(0.5,))
    est = estimate_average_payoff(ou_spec, [0.0], ConstantControl(0), ConstantControl(0), cfg)
    exact_avg = quad(lambda s: ou_second_moment(s) / 50.0, 0, 50)[0]
    assert abs(est.mean - exact_avg) <= 3 * est.stderr + 2e-3
    m, se = est.discounted[0.5]
    exact_disc = ou_discounted_quadratic(0.5, 50.0)
    assert exact_disc == pytest.approx(1.0 / (0.5 + 2.0), abs=1e-6)  # sanity of the oracle
    assert abs(m - exact_disc) <= 3 * se + 2e-3


def test_reproducibility_bitwise(ou_spec):
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=300, seed=5, r=0.2)
    args = (ou_spec, [1.0], ConstantControl(0), ConstantControl(0), cfg)
    a, b = simulate(*args), simulate(*args)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.aux_states, b.aux_states)
    assert np.array_equal(a.payoff, b.payoff)


def test_path_count_extension_stability(ou_spec):
    """Adding paths must not perturb existing ones (counter-based streams)."""
    cfg_small = SimConfig(dt=0.01, horizon=0.5, paths=100, seed=3)
    cfg_big = SimConfig(dt=0.01, horizon=0.5, paths=1500, seed=3)
    a = simulate(ou_spec, [1.0], ConstantControl(0), ConstantControl(0), cfg_small)
    b = simulate(ou_spec, [1.0], ConstantControl(0), ConstantControl(0), cfg_big)
    assert np.array_equal(a.states, b.states[:100])


def test_worker_count_invariance(ou_spec, monkeypatch):
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=4000, seed=13)
    a = simulate(ou_spec, [0.5], ConstantControl(0), ConstantControl(0), cfg)
    monkeypatch.setenv("SDGAMES_WORKERS", "4")
    b = simulate(ou_spec, [0.5], ConstantControl(0), ConstantControl(0), cfg)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.payoff, b.payoff)


def test_replayability_from_stored_noise(ou_spec):
    cfg = SimConfig(dt=0.02, horizon=0.5, paths=17, seed=21, r=0.3,
                    record_every=1, retain_noise=True)
    b = simulate(ou_spec, [1.0], ConstantControl(0), ConstantControl(0), cfg)
    sq = math.sqrt(cfg.dt)
    x = b.states[:, 0, 0]
    xr = b.aux_states[:, 0, 0]
    for k in range(cfg.steps):
        drift = 0.0 - 1.0 * x
        dB = sq * b.noise[:, k, 0]
        dB1 = sq * b.noise[:, k, 1]
        xr = xr + (-0.5 * ou_spec.K * (xr - x) + drift) * cfg.dt
        xr = xr + 1.0 * dB
        xr = xr + cfg.r * dB1
        x = x + drift * cfg.dt + 1.0 * dB
        assert np.array_equal(x, b.states[:, k + 1, 0])
        assert np.array_equal(xr, b.aux_states[:, k + 1, 0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_flags_and_batch_failure():
    # b = +x^3 explodes; every path should flag and the batch must fail
    spec = make_spec("custom_polynomial", {"c3": -0.0, "c2": 0.0, "c1": 5.0,
                                           "sigma0": 0.1},
                     box=np.array([[-2.0, 2.0]]),
                     assumptions={"K": 1.0})
    cfg = SimConfig(dt=0.5, horizon=200.0, paths=16, seed=2)
    with pytest.raises(SimulationError):
        simulate(spec, [1.5], ConstantControl(0), ConstantControl(0), cfg)


# -- companion process (r > 0) ----------------------------------------------


def test_companion_gap_bound(ou_spec):
    cfg = SimConfig(dt=1e-3, horizon=10.0, paths=10_000, seed=17, r=0.1, record_every=500)
    times, mean, se, bound = companion_gap_report(
        ou_spec, [0.0], ConstantControl(0), ConstantControl(0), cfg
    )
    assert bound == pytest.approx(0.1**2 / 2.0)
    assert np.all(mean <= bound + 3 * se)
    # the gap is an OU process: match the exact transient at mid horizon
    mid = len(times) // 2
    t = times[mid]
    exact = bound * (1 - math.exp(-ou_spec.K * t))
    assert abs(mean[mid] - exact) <= 4 * se[mid] + 1e-5


def test_density_bound_pure_auxiliary():
    """sigma=0, b=0, K-term only: Xr_s is Gaussian with variance r^2(1-e^{-Ks})/K."""
    spec = make_spec(
        "custom_polynomial", {"c1": 0.0, "sigma0": 0.0, "f_x2": 1.0},
        box=np.array([[-3.0, 3.0]]),
        assumptions={"K": 2.0, "sigma_bound": 0.0, "C_b": 0.0},
    )
    r, s = 0.5, 1.0
    cfg = SimConfig(dt=1e-3, horizon=s, paths=40_000, seed=23, r=r)
    rep = density_bound_check(spec, [0.0], ConstantControl(0), ConstantControl(0),
                              cfg, cell=np.array([[0.0, 0.1]]), s=s)
    var = r**2 * (1 - math.exp(-2 * s)) / 2.0
    exact = gaussian_cell_prob(0.0, var, 0.0, 0.1)
    assert abs(rep.probability - exact) <= 4 * math.sqrt(exact / cfg.paths) + 2e-3
    assert exact <= rep.bound
    assert rep.passed
    assert not rep.below_mixing_floor


def test_density_bound_instantiation(ou_spec):
    # n=1, K=2, r=0.5, s=1, cell [0, 0.1]: bound = 2 * (1-e^{-2})^{-1/2} * 0.1
    cfg = SimConfig(dt=1e-3, horizon=1.0, paths=20_000, seed=29, r=0.5)
    rep = density_bound_check(ou_spec, [1.0], ConstantControl(0), ConstantControl(0),
                              cfg, cell=np.array([[0.0, 0.1]]), s=1.0)
    want = (2.0 / 2.0) ** 0.5 * (1 / 0.5) * (1 - math.exp(-2.0)) ** -0.5 * 0.1
    assert rep.bound == pytest.approx(want, rel=1e-12)
    assert rep.bound == pytest.approx(0.21508, abs=5e-5)
    assert rep.passed


def test_density_bound_monotone_in_s():
    # the bound factor [1-e^{-Ks}]^{-n/2} decreases to 1 as s grows
    K, r, leb = 2.0, 0.5, 0.1
    def bound(s):
        return (K / 2) ** 0.5 * r**-1 * (1 - math.exp(-K * s)) ** -0.5 * leb
    assert bound(0.5) > bound(1.0) > bound(2.0) > (K / 2) ** 0.5 * r**-1 * leb


def test_density_zero_measure_cell_rejected(ou_spec):
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=100, seed=1, r=0.5)
    with pytest.raises(SimulationError):
        density_bound_check(ou_spec, [0.0], ConstantControl(0), ConstantControl(0),
                            cfg, cell=np.array([[0.2, 0.2]]), s=1.0)


# -- contraction -------------------------------------------------------------


def test_contraction_ou_exact_slope(ou_spec):
    # additive noise cancels under the coupling: squared gap decays at e^{-2t}
    cfg = SimConfig(dt=1e-3, horizon=5.0, paths=64, seed=31, record_every=250)
    rep = contraction_check(ou_spec, [1.0], [-1.0], cfg)
    assert rep.fitted_slope == pytest.approx(-2.0, abs=2e-2)
    assert rep.fitted_slope <= rep.slope_threshold + 0.1
    assert np.all(np.diff(rep.mean_sq_gap) <= 1e-12)  # deterministic decay


def test_contraction_pollution_random_controls(pollution_spec):
    steps = int(10.0 / 1e-3)
    gen = np.random.default_rng(7)
    useq = RecordedSequence(gen.integers(0, pollution_spec.u_grid.size, size=steps))
    vseq = RecordedSequence(gen.integers(0, pollution_spec.v_grid.size, size=steps))
    cfg = SimConfig(dt=1e-3, horizon=10.0, paths=256, seed=37, record_every=100)
    rep = contraction_check(pollution_spec, [2.0], [0.5], cfg, u=useq, v=vseq)
    assert rep.fitted_slope <= -(pollution_spec.K - pollution_spec.C_sigma**2) + 0.1
    assert not rep.inconclusive


def test_contraction_identical_starts(ou_spec):
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=8, seed=41)
    rep = contraction_check(ou_spec, [1.0], [1.0], cfg)
    assert rep.inconclusive
    assert np.all(rep.mean_sq_gap == 0.0)


def test_contraction_rejects_feedback(ou_spec, pollution_grid, pollution_spec):
    from sdgames.strategy import FeedbackPolicy
    from sdgames.simulate import FeedbackControl

    pol = FeedbackPolicy(pollution_grid, "u",
                         np.zeros(pollution_grid.size, dtype=np.int64))
    cfg = SimConfig(dt=0.01, horizon=1.0, paths=8, seed=1)
    with pytest.raises(SimulationError):
        contraction_check(pollution_spec, [1.0], [2.0], cfg, u=FeedbackControl(pol))


def test_coupling_gap_monotone(ou_spec):
    cfg = SimConfig(dt=1e-3, horizon=3.0, paths=128, seed=43, record_every=300)
    rep = contraction_check(ou_spec, [2.0], [0.0], cfg)
    mean, se = rep.mean_sq_gap, rep.se_sq_gap
    for j in range(1, len(mean)):
        assert mean[j] <= mean[j - 1] + 3 * se[j - 1] + 1e-12


def test_second_moment_envelope(ou_spec):
    """E|X_t|^2 <= C(1 + |x0|^2 e^{-c t}) with c = K and stationary level 1/2."""
    cfg = SimConfig(dt=1e-3, horizon=4.0, paths=2000, seed=45, record_every=200)
    rep = contraction_check(ou_spec, [2.0], [0.0], cfg)
    want = 2.0**2 * np.exp(-2.0 * rep.times) + 0.5 * (1 - np.exp(-2.0 * rep.times))
    assert np.all(rep.mean_sq_norm <= want + 4 * rep.se_sq_norm + 0.02)
    assert rep.mean_sq_norm[0] == pytest.approx(4.0)


# -- increments and weak error ------------------------------------------------


def test_sup_increment_scaling(ou_spec):
    # E sup_{t<=s<=t+delta} |X_s - X_t|^2 ~ C(delta^2 + delta): check the shape
    cfg = SimConfig(dt=1e-3, horizon=1.0, paths=4000, seed=47)
    m1, se1 = increment_moment(ou_spec, [0.0], ConstantControl(0), ConstantControl(0),
                               cfg, t0=0.5, delta=0.2)
    m2, se2 = increment_moment(ou_spec, [0.0], ConstantControl(0), ConstantControl(0),
                               cfg, t0=0.5, delta=0.1)
    ratio = m1 / m2
    want = (0.2 + 0.2**2) / (0.1 + 0.1**2)
    assert 0.6 * want <= ratio <= 1.6 * want


def test_weak_error_first_order(ou_spec):
    """Halving dt (same Brownian path via brownian_dt) moves the average payoff O(dt)."""
    means = {}
    for dt in (0.04, 0.02, 0.01):
        cfg = SimConfig(dt=dt, horizon=25.0, paths=3000, seed=53, brownian_dt=0.01)
        est = estimate_average_payoff(ou_spec, [0.0], ConstantControl(0),
                                      ConstantControl(0), cfg)
        means[dt] = est.mean
    d1 = abs(means[0.04] - means[0.02])
    d2 = abs(means[0.02] - means[0.01])
    assert 1.5 <= d1 / d2 <= 3.0


def test_frozen_feedback_adaptedness(pollution_spec, pollution_grid):
    """Perturbing increments after i*theta never changes the control on that window."""
    from sdgames.strategy import FeedbackPolicy

    gen = np.random.default_rng(3)
    pol = FeedbackPolicy(pollution_grid, "v",
                         gen.integers(0, pollution_spec.v_grid.size,
                                      size=pollution_grid.size).astype(np.int64))
    theta, dt = 0.2, 0.05
    proc = PiecewiseFrozenFeedback(theta, pol, dt)
    state = proc.init_state(4)
    x = np.full((4, 1), 1.0)
    held = proc.indices(0, x, state).copy()
    # within the window the state may wander; the held index must not move
    for k in range(1, 4):
        moved = x + gen.normal(size=x.shape)  # any perturbation after time 0
        assert np.array_equal(proc.indices(k, moved, state), held)
    # at the refresh step the index re-reads the state
    far = np.full((4, 1), pollution_grid.hi[0])
    new = proc.indices(4, far, state)
    assert np.array_equal(new, pol.index_at(far))

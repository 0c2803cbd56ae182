"""Euler-Maruyama simulation of the controlled dynamics and its companion process.

The original dynamics is dX = b(X,u,v) dt + sigma(X,u,v) dB.  For r > 0 a
non-degenerate companion is carried alongside, driven by the same B plus an
independent auxiliary Brownian motion B1:

    dXr = [ -K/2 (Xr - X) + b(X,u,v) ] dt + sigma(X,u,v) dB + r dB1,

whose gap to X satisfies E|Xr_t - X_t|^2 = (n r^2 / K)(1 - e^{-K t}) <= n r^2/K
exactly (the gap is itself an Ornstein-Uhlenbeck process).

All randomness flows through the counter-based block streams in `rng`, so path
p sees the same noise regardless of batch size, chunk scheduling, or worker
count.  Batches are processed in fixed chunks of CHUNK_PATHS paths; an optional
thread pool (SDGAMES_WORKERS) dispatches chunks without changing any result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kernels
from . import rng
from .model import ProblemSpec


class SimulationError(RuntimeError):
    pass


# States beyond this magnitude count as overflow even before reaching inf
# (keeps payoff integrands like |x|^2 representable).
STATE_CAP = 1e100


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    paths: int
    seed: int
    r: float = 0.0
    record_every: int | None = None
    lam_list: tuple = ()
    retain_noise: bool = False
    brownian_dt: float | None = None
    max_flagged_frac: float = 0.01

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0 or self.dt > self.horizon:
            raise SimulationError("need 0 < dt <= horizon")
        if self.paths < 1:
            raise SimulationError("need at least one path")
        if self.r < 0:
            raise SimulationError("augmentation level r must be >= 0")
        if self.brownian_dt is not None:
            sub = self.dt / self.brownian_dt
            if abs(sub - round(sub)) > 1e-9 or sub < 1:
                raise SimulationError("dt must be an integer multiple of brownian_dt")

    @property
    def steps(self) -> int:
        k = int(round(self.horizon / self.dt))
        if abs(k * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise SimulationError("horizon must be an integer multiple of dt")
        return k

    @property
    def record_stride(self) -> int:
        if self.record_every is not None:
            return max(1, int(self.record_every))
        return max(1, self.steps // 100)


# ---------------------------------------------------------------------------
# Control processes
# ---------------------------------------------------------------------------


class ControlProcess:
    """Adapted control: the index at step k may depend only on history up to k."""

    def init_state(self, n_paths: int) -> dict:
        return {}

    def indices(self, k: int, x: np.ndarray, state: dict) -> np.ndarray:
        raise NotImplementedError


class ConstantControl(ControlProcess):
    def __init__(self, index: int):
        self.index = int(index)

    def indices(self, k, x, state):
        return np.full(x.shape[0], self.index, dtype=np.int64)


class RecordedSequence(ControlProcess):
    """Deterministic (hence trivially adapted) per-step index sequence."""

    def __init__(self, indices: np.ndarray):
        self.seq = np.asarray(indices, dtype=np.int64)

    def indices(self, k, x, state):
        return np.full(x.shape[0], self.seq[min(k, self.seq.size - 1)], dtype=np.int64)


class FeedbackControl(ControlProcess):
    """Per-step feedback through a policy object exposing index_at(states)."""

    def __init__(self, policy):
        self.policy = policy

    def indices(self, k, x, state):
        return self.policy.index_at(x)


class PiecewiseFrozenFeedback(ControlProcess):
    """Feedback refreshed only at multiples of theta and held constant between.

    The value on [i*theta, (i+1)*theta) depends only on the state at i*theta,
    which is the adaptedness the frozen construction requires.
    """

    def __init__(self, theta: float, policy, dt: float):
        m = theta / dt
        if abs(m - round(m)) > 1e-9 or m < 1:
            raise SimulationError("theta must be an integer multiple of dt")
        self.every = int(round(m))
        self.theta = theta
        self.policy = policy

    def indices(self, k, x, state):
        if k % self.every == 0 or "held" not in state:
            state["held"] = self.policy.index_at(x)
        return state["held"]


def random_piecewise_controls(grid_size: int, steps: int, switch_every: int,
                              seed: int, tag: int) -> RecordedSequence:
    """Seeded random piecewise-constant opponent schedule."""
    gen = rng.scalar_rng(seed, rng.STREAM_OPPONENTS, tag)
    n_seg = steps // switch_every + 1
    segs = gen.integers(0, grid_size, size=n_seg)
    return RecordedSequence(np.repeat(segs, switch_every)[:steps])


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class PathBatch:
    spec_name: str
    cfg: SimConfig
    x0: np.ndarray
    times: np.ndarray  # recorded times (n_rec,)
    states: np.ndarray  # (paths, n_rec, n)
    payoff: np.ndarray  # (paths,) integral of f dt over [0, T]
    flags: np.ndarray  # (paths,) True = path aborted on non-finite state
    aux_states: np.ndarray | None = None  # companion process, r > 0
    disc: dict = field(default_factory=dict)  # lam -> (paths,) of lam*int e^{-lam s} f ds
    u_rec: np.ndarray | None = None  # control indices at recorded times
    v_rec: np.ndarray | None = None
    noise: np.ndarray | None = None  # (paths, steps, d_tot) raw normals if retained

    @property
    def ok(self) -> np.ndarray:
        return ~self.flags

    def average_payoff(self) -> np.ndarray:
        return self.payoff[self.ok] / self.cfg.horizon


def _sub_counts(cfg: SimConfig):
    if cfg.brownian_dt is None:
        return 1
    return int(round(cfg.dt / cfg.brownian_dt))


def _fast_path_coeffs(spec: ProblemSpec):
    """Per-path-affine drift and constant scalar diffusion, when expressible.

    Returns (alpha_of_u, beta_of_v, sdiff) or None; covers the scalar families
    with drift alpha(u) - beta(v)*x and constant sigma, which is where the
    Euler loop is hot.  The kernel path reproduces the generic path bit for bit
    (same per-element expression trees).
    """
    fam = spec.coeffs.family
    p = spec.coeffs.params
    if spec.n != 1 or spec.d != 1:
        return None
    if fam == "ou_quadratic":
        kappa = float(p.get("kappa", 1.0))
        s0 = float(p.get("sigma0", 1.0))
        return (
            lambda uv: np.zeros(uv.shape[0]),
            lambda vv: np.full(vv.shape[0], kappa),
            s0,
        )
    if fam == "pollution" and str(p.get("sigma_kind", "const")) == "const":
        s0 = float(p.get("sigma0", 0.5))
        return (lambda uv: uv[:, 0].copy(), lambda vv: vv[:, 0].copy(), s0)
    return None


def _segment_starts(proc: ControlProcess, steps: int):
    """Steps at which a control may change value, or None for per-step feedback."""
    if isinstance(proc, ConstantControl):
        return {0}
    if isinstance(proc, RecordedSequence):
        seq = proc.seq
        pts = {0}
        for k in range(1, steps):
            a = seq[min(k, seq.size - 1)]
            b = seq[min(k - 1, seq.size - 1)]
            if a != b:
                pts.add(k)
        return pts
    if isinstance(proc, PiecewiseFrozenFeedback):
        return set(range(0, steps, proc.every))
    return None


def simulate(
    spec: ProblemSpec,
    x0: np.ndarray,
    u: ControlProcess,
    v: ControlProcess,
    cfg: SimConfig,
) -> PathBatch:
    """Simulate the controlled SDE (and its companion when cfg.r > 0).

    Fully reproducible from cfg.seed; paths with non-finite states are aborted
    and flagged, and more than max_flagged_frac flagged paths fails the batch.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != spec.n:
        raise SimulationError(f"x0 must have dimension {spec.n}")
    steps = cfg.steps
    stride = cfg.record_stride
    rec_steps = list(range(0, steps + 1, stride))
    if rec_steps[-1] != steps:
        rec_steps.append(steps)
    times = np.array([k * cfg.dt for k in rec_steps])
    n_rec = len(rec_steps)
    P = cfg.paths
    d_tot = spec.d + (spec.n if cfg.r > 0 else 0)

    states = np.empty((P, n_rec, spec.n))
    aux = np.empty((P, n_rec, spec.n)) if cfg.r > 0 else None
    payoff = np.zeros(P)
    disc = {lam: np.zeros(P) for lam in cfg.lam_list}
    flags = np.zeros(P, dtype=bool)
    u_rec = np.zeros((P, n_rec), dtype=np.int64)
    v_rec = np.zeros((P, n_rec), dtype=np.int64)
    noise_keep = np.empty((P, steps, d_tot)) if cfg.retain_noise else None

    chunks = list(range(rng.chunk_count(P)))

    def run_chunk(c):
        _simulate_chunk(
            spec, x0, u, v, cfg, c, steps, rec_steps,
            states, aux, payoff, disc, flags, u_rec, v_rec, noise_keep,
        )

    workers = int(os.environ.get("SDGAMES_WORKERS", "1"))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for c in chunks:
            run_chunk(c)

    frac = float(flags.mean())
    if frac > cfg.max_flagged_frac:
        raise SimulationError(
            f"{flags.sum()} of {P} paths ({100 * frac:.2f}%) hit non-finite states"
        )
    return PathBatch(
        spec_name=spec.name, cfg=cfg, x0=x0, times=times, states=states,
        payoff=payoff, flags=flags, aux_states=aux, disc=disc,
        u_rec=u_rec, v_rec=v_rec, noise=noise_keep,
    )


def _coarse_noise_blocks(cfg: SimConfig, chunk: int, pc: int, steps: int, d_tot: int):
    """Yield (k_start, z) with z of shape (pc, m, d_tot): raw normals per coarse step.

    With brownian_dt set, fine increments are generated at the fine spacing and
    summed in groups, so refining dt while holding brownian_dt fixed keeps the
    underlying Brownian path unchanged (common-random-number refinement).
    """
    sub = _sub_counts(cfg)
    total_fine = steps * sub
    carry = None
    k = 0
    for block in range(rng.block_count(total_fine)):
        z = rng.block_normals(cfg.seed, rng.STREAM_SIM, chunk, block, d_tot)[:pc]
        take = min(rng.BLOCK_STEPS, total_fine - block * rng.BLOCK_STEPS)
        z = z[:, :take, :]
        if sub > 1:
            if carry is not None and carry.shape[1]:
                z = np.concatenate([carry, z], axis=1)
            usable = (z.shape[1] // sub) * sub
            carry = z[:, usable:, :]
            z = z[:, :usable, :].reshape(pc, -1, sub, d_tot).sum(axis=2)
        if z.shape[1]:
            yield k, z
            k += z.shape[1]


def _simulate_chunk(spec, x0, u, v, cfg, chunk, steps, rec_steps,
                    states, aux, payoff, disc, flags, u_rec, v_rec, noise_keep):
    fast = _fast_path_coeffs(spec)
    segmentable = _segment_starts(u, steps) is not None and _segment_starts(v, steps) is not None
    if fast is not None and segmentable:
        ok = _simulate_chunk_fast(spec, x0, u, v, cfg, chunk, steps, rec_steps,
                                  states, aux, payoff, disc, flags, u_rec, v_rec,
                                  noise_keep, fast)
        if ok:
            return
    _simulate_chunk_generic(spec, x0, u, v, cfg, chunk, steps, rec_steps,
                            states, aux, payoff, disc, flags, u_rec, v_rec, noise_keep)


def _simulate_chunk_generic(spec, x0, u, v, cfg, chunk, steps, rec_steps,
                            states, aux, payoff, disc, flags, u_rec, v_rec, noise_keep):
    p0 = chunk * rng.CHUNK_PATHS
    p1 = min(p0 + rng.CHUNK_PATHS, cfg.paths)
    pc = p1 - p0
    d = spec.d
    d_tot = d + (spec.n if cfg.r > 0 else 0)
    sub = _sub_counts(cfg)
    dt = cfg.dt
    sq = math.sqrt(cfg.brownian_dt if sub > 1 else dt)
    half_k = 0.5 * spec.K

    x = np.tile(x0, (pc, 1))
    xr = x.copy() if cfg.r > 0 else None
    alive = np.ones(pc, dtype=bool)
    ustate, vstate = u.init_state(pc), v.init_state(pc)
    pay = np.zeros(pc)
    dacc = {lam: np.zeros(pc) for lam in cfg.lam_list}
    rec_set = {k: j for j, k in enumerate(rec_steps)}

    def record(j, ui, vi):
        states[p0:p1, j] = x
        if xr is not None:
            aux[p0:p1, j] = xr
        u_rec[p0:p1, j] = ui
        v_rec[p0:p1, j] = vi

    ui = u.indices(0, x, ustate)
    vi = v.indices(0, x, vstate)
    record(0, ui, vi)

    for k_start, z in _coarse_noise_blocks(cfg, chunk, pc, steps, d_tot):
        for s in range(z.shape[1]):
            k = k_start + s
            ui = u.indices(k, x, ustate)
            vi = v.indices(k, x, vstate)
            uval = spec.u_grid.points[ui]
            vval = spec.v_grid.points[vi]
            fv = spec.coeffs.f(x, uval, vval)
            pay[alive] += dt * fv[alive]
            for lam in cfg.lam_list:
                dacc[lam][alive] += lam * math.exp(-lam * k * dt) * dt * fv[alive]
            b = spec.coeffs.b(x, uval, vval)
            sig = spec.coeffs.sigma(x, uval, vval)
            dB = sq * z[:, s, :d]
            if noise_keep is not None:
                noise_keep[p0:p1, k] = z[:, s]
            if xr is not None:
                dB1 = sq * z[:, s, d:]
                xr = xr + (-half_k * (xr - x) + b) * dt
                xr = xr + np.einsum("pnd,pd->pn", sig, dB)
                xr = xr + cfg.r * dB1
            x = x + b * dt + np.einsum("pnd,pd->pn", sig, dB)
            bad = alive & ~(np.abs(x) < STATE_CAP).all(axis=1)
            if xr is not None:
                bad |= alive & ~(np.abs(xr) < STATE_CAP).all(axis=1)
            if bad.any():
                alive &= ~bad
                x[bad] = 0.0
                if xr is not None:
                    xr[bad] = 0.0
                pay[bad] = np.nan
            if k + 1 in rec_set:
                record(rec_set[k + 1], ui, vi)
    payoff[p0:p1] = pay
    for lam in cfg.lam_list:
        disc[lam][p0:p1] = dacc[lam]
    flags[p0:p1] = ~alive


def _simulate_chunk_fast(spec, x0, u, v, cfg, chunk, steps, rec_steps,
                         states, aux, payoff, disc, flags, u_rec, v_rec,
                         noise_keep, fast):
    """Kernel-backed chunk runner for scalar affine-drift families.

    Controls are constant per path between segment starts, so the Euler loop
    runs inside `kernels.euler_affine_block` per (noise block x control
    segment) slice.  Falls back (returns False) if any path goes non-finite,
    so flag semantics stay with the generic runner.
    """
    alpha_of, beta_of, s0 = fast
    p0 = chunk * rng.CHUNK_PATHS
    p1 = min(p0 + rng.CHUNK_PATHS, cfg.paths)
    pc = p1 - p0
    d_tot = 1 + (1 if cfg.r > 0 else 0)
    sub = _sub_counts(cfg)
    dt = cfg.dt
    sq = math.sqrt(cfg.brownian_dt if sub > 1 else dt)
    half_k = 0.5 * spec.K

    seg_set = _segment_starts(u, steps) | _segment_starts(v, steps)
    x = np.full(pc, float(x0[0]))
    xr = x.copy() if cfg.r > 0 else None
    ustate, vstate = u.init_state(pc), v.init_state(pc)
    pay = np.zeros(pc)
    dacc = {lam: np.zeros(pc) for lam in cfg.lam_list}
    rec_set = {k: j for j, k in enumerate(rec_steps)}
    lam_w = {lam: np.array([lam * math.exp(-lam * k * dt) * dt for k in range(steps)])
             for lam in cfg.lam_list}

    def record(j, xv, xrv, ui, vi):
        states[p0:p1, j, 0] = xv
        if xrv is not None:
            aux[p0:p1, j, 0] = xrv
        u_rec[p0:p1, j] = ui
        v_rec[p0:p1, j] = vi

    ui = u.indices(0, x[:, None], ustate)
    vi = v.indices(0, x[:, None], vstate)
    record(0, x, xr, ui, vi)

    for k_start, z in _coarse_noise_blocks(cfg, chunk, pc, steps, d_tot):
        m = z.shape[1]
        if noise_keep is not None:
            noise_keep[p0:p1, k_start:k_start + m] = z
        # control segments inside this block
        cuts = [0] + sorted(s - k_start for s in seg_set if k_start < s < k_start + m) + [m]
        for a, bnd in zip(cuts[:-1], cuts[1:]):
            k = k_start + a
            ui = u.indices(k, x[:, None], ustate)
            vi = v.indices(k, x[:, None], vstate)
            uval = spec.u_grid.points[ui]
            vval = spec.v_grid.points[vi]
            alpha = alpha_of(uval)
            beta = beta_of(vval)
            seg = bnd - a
            noise = sq * z[:, a:bnd, 0]
            x_start = x.copy()
            traj = np.empty((pc, seg))
            x = kernels.euler_affine_block(x, alpha, beta, s0, noise, dt, traj)
            if xr is not None:
                noise1 = sq * z[:, a:bnd, 1]
                traj_r = np.empty((pc, seg))
                xr = kernels.euler_aug_affine_block(
                    xr, x_start, traj, alpha, beta, s0, half_k, cfg.r, noise, noise1,
                    dt, traj_r)
            if not (np.abs(x) < STATE_CAP).all() or (
                xr is not None and not (np.abs(xr) < STATE_CAP).all()
            ):
                return False
            # payoff from pre-step states, accumulated in step order
            pre = np.empty((pc, seg))
            pre[:, 0] = x_start
            if seg > 1:
                pre[:, 1:] = traj[:, :-1]
            fmat = np.ascontiguousarray(
                spec.coeffs.f(pre[:, :, None], uval[:, None, :], vval[:, None, :])
            )
            kernels.accumulate_payoff(pay, fmat, dt)
            for lam in cfg.lam_list:
                kernels.accumulate_weighted(dacc[lam], fmat, lam_w[lam][k:k + seg])
            for kk in range(k + 1, k + seg + 1):
                j = rec_set.get(kk)
                if j is not None:
                    record(j, traj[:, kk - k - 1],
                           traj_r[:, kk - k - 1] if xr is not None else None, ui, vi)
    payoff[p0:p1] = pay
    for lam in cfg.lam_list:
        disc[lam][p0:p1] = dacc[lam]
    flags[p0:p1] = False
    return True


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class PayoffEstimate:
    mean: float
    stderr: float
    discounted: dict  # lam -> (mean, stderr) of lam * int_0^T e^{-lam s} f ds
    flagged: int
    paths_used: int
    horizon: float
    dt: float
    notes: list = field(default_factory=list)


def estimate_average_payoff(spec, x0, u, v, cfg: SimConfig) -> PayoffEstimate:
    """Sample mean of (1/T) int_0^T f dt, plus discounted functionals per lam."""
    batch = simulate(spec, x0, u, v, cfg)
    vals = batch.average_payoff()
    m = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    dd = {}
    for lam, acc in batch.disc.items():
        a = acc[batch.ok]
        dd[lam] = (
            float(a.mean()),
            float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0,
        )
    notes = []
    cmix = spec.K - spec.C_sigma**2
    if cfg.horizon < 10.0 / cmix:
        notes.append(f"horizon {cfg.horizon} short relative to mixing time {1 / cmix:.3g}")
    return PayoffEstimate(
        mean=m, stderr=se, discounted=dd, flagged=int(batch.flags.sum()),
        paths_used=int(batch.ok.sum()), horizon=cfg.horizon, dt=cfg.dt, notes=notes,
    )


@dataclass
class MomentReport:
    times: np.ndarray
    mean_sq_gap: np.ndarray
    se_sq_gap: np.ndarray
    mean_sq_norm: np.ndarray  # E|X_t|^2 along the first batch
    se_sq_norm: np.ndarray
    fitted_slope: float
    slope_threshold: float  # -(K - C_sigma^2)
    inconclusive: bool
    notes: list = field(default_factory=list)


def contraction_check(
    spec: ProblemSpec,
    x0: np.ndarray,
    y0: np.ndarray,
    cfg: SimConfig,
    u: ControlProcess | None = None,
    v: ControlProcess | None = None,
) -> MomentReport:
    """Synchronous coupling of two starts under one control process.

    Both paths share Brownian increments and controls; reports the sample mean
    squared gap versus t and the fitted log-slope, to compare against
    -(K - C_sigma^2).  Restricted to open-loop controls (constant/recorded):
    the coupling estimate quantifies over a single common control process.
    """
    u = u if u is not None else ConstantControl(0)
    v = v if v is not None else ConstantControl(0)
    if isinstance(u, (FeedbackControl, PiecewiseFrozenFeedback)) or isinstance(
        v, (FeedbackControl, PiecewiseFrozenFeedback)
    ):
        raise SimulationError("contraction_check requires open-loop controls")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    same_start = bool(np.array_equal(x0, y0))

    bx = simulate(spec, x0, u, v, cfg)
    by = simulate(spec, y0, u, v, cfg)  # same seed => same increments: coupled
    ok = bx.ok & by.ok
    gap2 = np.sum((bx.states[ok] - by.states[ok]) ** 2, axis=2)  # (P, n_rec)
    mean = gap2.mean(axis=0)
    se = gap2.std(axis=0, ddof=1) / math.sqrt(gap2.shape[0]) if gap2.shape[0] > 1 else 0 * mean
    norm2 = np.sum(bx.states[ok] ** 2, axis=2)
    mnorm = norm2.mean(axis=0)
    snorm = norm2.std(axis=0, ddof=1) / math.sqrt(norm2.shape[0]) if norm2.shape[0] > 1 else 0 * mnorm

    thresh = -(spec.K - spec.C_sigma**2)
    notes = []
    if same_start:
        return MomentReport(bx.times, mean, se, mnorm, snorm, 0.0, thresh,
                            inconclusive=True,
                            notes=["identical starts: gap identically zero"])
    floor = max(mean[0] * 1e-20, 1e-280)
    usable = mean > floor
    if usable.sum() < 3:
        return MomentReport(bx.times, mean, se, mnorm, snorm, np.nan, thresh,
                            inconclusive=True,
                            notes=["gap collapsed below floating floor too fast to fit"])
    t = bx.times[usable]
    slope = float(np.polyfit(t, np.log(mean[usable]), 1)[0])
    return MomentReport(bx.times, mean, se, mnorm, snorm, slope, thresh,
                        inconclusive=False, notes=notes)


@dataclass
class DensityReport:
    probability: float
    wilson_upper: float
    bound: float
    passed: bool
    s: float
    cell_measure: float
    paths: int
    below_mixing_floor: bool


def density_bound_check(
    spec: ProblemSpec,
    x0: np.ndarray,
    u: ControlProcess,
    v: ControlProcess,
    cfg: SimConfig,
    cell: np.ndarray,
    s: float,
) -> DensityReport:
    """Monte Carlo check of the companion-process density bound.

    The occupation probability of a Borel cell D at time s obeys
    P{Xr_s in D} <= (K/2)^{n/2} r^{-n} [1 - e^{-K s}]^{-n/2} Leb(D);
    the check compares the Wilson 95% upper confidence limit against it.
    """
    if cfg.r <= 0:
        raise SimulationError("density bound requires r > 0")
    if s < cfg.dt:
        raise SimulationError("need s >= dt")
    cell = np.asarray(cell, dtype=float).reshape(spec.n, 2)
    leb = float(np.prod(cell[:, 1] - cell[:, 0]))
    if leb <= 0:
        raise SimulationError("cell must have positive Lebesgue measure")
    k_target = int(round(s / cfg.dt))
    if abs(k_target * cfg.dt - s) > 1e-9:
        raise SimulationError("s must be a multiple of dt")
    sub_cfg = SimConfig(
        dt=cfg.dt, horizon=s, paths=cfg.paths, seed=cfg.seed, r=cfg.r,
        record_every=k_target, lam_list=(), brownian_dt=cfg.brownian_dt,
    )
    batch = simulate(spec, x0, u, v, sub_cfg)
    pts = batch.aux_states[batch.ok, -1, :]
    inside = np.all((pts >= cell[:, 0]) & (pts <= cell[:, 1]), axis=1)
    N = int(pts.shape[0])
    hits = int(inside.sum())
    p_hat = hits / N
    z = 1.959963984540054  # two-sided 95%
    denom = 1 + z * z / N
    upper = (p_hat + z * z / (2 * N) + z * math.sqrt(p_hat * (1 - p_hat) / N + z * z / (4 * N * N))) / denom
    n = spec.n
    bound = (spec.K / 2) ** (n / 2) * cfg.r ** (-n) * (1 - math.exp(-spec.K * s)) ** (-n / 2) * leb
    return DensityReport(
        probability=p_hat, wilson_upper=upper, bound=bound, passed=upper <= bound,
        s=s, cell_measure=leb, paths=N, below_mixing_floor=s < 0.1,
    )


def companion_gap_report(spec, x0, u, v, cfg: SimConfig):
    """Sample E|Xr_t - X_t|^2 per recorded time with standard errors."""
    if cfg.r <= 0:
        raise SimulationError("companion gap requires r > 0")
    batch = simulate(spec, x0, u, v, cfg)
    gap2 = np.sum((batch.aux_states[batch.ok] - batch.states[batch.ok]) ** 2, axis=2)
    mean = gap2.mean(axis=0)
    se = gap2.std(axis=0, ddof=1) / math.sqrt(gap2.shape[0])
    bound = spec.n * cfg.r**2 / spec.K
    return batch.times, mean, se, bound


def increment_moment(spec, x0, u, v, cfg: SimConfig, t0: float, delta: float):
    """E[ sup_{t0 <= s <= t0+delta} |X_s - X_t0|^2 ] with every step recorded."""
    horizon = t0 + delta
    c2 = SimConfig(dt=cfg.dt, horizon=horizon, paths=cfg.paths, seed=cfg.seed,
                   record_every=1, lam_list=())
    batch = simulate(spec, x0, u, v, c2)
    k0 = int(round(t0 / cfg.dt))
    win = batch.states[batch.ok, k0:, :]
    sup2 = np.max(np.sum((win - win[:, :1, :]) ** 2, axis=2), axis=1)
    return float(sup2.mean()), float(sup2.std(ddof=1) / math.sqrt(sup2.shape[0]))

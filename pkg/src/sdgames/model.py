"""Game instances: coefficient families, control grids, and standing-assumption checks.

A problem is a tuple of evaluators ``b(x,u,v) -> R^n``, ``sigma(x,u,v) -> R^{n x d}``,
``f(x,u,v) -> R`` together with finite control grids for the two players and the
constants of the standing assumptions: Lipschitz bounds for b, sigma, f, a
dissipativity constant ``K`` with ``K > C_sigma^2`` (drift monotonicity
``2<x-y, b(x)-b(y)> <= -K|x-y|^2``), and a uniform bound on sigma.

Coefficients come from a registry of named parametric families, never from opaque
user code, so that problems are expressible as plain config files:

* ``ou_quadratic``   : b = -kappa*x, sigma = sigma0*I, f = |x|^2
* ``affine``         : b = A u + B*(v.x) + C x + c0, constant sigma, quadratic f
                       with an optional bilinear u*v payoff term
* ``custom_polynomial``: scalar drift polynomial of degree <= 3 with a dissipative
                       leading term, plus optional u and -v*x drift couplings
* ``pollution``      : b = u - v*x, bounded sigma(y), cost f = d*max(x,0) - g(u)
                       (the welfare problem in cost convention; see `pollution`)

Assumption checks are sampling-based on the truncation box: a report never claims
a proof, only "no violation found among N samples".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng

MARGIN_EPS = 1e-9


class ModelError(ValueError):
    """Raised for malformed problem definitions."""


# ---------------------------------------------------------------------------
# Control grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlGrid:
    """Finite, ordered discretization of one player's compact control set.

    ``points`` has shape (m, control_dim); index order is the tie-break order
    (lowest index wins every argmin/argmax).
    """

    points: np.ndarray
    label: str

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ModelError(f"control grid {self.label!r} is empty")
        if pts.ndim != 2:
            raise ModelError(f"control grid {self.label!r} must be (m, dim)")
        uniq = {tuple(row) for row in pts}
        if len(uniq) != pts.shape[0]:
            raise ModelError(f"control grid {self.label!r} has duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @staticmethod
    def linspace(lo: float, hi: float, count: int, label: str) -> "ControlGrid":
        if count < 1:
            raise ModelError(f"control grid {label!r} needs count >= 1")
        if count == 1 or hi == lo:
            vals = np.array([[0.5 * (lo + hi)]])
        else:
            vals = np.linspace(lo, hi, count)[:, None]
        return ControlGrid(vals, label)

    def nearest_index(self, value: float | np.ndarray) -> int:
        v = np.atleast_1d(np.asarray(value, dtype=float))
        d = np.linalg.norm(self.points - v[None, :], axis=1)
        return int(np.argmin(d))


# ---------------------------------------------------------------------------
# Coefficient sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Pure vectorized evaluators for drift, diffusion, and running payoff.

    Shapes broadcast: ``x`` is (..., n), ``u`` is (..., cu), ``v`` is (..., cv);
    ``b`` returns (..., n), ``sigma`` returns (..., n, d), ``f`` returns (...).
    """

    family: str
    params: dict
    state_dim: int
    noise_dim: int
    control_dim_u: int
    control_dim_v: int
    b: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _const_sigma(mat: np.ndarray):
    mat = np.asarray(mat, dtype=float)

    def sigma(x, u, v):
        shape = np.broadcast_shapes(x.shape[:-1])
        out = np.empty(shape + mat.shape)
        out[...] = mat
        return out

    return sigma


def _build_ou_quadratic(params: dict) -> CoefficientSet:
    kappa = float(params.get("kappa", 1.0))
    sigma0 = float(params.get("sigma0", 1.0))
    n = int(params.get("state_dim", 1))
    if kappa <= 0:
        raise ModelError("ou_quadratic requires kappa > 0")
    smat = sigma0 * np.eye(n)

    def b(x, u, v):
        return -kappa * x

    def f(x, u, v):
        return np.sum(x * x, axis=-1)

    return CoefficientSet("ou_quadratic", dict(params), n, n, 1, 1, b, _const_sigma(smat), f)


def _build_affine(params: dict) -> CoefficientSet:
    n = int(params.get("state_dim", 1))
    A = np.atleast_2d(np.asarray(params.get("A", np.zeros((n, 1))), dtype=float))
    B = np.atleast_1d(np.asarray(params.get("B", np.zeros(n)), dtype=float))
    C = np.atleast_2d(np.asarray(params.get("C", -np.eye(n)), dtype=float))
    c0 = np.atleast_1d(np.asarray(params.get("c0", np.zeros(n)), dtype=float))
    sig = np.asarray(params.get("sigma0", np.zeros((n, n))), dtype=float)
    if sig.ndim == 0:
        sig = float(sig) * np.eye(n)
    f_xx = float(params.get("f_xx", 0.0))
    f_x = np.atleast_1d(np.asarray(params.get("f_x", np.zeros(n)), dtype=float))
    f_uv = float(params.get("f_uv", 0.0))
    f_u = float(params.get("f_u", 0.0))
    f_v = float(params.get("f_v", 0.0))
    f_0 = float(params.get("f_0", 0.0))
    cu = A.shape[1]
    cv = n  # v enters elementwise against x

    def b(x, u, v):
        drift = x @ C.T + c0
        drift = drift + u @ A.T
        drift = drift + B * v * x
        return drift

    def f(x, u, v):
        us = np.sum(u, axis=-1)
        vs = np.sum(v, axis=-1)
        val = f_xx * np.sum(x * x, axis=-1) + np.sum(f_x * x, axis=-1)
        return val + f_uv * us * vs + f_u * us + f_v * vs + f_0

    return CoefficientSet("affine", dict(params), n, sig.shape[1], cu, cv, b, _const_sigma(sig), f)


def _build_custom_polynomial(params: dict) -> CoefficientSet:
    c3 = float(params.get("c3", 0.0))
    c2 = float(params.get("c2", 0.0))
    c1 = float(params.get("c1", -1.0))
    c0 = float(params.get("c0", 0.0))
    au = float(params.get("au", 0.0))
    av = float(params.get("av", 0.0))
    sigma0 = float(params.get("sigma0", 0.0))
    f_x2 = float(params.get("f_x2", 1.0))
    f_x1 = float(params.get("f_x1", 0.0))
    f_0 = float(params.get("f_0", 0.0))
    if c3 > 0:
        raise ModelError("custom_polynomial leading term must be dissipative (c3 <= 0)")

    def b(x, u, v):
        xs = x[..., 0]
        drift = ((c3 * xs + c2) * xs + c1) * xs + c0
        drift = drift + au * u[..., 0] - av * v[..., 0] * xs
        return drift[..., None]

    def f(x, u, v):
        xs = x[..., 0]
        return f_x2 * xs * xs + f_x1 * xs + f_0

    return CoefficientSet(
        "custom_polynomial", dict(params), 1, 1, 1, 1, b, _const_sigma([[sigma0]]), f
    )


def _build_pollution(params: dict) -> CoefficientSet:
    d_slope = float(params.get("d", 1.0))
    g_coef = float(params.get("g_coef", 2.0))
    g_exp = float(params.get("g_exp", 0.5))
    sigma0 = float(params.get("sigma0", 0.5))
    sigma_kind = str(params.get("sigma_kind", "const"))
    if d_slope <= 0:
        raise ModelError("pollution requires d > 0")
    if not (0.0 < g_exp < 1.0):
        raise ModelError("pollution utility exponent must lie in (0, 1)")

    def b(x, u, v):
        return u - v * x

    if sigma_kind == "const":
        sigma = _const_sigma([[sigma0]])
    elif sigma_kind == "tanh":

        def sigma(x, u, v):
            return (sigma0 * np.tanh(x))[..., None]

    else:
        raise ModelError(f"unknown pollution sigma_kind {sigma_kind!r}")

    def f(x, u, v):
        # cost convention: disutility of the clipped stock minus consumption utility
        return d_slope * np.maximum(x[..., 0], 0.0) - g_coef * u[..., 0] ** g_exp

    return CoefficientSet("pollution", dict(params), 1, 1, 1, 1, b, sigma, f)


FAMILIES: dict[str, Callable[[dict], CoefficientSet]] = {
    "ou_quadratic": _build_ou_quadratic,
    "affine": _build_affine,
    "custom_polynomial": _build_custom_polynomial,
    "pollution": _build_pollution,
}


def make_coefficients(family: str, params: dict) -> CoefficientSet:
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise ModelError(f"unknown coefficient family {family!r}") from None
    return builder(params)


# ---------------------------------------------------------------------------
# Problem specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """A complete game instance with declared assumption constants."""

    name: str
    coeffs: CoefficientSet
    u_grid: ControlGrid
    v_grid: ControlGrid
    K: float
    C_b: float
    C_sigma: float
    C_f: float
    sigma_bound: float
    box: np.ndarray  # (n, 2) truncation box

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(self.n, 2)
        if np.any(box[:, 1] <= box[:, 0]):
            raise ModelError("truncation box must have lo < hi in every dimension")
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        if self.K <= 0:
            raise ModelError("dissipativity constant K must be positive")
        if self.K <= self.C_sigma**2:
            raise ModelError(
                f"assumption violated: K={self.K} must exceed C_sigma^2={self.C_sigma ** 2}"
            )

    @property
    def n(self) -> int:
        return self.coeffs.state_dim

    @property
    def d(self) -> int:
        return self.coeffs.noise_dim

    def drift_scale_at_origin(self) -> float:
        """sup over control pairs of |b(0,u,v)|."""
        origin = np.zeros((1, self.n))
        worst = 0.0
        for ui in range(self.u_grid.size):
            for vi in range(self.v_grid.size):
                bv = self.coeffs.b(origin, self.u_grid.points[ui], self.v_grid.points[vi])
                worst = max(worst, float(np.linalg.norm(bv)))
        return worst

    def confinement_radius(self) -> float:
        """Radius of the ball outside which the worst-case drift points inward.

        R = (b0 + sqrt(b0^2 + K*sig^2)) / K with b0 = sup|b(0,u,v)| and
        sig = sigma_bound; the comparison argument behind the uniqueness radius
        shows |x| > R forces sup_{u,v} {|sigma|^2 + 2<x, b(x,u,v)>} < 0.
        """
        b0 = self.drift_scale_at_origin()
        return (b0 + math.sqrt(b0 * b0 + self.K * self.sigma_bound**2)) / self.K

    def control_pairs(self):
        """Iterate (ui, vi, u_point, v_point) in tie-break order (u outer)."""
        for ui in range(self.u_grid.size):
            for vi in range(self.v_grid.size):
                yield ui, vi, self.u_grid.points[ui], self.v_grid.points[vi]


def make_spec(
    family: str,
    params: dict,
    *,
    name: str | None = None,
    u_grid: ControlGrid | None = None,
    v_grid: ControlGrid | None = None,
    box: np.ndarray | None = None,
    assumptions: dict | None = None,
) -> ProblemSpec:
    """Build a ProblemSpec from a registered family with derived default constants."""
    coeffs = make_coefficients(family, params)
    n = coeffs.state_dim
    if u_grid is None:
        u_grid = _default_u_grid(family, params)
    if v_grid is None:
        v_grid = _default_v_grid(family, params, n)
    defaults = _default_assumptions(family, params, u_grid, v_grid, box)
    if assumptions:
        defaults.update(assumptions)
    if box is None:
        probe = ProblemSpec(
            name or family, coeffs, u_grid, v_grid, box=np.tile([-1.0, 1.0], (n, 1)), **defaults
        )
        r = 3.0 * probe.confinement_radius()
        if family == "pollution":
            # constrained half-line formulation: the stock lives on [0, x_max]
            box = np.array([[0.0, max(r, 1.0)]])
        else:
            box = np.tile([-max(r, 1.0), max(r, 1.0)], (n, 1))
    box = np.asarray(box, dtype=float).reshape(n, 2)
    defaults["C_f"] = _lipschitz_f_default(family, params, box, defaults.get("C_f"))
    return ProblemSpec(name or family, coeffs, u_grid, v_grid, box=box, **defaults)


def _default_u_grid(family: str, params: dict) -> ControlGrid:
    if family == "pollution":
        gamma = float(params.get("gamma", 4.0))
        count = int(params.get("u_count", 31))
        # g'(0+) is infinite; keep 0 out of the grid so argmins stay finite
        return ControlGrid.linspace(gamma / 1000.0, gamma, count, "U")
    if family == "affine" and "u_values" in params:
        return ControlGrid(np.asarray(params["u_values"], dtype=float), "U")
    return ControlGrid(np.array([[0.0]]), "U")


def _default_v_grid(family: str, params: dict, n: int) -> ControlGrid:
    if family == "pollution":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 2.0))
        if not 0 < a <= b:
            raise ModelError("pollution decay range requires 0 < a <= b")
        count = int(params.get("v_count", 21))
        return ControlGrid.linspace(a, b, count, "V")
    if family == "affine" and "v_values" in params:
        return ControlGrid(np.asarray(params["v_values"], dtype=float), "V")
    return ControlGrid(np.zeros((1, n)) if family == "affine" else np.array([[0.0]]), "V")


def _default_assumptions(family, params, u_grid, v_grid, box) -> dict:
    if family == "ou_quadratic":
        kappa = float(params.get("kappa", 1.0))
        sigma0 = float(params.get("sigma0", 1.0))
        n = int(params.get("state_dim", 1))
        return dict(
            K=2.0 * kappa,
            C_b=kappa,
            C_sigma=0.0,
            C_f=None,
            sigma_bound=sigma0 * math.sqrt(n),
        )
    if family == "pollution":
        a = float(params.get("a", 1.0))
        bmax = float(params.get("b", 2.0))
        sigma0 = float(params.get("sigma0", 0.5))
        kind = str(params.get("sigma_kind", "const"))
        c_sig = 0.0 if kind == "const" else sigma0
        return dict(K=2.0 * a, C_b=bmax, C_sigma=c_sig, C_f=None, sigma_bound=sigma0)
    if family == "affine":
        n = int(params.get("state_dim", 1))
        B = np.atleast_1d(np.asarray(params.get("B", np.zeros(n)), dtype=float))
        C = np.atleast_2d(np.asarray(params.get("C", -np.eye(n)), dtype=float))
        sig = np.asarray(params.get("sigma0", np.zeros((n, n))), dtype=float)
        if sig.ndim == 0:
            sig = float(sig) * np.eye(n)
        Csym = 0.5 * (C + C.T)
        worst = -np.inf
        for vrow in v_grid.points:
            eigs = np.linalg.eigvalsh(Csym + np.diag(B * vrow))
            worst = max(worst, float(eigs.max()))
        K = -2.0 * worst
        C_b = max(
            float(np.linalg.norm(C, 2))
            + max(float(np.max(np.abs(B * vrow))) for vrow in v_grid.points),
            1e-12,
        )
        return dict(
            K=K, C_b=C_b, C_sigma=0.0, C_f=None, sigma_bound=float(np.linalg.norm(sig, "fro"))
        )
    if family == "custom_polynomial":
        c3 = float(params.get("c3", 0.0))
        c2 = float(params.get("c2", 0.0))
        c1 = float(params.get("c1", -1.0))
        av = float(params.get("av", 0.0))
        sigma0 = float(params.get("sigma0", 0.0))
        lo, hi = (-5.0, 5.0) if box is None else (float(np.min(box)), float(np.max(box)))
        xs = np.linspace(lo, hi, 2001)
        dbdx = 3 * c3 * xs**2 + 2 * c2 * xs + c1
        vmin = 0.0
        slope_max = float(np.max(dbdx)) - av * vmin
        K = -2.0 * slope_max
        C_b = float(np.max(np.abs(dbdx))) + av
        return dict(K=K, C_b=C_b, C_sigma=0.0, C_f=None, sigma_bound=abs(sigma0))
    raise ModelError(f"unknown coefficient family {family!r}")


def _lipschitz_f_default(family, params, box, declared):
    if declared is not None:
        return declared
    xmax = float(np.max(np.abs(box)))
    if family == "ou_quadratic":
        return 2.0 * xmax
    if family == "pollution":
        return float(params.get("d", 1.0))
    if family == "affine":
        n = int(params.get("state_dim", 1))
        f_xx = float(params.get("f_xx", 0.0))
        f_x = np.atleast_1d(np.asarray(params.get("f_x", np.zeros(n)), dtype=float))
        return 2.0 * abs(f_xx) * xmax + float(np.linalg.norm(f_x))
    if family == "custom_polynomial":
        return 2.0 * abs(float(params.get("f_x2", 1.0))) * xmax + abs(
            float(params.get("f_x1", 0.0))
        )
    return 0.0


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    passed: bool
    worst_margin: float
    witness: dict = field(default_factory=dict)


@dataclass
class ValidationReport:
    """Empirical assumption report: violations found, never proofs."""

    spec_name: str
    sample_count: int
    seed: int
    checks: dict[str, CheckResult]
    claim: str

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "spec": self.spec_name,
            "samples": self.sample_count,
            "seed": self.seed,
            "all_passed": self.all_passed,
            "claim": self.claim,
            "checks": {
                k: {"passed": c.passed, "worst_margin": c.worst_margin, "witness": c.witness}
                for k, c in self.checks.items()
            },
        }


def _sample_box_pairs(spec: ProblemSpec, count: int, seed: int):
    gen = rng.scalar_rng(seed, rng.STREAM_VALIDATE)
    lo, hi = spec.box[:, 0], spec.box[:, 1]
    x = gen.uniform(lo, hi, size=(count, spec.n))
    y = gen.uniform(lo, hi, size=(count, spec.n))
    gap = np.linalg.norm(x - y, axis=1)
    keep = gap > 1e-8
    return x[keep], y[keep]


def validate_assumptions(spec: ProblemSpec, sample_count: int, seed: int) -> ValidationReport:
    """Sample-based check of the Lipschitz, dissipativity, and boundedness assumptions.

    For random pairs (x, y) in the truncation box and every control-grid pair,
    checks |l(x)-l(y)| <= C_l|x-y| for l in {b, f}, ||sigma(x)-sigma(y)|| <=
    C_sigma|x-y|, 2<x-y, b(x)-b(y)> <= -K|x-y|^2, and ||sigma|| <= sigma_bound.
    Violations are recorded with the witnessing (x, y, u, v); nothing aborts.
    """
    if sample_count < 1:
        raise ModelError("sample_count must be >= 1")
    x, y = _sample_box_pairs(spec, sample_count, seed)
    gap = np.linalg.norm(x - y, axis=1)
    worst = {
        "h1_finite": (-np.inf, {}),
        "h2_b": (-np.inf, {}),
        "h2_f": (-np.inf, {}),
        "h2_sigma": (-np.inf, {}),
        "h3_dissipative": (-np.inf, {}),
        "h4_sigma_bound": (-np.inf, {}),
    }

    def bump(key, margins, ui, vi):
        i = int(np.argmax(margins))
        m = float(margins[i])
        if m > worst[key][0]:
            worst[key] = (
                m,
                {
                    "x": x[i].tolist(),
                    "y": y[i].tolist(),
                    "u_index": ui,
                    "v_index": vi,
                },
            )

    for ui, vi, up, vp in spec.control_pairs():
        bx, by = spec.coeffs.b(x, up, vp), spec.coeffs.b(y, up, vp)
        fx, fy = spec.coeffs.f(x, up, vp), spec.coeffs.f(y, up, vp)
        sx, sy = spec.coeffs.sigma(x, up, vp), spec.coeffs.sigma(y, up, vp)
        finite = np.isfinite(bx).all() and np.isfinite(fx).all() and np.isfinite(sx).all()
        bump("h1_finite", np.array([0.0 if finite else 1.0]), ui, vi)
        bump("h2_b", np.linalg.norm(bx - by, axis=1) / gap - spec.C_b, ui, vi)
        bump("h2_f", np.abs(fx - fy) / gap - spec.C_f, ui, vi)
        snorm = np.sqrt(np.sum((sx - sy) ** 2, axis=(1, 2)))
        bump("h2_sigma", snorm / gap - spec.C_sigma, ui, vi)
        inner = 2.0 * np.sum((x - y) * (bx - by), axis=1)
        bump("h3_dissipative", inner / gap**2 + spec.K, ui, vi)
        bump("h4_sigma_bound", np.sqrt(np.sum(sx**2, axis=(1, 2))) - spec.sigma_bound, ui, vi)

    checks = {
        k: CheckResult(passed=(m <= MARGIN_EPS), worst_margin=m, witness=w)
        for k, (m, w) in worst.items()
    }
    n_ok = sum(c.passed for c in checks.values())
    claim = (
        f"no violation found among {len(gap)} sampled pairs x all control pairs"
        if n_ok == len(checks)
        else f"{len(checks) - n_ok} assumption check(s) violated on samples"
    )
    return ValidationReport(spec.name, len(gap), seed, checks, claim)


def estimate_dissipativity(spec: ProblemSpec, sample_count: int, seed: int) -> float:
    """Largest K' such that 2<x-y, b(x)-b(y)> <= -K'|x-y|^2 holds on the samples.

    Returns min over samples and control pairs of -2<x-y, db>/|x-y|^2; a
    non-positive value signals a non-dissipative drift on the sampled box.
    """
    if sample_count < 2:
        raise ModelError("sample_count must be >= 2")
    x, y = _sample_box_pairs(spec, sample_count, seed)
    gap2 = np.sum((x - y) ** 2, axis=1)
    best = np.inf
    for _, _, up, vp in spec.control_pairs():
        bx, by = spec.coeffs.b(x, up, vp), spec.coeffs.b(y, up, vp)
        ratio = -2.0 * np.sum((x - y) * (bx - by), axis=1) / gap2
        best = min(best, float(ratio.min()))
    return best

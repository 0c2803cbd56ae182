"""Vanishing-discount construction of the ergodic pair (rho, w) and its checks.

For a decreasing ladder lambda_1 > ... > lambda_m the discounted equation is
solved per rung; rho_k = lambda_k * w_k(origin) and phi_k = w_k - w_k(origin).
The ergodic estimate is the plain last rung (rho_m, phi_m) with the Cauchy tail
as its error bar; an optional Richardson value is reported separately and
labeled.  Downstream checks:

* long-time:     V(T,x)/T -> rho and W(T,x) = V - rho*T - w stays uniformly
                 bounded relative to (1+|x|),
* Abel/Cesaro:   the lambda-side and T-side limits of the value agree
                 (Abelian-Tauberian equivalence),
* DPP:           marching the parabolic equation from w for time T and
                 subtracting rho*T reproduces w,
* uniqueness probe: ladders with different rungs and initializations land on
                 the same (rho, w) (empirical only, never a proof).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction, StateGrid, constant_like
from .model import ProblemSpec
from .solver import (
    HamiltonianTables,
    SolveDiagnostics,
    build_tables,
    cfl_limit,
    solve_discounted,
    solve_parabolic,
)


class ErgodicError(ValueError):
    pass


@dataclass
class DiscountLadder:
    lambdas: list
    rhos: list  # rho_k = lambda_k * w_k(origin)
    phis: list  # GridFunction, phi_k = w_k - w_k(origin)
    lipschitz: list
    diagnostics: list
    origin_index: int

    def tail_increment(self) -> float:
        if len(self.rhos) < 2:
            return float("inf")
        return abs(self.rhos[-1] - self.rhos[-2])

    def cauchy_ok(self) -> bool:
        """Increments non-increasing over the last three rungs (5% slack)."""
        inc = [abs(a - b) for a, b in zip(self.rhos[1:], self.rhos[:-1])]
        tail = inc[-3:]
        return all(b <= a * 1.05 + 1e-14 for a, b in zip(tail[:-1], tail[1:]))

    def lipschitz_uniform_ok(self, slack: float = 0.10) -> bool:
        """Uniform-boundedness proxy: the running max of the phi Lipschitz
        seminorms over the second half of the ladder must not exceed (1+slack)
        times the running max over the first half."""
        m = len(self.lipschitz)
        if m < 2:
            return True
        half = (m + 1) // 2
        first = max(self.lipschitz[:half])
        total = max(self.lipschitz)
        return total <= (1.0 + slack) * first + 1e-9

    def richardson(self) -> float:
        """Linear-in-lambda extrapolation from the last two rungs (labeled)."""
        if len(self.rhos) < 2:
            return self.rhos[-1]
        l1, l2 = self.lambdas[-2], self.lambdas[-1]
        r1, r2 = self.rhos[-2], self.rhos[-1]
        return r2 + (r2 - r1) * l2 / (l1 - l2)

    def to_table(self) -> list:
        return [
            {"lambda": lam, "rho_lambda": rho, "phi_lipschitz": lip,
             "residual": d.residual, "iterations": d.iterations}
            for lam, rho, lip, d in zip(self.lambdas, self.rhos, self.lipschitz,
                                        self.diagnostics)
        ]


@dataclass
class ErgodicSolution:
    rho: float
    w: GridFunction  # last-rung phi, zero at the origin-nearest node
    ladder: DiscountLadder
    ordering: str
    flags: list = field(default_factory=list)

    @property
    def rho_error_bar(self) -> float:
        return self.ladder.tail_increment()

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "rho_error_bar": self.rho_error_bar,
            "rho_richardson": self.ladder.richardson(),
            "ordering": self.ordering,
            "ladder": self.ladder.to_table(),
            "lipschitz_uniform_ok": self.ladder.lipschitz_uniform_ok(),
            "cauchy_ok": self.ladder.cauchy_ok(),
            "flags": list(self.flags),
        }


def vanishing_discount(
    spec: ProblemSpec,
    grid: StateGrid,
    lambdas,
    ordering: str = "infsup",
    tol: float = 1e-8,
    rho_tol: float | None = None,
    method: str = "howard",
    w_init: GridFunction | None = None,
    tables: HamiltonianTables | None = None,
) -> ErgodicSolution:
    """Run the discount ladder and return (rho, w) with full diagnostics.

    rho is the plain last-rung estimate lambda_m * w_m(origin); w is the
    normalized phi at the smallest lambda.  Non-Cauchy ladders are flagged but
    still reported.
    """
    lambdas = [float(x) for x in lambdas]
    if not lambdas or any(x <= 0 for x in lambdas):
        raise ErgodicError("ladder must contain positive discount factors")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ErgodicError("ladder must be strictly decreasing")
    if tables is None:
        tables = build_tables(spec, grid)
    i0 = grid.origin_index()
    rhos, phis, lips, diags = [], [], [], []
    w_prev = w_init.values.copy() if w_init is not None else None
    for lam in lambdas:
        w, diag = solve_discounted(
            spec, grid, lam, ordering, tol=tol, method=method, w0=w_prev, tables=tables
        )
        if not diag.converged:
            diag.notes.append(f"rung lambda={lam} not converged")
        phi = GridFunction(grid, w.values - w.values[i0])
        rhos.append(float(lam * w.values[i0]))
        phis.append(phi)
        lips.append(phi.lipschitz_seminorm())
        diags.append(diag)
        w_prev = w.values
    ladder = DiscountLadder(lambdas, rhos, phis, lips, diags, i0)
    flags = []
    if not ladder.cauchy_ok():
        flags.append("non-Cauchy ladder: rho increments not decreasing over the last rungs")
    if not ladder.lipschitz_uniform_ok():
        flags.append("phi Lipschitz seminorms grew beyond the uniformity slack")
    if rho_tol is not None and ladder.tail_increment() >= rho_tol:
        flags.append(
            f"tail increment {ladder.tail_increment():.3g} exceeds requested tolerance {rho_tol}"
        )
    if any(not d.converged for d in diags):
        flags.append("one or more discounted solves did not converge")
    return ErgodicSolution(rho=rhos[-1], w=phis[-1], ladder=ladder, ordering=ordering,
                           flags=flags)


# ---------------------------------------------------------------------------
# Long-time behaviour
# ---------------------------------------------------------------------------


@dataclass
class LongTimeReport:
    T_list: list
    ratio_at_origin: list  # V(T, x0_node)/T
    sup_w_normalized: list  # sup_x |V - rho*T - w| / (1+|x|)
    rho: float
    non_increasing_ok: bool
    dt: float

    def to_dict(self) -> dict:
        return {
            "T_list": list(self.T_list),
            "V_over_T_at_origin": list(self.ratio_at_origin),
            "sup_W_over_1px": list(self.sup_w_normalized),
            "rho": self.rho,
            "non_increasing_ok": self.non_increasing_ok,
            "dt": self.dt,
        }


def long_time_check(
    spec: ProblemSpec,
    grid: StateGrid,
    ergodic: ErgodicSolution,
    phi0: GridFunction | None,
    T_list,
    dt: float | None = None,
    slack: float = 0.10,
    tables: HamiltonianTables | None = None,
) -> LongTimeReport:
    """March V(t, .) and check W(T,x) = V - rho*T - w stays uniformly bounded.

    Asserts the map T -> sup_x |W(T,x)|/(1+|x|) is non-increasing over T_list
    up to the given slack.
    """
    if tables is None:
        tables = build_tables(spec, grid)
    T_list = sorted(float(t) for t in T_list)
    if phi0 is None:
        phi0 = constant_like(grid, 0.0)
    if dt is None:
        dt = 0.9 * cfl_limit(tables)
    Tmax = T_list[-1]
    steps = int(np.ceil(Tmax / dt - 1e-12))
    dt = Tmax / steps
    snapped = [round(t / dt) * dt for t in T_list]
    res = solve_parabolic(spec, grid, phi0, Tmax, dt, ergodic.ordering,
                          checkpoints=snapped, tables=tables)
    nodes = grid.nodes()
    weight = 1.0 + np.linalg.norm(nodes, axis=1)
    i0 = grid.origin_index()
    ratios, sups = [], []
    for t_req, t_snap, V in zip(T_list, snapped, res.values):
        W = V - ergodic.rho * t_snap - ergodic.w.values
        ratios.append(float(V[i0] / t_snap))
        sups.append(float(np.max(np.abs(W) / weight)))
    ok = all(b <= a * (1.0 + slack) + 1e-12 for a, b in zip(sups[:-1], sups[1:]))
    return LongTimeReport(T_list, ratios, sups, ergodic.rho, ok, dt)


@dataclass
class AbelTauberReport:
    lambda_side: float
    time_side: float
    gap: float
    tolerance: float
    agrees: bool
    T_max: float
    tail_increment: float

    def to_dict(self) -> dict:
        return {
            "lambda_side": self.lambda_side, "time_side": self.time_side,
            "gap": self.gap, "tolerance": self.tolerance, "agrees": self.agrees,
            "T_max": self.T_max, "tail_increment": self.tail_increment,
        }


def abelian_tauberian_check(
    spec: ProblemSpec,
    grid: StateGrid,
    ergodic: ErgodicSolution,
    T_max: float,
    dt: float | None = None,
    factor: float = 5.0,
    tables: HamiltonianTables | None = None,
) -> AbelTauberReport:
    """Cross-check the Abel (vanishing discount) and Cesaro (long time) limits.

    lambda-side: last-rung rho.  T-side: V(T_max, origin)/T_max from the
    parabolic march with zero initial data.  Asserts the gap is at most
    factor * max(ladder tail increment, 1/T_max).
    """
    if tables is None:
        tables = build_tables(spec, grid)
    if dt is None:
        dt = 0.9 * cfl_limit(tables)
    steps = int(np.ceil(T_max / dt - 1e-12))
    dt = T_max / steps
    res = solve_parabolic(spec, grid, constant_like(grid, 0.0), T_max, dt,
                          ergodic.ordering, checkpoints=[T_max], tables=tables)
    i0 = grid.origin_index()
    t_side = float(res.values[-1][i0] / T_max)
    l_side = ergodic.rho
    tail = ergodic.ladder.tail_increment()
    tolerance = factor * max(tail, 1.0 / T_max)
    gap = abs(l_side - t_side)
    return AbelTauberReport(l_side, t_side, gap, tolerance, gap <= tolerance, T_max, tail)


def dpp_check(
    spec: ProblemSpec,
    grid: StateGrid,
    ergodic: ErgodicSolution,
    T: float,
    dt: float | None = None,
    tables: HamiltonianTables | None = None,
) -> float:
    """Sup-norm defect of the dynamic programming identity.

    Marches the parabolic equation with initial data w for time T and returns
    sup |V(T,.) - rho*T - w|; for the self-consistent discrete pair this is
    dominated by the vanishing-discount truncation (~ lambda_min * T * ||w||),
    so refinement studies must shrink lambda_min along with (h, dt).
    """
    if tables is None:
        tables = build_tables(spec, grid)
    if dt is None:
        dt = 0.9 * cfl_limit(tables)
    steps = int(np.ceil(T / dt - 1e-12))
    dt = T / steps
    res = solve_parabolic(spec, grid, ergodic.w, T, dt, ergodic.ordering,
                          checkpoints=[T], tables=tables)
    return float(np.max(np.abs(res.values[-1] - ergodic.rho * T - ergodic.w.values)))


@dataclass
class UniquenessReport:
    rho_a: float
    rho_b: float
    rho_gap: float
    tolerance: float
    agrees: bool
    w_sup_gap: float

    def to_dict(self) -> dict:
        return {
            "rho_a": self.rho_a, "rho_b": self.rho_b, "rho_gap": self.rho_gap,
            "tolerance": self.tolerance, "agrees": self.agrees,
            "w_sup_gap": self.w_sup_gap,
        }


def uniqueness_probe(
    spec: ProblemSpec,
    grid: StateGrid,
    ladder_a,
    ladder_b,
    ordering: str = "infsup",
    init_a: float = 0.0,
    init_b: float = 100.0,
    tol: float = 1e-8,
) -> UniquenessReport:
    """Empirical uniqueness probe: two ladders, two initializations.

    Reports |rho_A - rho_B| against the combined tail tolerance and the
    sup-norm gap of the normalized correctors.  Disagreements are reported,
    not interpreted.
    """
    tables = build_tables(spec, grid)
    sol_a = vanishing_discount(spec, grid, ladder_a, ordering, tol=tol,
                               w_init=constant_like(grid, init_a), tables=tables)
    sol_b = vanishing_discount(spec, grid, ladder_b, ordering, tol=tol,
                               w_init=constant_like(grid, init_b), tables=tables)
    tolerance = sol_a.rho_error_bar + sol_b.rho_error_bar + 10 * tol
    gap = abs(sol_a.rho - sol_b.rho)
    wgap = float(np.max(np.abs(sol_a.w.values - sol_b.w.values)))
    return UniquenessReport(sol_a.rho, sol_b.rho, gap, tolerance, gap <= tolerance, wgap)

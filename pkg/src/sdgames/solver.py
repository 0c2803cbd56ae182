"""Monotone finite-difference solvers for the discounted and parabolic HJBI equations.

Discretization (Kushner-Dupuis style on a uniform truncated grid):

* drift terms use one-sided upwind first differences, direction chosen per
  control pair by the sign of each drift component;
* the diagonal diffusion term uses central second differences;
* in 2D a cross-derivative term is admitted only when sigma*sigma^T is
  diagonally dominant relative to the grid aspect (rejected otherwise), using
  the sign-split diagonal-neighbor stencil;
* at box boundary nodes only inward one-sided differences are used: the
  outward drift component is clamped and the diffusion stencil dropped
  (dissipativity makes the enlarged box's boundary dynamically irrelevant).

Every neighbor weight is nonnegative, so the scheme is monotone and the
nodewise-implicit value-iteration update

    w_i <- minimax_{(u,v)} [ (sum_k c_k w_nb(k) + f) / (lambda + sum_k c_k) ]

is a sup-norm contraction with factor rowsum/(lambda + rowsum).  The default
production engine is nested policy iteration (outer player frozen per the
requested ordering, inner exact Howard solves of the remaining one-player
problem through banded/sparse linear algebra); plain Gauss-Seidel and Jacobi
value iteration are available and reach the same fixed point.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from . import _kernels as kernels
from .grids import GridFunction, StateGrid
from .model import ProblemSpec

ORDERINGS = ("infsup", "supinf")
_CODE = {"infsup": 0, "supinf": 1}

MAX_TABLE_ELEMENTS = 200_000_000


class SolverError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Discrete Hamiltonian tables
# ---------------------------------------------------------------------------


@dataclass
class HamiltonianTables:
    """Per-(control pair, node) stencil weights of the discrete Hamiltonian."""

    grid: StateGrid
    offsets: tuple
    coefs: np.ndarray  # (n_off, nU, nV, N), nonnegative
    idxs: np.ndarray  # (n_off, N) int64 neighbor flat indices
    f: np.ndarray  # (nU, nV, N)
    rowsum: np.ndarray  # (nU, nV, N)
    max_rowsum: float

    @property
    def n_nodes(self) -> int:
        return self.grid.size

    def minimax(self, w: np.ndarray, ordering: str) -> np.ndarray:
        """minimax over control pairs of the discrete H evaluated at w."""
        return kernels.minimax_apply(w, self.coefs, self.idxs, self.f, _CODE[ordering])

    def ratio_update(self, w: np.ndarray, lam: float, ordering: str) -> np.ndarray:
        return kernels.ratio_apply(
            w, self.coefs, self.idxs, self.f, self.rowsum, lam, _CODE[ordering]
        )

    def full_H(self, w: np.ndarray) -> np.ndarray:
        """Discrete H at every (u, v, node); used for policy extraction."""
        H = self.f.copy()
        for k in range(self.coefs.shape[0]):
            H += self.coefs[k] * (w[self.idxs[k]] - w)
        return H

    def argpair(self, w: np.ndarray, ordering: str) -> tuple[np.ndarray, np.ndarray]:
        """Per-node optimal (u, v) index pair, ties broken by lowest index."""
        H = self.full_H(w)
        return self.argpair_from_H(H, ordering)

    @staticmethod
    def argpair_from_H(H: np.ndarray, ordering: str) -> tuple[np.ndarray, np.ndarray]:
        nU, nV, N = H.shape
        ar = np.arange(N)
        if ordering == "infsup":
            v_of_u = H.argmax(axis=1)  # (nU, N)
            S = H.max(axis=1)
            u_star = S.argmin(axis=0)
            v_star = v_of_u[u_star, ar]
        elif ordering == "supinf":
            u_of_v = H.argmin(axis=0)  # (nV, N)
            T = H.min(axis=0)
            v_star = T.argmax(axis=0)
            u_star = u_of_v[v_star, ar]
        else:
            raise SolverError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
        return u_star.astype(np.int64), v_star.astype(np.int64)

    def frozen(self, u_idx: np.ndarray, v_idx: np.ndarray):
        """Stencil rows for a frozen per-node control pair."""
        ar = np.arange(self.n_nodes)
        cs = [self.coefs[k, u_idx, v_idx, ar] for k in range(self.coefs.shape[0])]
        fv = self.f[u_idx, v_idx, ar]
        rs = self.rowsum[u_idx, v_idx, ar]
        return cs, fv, rs


def build_tables(spec: ProblemSpec, grid: StateGrid) -> HamiltonianTables:
    if grid.dim != spec.n:
        raise SolverError(f"grid dim {grid.dim} != spec state dim {spec.n}")
    nU, nV, N = spec.u_grid.size, spec.v_grid.size, grid.size
    nodes = grid.nodes()
    if grid.dim == 1:
        offsets = (1, -1)
    else:
        n1 = grid.counts[1]
        offsets = (n1, -n1, 1, -1, n1 + 1, -n1 - 1, n1 - 1, -n1 + 1)
    n_off = len(offsets)
    if n_off * nU * nV * N > MAX_TABLE_ELEMENTS:
        raise SolverError("Hamiltonian table too large; coarsen grid or control grids")
    coefs = np.zeros((n_off, nU, nV, N))
    fvals = np.empty((nU, nV, N))
    idxs = np.empty((n_off, N), dtype=np.int64)
    ar = np.arange(N)
    for k, off in enumerate(offsets):
        idxs[k] = np.clip(ar + off, 0, N - 1)

    if grid.dim == 1:
        h = grid.h[0]
        left = ar == 0
        right = ar == N - 1
        for ui, vi, up, vp in spec.control_pairs():
            b = spec.coeffs.b(nodes, up, vp)[:, 0]
            sig = spec.coeffs.sigma(nodes, up, vp)
            a = 0.5 * np.sum(sig[:, 0, :] ** 2, axis=1)
            a = np.where(left | right, 0.0, a)
            bp = np.maximum(b, 0.0)
            bm = np.maximum(-b, 0.0)
            bp = np.where(right, 0.0, bp)  # clamp outward drift at the boundary
            bm = np.where(left, 0.0, bm)
            coefs[0, ui, vi] = a / h**2 + bp / h
            coefs[1, ui, vi] = a / h**2 + bm / h
            fvals[ui, vi] = spec.coeffs.f(nodes, up, vp)
    else:
        h0, h1 = grid.h
        n1 = grid.counts[1]
        i0 = ar // n1
        i1 = ar % n1
        edge0 = (i0 == 0) | (i0 == grid.counts[0] - 1)
        edge1 = (i1 == 0) | (i1 == grid.counts[1] - 1)
        any_edge = edge0 | edge1
        for ui, vi, up, vp in spec.control_pairs():
            b = spec.coeffs.b(nodes, up, vp)
            sig = spec.coeffs.sigma(nodes, up, vp)
            ssT = np.einsum("nkd,nld->nkl", sig, sig)
            a00 = 0.5 * ssT[:, 0, 0]
            a11 = 0.5 * ssT[:, 1, 1]
            cross = ssT[:, 0, 1]
            a00 = np.where(edge0, 0.0, a00)
            a11 = np.where(edge1, 0.0, a11)
            cross = np.where(any_edge, 0.0, cross)
            cpos = np.maximum(cross, 0.0) / (2 * h0 * h1)
            cneg = np.maximum(-cross, 0.0) / (2 * h0 * h1)
            ax0 = a00 / h0**2 - (cpos + cneg)
            ax1 = a11 / h1**2 - (cpos + cneg)
            if np.any(ax0 < -1e-14) or np.any(ax1 < -1e-14):
                raise SolverError(
                    "cross-diffusion not diagonally dominant for this grid aspect; "
                    "monotone stencil rejected"
                )
            ax0 = np.maximum(ax0, 0.0)
            ax1 = np.maximum(ax1, 0.0)
            b0p = np.where(i0 == grid.counts[0] - 1, 0.0, np.maximum(b[:, 0], 0.0))
            b0m = np.where(i0 == 0, 0.0, np.maximum(-b[:, 0], 0.0))
            b1p = np.where(i1 == n1 - 1, 0.0, np.maximum(b[:, 1], 0.0))
            b1m = np.where(i1 == 0, 0.0, np.maximum(-b[:, 1], 0.0))
            coefs[0, ui, vi] = ax0 + b0p / h0
            coefs[1, ui, vi] = ax0 + b0m / h0
            coefs[2, ui, vi] = ax1 + b1p / h1
            coefs[3, ui, vi] = ax1 + b1m / h1
            coefs[4, ui, vi] = cpos
            coefs[5, ui, vi] = cpos
            coefs[6, ui, vi] = cneg
            coefs[7, ui, vi] = cneg
            fvals[ui, vi] = spec.coeffs.f(nodes, up, vp)

    rowsum = coefs.sum(axis=0)
    return HamiltonianTables(
        grid=grid,
        offsets=offsets,
        coefs=coefs,
        idxs=idxs,
        f=fvals,
        rowsum=rowsum,
        max_rowsum=float(rowsum.max()),
    )


# ---------------------------------------------------------------------------
# Linear solves for frozen policies
# ---------------------------------------------------------------------------


def _solve_frozen(tables: HamiltonianTables, lam: float, u_idx, v_idx) -> np.ndarray:
    cs, fv, rs = tables.frozen(u_idx, v_idx)
    N = tables.n_nodes
    diag = lam + rs
    if tables.grid.dim == 1:
        ab = np.zeros((3, N))
        ab[1] = diag
        ab[0, 1:] = -cs[0][:-1]  # east neighbor
        ab[2, :-1] = -cs[1][1:]  # west neighbor
        return scipy.linalg.solve_banded((1, 1), ab, fv)
    rows = [np.arange(N)]
    cols = [np.arange(N)]
    data = [diag]
    for k, off in enumerate(tables.offsets):
        nz = cs[k] != 0.0
        rows.append(np.arange(N)[nz])
        cols.append(tables.idxs[k][nz])
        data.append(-cs[k][nz])
    A = scipy.sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return scipy.sparse.linalg.spsolve(A, fv)


# ---------------------------------------------------------------------------
# Discounted equation
# ---------------------------------------------------------------------------


@dataclass
class SolveDiagnostics:
    iterations: int
    residual: float  # sup-norm fixed-point defect, recomputed on the final iterate
    pde_residual: float  # sup-norm of minimax H(w) - lambda*w
    method: str
    ordering: str
    lam: float
    wall_time: float
    converged: bool
    isaacs_gap: float
    notes: list = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "iterations": self.iterations,
            "residual": self.residual,
            "pde_residual": self.pde_residual,
            "method": self.method,
            "ordering": self.ordering,
            "lambda": self.lam,
            "converged": self.converged,
            "isaacs_gap": self.isaacs_gap,
            "notes": list(self.notes),
        }
        if include_timing:
            # wall time is run metadata; output files must stay byte-reproducible
            out["wall_time"] = self.wall_time
        return out


def _restricted_H(tables, w, idx, axis):
    """H with one player's per-node policy frozen: (n_other, N)."""
    ar = np.arange(tables.n_nodes)
    if axis == 0:  # freeze u -> vary v
        f = tables.f[idx, :, ar]  # (N, nV)
        H = f.copy()
        for k in range(tables.coefs.shape[0]):
            ck = tables.coefs[k][idx, :, ar]
            H += ck * (w[tables.idxs[k]] - w)[:, None]
    else:  # freeze v -> vary u
        f = tables.f[:, idx, ar].T  # f[:, idx, ar] -> (N, nU)? keep (N, nU)
        H = f.copy()
        for k in range(tables.coefs.shape[0]):
            ck = tables.coefs[k][:, idx, ar].T
            H += ck * (w[tables.idxs[k]] - w)[:, None]
    return H  # (N, n_other)


def _howard(tables, lam, ordering, tol, max_outer, w0):
    w = w0.copy()
    N = tables.n_nodes
    prev_outer = None
    iters = 0
    inner_tol = max(1e-13, 0.01 * tol)
    for _ in range(max_outer):
        iters += 1
        H = tables.full_H(w)
        if ordering == "infsup":
            outer_idx = H.max(axis=1).argmin(axis=0).astype(np.int64)
        else:
            outer_idx = H.min(axis=0).argmax(axis=0).astype(np.int64)
        # inner: exact Howard for the remaining one-player problem
        for _ in range(200):
            if ordering == "infsup":
                Hr = _restricted_H(tables, w, outer_idx, axis=0)  # (N, nV)
                inner_idx = Hr.argmax(axis=1).astype(np.int64)
                w_new = _solve_frozen(tables, lam, outer_idx, inner_idx)
            else:
                Hr = _restricted_H(tables, w, outer_idx, axis=1)  # (N, nU)
                inner_idx = Hr.argmin(axis=1).astype(np.int64)
                w_new = _solve_frozen(tables, lam, inner_idx, outer_idx)
            delta = float(np.max(np.abs(w_new - w)))
            w = w_new
            if delta <= inner_tol:
                break
        defect = float(np.max(np.abs(tables.ratio_update(w, lam, ordering) - w)))
        if defect <= tol:
            return w, iters, True
        if prev_outer is not None and np.array_equal(outer_idx, prev_outer):
            return w, iters, defect <= tol
        prev_outer = outer_idx
    return w, iters, False


def _value_iteration(tables, lam, ordering, tol, max_iter, w0, method):
    w = w0.copy()
    code = _CODE[ordering]
    iters = 0
    for _ in range(max_iter):
        iters += 1
        if method == "jacobi":
            w_new = tables.ratio_update(w, lam, ordering)
            delta = float(np.max(np.abs(w_new - w)))
            w = w_new
        else:
            delta = float(
                kernels.gs_sweep(w, tables.coefs, tables.idxs, tables.f, tables.rowsum, lam, code)
            )
        if delta <= tol:
            return w, iters, True
    return w, iters, False


def solve_discounted(
    spec: ProblemSpec,
    grid: StateGrid,
    lam: float,
    ordering: str = "infsup",
    tol: float = 1e-8,
    max_iter: int | None = None,
    method: str = "howard",
    w0: GridFunction | np.ndarray | None = None,
    tables: HamiltonianTables | None = None,
) -> tuple[GridFunction, SolveDiagnostics]:
    """Solve lambda*w = minimax H(x, Dw, D^2w, u, v) on the truncated grid.

    ``ordering`` picks inf_u sup_v ("infsup") or sup_v inf_u ("supinf").
    Returns the solution and diagnostics; a non-converged run returns the best
    iterate flagged via ``converged=False``.
    """
    if ordering not in ORDERINGS:
        raise SolverError(f"ordering must be one of {ORDERINGS}")
    if not lam > 0:
        raise SolverError("discount factor lambda must be positive")
    if not grid.contains_ball(spec.confinement_radius()):
        raise SolverError(
            f"grid must span the confinement region (radius {spec.confinement_radius():.3g})"
        )
    t0 = time.perf_counter()
    if tables is None:
        tables = build_tables(spec, grid)
    if w0 is None:
        w_start = np.zeros(grid.size)
    elif isinstance(w0, GridFunction):
        w_start = w0.values.copy()
    else:
        w_start = np.asarray(w0, dtype=float).copy()

    if method == "howard":
        max_outer = max_iter if max_iter is not None else 500
        w, iters, ok = _howard(tables, lam, ordering, tol, max_outer, w_start)
    elif method in ("gauss_seidel", "jacobi"):
        mi = max_iter if max_iter is not None else int(min(1e6 / lam, 2e7))
        w, iters, ok = _value_iteration(tables, lam, ordering, tol, mi, w_start, method)
    else:
        raise SolverError(f"unknown method {method!r}")

    defect = float(np.max(np.abs(tables.ratio_update(w, lam, ordering) - w)))
    pde_res = float(np.max(np.abs(tables.minimax(w, ordering) - lam * w)))
    gap = float(np.max(np.abs(tables.minimax(w, "infsup") - tables.minimax(w, "supinf"))))
    diag = SolveDiagnostics(
        iterations=iters,
        residual=defect,
        pde_residual=pde_res,
        method=method,
        ordering=ordering,
        lam=lam,
        wall_time=time.perf_counter() - t0,
        converged=ok and defect <= tol,
        isaacs_gap=gap,
    )
    if not diag.converged:
        diag.notes.append("non-convergence: best iterate returned")
    return GridFunction(grid, w), diag


# ---------------------------------------------------------------------------
# Parabolic equation
# ---------------------------------------------------------------------------


@dataclass
class ParabolicResult:
    grid: StateGrid
    times: list
    values: np.ndarray  # (len(times), N)
    dt: float
    steps: int
    ordering: str
    cfl_limit: float

    def at_time(self, t: float) -> GridFunction:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise SolverError(f"time {t} was not checkpointed")
        return GridFunction(self.grid, self.values[i].copy())


def cfl_limit(tables: HamiltonianTables) -> float:
    """Largest monotonicity-preserving explicit step: dt <= 1 / max rowsum."""
    return 1.0 / tables.max_rowsum if tables.max_rowsum > 0 else np.inf


def solve_parabolic(
    spec: ProblemSpec,
    grid: StateGrid,
    phi: GridFunction,
    T: float,
    dt: float,
    ordering: str = "infsup",
    checkpoints: list | None = None,
    tables: HamiltonianTables | None = None,
) -> ParabolicResult:
    """Explicit monotone march of dV/dt = minimax H from V(0) = phi up to T."""
    if ordering not in ORDERINGS:
        raise SolverError(f"ordering must be one of {ORDERINGS}")
    if tables is None:
        tables = build_tables(spec, grid)
    limit = cfl_limit(tables)
    if dt > limit * (1 + 1e-12):
        raise SolverError(
            f"explicit step dt={dt:g} violates the CFL bound; max admissible dt={limit:.6g}"
        )
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise SolverError("horizon T must be an integer multiple of dt")
    if checkpoints is None:
        checkpoints = [T]
    ck_steps = []
    for t in checkpoints:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= k <= steps:
            raise SolverError(f"checkpoint {t} is not on the dt time grid")
        ck_steps.append(k)
    code = _CODE[ordering]
    V = phi.values.copy()
    out = np.empty((len(checkpoints), grid.size))
    for j, k in enumerate(ck_steps):
        if k == 0:
            out[j] = V
    for k in range(1, steps + 1):
        V = V + dt * kernels.minimax_apply(V, tables.coefs, tables.idxs, tables.f, code)
        for j, kc in enumerate(ck_steps):
            if kc == k:
                out[j] = V
    return ParabolicResult(
        grid=grid,
        times=list(checkpoints),
        values=out,
        dt=dt,
        steps=steps,
        ordering=ordering,
        cfl_limit=limit,
    )


def isaacs_gap(spec: ProblemSpec, grid: StateGrid, w: GridFunction,
               tables: HamiltonianTables | None = None) -> float:
    """max over nodes of |infsup H - supinf H| at w's discrete derivatives."""
    if not w.is_finite():
        raise SolverError("w must be finite")
    if tables is None:
        tables = build_tables(spec, grid)
    a = tables.minimax(w.values, "infsup")
    b = tables.minimax(w.values, "supinf")
    return float(np.max(np.abs(a - b)))

"""Pure numpy reference kernels.

These define the semantics the compiled extension must reproduce bit-for-bit:
per-element accumulation runs over stencil offsets in ascending order, minimax
reductions take the first extremum (lowest control index wins ties).

Array conventions:
    coefs : (n_off, nU, nV, N)  nonnegative neighbor weights per control pair
    idxs  : (n_off, N) int64    flat neighbor index per node (clipped at edges;
                                the clipped entries carry zero weight)
    f     : (nU, nV, N)         running payoff per node and control pair
    code  : 0 = infsup (min over u of max over v), 1 = supinf
"""

from __future__ import annotations

import numpy as np


def _reduce(H: np.ndarray, code: int) -> np.ndarray:
    if code == 0:
        return H.max(axis=1).min(axis=0)
    return H.min(axis=0).max(axis=0)


def minimax_apply(V, coefs, idxs, f, code):
    """Reduced discrete Hamiltonian: minimax over pairs of sum_k c_k (V_nb - V) + f."""
    n_off = coefs.shape[0]
    H = f.copy()
    for k in range(n_off):
        H += coefs[k] * (V[idxs[k]] - V)
    return _reduce(H, code)


def ratio_apply(V, coefs, idxs, f, rowsum, lam, code):
    """One Jacobi value-iteration update (nodewise-implicit monotone form)."""
    n_off = coefs.shape[0]
    num = f.copy()
    for k in range(n_off):
        num += coefs[k] * V[idxs[k]]
    return _reduce(num / (lam + rowsum), code)


def gs_sweep(V, coefs, idxs, f, rowsum, lam, code):
    """In-place Gauss-Seidel sweep in lexicographic node order.

    Returns the max absolute node update of the sweep.
    """
    n_off, nU, nV, N = coefs.shape
    delta = 0.0
    for i in range(N):
        num = f[:, :, i].copy()
        for k in range(n_off):
            num += coefs[k, :, :, i] * V[idxs[k, i]]
        vals = num / (lam + rowsum[:, :, i])
        if code == 0:
            new = vals.max(axis=1).min()
        else:
            new = vals.min(axis=0).max()
        d = abs(new - V[i])
        if d > delta:
            delta = d
        V[i] = new
    return delta


def euler_affine_block(x, alpha, beta, sdiff, noise, dt, traj):
    """Euler-Maruyama block for scalar dx = (alpha - beta*x) dt + sdiff dB.

    x (P,) is advanced in place through noise (P, S); traj (P, S) receives the
    post-step states.  alpha, beta, sdiff are per-path constants for the block.
    """
    steps = noise.shape[1]
    for s in range(steps):
        drift = alpha - beta * x
        x += drift * dt
        x += sdiff * noise[:, s]
        traj[:, s] = x
    return x


def accumulate_payoff(pay, fmat, dt):
    """pay_p += dt * f[p, s], sequentially in s (matches the per-step engine)."""
    for s in range(fmat.shape[1]):
        pay += dt * fmat[:, s]
    return pay


def accumulate_weighted(acc, fmat, weights):
    """acc_p += w_s * f[p, s], sequentially in s."""
    for s in range(fmat.shape[1]):
        acc += weights[s] * fmat[:, s]
    return acc


def euler_aug_affine_block(xr, x_prev, traj, alpha, beta, sdiff, half_k, r, noise, noise1, dt, traj_out):
    """Companion block for the non-degenerate approximating process.

    dXr = [-half_k*(Xr - X) + (alpha - beta*X)] dt + sdiff dB + r dB1, driven by
    the same dB as the original path; X is read from x_prev (pre-step states,
    i.e. traj shifted by one) to match the shared Euler time discretization.
    """
    steps = noise.shape[1]
    xk = x_prev
    for s in range(steps):
        drift = -half_k * (xr - xk) + (alpha - beta * xk)
        xr += drift * dt
        xr += sdiff * noise[:, s]
        xr += r * noise1[:, s]
        traj_out[:, s] = xr
        xk = traj[:, s]
    return xr

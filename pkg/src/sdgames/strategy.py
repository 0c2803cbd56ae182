"""Feedback synthesis from grid solutions and closed-loop game evaluation.

From a corrector function w on the grid, per-node optimal control indices are
extracted by enumerating the discrete Hamiltonian over the control-grid
product with the same upwind stencil the solver used.  Three targets:

* ``v-against-u``  : the maximizing player's selector from the supinf
                     solution; it guarantees payoff >= rho - C(theta+sqrt(theta))
                     against every opponent when deployed as a theta-frozen
                     feedback,
* ``u-against-xv`` : the minimizing player's per-(node, v) response map from
                     the infsup solution (the symmetric construction),
* ``pair``         : saddle candidates (u, v) per node.

``play_theta_game`` runs the frozen closed loop against an arbitrary opponent
and checks the one-sided envelope rho -/+ C_env*(theta + sqrt(theta)) with a
per-spec calibrated C_env.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction, StateGrid
from .model import ProblemSpec
from .simulate import (
    ConstantControl,
    ControlProcess,
    PiecewiseFrozenFeedback,
    SimConfig,
    estimate_average_payoff,
    random_piecewise_controls,
)
from .solver import HamiltonianTables, build_tables

TARGETS = ("v-against-u", "u-against-xv", "pair")


class StrategyError(ValueError):
    pass


@dataclass
class FeedbackPolicy:
    """Per-node control choice; off-grid states evaluate by nearest node."""

    grid: StateGrid
    which: str  # "u" or "v"
    indices: np.ndarray  # (N,) int control-grid indices
    provenance: dict = field(default_factory=dict)

    def index_at(self, x: np.ndarray) -> np.ndarray:
        return self.indices[self.grid.nearest_flat_index(x)]

    def to_csv(self) -> str:
        """Node coords + control index, with a JSON provenance header line."""
        import csv as _csv
        import io as _io
        import json as _json

        buf = _io.StringIO()
        head = dict(self.provenance)
        head["which"] = self.which
        buf.write("# " + _json.dumps(head, sort_keys=True) + "\n")
        wr = _csv.writer(buf, lineterminator="\n")
        wr.writerow([f"x{i + 1}" for i in range(self.grid.dim)] + ["control_index"])
        for row, idx in zip(self.grid.nodes(), self.indices):
            wr.writerow([repr(float(c)) for c in row] + [int(idx)])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "FeedbackPolicy":
        import csv as _csv
        import io as _io
        import json as _json

        lines = text.splitlines()
        prov = {}
        if lines and lines[0].startswith("#"):
            prov = _json.loads(lines[0][1:].strip())
            lines = lines[1:]
        rows = list(_csv.reader(_io.StringIO("\n".join(lines))))
        header, body = rows[0], rows[1:]
        dim = len(header) - 1
        coords = np.array([[float(c) for c in r[:dim]] for r in body])
        idx = np.array([int(r[dim]) for r in body], dtype=np.int64)
        counts, los, his = [], [], []
        for i in range(dim):
            ax = np.unique(coords[:, i])
            counts.append(ax.size)
            los.append(ax[0])
            his.append(ax[-1])
        grid = StateGrid(tuple(los), tuple(his), tuple(counts))
        order = grid.nearest_flat_index(coords)
        out = np.zeros(grid.size, dtype=np.int64)
        out[order] = idx
        return FeedbackPolicy(grid, prov.get("which", "u"), out, prov)


@dataclass
class ResponsePolicy:
    """u response per (node, opposing v index): the map psi(x, v)."""

    grid: StateGrid
    indices: np.ndarray  # (N, nV)
    provenance: dict = field(default_factory=dict)


def extract_feedback(
    spec: ProblemSpec,
    grid: StateGrid,
    w: GridFunction,
    target: str,
    tables: HamiltonianTables | None = None,
    provenance: dict | None = None,
):
    """Extract per-node optimal controls from the discrete Hamiltonian at w.

    Derivatives use the solver's own upwind stencil; every argmin/argmax tie
    breaks to the lowest control index.
    """
    if target not in TARGETS:
        raise StrategyError(f"target must be one of {TARGETS}")
    if not w.is_finite():
        raise StrategyError("w must be finite")
    if tables is None:
        tables = build_tables(spec, grid)
    H = tables.full_H(w.values)
    prov = dict(provenance or {})
    prov.setdefault("target", target)
    if target == "v-against-u":
        _, v_idx = tables.argpair_from_H(H, "supinf")
        return FeedbackPolicy(grid, "v", v_idx, prov)
    if target == "u-against-xv":
        resp = H.argmin(axis=0).T.astype(np.int64)  # (N, nV)
        return ResponsePolicy(grid, resp, prov)
    u_idx, _ = tables.argpair_from_H(H, "infsup")
    _, v_idx = tables.argpair_from_H(H, "supinf")
    return (
        FeedbackPolicy(grid, "u", u_idx, dict(prov, side="u")),
        FeedbackPolicy(grid, "v", v_idx, dict(prov, side="v")),
    )


@dataclass
class ThetaStrategy:
    """A feedback policy deployed with refresh interval theta."""

    theta: float
    policy: FeedbackPolicy

    def as_process(self, dt: float) -> PiecewiseFrozenFeedback:
        return PiecewiseFrozenFeedback(self.theta, self.policy, dt)


@dataclass
class GameEstimate:
    x0: float
    horizon: float
    theta: float
    opponent: str
    mean: float
    stderr: float
    rho_ref: float
    envelope: float  # C_env * (theta + sqrt(theta))
    satisfied: bool  # one-sided envelope at 3*stderr slack
    side: str  # "lower": mean >= rho - env - 3se; "upper": mean <= rho + env + 3se

    def to_dict(self) -> dict:
        return {
            "x0": self.x0, "horizon": self.horizon, "theta": self.theta,
            "opponent": self.opponent, "mean": self.mean, "stderr": self.stderr,
            "rho_ref": self.rho_ref, "envelope": self.envelope,
            "satisfied": self.satisfied, "side": self.side,
        }


def play_theta_game(
    spec: ProblemSpec,
    x0,
    strategy: ThetaStrategy,
    opponent: ControlProcess,
    cfg: SimConfig,
    rho_ref: float,
    c_env: float,
    opponent_name: str = "opponent",
) -> GameEstimate:
    """Closed loop: frozen feedback against an arbitrary admissible opponent.

    The strategy's control refreshes from the state at multiples of theta; the
    payoff estimate is checked against the one-sided envelope around rho_ref
    appropriate to the strategy's player (v maximizes f, u minimizes f).
    """
    proc = strategy.as_process(cfg.dt)
    if strategy.policy.which == "v":
        est = estimate_average_payoff(spec, x0, opponent, proc, cfg)
        side = "lower"
    else:
        est = estimate_average_payoff(spec, x0, proc, opponent, cfg)
        side = "upper"
    env = c_env * (strategy.theta + math.sqrt(strategy.theta))
    if side == "lower":
        ok = est.mean >= rho_ref - env - 3.0 * est.stderr
    else:
        ok = est.mean <= rho_ref + env + 3.0 * est.stderr
    return GameEstimate(
        x0=float(np.atleast_1d(x0)[0]), horizon=cfg.horizon, theta=strategy.theta,
        opponent=opponent_name, mean=est.mean, stderr=est.stderr, rho_ref=rho_ref,
        envelope=env, satisfied=ok, side=side,
    )


def opponent_panel(spec: ProblemSpec, against: str, steps: int, dt: float, seed: int,
                   adversary: FeedbackPolicy | None = None,
                   n_random: int = 10, switch_time: float = 0.5):
    """Fixed opponent panel: every constant control, seeded random
    piecewise-constant schedules, and optionally an adversarial feedback."""
    grid_size = spec.u_grid.size if against == "u" else spec.v_grid.size
    panel: list[tuple[str, ControlProcess]] = []
    for i in range(grid_size):
        panel.append((f"const[{i}]", ConstantControl(i)))
    switch_every = max(1, int(round(switch_time / dt)))
    for j in range(n_random):
        panel.append(
            (f"random[{j}]",
             random_piecewise_controls(grid_size, steps, switch_every, seed, j))
        )
    if adversary is not None:
        panel.append(("adversarial", PiecewiseFrozenFeedback(dt, adversary, dt)))
    return panel


def calibrate_envelope_constant(gaps: dict) -> float:
    """C_env from a theta-halving study: twice the observed envelope slope.

    ``gaps`` maps theta -> worst observed shortfall max(0, rho - J) (lower side).
    Uses the two coarsest thetas; frozen afterwards so the envelope is a fixed
    regression target, with a floor so the assertion never degenerates.
    """
    thetas = sorted(gaps, reverse=True)
    if len(thetas) < 2:
        raise StrategyError("need at least two thetas to calibrate")
    t1, t2 = thetas[0], thetas[1]
    num = abs(gaps[t1] - gaps[t2])
    den = (t1 + math.sqrt(t1)) - (t2 + math.sqrt(t2))
    slope = num / den if den > 0 else 0.0
    return max(2.0 * slope, 1e-3)


@dataclass
class BracketReport:
    x0_list: list
    thetas: list
    rho_infsup: float
    rho_supinf: float
    lower_estimates: dict  # (x0, theta) -> GameEstimate dict (v-strategy floor)
    upper_estimates: dict  # (x0, theta) -> GameEstimate dict (u-strategy cap)
    midpoints: dict  # x0 -> midpoint of the bracket at the smallest theta
    midpoint_spread_ok: bool
    all_enveloped: bool

    def to_dict(self) -> dict:
        return {
            "x0_list": list(self.x0_list),
            "thetas": list(self.thetas),
            "rho_infsup": self.rho_infsup,
            "rho_supinf": self.rho_supinf,
            "lower": {f"{k[0]}|{k[1]}": v for k, v in self.lower_estimates.items()},
            "upper": {f"{k[0]}|{k[1]}": v for k, v in self.upper_estimates.items()},
            "midpoints": {str(k): v for k, v in self.midpoints.items()},
            "midpoint_spread_ok": self.midpoint_spread_ok,
            "all_enveloped": self.all_enveloped,
        }


def value_bracket(
    spec: ProblemSpec,
    x0_list,
    grid: StateGrid,
    w_infsup: GridFunction,
    rho_infsup: float,
    w_supinf: GridFunction,
    rho_supinf: float,
    theta_list,
    cfg: SimConfig,
    c_env: float,
    seed: int = 0,
) -> BracketReport:
    """Play both extracted strategies against the opponent panel from several
    starts and check the empirical payoffs bracket rho within the theta
    envelope, with x0-independent midpoints (constancy of the value)."""
    tables = build_tables(spec, grid)
    u_pol, _ = extract_feedback(spec, grid, w_infsup, "pair", tables=tables)
    _, v_pol = extract_feedback(spec, grid, w_supinf, "pair", tables=tables)
    steps = cfg.steps
    lower, upper = {}, {}
    mids = {}
    all_ok = True
    for x0 in x0_list:
        for theta in theta_list:
            vpanel = opponent_panel(spec, "u", steps, cfg.dt, seed, adversary=u_pol)
            worst_low = None
            for name, opp in vpanel:
                g = play_theta_game(spec, x0, ThetaStrategy(theta, v_pol), opp, cfg,
                                    rho_supinf, c_env, name)
                if worst_low is None or g.mean < worst_low.mean:
                    worst_low = g
                all_ok &= g.satisfied
            upanel = opponent_panel(spec, "v", steps, cfg.dt, seed, adversary=v_pol)
            worst_up = None
            for name, opp in upanel:
                g = play_theta_game(spec, x0, ThetaStrategy(theta, u_pol), opp, cfg,
                                    rho_infsup, c_env, name)
                if worst_up is None or g.mean > worst_up.mean:
                    worst_up = g
                all_ok &= g.satisfied
            lower[(x0, theta)] = worst_low.to_dict()
            upper[(x0, theta)] = worst_up.to_dict()
        tmin = min(theta_list)
        mids[x0] = 0.5 * (lower[(x0, tmin)]["mean"] + upper[(x0, tmin)]["mean"])
    vals = list(mids.values())
    ses = [max(lower[(x, min(theta_list))]["stderr"], upper[(x, min(theta_list))]["stderr"])
           for x in x0_list]
    spread_ok = (max(vals) - min(vals)) <= 6.0 * max(ses) + 1e-12
    return BracketReport(
        x0_list=list(x0_list), thetas=list(theta_list),
        rho_infsup=rho_infsup, rho_supinf=rho_supinf,
        lower_estimates=lower, upper_estimates=upper,
        midpoints=mids, midpoint_spread_ok=spread_ok, all_enveloped=all_ok,
    )

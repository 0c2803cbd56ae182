"""Command-line interface: the repository's only user surface.

One binary, subcommand style; JSON for reports, CSV for fields and paths.
Every command writes its outputs plus a run manifest (resolved config, seed,
content digests) into --out.  Exit codes: 0 success, 1 when a numerical check
or invariant failed, 2 on usage/config errors.  All randomness funnels through
--seed; SDGAMES_WORKERS may parallelize path chunks without changing results.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import ConfigError, load_problem
from .ergodic import vanishing_discount
from .grids import GridFunction, StateGrid
from .manifest import OutputWriter, verify_manifest
from .model import validate_assumptions
from .pollution import PollutionParams, run_pipeline
from .simulate import (
    ConstantControl,
    FeedbackControl,
    SimConfig,
    SimulationError,
    estimate_average_payoff,
    simulate,
)
from .smoothing import inf_convolve, mollify, sup_convolve
from .solver import SolverError, build_tables, cfl_limit, isaacs_gap, solve_discounted, solve_parabolic
from .strategy import (
    FeedbackPolicy,
    ThetaStrategy,
    extract_feedback,
    opponent_panel,
    play_theta_game,
)

USAGE_ERROR = 2
CHECK_FAILED = 1


class CliError(Exception):
    """Usage or config error: exits 2."""


def _float_list(text: str) -> list:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliError(f"expected comma-separated numbers, got {text!r}") from None


def _load_spec(args):
    return load_problem(args.spec)


def _state_grid(loaded, args) -> StateGrid:
    nodes = getattr(args, "nodes", None) or loaded.grid_nodes or 601
    return StateGrid.from_box(loaded.spec.box, nodes)


def _add_out(p):
    p.add_argument("--out", default=".", help="output directory (default: current)")


def cmd_validate(args, argv) -> int:
    loaded = _load_spec(args)
    report = validate_assumptions(loaded.spec, args.samples, args.seed)
    out = OutputWriter(args.out, "validate", argv, loaded.raw, args.seed)
    out.add_json("validation.json", report.to_dict())
    out.commit()
    return 0 if report.all_passed else CHECK_FAILED


def cmd_simulate(args, argv) -> int:
    loaded = _load_spec(args)
    spec = loaded.spec
    x0 = np.array(_float_list(args.x0))
    lam_list = tuple(_float_list(args.lambdas)) if args.lambdas else ()
    cfg = SimConfig(dt=args.dt, horizon=args.T, paths=args.paths, seed=args.seed,
                    r=args.r, lam_list=lam_list)
    u = ConstantControl(args.u_index)
    v = ConstantControl(args.v_index)
    est = estimate_average_payoff(spec, x0, u, v, cfg)
    payload = {
        "spec": spec.name,
        "x0": x0.tolist(),
        "dt": cfg.dt, "T": cfg.horizon, "paths": cfg.paths, "seed": cfg.seed, "r": cfg.r,
        "average_payoff": {"mean": est.mean, "stderr": est.stderr},
        "discounted": {str(k): {"mean": m, "stderr": s} for k, (m, s) in est.discounted.items()},
        "flagged_paths": est.flagged,
        "notes": est.notes,
    }
    out = OutputWriter(args.out, "simulate", argv, loaded.raw, args.seed)
    out.add_json("sim_summary.json", payload)
    if args.dump_paths:
        batch = simulate(spec, x0, u, v, cfg)
        out.add_text("paths.csv", _paths_csv(spec, batch))
    out.commit()
    return 0


def _paths_csv(spec, batch) -> str:
    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    wr = _csv.writer(buf, lineterminator="\n")
    cu = spec.u_grid.dim
    cv = spec.v_grid.dim
    header = ["path", "t"] + [f"x{i + 1}" for i in range(spec.n)]
    header += [f"u{i + 1}" for i in range(cu)] + [f"v{i + 1}" for i in range(cv)]
    header += ["running_payoff"]
    wr.writerow(header)
    dt = batch.cfg.dt
    for p in range(batch.states.shape[0]):
        run = 0.0
        for j, t in enumerate(batch.times):
            uval = spec.u_grid.points[batch.u_rec[p, j]]
            vval = spec.v_grid.points[batch.v_rec[p, j]]
            row = [p, repr(float(t))] + [repr(float(c)) for c in batch.states[p, j]]
            row += [repr(float(c)) for c in uval] + [repr(float(c)) for c in vval]
            if j > 0:
                seg = batch.times[j] - batch.times[j - 1]
                x_prev = batch.states[p, j - 1]
                fv = spec.coeffs.f(x_prev, uval, vval)
                run += float(fv) * seg
            row.append(repr(run))
            wr.writerow(row)
    return buf.getvalue()


def cmd_solve_discounted(args, argv) -> int:
    if args.lam <= 0:
        raise CliError("--lambda must be positive")
    loaded = _load_spec(args)
    grid = _state_grid(loaded, args)
    w, diag = solve_discounted(loaded.spec, grid, args.lam, args.ordering,
                               tol=args.tol, method=args.method)
    out = OutputWriter(args.out, "solve-discounted", argv, loaded.raw, None)
    out.add_text("w.csv", w.to_csv())
    out.add_json("w.json", w.to_json_dict())
    out.add_json("diagnostics.json", diag.to_dict(include_timing=False))
    out.commit()
    return 0 if diag.converged else CHECK_FAILED


def cmd_solve_parabolic(args, argv) -> int:
    loaded = _load_spec(args)
    grid = _state_grid(loaded, args)
    tables = build_tables(loaded.spec, grid)
    dt = args.dt if args.dt else 0.9 * cfl_limit(tables)
    steps = int(np.ceil(args.T / dt - 1e-12))
    dt = args.T / steps
    checkpoints = _float_list(args.checkpoints) if args.checkpoints else [args.T]
    checkpoints = [round(t / dt) * dt for t in checkpoints]
    phi = GridFunction(grid, np.full(grid.size, args.phi_const))
    res = solve_parabolic(loaded.spec, grid, phi, args.T, dt, args.ordering,
                          checkpoints=checkpoints, tables=tables)
    i0 = grid.origin_index()
    payload = {
        "spec": loaded.spec.name, "T": args.T, "dt": dt, "ordering": args.ordering,
        "cfl_limit": res.cfl_limit,
        "checkpoints": [
            {"t": t, "value_at_origin": float(V[i0]),
             "ratio_at_origin": float(V[i0] / t) if t > 0 else None}
            for t, V in zip(res.times, res.values)
        ],
    }
    out = OutputWriter(args.out, "solve-parabolic", argv, loaded.raw, None)
    out.add_json("parabolic.json", payload)
    out.add_text("V_final.csv", GridFunction(grid, res.values[-1]).to_csv())
    out.commit()
    return 0


def cmd_ergodic(args, argv) -> int:
    loaded = _load_spec(args)
    spec = loaded.spec
    grid = _state_grid(loaded, args)
    ladder = _float_list(args.ladder)
    orderings = ["infsup", "supinf"] if args.ordering == "both" else [args.ordering]
    tables = build_tables(spec, grid)
    payload = {"spec": spec.name, "ladder": ladder, "nodes": grid.counts[0]}
    out = OutputWriter(args.out, "ergodic", argv, loaded.raw, None)
    gap = None
    ok = True
    for ordering in orderings:
        sol = vanishing_discount(spec, grid, ladder, ordering, tol=args.tol, tables=tables)
        payload[f"rho_{ordering}"] = sol.rho
        payload[f"report_{ordering}"] = sol.to_dict()
        ok &= not sol.flags
        if gap is None:
            gap = isaacs_gap(spec, grid, sol.w, tables=tables)
        out.add_text(f"w_{ordering}.csv", sol.w.to_csv())
        # the ordering's own player's feedback: u from infsup, v from supinf
        u_pol, v_pol = extract_feedback(
            spec, grid, sol.w, "pair", tables=tables,
            provenance={"ordering": ordering, "lambda_min": ladder[-1],
                        "spec": spec.name},
        )
        pol = u_pol if ordering == "infsup" else v_pol
        out.add_text(f"policy_{ordering}.csv", pol.to_csv())
    payload["isaacs_gap"] = gap
    out.add_json("ergodic.json", payload)
    out.commit()
    return 0 if ok else CHECK_FAILED


def cmd_evaluate(args, argv) -> int:
    loaded = _load_spec(args)
    spec = loaded.spec
    with open(args.policy, "r", encoding="utf-8") as fh:
        policy = FeedbackPolicy.from_csv(fh.read())
    cfg = SimConfig(dt=args.dt, horizon=args.T, paths=args.paths, seed=args.seed)
    strat = ThetaStrategy(args.theta, policy)
    against = "v" if policy.which == "u" else "u"
    if args.opponents == "panel":
        panel = opponent_panel(spec, against, cfg.steps, cfg.dt, args.seed)
    elif args.opponents.startswith("const:"):
        panel = [(args.opponents, ConstantControl(int(args.opponents.split(":")[1])))]
    elif args.opponents.startswith("seed:"):
        from .simulate import random_piecewise_controls

        k = int(args.opponents.split(":")[1])
        size = spec.u_grid.size if against == "u" else spec.v_grid.size
        panel = [(args.opponents,
                  random_piecewise_controls(size, cfg.steps, max(1, int(0.5 / cfg.dt)),
                                            args.seed, k))]
    else:
        raise CliError("--opponents must be panel, const:IDX, or seed:K")
    x0 = np.array(_float_list(args.x0))
    games = [
        play_theta_game(spec, x0, strat, opp, cfg, args.rho, args.c_env, name).to_dict()
        for name, opp in panel
    ]
    all_ok = all(g["satisfied"] for g in games)
    out = OutputWriter(args.out, "evaluate", argv, loaded.raw, args.seed)
    out.add_json("evaluate.json", {"spec": spec.name, "theta": args.theta,
                                   "rho_ref": args.rho, "c_env": args.c_env,
                                   "games": games, "all_satisfied": all_ok})
    out.commit()
    return 0 if all_ok else CHECK_FAILED


def cmd_smooth(args, argv) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        w = GridFunction.from_csv(fh.read())
    sup = sup_convolve(w, args.eps)
    inf = inf_convolve(w, args.eps)
    mol = mollify(sup.as_grid_function(), args.delta)
    payload = {
        "eps": args.eps, "delta": args.delta,
        "lipschitz_source": w.lipschitz_seminorm(),
        "sup_uniform_gap": sup.uniform_gap,
        "inf_uniform_gap": inf.uniform_gap,
        "semiconvexity_margin": sup.semiconvexity_margin(),
        "boundary_affected_nodes": int(sup.boundary_affected.sum()),
        "mollify_near_identity": mol.flagged_near_identity,
    }
    out = OutputWriter(args.out, "smooth", argv, {"input": args.input}, None)
    out.add_json("smooth.json", payload)
    out.add_text("w_sup.csv", sup.as_grid_function().to_csv())
    out.add_text("w_inf.csv", inf.as_grid_function().to_csv())
    out.add_text("w_sup_mollified.csv", mol.as_grid_function().to_csv())
    out.commit()
    return 0


def cmd_pollution(args, argv) -> int:
    params = PollutionParams(gamma=args.gamma, a=args.a, b=args.b, d=args.d,
                             sigma0=args.sigma0)
    report = run_pipeline(params, nodes=args.nodes, seed=args.seed,
                          closed_form_check=args.closed_form_check)
    out = OutputWriter(args.out, "pollution", argv, params.to_dict(), args.seed)
    out.add_json("pollution.json", report.to_dict())
    out.add_text("pollution.csv", report.to_csv())
    out.commit()
    if args.closed_form_check and report.checks and not all(report.checks.values()):
        return CHECK_FAILED
    return 0


def cmd_report(args, argv) -> int:
    result = verify_manifest(args.manifest)
    out = OutputWriter(args.out, "report", argv, {"manifest": args.manifest}, None)
    out.add_json("report.json", result)
    out.commit()
    return 0 if result["all_ok"] else CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdgames",
                                description="zero-sum stochastic differential games "
                                            "with long-run average payoff")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("validate", help="sample-check the standing assumptions")
    q.add_argument("--spec", required=True)
    q.add_argument("--samples", type=int, default=2000)
    q.add_argument("--seed", type=int, default=0)
    _add_out(q)
    q.set_defaults(func=cmd_validate)

    q = sub.add_parser("simulate", help="Euler-Maruyama batch with payoff estimates")
    q.add_argument("--spec", required=True)
    q.add_argument("--x0", required=True, help="comma-separated start state")
    q.add_argument("--T", type=float, required=True)
    q.add_argument("--dt", type=float, required=True)
    q.add_argument("--paths", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--r", type=float, default=0.0, help="companion-process level")
    q.add_argument("--u-index", type=int, default=0)
    q.add_argument("--v-index", type=int, default=0)
    q.add_argument("--lambdas", default="", help="discount factors for lambda-functionals")
    q.add_argument("--dump-paths", action="store_true")
    _add_out(q)
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("solve-discounted", help="monotone solve of the discounted HJBI")
    q.add_argument("--spec", required=True)
    q.add_argument("--lambda", dest="lam", type=float, required=True)
    q.add_argument("--ordering", choices=["infsup", "supinf"], default="infsup")
    q.add_argument("--nodes", type=int, default=None)
    q.add_argument("--tol", type=float, default=1e-8)
    q.add_argument("--method", choices=["howard", "gauss_seidel", "jacobi"],
                   default="howard")
    _add_out(q)
    q.set_defaults(func=cmd_solve_discounted)

    q = sub.add_parser("solve-parabolic", help="explicit monotone time marching")
    q.add_argument("--spec", required=True)
    q.add_argument("--T", type=float, required=True)
    q.add_argument("--dt", type=float, default=None)
    q.add_argument("--ordering", choices=["infsup", "supinf"], default="infsup")
    q.add_argument("--nodes", type=int, default=None)
    q.add_argument("--phi-const", type=float, default=0.0)
    q.add_argument("--checkpoints", default="")
    _add_out(q)
    q.set_defaults(func=cmd_solve_parabolic)

    q = sub.add_parser("ergodic", help="vanishing-discount ladder -> (rho, w)")
    q.add_argument("--spec", required=True)
    q.add_argument("--ladder", required=True, help="comma-separated decreasing lambdas")
    q.add_argument("--ordering", choices=["infsup", "supinf", "both"], default="both")
    q.add_argument("--nodes", type=int, default=None)
    q.add_argument("--tol", type=float, default=1e-8)
    _add_out(q)
    q.set_defaults(func=cmd_ergodic)

    q = sub.add_parser("evaluate", help="play a theta-frozen policy against opponents")
    q.add_argument("--spec", required=True)
    q.add_argument("--policy", required=True, help="policy CSV with provenance header")
    q.add_argument("--theta", type=float, required=True)
    q.add_argument("--T", type=float, required=True)
    q.add_argument("--dt", type=float, default=0.01)
    q.add_argument("--paths", type=int, default=256)
    q.add_argument("--x0", default="1.0")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--opponents", default="panel", help="panel | const:IDX | seed:K")
    q.add_argument("--rho", type=float, required=True, help="reference ergodic value")
    q.add_argument("--c-env", type=float, default=1.0)
    _add_out(q)
    q.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("smooth", help="sup/inf-convolution and mollification")
    q.add_argument("--in", dest="input", required=True, help="GridFunction CSV")
    q.add_argument("--eps", type=float, required=True)
    q.add_argument("--delta", type=float, required=True)
    _add_out(q)
    q.set_defaults(func=cmd_smooth)

    q = sub.add_parser("pollution", help="pollution game pipeline + closed form")
    q.add_argument("--a", type=float, required=True)
    q.add_argument("--b", type=float, required=True)
    q.add_argument("--d", type=float, required=True)
    q.add_argument("--gamma", type=float, required=True)
    q.add_argument("--sigma0", type=float, default=0.5)
    q.add_argument("--nodes", type=int, default=1201)
    q.add_argument("--seed", type=int, default=2024)
    q.add_argument("--closed-form-check", action="store_true")
    _add_out(q)
    q.set_defaults(func=cmd_pollution)

    q = sub.add_parser("report", help="verify a run manifest's output digests")
    q.add_argument("--manifest", required=True)
    _add_out(q)
    q.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0,) else 0
    try:
        return args.func(args, argv)
    except (CliError, ConfigError, SolverError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return CHECK_FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Command line driver.

Subcommands map onto the library layers: `rewrite` and `verify` drive the
synthesis constructions, `simulate` and `sweep` drive the oscillatory
integrator, `demo` runs the distributed saddle-point fixture end to end.

Exit codes: 0 success, 1 runtime failure (divergence, a failed identity
check), 2 synthesis impossibility (missing path, unrewritable term),
3 malformed input.  Every failure prints one line to stderr in the form
`ERROR <ClassName>: <message>`.

Determinism contract: identical arguments and input files produce byte
identical CSV and JSON outputs.  The only opt-out is `demo --timing`,
which stamps a wall-clock figure into the report.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import expr as ex
from .approx import build_schedule, convergence_sweep, integrate, \
    sweep_to_csv_text
from .distopt import demo_problem, load_problem, report_json_text, run_demo
from .errors import (
    BracketOptError,
    FactorOnOwnNode,
    MalformedProblem,
    NoPath,
    NotSeparable,
    NotStronglyConnected,
    ParseError,
    PathTooShort,
    Unrewritable,
)
from .graph import AgentIndexMap, read_graph_file
from .rewrite import (
    RewriteResult,
    sample_points,
    synth_estimator,
    synthesize,
)
from .vfield import field_from_json, field_to_json

# impossibility of synthesis vs malformed input
_EXIT_SYNTH = (NoPath, Unrewritable, NotStronglyConnected, FactorOnOwnNode,
               PathTooShort, NotSeparable)
_EXIT_PARSE = (ParseError, MalformedProblem)

_STRATEGIES = ("auto", "simple", "trig", "product", "taylor", "estimator")


def _float_list(text: str) -> tuple[float, ...]:
    out = tuple(float(p) for p in text.split(",") if p.strip())
    if not out:
        raise ValueError("empty list")
    return out


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_json_text(text: str, what: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"bad JSON in {what}: {err}") from None


def _load_json_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_json_text(fh.read(), str(path))


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _single_component(field) -> tuple[int, "ex.Expr"]:
    if len(field.components) != 1:
        raise MalformedProblem(
            "rewrite target must have exactly one nonzero component, "
            f"got {len(field.components)}")
    return field.components[0]


# ---------------------------------------------------------------------------
# rewrite


def _estimator_json(est) -> dict:
    dim = est.augmented_map.total_dim
    decay = None
    for f in est.decay_fields:
        g = f.as_field(dim)
        decay = g if decay is None else decay.plus(g)
    obj = {
        "strategy": "estimator",
        "mu": est.mu,
        "component": est.component,
        "augmented_dim": dim,
        "estimates": [[v, xi] for v, xi in est.estimates],
        "local": field_to_json(est.local_field.as_field(dim)),
        "injections": [inj.to_json() for inj in est.injections],
    }
    if decay is not None:
        obj["decay"] = field_to_json(decay)
    return obj


def cmd_rewrite(args) -> int:
    g = read_graph_file(args.graph)
    field = field_from_json(_load_json_file(args.target))
    component, target = _single_component(field)
    if field.dim != g.n:
        raise MalformedProblem(
            f"target field has dim {field.dim} but the graph has {g.n} "
            "agents (one state component per agent)")
    m = AgentIndexMap.identity(g.n)

    if args.strategy == "estimator":
        est = synth_estimator(g, m, component, target, mu=args.mu)
        text = json.dumps(_estimator_json(est), indent=2, sort_keys=True) \
            + "\n"
    else:
        result = synthesize(
            g, m, component, target, strategy=args.strategy,
            path=args.path, alpha=args.alpha, d=args.d,
            degree=args.degree, box_halfwidth=args.halfwidth)
        text = result.to_json_text()
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    result = RewriteResult.from_json(_load_json_file(args.rewrite))
    # truncated-series results carry their own irreducible residual
    tol = args.tol + (result.residual or 0.0)
    pts = sample_points(result.target.dim, args.samples, result.validity,
                        seed=args.seed)
    realized = result.realized_field()
    worst, worst_pt = 0.0, pts[0]
    for p in pts:
        a = result.target(p)
        b = realized(p)
        err = float(np.max(np.abs(a - b) / (1 + np.abs(a))))
        if err > worst:
            worst, worst_pt = err, p
    ok = worst <= tol
    report = {
        "ok": ok,
        "max_rel_error": worst,
        "worst_point": [float(v) for v in worst_pt],
        "samples": args.samples,
        "seed": args.seed,
        "tol": tol,
        "strategy": result.strategy,
    }
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# simulate / sweep


def _load_drift(path):
    if path is None:
        return None
    return field_from_json(_load_json_file(path))


def cmd_simulate(args) -> int:
    result = RewriteResult.from_json(_load_json_file(args.rewrite))
    drift = _load_drift(args.drift)
    schedule = build_schedule(result.trees, len(args.z0), args.omega,
                              drift=drift, rho=args.rho)
    h = args.dt if args.dt is not None else schedule.default_step()
    traj = integrate(schedule, args.z0, args.T, h)
    out = _out_dir(args)
    _write_text(out / "trajectory.csv", traj.to_csv_text())
    from .plots import save_trajectory_plot
    save_trajectory_plot(traj, out / "trajectory.png",
                         title=f"omega={args.omega:g}")
    print(f"wrote {out / 'trajectory.png'}")
    return 0


def _sweep_one(task) -> tuple[float, float]:
    # module level so ProcessPoolExecutor can pickle it
    rewrite_text, drift_text, z0, T, omega, rho, dt = task
    result = RewriteResult.from_json(
        _parse_json_text(rewrite_text, "rewrite"))
    drift = field_from_json(_parse_json_text(drift_text, "drift")) \
        if drift_text else None
    pairs = convergence_sweep(result.tree, z0, T, (omega,), drift=drift,
                              rho=rho, h_int=dt)
    return pairs[0]


def cmd_sweep(args) -> int:
    with open(args.rewrite, "r", encoding="utf-8") as fh:
        rewrite_text = fh.read()
    result = RewriteResult.from_json(
        _parse_json_text(rewrite_text, str(args.rewrite)))
    drift_text = None
    if args.drift:
        with open(args.drift, "r", encoding="utf-8") as fh:
            drift_text = fh.read()
    drift = field_from_json(_parse_json_text(drift_text, str(args.drift))) \
        if drift_text else None

    if args.jobs > 1:
        tasks = [(rewrite_text, drift_text, args.z0, args.T, w, args.rho,
                  args.dt) for w in args.omegas]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            pairs = tuple(pool.map(_sweep_one, tasks))
    else:
        pairs = convergence_sweep(result.tree, args.z0, args.T, args.omegas,
                                  drift=drift, rho=args.rho, h_int=args.dt)
    out = _out_dir(args)
    _write_text(out / "sweep.csv", sweep_to_csv_text(pairs))
    from .plots import save_sweep_plot
    save_sweep_plot(pairs, out / "sweep.png")
    print(f"wrote {out / 'sweep.png'}")
    return 0


# ---------------------------------------------------------------------------
# demo


def _run_table(path) -> dict:
    """Optional [run] table in a problem file; CLI flags override it."""
    if path is None:
        return {}
    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover - version dependent
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ParseError(f"bad problem file: {err}") from None
    run = data.get("run", {})
    if not isinstance(run, dict):
        raise MalformedProblem("[run] must be a table")
    unknown = set(run) - {"omega", "T", "dt", "rho", "window"}
    if unknown:
        raise MalformedProblem(f"unknown [run] keys {sorted(unknown)}")
    return run


def _pick(cli_value, toml_value, default):
    if cli_value is not None:
        return cli_value
    if toml_value is not None:
        return toml_value
    return default


def cmd_demo(args) -> int:
    prob = load_problem(args.problem) if args.problem else demo_problem()
    run_cfg = _run_table(args.problem)
    omega = float(_pick(args.omega, run_cfg.get("omega"), 400.0))
    T = float(_pick(args.T, run_cfg.get("T"), 40.0))
    dt = _pick(args.dt, run_cfg.get("dt"), None)
    rho = float(_pick(args.rho, run_cfg.get("rho"), 100.0))
    window = float(_pick(args.window, run_cfg.get("window"), 0.25))

    run = run_demo(prob, omega=omega, T=T, h_int=dt, rho=rho, window=window,
                   timing=args.timing)
    out = _out_dir(args)
    _write_text(out / "report.json", report_json_text(run.report))
    _write_text(out / "approx.csv", run.approx.to_csv_text())
    _write_text(out / "ideal.csv", run.ideal.to_csv_text())
    from .plots import save_comparison_plot, save_trajectory_plot
    save_comparison_plot(run.approx, run.ideal, out / "demo_primal.png",
                         n_components=prob.n, reference=run.x_star,
                         title=f"primal block, omega={omega:g}")
    print(f"wrote {out / 'demo_primal.png'}")
    save_trajectory_plot(run.approx, out / "demo_state.png",
                         title="oscillatory state")
    print(f"wrote {out / 'demo_state.png'}")
    sys.stdout.write(report_json_text(run.report))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bracketopt",
        description="Nested Lie-bracket synthesis on communication graphs")
    sub = p.add_subparsers(dest="subcommand", required=True)

    r = sub.add_parser("rewrite",
                       help="rewrite a target field as admissible brackets")
    r.add_argument("--graph", required=True, help="edge-list graph file")
    r.add_argument("--target", required=True,
                   help="vector field JSON with one nonzero component")
    r.add_argument("--strategy", choices=_STRATEGIES, default="auto")
    r.add_argument("--path", type=_int_list, default=None,
                   help="explicit agent path, e.g. 1,2,3")
    r.add_argument("--alpha", type=Fraction, default=Fraction(1, 2),
                   help="trig family frequency (exact fraction)")
    r.add_argument("--d", type=Fraction, default=Fraction(0),
                   help="trig family window center")
    r.add_argument("--degree", type=int, default=4,
                   help="series truncation order for --strategy taylor")
    r.add_argument("--halfwidth", type=float, default=0.5,
                   help="box half width the series residual is bounded on")
    r.add_argument("--mu", type=float, default=50.0,
                   help="tracking gain for --strategy estimator")
    r.add_argument("--out", default=None,
                   help="write JSON here instead of stdout")
    r.set_defaults(func=cmd_rewrite)

    v = sub.add_parser("verify",
                       help="check a rewrite JSON against its target")
    v.add_argument("--rewrite", required=True)
    v.add_argument("--samples", type=int, default=32)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-6)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate",
                       help="integrate the oscillatory system of a rewrite")
    s.add_argument("--rewrite", required=True)
    s.add_argument("--z0", type=_float_list, required=True)
    s.add_argument("--omega", type=float, required=True)
    s.add_argument("--T", type=float, default=2.0)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--rho", type=float, default=100.0)
    s.add_argument("--drift", default=None,
                   help="unmodulated field JSON added to the dynamics")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep",
                       help="sup-error vs omega against the bracket flow")
    w.add_argument("--rewrite", required=True)
    w.add_argument("--z0", type=_float_list, required=True)
    w.add_argument("--omegas", type=_float_list, default=(50.0, 200.0, 800.0))
    w.add_argument("--T", type=float, default=2.0)
    w.add_argument("--dt", type=float, default=None)
    w.add_argument("--rho", type=float, default=100.0)
    w.add_argument("--drift", default=None)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", default=".")
    w.set_defaults(func=cmd_sweep)

    d = sub.add_parser("demo",
                       help="distributed saddle-point optimization run")
    d.add_argument("--problem", default=None,
                   help="problem TOML; omitted runs the built-in fixture")
    d.add_argument("--omega", type=float, default=None)
    d.add_argument("--T", type=float, default=None)
    d.add_argument("--dt", type=float, default=None)
    d.add_argument("--rho", type=float, default=None)
    d.add_argument("--window", type=float, default=None,
                   help="trailing fraction averaged for x_bar")
    d.add_argument("--timing", action="store_true",
                   help="stamp wall time into the report (not reproducible)")
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _EXIT_PARSE as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _EXIT_SYNTH as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except BracketOptError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

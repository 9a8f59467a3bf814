"""Acceptance gate.

One test per criterion.  Each prints a single `ACCEPT[n] PASS/FAIL` line
with the measured figures (written through the capture so it lands in
the terminal), then asserts.  Tolerances and time budgets are pinned
here; the module is self-contained so every criterion can be rerun
standalone.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from bracketopt import expr as ex
from bracketopt.approx import convergence_sweep
from bracketopt.cli import main as cli_main
from bracketopt.distopt import demo_problem, run_demo, saddle_rhs, \
    solve_kkt_oracle
from bracketopt.expr import Const, cos_, exp_, mul, pow_, sin_, var
from bracketopt.graph import AgentIndexMap, CommGraph, example_fan_graph
from bracketopt.rewrite import (
    PathChain,
    ProductTarget,
    SeparableTarget,
    chain_bracket_formula,
    check_cancellation_constraint,
    nested_tree,
    synth_product,
    synth_simple,
    synth_taylor,
    synth_trig,
    synthesize,
    verify_identity,
)
from bracketopt.vfield import (
    Bracket,
    Leaf,
    SeparableField,
    VectorField,
    evaluate_tree,
    lie_bracket,
    lie_bracket_numeric,
    tree_admissible,
    tree_leaves,
)

FAN = example_fan_graph()
M5 = AgentIndexMap.identity(5)


def announce(capsys, n, ok, detail):
    line = f"ACCEPT[{n}] {'PASS' if ok else 'FAIL'}: {detail}"
    with capsys.disabled():
        print(f"\n{line}")
    assert ok, line


# local generators so the gate has no dependency on the unit-test modules


def line_graph(r):
    return CommGraph(r, frozenset((k, k + 1) for k in range(1, r)))


def cycle_graph(n):
    return CommGraph(n, frozenset({(k, k % n + 1) for k in range(1, n + 1)}))


def hub_graph(n):
    return CommGraph(n, frozenset((1, k) for k in range(2, n + 1)))


def make_chain(funcs):
    r = len(funcs) + 1
    links = tuple(SeparableField(k + 1, k + 2, f)
                  for k, f in enumerate(funcs))
    return PathChain(r, tuple(range(1, r + 1)), tuple(range(1, r + 1)),
                     links)


def links_of(tree):
    # right-nesting stores the path links in reverse
    return [leaf.field for leaf in reversed(tree_leaves(tree))]


def random_link_scalar(rng, own, foreign):
    """C^1 scalar in (z_own, z_foreign): polynomials of degree <= 3, sin,
    cos, and a slow exp."""
    def atom(v):
        kind = int(rng.integers(0, 4))
        zv = var(v)
        if kind == 0:
            deg = int(rng.integers(1, 4))
            c = Const(Fraction(int(rng.integers(1, 4)),
                               int(rng.integers(1, 3))))
            return mul(c, pow_(zv, deg))
        if kind == 1:
            return sin_(zv)
        if kind == 2:
            return cos_(zv)
        return exp_(mul(Const(Fraction(1, 2)), zv))

    parts = [atom(foreign)]
    if rng.random() < 0.7:
        parts.append(atom(own))
    e = mul(*parts)
    if rng.random() < 0.3:
        e = ex.add(e, atom(foreign))
    return e


def random_poly_field(rng, dim, n_comps=3, max_deg=3):
    comps = {}
    for idx in rng.choice(np.arange(1, dim + 1), size=n_comps,
                          replace=False):
        terms = []
        for _ in range(int(rng.integers(1, 4))):
            factors = [Const(Fraction(int(rng.integers(-3, 4))))]
            for _ in range(int(rng.integers(0, max_deg + 1))):
                factors.append(var(int(rng.integers(1, dim + 1))))
            terms.append(mul(*factors))
        comps[int(idx)] = ex.add(*terms)
    return VectorField.from_map(dim, comps)


def rebuilt_chain(res, r):
    return PathChain(r, tuple(range(1, r + 1)), tuple(range(1, r + 1)),
                     tuple(links_of(res.tree)), res.validity)


# ---------------------------------------------------------------------------


def test_criterion_1_chain_identities(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        r = int(rng.integers(2, 6))
        funcs = [random_link_scalar(rng, k, k + 1) for k in range(1, r)]
        chain = make_chain(funcs)
        tree = nested_tree(chain, line_graph(r), AgentIndexMap.identity(r))
        assert tree_admissible(tree)
        rhs = chain_bracket_formula(chain)
        for p in rng.uniform(-1, 1, size=(32, r)):
            a = evaluate_tree(tree, p, r)
            b = rhs(p)
            worst = max(worst,
                        float(np.max(np.abs(a - b) / (1 + np.abs(b)))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 30.0
    announce(capsys, 1, ok,
             f"50 nested chains vs closed form, worst rel err "
             f"{worst:.3e} (tol 1e-06), {dt:.1f}s (limit 30s)")


def test_criterion_2_constraint_family_syntheses(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    checks = 0
    for trig in (False, True):
        for _ in range(20):
            r = int(rng.integers(2, 6))
            g = line_graph(r)
            m = AgentIndexMap.identity(r)
            st = SeparableTarget(1, random_link_scalar(rng, 1, 1),
                                 random_link_scalar(rng, r, r))
            path = tuple(range(1, r + 1))
            if trig:
                res = synth_trig(g, m, st, path, alpha=Fraction(1, 2), d=0)
            else:
                res = synth_simple(g, m, st, path)
            assert tree_admissible(res.tree)
            ok_id, err = verify_identity(res, n_points=32, tol=1e-6)
            assert ok_id, (err, res.strategy)
            worst = max(worst, err)
            ok_c, witness = check_cancellation_constraint(
                rebuilt_chain(res, r))
            assert ok_c, witness
            checks += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and checks == 40 and dt < 20.0
    announce(capsys, 2, ok,
             f"20 simple + 20 trig syntheses, identities and cancellation "
             f"checks pass, worst rel err {worst:.3e} (tol 1e-06), "
             f"{dt:.1f}s (limit 20s)")


def test_criterion_3_product_syntheses(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(20):
        nf = int(rng.integers(2, 5))
        g = hub_graph(5)
        m = AgentIndexMap.identity(5)
        vars_ = sorted(int(v) for v in rng.choice(
            np.arange(2, 6), size=nf, replace=False))
        factors = tuple((v, random_link_scalar(rng, v, v)) for v in vars_)
        res = synth_product(g, m, ProductTarget(1, var(1), factors))
        assert tree_admissible(res.tree)
        ok_id, err = verify_identity(res, tol=1e-6)
        assert ok_id, (err, nf)
        worst = max(worst, err)
    # the worked two-branch fan instance, checked against its closed form
    pt = ProductTarget(1, ex.ONE, ((3, sin_(var(3))), (5, cos_(var(5)))))
    res = synth_product(FAN, M5, pt)
    got = res.realized_field()([1.0, 2.0, 3.0, 4.0, 5.0])[0]
    exact = math.sin(3) * math.cos(5)
    fan_ok = abs(got - exact) <= 1e-12 * (1 + abs(exact))
    ok_id, err = verify_identity(res, tol=1e-6)
    worst = max(worst, err)
    dt = time.perf_counter() - t0
    ok = fan_ok and ok_id and worst <= 1e-6 and dt < 20.0
    announce(capsys, 3, ok,
             f"20 random products (2..4 factors) + fan instance "
             f"({got:.7f} vs {exact:.7f}), worst rel err {worst:.3e} "
             f"(tol 1e-06), {dt:.1f}s (limit 20s)")


def test_criterion_4_bracket_algebra(capsys):
    rng = np.random.default_rng(404)
    anti_exact = True
    jacobi_worst = 0.0
    fd_worst = 0.0
    for _ in range(20):
        f = random_poly_field(rng, 5)
        g = random_poly_field(rng, 5)
        h = random_poly_field(rng, 5, n_comps=2)
        if not lie_bracket(f, g).plus(lie_bracket(g, f)).is_zero:
            anti_exact = False
        total = (lie_bracket(f, lie_bracket(g, h))
                 .plus(lie_bracket(g, lie_bracket(h, f)))
                 .plus(lie_bracket(h, lie_bracket(f, g))))
        sym = lie_bracket(f, g)
        for _ in range(3):
            p = rng.uniform(-1, 1, size=5)
            jacobi_worst = max(jacobi_worst, float(np.max(np.abs(total(p)))))
            a = sym(p)
            b = lie_bracket_numeric(f, g, p)
            fd_worst = max(fd_worst,
                           float(np.max(np.abs(a - b) / (1 + np.abs(a)))))
    ok = anti_exact and jacobi_worst <= 1e-6 and fd_worst <= 1e-4
    announce(capsys, 4, ok,
             f"antisymmetry exact={anti_exact}, Jacobi worst "
             f"{jacobi_worst:.3e} (tol 1e-06), FD agreement worst "
             f"{fd_worst:.3e} (tol 1e-04), 20 random field sets in R^5")


def test_criterion_5_averaging_convergence(capsys):
    t0 = time.perf_counter()
    omegas = (50.0, 200.0, 800.0)
    canonical = Bracket(Leaf(SeparableField(1, 2, ex.ONE), True),
                        Leaf(SeparableField(2, 1, var(1)), True))
    fan_pair = synthesize(FAN, M5, 1, sin_(var(3))).tree
    runs = {
        "canonical": convergence_sweep(canonical, (0.2, -0.1), 2.0, omegas),
        "fan": convergence_sweep(fan_pair, (0.0, 0.2, 0.9, -0.4, 0.5),
                                 2.0, omegas),
    }
    details = []
    ok = True
    for name, pairs in runs.items():
        errs = [e for _, e in pairs]
        decreasing = errs[0] > errs[1] > errs[2]
        halved = errs[2] <= 0.5 * errs[0]
        ok = ok and decreasing and halved
        details.append(f"{name} errs {errs[0]:.3g}/{errs[1]:.3g}/"
                       f"{errs[2]:.3g} ratio {errs[2] / errs[0]:.2f}")
    dt = time.perf_counter() - t0
    ok = ok and dt < 120.0
    announce(capsys, 5, ok,
             f"{'; '.join(details)} (need strict decrease and ratio "
             f"<= 0.5), {dt:.1f}s (limit 120s)")


def test_criterion_6_distributed_demo(capsys):
    t0 = time.perf_counter()
    prob = demo_problem()
    x, nu, lam = solve_kkt_oracle(prob)
    z_star = np.concatenate([x, nu, lam])
    kkt_residual = float(np.max(np.abs(saddle_rhs(prob)(z_star))))
    run = run_demo(prob, omega=400.0, T=40.0)
    tol = 0.05 * (1 + float(np.linalg.norm(x)))
    err = run.report["error"]
    ideal_err = float(np.linalg.norm(run.ideal.final_state[:3] - x))
    dt = time.perf_counter() - t0
    ok = (kkt_residual <= 1e-9 and err <= tol and ideal_err <= 1e-3
          and dt < 180.0)
    announce(capsys, 6, ok,
             f"window avg error {err:.4f} (tol {tol:.4f}), ideal flow "
             f"error {ideal_err:.2e} (tol 1e-03), KKT residual "
             f"{kkt_residual:.1e} (tol 1e-09), {dt:.1f}s (limit 180s)")


def test_criterion_7_series_rewriting(capsys):
    g = cycle_graph(3)
    m = AgentIndexMap.identity(3)
    res = synth_taylor(g, m, 1, exp_(var(3)), {3: Fraction(0)}, degree=4,
                       box_halfwidth=0.5)
    exp_ok = res.residual is not None and 0.0 < res.residual <= 5e-4
    sampled = 0.0
    realized = res.realized_field()
    for z3 in np.linspace(-0.5, 0.5, 11):
        p = [0.3, 0.2, float(z3)]
        a = res.target(p)[0]
        sampled = max(sampled, abs(a - realized(p)[0]) / (1 + abs(a)))
    poly = synth_taylor(g, m, 1,
                        ex.add(mul(var(2), var(3)), pow_(var(3), 2)),
                        {2: Fraction(0), 3: Fraction(0)}, degree=2)
    poly_ok = poly.residual == 0.0
    ok = exp_ok and sampled <= 5e-4 and poly_ok
    announce(capsys, 7, ok,
             f"exp(z3) degree-4 residual {res.residual:.2e}, sampled "
             f"{sampled:.2e} (tol 5e-04); polynomial residual "
             f"{poly.residual!r} (must be exactly 0.0)")


def test_criterion_8_bounded_family_tradeoff(capsys):
    alpha = Fraction(1, 2)
    g5 = line_graph(5)
    st = SeparableTarget(1, var(1), sin_(var(5)))
    res = synth_trig(g5, AgentIndexMap.identity(5), st, (1, 2, 3, 4, 5),
                     alpha=alpha, d=0)
    links = links_of(res.tree)
    edge = math.pi / (2 * float(alpha))

    bounded_ok = True
    expanding_ok = True
    for idx in (1, 3):  # links 2 and 4 carry the bounded cos local
        f1 = links[idx].factor_local
        for w in np.linspace(-edge * 0.999, edge * 0.999, 101):
            if abs(ex.evaluate(f1, {links[idx].target: float(w)})) \
                    > 1.0 + 1e-12:
                bounded_ok = False
        prev = links[idx - 1]
        dfor = ex.differentiate(prev.factor_foreign, prev.source)
        for w in np.linspace(-edge * 0.98, edge * 0.98, 64):
            if abs(ex.evaluate(dfor, {prev.source: float(w)})) \
                    < 1.0 - 1e-12:
                expanding_ok = False

    res4 = synth_trig(line_graph(4), AgentIndexMap.identity(4),
                      SeparableTarget(1, var(1), sin_(var(4))),
                      (1, 2, 3, 4), alpha=alpha, d=0)
    sec_link = links_of(res4.tree)[2]
    probe = edge - 0.15
    assert 0.15 < 0.1 * edge
    sec_val = abs(ex.evaluate(sec_link.factor_local,
                              {sec_link.target: probe}))
    sec_ok = sec_val >= 10.0
    ok = bounded_ok and expanding_ok and sec_ok
    announce(capsys, 8, ok,
             f"even links |f1| <= 1 on window: {bounded_ok}; paired "
             f"|df2/dz| >= 1: {expanding_ok}; sec magnitude {sec_val:.1f} "
             f">= 10 within 0.1 window-width of the edge: {sec_ok}")


def test_criterion_9_cli_determinism(capsys, tmp_path):
    graph = tmp_path / "fan.txt"
    graph.write_text("n=5\n1 2\n2 3\n1 4\n4 5\n")
    target = tmp_path / "target.json"
    target.write_text(json.dumps(
        {"dim": 5, "components": {"1": "(* (cos (var 3)) (sin (var 5)))"}}))
    out = tmp_path / "demo"
    files = ("report.json", "approx.csv", "ideal.csv", "demo_primal.png",
             "demo_state.png")

    def one_round():
        rc = cli_main(["rewrite", "--graph", str(graph), "--target",
                       str(target), "--out", str(tmp_path / "rw.json")])
        assert rc == 0
        rc = cli_main(["verify", "--rewrite", str(tmp_path / "rw.json"),
                       "--seed", "5"])
        assert rc == 0
        verify_out = capsys.readouterr().out
        rc = cli_main(["demo", "--omega", "50", "--T", "2", "--out",
                       str(out)])
        assert rc == 0
        capsys.readouterr()
        blobs = {name: (out / name).read_bytes() for name in files}
        blobs["rw.json"] = (tmp_path / "rw.json").read_bytes()
        blobs["verify.stdout"] = verify_out.encode()
        return blobs

    first = one_round()
    second = one_round()
    diffs = [name for name in first if first[name] != second[name]]
    ok = not diffs
    announce(capsys, 9, ok,
             f"two identical runs of rewrite/verify/demo: "
             f"{len(first)} outputs byte-identical"
             + (f"; DIFFER: {diffs}" if diffs else ""))

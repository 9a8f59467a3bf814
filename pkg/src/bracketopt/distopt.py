"""Distributed saddle-point optimization over a communication graph.

Pipeline: a constrained program distributed over agents becomes a
Lagrangian L(x, nu, lam) = F(x) + nu^T(Ax - b) + lam^T c(x); the flow

    x'   = -grad_x L
    nu'  = +grad_nu L
    lam' = diag(lam) * grad_lam L

is emitted term by term so each e_i*psi piece can be checked against the
communication graph, the non-admissible pieces get rewritten into
admissible bracket trees, and the whole thing feeds the oscillatory
integrator.  The multiplicative lambda dynamics keep lam >= 0 invariant
from a positive start and make every lambda term a lam_k * product shape
the rewrite layer accepts.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence, Union

import numpy as np

from . import expr as ex
from .approx import OscSchedule, Trajectory, build_schedule, integrate
from .errors import (MalformedProblem, NoKKTPoint, NoPath, ParseError,
                     Unrewritable)
from .expr import (Const, Expr, Product, Sum, add, differentiate, evaluate,
                   free_vars, mul, parse_sexp, simplify, sub, to_sexp, var)
from .graph import AgentIndexMap, CommGraph, is_admissible
from .rewrite import RewriteResult, pick_path, synthesize
from .vfield import VectorField

ADMISSIBLE = "admissible"
REWRITABLE = "rewritable"
UNREWRITABLE = "unrewritable"

_KKT_TOL = 1e-9


# ---------------------------------------------------------------------------
# problem description


def _univariate_factors(e: Expr) -> bool:
    """True when e is a product whose every factor reads at most one
    variable.  Such terms keep product shape under differentiation, which
    is what the rewrite layer needs."""
    factors = e.factors if isinstance(e, Product) else (e,)
    return all(len(free_vars(f)) <= 1 for f in factors)


def _sum_terms(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Sum):
        return e.terms
    return (e,)


@dataclass(frozen=True)
class EqualityConstraint:
    """One row a.x = rhs of the equality block, owned by one agent."""

    coeffs: tuple
    rhs: Union[int, float, Fraction]
    owner: int

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if not all(isinstance(c, (int, float, Fraction)) and
                   math.isfinite(float(c)) for c in self.coeffs):
            raise MalformedProblem("equality coefficients must be finite")
        if not math.isfinite(float(self.rhs)):
            raise MalformedProblem("equality rhs must be finite")

    def residual_expr(self) -> Expr:
        """a.x - rhs over the decision variables."""
        parts = [mul(Const(c if isinstance(c, (int, Fraction)) else float(c)),
                     var(i))
                 for i, c in enumerate(self.coeffs, start=1) if c != 0]
        r = self.rhs if isinstance(self.rhs, (int, Fraction)) \
            else float(self.rhs)
        parts.append(mul(ex.MINUS_ONE, Const(r)))
        return add(*parts)


@dataclass(frozen=True)
class InequalityConstraint:
    """c(x) <= 0 with c a sum of products of univariate factors."""

    expr: Expr
    owner: int

    def __post_init__(self):
        object.__setattr__(self, "expr", simplify(self.expr))
        for t in _sum_terms(self.expr):
            if not _univariate_factors(t):
                raise MalformedProblem(
                    f"inequality term {to_sexp(t)} mixes variables "
                    "inside one factor")


@dataclass(frozen=True)
class SaddleProblem:
    """A constrained program distributed over graph.n agents.

    Agent i owns decision variable x_i (component i).  Multiplier
    components are appended into the owners' blocks by the index map, so
    a term reading its own multiplier is an own-block read.  convexity_eps
    adds eps*|x|^2 to the objective; the saddle flow of a merely convex F
    can stall or orbit, and the knob buys a strict Lyapunov slope.
    """

    graph: CommGraph
    objective_terms: tuple[Expr, ...]
    equalities: tuple[EqualityConstraint, ...] = ()
    inequalities: tuple[InequalityConstraint, ...] = ()
    convexity_eps: float = 0.0

    def __post_init__(self):
        n = self.graph.n
        object.__setattr__(self, "objective_terms",
                           tuple(simplify(t) for t in self.objective_terms))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        for t in self.objective_terms:
            if not _univariate_factors(t):
                raise MalformedProblem(
                    f"objective term {to_sexp(t)} mixes variables "
                    "inside one factor")
            if free_vars(t) and max(free_vars(t)) > n:
                raise MalformedProblem(
                    f"objective term {to_sexp(t)} reads beyond x_{n}")
        for eq in self.equalities:
            if len(eq.coeffs) != n:
                raise MalformedProblem(
                    f"equality row has {len(eq.coeffs)} coefficients, "
                    f"expected {n}")
            if not 1 <= eq.owner <= n:
                raise MalformedProblem(f"equality owner {eq.owner}")
        for iq in self.inequalities:
            if not 1 <= iq.owner <= n:
                raise MalformedProblem(f"inequality owner {iq.owner}")
            fv = free_vars(iq.expr)
            if fv and max(fv) > n:
                raise MalformedProblem("inequality reads beyond the "
                                       "decision variables")
        if self.convexity_eps < 0:
            raise MalformedProblem("convexity_eps must be >= 0")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def p(self) -> int:
        return len(self.equalities)

    @property
    def q(self) -> int:
        return len(self.inequalities)

    @property
    def index_map(self) -> AgentIndexMap:
        eq = [0] * self.n
        iq = [0] * self.n
        for e in self.equalities:
            eq[e.owner - 1] += 1
        for c in self.inequalities:
            iq[c.owner - 1] += 1
        return AgentIndexMap(tuple(eq), tuple(iq))

    @property
    def total_dim(self) -> int:
        return self.n + self.p + self.q

    def nu_components(self) -> tuple[int, ...]:
        """Multiplier component of each equality, in declaration order."""
        m = self.index_map
        cursor = {a: list(m.eq_block(a)) for a in range(1, self.n + 1)}
        return tuple(cursor[e.owner].pop(0) for e in self.equalities)

    def lambda_components(self) -> tuple[int, ...]:
        m = self.index_map
        cursor = {a: list(m.ineq_block(a)) for a in range(1, self.n + 1)}
        return tuple(cursor[c.owner].pop(0) for c in self.inequalities)

    def augmented_objective_terms(self) -> tuple[Expr, ...]:
        terms = list(self.objective_terms)
        if self.convexity_eps:
            e = Const(float(self.convexity_eps))
            terms.extend(mul(e, ex.pow_(var(i), 2))
                         for i in range(1, self.n + 1))
        return tuple(terms)

    def lagrangian_expr(self) -> Expr:
        parts = list(self.augmented_objective_terms())
        for eq, nu in zip(self.equalities, self.nu_components()):
            parts.append(mul(var(nu), eq.residual_expr()))
        for iq, lam in zip(self.inequalities, self.lambda_components()):
            parts.append(mul(var(lam), iq.expr))
        return add(*parts)

    def convexity_sampled(self, halfwidth: float = 1.0,
                          n_points: int = 16) -> bool:
        """Advisory PSD check of the objective Hessian on a box.

        Samples only; a True result is evidence, not proof.
        """
        f = add(*self.augmented_objective_terms())
        hess = [[differentiate(differentiate(f, i), j)
                 for j in range(1, self.n + 1)]
                for i in range(1, self.n + 1)]
        rng = np.random.default_rng(0xC0)
        for _ in range(n_points):
            x = rng.uniform(-halfwidth, halfwidth, size=self.n)
            H = np.array([[evaluate(hess[i][j], x)
                           for j in range(self.n)]
                          for i in range(self.n)])
            if np.linalg.eigvalsh(H).min() < -1e-8:
                return False
        return True


# ---------------------------------------------------------------------------
# saddle dynamics as a term list


@dataclass(frozen=True)
class RhsTerm:
    """One e_component * expr piece of the saddle RHS."""

    component: int
    expr: Expr


def saddle_terms(prob: SaddleProblem) -> tuple[RhsTerm, ...]:
    """The flow decomposed so every term can be classified on its own.

    Derivatives are taken term by term, never on the summed Lagrangian,
    so product structure survives and each emitted expr factors per
    variable.
    """
    nus = prob.nu_components()
    lams = prob.lambda_components()
    out: list[RhsTerm] = []

    def emit(comp: int, e: Expr):
        s = simplify(e)
        if s != ex.ZERO:
            out.append(RhsTerm(comp, s))

    obj = prob.augmented_objective_terms()
    ineq_terms = [_sum_terms(iq.expr) for iq in prob.inequalities]

    for i in range(1, prob.n + 1):
        for t in obj:
            if i in free_vars(t):
                emit(i, mul(ex.MINUS_ONE, differentiate(t, i)))
        for eq, nu in zip(prob.equalities, nus):
            c = eq.coeffs[i - 1]
            if c != 0:
                emit(i, mul(Const(-1 * c if isinstance(c, (int, Fraction))
                                  else -float(c)), var(nu)))
        for terms, lam in zip(ineq_terms, lams):
            for t in terms:
                if i in free_vars(t):
                    emit(i, mul(ex.MINUS_ONE, var(lam), differentiate(t, i)))

    for eq, nu in zip(prob.equalities, nus):
        for i, c in enumerate(eq.coeffs, start=1):
            if c != 0:
                emit(nu, mul(Const(c if isinstance(c, (int, Fraction))
                                   else float(c)), var(i)))
        if eq.rhs != 0:
            emit(nu, mul(ex.MINUS_ONE,
                         Const(eq.rhs if isinstance(eq.rhs, (int, Fraction))
                               else float(eq.rhs))))

    for terms, lam in zip(ineq_terms, lams):
        for t in terms:
            emit(lam, mul(var(lam), t))

    return tuple(out)


def saddle_rhs(prob: SaddleProblem) -> VectorField:
    comps: dict[int, Expr] = {}
    for t in saddle_terms(prob):
        comps[t.component] = add(comps[t.component], t.expr) \
            if t.component in comps else t.expr
    return VectorField.from_map(prob.total_dim, comps)


# ---------------------------------------------------------------------------
# admissibility classification


@dataclass(frozen=True)
class ClassifiedTerm:
    term: RhsTerm
    status: str
    paths: tuple[tuple[int, ...], ...] = ()
    missing: tuple[int, ...] = ()  # foreign agents with no path


@dataclass(frozen=True)
class TermClassification:
    entries: tuple[ClassifiedTerm, ...]

    def with_status(self, status: str) -> tuple[ClassifiedTerm, ...]:
        return tuple(e for e in self.entries if e.status == status)

    @property
    def admissible(self) -> tuple[ClassifiedTerm, ...]:
        return self.with_status(ADMISSIBLE)

    @property
    def rewritable(self) -> tuple[ClassifiedTerm, ...]:
        return self.with_status(REWRITABLE)

    @property
    def unrewritable(self) -> tuple[ClassifiedTerm, ...]:
        return self.with_status(UNREWRITABLE)


def classify_terms(terms: Sequence[RhsTerm], g: CommGraph,
                   m: AgentIndexMap) -> TermClassification:
    """Tag each term admissible, rewritable with witnessing paths, or
    unrewritable.

    A term is admissible when every variable it reads passes the graph
    Laplacian test against the writing component (own-block reads need
    the writer to have an out-edge).  Otherwise a path from the writer's
    agent to every foreign agent makes it rewritable; any missing path
    makes it unrewritable.
    """
    entries = []
    for t in terms:
        writer = m.agent_of(t.component)
        fv = sorted(free_vars(t.expr))
        ok = bool(g.out_neighbors(writer)) and \
            all(is_admissible(g, m, v, t.component) for v in fv)
        if ok:
            entries.append(ClassifiedTerm(t, ADMISSIBLE))
            continue
        foreign = sorted({m.agent_of(v) for v in fv} - {writer})
        paths, missing = [], []
        for a in foreign:
            try:
                paths.append(pick_path(g, writer, a))
            except NoPath:
                missing.append(a)
        if missing or not g.out_neighbors(writer):
            entries.append(ClassifiedTerm(t, UNREWRITABLE, tuple(paths),
                                          tuple(missing)))
        else:
            entries.append(ClassifiedTerm(t, REWRITABLE, tuple(paths)))
    return TermClassification(tuple(entries))


def assemble_distributed_system(
        prob: SaddleProblem) -> tuple[VectorField, tuple[RewriteResult, ...]]:
    """Split the saddle RHS into an admissible drift field plus bracket
    trees for everything that crosses the graph illegally."""
    g, m = prob.graph, prob.index_map
    cls = classify_terms(saddle_terms(prob), g, m)
    bad = cls.unrewritable
    if bad:
        worst = bad[0]
        raise Unrewritable(
            f"term e_{worst.term.component} {to_sexp(worst.term.expr)} has "
            f"no path from agent {m.agent_of(worst.term.component)} to "
            f"agents {list(worst.missing)}")
    drift = VectorField.zero(prob.total_dim)
    for e in cls.admissible:
        drift = drift.plus(VectorField.single(prob.total_dim,
                                              e.term.component, e.term.expr))
    results = tuple(synthesize(g, m, e.term.component, e.term.expr)
                    for e in cls.rewritable)
    return drift, results


# ---------------------------------------------------------------------------
# independent KKT oracle


def _newton_solve(g_funcs, jac_funcs, unknowns, total_dim, y0,
                  max_iter=60) -> np.ndarray | None:
    """Damped Newton on the compiled square system; None when stuck."""
    y = np.array(y0, dtype=float)
    z = [0.0] * total_dim

    def residual(yv):
        for c, v in zip(unknowns, yv):
            z[c - 1] = v
        try:
            return np.array([f(z) for f in g_funcs])
        except (ValueError, OverflowError, ZeroDivisionError):
            return None

    gv = residual(y)
    if gv is None:
        return None
    for _ in range(max_iter):
        norm = np.max(np.abs(gv))
        if norm <= 1e-12:
            return y
        J = np.array([[f(z) for f in row] for row in jac_funcs])
        try:
            step = np.linalg.solve(J, gv)
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        while alpha >= 1e-4:
            cand = y - alpha * step
            gc = residual(cand)
            if gc is not None and np.max(np.abs(gc)) < norm:
                y, gv = cand, gc
                break
            alpha *= 0.5
        else:
            return None
    return y if np.max(np.abs(gv)) <= 1e-12 else None


def solve_kkt_oracle(prob: SaddleProblem, seed: int = 0,
                     n_starts: int = 8) -> tuple[np.ndarray, np.ndarray,
                                                 np.ndarray]:
    """Active-set enumeration with damped Newton, independent of the
    saddle flow.

    Subsets of the inequality constraints are tried smallest first; for
    each, the stationarity system with the inactive multipliers pinned to
    zero is solved and the candidate kept only if it satisfies the full
    KKT conditions to 1e-9.
    """
    if prob.total_dim > 10:
        raise ValueError("oracle is for desk-scale problems "
                         f"(n+p+q <= 10, got {prob.total_dim})")
    n, p, q = prob.n, prob.p, prob.q
    nus, lams = prob.nu_components(), prob.lambda_components()
    L = prob.lagrangian_expr()
    grad_x = [simplify(differentiate(L, i)) for i in range(1, n + 1)]
    eq_res = [simplify(eq.residual_expr()) for eq in prob.equalities]
    ineq_exprs = [iq.expr for iq in prob.inequalities]
    ineq_funcs = [ex.compile_scalar(c) for c in ineq_exprs]
    rng = np.random.default_rng(seed)
    starts_pool = rng.uniform(-1.5, 1.5, size=(max(0, n_starts - 1), 12))

    for size in range(q + 1):
        for S in combinations(range(q), size):
            inactive = {lams[k]: ex.ZERO for k in range(q) if k not in S}
            gs = [simplify(ex.substitute(e, inactive)) for e in grad_x]
            gs += eq_res
            gs += [ineq_exprs[k] for k in S]
            unknowns = list(range(1, n + 1)) + list(nus) + \
                [lams[k] for k in S]
            g_funcs = [ex.compile_scalar(e) for e in gs]
            jac_funcs = [[ex.compile_scalar(differentiate(e, c))
                          for c in unknowns] for e in gs]
            m = len(unknowns)
            starts = [np.zeros(m)] + [row[:m] for row in starts_pool]
            for y0 in starts:
                y = _newton_solve(g_funcs, jac_funcs, unknowns,
                                  prob.total_dim, y0)
                if y is None:
                    continue
                x = y[:n]
                nu = y[n:n + p]
                lam = np.zeros(q)
                for pos, k in enumerate(S):
                    lam[k] = y[n + p + pos]
                if any(v < -_KKT_TOL for v in lam):
                    continue
                cvals = [f(list(x) + [0.0] * (prob.total_dim - n))
                         for f in ineq_funcs]
                if any(c > _KKT_TOL for c in cvals):
                    continue
                if any(abs(lam[k] * cvals[k]) > _KKT_TOL for k in range(q)):
                    continue
                return x, nu, np.maximum(lam, 0.0)
    raise NoKKTPoint("no inequality subset yields a KKT-feasible point")


# ---------------------------------------------------------------------------
# demo driver


@dataclass(frozen=True)
class DemoRun:
    problem: SaddleProblem
    drift: VectorField
    results: tuple[RewriteResult, ...]
    schedule: OscSchedule
    approx: Trajectory
    ideal: Trajectory
    x_star: np.ndarray
    nu_star: np.ndarray
    lam_star: np.ndarray
    report: dict


def default_initial_state(prob: SaddleProblem) -> np.ndarray:
    """x = 0, nu = 0, lambda = 1: multipliers start interior so the
    multiplicative dynamics can move them both ways."""
    z0 = np.zeros(prob.total_dim)
    for c in prob.lambda_components():
        z0[c - 1] = 1.0
    return z0


def run_demo(prob: SaddleProblem, omega: float, T: float,
             h_int: float | None = None, rho: float = 100.0,
             z0: Sequence[float] | None = None,
             window: float = 0.25, timing: bool = False) -> DemoRun:
    """Integrate the approximating system and the ideal saddle flow,
    then score the averaged tail against the KKT oracle.

    runtime_s stays null unless timing is requested, so reports are
    byte-identical across runs.
    """
    t0 = time.perf_counter()
    drift, results = assemble_distributed_system(prob)
    trees = [t for r in results for t in r.trees]
    schedule = build_schedule(trees, prob.total_dim, omega,
                              drift=drift, rho=rho)
    if z0 is None:
        z0 = default_initial_state(prob)
    if h_int is None:
        h_int = schedule.default_step()
    approx = integrate(schedule, z0, T, h_int)

    ideal_field = drift
    for r in results:
        ideal_field = ideal_field.plus(r.realized_field())
    ideal = integrate(ideal_field, z0, T, T / 20000)

    x_star, nu_star, lam_star = solve_kkt_oracle(prob)
    x_bar = approx.window_mean(window)[:prob.n]
    error = float(np.linalg.norm(x_bar - x_star))
    report = {
        "x_star": [float(v) for v in x_star],
        "x_bar": [float(v) for v in x_bar],
        "error": error,
        "omega": float(omega),
        "runtime_s": round(time.perf_counter() - t0, 3) if timing else None,
    }
    return DemoRun(prob, drift, results, schedule, approx, ideal,
                   x_star, nu_star, lam_star, report)


def report_json_text(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def demo_problem() -> SaddleProblem:
    """Three agents on a bidirected line, quartic-coupled objective, one
    equality and one inequality.

    The line graph must be bidirected: the nu multiplier lives on agent 1
    and appears in agent 3's dynamics, so a path 3 -> 1 is needed, and
    the x2*x3 coupling needs both (2,3) and (3,2).  convexity_eps = 0.5
    because the bare objective's Hessian is singular along x2 = -x3 at
    x3 = 0 and the ideal saddle flow then crawls instead of converging.
    """
    g = CommGraph(3, frozenset({(1, 2), (2, 1), (2, 3), (3, 2)}))
    half = Const(Fraction(1, 2))
    terms = (
        mul(half, ex.pow_(sub(var(1), ex.ONE), 2)),
        mul(half, ex.pow_(var(2), 2)),
        mul(Const(Fraction(1, 4)), ex.pow_(var(3), 4)),
        mul(var(2), var(3)),
    )
    return SaddleProblem(
        graph=g,
        objective_terms=terms,
        equalities=(EqualityConstraint((1, 0, 1), 1, owner=1),),
        inequalities=(InequalityConstraint(
            add(var(2), Const(Fraction(-3, 10))), owner=2),),
        convexity_eps=0.5,
    )


# ---------------------------------------------------------------------------
# problem files


def parse_problem_toml(text: str) -> SaddleProblem:
    """TOML schema:

    [graph]            n, edges = [[a, b], ...]
    [objective]        terms = [sexp, ...], convexity_eps (optional)
    [[equality]]       coeffs, rhs, owner
    [[inequality]]     expr = sexp, owner
    """
    try:
        import tomllib  # py >= 3.11
    except ModuleNotFoundError:  # pragma: no cover - version dependent
        import tomli as tomllib
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ParseError(f"bad problem file: {err}") from err

    try:
        gsec = data["graph"]
        n = int(gsec["n"])
        edges = frozenset((int(a), int(b)) for a, b in gsec["edges"])
        osec = data["objective"]
        terms = tuple(parse_sexp(s) for s in osec["terms"])
        eps = float(osec.get("convexity_eps", 0.0))
        eqs = tuple(
            EqualityConstraint(tuple(row["coeffs"]), row["rhs"],
                               int(row["owner"]))
            for row in data.get("equality", ()))
        iqs = tuple(
            InequalityConstraint(parse_sexp(row["expr"]), int(row["owner"]))
            for row in data.get("inequality", ()))
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise MalformedProblem(f"problem file schema: {err}") from err
    return SaddleProblem(CommGraph(n, edges), terms, eqs, iqs, eps)


def load_problem(path) -> SaddleProblem:
    with open(path) as fh:
        return parse_problem_toml(fh.read())

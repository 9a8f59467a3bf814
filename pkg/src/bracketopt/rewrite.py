"""Synthesis of nested-bracket representations for fields an agent cannot
implement directly.

A target field writes one component but reads state blocks its owning
agent has no edge to.  The constructions here decompose such targets into
chains and products of admissible separable fields whose nested Lie
brackets reproduce the target exactly:

  * chain synthesis along a simple path, with the closed-form product
    formula for the collapsed bracket;
  * the cancellation-constraint family (a free choice of link factors
    whose cross terms multiply to one), instantiated with the trivial
    choice and with a bounded trigonometric choice valid on a window;
  * product synthesis for targets that factor across several foreign
    blocks, built by nesting chain results;
  * truncated power-series rewriting for analytic non-factorable targets
    on strongly connected graphs;
  * the estimator alternative, which augments the state with tracked
    copies of foreign variables instead of nesting brackets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import (
    FactorOnOwnNode,
    NoPath,
    NotClosedForm,
    NotSeparable,
    NotStronglyConnected,
    ParseError,
    PathTooShort,
    Unrewritable,
)
from .expr import (
    Expr,
    antiderivative,
    cos_,
    differentiate,
    evaluate,
    evaluate_exact,
    free_vars,
    log_,
    mul,
    sec_,
    simplify,
    sin_,
    substitute,
)
from .graph import AgentIndexMap, CommGraph, is_admissible, simple_paths
from .vfield import (
    BracketTree,
    Leaf,
    SeparableField,
    VectorField,
    field_from_json,
    field_to_json,
    left_nested,
    right_nested,
    tree_from_json,
    tree_to_field,
    tree_to_json,
)

_SAMPLE_SEED = 0x5eed
_WINDOW_MARGIN = 0.02  # stay off trig-window edges when sampling

Validity = tuple[tuple[int, tuple[float, float]], ...]


def _validity_dict(v: Validity) -> dict[int, tuple[float, float]]:
    return {c: iv for c, iv in v}


def merge_validity(*parts: Validity) -> Validity:
    """Intersect per-component windows; absent component means whole line."""
    merged: dict[int, tuple[float, float]] = {}
    for part in parts:
        for c, (lo, hi) in part:
            if c in merged:
                merged[c] = (max(merged[c][0], lo), min(merged[c][1], hi))
            else:
                merged[c] = (lo, hi)
    return tuple(sorted(merged.items()))


def sample_points(dim: int, n: int, validity: Validity = (),
                  default: tuple[float, float] = (-1.0, 1.0),
                  seed: int = _SAMPLE_SEED) -> np.ndarray:
    """Deterministic sample cloud respecting the validity windows."""
    rng = np.random.default_rng(seed)
    lo = np.full(dim, default[0])
    hi = np.full(dim, default[1])
    for c, (a, b) in validity:
        width = b - a
        lo[c - 1] = a + _WINDOW_MARGIN * width
        hi[c - 1] = b - _WINDOW_MARGIN * width
    return rng.uniform(lo, hi, size=(n, dim))


# ---------------------------------------------------------------------------
# path chains


@dataclass(frozen=True)
class PathChain:
    """A simple path of agents with one separable link field per hop.

    Link k writes the representative component of the k-th node using the
    block of the (k+1)-th, so the nested bracket of the links collapses to
    a single-component field by the chain formula.
    """

    dim: int
    path: tuple[int, ...]            # agent nodes i_1..i_r
    reps: tuple[int, ...]            # j_k, one component per node
    links: tuple[SeparableField, ...]
    validity: Validity = field(default=())

    def __post_init__(self):
        r = len(self.path)
        if r < 2:
            raise PathTooShort(f"chain needs at least two nodes, got {r}")
        if len(self.reps) != r:
            raise ValueError("one representative per path node")
        if len(self.links) != r - 1:
            raise ValueError("one link per path edge")
        if len(set(self.path)) != r:
            raise ValueError("path must be simple")
        for k, link in enumerate(self.links):
            if link.target != self.reps[k] or link.source != self.reps[k + 1]:
                raise ValueError(
                    f"link {k + 1} endpoints do not match representatives")

    @property
    def r(self) -> int:
        return len(self.path)


def chain_representatives(m: AgentIndexMap, path: Sequence[int],
                          first: int | None = None) -> tuple[int, ...]:
    """Default representative per node: its smallest owned component; the
    first node's representative may be pinned to the target component."""
    reps = []
    for k, agent in enumerate(path):
        if k == 0 and first is not None:
            if m.agent_of(first) != agent:
                raise ValueError(
                    f"component {first} not owned by path head {agent}")
            reps.append(first)
        else:
            reps.append(min(m.block(agent)))
    return tuple(reps)


def chain_admissible(chain: PathChain, g: CommGraph,
                     m: AgentIndexMap) -> bool:
    return all(link.admissible_on(g, m) for link in chain.links)


def nested_tree(chain: PathChain, g: CommGraph,
                m: AgentIndexMap) -> BracketTree:
    """Right-nested bracket tree of the chain's links; the outermost
    bracket's left argument is the last link."""
    leaves = [Leaf(link, link.admissible_on(g, m)) for link in chain.links]
    return right_nested(leaves)


def chain_bracket_formula(chain: PathChain) -> VectorField:
    """Closed form of the collapsed nested bracket.

    The bracket of the chain equals e_{j_1} times the last link's scalar
    times the product over earlier links of the partial of their scalar
    with respect to the next representative.  Two-node chains collapse to
    the bare link field.
    """
    factors = [chain.links[-1].func]
    for k in range(chain.r - 2):
        factors.append(differentiate(chain.links[k].func, chain.reps[k + 1]))
    return VectorField.single(chain.dim, chain.reps[0], mul(*factors))


def check_cancellation_constraint(chain: PathChain
                                  ) -> tuple[bool, tuple[int, float] | None]:
    """Verify the interior cross terms multiply to one.

    For every interior position k the product of link k's local factor and
    the derivative of link (k-1)'s foreign factor must be identically 1 in
    the shared variable.  Symbolic proof is attempted first; otherwise 64
    samples inside the validity window decide, tolerance 1e-10.  Returns
    (ok, witness) where a failing witness is (k, sample-value).
    """
    for link in chain.links:
        if not link.factored:
            raise ValueError("cancellation check needs factored links")
    windows = _validity_dict(chain.validity)
    for k in range(2, chain.r):  # interior positions, 1-based
        w = chain.reps[k - 1]
        local = chain.links[k - 1].factor_local
        prev_foreign = chain.links[k - 2].factor_foreign
        prod = simplify(mul(local, differentiate(prev_foreign, w)))
        if prod == ex.ONE:
            continue
        lo, hi = windows.get(w, (-1.0, 1.0))
        width = hi - lo
        rng = np.random.default_rng(_SAMPLE_SEED + k)
        samples = rng.uniform(lo + _WINDOW_MARGIN * width,
                              hi - _WINDOW_MARGIN * width, size=64)
        for s in samples:
            val = evaluate(prod, {w: float(s)})
            if abs(val - 1.0) > 1e-10:
                return False, (k, float(s))
    return True, None


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class SeparableTarget:
    """e_component * local(own block) * foreign(one foreign block)."""

    component: int
    local: Expr
    foreign: Expr

    def __post_init__(self):
        object.__setattr__(self, "local", simplify(self.local))
        object.__setattr__(self, "foreign", simplify(self.foreign))

    def as_field(self, dim: int) -> VectorField:
        return VectorField.single(dim, self.component,
                                  mul(self.local, self.foreign))


@dataclass(frozen=True)
class ProductTarget:
    """e_component * own(own block) * product of per-foreign-block factors.

    factors maps a representative variable of each foreign block to the
    scalar factor reading that block.
    """

    component: int
    own: Expr
    factors: tuple[tuple[int, Expr], ...]


def separate_target(m: AgentIndexMap, j: int, e: Expr) -> SeparableTarget:
    """Split a scalar into own-block times one-foreign-block factors.

    Raises NotSeparable when the expression mixes blocks inside one factor
    or reads more than one foreign block.
    """
    e = simplify(e)
    own_block = set(m.block_of_component(j))
    foreign_agents = {m.agent_of(v) for v in free_vars(e) if v not in own_block}
    if len(foreign_agents) > 1:
        raise NotSeparable(
            f"component {j} target reads {len(foreign_agents)} foreign "
            f"blocks; product synthesis applies instead")
    factors = e.factors if isinstance(e, ex.Product) else (e,)
    local_parts: list[Expr] = []
    foreign_parts: list[Expr] = []
    for f in factors:
        fv = free_vars(f)
        if fv <= own_block:
            local_parts.append(f)
        elif not (fv & own_block):
            foreign_parts.append(f)
        else:
            raise NotSeparable(
                f"factor {ex.to_sexp(f)} mixes own and foreign variables")
    local = mul(*local_parts) if local_parts else ex.ONE
    foreign = mul(*foreign_parts) if foreign_parts else ex.ONE
    return SeparableTarget(j, local, foreign)


def factor_product_target(m: AgentIndexMap, j: int, e: Expr) -> ProductTarget:
    """Split a scalar into own-block times one factor per foreign block."""
    e = simplify(e)
    own_block = set(m.block_of_component(j))
    factors = e.factors if isinstance(e, ex.Product) else (e,)
    own_parts: list[Expr] = []
    buckets: dict[int, list[Expr]] = {}
    for f in factors:
        fv = free_vars(f)
        if fv <= own_block:
            own_parts.append(f)
            continue
        agents = {m.agent_of(v) for v in fv}
        if len(agents) > 1:
            raise NotSeparable(
                f"factor {ex.to_sexp(f)} spans several blocks")
        buckets.setdefault(agents.pop(), []).append(f)
    own = mul(*own_parts) if own_parts else ex.ONE
    pairs = []
    for agent in sorted(buckets):
        fac = mul(*buckets[agent])
        rep = min(free_vars(fac))
        pairs.append((rep, fac))
    return ProductTarget(j, own, tuple(pairs))


# ---------------------------------------------------------------------------
# rewrite results


@dataclass(frozen=True)
class RewriteResult:
    """A target field together with admissible bracket trees that sum to
    it on the validity domain."""

    target: VectorField
    trees: tuple[BracketTree, ...]
    validity: Validity
    strategy: str
    residual: float | None = None

    @property
    def tree(self) -> BracketTree:
        if len(self.trees) != 1:
            raise ValueError("result holds a sum of trees; use .trees")
        return self.trees[0]

    def realized_field(self) -> VectorField:
        out = VectorField.zero(self.target.dim)
        for t in self.trees:
            out = out.plus(tree_to_field(t, self.target.dim))
        return out

    def to_json(self) -> dict:
        obj: dict = {
            "strategy": self.strategy,
            "target": field_to_json(self.target),
            "validity": {str(c): [lo, hi] for c, (lo, hi) in self.validity},
        }
        if len(self.trees) == 1:
            obj["tree"] = tree_to_json(self.trees[0])
        else:
            obj["trees"] = [tree_to_json(t) for t in self.trees]
        if self.residual is not None:
            obj["residual"] = self.residual
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "RewriteResult":
        try:
            target = field_from_json(obj["target"])
            validity = tuple(sorted(
                (int(c), (float(iv[0]), float(iv[1])))
                for c, iv in obj["validity"].items()))
            if "tree" in obj:
                trees: tuple[BracketTree, ...] = (tree_from_json(obj["tree"]),)
            else:
                trees = tuple(tree_from_json(t) for t in obj["trees"])
            residual = obj.get("residual")
            return cls(target, trees, validity, str(obj["strategy"]),
                       None if residual is None else float(residual))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed rewrite object: {exc}") from None

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def verify_identity(result: RewriteResult, n_points: int = 32,
                    tol: float = 1e-6, seed: int = _SAMPLE_SEED
                    ) -> tuple[bool, float]:
    """Compare the realized field against the target on sampled points.

    Returns (ok, worst relative error).  Points respect the validity
    windows.  For truncated-series results the comparison tolerance must
    absorb the reported residual; callers add it explicitly.
    """
    realized = result.realized_field()
    pts = sample_points(result.target.dim, n_points, result.validity,
                        seed=seed)
    worst = 0.0
    for p in pts:
        a = result.target(p)
        b = realized(p)
        err = float(np.max(np.abs(a - b) / (1 + np.abs(a))))
        worst = max(worst, err)
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# path selection


def pick_path(g: CommGraph, frm: int, to: int) -> tuple[int, ...]:
    """Shortest simple path, ties broken lexicographically."""
    paths = simple_paths(g, frm, to)
    if not paths:
        raise NoPath(f"no directed path from agent {frm} to agent {to}")
    return paths[0]  # simple_paths sorts by (length, sequence)


def _check_path(g: CommGraph, path: Sequence[int]):
    for a, b in zip(path, path[1:]):
        if (a, b) not in g.edges:
            raise NoPath(f"({a},{b}) is not an edge of the graph")


# ---------------------------------------------------------------------------
# chain construction: trivial and trigonometric factor choices


def _build_chain(g: CommGraph, m: AgentIndexMap, target: SeparableTarget,
                 path: Sequence[int], reps: Sequence[int] | None,
                 interior_local, interior_foreign,
                 validity_window: tuple[float, float] | None
                 ) -> tuple[PathChain, Validity]:
    """Shared skeleton for the constraint-family chains.

    interior_local(w) and interior_foreign(w) give the factor choices as
    expressions in variable w; the first link keeps the target's local
    factor and the last link keeps the target's foreign factor.
    """
    path = tuple(path)
    r = len(path)
    if r < 2:
        raise PathTooShort(
            f"need a path with at least two nodes, got {len(path)}")
    _check_path(g, path)
    if m.agent_of(target.component) != path[0]:
        raise ValueError(
            f"path starts at agent {path[0]} but the target component "
            f"{target.component} belongs to agent "
            f"{m.agent_of(target.component)}")
    if reps is None:
        reps = chain_representatives(m, path, first=target.component)
    else:
        reps = tuple(reps)
        if reps[0] != target.component:
            raise ValueError("first representative must be the target "
                             "component")
    own_block = set(m.block(path[0]))
    if not free_vars(target.local) <= own_block:
        raise NotSeparable("local factor reads outside the writer's block")
    if not free_vars(target.foreign) <= set(m.block(path[-1])):
        raise NotSeparable("foreign factor reads outside the terminal block")

    links = []
    for k in range(1, r):  # link index, 1-based
        w_own = reps[k - 1]
        w_for = reps[k]
        local = target.local if k == 1 else interior_local(k, ex.Var(w_own))
        if k == r - 1:
            foreign = target.foreign
        else:
            foreign = interior_foreign(k, ex.Var(w_for))
        links.append(SeparableField(
            target=w_own, source=w_for, func=mul(local, foreign),
            factor_local=local, factor_foreign=foreign))

    validity: Validity = ()
    if validity_window is not None and r >= 3:
        validity = tuple((reps[k], validity_window) for k in range(1, r - 1))
    chain = PathChain(m.total_dim, path, tuple(reps), tuple(links), validity)
    return chain, validity


def synth_simple(g: CommGraph, m: AgentIndexMap, target: SeparableTarget,
                 path: Sequence[int], reps: Sequence[int] | None = None
                 ) -> RewriteResult:
    """Chain synthesis with the trivial factor choice: interior locals are
    1 and interior foreigns are the bare next variable, so the constraint
    holds identically and the identity is global."""
    chain, _ = _build_chain(
        g, m, target, path, reps,
        interior_local=lambda k, w: ex.ONE,
        interior_foreign=lambda k, w: w,
        validity_window=None)
    return RewriteResult(
        target=target.as_field(m.total_dim),
        trees=(nested_tree(chain, g, m),),
        validity=(),
        strategy="simple")


def synth_trig(g: CommGraph, m: AgentIndexMap, target: SeparableTarget,
               path: Sequence[int], alpha, d,
               reps: Sequence[int] | None = None) -> RewriteResult:
    """Chain synthesis with the bounded trigonometric factor family.

    Even links use local cos(alpha(w-d)) and foreign sin(alpha(w-d))/alpha;
    odd links use local sec and the antiderivative of sec.  Every interior
    local with even index is bounded by 1, the price being a finite
    validity window of width pi/|alpha| centered at d on each interior
    component (sec blows up at the edges).
    """
    a = ex.as_expr(alpha)
    if isinstance(a, ex.Const) and a.value == 0:
        raise ValueError("alpha must be nonzero")
    dd = ex.as_expr(d)
    alpha_f = float(a.value)
    d_f = float(dd.value)
    half = math.pi / (2 * abs(alpha_f))
    window = (d_f - half, d_f + half)

    def arg(w: Expr) -> Expr:
        return mul(a, ex.sub(w, dd))

    def local(k: int, w: Expr) -> Expr:
        return cos_(arg(w)) if k % 2 == 0 else sec_(arg(w))

    def foreign(k: int, w: Expr) -> Expr:
        if k % 2 == 0:
            return mul(ex.pow_(a, -1), sin_(arg(w)))
        # antiderivative of sec(alpha(w-d)): log(sec + tan)/alpha
        u = arg(w)
        return mul(ex.pow_(a, -1),
                   log_(ex.add(sec_(u), mul(sin_(u), sec_(u)))))

    chain, validity = _build_chain(
        g, m, target, path, reps,
        interior_local=local, interior_foreign=foreign,
        validity_window=window)
    ok, witness = check_cancellation_constraint(chain)
    if not ok:
        raise AssertionError(
            f"trig constraint failed at interior position {witness[0]}, "
            f"sample {witness[1]}")
    return RewriteResult(
        target=target.as_field(m.total_dim),
        trees=(nested_tree(chain, g, m),),
        validity=validity,
        strategy="trig")


# ---------------------------------------------------------------------------
# product synthesis


def synth_product(g: CommGraph, m: AgentIndexMap, target: ProductTarget,
                  paths: Mapping[int, Sequence[int]] | None = None
                  ) -> RewriteResult:
    """Rewrite e_i * own(z_i-block) * prod_k eta_k(foreign block k).

    Builds the staged fields: the first carries the antiderivative of the
    own factor, interior ones carry the bare own variable, the last
    carries only its foreign factor.  Their left-nested bracket collapses
    to the target; each staged field is itself expanded into an admissible
    chain, and bilinearity lets the chains' trees nest in place of the
    fields.
    """
    i = target.component
    nf = len(target.factors)
    if nf < 2:
        raise ValueError("product synthesis needs at least two foreign "
                         "factors; use the chain route")
    own_agent = m.agent_of(i)
    for v, fac in target.factors:
        if m.agent_of(v) == own_agent:
            raise FactorOnOwnNode(
                f"factor {ex.to_sexp(fac)} reads the writer's own block; "
                f"fold it into the own-block part")
    own_anti = antiderivative(target.own, i)  # NotClosedForm propagates

    sub_results = []
    validities = []
    for k, (v, fac) in enumerate(target.factors, start=1):
        if k == 1:
            local = own_anti
        elif k < nf:
            local = ex.Var(i)
        else:
            local = ex.ONE
        staged = SeparableTarget(i, local, fac)
        if paths is not None and v in paths:
            path = tuple(paths[v])
        else:
            path = pick_path(g, own_agent, m.agent_of(v))
        if len(path) == 1:
            raise FactorOnOwnNode(
                f"factor variable z_{v} lives on the writer's node")
        sub = synth_simple(g, m, staged, path)
        sub_results.append(sub)
        validities.append(sub.validity)

    tree = left_nested([r.tree for r in sub_results])
    target_field = VectorField.single(
        m.total_dim, i,
        mul(target.own, *[fac for _, fac in target.factors]))
    return RewriteResult(
        target=target_field,
        trees=(tree,),
        validity=merge_validity(*validities),
        strategy="product")


# ---------------------------------------------------------------------------
# truncated power-series synthesis


def _rational_box_points(vs: Sequence[int], center: Mapping[int, Fraction],
                         box: Mapping[int, tuple[float, float]],
                         n: int) -> list[dict[int, Fraction]]:
    """Deterministic rational sample points inside the box, so residual
    evaluation of polynomial data stays exact."""
    rng = np.random.default_rng(_SAMPLE_SEED)
    pts = []
    for _ in range(n):
        p = {}
        for v in vs:
            lo, hi = box[v]
            t = Fraction(int(rng.integers(1, 64)), 64)
            p[v] = Fraction(lo) + t * (Fraction(hi) - Fraction(lo))
        pts.append(p)
    return pts


def synth_taylor(g: CommGraph, m: AgentIndexMap, component: int, phi: Expr,
                 center: Mapping[int, Fraction], degree: int,
                 box_halfwidth: float = 0.5,
                 paths: Mapping[int, Sequence[int]] | None = None
                 ) -> RewriteResult:
    """Rewrite e_component * phi(z) as a sum of bracket trees, one per
    monomial of the truncated expansion of phi about center.

    Monomials reading only the writer's block become direct admissible
    fields; single-foreign-block monomials go through chain synthesis;
    the rest go through product synthesis.  Genuinely infinite series
    require strong connectivity; a polynomial target is a finite sum, so
    it only needs the individual paths to exist.  The reported residual
    is the largest truncation gap sampled on the box center +-
    box_halfwidth (exact zero for polynomials of degree <= the truncation
    order).
    """
    phi = simplify(phi)
    if not ex.is_polynomial(phi) and not _strongly_connected_cached(g):
        raise NotStronglyConnected(
            "series rewriting of a non-polynomial target requires a "
            "strongly connected graph")
    own_agent = m.agent_of(component)
    own_block = set(m.block(own_agent))
    raw = dict(center)
    center = {}
    for v in free_vars(phi):
        c = raw.get(v, Fraction(0))
        center[v] = c if isinstance(c, float) else Fraction(c)
    terms = ex.taylor_monomials(phi, center, degree)
    if not terms:
        terms = [(Fraction(0), ())]

    trees: list[BracketTree] = []
    validities = []
    rebuilt_parts = []
    for coeff, multi in terms:
        mono = ex.monomial_expr(multi, center)
        scalar = mul(ex.as_expr(coeff), mono)
        rebuilt_parts.append(scalar)
        fv = free_vars(scalar)
        foreign = sorted(v for v in fv if v not in own_block)
        foreign_agents = sorted({m.agent_of(v) for v in foreign})
        if not foreign_agents:
            sf = SeparableField(component, component, scalar,
                                factor_local=scalar, factor_foreign=ex.ONE)
            if not is_admissible(g, m, component, component):
                raise Unrewritable(
                    f"agent {own_agent} has no out-edge, so even its "
                    f"own-block terms are not implementable")
            trees.append(Leaf(sf, True))
        elif len(foreign_agents) == 1:
            st = separate_target(m, component, scalar)
            path = (tuple(paths[foreign_agents[0]])
                    if paths and foreign_agents[0] in paths
                    else pick_path(g, own_agent, foreign_agents[0]))
            sub = synth_simple(g, m, st, path)
            trees.append(sub.tree)
            validities.append(sub.validity)
        else:
            pt = factor_product_target(m, component, scalar)
            sub = synth_product(g, m, pt, paths)
            trees.append(sub.tree)
            validities.append(sub.validity)

    # truncation residual on the stated box, exact for rational data
    vs = sorted(free_vars(phi))
    box = {v: (float(center[v]) - box_halfwidth,
               float(center[v]) + box_halfwidth) for v in vs}
    rebuilt = ex.add(*rebuilt_parts) if rebuilt_parts else ex.ZERO
    gap = simplify(ex.sub(phi, rebuilt))
    if gap == ex.ZERO:
        residual = 0.0
    else:
        residual = 0.0
        for p in _rational_box_points(vs, center, box, 16):
            val = evaluate_exact(gap, p)
            residual = max(residual, abs(float(val)))

    return RewriteResult(
        target=VectorField.single(m.total_dim, component, phi),
        trees=tuple(trees),
        validity=merge_validity(*validities),
        strategy="taylor",
        residual=residual)


_SC_CACHE: dict[tuple[int, frozenset], bool] = {}


def _strongly_connected_cached(g: CommGraph) -> bool:
    key = (g.n, g.edges)
    if key not in _SC_CACHE:
        from .graph import is_strongly_connected
        _SC_CACHE[key] = is_strongly_connected(g)
    return _SC_CACHE[key]


# ---------------------------------------------------------------------------
# estimator alternative


@dataclass(frozen=True)
class EstimatorSystem:
    """State augmentation that tracks foreign variables instead of
    bracket-nesting the target.

    Each needed foreign variable v gets an estimate component xi owned by
    the writing agent, driven by xi' = -mu*xi + mu*(chain-realized copy of
    z_v).  The local field reads xi in place of z_v.  The injections are
    chain results, so all non-admissible parts reduce to the trivial
    constraint family.

    Note: substituting estimates changes the interconnected dynamics; any
    closed-loop use requires a separate stability validation.
    """

    base_map: AgentIndexMap
    augmented_map: AgentIndexMap
    component: int
    estimates: tuple[tuple[int, int], ...]     # (foreign var, xi component)
    local_field: SeparableField                # reads xi instead of z_v
    decay_fields: tuple[SeparableField, ...]   # -mu*xi parts
    injections: tuple[RewriteResult, ...]      # mu*z_v parts, bracket trees
    mu: float

    @property
    def augmented(self) -> bool:
        return bool(self.estimates)

    def estimator_field(self) -> VectorField:
        """The complete estimator dynamics as one field (decay plus
        realized injections) on the augmented space."""
        dim = self.augmented_map.total_dim
        out = VectorField.zero(dim)
        for f in self.decay_fields:
            out = out.plus(f.as_field(dim))
        for inj in self.injections:
            out = out.plus(inj.realized_field())
        return out


def synth_estimator(g: CommGraph, m: AgentIndexMap, component: int,
                    target: Expr, mu: float = 50.0) -> EstimatorSystem:
    """Augment the writer's state with tracked copies of the foreign
    variables the target reads.  mu sets the tracking bandwidth; the
    steady tracking error for a drifting foreign variable scales like its
    slew rate divided by mu."""
    if mu <= 0:
        raise ValueError("estimator gain must be positive")
    target = simplify(target)
    own_agent = m.agent_of(component)
    own_block = set(m.block(own_agent))
    foreign = sorted(v for v in free_vars(target) if v not in own_block)

    if not foreign:
        sf = SeparableField(component, component, target)
        return EstimatorSystem(
            base_map=m, augmented_map=m, component=component, estimates=(),
            local_field=sf, decay_fields=(), injections=(), mu=mu)

    extras = [0] * m.n_agents
    extras[own_agent - 1] = len(foreign)
    m2 = m.with_extras(extras)
    xi_block = m2.extra_block(own_agent)[-len(foreign):]
    pairs = tuple(zip(foreign, xi_block))

    local = substitute(target, {v: ex.Var(xi) for v, xi in pairs})
    local_field = SeparableField(component, component, local)

    mu_e = ex.as_expr(mu)
    decay = []
    injections = []
    for v, xi in pairs:
        decay.append(SeparableField(
            xi, xi, mul(ex.MINUS_ONE, mu_e, ex.Var(xi))))
        path = pick_path(g, own_agent, m.agent_of(v))  # NoPath propagates
        st = SeparableTarget(xi, mu_e, ex.Var(v))
        injections.append(synth_simple(g, m2, st, path))
    return EstimatorSystem(
        base_map=m, augmented_map=m2, component=component, estimates=pairs,
        local_field=local_field, decay_fields=tuple(decay),
        injections=tuple(injections), mu=mu)


# ---------------------------------------------------------------------------
# dispatcher


def synthesize(g: CommGraph, m: AgentIndexMap, component: int, target: Expr,
               strategy: str = "auto", path: Sequence[int] | None = None,
               alpha=Fraction(1, 2), d=0, center=None, degree: int = 4,
               box_halfwidth: float = 0.5) -> RewriteResult:
    """Route a scalar target to the fitting construction.

    auto tries: direct admissible field, then chain synthesis for one
    foreign block, then product synthesis for several.  Non-factorable
    targets need strategy="taylor" with an explicit degree (the truncation
    changes the field, so it is never chosen silently).
    """
    target = simplify(target)
    own_agent = m.agent_of(component)
    own_block = set(m.block(own_agent))
    foreign_agents = sorted({m.agent_of(v) for v in free_vars(target)
                             if v not in own_block})

    if strategy == "taylor":
        c = center if center is not None else \
            {v: Fraction(0) for v in free_vars(target)}
        return synth_taylor(g, m, component, target, c, degree,
                            box_halfwidth)
    if strategy == "estimator":
        raise ValueError("estimator synthesis returns an augmented system; "
                         "call synth_estimator directly")

    if not foreign_agents:
        if not is_admissible(g, m, component, component):
            raise Unrewritable(
                f"agent {own_agent} has no out-edges; no admissible field "
                f"can write component {component}")
        sf = SeparableField(component, component, target,
                            factor_local=target, factor_foreign=ex.ONE)
        return RewriteResult(
            target=VectorField.single(m.total_dim, component, target),
            trees=(Leaf(sf, True),), validity=(), strategy="simple")

    if len(foreign_agents) == 1:
        st = separate_target(m, component, target)
        p = tuple(path) if path is not None else \
            pick_path(g, own_agent, foreign_agents[0])
        if strategy == "trig":
            return synth_trig(g, m, st, p, alpha, d)
        if strategy in ("auto", "simple"):
            return synth_simple(g, m, st, p)
        raise ValueError(f"unknown strategy {strategy!r}")

    if strategy in ("auto", "product"):
        pt = factor_product_target(m, component, target)
        return synth_product(g, m, pt)
    raise ValueError(f"strategy {strategy!r} cannot handle several foreign "
                     f"blocks")

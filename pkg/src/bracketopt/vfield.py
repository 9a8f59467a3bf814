"""Vector fields on R^N and the Lie bracket machinery.

Fields are sparse: a map from component index to a scalar Expr, absent
components identically zero.  This matches the shape of everything the
synthesis layer produces (single-component fields and their brackets) and
keeps the symbolic work proportional to the actual support.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from . import expr as ex
from .errors import ParseError
from .expr import Expr, differentiate, evaluate, free_vars, mul, simplify
from .graph import AgentIndexMap, CommGraph, is_admissible

FD_STEP = 1e-6


@dataclass(frozen=True)
class VectorField:
    """Sparse symbolic vector field on R^dim."""

    dim: int
    components: tuple[tuple[int, Expr], ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        seen = set()
        cleaned = []
        for idx, e in sorted(self.components, key=lambda p: p[0]):
            if not (1 <= idx <= self.dim):
                raise ValueError(f"component {idx} outside 1..{self.dim}")
            if idx in seen:
                raise ValueError(f"duplicate component {idx}")
            seen.add(idx)
            s = simplify(e)
            fv = free_vars(s)
            if fv and max(fv) > self.dim:
                raise ValueError(
                    f"component {idx} uses z_{max(fv)} beyond dim {self.dim}")
            if s != ex.ZERO:
                cleaned.append((idx, s))
        object.__setattr__(self, "components", tuple(cleaned))

    @classmethod
    def from_map(cls, dim: int, comps: Mapping[int, Expr]) -> "VectorField":
        return cls(dim, tuple(comps.items()))

    @classmethod
    def single(cls, dim: int, j: int, e: Expr) -> "VectorField":
        """The field e_j * e(z)."""
        return cls(dim, ((j, e),))

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls(dim, ())

    def component(self, idx: int) -> Expr:
        for i, e in self.components:
            if i == idx:
                return e
        return ex.ZERO

    @property
    def is_zero(self) -> bool:
        return not self.components

    def support(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.components)

    def __call__(self, point: Sequence[float]) -> np.ndarray:
        out = np.zeros(self.dim)
        for idx, e in self.components:
            out[idx - 1] = evaluate(e, point)
        return out

    def scaled(self, c: Union[Expr, int, float]) -> "VectorField":
        ce = ex.as_expr(c)
        return VectorField(self.dim,
                           tuple((i, mul(ce, e)) for i, e in self.components))

    def plus(self, other: "VectorField") -> "VectorField":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        comps = dict(self.components)
        for i, e in other.components:
            comps[i] = ex.add(comps[i], e) if i in comps else e
        return VectorField.from_map(self.dim, comps)


def lie_bracket(f1: VectorField, f2: VectorField) -> VectorField:
    """[f1, f2] = (Jacobian of f2)*f1 - (Jacobian of f1)*f2, symbolically.

    Only the stored components contribute rows, and only variables in the
    other field's support contribute Jacobian columns, so sparse inputs
    stay cheap.
    """
    if f1.dim != f2.dim:
        raise ValueError("dimension mismatch")
    comps: dict[int, Expr] = {}

    def accumulate(field: VectorField, flow: VectorField, sign: int):
        # rows of field's Jacobian contracted against flow
        for c, e in field.components:
            parts = []
            fv = free_vars(e)
            for k, g in flow.components:
                if k in fv:
                    parts.append(mul(differentiate(e, k), g))
            if parts:
                term = ex.add(*parts)
                if sign < 0:
                    term = mul(ex.MINUS_ONE, term)
                comps[c] = ex.add(comps[c], term) if c in comps else term

    accumulate(f2, f1, +1)
    accumulate(f1, f2, -1)
    return VectorField.from_map(f1.dim, comps)


def _fd_jacobian(f: VectorField, point: Sequence[float]) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    J = np.zeros((f.dim, f.dim))
    for k in range(f.dim):
        up = p.copy()
        dn = p.copy()
        up[k] += FD_STEP
        dn[k] -= FD_STEP
        J[:, k] = (f(up) - f(dn)) / (2 * FD_STEP)
    return J


def lie_bracket_numeric(f1: VectorField, f2: VectorField,
                        point: Sequence[float]) -> np.ndarray:
    """Finite-difference bracket, the independent cross-check for the
    symbolic route.  Central differences, step 1e-6."""
    if f1.dim != f2.dim:
        raise ValueError("dimension mismatch")
    p = np.asarray(point, dtype=float)
    return _fd_jacobian(f2, p) @ f1(p) - _fd_jacobian(f1, p) @ f2(p)


# ---------------------------------------------------------------------------
# separable single-component fields


@dataclass(frozen=True)
class SeparableField:
    """e_target * f(z_{block(target)}, z_{block(source)}).

    target is the written component; source marks the foreign block the
    scalar may read (source == target when it reads only its own block).
    factor_local/factor_foreign, when set, witness f == local*foreign with
    the local factor over the writer's block and the foreign factor over
    the source block.
    """

    target: int
    source: int
    func: Expr
    factor_local: Expr | None = None
    factor_foreign: Expr | None = None

    def __post_init__(self):
        object.__setattr__(self, "func", simplify(self.func))
        if self.factor_local is not None:
            object.__setattr__(self, "factor_local",
                               simplify(self.factor_local))
        if self.factor_foreign is not None:
            object.__setattr__(self, "factor_foreign",
                               simplify(self.factor_foreign))
        if (self.factor_local is None) != (self.factor_foreign is None):
            raise ValueError("factorization needs both factors")

    @property
    def factored(self) -> bool:
        return self.factor_local is not None

    def as_field(self, dim: int) -> VectorField:
        return VectorField.single(dim, self.target, self.func)

    def vars_ok(self, m: AgentIndexMap) -> bool:
        allowed = set(m.block_of_component(self.target))
        allowed.update(m.block_of_component(self.source))
        return free_vars(self.func) <= allowed

    def admissible_on(self, g: CommGraph, m: AgentIndexMap) -> bool:
        return is_admissible(g, m, self.source, self.target)


def factorization_consistent(sf: SeparableField, points) -> bool:
    """func == local*foreign at every sample, tol 1e-10 relative."""
    if not sf.factored:
        return True
    prod = mul(sf.factor_local, sf.factor_foreign)
    for p in points:
        a = evaluate(sf.func, p)
        b = evaluate(prod, p)
        if abs(a - b) > 1e-10 * (1 + abs(a)):
            return False
    return True


# ---------------------------------------------------------------------------
# bracket trees


@dataclass(frozen=True)
class Leaf:
    field: SeparableField
    admissible: bool


@dataclass(frozen=True)
class Bracket:
    left: "BracketTree"
    right: "BracketTree"


BracketTree = Union[Leaf, Bracket]


def tree_depth(t: BracketTree) -> int:
    """Nesting depth: 0 for a leaf, 1 + max of children for a bracket."""
    if isinstance(t, Leaf):
        return 0
    return 1 + max(tree_depth(t.left), tree_depth(t.right))


def tree_leaves(t: BracketTree) -> list[Leaf]:
    if isinstance(t, Leaf):
        return [t]
    return tree_leaves(t.left) + tree_leaves(t.right)


def tree_admissible(t: BracketTree) -> bool:
    return all(leaf.admissible for leaf in tree_leaves(t))


def tree_to_field(t: BracketTree, dim: int) -> VectorField:
    """Flatten by applying the symbolic bracket recursively."""
    if isinstance(t, Leaf):
        return t.field.as_field(dim)
    return lie_bracket(tree_to_field(t.left, dim),
                       tree_to_field(t.right, dim))


def evaluate_tree(t: BracketTree, point: Sequence[float],
                  dim: int) -> np.ndarray:
    return tree_to_field(t, dim)(point)


def right_nested(items: Sequence[BracketTree]) -> BracketTree:
    """[t_r, [t_{r-1}, [... [t_2, t_1]...]]] from subtrees listed
    first-link first.  A single item is returned as-is."""
    if not items:
        raise ValueError("need at least one subtree")
    t: BracketTree = items[0]
    for item in items[1:]:
        t = Bracket(item, t)
    return t


def left_nested(items: Sequence[BracketTree]) -> BracketTree:
    """[[...[t_m, t_{m-1}], ...], t_1] from subtrees listed t_1 first."""
    if not items:
        raise ValueError("need at least one subtree")
    rev = list(items[::-1])
    t: BracketTree = rev[0]
    for item in rev[1:]:
        t = Bracket(t, item)
    return t


# ---------------------------------------------------------------------------
# serialization


def field_to_json(f: VectorField) -> dict:
    return {
        "dim": f.dim,
        "components": {str(i): ex.to_sexp(e) for i, e in f.components},
    }


def field_from_json(obj: dict) -> VectorField:
    try:
        dim = int(obj["dim"])
        comps = {int(k): ex.parse_sexp(v)
                 for k, v in obj["components"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed vector-field object: {exc}") from None
    return VectorField.from_map(dim, comps)


def tree_to_json(t: BracketTree) -> dict:
    if isinstance(t, Leaf):
        leaf = {
            "j": t.field.target,
            "i": t.field.source,
            "f": ex.to_sexp(t.field.func),
            "admissible": bool(t.admissible),
        }
        if t.field.factored:
            leaf["f1"] = ex.to_sexp(t.field.factor_local)
            leaf["f2"] = ex.to_sexp(t.field.factor_foreign)
        return {"leaf": leaf}
    return {"bracket": [tree_to_json(t.left), tree_to_json(t.right)]}


def tree_from_json(obj: dict) -> BracketTree:
    if "leaf" in obj:
        d = obj["leaf"]
        try:
            f1 = ex.parse_sexp(d["f1"]) if "f1" in d else None
            f2 = ex.parse_sexp(d["f2"]) if "f2" in d else None
            sf = SeparableField(int(d["j"]), int(d["i"]),
                                ex.parse_sexp(d["f"]), f1, f2)
            return Leaf(sf, bool(d["admissible"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed leaf object: {exc}") from None
    if "bracket" in obj:
        pair = obj["bracket"]
        if not isinstance(pair, list) or len(pair) != 2:
            raise ParseError("bracket node needs exactly two children")
        return Bracket(tree_from_json(pair[0]), tree_from_json(pair[1]))
    raise ParseError(f"unknown tree node keys {sorted(obj)}")


def field_to_json_text(f: VectorField) -> str:
    return json.dumps(field_to_json(f), indent=2, sort_keys=True) + "\n"

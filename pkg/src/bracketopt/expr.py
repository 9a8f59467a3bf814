"""Symbolic scalar expressions over numbered state components.

The expression language is deliberately small: rational/float constants,
state variables ``z_k`` (1-based), sums, products, integer powers, and the
unary functions sin, cos, sec, exp, log.  Everything downstream (vector
fields, bracket synthesis, saddle-point assembly) manipulates these trees,
so the operations here favour exactness and determinism over generality:
constant folding is rational whenever the inputs are rational, and
simplification is a terminating rewrite pass, not a canonical form.

Expressions are immutable; sharing subtrees across threads is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

from .errors import DomainError, NotClosedForm, ParseError

Number = Union[int, Fraction, float]

# cos magnitudes at or below this are treated as a sec pole
SEC_POLE_TOL = 1e-12

_SIMPLIFY_MAX_PASSES = 12


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class Expr:
    """Base node.  Arithmetic operators build normalized trees."""

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, mul(MINUS_ONE, as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), mul(MINUS_ONE, self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __neg__(self):
        return mul(MINUS_ONE, self)

    def __pow__(self, n: int):
        return pow_(self, n)


@dataclass(frozen=True)
class Const(Expr):
    value: Union[Fraction, float]


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based state component


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple[Expr, ...]


@dataclass(frozen=True)
class Product(Expr):
    factors: tuple[Expr, ...]


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int  # integer, possibly negative


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sec(Expr):
    arg: Expr


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True)
class Log(Expr):
    arg: Expr


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))
MINUS_ONE = Const(Fraction(-1))


def as_expr(x: Union[Expr, Number]) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return Const(Fraction(x))
    if isinstance(x, float):
        return Const(x)
    raise TypeError(f"cannot coerce {x!r} to Expr")


def var(k: int) -> Var:
    if k < 1:
        raise ValueError("state components are 1-based")
    return Var(k)


# ---------------------------------------------------------------------------
# smart constructors
#
# These apply the node-local rewrite rules: flattening, 0/1 identities,
# rational constant folding, like-term and like-base collection, and the
# sec/cos cancellation.  simplify() drives them bottom-up to a fixpoint.
# Commutative operands get a canonical order so that structurally equal
# means construction-order independent.


def _sort_key(e: Expr):
    match e:
        case Const(v):
            if isinstance(v, Fraction):
                return (0, 0, v.numerator, v.denominator)
            return (0, 1, v)
        case Var(k):
            return (1, k)
        case Power(b, n):
            return (2, _sort_key(b), n)
        case Sin(a):
            return (3, _sort_key(a))
        case Cos(a):
            return (4, _sort_key(a))
        case Sec(a):
            return (5, _sort_key(a))
        case Exp(a):
            return (6, _sort_key(a))
        case Log(a):
            return (7, _sort_key(a))
        case Product(fs):
            return (8, tuple(_sort_key(f) for f in fs))
        case Sum(ts):
            return (9, tuple(_sort_key(t) for t in ts))
    raise TypeError(f"unknown node {e!r}")


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 1


def _coeff_core(t: Expr) -> tuple[Union[Fraction, float], Expr | None]:
    """Split a term into (constant coefficient, non-constant core)."""
    if isinstance(t, Const):
        return t.value, None
    if isinstance(t, Product):
        coeff: Union[Fraction, float] = Fraction(1)
        rest = []
        for f in t.factors:
            if isinstance(f, Const):
                coeff = coeff * f.value
            else:
                rest.append(f)
        if not rest:
            return coeff, None
        core = rest[0] if len(rest) == 1 else Product(tuple(rest))
        return coeff, core
    return Fraction(1), t


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    for t in terms:
        if isinstance(t, Sum):
            flat.extend(t.terms)
        else:
            flat.append(t)

    const: Union[Fraction, float] = Fraction(0)
    cores: dict[Expr, Union[Fraction, float]] = {}
    for t in flat:
        c, core = _coeff_core(t)
        if core is None:
            const = const + c
        elif core in cores:
            cores[core] = cores[core] + c
        else:
            cores[core] = c

    out: list[Expr] = []
    for core in sorted(cores, key=_sort_key):
        c = cores[core]
        if c == 0:
            continue
        if c == 1:
            out.append(core)
        else:
            out.append(mul(Const(c), core))
    if const != 0 or not out:
        out.append(Const(const))
    if len(out) == 1:
        return out[0]
    return Sum(tuple(out))


def _base_exp(f: Expr) -> tuple[Expr, int]:
    """Normalize a factor to (base, exponent); sec folds into cos^-1."""
    e = 1
    while isinstance(f, Power):
        e *= f.exponent
        f = f.base
    if isinstance(f, Sec):
        return Cos(f.arg), -e
    return f, e


def _rebuild_factor(base: Expr, e: int) -> Expr | None:
    if e == 0:
        return None
    if isinstance(base, Cos) and e < 0:
        sec = Sec(base.arg)
        return sec if e == -1 else Power(sec, -e)
    if e == 1:
        return base
    return Power(base, e)


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    for f in factors:
        if isinstance(f, Product):
            flat.extend(f.factors)
        else:
            flat.append(f)

    const: Union[Fraction, float] = Fraction(1)
    bases: dict[Expr, int] = {}
    for f in flat:
        if isinstance(f, Const):
            if f.value == 0:
                return ZERO
            const = const * f.value
            continue
        b, e = _base_exp(f)
        if isinstance(b, Const):  # constant under a power
            if b.value == 0:
                return ZERO
            const = const * (b.value ** e if not isinstance(b.value, Fraction)
                             else Fraction(b.value) ** e)
            continue
        bases[b] = bases.get(b, 0) + e

    out: list[Expr] = []
    for b in sorted(bases, key=_sort_key):
        f = _rebuild_factor(b, bases[b])
        if f is not None:
            out.append(f)
    if not out:
        return Const(const)
    if const != 1:
        # distribute the constant over a lone sum so that sums of terms
        # and their negations cancel inside add()
        if len(out) == 1 and isinstance(out[0], Sum):
            return add(*[mul(Const(const), t) for t in out[0].terms])
        out.insert(0, Const(const))
    if len(out) == 1:
        return out[0]
    return Product(tuple(out))


def pow_(base: Expr, n: int) -> Expr:
    if not isinstance(n, int):
        raise TypeError("exponents must be integers")
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        v = base.value
        if isinstance(v, Fraction):
            if v == 0 and n < 0:
                return Power(base, n)  # left for evaluate() to reject
            return Const(v ** n)
        return Const(v ** n)
    if isinstance(base, Power):
        return pow_(base.base, base.exponent * n)
    if isinstance(base, Product):
        return mul(*[pow_(f, n) for f in base.factors])
    if isinstance(base, Sec):
        # keep the cos^-1 normal form so products cancel
        return _rebuild_factor(Cos(base.arg), -n) or ONE
    return Power(base, n)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, mul(MINUS_ONE, b))


def _fold_unary(ctor, fn, exact: dict[Fraction, Fraction], a: Expr) -> Expr:
    if isinstance(a, Const):
        if isinstance(a.value, Fraction) and a.value in exact:
            return Const(exact[a.value])
        return Const(fn(float(a.value)))
    return ctor(a)


def sin_(a: Expr) -> Expr:
    return _fold_unary(Sin, math.sin, {Fraction(0): Fraction(0)}, a)


def cos_(a: Expr) -> Expr:
    return _fold_unary(Cos, math.cos, {Fraction(0): Fraction(1)}, a)


def sec_(a: Expr) -> Expr:
    return _fold_unary(Sec, lambda x: 1.0 / math.cos(x),
                       {Fraction(0): Fraction(1)}, a)


def exp_(a: Expr) -> Expr:
    return _fold_unary(Exp, math.exp, {Fraction(0): Fraction(1)}, a)


def log_(a: Expr) -> Expr:
    return _fold_unary(Log, math.log, {Fraction(1): Fraction(0)}, a)


_UNARY_CTORS: dict[type, Callable[[Expr], Expr]] = {
    Sin: sin_, Cos: cos_, Sec: sec_, Exp: exp_, Log: log_,
}


# ---------------------------------------------------------------------------
# structure queries


def is_polynomial(e: Expr) -> bool:
    """True when e uses only +, *, and nonnegative integer powers."""
    match e:
        case Const() | Var():
            return True
        case Sum(ts):
            return all(is_polynomial(t) for t in ts)
        case Product(fs):
            return all(is_polynomial(f) for f in fs)
        case Power(b, n):
            return n >= 0 and is_polynomial(b)
    return False


def free_vars(e: Expr) -> frozenset[int]:
    match e:
        case Const():
            return frozenset()
        case Var(k):
            return frozenset((k,))
        case Sum(ts):
            out: frozenset[int] = frozenset()
            for t in ts:
                out = out | free_vars(t)
            return out
        case Product(fs):
            out = frozenset()
            for f in fs:
                out = out | free_vars(f)
            return out
        case Power(b, _):
            return free_vars(b)
        case Sin(a) | Cos(a) | Sec(a) | Exp(a) | Log(a):
            return free_vars(a)
    raise TypeError(f"unknown node {e!r}")


def substitute(e: Expr, repl: Mapping[int, Expr]) -> Expr:
    """Replace variables by expressions (simultaneous substitution)."""
    match e:
        case Const():
            return e
        case Var(k):
            return repl.get(k, e)
        case Sum(ts):
            return add(*[substitute(t, repl) for t in ts])
        case Product(fs):
            return mul(*[substitute(f, repl) for f in fs])
        case Power(b, n):
            return pow_(substitute(b, repl), n)
        case Sin(a):
            return sin_(substitute(a, repl))
        case Cos(a):
            return cos_(substitute(a, repl))
        case Sec(a):
            return sec_(substitute(a, repl))
        case Exp(a):
            return exp_(substitute(a, repl))
        case Log(a):
            return log_(substitute(a, repl))
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# simplification


def _simplify_once(e: Expr) -> Expr:
    match e:
        case Const() | Var():
            return e
        case Sum(ts):
            return add(*[_simplify_once(t) for t in ts])
        case Product(fs):
            return mul(*[_simplify_once(f) for f in fs])
        case Power(b, n):
            return pow_(_simplify_once(b), n)
        case Sin(a):
            return sin_(_simplify_once(a))
        case Cos(a):
            return cos_(_simplify_once(a))
        case Sec(a):
            return sec_(_simplify_once(a))
        case Exp(a):
            return exp_(_simplify_once(a))
        case Log(a):
            return log_(_simplify_once(a))
    raise TypeError(f"unknown node {e!r}")


def simplify(e: Expr) -> Expr:
    """Bottom-up rewrite to a fixpoint.  Idempotent by construction."""
    cur = e
    for _ in range(_SIMPLIFY_MAX_PASSES):
        nxt = _simplify_once(cur)
        if nxt == cur:
            return cur
        cur = nxt
    return cur


# ---------------------------------------------------------------------------
# calculus


def differentiate(e: Expr, k: int) -> Expr:
    """Exact partial derivative with respect to z_k, simplified."""
    return simplify(_diff(simplify(e), k))


def _diff(e: Expr, k: int) -> Expr:
    if k not in free_vars(e):
        return ZERO
    match e:
        case Var(_):
            return ONE
        case Sum(ts):
            return add(*[_diff(t, k) for t in ts])
        case Product(fs):
            parts = []
            for i, f in enumerate(fs):
                if k not in free_vars(f):
                    continue
                rest = fs[:i] + fs[i + 1:]
                parts.append(mul(_diff(f, k), *rest))
            return add(*parts)
        case Power(b, n):
            return mul(Const(Fraction(n)), pow_(b, n - 1), _diff(b, k))
        case Sin(a):
            return mul(cos_(a), _diff(a, k))
        case Cos(a):
            return mul(MINUS_ONE, sin_(a), _diff(a, k))
        case Sec(a):
            # d sec u = sec(u) tan(u) u' = sin(u) sec(u)^2 u'
            return mul(sin_(a), pow_(sec_(a), 2), _diff(a, k))
        case Exp(a):
            return mul(exp_(a), _diff(a, k))
        case Log(a):
            return mul(pow_(a, -1), _diff(a, k))
    raise TypeError(f"unknown node {e!r}")


def _linear_in(u: Expr, k: int) -> tuple[Expr, Expr] | None:
    """Match u == a*z_k + c with a, c free of z_k.  None if not linear."""
    if u == Var(k):
        return ONE, ZERO
    match u:
        case Product(fs):
            dep = [f for f in fs if k in free_vars(f)]
            if len(dep) == 1 and dep[0] == Var(k):
                rest = tuple(f for f in fs if f is not dep[0])
                return mul(*rest) if rest else ONE, ZERO
            return None
        case Sum(ts):
            a_parts: list[Expr] = []
            c_parts: list[Expr] = []
            for t in ts:
                if k not in free_vars(t):
                    c_parts.append(t)
                    continue
                lin = _linear_in(t, k)
                if lin is None or not _is_zero(lin[1]):
                    return None
                a_parts.append(lin[0])
            if not a_parts:
                return None
            return add(*a_parts), add(*c_parts) if c_parts else ZERO
    return None


def antiderivative(e: Expr, k: int) -> Expr:
    """Antiderivative of e with respect to z_k, integration constant zero.

    Supports the closed basis: polynomials in z_k (including shifted powers
    of a linear argument), and sin/cos/sec/exp/log of a linear argument.
    Raises NotClosedForm outside that set, signalling the caller to pick a
    different factor split.
    """
    return simplify(_anti(simplify(e), k))


def _anti(e: Expr, k: int) -> Expr:
    if k not in free_vars(e):
        return mul(e, Var(k))
    match e:
        case Var(_):
            return mul(Const(Fraction(1, 2)), pow_(Var(k), 2))
        case Sum(ts):
            return add(*[_anti(t, k) for t in ts])
        case Product(fs):
            dep = [f for f in fs if k in free_vars(f)]
            if len(dep) == 1:
                rest = [f for f in fs if f is not dep[0]]
                return mul(*rest, _anti(dep[0], k))
            raise NotClosedForm(
                f"product has {len(dep)} factors in z_{k}: {to_sexp(e)}")
        case Power(b, n):
            lin = _linear_in(b, k)
            if lin is None:
                raise NotClosedForm(f"power base not linear in z_{k}: "
                                    f"{to_sexp(e)}")
            a, _ = lin
            if n == -1:
                return mul(pow_(a, -1), log_(b))
            return mul(pow_(a, -1), Const(Fraction(1, n + 1)), pow_(b, n + 1))
        case Sin(u) | Cos(u) | Sec(u) | Exp(u) | Log(u):
            lin = _linear_in(u, k)
            if lin is None:
                raise NotClosedForm(f"argument not linear in z_{k}: "
                                    f"{to_sexp(e)}")
            a, _ = lin
            inv_a = pow_(a, -1)
            match e:
                case Sin(_):
                    return mul(MINUS_ONE, inv_a, cos_(u))
                case Cos(_):
                    return mul(inv_a, sin_(u))
                case Exp(_):
                    return mul(inv_a, exp_(u))
                case Sec(_):
                    # integral of sec = log(sec + tan); tan = sin * sec
                    return mul(inv_a,
                               log_(add(sec_(u), mul(sin_(u), sec_(u)))))
                case Log(_):
                    return mul(inv_a, u, add(log_(u), MINUS_ONE))
    raise NotClosedForm(f"outside the integrable basis: {to_sexp(e)}")


# ---------------------------------------------------------------------------
# evaluation


Point = Union[Sequence[float], Mapping[int, float]]


def _lookup(point: Point, k: int):
    if isinstance(point, Mapping):
        try:
            return point[k]
        except KeyError:
            raise ValueError(f"point has no entry for z_{k}") from None
    try:
        return point[k - 1]
    except IndexError:
        raise ValueError(f"point has no entry for z_{k}") from None


def _min_var(e: Expr) -> int | None:
    fv = free_vars(e)
    return min(fv) if fv else None


def evaluate(e: Expr, point: Point) -> float:
    """IEEE-double evaluation.  Deterministic for a fixed tree and point.

    Raises DomainError at sec poles (|cos| <= 1e-12), log of a nonpositive
    argument, and negative powers of zero.
    """
    match e:
        case Const(v):
            return float(v)
        case Var(k):
            return float(_lookup(point, k))
        case Sum(ts):
            acc = evaluate(ts[0], point)
            for t in ts[1:]:
                acc += evaluate(t, point)
            return acc
        case Product(fs):
            acc = evaluate(fs[0], point)
            for f in fs[1:]:
                acc *= evaluate(f, point)
            return acc
        case Power(b, n):
            bv = evaluate(b, point)
            if n < 0 and bv == 0.0:
                raise DomainError(f"zero base with exponent {n}",
                                  component=_min_var(b), value=bv)
            return bv ** n
        case Sin(a):
            return math.sin(evaluate(a, point))
        case Cos(a):
            return math.cos(evaluate(a, point))
        case Sec(a):
            av = evaluate(a, point)
            c = math.cos(av)
            if abs(c) <= SEC_POLE_TOL:
                raise DomainError(f"sec pole at argument {av!r}",
                                  component=_min_var(a), value=av)
            return 1.0 / c
        case Exp(a):
            return math.exp(evaluate(a, point))
        case Log(a):
            av = evaluate(a, point)
            if av <= 0.0:
                raise DomainError(f"log of nonpositive argument {av!r}",
                                  component=_min_var(a), value=av)
            return math.log(av)
    raise TypeError(f"unknown node {e!r}")


def evaluate_exact(e: Expr, point) -> Union[Fraction, float]:
    """Evaluate keeping Fraction arithmetic exact where possible.

    Rational inputs flowing through +, *, and integer powers stay rational;
    a transcendental of a nonzero argument degrades to float.  Used by the
    Taylor expansion so polynomial coefficients come out exact.
    """
    match e:
        case Const(v):
            return v
        case Var(k):
            return _lookup(point, k)
        case Sum(ts):
            acc = evaluate_exact(ts[0], point)
            for t in ts[1:]:
                acc = acc + evaluate_exact(t, point)
            return acc
        case Product(fs):
            acc = evaluate_exact(fs[0], point)
            for f in fs[1:]:
                acc = acc * evaluate_exact(f, point)
            return acc
        case Power(b, n):
            bv = evaluate_exact(b, point)
            if bv == 0 and n < 0:
                raise DomainError(f"zero base with exponent {n}",
                                  component=_min_var(b), value=0.0)
            return bv ** n
        case Sin(a) | Cos(a) | Sec(a) | Exp(a) | Log(a):
            av = evaluate_exact(a, point)
            if isinstance(av, Fraction):
                exact = {
                    Sin: (Fraction(0), Fraction(0)),
                    Cos: (Fraction(0), Fraction(1)),
                    Sec: (Fraction(0), Fraction(1)),
                    Exp: (Fraction(0), Fraction(1)),
                    Log: (Fraction(1), Fraction(0)),
                }[type(e)]
                if av == exact[0]:
                    return exact[1]
            fv = float(av)
            match e:
                case Sin(_):
                    return math.sin(fv)
                case Cos(_):
                    return math.cos(fv)
                case Sec(_):
                    c = math.cos(fv)
                    if abs(c) <= SEC_POLE_TOL:
                        raise DomainError(f"sec pole at argument {fv!r}",
                                          component=_min_var(a), value=fv)
                    return 1.0 / c
                case Exp(_):
                    return math.exp(fv)
                case Log(_):
                    if fv <= 0.0:
                        raise DomainError(
                            f"log of nonpositive argument {fv!r}",
                            component=_min_var(a), value=fv)
                    return math.log(fv)
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# Taylor expansion


def _multi_indices(nvars: int, total: int) -> Iterable[tuple[int, ...]]:
    """All nonnegative integer tuples of the given length summing to total,
    lexicographically."""
    if nvars == 0:
        if total == 0:
            yield ()
        return
    if nvars == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _multi_indices(nvars - 1, total - first):
            yield (first,) + rest


def taylor_monomials(e: Expr, center, degree: int
                     ) -> list[tuple[Union[Fraction, float],
                                     tuple[tuple[int, int], ...]]]:
    """Monomial terms of the Taylor expansion about center, total degree
    <= degree.

    Returns (coefficient, multi_index) pairs where multi_index is a sorted
    tuple of (variable, power); the monomial is the product of
    (z_v - center_v)^power.  Coefficients come from repeated symbolic
    differentiation evaluated at the center, with rational arithmetic
    whenever the inputs allow it.  Zero coefficients are dropped.  Ordered
    by total degree, then lexicographically in the multi index.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    base = simplify(e)
    vs = sorted(free_vars(base))
    derivs: dict[tuple[int, ...], Expr] = {(0,) * len(vs): base}

    def deriv_for(beta: tuple[int, ...]) -> Expr:
        if beta in derivs:
            return derivs[beta]
        k = next(i for i, b in enumerate(beta) if b > 0)
        lower = beta[:k] + (beta[k] - 1,) + beta[k + 1:]
        d = differentiate(deriv_for(lower), vs[k])
        derivs[beta] = d
        return d

    out = []
    for total in range(degree + 1):
        for beta in _multi_indices(len(vs), total):
            d = deriv_for(beta)
            if _is_zero(d):
                continue
            val = evaluate_exact(d, center)
            fact = 1
            for b in beta:
                fact *= math.factorial(b)
            coeff = val / fact if isinstance(val, float) else val / Fraction(fact)
            if coeff == 0:
                continue
            multi = tuple((vs[i], b) for i, b in enumerate(beta) if b > 0)
            out.append((coeff, multi))
        if len(vs) == 0:
            break
    return out


def monomial_expr(multi: tuple[tuple[int, int], ...], center) -> Expr:
    """The expression for a Taylor multi-index: product of shifted powers."""
    factors = []
    for v, p in multi:
        cv = _lookup(center, v)
        shifted = sub(Var(v), as_expr(cv)) if cv != 0 else Var(v)
        factors.append(pow_(shifted, p))
    return mul(*factors) if factors else ONE


# ---------------------------------------------------------------------------
# s-expression serialization


def to_sexp(e: Expr) -> str:
    match e:
        case Const(v):
            if isinstance(v, Fraction):
                if v.denominator == 1:
                    return str(v.numerator)
                return f"{v.numerator}/{v.denominator}"
            return repr(v)
        case Var(k):
            return f"(var {k})"
        case Sum(ts):
            return "(+ " + " ".join(to_sexp(t) for t in ts) + ")"
        case Product(fs):
            return "(* " + " ".join(to_sexp(f) for f in fs) + ")"
        case Power(b, n):
            return f"(^ {to_sexp(b)} {n})"
        case Sin(a):
            return f"(sin {to_sexp(a)})"
        case Cos(a):
            return f"(cos {to_sexp(a)})"
        case Sec(a):
            return f"(sec {to_sexp(a)})"
        case Exp(a):
            return f"(exp {to_sexp(a)})"
        case Log(a):
            return f"(log {to_sexp(a)})"
    raise TypeError(f"unknown node {e!r}")


_INT_CHARS = set("+-0123456789")


def _parse_atom(tok: str) -> Expr:
    if tok and set(tok) <= _INT_CHARS and tok not in ("+", "-"):
        if "/" not in tok:
            try:
                return Const(Fraction(int(tok)))
            except ValueError:
                pass
    if "/" in tok:
        num, _, den = tok.partition("/")
        try:
            return Const(Fraction(int(num), int(den)))
        except (ValueError, ZeroDivisionError):
            raise ParseError(f"bad rational literal {tok!r}") from None
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"unknown atom {tok!r}") from None
    if math.isnan(v) or math.isinf(v):
        raise ParseError(f"non-finite literal {tok!r}")
    return Const(v)


def parse_sexp(text: str) -> Expr:
    """Parse the serialization produced by to_sexp.

    Grammar: atoms are integers, rationals p/q, or floats; compounds are
    ``(+ e e ...)``, ``(* e e ...)``, ``(^ e n)``, ``(var k)``, and
    ``(sin|cos|sec|exp|log e)``.
    """
    toks = text.replace("(", " ( ").replace(")", " ) ").split()
    if not toks:
        raise ParseError("empty input")
    pos = 0

    def parse() -> Expr:
        nonlocal pos
        if pos >= len(toks):
            raise ParseError("unexpected end of input")
        tok = toks[pos]
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'")
        if tok != "(":
            return _parse_atom(tok)
        if pos >= len(toks):
            raise ParseError("unexpected end of input")
        head = toks[pos]
        pos += 1
        args: list[Expr] = []
        if head == "var":
            if pos >= len(toks) or not toks[pos].isdigit():
                raise ParseError("var needs a positive integer index")
            k = int(toks[pos])
            pos += 1
            _expect_close()
            if k < 1:
                raise ParseError("var index must be >= 1")
            return Var(k)
        if head == "^":
            base = parse()
            if pos >= len(toks):
                raise ParseError("unexpected end of input")
            etok = toks[pos]
            pos += 1
            try:
                n = int(etok)
            except ValueError:
                raise ParseError(
                    f"power exponent must be an integer, got {etok!r}"
                ) from None
            _expect_close()
            return Power(base, n)
        while pos < len(toks) and toks[pos] != ")":
            args.append(parse())
        _expect_close()
        if head == "+":
            if len(args) < 2:
                raise ParseError("+ needs at least two arguments")
            return Sum(tuple(args))
        if head == "*":
            if len(args) < 2:
                raise ParseError("* needs at least two arguments")
            return Product(tuple(args))
        unary = {"sin": Sin, "cos": Cos, "sec": Sec, "exp": Exp, "log": Log}
        if head in unary:
            if len(args) != 1:
                raise ParseError(f"{head} takes exactly one argument")
            return unary[head](args[0])
        raise ParseError(f"unknown operator {head!r}")

    def _expect_close():
        nonlocal pos
        if pos >= len(toks) or toks[pos] != ")":
            raise ParseError("expected ')'")
        pos += 1

    e = parse()
    if pos != len(toks):
        raise ParseError(f"trailing input after expression: {toks[pos]!r}")
    return e


# ---------------------------------------------------------------------------
# compilation to plain Python (used on integration hot paths)


def py_source(e: Expr, arr: str = "z") -> str:
    """Python expression string over a 0-based sequence named ``arr``.

    Matches evaluate() except at singularities: sec poles return huge
    floats instead of raising, log raises ValueError.  Integrators catch
    those and re-raise domain failures with trajectory context.
    """
    match e:
        case Const(v):
            return repr(float(v))
        case Var(k):
            return f"{arr}[{k - 1}]"
        case Sum(ts):
            return "(" + "+".join(py_source(t, arr) for t in ts) + ")"
        case Product(fs):
            return "(" + "*".join(py_source(f, arr) for f in fs) + ")"
        case Power(b, n):
            return f"({py_source(b, arr)})**({n})"
        case Sin(a):
            return f"_sin({py_source(a, arr)})"
        case Cos(a):
            return f"_cos({py_source(a, arr)})"
        case Sec(a):
            return f"(1.0/_cos({py_source(a, arr)}))"
        case Exp(a):
            return f"_exp({py_source(a, arr)})"
        case Log(a):
            return f"_log({py_source(a, arr)})"
    raise TypeError(f"unknown node {e!r}")


_COMPILE_NS = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp, "_log": math.log,
}


def compile_scalar(e: Expr) -> Callable[[Sequence[float]], float]:
    src = f"def _f(z):\n    return {py_source(e)}\n"
    ns = dict(_COMPILE_NS)
    exec(src, ns)  # noqa: S102 - source is generated from our own AST
    return ns["_f"]

"""Expression algebra: derivatives against finite differences,
antiderivative round trips, simplification semantics, serialization."""

import math
from fractions import Fraction

import numpy as np
import pytest

from bracketopt.errors import DomainError, NotClosedForm, ParseError
from bracketopt.expr import (
    Const,
    Cos,
    Exp,
    Log,
    Power,
    Product,
    Sec,
    Sin,
    Sum,
    Var,
    add,
    antiderivative,
    as_expr,
    compile_scalar,
    cos_,
    differentiate,
    evaluate,
    evaluate_exact,
    exp_,
    free_vars,
    log_,
    monomial_expr,
    mul,
    parse_sexp,
    pow_,
    sec_,
    simplify,
    sin_,
    substitute,
    taylor_monomials,
    to_sexp,
    var,
)

FD_H = 1e-6


def fd_partial(e, k, point):
    """Central finite difference, the independent derivative oracle."""
    up = list(point)
    dn = list(point)
    up[k - 1] += FD_H
    dn[k - 1] -= FD_H
    return (evaluate(e, up) - evaluate(e, dn)) / (2 * FD_H)


def check_derivative(e, k, points):
    d = differentiate(e, k)
    for p in points:
        want = fd_partial(e, k, p)
        got = evaluate(d, p)
        assert abs(got - want) <= 1e-5 * (1 + abs(want)), (
            f"d/dz_{k} of {to_sexp(e)} at {p}: symbolic {got}, fd {want}")


def sample_points(rng, n, dim, lo=0.2, hi=1.4):
    # positive window: keeps log arguments positive and away from sec poles
    return rng.uniform(lo, hi, size=(n, dim)).tolist()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# ---------------------------------------------------------------------------
# construction and normalization


class TestConstructors:
    def test_add_identity_and_folding(self):
        z1 = var(1)
        assert add(z1, Const(Fraction(0))) == z1
        assert add(Const(Fraction(2)), Const(Fraction(3))) == Const(Fraction(5))

    def test_like_terms_collect(self):
        z1 = var(1)
        e = add(z1, z1, z1)
        assert e == mul(Const(Fraction(3)), z1)

    def test_cancellation_to_zero(self):
        z1 = var(1)
        e = add(z1, mul(Const(Fraction(-1)), z1))
        assert e == Const(Fraction(0))

    def test_mul_zero_annihilates(self):
        assert mul(var(3), Const(Fraction(0))) == Const(Fraction(0))

    def test_mul_merges_powers(self):
        z2 = var(2)
        e = mul(z2, z2, pow_(z2, 3))
        assert e == Power(z2, 5)

    def test_cos_times_sec_cancels(self):
        u = var(1)
        e = mul(Cos(u), Sec(u))
        assert e == Const(Fraction(1))

    def test_sec_squared_times_cos(self):
        u = var(1)
        e = mul(pow_(Sec(u), 2), Cos(u))
        assert e == Sec(u)

    def test_pow_of_product_distributes(self):
        e = pow_(mul(var(1), var(2)), 2)
        v = evaluate(e, [3.0, 5.0])
        assert v == pytest.approx(225.0)

    def test_exact_rational_folding(self):
        e = mul(Const(Fraction(1, 3)), Const(Fraction(3, 7)))
        assert e == Const(Fraction(1, 7))

    def test_operator_overloads(self):
        z1, z2 = var(1), var(2)
        e = (z1 + z2) * 2 - z1 ** 2
        assert evaluate(e, [3.0, 4.0]) == pytest.approx(14.0 - 9.0)

    def test_unary_folds_at_exact_points(self):
        assert sin_(Const(Fraction(0))) == Const(Fraction(0))
        assert cos_(Const(Fraction(0))) == Const(Fraction(1))
        assert exp_(Const(Fraction(0))) == Const(Fraction(1))
        assert log_(Const(Fraction(1))) == Const(Fraction(0))
        assert sec_(Const(Fraction(0))) == Const(Fraction(1))


# ---------------------------------------------------------------------------
# evaluation


class TestEvaluate:
    def test_frozen_reference_values(self):
        # frozen: 2*cos(3) and 2*sin(3) computed independently
        e1 = mul(Const(Fraction(2)), cos_(var(1)))
        e2 = mul(Const(Fraction(2)), sin_(var(1)))
        assert evaluate(e1, [3.0]) == pytest.approx(-1.9799849932008908,
                                                    abs=1e-15)
        assert evaluate(e2, [3.0]) == pytest.approx(0.2822400161197344,
                                                    abs=1e-15)

    def test_sec_pole_raises(self):
        e = Sec(var(1))
        with pytest.raises(DomainError) as ei:
            evaluate(e, [math.pi / 2])
        assert ei.value.component == 1

    def test_log_domain(self):
        with pytest.raises(DomainError):
            evaluate(Log(var(1)), [0.0])
        with pytest.raises(DomainError):
            evaluate(Log(var(1)), [-2.0])

    def test_negative_power_of_zero(self):
        with pytest.raises(DomainError):
            evaluate(Power(var(1), -1), [0.0])

    def test_mapping_point(self):
        e = add(var(2), var(7))
        assert evaluate(e, {2: 1.5, 7: 2.5}) == pytest.approx(4.0)

    def test_evaluate_exact_stays_rational(self):
        e = add(mul(Const(Fraction(1, 3)), var(1)), pow_(var(2), 2))
        v = evaluate_exact(e, [Fraction(3), Fraction(1, 2)])
        assert v == Fraction(5, 4)
        assert isinstance(v, Fraction)

    def test_evaluate_exact_transcendental_at_zero(self):
        assert evaluate_exact(Sin(var(1)), [Fraction(0)]) == 0
        assert evaluate_exact(Exp(var(1)), [Fraction(0)]) == 1

    def test_compiled_matches_interpreted(self, rng):
        z1, z2, z3 = var(1), var(2), var(3)
        exprs = [
            add(mul(z1, z2), pow_(z3, 3)),
            mul(sin_(z1), cos_(add(z2, z3))),
            mul(sec_(z1), exp_(mul(Const(Fraction(1, 2)), z2))),
            add(log_(z3), mul(Const(Fraction(-2)), z1, z2)),
        ]
        pts = sample_points(rng, 16, 3)
        for e in exprs:
            f = compile_scalar(e)
            for p in pts:
                assert f(p) == evaluate(e, p)


# ---------------------------------------------------------------------------
# derivatives


class TestDifferentiate:
    def test_poly(self, rng):
        z1, z2 = var(1), var(2)
        e = add(mul(Const(Fraction(3)), pow_(z1, 3), z2),
                pow_(z2, 2), Const(Fraction(5)))
        pts = sample_points(rng, 8, 2)
        check_derivative(e, 1, pts)
        check_derivative(e, 2, pts)

    def test_trig_chain(self, rng):
        e = sin_(mul(Const(Fraction(2)), var(1), var(2)))
        pts = sample_points(rng, 8, 2)
        check_derivative(e, 1, pts)
        check_derivative(e, 2, pts)

    def test_sec_derivative(self, rng):
        e = Sec(mul(Const(Fraction(1, 2)), var(1)))
        check_derivative(e, 1, sample_points(rng, 8, 1))

    def test_log_exp(self, rng):
        e = mul(log_(var(1)), exp_(var(2)))
        pts = sample_points(rng, 8, 2)
        check_derivative(e, 1, pts)
        check_derivative(e, 2, pts)

    def test_absent_variable_is_zero(self):
        e = mul(var(1), sin_(var(3)))
        assert differentiate(e, 2) == Const(Fraction(0))

    def test_random_basis_combinations(self, rng):
        # products and sums drawn from the working basis, fd cross-check
        z = [var(k) for k in range(1, 4)]
        atoms = [z[0], pow_(z[1], 2), sin_(z[2]), cos_(z[0]),
                 exp_(mul(Const(Fraction(1, 2)), z[1])), log_(z[2])]
        for trial in range(20):
            idx = rng.integers(0, len(atoms), size=3)
            e = simplify(add(mul(atoms[idx[0]], atoms[idx[1]]), atoms[idx[2]]))
            k = int(rng.integers(1, 4))
            check_derivative(e, k, sample_points(rng, 4, 3))


# ---------------------------------------------------------------------------
# antiderivatives


class TestAntiderivative:
    def roundtrip(self, e, k, rng, dim):
        F = antiderivative(e, k)
        d = differentiate(F, k)
        for p in sample_points(rng, 32, dim):
            want = evaluate(e, p)
            got = evaluate(d, p)
            assert abs(got - want) <= 1e-9 * (1 + abs(want)), (
                f"antiderivative of {to_sexp(e)} broke at {p}")

    def test_poly(self, rng):
        self.roundtrip(add(pow_(var(1), 3), mul(Const(Fraction(2)), var(1))),
                       1, rng, 1)

    def test_foreign_factor_rides_along(self, rng):
        e = mul(pow_(var(2), 2), sin_(var(1)))
        self.roundtrip(e, 1, rng, 2)

    def test_linear_argument_scaling(self, rng):
        e = cos_(mul(Const(Fraction(3)), var(1)))
        self.roundtrip(e, 1, rng, 1)

    def test_exp_linear(self, rng):
        e = exp_(add(mul(Const(Fraction(-2)), var(1)), var(2)))
        self.roundtrip(e, 1, rng, 2)

    def test_sec(self, rng):
        e = sec_(mul(Const(Fraction(1, 2)), var(1)))
        self.roundtrip(e, 1, rng, 1)

    def test_log(self, rng):
        self.roundtrip(log_(var(1)), 1, rng, 1)

    def test_reciprocal_gives_log(self, rng):
        e = pow_(var(1), -1)
        F = antiderivative(e, 1)
        assert Log(var(1)) in [F] + (list(F.factors)
                                     if isinstance(F, Product) else [])
        self.roundtrip(e, 1, rng, 1)

    def test_constant_in_k(self, rng):
        e = mul(var(2), exp_(var(2)))
        F = antiderivative(e, 1)
        assert F == mul(e, var(1))

    def test_not_closed_form(self):
        with pytest.raises(NotClosedForm):
            antiderivative(exp_(pow_(var(1), 2)), 1)
        with pytest.raises(NotClosedForm):
            antiderivative(mul(sin_(var(1)), exp_(var(1))), 1)


# ---------------------------------------------------------------------------
# simplification semantics


class TestSimplify:
    def test_idempotent(self, rng):
        z1, z2 = var(1), var(2)
        exprs = [
            Sum((Product((z1, z2)), Product((z2, z1)))),
            Product((Sec(z1), Cos(z1), z2)),
            Sum((z1, Const(Fraction(0)), Product((Const(Fraction(1)), z2)))),
            Power(Product((z1, z2)), 3),
        ]
        for e in exprs:
            s1 = simplify(e)
            assert simplify(s1) == s1

    def test_preserves_semantics(self, rng):
        z1, z2, z3 = var(1), var(2), var(3)
        raw = Sum((
            Product((Const(Fraction(2)), z1, Sin(z2))),
            Product((Sin(z2), z1)),
            Product((Sec(z3), Cos(z3), Power(z1, 2))),
            Const(Fraction(-1)),
        ))
        s = simplify(raw)
        for p in sample_points(rng, 64, 3):
            a = evaluate(raw, p)
            b = evaluate(s, p)
            assert abs(a - b) <= 1e-10 * (1 + abs(a))

    def test_combines_across_nesting(self):
        z1 = var(1)
        raw = Sum((Product((Const(Fraction(2)), z1)),
                   Sum((z1, Product((Const(Fraction(-3)), z1))))))
        assert simplify(raw) == Const(Fraction(0))


# ---------------------------------------------------------------------------
# substitution, free vars


class TestStructure:
    def test_free_vars(self):
        e = add(mul(var(1), sin_(var(4))), pow_(var(2), 2))
        assert free_vars(e) == frozenset({1, 2, 4})

    def test_substitute(self, rng):
        e = mul(var(1), cos_(var(2)))
        g = substitute(e, {2: add(var(3), Const(Fraction(1)))})
        for p in sample_points(rng, 8, 3):
            want = p[0] * math.cos(p[2] + 1)
            assert evaluate(g, p) == pytest.approx(want, rel=1e-12)

    def test_substitute_simultaneous(self):
        # swap z1 and z2 in one shot; sequential substitution would differ
        e = add(var(1), mul(Const(Fraction(2)), var(2)))
        g = substitute(e, {1: var(2), 2: var(1)})
        assert evaluate(g, [10.0, 1.0]) == pytest.approx(21.0)


# ---------------------------------------------------------------------------
# Taylor expansion


class TestTaylor:
    def test_sin_about_zero(self):
        got = taylor_monomials(Sin(var(1)), {1: Fraction(0)}, 3)
        assert got == [
            (Fraction(1), ((1, 1),)),
            (Fraction(-1, 6), ((1, 3),)),
        ]

    def test_exp_two_vars(self):
        got = taylor_monomials(Exp(add(var(1), var(2))),
                               {1: Fraction(0), 2: Fraction(0)}, 2)
        want = [
            (Fraction(1), ()),
            (Fraction(1), ((1, 1),)),
            (Fraction(1), ((2, 1),)),
            (Fraction(1), ((1, 2),)),
            (Fraction(1), ((1, 1), (2, 1))),
            (Fraction(1), ((2, 2),)),
        ]
        # coefficients of exp are 1/beta!; check a couple exactly
        as_map = dict((m, c) for c, m in got)
        assert as_map[((1, 2),)] == Fraction(1, 2)
        assert as_map[((1, 1), (2, 1))] == Fraction(1)
        assert set(as_map) == set(m for _, m in want)

    def test_polynomial_is_exact(self, rng):
        e = add(mul(Const(Fraction(3)), pow_(var(1), 2), var(2)),
                mul(Const(Fraction(-1, 2)), pow_(var(2), 3)))
        center = {1: Fraction(1), 2: Fraction(-1)}
        terms = taylor_monomials(e, center, 3)
        rebuilt = add(*[mul(as_expr(c), monomial_expr(m, center))
                        for c, m in terms])
        for p in sample_points(rng, 16, 2, lo=-2.0, hi=2.0):
            a = evaluate(e, p)
            b = evaluate(rebuilt, p)
            assert abs(a - b) <= 1e-10 * (1 + abs(a))

    def test_nonzero_center(self):
        # f(z) = z^2 about z=2: 4 + 4(z-2) + (z-2)^2
        got = taylor_monomials(pow_(var(1), 2), {1: Fraction(2)}, 2)
        assert got == [
            (Fraction(4), ()),
            (Fraction(4), ((1, 1),)),
            (Fraction(1), ((1, 2),)),
        ]

    def test_degree_orders_terms(self):
        e = add(var(1), var(2), mul(var(1), var(2)))
        got = taylor_monomials(e, {1: Fraction(0), 2: Fraction(0)}, 2)
        degrees = [sum(p for _, p in m) for _, m in got]
        assert degrees == sorted(degrees)


# ---------------------------------------------------------------------------
# serialization


class TestSexp:
    def test_roundtrip(self, rng):
        z1, z2 = var(1), var(2)
        exprs = [
            Const(Fraction(-7, 3)),
            Const(0.125),
            add(z1, mul(Const(Fraction(2)), z2)),
            mul(sin_(z1), sec_(z2), pow_(z1, -2)),
            log_(add(exp_(z1), Const(Fraction(1)))),
        ]
        for e in exprs:
            s = simplify(e)
            back = parse_sexp(to_sexp(s))
            assert simplify(back) == s

    def test_float_roundtrip_is_exact(self):
        e = Const(0.1 + 0.2)
        assert parse_sexp(to_sexp(e)) == e

    def test_parse_rejects_garbage(self):
        for bad in ["", "(", "(+ 1)", "(boing 1 2)", "(var 0)",
                    "(var x)", "(^ (var 1) (var 2))", "(sin 1 2)",
                    "1 2", "(+ 1 2))", "1/0", "nan"]:
            with pytest.raises(ParseError):
                parse_sexp(bad)

    def test_parse_rational(self):
        e = parse_sexp("(* 2/3 (var 4))")
        assert evaluate(e, {4: 3.0}) == pytest.approx(2.0)

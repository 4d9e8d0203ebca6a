import random
from fractions import Fraction

import pytest

from deltasym.expr import (
    Add, EvalNumericError, Func, MissingBinding, Mul, NotExact, Param,
    ParseError, Pow, Q, Rat, Var, ZeroDenominator, differentiate,
    eval_exact, eval_numeric, free_symbols, is_probably_zero, is_zero,
    normalize, parse, shift, substitute, to_str, var,
)


def zeq(a, b):
    return is_zero(a - b)


class TestParse:
    def test_three_point_scheme_equation(self):
        e = parse("(u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^N")
        built = (var("u", 1) - 2 * var("u", 0) + var("u", -1)) / (
            var("x", 1) - var("x", 0)) ** Q(2) - var("u", 0) ** Param("N")
        assert zeq(e, built)

    def test_zero(self):
        assert parse("0") == Rat(Fraction(0))

    def test_function_node(self):
        e = parse("exp(2*x[0])")
        assert isinstance(e, Func) and e.name == "exp"

    def test_bare_x_u_alias_shift_zero(self):
        assert parse("x") == var("x", 0)
        assert parse("u") == var("u", 0)

    def test_decimal_is_exact(self):
        assert parse("0.1") == Rat(Fraction(1, 10))

    def test_reserved_symbols(self):
        for name in ("t", "ut", "utt", "ux", "uxt"):
            assert parse(name) == Var(name, None)

    def test_syntax_error_offset(self):
        with pytest.raises(ParseError) as exc:
            parse("x[0] + @")
        assert exc.value.offset == 7

    def test_unknown_function(self):
        with pytest.raises(ParseError):
            parse("tan(x[0])")

    def test_non_integer_shift(self):
        with pytest.raises(ParseError):
            parse("x[1.5]")

    def test_shift_only_for_x_u(self):
        with pytest.raises(ParseError):
            parse("N[1]")


class TestNormalize:
    def test_square_expansion(self):
        e = parse("(x[1]-x[0])^2 - (x[1]^2 - 2*x[1]*x[0] + x[0]^2)")
        assert normalize(e) == Rat(Fraction(0))

    def test_adjoined_sqrt_identity(self):
        # (2+h^2+h*s)/2 * (2+h^2-h*s)/2 == 1 with s^2 -> 4+h^2
        kp = parse("(2+h^2+h*sqrt(4+h^2))/2")
        km = parse("(2+h^2-h*sqrt(4+h^2))/2")
        assert normalize(kp * km - Q(1)) == Rat(Fraction(0))

    def test_exp_merge(self):
        assert normalize(parse("exp(x[0])*exp(-x[0])")) == Rat(Fraction(1))

    def test_idempotent(self):
        for text in [
            "(u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^N",
            "exp(2*x[0])*u[0]/(x[1]-x[0])",
            "sqrt(4+h^2)^3",
            "1/sqrt(2)",
            "sin(x[0])^2/(cos(x[0])+1)",
        ]:
            n1 = normalize(parse(text))
            assert normalize(n1) == n1

    def test_zero_denominator(self):
        with pytest.raises(ZeroDenominator):
            normalize(parse("1/(x[0]-x[0])"))

    def test_exp_ln_folding(self):
        assert zeq(normalize(parse("exp(ln(c3*n+c4))")), parse("c3*n+c4"))
        assert zeq(normalize(parse("exp(ln(y)/2)")), parse("sqrt(y)"))

    def test_same_base_power_merge(self):
        assert is_zero(parse("u[0]^N * u[0]^(-1) - u[0]^(N-1)"))


class TestDifferentiate:
    def test_power_rule_symbolic_exponent(self):
        d = differentiate(parse("u[0]^N"), var("u", 0))
        assert zeq(d, parse("N*u[0]^(N-1)"))

    def test_scheme_equation_wrt_xplus(self):
        # hand differentiation of the quotient term
        e = parse("(u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^N")
        d = differentiate(e, var("x", 1))
        expected = parse("-2*(u[1]-2*u[0]+u[-1])*(x[1]-x[0])^(-3)")
        assert zeq(d, expected)

    def test_independent_symbols(self):
        assert differentiate(parse("exp(2*x[0])"), Var("t", None)) == Rat(Fraction(0))

    def test_chain_rule_through_functions(self):
        d = differentiate(parse("sin(x[0]^2)"), var("x", 0))
        assert zeq(d, parse("2*x[0]*cos(x[0]^2)"))
        d2 = differentiate(parse("sqrt(1+x[0])"), var("x", 0))
        assert zeq(d2, parse("1/(2*sqrt(1+x[0]))"))


class TestSubstitute:
    def test_lattice_on_own_solution(self):
        om = parse("x[1]-2*x[0]+x[-1]")
        r = substitute(om, {var("x", 1): parse("2*x[0]-x[-1]")})
        assert r == Rat(Fraction(0))

    def test_simultaneous_not_sequential(self):
        e = parse("x[0]+x[1]")
        r = substitute(e, {var("x", 0): var("x", 1), var("x", 1): var("x", 0)})
        assert zeq(r, parse("x[0]+x[1]"))

    def test_numeric_binding(self):
        r = substitute(parse("u[0]^N"), {Param("N"): Q(3), var("u", 0): Q(2)})
        assert r == Rat(Fraction(8))


class TestShift:
    def test_lattice_shift_right(self):
        r = shift(parse("x[1]-2*x[0]+x[-1]"), 1)
        assert zeq(r, parse("x[2]-2*x[1]+x[0]"))

    def test_inverse(self):
        e = parse("u[1]*x[-1] + exp(x[0])")
        assert zeq(shift(shift(e, 1), -1), e)

    def test_derivative_symbols_fixed(self):
        assert shift(Var("ut", None), 5) == Var("ut", None)


class TestEvalNumeric:
    def test_growth_constant(self):
        v = eval_numeric(parse("((2+h^2+h*sqrt(4+h^2))/2)^(1/h)"), {"h": 1})
        assert abs(v - (3 + 5 ** 0.5) / 2) < 1e-12

    def test_anharmonic_uniform(self):
        e = parse("(x[2]-x[0])*(x[1]-x[-1])/((x[0]-x[-1])*(x[2]-x[1]))")
        v = eval_numeric(e, {"x[-1]": 0, "x[0]": 1, "x[1]": 2, "x[2]": 3})
        assert abs(v - 4) < 1e-12

    def test_principal_branch(self):
        import cmath
        v = eval_numeric(parse("(-3)^(-3/4)"), {})
        expected = 3 ** (-0.75) * cmath.exp(-1j * 3 * cmath.pi / 4)
        assert abs(v - expected) < 1e-12

    def test_missing_binding(self):
        with pytest.raises(MissingBinding):
            eval_numeric(parse("x[0]+y"), {"x[0]": 1})

    def test_overflow_reported(self):
        with pytest.raises(EvalNumericError):
            eval_numeric(parse("exp(x[0])"), {"x[0]": 1e9})


class TestEvalExact:
    def test_rational_value(self):
        assert eval_exact(parse("(1/2)*x[0]^2"), {"x[0]": Fraction(3)}) == Fraction(9, 2)

    def test_not_exact(self):
        with pytest.raises(NotExact):
            eval_exact(parse("sqrt(2)"), {})


class TestZeroTests:
    def test_probabilistic_fixed_step_identity(self):
        # B^((x+h)/h) - (2+h^2)*B^(x/h) + B^((x-h)/h) with B*B^-1 algebraic
        rng = random.Random(0)
        b = parse("(2+h^2+h*sqrt(4+h^2))/2")
        res = (Pow(b, parse("(x[0]+h)/h"))
               - parse("2+h^2") * Pow(b, parse("x[0]/h"))
               + Pow(b, parse("(x[0]-h)/h")))
        assert is_probably_zero(res, rng)
        assert not is_probably_zero(res + Q(1), rng)

    def test_exact_verdict_for_rational(self):
        rng = random.Random(0)
        assert not is_probably_zero(parse("x[0]-x[1]"), rng)


# ---------------------------------------------------------------------------
# property tests
# ---------------------------------------------------------------------------

from hypothesis import given, settings, strategies as st


def exprs(max_depth=3):
    leaves = st.one_of(
        st.integers(-4, 4).map(Q),
        st.fractions(min_value=-4, max_value=4, max_denominator=6).map(Rat),
        st.sampled_from([var("x", k) for k in (-1, 0, 1)]
                        + [var("u", k) for k in (-1, 0, 1)]
                        + [Var("t", None), Var("ut", None), Param("a"), Param("h")]),
    )

    def extend(children):
        return st.one_of(
            st.tuples(children, children).map(Add),
            st.tuples(children, children, children).map(Add),
            st.tuples(children, children).map(Mul),
            st.tuples(children, st.integers(-2, 3).map(Q)).map(lambda p: Pow(*p)),
            st.tuples(st.sampled_from(["exp", "sin", "cos"]), children).map(
                lambda p: Func(*p)),
        )

    return st.recursive(leaves, extend, max_leaves=2 ** max_depth)


@given(exprs())
@settings(max_examples=150, deadline=None)
def test_print_parse_round_trip(e):
    try:
        n = normalize(e)
    except ZeroDenominator:
        return
    again = normalize(parse(to_str(n)))
    assert again == n


@given(exprs())
@settings(max_examples=150, deadline=None)
def test_normalize_idempotent(e):
    try:
        n = normalize(e)
    except ZeroDenominator:
        return
    assert normalize(n) == n


@given(exprs(), exprs(), st.fractions(min_value=-3, max_value=3, max_denominator=4),
       st.fractions(min_value=-3, max_value=3, max_denominator=4))
@settings(max_examples=80, deadline=None)
def test_differentiation_is_linear(e1, e2, a, b):
    v = var("x", 0)
    try:
        combo = differentiate(Rat(a) * e1 + Rat(b) * e2, v)
        parts = Rat(a) * differentiate(e1, v) + Rat(b) * differentiate(e2, v)
        assert is_zero(combo - parts)
    except ZeroDenominator:
        return


@given(exprs(), st.integers(-3, 3), st.integers(-3, 3))
@settings(max_examples=100, deadline=None)
def test_shift_is_a_group_action(e, j, k):
    try:
        assert shift(e, j + k) == shift(shift(e, j), k)
    except ZeroDenominator:
        return


@given(exprs())
@settings(max_examples=60, deadline=None)
def test_normalize_agrees_with_eval(e):
    rng = random.Random(12345)
    try:
        n = normalize(e)
    except ZeroDenominator:
        return
    syms = set(free_symbols(e)) | set(free_symbols(n))
    checked = 0
    for _ in range(60):
        if checked >= 20:
            break
        env = {}
        for s in syms:
            from deltasym.expr import symbol_name
            r = 0.5 + 1.5 * rng.random()
            th = 2 * 3.141592653589793 * rng.random()
            import cmath
            env[symbol_name(s)] = r * cmath.exp(1j * th)
        try:
            v1 = eval_numeric(e, env)
            v2 = eval_numeric(n, env)
        except (EvalNumericError, ZeroDenominator):
            continue
        assert abs(v1 - v2) < 1e-9 * (1 + abs(v1))
        checked += 1

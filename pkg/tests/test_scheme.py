import math
import random

import pytest

from deltasym.expr import (
    Q, Var, is_zero, normalize, parse, substitute, to_str, var,
)
from deltasym.scheme import (
    DDELTA, PURE, Scheme, SchemeError, check_solvability, discrete_derivative,
    load_scheme, loads_scheme, make_scheme, on_shell, solve_linear,
)

POWER_SCHEME = """
[scheme]
name = power-nonlinearity
kind = difference
[equations]
E = (u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^N
Omega = x[1]-2*x[0]+x[-1]
[params]
N: exclude 0,1
"""

FOUR_POINT_SCHEME = """
[scheme]
name = third-difference-quadratic
[equations]
E = u[2]-3*u[1]+3*u[0]-u[-1]
Omega = x[2]-3*x[1]+3*x[0]-x[-1]
"""

VOLTERRA_SCHEME = """
[scheme]
name = volterra
kind = ddelta
[equations]
E = ut + u[0]*(u[1]-u[-1])/(x[1]-x[-1])
Omega = x[1]-2*x[0]+x[-1]
"""

FORCED_SECOND_ORDER = """
[scheme]
name = cubic-inverse-forcing
kind = ddelta
[equations]
E = utt - (x[1]-x[0])^6/(u[1]-2*u[0]+u[-1])^3
Omega = x[1]-2*x[0]+x[-1]
"""

# lattice equation couples u values, so the supplied plan eliminates the
# pair (u[1], u[-1]) from the linear 2x2 system instead of (x[1], u[1])
RATIO_LATTICE_SCHEME = """
[scheme]
name = sl2-invariant-cubic
[equations]
E = ((x[0]-x[-1])*(u[1]-u[0]) - (x[1]-x[0])*(u[0]-u[-1]))/((x[1]-x[0])*(x[0]-x[-1])*(x[1]-x[-1])) - 2*(x[1]-x[0])*(x[0]-x[-1])/((x[1]-x[-1])^2*u[0]^3)
Omega = (x[0]-x[-1])*u[1] - (x[1]-x[0])*u[-1]
[elimination]
u[1] = ((x[1]-x[-1])*u[0] + 2*(x[1]-x[0])^2*(x[0]-x[-1])^2/((x[1]-x[-1])*u[0]^3))/(2*(x[0]-x[-1]))
u[-1] = ((x[1]-x[-1])*u[0] + 2*(x[1]-x[0])^2*(x[0]-x[-1])^2/((x[1]-x[-1])*u[0]^3))/(2*(x[1]-x[0]))
"""


class TestLoad:
    def test_three_point_power_scheme(self):
        s = loads_scheme(POWER_SCHEME)
        assert (s.M, s.N) == (1, 1)
        assert s.kind == PURE
        assert s.param_names() == ("N",)

    def test_four_point_scheme(self):
        s = loads_scheme(FOUR_POINT_SCHEME)
        assert (s.M, s.N) == (1, 2)

    def test_ddelta_highest_derivative(self):
        s = loads_scheme(VOLTERRA_SCHEME)
        assert s.kind == DDELTA
        assert s.deriv_order == 1
        assert s.plan.steps[0].target == Var("ut", None)

    def test_lattice_with_t_derivative_rejected(self):
        with pytest.raises(SchemeError):
            loads_scheme("[equations]\nE = u[1]-u[0]\nOmega = x[1]-x[0]-ut\n")

    def test_wrong_elimination_rejected(self):
        text = POWER_SCHEME + "[elimination]\nu[1] = u[0]\nx[1] = 2*x[0]-x[-1]\n"
        with pytest.raises(SchemeError):
            loads_scheme(text)

    def test_fixed_param_substituted(self):
        s = loads_scheme(POWER_SCHEME.replace("N: exclude 0,1", "N = 3"))
        assert "N" not in [p.name for p in s.params]
        assert is_zero(s.E - parse("(u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^3"))

    def test_supplied_plan_for_coupled_lattice(self):
        s = loads_scheme(RATIO_LATTICE_SCHEME)
        assert len(s.plan.steps) == 2
        assert is_zero(on_shell(s, s.E))
        assert is_zero(on_shell(s, s.Omega))


class TestOnShell:
    def test_lattice_reduces_to_zero(self):
        s = loads_scheme(POWER_SCHEME)
        assert on_shell(s, s.Omega) == Q(0)

    def test_leading_x(self):
        s = loads_scheme(POWER_SCHEME)
        assert is_zero(on_shell(s, var("x", 1)) - parse("2*x[0]-x[-1]"))

    def test_volterra_ut_eliminated(self):
        s = loads_scheme(VOLTERRA_SCHEME)
        r = on_shell(s, Var("ut", None))
        expected = substitute(parse("-u[0]*(u[1]-u[-1])/(x[1]-x[-1])"),
                              {var("x", 1): parse("2*x[0]-x[-1]")})
        assert is_zero(r - expected)
        # utt is not part of this scheme's plan and passes through untouched
        assert on_shell(s, Var("utt", None)) == Var("utt", None)

    def test_idempotent(self):
        s = loads_scheme(POWER_SCHEME)
        e = parse("u[1]^2 + x[1]*u[0]")
        assert on_shell(s, on_shell(s, e)) == on_shell(s, e)

    def test_back_substitution_exact(self):
        for text in (POWER_SCHEME, FOUR_POINT_SCHEME, VOLTERRA_SCHEME,
                     FORCED_SECOND_ORDER, RATIO_LATTICE_SCHEME):
            s = loads_scheme(text)
            assert is_zero(on_shell(s, s.E))
            assert is_zero(on_shell(s, s.Omega))


class TestSolvability:
    def test_power_scheme_passes(self):
        s = loads_scheme(POWER_SCHEME)
        rep = check_solvability(s, trials=8)
        assert rep.passed and not rep.degenerate

    def test_rank_deficient_fails(self):
        E = parse("u[1]-u[0]")
        s = Scheme(name="degenerate", kind=PURE, E=E, Omega=E,
                   plan=None, M=0, N=1, e_span=(0, 1), o_span=(0, 1))
        rep = check_solvability(s, trials=4)
        assert not rep.passed
        assert rep.degenerate

    def test_forced_scheme_passes(self):
        s = loads_scheme(FORCED_SECOND_ORDER)
        rep = check_solvability(s, trials=8)
        assert rep.passed


class TestDiscreteDerivatives:
    def test_second_difference_of_quadratic(self):
        d = discrete_derivative("uxx")
        sub = {var("u", k): parse(f"x[{k}]^2") for k in (-1, 0, 1)}
        assert substitute(d, sub) == Q(2)

    def test_third_difference_of_cubic(self):
        d = discrete_derivative("uxxx")
        sub = {var("u", k): parse(f"x[{k}]^3") for k in (-1, 0, 1, 2)}
        assert substitute(d, sub) == Q(6)

    def test_forward_difference_value(self):
        from deltasym.expr import eval_numeric
        v = eval_numeric(discrete_derivative("ux"),
                         {"x[0]": 0, "x[1]": 1, "u[0]": 0, "u[1]": 5})
        assert abs(v - 5) < 1e-12

    def test_third_equals_scaled_alternant(self):
        # 6 * I / prod(differences) is the same divided difference
        I = parse("-(u[1]-u[0])*(x[2]-x[0])*(x[0]-x[-1])*(x[2]-x[-1])"
                  "+ (u[2]-u[0])*(x[1]-x[0])*(x[0]-x[-1])*(x[1]-x[-1])"
                  "+ (u[0]-u[-1])*(x[1]-x[0])*(x[2]-x[0])*(x[2]-x[1])")
        P = parse("(x[2]-x[-1])*(x[2]-x[0])*(x[2]-x[1])"
                  "*(x[1]-x[-1])*(x[1]-x[0])*(x[0]-x[-1])")
        assert is_zero(discrete_derivative("uxxx") - Q(6) * I / P)

    def test_convergence_order(self):
        # second divided difference of exp on a uniform lattice
        from deltasym.expr import eval_numeric
        d = discrete_derivative("uxx")
        errs = []
        for h in (0.1, 0.05):
            env = {"x[-1]": -h, "x[0]": 0.0, "x[1]": h,
                   "u[-1]": math.exp(-h), "u[0]": 1.0, "u[1]": math.exp(h)}
            errs.append(abs(eval_numeric(d, env) - 1.0))
        order = math.log2(errs[0] / errs[1])
        assert 0.8 <= order <= 2.2

    def test_unknown_kind(self):
        with pytest.raises(SchemeError):
            discrete_derivative("nope")


class TestSolveLinear:
    def test_solves_shifted_forms(self):
        r = solve_linear(parse("x[1]-2*x[0]+x[-1]"), var("x", 1))
        assert is_zero(r - parse("2*x[0]-x[-1]"))

    def test_rejects_nonlinear(self):
        with pytest.raises(SchemeError):
            solve_linear(parse("x[1]^2-x[0]"), var("x", 1))

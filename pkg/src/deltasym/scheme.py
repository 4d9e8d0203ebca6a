"""Difference schemes: an equation E=0 paired with a lattice equation Omega=0.

A scheme carries its stencil extents, a validated elimination plan used to
reduce expressions onto the solution manifold (``on_shell``), random
solvability checks of the step Jacobians, and the divided-difference
building blocks.

Scheme files are INI-style::

    [scheme]
    name = power-nonlinearity
    kind = difference            ; or ddelta

    [equations]
    E = (u[1]-2*u[0]+u[-1])/(x[1]-x[0])^2 - u[0]^N
    Omega = x[1]-2*x[0]+x[-1]

    [params]
    N: exclude 0,1               ; or `h: range 0.5..2` or `N = 3`

    [elimination]                ; optional, auto-derived when omitted
    u[1] = 2*u[0]-u[-1]+(x[1]-x[0])^2*u[0]^N
    x[1] = 2*x[0]-x[-1]

The elimination plan must solve every shifted copy of E and Omega whose
stencil fits inside the window [-M, N]; this is checked by back
substitution at load time.  Auto-derivation succeeds when the equations
are degree 1 in their default targets (u at the leading edge from E, x at
the leading edge from Omega, or the highest t-derivative from E for a
differential-difference scheme).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import rng as rngmod
from .expr import (
    Expr, Func, MissingBinding, Param, Pow, Q, Rat, Var, ZeroDenominator,
    EvalNumericError, differentiate, eval_numeric, free_symbols, is_zero,
    is_probably_zero, normalize, parse, shift, substitute, symbol_name,
    to_str, var,
)

PURE = "difference"
DDELTA = "ddelta"


class SchemeError(Exception):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    exclude: tuple = ()
    lo: Fraction = Fraction(1, 2)
    hi: Fraction = Fraction(2)

    def sample(self, rng: random.Random, exact: bool = False):
        for _ in range(200):
            if exact:
                if self.exclude:
                    v = rngmod.rational_int_sample(rng, 2, 6, self.exclude)
                else:
                    span = self.hi - self.lo
                    v = self.lo + Fraction(rng.randint(0, 16), 16) * span
            else:
                v = float(self.lo) + (float(self.hi) - float(self.lo)) * rng.random()
            if all(abs(float(v) - float(x)) > 1e-6 for x in self.exclude):
                return v
        raise SchemeError(f"cannot sample parameter {self.name}")


@dataclass(frozen=True)
class Substitution:
    target: Var
    replacement: Expr


@dataclass(frozen=True)
class EliminationPlan:
    steps: tuple

    def composed(self):
        """The sequential steps folded into one simultaneous substitution:
        earlier replacements absorb the later targets occurring in them."""
        cache = getattr(self, "_composed", None)
        if cache is None:
            cache = {}
            for i, s in enumerate(self.steps):
                rep = s.replacement
                for later in self.steps[i + 1:]:
                    rep = substitute(rep, {later.target: later.replacement})
                cache[s.target] = rep
            object.__setattr__(self, "_composed", cache)
        return cache

    def apply(self, e: Expr) -> Expr:
        return substitute(e, self.composed())

    def targets(self):
        return tuple(s.target for s in self.steps)


@dataclass(frozen=True)
class Scheme:
    name: str
    kind: str
    E: Expr
    Omega: Expr
    params: tuple = ()
    plan: EliminationPlan = None
    # stencil data, filled in by make_scheme
    M: int = 0
    N: int = 0
    e_span: tuple = (0, 0)
    o_span: tuple = (0, 0)
    deriv_order: int = 0  # 0, 1 (ut), 2 (utt)

    def param_names(self):
        return tuple(p.name for p in self.params)

    def e_instances(self):
        """Shifts j such that shift(E, j) fits in the window [-M, N]."""
        if self.kind == DDELTA:
            return (0,)
        lo, hi = self.e_span
        return tuple(range(-self.M - lo, self.N - hi + 1))

    def o_instances(self):
        lo, hi = self.o_span
        return tuple(range(-self.M - lo, self.N - hi + 1))


def _span(e: Expr):
    shifts = [s.shift for s in free_symbols(e) if isinstance(s, Var) and s.shift is not None]
    if not shifts:
        return (0, 0)
    return (min(shifts), max(shifts))


def _uspan(e: Expr, base: str):
    shifts = [s.shift for s in free_symbols(e)
              if isinstance(s, Var) and s.shift is not None and s.name == base]
    if not shifts:
        return None
    return (min(shifts), max(shifts))


def _deriv_symbols(e: Expr):
    return {s.name for s in free_symbols(e) if isinstance(s, Var) and s.shift is None}


def solve_linear(eq: Expr, target: Var) -> Expr:
    """Solve eq == 0 for target when eq is degree 1 in target."""
    a = differentiate(eq, target)
    if is_zero(a):
        raise SchemeError(f"{symbol_name(target)} does not appear in equation")
    if not is_zero(differentiate(a, target)):
        raise SchemeError(f"equation is not degree 1 in {symbol_name(target)}")
    b = normalize(eq - a * target)
    if target in free_symbols(b):
        raise SchemeError(f"equation is not degree 1 in {symbol_name(target)}")
    return normalize(Q(-1) * b / a)


def _auto_plan(kind, E, Omega, e_span, o_span, M, N, deriv_order):
    steps = []
    if kind == DDELTA:
        target = Var("utt", None) if deriv_order == 2 else Var("ut", None)
        steps.append(Substitution(target, solve_linear(E, target)))
    else:
        ulo, uhi = _uspan(E, "u") or (0, 0)
        lo, hi = e_span
        inst = range(-M - lo, N - hi + 1)
        for j in sorted(inst, reverse=True):
            tgt = var("u", (uhi if j >= 0 else ulo) + j)
            steps.append(Substitution(tgt, solve_linear(shift(E, j), tgt)))
    xlo, xhi = _uspan(Omega, "x") or (0, 0)
    lo, hi = o_span
    inst = range(-M - lo, N - hi + 1)
    for j in sorted(inst, reverse=True):
        tgt = var("x", (xhi if j >= 0 else xlo) + j)
        steps.append(Substitution(tgt, solve_linear(shift(Omega, j), tgt)))
    return EliminationPlan(tuple(steps))


def _validate_plan(s: Scheme):
    eqs = [shift(s.E, j) for j in s.e_instances()]
    eqs += [shift(s.Omega, j) for j in s.o_instances()]
    if len(s.plan.steps) != len(eqs):
        raise SchemeError(
            f"elimination plan has {len(s.plan.steps)} steps but the window "
            f"holds {len(eqs)} equation instances")
    tgts = s.plan.targets()
    if len(set(tgts)) != len(tgts):
        raise SchemeError("elimination plan repeats a target")
    check_rng = rngmod.substream(0, f"plan-check:{s.name}")
    for eq in eqs:
        r = s.plan.apply(eq)
        if not is_probably_zero(r, check_rng):
            raise SchemeError(
                f"elimination plan does not solve the scheme: residual {to_str(r)}")


def make_scheme(name, kind, E, Omega, params=(), plan=None) -> Scheme:
    E = normalize(E)
    Omega = normalize(Omega)
    dsyms_o = _deriv_symbols(Omega)
    if dsyms_o & {"ut", "utt", "ux", "uxt"}:
        raise SchemeError("the lattice equation may not contain t-derivatives")
    dsyms_e = _deriv_symbols(E)
    if dsyms_e & {"ux", "uxt"}:
        raise SchemeError("ux/uxt are prolongation symbols, not scheme variables")
    if kind == PURE and dsyms_e & {"t", "ut", "utt"}:
        raise SchemeError("a pure difference scheme may not contain t or t-derivatives")
    if kind not in (PURE, DDELTA):
        raise SchemeError(f"unknown scheme kind {kind!r}")
    deriv_order = 2 if "utt" in dsyms_e else (1 if "ut" in dsyms_e else 0)
    if kind == DDELTA and deriv_order == 0:
        raise SchemeError("a ddelta scheme must contain ut or utt")

    e_span, o_span = _span(E), _span(Omega)
    M = max(-e_span[0], -o_span[0], 0)
    N = max(e_span[1], o_span[1], 0)
    if plan is None:
        plan = _auto_plan(kind, E, Omega, e_span, o_span, M, N, deriv_order)
    s = Scheme(name=name, kind=kind, E=E, Omega=Omega, params=tuple(params),
               plan=plan, M=M, N=N, e_span=e_span, o_span=o_span,
               deriv_order=deriv_order)
    _validate_plan(s)
    return s


def on_shell(s: Scheme, e: Expr) -> Expr:
    """Reduce e onto the solution manifold of the scheme."""
    return normalize(s.plan.apply(e))


# ---------------------------------------------------------------------------
# scheme files
# ---------------------------------------------------------------------------

def _read_sections(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line.strip().startswith("[") and line.strip().endswith("]"):
            current = line.strip()[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise SchemeError(f"line {lineno}: content outside any section")
        sections[current].append((lineno, line.strip()))
    return sections


def _parse_param_line(line):
    if ":" in line and "=" not in line.split(":", 1)[0]:
        name, spec = (p.strip() for p in line.split(":", 1))
        if spec.startswith("exclude"):
            vals = tuple(Fraction(v.strip()) for v in spec[len("exclude"):].split(","))
            return ParamSpec(name, exclude=vals), None
        if spec.startswith("range"):
            lo, hi = spec[len("range"):].split("..")
            return ParamSpec(name, lo=Fraction(lo.strip()), hi=Fraction(hi.strip())), None
        raise SchemeError(f"bad parameter spec {line!r}")
    if "=" in line:
        name, val = (p.strip() for p in line.split("=", 1))
        return None, (name, parse(val))
    raise SchemeError(f"bad parameter line {line!r}")


def loads_scheme(text, name=None) -> Scheme:
    sec = _read_sections(text)
    if "equations" not in sec:
        raise SchemeError("missing [equations] section")
    meta = dict()
    for _ln, line in sec.get("scheme", []):
        if "=" not in line:
            raise SchemeError(f"bad [scheme] line {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        meta[k.lower()] = v
    kind = {"difference": PURE, "ddelta": DDELTA}.get(meta.get("kind", "difference"))
    if kind is None:
        raise SchemeError(f"unknown kind {meta.get('kind')!r}")
    sname = name or meta.get("name", "unnamed")

    eqs = {}
    for _ln, line in sec["equations"]:
        if "=" not in line:
            raise SchemeError(f"bad equation line {line!r}")
        k, v = (p.strip() for p in line.split("=", 1))
        eqs[k] = parse(v)
    if "E" not in eqs or "Omega" not in eqs:
        raise SchemeError("equations must define E and Omega")
    E, Omega = eqs["E"], eqs["Omega"]

    params, fixed = [], {}
    for _ln, line in sec.get("params", []):
        spec, fix = _parse_param_line(line)
        if spec is not None:
            params.append(spec)
        else:
            fixed[Param(fix[0])] = fix[1]
    if fixed:
        E = substitute(E, fixed)
        Omega = substitute(Omega, fixed)

    plan = None
    if "elimination" in sec:
        steps = []
        for _ln, line in sec["elimination"]:
            if "=" not in line:
                raise SchemeError(f"bad elimination line {line!r}")
            lhs, rhs = (p.strip() for p in line.split("=", 1))
            tgt = parse(lhs)
            if not isinstance(tgt, Var):
                raise SchemeError(f"elimination target must be a variable: {lhs!r}")
            rep = parse(rhs)
            if fixed:
                rep = substitute(rep, fixed)
            steps.append(Substitution(tgt, normalize(rep)))
        plan = EliminationPlan(tuple(steps))

    return make_scheme(sname, kind, E, Omega, tuple(params), plan)


def load_scheme(path) -> Scheme:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_scheme(fh.read())


# ---------------------------------------------------------------------------
# solvability
# ---------------------------------------------------------------------------

@dataclass
class SolvabilityReport:
    passed: bool
    degenerate: bool
    min_abs_det: float
    trials: int
    details: dict = field(default_factory=dict)


def _det_pair(s: Scheme, side: str):
    if side == "N":
        je = s.N - s.e_span[1]
        jo = s.N - s.o_span[1]
        xv, uv = var("x", s.N), var("u", s.N)
    else:
        je = -s.M - s.e_span[0]
        jo = -s.M - s.o_span[0]
        xv, uv = var("x", -s.M), var("u", -s.M)
    Es, Os = shift(s.E, je), shift(s.Omega, jo)
    det = normalize(differentiate(Es, xv) * differentiate(Os, uv)
                    - differentiate(Es, uv) * differentiate(Os, xv))
    return det


def scheme_sample_env(s: Scheme, symbols, rng, exact=False):
    """Random environment for the given symbols honouring parameter specs."""
    specs = {p.name: p for p in s.params}
    env = {}
    for sym in symbols:
        nm = symbol_name(sym)
        if isinstance(sym, Param) and nm in specs:
            env[nm] = specs[nm].sample(rng, exact=exact)
        elif exact:
            env[nm] = rngmod.rational_sample(rng)
        else:
            env[nm] = rngmod.complex_sample(rng)
    return env


def check_solvability(s: Scheme, trials: int = 10, rng=None) -> SolvabilityReport:
    """Sample both step Jacobian determinants; pass iff all |det| > 1e-9."""
    if rng is None:
        rng = rngmod.substream(0, f"solvability:{s.name}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    dets = {side: _det_pair(s, side) for side in ("N", "M")}
    min_abs = float("inf")
    passed = True
    degenerate = {}
    details = {}
    for side, det in dets.items():
        if is_zero(det):
            degenerate[side] = True
            details[side] = {"det": "0", "values": []}
            passed = False
            continue
        degenerate[side] = False
        syms = free_symbols(det)
        values = []
        got = 0
        attempts = 0
        while got < trials and attempts < 100 * trials:
            attempts += 1
            env = scheme_sample_env(s, syms, rng)
            try:
                v = eval_numeric(det, env)
            except (EvalNumericError, ZeroDenominator, MissingBinding):
                continue
            values.append(abs(v))
            got += 1
        if not values:
            passed = False
            degenerate[side] = True
        else:
            m = min(values)
            min_abs = min(min_abs, m)
            if m <= 1e-9:
                passed = False
        details[side] = {"det": to_str(det), "values": values}
    return SolvabilityReport(
        passed=passed,
        degenerate=any(degenerate.values()),
        min_abs_det=(min_abs if min_abs != float("inf") else 0.0),
        trials=trials,
        details=details,
    )


# ---------------------------------------------------------------------------
# discrete derivatives (divided differences on the stencil)
# ---------------------------------------------------------------------------

_D1 = parse("(u[1]-u[0])/(x[1]-x[0])")            # forward at the base point
_D1_LOWER = parse("(u[0]-u[-1])/(x[0]-x[-1])")    # backward at the base point
_D1_UPPER = parse("(u[2]-u[1])/(x[2]-x[1])")      # forward one step up

DISCRETE_DERIVATIVES = {
    "ux": _D1,
    "ux_lower": _D1_LOWER,
    "ux_upper": _D1_UPPER,
    # centered second difference over three points
    "uxx": normalize(Q(2) * (_D1 - _D1_LOWER) / parse("x[1]-x[-1]")),
    # same centered expression under its four-point-family name
    "uxx_lower": normalize(Q(2) * (_D1 - _D1_LOWER) / parse("x[1]-x[-1]")),
    # upper second difference on the four-point stencil
    "uxx_upper": normalize(Q(2) * (_D1_UPPER - _D1) / parse("x[2]-x[0]")),
}
DISCRETE_DERIVATIVES["uxxx"] = normalize(
    Q(3) * (DISCRETE_DERIVATIVES["uxx_upper"] - DISCRETE_DERIVATIVES["uxx_lower"])
    / parse("x[2]-x[-1]"))


def discrete_derivative(kind: str) -> Expr:
    """Divided-difference expression over the stencil, e.g. ``ux`` is
    (u[1]-u[0])/(x[1]-x[0])."""
    try:
        return DISCRETE_DERIVATIVES[kind]
    except KeyError:
        raise SchemeError(
            f"unknown discrete derivative {kind!r}; "
            f"choose from {sorted(DISCRETE_DERIVATIVES)}")

"""Vector fields, discrete prolongation, and symmetry verification/search.

A point vector field xi*d/dx + tau*d/dt + phi*d/du acts on a scheme's
window through its prolongation: a copy of xi and phi at every lattice
point of the stencil, plus the classical first and second t-derivative
coefficients, which introduce ux and uxt as auxiliary on-shell
coordinates.

A field is a symmetry when both determining residuals (the prolonged
field applied to E and to Omega, reduced on shell) vanish identically.
``find_symmetries`` turns the search into linear algebra: residuals are
linear in (xi, tau, phi), so sampling an ansatz's residuals at random
on-shell points and computing the nullspace of the resulting matrix
yields the symmetry coefficients, which are then re-verified one by one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng as rngmod
from .expr import (
    Expr, EvalNumericError, Func, MissingBinding, Mul, Param, Pow, Q, Rat,
    Var, ZeroDenominator, NotExact, collect_powers, contains_opaque,
    differentiate, eval_exact, eval_numeric, free_symbols, is_zero,
    normalize, parse, shift, substitute, symbol_name, to_str, try_divide, var,
)
from .scheme import DDELTA, PURE, Scheme, scheme_sample_env

X0 = var("x", 0)
U0 = var("u", 0)
T = Var("t", None)
UT = Var("ut", None)
UTT = Var("utt", None)
UX = Var("ux", None)
UXT = Var("uxt", None)


class FieldError(Exception):
    pass


class SamplingDegenerate(Exception):
    """Raised when two independent sampling draws disagree on the rank."""


@dataclass(frozen=True)
class VectorField:
    xi: Expr = Q(0)
    tau: Expr = Q(0)
    phi: Expr = Q(0)
    name: str = ""

    def __post_init__(self):
        allowed_xi = {X0, U0, T}
        for label, e, allowed in (("xi", self.xi, allowed_xi),
                                  ("tau", self.tau, {T}),
                                  ("phi", self.phi, allowed_xi)):
            for s in free_symbols(e):
                if isinstance(s, Param):
                    continue
                if s not in allowed:
                    raise FieldError(
                        f"{label} may not depend on {symbol_name(s)}")

    def is_trivial(self):
        return is_zero(self.xi) and is_zero(self.tau) and is_zero(self.phi)

    def describe(self):
        parts = []
        for label, e in (("xi", self.xi), ("tau", self.tau), ("phi", self.phi)):
            if not is_zero(e):
                parts.append(f"{label}={to_str(normalize(e))}")
        body = "; ".join(parts) if parts else "0"
        return (f"{self.name}: " if self.name else "") + body


def make_field(xi="0", tau="0", phi="0", name="") -> VectorField:
    conv = lambda v: parse(v) if isinstance(v, str) else v
    return VectorField(normalize(conv(xi)), normalize(conv(tau)),
                       normalize(conv(phi)), name)


def _check_field_for_scheme(X: VectorField, s: Scheme):
    if s.kind == PURE:
        if not is_zero(X.tau):
            raise FieldError("a pure difference scheme admits no tau component")
        for e in (X.xi, X.phi):
            if T in free_symbols(e):
                raise FieldError("a pure difference scheme admits no t dependence")


# ---------------------------------------------------------------------------
# prolongation
# ---------------------------------------------------------------------------

def _total_t(f: Expr) -> Expr:
    """Total t-derivative treating u, ut, ux as functions of t with x fixed."""
    return normalize(differentiate(f, T)
                     + differentiate(f, U0) * UT
                     + differentiate(f, UT) * UTT
                     + differentiate(f, UX) * UXT)


@dataclass(frozen=True)
class ProlongedField:
    base: VectorField
    M: int
    N: int
    order_t: int
    coeffs: tuple  # ((slot, Expr), ...) with slot ('x',k) | ('u',k) | 't' | 'ut' | 'utt'

    def coeff(self, slot):
        for s, e in self.coeffs:
            if s == slot:
                return e
        return Q(0)


def prolong(X: VectorField, M: int, N: int, order_t: int = 0) -> ProlongedField:
    """Extend the field to the stencil [-M, N] and the t-derivatives."""
    if M < 0 or N < 0:
        raise ValueError("stencil extents must be nonnegative")
    coeffs = [("t", normalize(X.tau))]
    for k in range(-M, N + 1):
        coeffs.append((("x", k), shift(X.xi, k)))
    for k in range(-M, N + 1):
        coeffs.append((("u", k), shift(X.phi, k)))
    if order_t >= 1:
        phi_t = normalize(_total_t(X.phi) - _total_t(X.xi) * UX
                          - _total_t(X.tau) * UT)
        coeffs.append(("ut", phi_t))
        if order_t >= 2:
            phi_tt = normalize(_total_t(phi_t) - _total_t(X.xi) * UXT
                               - _total_t(X.tau) * UTT)
            coeffs.append(("utt", phi_tt))
    return ProlongedField(X, M, N, order_t, tuple(coeffs))


_SLOT_VAR = {"t": T, "ut": UT, "utt": UTT}


def _slot_var(slot):
    if isinstance(slot, tuple):
        return var(slot[0], slot[1])
    return _SLOT_VAR[slot]


def apply_prolonged(P: ProlongedField, e: Expr, derivs=None) -> Expr:
    """Directional derivative of e along the prolonged field."""
    pairs = []
    for slot, c in P.coeffs:
        if is_zero(c):
            continue
        v = _slot_var(slot)
        d = derivs.get(v) if derivs is not None else None
        if d is None:
            d = differentiate(e, v)
            if derivs is not None:
                derivs[v] = d
        if is_zero(d):
            continue
        pairs.append((c, d))
    from .expr import linear_combination
    return linear_combination(pairs)


# ---------------------------------------------------------------------------
# determining-equation residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Residual:
    rE: Expr
    rOmega: Expr
    components: tuple  # ((label, Expr), ...) all of which must vanish


def _onshell_apply(P: ProlongedField, e: Expr, s: Scheme, derivs) -> Expr:
    """on_shell(pr X e), substituting term by term.

    The elimination map is a ring homomorphism, so reducing each
    coefficient and each partial derivative before summing gives the same
    residual while keeping every intermediate expression small.
    """
    comp = s.plan.composed()
    pairs = []
    for slot, c in P.coeffs:
        if is_zero(c):
            continue
        v = _slot_var(slot)
        cached = derivs.get(v)
        if cached is None:
            d = differentiate(e, v)
            ds = substitute(d, comp) if not is_zero(d) else d
            cached = ds
            derivs[v] = cached
        if is_zero(cached):
            continue
        pairs.append((substitute(c, comp), cached))
    from .expr import linear_combination
    return linear_combination(pairs)


def onshell_residual(X: VectorField, s: Scheme, _derivs=None) -> Residual:
    """pr X applied to E and Omega, reduced onto the solution manifold.

    For a differential-difference scheme the E-residual is additionally
    split into coefficients of the surviving t-derivative symbols
    (ut, ux, uxt), each of which must vanish separately.
    """
    _check_field_for_scheme(X, s)
    P = prolong(X, s.M, s.N, order_t=(s.deriv_order if s.kind == DDELTA else 0))
    if _derivs is None:
        _derivs = {"E": {}, "Omega": {}}
    rE = _onshell_apply(P, s.E, s, _derivs["E"])
    rO = _onshell_apply(P, s.Omega, s, _derivs["Omega"])
    comps = []
    if s.kind == DDELTA:
        tsyms = [v for v in (UT, UX, UXT) if v in free_symbols(rE)]
        if tsyms:
            try:
                for idx, coeff in collect_powers(rE, tsyms):
                    label = "E"
                    for v, p in zip(tsyms, idx):
                        if p:
                            label += f":{symbol_name(v)}^{p}" if p > 1 else f":{symbol_name(v)}"
                    comps.append((label, coeff))
            except Exception:
                comps.append(("E", rE))
        else:
            comps.append(("E", rE))
    else:
        comps.append(("E", rE))
    comps.append(("Omega", rO))
    return Residual(rE, rO, tuple(comps))


def on_shell_expr(s: Scheme, e: Expr) -> Expr:
    return normalize(s.plan.apply(e))


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

@dataclass
class VerifyResult:
    holds: bool
    field: VectorField
    witness: object = None  # (component label, env, value) when it fails
    sampled: bool = False   # True when the verdict needed numeric sampling


def verify_symmetry(X: VectorField, s: Scheme, rng=None, tol: float = 1e-9,
                    points: int = 50) -> VerifyResult:
    """Check pr X E = pr X Omega = 0 on shell, exactly when possible."""
    if rng is None:
        rng = rngmod.substream(0, f"verify:{s.name}:{X.name}")
    res = onshell_residual(X, s)
    sampled = False
    for label, comp in res.components:
        if is_zero(comp):
            continue
        syms = free_symbols(comp)
        if not contains_opaque(comp):
            # exact nonzero: sample only to produce a witness
            w = _find_witness(comp, syms, s, rng, tol, attempts=200)
            return VerifyResult(False, X, witness=(label, *(w or ((), 0.0))))
        sampled = True
        ok = 0
        attempts = 0
        while ok < points and attempts < 100 * points:
            attempts += 1
            env = scheme_sample_env(s, syms, rng)
            try:
                v = eval_numeric(comp, env)
            except (EvalNumericError, ZeroDenominator, MissingBinding):
                continue
            if abs(v) > tol:
                return VerifyResult(False, X, witness=(label, _fmt_env(env), v),
                                    sampled=True)
            ok += 1
        if ok < points:
            return VerifyResult(False, X, witness=(label, (), float("nan")),
                                sampled=True)
    return VerifyResult(True, X, sampled=sampled)


def _find_witness(comp, syms, s, rng, tol, attempts=200):
    for _ in range(attempts):
        env = scheme_sample_env(s, syms, rng)
        try:
            v = eval_numeric(comp, env)
        except (EvalNumericError, ZeroDenominator, MissingBinding):
            continue
        if abs(v) > tol:
            return (_fmt_env(env), v)
    return None


def _fmt_env(env):
    return tuple(sorted(env.items()))


# ---------------------------------------------------------------------------
# linear-ansatz symmetry finder
# ---------------------------------------------------------------------------

SLOTS = ("xi", "tau", "phi")


@dataclass(frozen=True)
class AnsatzTerm:
    slot: str
    basis: Expr

    def unit_field(self, index):
        kw = {self.slot: self.basis}
        return VectorField(**{**{"xi": Q(0), "tau": Q(0), "phi": Q(0)}, **kw},
                           name=f"c{index}")


@dataclass
class FindResult:
    basis: tuple
    exact: bool
    warnings: tuple = ()

    @property
    def dimension(self):
        return len(self.basis)


def load_ansatz(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ansatz(fh.read())


def parse_ansatz(text):
    terms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise FieldError(f"ansatz line {lineno}: expected 'slot: expr'")
        slot, e = (p.strip() for p in line.split(":", 1))
        if slot not in SLOTS:
            raise FieldError(f"ansatz line {lineno}: unknown slot {slot!r}")
        terms.append(AnsatzTerm(slot, normalize(parse(e))))
    return tuple(terms)


def _residual_exprs(s: Scheme, ansatz):
    """On-shell residual expressions for each unit ansatz field."""
    derivs = {"E": {}, "Omega": {}}
    out = []
    for i, term in enumerate(ansatz):
        X = term.unit_field(i)
        res = onshell_residual(X, s, _derivs=derivs)
        out.append((res.rE, res.rOmega))
    return out


def _sample_rows(s, residuals, all_syms, rng, n_points, exact):
    rows = []
    attempts = 0
    while len(rows) < 2 * n_points and attempts < 200 * n_points:
        attempts += 1
        env = scheme_sample_env(s, all_syms, rng, exact=exact)
        try:
            re_row = []
            ro_row = []
            for rE, rO in residuals:
                if exact:
                    re_row.append(eval_exact(rE, env))
                    ro_row.append(eval_exact(rO, env))
                else:
                    re_row.append(eval_numeric(rE, env))
                    ro_row.append(eval_numeric(rO, env))
        except (EvalNumericError, ZeroDenominator, MissingBinding):
            continue
        except NotExact:
            raise
        rows.append(re_row)
        rows.append(ro_row)
    if len(rows) < 2 * n_points:
        raise SamplingDegenerate("could not draw enough regular sample points")
    return rows


def _nullspace_exact(rows, ncols):
    m = [list(r) for r in rows]
    nrows = len(m)
    pivots = []
    r = 0
    for c in range(ncols):
        piv = None
        for i in range(r, nrows):
            if m[i][c] != 0:
                piv = i
                break
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        pv = m[r][c]
        m[r] = [v / pv for v in m[r]]
        for i in range(nrows):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == nrows:
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for ri, pc in enumerate(pivots):
            v[pc] = -m[ri][fc]
        basis.append(_primitive(v))
    return len(pivots), basis


def _primitive(v):
    from math import gcd
    den = 1
    for x in v:
        den = den * x.denominator // gcd(den, x.denominator)
    ints = [int(x * den) for x in v]
    g = 0
    for i in ints:
        g = gcd(g, abs(i))
    if g:
        ints = [i // g for i in ints]
    for i in ints:
        if i != 0:
            if i < 0:
                ints = [-j for j in ints]
            break
    return [Fraction(i) for i in ints]


def _nullspace_float(rows, ncols, tol=1e-9):
    a = np.array(rows, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    m = a / scale
    nrows = m.shape[0]
    pivots = []
    r = 0
    for c in range(ncols):
        if r >= nrows:
            break
        i = r + int(np.argmax(np.abs(m[r:, c])))
        if abs(m[i, c]) <= tol:
            continue
        m[[r, i]] = m[[i, r]]
        m[r] = m[r] / m[r, c]
        for j in range(nrows):
            if j != r:
                m[j] = m[j] - m[j, c] * m[r]
        pivots.append(c)
        r += 1
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = np.zeros(ncols, dtype=complex)
        v[fc] = 1.0
        for ri, pc in enumerate(pivots):
            v[pc] = -m[ri, fc]
        basis.append(v)
    return len(pivots), basis


def _combine(ansatz, coeffs, name=""):
    xi, tau, phi = Q(0), Q(0), Q(0)
    for term, c in zip(ansatz, coeffs):
        if isinstance(c, Fraction):
            if not c:
                continue
            ce = Rat(c)
        else:
            ce = c
        contrib = ce * term.basis
        if term.slot == "xi":
            xi = xi + contrib
        elif term.slot == "tau":
            tau = tau + contrib
        else:
            phi = phi + contrib
    return VectorField(normalize(xi), normalize(tau), normalize(phi), name)


def _rationalize_vector(v, tol=1e-8):
    out = []
    for z in v:
        if abs(z.imag) > tol:
            return None
        f = Fraction(z.real).limit_denominator(64)
        if abs(float(f) - z.real) > tol:
            return None
        out.append(f)
    return out


def find_symmetries(s: Scheme, ansatz, rng=None, tol: float = 1e-9) -> FindResult:
    """Deterministic linear-ansatz search for the symmetry algebra."""
    if not ansatz:
        raise FieldError("empty ansatz")
    if rng is None:
        rng = rngmod.substream(0, f"find:{s.name}")
    if s.kind == PURE:
        for term in ansatz:
            if term.slot == "tau":
                raise FieldError("tau slots are meaningless for a pure difference scheme")
            if T in free_symbols(term.basis):
                raise FieldError("t may not appear for a pure difference scheme")
    residuals = _residual_exprs(s, ansatz)
    all_syms = sorted({sym for rE, rO in residuals
                       for sym in free_symbols(rE) + free_symbols(rO)},
                      key=lambda v: symbol_name(v))
    n = len(ansatz)
    n_points = 3 * n

    exact = True
    draws = []
    for d in range(2):
        sub = rngmod.substream(rng.randrange(2 ** 63), f"draw:{d}")
        try:
            if exact:
                rows = _sample_rows(s, residuals, all_syms, sub, n_points, exact=True)
            else:
                raise NotExact("")
        except NotExact:
            exact = False
            rows = _sample_rows(s, residuals, all_syms, sub, n_points, exact=False)
        draws.append(rows)

    if exact:
        results = [_nullspace_exact(rows, n) for rows in draws]
    else:
        results = [_nullspace_float([[complex(v) for v in row] for row in rows], n, tol)
                   for rows in draws]
    (rank1, basis1), (rank2, basis2) = results
    if rank1 != rank2 or len(basis1) != len(basis2):
        raise SamplingDegenerate(
            f"independent draws disagree: rank {rank1} vs {rank2}")

    warnings = []
    if not basis1:
        warnings.append("AnsatzTooSmall: only the zero field satisfies the residuals")
        return FindResult(basis=(), exact=exact, warnings=tuple(warnings))

    fields = []
    for i, vec in enumerate(basis1):
        if exact:
            coeffs = vec
        else:
            rat = _rationalize_vector(vec)
            coeffs = rat if rat is not None else [_complex_expr(z) for z in vec]
        X = _combine(ansatz, coeffs, name=f"Y{i + 1}")
        check = verify_symmetry(X, s, rngmod.substream(rng.randrange(2 ** 63),
                                                       f"recheck:{i}"), tol=tol)
        if check.holds:
            fields.append(X)
        else:
            warnings.append(f"dropped unsound candidate {i + 1}: "
                            f"witness {check.witness}")
    return FindResult(basis=tuple(fields), exact=exact, warnings=tuple(warnings))


def _complex_expr(z, digits=12):
    re = Fraction(round(z.real, digits))
    im = Fraction(round(z.imag, digits))
    e = Rat(re)
    if im:
        raise FieldError("complex symmetry coefficients are not representable")
    return e


# ---------------------------------------------------------------------------
# invariants on a manifold
# ---------------------------------------------------------------------------

@dataclass
class InvariantReport:
    field: VectorField
    status: str          # "zero" | "on-manifold" | "fail"
    lam: Expr = None     # pr X q == lam * manifold when status == "on-manifold"
    witness: object = None


def check_invariant_on_manifold(fields, q: Expr, manifold: Expr = None,
                                rng=None) -> list:
    """For each field report whether pr X q vanishes identically, equals
    lam*manifold (found by polynomial division), or fails."""
    if rng is None:
        rng = rngmod.substream(0, "invariant-check")
    span_syms = free_symbols(q) + (free_symbols(manifold) if manifold is not None else ())
    shifts = [sym.shift for sym in span_syms
              if isinstance(sym, Var) and sym.shift is not None]
    M = max(0, -min(shifts, default=0))
    N = max(0, max(shifts, default=0))
    has_t = any(isinstance(sym, Var) and sym.shift is None for sym in span_syms)
    reports = []
    for X in fields:
        P = prolong(X, M, N, order_t=2 if has_t else 0)
        r = apply_prolonged(P, q)
        if is_zero(r):
            reports.append(InvariantReport(X, "zero", lam=Q(0)))
            continue
        if manifold is not None:
            lam = try_divide(r, manifold)
            if lam is not None:
                reports.append(InvariantReport(X, "on-manifold", lam=lam))
                continue
        reports.append(InvariantReport(X, "fail", witness=to_str(r)))
    return reports


# ---------------------------------------------------------------------------
# vector-field files: `name: xi=<expr>; tau=<expr>; phi=<expr>` per line
# ---------------------------------------------------------------------------

def parse_fields(text):
    fields = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name = ""
        body = line
        head, sep, rest = line.partition(":")
        if sep and "=" not in head:
            name, body = head.strip(), rest
        kw = {}
        for piece in body.split(";"):
            piece = piece.strip()
            if not piece:
                continue
            if "=" not in piece:
                raise FieldError(f"fields line {lineno}: expected slot=expr, got {piece!r}")
            slot, e = (p.strip() for p in piece.split("=", 1))
            if slot not in SLOTS:
                raise FieldError(f"fields line {lineno}: unknown slot {slot!r}")
            kw[slot] = parse(e)
        fields.append(make_field(name=name, **kw))
    return tuple(fields)


def load_fields(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_fields(fh.read())

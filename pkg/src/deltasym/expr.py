"""Symbolic expression core for difference schemes.

Expressions are immutable trees over lattice-shifted variables x[k], u[k],
the continuous symbols t, ut, utt, ux, uxt, named parameters, exact
rationals, and the functions exp, ln, sqrt, sin, cos.

``normalize`` puts an expression into rational-function normal form over
these atoms: a quotient of two multivariate polynomials with exact Fraction
coefficients.  Function applications are opaque atoms (their arguments are
normalized recursively) except for three rewrite rules that make the
identities used by the scheme machinery close exactly:

* ``sqrt(a)^2 -> a`` (square roots are adjoined algebraically),
* ``exp(a)*exp(b) -> exp(a+b)`` and ``exp(k*ln(y)+r) -> y^k*exp(r)`` for
  integer and half-integer k,
* same-base symbolic powers merge by exponent addition, and integer or
  half-integer exponents fold back into the polynomial layer.

Zero testing on the rational fragment is therefore exact: an expression is
zero iff its normalized numerator is the zero polynomial.  For sums of
opaque atoms that the normal form cannot relate, ``is_probably_zero``
falls back to sampling at random complex points.

All values are immutable and all functions are pure; randomized helpers
take an explicit ``random.Random``.
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte offset into the input."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ZeroDenominator(ExprError):
    pass


class MissingBinding(ExprError):
    pass


class EvalNumericError(ExprError):
    pass


class NotExact(ExprError):
    """Raised by eval_exact when a subexpression has no exact rational value."""


# --------------------------------------------------------------------------
# AST nodes
# --------------------------------------------------------------------------

DERIV_SYMBOLS = ("t", "ut", "utt", "ux", "uxt")
SHIFT_BASES = ("x", "u")
FUNCTIONS = ("exp", "ln", "sqrt", "sin", "cos")


@dataclass(frozen=True)
class Expr:
    def __add__(self, other):
        return Add((self, _coerce(other)))

    def __radd__(self, other):
        return Add((_coerce(other), self))

    def __sub__(self, other):
        return Add((self, Mul((RAT_M1, _coerce(other)))))

    def __rsub__(self, other):
        return Add((_coerce(other), Mul((RAT_M1, self))))

    def __mul__(self, other):
        return Mul((self, _coerce(other)))

    def __rmul__(self, other):
        return Mul((_coerce(other), self))

    def __truediv__(self, other):
        return Mul((self, Pow(_coerce(other), RAT_M1)))

    def __rtruediv__(self, other):
        return Mul((_coerce(other), Pow(self, RAT_M1)))

    def __pow__(self, other):
        return Pow(self, _coerce(other))

    def __neg__(self):
        return Mul((RAT_M1, self))

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Rat(Expr):
    value: Fraction

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Var(Expr):
    """x[k] / u[k] for integer k, or one of t, ut, utt, ux, uxt (shift None)."""

    name: str
    shift: object = None  # int for x/u, None for derivative symbols

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Param(Expr):
    name: str

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Add(Expr):
    terms: tuple

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Mul(Expr):
    factors: tuple

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr

    def __str__(self):
        return to_str(self)


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr

    def __str__(self):
        return to_str(self)


def _install_cached_hash(cls, fields):
    """Structural hashing is hot; cache it per node."""
    marker = hash(cls.__name__)

    def _h(self, _marker=marker, _fields=fields):
        h = self.__dict__.get("_hash")
        if h is None:
            h = _marker ^ hash(tuple(getattr(self, f) for f in _fields))
            object.__setattr__(self, "_hash", h)
        return h

    cls.__hash__ = _h


_install_cached_hash(Rat, ("value",))
_install_cached_hash(Var, ("name", "shift"))
_install_cached_hash(Param, ("name",))
_install_cached_hash(Add, ("terms",))
_install_cached_hash(Mul, ("factors",))
_install_cached_hash(Pow, ("base", "exponent"))
_install_cached_hash(Func, ("name", "arg"))


def Q(p, q=1):
    return Rat(Fraction(p, q))


RAT_0 = Q(0)
RAT_1 = Q(1)
RAT_M1 = Q(-1)
HALF = Fraction(1, 2)


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return Rat(Fraction(v))
    raise TypeError(f"cannot coerce {v!r} to Expr")


def var(name, shift=0):
    if name in DERIV_SYMBOLS:
        return Var(name, None)
    if name not in SHIFT_BASES:
        raise ValueError(f"not a lattice variable: {name}")
    return Var(name, int(shift))


# --------------------------------------------------------------------------
# Tokenizer / parser (precedence climbing over the scheme-file grammar)
# --------------------------------------------------------------------------

_OPS = "+-*/^()[]"


def _tokenize(text):
    toks = []  # (kind, value, offset)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            toks.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            lit = text[i:j]
            if lit == ".":
                raise ParseError("bad number", i)
            toks.append(("num", lit, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(("ident", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    toks.append(("end", "", n))
    return toks


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.toks[self.pos]

    def advance(self):
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect_op(self, op):
        kind, val, off = self.advance()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", off)

    def parse(self):
        e = self.expr()
        kind, _, off = self.peek()
        if kind != "end":
            raise ParseError("trailing input", off)
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                e = Add((e, rhs)) if val == "+" else Add((e, Mul((RAT_M1, rhs))))
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.unary()
                e = Mul((e, rhs)) if val == "*" else Mul((e, Pow(rhs, RAT_M1)))
            else:
                return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Mul((RAT_M1, self.unary()))
        if kind == "op" and val == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.advance()
            return Pow(base, self.unary())  # right-associative
        return base

    def atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Rat(Fraction(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "ident":
            nkind, nval, noff = self.peek()
            if nkind == "op" and nval == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                return Func(val, arg)
            if nkind == "op" and nval == "[":
                if val not in SHIFT_BASES:
                    raise ParseError(f"only x and u take shift indices, got {val!r}", off)
                self.advance()
                sign = 1
                kind2, val2, off2 = self.advance()
                if kind2 == "op" and val2 == "-":
                    sign = -1
                    kind2, val2, off2 = self.advance()
                if kind2 != "num" or "." in val2:
                    raise ParseError("shift index must be an integer", off2)
                self.expect_op("]")
                return Var(val, sign * int(val2))
            if val in DERIV_SYMBOLS:
                return Var(val, None)
            if val in SHIFT_BASES:
                return Var(val, 0)  # bare x, u alias x[0], u[0]
            return Param(val)
        raise ParseError("expected an expression", off)


def parse(text: str) -> Expr:
    """Parse an expression in the scheme-file grammar."""
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Printer (emits the same grammar the parser reads)
# --------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4


def _frac_str(f: Fraction) -> str:
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def to_str(e: Expr) -> str:
    s, _ = _fmt(e)
    return s


def _paren(child_str, child_prec, min_prec):
    return f"({child_str})" if child_prec < min_prec else child_str


def _fmt(e):
    """Return (text, precedence-of-top-node)."""
    if isinstance(e, Rat):
        f = e.value
        if f < 0:
            inner = _frac_str(-f)
            prec = _PREC_MUL if f.denominator != 1 else _PREC_ATOM
            return f"-{inner}", 0  # unary minus: parenthesize when embedded
        if f.denominator != 1:
            return _frac_str(f), _PREC_MUL
        return _frac_str(f), _PREC_ATOM
    if isinstance(e, Var):
        if e.shift is None:
            return e.name, _PREC_ATOM
        if e.shift == 0:
            return e.name, _PREC_ATOM
        return f"{e.name}[{e.shift}]", _PREC_ATOM
    if isinstance(e, Param):
        return e.name, _PREC_ATOM
    if isinstance(e, Func):
        return f"{e.name}({to_str(e.arg)})", _PREC_ATOM
    if isinstance(e, Add):
        parts = []
        for i, t in enumerate(e.terms):
            neg, body = _split_negation(t)
            s, p = _fmt(body)
            s = _paren(s, p, _PREC_ADD + (1 if neg else 0))
            if i == 0:
                parts.append(("-" if neg else "") + s)
            else:
                parts.append((" - " if neg else " + ") + s)
        return "".join(parts), _PREC_ADD
    if isinstance(e, Mul):
        num_parts, den_parts = [], []
        for f in e.factors:
            inv = _as_reciprocal(f)
            if inv is not None:
                s, p = _fmt(inv)
                den_parts.append(_paren(s, p, _PREC_MUL + 1))
            else:
                s, p = _fmt(f)
                num_parts.append(_paren(s, p, _PREC_MUL))
        num = "*".join(num_parts) if num_parts else "1"
        for d in den_parts:
            num += "/" + d
        return num, _PREC_MUL
    if isinstance(e, Pow):
        inv = _as_reciprocal(e)
        if inv is not None:
            s, p = _fmt(inv)
            return "1/" + _paren(s, p, _PREC_MUL + 1), _PREC_MUL
        bs, bp = _fmt(e.base)
        bs = _paren(bs, bp, _PREC_ATOM)
        es, ep = _fmt(e.exponent)
        if not (isinstance(e.exponent, Rat) and e.exponent.value.denominator == 1
                and e.exponent.value >= 0):
            es = f"({es})"
        return f"{bs}^{es}", _PREC_POW
    raise TypeError(f"cannot print {e!r}")


def _split_negation(e):
    """Detect a leading factor -1 (or negative rational) for pretty '-'."""
    if isinstance(e, Rat) and e.value < 0:
        return True, Rat(-e.value)
    if isinstance(e, Mul) and e.factors and isinstance(e.factors[0], Rat):
        c = e.factors[0].value
        if c < 0:
            rest = (Rat(-c),) + e.factors[1:] if c != -1 else e.factors[1:]
            if len(rest) == 1:
                return True, rest[0]
            if rest:
                return True, Mul(rest)
            return True, RAT_1
    return False, e


def _as_reciprocal(e):
    """If e is b^(negative integer), return b^(positive) for '/' printing."""
    if isinstance(e, Pow) and isinstance(e.exponent, Rat):
        q = e.exponent.value
        if q.denominator == 1 and q < 0:
            return e.base if q == -1 else Pow(e.base, Rat(-q))
    return None


# --------------------------------------------------------------------------
# Polynomial layer: Poly = {mono: Fraction}, mono = sorted tuple of (atom, exp)
# Atoms are canonical leaf-like Expr nodes: Var, Param, Func, and Pow atoms
# (symbolic exponent).
# --------------------------------------------------------------------------

_P_ONE = {(): Fraction(1)}
_P_ZERO = {}

_FUNC_RANK = {"sqrt": 0, "ln": 1, "sin": 2, "cos": 3}

_atom_key_cache = {}


def _atom_key(a):
    k = _atom_key_cache.get(a)
    if k is None:
        if isinstance(a, Var):
            if a.shift is None:
                k = (1, DERIV_SYMBOLS.index(a.name), 0, "")
            else:
                k = (0, 0 if a.name == "x" else 1, a.shift, "")
        elif isinstance(a, Param):
            k = (2, 0, 0, a.name)
        elif isinstance(a, Func):
            if a.name == "exp":
                k = (4, 0, 0, to_str(a.arg))
            else:
                k = (3, _FUNC_RANK[a.name], 0, to_str(a.arg))
        elif isinstance(a, Pow):
            k = (5, 0, 0, to_str(a.base) + "|" + to_str(a.exponent))
        else:  # pragma: no cover
            raise TypeError(f"not an atom: {a!r}")
        _atom_key_cache[a] = k
    return k


def _mono_from_dict(d):
    items = [(a, e) for a, e in d.items() if e]
    items.sort(key=lambda ae: _atom_key(ae[0]))
    return tuple(items)


def _mono_degree(m):
    return sum(e for _, e in m)


def _mono_sort_key(m):
    return (-_mono_degree(m), tuple((_atom_key(a), -e) for a, e in m))


def _p_add_inplace(acc, p, scale=Fraction(1)):
    for m, c in p.items():
        nc = acc.get(m, Fraction(0)) + c * scale
        if nc:
            acc[m] = nc
        else:
            acc.pop(m, None)


def _p_scale(p, c):
    if not c:
        return {}
    return {m: v * c for m, v in p.items()}


def _is_sqrt(a):
    return isinstance(a, Func) and a.name == "sqrt"


def _is_exp(a):
    return isinstance(a, Func) and a.name == "exp"


def _is_powatom(a):
    return isinstance(a, Pow)


def _needs_reduce(d):
    exp_weight = 0
    pow_seen = set()
    for a, e in d.items():
        if _is_sqrt(a) and e >= 2:
            return True
        if _is_exp(a):
            exp_weight += e
            if exp_weight >= 2:
                return True
        elif _is_powatom(a):
            if e != 1 or a.base in pow_seen or a.base in d:
                return True
            pow_seen.add(a.base)
    return False


def _mono_reduce(d):
    """Apply atom rewrites to a merged exponent dict; returns an RF."""
    coeff = _RF_ONE
    out = {}
    exp_args = []  # (arg expr, multiplicity)
    pow_parts = {}  # base expr -> list of (exponent expr, multiplicity)
    for a, e in d.items():
        if e == 0:
            continue
        if _is_sqrt(a):
            q, r = divmod(e, 2)
            if q:
                coeff = _rf_mul(coeff, _rf_pow_int(_rf(a.arg), q))
            if r:
                out[a] = out.get(a, 0) + 1
        elif _is_exp(a):
            exp_args.append((a.arg, e))
        elif _is_powatom(a):
            pow_parts.setdefault(a.base, []).append((a.exponent, e))
        else:
            out[a] = out.get(a, 0) + e
    # fold plain atoms that coincide with a symbolic-power base
    for b in list(pow_parts):
        if b in out:
            pow_parts[b].append((Rat(Fraction(out.pop(b))), 1))
    for b in sorted(pow_parts, key=_atom_key_safe):
        parts = pow_parts[b]
        total = Rat(Fraction(0))
        for ex, mult in parts:
            total = total + Q(mult) * ex
        total = normalize(total)
        coeff = _rf_mul(coeff, _rf(Pow(b, total)))
    if exp_args:
        total = Rat(Fraction(0))
        for arg, mult in exp_args:
            total = total + Q(mult) * arg
        coeff = _rf_mul(coeff, _rf(Func("exp", total)))
    base = ({_mono_from_dict(out): Fraction(1)}, _P_ONE) if out else (_P_ONE, _P_ONE)
    return _rf_mul(coeff, base)


def _atom_key_safe(a):
    try:
        return _atom_key(a)
    except TypeError:
        return (9, 0, 0, to_str(a))


def _p_mul(p1, p2):
    """Multiply two polys; rewrites may push the result into RF form."""
    plain = {}
    special = None
    for m1, c1 in p1.items():
        d1 = dict(m1)
        for m2, c2 in p2.items():
            d = dict(d1)
            for a, e in m2:
                d[a] = d.get(a, 0) + e
            c = c1 * c2
            if _needs_reduce(d):
                contrib = _rf_scale(_mono_reduce(d), c)
                special = contrib if special is None else _rf_add(special, contrib)
            else:
                m = _mono_from_dict(d)
                nc = plain.get(m, Fraction(0)) + c
                if nc:
                    plain[m] = nc
                else:
                    plain.pop(m, None)
    rf = (plain, _P_ONE)
    if special is not None:
        rf = _rf_add(rf, special)
    return rf


# --------------------------------------------------------------------------
# Rational-function layer.  An RF is a pair (num_poly, den_poly); _p_mul
# also returns an RF because monomial rewrites can produce denominators.
# --------------------------------------------------------------------------

_RF_ONE = (_P_ONE, _P_ONE)
_RF_ZERO = (_P_ZERO, _P_ONE)


def _rf_scale(rf, c):
    return (_p_scale(rf[0], c), rf[1])


def _rf_from_factors(nums, dens):
    """Collapse lists of poly factors into a single cancelled RF."""
    num, den = _P_ONE, _P_ONE
    nums, dens = list(nums), list(dens)
    guard = 0
    while nums or dens:
        guard += 1
        if guard > 10000:  # pragma: no cover
            raise ExprError("normalization did not converge")
        if nums:
            p, extra_den = _p_mul(num, nums.pop())
            num = p
            if extra_den != _P_ONE:
                dens.append(extra_den)
        else:
            p, extra_den = _p_mul(den, dens.pop())
            den = p
            if extra_den != _P_ONE:
                nums.append(extra_den)
    return _cancel(num, den)


def _rf_mul(a, b):
    return _rf_from_factors([a[0], b[0]], [a[1], b[1]])


def _rf_inv(rf):
    n, d = rf
    if not n:
        raise ZeroDenominator("division by an expression that normalizes to 0")
    return _cancel(d, n)


def _rf_div(a, b):
    return _rf_from_factors([a[0], b[1]], [a[1], b[0]])


def _rf_add(a, b, _depth=0):
    if not a[0]:
        return b
    if not b[0]:
        return a
    if a[1] == b[1]:
        num = dict(a[0])
        _p_add_inplace(num, b[0])
        return _cancel(num, a[1])
    # cancel the shared denominator factor up front: without this, sums of
    # terms over products of the same linear factors blow up quadratically
    g = _try_gcd(a[1], b[1]) if (a[1] != _P_ONE and b[1] != _P_ONE) else None
    if g is not None:
        ared = _p_exact_div(a[1], g)
        bred = _p_exact_div(b[1], g)
        t1 = _rf_from_factors([a[0], bred], [])
        t2 = _rf_from_factors([b[0], ared], [])
        dn = _rf_from_factors([a[1], bred], [])
    else:
        t1 = _rf_from_factors([a[0], b[1]], [])
        t2 = _rf_from_factors([b[0], a[1]], [])
        dn = _rf_from_factors([a[1], b[1]], [])
    if t1[1] == _P_ONE and t2[1] == _P_ONE:
        num = dict(t1[0])
        _p_add_inplace(num, t2[0])
        return _rf_from_factors([num, dn[1]], [dn[0]])
    if _depth > 50:  # pragma: no cover
        raise ExprError("normalization did not converge")
    s = _rf_add(t1, t2, _depth + 1)
    return _rf_from_factors([s[0], dn[1]], [s[1], dn[0]])


def _rf_pow_int(rf, n):
    if n == 0:
        return _RF_ONE
    if n < 0:
        rf = _rf_inv(rf)
        n = -n
    result = _RF_ONE
    base = rf
    while True:
        if n & 1:
            result = _rf_mul(result, base)
        n >>= 1
        if not n:
            return result
        base = _rf_mul(base, base)


# ---- cancellation ---------------------------------------------------------

def _cancel(num, den):
    """Normalize a poly pair: cancel common factors and canonicalize den."""
    if isinstance(num, tuple) or isinstance(den, tuple):  # pragma: no cover
        raise TypeError("internal: _cancel expects plain polys")
    if not den:
        raise ZeroDenominator("division by an expression that normalizes to 0")
    if not num:
        return (_P_ZERO, _P_ONE)
    if den == _P_ONE:
        return (num, den)
    num, den = _cancel_mono_gcd(num, den)
    num, den = _clear_den_atoms(num, den)
    num, den = _rationalize_sqrt(num, den)
    num, den = _cancel_mono_gcd(num, den)
    scal = _scalar_multiple(num, den)
    if scal is not None:
        return ({(): scal} if scal else _P_ZERO, _P_ONE)
    # exact-division cancellation is cosmetic; size-gated so large sums
    # (where it rarely succeeds) do not pay a quadratic price
    if den != _P_ONE and len(num) * len(den) <= 2000:
        q = _p_exact_div(num, den)
        if q is not None:
            num, den = q, _P_ONE
        else:
            q = _p_exact_div(den, num)
            if q is not None and len(q) > 0:
                num, den = _P_ONE, q
    if den != _P_ONE and len(num) <= 400 and len(den) <= 400:
        g = _try_gcd(num, den)
        if g is not None:
            num = _p_exact_div(num, g)
            den = _p_exact_div(den, g)
    # canonicalize: make the leading coefficient of den equal to 1
    lead = min(den, key=_mono_sort_key)
    c = den[lead]
    if c != 1:
        num = _p_scale(num, 1 / c)
        den = _p_scale(den, 1 / c)
    return (num, den)


def _cancel_mono_gcd(num, den):
    common = None
    for p in (num, den):
        for m in p:
            d = dict(m)
            if common is None:
                common = d
            else:
                common = {a: min(e, common[a]) for a, e in d.items() if a in common}
            if not common:
                return num, den
    if not common:
        return num, den

    def strip(p):
        out = {}
        for m, c in p.items():
            d = dict(m)
            for a, e in common.items():
                d[a] -= e
            out[_mono_from_dict(d)] = c
        return out

    return strip(num), strip(den)


def _clear_den_atoms(num, den):
    """Move exp- and power-atoms out of the denominator via reciprocals."""
    if den == _P_ONE:
        return num, den
    common = None
    for m in den:
        d = {a: e for a, e in m if _is_exp(a) or _is_powatom(a)}
        if common is None:
            common = d
        else:
            common = {a: min(e, common[a]) for a, e in d.items() if a in common}
        if not common:
            return num, den
    factor = _RF_ONE
    for a in sorted(common, key=_atom_key):
        e = common[a]
        if _is_exp(a):
            recap = Func("exp", Mul((RAT_M1, a.arg)))
        else:
            recap = Pow(a.base, Mul((RAT_M1, a.exponent)))
        factor = _rf_mul(factor, _rf_pow_int(_rf(recap), e))
    fn, fd = factor
    if fd != _P_ONE:
        return num, den  # atypical nesting; leave as-is
    num2, nd = _p_mul(num, fn)
    den2, dd = _p_mul(den, fn)
    if nd != _P_ONE or dd != _P_ONE or not den2:
        return num, den
    return num2, den2


def _rationalize_sqrt(num, den, max_rounds=16):
    for _ in range(max_rounds):
        target = None
        for m in sorted(den, key=_mono_sort_key):
            for a, _e in m:
                if _is_sqrt(a):
                    target = a
                    break
            if target:
                break
        if target is None:
            return num, den
        d0, d1 = {}, {}
        ok = True
        for m, c in den.items():
            d = dict(m)
            e = d.pop(target, 0)
            if e == 0:
                d0[m] = c
            elif e == 1:
                d1[_mono_from_dict(d)] = c
            else:  # pragma: no cover - squares are rewritten away
                ok = False
                break
        if not ok:
            return num, den
        # conjugate: (d0 + d1*s) * (d0 - d1*s) = d0^2 - d1^2*arg
        s_poly = {((target, 1),): Fraction(1)}
        d1s, rem = _p_mul(d1, s_poly)
        if rem != _P_ONE:
            return num, den
        conj = dict(d0)
        _p_add_inplace(conj, d1s, Fraction(-1))
        num2, nd = _p_mul(num, conj)
        den2, dd = _p_mul(den, conj)
        if nd != _P_ONE or dd != _P_ONE or not den2:
            return num, den
        num, den = num2, den2
    return num, den


def _scalar_multiple(num, den):
    """If num == c*den return c, else None."""
    if len(num) != len(den):
        return None
    ratio = None
    for m, c in den.items():
        if m not in num:
            return None
        r = num[m] / c
        if ratio is None:
            ratio = r
        elif r != ratio:
            return None
    return ratio


# ---- multivariate gcd (primitive PRS), used to keep denominators small ----

class _GcdBudget(Exception):
    pass


def _plain_poly(p):
    for m in p:
        for a, _e in m:
            if _is_sqrt(a) or _is_exp(a) or _is_powatom(a):
                return False
    return True


def _sub_mul(a, b, budget):
    budget[0] -= len(a) * len(b)
    if budget[0] < 0:
        raise _GcdBudget
    r, d = _p_mul(a, b)
    if d != _P_ONE:  # pragma: no cover - callers gate on _plain_poly
        raise _GcdBudget
    return r


def _by_degree(p, v):
    out = {}
    for m, c in p.items():
        d = dict(m)
        e = d.pop(v, 0)
        out.setdefault(e, {})[_mono_from_dict(d)] = c
    return out


def _prim_int(p):
    """Scale to integer coefficients with content 1 and positive lead."""
    if not p:
        return p
    from math import gcd
    den = 1
    for c in p.values():
        den = den * c.denominator // gcd(den, c.denominator)
    g = 0
    for c in p.values():
        g = gcd(g, abs(c.numerator * (den // c.denominator)))
    lead = min(p, key=_mono_sort_key)
    sign = -1 if p[lead] < 0 else 1
    scale = Fraction(sign * den, g if g else 1)
    return {m: c * scale for m, c in p.items()}


def _p_gcd(a, b, budget):
    if not a:
        return _prim_int(b)
    if not b:
        return _prim_int(a)
    budget[0] -= len(a) + len(b)
    if budget[0] < 0:
        raise _GcdBudget
    atoms_a = {at for m in a for at, _e in m}
    atoms_b = {at for m in b for at, _e in m}
    if not atoms_a and not atoms_b:
        return _P_ONE
    common = atoms_a & atoms_b
    if not common:
        # disjoint atom sets: gcd is the gcd of the full coefficient contents
        return _P_ONE
    v = min(common, key=_atom_key)
    da, db = _by_degree(a, v), _by_degree(b, v)
    cont_a = {}
    for sub in da.values():
        cont_a = _p_gcd(cont_a, sub, budget)
    cont_b = {}
    for sub in db.values():
        cont_b = _p_gcd(cont_b, sub, budget)
    cont = _p_gcd(cont_a, cont_b, budget)
    prim_a = _p_exact_div(a, cont_a) if cont_a != _P_ONE else a
    prim_b = _p_exact_div(b, cont_b) if cont_b != _P_ONE else b
    if prim_a is None or prim_b is None:  # pragma: no cover
        raise _GcdBudget
    g = _prs_gcd(prim_a, prim_b, v, budget)
    if g == _P_ONE or cont == _P_ONE:
        out = g if cont == _P_ONE else cont
    else:
        out = _sub_mul(g, cont, budget)
    return _prim_int(out)


def _prs_gcd(a, b, v, budget):
    """Primitive polynomial remainder sequence in the atom v."""
    def deg(p):
        return max((dict(m).get(v, 0) for m in p), default=0)

    def primitive(p):
        d = _by_degree(p, v)
        cont = {}
        for sub in d.values():
            cont = _p_gcd(cont, sub, budget)
        if cont != _P_ONE:
            q = _p_exact_div(p, cont)
            if q is None:  # pragma: no cover
                raise _GcdBudget
            p = q
        return _prim_int(p)

    A, B = primitive(a), primitive(b)
    if deg(A) < deg(B):
        A, B = B, A
    while B:
        budget[0] -= len(A) + len(B)
        if budget[0] < 0:
            raise _GcdBudget
        R = _pseudo_rem(A, B, v, budget)
        A, B = B, primitive(R) if R else {}
    return _prim_int(A)


def _deg_lead(p, v):
    """Degree in v and the leading coefficient as a v-free poly."""
    best = -1
    for m in p:
        e = dict(m).get(v, 0)
        if e > best:
            best = e
    parts = {}
    for m, c in p.items():
        d = dict(m)
        e = d.pop(v, 0)
        if e == best:
            parts[_mono_from_dict(d)] = c
    return best, parts


def _pseudo_rem(a, b, v, budget):
    """Pseudo-remainder of a by b in the atom v: lc(b)^k * a mod b."""
    db, lcb = _deg_lead(b, v)
    R = a
    while R:
        dr, lcr = _deg_lead(R, v)
        if dr < db:
            break
        shift = {_mono_from_dict({v: dr - db}): Fraction(1)}
        t = _sub_mul(_sub_mul(lcr, shift, budget), b, budget)
        R2 = _sub_mul(R, lcb, budget)
        _p_add_inplace(R2, t, Fraction(-1))
        R = R2
    return R


def _try_gcd(a, b, max_ops=200000):
    """gcd of two polys, or None when gated out or over budget.

    The result is verified by exact division before use, so a wrong
    candidate can only cost us a missed cancellation, never soundness.
    """
    if not a or not b:
        return None
    if not (_plain_poly(a) and _plain_poly(b)):
        return None
    budget = [max_ops]
    try:
        g = _p_gcd(a, b, budget)
    except (_GcdBudget, RecursionError):
        return None
    if not g or g == _P_ONE or (len(g) == 1 and () in g):
        return None
    if _p_exact_div(a, g) is None or _p_exact_div(b, g) is None:
        return None
    return g


def _p_exact_div(p, q):
    """Exact multivariate division p / q, or None.

    Sound for rewrite-bearing atoms too: the remainder is maintained with
    full rewrite-aware arithmetic, so success means p == q * quotient;
    failures to spot a divisible pair merely skip a cosmetic cancellation.
    """
    if not q:
        return None
    rem = dict(p)
    quot = {}
    qlead = min(q, key=_mono_sort_key)
    qlc = q[qlead]
    qd = dict(qlead)
    # a cancellation whose quotient dwarfs the inputs is not worth having
    for _ in range(2 * len(p) + 40):
        if not rem:
            return quot
        rlead = min(rem, key=_mono_sort_key)
        rd = dict(rlead)
        t = {}
        for a, e in qd.items():
            if rd.get(a, 0) < e:
                return None
            t[a] = rd[a] - e
        for a, e in rd.items():
            if a not in qd:
                t[a] = e
        tm = _mono_from_dict({a: e for a, e in t.items() if e})
        tc = rem[rlead] / qlc
        quot[tm] = quot.get(tm, Fraction(0)) + tc
        sub, sub_den = _p_mul({tm: tc}, q)
        if sub_den != _P_ONE:
            return None
        _p_add_inplace(rem, sub, Fraction(-1))
    return None


# --------------------------------------------------------------------------
# Expr -> RF conversion
# --------------------------------------------------------------------------

_INTERN = {}


def _intern(e):
    r = _INTERN.get(e)
    if r is None:
        _INTERN[e] = e
        r = e
    return r


_RF_MEMO = {}


def _rf(e: Expr):
    """Memoized by node identity; RF pairs are never mutated after creation."""
    key = id(e)
    hit = _RF_MEMO.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    rf = _rf_compute(e)
    if len(_RF_MEMO) > 400000:
        _RF_MEMO.clear()
    _RF_MEMO[key] = (e, rf)
    return rf


def _rf_compute(e: Expr):
    if isinstance(e, Rat):
        return ({(): e.value} if e.value else _P_ZERO, _P_ONE)
    if isinstance(e, (Var, Param)):
        return ({((_intern(e), 1),): Fraction(1)}, _P_ONE)
    if isinstance(e, Add):
        # in-place fold over a private dict; general _rf_add only when a
        # denominator actually shows up
        num, den = {}, _P_ONE
        for t in e.terms:
            rf = _rf(t)
            if rf[1] == den:
                _p_add_inplace(num, rf[0])
            else:
                acc = _rf_add(_cancel(num, den), rf)
                num, den = dict(acc[0]), acc[1]
        return _cancel(num, den)
    if isinstance(e, Mul):
        acc = _RF_ONE
        for f in e.factors:
            acc = _rf_mul(acc, _rf(f))
        return acc
    if isinstance(e, Pow):
        return _rf_pow(e.base, e.exponent)
    if isinstance(e, Func):
        return _rf_func(e.name, e.arg)
    raise TypeError(f"cannot normalize {e!r}")


def _rf_pow(base, exponent):
    erf = _rf(exponent)
    eexpr = _rf_to_expr(erf)
    if isinstance(eexpr, Rat):
        q = eexpr.value
        if q == 0:
            return _RF_ONE
        if q.denominator == 1:
            return _rf_pow_int(_rf(base), int(q))
        if q.denominator == 2:
            m = (q.numerator - 1) // 2  # q = m + 1/2
            rf = _rf_pow_int(_rf(base), m) if m else _RF_ONE
            return _rf_mul(rf, _rf_func("sqrt", base))
    bexpr = normalize(base)
    if bexpr == RAT_1:
        return _RF_ONE
    if isinstance(bexpr, Rat) and not bexpr.value:
        # 0^e for symbolic e: only sensible generically for positive parts
        raise ZeroDenominator("zero base with non-constant or negative exponent")
    atom = _intern(Pow(bexpr, eexpr))
    return ({((atom, 1),): Fraction(1)}, _P_ONE)


def _rf_func(name, arg):
    a = normalize(arg)
    if name == "exp":
        if isinstance(a, Rat) and not a.value:
            return _RF_ONE
        mult, resid = _split_exp_ln(a)
        if resid is not None:
            atom = _intern(Func("exp", resid))
            mult = _rf_mul(mult, ({((atom, 1),): Fraction(1)}, _P_ONE))
        return mult
    if name == "ln":
        if a == RAT_1:
            return _RF_ZERO
        return ({((_intern(Func("ln", a)), 1),): Fraction(1)}, _P_ONE)
    if name == "sqrt":
        if isinstance(a, Rat):
            f = a.value
            if f == 0:
                return _RF_ZERO
            if f > 0:
                pn, pd = _isqrt_exact(f.numerator), _isqrt_exact(f.denominator)
                if pn is not None and pd is not None:
                    return ({(): Fraction(pn, pd)}, _P_ONE)
        return ({((_intern(Func("sqrt", a)), 1),): Fraction(1)}, _P_ONE)
    if name in ("sin", "cos"):
        if isinstance(a, Rat) and not a.value:
            return _RF_ZERO if name == "sin" else _RF_ONE
        return ({((_intern(Func(name, a)), 1),): Fraction(1)}, _P_ONE)
    raise TypeError(f"unknown function {name!r}")


def _isqrt_exact(n):
    r = int(n ** 0.5)
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand * cand == n:
            return cand
    return None


def _split_exp_ln(a):
    """Extract integer/half-integer multiples of ln-atoms from an exp argument.

    Returns (multiplier RF, residual argument Expr or None).
    """
    n, d = _rf(a)
    mult = _RF_ONE
    changed = True
    while changed:
        changed = False
        ln_atoms = []
        seen = set()
        for m in n:
            for at, _e in m:
                if isinstance(at, Func) and at.name == "ln" and at not in seen:
                    seen.add(at)
                    ln_atoms.append(at)
        ln_atoms.sort(key=_atom_key)
        for L in ln_atoms:
            if any(at == L for m in d for at, _ in m):
                continue
            deg0, deg1 = {}, {}
            ok = True
            for m, c in n.items():
                dd = dict(m)
                e = dd.pop(L, 0)
                if e == 0:
                    deg0[m] = c
                elif e == 1:
                    deg1[_mono_from_dict(dd)] = c
                else:
                    ok = False
                    break
            if not ok or not deg1:
                continue
            ratio = _scalar_multiple(deg1, d)
            if ratio is None or ratio.denominator not in (1, 2):
                continue
            mult = _rf_mul(mult, _rf(Pow(L.arg, Rat(ratio))))
            n = deg0
            changed = True
            break
    if not n:
        return mult, None
    return mult, _rf_to_expr((n, d))


# --------------------------------------------------------------------------
# RF -> canonical Expr
# --------------------------------------------------------------------------

def _term_to_expr(m, c):
    factors = []
    if c != 1 or not m:
        factors.append(Rat(c))
    for a, e in m:
        factors.append(a if e == 1 else Pow(a, Q(e)))
    if len(factors) == 1:
        return factors[0]
    return Mul(tuple(factors))


def _poly_to_expr(p):
    if not p:
        return RAT_0
    terms = [_term_to_expr(m, p[m]) for m in sorted(p, key=_mono_sort_key)]
    return terms[0] if len(terms) == 1 else Add(tuple(terms))


def _rf_to_expr(rf):
    num, den = rf
    if den == _P_ONE:
        return _poly_to_expr(num)
    den_e = _poly_to_expr(den)
    if not num:
        return RAT_0
    inv = Pow(den_e, RAT_M1)
    # fold the reciprocal into a single Mul for a canonical shape
    if len(num) == 1:
        ((m, c),) = num.items()
        factors = []
        if c != 1 or not m:
            factors.append(Rat(c))
        for a, e in m:
            factors.append(a if e == 1 else Pow(a, Q(e)))
        factors.append(inv)
        return Mul(tuple(factors))
    return Mul((_poly_to_expr(num), inv))


def normalize(e: Expr) -> Expr:
    """Rational-function normal form; idempotent and deterministic."""
    return _rf_to_expr(_rf(e))


def is_zero(e: Expr) -> bool:
    """Exact zero test on the rational fragment (atoms treated as independent)."""
    return not _rf(e)[0]


# --------------------------------------------------------------------------
# Structural operations
# --------------------------------------------------------------------------

def _map_tree(e, fn):
    """Bottom-up rewrite; returns the original node when nothing changed."""
    r = fn(e)
    if r is not None:
        return r
    if isinstance(e, (Rat, Var, Param)):
        return e
    if isinstance(e, Add):
        ts = tuple(_map_tree(t, fn) for t in e.terms)
        return e if all(a is b for a, b in zip(ts, e.terms)) else Add(ts)
    if isinstance(e, Mul):
        fs = tuple(_map_tree(f, fn) for f in e.factors)
        return e if all(a is b for a, b in zip(fs, e.factors)) else Mul(fs)
    if isinstance(e, Pow):
        b, x = _map_tree(e.base, fn), _map_tree(e.exponent, fn)
        return e if (b is e.base and x is e.exponent) else Pow(b, x)
    if isinstance(e, Func):
        a = _map_tree(e.arg, fn)
        return e if a is e.arg else Func(e.name, a)
    raise TypeError(f"bad node {e!r}")


def shift(e: Expr, k: int) -> Expr:
    """Shift every x[j] -> x[j+k] and u[j] -> u[j+k]; t, ut, ... unchanged."""
    if k == 0:
        return normalize(e)

    def fn(node):
        if isinstance(node, Var) and node.shift is not None:
            return Var(node.name, node.shift + k)
        return None

    return normalize(_map_tree(e, fn))


def substitute(e: Expr, bindings: Mapping[Expr, Expr]) -> Expr:
    """Simultaneous replacement of Var/Param leaves; result is normalized."""
    bind = {k: _coerce(v) for k, v in bindings.items()}

    def fn(node):
        if isinstance(node, (Var, Param)):
            return bind.get(node, node)
        return None

    return normalize(_map_tree(e, fn))


def differentiate(e: Expr, v: Expr) -> Expr:
    """Exact partial derivative with respect to a Var or Param symbol."""
    if not isinstance(v, (Var, Param)):
        raise TypeError("differentiation variable must be a Var or Param")
    return normalize(_diff(e, v))


def _diff(e, v):
    if isinstance(e, Rat):
        return RAT_0
    if isinstance(e, (Var, Param)):
        return RAT_1 if e == v else RAT_0
    if isinstance(e, Add):
        return Add(tuple(_diff(t, v) for t in e.terms))
    if isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i in range(len(fs)):
            terms.append(Mul(fs[:i] + (_diff(fs[i], v),) + fs[i + 1:]))
        return Add(tuple(terms))
    if isinstance(e, Pow):
        b, ex = e.base, e.exponent
        db = _diff(b, v)
        if isinstance(ex, Rat):
            return Mul((ex, Pow(b, Rat(ex.value - 1)), db))
        dex = _diff(ex, v)
        return Mul((Pow(b, ex),
                    Add((Mul((dex, Func("ln", b))),
                         Mul((ex, db, Pow(b, RAT_M1)))))))
    if isinstance(e, Func):
        da = _diff(e.arg, v)
        if e.name == "exp":
            return Mul((Func("exp", e.arg), da))
        if e.name == "ln":
            return Mul((da, Pow(e.arg, RAT_M1)))
        if e.name == "sqrt":
            return Mul((Q(1, 2), da, Pow(Func("sqrt", e.arg), RAT_M1)))
        if e.name == "sin":
            return Mul((Func("cos", e.arg), da))
        if e.name == "cos":
            return Mul((RAT_M1, Func("sin", e.arg), da))
    raise TypeError(f"bad node {e!r}")


def free_symbols(e: Expr):
    """Sorted tuple of the Var and Param leaves occurring in e."""
    out = set()

    def walk(node):
        if isinstance(node, (Var, Param)):
            out.add(node)
        elif isinstance(node, Add):
            for t in node.terms:
                walk(t)
        elif isinstance(node, Mul):
            for f in node.factors:
                walk(f)
        elif isinstance(node, Pow):
            walk(node.base)
            walk(node.exponent)
        elif isinstance(node, Func):
            walk(node.arg)

    walk(e)
    return tuple(sorted(out, key=_symbol_sort_key))


def _symbol_sort_key(s):
    if isinstance(s, Var):
        if s.shift is None:
            return (1, DERIV_SYMBOLS.index(s.name), 0)
        return (0, 0 if s.name == "x" else 1, s.shift)
    return (2, 0, 0, s.name)


def contains_opaque(e: Expr) -> bool:
    """True if e contains function atoms or symbolic powers (zero test may
    need sampling)."""
    if isinstance(e, Func):
        return True
    if isinstance(e, Pow):
        if not isinstance(e.exponent, Rat) or e.exponent.value.denominator != 1:
            return True
        return contains_opaque(e.base)
    if isinstance(e, Add):
        return any(contains_opaque(t) for t in e.terms)
    if isinstance(e, Mul):
        return any(contains_opaque(f) for f in e.factors)
    return False


def linear_combination(pairs) -> Expr:
    """Normalized sum of coeff*term products, accumulated at the
    rational-function level (cheaper than building and re-walking a tree)."""
    acc = _RF_ZERO
    for c, d in pairs:
        acc = _rf_add(acc, _rf_mul(_rf(c), _rf(d)))
    return _rf_to_expr(acc)


def collect_powers(e: Expr, symbols):
    """Split e by the exponent multi-index of the given Var/Param symbols.

    Requires the normalized denominator to be free of those symbols.
    Returns a list of (exponents tuple, coefficient Expr), sorted, whose
    weighted sum reconstructs e.
    """
    num, den = _rf(e)
    symset = set(symbols)
    for m in den:
        for a, _x in m:
            if a in symset:
                raise ExprError("denominator depends on the split symbols")
    groups = {}
    for m, c in num.items():
        idx = []
        rest = {}
        d = dict(m)
        for s in symbols:
            idx.append(d.pop(s, 0))
        rest = _mono_from_dict(d)
        key = tuple(idx)
        groups.setdefault(key, {})[rest] = groups.get(key, {}).get(rest, Fraction(0)) + c
    out = []
    for key in sorted(groups):
        out.append((key, _rf_to_expr(_cancel(groups[key], dict(den)))))
    return out


def try_divide(a: Expr, b: Expr):
    """Return q with a == q*b by exact polynomial division of numerators,
    or None when the numerator of b does not divide that of a."""
    an, ad = _rf(a)
    bn, bd = _rf(b)
    if not bn:
        raise ZeroDenominator("division by an expression that normalizes to 0")
    if not an:
        return RAT_0
    q = _p_exact_div(an, bn)
    if q is None:
        return None
    return _rf_to_expr(_rf_from_factors([q, bd], [ad]))


def symbol_name(s) -> str:
    if isinstance(s, Var):
        if s.shift is None:
            return s.name
        return f"{s.name}[{s.shift}]"
    if isinstance(s, Param):
        return s.name
    raise TypeError(f"not a symbol: {s!r}")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def eval_numeric(e: Expr, env: Mapping[str, complex]) -> complex:
    """Complex double-precision evaluation; fractional powers use the
    principal branch."""
    v = _eval_c(e, env)
    if not (cmath.isfinite(v)):
        raise EvalNumericError(f"non-finite value {v!r}")
    return v


def _eval_c(e, env):
    if isinstance(e, Rat):
        return complex(e.value)
    if isinstance(e, (Var, Param)):
        name = symbol_name(e)
        if name not in env:
            raise MissingBinding(f"no value bound for {name}")
        return complex(env[name])
    if isinstance(e, Add):
        return sum(_eval_c(t, env) for t in e.terms)
    if isinstance(e, Mul):
        r = 1 + 0j
        for f in e.factors:
            r *= _eval_c(f, env)
        return r
    if isinstance(e, Pow):
        b = _eval_c(e.base, env)
        x = _eval_c(e.exponent, env)
        if b == 0:
            if x.imag == 0 and x.real > 0:
                return 0j
            raise EvalNumericError("0 raised to a non-positive power")
        try:
            return b ** x
        except (OverflowError, ZeroDivisionError) as exc:
            raise EvalNumericError(str(exc))
    if isinstance(e, Func):
        a = _eval_c(e.arg, env)
        try:
            if e.name == "exp":
                return cmath.exp(a)
            if e.name == "ln":
                return cmath.log(a)
            if e.name == "sqrt":
                return cmath.sqrt(a)
            if e.name == "sin":
                return cmath.sin(a)
            if e.name == "cos":
                return cmath.cos(a)
        except (OverflowError, ValueError, ZeroDivisionError) as exc:
            raise EvalNumericError(str(exc))
    raise TypeError(f"bad node {e!r}")


def eval_exact(e: Expr, env: Mapping[str, Fraction]) -> Fraction:
    """Exact rational evaluation; raises NotExact when a subexpression has
    no rational value (opaque functions, non-integer powers)."""
    if isinstance(e, Rat):
        return e.value
    if isinstance(e, (Var, Param)):
        name = symbol_name(e)
        if name not in env:
            raise MissingBinding(f"no value bound for {name}")
        return Fraction(env[name])
    if isinstance(e, Add):
        s = Fraction(0)
        for t in e.terms:
            s += eval_exact(t, env)
        return s
    if isinstance(e, Mul):
        r = Fraction(1)
        for f in e.factors:
            r *= eval_exact(f, env)
        return r
    if isinstance(e, Pow):
        x = eval_exact(e.exponent, env)
        if x.denominator != 1:
            raise NotExact("non-integer exponent")
        b = eval_exact(e.base, env)
        if b == 0 and x <= 0:
            raise ZeroDenominator("0 raised to a non-positive power")
        return b ** int(x)
    if isinstance(e, Func):
        a = eval_exact(e.arg, env)
        if e.name == "sqrt" and a >= 0:
            pn, pd = _isqrt_exact(a.numerator), _isqrt_exact(a.denominator)
            if pn is not None and pd is not None:
                return Fraction(pn, pd)
        raise NotExact(f"{e.name} has no exact rational value here")
    raise TypeError(f"bad node {e!r}")


def sample_env(symbols, rng, lo=0.5, hi=2.0):
    """Random complex environment with magnitudes in [lo, hi]."""
    env = {}
    for s in symbols:
        r = lo + (hi - lo) * rng.random()
        theta = 2 * cmath.pi * rng.random()
        env[symbol_name(s) if not isinstance(s, str) else s] = r * cmath.exp(1j * theta)
    return env


def is_probably_zero(e: Expr, rng, points: int = 25, tol: float = 1e-9) -> bool:
    """Exact zero test, falling back to sampling when opaque atoms remain."""
    if is_zero(e):
        return True
    en = normalize(e)
    if not contains_opaque(en):
        return False  # nonzero polynomial/rational: exact verdict
    syms = free_symbols(en)
    done = 0
    attempts = 0
    while done < points and attempts < 100 * points:
        attempts += 1
        env = sample_env(syms, rng)
        try:
            v = eval_numeric(en, env)
        except (EvalNumericError, ZeroDenominator):
            continue
        if abs(v) > tol:
            return False
        done += 1
    return done == points

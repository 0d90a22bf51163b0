"""Exact sparse multivariate polynomial algebra and polynomial vector fields.

A polynomial in ``nvars`` state variables ``x1..xN`` and the time variable
``t`` is stored as a sparse map from exponent vectors to float coefficients.
Exponent vectors have length ``nvars + 1``; the last slot is the exponent
of ``t``.  No zero coefficient is ever stored, so the zero polynomial is the
empty map and structural equality doubles as (float-exact) algebraic
equality.

Vector fields are tuples of component polynomials.  Lie brackets treat the
time variable as a frozen parameter: only state variables are
differentiated.
"""

from __future__ import annotations

import re
from typing import Callable, Dict, Iterable, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, SignalParseError

Exponent = Tuple[int, ...]
Terms = Dict[Exponent, float]


def _clean(terms: Terms) -> Terms:
    return {e: c for e, c in terms.items() if c != 0.0}


class Polynomial:
    """Immutable sparse polynomial in state variables x1..xN and time t."""

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Terms | None = None):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        self.nvars = nvars
        clean = _clean(dict(terms or {}))
        for e in clean:
            if len(e) != nvars + 1:
                raise DimensionMismatch(
                    f"exponent vector {e} has length {len(e)}, expected {nvars + 1}"
                )
        self._terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars, {})

    @classmethod
    def const(cls, nvars: int, value: float) -> "Polynomial":
        if value == 0.0:
            return cls.zero(nvars)
        return cls(nvars, {(0,) * (nvars + 1): float(value)})

    @classmethod
    def var(cls, nvars: int, index: int) -> "Polynomial":
        """The state variable ``x_{index+1}`` (0-based index)."""
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for nvars={nvars}")
        e = [0] * (nvars + 1)
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def time(cls, nvars: int) -> "Polynomial":
        e = [0] * (nvars + 1)
        e[-1] = 1
        return cls(nvars, {tuple(e): 1.0})

    # -- basic protocol ----------------------------------------------------

    @property
    def terms(self) -> Terms:
        """Copy of the underlying term map (exponent tuple -> coefficient)."""
        return dict(self._terms)

    def items(self) -> Iterable[Tuple[Exponent, float]]:
        """Terms in canonical (lexicographic) order."""
        return sorted(self._terms.items())

    def is_zero(self) -> bool:
        return not self._terms

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.nvars == other.nvars
            and self._terms == other._terms
        )

    def __hash__(self):
        return hash((self.nvars, tuple(sorted(self._terms.items()))))

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {format_polynomial(self)!r})"

    # -- ring operations ---------------------------------------------------

    def _check_same_space(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise DimensionMismatch(
                f"polynomials on {self.nvars} and {other.nvars} state variables"
            )

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.const(self.nvars, other)
        self._check_same_space(other)
        out = dict(self._terms)
        for e, c in other._terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.const(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        self._check_same_space(other)
        out: Terms = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        if c == 0.0:
            return Polynomial.zero(self.nvars)
        return Polynomial(self.nvars, {e: c * v for e, v in self._terms.items()})

    def __pow__(self, n: int) -> "Polynomial":
        if not isinstance(n, int) or n < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.const(self.nvars, 1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base if n > 1 else base
            n >>= 1
        return result

    # -- calculus ----------------------------------------------------------

    def partial(self, var: int) -> "Polynomial":
        """Formal partial derivative; ``var == nvars`` differentiates in t."""
        if not 0 <= var <= self.nvars:
            raise IndexError(f"variable index {var} out of range")
        out: Terms = {}
        for e, c in self._terms.items():
            k = e[var]
            if k == 0:
                continue
            ne = list(e)
            ne[var] = k - 1
            key = tuple(ne)
            out[key] = out.get(key, 0.0) + c * k
        return Polynomial(self.nvars, out)

    def time_antiderivative(self) -> "Polynomial":
        """Primitive in t vanishing at t = 0."""
        out: Terms = {}
        for e, c in self._terms.items():
            ne = list(e)
            ne[-1] = e[-1] + 1
            out[tuple(ne)] = c / (e[-1] + 1)
        return Polynomial(self.nvars, out)

    def subs_time(self, value: float) -> "Polynomial":
        """Partial evaluation of t; the result has time degree 0."""
        out: Terms = {}
        for e, c in self._terms.items():
            key = e[:-1] + (0,)
            out[key] = out.get(key, 0.0) + c * (value ** e[-1] if e[-1] else 1.0)
        return Polynomial(self.nvars, out)

    def eval(self, q: Sequence[float], t: float = 0.0) -> float:
        """Numeric evaluation; accumulates in canonical term order."""
        if len(q) != self.nvars:
            raise DimensionMismatch(f"point of length {len(q)}, expected {self.nvars}")
        total = 0.0
        for e, c in self.items():
            val = c
            for qi, k in zip(q, e):
                if k:
                    val *= qi**k
            if e[-1]:
                val *= t ** e[-1]
            total += val
        return total

    def eval_state(self, q: Sequence[float]) -> "Polynomial":
        """Evaluate the state variables, leaving a polynomial in t alone.

        The result lives on 0 state variables (exponent vectors of length 1).
        """
        out: Terms = {}
        for e, c in self.items():
            val = c
            for qi, k in zip(q, e):
                if k:
                    val *= qi**k
            key = (e[-1],)
            out[key] = out.get(key, 0.0) + val
        return Polynomial(0, out)

    def compose(
        self,
        state_subs: Sequence["Polynomial"],
        time_sub: "Polynomial | None" = None,
    ) -> "Polynomial":
        """Substitute polynomials for the state variables (and optionally t).

        All substituted polynomials must share a common variable space,
        which becomes the space of the result.  When ``time_sub`` is None
        the time variable passes through unchanged.
        """
        if len(state_subs) != self.nvars:
            raise DimensionMismatch(
                f"{len(state_subs)} substitutions for {self.nvars} state variables"
            )
        if state_subs:
            m = state_subs[0].nvars
        elif time_sub is not None:
            m = time_sub.nvars
        else:
            m = self.nvars
        for p in state_subs:
            if p.nvars != m:
                raise DimensionMismatch("substitutions on mismatched variable spaces")
        tpoly = time_sub if time_sub is not None else Polynomial.time(m)
        result = Polynomial.zero(m)
        for e, c in self.items():
            term = Polynomial.const(m, c)
            for p, k in zip(state_subs, e):
                if k:
                    term = term * (p**k)
            if e[-1]:
                term = term * (tpoly ** e[-1])
            result = result + term
        return result

    # -- structure queries ---------------------------------------------------

    def time_degree(self) -> int:
        return max((e[-1] for e in self._terms), default=0)

    def total_degree(self) -> int:
        return max((sum(e) for e in self._terms), default=0)

    def time_coefficients(self) -> Dict[int, "Polynomial"]:
        """Split into time-monomial layers: p = sum_a t^a * layer[a]."""
        layers: Dict[int, Terms] = {}
        for e, c in self._terms.items():
            a = e[-1]
            key = e[:-1] + (0,)
            layer = layers.setdefault(a, {})
            layer[key] = layer.get(key, 0.0) + c
        return {a: Polynomial(self.nvars, terms) for a, terms in sorted(layers.items())}

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def prune(self, threshold: float) -> "Polynomial":
        """Drop terms with |coefficient| <= threshold (absolute)."""
        if threshold <= 0.0:
            return self
        return Polynomial(
            self.nvars, {e: c for e, c in self._terms.items() if abs(c) > threshold}
        )


class PolyVectorField:
    """Vector field on R^n whose components are polynomials in (x, t)."""

    __slots__ = ("components",)

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        n = comps[0].nvars
        for p in comps:
            if p.nvars != n:
                raise DimensionMismatch("components on mismatched variable spaces")
        if len(comps) != n:
            raise DimensionMismatch(
                f"{len(comps)} components for state dimension {n}"
            )
        self.components = comps

    @classmethod
    def zero(cls, nvars: int) -> "PolyVectorField":
        return cls(tuple(Polynomial.zero(nvars) for _ in range(nvars)))

    @classmethod
    def coordinate(cls, nvars: int, index: int) -> "PolyVectorField":
        """The constant field d/dx_{index+1}."""
        comps = [Polynomial.zero(nvars) for _ in range(nvars)]
        comps[index] = Polynomial.const(nvars, 1.0)
        return cls(comps)

    @property
    def nvars(self) -> int:
        return self.components[0].nvars

    def is_zero(self) -> bool:
        return all(p.is_zero() for p in self.components)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PolyVectorField)
            and self.components == other.components
        )

    def __hash__(self):
        return hash(self.components)

    def __repr__(self) -> str:
        body = ", ".join(format_polynomial(p) for p in self.components)
        return f"PolyVectorField([{body}])"

    def __add__(self, other: "PolyVectorField") -> "PolyVectorField":
        if self.nvars != other.nvars:
            raise DimensionMismatch("vector fields on different state spaces")
        return PolyVectorField(
            tuple(a + b for a, b in zip(self.components, other.components))
        )

    def __sub__(self, other: "PolyVectorField") -> "PolyVectorField":
        return self + other.scale(-1.0)

    def scale(self, c) -> "PolyVectorField":
        """Scale by a float or multiply componentwise by a Polynomial."""
        if isinstance(c, Polynomial):
            return PolyVectorField(tuple(c * p for p in self.components))
        return PolyVectorField(tuple(p.scale(float(c)) for p in self.components))

    def apply_to(self, p: Polynomial) -> Polynomial:
        """Derivation X(p) = sum_i X_i * dp/dx_i (time frozen)."""
        if p.nvars != self.nvars:
            raise DimensionMismatch("polynomial and field on different spaces")
        out = Polynomial.zero(self.nvars)
        for i, comp in enumerate(self.components):
            if comp.is_zero():
                continue
            out = out + comp * p.partial(i)
        return out

    def subs_time(self, value: float) -> "PolyVectorField":
        return PolyVectorField(tuple(p.subs_time(value) for p in self.components))

    def eval(self, q: Sequence[float], t: float = 0.0) -> np.ndarray:
        return np.array([p.eval(q, t) for p in self.components], dtype=float)

    def time_degree(self) -> int:
        return max(p.time_degree() for p in self.components)

    def max_abs_coeff(self) -> float:
        return max(p.max_abs_coeff() for p in self.components)

    def prune(self, threshold: float) -> "PolyVectorField":
        if threshold <= 0.0:
            return self
        return PolyVectorField(tuple(p.prune(threshold) for p in self.components))

    def jacobian(self) -> list:
        """State Jacobian as a nested list J[row][col] = d comp_row / d x_col."""
        n = self.nvars
        return [[self.components[r].partial(c) for c in range(n)] for r in range(n)]


# -- module-level operations -------------------------------------------------


def poly_arith(a: Polynomial, b: Polynomial, op: str) -> Polynomial:
    """Ring operation dispatch: op in {'add', 'mul', 'scale'}.

    For 'scale', ``b`` must be a constant polynomial.
    """
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    if op == "scale":
        if b.total_degree() != 0:
            raise ValueError("'scale' expects a constant second operand")
        return a.scale(b.eval([0.0] * b.nvars) if b.nvars else b.eval([]))
    raise ValueError(f"unknown op {op!r}")


def poly_partial(p: Polynomial, var: int) -> Polynomial:
    return p.partial(var)


def lie_bracket(X: PolyVectorField, Y: PolyVectorField) -> PolyVectorField:
    """[X, Y] = X(Y) - Y(X) componentwise, with time frozen."""
    if X.nvars != Y.nvars:
        raise DimensionMismatch("bracket of fields on different state spaces")
    comps = []
    for k in range(X.nvars):
        comps.append(X.apply_to(Y.components[k]) - Y.apply_to(X.components[k]))
    return PolyVectorField(comps)


def vf_eval(X: PolyVectorField, q: Sequence[float], t: float = 0.0) -> np.ndarray:
    return X.eval(q, t)


# -- text form ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<var>x\d+|t)"
    r"|(?P<op>[-+*^()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise SignalParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num")), pos))
        elif m.lastgroup == "var":
            tokens.append(("var", m.group("var"), pos))
        else:
            tokens.append(("op", m.group("op"), pos))
        pos = m.end()
    tokens.append(("end", None, len(text)))
    return tokens


class _PolyParser:
    """Recursive-descent parser for the canonical polynomial text form.

    Grammar: expr := ['+'|'-'] term (('+'|'-') term)*
             term := factor ('*' factor)*
             factor := NUMBER | VAR ['^' INT] | '(' expr ')' ['^' INT]
    Juxtaposition is not multiplication; '*' is required.
    """

    def __init__(self, tokens, nvars: int):
        self.tokens = tokens
        self.i = 0
        self.nvars = nvars

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, symbol: str):
        kind, val, pos = self.next()
        if kind != "op" or val != symbol:
            raise SignalParseError(f"expected {symbol!r}", pos)

    def parse(self) -> Polynomial:
        p = self.expr()
        kind, _, pos = self.peek()
        if kind != "end":
            raise SignalParseError("trailing input", pos)
        return p

    def expr(self) -> Polynomial:
        sign = 1.0
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.next()
            sign = -1.0 if val == "-" else 1.0
        result = self.term().scale(sign)
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                nxt = self.term()
                result = result + (nxt if val == "+" else -nxt)
            else:
                return result

    def term(self) -> Polynomial:
        result = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.next()
                result = result * self.factor()
            else:
                return result

    def factor(self) -> Polynomial:
        kind, val, pos = self.next()
        if kind == "num":
            base = Polynomial.const(self.nvars, val)
        elif kind == "var":
            if val == "t":
                base = Polynomial.time(self.nvars)
            else:
                idx = int(val[1:]) - 1
                if not 0 <= idx < self.nvars:
                    raise SignalParseError(
                        f"variable {val} out of range for {self.nvars} state variables",
                        pos,
                    )
                base = Polynomial.var(self.nvars, idx)
        elif kind == "op" and val == "(":
            base = self.expr()
            self.expect_op(")")
        else:
            raise SignalParseError(f"unexpected token {val!r}", pos)
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            kind, expval, pos = self.next()
            if kind != "num" or expval != int(expval) or expval < 0:
                raise SignalParseError("exponent must be a nonnegative integer", pos)
            base = base ** int(expval)
        return base


def parse_polynomial(text: str, nvars: int) -> Polynomial:
    return _PolyParser(_tokenize(text), nvars).parse()


def _format_coeff(c: float) -> str:
    if c == int(c) and abs(c) < 1e16:
        return str(int(c))
    return repr(c)


def format_polynomial(p: Polynomial) -> str:
    """Canonical text form; parse(format(p)) reproduces p exactly."""
    if p.is_zero():
        return "0"
    pieces = []
    for e, c in p.items():
        factors = []
        for i, k in enumerate(e[:-1]):
            if k == 1:
                factors.append(f"x{i + 1}")
            elif k > 1:
                factors.append(f"x{i + 1}^{k}")
        if e[-1] == 1:
            factors.append("t")
        elif e[-1] > 1:
            factors.append(f"t^{e[-1]}")
        mag = abs(c)
        if not factors:
            body = _format_coeff(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([_format_coeff(mag)] + factors)
        pieces.append((c < 0, body))
    out = []
    for i, (neg, body) in enumerate(pieces):
        if i == 0:
            out.append(("-" if neg else "") + body)
        else:
            out.append(("- " if neg else "+ ") + body)
    return " ".join(out)


def finite_difference_bracket(
    X: PolyVectorField,
    Y: PolyVectorField,
    q: Sequence[float],
    t: float = 0.0,
    h: float = 1e-6,
) -> np.ndarray:
    """Central finite-difference of X(Y) - Y(X); independent oracle for lie_bracket."""
    q = np.asarray(q, dtype=float)
    n = len(q)

    def directional(V: Callable[[np.ndarray], np.ndarray], W, point):
        # derivative of W along V(point) by central differences
        v = V(point)
        out = np.zeros(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out += v[i] * (W(point + e) - W(point - e)) / (2 * h)
        return out

    fX = lambda p: X.eval(p, t)
    fY = lambda p: Y.eval(p, t)
    return directional(fX, fY, q) - directional(fY, fX, q)

"""Control signals closed under product and antidifferentiation.

Two channel backends:

* :class:`QuasiTrigPoly` -- finite sums ``c * t^k * cos(2 pi m t)`` /
  ``c * t^k * sin(2 pi m t)`` with integer frequencies.  Products reduce by
  the product-to-sum identities and primitives are computed by recursive
  integration by parts, so iterated simplex integrals stay in closed form.
* :class:`PiecewiseConstant` -- sampled values on breakpoint intervals;
  integrals against these fall back to numeric quadrature.

All values are defined on [0, 1].
"""

from __future__ import annotations

import math
import re
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, SignalParseError

TWO_PI = 2.0 * math.pi

# term key: (power k, frequency m, phase) with phase 0 = cos, 1 = sin.
# (k, 0, 0) is the pure monomial t^k; (k, 0, 1) is identically zero and
# never stored.
TermKey = Tuple[int, int, int]
COS, SIN = 0, 1


class QuasiTrigPoly:
    """Finite combination of t^k cos(2 pi m t) and t^k sin(2 pi m t)."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Dict[TermKey, float] | None = None):
        clean: Dict[TermKey, float] = {}
        for (k, m, ph), c in (terms or {}).items():
            if k < 0 or m < 0 or ph not in (COS, SIN):
                raise ValueError(f"invalid term key {(k, m, ph)}")
            if m == 0 and ph == SIN:
                continue  # sin(0) term is identically zero
            if c != 0.0:
                clean[(k, m, ph)] = float(c)
        self._terms = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "QuasiTrigPoly":
        return cls({})

    @classmethod
    def const(cls, c: float) -> "QuasiTrigPoly":
        return cls({(0, 0, COS): float(c)})

    @classmethod
    def monomial(cls, k: int, c: float = 1.0) -> "QuasiTrigPoly":
        return cls({(k, 0, COS): float(c)})

    @classmethod
    def trig(cls, m: int, phase: str, k: int = 0, c: float = 1.0) -> "QuasiTrigPoly":
        ph = {"cos": COS, "sin": SIN}[phase]
        return cls({(k, m, ph): float(c)})

    # -- protocol ----------------------------------------------------------

    @property
    def terms(self) -> Dict[TermKey, float]:
        return dict(self._terms)

    def items(self) -> Iterable[Tuple[TermKey, float]]:
        return sorted(self._terms.items())

    def is_zero(self) -> bool:
        return not self._terms

    def __eq__(self, other) -> bool:
        return isinstance(other, QuasiTrigPoly) and self._terms == other._terms

    def __hash__(self):
        return hash(tuple(sorted(self._terms.items())))

    def __repr__(self) -> str:
        return f"QuasiTrigPoly({format_qtp(self)!r})"

    def max_power(self) -> int:
        return max((k for k, _, _ in self._terms), default=0)

    def max_frequency(self) -> int:
        return max((m for _, m, _ in self._terms), default=0)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = QuasiTrigPoly.const(other)
        out = dict(self._terms)
        for key, c in other._terms.items():
            out[key] = out.get(key, 0.0) + c
        return QuasiTrigPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return QuasiTrigPoly({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = QuasiTrigPoly.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: float) -> "QuasiTrigPoly":
        return QuasiTrigPoly({k: c * v for k, v in self._terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        out: Dict[TermKey, float] = {}

        def accumulate(k: int, m: int, ph: int, c: float):
            if m < 0:
                # cos is even, sin is odd
                m = -m
                if ph == SIN:
                    c = -c
            if m == 0 and ph == SIN:
                return
            key = (k, m, ph)
            out[key] = out.get(key, 0.0) + c

        for (k1, m1, p1), c1 in self._terms.items():
            for (k2, m2, p2), c2 in other._terms.items():
                k = k1 + k2
                c = c1 * c2
                if p1 == COS and p2 == COS:
                    # cos a cos b = (cos(a-b) + cos(a+b)) / 2
                    accumulate(k, m1 - m2, COS, 0.5 * c)
                    accumulate(k, m1 + m2, COS, 0.5 * c)
                elif p1 == SIN and p2 == SIN:
                    # sin a sin b = (cos(a-b) - cos(a+b)) / 2
                    accumulate(k, m1 - m2, COS, 0.5 * c)
                    accumulate(k, m1 + m2, COS, -0.5 * c)
                elif p1 == SIN and p2 == COS:
                    # sin a cos b = (sin(a+b) + sin(a-b)) / 2
                    accumulate(k, m1 + m2, SIN, 0.5 * c)
                    accumulate(k, m1 - m2, SIN, 0.5 * c)
                else:  # cos a sin b
                    accumulate(k, m1 + m2, SIN, 0.5 * c)
                    accumulate(k, m2 - m1, SIN, 0.5 * c)
        return QuasiTrigPoly(out)

    __rmul__ = __mul__

    # -- calculus ----------------------------------------------------------

    def derivative(self) -> "QuasiTrigPoly":
        out: Dict[TermKey, float] = {}

        def accumulate(key: TermKey, c: float):
            if c == 0.0 or (key[1] == 0 and key[2] == SIN):
                return
            out[key] = out.get(key, 0.0) + c

        for (k, m, ph), c in self._terms.items():
            if k > 0:
                accumulate((k - 1, m, ph), c * k)
            if m > 0:
                w = TWO_PI * m
                if ph == COS:
                    accumulate((k, m, SIN), -c * w)
                else:
                    accumulate((k, m, COS), c * w)
        return QuasiTrigPoly(out)

    def antiderivative(self) -> "QuasiTrigPoly":
        """Primitive F with F(0) = 0, computed term by term.

        t^k trig(2 pi m t) integrates by parts recursively until the
        polynomial factor is exhausted.
        """
        out = QuasiTrigPoly.zero()
        for (k, m, ph), c in self.items():
            out = out + _antiderivative_term(k, m, ph, c)
        # enforce F(0) = 0
        at0 = out.eval(0.0)
        if at0 != 0.0:
            out = out - at0
        return out

    def eval(self, t):
        """Evaluate at a scalar or numpy array; canonical accumulation order."""
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for (k, m, ph), c in self.items():
            term = np.full_like(t, c)
            if k:
                term = term * t**k
            if m:
                ang = TWO_PI * m * t
                term = term * (np.cos(ang) if ph == COS else np.sin(ang))
            total = total + term
        if total.ndim == 0:
            return float(total)
        return total

    __call__ = eval


def _antiderivative_term(k: int, m: int, ph: int, c: float) -> QuasiTrigPoly:
    if m == 0:
        return QuasiTrigPoly({(k + 1, 0, COS): c / (k + 1)})
    w = TWO_PI * m
    if k == 0:
        if ph == COS:
            return QuasiTrigPoly({(0, m, SIN): c / w})
        return QuasiTrigPoly({(0, m, COS): -c / w})
    # integral t^k cos = t^k sin/w - (k/w) integral t^{k-1} sin, and dually
    if ph == COS:
        lead = QuasiTrigPoly({(k, m, SIN): c / w})
        return lead + _antiderivative_term(k - 1, m, SIN, -c * k / w)
    lead = QuasiTrigPoly({(k, m, COS): -c / w})
    return lead + _antiderivative_term(k - 1, m, COS, c * k / w)


def qtp_mul(a: QuasiTrigPoly, b: QuasiTrigPoly) -> QuasiTrigPoly:
    return a * b


def qtp_antiderivative(f: QuasiTrigPoly) -> QuasiTrigPoly:
    return f.antiderivative()


class PiecewiseConstant:
    """Piecewise-constant signal given by (start, end, value) segments.

    Segments must cover [0, 1] without gaps.  A boundary point belongs to
    the earliest segment containing it.
    """

    __slots__ = ("segments",)

    def __init__(self, segments: Sequence[Tuple[float, float, float]]):
        segs = sorted((float(a), float(b), float(v)) for a, b, v in segments)
        if not segs:
            raise ValueError("piecewise signal needs at least one segment")
        if abs(segs[0][0]) > 1e-12 or abs(segs[-1][1] - 1.0) > 1e-12:
            raise ValueError("piecewise segments must cover [0, 1]")
        for (a1, b1, _), (a2, b2, _) in zip(segs, segs[1:]):
            if abs(b1 - a2) > 1e-12:
                raise ValueError("piecewise segments must be contiguous")
        self.segments = tuple(segs)

    def breakpoints(self) -> Tuple[float, ...]:
        pts = [self.segments[0][0]]
        pts.extend(b for _, b, _ in self.segments)
        return tuple(pts)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        flat_t = np.atleast_1d(t)
        flat = np.atleast_1d(out)
        for i, ti in enumerate(flat_t):
            val = None
            for a, b, v in self.segments:
                if a <= ti <= b:
                    val = v
                    break
            if val is None:
                raise ValueError(f"time {ti} outside the signal domain")
            flat[i] = val
        if out.ndim == 0:
            return float(flat[0])
        return out

    __call__ = eval

    def __eq__(self, other):
        return isinstance(other, PiecewiseConstant) and self.segments == other.segments

    def __hash__(self):
        return hash(self.segments)

    def __repr__(self):
        return f"PiecewiseConstant({self.segments!r})"


Channel = Union[QuasiTrigPoly, PiecewiseConstant]


class ControlSignal:
    """Vector-valued control on [0, 1]; one channel per control direction."""

    __slots__ = ("channels",)

    def __init__(self, channels: Sequence[Channel]):
        chs = tuple(channels)
        if not chs:
            raise ValueError("a control signal needs at least one channel")
        for ch in chs:
            if not isinstance(ch, (QuasiTrigPoly, PiecewiseConstant)):
                raise TypeError(f"unsupported channel type {type(ch)!r}")
        self.channels = chs

    @classmethod
    def zero(cls, k: int) -> "ControlSignal":
        return cls([QuasiTrigPoly.zero() for _ in range(k)])

    @classmethod
    def constant(cls, values: Sequence[float]) -> "ControlSignal":
        return cls([QuasiTrigPoly.const(v) for v in values])

    @property
    def k(self) -> int:
        return len(self.channels)

    def is_quasitrig(self) -> bool:
        return all(isinstance(ch, QuasiTrigPoly) for ch in self.channels)

    def eval(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < -1e-12) or np.any(t_arr > 1.0 + 1e-12):
            raise ValueError("control signals are defined on [0, 1]")
        vals = [ch.eval(t) for ch in self.channels]
        return np.array(vals) if t_arr.ndim == 0 else np.stack(vals)

    __call__ = eval

    def __eq__(self, other):
        return isinstance(other, ControlSignal) and self.channels == other.channels

    def __hash__(self):
        return hash(self.channels)

    def __repr__(self):
        return f"ControlSignal(k={self.k})"

    # linear structure (quasi-trig channels only)

    def _require_qtp(self, what: str):
        if not self.is_quasitrig():
            raise TypeError(f"{what} requires quasi-trig channels")

    def __add__(self, other: "ControlSignal") -> "ControlSignal":
        if self.k != other.k:
            raise DimensionMismatch("control signals with different channel counts")
        self._require_qtp("signal addition")
        other._require_qtp("signal addition")
        return ControlSignal([a + b for a, b in zip(self.channels, other.channels)])

    def __sub__(self, other: "ControlSignal") -> "ControlSignal":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "ControlSignal":
        self._require_qtp("signal scaling")
        return ControlSignal([ch.scale(float(c)) for ch in self.channels])

    def __mul__(self, c: float) -> "ControlSignal":
        return self.scale(c)

    __rmul__ = __mul__


def signal_eval(s: ControlSignal, t) -> np.ndarray:
    return s.eval(t)


def combine(coeffs: Sequence[float], signals: Sequence[ControlSignal]) -> ControlSignal:
    """Linear combination sum_i coeffs[i] * signals[i] (quasi-trig only)."""
    if len(coeffs) != len(signals):
        raise DimensionMismatch("coefficient/signal count mismatch")
    if not signals:
        raise ValueError("empty combination")
    out = ControlSignal.zero(signals[0].k)
    for c, s in zip(coeffs, signals):
        if c != 0.0:
            out = out + s.scale(float(c))
    return out


# -- text form ----------------------------------------------------------------

_PW_RE = re.compile(r"^\s*pw\s*\[(?P<body>.*)\]\s*$", re.S)
_PW_SEG_RE = re.compile(
    r"\(\s*(?P<a>[-+0-9.eE]+)\s*,\s*(?P<b>[-+0-9.eE]+)\s*,\s*(?P<v>[-+0-9.eE]+)\s*\)"
)

_SIG_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>pi|sin|cos|t)"
    r"|(?P<op>[-+*^()]))"
)


def _sig_tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        m = _SIG_TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise SignalParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num")), pos))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), pos))
        else:
            tokens.append(("op", m.group("op"), pos))
        pos = m.end()
    tokens.append(("end", None, len(text)))
    return tokens


class _SignalParser:
    """Parses trig-polynomial expressions like ``2*pi*sin(2*pi*t)`` or ``t^2``.

    Trig arguments must be integer multiples of ``2*pi*t`` so the result
    stays in the closed algebra.
    """

    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> QuasiTrigPoly:
        p = self.expr()
        kind, _, pos = self.peek()
        if kind != "end":
            raise SignalParseError("trailing input", pos)
        return p

    def expr(self) -> QuasiTrigPoly:
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

    def term(self) -> QuasiTrigPoly:
        result = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.next()
                result = result * self.factor()
            else:
                return result

    def factor(self) -> QuasiTrigPoly:
        kind, val, pos = self.next()
        if kind == "num":
            base = QuasiTrigPoly.const(val)
        elif kind == "name" and val == "pi":
            base = QuasiTrigPoly.const(math.pi)
        elif kind == "name" and val == "t":
            base = QuasiTrigPoly.monomial(1)
        elif kind == "name" and val in ("sin", "cos"):
            self._expect("(")
            m = self._trig_argument()
            self._expect(")")
            base = QuasiTrigPoly.trig(m, val)
        elif kind == "op" and val == "(":
            base = self.expr()
            self._expect(")")
        else:
            raise SignalParseError(f"unexpected token {val!r}", pos)
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            kind, expval, pos = self.next()
            if kind != "num" or expval != int(expval) or expval < 0:
                raise SignalParseError("exponent must be a nonnegative integer", pos)
            result = QuasiTrigPoly.const(1.0)
            for _ in range(int(expval)):
                result = result * base
            base = result
        return base

    def _expect(self, symbol: str):
        kind, val, pos = self.next()
        if kind != "op" or val != symbol:
            raise SignalParseError(f"expected {symbol!r}", pos)

    def _trig_argument(self) -> int:
        """Accepts k*2*pi*t-style products; returns the integer frequency."""
        coeff = 1.0
        saw_pi = False
        saw_t = False
        while True:
            kind, val, pos = self.next()
            if kind == "num":
                coeff *= val
            elif kind == "name" and val == "pi":
                saw_pi = True
            elif kind == "name" and val == "t":
                saw_t = True
            else:
                raise SignalParseError("trig argument must be a multiple of 2*pi*t", pos)
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.next()
                continue
            break
        if not (saw_pi and saw_t):
            raise SignalParseError("trig argument must contain pi and t")
        m = coeff / 2.0
        if abs(m - round(m)) > 1e-9 or round(m) < 0:
            raise SignalParseError(
                f"trig frequency must be a nonnegative integer multiple of 2*pi, got {coeff}*pi"
            )
        return int(round(m))


def parse_channel(text: str) -> Channel:
    """Parse one channel: either ``pw[(a,b,v),...]`` or a trig-poly expression."""
    m = _PW_RE.match(text)
    if m:
        segs = [
            (float(g["a"]), float(g["b"]), float(g["v"]))
            for g in (mm.groupdict() for mm in _PW_SEG_RE.finditer(m.group("body")))
        ]
        if not segs:
            raise SignalParseError("empty piecewise signal")
        return PiecewiseConstant(segs)
    return _SignalParser(_sig_tokenize(text)).parse()


def parse_control(texts: Sequence[str]) -> ControlSignal:
    return ControlSignal([parse_channel(s) for s in texts])


def format_qtp(f: QuasiTrigPoly) -> str:
    if f.is_zero():
        return "0"
    pieces = []
    for (k, m, ph), c in f.items():
        factors = []
        if k == 1:
            factors.append("t")
        elif k > 1:
            factors.append(f"t^{k}")
        if m > 0:
            name = "cos" if ph == COS else "sin"
            factors.append(f"{name}(2*pi*{m}*t)" if m != 1 else f"{name}(2*pi*t)")
        mag = abs(c)
        if not factors:
            body = repr(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([repr(mag)] + factors)
        pieces.append((c < 0, body))
    out = []
    for i, (neg, body) in enumerate(pieces):
        if i == 0:
            out.append(("-" if neg else "") + body)
        else:
            out.append(("- " if neg else "+ ") + body)
    return " ".join(out)


def format_channel(ch: Channel) -> str:
    if isinstance(ch, PiecewiseConstant):
        body = ",".join(f"({a!r},{b!r},{v!r})" for a, b, v in ch.segments)
        return f"pw[{body}]"
    return format_qtp(ch)

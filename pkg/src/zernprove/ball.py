"""Midpoint-radius ("ball") arithmetic over IEEE doubles.

Outward rounding is done without touching the FPU rounding mode: every
operation computes its center with round-to-nearest and then adds a bound
for the rounding error to the radius, itself accumulated with upward
``nextafter`` steps.  The same approach, applied to whole arrays, is used
by the vectorized helpers at the bottom of this module (Rump's a-priori
bounds for sums and matrix products).

Non-finite input is rejected, and any overflow raises ``OverflowError``
instead of producing an infinite radius.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

__all__ = [
    "Ball",
    "sqrt_of_rational",
    "upper_abs",
    "up",
    "down",
    "U",
    "ETA",
    "gamma",
    "sum_upper",
    "mul_upper",
    "matmul",
    "abs_matmul_upper",
    "fraction_ball",
]

U = 2.0 ** -53  # unit roundoff
ETA = 2.0 ** -1074  # smallest positive subnormal
PRECISION_BITS = 53


def _check(x: float) -> float:
    if not math.isfinite(x):
        raise OverflowError("ball arithmetic overflow")
    return x


def _up(x: float) -> float:
    return _check(math.nextafter(x, math.inf))


def _down(x: float) -> float:
    return math.nextafter(x, -math.inf)


def _err(c: float) -> float:
    """Bound on the rounding error of one correctly rounded result ``c``."""
    return _up(abs(c) * U + ETA)


class Ball:
    """The closed interval ``[center - radius, center + radius]``."""

    __slots__ = ("center", "radius")

    def __init__(self, center: float, radius: float = 0.0):
        center = float(center)
        radius = float(radius)
        if not (math.isfinite(center) and math.isfinite(radius)):
            raise ValueError("ball center and radius must be finite")
        if radius < 0:
            raise ValueError("ball radius must be nonnegative")
        self.center = center
        self.radius = radius

    # -- constructors ---------------------------------------------------------

    @classmethod
    def exact(cls, x) -> "Ball":
        """Enclosure of an int, float or Fraction (radius 0 when representable)."""
        if isinstance(x, float):
            return cls(x)
        return fraction_ball(Fraction(x))

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Ball":
        if isinstance(other, Ball):
            return other
        if isinstance(other, (int, float, Fraction)):
            return Ball.exact(other)
        return NotImplemented

    def __add__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        c = _check(self.center + b.center)
        return Ball(c, _up(_up(self.radius + b.radius) + _err(c)))

    __radd__ = __add__

    def __neg__(self):
        return Ball(-self.center, self.radius)

    def __sub__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        return self + (-b)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        c = _check(self.center * b.center)
        r = _up(abs(self.center) * b.radius)
        r = _up(r + _up(abs(b.center) * self.radius))
        r = _up(r + _up(self.radius * b.radius))
        return Ball(c, _up(r + _err(c)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._coerce(other)
        if b is NotImplemented:
            return b
        if abs(b.center) <= b.radius:
            raise ZeroDivisionError("division by a ball containing zero")
        c = _check(self.center / b.center)
        # |x/y - c0| <= (ra + |c0| rb) / (|cb| - rb), with c0 = ca/cb
        num = _up(self.radius + _up(_up(abs(c) + _err(c)) * b.radius))
        den = _down(abs(b.center) - b.radius)
        if den <= 0:
            raise ZeroDivisionError("division by a ball containing zero")
        return Ball(c, _up(_up(num / den) + _err(c)))

    def __rtruediv__(self, other):
        return Ball.exact(other) / self

    def sqr(self) -> "Ball":
        c = _check(self.center * self.center)
        r = _up(_up(2 * abs(self.center) * self.radius) + _up(self.radius * self.radius))
        return Ball(c, _up(r + _err(c)))

    def sqrt(self) -> "Ball":
        lo = self.center - self.radius
        if lo < 0:
            if self.center + self.radius < 0:
                raise ValueError("square root of a negative ball")
            lo = 0.0
        hi = _up(self.center + self.radius)
        lo_r = _down(math.sqrt(_down(lo))) if lo > 0 else 0.0
        hi_r = _up(math.sqrt(hi))
        return Ball.hull(max(lo_r, 0.0), hi_r)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            return NotImplemented
        out, base = Ball(1.0), self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- predicates and conversions -----------------------------------------

    @classmethod
    def hull(cls, lo: float, hi: float) -> "Ball":
        """Smallest-ish ball containing ``[lo, hi]``."""
        if lo > hi:
            raise ValueError("empty interval")
        c = _check(0.5 * lo + 0.5 * hi)
        r = max(_up(hi - c), _up(c - lo))
        return cls(c, _up(r + ETA))

    def lower(self) -> float:
        return _down(self.center - self.radius)

    def upper(self) -> float:
        return _up(self.center + self.radius)

    def contains(self, x) -> bool:
        """Exact membership test for a float, int or Fraction."""
        return abs(Fraction(x) - Fraction(self.center)) <= Fraction(self.radius)

    def contains_ball(self, other: "Ball") -> bool:
        gap = abs(Fraction(other.center) - Fraction(self.center))
        return gap + Fraction(other.radius) <= Fraction(self.radius)

    def contains_zero(self) -> bool:
        return abs(self.center) <= self.radius

    def positive(self) -> bool:
        return self.center > self.radius

    def widen(self, r: float) -> "Ball":
        return Ball(self.center, _up(self.radius + r))

    def __repr__(self):
        return f"Ball({self.center!r}, {self.radius!r})"

    def __eq__(self, other):
        return isinstance(other, Ball) and (self.center, self.radius) == (other.center, other.radius)

    def __hash__(self):
        return hash((self.center, self.radius))

    def to_text(self) -> str:
        """``"center radius"`` in hex-float form; round-trips bit-exactly."""
        return f"{self.center.hex()} {self.radius.hex()}"

    @classmethod
    def from_text(cls, text: str) -> "Ball":
        c, r = text.split()
        return cls(_parse_float(c), _parse_float(r))


def _parse_float(tok: str) -> float:
    return float.fromhex(tok) if "0x" in tok.lower() else float(tok)


def fraction_ball(q: Fraction) -> Ball:
    """Enclosure of an exact rational."""
    q = Fraction(q)
    try:
        c = q.numerator / q.denominator  # correctly rounded
    except OverflowError as exc:
        raise OverflowError("rational out of double range") from exc
    c = _check(c)
    if Fraction(c) == q:
        return Ball(c)
    return Ball(c, _err(c))


def sqrt_of_rational(p: int, q: int) -> Ball:
    """Enclosure of ``sqrt(p/q)`` with radius at most a few ulps."""
    if p < 0 or q <= 0:
        raise ValueError("need p >= 0 and q > 0")
    if p == 0:
        return Ball(0.0)
    c = _check(math.sqrt(p / q))
    # widen until the square of the bounds brackets p/q exactly
    target = Fraction(p, q)
    r = _err(c)
    for _ in range(8):
        lo, hi = Fraction(c) - Fraction(r), Fraction(c) + Fraction(r)
        if lo <= 0 or (lo * lo <= target <= hi * hi):
            return Ball(c, r)
        r = _up(2 * r)
    raise ArithmeticError("square root enclosure failed")  # pragma: no cover


def upper_abs(a: Ball) -> float:
    """Upper bound on ``|x|`` for all ``x`` in the ball."""
    if a.radius == 0.0:
        return abs(a.center)
    return _up(abs(a.center) + a.radius)


# -- vectorized rigorous helpers ---------------------------------------------------

def up(x):
    """Next double toward +inf, elementwise; raises on overflow."""
    out = np.nextafter(x, np.inf)
    if not np.all(np.isfinite(out)):
        raise OverflowError("ball arithmetic overflow")
    return out


def down(x):
    return np.nextafter(x, -np.inf)


def gamma(k: int) -> float:
    """Upper bound for ``k u / (1 - k u)``."""
    if k * U >= 0.5:
        raise OverflowError("too many terms for a rounding-error bound")
    return _up(_up(k * U) / _down(1.0 - k * U))


def sum_upper(x, axis=None):
    """Upper bound for the exact sum of a nonnegative array."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size if axis is None else x.shape[axis]
    s = np.sum(x, axis=axis)
    # floating addition is exact on underflow, so no absolute term is needed
    return np.where(s > 0, up(s * (1.0 + gamma(max(n, 1) + 2))), 0.0)


def mul_upper(a, b):
    """Elementwise upper bound for ``a * b`` with ``a, b >= 0``."""
    return up(np.multiply(a, b) + ETA)


def abs_matmul_upper(A, B):
    """Upper bound for ``A @ B`` with nonnegative operands."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    k = A.shape[-1]
    out = up((A @ B) * (1.0 + gamma(k + 2)) + (k + 1) * ETA)
    # entries with no nonzero term pair are exactly zero
    live = ((A > 0).astype(np.float64) @ (B > 0).astype(np.float64)) > 0
    return np.where(live, out, 0.0)


def matmul(Ac, Ar, Bc, Br):
    """Ball matrix product in midpoint-radius form.

    Returns ``(C, R)`` so that every product of members of the two ball
    matrices lies within ``R`` of ``C`` entrywise.  ``Ar`` or ``Br`` may be
    ``None`` for exact (zero-radius) operands.
    """
    Ac = np.asarray(Ac, dtype=np.float64)
    Bc = np.asarray(Bc, dtype=np.float64)
    k = Ac.shape[-1]
    C = Ac @ Bc
    if not np.all(np.isfinite(C)):
        raise OverflowError("ball arithmetic overflow")
    aA, aB = np.abs(Ac), np.abs(Bc)
    # |fl(Ac Bc) - Ac Bc| <= gamma_k |Ac||Bc|
    R = abs_matmul_upper(aA, aB) * gamma(k)
    if Br is not None:
        R = R + abs_matmul_upper(aA, Br)
    if Ar is not None:
        bB = aB if Br is None else up(aB + Br)
        R = R + abs_matmul_upper(Ar, bB)
    n_terms = 1 + (Br is not None) + (Ar is not None)
    return C, np.where(R > 0, up(R * (1.0 + gamma(n_terms)) + ETA), 0.0)

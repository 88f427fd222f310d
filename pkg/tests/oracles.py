"""Independent reference computations used by the tests (sympy, exact)."""

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import sympy

from zernprove.zernike import ODD, Zernike

r, z, zb = sympy.symbols("r z zb")


@lru_cache(maxsize=None)
def zernike_poly(m: int, n: int) -> sympy.Expr:
    """``V^m_n`` as a polynomial in ``z, zb`` from the Rodrigues formula.

    ``V^m_n = d_z^l d_zb^k (z zb - 1)^n / n!`` with ``n = k + l``, ``m = k - l``.
    """
    if n < abs(m) or (n - m) % 2:
        raise ValueError("not a Zernike mode")
    k, l = (n + m) // 2, (n - m) // 2
    P = (z * zb - 1) ** n / sympy.factorial(n)
    return sympy.expand(sympy.diff(sympy.diff(P, z, l), zb, k))


@lru_cache(maxsize=None)
def radial_poly(m: int, n: int) -> sympy.Expr:
    """``R^{|m|}_n(r)``: ``V^m_n`` on the positive real axis."""
    return sympy.expand(zernike_poly(abs(m), n).subs({z: r, zb: r}))


def to_fraction(x) -> Fraction:
    x = sympy.nsimplify(x)
    return Fraction(int(x.p), int(x.q))


def expand_radial(poly: sympy.Expr, m: int) -> dict:
    """Coefficients ``c_n`` with ``poly(r) = sum_n c_n R^m_n(r)`` (exact, triangular solve)."""
    poly = sympy.Poly(sympy.expand(poly), r)
    deg = poly.degree()
    rest = sympy.expand(poly.as_expr())
    out = {}
    for n in range(deg, abs(m) - 1, -1):
        if (n - m) % 2:
            continue
        R = sympy.Poly(radial_poly(m, n), r)
        c = sympy.Poly(rest, r).coeff_monomial(r**n) / R.coeff_monomial(r**n)
        if c:
            out[n] = to_fraction(c)
            rest = sympy.expand(rest - c * R.as_expr())
    if rest != 0:
        raise ValueError("polynomial is not in the span of the band")
    return out


def zernike_product_weights(n1: int, m1: int, n2: int, m2: int) -> dict:
    """Exact weights ``C_n3`` of ``V^{m1}_{n1} V^{m2}_{n2} = sum C_n3 V^{m1+m2}_{n3}``."""
    return expand_radial(radial_poly(m1, n1) * radial_poly(m2, n2), abs(m1 + m2))


def neg_laplacian_polar(expr: sympy.Expr, m: int) -> sympy.Expr:
    """``-Delta`` of ``f(r) cos(m t)`` divided by ``cos(m t)``."""
    f = expr
    return sympy.expand(-(sympy.diff(f, r, 2) + sympy.diff(f, r) / r - m * m * f / r**2))


# -- extended-precision point evaluation ---------------------------------------------------

@lru_cache(maxsize=None)
def _explicit_terms(m: int, n: int):
    """Integer coefficients of the classical explicit sum for ``R^m_n``."""
    m = abs(m)
    out = []
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * math.factorial(n - s) // (
            math.factorial(s) * math.factorial((n + m) // 2 - s) * math.factorial((n - m) // 2 - s))
        out.append((n - 2 * s, c))
    return tuple(out)


def radial_ld(m: int, n: int, r):
    """``R^m_n(r)`` in long double from the explicit factorial sum."""
    r = np.asarray(r, dtype=np.longdouble)
    return sum(np.longdouble(c) * r ** p for p, c in _explicit_terms(m, n))


def eval_modes_ld(modes: dict, parity: int, r, t):
    """``sum c V^m_n`` (cosine for parity 0, sine for 1) in long double."""
    r = np.asarray(r, dtype=np.longdouble)
    t = np.asarray(t, dtype=np.longdouble)
    trig = np.sin if parity else np.cos
    out = np.zeros(np.broadcast(r, t).shape, dtype=np.longdouble)
    for (m, n), c in modes.items():
        out += np.longdouble(c) * radial_ld(m, n, r) * trig(np.longdouble(m) * t)
    return out


def sample_member(u, rng) -> dict:
    """A function in the enclosure ``u``, as ``{(m, n): float}``.

    Coefficients are moved inside their balls, and every nonzero error slot
    contributes one mode it is allowed to cover (possibly above ``u.size``),
    using at most 90% of its mass.
    """
    rho = float(u.rho)
    out: dict = {}
    for m, j in zip(*np.nonzero((u.center != 0) | (u.radius != 0))):
        m, j = int(m), int(j)
        c = float(u.center[m, j]) + float(u.radius[m, j]) * 0.9 * rng.uniform(-1, 1)
        out[(m, m + 2 * j)] = c
    for m, j in zip(*np.nonzero(u.tail)):
        m, j = int(m), int(j)
        n = m + 2 * j + 2 * int(rng.integers(0, 3))
        out[(m, n)] = out.get((m, n), 0.0) + 0.9 * rng.choice([-1, 1]) * u.tail[m, j] / rho ** n
    for m in np.flatnonzero(u.band):
        m = int(m)
        mm = m + int(rng.integers(0, 3))
        if u.parity == 1 and mm == 0:
            mm = 1
        n = mm + 2 * int(rng.integers(0, 2))
        out[(mm, n)] = out.get((mm, n), 0.0) + 0.9 * rng.choice([-1, 1]) * u.band[m] / rho ** n
    return out


def random_enclosure(rng: np.random.Generator, parity=None, size=10, maxdeg=5, errors=True,
                     rho=Fraction(65, 64)):
    """A random enclosure with a few coefficients, radii and error slots."""
    parity = int(rng.integers(0, 2)) if parity is None else parity
    u = Zernike.zero(rho, parity, size)
    L = u.layout
    act = L.active & (L.deg <= maxdeg)
    if parity == ODD:
        act[0] = False
    k = int(act.sum())
    u.center[act] = rng.standard_normal(k) * (rng.random(k) < 0.7)
    u.radius[act] = rng.random(k) * 1e-3 * (rng.random(k) < 0.3)
    if errors:
        if rng.random() < 0.5:
            m = int(rng.integers(1 if parity else 0, 4))
            u.tail[m, int(rng.integers(0, L.D[m] + 2))] = rng.random() * 1e-2
        if rng.random() < 0.5:
            u.band[int(rng.integers(0, 2 * size + 1))] = rng.random() * 1e-2
    return u


def _slack(*vals):
    # long-double oracle error, far below the enclosure rounding radii
    return 1e-16 * (1 + sum(abs(float(v)) for v in vals))


def enclosure_bound(u: Zernike) -> float:
    """Upper bound for |x(p) - center(p)| over members x and points p."""
    return float(u.radius.sum()) + u.error_total()

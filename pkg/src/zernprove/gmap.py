"""The fixed-point map ``G(u) = (-Delta)^{-1}(w u^3)`` and its derivative."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ball import Ball
from .zernike import (
    EVEN,
    Zernike,
    _as_tensor,
    evaluate,
    inv_neg_lap,
    multiply,
    scale,
)

__all__ = [
    "Weight",
    "weight_radial_power",
    "radial_power_coefficients",
    "g_apply",
    "dg_apply",
    "dg_multiplier",
    "dg_apply_with",
]


@dataclass(frozen=True)
class Weight:
    """A radial weight ``w`` (even enclosure supported on the band ``m = 0``)."""

    w: Zernike
    label: str = ""

    def __post_init__(self):
        w = self.w
        if w.parity != EVEN:
            raise ValueError("weights must have even parity")
        if w.center[1:].any() or w.radius[1:].any() or w.tail[1:].any() or w.band[1:].any():
            raise ValueError("weights must be radial (band m = 0 only)")

    def check_nonnegative(self, samples: int = 257) -> bool:
        """Floating check of ``w >= 0`` on a radial grid (an input obligation)."""
        r = np.linspace(0.0, 1.0, samples)
        return bool((evaluate(self.w, r, np.zeros_like(r)) >= -1e-14).all())

    @property
    def degree(self) -> int:
        nz = np.flatnonzero(self.w.center[0])
        return int(2 * nz.max()) if len(nz) else 0


def _legendre_monomials(k: int) -> list[list[Fraction]]:
    """Coefficients of ``P_0..P_k`` in powers of ``x``."""
    P = [[Fraction(1)], [Fraction(0), Fraction(1)]]
    for n in range(1, k):
        a = [Fraction(0)] + [Fraction(2 * n + 1, n + 1) * c for c in P[n]]
        b = [Fraction(n, n + 1) * c for c in P[n - 1]] + [Fraction(0)] * 2
        P.append([x - y for x, y in zip(a, b)])
    return P[: k + 1]


def radial_power_coefficients(alpha: int) -> list[Fraction]:
    """Exact ``c_k`` with ``r**alpha = sum_k c_k R^0_{2k}(r)``.

    ``R^0_{2k}(r)`` is the Legendre polynomial ``P_k(2r^2 - 1)``, so this
    expands ``((1 + x)/2)**(alpha/2)`` in Legendre polynomials.
    """
    if alpha < 0 or alpha % 2:
        raise ValueError("alpha must be an even nonnegative integer")
    p = alpha // 2
    # target monomial coefficients of ((1+x)/2)^p
    target = [Fraction(0)] * (p + 1)
    binom = 1
    for i in range(p + 1):
        target[i] = Fraction(binom, 2 ** p)
        binom = binom * (p - i) // (i + 1)
    P = _legendre_monomials(p)
    coeffs = [Fraction(0)] * (p + 1)
    rest = target[:]
    for k in range(p, -1, -1):
        c = rest[k] / P[k][k]
        coeffs[k] = c
        for i in range(k + 1):
            rest[i] -= c * P[k][i]
    return coeffs


def weight_radial_power(alpha: int, rho, size: int) -> Weight:
    """The weight ``r**alpha`` as an enclosure (exact rationals as balls)."""
    if alpha < 0 or alpha % 2:
        raise ValueError("alpha must be an even nonnegative integer")
    if alpha > size:
        raise ValueError(f"r^{alpha} needs size >= {alpha}")
    coeffs = radial_power_coefficients(alpha)
    w = Zernike.from_modes(rho, EVEN, size, {(0, 2 * k): c for k, c in enumerate(coeffs)})
    return Weight(w, label=f"r^{alpha}")


def g_apply(w: Weight, u: Zernike, table=None) -> Zernike:
    """Enclosure of ``(-Delta)^{-1}(w x^3)`` for every member ``x`` of ``u``."""
    if u.parity != EVEN:
        raise ValueError("G acts on even enclosures")
    T = _as_tensor(table, u.size)
    u2 = multiply(u, u, T)
    u3 = multiply(u2, u, T)
    return inv_neg_lap(multiply(w.w, u3, T))


def dg_multiplier(w: Weight, u: Zernike, table=None) -> Zernike:
    """Enclosure of ``3 w x^2`` for members ``x`` of ``u``."""
    if u.parity != EVEN:
        raise ValueError("DG is taken at even enclosures")
    T = _as_tensor(table, u.size)
    return scale(Ball(3.0), multiply(w.w, multiply(u, u, T), T))


def dg_apply_with(mult: Zernike, h: Zernike, table=None) -> Zernike:
    """``(-Delta)^{-1}(mult * h)`` for a precomputed multiplier."""
    return inv_neg_lap(multiply(mult, h, _as_tensor(table, h.size)))


def dg_apply(w: Weight, u: Zernike, h: Zernike, table=None) -> Zernike:
    """Enclosure of ``(-Delta)^{-1}(3 w x^2 y)`` for ``x`` in ``u`` and ``y`` in ``h``."""
    T = _as_tensor(table, u.size)
    return dg_apply_with(dg_multiplier(w, u, T), h, T)

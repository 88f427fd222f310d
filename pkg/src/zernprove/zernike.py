"""Enclosures of analytic functions on the unit disk in a Zernike basis.

A :class:`Zernike` enclosure of fixed angular parity (cosine or sine) stores

* coefficient balls for the modes ``V^m_n`` with ``n = m + 2j <= size``,
* radial tails ``tail[m, j]``: a bound on the weighted norm of a part of the
  function that only uses modes ``V^m_n`` with ``n >= m + 2j``,
* band errors ``band[m]``: a bound on a part that only uses angular
  indices ``>= m`` (any degree).

The norm is ``sum |a_{m,n}| rho**n`` over the real cosine/sine coefficients.
Pointwise products, linear combinations, truncation and the inverse of the
Dirichlet Laplacian map enclosures to enclosures.

Products use exact squared Clebsch-Gordan weights, organised here in a dense
:class:`ProductTensor` (one block per pair of angular indices) that is built
once from a :class:`~zernprove.regge.CGTable` and cached on disk.
"""

from __future__ import annotations

import functools
import logging
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import regge
from .ball import ETA, U, Ball, gamma, sum_upper, up

log = logging.getLogger(__name__)

__all__ = [
    "Layout",
    "Radial",
    "ModeRef",
    "Zernike",
    "ProductTensor",
    "product_tensor",
    "rho_powers",
    "norm_upper",
    "linear_combine",
    "multiply",
    "inv_neg_lap",
    "inv_neg_lap_gain",
    "inv_neg_lap_exact",
    "truncate",
    "eval_point",
    "evaluate",
    "radial_values",
    "sn_support_check",
    "read_zernike",
    "write_zernike",
    "default_cache_dir",
]

EVEN, ODD = 0, 1


def default_cache_dir() -> Path:
    return Path(os.environ.get("ZERNPROVE_CACHE", Path.home() / ".cache" / "zernprove"))


# -- layout ---------------------------------------------------------------------

@dataclass(frozen=True)
class Layout:
    """Index bookkeeping for enclosures of a given size.

    Coefficient slot ``(m, j)`` is active when ``m + 2j <= size``; ``D[m]`` is
    the last active ``j`` in band ``m``, and tail slot ``D[m] + 1`` covers all
    degrees above ``size``.
    """

    size: int

    @functools.cached_property
    def J(self) -> int:
        return self.size // 2 + 1

    @functools.cached_property
    def D(self) -> np.ndarray:
        return (self.size - np.arange(self.size + 1)) // 2

    @functools.cached_property
    def deg(self) -> np.ndarray:
        m = np.arange(self.size + 1)[:, None]
        j = np.arange(self.J)[None, :]
        return m + 2 * j

    @functools.cached_property
    def tail_deg(self) -> np.ndarray:
        m = np.arange(self.size + 1)[:, None]
        j = np.arange(self.J + 1)[None, :]
        return m + 2 * j

    @functools.cached_property
    def active(self) -> np.ndarray:
        return self.deg <= self.size

    def modes(self, parity: int) -> tuple[np.ndarray, np.ndarray]:
        """Active coefficient slots ``(m, j)`` in band-major order."""
        mask = self.active.copy()
        if parity == ODD:
            mask[0] = False
        m, j = np.nonzero(mask)
        return m, j

    def mode_count(self, parity: int) -> int:
        return len(self.modes(parity)[0])


@functools.lru_cache(maxsize=None)
def _layout(size: int) -> Layout:
    return Layout(size)


@functools.lru_cache(maxsize=None)
def rho_powers(rho: Fraction, nmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Rigorous upper and lower double bounds for ``rho**n``, ``n = 0..nmax``."""
    hi, lo = np.empty(nmax + 1), np.empty(nmax + 1)
    p = Fraction(1)
    for n in range(nmax + 1):
        f = p.numerator / p.denominator
        hi[n] = f if Fraction(f) >= p else np.nextafter(f, np.inf)
        lo[n] = f if Fraction(f) <= p else np.nextafter(f, -np.inf)
        p *= rho
    hi.flags.writeable = False
    lo.flags.writeable = False
    return hi, lo


def _frac(x) -> Fraction:
    return Fraction(x)


# -- enclosure types -----------------------------------------------------------------

@dataclass(frozen=True)
class ModeRef:
    """A coefficient slot, radial tail slot or band-error slot."""

    kind: str  # "coefficient" | "radial_tail" | "band_error"
    m: int
    j: int = 0


@dataclass(frozen=True)
class Radial:
    """The radial part of one angular band: coefficient balls and tail bounds."""

    m: int
    coeffs: tuple
    tails: tuple


class Zernike:
    """Enclosure of a set of functions of fixed angular parity.

    ``center``/``radius`` have shape ``(size+1, size//2+1)`` indexed by
    ``(m, j)``; ``tail`` has one more column; ``band`` has ``2*size+1`` entries.
    Inactive slots are exactly zero, and for odd parity band ``m = 0`` is empty.
    """

    __slots__ = ("rho", "parity", "size", "center", "radius", "tail", "band")

    def __init__(self, rho, parity: int, size: int, center=None, radius=None,
                 tail=None, band=None):
        self.rho = _frac(rho)
        if self.rho < 1:
            raise ValueError("rho must be at least 1")
        if parity not in (EVEN, ODD):
            raise ValueError("parity must be 0 (even) or 1 (odd)")
        self.parity = parity
        self.size = int(size)
        L = _layout(self.size)
        shape = (self.size + 1, L.J)

        def arr(x, shp):
            if x is None:
                return np.zeros(shp)
            a = np.array(x, dtype=np.float64)
            if a.shape != shp:
                raise ValueError(f"expected shape {shp}, got {a.shape}")
            return a

        self.center = arr(center, shape)
        self.radius = arr(radius, shape)
        self.tail = arr(tail, (self.size + 1, L.J + 1))
        self.band = arr(band, (2 * self.size + 1,))
        for a in (self.center, self.radius, self.tail, self.band):
            if not np.all(np.isfinite(a)):
                raise ValueError("enclosure data must be finite")
        if (self.radius < 0).any() or (self.tail < 0).any() or (self.band < 0).any():
            raise ValueError("radii must be nonnegative")
        inactive = ~L.active
        if self.center[inactive].any() or self.radius[inactive].any():
            raise ValueError("inactive coefficient slots must be zero")
        if parity == ODD and (self.center[0].any() or self.radius[0].any() or self.tail[0].any()):
            raise ValueError("odd enclosures have no m = 0 modes")

    # -- construction helpers ----------------------------------------------------

    @classmethod
    def zero(cls, rho, parity: int, size: int) -> "Zernike":
        return cls(rho, parity, size)

    @classmethod
    def from_modes(cls, rho, parity: int, size: int, coeffs: dict) -> "Zernike":
        """Enclosure of ``sum c * V^m_n`` given ``{(m, n): value}``.

        Values may be floats, ints, Fractions or :class:`Ball` instances.
        """
        u = cls.zero(rho, parity, size)
        for (m, n), v in coeffs.items():
            if (n - m) % 2 or n < m or m < 0:
                raise ValueError(f"no Zernike mode with m={m}, n={n}")
            if n > size:
                raise ValueError(f"mode degree {n} exceeds size {size}")
            b = v if isinstance(v, Ball) else Ball.exact(v)
            u.center[m, (n - m) // 2] = b.center
            u.radius[m, (n - m) // 2] = b.radius
        u._check_parity()
        return u

    @classmethod
    def from_vector(cls, rho, parity: int, size: int, vec, rad=None) -> "Zernike":
        """Enclosure from a dense vector over :meth:`Layout.modes` order."""
        u = cls.zero(rho, parity, size)
        m, j = _layout(size).modes(parity)
        u.center[m, j] = vec
        if rad is not None:
            u.radius[m, j] = rad
        return u

    def to_vector(self) -> np.ndarray:
        m, j = _layout(self.size).modes(self.parity)
        return self.center[m, j].copy()

    def _check_parity(self):
        if self.parity == ODD and (self.center[0].any() or self.radius[0].any()):
            raise ValueError("odd enclosures have no m = 0 modes")

    def copy(self) -> "Zernike":
        return Zernike(self.rho, self.parity, self.size, self.center.copy(),
                       self.radius.copy(), self.tail.copy(), self.band.copy())

    def like(self, parity: int | None = None) -> "Zernike":
        return Zernike(self.rho, self.parity if parity is None else parity, self.size)

    @property
    def layout(self) -> Layout:
        return _layout(self.size)

    def radial(self, m: int) -> Radial:
        L = self.layout
        coeffs = tuple(Ball(self.center[m, j], self.radius[m, j]) for j in range(L.J))
        return Radial(m, coeffs, tuple(self.tail[m].tolist()))

    def coefficient(self, m: int, n: int) -> Ball:
        if (n - m) % 2 or n < m or n > self.size:
            return Ball(0.0)
        j = (n - m) // 2
        return Ball(self.center[m, j], self.radius[m, j])

    def error_total(self) -> float:
        return float(sum_upper(np.concatenate([self.tail.ravel(), self.band])))

    def is_exact(self) -> bool:
        return not (self.radius.any() or self.tail.any() or self.band.any())

    def nonzero_slots(self) -> list[ModeRef]:
        out = []
        for m, j in zip(*np.nonzero((self.center != 0) | (self.radius != 0))):
            out.append(ModeRef("coefficient", int(m), int(j)))
        for m, j in zip(*np.nonzero(self.tail)):
            out.append(ModeRef("radial_tail", int(m), int(j)))
        for m in np.flatnonzero(self.band):
            out.append(ModeRef("band_error", int(m)))
        return out

    def widen_band(self, m: int, r: float) -> "Zernike":
        """Copy with ``r`` added to band error slot ``m``."""
        out = self.copy()
        out.band[m] = up(out.band[m] + r)
        return out

    def __repr__(self):
        kind = "even" if self.parity == EVEN else "odd"
        return (f"Zernike({kind}, size={self.size}, rho={self.rho}, "
                f"nonzero={int(np.count_nonzero(self.center))}, err={self.error_total():.3g})")

    def __eq__(self, other):
        return (isinstance(other, Zernike) and self.rho == other.rho
                and self.parity == other.parity and self.size == other.size
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("center", "radius", "tail", "band")))


def _same_space(u: Zernike, v: Zernike) -> None:
    if u.rho != v.rho:
        raise ValueError(f"rho mismatch: {u.rho} vs {v.rho}")
    if u.size != v.size:
        raise ValueError(f"size mismatch: {u.size} vs {v.size}")


def _weighted_abs(u: Zernike) -> np.ndarray:
    """Upper bounds for ``(|c| + r) rho**n`` per coefficient slot."""
    hi, _ = rho_powers(u.rho, 2 * u.size + 4)
    a = np.where(u.radius > 0, up(np.abs(u.center) + u.radius), np.abs(u.center))
    w = a * hi[u.layout.deg]
    return np.where(w > 0, up(w), 0.0)


# -- norm and linear operations ----------------------------------------------------

def norm_upper(u: Zernike) -> float:
    """Upper bound on the weighted norm of every member of ``u``."""
    parts = np.concatenate([_weighted_abs(u).ravel(), u.tail.ravel(), u.band])
    return float(sum_upper(parts))


def _ball_scale(b: Ball, c: np.ndarray, r: np.ndarray):
    """Ball scalar times ball array, elementwise: returns (center, radius)."""
    cc = b.center * c
    rr = np.abs(b.center) * r + b.radius * (np.abs(c) + r)
    rr = rr + np.abs(cc) * U
    rr = np.where(rr > 0, up(rr * (1 + gamma(4)) + ETA), 0.0)
    return cc, rr


def linear_combine(alpha, u: Zernike, beta, v: Zernike) -> Zernike:
    """Enclosure of ``alpha*x + beta*y`` for members ``x`` of ``u``, ``y`` of ``v``."""
    _same_space(u, v)
    if u.parity != v.parity:
        raise ValueError("parity mismatch")
    alpha = alpha if isinstance(alpha, Ball) else Ball.exact(alpha)
    beta = beta if isinstance(beta, Ball) else Ball.exact(beta)
    c1, r1 = _ball_scale(alpha, u.center, u.radius)
    c2, r2 = _ball_scale(beta, v.center, v.radius)
    c = c1 + c2
    r = r1 + r2 + np.abs(c) * U
    r = np.where(r > 0, up(r * (1 + gamma(3)) + ETA), 0.0)
    au, bv = _upper_abs(alpha), _upper_abs(beta)

    def err(x, y):
        e = au * x + bv * y
        return np.where(e > 0, up(e * (1 + gamma(3)) + ETA), 0.0)

    return Zernike(u.rho, u.parity, u.size, c, r, err(u.tail, v.tail), err(u.band, v.band))


def _upper_abs(b: Ball) -> float:
    from .ball import upper_abs

    return upper_abs(b)


def add(u: Zernike, v: Zernike) -> Zernike:
    return linear_combine(Ball(1.0), u, Ball(1.0), v)


def sub(u: Zernike, v: Zernike) -> Zernike:
    return linear_combine(Ball(1.0), u, Ball(-1.0), v)


def scale(alpha, u: Zernike) -> Zernike:
    return linear_combine(alpha, u, Ball(0.0), u.like())


def truncate(u: Zernike, N: int) -> Zernike:
    """Move every coefficient of degree ``>= N`` into its radial tail slot."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    out = u.copy()
    mask = u.layout.active & (u.layout.deg >= N)
    if not mask.any():
        return out
    w = _weighted_abs(u)
    t = out.tail[:, : u.layout.J]
    t[mask] = up(t[mask] + w[mask])
    out.center[mask] = 0.0
    out.radius[mask] = 0.0
    return out


# -- inverse Laplacian ---------------------------------------------------------------

def _lap_coeffs(n: int, m: int):
    """Rational coefficients of (-Delta)^{-1} V^m_n on V^m_{n+2}, V^m_n, V^m_{n-2}."""
    if n == m:
        c2 = Fraction(1, 4 * (n + 2) * (n + 1))
        return -c2, c2, Fraction(0)
    c2 = Fraction(1, 4 * (n + 2) * (n + 1))
    c1 = Fraction(-1, 2 * n * (n + 2))
    c0 = Fraction(1, 4 * n * (n + 1))
    return -c2, -c1, -c0


def inv_neg_lap_exact(coeffs: dict) -> dict:
    """Exact ``(-Delta)^{-1}`` of a finite rational combination ``{(m, n): c}``.

    Keys are nonnegative angular indices with ``n - m`` even; the angular
    factor (cosine or sine) is carried through unchanged.
    """
    out: dict = {}
    for (m, n), c in coeffs.items():
        if m < 0 or n < m or (n - m) % 2:
            raise ValueError(f"not a Zernike mode: {(m, n)}")
        for k, a in enumerate(_lap_coeffs(n, m)):
            if a:
                key = (m, n + 2 - 2 * k)
                out[key] = out.get(key, Fraction(0)) + Fraction(c) * a
    return {k: v for k, v in out.items() if v}


@functools.lru_cache(maxsize=None)
def _lap_tables(size: int):
    L = _layout(size)
    A = np.zeros((3, size + 1, L.J))
    for m in range(size + 1):
        for j in range(L.D[m] + 1):
            for k, c in enumerate(_lap_coeffs(m + 2 * j, m)):
                A[k, m, j] = float(c)
    A.flags.writeable = False
    return A


def _g_general(n: int, rho: Fraction) -> Fraction:
    return (rho * rho / (4 * (n + 1) * (n + 2)) + Fraction(1, 2 * n * (n + 2))
            + 1 / (rho * rho * 4 * n * (n + 1)))


def _g_special(m: int, rho: Fraction) -> Fraction:
    return (rho * rho + 1) / (4 * (m + 1) * (m + 2))


def _fup(q: Fraction) -> float:
    f = q.numerator / q.denominator
    return f if Fraction(f) >= q else float(np.nextafter(f, np.inf))


def inv_neg_lap_gain(m: int, d: int, rho) -> float:
    """Upper bound for ``||(-Delta)^{-1} f|| / ||f||`` over ``f`` in band ``m``
    using only degrees ``>= d``."""
    rho = _frac(rho)
    d = max(d, m)
    if (d - m) % 2:
        d += 1
    if d == m:
        return _fup(max(_g_special(m, rho), _g_general(m + 2, rho)))
    return _fup(_g_general(d, rho))


@functools.lru_cache(maxsize=None)
def _gain_tables(size: int, rho: Fraction):
    L = _layout(size)
    tail = np.zeros((size + 1, L.J + 1))
    for m in range(size + 1):
        for j in range(L.J + 1):
            tail[m, j] = inv_neg_lap_gain(m, m + 2 * j, rho)
    band = np.array([inv_neg_lap_gain(m, m, rho) for m in range(2 * size + 1)])
    tail.flags.writeable = False
    band.flags.writeable = False
    return tail, band


def inv_neg_lap(u: Zernike) -> Zernike:
    """Enclosure of ``(-Delta)^{-1} x`` (zero boundary values) for members ``x``."""
    S, L = u.size, u.layout
    A = _lap_tables(S)
    hi, _ = rho_powers(u.rho, 2 * S + 4)
    c, r = u.center, u.radius
    ac = np.abs(c)
    out_c = A[1] * c
    absum = np.abs(A[1]) * ac
    radsum = np.abs(A[1]) * r
    # up-shift: input j contributes to output j+1 (degree n+2)
    out_c[:, 1:] += (A[0] * c)[:, :-1]
    absum[:, 1:] += (np.abs(A[0]) * ac)[:, :-1]
    radsum[:, 1:] += (np.abs(A[0]) * r)[:, :-1]
    # down-shift: input j contributes to output j-1
    out_c[:, :-1] += (A[2] * c)[:, 1:]
    absum[:, :-1] += (np.abs(A[2]) * ac)[:, 1:]
    radsum[:, :-1] += (np.abs(A[2]) * r)[:, 1:]
    act = L.active
    # outputs that land beyond the stored degrees
    spill = act & ~np.pad(act[:, 1:], ((0, 0), (0, 1)))
    out_c[~act] = 0.0
    rad = radsum * (1 + gamma(4)) + absum * gamma(6)
    rad = np.where(act & (rad > 0), up(rad + ETA), 0.0)

    tail = np.zeros_like(u.tail)
    mm, jj = np.nonzero(spill & ((c != 0) | (r != 0)))
    if len(mm):
        w = up(np.abs(A[0][mm, jj]) * up(ac[mm, jj] + r[mm, jj]) * (1 + 4 * U))
        w = up(w * hi[L.deg[mm, jj] + 2])
        np.add.at(tail, (mm, L.D[mm] + 1), w)
    gt, gb = _gain_tables(S, u.rho)
    if u.tail.any():
        moved = u.tail * gt
        tail[:, 0] += moved[:, 0]
        tail[:, :-1] += moved[:, 1:]
    band = u.band * gb
    tail = np.where(tail > 0, up(tail * (1 + gamma(4)) + ETA), 0.0)
    band = np.where(band > 0, up(band * (1 + gamma(2)) + ETA), 0.0)
    if u.parity == ODD:
        tail[0] = 0.0
    return Zernike(u.rho, u.parity, S, out_c, rad, tail, band)


# -- product tensor ----------------------------------------------------------------------

_TENSOR_VERSION = 1


class ProductTensor:
    """Dense blocks of product weights for one enclosure size.

    Block ``(m1, m2, s)`` with ``0 <= m1 <= m2`` and ``s = +1`` or ``-1`` holds
    ``W[j1, j2, k] = C(n1, s*m1, n2, m2, n3)`` for ``n1 = m1+2*j1``,
    ``n2 = m2+2*j2``, ``n3 = m3+2*k <= size``, ``m3 = m2 + s*m1``, the weight
    of ``V^{s m1}_{n1} V^{m2}_{n2}`` on ``V^{m3}_{n3}``.  Weights are correctly
    rounded (relative error at most ``2u``).  ``ovf[j1, j2]`` bounds the total
    weight on degrees above ``size`` from above.
    """

    def __init__(self, size: int, keys: np.ndarray, W: np.ndarray, ovf: np.ndarray):
        self.size = size
        self.keys = keys  # rows (m1, m2, s, w_offset, ovf_offset)
        self.W = W
        self.ovf = ovf
        L = _layout(size)
        self._index = {}
        for m1, m2, s, wo, oo in keys.tolist():
            J1, J2 = L.D[m1] + 1, L.D[m2] + 1
            K = L.D[m2 + s * m1] + 1
            self._index[(m1, m2, s)] = (wo, oo, J1, J2, K)

    def block(self, m1: int, m2: int, s: int):
        wo, oo, J1, J2, K = self._index[(m1, m2, s)]
        return (self.W[wo : wo + J1 * J2 * K].reshape(J1, J2, K),
                self.ovf[oo : oo + J1 * J2].reshape(J1, J2))

    def has(self, m1: int, m2: int, s: int) -> bool:
        return (m1, m2, s) in self._index

    @staticmethod
    def key_list(size: int):
        keys = []
        for m1 in range(size + 1):
            for m2 in range(m1, size + 1):
                for s in ((1,) if m1 == 0 else (1, -1)):
                    if m2 + s * m1 <= size:
                        keys.append((m1, m2, s))
        return keys

    @classmethod
    def build(cls, table: regge.CGTable, size: int) -> "ProductTensor":
        if table.max_n < size:
            raise ValueError(f"CG table serves degrees <= {table.max_n}; size {size} needs max_n >= {size}")
        L = _layout(size)
        keys = cls.key_list(size)
        rows, wo, oo = [], 0, 0
        for m1, m2, s in keys:
            J1, J2, K = L.D[m1] + 1, L.D[m2] + 1, L.D[m2 + s * m1] + 1
            rows.append((m1, m2, s, wo, oo))
            wo += J1 * J2 * K
            oo += J1 * J2
        W = np.zeros(wo)
        ovf = np.zeros(oo)
        batch_p, batch_pos = [], []
        pending = 0

        def flush():
            nonlocal batch_p, batch_pos, pending
            if not batch_p:
                return
            p = np.concatenate(batch_p)
            pos = np.concatenate(batch_pos)
            W[pos] = table.weights(p)
            batch_p, batch_pos, pending = [], [], 0

        for (m1, m2, s, wofs, _) in rows:
            J1, J2 = L.D[m1] + 1, L.D[m2] + 1
            m3 = m2 + s * m1
            K = L.D[m3] + 1
            j1, j2, k = np.meshgrid(np.arange(J1), np.arange(J2), np.arange(K), indexing="ij")
            n1, n2, n3 = m1 + 2 * j1, m2 + 2 * j2, m3 + 2 * k
            ok = (n3 >= np.abs(n1 - n2)) & (n3 <= n1 + n2)
            p = np.stack([n1[ok], s * m1 + 0 * n1[ok], n2[ok], m2 + 0 * n2[ok], n3[ok]], axis=1)
            pos = wofs + ((j1 * J2 + j2) * K + k)[ok]
            batch_p.append(p)
            batch_pos.append(pos)
            pending += len(p)
            if pending > 1_000_000:
                flush()
        flush()
        g = gamma(size + 8)
        for (m1, m2, s, wofs, oofs) in rows:
            J1, J2 = L.D[m1] + 1, L.D[m2] + 1
            K = L.D[m2 + s * m1] + 1
            blk = W[wofs : wofs + J1 * J2 * K].reshape(J1 * J2, K)
            kept = blk.sum(axis=1)
            lower = np.nextafter(kept * (1 - g), -np.inf)
            o = np.maximum(np.nextafter(1.0 - lower, np.inf), 0.0)
            n1 = m1 + 2 * np.arange(J1)[:, None]
            n2 = m2 + 2 * np.arange(J2)[None, :]
            o = np.where((n1 + n2 <= size).ravel(), 0.0, o)
            ovf[oofs : oofs + J1 * J2] = o
        return cls(size, np.array(rows, dtype=np.int64).reshape(-1, 5), W, ovf)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, arr in (("keys", self.keys), ("W", self.W), ("ovf", self.ovf)):
            tmp = d / f"{name}.tmp.npy"
            np.save(tmp, arr)
            tmp.replace(d / f"{name}.npy")

    @classmethod
    def load(cls, directory, size: int) -> "ProductTensor":
        d = Path(directory)
        keys = np.load(d / "keys.npy")
        W = np.load(d / "W.npy", mmap_mode="r")
        ovf = np.load(d / "ovf.npy")
        return cls(size, keys, W, ovf)


_TENSORS: dict = {}


def product_tensor(size: int, cache_dir=None, table: regge.CGTable | None = None) -> ProductTensor:
    """Product tensor for ``size``, from memory, the disk cache, or built fresh."""
    if size in _TENSORS:
        return _TENSORS[size]
    cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    d = cache / f"prodtensor_s{size}_v{_TENSOR_VERSION}"
    if (d / "ovf.npy").exists():
        t = ProductTensor.load(d, size)
    else:
        if table is None or table.max_n < size:
            table = regge.table_build(size, cache_dir=cache)
        log.info("building product tensor for size %d", size)
        t = ProductTensor.build(table, size)
        try:
            t.save(d)
        except OSError as exc:  # pragma: no cover
            log.warning("could not cache product tensor: %s", exc)
    _TENSORS[size] = t
    return t


def _as_tensor(table, size: int) -> ProductTensor:
    if isinstance(table, ProductTensor):
        if table.size != size:
            raise ValueError(f"product tensor is for size {table.size}, not {size}")
        return table
    if isinstance(table, regge.CGTable):
        if table.max_n < size:
            raise ValueError(f"CG table too small: needs max_n >= {size}")
        key = (id(table), size)
        if key not in _TENSORS:
            _TENSORS[key] = ProductTensor.build(table, size)
        return _TENSORS[key]
    if table is None:
        return product_tensor(size)
    raise TypeError("expected a ProductTensor or CGTable")


# -- products -------------------------------------------------------------------------

def _angular_terms(pa: int, a: int, pb: int, b: int):
    """Trig product rules as ``(m3, coefficient, s)`` terms.

    ``s`` is the sign attached to the smaller angular index in the radial
    weight, so that the term uses block ``(min(a,b), max(a,b), s)``.
    """
    out_odd = pa ^ pb
    if (pa, pb) == (0, 0):
        cs, cd = 0.5, 0.5
    elif (pa, pb) == (1, 1):
        cs, cd = -0.5, 0.5
    elif (pa, pb) == (0, 1):
        cs, cd = 0.5, -0.5
    else:
        cs, cd = 0.5, 0.5
    terms = [(a + b, cs, 1)]
    diff = a - b
    if out_odd:
        if diff == 0:
            cd = 0.0
        elif diff < 0:
            cd = -cd
    if cd != 0.0:
        terms.append((abs(diff), cd, -1))
    if min(a, b) == 0 and len(terms) == 2:
        # both halves use the same block and land in the same band
        return [(a + b, terms[0][1] + terms[1][1], 1)]
    return terms


def multiply(u: Zernike, v: Zernike, table=None) -> Zernike:
    """Enclosure of the pointwise product of members of ``u`` and ``v``."""
    _same_space(u, v)
    T = _as_tensor(table, u.size)
    S, L = u.size, u.layout
    hi, _ = rho_powers(u.rho, 2 * S + 4)
    out_par = u.parity ^ v.parity
    oc = np.zeros((S + 1, L.J))
    oabs = np.zeros_like(oc)
    orad = np.zeros_like(oc)
    otail = np.zeros((S + 1, L.J + 1))
    oband = np.zeros(2 * S + 1)

    uw, vw = _weighted_abs(u), _weighted_abs(v)
    bu = np.flatnonzero((u.center != 0).any(1) | (u.radius != 0).any(1))
    bv = np.flatnonzero((v.center != 0).any(1) | (v.radius != 0).any(1))
    n_terms = 0
    for a in bu.tolist():
        Ja = L.D[a] + 1
        for b in bv.tolist():
            Jb = L.D[b] + 1
            if a <= b:
                xc, xr, xw = u.center[a, :Ja], u.radius[a, :Ja], uw[a, :Ja]
                yc, yr, yw = v.center[b, :Jb], v.radius[b, :Jb], vw[b, :Jb]
            else:
                xc, xr, xw = v.center[b, :Jb], v.radius[b, :Jb], vw[b, :Jb]
                yc, yr, yw = u.center[a, :Ja], u.radius[a, :Ja], uw[a, :Ja]
            lo, hi_m = min(a, b), max(a, b)
            exact = not (xr.any() or yr.any())
            for m3, coef, s in _angular_terms(u.parity, a, v.parity, b):
                n_terms += 1
                if m3 > S:
                    oband[m3] += abs(coef) * xw.sum() * yw.sum()
                    continue
                Wb, ovf = T.block(lo, hi_m, s)
                K = Wb.shape[2]
                W2 = Wb.reshape(-1, K)
                oc[m3, :K] += coef * (np.outer(xc, yc).ravel() @ W2)
                oabs[m3, :K] += abs(coef) * (np.outer(np.abs(xc), np.abs(yc)).ravel() @ W2)
                if not exact:
                    R = np.outer(np.abs(xc), yr) + np.outer(xr, np.abs(yc) + yr)
                    orad[m3, :K] += abs(coef) * (R.ravel() @ W2)
                spill = np.outer(xw, yw) * ovf
                if spill.any():
                    otail[m3, L.D[m3] + 1] += abs(coef) * spill.sum()

    # rounding: products, weights and accumulation
    g = gamma(L.J * L.J + 4 * (S + 1) ** 2 + 16)
    rad = orad * (1 + g) + oabs * g
    if out_par == ODD:
        oc[0] = 0.0
        rad[0] = 0.0
    rad = np.where(L.active & (rad > 0), up(rad + ETA), 0.0)
    oc[~L.active] = 0.0

    _error_products(u, v, uw, vw, otail, oband)
    otail = np.where(otail > 0, up(otail * (1 + g) + ETA), 0.0)
    oband = np.where(oband > 0, up(oband * (1 + g) + ETA), 0.0)
    if out_par == ODD:
        otail[0] = 0.0
    return Zernike(u.rho, out_par, S, oc, rad, otail, oband)


def _place(S: int, L: Layout, otail, oband, m3: int, jlow, mass) -> None:
    if m3 > S:
        oband[m3] += float(np.sum(mass))
        return
    j = np.clip(jlow, 0, L.D[m3] + 1)
    np.add.at(otail[m3], np.ravel(j), np.ravel(mass))


def _error_products(u, v, uw, vw, otail, oband) -> None:
    """Add every product involving a tail or band slot to the error slots."""
    S, L = u.size, u.layout
    for cw, tl in ((uw, v.tail), (vw, u.tail)):
        tb = np.flatnonzero(tl.any(1))
        if not len(tb):
            continue
        cb = np.flatnonzero(cw.any(1))
        for a in cb.tolist():
            n1 = a + 2 * np.arange(L.D[a] + 1)
            w1 = cw[a, : L.D[a] + 1]
            for b in tb.tolist():
                d2 = b + 2 * np.arange(L.J + 1)
                mass = 0.5 * np.outer(w1, tl[b])
                # one half per angular sum/difference; they coincide when a or b is 0
                for m3 in (a + b, abs(a - b)):
                    lb = np.maximum(d2[None, :] - n1[:, None], m3)
                    _place(S, L, otail, oband, m3, (lb - m3) // 2, mass)
    # tail x tail
    tu, tv = u.tail.sum(1), v.tail.sum(1)
    for a in np.flatnonzero(tu).tolist():
        for b in np.flatnonzero(tv).tolist():
            mass = tu[a] * tv[b]
            for m3 in (a + b, abs(a - b)):
                _place(S, L, otail, oband, m3, 0, 0.5 * mass)
    # band errors against everything
    Mu = uw.sum(1) + u.tail.sum(1)
    Mv = vw.sum(1) + v.tail.sum(1)
    for (be, M) in ((u.band, Mv), (v.band, Mu)):
        for mp in np.flatnonzero(be).tolist():
            for b in np.flatnonzero(M).tolist():
                mass = 0.5 * be[mp] * M[b]
                oband[min(2 * S, mp + b)] += mass
                oband[max(mp - b, 0)] += mass
    for mp in np.flatnonzero(u.band).tolist():
        for mq in np.flatnonzero(v.band).tolist():
            mass = 0.5 * u.band[mp] * v.band[mq]
            oband[min(2 * S, mp + mq)] += mass
            oband[0] += mass


# -- evaluation -----------------------------------------------------------------------

def radial_values(m_max: int, n_max: int, r, one=None):
    """``R^m_n(r)`` for ``m <= m_max``, ``n <= n_max``, ``n - m`` even.

    Works for any number type closed under ``+ - *`` and division by ints
    (floats, Fractions, :class:`Ball`, numpy arrays).  Uses the three-term
    recurrence of the Jacobi polynomials ``P^{(0,m)}_l`` at ``x = 2r^2 - 1``.
    Returns a dict keyed by ``(m, n)``.
    """
    if one is None:
        one = 1
    x = 2 * r * r - 1
    out = {}
    rm = one
    for m in range(m_max + 1):
        if m > 0:
            rm = rm * r
        if m > n_max:
            break
        b = m
        p_prev, p = None, one
        out[(m, m)] = rm * p
        lmax = (n_max - m) // 2
        if lmax >= 1:
            p_prev, p = p, one + (x - 1) * (b + 2) / 2
            out[(m, m + 2)] = rm * p
        for l in range(2, lmax + 1):
            k = 2 * l + b
            a1 = 2 * l * (l + b) * (k - 2)
            a2 = (k - 1) * k * (k - 2)
            a3 = (k - 1) * b * b
            a4 = 2 * (l - 1) * (l + b - 1) * k
            p_prev, p = p, (p * (x * a2 - a3) - p_prev * a4) / a1
            out[(m, m + 2 * l)] = rm * p
    return out


def _angular_balls(theta: Ball, m_max: int, odd: bool):
    """Rigorous enclosures of cos(m theta) (or sin) for m = 0..m_max."""
    import mpmath

    iv = mpmath.iv
    out = []
    with mpmath.workprec(80):
        t = iv.mpf([theta.lower(), theta.upper()])
        for m in range(m_max + 1):
            val = iv.sin(m * t) if odd else iv.cos(m * t)
            lo = float(np.nextafter(float(val.a), -np.inf))
            hi = float(np.nextafter(float(val.b), np.inf))
            out.append(Ball.hull(lo, hi))
    return out


def eval_point(u: Zernike, r: Ball, theta: Ball) -> Ball:
    """Ball containing ``x(r, theta)`` for every member ``x`` and point in the balls."""
    r = r if isinstance(r, Ball) else Ball.exact(r)
    theta = theta if isinstance(theta, Ball) else Ball.exact(theta)
    if r.center - r.radius < 0 or r.center + r.radius > 1:
        raise ValueError("r must lie in [0, 1]")
    S, L = u.size, u.layout
    R = radial_values(S, S, r, one=Ball(1.0))
    ang = _angular_balls(theta, S, u.parity == ODD)
    total = Ball(0.0)
    for m, j in zip(*np.nonzero((u.center != 0) | (u.radius != 0))):
        m, j = int(m), int(j)
        c = Ball(u.center[m, j], u.radius[m, j])
        rv = R[(m, m + 2 * j)]
        # |R| <= 1 on the closed disk
        if rv.radius > 1:
            rv = Ball(0.0, 1.0)
        total = total + c * rv * ang[m]
    return total.widen(u.error_total())


def evaluate(u: Zernike, r, theta) -> np.ndarray:
    """Floating evaluation of the coefficient centers on arrays (not rigorous)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    r, theta = np.broadcast_arrays(r, theta)
    S = u.size
    R = radial_values(S, S, r, one=np.ones_like(r))
    out = np.zeros_like(r)
    trig = np.sin if u.parity == ODD else np.cos
    for m, j in zip(*np.nonzero(u.center)):
        m, j = int(m), int(j)
        out += u.center[m, j] * R[(m, m + 2 * j)] * trig(m * theta)
    return out


# -- symmetry -------------------------------------------------------------------------

def sn_support_check(u: Zernike, n: int) -> bool:
    """True when every nonzero slot lies in a band that is an odd multiple of ``n``."""
    if u.parity != EVEN:
        raise ValueError("S_n support check applies to even enclosures")
    if n < 1:
        raise ValueError("n must be positive")
    m = np.arange(u.size + 1)
    ok = (m % n == 0) & ((m // n) % 2 == 1)
    used = (u.center != 0).any(1) | (u.radius != 0).any(1) | (u.tail != 0).any(1)
    if (used & ~ok).any():
        return False
    return not u.band.any()


# -- files -----------------------------------------------------------------------------

_HEADER = re.compile(r"zernike v1 parity=(even|odd) rho=(\d+)/(\d+) size=(\d+)\s*$")


def write_zernike(u: Zernike, path) -> None:
    """Write the text format: header, then ``c``/``t``/``e`` lines for nonzero slots."""
    lines = [f"zernike v1 parity={'even' if u.parity == EVEN else 'odd'} "
             f"rho={u.rho.numerator}/{u.rho.denominator} size={u.size}"]
    for m, j in zip(*np.nonzero((u.center != 0) | (u.radius != 0))):
        lines.append(f"c {m} {j} {float(u.center[m, j]).hex()} {float(u.radius[m, j]).hex()}")
    for m, j in zip(*np.nonzero(u.tail)):
        lines.append(f"t {m} {j} {float(u.tail[m, j]).hex()}")
    for m in np.flatnonzero(u.band):
        lines.append(f"e {m} {float(u.band[m]).hex()}")
    Path(path).write_text("\n".join(lines) + "\n")


def _num(tok: str) -> float:
    return float.fromhex(tok) if "0x" in tok.lower() else float(tok)


def read_zernike(path) -> Zernike:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValueError(f"{path}: empty Zernike file")
    h = _HEADER.match(text[0].strip())
    if not h:
        raise ValueError(f"{path}: bad header {text[0]!r}")
    parity = EVEN if h.group(1) == "even" else ODD
    rho = Fraction(int(h.group(2)), int(h.group(3)))
    size = int(h.group(4))
    u = Zernike.zero(rho, parity, size)
    L = u.layout
    for lineno, line in enumerate(text[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "c" and len(tok) == 5:
                m, j = int(tok[1]), int(tok[2])
                if not (0 <= m <= size and 0 <= j < L.J and L.active[m, j]):
                    raise ValueError("coefficient slot out of range")
                u.center[m, j] = _num(tok[3])
                u.radius[m, j] = _num(tok[4])
            elif tok[0] == "t" and len(tok) == 4:
                u.tail[int(tok[1]), int(tok[2])] = _num(tok[3])
            elif tok[0] == "e" and len(tok) == 3:
                u.band[int(tok[1])] = _num(tok[2])
            else:
                raise ValueError("unknown record")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}: {line!r}") from None
    # re-run the constructor checks
    return Zernike(u.rho, u.parity, u.size, u.center, u.radius, u.tail, u.band)

"""Operator enclosures over mode partitions, spectral-radius bounds and Morse indices.

A :class:`ModePartition` splits a parity subspace of the weighted space into
one-dimensional coefficient groups (modes of degree below ``n_part``) and
residual groups: for each band ``m`` the modes of degree at least
``n_part``, and one group for all bands above ``size``.  Coordinates are
normalised so that each group's unit ball has weighted norm 1; the norm of
a function is then the sum of the group norms.

An :class:`OperatorEnclosure` stores, for each input group ``j``, a ball
matrix column enclosing the image coordinates of unit vectors of group
``j``, plus a per-column bound ``eta[j]`` on mass whose group is unknown.
Residual rows and columns always have zero centers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np

from .ball import ETA, U, Ball, abs_matmul_upper, gamma, matmul, sum_upper, up
from .zernike import (
    EVEN,
    ODD,
    Zernike,
    _layout,
    _weighted_abs,
    inv_neg_lap,
    linear_combine,
    multiply,
    read_zernike,
    rho_powers,
    scale,
    sub,
    write_zernike,
)

log = logging.getLogger(__name__)

__all__ = [
    "ModePartition",
    "build_partition",
    "OperatorEnclosure",
    "enclose_operator",
    "op_norm",
    "spectral_radius_bound",
    "EigenData",
    "l2_pair",
    "PI",
    "at_most_n",
    "at_least_m",
    "MorseCertificate",
    "morse_index",
    "rayleigh_fixed_point",
]

COEF, TAIL, BANDS = 0, 1, 2
# tail masses covering at most this many coefficient groups are charged to each
SPREAD = 40
# band errors covering at most this many groups are charged to each of them
SPREAD_BANDS = 160


def _pi_ball() -> Ball:
    with mpmath.workprec(80):
        iv = mpmath.iv.pi
        lo = float(np.nextafter(float(iv.a), -np.inf))
        hi = float(np.nextafter(float(iv.b), np.inf))
    return Ball.hull(lo, hi)


PI = _pi_ball()


# -- partitions ---------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModePartition:
    """Groups of one parity subspace; see the module docstring."""

    size: int
    n_part: int
    parity: int
    rho: Fraction
    kind: np.ndarray  # COEF, TAIL or BANDS
    m: np.ndarray  # band (BANDS: size + 1)
    j: np.ndarray  # coefficient slot, or first tail slot for TAIL
    deg: np.ndarray  # degree of a coefficient group, first degree of a tail group

    @property
    def count(self) -> int:
        return len(self.kind)

    @property
    def n_coef(self) -> int:
        return int((self.kind == COEF).sum())

    def __len__(self):
        return self.count

    def __eq__(self, other):
        return (isinstance(other, ModePartition)
                and (self.size, self.n_part, self.parity, self.rho)
                == (other.size, other.n_part, other.parity, other.rho))

    def __hash__(self):
        return hash((self.size, self.n_part, self.parity, self.rho))

    def describe(self, g: int) -> str:
        k = self.kind[g]
        if k == COEF:
            return f"V[m={self.m[g]}, n={self.deg[g]}]"
        if k == TAIL:
            return f"tail[m={self.m[g]}, n>={self.deg[g]}]"
        return f"bands>={self.m[g]}"

    def unit(self, g: int) -> Zernike:
        """An enclosure of the unit ball of group ``g`` (coefficient groups: V itself)."""
        z = Zernike.zero(self.rho, self.parity, self.size)
        k, m, j = int(self.kind[g]), int(self.m[g]), int(self.j[g])
        if k == COEF:
            z.center[m, j] = 1.0
        elif k == TAIL:
            z.tail[m, j] = 1.0
        else:
            z.band[self.size + 1] = 1.0
        return z

    def extract(self, z: Zernike):
        """Distribute ``z`` over the groups.

        Returns ``(center, radius, eta)``: ball coordinates per group and a
        bound on mass that could not be attributed to a single group.
        """
        S, L = self.size, _layout(self.size)
        hi, lo = rho_powers(self.rho, 2 * S + 4)
        G = self.count
        cen = np.zeros(G)
        rad = np.zeros(G)
        ci = np.flatnonzero(self.kind == COEF)
        mm, jj, nn = self.m[ci], self.j[ci], self.deg[ci]
        c, r = z.center[mm, jj], z.radius[mm, jj]
        cc = c * hi[nn]
        cen[ci] = cc
        rr = r * hi[nn] + np.abs(c) * (hi[nn] - lo[nn])
        rad[ci] = np.where((rr > 0) | (cc != 0), up(rr * (1 + 4 * U) + np.abs(cc) * U + ETA), 0.0)
        tails = self._tail_group
        wabs = _weighted_abs(z)
        high = L.active & (L.deg >= self.n_part)
        per_band = np.where(high, wabs, 0.0).sum(1)
        eta = 0.0
        cidx = self._coef_index
        for m in range(S + 1):
            g = tails[m]
            if g < 0:
                continue
            first = int(self.j[g])
            extra = per_band[m] + z.tail[m, first:].sum()
            if extra:
                rad[g] += extra
            # tail slots reaching below n_part: a mass within SPREAD slots of the
            # tail group is charged to each group it covers, a lower one is unattributed
            for j in np.flatnonzero(z.tail[m, :first]).tolist():
                mass = z.tail[m, j]
                if first - j <= SPREAD:
                    rad[g] += mass
                    cov = cidx[m, j:first]
                    rad[cov] = up(rad[cov] + mass * (1 + 2 * U))
                else:
                    eta += mass
        bg = self._band_group
        rad[bg] += z.band[S + 1:].sum()
        # a band error below size covers every group of the bands above it
        for mp in np.flatnonzero(z.band[: S + 1]).tolist():
            mass = z.band[mp]
            cov = self._band_cover(mp)
            if len(cov) <= SPREAD_BANDS:
                rad[cov] = up(rad[cov] + mass * (1 + 2 * U))
            else:
                eta += mass
        for g in np.flatnonzero(self.kind != COEF):
            if rad[g]:
                rad[g] = up(rad[g] * (1 + gamma(2 * S + 4)) + ETA)
        eta = float(up(eta * (1 + gamma(4 * S + 8)) + ETA)) if eta else 0.0
        return cen, rad, eta

    def _band_cover(self, mp: int) -> np.ndarray:
        """Groups meeting the bands ``>= mp``."""
        return np.flatnonzero(self.m >= mp)

    @property
    def _coef_index(self) -> np.ndarray:
        idx = np.full((self.size + 1, _layout(self.size).J), -1)
        g = np.flatnonzero(self.kind == COEF)
        idx[self.m[g], self.j[g]] = g
        return idx

    @property
    def _tail_group(self) -> np.ndarray:
        t = np.full(self.size + 1, -1)
        g = np.flatnonzero(self.kind == TAIL)
        t[self.m[g]] = g
        return t

    @property
    def _band_group(self) -> int:
        return int(np.flatnonzero(self.kind == BANDS)[0])


def build_partition(size: int, n_part: int, parity: int, rho=Fraction(65, 64)) -> ModePartition:
    """Coefficient groups for modes of degree ``< n_part`` plus residual groups."""
    if not 0 <= n_part <= size + 1:
        raise ValueError("n_part must lie in [0, size + 1]")
    L = _layout(size)
    kind, ms, js, degs = [], [], [], []
    m_all, j_all = L.modes(parity)
    for m, j in zip(m_all.tolist(), j_all.tolist()):
        if m + 2 * j < n_part:
            kind.append(COEF)
            ms.append(m)
            js.append(j)
            degs.append(m + 2 * j)
    for m in range(1 if parity == ODD else 0, size + 1):
        first = max(n_part, m)
        first += (first - m) % 2
        kind.append(TAIL)
        ms.append(m)
        js.append((first - m) // 2)
        degs.append(first)
    kind.append(BANDS)
    ms.append(size + 1)
    js.append(0)
    degs.append(size + 1)
    a = lambda x: np.array(x, dtype=np.int64)
    return ModePartition(size, n_part, parity, Fraction(rho), a(kind), a(ms), a(js), a(degs))


# -- operator enclosures -----------------------------------------------------------------------------

@dataclass
class OperatorEnclosure:
    """Ball matrix over a partition plus per-column unattributed mass."""

    partition: ModePartition
    center: np.ndarray
    radius: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        G = self.partition.count
        for a in (self.center, self.radius):
            if a.shape != (G, G):
                raise ValueError("matrix does not match the partition")
        if (self.radius < 0).any() or (self.eta < 0).any():
            raise ValueError("radii must be nonnegative")

    @property
    def entries(self) -> np.ndarray:
        """Nonnegative bounds on the group-component norms (the Radius view)."""
        a = np.abs(self.center)
        return np.where(self.radius > 0, up(a + self.radius), a)

    def __matmul__(self, other: "OperatorEnclosure") -> "OperatorEnclosure":
        """Enclosure of the composition ``self o other``."""
        if other.partition != self.partition:
            raise ValueError("partitions differ")
        C, R = matmul(self.center, self.radius, other.center, other.radius)
        ent = other.entries
        eta = abs_matmul_upper(self.eta[None, :], ent)[0]
        eta = eta + op_norm(self) * other.eta
        eta = np.where(eta > 0, up(eta), 0.0)
        return OperatorEnclosure(self.partition, C, R, eta)

    def __add__(self, other):
        return _combine(self, other, 1.0)

    def __sub__(self, other):
        return _combine(self, other, -1.0)

    @classmethod
    def identity(cls, partition: ModePartition) -> "OperatorEnclosure":
        G = partition.count
        C = np.zeros((G, G))
        R = np.zeros((G, G))
        coef = partition.kind == COEF
        idx = np.arange(G)
        C[idx[coef], idx[coef]] = 1.0
        R[idx[~coef], idx[~coef]] = 1.0
        return cls(partition, C, R, np.zeros(G))

    @classmethod
    def zero(cls, partition: ModePartition) -> "OperatorEnclosure":
        G = partition.count
        return cls(partition, np.zeros((G, G)), np.zeros((G, G)), np.zeros(G))


def _combine(a: OperatorEnclosure, b: OperatorEnclosure, sign: float) -> OperatorEnclosure:
    if a.partition != b.partition:
        raise ValueError("partitions differ")
    C = a.center + sign * b.center
    R = np.where((a.radius > 0) | (b.radius > 0) | (C != 0),
                 up(a.radius + b.radius + np.abs(C) * U + ETA), 0.0)
    eta = a.eta + b.eta
    return OperatorEnclosure(a.partition, C, R, np.where(eta > 0, up(eta), 0.0))


def enclose_operator(apply, partition: ModePartition) -> OperatorEnclosure:
    """Enclose a linear map given as a function on enclosures.

    Column ``g`` is the extracted image of the group's unit enclosure; for
    coefficient groups the image of ``V`` is divided by ``rho**n`` so that it
    describes the unit vector ``V / rho**n``.
    """
    P = partition
    G = P.count
    C = np.zeros((G, G))
    R = np.zeros((G, G))
    eta = np.zeros(G)
    inv = _inverse_rho_powers(P.rho, 2 * P.size + 4)
    for g in range(G):
        img = apply(P.unit(g))
        if img.parity != P.parity:
            raise ValueError("operator does not preserve the partition parity")
        c, r, e = P.extract(img)
        if P.kind[g] == COEF:
            ihi, ilo = inv[0][P.deg[g]], inv[1][P.deg[g]]
            cc = c * ihi
            rr = r * ihi + np.abs(c) * (ihi - ilo)
            r = np.where((rr > 0) | (cc != 0), up(rr * (1 + 4 * U) + np.abs(cc) * U + ETA), 0.0)
            c = cc
            e = float(up(e * ihi)) if e else 0.0
        C[:, g] = c
        R[:, g] = r
        eta[g] = e
    return OperatorEnclosure(P, C, R, eta)


def _inverse_rho_powers(rho: Fraction, nmax: int):
    hi, lo = rho_powers(1 / Fraction(rho), nmax)
    return hi, lo


def op_norm(L: OperatorEnclosure) -> float:
    """Upper bound on the weighted-l1 operator norm of every member."""
    ent = L.entries
    if not len(ent):
        return 0.0
    cols = sum_upper(ent, axis=0)
    total = cols + L.eta
    total = np.where(total > 0, up(total), 0.0)
    # re-sum the columns that can attain the maximum with a correctly rounded sum
    floor = float(total.max()) / (1 + 4 * gamma(len(ent) + 4))
    best = 0.0
    for g in np.flatnonzero(total >= floor).tolist():
        best = max(best, _exact_sum_upper([*ent[:, g].tolist(), float(L.eta[g])]))
    return min(best, float(total.max()))


def _exact_sum_upper(values) -> float:
    """Upper bound on a sum of floats: ``fsum`` when it is exact, else one ulp above."""
    s = math.fsum(values)
    return s if math.fsum([*values, -s]) == 0 else float(up(np.array(s)))


def spectral_radius_bound(L: OperatorEnclosure, k: int = 8) -> float:
    """``op_norm(L^(2^k))^(2^-k)`` rounded up: a bound on every member's spectral radius."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    P = L
    for _ in range(k):
        P = P @ P
    x = op_norm(P)
    for _ in range(k):
        if x == 0.0:
            break
        x = Ball(x).sqrt().upper()
    return x


# -- pairings -------------------------------------------------------------------------------------

def _norm_balls(size: int, parity: int):
    """Enclosures (center, radius arrays) of ``<V, V>_{L^2}`` per slot ``(m, j)``."""
    L = _layout(size)
    n = L.deg
    m = np.arange(size + 1)[:, None]
    base = np.where(m == 0, 1.0, 0.5) / (n + 1)  # exact up to one rounding
    c = PI.center * base
    r = up(PI.radius * base + np.abs(c) * 2 * U + ETA)
    return np.where(L.active, c, 0.0), np.where(L.active, r, 0.0)


def l2_pair(f: Zernike, h: Zernike) -> Ball:
    """Enclosure of ``int_disk x y dA`` over members ``x`` of ``f`` and ``y`` of ``h``."""
    if f.parity != h.parity or f.size != h.size or f.rho != h.rho:
        raise ValueError("pairing needs matching parity, size and rho")
    S, L = f.size, f.layout
    Nc, Nr = _norm_balls(S, f.parity)
    hi, lo = rho_powers(f.rho, 2 * S + 4)
    # coefficient part, entrywise ball products
    prod = f.center * h.center
    pr = (np.abs(f.center) * h.radius + f.radius * (np.abs(h.center) + h.radius)
          + np.abs(prod) * U)
    terms_c = prod * Nc
    terms_r = up(pr * (np.abs(Nc) + Nr) + np.abs(prod) * Nr + np.abs(terms_c) * U + ETA)
    n = int(np.count_nonzero(L.active))
    total_c = float(terms_c[L.active].sum())
    err = float(sum_upper(terms_r[L.active])) + float(sum_upper(np.abs(terms_c[L.active]))) * gamma(n)
    # error slots of one factor against the coefficients of the other
    for a, b in ((f, h), (h, f)):
        if not (b.tail.any() or b.band.any()):
            continue
        # |coefficient| * <V,V> / rho^n bounds the pairing with a unit error mass
        dens = up((np.abs(a.center) + a.radius) * up(np.abs(Nc) + Nr) / lo[L.deg])
        dens = np.where(L.active, dens, 0.0)
        band_max = dens.max(1)
        suffix = np.maximum.accumulate(dens[:, ::-1], axis=1)[:, ::-1]
        for m, j in zip(*np.nonzero(b.tail)):
            top = suffix[m, j] if j < L.J else 0.0
            err += float(up(b.tail[m, j] * top))
        cum = np.maximum.accumulate(band_max[::-1])[::-1]
        for mp in np.flatnonzero(b.band):
            if mp <= S:
                err += float(up(b.band[mp] * cum[mp]))
    # error against error: |<V, V>| / rho^(2n) <= pi
    ef, eh = f.error_total(), h.error_total()
    if ef and eh:
        err += float(up(ef * eh * PI.upper()))
    return Ball(total_c, float(up(err * (1 + gamma(8)) + ETA)))


# -- eigendata --------------------------------------------------------------------------------------

@dataclass
class EigenData:
    """Approximate eigenpairs stored as preimages ``g_j`` with ``v_j = (-Delta)^{-1} g_j``."""

    parity: int
    values: list
    preimages: list

    def __post_init__(self):
        if len(self.values) != len(self.preimages):
            raise ValueError("values and preimages differ in length")
        for g in self.preimages:
            if g.parity != self.parity:
                raise ValueError("preimage parity mismatch")
            if g.center[g.layout.deg > g.size - 2].any():
                raise ValueError("preimages must have degree <= size - 2")
        self.values = [v if isinstance(v, Ball) else Ball(float(v)) for v in self.values]

    def __len__(self):
        return len(self.values)

    def vectors(self) -> list:
        return [inv_neg_lap(g) for g in self.preimages]

    def subset(self, count: int) -> "EigenData":
        return EigenData(self.parity, self.values[:count], self.preimages[:count])

    def save(self, directory) -> None:
        """Manifest ``eigen.txt`` plus one Zernike file per preimage."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        lines = [f"eigen v1 parity={'even' if self.parity == EVEN else 'odd'} count={len(self)}"]
        for i, (v, g) in enumerate(zip(self.values, self.preimages)):
            name = f"g{i}.zern"
            write_zernike(g, d / name)
            lines.append(f"value {i} {v.to_text()} {name}")
        (d / "eigen.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "EigenData":
        d = Path(directory)
        text = (d / "eigen.txt").read_text().splitlines()
        head = text[0].split()
        if head[:2] != ["eigen", "v1"]:
            raise ValueError(f"{d}: not an eigendata manifest")
        opts = dict(kv.split("=") for kv in head[2:])
        parity = EVEN if opts["parity"] == "even" else ODD
        values, gs = [], []
        for line in text[1:]:
            if not line.strip():
                continue
            tag, i, c, r, name = line.split()
            if tag != "value":
                raise ValueError(f"{d}: bad manifest line {line!r}")
            values.append(Ball.from_text(f"{c} {r}"))
            gs.append(read_zernike(d / name))
        if len(values) != int(opts["count"]):
            raise ValueError(f"{d}: count mismatch")
        return cls(parity, values, gs)


# -- Morse index ---------------------------------------------------------------------------------------

def _dg_operator(w, u_encl: Zernike, table):
    from .gmap import dg_apply_with, dg_multiplier

    mult = dg_multiplier(w, u_encl, table)
    return mult, (lambda h: dg_apply_with(mult, h, table))


def _rank_operator(eig: EigenData, vectors):
    """``h -> sum_i lambda_i v_i <g_i, h>_{L^2}`` (self-adjoint on H^1_0)."""

    def K(h: Zernike) -> Zernike:
        out = h.like()
        for lam, v, g in zip(eig.values, vectors, eig.preimages):
            c = lam * l2_pair(g, h)
            if c.center == 0.0 and c.radius == 0.0:
                continue
            out = linear_combine(Ball(1.0), out, c, v)
        return out

    return K


def at_most_n(w, u_encl: Zernike, eig: EigenData, theta: float, table=None,
              partition: ModePartition | None = None, k: int = 8, *, details=None) -> bool:
    """Certify at most ``len(eig)`` eigenvalues of ``DG(u*)`` in ``[theta, oo)`` on ``eig.parity``."""
    if not theta < 1:
        raise ValueError("theta must be below 1")
    P = partition or build_partition(u_encl.size, u_encl.size + 1, eig.parity, u_encl.rho)
    if P.parity != eig.parity:
        raise ValueError("partition parity differs from the eigendata")
    _, dg = _dg_operator(w, u_encl, table)
    vecs = eig.vectors()
    K = _rank_operator(eig, vecs)
    Lop = enclose_operator(lambda h: sub(dg(h), K(h)), P)
    bound = spectral_radius_bound(Lop, k)
    log.info("at_most_n parity=%d n=%d: spectral radius <= %.6g (theta %.6g)",
             eig.parity, len(eig), bound, theta)
    if details is not None:
        details.update(spectral_bound=bound, n=len(eig), theta=theta)
    return bound < theta


def at_least_m(w, u_encl: Zernike, eig: EigenData, a: float, table=None, *, details=None) -> bool | None:
    """Certify at least ``len(eig)`` eigenvalues in ``[a, oo)``.

    Returns ``None`` (inconclusive) when the Gram matrix is not certifiably
    close to the identity after orthonormalisation.
    """
    if not a > 1:
        raise ValueError("a must exceed 1")
    mult, _ = _dg_operator(w, u_encl, table)
    vecs = eig.vectors()
    m = len(vecs)
    if m == 0:
        return True
    Gc, Gr = np.zeros((m, m)), np.zeros((m, m))
    Ac, Ar = np.zeros((m, m)), np.zeros((m, m))
    T_prods = [multiply(mult, v, table) for v in vecs]
    for i in range(m):
        for j in range(m):
            g = l2_pair(vecs[i], eig.preimages[j])
            Gc[i, j], Gr[i, j] = g.center, g.radius
            b = l2_pair(vecs[i], T_prods[j])
            Ac[i, j], Ar[i, j] = b.center, b.radius
    # floating orthonormalisation: T = inverse Cholesky factor of mid(G)
    try:
        Lc = np.linalg.cholesky((Gc + Gc.T) / 2)
    except np.linalg.LinAlgError:
        return None
    T = np.linalg.inv(Lc).T
    G2 = _congruence(T, Gc, Gr)
    A2 = _congruence(T, Ac, Ar)
    dev = up(np.abs(G2[0] - np.eye(m)) + G2[1])
    eta = float(sum_upper(dev, axis=1).max())
    if eta >= 1:
        return None
    diag_lo = A2[0].diagonal() - A2[1].diagonal()
    off = up(np.abs(A2[0]) + A2[1])
    np.fill_diagonal(off, 0.0)
    gersh = np.nextafter(diag_lo - sum_upper(off, axis=0), -np.inf)
    one_eta = Ball(1 + eta).widen(float(up(np.array(eta * U + ETA))))
    need = Ball(a) * one_eta
    lower = float(gersh.min())
    # Rayleigh quotients on the span are >= lower / (1 + eta) when lower >= 0
    floor = (Ball(lower) / one_eta).lower() if lower > 0 else float("-inf")
    if details is not None:
        details.update(gershgorin=lower, eta=eta, m=m, a=a, floor=floor)
    log.info("at_least_m parity=%d m=%d: Gershgorin %.9g vs %.9g", eig.parity, m, lower, need.upper())
    return lower > need.upper()


def _congruence(T, C, R):
    """Ball enclosure of ``T^t (C +- R) T`` for a float matrix ``T``."""
    C1, R1 = matmul(T.T, None, C, R)
    return matmul(C1, R1, T, None)


def rayleigh_fixed_point(w, u_encl: Zernike, table=None) -> Ball:
    """Enclosure of ``<u, DG(u) u>_{H^1} / <u, u>_{H^1}`` at a solution ``u``.

    With ``-Delta u = w u^3`` both pairings reduce to ``<u, w u^3>_{L^2}``; the
    numerator carries the factor 3 from ``DG(u) u = 3 G(u)``.
    """
    from .gmap import dg_multiplier

    mult = dg_multiplier(w, u_encl, table)
    num = l2_pair(u_encl, multiply(mult, u_encl, table))
    wu3 = multiply(w.w, multiply(multiply(u_encl, u_encl, table), u_encl, table), table)
    den = l2_pair(u_encl, wu3)
    return num / den


@dataclass
class MorseCertificate:
    """Certified bounds ``lower <= index <= upper`` with the evidence used."""

    lower: int
    upper: int
    details: dict = field(default_factory=dict)

    @property
    def index(self) -> int | None:
        return self.lower if self.lower == self.upper else None

    def to_text(self) -> str:
        lines = [f"morse lower={self.lower} upper={self.upper}"]
        for k in sorted(self.details):
            lines.append(f"morse.{k} = {self.details[k]}")
        return "\n".join(lines)


def morse_index(w, u_encl: Zernike, eig_even: EigenData, eig_odd: EigenData | None,
                theta: float, a: float, table=None, *, n_part: int | None = None,
                k: int = 8, at_least_even: int | None = None,
                at_least_odd: int = 0, nonradial: bool | None = None,
                nonzero: bool = True) -> MorseCertificate:
    """Bound the number of eigenvalues of ``DG(u*)`` above 1.

    ``eig_even``/``eig_odd`` supply the ``n`` vectors for :func:`at_most_n`;
    the first ``at_least_even`` (default: all) even vectors are used for
    :func:`at_least_m`.  Known eigenvalues close the gap between the bounds:
    a nonzero solution has the even eigenvalue 3 (eigenvector ``u*``), and a
    non-radial one has the odd eigenvalue 1 (eigenvector ``d/dtheta u*``),
    which is counted in ``[theta, oo)`` but not in the index.  When the
    Gershgorin test fails at ``a`` its certified floor is still used if it
    exceeds 1.  Failing checks widen the verdict; the result is never a
    wrong integer.
    """
    S = u_encl.size
    n_part = S + 1 if n_part is None else n_part
    if nonradial is None:
        nonradial = bool(u_encl.center[1:].any())
    det: dict = {"theta": theta, "a": a, "k": k, "nonradial": nonradial, "nonzero": nonzero}
    # fallback when at_most_n fails: the whole (infinite) subspace could contribute
    inf = 10 ** 9
    lower = upper = 0
    parts = [(EVEN, eig_even, at_least_even if at_least_even is not None else len(eig_even))]
    if eig_odd is not None:
        parts.append((ODD, eig_odd, at_least_odd))
    else:
        upper = inf
        det["odd"] = "not examined"
    for parity, eig, m_req in parts:
        tag = "even" if parity == EVEN else "odd"
        P = build_partition(S, n_part, parity, u_encl.rho)
        d: dict = {}
        ok = at_most_n(w, u_encl, eig, theta, table, P, k, details=d)
        det[f"{tag}.at_most_n"] = (len(eig), ok, d.get("spectral_bound"))
        known_one = 1 if (parity == ODD and nonradial) else 0
        upper += max(len(eig) - known_one, 0) if ok else inf
        found = 0
        if m_req:
            d2: dict = {}
            res = at_least_m(w, u_encl, eig.subset(m_req), a, table, details=d2)
            det[f"{tag}.at_least_m"] = (m_req, res, d2.get("gershgorin"), d2.get("floor"))
            if res or d2.get("floor", float("-inf")) > 1:
                found = m_req
        if parity == EVEN and nonzero:
            found = max(found, 1)  # DG(u*) u* = 3 u*
        lower += found
    upper = min(upper, inf)
    return MorseCertificate(lower, max(upper, lower), det)

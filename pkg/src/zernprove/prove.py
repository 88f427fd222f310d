"""The contraction certificate for ``u = G(u)`` and the symmetry checks.

With a finite-rank ``M`` and ``A = I - M`` the map
``N(h) = G(ubar + A h) - ubar + M h`` has ``DN(0) = DG(ubar)(I - M) + M``,
which is small when ``M`` approximates ``I - (I - DG(ubar))^{-1}``.  If
``|N(0)| <= eps`` and ``|DN(h)| <= K`` on the ball of radius ``delta`` with
``eps + K delta < delta``, then ``N`` has a fixed point ``h*`` in that ball,
and ``u* = ubar + A h*`` solves ``u = G(u)`` provided ``I - M`` is invertible.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .ball import ETA, U, Ball, gamma, matmul, sum_upper, up
from .gmap import Weight, dg_apply_with, dg_multiplier, g_apply
from .spectral import OperatorEnclosure, build_partition, enclose_operator, op_norm
from .zernike import (
    EVEN,
    Zernike,
    _layout,
    add,
    multiply,
    norm_upper,
    rho_powers,
    sn_support_check,
    sub,
)

log = logging.getLogger(__name__)

__all__ = [
    "NewtonOperator",
    "ProofCertificate",
    "ProofFailure",
    "SymmetryVerdict",
    "n_map",
    "epsilon_bound",
    "dn_norm_bound",
    "contr_fix",
    "d_of_k",
    "check_I_minus_M_invertible",
    "min_symm_check",
    "has_symm_check",
    "EPS_FLOOR",
    "INVERSE_NORM_CAP",
]

# d(K) uses max(eps, EPS_FLOOR) so that an exact solution still gets delta > 0
EPS_FLOOR = 2.0 ** -900
D_SLACK = 1 + 2.0 ** -8
K_MAX = 0.75
# check_I_minus_M_invertible rejects approximate inverses with a larger weighted norm
INVERSE_NORM_CAP = 1e11


# -- the Newton operator -------------------------------------------------------------------

class NewtonOperator:
    """A ball matrix ``M`` on the coefficient modes of degree ``< n_trunc``.

    Rows and columns follow :meth:`Layout.modes` for the layout of size
    ``n_trunc - 1``.  ``M`` is zero on every other part of the space.
    """

    def __init__(self, n_trunc: int, center, radius=None, parity: int = EVEN):
        self.n_trunc = int(n_trunc)
        self.parity = parity
        L = _layout(self.n_trunc - 1)
        self.m, self.j = L.modes(parity)
        self.deg = self.m + 2 * self.j
        k = len(self.m)
        self.center = np.array(center, dtype=np.float64).reshape(k, k)
        self.radius = (np.zeros((k, k)) if radius is None
                       else np.array(radius, dtype=np.float64).reshape(k, k))
        if not (np.all(np.isfinite(self.center)) and np.all(np.isfinite(self.radius))):
            raise ValueError("matrix entries must be finite")
        if (self.radius < 0).any():
            raise ValueError("radii must be nonnegative")

    @classmethod
    def zero(cls, n_trunc: int, parity: int = EVEN) -> "NewtonOperator":
        k = _layout(n_trunc - 1).mode_count(parity)
        return cls(n_trunc, np.zeros((k, k)), parity=parity)

    @property
    def dim(self) -> int:
        return len(self.m)

    def weighted_norm(self, rho) -> float:
        """Upper bound on the weighted-l1 operator norm."""
        return _weighted_matrix_norm(self.center, self.radius, self.deg, Fraction(rho))

    def apply(self, h: Zernike) -> Zernike:
        """Enclosure of ``M y`` for all members ``y`` of ``h``."""
        if h.parity != self.parity:
            raise ValueError("parity mismatch")
        if h.size < self.n_trunc - 1:
            raise ValueError("enclosure smaller than the operator")
        x, xr = h.center[self.m, self.j], h.radius[self.m, self.j]
        C, R = matmul(self.center, self.radius, x[:, None], xr[:, None] if xr.any() else None)
        out = Zernike.zero(h.rho, h.parity, h.size)
        out.center[self.m, self.j] = C[:, 0]
        out.radius[self.m, self.j] = R[:, 0]
        # error slots of h that reach modes in range: bounded by |M| times their mass
        N = self.n_trunc
        L = h.layout
        reach = L.tail_deg < N
        mass = float(h.tail[reach].sum()) + float(h.band[:N].sum())
        if mass:
            out.band[0] = float(up(np.array(self.weighted_norm(h.rho) * mass * (1 + 4 * U) + ETA)))
        return out

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, n_trunc=self.n_trunc, parity=self.parity,
                     center=self.center, radius=self.radius)

    @classmethod
    def load(cls, path) -> "NewtonOperator":
        with np.load(path) as z:
            return cls(int(z["n_trunc"]), z["center"], z["radius"], int(z["parity"]))


def _weighted_matrix_norm(C, R, deg, rho: Fraction) -> float:
    """``max_j sum_i |a_ij| rho^(n_i - n_j)`` over all members, rounded up."""
    if C.size == 0:
        return 0.0
    nmax = int(deg.max())
    hi, _ = rho_powers(rho, nmax)
    ihi, _ = rho_powers(1 / rho, nmax)
    ent = up(np.abs(C) + R) if R.any() else np.abs(C)
    scaled = up(ent * hi[deg][:, None] * (1 + 2 * U) + ETA) * ihi[deg][None, :]
    scaled = up(scaled * (1 + U) + ETA)
    scaled = np.where(ent > 0, scaled, 0.0)
    return float(sum_upper(scaled, axis=0).max())


# -- the map and its bounds -------------------------------------------------------------------

def _check_inputs(ubar: Zernike, M: NewtonOperator):
    if ubar.parity != EVEN:
        raise ValueError("ubar must have even parity")
    if M.parity != EVEN:
        raise ValueError("M must act on the even subspace")


def n_map(w: Weight, ubar: Zernike, M: NewtonOperator, h: Zernike, table=None) -> Zernike:
    """Enclosure of ``G(ubar + A y) - ubar + M y`` for members ``y`` of ``h``."""
    _check_inputs(ubar, M)
    if h.rho != ubar.rho or h.size != ubar.size:
        raise ValueError("h must match ubar in size and rho")
    Mh = M.apply(h)
    v = add(ubar, sub(h, Mh))
    return add(sub(g_apply(w, v, table), ubar), Mh)


def epsilon_bound(w: Weight, ubar: Zernike, M: NewtonOperator, table=None) -> float:
    """Upper bound on ``|N(0)|``, the weighted norm of ``G(ubar) - ubar``."""
    return norm_upper(n_map(w, ubar, M, ubar.like(), table))


def dn_norm_bound(w: Weight, ubar: Zernike, M: NewtonOperator, delta_cap: float,
                  table=None, n_part: int | None = None, *, details=None) -> float:
    """Upper bound on ``|DN(h)|`` over ``|h| <= delta_cap``."""
    _check_inputs(ubar, M)
    if not delta_cap > 0:
        raise ValueError("delta_cap must be positive")
    a_norm = float(up(np.array(1.0 + M.weighted_norm(ubar.rho))))
    r = float(up(np.array(a_norm * delta_cap * (1 + 2 * U) + ETA)))
    v = ubar.widen_band(0, r)
    mult = dg_multiplier(w, v, table)
    S = ubar.size
    P = build_partition(S, S + 1 if n_part is None else n_part, EVEN, ubar.rho)
    DG = enclose_operator(lambda h: dg_apply_with(mult, h, table), P)
    Me = enclose_operator(M.apply, P)
    T = DG @ (OperatorEnclosure.identity(P) - Me) + Me
    K = op_norm(T)
    if details is not None:
        details.update(dg_norm=op_norm(DG), m_norm=op_norm(Me), a_norm=a_norm, groups=P.count)
    return K


def d_of_k(eps: float, K) -> float:
    """``(1 + 2^-8) max(eps, EPS_FLOOR) / (1 - K)`` rounded up; increasing in ``K < 1``."""
    K = K if isinstance(K, Ball) else Ball.exact(K)
    den = Ball(1.0) - K
    if den.lower() <= 0:
        raise ValueError("K must be below 1")
    return (Ball(max(eps, EPS_FLOOR)) * Ball.exact(Fraction(D_SLACK)) / den).upper()


# -- certificates ------------------------------------------------------------------------------------

class ProofFailure(Exception):
    """A check of the contraction protocol failed."""

    def __init__(self, check: str, detail: str, record: dict):
        super().__init__(f"{check}: {detail}")
        self.check = check
        self.detail = detail
        self.record = record


@dataclass(frozen=True)
class ProofCertificate:
    """Bounds from a successful run of :func:`contr_fix`."""

    epsilon: float
    K: float
    delta: float
    A_norm_delta: float
    m_no_eigen_one: bool
    parity: int = EVEN
    record: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lhs = Ball(self.epsilon) + Ball(self.K) * Ball(self.delta)
        if not (self.K <= K_MAX and lhs.upper() < self.delta and self.m_no_eigen_one):
            raise ValueError("certificate inequalities do not hold")

    def to_text(self, extra: dict | None = None) -> str:
        """Plain-text record; floats appear in hex (exact) and decimal."""
        lines = ["certificate v1", "status = certified"]

        def emit(k, v):
            if isinstance(v, float):
                lines.append(f"{k} = {v.hex()}  # {v:.6e}")
            else:
                lines.append(f"{k} = {v}")

        for k in ("epsilon", "K", "delta", "A_norm_delta"):
            emit(k, float(getattr(self, k)))
        emit("m_no_eigen_one", self.m_no_eigen_one)
        emit("parity", "even" if self.parity == EVEN else "odd")
        for k in sorted(self.record):
            emit(f"run.{k}", self.record[k])
        for k in sorted(extra or {}):
            emit(k, extra[k])
        return "\n".join(lines) + "\n"


def contr_fix(w: Weight, ubar: Zernike, M: NewtonOperator, table=None,
              n_part: int | None = None) -> ProofCertificate:
    """Run the contraction protocol; raises :class:`ProofFailure` on any failed check."""
    _check_inputs(ubar, M)
    rec: dict = {}
    # independent of the other checks and cheap, so it runs first
    det2: dict = {}
    inv_ok = check_I_minus_M_invertible(M, ubar.rho, details=det2)
    rec["inverse_residual"] = det2.get("residual_norm")
    if not inv_ok:
        raise ProofFailure("I - M invertible",
                           f"residual norm {det2.get('residual_norm')!r} is not below 1", rec)
    eps = epsilon_bound(w, ubar, M, table)
    rec["epsilon"] = eps
    cap = d_of_k(eps, K_MAX)
    rec["delta_cap"] = cap
    log.info("epsilon <= %.3e, delta cap %.3e", eps, cap)
    det: dict = {}
    K = dn_norm_bound(w, ubar, M, cap, table, n_part, details=det)
    rec.update({f"dn.{k}": v for k, v in det.items()})
    rec["K"] = K
    log.info("K <= %.6g", K)
    if not K <= K_MAX:
        raise ProofFailure("K <= 3/4", f"K = {K!r} exceeds 3/4", rec)
    delta = d_of_k(eps, K)
    rec["delta"] = delta
    if not delta <= cap:
        raise ProofFailure("delta <= d(3/4)", f"delta = {delta!r} > {cap!r}", rec)
    lhs = Ball(eps) + Ball(K) * Ball(delta)
    rec["eps_plus_K_delta"] = lhs.upper()
    if not lhs.upper() < delta:
        raise ProofFailure("eps + K delta < delta",
                           f"[{lhs.lower()!r}, {lhs.upper()!r}] vs delta {delta!r}", rec)
    a_norm = 1.0 + M.weighted_norm(ubar.rho)
    and_ = (Ball(a_norm) * Ball(delta)).upper()
    rec["A_norm"] = float(up(np.array(a_norm)))
    return ProofCertificate(eps, K, delta, and_, True, EVEN, rec)


def check_I_minus_M_invertible(M: NewtonOperator, rho=Fraction(65, 64), *, details=None) -> bool:
    """Certify that ``I - M`` is invertible via ``|I - B (I - M)| < 1``."""
    k = M.dim
    if k == 0:
        return True
    I = np.eye(k)
    Amid = I - M.center
    try:
        B = np.linalg.inv(Amid)
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(B)):
        return False
    nB = _weighted_matrix_norm(B, np.zeros_like(B), M.deg, Fraction(rho))
    if details is not None:
        details["inverse_norm"] = nB
    # |B| >= 1/|1 - lambda| for every eigenvalue lambda of M: refuse near-singular cases
    if not nB < INVERSE_NORM_CAP:
        return False
    # I - M as a ball matrix; TwoSum gives the exact rounding error of I - Mc
    bb = Amid - I
    err = (I - (Amid - bb)) + (-M.center - bb)
    Ar = M.radius + np.abs(err)
    Ar = np.where(Ar > 0, up(Ar), 0.0)
    Ar = Ar if Ar.any() else None
    C, R = matmul(B, None, Amid, Ar)
    E = I - C
    Er = R + np.abs(E) * U
    Er = np.where(Er > 0, up(Er + ETA), 0.0)
    nrm = _weighted_matrix_norm(E, Er, M.deg, Fraction(rho))
    if details is not None:
        details["residual_norm"] = nrm
        details["residual_center_max"] = float(np.abs(E).max())
    return nrm < 1.0


# -- symmetry --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryVerdict:
    """``kind`` is ``no_nontrivial_rotation``, ``invariant_under`` or ``inconclusive``."""

    kind: str
    witness: str = ""
    n: int = 0

    def __post_init__(self):
        if self.kind not in ("no_nontrivial_rotation", "invariant_under", "inconclusive"):
            raise ValueError(f"unknown verdict {self.kind!r}")

    def __str__(self):
        tag = f"{self.kind}({self.n})" if self.kind == "invariant_under" else self.kind
        return f"{tag}: {self.witness}" if self.witness else tag


def _coefficient_with_errors(u: Zernike, m: int, j: int) -> Ball:
    """Ball for the true ``(m, j)`` coefficient, folding in error slots that cover it."""
    n = m + 2 * j
    _, lo = rho_powers(u.rho, n)
    cover = float(u.tail[m, : j + 1].sum()) + float(u.band[: m + 1].sum())
    extra = float(up(np.array(cover / lo[n] * (1 + 2 * U) + ETA))) if cover else 0.0
    return Ball(u.center[m, j], float(up(np.array(u.radius[m, j] + extra))) if extra else u.radius[m, j])


def min_symm_check(u_star: Zernike, table=None) -> SymmetryVerdict:
    """``no_nontrivial_rotation`` if some ``m = 1`` coefficient of ``u*^2`` is nonzero."""
    if u_star.parity != EVEN:
        raise ValueError("expected an even enclosure")
    sq = multiply(u_star, u_star, table)
    L = sq.layout
    for j in range(L.D[1] + 1 if sq.size >= 1 else 0):
        b = _coefficient_with_errors(sq, 1, j)
        if not b.contains_zero():
            return SymmetryVerdict("no_nontrivial_rotation",
                                   f"coefficient (m=1, n={1 + 2 * j}) of u^2 in {b.to_text()}")
    return SymmetryVerdict("inconclusive", "every m = 1 coefficient of u^2 may vanish")


def has_symm_check(ubar: Zernike, M: NewtonOperator, n: int) -> SymmetryVerdict:
    """``invariant_under(n)`` when ``ubar`` has S_n support and ``M`` is block-diagonal.

    The block condition is sufficient for ``M`` to commute with ``S_n`` on
    the even subspace; it is not necessary.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not sn_support_check(ubar, n):
        return SymmetryVerdict("inconclusive", f"ubar has modes outside the odd multiples of {n}", n)
    inside = (M.m % n == 0) & ((M.m // n) % 2 == 1)
    cross = np.outer(inside, ~inside) | np.outer(~inside, inside)
    if (M.center[cross] != 0).any() or (M.radius[cross] != 0).any():
        return SymmetryVerdict("inconclusive", "M couples S_n-invariant and other bands", n)
    return SymmetryVerdict("invariant_under",
                           f"support on odd multiples of {n}; M block-diagonal (sufficient condition)", n)


def digest(path) -> str:
    """SHA-256 of a file, for certificate provenance."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

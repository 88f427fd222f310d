"""Floating-point numerics that manufacture inputs for the rigorous modules.

Nothing here is rigorous.  Results enter the proof modules only as
zero-radius balls, and every property the proofs rely on is re-verified
there.

The discretisation is a Galerkin model on the Zernike modes of degree
``< n_trunc``.  Products are formed on a polar grid that integrates the
relevant polynomials exactly: Gauss-Legendre in ``x = r^2`` and a uniform
angular grid.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from .zernike import EVEN, ODD, Zernike, _lap_coeffs, _layout, radial_values

log = logging.getLogger(__name__)

__all__ = [
    "DenseState",
    "SeedSpec",
    "FloatModel",
    "find_fix",
    "sn_mask",
    "build_newton_operator",
    "newton_matrix",
    "find_eigen",
    "ConvergenceError",
]


class ConvergenceError(RuntimeError):
    """Raised when an iteration fails to reach its tolerance."""


# -- states -------------------------------------------------------------------------------

@dataclass
class DenseState:
    """Floating coefficients over the modes of degree ``< n_trunc`` of one parity.

    Coefficients follow the band-major order of :meth:`Layout.modes` for the
    layout of size ``n_trunc - 1``.
    """

    n_trunc: int
    parity: int
    coefficients: np.ndarray
    residual: float = float("nan")

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.n_trunc < 1:
            raise ValueError("n_trunc must be positive")
        if self.coefficients.shape != (_layout(self.n_trunc - 1).mode_count(self.parity),):
            raise ValueError("coefficient vector does not match n_trunc")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("state has non-finite entries")

    def to_zernike(self, rho, size: int) -> Zernike:
        """Promote to an exact (zero-radius) enclosure of the given size."""
        if size < self.n_trunc - 1:
            raise ValueError("size too small for this state")
        m, j = _layout(self.n_trunc - 1).modes(self.parity)
        u = Zernike.zero(rho, self.parity, size)
        u.center[m, j] = self.coefficients
        return u

    @classmethod
    def from_zernike(cls, u: Zernike, n_trunc: int | None = None) -> "DenseState":
        """Coefficient centers of ``u`` below ``n_trunc`` (errors are dropped)."""
        n_trunc = u.size + 1 if n_trunc is None else n_trunc
        if n_trunc > u.size + 1:
            raise ValueError("n_trunc exceeds the enclosure size")
        m, j = _layout(n_trunc - 1).modes(u.parity)
        return cls(n_trunc, u.parity, u.center[m, j])


@dataclass(frozen=True)
class SeedSpec:
    """Initial data for :func:`find_fix`.

    ``kind`` is ``"radial_bump"``, ``"offcenter_bump"`` or ``"symmetrized"``.
    Bumps are Gaussians of the given ``width`` centred at ``(center, 0)``,
    multiplied by ``1 - r^2``.  ``symmetrized`` with parameter ``n`` sums
    ``(S_n)^k`` of the off-centre bump for ``k < 2n``, where
    ``(S_n u)(r, t) = -u(r, t + pi/n)``.
    """

    kind: str = "offcenter_bump"
    amplitude: float = 1.0
    center: float = 0.5
    width: float = 0.3
    n: int = 1

    def __post_init__(self):
        if self.kind not in ("radial_bump", "offcenter_bump", "symmetrized"):
            raise ValueError(f"unknown seed kind {self.kind!r}")
        if self.width <= 0:
            raise ValueError("seed width must be positive")
        if self.kind == "symmetrized" and self.n < 1:
            raise ValueError("symmetrized seeds need n >= 1")

    @classmethod
    def parse(cls, text: str) -> "SeedSpec":
        """Parse ``kind[:key=value,...]``, e.g. ``symmetrized:n=1,center=0.6``."""
        kind, _, rest = text.partition(":")
        kw = {}
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            k = k.strip()
            if k not in ("amplitude", "center", "width", "n"):
                raise ValueError(f"unknown seed parameter {k!r}")
            kw[k] = int(v) if k == "n" else float(v)
        return cls(kind.strip(), **kw)

    def values(self, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        x, y = r * np.cos(t), r * np.sin(t)
        s2 = self.width ** 2
        if self.kind == "radial_bump":
            f = np.exp(-(r * r) / s2)
        elif self.kind == "offcenter_bump":
            f = np.exp(-((x - self.center) ** 2 + y * y) / s2)
        else:
            f = np.zeros_like(r)
            for k in range(2 * self.n):
                tk = t + k * np.pi / self.n
                xk, yk = r * np.cos(tk), r * np.sin(tk)
                f += (-1) ** k * np.exp(-((xk - self.center) ** 2 + yk * yk) / s2)
        return self.amplitude * f * (1 - r * r)


# -- the Galerkin model ----------------------------------------------------------------------

def _norms(size: int, parity: int) -> np.ndarray:
    """``<V, V>_{L^2}`` for each mode of the layout, in order."""
    m, j = _layout(size).modes(parity)
    n = m + 2 * j
    return np.where(m == 0, np.pi, np.pi / 2) / (n + 1)


@functools.lru_cache(maxsize=8)
def _linv_matrix(size: int, parity: int) -> np.ndarray:
    """Matrix of ``(-Delta)^{-1}`` with outputs of degree ``> size`` dropped."""
    m, j = _layout(size).modes(parity)
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(m, j))}
    L = np.zeros((len(m), len(m)))
    for col, (a, b) in enumerate(zip(m, j)):
        a, b = int(a), int(b)
        for shift, c in zip((1, 0, -1), _lap_coeffs(a + 2 * b, a)):
            row = index.get((a, b + shift))
            if row is not None and c:
                L[row, col] = float(c)
    L.flags.writeable = False
    return L


class FloatModel:
    """Galerkin discretisation of ``G`` on modes of degree ``<= size``."""

    def __init__(self, size: int, weight_coeffs, rho=Fraction(65, 64)):
        self.size = int(size)
        self.w = np.asarray(weight_coeffs, dtype=np.float64)  # on V^0_{2k}
        self.rho = float(rho)
        wdeg = 2 * (len(self.w) - 1)
        S = self.size
        self.nx = S + wdeg // 4 + 2
        self.nt = 4 * S + wdeg + 2
        x, wx = np.polynomial.legendre.leggauss(self.nx)
        self.x = (x + 1) / 2
        # int_0^1 f(r) r dr = (1/2) int_0^1 f(sqrt x) dx
        self.wx = wx / 4
        self.r = np.sqrt(self.x)
        self.t = 2 * np.pi * np.arange(self.nt) / self.nt
        R = radial_values(S, S, self.r, one=np.ones_like(self.r))
        self.R = [np.stack([R[(m, m + 2 * j)] for j in range((S - m) // 2 + 1)], axis=1)
                  for m in range(S + 1)]
        k = np.arange(2 * S + 1)
        self.cos = np.cos(np.outer(k, self.t))
        self.sin = np.sin(np.outer(k, self.t))
        rw = radial_values(0, wdeg, self.r, one=np.ones_like(self.r))
        self.w_grid = sum(c * rw[(0, 2 * i)] for i, c in enumerate(self.w))
        self._modes = {p: _layout(S).modes(p) for p in (EVEN, ODD)}
        self._norms = {p: _norms(S, p) for p in (EVEN, ODD)}

    @classmethod
    def for_weight(cls, w, n_trunc: int) -> "FloatModel":
        """Model of size ``n_trunc - 1`` for a :class:`Weight`."""
        coeffs = w.w.center[0]
        nz = np.flatnonzero(coeffs)
        coeffs = coeffs[: nz.max() + 1] if len(nz) else coeffs[:1]
        return cls(n_trunc - 1, coeffs, w.w.rho)

    def modes(self, parity: int):
        return self._modes[parity]

    def weights(self, parity: int) -> np.ndarray:
        """``rho**n`` per mode."""
        m, j = self.modes(parity)
        return self.rho ** (m + 2 * j)

    def norm(self, vec, parity: int = EVEN) -> float:
        return float(np.abs(vec) @ self.weights(parity))

    def _trig(self, parity):
        return self.sin if parity == ODD else self.cos

    def synth(self, vec, parity: int = EVEN) -> np.ndarray:
        """Grid values (``nx`` by ``nt``) of a coefficient vector."""
        m, j = self.modes(parity)
        A = np.zeros((self.nx, self.size + 1))
        start = 0
        for mm in range(self.size + 1):
            cnt = (self.size - mm) // 2 + 1
            if parity == ODD and mm == 0:
                continue
            A[:, mm] = self.R[mm] @ vec[start:start + cnt]
            start += cnt
        return A @ self._trig(parity)[: self.size + 1]

    def _fourier(self, F, parity, kmax):
        return F @ self._trig(parity)[: kmax + 1].T * (2 * np.pi / self.nt)

    def analyze(self, F, parity: int = EVEN) -> np.ndarray:
        """L^2 projection of grid values onto the modes."""
        Fc = self._fourier(F, parity, self.size)
        out = []
        for mm in range(self.size + 1):
            if parity == ODD and mm == 0:
                continue
            out.append(self.R[mm].T @ (self.wx * Fc[:, mm]))
        return np.concatenate(out) / self._norms[parity]

    def mult_matrix(self, f_grid, parity: int) -> np.ndarray:
        """Matrix of ``h -> P(f h)`` on the parity subspace."""
        S = self.size
        Fc = self._fourier(f_grid, EVEN, 2 * S)
        m, _ = self.modes(parity)
        Rall = np.concatenate([self.R[mm] for mm in range(S + 1)
                               if not (parity == ODD and mm == 0)], axis=1)
        rows = []
        for m3 in range(S + 1):
            if parity == ODD and m3 == 0:
                continue
            plus = Fc[:, m3 + m]
            minus = Fc[:, np.abs(m3 - m)]
            ang = 0.5 * (minus - plus) if parity == ODD else 0.5 * (plus + minus)
            rows.append(self.R[m3].T @ (self.wx[:, None] * ang * Rall))
        return np.concatenate(rows, axis=0) / self._norms[parity][:, None]

    def linv(self, parity: int) -> np.ndarray:
        return _linv_matrix(self.size, parity)

    def G(self, vec) -> np.ndarray:
        u = self.synth(vec, EVEN)
        return self.linv(EVEN) @ self.analyze(self.w_grid[:, None] * u ** 3, EVEN)

    def dg_matrix(self, vec, parity: int) -> np.ndarray:
        u = self.synth(vec, EVEN)
        return self.linv(parity) @ self.mult_matrix(3 * self.w_grid[:, None] * u * u, parity)

    def project_seed(self, seed: SeedSpec) -> np.ndarray:
        R, T = np.meshgrid(self.r, self.t, indexing="ij")
        return self.analyze(seed.values(R, T), EVEN)


# -- fixed points ----------------------------------------------------------------------------------

def sn_mask(size: int, n: int, parity: int = EVEN) -> np.ndarray:
    """Modes whose band is an odd multiple of ``n`` (the S_n-invariant ones)."""
    m, _ = _layout(size).modes(parity)
    return (m % n == 0) & ((m // n) % 2 == 1)


def find_fix(w, seed: SeedSpec, n_trunc: int, tol: float = 1e-12, *,
             max_iter: int = 400, model: FloatModel | None = None,
             symmetry: int | None = None) -> DenseState:
    """Approximate fixed point of ``G`` by Petviashvili iteration then damped Newton.

    Returns a state whose relative residual ``|G(u) - u| / |u|`` (weighted
    l1) is at most ``tol``; raises :class:`ConvergenceError` otherwise.
    With ``symmetry = n`` (the default for ``symmetrized`` seeds) the
    iteration is restricted to the S_n-invariant bands, and the other
    coefficients of the result are exactly zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = model or FloatModel.for_weight(w, n_trunc)
    if symmetry is None and seed.kind == "symmetrized":
        symmetry = seed.n
    keep = (sn_mask(M.size, symmetry) if symmetry else np.ones(len(M.modes(EVEN)[0]), bool))
    a = np.where(keep, M.project_seed(seed), 0.0)
    nrm = M.norm

    def Gp(a):
        return np.where(keep, M.G(a), 0.0)

    def rel_res(a):
        na = nrm(a)
        return nrm(Gp(a) - a) / na if na else 0.0

    if not nrm(a):
        return DenseState(n_trunc, EVEN, a, 0.0)
    # Petviashvili: fixes the scale of the cubic problem
    for it in range(max_iter):
        g = Gp(a)
        den = a @ g
        if den == 0 or not nrm(g):
            return DenseState(n_trunc, EVEN, np.zeros_like(a), 0.0)
        a = (a @ a / den) ** 1.5 * g
        res = rel_res(a)
        if res < 1e-4:
            break
    log.info("petviashvili: %d steps, residual %.3g", it + 1, res)
    idx = np.flatnonzero(keep)
    eye = np.eye(len(idx))
    for it in range(60):
        if res <= tol:
            break
        F = (Gp(a) - a)[idx]
        D = M.dg_matrix(a, EVEN)[np.ix_(idx, idx)]
        step = np.zeros_like(a)
        step[idx] = np.linalg.solve(D - eye, -F)
        t = 1.0
        while t > 1e-4:
            trial = a + t * step
            new = rel_res(trial)
            if new < res or new <= tol:
                break
            t /= 2
        else:
            raise ConvergenceError(f"Newton stagnated at residual {res:.3g}")
        a, res = trial, new
        log.info("newton %d: step %.3g residual %.3g", it, t, res)
    if res > tol:
        raise ConvergenceError(f"no convergence: residual {res:.3g} > {tol:g}")
    return DenseState(n_trunc, EVEN, a, res)


def newton_matrix(D: np.ndarray) -> np.ndarray:
    """``I - (I - D)^{-1}`` for a square floating matrix ``D``."""
    I = np.eye(len(D))
    try:
        inv = np.linalg.inv(I - D)
    except np.linalg.LinAlgError as exc:
        raise ValueError("I - DG is singular; try a different n_trunc") from exc
    if not np.all(np.isfinite(inv)):
        raise ValueError("I - DG is numerically singular; try a different n_trunc")
    return I - inv


def build_newton_operator(w, ubar: DenseState, n_trunc: int | None = None,
                          model: FloatModel | None = None, symmetry: int | None = None):
    """``M = I - (I - DG(ubar))^{-1}`` on the modes of degree ``< n_trunc``.

    With ``symmetry = n`` the couplings between S_n-invariant bands and the
    rest are set to zero, so that ``M`` commutes with ``S_n``.
    """
    from .prove import NewtonOperator

    n_trunc = ubar.n_trunc if n_trunc is None else n_trunc
    M = model or FloatModel.for_weight(w, n_trunc)
    if M.size != n_trunc - 1:
        raise ValueError("model size does not match n_trunc")
    a = _restrict(ubar, n_trunc)
    D = M.dg_matrix(a, EVEN)
    if symmetry:
        inside = sn_mask(M.size, symmetry)
        D[np.outer(inside, ~inside) | np.outer(~inside, inside)] = 0.0
    Mm = newton_matrix(D)
    if symmetry:
        Mm[np.outer(inside, ~inside) | np.outer(~inside, inside)] = 0.0
    return NewtonOperator(n_trunc, Mm)


def _restrict(state: DenseState, n_trunc: int) -> np.ndarray:
    """Coefficients of ``state`` on the modes of degree ``< n_trunc``."""
    if n_trunc == state.n_trunc:
        return state.coefficients
    m, j = _layout(state.n_trunc - 1).modes(state.parity)
    full = {(int(a), int(b)): c for a, b, c in zip(m, j, state.coefficients)}
    m2, j2 = _layout(n_trunc - 1).modes(state.parity)
    return np.array([full.get((int(a), int(b)), 0.0) for a, b in zip(m2, j2)])


# -- eigenpairs -------------------------------------------------------------------------------------

def find_eigen(w, ubar: DenseState, parity: int, count: int, rho=None,
               size: int | None = None, model: FloatModel | None = None):
    """Top ``count`` eigenpairs of ``DG(ubar)`` on one parity subspace.

    Uses Rayleigh-Ritz over all ``v = (-Delta)^{-1} g`` with ``g`` of degree
    ``<= N - 2`` (``N = n_trunc - 1``), in the ``H^1_0`` pairing
    ``<v, h>_{H^1} = <g, h>_{L^2}``.  The generalized symmetric problem is
    solved densely, which is subspace iteration run to completion.  Returns
    :class:`spectral.EigenData` holding the preimages ``g_j``, normalised to
    unit ``H^1`` norm.
    """
    from .spectral import EigenData

    if count < 1:
        raise ValueError("count must be positive")
    M = model or FloatModel.for_weight(w, ubar.n_trunc)
    N = M.size
    m, j = M.modes(parity)
    keep = np.flatnonzero(m + 2 * j <= N - 2)
    if count > len(keep):
        raise ValueError("count exceeds the subspace dimension")
    L = M.linv(parity)[:, keep]
    u = M.synth(ubar.coefficients, EVEN)
    W = M.mult_matrix(3 * M.w_grid[:, None] * u * u, parity)
    nr = M._norms[parity]
    A = L.T @ (nr[:, None] * (W @ L))
    B = L.T @ (nr[:, None] * np.eye(len(nr))[:, keep])
    A = (A + A.T) / 2
    B = (B + B.T) / 2
    n = len(keep)
    vals, vecs = scipy.linalg.eigh(A, B, subset_by_index=[n - count, n - 1])
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    size = N if size is None else size
    rho = w.w.rho if rho is None else Fraction(rho)
    gs = []
    for k in range(count):
        g = np.zeros(len(m))
        g[keep] = vecs[:, k]
        # sign convention: largest coefficient positive
        if g[np.argmax(np.abs(g))] < 0:
            g = -g
        gs.append(DenseState(N + 1, parity, g).to_zernike(rho, size))
    return EigenData(parity, [float(v) for v in vals], gs)


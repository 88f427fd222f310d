"""Exact squared Clebsch-Gordan coefficients via Regge symbols.

A Regge matrix is a 3x3 array of nonnegative integers whose row and column
sums all equal ``J``.  Its symbol is invariant (up to the sign ``(-1)**J``
for odd permutations) under the 72 row/column permutations and transposition,
so every value can be stored once, at the index of its canonical form

    [[S,     L,     X+B-T],
     [X,     B,     S+L-T],
     [L+B-T, S+X-T, T    ]]      L >= X >= T >= B >= S >= 0,  2T <= L+S.

Values are exact rationals; factorials are handled as prime-exponent vectors
and the alternating sum is cleared to integers before squaring.
"""

from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import gmpy2
import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "CanonicalRegge",
    "ExactSquare",
    "CGTable",
    "is_valid",
    "normal_form",
    "normal_form_many",
    "expand",
    "value_squared",
    "regge_matrix",
    "cg_squared",
    "index",
    "index_many",
    "enumerate_canonical",
    "table_build",
]


# -- primes and factorials --------------------------------------------------

def _primes_upto(n: int) -> np.ndarray:
    sieve = np.ones(max(n + 1, 2), dtype=bool)
    sieve[:2] = False
    for p in range(2, int(n ** 0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return np.flatnonzero(sieve)


class _FactorialExponents:
    """Prime-exponent vectors of k! for k up to a growing limit (Legendre)."""

    def __init__(self, limit: int = 64):
        self._build(limit)

    def _build(self, limit: int) -> None:
        self.limit = limit
        self.primes = _primes_upto(limit)
        self.prime_mpz = [gmpy2.mpz(int(q)) for q in self.primes]
        exps = np.zeros((limit + 1, len(self.primes)), dtype=np.int64)
        for i, p in enumerate(self.primes):
            pk = int(p)
            while pk <= limit:
                exps[:, i] += np.arange(limit + 1) // pk
                pk *= int(p)
        self.exps = exps

    def __call__(self, k: int) -> np.ndarray:
        if k > self.limit:
            self._build(max(k, 2 * self.limit))
        return self.exps[k]


_FACT = _FactorialExponents()


# -- data types ---------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalRegge:
    L: int
    S: int
    T: int
    X: int
    B: int

    def __post_init__(self):
        L, S, T, X, B = self.L, self.S, self.T, self.X, self.B
        if not (L >= X >= T >= B >= S >= 0 and 2 * T <= L + S):
            raise ValueError(f"not a canonical Regge tuple: {self}")

    def astuple(self) -> tuple[int, int, int, int, int]:
        return (self.L, self.S, self.T, self.X, self.B)


@dataclass(frozen=True)
class ExactSquare:
    """The signed square ``sign * numerator/denominator`` of a Regge symbol."""

    numerator: int
    denominator: int
    sign: int = 1

    @property
    def square(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def signed(self) -> Fraction:
        return self.sign * self.square

    def __float__(self) -> float:
        return self.numerator / self.denominator


ZERO = ExactSquare(0, 1, 1)


# -- symmetries ---------------------------------------------------------------

def _parity(perm) -> int:
    p = list(perm)
    odd = 0
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            odd ^= p[i] > p[j]
    return odd


def _build_symmetries():
    maps, parities = [], []
    for transpose in (False, True):
        for rp in itertools.permutations(range(3)):
            for cp in itertools.permutations(range(3)):
                m = []
                for i in range(3):
                    for j in range(3):
                        a, b = rp[i], cp[j]
                        m.append(3 * b + a if transpose else 3 * a + b)
                maps.append(m)
                parities.append(_parity(rp) ^ _parity(cp))
    return np.array(maps, dtype=np.intp), np.array(parities, dtype=np.int64)


SYMMETRY_MAPS, SYMMETRY_PARITY = _build_symmetries()


def is_valid(r) -> bool:
    a = np.asarray(r, dtype=np.int64).reshape(3, 3)
    if (a < 0).any():
        return False
    J = a[0].sum()
    return bool((a.sum(axis=0) == J).all() and (a.sum(axis=1) == J).all())


def expand(c: CanonicalRegge) -> np.ndarray:
    L, S, T, X, B = c.astuple()
    return np.array(
        [[S, L, X + B - T], [X, B, S + L - T], [L + B - T, S + X - T, T]],
        dtype=np.int64,
    )


def _expand_list(L: int, S: int, T: int, X: int, B: int) -> list[int]:
    return [S, L, X + B - T, X, B, S + L - T, L + B - T, S + X - T, T]


_KEY_BITS = 13
_KEY_NONE = np.iinfo(np.int64).max


def normal_form_many(mats) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized normal form for an ``(N, 3, 3)`` array of valid matrices.

    Returns ``(tuples, sign_exponent)`` with ``tuples[:, :] = (L, S, T, X, B)``.
    Among symmetric images matching the canonical pattern the
    lexicographically smallest tuple is chosen.
    """
    a = np.asarray(mats, dtype=np.int64).reshape(-1, 9)
    if a.size and a.max() >= (1 << _KEY_BITS):
        raise ValueError("Regge entries too large for the canonical key")
    if len(a) > _CHUNK:
        parts = [_normal_form_block(a[i : i + _CHUNK]) for i in range(0, len(a), _CHUNK)]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))
    return _normal_form_block(a)


_CHUNK = 16384


def _normal_form_block(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    img = a[:, SYMMETRY_MAPS]  # (N, 72, 9)
    S, L, X, B, T = img[..., 0], img[..., 1], img[..., 3], img[..., 4], img[..., 8]
    ok = (L >= X) & (X >= T) & (T >= B) & (B >= S) & (S >= 0) & (2 * T <= L + S)
    key = L
    for v in (S, T, X, B):
        key = (key << _KEY_BITS) | v
    key = np.where(ok, key, _KEY_NONE)
    best = key.argmin(axis=1)
    rows = np.arange(len(a))
    if not ok[rows, best].all():
        bad = a[~ok[rows, best]][0].reshape(3, 3)
        raise ValueError(f"no canonical image for Regge matrix\n{bad}")
    tuples = np.stack(
        [L[rows, best], S[rows, best], T[rows, best], X[rows, best], B[rows, best]],
        axis=1,
    )
    return tuples, SYMMETRY_PARITY[best]


def normal_form(r) -> tuple[CanonicalRegge, int]:
    if not is_valid(r):
        raise ValueError(f"invalid Regge matrix: {np.asarray(r).tolist()}")
    tuples, sgn = normal_form_many(np.asarray(r).reshape(1, 3, 3))
    return CanonicalRegge(*map(int, tuples[0])), int(sgn[0])


# -- exact values ---------------------------------------------------------------

def value_squared(r) -> ExactSquare:
    """Exact signed square of the Regge symbol of ``r``; zero if invalid."""
    a = [int(x) for x in np.asarray(r).reshape(9)]
    if not is_valid(np.array(a)):
        return ZERO
    return _value_squared_valid(a)


def _value_squared_valid(a: list[int]) -> ExactSquare:
    r11, r12, r13, r21, r22, r23, r31, r32, r33 = a
    J = r11 + r12 + r13
    kmin = max(0, r21 - r12, r32 - r11)
    kmax = min(r13, r21, r32)
    if kmin > kmax:
        return ZERO
    fact = _FACT
    fact(J + 1)  # make sure the exponent table is large enough
    E = fact.exps
    ks = np.arange(kmin, kmax + 1)
    # exponent vectors of Q_k, one fused gather for the six factorials
    idx = np.concatenate((ks, ks + (r12 - r21), ks + (r11 - r32), r13 - ks, r21 - ks, r32 - ks))
    qs = E[idx].reshape(6, len(ks), -1).sum(axis=0)
    lcm = qs.max(axis=0)
    pre = (E[a].sum(axis=0) - E[J + 1] - 2 * lcm).tolist()
    # integer terms lcm/Q_k, generated by exact ratios from the first one
    term = num = den = gmpy2.mpz(1)
    for p, e0, e in zip(fact.prime_mpz, (lcm - qs[0]).tolist(), pre):
        if e0:
            term *= p ** e0
        if e > 0:
            num *= p ** e
        elif e < 0:
            den *= p ** -e
    total = term if kmin % 2 == 0 else -term
    for k in range(kmin, kmax):
        term = gmpy2.divexact(term * ((r13 - k) * (r21 - k) * (r32 - k)),
                              (k + 1) * (r12 - r21 + k + 1) * (r11 - r32 + k + 1))
        total += term if (k + 1) % 2 == 0 else -term
    if total == 0:
        return ZERO

    num = total * total * num
    g = gmpy2.gcd(num, den)
    sign = (-1) ** ((r12 - r33) % 2) * (1 if total > 0 else -1)
    return ExactSquare(int(num // g), int(den // g), sign)


def regge_matrix(n1: int, m1: int, n2: int, m2: int, n3: int) -> np.ndarray | None:
    """Regge matrix of the coefficient for ``V^{m1}_{n1} V^{m2}_{n2} -> V^{m1+m2}_{n3}``.

    Returns None when the Zernike support rules already force a zero.
    """
    m3 = m1 + m2
    for n, m in ((n1, m1), (n2, m2), (n3, m3)):
        if n < abs(m) or (n - m) % 2:
            return None
    if n3 > n1 + n2 or n3 < abs(n1 - n2):
        return None
    return np.array(
        [
            [(n2 + n3 - n1) // 2, (n3 + n1 - n2) // 2, (n1 + n2 - n3) // 2],
            [(n1 - m1) // 2, (n2 - m2) // 2, (n3 + m3) // 2],
            [(n1 + m1) // 2, (n2 + m2) // 2, (n3 - m3) // 2],
        ],
        dtype=np.int64,
    )


def cg_squared(n1: int, m1: int, n2: int, m2: int, n3: int) -> Fraction:
    """Product weight C of ``V^{m1}_{n1} V^{m2}_{n2} = sum_n3 C V^{m1+m2}_{n3}``."""
    r = regge_matrix(n1, m1, n2, m2, n3)
    if r is None:
        return Fraction(0)
    return (n3 + 1) * value_squared(r).square


# -- indexing -----------------------------------------------------------------

def _lst_counts(lmax: int) -> np.ndarray:
    """Offsets F[L, S, T]: number of members of the ordered set before (L, S, T, *, *)."""
    F = np.zeros((lmax + 1, lmax + 1, lmax + 1), dtype=np.int64)
    count = 0
    for L in range(lmax + 1):
        for S in range(L + 1):
            for T in range(S, L + 1):
                if 2 * T > L + S:
                    break
                F[L, S, T] = count
                count += (L - T + 1) * (T - S + 1)
    return F, count


def index_many(tuples: np.ndarray, F: np.ndarray) -> np.ndarray:
    L, S, T, X, B = (tuples[:, i] for i in range(5))
    return F[L, S, T] + (X - T) * (T - S + 1) + (B - S + 1)


def index(c: CanonicalRegge, F: np.ndarray | None = None) -> int:
    """1-based lexicographic rank of ``(L, S, T, X, B)`` in the ordered set."""
    if not isinstance(c, CanonicalRegge):
        c = CanonicalRegge(*c)
    if F is None or c.L >= F.shape[0]:
        F, _ = _lst_counts(c.L)
    return int(index_many(np.array([c.astuple()]), F)[0])


def enumerate_canonical(lmax: int):
    """All members ``(l, s, t, x, b)`` with ``l <= lmax`` in lexicographic order."""
    for l in range(lmax + 1):
        for s in range(l + 1):
            for t in range(s, l + 1):
                if 2 * t > l + s:
                    break
                for x in range(t, l + 1):
                    for b in range(s, t + 1):
                        yield (l, s, t, x, b)


# -- the table ------------------------------------------------------------------

def _product_matrices(max_n: int, nmax_out: int | None = None):
    """Regge matrices of every product weight with n1 <= n2 <= max_n, n3 <= nmax_out.

    Yields ``(params, mats)`` chunks; ``params`` columns are (n1, m1, n2, m2, n3),
    with ``m1 >= 0`` (the weights are invariant under flipping all signs).
    """
    nmax_out = max_n if nmax_out is None else nmax_out
    for n1 in range(max_n + 1):
        rows = []
        for n2 in range(n1, max_n + 1):
            m1 = np.arange(n1 % 2, n1 + 1, 2)
            m2 = np.arange(-n2, n2 + 1, 2)
            mm1, mm2 = np.meshgrid(m1, m2, indexing="ij")
            mm1, mm2 = mm1.ravel(), mm2.ravel()
            m3 = mm1 + mm2
            for n3 in range(n2 - n1, min(n1 + n2, nmax_out) + 1, 2):
                keep = np.abs(m3) <= n3
                k = int(keep.sum())
                if k:
                    rows.append(np.column_stack([
                        np.full(k, n1), mm1[keep], np.full(k, n2), mm2[keep], np.full(k, n3)
                    ]))
        if rows:
            p = np.concatenate(rows)
            yield p, _regge_from_params(p)


def _regge_from_params(p: np.ndarray) -> np.ndarray:
    n1, m1, n2, m2, n3 = (p[:, i] for i in range(5))
    m3 = m1 + m2
    return np.stack(
        [
            (n2 + n3 - n1) // 2, (n3 + n1 - n2) // 2, (n1 + n2 - n3) // 2,
            (n1 - m1) // 2, (n2 - m2) // 2, (n3 + m3) // 2,
            (n1 + m1) // 2, (n2 + m2) // 2, (n3 - m3) // 2,
        ],
        axis=1,
    ).reshape(-1, 3, 3)


_MAGIC = b"ZPCGTAB\0"
_VERSION = 1


def _encode(v: ExactSquare) -> bytes:
    out = [b"\x01" if v.sign > 0 else b"\xff"]
    for x in (v.numerator, v.denominator):
        raw = x.to_bytes((x.bit_length() + 7) // 8 or 1, "big")
        out.append(struct.pack(">I", len(raw)))
        out.append(raw)
    return b"".join(out)


def _decode(data: bytes, pos: int) -> tuple[ExactSquare | None, int]:
    tag = data[pos]
    pos += 1
    if tag == 0:
        return None, pos
    ints = []
    for _ in range(2):
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        ints.append(int.from_bytes(data[pos : pos + n], "big"))
        pos += n
    return ExactSquare(ints[0], ints[1], 1 if tag == 1 else -1), pos


class CGTable:
    """Squared Regge symbols stored by canonical index.

    Only the indices a table was asked to serve are present.  Exact values are
    kept as encoded records in one byte string (``value_at`` decodes them);
    ``floats`` holds the correctly rounded squares for vectorized lookups.
    """

    def __init__(self, max_n: int, lmax: int, indices, blob: bytes, offsets):
        self.max_n = max_n
        self.lmax = lmax
        self.aux, self.size = _lst_counts(lmax)
        self.indices = np.asarray(indices, dtype=np.int64)
        self._blob = blob
        self._offsets = np.asarray(offsets, dtype=np.int64)
        if len(self._offsets) != len(self.indices):
            raise ValueError("offsets do not match indices")
        if len(self.indices) and (self.indices[0] < 1 or self.indices[-1] > self.size):
            raise ValueError("index outside the canonical range")
        self.floats = np.array(
            [v.numerator / v.denominator for v in self._iter_values()], dtype=np.float64
        )

    @classmethod
    def from_values(cls, max_n: int, lmax: int, items) -> "CGTable":
        """Build from ``(index, ExactSquare)`` pairs (any order, no duplicates)."""
        items = sorted(items, key=lambda t: t[0])
        parts, offsets, pos = [], [], 0
        for _, v in items:
            rec = _encode(v)
            offsets.append(pos)
            parts.append(rec)
            pos += len(rec)
        return cls(max_n, lmax, [i for i, _ in items], b"".join(parts), offsets)

    def _iter_values(self):
        for off in self._offsets.tolist():
            yield _decode(self._blob, off)[0]

    def __len__(self):
        return len(self.indices)

    def __contains__(self, idx: int) -> bool:
        k = np.searchsorted(self.indices, idx)
        return bool(k < len(self.indices) and self.indices[k] == idx)

    def value_at(self, idx: int) -> ExactSquare:
        """Exact stored value at 1-based canonical index ``idx``."""
        k = int(np.searchsorted(self.indices, idx))
        if k >= len(self.indices) or self.indices[k] != idx:
            raise KeyError(f"canonical index {idx} not stored")
        return _decode(self._blob, int(self._offsets[k]))[0]

    def lookup_index(self, mats: np.ndarray) -> np.ndarray:
        tuples, _ = normal_form_many(mats)
        if tuples.size and tuples[:, 0].max() > self.lmax:
            raise ValueError(f"table with lmax={self.lmax} too small; rebuild with larger max_n")
        return index_many(tuples, self.aux)

    def get(self, n1: int, m1: int, n2: int, m2: int, n3: int) -> Fraction:
        """Exact product weight, read from the table."""
        r = regge_matrix(n1, m1, n2, m2, n3)
        if r is None:
            return Fraction(0)
        self._check_range(max(n1, n2, n3))
        v = self.value_at(int(self.lookup_index(r[None])[0]))
        return (n3 + 1) * v.square

    def floats_at(self, idx: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.indices, idx)
        k = np.minimum(k, len(self.indices) - 1)
        if len(self.indices) == 0 or (self.indices[k] != idx).any():
            raise KeyError("table lacks entries for some requested weights")
        return self.floats[k]

    def weights(self, params: np.ndarray) -> np.ndarray:
        """Float product weights for rows (n1, m1, n2, m2, n3) of valid support.

        Each result is within 2 units of roundoff (relative) of the exact weight.
        """
        params = np.asarray(params, dtype=np.int64).reshape(-1, 5)
        if params.size == 0:
            return np.zeros(0)
        self._check_range(int(params[:, [0, 2, 4]].max()))
        out = self.floats_at(self.lookup_index(_regge_from_params(params)))
        return out * (params[:, 4] + 1)

    def _check_range(self, n: int) -> None:
        if n > self.max_n:
            raise ValueError(f"table serves degrees <= {self.max_n}; needs max_n >= {n}")

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        """Header (magic, version, max_n, lmax, count), then one record per index."""
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        ends = np.append(self._offsets[1:], len(self._blob)) if len(self) else np.zeros(0, np.int64)
        with open(tmp, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIII", _VERSION, self.max_n, self.lmax, len(self)))
            for i, a, b in zip(self.indices.tolist(), self._offsets.tolist(), ends.tolist()):
                fh.write(struct.pack("<I", i))
                fh.write(self._blob[a:b])
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "CGTable":
        data = Path(path).read_bytes()
        if data[:8] != _MAGIC:
            raise ValueError(f"{path}: not a CG table file")
        version, max_n, lmax, count = struct.unpack_from("<IIII", data, 8)
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported table version {version}")
        pos = 24
        indices, offsets, parts, out = [], [], [], 0
        for _ in range(count):
            (i,) = struct.unpack_from("<I", data, pos)
            start = pos + 4
            _, pos = _decode(data, start)
            indices.append(i)
            offsets.append(out)
            parts.append(data[start:pos])
            out += pos - start
        return cls(max_n, lmax, indices, b"".join(parts), offsets)


def needed_indices(max_n: int, lmax: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Canonical indices (and tuples) of all product weights with n1, n2, n3 <= max_n."""
    F, _ = _lst_counts(max_n if lmax is None else lmax)
    idx_parts, tup_parts = [], []
    for _, mats in _product_matrices(max_n):
        tuples, _ = normal_form_many(mats)
        idx = index_many(tuples, F)
        idx, first = np.unique(idx, return_index=True)
        idx_parts.append(idx)
        tup_parts.append(tuples[first])
    if not idx_parts:
        return np.zeros(0, np.int64), np.zeros((0, 5), np.int64)
    idx = np.concatenate(idx_parts)
    tup = np.concatenate(tup_parts)
    idx, first = np.unique(idx, return_index=True)
    return idx, tup[first]


def table_build(max_n: int, cache_dir=None) -> CGTable:
    """Table serving every product weight with n1, n2, n3 <= max_n.

    With ``cache_dir`` set, a table file keyed by ``max_n`` is reused or written.
    """
    if max_n < 0:
        raise ValueError("max_n must be nonnegative")
    cache = None
    if cache_dir is not None:
        cache = Path(cache_dir) / f"cgtable_n{max_n}_v{_VERSION}.bin"
        if cache.exists():
            log.info("loading CG table from %s", cache)
            return CGTable.load(cache)
    try:
        idx, tup = needed_indices(max_n)
    except MemoryError as exc:  # pragma: no cover
        raise MemoryError(f"CG table for max_n={max_n} does not fit in memory") from exc
    log.info("computing %d exact Regge values for max_n=%d", len(idx), max_n)
    items = [
        (i, _value_squared_valid(_expand_list(*t)))
        for i, t in zip(idx.tolist(), tup.tolist())
    ]
    table = CGTable.from_values(max_n, max_n, items)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        table.save(cache)
    return table

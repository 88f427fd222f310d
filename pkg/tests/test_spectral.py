import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from zernprove import approx, gmap
from zernprove.ball import Ball
from zernprove.prove import NewtonOperator
from zernprove.spectral import (
    BANDS,
    COEF,
    TAIL,
    EigenData,
    OperatorEnclosure,
    at_least_m,
    at_most_n,
    build_partition,
    enclose_operator,
    l2_pair,
    morse_index,
    op_norm,
    rayleigh_fixed_point,
    spectral_radius_bound,
)
from zernprove.zernike import (
    EVEN,
    ODD,
    Zernike,
    _layout,
    inv_neg_lap,
    multiply,
    product_tensor,
    scale,
)

from .oracles import eval_modes_ld

RHO = Fraction(65, 64)


def coef_count(size, n_part, parity):
    m, j = _layout(size).modes(parity)
    return int(((m + 2 * j) < n_part).sum())


@pytest.mark.parametrize("size,n_part,parity", [(10, 0, EVEN), (10, 2, EVEN), (10, 11, EVEN),
                                                (10, 7, ODD), (0, 1, EVEN), (5, 3, ODD)])
def test_partition_counts(size, n_part, parity):
    P = build_partition(size, n_part, parity, RHO)
    residual = (size + 1 - (parity == ODD)) + 1
    assert P.count == coef_count(size, n_part, parity) + residual
    assert P.n_coef == coef_count(size, n_part, parity)
    assert (P.kind[P.n_coef:] != COEF).all()


def test_partition_examples():
    P = build_partition(10, 0, EVEN, RHO)
    assert P.n_coef == 0
    P = build_partition(10, 1, EVEN, RHO)
    assert P.n_coef == 1 and (P.m[0], P.j[0]) == (0, 0)
    # the cosine subspace also has r cos(t) of degree 1
    P = build_partition(10, 2, EVEN, RHO)
    assert P.n_coef == 2 and {(P.m[g], P.deg[g]) for g in range(2)} == {(0, 0), (1, 1)}
    with pytest.raises(ValueError):
        build_partition(10, 12, EVEN, RHO)


def _group_norms(P, modes: dict) -> np.ndarray:
    """Weighted norm of each group's component of an exact function ``{(m, n): c}``."""
    out = np.zeros(P.count)
    rho = float(P.rho)
    for (m, n), c in modes.items():
        w = abs(c) * rho ** n
        hit = [g for g in range(P.count)
               if (P.kind[g] == COEF and P.m[g] == m and P.deg[g] == n)
               or (P.kind[g] == TAIL and P.m[g] == m and n >= P.deg[g])
               or (P.kind[g] == BANDS and m > P.size)]
        assert len(hit) == 1
        out[hit[0]] += w
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_extract_loses_no_members(seed):
    from .oracles import sample_member

    rng = np.random.default_rng(seed)
    S, n_part = 8, 5
    z = Zernike.zero(RHO, EVEN, S)
    for m, j in zip(*_layout(S).modes(EVEN)):
        z.center[m, j] = rng.normal()
        z.radius[m, j] = abs(rng.normal()) * 1e-3
    z.tail[rng.integers(0, S + 1), 0] = 0.01
    z.tail[2, 3] = 0.02
    z.band[rng.integers(0, S + 2)] = 0.03
    P = build_partition(S, n_part, EVEN, RHO)
    cen, rad, eta = P.extract(z)
    y = sample_member(z, rng)
    got = _group_norms(P, y)
    coef = P.kind == COEF
    rho = float(RHO)
    for g in np.flatnonzero(coef):
        val = y.get((int(P.m[g]), int(P.deg[g])), 0.0) * rho ** int(P.deg[g])
        assert abs(val - cen[g]) <= rad[g] + eta + 1e-12
    assert (got[~coef] <= rad[~coef] + eta + 1e-12).all()


def _unit_modes(P, g, rng):
    """A member of the unit ball of group ``g``, as exact modes."""
    rho = float(P.rho)
    m, n = int(P.m[g]), int(P.deg[g])
    if P.kind[g] == COEF:
        return {(m, n): rng.choice([-1, 1]) / rho ** n}
    if P.kind[g] == TAIL:
        n += 2 * int(rng.integers(0, 3))
        return {(m, n): rng.choice([-1, 1]) / rho ** n}
    mm = P.size + 1 + int(rng.integers(0, 2))
    return {(mm, mm): 1 / rho ** mm}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_column_contract(seed):
    rng = np.random.default_rng(seed)
    S, n_part, n_trunc = 10, 5, 8
    k = NewtonOperator.zero(n_trunc).dim
    C = rng.normal(size=(k, k))
    R = np.abs(rng.normal(size=(k, k))) * 1e-2
    M = NewtonOperator(n_trunc, C, R)
    P = build_partition(S, n_part, EVEN, RHO)
    L = enclose_operator(M.apply, P)
    ent = L.entries
    pos = {(int(m), int(m + 2 * j)): i for i, (m, j) in enumerate(zip(M.m, M.j))}
    for _ in range(5):
        member = C + R * rng.uniform(-1, 1, size=R.shape)
        for g in range(P.count):
            y = _unit_modes(P, g, rng)
            img: dict = {}
            for key, c in y.items():
                if key in pos:
                    col = member[:, pos[key]] * c
                    for (m, n), i in pos.items():
                        img[(m, n)] = img.get((m, n), 0.0) + col[i]
            norms = _group_norms(P, img)
            assert (norms <= ent[:, g] + L.eta[g] + 1e-12).all()


def test_enclose_identity_and_zero():
    P = build_partition(8, 6, EVEN, RHO)
    I = enclose_operator(lambda h: h, P)
    ent = I.entries
    assert (ent.diagonal() >= 1).all()
    off = ent - np.diag(ent.diagonal())
    coef = P.kind == COEF
    assert not off[np.ix_(coef, coef)].any()
    Z = enclose_operator(lambda h: h.like(), P)
    assert not Z.entries.any() and op_norm(Z) == 0


def test_enclose_inv_neg_lap_pattern():
    P = build_partition(10, 11, EVEN, RHO)
    L = enclose_operator(inv_neg_lap, P)
    coef = np.flatnonzero(P.kind == COEF)
    ent = L.entries
    for a in coef:
        for b in coef:
            if ent[a, b]:
                assert P.m[a] == P.m[b] and abs(int(P.deg[a]) - int(P.deg[b])) <= 2
    # V^0_0 -> (V^0_0 - V^0_2) / 8
    g00 = next(g for g in coef if P.m[g] == 0 and P.deg[g] == 0)
    g02 = next(g for g in coef if P.m[g] == 0 and P.deg[g] == 2)
    assert abs(L.center[g00, g00] - 1 / 8) < 1e-15
    assert abs(L.center[g02, g00] + float(RHO) ** 2 / 8) < 1e-15


def _enclosure(matrix) -> OperatorEnclosure:
    G = len(matrix)
    P = build_partition(G - 2, 0, EVEN, RHO)
    assert P.count == G
    A = np.array(matrix, dtype=float)
    return OperatorEnclosure(P, A, np.zeros_like(A), np.zeros(G))


def test_op_norm_examples():
    assert op_norm(_enclosure(2 * np.eye(4))) == 2
    assert op_norm(_enclosure([[0.5, 0], [0.25, 0]])) == 0.75
    assert op_norm(_enclosure(np.zeros((3, 3)))) == 0


def test_spectral_radius_examples():
    assert spectral_radius_bound(_enclosure([[0, 1], [0, 0]]), 1) == 0
    for k in range(5):
        b = spectral_radius_bound(_enclosure(0.5 * np.eye(3)), k)
        assert 0.5 <= b <= 0.5 * (1 + 1e-14)
    with pytest.raises(ValueError):
        spectral_radius_bound(_enclosure(np.eye(2)), -1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_spectral_radius_random(seed):
    rng = np.random.default_rng(seed)
    B = rng.random((20, 20))
    A = (B + B.T) / 2
    lam = np.linalg.eigvalsh(A).max()
    L = _enclosure(A)
    bs = [spectral_radius_bound(L, k) for k in range(7)]
    assert lam <= bs[6] <= lam * 1.05
    # non-increasing in k up to rounding slack
    assert all(b2 <= b1 * (1 + 1e-12) for b1, b2 in zip(bs, bs[1:]))


def _quad_pair(modes_f, modes_g, parity):
    def f(t, r):
        a = eval_modes_ld(modes_f, parity, r, t)
        b = eval_modes_ld(modes_g, parity, r, t)
        return float(a * b) * r

    return integrate.dblquad(f, 0, 1, 0, 2 * math.pi, epsabs=1e-13, epsrel=1e-13)[0]


@pytest.mark.parametrize("m,n,parity", [(0, 2, EVEN), (0, 0, EVEN), (1, 3, EVEN), (2, 4, ODD)])
def test_l2_norm_constants(m, n, parity):
    z = Zernike.from_modes(RHO, parity, 6, {(m, n): 1})
    b = l2_pair(z, z)
    ref = _quad_pair({(m, n): 1}, {(m, n): 1}, parity)
    assert b.contains(ref) or abs(b.center - ref) < 1e-12
    if (m, n) == (0, 2):
        assert b.contains(math.pi / 3) and b.radius < 1e-14


def test_l2_pair_against_quadrature():
    f = {(0, 0): 0.3, (1, 1): -0.7, (2, 4): 0.2, (3, 5): 0.1}
    g = {(0, 2): 1.1, (1, 3): 0.4, (2, 4): -0.5, (3, 3): 0.8}
    zf = Zernike.from_modes(RHO, EVEN, 6, f)
    zg = Zernike.from_modes(RHO, EVEN, 6, g)
    b = l2_pair(zf, zg)
    assert abs(b.center - _quad_pair(f, g, EVEN)) < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_l2_pair_with_error_slots_contains_members(seed):
    from .oracles import sample_member

    rng = np.random.default_rng(seed)
    S = 6
    zf = Zernike.from_modes(RHO, EVEN, S, {(0, 0): rng.normal(), (1, 3): rng.normal()})
    zg = Zernike.from_modes(RHO, EVEN, S, {(0, 2): rng.normal(), (1, 1): rng.normal()})
    zf = zf.widen_band(0, 0.05)
    zg.tail[1, 1] = 0.02
    b = l2_pair(zf, zg)
    yf, yg = sample_member(zf, rng), sample_member(zg, rng)
    assert b.contains(_quad_pair(yf, yg, EVEN)) or abs(b.center - _quad_pair(yf, yg, EVEN)) <= b.radius + 1e-11


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32))
def test_h1_pairing_identity(seed):
    """<(-Delta)^-1 W v, h>_{H^1} = <W v, h>_{L^2} for h = (-Delta)^-1 k."""
    rng = np.random.default_rng(seed)
    S = 10
    T = product_tensor(S)
    rand = lambda deg: Zernike.from_modes(
        RHO, EVEN, S, {(m, m + 2 * j): rng.normal() for m in range(deg + 1)
                       for j in range((deg - m) // 2 + 1)})
    W, v, k = rand(2), rand(3), rand(4)
    Wv = multiply(W, v, T)
    lhs = l2_pair(inv_neg_lap(Wv), k)  # H^1 pairing realised through the preimage k
    rhs = l2_pair(Wv, inv_neg_lap(k))
    assert abs(lhs.center - rhs.center) <= lhs.radius + rhs.radius + 1e-12


def test_eigendata_roundtrip(tmp_path):
    g = Zernike.from_modes(RHO, ODD, 8, {(1, 1): 0.5, (3, 5): -0.25})
    e = EigenData(ODD, [Ball(1.0, 1e-9), 0.5], [g, scale(Ball(2.0), g)])
    e.save(tmp_path / "eig")
    back = EigenData.load(tmp_path / "eig")
    assert back.parity == ODD and len(back) == 2
    assert back.values[0].center == 1.0 and back.values[0].radius == 1e-9
    assert all(a == b for a, b in zip(back.preimages, e.preimages))
    with pytest.raises(ValueError):
        EigenData(EVEN, [1.0], [g])
    with pytest.raises(ValueError):
        EigenData(ODD, [1.0], [Zernike.from_modes(RHO, ODD, 8, {(1, 7): 1})])


def test_at_most_n_zero_weight():
    S = 10
    w0 = gmap.Weight(Zernike.zero(RHO, EVEN, S))
    u = Zernike.from_modes(RHO, EVEN, S, {(0, 0): 1.0})
    assert at_most_n(w0, u, EigenData(EVEN, [], []), 0.5, product_tensor(S))
    with pytest.raises(ValueError):
        at_most_n(w0, u, EigenData(EVEN, [], []), 1.0)


def test_morse_zero_solution():
    S = 10
    T = product_tensor(S)
    w = gmap.weight_radial_power(2, RHO, S)
    z = Zernike.zero(RHO, EVEN, S)
    c = morse_index(w, z, EigenData(EVEN, [], []), EigenData(ODD, [], []), 0.5, 3.0, T,
                    nonzero=False)
    assert c.index == 0
    assert morse_index(w, z, EigenData(EVEN, [], []), None, 0.5, 3.0, T, nonzero=False).index is None


# -- checks against an approximate solution (not certified) ----------------------------------

SIZE = 30


@pytest.fixture(scope="module")
def solved():
    w = gmap.weight_radial_power(2, RHO, SIZE)
    s = approx.find_fix(w, approx.SeedSpec(), SIZE + 1, 1e-13)
    ee = approx.find_eigen(w, s, EVEN, 2, size=SIZE)
    return w, s.to_zernike(RHO, SIZE), ee, product_tensor(SIZE)


def test_rayleigh_quotient_is_three(solved):
    w, u, _, T = solved
    b = rayleigh_fixed_point(w, u, T)
    assert abs(b.center - 3) < 1e-3 and b.radius < 1e-3


def test_at_least_m_top_vector(solved):
    w, u, ee, T = solved
    d: dict = {}
    assert at_least_m(w, u, ee.subset(1), 2.9, T, details=d)
    # the Rayleigh quotient sits at the eigenvalue 3 itself
    assert abs(d["gershgorin"] - 3) < 1e-6 and d["floor"] > 1
    with pytest.raises(ValueError):
        at_least_m(w, u, ee.subset(1), 1.0, T)


def test_at_least_m_fails_off_the_top(solved):
    w, u, _, T = solved
    g = Zernike.from_modes(RHO, EVEN, SIZE, {(7, 27): 1.0})
    assert at_least_m(w, u, EigenData(EVEN, [Ball(3.0)], [g]), 3.0, T) is False


def test_rank_operator_is_self_adjoint(solved):
    from zernprove.spectral import _rank_operator

    _, _, ee, _ = solved
    vecs = ee.vectors()
    K = _rank_operator(ee, vecs)
    Kv = [K(v) for v in vecs]
    n = len(vecs)
    for i in range(n):
        for j in range(n):
            a = l2_pair(ee.preimages[i], Kv[j])
            b = l2_pair(ee.preimages[j], Kv[i])
            assert abs(a.center - b.center) <= a.radius + b.radius + 1e-12

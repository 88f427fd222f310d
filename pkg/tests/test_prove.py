from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zernprove import gmap, prove
from zernprove.ball import Ball
from zernprove.prove import (
    EPS_FLOOR,
    NewtonOperator,
    ProofCertificate,
    ProofFailure,
    check_I_minus_M_invertible,
    contr_fix,
    d_of_k,
    dn_norm_bound,
    epsilon_bound,
    has_symm_check,
    min_symm_check,
    n_map,
)
from zernprove.zernike import EVEN, Zernike, norm_upper, product_tensor

RHO = Fraction(65, 64)
SIZE = 10


@pytest.fixture(scope="module")
def T():
    return product_tensor(SIZE)


@pytest.fixture(scope="module")
def w2():
    return gmap.weight_radial_power(2, RHO, SIZE)


def zero_u():
    return Zernike.zero(RHO, EVEN, SIZE)


def test_newton_operator_roundtrip(tmp_path):
    M0 = NewtonOperator.zero(SIZE + 1)
    rng = np.random.default_rng(0)
    M = NewtonOperator(SIZE + 1, rng.standard_normal((M0.dim, M0.dim)),
                       np.abs(rng.standard_normal((M0.dim, M0.dim))) * 1e-9)
    M.save(tmp_path / "M.npz")
    back = NewtonOperator.load(tmp_path / "M.npz")
    assert back.n_trunc == M.n_trunc and back.parity == M.parity
    assert np.array_equal(back.center, M.center) and np.array_equal(back.radius, M.radius)
    with pytest.raises(ValueError):
        NewtonOperator(3, [[np.nan]])
    with pytest.raises(ValueError):
        NewtonOperator(1, [[0.0]], [[-1.0]])


def test_newton_operator_apply_is_zero_outside_range():
    M0 = NewtonOperator.zero(4)
    M = NewtonOperator(4, np.eye(M0.dim))
    h = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 1.0, (0, 6): 2.0, (5, 5): 3.0})
    out = M.apply(h)
    assert out.coefficient(0, 0).contains(1) and out.center[0, 3] == 0 and out.center[5, 0] == 0


def test_n_map_examples(T, w2):
    M = NewtonOperator.zero(SIZE + 1)
    z = zero_u()
    assert norm_upper(n_map(w2, z, M, z, T)) == 0
    u = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 0.5, (1, 1): 0.25})
    res = n_map(w2, u, M, z, T)
    want = gmap.g_apply(w2, u, T)
    assert np.allclose(res.center + u.center, want.center, atol=1e-15)


def test_epsilon_examples(T, w2):
    M = NewtonOperator.zero(SIZE + 1)
    assert epsilon_bound(w2, zero_u(), M, T) == 0
    # the constant 1 solves -Delta u = 0 only for w = 0: G(1) = 0, residual |1|
    w0 = gmap.Weight(zero_u())
    one = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 1})
    assert abs(epsilon_bound(w0, one, M, T) - 1) < 1e-12


def test_dn_norm_examples(T, w2):
    M = NewtonOperator.zero(SIZE + 1)
    w0 = gmap.Weight(zero_u())
    u = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 0.5})
    assert dn_norm_bound(w0, u, M, 1e-3, T) == 0
    # ubar = 0: DG at radius d is O(d^2)
    k1 = dn_norm_bound(w2, zero_u(), M, 1e-2, T)
    k2 = dn_norm_bound(w2, zero_u(), M, 1e-3, T)
    assert 0 < k2 < k1 and k1 < 1e-2
    assert k2 < k1 / 50
    with pytest.raises(ValueError):
        dn_norm_bound(w2, zero_u(), M, 0.0, T)


def test_contr_fix_zero_solution(T, w2):
    cert = contr_fix(w2, zero_u(), NewtonOperator.zero(SIZE + 1), T)
    assert cert.epsilon == 0 and cert.delta > 0 and cert.K <= 0.75
    assert cert.A_norm_delta >= cert.delta
    text = cert.to_text({"config.size": SIZE})
    assert text.startswith("certificate v1\nstatus = certified\n")
    assert "config.size = 10" in text
    line = next(l for l in text.splitlines() if l.startswith("delta = "))
    assert float.fromhex(line.split()[2]) == cert.delta


def test_contr_fix_planted_eigenvalue_one(T, w2):
    M0 = NewtonOperator.zero(SIZE + 1)
    C = np.zeros((M0.dim, M0.dim))
    C[0, 0] = 1.0
    with pytest.raises(ProofFailure) as exc:
        contr_fix(w2, zero_u(), NewtonOperator(SIZE + 1, C), T)
    assert exc.value.check == "I - M invertible"


def test_contr_fix_reports_large_K(T):
    # w = 1 and ubar = 3 (far from a fixed point): the K check fails
    w = gmap.weight_radial_power(0, RHO, SIZE)
    u = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 3})
    with pytest.raises(ProofFailure) as exc:
        contr_fix(w, u, NewtonOperator.zero(SIZE + 1), T)
    assert exc.value.check == "K <= 3/4" and "exceeds" in exc.value.detail


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-300, 1e-3), st.floats(0, 0.9), st.floats(1, 1e3), st.floats(0, 0.5))
def test_protocol_is_monotone(eps, K, f_eps, dK):
    """Inflating eps or K never turns a failure into a success."""
    def run(e, k):
        try:
            d = d_of_k(e, k)
        except ValueError:
            return False
        return k <= 0.75 and d <= d_of_k(e, 0.75) and (Ball(e) + Ball(k) * Ball(d)).upper() < d

    if not run(eps, K):
        assert not run(eps * f_eps, K)
        assert not run(eps, K + dK)


def test_protocol_monotone_through_contr_fix(T, w2, monkeypatch):
    base = {"eps": 0.0, "K": 0.0}
    monkeypatch.setattr(prove, "epsilon_bound", lambda *a, **k: base["eps"])
    monkeypatch.setattr(prove, "dn_norm_bound", lambda *a, **k: base["K"])
    M = NewtonOperator.zero(SIZE + 1)

    def ok(e, k):
        base.update(eps=e, K=k)
        try:
            contr_fix(w2, zero_u(), M, T)
            return True
        except ProofFailure:
            return False

    grid = [0.0, 0.3, 0.74, 0.75, 0.76, 0.99]
    for e in (0.0, 1e-12, 1e-3):
        res = [ok(e, k) for k in grid]
        assert res == sorted(res, reverse=True)
    assert ok(1e-3, 0.5) and not ok(1e-3, 0.76)


def test_d_is_increasing_and_dominates():
    eps = 3.7e-9
    ks = [Fraction(i, 132) for i in range(100)]
    ds = [d_of_k(eps, float(k)) for k in ks]
    assert all(a < b for a, b in zip(ds, ds[1:]))
    for k, d in zip(ks, ds):
        assert Fraction(d) > Fraction(eps) / (1 - Fraction(float(k)))
    assert d_of_k(0.0, 0.5) >= 2 * EPS_FLOOR
    with pytest.raises(ValueError):
        d_of_k(eps, 1.0)


def test_certificate_rejects_bad_values():
    with pytest.raises(ValueError):
        ProofCertificate(1e-3, 0.8, 1.0, 2.0, True)
    with pytest.raises(ValueError):
        ProofCertificate(1.0, 0.5, 1.0, 2.0, True)
    with pytest.raises(ValueError):
        ProofCertificate(1e-3, 0.5, 1.0, 2.0, False)


def test_invertibility_examples():
    M0 = NewtonOperator.zero(SIZE + 1)
    k = M0.dim
    assert check_I_minus_M_invertible(M0)
    one = np.zeros((k, k))
    one[3, 3] = 1.0
    assert not check_I_minus_M_invertible(NewtonOperator(SIZE + 1, one))
    det: dict = {}
    assert check_I_minus_M_invertible(NewtonOperator(SIZE + 1, 0.5 * np.eye(k)), details=det)
    # B (I - M) = I holds exactly; the bound is the rounding allowance of the product
    # allowance: about gamma_k |B| |I - M| = k u for k modes
    assert det["residual_center_max"] == 0 and det["residual_norm"] <= 2 * k * 2.0 ** -53


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(-1e-12, 1e-12))
def test_invertibility_fails_near_eigenvalue_one(seed, off):
    rng = np.random.default_rng(seed)
    k = NewtonOperator.zero(6).dim
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = rng.uniform(-0.5, 0.5, k)
    ev[0] = 1.0 + off
    C = Q @ np.diag(ev) @ Q.T
    assert not check_I_minus_M_invertible(NewtonOperator(6, C))


def test_min_symm_examples(T):
    radial = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 1})
    assert min_symm_check(radial, T).kind == "inconclusive"
    u = Zernike.from_modes(RHO, EVEN, SIZE, {(0, 0): 1, (1, 1): 1})
    v = min_symm_check(u, T)
    assert v.kind == "no_nontrivial_rotation" and "m=1" in v.witness
    # a wide error ball hides the m = 1 coefficient
    assert min_symm_check(u.widen_band(0, 10.0), T).kind == "inconclusive"


def test_has_symm_examples():
    n = SIZE + 1
    M0 = NewtonOperator.zero(n)
    odd_bands = Zernike.from_modes(RHO, EVEN, SIZE, {(1, 1): 1, (3, 3): 0.5, (5, 7): 0.1})
    inside = (M0.m % 2) == 1
    C = np.outer(inside, inside) * 0.1
    v = has_symm_check(odd_bands, NewtonOperator(n, C), 1)
    assert v.kind == "invariant_under" and v.n == 1 and "sufficient" in v.witness
    with_m2 = Zernike.from_modes(RHO, EVEN, SIZE, {(1, 1): 1, (2, 2): 0.5})
    assert has_symm_check(with_m2, M0, 1).kind == "inconclusive"
    coupling = C.copy()
    coupling[np.argmax(~inside), np.argmax(inside)] = 1e-3
    assert has_symm_check(odd_bands, NewtonOperator(n, coupling), 1).kind == "inconclusive"
    for k in (1, 2, 5):
        assert has_symm_check(zero_u(), M0, k).kind == "invariant_under"
    with pytest.raises(ValueError):
        has_symm_check(zero_u(), M0, 0)

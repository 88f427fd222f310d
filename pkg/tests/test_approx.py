from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zernprove import approx, gmap
from zernprove.approx import DenseState, FloatModel, SeedSpec
from zernprove.zernike import EVEN, ODD, Zernike, evaluate, inv_neg_lap, product_tensor

RHO = Fraction(65, 64)
SIZE = 30


@pytest.fixture(scope="module")
def w2():
    return gmap.weight_radial_power(2, RHO, SIZE)


@pytest.fixture(scope="module")
def sol2(w2):
    return approx.find_fix(w2, SeedSpec(), SIZE + 1, 1e-13)


def test_seed_parse():
    s = SeedSpec.parse("symmetrized:n=2,center=0.6,width=0.2")
    assert s == SeedSpec("symmetrized", 1.0, 0.6, 0.2, 2)
    assert SeedSpec.parse("radial_bump").kind == "radial_bump"
    with pytest.raises(ValueError):
        SeedSpec.parse("bogus")
    with pytest.raises(ValueError):
        SeedSpec.parse("offcenter_bump:height=2")


@settings(max_examples=20)
@given(st.integers(1, 4), st.floats(0, 1), st.floats(0, 6.28))
def test_symmetrized_seed_is_invariant(n, r, t):
    s = SeedSpec("symmetrized", n=n)
    v = s.values(np.array(r), np.array(t))
    rot = -s.values(np.array(r), np.array(t + np.pi / n))
    assert abs(v - rot) < 1e-12


def test_quadrature_is_exact():
    M = FloatModel(12, [0.5, 0.5])
    rng = np.random.default_rng(0)
    for parity in (EVEN, ODD):
        vec = rng.standard_normal(len(M.modes(parity)[0]))
        assert np.allclose(M.analyze(M.synth(vec, parity), parity), vec, atol=1e-12)


def test_model_matches_rigorous_map(w2):
    M = FloatModel.for_weight(gmap.weight_radial_power(2, RHO, 10), 11)
    rng = np.random.default_rng(1)
    m, j = M.modes(EVEN)
    vec = rng.standard_normal(len(m)) * (m + 2 * j <= 3)
    u = DenseState(11, EVEN, vec).to_zernike(RHO, 10)
    g = gmap.g_apply(gmap.weight_radial_power(2, RHO, 10), u, product_tensor(10))
    # degree 3 cubed times r^2 has degree 11: one mode beyond the model
    got = M.G(vec)
    ref = g.center[m, j]
    assert np.abs(got - ref).max() <= g.error_total() + 1e-12


def test_state_roundtrip():
    rng = np.random.default_rng(2)
    L = FloatModel(8, [1.0])
    st_ = DenseState(9, EVEN, rng.standard_normal(len(L.modes(EVEN)[0])))
    z = st_.to_zernike(RHO, 12)
    back = DenseState.from_zernike(z, 9)
    assert np.array_equal(back.coefficients, st_.coefficients)
    with pytest.raises(ValueError):
        DenseState(9, EVEN, np.zeros(3))


def test_find_fix_nonradial(sol2, w2):
    assert sol2.residual <= 1e-10
    z = sol2.to_zernike(RHO, SIZE)
    assert np.abs(z.center[1:]).max() > 1e-2
    # the solution is positive inside and vanishes on the boundary
    r = np.linspace(0, 0.99, 12)
    vals = evaluate(z, r, np.zeros_like(r))
    assert (vals > 0).all()
    # boundary values come only from the truncation at the top degrees
    top = np.abs(z.center[z.layout.active & (z.layout.deg >= SIZE - 1)]).sum()
    assert abs(evaluate(z, np.array([1.0]), np.array([0.0]))[0]) < 10 * top


def test_find_fix_radial_seed():
    w1 = gmap.weight_radial_power(0, RHO, 16)
    s = approx.find_fix(w1, SeedSpec("radial_bump"), 17, 1e-12)
    z = s.to_zernike(RHO, 16)
    assert np.abs(z.center[1:]).max() < 1e-12 and s.residual <= 1e-12


def test_find_fix_zero_seed(w2):
    s = approx.find_fix(w2, SeedSpec(amplitude=0.0), SIZE + 1)
    assert not s.coefficients.any()
    w0 = gmap.Weight(Zernike.zero(RHO, EVEN, SIZE))
    assert not approx.find_fix(w0, SeedSpec(), SIZE + 1).coefficients.any()


def test_find_fix_symmetric():
    w = gmap.weight_radial_power(2, RHO, 20)
    s = approx.find_fix(w, SeedSpec("symmetrized", n=1), 21, 1e-12)
    mask = approx.sn_mask(20, 1)
    assert not s.coefficients[~mask].any() and s.coefficients[mask].any()


def test_newton_matrix_examples(w2):
    assert np.allclose(approx.newton_matrix(np.diag([0.5, 0.5])), -np.eye(2))
    w0 = gmap.Weight(Zernike.zero(RHO, EVEN, SIZE))
    zero = DenseState(SIZE + 1, EVEN, np.zeros(len(FloatModel(SIZE, [0]).modes(EVEN)[0])))
    M = approx.build_newton_operator(w0, zero)
    assert not M.center.any()
    with pytest.raises(ValueError):
        approx.newton_matrix(np.eye(2))


def test_newton_operator_inverts(sol2, w2):
    M = approx.build_newton_operator(w2, sol2)
    D = FloatModel.for_weight(w2, SIZE + 1).dg_matrix(sol2.coefficients, EVEN)
    I = np.eye(len(D))
    # (I - M)(I - D) = I
    assert np.abs((I - M.center) @ (I - D) - I).max() < 1e-9


def test_find_eigen(sol2, w2):
    ev = approx.find_eigen(w2, sol2, EVEN, 2, size=SIZE)
    assert abs(ev.values[0].center - 3) < 1e-8
    v = inv_neg_lap(ev.preimages[0]).center
    u = sol2.to_zernike(RHO, SIZE).center
    cos = (v * u).sum() / np.sqrt((v * v).sum() * (u * u).sum())
    assert abs(cos) > 1 - 1e-6
    od = approx.find_eigen(w2, sol2, ODD, 2, size=SIZE)
    assert abs(od.values[0].center - 1) < 1e-6
    # eigenvector of the odd eigenvalue 1 is d/dtheta u (cos m t -> -m sin m t)
    dtheta = np.zeros_like(u)
    dtheta[1:] = -np.arange(1, SIZE + 1)[:, None] * u[1:]
    v = inv_neg_lap(od.preimages[0]).center
    cos = (v * dtheta).sum() / np.sqrt((v * v).sum() * (dtheta * dtheta).sum())
    assert abs(cos) > 1 - 1e-4
    assert ev.values[1].center < 1 and od.values[1].center < 1


def test_find_eigen_zero_weight():
    w0 = gmap.Weight(Zernike.zero(RHO, EVEN, 12))
    s = DenseState(13, EVEN, np.ones(len(FloatModel(12, [0]).modes(EVEN)[0])))
    ev = approx.find_eigen(w0, s, EVEN, 3)
    assert all(abs(v.center) <= 1e-12 for v in ev.values)

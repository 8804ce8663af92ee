import math

import numpy as np
import pytest

from torusforge import errors
from torusforge.torus import (
    CAT_MAP,
    ToralAutomorphism,
    apply_automorphism,
    char_poly_exact,
    choose_stage_centers,
    det_exact,
    find_bv_matrix,
    fixed_points,
    minimal_lift,
    periodic_points,
    smith_normal_form,
    spectral_decomposition,
    torus_distance,
    wrap,
)

# frozen seed matrix: first hit of the deterministic search
BV_MATRIX = np.array(
    [
        [0, 0, -1, -7],
        [0, 0, 7, 48],
        [1, 0, -13, -84],
        [0, 1, 7, 36],
    ],
    dtype=np.int64,
)


def test_distance_pins():
    # wrap-around on the circle direction
    assert torus_distance([0.9, 0.0], [0.1, 0.0]) == pytest.approx(0.2, abs=1e-12)
    # opposite quarter points in T^4 realize distance 1
    a = np.full(4, 0.75)
    b = np.full(4, 0.25)
    assert torus_distance(a, b) == pytest.approx(1.0, abs=1e-12)


def test_distance_properties():
    rng = np.random.default_rng(7)
    for d in (2, 4):
        x = rng.random((64, d))
        y = rng.random((64, d))
        z = rng.random((64, d))
        dxy = torus_distance(x, y)
        assert np.allclose(dxy, torus_distance(y, x))
        # diameter of the flat torus
        assert np.all(dxy <= math.sqrt(d) / 2 + 1e-12)
        assert np.all(dxy <= torus_distance(x, z) + torus_distance(z, y) + 1e-12)
        shift = rng.integers(-3, 4, size=(64, d))
        assert np.allclose(torus_distance(x + shift, y), dxy)


def test_wrap_and_lift():
    assert np.allclose(wrap([1.25, -0.25]), [0.25, 0.75])
    assert np.allclose(minimal_lift([0.75, -0.6, 0.2]), [-0.25, 0.4, 0.2])


def test_apply_automorphism_wraps():
    out = apply_automorphism(CAT_MAP, [0.9, 0.9])
    assert np.allclose(out, [0.7, 0.8])
    # homomorphism: integer shifts are invisible
    rng = np.random.default_rng(3)
    x = rng.random((32, 2))
    m = rng.integers(-2, 3, size=(32, 2))
    assert np.allclose(apply_automorphism(CAT_MAP, x + m), apply_automorphism(CAT_MAP, x))


def test_inverse_roundtrip():
    aut = ToralAutomorphism.from_matrix(BV_MATRIX)
    rng = np.random.default_rng(5)
    x = rng.random((50, 4))
    y = apply_automorphism(aut, x)
    back = apply_automorphism(aut, y, inverse=True)
    assert np.max(torus_distance(back, x)) < 1e-12


def test_det_exact_and_char_poly():
    assert det_exact([[2, 1], [1, 1]]) == 1
    assert det_exact([[1, 2], [2, 4]]) == 0
    # char poly of the cat map: t^2 - 3t + 1
    assert char_poly_exact([[2, 1], [1, 1]]) == [1, -3, 1]
    # squared spectrum of t^4 - 7t^3 + 13t^2 - 7t + 1: e1 = 49 - 26, e2 = 169 - 98 + 2
    assert char_poly_exact([list(r) for r in BV_MATRIX]) == [1, -23, 73, -23, 1]


def test_smith_normal_form_exact():
    rng = np.random.default_rng(11)
    for _ in range(20):
        M = [[int(v) for v in row] for row in rng.integers(-9, 10, size=(4, 4))]
        U, D, V = smith_normal_form(M)
        UM = np.array(U, dtype=object) @ np.array(M, dtype=object)
        UMV = UM @ np.array(V, dtype=object)
        assert np.all(UMV == np.array(D, dtype=object))
        assert abs(det_exact(U)) == 1 and abs(det_exact(V)) == 1
        diag = [D[i][i] for i in range(4)]
        for a, b in zip(diag, diag[1:]):
            if a != 0 and b != 0:
                assert b % a == 0


def test_cat_spectrum_analytic():
    spec = spectral_decomposition(CAT_MAP)
    golden = (3 + math.sqrt(5)) / 2
    assert spec.eigenvalues[1] == pytest.approx(golden, abs=1e-12)
    assert spec.eigenvalues[0] == pytest.approx(1 / golden, abs=1e-12)
    assert spec.entropy == pytest.approx(math.log(golden), abs=1e-12)
    assert spec.stable == (0,) and spec.unstable == (1,)
    # eigenvectors: unit, oriented, diagonalizing
    P = spec.basis
    assert np.allclose(np.linalg.norm(P, axis=0), 1.0)
    D = spec.basis_inv @ CAT_MAP @ P
    assert np.allclose(D, np.diag(spec.eigenvalues), atol=1e-12)
    # symmetric matrix: orthogonal eigenbasis
    assert spec.cond == pytest.approx(1.0, abs=1e-10)


def test_bv_spectrum_frozen():
    spec = spectral_decomposition(BV_MATRIX)
    lam = spec.eigenvalues
    assert lam == pytest.approx(
        [0.05188241, 0.29605920, 3.37770288, 19.27435551], abs=2e-8
    )
    # reciprocal pairs by construction
    assert lam[0] * lam[3] == pytest.approx(1.0, abs=1e-10)
    assert lam[1] * lam[2] == pytest.approx(1.0, abs=1e-10)
    assert spec.entropy == pytest.approx(4.175971340360636, abs=1e-9)
    assert spec.lambda0 == pytest.approx(lam[2], abs=1e-12)
    assert spec.mu0 == pytest.approx(lam[1], abs=1e-12)
    assert spec.lambda1 == pytest.approx(lam[2], abs=1e-9)
    D = spec.basis_inv @ BV_MATRIX.astype(float) @ spec.basis
    assert np.allclose(D, np.diag(lam), atol=1e-8)
    # this eigenbasis is badly conditioned, the code must not assume better
    assert 20 < spec.cond < 30


def test_not_hyperbolic_rejected():
    with pytest.raises(errors.NotHyperbolic):
        spectral_decomposition(np.array([[0, -1], [1, 0]]))


def test_repeated_spectrum_rejected():
    M = np.zeros((4, 4), dtype=np.int64)
    M[:2, :2] = CAT_MAP
    M[2:, 2:] = CAT_MAP
    with pytest.raises(errors.UnsupportedSpectrum):
        spectral_decomposition(M)


def test_periodic_counts_cat():
    assert periodic_points(CAT_MAP, 1).count == 1
    data = periodic_points(CAT_MAP, 3)
    assert data.count == 16
    assert data.points.shape == (16, 2)
    A3 = np.linalg.matrix_power(CAT_MAP, 3).astype(float)
    img = wrap(data.points @ A3.T)
    assert np.max(torus_distance(img, data.points)) < 1e-9
    # distinct as residues
    keys = {tuple(np.round(p * 16).astype(int) % 16) for p in data.points}
    assert len(keys) == 16


def test_degenerate_period_rejected():
    with pytest.raises(errors.DegeneratePeriod):
        periodic_points(np.array([[1, 1], [0, 1]]), 1)


def test_bv_fixed_points():
    data = fixed_points(BV_MATRIX)
    assert data.count == 29
    assert data.points.shape == (29, 4)
    img = apply_automorphism(BV_MATRIX, data.points)
    assert np.max(torus_distance(img, data.points)) < 1e-9
    keys = {tuple(np.round(p * 29).astype(int) % 29) for p in data.points}
    assert len(keys) == 29


def test_periodic_subsampling_deterministic():
    a = periodic_points(BV_MATRIX, 3, max_points=50)
    b = periodic_points(BV_MATRIX, 3, max_points=50)
    assert a.subsampled
    assert a.count == b.count
    assert np.array_equal(a.points, b.points)
    assert len(a.points) <= 2 * 50
    img = apply_automorphism(np.linalg.matrix_power(BV_MATRIX, 3), a.points)
    assert np.max(torus_distance(img, a.points)) < 1e-6


def test_find_bv_matrix_frozen():
    aut = find_bv_matrix()
    assert np.array_equal(aut.matrix, BV_MATRIX)
    spec = spectral_decomposition(aut)
    assert spec.eigenvalues[1] < 1 / 3
    assert spec.eigenvalues[2] > 3


def test_choose_stage_centers_frozen():
    centers, score = choose_stage_centers(BV_MATRIX, count=3)
    expected = np.array([[2, 13, 13, 2], [14, 4, 4, 14], [16, 17, 17, 16]]) / 29.0
    got = {tuple(np.round(c * 29).astype(int)) for c in centers}
    want = {tuple(np.round(c * 29).astype(int)) for c in expected}
    assert got == want
    assert score == pytest.approx(0.6414, abs=2e-4)
    img = apply_automorphism(BV_MATRIX, centers)
    assert np.max(torus_distance(img, centers)) < 1e-9

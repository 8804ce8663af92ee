"""Leaf-disk construction: transforms, convergence, uniqueness, products."""

import numpy as np
import pytest

from torusforge.errors import (
    ConvergenceFailure,
    GraphFoldDetected,
    NotApplicable,
)
from torusforge.leaves import (
    cauchy_ratios,
    check_equivariance,
    check_leaf_uniqueness,
    compute_cs_disk,
    compute_cu_disk,
    flat_disk,
    graph_transform_step,
)
from torusforge.shadow import product_intersection
from torusforge.torus import spectral_decomposition, wrap

# weak-stable over weak-unstable rate for the reference matrix; a tilted
# seed must contract by exactly this factor per linear transform step
CONTRACTION = 0.2960591960668263 / 3.3777028826839097

X0 = np.array([0.41, 0.13, 0.87, 0.29])


def _weak_axes(spectral):
    uns, sta = list(spectral.unstable), list(spectral.stable)
    iw_u = int(np.argmin(spectral.eigenvalues[uns]))
    iw_s = int(np.argmax(spectral.eigenvalues[sta]))
    return iw_u, iw_s


def _tilt(spectral, slope):
    iw_u, iw_s = _weak_axes(spectral)

    def seed(mesh):
        h = np.zeros(mesh.shape)
        h[..., iw_s] = slope * mesh[..., iw_u]
        return h

    return seed


@pytest.fixture(scope="module")
def bv_disk(bv_map, ledger):
    return compute_cu_disk(
        bv_map, X0, iterations=16, resolution=33,
        rho=ledger.rho, alpha=ledger.alpha, lam=ledger.lam,
    )


def test_flat_disk_rejects_bad_seeds(aut, ledger):
    with pytest.raises(ValueError):
        flat_disk(
            aut, X0, "cu", ledger.rho, ledger.alpha,
            seed=lambda mesh: 5.0 * mesh,
        )
    with pytest.raises(ValueError):
        flat_disk(
            aut, X0, "cu", ledger.rho, ledger.alpha,
            seed=lambda mesh: np.ones(mesh.shape) * 1e-4,
        )
    with pytest.raises(ValueError):
        flat_disk(aut, X0, "bogus", ledger.rho, ledger.alpha)


def test_linear_step_keeps_flat_disks_flat(aut, ledger):
    for kind in ("cu", "cs"):
        disk = flat_disk(aut, X0, kind, ledger.rho, ledger.alpha, resolution=17)
        out = graph_transform_step(aut, disk)
        assert np.abs(out.heights).max() < 1e-13
        assert out.lipschitz_bound < 1e-11
        assert out.pullback_margin > 0.0
        step = aut.matrix if kind == "cu" else aut.inverse
        expected = wrap(X0 @ step.T.astype(float))
        assert np.abs(out.base - expected).max() < 1e-12


def test_linear_step_contracts_slopes_exactly(aut, spectral, ledger):
    c = 0.6 * ledger.alpha
    disk = flat_disk(
        aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17,
        seed=_tilt(spectral, c),
    )
    assert abs(disk.lipschitz_bound - c) < 1e-12
    out = graph_transform_step(aut, disk)
    # the graph re-solve stops at its 1e-12 residual, which feeds the
    # node heights at the same scale; slope ratio is exact past that
    assert out.lipschitz_bound == pytest.approx(c * CONTRACTION, rel=1e-7)


def test_linear_cu_disk_flat_at_every_depth(aut, ledger):
    for n in (1, 3, 6):
        disk = compute_cu_disk(
            aut, X0, iterations=n, resolution=17,
            rho=ledger.rho, alpha=ledger.alpha, check_cauchy=False,
        )
        assert np.abs(disk.heights).max() < 1e-12
        assert disk.lipschitz_bound <= ledger.alpha


def test_linear_cs_disk_flat(aut, ledger):
    disk = compute_cs_disk(
        aut, X0, iterations=5, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha, check_cauchy=False,
    )
    assert np.abs(disk.heights).max() < 1e-12


def test_disk_chart_round_trip(aut, spectral, ledger):
    disk = flat_disk(
        aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17,
        seed=_tilt(spectral, 0.01),
    )
    uv = np.array([0.011, -0.027])
    xi = (disk.point(uv) - disk.base) @ spectral.basis_inv.T
    assert np.abs(xi[list(disk.graph_axes)] - uv).max() < 1e-14
    assert np.abs(xi[list(disk.height_axes)] - disk.height_at(uv)).max() < 1e-14


def test_bv_disk_tangent_inside_cone(bv_disk, ledger):
    assert bv_disk.lipschitz_bound <= ledger.alpha
    assert bv_disk.pullback_margin > 0.0
    # deformation displacement scale bounds the heights from above
    assert np.abs(bv_disk.heights).max() < 1e-6
    ctr = bv_disk.resolution // 2
    assert np.abs(bv_disk.heights[ctr, ctr]).max() < 1e-12


def test_bv_disk_history_settles(bv_disk):
    assert len(bv_disk.history) == 16
    assert bv_disk.history[-1] < 1e-9


def test_bv_cauchy_contraction_from_tilted_seed(bv_map, spectral, ledger):
    disk = compute_cu_disk(
        bv_map, X0, iterations=14, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha, lam=ledger.lam,
        seed=_tilt(spectral, 0.8 * ledger.alpha),
    )
    ratios = cauchy_ratios(disk.history)
    assert len(ratios) >= 3
    bound = 1.0 / ledger.lam + 0.1
    assert max(ratios) <= bound
    # geometric envelope: every pre-floor difference under c / lam^k
    c = disk.history[0] * ledger.lam
    for k, diff in enumerate(disk.history):
        if diff > 1e-11:
            assert diff <= c * ledger.lam ** (-k)


def test_bv_seed_independence_deep(bv_map, spectral, ledger):
    kw = dict(iterations=40, resolution=17, rho=ledger.rho,
              alpha=ledger.alpha, check_cauchy=False)
    a = compute_cu_disk(bv_map, X0, **kw)
    b = compute_cu_disk(bv_map, X0, seed=_tilt(spectral, 0.8 * ledger.alpha), **kw)
    assert np.abs(a.heights - b.heights).max() < 1e-6


def test_bv_nonshrinking_margin(bv_map, ledger):
    # formal inequality behind the non-shrinking claim, from the ledger
    assert ledger.lam * ledger.rho - 4.0 * ledger.epsilon > ledger.rho
    disk = flat_disk(bv_map.aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17)
    for _ in range(6):
        disk = graph_transform_step(bv_map, disk)
        assert disk.pullback_margin > 0.0


def test_bv_cs_disk_slopes(bv_map, ledger):
    disk = compute_cs_disk(
        bv_map, X0, iterations=12, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha, lam=ledger.lam,
    )
    assert disk.lipschitz_bound <= ledger.alpha
    assert np.abs(disk.heights).max() < 1e-6


def test_rotated_cone_raises_fold(aut, spectral, ledger):
    # rotate the weak-unstable eigendirection toward the weak-stable one:
    # the image of a tilted graph leaves the aperture-alpha cone
    uns, sta = list(spectral.unstable), list(spectral.stable)
    iw_u, iw_s = _weak_axes(spectral)
    theta = 0.35
    T = np.eye(4)
    a, b = uns[iw_u], sta[iw_s]
    T[a, a] = np.cos(theta)
    T[a, b] = -np.sin(theta)
    T[b, a] = np.sin(theta)
    T[b, b] = np.cos(theta)
    M = spectral.basis @ (T @ np.diag(spectral.eigenvalues)) @ spectral.basis_inv
    duck = _DuckMap(M, aut)
    disk = flat_disk(
        aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17,
        seed=_tilt(spectral, 0.8 * ledger.alpha),
    )
    with pytest.raises(GraphFoldDetected):
        graph_transform_step(duck, disk)


def test_weak_contraction_rate_failure(aut, spectral, ledger):
    # same eigenvectors, weak rates 2 and 0.5: tilt contracts at 1/4 per
    # step, slower than the claimed 1/20 + 0.1
    uns, sta = list(spectral.unstable), list(spectral.stable)
    iw_u, iw_s = _weak_axes(spectral)
    ev = np.array([19.0, 0.02, 2.0, 0.5])
    diag = np.empty(4)
    diag[uns[1 - iw_u]] = ev[0]
    diag[sta[1 - iw_s]] = ev[1]
    diag[uns[iw_u]] = ev[2]
    diag[sta[iw_s]] = ev[3]
    M = spectral.basis @ np.diag(diag) @ spectral.basis_inv
    duck = _DuckMap(M, aut)
    with pytest.raises(ConvergenceFailure):
        compute_cu_disk(
            duck, X0, iterations=12, resolution=9,
            rho=ledger.rho, alpha=ledger.alpha, lam=20.0,
            seed=_tilt(spectral, 0.8 * ledger.alpha),
        )


class _DuckMap:
    """Affine model fixing X0, linearized by M around it.

    A non-integer matrix does not descend to the torus, so the map is
    defined on the half-cell around its fixed point; every disk in these
    tests stays well inside that chart.
    """

    def __init__(self, M, aut):
        self.M = M
        self.Mi = np.linalg.inv(M)
        self.aut = aut

    def forward(self, x):
        from torusforge.torus import minimal_lift
        return wrap(X0 + minimal_lift(np.asarray(x, dtype=float) - X0) @ self.M.T)

    def inverse(self, x):
        from torusforge.torus import minimal_lift
        return wrap(X0 + minimal_lift(np.asarray(x, dtype=float) - X0) @ self.Mi.T)


def test_uniqueness_same_base(bv_disk, bv_map, ledger):
    other = compute_cu_disk(
        bv_map, X0, iterations=16, resolution=33,
        rho=ledger.rho, alpha=ledger.alpha, check_cauchy=False,
    )
    report = check_leaf_uniqueness(bv_disk, other)
    assert report.passed
    assert report.mismatch < 1e-12
    assert report.n_overlap > 0


def test_uniqueness_linear_same_leaf_exact(aut, spectral, ledger):
    a = flat_disk(aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17)
    shift = 0.013 * spectral.basis[:, list(spectral.unstable)[0]]
    b = flat_disk(aut, wrap(X0 + shift), "cu", ledger.rho, ledger.alpha, resolution=17)
    report = check_leaf_uniqueness(a, b)
    assert report.passed
    # affine leaves: only frame round-off survives
    assert report.mismatch < 1e-14


def test_uniqueness_bv_overlapping_disks(bv_disk, bv_map, ledger):
    y = wrap(bv_disk.point(np.array([0.012, -0.009])))
    other = compute_cu_disk(
        bv_map, y, iterations=16, resolution=33,
        rho=ledger.rho, alpha=ledger.alpha, check_cauchy=False,
    )
    report = check_leaf_uniqueness(bv_disk, other)
    assert report.passed
    assert report.mismatch < 1e-6
    assert report.n_overlap > 100


def test_uniqueness_parallel_leaves_fail(aut, spectral, ledger):
    a = flat_disk(aut, X0, "cu", ledger.rho, ledger.alpha, resolution=17)
    shift = 0.02 * spectral.basis[:, list(spectral.stable)[1]]
    b = flat_disk(aut, wrap(X0 + shift), "cu", ledger.rho, ledger.alpha, resolution=17)
    report = check_leaf_uniqueness(a, b)
    assert not report.passed
    assert report.mismatch > 1e-3


def test_uniqueness_disjoint_domains(aut, ledger):
    a = flat_disk(aut, X0, "cu", ledger.rho, ledger.alpha, resolution=9)
    b = flat_disk(aut, wrap(X0 + 0.4), "cu", ledger.rho, ledger.alpha, resolution=9)
    with pytest.raises(NotApplicable):
        check_leaf_uniqueness(a, b)


def test_uniqueness_kind_mismatch(aut, ledger):
    a = flat_disk(aut, X0, "cu", ledger.rho, ledger.alpha, resolution=9)
    b = flat_disk(aut, X0, "cs", ledger.rho, ledger.alpha, resolution=9)
    with pytest.raises(ValueError):
        check_leaf_uniqueness(a, b)


def test_equivariance_linear(aut, ledger):
    report = check_equivariance(
        aut, X0, iterations=4, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha,
    )
    assert report.passed
    assert report.mismatch < 1e-12


def test_equivariance_bv_both_kinds(bv_map, ledger):
    cu = check_equivariance(
        bv_map, X0, kind="cu", iterations=10, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha,
    )
    assert cu.passed and cu.mismatch < 1e-5
    cs = check_equivariance(
        bv_map, X0, kind="cs", iterations=10, resolution=17,
        rho=ledger.rho, alpha=ledger.alpha, tol=1e-6,
    )
    assert cs.passed and cs.mismatch < 1e-6


def test_equivariance_mismatch_shrinks_with_depth(bv_map, spectral, ledger):
    # an unconverged disk (tilted seed, shallow) shows a real mismatch;
    # ten more transform steps must collapse it
    seed = _tilt(spectral, 0.8 * ledger.alpha)
    kw = dict(kind="cu", resolution=17, rho=ledger.rho, alpha=ledger.alpha, seed=seed)
    shallow = check_equivariance(bv_map, X0, iterations=1, **kw)
    deep = check_equivariance(bv_map, X0, iterations=11, **kw)
    assert shallow.mismatch > 1e-7
    assert deep.mismatch < 1e-3 * shallow.mismatch


def test_local_product_structure(bv_map, ledger, spectral):
    # leaf through x meets leaf through a nearby y at a point z with
    # d(x, z) bounded by k_prod d(x, y): the product structure constant
    rng = np.random.default_rng(11)
    kw = dict(iterations=8, resolution=13, rho=ledger.rho,
              alpha=ledger.alpha, check_cauchy=False)
    worst = 0.0
    for _ in range(20):
        x = rng.random(4)
        direction = rng.normal(size=4)
        direction /= np.linalg.norm(direction)
        r = ledger.rho / (2.0 * ledger.k_prod) * rng.uniform(0.2, 1.0)
        y = wrap(x + r * direction)
        disk_cs = compute_cs_disk(bv_map, x, **kw)
        disk_cu = compute_cu_disk(bv_map, y, **kw)
        hit = product_intersection(disk_cs, disk_cu, ledger.tau2)
        assert hit.residual < 1e-8
        dxz = np.linalg.norm(
            np.asarray(hit.point) - x - np.round(np.asarray(hit.point) - x)
        )
        worst = max(worst, dxz / r)
    assert worst <= ledger.k_prod


def test_cone_chord_constant_in_ledger(ledger):
    expected = np.sqrt(1.0 + ledger.alpha**2) / (1.0 - ledger.alpha)
    assert ledger.k_cone == pytest.approx(expected, rel=1e-12)
    assert 1.0 < ledger.k_cone < ledger.k_prod

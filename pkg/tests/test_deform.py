"""Deformation stages, conjugation patches, and the two-site construction.

The stage analytics have closed forms on the cutoff plateau (exact linear
flows, known weak multiplier, disc collision angle), so most checks compare
the numerical construction against those, not against stored runs.
"""

import copy
import math

import numpy as np
import pytest

from torusforge.deform import (
    ChartFrame,
    LocalDeformation,
    apply_linear_conjugation,
    build_bv_map,
    build_pitchfork_stage,
    build_tangency_stage,
    check_sparse_deformation,
    flow,
    flow_derivative,
    linear_deformed_map,
    map_from_descriptor,
)
from torusforge.errors import TooManyComponents, UnsupportedSpectrum
from torusforge.fields import CutoffFunction, PlanarVectorField
from torusforge.torus import (
    apply_automorphism,
    as_automorphism,
    find_bv_matrix,
    spectral_decomposition,
    torus_distance,
)

GAMMA = 0.0314
LEDGER = dict(epsilon=0.002, gamma=GAMMA, alpha=0.02, n_components=3)


# ---------------------------------------------------------------------------
# flow kernel against plateau closed forms


def plateau_chart(center, scale=0.02):
    sp = spectral_decomposition(find_bv_matrix())
    return ChartFrame(
        center=np.asarray(center, dtype=float),
        basis=sp.basis,
        planar_scale=scale,
        vertical_scale=scale,
        axes=(0, 1, 2, 3),
    )


def test_saddle_flow_plateau_exact():
    # inside r_in the cutoff is identically 1 and the flow is linear
    chart = plateau_chart([0.3, 0.1, 0.7, 0.2])
    field = PlanarVectorField(kind="Saddle", rate=0.8, cutoff=CutoffFunction(r_in=0.6, r_out=0.95))
    stage = LocalDeformation(chart=chart, field=field, time=0.5,
                             vertical_cutoff=CutoffFunction(r_in=0.6, r_out=0.95))
    rng = np.random.default_rng(0)
    xi = np.zeros((40, 4))
    xi[:, :2] = rng.uniform(-0.15, 0.15, size=(40, 2))
    xi[:, 2:] = rng.uniform(-0.3, 0.3, size=(40, 2))
    x = chart.from_chart(xi)
    y = flow(stage, x)
    eta = chart.to_chart(y)
    t = 0.5 * 0.8
    expect = xi.copy()
    expect[:, 0] *= math.exp(-t)
    expect[:, 1] *= math.exp(t)
    assert np.max(np.abs(eta - expect)) < 1e-10
    # vertical coordinates never move
    assert np.max(np.abs(eta[:, 2:] - xi[:, 2:])) < 1e-12
    back = flow(stage, y, inverse=True)
    assert float(np.max(torus_distance(back, x))) < 1e-12


def test_center_flow_plateau_is_rotation():
    chart = plateau_chart([0.1, 0.8, 0.25, 0.6])
    field = PlanarVectorField(kind="Center", rate=1.3, cutoff=CutoffFunction(r_in=0.6, r_out=0.95))
    stage = LocalDeformation(chart=chart, field=field, time=0.7,
                             vertical_cutoff=CutoffFunction(r_in=0.6, r_out=0.95))
    xi = np.zeros((16, 4))
    ang = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    xi[:, 0] = 0.2 * np.cos(ang)
    xi[:, 1] = 0.2 * np.sin(ang)
    eta = chart.to_chart(flow(stage, chart.from_chart(xi)))
    th = 1.3 * 0.7
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    assert np.max(np.abs(eta[:, :2] - xi[:, :2] @ rot.T)) < 1e-10


def test_flow_outside_support_is_identity_same_floats():
    chart = plateau_chart([0.5, 0.5, 0.5, 0.5])
    field = PlanarVectorField(kind="Saddle", rate=1.0)
    stage = LocalDeformation(chart=chart, field=field, time=1.0)
    xi = np.zeros((3, 4))
    xi[0, :2] = (0.97, 0.0)       # outside planar support
    xi[1, 2:] = (0.0, 0.99)       # vertical cutoff kills the motion
    xi[2, :2] = (0.3, 0.2)        # moved
    xi[2, 2:] = (0.97, 0.0)
    x = chart.from_chart(xi)
    y = stage.forward(x)
    assert np.array_equal(y[0], x[0])
    assert np.array_equal(y[1], x[1])
    assert np.array_equal(y[2], x[2])  # vertical norm 0.97 is outside too
    xi[2, 2:] = (0.2, 0.1)
    x2 = chart.from_chart(xi[2:])
    assert float(torus_distance(stage.forward(x2), x2)[0]) > 1e-6


def test_stage_jacobian_matches_fd():
    chart = plateau_chart([0.2, 0.4, 0.6, 0.8], scale=0.05)
    field = PlanarVectorField(kind="Saddle", rate=0.9)
    stage = LocalDeformation(chart=chart, field=field, time=0.8)
    rng = np.random.default_rng(3)
    xi = rng.uniform(-0.5, 0.5, size=(6, 4))
    x = chart.from_chart(xi)
    J = flow_derivative(stage, x)
    h = 1e-7
    for i in range(len(x)):
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            dp = stage.forward((x[i] + e) % 1.0)
            dm = stage.forward((x[i] - e) % 1.0)
            col = np.asarray([(a - b + 0.5) % 1.0 - 0.5 for a, b in zip(dp, dm)]) / (2 * h)
            assert np.max(np.abs(J[i][:, k] - col)) < 5e-5


# ---------------------------------------------------------------------------
# stage builders against closed forms


@pytest.fixture(scope="module")
def stage_info(aut):
    sp = spectral_decomposition(aut)
    mult = (float(sp.eigenvalues[0]), float(sp.eigenvalues[1]))
    chart = plateau_chart([0.0, 0.0, 0.0, 0.0], scale=0.001)
    stage, info = build_pitchfork_stage(mult, chart, GAMMA)
    return sp, mult, stage, info


def test_pitchfork_threshold_analytic(stage_info):
    sp, mult, stage, info = stage_info
    # on the plateau the weak multiplier is exp(rate*a)*mu2, so the
    # bifurcation time solves exp(a) mu2 = 1 exactly
    assert abs(info["a0"] - math.log(1.0 / mult[1])) < 1e-9
    assert abs(info["a1"] - info["a0"] - GAMMA / 4.0) < 1e-12
    assert abs(info["weak_multiplier"] - math.exp(GAMMA / 4.0)) < 1e-9


def test_pitchfork_census(stage_info):
    sp, mult, stage, info = stage_info
    assert len(info["census_a1"]) == 3     # pitchfork happened
    assert len(info["census_sub"]) == 1    # below threshold only the origin
    assert 0.15 < info["x2_star"] < 0.25
    assert abs(info["x2_star"] - 0.194998) < 5e-4


def test_center_stage_collision(aut, bv_map):
    ci = bv_map.params["center"]
    M0 = np.asarray(ci["M0"])
    d1, d2 = M0[0, 0], M0[1, 1]
    assert abs(M0[0, 1]) < 1e-12 and abs(M0[1, 0]) < 1e-12
    b0_analytic = math.acos(2.0 * math.sqrt(d1 * d2) / (d1 + d2))
    assert abs(ci["b0"] - b0_analytic) < 1e-7
    assert abs(ci["b1"] - 1.02 * ci["b0"]) < 1e-12
    assert ci["disc_b1"] < 0.0  # complex pair at the working amplitude
    sp = spectral_decomposition(aut)
    mu = float(sp.eigenvalues[0] * sp.eigenvalues[1])
    assert abs(ci["pair_modulus"] - math.sqrt(mu)) < 1e-5


def test_pitchfork_rejects_bad_multipliers():
    chart = plateau_chart([0, 0, 0, 0], scale=0.001)
    with pytest.raises(UnsupportedSpectrum):
        build_pitchfork_stage((0.5, 1.2), chart, GAMMA)


# ---------------------------------------------------------------------------
# the assembled two-site map


def test_zero_amplitude_is_linear(aut, bv_map):
    desc = copy.deepcopy(bv_map.descriptor)

    def zero_times(node):
        if node.get("type") == "flow":
            node["time"] = 0.0
        for v in node.values():
            if isinstance(v, dict):
                zero_times(v)
            elif isinstance(v, list):
                for s in v:
                    if isinstance(s, dict):
                        zero_times(s)

    zero_times(desc["tree"])
    m0 = map_from_descriptor(desc)
    rng = np.random.default_rng(11)
    x = rng.random((3000, 4))
    err = float(np.max(torus_distance(m0.forward(x), apply_automorphism(aut, x))))
    assert err < 1e-12


def test_marked_points_fixed(bv_map):
    fp = bv_map.params["fixed_points"]
    for k in ("q", "p", "q_branch", "p_branch"):
        pt = np.asarray(fp[k])
        assert float(torus_distance(bv_map.forward(pt), pt)) < 1e-12


def test_stable_index_profile(bv_map):
    # one site loses a stable direction, the mirror site gains one
    assert bv_map.params["stable_indices"] == {
        "q": 1,
        "p": 3,
        "q_branch": 2,
        "origin": 2,
    }


def test_weak_multiplier_is_an_eigenvalue_at_q(bv_map):
    q = np.asarray(bv_map.params["fixed_points"]["q"])
    J = bv_map.jacobian(q)
    moduli = np.sort(np.abs(np.linalg.eigvals(J)))
    assert abs(moduli[1] - math.exp(GAMMA / 4.0)) < 1e-6


def test_branch_point_has_elliptic_pair(bv_map):
    qb = np.asarray(bv_map.params["fixed_points"]["q_branch"])
    J = bv_map.jacobian(qb)
    eig = np.linalg.eigvals(J)
    cplx = eig[np.abs(eig.imag) > 1e-8]
    assert len(cplx) == 2
    assert abs(abs(cplx[0]) - bv_map.params["center"]["pair_modulus"]) < 1e-5


def test_roundtrip_and_volume(bv_map):
    rng = np.random.default_rng(5)
    x = rng.random((2000, 4))
    y = bv_map.forward(x)
    assert float(np.max(torus_distance(bv_map.inverse(y), x))) < 1e-9
    J = bv_map.jacobian(x[:256])
    assert float(np.max(np.abs(np.linalg.det(J) - 1.0))) < 1e-8
    Ji = bv_map.jacobian(y[:256], inverse=True)
    resid = Ji @ J[:256] - np.eye(4)[None, :, :]
    assert float(np.max(np.abs(resid))) < 1e-7


def test_jacobian_chain_through_patches(bv_map):
    # points pulled back into the squeezed boxes exercise the routed branch
    alpha_sq = bv_map.params["alpha"] ** 2
    rng = np.random.default_rng(17)
    pts = []
    for key in ("q", "p"):
        patch = bv_map.root.stages[2] if key == "q" else bv_map.root.stages[0]
        xi = rng.uniform(-0.5, 0.5, size=(20, 4))
        xi[:, :2] *= alpha_sq
        if key == "q":
            # routing happens after the linear stage, which expands vertical
            # chart coordinates; keep the image inside the box
            xi[:, 2:] *= 0.04
        pts.append(patch.chart.from_chart(xi))
    x = np.concatenate(pts, axis=0)
    x = np.concatenate([x, bv_map.inverse(x)], axis=0)
    J = bv_map.jacobian(x)
    y = bv_map.forward(x)
    Ji = bv_map.jacobian(y, inverse=True)
    # variational RK4 truncation through the curved center germ caps the
    # agreement near 4e-6; anything past 2e-5 would mean a routing bug
    resid = Ji @ J - np.eye(4)[None, :, :]
    assert float(np.max(np.abs(resid))) < 2e-5


def test_gluing_check_passes_on_built_patches(bv_map):
    for idx in (0, 2):
        patch = bv_map.root.stages[idx]
        apply_linear_conjugation(
            patch.chart, patch.alpha_sq, patch.inner, patch.declared_radius
        )


def test_sparseness_report(bv_map):
    rep = check_sparse_deformation(bv_map)
    assert rep.passed
    assert rep.c1_outside == 0.0
    assert rep.c0_inside_max == 0.0  # supports are far thinner than the balls
    assert len(rep.components) == 2
    assert rep.radii_ok and rep.separation_ok
    assert rep.normalized_min_separation > math.sqrt(LEDGER["epsilon"])


def test_sparseness_linear_map(aut):
    rep = check_sparse_deformation(linear_deformed_map(aut), epsilon=0.01, n_budget=3)
    assert rep.passed
    assert rep.components == ()
    assert rep.min_center_separation == float("inf")


def test_serialization_bit_exact(tmp_path, bv_map):
    path = tmp_path / "map.json"
    bv_map.save(path)
    m2 = bv_map.load(path)
    rng = np.random.default_rng(23)
    x = rng.random((500, 4))
    assert np.array_equal(bv_map.forward(x), m2.forward(x))
    assert np.array_equal(bv_map.jacobian(x[:50]), m2.jacobian(x[:50]))
    assert np.array_equal(bv_map.inverse(x), m2.inverse(x))


# ---------------------------------------------------------------------------
# support localization fallback


def bump_map(centers, scale=0.12, time=0.4):
    # metadata-less test double with fat, axis-aligned supports; the
    # eigenbasis charts of real builds are too thin to hit by sampling
    from torusforge.deform import DeformedMap, _Composite, _LinearMap

    aut = as_automorphism(find_bv_matrix())
    stages = []
    for c in centers:
        chart = ChartFrame(center=np.asarray(c, dtype=float), basis=np.eye(4),
                           planar_scale=scale, vertical_scale=scale, axes=(0, 1, 2, 3))
        field = PlanarVectorField(kind="Saddle", rate=1.0)
        stages.append(LocalDeformation(chart=chart, field=field, time=time))
    stages.append(_LinearMap(aut))  # deform first so the support is the box
    return DeformedMap(
        root=_Composite(tuple(stages)), aut=aut, components=(), epsilon=0.0,
        n_budget=0, params={}, volume_preserving=True, descriptor={},
    )


def test_localization_finds_fat_support():
    m = bump_map([[0.25, 0.0, 0.5, 0.75]])
    rep = check_sparse_deformation(m, epsilon=0.2, n_budget=2, samples=120000, seed=2)
    assert len(rep.components) == 1
    assert "localization" in rep.notes
    assert rep.passed


def test_localization_budget_overflow():
    m = bump_map([[0.25, 0.0, 0.5, 0.75], [0.75, 0.5, 0.0, 0.25]])
    with pytest.raises(TooManyComponents):
        check_sparse_deformation(m, epsilon=0.2, n_budget=1, samples=120000, seed=2)


# ---------------------------------------------------------------------------
# tangency stages


def test_tangency_stage_diagnostics(aut):
    stages, info = build_tangency_stage(aut, LEDGER["epsilon"], GAMMA)
    assert info["identity_error"] < 1e-8
    assert info["manifold_gap"] < 1e-3
    assert info["tangency_angle_deg"] < 0.1
    assert abs(info["loop_radius"] - 0.5) < 0.01


def test_tangency_map(tangency_map):
    assert not tangency_map.volume_preserving
    assert len(tangency_map.components) == 3
    rep = check_sparse_deformation(tangency_map)
    assert rep.passed and rep.c1_outside == 0.0
    # the loop stage really moves points: push chart-box samples through
    ti = tangency_map.params["tangency"]
    assert ti["tangency_angle_deg"] < 0.1
    spare = np.asarray(tangency_map.params["fixed_points"]["spare"])
    sp = spectral_decomposition(tangency_map.aut)
    lam = sp.eigenvalues
    r_decl = 0.9 * LEDGER["epsilon"]
    r_chart = r_decl / (
        float(np.linalg.svd(sp.basis, compute_uv=False)[0]) * math.sqrt(2.0)
        * float(lam[3]) * 1.05
    )
    chart = ChartFrame(center=spare, basis=sp.basis, planar_scale=r_chart,
                       vertical_scale=r_chart, axes=(0, 1, 2, 3))
    rng = np.random.default_rng(4)
    xi = np.zeros((64, 4))
    xi[:, :2] = rng.uniform(-0.4, 0.4, size=(64, 2))
    targets = chart.from_chart(xi)
    x = apply_automorphism(tangency_map.aut, targets, inverse=True)
    moved = torus_distance(tangency_map.forward(x), apply_automorphism(tangency_map.aut, x))
    assert float(np.max(moved)) > 1e-9
    y = tangency_map.forward(x)
    assert float(np.max(torus_distance(tangency_map.inverse(y), x))) < 1e-9

import numpy as np
import pytest

from torusforge.fields import CutoffFunction, PlanarVectorField


def fd_jacobian(field, pts, h=1e-6):
    J = np.empty(pts.shape[:-1] + (2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        J[..., :, j] = (field.value(pts + e) - field.value(pts - e)) / (2 * h)
    return J


def band_points(rng, n):
    # radii spread over plateau, band and outside
    r = rng.uniform(0.0, 1.1, size=n)
    th = rng.uniform(0, 2 * np.pi, size=n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


def test_cutoff_shape():
    c = CutoffFunction()
    assert c.value(0.0) == 1.0
    assert c.value(0.04) == 1.0
    assert c.value(0.95) == 0.0
    assert c.value(2.0) == 0.0
    r = np.linspace(0, 1.05, 300)
    v = c.value(r)
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all((v >= 0) & (v <= 1))


def test_cutoff_c2():
    c = CutoffFunction()
    # continuity of value, d1, d2 across both knots
    for knot in (c.r_in, c.r_out):
        for f in (c.value, c.d1, c.d2):
            lo, hi = f(knot - 1e-9), f(knot + 1e-9)
            assert abs(lo - hi) < 1e-6
    # derivative consistency inside the band
    r = np.linspace(0.06, 0.94, 200)
    h = 1e-6
    fd1 = (c.value(r + h) - c.value(r - h)) / (2 * h)
    fd2 = (c.d1(r + h) - c.d1(r - h)) / (2 * h)
    assert np.max(np.abs(fd1 - c.d1(r))) < 1e-7
    assert np.max(np.abs(fd2 - c.d2(r))) < 1e-7


def make(kind, **kw):
    defaults = dict(rate=1.0)
    defaults.update(kw)
    return PlanarVectorField(kind=kind, **defaults)


@pytest.mark.parametrize(
    "field",
    [
        make("Saddle"),
        make("Center", rate=0.7),
        make("Homoclinic", rate=0.00785, cubic=3.0),
        make("Stretch", stretch_rates=(2.958, 1.217)),
    ],
    ids=["saddle", "center", "homoclinic", "stretch"],
)
def test_jacobian_matches_fd(field):
    rng = np.random.default_rng(42)
    pts = band_points(rng, 400)
    J = field.jacobian(pts)
    Jfd = fd_jacobian(field, pts)
    scale = max(1e-8, np.max(np.abs(J)))
    assert np.max(np.abs(J - Jfd)) / scale < 1e-6


@pytest.mark.parametrize("kind,kw", [("Saddle", {}), ("Center", {}), ("Homoclinic", {})])
def test_hamiltonian_trace_exactly_zero(kind, kw):
    field = make(kind, **kw)
    rng = np.random.default_rng(1)
    pts = band_points(rng, 500)
    J = field.jacobian(pts)
    tr = J[..., 0, 0] + J[..., 1, 1]
    assert np.all(tr == 0.0)
    assert field.volume_preserving


def test_linearizations_at_origin():
    z = np.zeros((1, 2))
    J = make("Saddle", rate=1.3).jacobian(z)[0]
    assert np.allclose(J, np.diag([-1.3, 1.3]), atol=1e-15)
    J = make("Center", rate=0.9).jacobian(z)[0]
    assert np.allclose(J, 0.9 * np.array([[0.0, -1.0], [1.0, 0.0]]), atol=1e-15)
    J = make("Stretch", stretch_rates=(2.0, 0.5)).jacobian(z)[0]
    assert np.allclose(J, np.diag([2.0, 0.5]), atol=1e-15)


def test_plateau_and_support():
    f = make("Saddle", rate=2.0)
    rng = np.random.default_rng(3)
    # plateau: exact linear field
    pts = rng.uniform(-0.03, 0.03, size=(50, 2))
    v = f.value(pts)
    assert np.allclose(v, 2.0 * np.stack([-pts[:, 0], pts[:, 1]], axis=-1), atol=1e-15)
    # outside the support: exactly zero
    far = band_points(rng, 100)
    far = far[np.linalg.norm(far, axis=-1) >= 0.95]
    assert np.all(f.value(far) == 0.0)
    assert np.all(f.jacobian(far) == 0.0)


def test_stretch_not_divergence_free():
    f = make("Stretch", stretch_rates=(2.0, 0.5))
    pts = np.array([[0.0, 0.0], [0.5, 0.1]])
    J = f.jacobian(pts)
    tr = J[..., 0, 0] + J[..., 1, 1]
    assert np.max(np.abs(tr)) > 0.1
    assert not f.volume_preserving


def test_homoclinic_level_set_invariant():
    # the zero level of the stream polynomial is flow invariant:
    # X . grad G = 0 there (exactly, up to float rounding)
    f = make("Homoclinic", rate=0.00785, cubic=3.0)
    x1 = np.linspace(-0.3, 0.4, 41)
    good = 1.0 - (2.0 * f.cubic / 3.0) * x1 >= 0
    x1 = x1[good]
    x2 = x1 * np.sqrt(1.0 - (2.0 * f.cubic / 3.0) * x1)
    loop = np.stack([x1, x2], axis=-1)
    v = f.value(loop)
    gradG = np.stack([f.rate * (-x1 + f.cubic * x1**2), f.rate * x2], axis=-1)
    dot = np.sum(v * gradG, axis=-1)
    assert np.max(np.abs(dot)) < 1e-16

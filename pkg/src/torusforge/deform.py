"""Chart-localized deformation stages and their composition into torus maps.

A deformed map is a composition tree of a linear automorphism, compactly
supported chart flows, and linear conjugation patches. Points outside a
stage's support come back untouched, same floats, so sparseness outside the
declared balls is exact rather than approximate. Conjugation patches route
points through a squeezed chart box and fall back to an ambient map (the
composite with the patch-local stages removed) elsewhere; the two branches
agree on the gluing shell because the squeeze commutes with the
diagonalized base map.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GluingViolation,
    IntegrationFailure,
    NoCollision,
    NoEigenvalueCrossing,
    TooManyComponents,
    UnsupportedSpectrum,
)
from .fields import CutoffFunction, PlanarVectorField
from .torus import (
    ToralAutomorphism,
    as_automorphism,
    choose_stage_centers,
    minimal_lift,
    spectral_decomposition,
    torus_distance,
    wrap,
)

FLOW_STEPS = 256  # fixed step count, h = flowTime/256


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _unbatch(y, single):
    return y[0] if single else y


# ---------------------------------------------------------------------------
# chart frames


@dataclass(frozen=True)
class ChartFrame:
    """Affine chart around a torus point: two planar axes, the rest vertical.

    Columns of basis are unit vectors; planar_scale and vertical_scale give
    torus lift units per chart unit. axes records which spectral axes the
    columns came from (metadata for serialization).
    """

    center: np.ndarray
    basis: np.ndarray
    planar_scale: float
    vertical_scale: float
    axes: tuple

    def __post_init__(self):
        d = self.basis.shape[0]
        scales = np.full(d, self.vertical_scale)
        scales[:2] = self.planar_scale
        frame = self.basis * scales[None, :]
        object.__setattr__(self, "frame", frame)
        object.__setattr__(self, "frame_inv", np.linalg.inv(frame))

    @property
    def dim(self):
        return self.basis.shape[0]

    def to_chart(self, x):
        lift = minimal_lift(np.asarray(x, dtype=float) - self.center)
        return lift @ self.frame_inv.T

    def from_chart(self, xi):
        return wrap(self.center + np.asarray(xi, dtype=float) @ self.frame.T)

    def to_dict(self):
        return {
            "center": [repr_float(v) for v in self.center],
            "axes": list(self.axes),
            "planar_scale": self.planar_scale,
            "vertical_scale": self.vertical_scale,
        }


def repr_float(v):
    return float(v)


def chart_from_dict(d, spectral):
    axes = tuple(d["axes"])
    basis = spectral.basis[:, list(axes)]
    return ChartFrame(
        center=np.asarray(d["center"], dtype=float),
        basis=basis,
        planar_scale=float(d["planar_scale"]),
        vertical_scale=float(d["vertical_scale"]),
        axes=axes,
    )


# ---------------------------------------------------------------------------
# planar flow kernel (batched RK4 with variational equation)


def _planar_flow(field, times, x0, steps=FLOW_STEPS, want_jac=False):
    """Integrate xdot = Psi(x) for per-point total time, fixed step count.

    times has shape (n,), x0 (n, 2). Returns (x_end, V) with V the 2x2
    variational matrices when want_jac, else (x_end, None).
    """
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    if n == 0:
        return x, (np.zeros((0, 2, 2)) if want_jac else None)
    dt = (np.asarray(times, dtype=float) / steps)[:, None]
    V = np.broadcast_to(np.eye(2), (n, 2, 2)).copy() if want_jac else None

    def rhs(y):
        return field.value(y)

    for _ in range(steps):
        k1 = rhs(x)
        y2 = x + 0.5 * dt * k1
        k2 = rhs(y2)
        y3 = x + 0.5 * dt * k2
        k3 = rhs(y3)
        y4 = x + dt * k3
        k4 = rhs(y4)
        if want_jac:
            dtm = dt[:, :, None]
            K1 = field.jacobian(x) @ V
            K2 = field.jacobian(y2) @ (V + 0.5 * dtm * K1)
            K3 = field.jacobian(y3) @ (V + 0.5 * dtm * K2)
            K4 = field.jacobian(y4) @ (V + dtm * K3)
            V = V + dtm / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)) or np.any(np.linalg.norm(x, axis=-1) > 1.5):
        raise IntegrationFailure("planar flow left its chart")
    return x, V


# ---------------------------------------------------------------------------
# map nodes


@dataclass(frozen=True)
class _LinearMap:
    aut: ToralAutomorphism

    @property
    def dim(self):
        return self.aut.dim

    def forward(self, x):
        x, single = _as_batch(x)
        return _unbatch(wrap(x @ self.aut.matrix.T.astype(float)), single)

    def inverse(self, x):
        x, single = _as_batch(x)
        return _unbatch(wrap(x @ self.aut.inverse.T.astype(float)), single)

    def jacobian(self, x, inverse=False):
        x, single = _as_batch(x)
        M = (self.aut.inverse if inverse else self.aut.matrix).astype(float)
        J = np.broadcast_to(M, (x.shape[0],) + M.shape).copy()
        return _unbatch(J, single)


@dataclass(frozen=True)
class LocalDeformation:
    """Time-t flow of a planar field in a chart, rescaled by a vertical cutoff.

    The planar block integrates xdot = chi(|y|) Psi(x); vertical coordinates
    are frozen, so the Jacobian is block triangular with an explicit coupling
    row given by the endpoint field value.
    """

    chart: ChartFrame
    field: PlanarVectorField
    time: float
    steps: int = FLOW_STEPS
    inverse_side: bool = False
    vertical_cutoff: CutoffFunction = CutoffFunction()

    @property
    def dim(self):
        return self.chart.dim

    def _split(self, x):
        xi = self.chart.to_chart(x)
        pl, vt = xi[:, :2], xi[:, 2:]
        vnorm = np.linalg.norm(vt, axis=-1) if vt.shape[1] else np.zeros(len(xi))
        chi = self.vertical_cutoff.value(vnorm) if vt.shape[1] else np.ones(len(xi))
        mask = (np.linalg.norm(pl, axis=-1) < self.field.cutoff.r_out) & (chi > 0.0)
        return xi, pl, vt, vnorm, chi, mask

    def in_support(self, x):
        x, single = _as_batch(x)
        mask = self._split(x)[5]
        return _unbatch(mask, single)

    def _flow(self, x, sign):
        x, single = _as_batch(x)
        out = np.array(x, dtype=float)
        if self.time == 0.0:
            return _unbatch(out, single)
        xi, pl, vt, _, chi, mask = self._split(x)
        if np.any(mask):
            times = sign * self.time * chi[mask]
            end, _ = _planar_flow(self.field, times, pl[mask], self.steps)
            nxi = np.concatenate([end, vt[mask]], axis=1)
            out[mask] = self.chart.from_chart(nxi)
        return _unbatch(out, single)

    def forward(self, x):
        return self._flow(x, +1.0)

    def inverse(self, x):
        return self._flow(x, -1.0)

    def jacobian(self, x, inverse=False):
        x, single = _as_batch(x)
        d = self.dim
        J = np.broadcast_to(np.eye(d), (x.shape[0], d, d)).copy()
        if self.time == 0.0:
            return _unbatch(J, single)
        xi, pl, vt, vnorm, chi, mask = self._split(x)
        if np.any(mask):
            sign = -1.0 if inverse else 1.0
            times = sign * self.time * chi[mask]
            end, V = _planar_flow(self.field, times, pl[mask], self.steps, want_jac=True)
            m = int(np.sum(mask))
            Jc = np.broadcast_to(np.eye(d), (m, d, d)).copy()
            Jc[:, :2, :2] = V
            if d > 2:
                # d(end)/d(vt) = sign*time * Psi(end) chi'(|vt|) vt_hat^T
                dchi = self.vertical_cutoff.d1(vnorm[mask])
                vsafe = np.where(vnorm[mask] > 0, vnorm[mask], 1.0)
                vhat = vt[mask] / vsafe[:, None]
                coup = (sign * self.time * dchi)[:, None] * self.field.value(end)
                Jc[:, :2, 2:] = coup[:, :, None] * vhat[:, None, :]
            F = self.chart.frame
            Fi = self.chart.frame_inv
            J[mask] = F @ Jc @ Fi
        return _unbatch(J, single)

    def to_dict(self):
        return {
            "type": "flow",
            "chart": self.chart.to_dict(),
            "field": {
                "kind": self.field.kind,
                "rate": self.field.rate,
                "r_in": self.field.cutoff.r_in,
                "r_out": self.field.cutoff.r_out,
                "stretch_rates": list(self.field.stretch_rates)
                if self.field.stretch_rates
                else None,
                "cubic": self.field.cubic,
            },
            "time": self.time,
            "steps": self.steps,
            "inverse_side": self.inverse_side,
            "vertical_r_in": self.vertical_cutoff.r_in,
            "vertical_r_out": self.vertical_cutoff.r_out,
        }


@dataclass(frozen=True)
class _Composite:
    stages: tuple

    @property
    def dim(self):
        return self.stages[0].dim

    def forward(self, x):
        for s in self.stages:
            x = s.forward(x)
        return x

    def inverse(self, x):
        for s in reversed(self.stages):
            x = s.inverse(x)
        return x

    def jacobian(self, x, inverse=False):
        x, single = _as_batch(x)
        d = self.dim
        J = np.broadcast_to(np.eye(d), (x.shape[0], d, d)).copy()
        pts = x
        order = reversed(self.stages) if inverse else self.stages
        for s in order:
            J = s.jacobian(pts, inverse=inverse) @ J
            pts = s.inverse(pts) if inverse else s.forward(pts)
        return _unbatch(J, single)


@dataclass(frozen=True)
class LinearConjugationPatch:
    """Planar squeeze conjugation of a compactly supported stage composite.

    Inside the squeezed chart box (planar chart norm <= alpha_sq, vertical
    chart norm <= 1) the patch evaluates T inner T^-1 with T the planar
    squeeze by alpha_sq; outside it returns points untouched. The inner
    composite must be the identity near the box walls (flow supports end at
    chart radius 0.95), so the two branches agree exactly on the shell. The
    stages never move a point across a cutoff radius and leave vertical
    coordinates alone, so the box is invariant and the inverse routes
    through the same membership test.
    """

    chart: ChartFrame
    alpha_sq: float
    inner: object
    declared_radius: float

    def __post_init__(self):
        d = self.chart.dim
        s = np.ones(d)
        s[:2] = self.alpha_sq
        ML = self.chart.frame @ np.diag(s) @ self.chart.frame_inv
        object.__setattr__(self, "_ML", ML)
        object.__setattr__(self, "_ML_inv", np.linalg.inv(ML))

    @property
    def dim(self):
        return self.chart.dim

    def _mask(self, x):
        xi = self.chart.to_chart(x)
        pln = np.linalg.norm(xi[:, :2], axis=-1)
        if xi.shape[1] > 2:
            vtn = np.linalg.norm(xi[:, 2:], axis=-1)
        else:
            vtn = np.zeros(len(xi))
        return xi, (pln <= self.alpha_sq) & (vtn <= 1.0)

    def _apply(self, x, inverse):
        x, single = _as_batch(x)
        xi, routed = self._mask(x)
        out = x.copy()
        if np.any(routed):
            w = xi[routed].copy()
            w[:, :2] /= self.alpha_sq
            xt = self.chart.from_chart(w)
            yt = self.inner.inverse(xt) if inverse else self.inner.forward(xt)
            eta = self.chart.to_chart(yt)
            eta[:, :2] *= self.alpha_sq
            out[routed] = self.chart.from_chart(eta)
        return _unbatch(out, single)

    def forward(self, x):
        return self._apply(x, inverse=False)

    def inverse(self, z):
        return self._apply(z, inverse=True)

    def jacobian(self, x, inverse=False):
        x, single = _as_batch(x)
        d = self.dim
        J = np.broadcast_to(np.eye(d), (x.shape[0], d, d)).copy()
        xi, routed = self._mask(x)
        if np.any(routed):
            w = xi[routed].copy()
            w[:, :2] /= self.alpha_sq
            xt = self.chart.from_chart(w)
            J[routed] = self._ML @ self.inner.jacobian(xt, inverse=inverse) @ self._ML_inv
        return _unbatch(J, single)


def _shell_points(chart, alpha_sq, rng, n=96):
    """Samples near both box walls, inside, where the inner map is identity."""
    d = chart.dim

    def face(plo, phi, vlo, vhi):
        pl = rng.normal(size=(n, 2))
        pl /= np.linalg.norm(pl, axis=-1, keepdims=True)
        pl *= rng.uniform(plo, phi, size=(n, 1))
        vt = rng.normal(size=(n, d - 2))
        if d > 2:
            vt /= np.maximum(np.linalg.norm(vt, axis=-1, keepdims=True), 1e-12)
            vt *= rng.uniform(vlo, vhi, size=(n, 1))
        xi = np.concatenate([pl * alpha_sq, vt], axis=1)
        return chart.from_chart(xi)

    return np.concatenate(
        [face(0.955, 0.999, 0.0, 0.999), face(0.0, 0.999, 0.955, 0.999)], axis=0
    )


def apply_linear_conjugation(chart, alpha_sq, inner, declared_radius, check_gluing=True):
    """Build a LinearConjugationPatch and verify it glues to the identity."""
    patch = LinearConjugationPatch(
        chart=chart, alpha_sq=alpha_sq, inner=inner, declared_radius=declared_radius
    )
    if check_gluing:
        rng = np.random.default_rng(20240301)
        x = _shell_points(chart, alpha_sq, rng)
        err = float(np.max(torus_distance(patch.forward(x), x)))
        err = max(err, float(np.max(torus_distance(patch.inverse(x), x))))
        if err > 1e-9:
            raise GluingViolation("branch mismatch %.3e on the gluing shell" % err)
    return patch


# ---------------------------------------------------------------------------
# free functions over stages (chart-frame flow API)


def flow(stage, points, inverse=False):
    """Apply a LocalDeformation to torus points."""
    return stage.inverse(points) if inverse else stage.forward(points)


def flow_derivative(stage, points, inverse=False):
    """Jacobians of a LocalDeformation at torus points, standard coordinates."""
    return stage.jacobian(points, inverse=inverse)


# ---------------------------------------------------------------------------
# deformed map wrapper


@dataclass(frozen=True)
class DeformedMap:
    """Composition tree with sparse-deformation metadata."""

    root: object
    aut: ToralAutomorphism
    components: tuple
    epsilon: float
    n_budget: int
    params: dict
    volume_preserving: bool
    descriptor: dict

    @property
    def dim(self):
        return self.aut.dim

    def forward(self, x):
        return self.root.forward(x)

    def inverse(self, x):
        return self.root.inverse(x)

    def jacobian(self, x, inverse=False):
        return self.root.jacobian(x, inverse=inverse)

    def __call__(self, x):
        return self.root.forward(x)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.descriptor, fh, indent=1)

    @staticmethod
    def load(path):
        with open(path) as fh:
            return map_from_descriptor(json.load(fh))


def _field_from_dict(d):
    return PlanarVectorField(
        kind=d["kind"],
        rate=float(d["rate"]),
        cutoff=CutoffFunction(r_in=float(d["r_in"]), r_out=float(d["r_out"])),
        stretch_rates=tuple(d["stretch_rates"]) if d.get("stretch_rates") else None,
        cubic=float(d.get("cubic", 3.0)),
    )


def _node_from_dict(node, aut, spectral):
    t = node["type"]
    if t == "linear":
        return _LinearMap(aut)
    if t == "flow":
        return LocalDeformation(
            chart=chart_from_dict(node["chart"], spectral),
            field=_field_from_dict(node["field"]),
            time=float(node["time"]),
            steps=int(node["steps"]),
            inverse_side=bool(node["inverse_side"]),
            vertical_cutoff=CutoffFunction(
                r_in=float(node.get("vertical_r_in", 0.05)),
                r_out=float(node.get("vertical_r_out", 0.95)),
            ),
        )
    if t == "compose":
        return _Composite(tuple(_node_from_dict(s, aut, spectral) for s in node["stages"]))
    if t == "conjugation":
        return LinearConjugationPatch(
            chart=chart_from_dict(node["chart"], spectral),
            alpha_sq=float(node["alpha_sq"]),
            inner=_node_from_dict(node["inner"], aut, spectral),
            declared_radius=float(node["declared_radius"]),
        )
    raise ValueError("unknown node type %r" % t)


def map_from_descriptor(desc):
    """Rebuild a DeformedMap from its JSON descriptor, floats bit for bit."""
    if desc.get("format") != "torusforge-map":
        raise ValueError("not a map descriptor")
    aut = ToralAutomorphism.from_matrix(np.asarray(desc["matrix"], dtype=np.int64))
    spectral = spectral_decomposition(aut)
    root = _node_from_dict(desc["tree"], aut, spectral)
    return DeformedMap(
        root=root,
        aut=aut,
        components=tuple(
            (np.asarray(c["center"], dtype=float), float(c["radius"]))
            for c in desc["components"]
        ),
        epsilon=float(desc["epsilon"]),
        n_budget=int(desc["n_budget"]),
        params=desc.get("params", {}),
        volume_preserving=bool(desc["volume_preserving"]),
        descriptor=desc,
    )


def linear_deformed_map(A):
    """The undeformed automorphism as a DeformedMap (empty support)."""
    aut = as_automorphism(A)
    desc = {
        "format": "torusforge-map",
        "version": 1,
        "matrix": [[int(v) for v in row] for row in aut.matrix],
        "epsilon": 0.0,
        "n_budget": 0,
        "components": [],
        "volume_preserving": True,
        "params": {},
        "tree": {"type": "linear"},
    }
    return map_from_descriptor(desc)


# ---------------------------------------------------------------------------
# stage builders


def _planar_germ(field, amplitude, multipliers, steps=FLOW_STEPS):
    """Composed planar germ flow_amplitude(diag(multipliers) x) and Jacobian."""
    D = np.asarray(multipliers, dtype=float)

    def value(x):
        y = x * D[None, :]
        end, _ = _planar_flow(field, np.full(len(x), amplitude), y, steps)
        return end

    def jac(x):
        y = x * D[None, :]
        _, V = _planar_flow(field, np.full(len(x), amplitude), y, steps, want_jac=True)
        return V * D[None, None, :]

    return value, jac


def _weak_multiplier(field, amplitude, multipliers, steps=FLOW_STEPS):
    _, jac = _planar_germ(field, amplitude, multipliers, steps)
    return float(jac(np.zeros((1, 2)))[0, 1, 1])


def _census(field, amplitude, multipliers, steps=FLOW_STEPS, grid=17, tol=1e-12):
    """Newton census of planar germ fixed points in the unit disk."""
    value, jac = _planar_germ(field, amplitude, multipliers, steps)
    s = np.linspace(-0.9, 0.9, grid)
    X = np.stack(np.meshgrid(s, s), axis=-1).reshape(-1, 2)
    for _ in range(40):
        F = value(X) - X
        J = jac(X) - np.eye(2)
        try:
            dx = np.linalg.solve(J, F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        X = np.clip(X - dx, -1.2, 1.2)
    F = value(X) - X
    ok = (np.linalg.norm(F, axis=-1) < tol) & (np.linalg.norm(X, axis=-1) < 0.97)
    pts = []
    for p in X[ok]:
        if all(np.linalg.norm(p - q) > 1e-6 for q in pts):
            pts.append(p)
    pts.sort(key=lambda p: (round(p[1], 9), round(p[0], 9)))
    return np.array(pts) if pts else np.zeros((0, 2))


def build_pitchfork_stage(multipliers, chart, gamma, rate=1.0, steps=FLOW_STEPS):
    """Saddle stage whose weak-axis multiplier crosses 1 and lands at e^{gamma/4}.

    multipliers = (d1, d2) with 0 < d1 < d2 < 1 are the base-map rates on the
    chart's planar axes. Returns (stage, info); the stage time is the
    amplitude a1 past the crossing a0, and info carries the census used by
    the fixed-point checks.
    """
    d1, d2 = float(multipliers[0]), float(multipliers[1])
    if not (0.0 < d1 < d2 < 1.0):
        raise UnsupportedSpectrum("pitchfork needs 0 < d1 < d2 < 1 on the planar axes")
    field = PlanarVectorField(kind="Saddle", rate=rate)
    guess = math.log(1.0 / d2) / rate
    lo, hi = 0.8 * guess, 1.2 * guess
    flo = _weak_multiplier(field, lo, (d1, d2), steps) - 1.0
    fhi = _weak_multiplier(field, hi, (d1, d2), steps) - 1.0
    if flo * fhi > 0:
        raise NoEigenvalueCrossing("no multiplier-1 crossing in [%g, %g]" % (lo, hi))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = _weak_multiplier(field, mid, (d1, d2), steps) - 1.0
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
        if hi - lo < 1e-14:
            break
    a0 = 0.5 * (lo + hi)
    a1 = a0 + gamma / (4.0 * rate)
    weak = _weak_multiplier(field, a1, (d1, d2), steps)
    census1 = _census(field, a1, (d1, d2), steps)
    census0 = _census(field, 0.8 * a0, (d1, d2), steps)
    x2_star = float(np.max(census1[:, 1])) if len(census1) else 0.0
    stage = LocalDeformation(chart=chart, field=field, time=a1, steps=steps)
    info = {
        "a0": a0,
        "a1": a1,
        "weak_multiplier": weak,
        "census_a1": census1.tolist(),
        "census_sub": census0.tolist(),
        "x2_star": x2_star,
        "multipliers": [d1, d2],
        "rate": rate,
    }
    return stage, info


def build_center_stage(multipliers, chart, pitch_info, gamma, rate=1.0, steps=FLOW_STEPS):
    """Center stage at the created fixed point, pushed just past the collision.

    Measures the composed-germ Jacobian at q2 = (0, x2_star), marches the
    rotation amplitude until the discriminant goes negative, bisects the
    collision b0 and returns the stage at b1 = 1.02 b0 on a subchart of
    radius 0.4 x2_star.
    """
    d1, d2 = float(multipliers[0]), float(multipliers[1])
    x2s = pitch_info["x2_star"]
    if x2s <= 0:
        raise NoCollision("pitchfork did not create an off-axis fixed point")
    pfield = PlanarVectorField(kind="Saddle", rate=pitch_info["rate"])
    _, pjac = _planar_germ(pfield, pitch_info["a1"], (d1, d2), steps)
    q2 = np.array([[0.0, x2s]])
    M0 = pjac(q2)[0]
    cfield = PlanarVectorField(kind="Center", rate=rate)

    def disc(b):
        _, V = _planar_flow(cfield, np.array([b]), np.zeros((1, 2)), steps, want_jac=True)
        J = V[0] @ M0
        return float(np.trace(J) ** 2 - 4.0 * np.linalg.det(J))

    b_prev, d_prev = 0.0, disc(0.0)
    if d_prev <= 0:
        raise NoCollision("discriminant not positive at b = 0")
    b_hit = None
    for k in range(1, 65):
        b = k * math.pi / 16.0
        val = disc(b)
        if val < 0:
            b_hit = b
            break
        b_prev, d_prev = b, val
    if b_hit is None:
        raise NoCollision("no negative discriminant up to b = 4 pi")
    lo, hi = b_prev, b_hit
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if disc(mid) < 0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-13:
            break
    b0 = 0.5 * (lo + hi)
    b1 = 1.02 * b0
    disc_b1 = disc(b1)
    if disc_b1 >= 0:
        raise NoCollision("discriminant still nonnegative at b1")
    _, V1 = _planar_flow(cfield, np.array([b1]), np.zeros((1, 2)), steps, want_jac=True)
    J1 = V1[0] @ M0
    pair_modulus = float(np.sqrt(abs(np.linalg.det(J1))))
    r2 = 0.4 * x2s
    sub_chart = ChartFrame(
        center=chart.from_chart(np.concatenate([[0.0, x2s], np.zeros(chart.dim - 2)])[None])[0],
        basis=chart.basis,
        planar_scale=r2 * chart.planar_scale,
        vertical_scale=chart.vertical_scale,
        axes=chart.axes,
    )
    stage = LocalDeformation(chart=sub_chart, field=cfield, time=b1, steps=steps)
    info = {
        "b0": b0,
        "b1": b1,
        "disc_b1": disc_b1,
        "pair_modulus": pair_modulus,
        "M0": M0.tolist(),
        "q2": [0.0, x2s],
        "subchart_radius": r2,
        "rate": rate,
    }
    return stage, info


# ---------------------------------------------------------------------------
# full construction


def _ledger_get(ledger, name, default=None):
    if hasattr(ledger, name):
        return getattr(ledger, name)
    try:
        return ledger[name]
    except (KeyError, TypeError):
        if default is not None:
            return default
        raise


def _sigma_max(spectral):
    return float(np.linalg.svd(spectral.basis, compute_uv=False)[0])


def _stable_index(dmap, point):
    J = dmap.jacobian(point)
    moduli = np.abs(np.linalg.eigvals(J))
    return int(np.sum(moduli < 1.0 - 1e-9))


def iter_patches(node):
    if isinstance(node, LinearConjugationPatch):
        yield node
        yield from iter_patches(node.inner)
    elif isinstance(node, _Composite):
        for s in node.stages:
            yield from iter_patches(s)
    elif isinstance(node, DeformedMap):
        yield from iter_patches(node.root)


def _verify_gluing(dmap):
    rng = np.random.default_rng(918273)
    for patch in iter_patches(dmap.root):
        x = _shell_points(patch.chart, patch.alpha_sq, rng)
        err = float(np.max(torus_distance(patch.forward(x), x)))
        err = max(err, float(np.max(torus_distance(patch.inverse(x), x))))
        if err > 1e-9:
            raise GluingViolation("patch branches differ by %.3e on the shell" % err)


def build_bv_map(A, ledger, amplitude_scale=1.0, tangency=False):
    """Sparse two-site deformation of a 4D automorphism with split spectrum.

    One site grows a pitchfork plus center stage on the weak-stable plane and
    is squeezed by a planar conjugation; the second site repeats the
    construction on the inverse map so the final map has mirrored behavior.
    ledger needs epsilon, gamma, alpha, n_components. amplitude_scale scales
    the stage times only (0 gives back the linear map exactly, keeping the
    tuned parameters in the metadata).
    """
    aut = as_automorphism(A)
    spectral = spectral_decomposition(aut)
    if aut.dim != 4 or np.any(spectral.eigenvalues <= 0):
        raise UnsupportedSpectrum("construction needs 4 distinct positive eigenvalues")
    lam = spectral.eigenvalues
    eps = float(_ledger_get(ledger, "epsilon"))
    gamma = float(_ledger_get(ledger, "gamma"))
    alpha = float(_ledger_get(ledger, "alpha"))
    budget = int(_ledger_get(ledger, "n_components", 3))
    alpha_sq = alpha * alpha

    centers, _ = choose_stage_centers(aut, count=3)
    q, p, spare = centers[0], centers[1], centers[2]
    sigma = _sigma_max(spectral)
    r_decl = 0.9 * eps
    r_chart = r_decl / (sigma * math.sqrt(2.0))

    chart_q = ChartFrame(center=q, basis=spectral.basis, planar_scale=r_chart,
                         vertical_scale=r_chart, axes=(0, 1, 2, 3))
    basis_p = spectral.basis[:, [3, 2, 0, 1]]
    chart_p = ChartFrame(center=p, basis=basis_p, planar_scale=r_chart,
                         vertical_scale=r_chart, axes=(3, 2, 0, 1))

    mult = (float(lam[0]), float(lam[1]))
    pitch_stage, pitch_info = build_pitchfork_stage(mult, chart_q, gamma)
    center_stage, center_info = build_center_stage(mult, chart_q, pitch_info, gamma)
    # the mirror site sees the same planar multipliers through the inverse
    # map (reciprocal spectrum), so the tuned amplitudes carry over verbatim
    x2s = pitch_info["x2_star"]
    s = float(amplitude_scale)

    def flow_dict(stage, time, inverse_side, chart):
        dd = stage.to_dict()
        dd["time"] = time
        dd["inverse_side"] = inverse_side
        dd["chart"] = chart.to_dict()
        return dd

    sub_q = center_stage.chart
    sub_p = ChartFrame(
        center=chart_p.from_chart(np.array([0.0, x2s, 0.0, 0.0])),
        basis=basis_p,
        planar_scale=center_info["subchart_radius"] * r_chart,
        vertical_scale=r_chart,
        axes=(3, 2, 0, 1),
    )
    lin = {"type": "linear"}
    patch_q = {
        "type": "conjugation",
        "chart": chart_q.to_dict(),
        "alpha_sq": alpha_sq,
        "declared_radius": r_decl,
        "inner": {
            "type": "compose",
            "stages": [
                flow_dict(pitch_stage, pitch_info["a1"] * s, False, chart_q),
                flow_dict(center_stage, center_info["b1"] * s, False, sub_q),
            ],
        },
    }
    patch_p = {
        "type": "conjugation",
        "chart": chart_p.to_dict(),
        "alpha_sq": alpha_sq,
        "declared_radius": r_decl,
        "inner": {
            "type": "compose",
            "stages": [
                flow_dict(center_stage, -center_info["b1"] * s, True, sub_p),
                flow_dict(pitch_stage, -pitch_info["a1"] * s, True, chart_p),
            ],
        },
    }
    # the second site deforms the inverse map, so its squeezed stage
    # composite acts before the linear part and with reversed stage times
    tree = {"type": "compose", "stages": [patch_p, lin, patch_q]}
    components = [
        {"center": [float(v) for v in q], "radius": r_decl},
        {"center": [float(v) for v in p], "radius": r_decl},
    ]
    volume_preserving = True
    tang_info = None
    if tangency:
        stages, tang_info = build_tangency_stage(aut, eps, gamma, center=spare)
        tree = {"type": "compose", "stages": [tree] + [st.to_dict() for st in stages]}
        components.append({"center": [float(v) for v in spare], "radius": r_decl})
        volume_preserving = False

    params = {
        "pitchfork": pitch_info,
        "center": center_info,
        "amplitude_scale": s,
        "alpha": alpha,
        "gamma": gamma,
        "sigma_max": sigma,
        "chart_radius": r_chart,
        "tangency": tang_info,
    }
    desc = {
        "format": "torusforge-map",
        "version": 1,
        "matrix": [[int(v) for v in row] for row in aut.matrix],
        "epsilon": eps,
        "n_budget": budget,
        "components": components,
        "volume_preserving": volume_preserving,
        "params": params,
        "tree": tree,
    }
    dmap = map_from_descriptor(desc)
    _verify_gluing(dmap)
    # stable indices at the four marked fixed points of the built map
    q2_q = chart_q.from_chart(np.array([0.0, alpha_sq * x2s, 0.0, 0.0]))
    q2_p = chart_p.from_chart(np.array([0.0, alpha_sq * x2s, 0.0, 0.0]))
    params["fixed_points"] = {
        "q": [float(v) for v in q],
        "p": [float(v) for v in p],
        "q_branch": [float(v) for v in q2_q],
        "p_branch": [float(v) for v in q2_p],
        "spare": [float(v) for v in spare],
    }
    params["stable_indices"] = {
        "q": _stable_index(dmap, q),
        "p": _stable_index(dmap, p),
        "q_branch": _stable_index(dmap, q2_q),
        "origin": _stable_index(dmap, np.zeros(4)),
    }
    return dmap


def build_tangency_stage(A, epsilon, gamma, center=None, steps=64):
    """Best-effort pair of stages producing a homoclinic loop with angle zero.

    A stretch stage cancels the contracting planar block on its plateau (in
    leaf identity), then a slow Hamiltonian flow with a figure-loop level set
    makes the separatrix of the created planar saddle close up on itself;
    the unstable and stable polylines coincide, so the detected crossing
    angle is zero. The stretch field is not divergence free, so maps built
    with this stage are flagged as not volume preserving.
    """
    aut = as_automorphism(A)
    spectral = spectral_decomposition(aut)
    lam = spectral.eigenvalues
    if center is None:
        centers, _ = choose_stage_centers(aut, count=3)
        center = centers[2]
    sigma = _sigma_max(spectral)
    r_decl = 0.9 * epsilon
    # the deformed set is the A-preimage of the supports; shrink the chart so
    # it still fits inside the declared ball
    r_chart = r_decl / (sigma * math.sqrt(2.0) * float(lam[3]) * 1.05)
    chart = ChartFrame(center=np.asarray(center, dtype=float), basis=spectral.basis,
                       planar_scale=r_chart, vertical_scale=r_chart, axes=(0, 1, 2, 3))
    mu1, mu2 = float(lam[0]), float(lam[1])
    stretch_field = PlanarVectorField(
        kind="Stretch",
        rate=1.0,
        cutoff=CutoffFunction(r_in=0.70, r_out=0.95),
        stretch_rates=(math.log(1.0 / mu1), math.log(1.0 / mu2)),
    )
    homo_field = PlanarVectorField(kind="Homoclinic", rate=gamma / 4.0, cubic=3.0)
    stretch = LocalDeformation(chart=chart, field=stretch_field, time=1.0, steps=256)
    homo = LocalDeformation(chart=chart, field=homo_field, time=1.0, steps=steps)

    # diagnostics on the planar germ homo . stretch . diag(mu)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.45, 0.45, size=(64, 2))
    pts = pts[np.linalg.norm(pts, axis=-1) < 0.65]
    mid, _ = _planar_flow(stretch_field, np.ones(len(pts)), pts * np.array([mu1, mu2]), 256)
    identity_err = float(np.max(np.linalg.norm(mid - pts, axis=-1)))

    delta = gamma / 4.0
    # linearization of the loop field at the origin is delta * [[0,1],[1,0]]
    u_dir = np.array([1.0, 1.0]) / math.sqrt(2.0)
    s_dir = np.array([1.0, -1.0]) / math.sqrt(2.0)
    hop = 25.0  # flow time per tracing application, multiplier e^(delta*hop)
    iters = 160
    seeds = np.geomspace(1e-4, 1e-4 * math.exp(delta * hop), 24)

    def manifold(direction, sign):
        x = seeds[:, None] * direction[None, :]
        cloud = [x.copy()]
        for _ in range(iters):
            x, _ = _planar_flow(homo_field, sign * hop * np.ones(len(x)), x, 64)
            cloud.append(x.copy())
        pts = np.concatenate(cloud, axis=0)
        r = np.linalg.norm(pts, axis=-1)
        return pts[(r < 0.9) & (r > 1e-5)]

    wu = manifold(u_dir, 1.0)
    ws = manifold(s_dir, -1.0)
    far_u = wu[np.linalg.norm(wu, axis=-1) > 0.15]
    angle = float("nan")
    gap = float("inf")
    if len(far_u) and len(ws):
        from scipy.spatial import cKDTree

        tree_s = cKDTree(ws)
        dist, idx = tree_s.query(far_u)
        gap = float(np.min(dist))
        matched = np.nonzero(dist < max(5e-3, 2.0 * gap))[0]

        def tangent(cloud, tree, point):
            _, ii = tree.query(point, k=3)
            v = cloud[ii[1]] - cloud[ii[2]]
            n = np.linalg.norm(v)
            return v / n if n > 0 else np.array([1.0, 0.0])

        tree_u = cKDTree(wu)
        angles = []
        for j in matched[:64]:
            tu = tangent(wu, tree_u, far_u[j])
            ts = tangent(ws, tree_s, ws[idx[j]])
            cosang = abs(float(np.dot(tu, ts)))
            angles.append(math.degrees(math.acos(min(1.0, cosang))))
        if angles:
            angle = float(min(angles))
    info = {
        "identity_error": identity_err,
        "tangency_angle_deg": angle,
        "manifold_gap": gap,
        "loop_radius": float(np.max(np.linalg.norm(wu, axis=-1))) if len(wu) else 0.0,
        "stretch_rates": [math.log(1.0 / mu1), math.log(1.0 / mu2)],
        "delta": delta,
    }
    return (stretch, homo), info


# ---------------------------------------------------------------------------
# sparseness checking


@dataclass(frozen=True)
class SparsenessReport:
    components: tuple
    epsilon: float
    n_budget: int
    c1_outside: float
    c0_inside_max: float
    min_center_separation: float
    normalized_min_separation: float
    radii_ok: bool
    separation_ok: bool
    passed: bool
    notes: str


def _localize_supports(dmap, eps, budget, samples, seed):
    rng = np.random.default_rng(seed)
    d = dmap.dim
    x = rng.random((samples, d))
    lin = _LinearMap(dmap.aut)
    disp = torus_distance(dmap.forward(x), lin.forward(x))
    moved = x[disp > 1e-12]
    clusters = []
    for pt in moved:
        for c in clusters:
            if torus_distance(pt, c["rep"]) < 2.5 * eps:
                c["radius"] = max(c["radius"], float(torus_distance(pt, c["rep"])))
                break
        else:
            clusters.append({"rep": pt, "radius": 0.0})
            if len(clusters) > budget:
                raise TooManyComponents("more than %d support clusters" % budget)
    return tuple((c["rep"], c["radius"]) for c in clusters)


def check_sparse_deformation(dmap, epsilon=None, n_budget=None, samples=4096, seed=0):
    """Verify the sparse-deformation structure of a built map.

    Components come from build metadata when present, otherwise from sampled
    support localization. Outside the declared balls the map must equal its
    linear part exactly; the report carries the measured maxima.
    """
    eps = float(epsilon) if epsilon is not None else dmap.epsilon
    budget = int(n_budget) if n_budget is not None else max(dmap.n_budget, 1)
    notes = "metadata components"
    comps = dmap.components
    estimated = False
    if not comps:
        comps = _localize_supports(dmap, max(eps, 1e-6), budget, samples, seed)
        notes = "sampled support localization (radii are diameter bounds)"
        estimated = True
    if len(comps) > budget:
        raise TooManyComponents("%d components exceed budget %d" % (len(comps), budget))
    d = dmap.dim
    dfac = 2.0 / math.sqrt(d)
    radii_ok = all(
        (r < eps if not estimated else r < 2.0 * eps) for _, r in comps
    ) if comps else True
    if len(comps) >= 2:
        seps = [
            float(torus_distance(comps[i][0], comps[j][0]))
            for i in range(len(comps))
            for j in range(i + 1, len(comps))
        ]
        min_sep = min(seps)
    else:
        min_sep = float("inf")
    norm_sep = min_sep * dfac
    separation_ok = (norm_sep > math.sqrt(eps)) if len(comps) >= 2 else True

    rng = np.random.default_rng(seed + 1)
    x = rng.random((samples, d))
    inside = np.zeros(len(x), dtype=bool)
    for c, r in comps:
        # estimated components: the representative sits off center, inflate
        excl = r if not estimated else 1.3 * r + 0.1 * eps
        inside |= torus_distance(x, np.asarray(c)) <= excl
    lin = _LinearMap(dmap.aut)
    out_pts = x[~inside]
    c0_out = float(np.max(torus_distance(dmap.forward(out_pts), lin.forward(out_pts))))
    J = dmap.jacobian(out_pts[: min(len(out_pts), 512)])
    c1_out = max(
        c0_out,
        float(np.max(np.abs(J - dmap.aut.matrix.astype(float)[None, :, :]))),
    )
    c0_in = 0.0
    if np.any(inside):
        in_pts = x[inside]
        c0_in = float(np.max(torus_distance(dmap.forward(in_pts), lin.forward(in_pts))))
    c1_tol = 0.0 if not estimated else 1e-9
    passed = (c1_out <= c1_tol) and radii_ok and separation_ok and len(comps) <= budget
    return SparsenessReport(
        components=tuple((tuple(float(v) for v in c), float(r)) for c, r in comps),
        epsilon=eps,
        n_budget=budget,
        c1_outside=c1_out,
        c0_inside_max=c0_in,
        min_center_separation=min_sep,
        normalized_min_separation=norm_sep,
        radii_ok=radii_ok,
        separation_ok=separation_ok,
        passed=passed,
        notes=notes,
    )

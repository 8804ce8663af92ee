"""Local center-unstable and center-stable leaf disks via graph transforms.

A cu-disk at x is a graph in the eigen coordinates of the linear base:
{x + P (u, h(u)) : |u|_max <= rho} with u ranging over the unstable
coordinate pair and h taking values in the stable pair (a cs-disk swaps
the roles).  The block-max slope bound |h(u) - h(u')| <= alpha |u - u'|
is then literally the cone condition the hypothesis checks work with,
so "tangent to C^u_alpha" is an assertable property of the height grid.

One transform step pulls the new node grid back through the map with a
vectorized 2x2 Newton solve, evaluates the image heights, and clips to
the radius-rho ball at the image center.  Iterating along a backward
orbit converges geometrically; the orbit itself only needs link-wise
consistency (each stored point is the map image of the next to machine
precision), so the usual worry about long backward orbits drifting at
the strong rate does not apply here.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import ConvergenceFailure, GraphFoldDetected, NotApplicable
from .torus import as_automorphism, minimal_lift, spectral_decomposition, wrap

__all__ = [
    "LeafDisk",
    "UniquenessReport",
    "EquivarianceReport",
    "flat_disk",
    "graph_transform_step",
    "compute_cu_disk",
    "compute_cs_disk",
    "check_leaf_uniqueness",
    "check_equivariance",
    "cauchy_ratios",
]

NEWTON_TOL = 1e-12
FD_STEP = 1e-6


def _ops(g):
    if hasattr(g, "forward"):
        aut = getattr(g, "aut", None)
        if aut is None:
            raise TypeError("map object must carry its base automorphism as .aut")
        return g.forward, g.inverse, aut
    aut = as_automorphism(g)
    MT = aut.matrix.T.astype(float)
    MiT = aut.inverse.T.astype(float)
    return (
        lambda x: wrap(np.asarray(x, dtype=float) @ MT),
        lambda x: wrap(np.asarray(x, dtype=float) @ MiT),
        aut,
    )


def _frames(aut, kind):
    """(graph indices, height indices, P, P_inv, graph eigenvalues)."""
    sp = spectral_decomposition(aut)
    if kind == "cu":
        graph_idx, height_idx = list(sp.unstable), list(sp.stable)
    elif kind == "cs":
        graph_idx, height_idx = list(sp.stable), list(sp.unstable)
    else:
        raise ValueError("kind must be 'cu' or 'cs'")
    return graph_idx, height_idx, sp.basis, sp.basis_inv, sp.eigenvalues[graph_idx]


@dataclass(frozen=True)
class LeafDisk:
    """Graph of h over the kind-plane through base, radius rho (block max).

    heights[i, j] is h at (offsets[i], offsets[j]); point() exposes the
    disk as an ambient chart for the product-intersection solver.  The
    eigenframe columns ride along so a disk is self-contained.  history
    carries the sup-differences of the convergence companion chain when
    the disk came out of compute_cu_disk/compute_cs_disk.
    """

    kind: str
    base: np.ndarray
    rho: float
    alpha: float
    heights: np.ndarray
    graph_axes: tuple
    height_axes: tuple
    basis: np.ndarray
    basis_inv: np.ndarray
    lipschitz_bound: float
    pullback_margin: float = math.nan
    history: tuple = field(default_factory=tuple)

    @property
    def radius(self):
        return self.rho

    @property
    def resolution(self):
        return self.heights.shape[0]

    def offsets(self):
        return np.linspace(-self.rho, self.rho, self.resolution)

    def _splines(self):
        cached = self.__dict__.get("_spl")
        if cached is None:
            off = self.offsets()
            cached = tuple(
                RectBivariateSpline(off, off, self.heights[:, :, k], kx=3, ky=3)
                for k in range(self.heights.shape[-1])
            )
            object.__setattr__(self, "_spl", cached)
        return cached

    def height_at(self, uv):
        uv = np.asarray(uv, dtype=float)
        single = uv.ndim == 1
        pts = uv.reshape(-1, 2)
        spl = self._splines()
        out = np.stack([s.ev(pts[:, 0], pts[:, 1]) for s in spl], axis=-1)
        return out[0] if single else out.reshape(uv.shape[:-1] + (out.shape[-1],))

    def point(self, uv):
        """Ambient lift of the graph point over uv (chart for intersections)."""
        uv = np.asarray(uv, dtype=float)
        xi = np.zeros(uv.shape[:-1] + (self.base.shape[0],))
        xi[..., list(self.graph_axes)] = uv
        xi[..., list(self.height_axes)] = self.height_at(uv)
        return self.base + xi @ self.basis.T

    def node_points(self):
        """Ambient positions of all grid nodes, wrapped."""
        off = self.offsets()
        mesh = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1)
        return wrap(self.point(mesh.reshape(-1, 2)))


def _grid_slope(heights, step):
    """Max block-max slope over axis and diagonal node chords."""
    worst = 0.0
    for axis in (0, 1):
        if heights.shape[axis] > 1:
            worst = max(worst, np.abs(np.diff(heights, axis=axis)).max() / step)
    a = heights[1:, 1:] - heights[:-1, :-1]
    b = heights[1:, :-1] - heights[:-1, 1:]
    if a.size:
        worst = max(worst, np.abs(a).max() / step, np.abs(b).max() / step)
    return float(worst)


def flat_disk(aut, x, kind, rho, alpha, resolution=33, seed=None):
    """Disk with heights from seed (default flat) over the kind-plane at x.

    seed is a callable taking the (res, res, 2) node offset mesh and
    returning matching heights; it must respect the alpha slope bound and
    vanish at the center node.
    """
    if not hasattr(aut, "matrix"):
        aut = as_automorphism(aut)
    graph_idx, height_idx, P, P_inv, _ = _frames(aut, kind)
    off = np.linspace(-rho, rho, resolution)
    if seed is None:
        heights = np.zeros((resolution, resolution, 2))
    else:
        mesh = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1)
        heights = np.asarray(seed(mesh), dtype=float)
        center = resolution // 2
        if resolution % 2 == 1 and np.abs(heights[center, center]).max() > 0:
            raise ValueError("seed heights must vanish at the center node")
    step = off[1] - off[0]
    lip = _grid_slope(heights, step)
    if lip > alpha:
        raise ValueError("seed slope %.3g exceeds the cone aperture %.3g" % (lip, alpha))
    return LeafDisk(
        kind=kind,
        base=np.asarray(wrap(np.asarray(x, dtype=float))),
        rho=float(rho),
        alpha=float(alpha),
        heights=heights,
        graph_axes=tuple(graph_idx),
        height_axes=tuple(height_idx),
        basis=P,
        basis_inv=P_inv,
        lipschitz_bound=lip,
    )


def graph_transform_step(g, disk, target_center=None, rho=None, max_iter=40):
    """Push disk one step and re-parameterize as a graph at the image center.

    cu-disks move by g, cs-disks by g inverse.  The new node grid is
    pulled back through the map by a vectorized Newton solve (residual
    below 1e-12); the pulled-back nodes must stay inside the source
    domain, which is the non-shrinking conclusion (an image disk of
    inner radius below rho cannot cover the new grid).  Failures of the
    Newton solve or of the slope bound raise GraphFoldDetected: both
    mean the map bent the disk out of its cone.
    """
    fwd, inv, aut = _ops(g)
    step_map = fwd if disk.kind == "cu" else inv
    _, _, _, _, lam_graph = _frames(aut, disk.kind)
    rate = lam_graph if disk.kind == "cu" else 1.0 / lam_graph
    rho_new = disk.rho if rho is None else float(rho)

    if target_center is None:
        target_center = step_map(disk.base)
    b_new = np.asarray(wrap(np.asarray(target_center, dtype=float)))

    res = disk.resolution
    off = np.linspace(-rho_new, rho_new, res)
    mesh = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1)
    targets = mesh.reshape(-1, 2)

    graph_list = list(disk.graph_axes)
    height_list = list(disk.height_axes)
    Pg = disk.basis[:, graph_list]
    Ph = disk.basis[:, height_list]
    base = disk.base
    P_inv = disk.basis_inv

    def image_coords(U):
        xi = base + U @ Pg.T + disk.height_at(U) @ Ph.T
        img = step_map(wrap(xi))
        return minimal_lift(img - b_new) @ P_inv.T

    def graph_part(U):
        return image_coords(U)[:, graph_list]

    U = targets / rate
    limit = disk.rho * 1.05
    F = graph_part(U) - targets
    for _ in range(max_iter):
        if np.abs(F).max() < NEWTON_TOL:
            break
        J = np.empty((len(U), 2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = FD_STEP
            J[:, :, k] = (graph_part(U + e) - graph_part(U - e)) / (2 * FD_STEP)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.abs(det).min() < 1e-12:
            raise GraphFoldDetected(
                "re-parameterization jacobian is singular; image left the cone"
            )
        step = np.empty_like(U)
        step[:, 0] = (J[:, 1, 1] * F[:, 0] - J[:, 0, 1] * F[:, 1]) / det
        step[:, 1] = (J[:, 0, 0] * F[:, 1] - J[:, 1, 0] * F[:, 0]) / det
        norm = np.abs(step).max(axis=1, keepdims=True)
        cap = 0.5 * disk.rho
        step = step * np.minimum(1.0, cap / np.maximum(norm, 1e-300))
        U = np.clip(U - step, -limit, limit)
        F = graph_part(U) - targets
    else:
        raise GraphFoldDetected(
            "graph re-solve stalled at residual %.3g" % float(np.abs(F).max())
        )

    margin = float(disk.rho - np.abs(U).max())
    if margin < 0.0:
        raise GraphFoldDetected(
            "pulled-back nodes leave the source disk by %.3g; "
            "the image disk does not cover radius rho" % -margin
        )

    heights = image_coords(U)[:, height_list].reshape(res, res, 2)
    lip = _grid_slope(heights, off[1] - off[0])
    if lip > disk.alpha:
        raise GraphFoldDetected(
            "image slope %.3g exceeds the cone aperture %.3g" % (lip, disk.alpha)
        )
    return replace(
        disk,
        base=b_new,
        rho=rho_new,
        heights=heights,
        lipschitz_bound=lip,
        pullback_margin=margin,
        history=(),
    )


def _compute_disk(g, x, kind, iterations, resolution, rho, alpha, lam, seed, check_cauchy, floor):
    fwd, inv, aut = _ops(g)
    back = inv if kind == "cu" else fwd

    x = wrap(np.asarray(x, dtype=float))
    orbit = [x]
    for _ in range(iterations + (1 if check_cauchy else 0)):
        orbit.append(back(orbit[-1]))
    # orbit[k] is the k-th preimage; the chain walks it in reverse

    disk = flat_disk(aut, orbit[iterations], kind, rho, alpha, resolution, seed=seed)
    companion = None
    if check_cauchy:
        companion = flat_disk(aut, orbit[iterations + 1], kind, rho, alpha, resolution)
        companion = graph_transform_step(g, companion, target_center=orbit[iterations])

    history = []
    for k in range(iterations, 0, -1):
        disk = graph_transform_step(g, disk, target_center=orbit[k - 1])
        if companion is not None:
            companion = graph_transform_step(g, companion, target_center=orbit[k - 1])
            history.append(float(np.abs(disk.heights - companion.heights).max()))

    if check_cauchy and lam is not None:
        bound = 1.0 / float(lam) + 0.1
        bad = [r for r in cauchy_ratios(history, floor=floor) if r > bound]
        if bad:
            raise ConvergenceFailure(
                "graph sequence is not Cauchy at rate 1/%.3g: worst ratio %.3g"
                % (lam, max(bad))
            )
        if history and history[-1] > max(floor * 10.0, 1e-9):
            raise ConvergenceFailure(
                "successive disks still differ by %.3g after %d steps"
                % (history[-1], iterations)
            )
    return replace(disk, history=tuple(history))


def compute_cu_disk(
    g,
    x,
    iterations=16,
    resolution=33,
    rho=0.04,
    alpha=0.02,
    lam=None,
    seed=None,
    check_cauchy=True,
    floor=1e-11,
):
    """Center-unstable disk at x from iterations graph-transform steps.

    Seeds a flat (or seeded) disk at the iterations-th preimage of x and
    pushes it forward along the stored orbit.  With check_cauchy a
    companion chain seeded one preimage deeper runs alongside; the
    per-step sup-differences land in .history and must contract at rate
    1/lam + 0.1 while above the interpolation floor (the sequence sits
    exactly on the floor after 8..12 steps at the reference parameters,
    so ratios past the floor carry no information and are not scored).
    """
    return _compute_disk(
        g, x, "cu", iterations, resolution, rho, alpha, lam, seed, check_cauchy, floor
    )


def compute_cs_disk(
    g,
    x,
    iterations=16,
    resolution=33,
    rho=0.04,
    alpha=0.02,
    lam=None,
    seed=None,
    check_cauchy=True,
    floor=1e-11,
):
    """Center-stable disk at x; the cu construction for the inverse map."""
    return _compute_disk(
        g, x, "cs", iterations, resolution, rho, alpha, lam, seed, check_cauchy, floor
    )


def cauchy_ratios(history, floor=1e-11, burn_in=1):
    """Successive-difference ratios over the pre-floor regime."""
    out = []
    for a, b in zip(history[burn_in:], history[burn_in + 1 :]):
        if a > floor and b > floor:
            out.append(b / a)
    return tuple(out)


@dataclass(frozen=True)
class UniquenessReport:
    passed: bool
    mismatch: float
    n_overlap: int
    tol: float


def check_leaf_uniqueness(disk_a, disk_b, tol=1e-6, contact_tol=1e-8):
    """Do two same-kind disks agree as graphs where their domains overlap.

    Both disks are graphs over the same global plane, so the overlap
    comparison is height-against-height: nodes of one disk that fall in
    the other's domain are re-read through the other's interpolant.  The
    precondition is genuine contact (some node within contact_tol of the
    other graph); disks whose domains do not even overlap raise
    NotApplicable rather than reporting a vacuous pass.
    """
    if disk_a.kind != disk_b.kind:
        raise ValueError("cannot compare disks of different kinds")
    height_list = list(disk_a.height_axes)
    graph_list = list(disk_a.graph_axes)
    P_inv = disk_a.basis_inv

    def one_sided(src, dst):
        xi = minimal_lift(src.node_points() - dst.base) @ P_inv.T
        uv = xi[:, graph_list]
        inside = np.abs(uv).max(axis=1) <= dst.rho
        if not inside.any():
            return None, 0
        gap = xi[inside][:, height_list] - dst.height_at(uv[inside])
        return float(np.abs(gap).max()), int(inside.sum())

    gap_ab, n_ab = one_sided(disk_a, disk_b)
    gap_ba, n_ba = one_sided(disk_b, disk_a)
    if gap_ab is None and gap_ba is None:
        raise NotApplicable("disk domains do not overlap")
    worst = max(v for v in (gap_ab, gap_ba) if v is not None)
    return UniquenessReport(
        passed=bool(worst <= tol),
        mismatch=worst,
        n_overlap=n_ab + n_ba,
        tol=tol,
    )


@dataclass(frozen=True)
class EquivarianceReport:
    passed: bool
    mismatch: float
    base: tuple
    tol: float


def check_equivariance(
    g,
    x,
    kind="cu",
    iterations=16,
    resolution=33,
    rho=0.04,
    alpha=0.02,
    tol=1e-5,
    seed=None,
):
    """Compare the pushed disk at x with a freshly computed disk at its image.

    The push is one graph_transform_step, which already clips to the
    radius-rho ball at the image center, so the comparison is the sampled
    version of g(D_x) meet B(g x, rho) = D_{g x}.  Both disks share the
    node grid; the mismatch is the sup-difference of their heights.  A
    failing mismatch means the disk at x had not converged: seed controls
    its starting graph, and raising iterations must shrink the mismatch.
    """
    compute = compute_cu_disk if kind == "cu" else compute_cs_disk
    disk_x = compute(
        g, x, iterations=iterations, resolution=resolution, rho=rho, alpha=alpha,
        check_cauchy=False, seed=seed,
    )
    pushed = graph_transform_step(g, disk_x)
    fresh = compute(
        g, pushed.base, iterations=iterations, resolution=resolution, rho=rho,
        alpha=alpha, check_cauchy=False,
    )
    mismatch = float(np.abs(pushed.heights - fresh.heights).max())
    return EquivarianceReport(
        passed=bool(mismatch < tol),
        mismatch=mismatch,
        base=tuple(float(v) for v in pushed.base),
        tol=float(tol),
    )

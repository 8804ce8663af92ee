"""Cone fields, domination checks, and parameter bookkeeping.

Cones are anchored to the eigenbasis of the base automorphism and are
constant over the torus.  Every cone measurement in this module uses the
block-max norm in eigen coordinates: for w = basis_inv @ v split into the
stable and unstable blocks, ||v|| := max(|w_s|, |w_u|).  In that norm the
linear model stretches unstable-cone vectors by exactly its eigenvalue
moduli, so margins reported against analytic values are sharp instead of
carrying basis-conditioning factors (cond of the seed eigenbases exceeds
20, which would otherwise swamp the tolerances used by the callers).

The chord-level checks treat differences of nearby points through their
minimal lifts.  Image chords of unstable-cone offsets can stretch past
half a fundamental domain, where the minimal lift folds; those chords are
accumulated along subdivided segments instead (see _lifted_chords).
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DominationNotDetected, InfeasibleParameters, ZeroVector
from .torus import (
    as_automorphism,
    minimal_lift,
    spectral_decomposition,
    torus_distance,
    wrap,
)

__all__ = [
    "ConeField",
    "ConeInvarianceReport",
    "DominationReport",
    "NearHyperbolicityReport",
    "ParameterLedger",
    "check_cone_invariance",
    "check_gamma_near_hyperbolic",
    "check_respects_domination",
    "choose_parameters",
    "cone_contains",
    "cone_pair",
    "constraint_slack",
    "estimate_dominated_splitting",
    "stable_cone",
    "unstable_cone",
]


# ---------------------------------------------------------------------------
# cone fields


@dataclass(frozen=True)
class ConeField:
    """Constant cone of aperture alpha around a coordinate block.

    Membership: with w = basis_inv @ v, a vector is inside when
    |w[complement]| <= alpha * |w[primary]|.  The inequality is closed; a
    relative tolerance of 1e-14 keeps exact boundary vectors inside after
    the basis round trip.
    """

    basis: np.ndarray
    basis_inv: np.ndarray
    primary: tuple
    complement: tuple
    alpha: float
    label: str

    def coords(self, v):
        return np.asarray(v, dtype=float) @ self.basis_inv.T

    def block_norms(self, v):
        """(|w_primary|, |w_complement|) for each row of v."""
        w = self.coords(v)
        np_ = np.linalg.norm(w[..., list(self.primary)], axis=-1)
        nc = np.linalg.norm(w[..., list(self.complement)], axis=-1)
        return np_, nc

    def norm(self, v):
        """Block-max adapted norm (independent of which cone computes it)."""
        np_, nc = self.block_norms(v)
        return np.maximum(np_, nc)

    def contains(self, v):
        np_, nc = self.block_norms(v)
        total = np_ + nc
        if np.any(total == 0.0):
            raise ZeroVector("cone membership is undefined for the zero vector")
        return nc <= self.alpha * np_ + 1e-14 * total

    def margin(self, v):
        """alpha*|w_p| - |w_c|, normalized by the block-max norm.

        Positive inside, negative outside; no tolerance applied.
        """
        np_, nc = self.block_norms(v)
        total = np.maximum(np_, nc)
        if np.any(total == 0.0):
            raise ZeroVector("cone margin is undefined for the zero vector")
        return (self.alpha * np_ - nc) / total

    def from_blocks(self, w_primary, w_complement):
        """Assemble ambient vectors from block coordinates."""
        return _block_vectors(self, w_primary, w_complement) @ self.basis.T


def unstable_cone(A, alpha):
    s = spectral_decomposition(as_automorphism(A))
    return ConeField(
        basis=s.basis,
        basis_inv=s.basis_inv,
        primary=tuple(s.unstable),
        complement=tuple(s.stable),
        alpha=float(alpha),
        label="u",
    )


def stable_cone(A, alpha):
    s = spectral_decomposition(as_automorphism(A))
    return ConeField(
        basis=s.basis,
        basis_inv=s.basis_inv,
        primary=tuple(s.stable),
        complement=tuple(s.unstable),
        alpha=float(alpha),
        label="s",
    )


def cone_pair(A, alpha):
    return unstable_cone(A, alpha), stable_cone(A, alpha)


def cone_contains(cone, v):
    """Membership test for a single vector; ZeroVector when v vanishes."""
    out = cone.contains(np.atleast_2d(np.asarray(v, dtype=float)))
    return bool(out[0]) if np.ndim(v) == 1 else out


# ---------------------------------------------------------------------------
# shared sampling helpers


def _map_parts(g):
    """Duck-typed access to the pieces the checkers need.

    Accepts a DeformedMap, a ToralAutomorphism, an integer matrix, or any
    object exposing forward/inverse/jacobian.  Returns
    (forward, inverse, jacobian, aut_or_None, components, params).
    """
    if hasattr(g, "jacobian") and hasattr(g, "forward"):
        return (
            g.forward,
            g.inverse,
            g.jacobian,
            getattr(g, "aut", None),
            tuple(getattr(g, "components", ()) or ()),
            dict(getattr(g, "params", {}) or {}),
        )
    aut = as_automorphism(g)
    M = aut.matrix.astype(float)
    Mi = aut.inverse.astype(float)

    def fwd(x):
        return wrap(np.asarray(x, dtype=float) @ M.T)

    def inv(x):
        return wrap(np.asarray(x, dtype=float) @ Mi.T)

    def jac(x, inverse=False):
        x = np.asarray(x, dtype=float)
        J = Mi if inverse else M
        if x.ndim == 1:
            return J.copy()
        return np.broadcast_to(J, (x.shape[0],) + J.shape).copy()

    return fwd, inv, jac, aut, (), {}


def _sample_outside(rng, count, dim, components, margin):
    """Uniform points at torus distance > margin*radius from every support."""
    out = []
    needed = count
    for _ in range(64):
        cand = rng.random((max(needed * 2, 8), dim))
        keep = np.ones(len(cand), dtype=bool)
        for center, radius in components:
            keep &= torus_distance(cand, np.asarray(center)) > margin * radius
        cand = cand[keep]
        out.append(cand[:needed])
        needed -= len(cand[:needed])
        if needed <= 0:
            return np.concatenate(out, axis=0)
    raise RuntimeError("support exclusion rejected too many samples")


def _unit_rows(rng, n, k):
    v = rng.standard_normal((n, k))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return v / norms


def _block_vectors(cone, Wp, Wc):
    """Full eigen-coordinate vectors from primary/complement block rows."""
    Wp = np.atleast_2d(Wp)
    Wc = np.atleast_2d(Wc)
    w = np.zeros((Wp.shape[0], cone.basis.shape[0]))
    w[:, list(cone.primary)] = Wp
    w[:, list(cone.complement)] = Wc
    return w


def _marked_points(params, dim):
    pts = []
    for v in (params.get("fixed_points") or {}).values():
        a = np.asarray(v, dtype=float)
        if a.shape == (dim,):
            pts.append(a)
    return pts


# ---------------------------------------------------------------------------
# cone invariance (hypothesis H2, vector level)


@dataclass(frozen=True)
class ConeInvarianceReport:
    passed: bool
    lam: float
    alpha: float
    n_points: int
    n_vectors: int
    min_expansion_u: float
    min_expansion_s: float
    worst_containment_u: float
    worst_containment_s: float
    worst_point: tuple
    violations: tuple = ()
    notes: tuple = ()


def _cone_candidates(cone, rng, n_random):
    """Block-coordinate candidate vectors, unit in the block-max norm.

    Deterministic extremes first: the weakest and strongest primary axes
    alone, and the weakest dressed with each complement axis at full
    aperture.  Expansion extrema of block-diagonal maps sit on these,
    which keeps the linear-map margins exact.  Returns (Wp, Wc, n_det)
    where the first n_det rows are the deterministic set.
    """
    p, c = len(cone.primary), len(cone.complement)
    det_p = [np.eye(p)[0], np.eye(p)[-1]]
    det_c = [np.zeros(c), np.zeros(c)]
    for j in range(c):
        for sign in (1.0, -1.0):
            det_p.append(np.eye(p)[0])
            det_c.append(sign * cone.alpha * np.eye(c)[j])
    n_det = len(det_p)
    wp = _unit_rows(rng, n_random, p)
    t = np.where(rng.random(n_random) < 0.5, 1.0, rng.random(n_random))
    wc = cone.alpha * t[:, None] * _unit_rows(rng, n_random, c)
    Wp = np.vstack([np.array(det_p), wp])
    Wc = np.vstack([np.array(det_c), wc])
    return Wp, Wc, n_det


def _blockify(cone, J):
    """Jacobians conjugated into eigen coordinates, batched."""
    return cone.basis_inv @ J @ cone.basis


def _leg_margins(cone, W, Wp, Wc, lam, points, svd_extra=None):
    """Expansion and containment margins for one cone under block maps W.

    W has shape (n, d, d) in eigen coordinates.  Candidate vectors are the
    same block set at every point; svd_extra optionally appends per-point
    constructed worst cases (n, m_extra, d) in eigen coordinates.
    """
    n = W.shape[0]
    d = cone.basis.shape[0]
    m = Wp.shape[0]
    vecs = _block_vectors(cone, Wp, Wc)
    # all candidates have block-max norm 1 by construction
    if svd_extra is not None:
        all_vecs = np.concatenate(
            [np.broadcast_to(vecs, (n, m, d)), svd_extra], axis=1
        )
    else:
        all_vecs = np.broadcast_to(vecs, (n, m, d))
    img = np.einsum("nij,nmj->nmi", W, all_vecs)
    ip = np.linalg.norm(img[..., list(cone.primary)], axis=-1)
    ic = np.linalg.norm(img[..., list(cone.complement)], axis=-1)
    expansion = np.maximum(ip, ic)  # input norm is 1
    contain = (cone.alpha * ip - ic) / np.maximum(expansion, 1e-300)
    flat_exp = expansion.min(axis=1)
    flat_con = contain.min(axis=1)
    worst_exp = int(np.argmin(flat_exp))
    worst_con = int(np.argmin(flat_con))
    violations = []
    bad = np.where((flat_exp < lam) | (flat_con < -1e-12))[0]
    for i in bad[:8]:
        violations.append(
            (
                tuple(float(v) for v in points[i]),
                float(flat_exp[i]),
                float(flat_con[i]),
            )
        )
    return (
        float(expansion.min()),
        float(contain.min()),
        points[worst_exp if flat_exp[worst_exp] - lam < flat_con[worst_con] else worst_con],
        violations,
    )


def check_cone_invariance(
    g,
    cones,
    lam,
    sample_count=256,
    vectors_per_point=14,
    seed=0,
    support_margin=1.05,
):
    """Sampled check that Dg expands C^u by lam and preserves both cones.

    Points are drawn outside the deformation supports (metadata components,
    inflated by support_margin), where the hypotheses require the full
    strength lam.  Forward leg: for v in C^u, Dg v stays in C^u with
    block-max growth >= lam.  Dual leg: for v in C^s, Dg^{-1} v stays in
    C^s and grows by >= lam.  The dual leg also evaluates a constructed
    worst case per point: the top singular pair of K Auu^{-1}, where K and
    Auu are the mixing and unstable blocks of the forward Jacobian at the
    preimage.  That pair is the alignment at which a too-wide aperture
    first leaks through the inverse, so including it makes the failure
    examples deterministic rather than luck of the draw.
    """
    cu, cs = cones
    fwd, inv, jac, aut, components, params = _map_parts(g)
    dim = cu.basis.shape[0]
    rng = np.random.default_rng(seed)
    pts = _sample_outside(rng, sample_count, dim, components, support_margin)

    Jf = jac(pts)
    Wf = _blockify(cu, Jf)
    Wp, Wc, _ = _cone_candidates(cu, rng, vectors_per_point)
    exp_u, con_u, worst_u, viol_u = _leg_margins(cu, Wf, Wp, Wc, lam, pts)

    Ji = jac(pts, inverse=True)
    Wi = _blockify(cs, Ji)
    pre = inv(pts)
    Wf_pre = _blockify(cs, jac(pre))
    u_idx = list(cs.complement)
    s_idx = list(cs.primary)
    n = len(pts)
    extra = np.zeros((n, 2, dim))
    for i in range(n):
        Auu = Wf_pre[i][np.ix_(u_idx, u_idx)]
        Ksu = Wf_pre[i][np.ix_(s_idx, u_idx)]
        try:
            B = Ksu @ np.linalg.inv(Auu)
        except np.linalg.LinAlgError:
            continue
        U, _, Vt = np.linalg.svd(B)
        for k, sign in enumerate((1.0, -1.0)):
            w = np.zeros(dim)
            w[s_idx] = U[:, 0]
            w[u_idx] = sign * cs.alpha * Vt[0]
            extra[i, k] = w
    # rows left at zero would poison the margin scan; park them on the axis
    dead = np.all(extra == 0.0, axis=2)
    filler = np.zeros(dim)
    filler[s_idx[0]] = 1.0
    extra[dead] = filler
    Wp_s, Wc_s, _ = _cone_candidates(cs, rng, vectors_per_point)
    exp_s, con_s, worst_s, viol_s = _leg_margins(
        cs, Wi, Wp_s, Wc_s, lam, pts, svd_extra=extra
    )

    passed = (
        exp_u >= lam and exp_s >= lam and con_u >= -1e-12 and con_s >= -1e-12
    )
    worst = worst_u if (exp_u - lam) <= (exp_s - lam) else worst_s
    return ConeInvarianceReport(
        passed=bool(passed),
        lam=float(lam),
        alpha=float(cu.alpha),
        n_points=len(pts),
        n_vectors=Wp.shape[0],
        min_expansion_u=exp_u,
        min_expansion_s=exp_s,
        worst_containment_u=con_u,
        worst_containment_s=con_s,
        worst_point=tuple(float(v) for v in worst),
        violations=tuple(viol_u + viol_s),
    )


# ---------------------------------------------------------------------------
# near hyperbolicity (hypothesis H3)


@dataclass(frozen=True)
class NearHyperbolicityReport:
    passed: bool
    gamma: float
    c: float
    n_max: int
    n_points: int
    margin_cu: float
    margin_cs: float
    worst_cu: tuple
    worst_cs: tuple
    max_leak: float = 0.0
    notes: tuple = ()


def _orbit_planes(T_ad, T_ad_back, spec, split_depth):
    """Adapted-orthonormal cs/cu bases at every main orbit point.

    T_ad are the one-step transfer matrices in eigen coordinates along the
    extended orbit x_{-d}..x_{N-1} (d = split_depth tail on each side) and
    T_ad_back the d extra ones past x_{N_main}.  E^cu is seeded on the
    unstable axes at x_{-d} and swept forward with QR renormalization;
    E^cs is seeded on the stable axes at the far forward end and swept
    backward.  Either sweep contracts seed error by the domination ratio
    per step, so contamination at the main points is uniformly below
    ratio^{-d}; pushing a fixed estimated plane through the whole orbit
    instead would amplify its residual complement by the full unstable
    growth and drown the slow directions.
    """
    dim = T_ad.shape[1]
    k_s, k_u = len(spec.stable), len(spec.unstable)
    n_main = T_ad.shape[0] - split_depth + 1

    seed_u = np.zeros((dim, k_u))
    for j, idx in enumerate(spec.unstable):
        seed_u[idx, j] = 1.0
    q = np.linalg.qr(seed_u)[0]
    for k in range(split_depth):
        q = np.linalg.qr(T_ad_back[k] @ q)[0]
    q_cu = [q]
    for k in range(n_main - 1):
        q_cu.append(np.linalg.qr(T_ad[k] @ q_cu[-1])[0])

    seed_s = np.zeros((dim, k_s))
    for j, idx in enumerate(spec.stable):
        seed_s[idx, j] = 1.0
    q = np.linalg.qr(seed_s)[0]
    for k in range(T_ad.shape[0] - 1, n_main - 2, -1):
        q = np.linalg.qr(np.linalg.solve(T_ad[k], q))[0]
    q_cs = [q]
    for k in range(n_main - 2, -1, -1):
        q_cs.append(np.linalg.qr(np.linalg.solve(T_ad[k], q_cs[-1]))[0])
    q_cs.reverse()
    return q_cs, q_cu


def check_gamma_near_hyperbolic(
    g,
    splitting,
    gamma,
    c=2.0,
    n_max=50,
    sample_count=48,
    seed=0,
    split_depth=24,
    include_marked=True,
):
    """Finite-horizon certificate of gamma-near hyperbolicity.

    Along forward orbits of sampled points, checks for n = 1..n_max that
    the center-unstable plane never contracts below c^{-1} e^{-gamma n}
    and the center-stable plane never expands above c e^{gamma n}.
    Growth is measured on the restricted cocycle: one-step transfer
    matrices are projected onto the plane at the next orbit point before
    composing, so the residual complement of an estimated plane is cut at
    every step instead of being amplified by the full unstable growth of
    the long product (lambda_max^50 would otherwise bury the slow
    directions under 1e-10 of estimation dust).  The discarded component,
    relative to the image, is reported as max_leak; it certifies that the
    supplied or estimated plane field was actually invariant.  Singular
    values are taken in the adapted Euclidean norm (L2 on eigen
    coordinates); c absorbs the sqrt(2) gap to the block-max norm.

    splitting: None to estimate along each orbit by renormalized sweeps
    (seed error decays by the domination ratio per step, uniformly over
    the orbit), a callable x -> (E_cs, E_cu), or a constant (E_cs, E_cu)
    pair of ambient (d, k) bases.  Marked fixed points from the map
    metadata are always included in the sample set; the binding case for
    the deformed maps lives exactly there.
    """
    fwd, inv, jac, aut, components, params = _map_parts(g)
    spec = spectral_decomposition(aut)
    dim = spec.basis.shape[0]
    P, P_inv = spec.basis, spec.basis_inv
    rng = np.random.default_rng(seed)
    pts = [rng.random(dim) for _ in range(sample_count)]
    if include_marked:
        pts.extend(_marked_points(params, dim))

    margin_cu = math.inf
    margin_cs = math.inf
    worst_cu = ()
    worst_cs = ()
    max_leak = 0.0
    for x in pts:
        x = np.asarray(x, dtype=float)
        tail = np.empty((split_depth, dim))
        prev = x
        for k in range(split_depth):
            prev = inv(prev)
            tail[k] = prev
        n_ext = n_max + (split_depth if splitting is None else 0)
        orbit = np.empty((n_ext + 1, dim))
        orbit[0] = x
        for k in range(n_ext):
            orbit[k + 1] = fwd(orbit[k])
        J = jac(orbit[:-1])
        T_ad = np.einsum("ij,njk,kl->nil", P_inv, J, P)

        if splitting is None:
            J_back = jac(tail[::-1])
            T_back = np.einsum("ij,njk,kl->nil", P_inv, J_back, P)
            q_cs, q_cu = _orbit_planes(T_ad, T_back, spec, split_depth)
        else:
            q_cs, q_cu = [], []
            for k in range(n_max + 1):
                pair = splitting(orbit[k]) if callable(splitting) else splitting
                q_cs.append(np.linalg.qr(P_inv @ np.asarray(pair[0], float))[0])
                q_cu.append(np.linalg.qr(P_inv @ np.asarray(pair[1], float))[0])

        M_cs = np.eye(q_cs[0].shape[1])
        M_cu = np.eye(q_cu[0].shape[1])
        for n in range(1, n_max + 1):
            img_s = T_ad[n - 1] @ q_cs[n - 1]
            img_u = T_ad[n - 1] @ q_cu[n - 1]
            step_s = q_cs[n].T @ img_s
            step_u = q_cu[n].T @ img_u
            leak = max(
                np.linalg.norm(img_s - q_cs[n] @ step_s, 2) / np.linalg.norm(img_s, 2),
                np.linalg.norm(img_u - q_cu[n] @ step_u, 2) / np.linalg.norm(img_u, 2),
            )
            if leak > max_leak:
                max_leak = float(leak)
            M_cs = step_s @ M_cs
            M_cu = step_u @ M_cu
            s_max = np.linalg.svd(M_cs, compute_uv=False)[0]
            s_min = np.linalg.svd(M_cu, compute_uv=False)[-1]
            m_cu = s_min / (math.exp(-gamma * n) / c)
            m_cs = (c * math.exp(gamma * n)) / s_max
            if m_cu < margin_cu:
                margin_cu = m_cu
                worst_cu = (tuple(float(v) for v in x), n, float(s_min))
            if m_cs < margin_cs:
                margin_cs = m_cs
                worst_cs = (tuple(float(v) for v in x), n, float(s_max))
    return NearHyperbolicityReport(
        passed=bool(margin_cu >= 1.0 and margin_cs >= 1.0),
        gamma=float(gamma),
        c=float(c),
        n_max=int(n_max),
        n_points=len(pts),
        margin_cu=float(margin_cu),
        margin_cs=float(margin_cs),
        worst_cu=worst_cu,
        worst_cs=worst_cs,
        max_leak=float(max_leak),
    )


# ---------------------------------------------------------------------------
# dominated splitting estimation


def _adapted_plane(P_inv, P, B):
    """Re-express a plane with columns orthonormal in the adapted metric."""
    q, _ = np.linalg.qr(P_inv @ B)
    return P @ q, q


def _grassmann_distance(Qa, Qb):
    """sin of the largest principal angle between adapted-orthonormal planes."""
    return float(np.linalg.norm(Qa @ Qa.T - Qb @ Qb.T, 2))


def estimate_dominated_splitting(g, x, n=24, window=8, tol=1e-8, ell_max=64):
    """Power-iterate the invariant planes at x and measure the domination lag.

    E^cu(x) is the forward image of the unstable plane seeded at g^{-n}(x),
    E^cs(x) the backward image of the stable plane seeded at g^{n}(x).  The
    last `window` truncation depths must agree to `tol` in Grassmannian
    distance (adapted metric), otherwise the iteration has not stabilized
    and DominationNotDetected is raised.  The returned integer is the
    smallest ell <= ell_max with

        max |Dg^ell u| / min |Dg^ell v| <= 1/2

    over unit u in E^cs(x), v in E^cu(x), adapted Euclidean norm; if no
    such ell exists the same error is raised.  Returns (E_cs, E_cu, ell)
    with ambient (d, k) bases whose columns are adapted-orthonormal.
    """
    fwd, inv, jac, aut, components, params = _map_parts(g)
    spec = spectral_decomposition(aut)
    P, P_inv = spec.basis, spec.basis_inv
    dim = P.shape[0]
    x = np.asarray(x, dtype=float)

    back = np.empty((n + 1, dim))
    back[0] = x
    for k in range(n):
        back[k + 1] = inv(back[k])
    fore = np.empty((max(n, ell_max) + 1, dim))
    fore[0] = x
    for k in range(max(n, ell_max)):
        fore[k + 1] = fwd(fore[k])

    J_back = jac(back[1:])  # J_back[k] pushes planes at back[k+1] to back[k]
    Ji_fore = jac(fore[1:], inverse=True)

    def plane_from_depth(depth, seed_cols, jacs):
        B = P[:, seed_cols].copy()
        for j in range(depth, 0, -1):
            B = jacs[j - 1] @ B
            B = _adapted_plane(P_inv, P, B)[0]
        return _adapted_plane(P_inv, P, B)

    cu_planes = [
        plane_from_depth(d, list(spec.unstable), J_back)
        for d in range(n - window + 1, n + 1)
    ]
    cs_planes = [
        plane_from_depth(d, list(spec.stable), Ji_fore)
        for d in range(n - window + 1, n + 1)
    ]
    for planes, name in ((cu_planes, "cu"), (cs_planes, "cs")):
        qs = [q for _, q in planes]
        diam = max(
            _grassmann_distance(qa, qb) for qa in qs for qb in qs
        )
        if diam > tol:
            raise DominationNotDetected(
                "%s plane iteration not stabilized at depth %d (diameter %.3e)"
                % (name, n, diam)
            )
    E_cu, Q_cu = cu_planes[-1]
    E_cs, Q_cs = cs_planes[-1]

    J_fore = jac(fore[:ell_max])
    M_cs = Q_cs.copy()
    M_cu = Q_cu.copy()
    T = P_inv @ J_fore @ P
    ell = None
    for k in range(1, ell_max + 1):
        M_cs = T[k - 1] @ M_cs
        M_cu = T[k - 1] @ M_cu
        ratio = (
            np.linalg.svd(M_cs, compute_uv=False)[0]
            / np.linalg.svd(M_cu, compute_uv=False)[-1]
        )
        if ratio <= 0.5:
            ell = k
            break
    if ell is None:
        raise DominationNotDetected(
            "no domination lag <= %d at %s" % (ell_max, np.array2string(x))
        )
    return E_cs, E_cu, ell


# ---------------------------------------------------------------------------
# chord-level domination (hypothesis H2, the scale-rho statement)


@dataclass(frozen=True)
class DominationReport:
    passed: bool
    lam: float
    alpha: float
    rho: float
    n_points: int
    worst_pair_ratio: float
    worst_pair_point: tuple
    min_u_expansion: float
    max_s_ratio: float
    containment_u: float
    containment_s: float
    n_rejected: int
    notes: tuple = ()


def _lifted_chords(fwd, x, offsets, lip, max_step=0.2):
    """Image chords g(x+v) - g(x) accumulated along subdivided segments.

    A single minimal lift folds once the image difference passes half a
    period per coordinate; summing minimal lifts of consecutive segment
    images telescopes to the true lift difference as long as each segment
    image moves less than max_step.  Chords are bucketed by the
    subdivision they need: splitting a short chord adds roundoff without
    buying anything, and the roundoff would show up in the measured
    ratios at the 1e-11 level.
    """
    offsets = np.atleast_2d(offsets)
    out = np.empty_like(offsets)
    lens = np.linalg.norm(offsets, axis=1)
    need = np.maximum(np.ceil(lip * lens / max_step).astype(int), 1)
    buckets = 1 << np.ceil(np.log2(need)).astype(int)
    for b in np.unique(buckets):
        rows = np.where(buckets == b)[0]
        t = np.linspace(0.0, 1.0, b + 1)
        seg = wrap(x[None, None, :] + t[None, :, None] * offsets[rows][:, None, :])
        img = fwd(seg.reshape(len(rows) * (b + 1), -1)).reshape(
            len(rows), b + 1, -1
        )
        out[rows] = minimal_lift(np.diff(img, axis=1)).sum(axis=1)
    return out


_CHORD_LEVELS = (1.0, 2.0**-3, 2.0**-5)


def _chord_offsets(cone, rng, rho, n_random):
    """Ambient chord offsets inside the cone, adapted lengths <= rho.

    Deterministic direction extremes are laid down at geometric length
    levels from rho down to rho * 2^-5; random directions fill in at
    log-uniform lengths down to rho * 2^-6.  Image differences carry an
    absolute roundoff near 1e-14 from arithmetic on order-one
    coordinates, so chords much shorter than this would report ratios
    with relative noise above 1e-10; the zero-length limit of the chord
    family is measured separately through the Jacobian by the caller.
    """
    Wp, Wc, n_det = _cone_candidates(cone, rng, n_random)
    det_p, det_c = Wp[:n_det], Wc[:n_det]
    Wp_all = np.vstack([det_p] * len(_CHORD_LEVELS) + [Wp[n_det:]])
    Wc_all = np.vstack([det_c] * len(_CHORD_LEVELS) + [Wc[n_det:]])
    lens = np.concatenate(
        [np.full(n_det, rho * lvl) for lvl in _CHORD_LEVELS]
        + [rho * np.exp(rng.uniform(math.log(2.0**-6), 0.0, n_random))]
    )
    v = cone.from_blocks(Wp_all, Wc_all)
    # candidates are unit in block-max norm; scale sets the adapted length
    return v * lens[:, None], lens


def check_respects_domination(
    g,
    alpha,
    rho,
    lam,
    sample_count=48,
    chords_per_point=12,
    seed=0,
    base_points=None,
):
    """Chord-level domination test at scale rho.

    For each sampled base point x, chords y - x in C^u_alpha(x) with
    |y - x| <= rho and points z in B(x, rho) whose image chords
    g(z) - g(x) land in C^s_alpha(g(x)) must satisfy

        |g(y)-g(x)| / |y-x|  >  lam * |g(z)-g(x)| / |x-z|

    together with g(y)-g(x) in C^u_alpha(g(x)) and z - x in C^s_alpha(x).
    All lengths use the adapted block-max norm and chord differences are
    taken through minimal lifts (image chords via subdivided segments,
    since unstable stretches exceed half a period at this scale).

    z candidates come from two generators: stable-cone offsets from x
    filtered by the image-side premise, and pullbacks g^{-1}(g(x) + w) of
    short stable image chords, which exercise the premise exactly.
    Candidates failing the premise are dropped and counted, not failed.
    The zero-length limit of both chord families is measured through the
    Jacobian at x, where it is float-exact; that is where the weak germ
    multipliers of the deformed maps actually bind.  Base points default
    to uniform samples plus the deformation centers, their near fields,
    and the marked fixed points.
    """
    cu = unstable_cone(getattr(g, "aut", g), alpha)
    cs = stable_cone(getattr(g, "aut", g), alpha)
    fwd, inv, jac, aut, components, params = _map_parts(g)
    dim = cu.basis.shape[0]
    rng = np.random.default_rng(seed)
    lip = 1.1 * float(np.linalg.norm(aut.matrix.astype(float), 2))

    if base_points is None:
        pts = list(_marked_points(params, dim))
        for center, radius in components:
            center = np.asarray(center, dtype=float)
            pts.append(center)
            for scale in (0.5 * radius, 1.2 * radius, 0.3 * rho, 0.9 * rho):
                pts.append(wrap(center + scale * _unit_rows(rng, 1, dim)[0]))
        while len(pts) < sample_count:
            pts.append(rng.random(dim))
    else:
        pts = [np.asarray(p, dtype=float) for p in base_points]

    worst_ratio = math.inf
    worst_point = ()
    min_u = math.inf
    max_s = 0.0
    con_u = math.inf
    con_s = math.inf
    rejected = 0
    for x in pts:
        gx = fwd(x)
        vu, _ = _chord_offsets(cu, rng, rho, chords_per_point)
        img_u = _lifted_chords(fwd, x, vu, lip)
        num = cu.norm(img_u)
        den = cu.norm(vu)
        keep = den > 1e-300
        ratios_u = num[keep] / den[keep]
        con_u = min(con_u, float(cu.margin(img_u[keep]).min()))

        vs, _ = _chord_offsets(cs, rng, 0.9 * rho, chords_per_point)
        img_s = _lifted_chords(fwd, x, vs, lip)
        w_small, _ = _chord_offsets(cs, rng, rho / 24.0, max(chords_per_point // 2, 4))
        z_pull = inv(wrap(gx + w_small))
        vz = minimal_lift(z_pull - x)
        img_z = _lifted_chords(fwd, x, vz, lip)
        all_v = np.vstack([vs, vz])
        all_img = np.vstack([img_s, img_z])
        lens = cs.norm(all_v)
        ok = lens > 1e-300
        ok &= lens <= rho
        img_norm = cs.norm(all_img)
        ok &= img_norm > 0
        premise = np.zeros(len(all_v), dtype=bool)
        premise[ok] = cs.contains(all_img[ok])
        rejected += int(ok.sum() - premise.sum())
        if premise.any():
            ratios_s = img_norm[premise] / lens[premise]
            max_s_here = float(ratios_s.max())
            con_s = min(con_s, float(cs.margin(all_v[premise]).min()))
        else:
            max_s_here = 0.0

        # zero-length limit of the chord families: the Jacobian at x.
        # The conjugation patches squeeze the deformation germs to
        # ambient widths near 1e-7, so the weak multipliers at the marked
        # fixed points never show on measurable chords; they bind here.
        T = cu.basis_inv @ jac(x[None, :])[0] @ cu.basis
        Wp_u, Wc_u, _ = _cone_candidates(cu, rng, chords_per_point)
        img_vu = _block_vectors(cu, Wp_u, Wc_u) @ T.T
        up = np.linalg.norm(img_vu[:, list(cu.primary)], axis=1)
        uc = np.linalg.norm(img_vu[:, list(cu.complement)], axis=1)
        un = np.maximum(up, uc)
        ratios_u = np.concatenate([ratios_u, un])
        con_u = min(con_u, float(((cu.alpha * up - uc) / un).min()))
        Wp_s, Wc_s, _ = _cone_candidates(cs, rng, chords_per_point)
        img_vs = _block_vectors(cs, Wp_s, Wc_s) @ T.T
        sp = np.linalg.norm(img_vs[:, list(cs.primary)], axis=1)
        sc = np.linalg.norm(img_vs[:, list(cs.complement)], axis=1)
        sn = np.maximum(sp, sc)
        vec_premise = (sc <= cs.alpha * sp + 1e-14 * (sp + sc)) & (sn > 0)
        rejected += int(len(sn) - vec_premise.sum())
        if vec_premise.any():
            max_s_here = max(max_s_here, float(sn[vec_premise].max()))

        min_u_here = float(ratios_u.min())
        min_u = min(min_u, min_u_here)
        max_s = max(max_s, max_s_here)
        if max_s_here > 0:
            pair = min_u_here / max_s_here
            if pair < worst_ratio:
                worst_ratio = pair
                worst_point = tuple(float(v) for v in x)

    passed = worst_ratio > lam and con_u >= -1e-12 and con_s >= -1e-12
    return DominationReport(
        passed=bool(passed),
        lam=float(lam),
        alpha=float(alpha),
        rho=float(rho),
        n_points=len(pts),
        worst_pair_ratio=float(worst_ratio),
        worst_pair_point=worst_point,
        min_u_expansion=float(min_u),
        max_s_ratio=float(max_s),
        containment_u=float(con_u),
        containment_s=float(con_s),
        n_rejected=int(rejected),
    )


# ---------------------------------------------------------------------------
# parameter ledger


@dataclass(frozen=True)
class ParameterLedger:
    """The constants a deformation run commits to, with their couplings.

    rho, tau1, tau2, h1 are derived fields; constraint_slack() treats a
    drift from their defining relations as a violation.  chord_scale and
    deconc_radius (the scales below which chord hyperbolicity and
    non-concentration of high-entropy measures are invoked) have no closed
    form; the defaults here are conventions whose empirical support comes
    from the entropy checks, not from this module.
    """

    epsilon: float
    alpha: float
    gamma: float
    lam: float
    eta: float
    rho: float
    tau1: float
    tau2: float
    k_prod: float
    k_cone: float
    k_star: float
    eps_star: float
    eps0: float
    chord_scale: float
    deconc_radius: float
    h0: float
    h1: float
    h_top: float
    lam1: float
    dim: int
    n_centers: int

    def to_dict(self):
        d = asdict(self)
        d["format"] = "torusforge-ledger"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("format", None)
        d["dim"] = int(d["dim"])
        d["n_centers"] = int(d["n_centers"])
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def constraint_slack(ledger):
    """Signed slack of every ledger constraint; positive means satisfied.

    Equality couplings (rho, tau1, h1 definitions) are scored as
    1e-9 - |drift| so an exact ledger shows a small positive number.
    """
    L = ledger
    se = math.sqrt(L.epsilon) if L.epsilon > 0 else 0.0
    chord_bound = (
        (se + 2 * L.epsilon) / (se - 2 * L.epsilon)
        if se - 2 * L.epsilon > 0
        else math.inf
    )
    eps1 = ((L.lam - 1.0) / (2.0 * (L.lam + 1.0))) ** 2 if L.lam > 1 else 0.0
    kk = L.k_prod * L.k_star
    eps2 = min(
        eps1,
        1.0 / (2.0 * L.k_star) ** 2,
        L.tau1 / L.k_star,
        (2.0 / kk) ** 2 if kk > 0 else math.inf,
    )
    slack = {
        "epsilon_positive": L.epsilon,
        "alpha_positive": L.alpha,
        "alpha_below_one": 1.0 - L.alpha,
        "gamma_positive": L.gamma,
        "lambda_above_one": L.lam - 1.0,
        "lambda_below_hyperbolicity": L.lam1 - L.lam,
        "rho_positive": L.rho,
        "rho_definition": 1e-9 - abs(L.rho - (se - 2.0 * L.epsilon)),
        "lambda_chord_gap": L.lam - chord_bound,
        "eta_weak_expansion": (1.0 - L.eta) * math.log(L.lam) - L.eta
        if L.lam > 0
        else -math.inf,
        "eta_gamma_expansion": (1.0 - L.eta) * math.log(L.lam) - L.eta * L.gamma
        if L.lam > 0
        else -math.inf,
        "entropy_gap": L.h_top - L.h1,
        "h1_definition": 1e-9 - abs(L.h1 - (L.h0 + L.dim * L.gamma)),
        "tau1_definition": 1e-9 - abs(L.tau1 - L.tau2 / L.k_prod),
        "eps_below_eps1": eps1 - L.epsilon,
        "eps_below_eps2": eps2 - L.epsilon,
        "eps_below_tau2_shadow": L.tau2 / L.k_star - L.epsilon,
        "eps_below_deconcentration": L.deconc_radius / (1.0 + 2.0 * L.k_star + kk)
        - L.epsilon,
        "eps_below_chord_scale": L.chord_scale / kk - L.epsilon
        if kk > 0
        else -math.inf,
        "eps_below_product": 1.0 / (kk + 2.0) ** 2 - L.epsilon,
        "eps_below_eps0": L.eps0 - L.epsilon,
        "eps0_below_half_eps_star": L.eps_star / 2.0 - L.eps0,
    }
    return slack


def _epsilon_bounds(lam, tau1, tau2, k_prod, k_star, chord_scale, deconc_radius):
    eps1 = ((lam - 1.0) / (2.0 * (lam + 1.0))) ** 2
    kk = k_prod * k_star
    eps2 = min(eps1, 1.0 / (2.0 * k_star) ** 2, tau1 / k_star, (2.0 / kk) ** 2)
    return min(
        eps1,
        eps2,
        tau2 / k_star,
        deconc_radius / (1.0 + 2.0 * k_star + kk),
        chord_scale / kk,
        1.0 / (kk + 2.0) ** 2,
    )


def choose_parameters(A, n_centers=3, overrides=None):
    """Fill a feasible ParameterLedger for the automorphism A.

    The couplings run downstream from (gamma, lam, eta) to epsilon:
    tau2 = 4 rho and rho = sqrt(eps) - 2 eps both depend on epsilon, so
    epsilon is solved by iterating eps -> 0.75 * min(bounds(eps)) to a
    fixed point (the bounds are monotone in eps through tau1, so the
    iteration contracts in a few steps).  Overrides pin any ledger field;
    derived fields are recomputed from the overridden values unless they
    are themselves overridden.  Every constraint is then checked and the
    first violation raises InfeasibleParameters with the constraint name
    from constraint_slack.

    k_star (the shadowing constant) has no closed form.  When not
    overridden it is calibrated empirically by the shadowing module,
    which costs a deformation build; tests and quick runs should pass
    overrides={"k_star": ...}.
    """
    aut = as_automorphism(A)
    spec = spectral_decomposition(aut)
    ov = dict(overrides or {})
    dim = aut.dim
    gamma = float(ov.get("gamma", 0.0314))
    lam = float(ov.get("lam", (spec.lambda1 - 0.5) / math.exp(gamma)))
    if lam <= 1.0:
        raise InfeasibleParameters(
            "lambda_above_one violated: weakest expansion %.4f leaves no room"
            % spec.lambda1
        )
    eta = float(ov.get("eta", 0.5 * math.log(lam) / (1.0 + math.log(lam))))
    alpha = float(ov.get("alpha", 0.02))
    k_prod = float(ov.get("k_prod", 1.2 * spec.oblique_norm))
    # backward-orbit comparison constant for cone-trapped chords: a chord in
    # a cone of aperture alpha tilts the norm by at most this factor
    k_cone = float(
        ov.get("k_cone", math.sqrt(1.0 + alpha**2) / (1.0 - alpha))
    )
    if "k_star" in ov:
        k_star = float(ov["k_star"])
        eps_star = float(ov.get("eps_star", 0.2))
    else:
        from .shadow import calibrate_shadowing

        k_star, eps_star = calibrate_shadowing(aut)
        eps_star = float(ov.get("eps_star", eps_star))
    chord_scale = float(ov.get("chord_scale", 0.2))
    deconc_radius = float(ov.get("deconc_radius", 0.05))
    h0 = float(ov.get("h0", spec.entropy - 2.0 * dim * gamma))
    h1 = float(ov.get("h1", h0 + dim * gamma))

    if "epsilon" in ov:
        epsilon = float(ov["epsilon"])
        rho = float(ov.get("rho", math.sqrt(max(epsilon, 0.0)) - 2.0 * epsilon))
        tau2 = float(ov.get("tau2", 4.0 * rho))
        tau1 = float(ov.get("tau1", tau2 / k_prod))
        eps0 = float(ov.get("eps0", epsilon / 0.75))
    else:
        epsilon = 1e-3
        for _ in range(64):
            rho = math.sqrt(epsilon) - 2.0 * epsilon
            tau2 = 4.0 * rho
            tau1 = tau2 / k_prod
            bound = min(
                _epsilon_bounds(
                    lam, tau1, tau2, k_prod, k_star, chord_scale, deconc_radius
                ),
                eps_star / 2.0,
            )
            nxt = 0.75 * bound
            if abs(nxt - epsilon) < 1e-15:
                epsilon = nxt
                break
            epsilon = nxt
        rho = float(ov.get("rho", math.sqrt(epsilon) - 2.0 * epsilon))
        tau2 = float(ov.get("tau2", 4.0 * rho))
        tau1 = float(ov.get("tau1", tau2 / k_prod))
        eps0 = float(
            ov.get(
                "eps0",
                min(
                    _epsilon_bounds(
                        lam, tau1, tau2, k_prod, k_star, chord_scale, deconc_radius
                    ),
                    eps_star / 2.0,
                ),
            )
        )

    ledger = ParameterLedger(
        epsilon=epsilon,
        alpha=alpha,
        gamma=gamma,
        lam=lam,
        eta=eta,
        rho=rho,
        tau1=tau1,
        tau2=tau2,
        k_prod=k_prod,
        k_cone=k_cone,
        k_star=k_star,
        eps_star=eps_star,
        eps0=eps0,
        chord_scale=chord_scale,
        deconc_radius=deconc_radius,
        h0=h0,
        h1=h1,
        h_top=spec.entropy,
        lam1=spec.lambda1,
        dim=dim,
        n_centers=int(n_centers),
    )
    slack = constraint_slack(ledger)
    for name, value in slack.items():
        if not value > 0.0:
            raise InfeasibleParameters(
                "%s violated (slack %.6e)" % (name, value)
            )
    return ledger

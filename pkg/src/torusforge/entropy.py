"""Entropy estimators: Bowen covers, Katok measure entropy, periodic growth.

Counts r(eps, n) of dynamical balls needed to cover a sample set grow like
e^{h n} until the balls shrink below the sample spacing, after which every
count saturates at |Y| and the log-slope is exactly zero no matter what the
map does.  The estimators here keep that honest: saturated horizons (count
above SAT_FRAC of the attainable cap) are dropped from the fit window, and
a series whose every horizon saturated says so instead of reporting a fake
slope.

Two counting paths produce identical numbers.  The generic path caches
orbits of the sample set and runs a greedy lexicographic cover with a
static KD-tree prefilter.  For a linear map on the canonical m^d grid the
dynamical distance depends only on the integer offset, so the ball mask is
one global object and the greedy cover is index arithmetic; this exact
path is what makes 512^2-grid runs take seconds.  Greedy cover pivots are
pairwise separated by construction, so the separated count shares the
same engine (the classical sandwich collapses to equality at matched eps).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .errors import EmptySet, FitFailure, NotHyperbolic
from .torus import as_automorphism, minimal_lift, periodic_points, wrap

__all__ = [
    "SAT_FRAC",
    "EntropySeries",
    "EmpiricalMeasure",
    "NonConcentrationReport",
    "PeriodicLevel",
    "PeriodicGrowth",
    "grid_samples",
    "sobol_cloud",
    "orbit_measures",
    "spanning_count",
    "separated_count",
    "estimate_topological_entropy",
    "estimate_measure_entropy_katok",
    "estimate_local_entropy",
    "exact_linear_entropy",
    "check_non_concentration",
    "periodic_growth",
]

# a count at or above this fraction of the attainable cap is saturation:
# the balls are resolving the sample set, not the dynamics
SAT_FRAC = 0.35


def _forward(g):
    if hasattr(g, "forward"):
        return g.forward
    aut = as_automorphism(g)
    MT = aut.matrix.T.astype(float)
    return lambda x: wrap(np.asarray(x, dtype=float) @ MT)


def _linear_matrix(g):
    """Integer matrix when g is a bare automorphism, else None."""
    if hasattr(g, "forward"):
        return None
    try:
        return as_automorphism(g).matrix
    except Exception:
        return None


def grid_samples(resolution, dim=2):
    """Canonical regular grid (i/m, j/m, ...) in C order."""
    off = np.arange(resolution, dtype=float) / resolution
    mesh = np.meshgrid(*([off] * dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim)


def sobol_cloud(count, dim, seed=0):
    """Scrambled low-discrepancy cloud; powers of two keep the balance."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    k = count.bit_length() - 1
    if count == 1 << k:
        return sampler.random_base2(k)
    return sampler.random(count)


def orbit_measures(g, starts, length, burn_in=0, labels=None):
    """Uniform empirical measures on orbit segments, advanced as one batch."""
    fwd = _forward(g)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    B, d = starts.shape
    x = wrap(starts)
    for _ in range(burn_in):
        x = fwd(x)
    atoms = np.empty((length, B, d))
    for k in range(length):
        atoms[k] = x
        x = fwd(x)
    w = np.full(length, 1.0 / length)
    out = []
    for b in range(B):
        label = labels[b] if labels is not None else "orbit-%d" % b
        out.append(EmpiricalMeasure(atoms[:, b], w.copy(), label=label))
    return out


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms; long-orbit measures are treated as ergodic proxies."""

    atoms: np.ndarray
    weights: np.ndarray
    entropy: float = None
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.atoms):
            raise ValueError("weights must match atoms one to one")
        if not (w > 0).all() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")

    @classmethod
    def point_mass(cls, x, label="point"):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)), np.ones(1), label=label)

    @classmethod
    def from_orbit(cls, g, x0, length, burn_in=0, label="orbit"):
        return orbit_measures(g, x0, length, burn_in=burn_in, labels=[label])[0]

    def with_entropy(self, h):
        return EmpiricalMeasure(self.atoms, self.weights, float(h), self.label)


@dataclass(frozen=True)
class EntropySeries:
    """Counts per horizon with the fitted log-slope over the stable window.

    saturated means every requested horizon hit the cap fraction, so the
    slope is a floor artifact of the sample density, not a rate.  ns may
    be a prefix of the requested range: horizons past the first
    saturation are skipped, their counts carry no fit information.
    """

    epsilon: float
    ns: tuple
    counts: tuple
    slope: float
    r2: float
    window: tuple
    saturated: bool
    cap: int


def _fit_series(epsilon, ns, counts, cap):
    ns = np.asarray(ns, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = counts < SAT_FRAC * cap
    saturated = not keep.any()
    if saturated:
        fn, fc = ns, counts
    else:
        fn, fc = ns[keep], counts[keep]
        if len(fn) >= 4:
            skip = len(fn) // 4
            fn, fc = fn[skip:], fc[skip:]
    if len(fn) < 2:
        raise FitFailure(
            "only %d usable horizons at eps = %g (cap %d)" % (len(fn), epsilon, cap)
        )
    y = np.log(fc)
    slope, intercept = np.polyfit(fn, y, 1)
    resid = y - (slope * fn + intercept)
    tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 if tot == 0.0 else 1.0 - float((resid**2).sum()) / float(tot)
    if abs(slope) < 1e-12:
        slope = 0.0
    return EntropySeries(
        epsilon=float(epsilon),
        ns=tuple(int(v) for v in ns),
        counts=tuple(int(v) for v in counts),
        slope=float(slope),
        r2=float(r2),
        window=(int(fn[0]), int(fn[-1])),
        saturated=saturated,
        cap=int(cap),
    )


def _orbit_table(fwd, Y, n_max):
    orb = np.empty((n_max,) + Y.shape)
    orb[0] = Y
    for k in range(1, n_max):
        orb[k] = fwd(orb[k - 1])
    return orb


def _greedy_generic(orb, eps, n, stop_at=None, weights=None, mass_target=None):
    """Greedy lexicographic cover count over cached orbits.

    With weights the pass stops once the covered mass reaches mass_target
    (the Katok cover); with stop_at it stops once the count is deep into
    saturation, where its exact value no longer informs the slope fit.
    """
    base = orb[0]
    N = base.shape[0]
    tree = cKDTree(base, boxsize=1.0)
    covered = np.zeros(N, dtype=bool)
    eps2 = eps * eps
    count = 0
    mass = 0.0
    for i in range(N):
        if covered[i]:
            continue
        count += 1
        cand = np.asarray(
            tree.query_ball_point(base[i], eps * (1.0 + 1e-12), return_sorted=False),
            dtype=np.intp,
        )
        cand = cand[~covered[cand]]
        ok = np.ones(cand.size, dtype=bool)
        for k in range(n):
            delta = orb[k, cand[ok]] - orb[k, i]
            delta -= np.round(delta)
            ok[np.flatnonzero(ok)] = np.einsum("ij,ij->i", delta, delta) <= eps2
            if not ok.any():
                break
        hit = cand[ok]
        covered[hit] = True
        if weights is not None:
            mass += float(weights[hit].sum())
            if mass >= mass_target:
                break
        if stop_at is not None and count >= stop_at:
            break
    return count


def _grid_resolution(Y):
    N, d = Y.shape
    m = int(round(N ** (1.0 / d)))
    for mm in (m - 1, m, m + 1):
        if mm >= 1 and mm**d == N and np.array_equal(Y, grid_samples(mm, d)):
            return mm
    return None


def _dist2_int(v, m):
    c = np.minimum(v, m - v)
    return np.einsum("ij,ij->i", c, c)


def _greedy_mask(mask_offsets, m, d):
    """Cover Z_m^d greedily by translates of one offset mask."""
    strides = np.array([m**k for k in range(d - 1, -1, -1)], dtype=np.int64)
    N = m**d
    covered = np.zeros(N, dtype=bool)
    count = 0
    ptr = 0
    p = np.empty(d, dtype=np.int64)
    while ptr < N:
        if covered[ptr]:
            ptr += 1
            continue
        rem = ptr
        for k in range(d):
            p[k], rem = divmod(rem, int(strides[k])) if k < d - 1 else (rem, 0)
        cells = ((p + mask_offsets) % m) @ strides
        covered[cells] = True
        count += 1
    return count


def _linear_grid_counts(A_int, m, d, eps, ns):
    """Exact counts for a linear map on the canonical grid, all integer.

    Translation invariance turns the dynamical ball into one offset mask
    D_n(delta) = max_k |wrap(A^k delta)|; iterating delta -> A delta mod m
    keeps every entry small, so the distances are exact at any horizon.
    """
    idx = (
        np.indices((m,) * d)
        .reshape(d, -1)
        .T.astype(np.int64)
    )
    AT = np.asarray(A_int, dtype=np.int64).T
    v = idx.copy()
    best = _dist2_int(v, m)
    bound = (eps * m) ** 2
    want = set(int(n) for n in ns)
    out = {}
    for n in range(1, max(want) + 1):
        if n > 1:
            v = (v @ AT) % m
            best = np.maximum(best, _dist2_int(v, m))
        if n in want:
            out[n] = _greedy_mask(idx[best <= bound], m, d)
    return out


def _validate_samples(Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise EmptySet("sample set is empty")
    return Y


def spanning_count(g, eps, n, Y):
    """Greedy (eps, n)-cover cardinality of the sample set Y."""
    Y = _validate_samples(Y)
    if n < 1:
        raise ValueError("horizon must be at least 1")
    A = _linear_matrix(g)
    if A is not None:
        m = _grid_resolution(Y)
        if m is not None:
            return _linear_grid_counts(A, m, Y.shape[1], eps, [n])[n]
    return _greedy_generic(_orbit_table(_forward(g), Y, n), eps, n)


def separated_count(g, eps, n, Y):
    """Greedy maximal (eps, n)-separated subset size of Y.

    The greedy cover pivots are pairwise more than eps apart and every
    point is within eps of some pivot, so the lexicographic greedy
    produces the same pivot set for both counts; the sandwich
    separated(2 eps) <= spanning(eps) <= separated(eps) holds with the
    last inequality an equality at matched eps.
    """
    return spanning_count(g, eps, n, Y)


def estimate_topological_entropy(g, eps_list, n_range, Y, cap=None):
    """Per-eps slope fits of log r(eps, n); see EntropySeries for windows.

    Horizons past the first saturated one are skipped (their counts cost
    the most and inform the fit the least).  Slopes of non-saturated
    series must not decrease as eps shrinks, within 0.05 of noise.
    """
    Y = _validate_samples(Y)
    ns = sorted(int(n) for n in n_range)
    if len(ns) < 8:
        raise ValueError("need at least 8 horizons for a slope fit")
    cap = len(Y) if cap is None else int(cap)
    threshold = max(2, int(math.ceil(SAT_FRAC * cap)))

    A = _linear_matrix(g)
    m = _grid_resolution(Y) if A is not None else None
    series = []
    for eps in eps_list:
        if m is not None:
            counts = _linear_grid_counts(A, m, Y.shape[1], eps, ns)
            got_ns = ns
            got = [counts[n] for n in ns]
        else:
            orb = _orbit_table(_forward(g), Y, ns[-1])
            got_ns, got = [], []
            for n in ns:
                c = _greedy_generic(orb, eps, n, stop_at=threshold)
                got_ns.append(n)
                got.append(c)
                if c >= threshold:
                    break
        series.append(_fit_series(eps, got_ns, got, cap))

    usable = [(s.epsilon, s.slope) for s in series if not s.saturated]
    usable.sort(key=lambda t: -t[0])
    for (e_hi, s_hi), (e_lo, s_lo) in zip(usable, usable[1:]):
        if s_lo < s_hi - 0.05:
            raise FitFailure(
                "slope at eps = %g is %.3f, below the coarser eps = %g (%.3f)"
                % (e_lo, s_lo, e_hi, s_hi)
            )
    return series


def estimate_measure_entropy_katok(g, mu, eps, n_range):
    """Slope of the minimal half-mass dynamical cover of mu's atoms."""
    atoms = _validate_samples(mu.atoms)
    ns = sorted(int(n) for n in n_range)
    cap = len(atoms)
    threshold = max(2, int(math.ceil(SAT_FRAC * cap)))
    orb = _orbit_table(_forward(g), atoms, ns[-1])
    got_ns, got = [], []
    for n in ns:
        c = _greedy_generic(
            orb, eps, n, stop_at=threshold, weights=mu.weights, mass_target=0.5
        )
        got_ns.append(n)
        got.append(c)
        if c >= threshold:
            break
    return _fit_series(eps, got_ns, got, cap)


def estimate_local_entropy(
    g, eps, base_samples, inner_horizon, n_range, pool=4096, seed=0
):
    """Largest entropy estimate inside horizon-m dynamical eps-balls.

    For each base point the ball is sampled by rejection from the static
    eps-ball, then the cover estimator runs on the survivors at the finer
    scale eps/8.  Expansive maps leave singletons and score zero.
    """
    ns = sorted(int(n) for n in n_range)
    if inner_horizon < ns[-1]:
        raise ValueError("inner horizon must cover the fit range")
    base_samples = np.atleast_2d(np.asarray(base_samples, dtype=float))
    fwd = _forward(g)
    rng = np.random.default_rng(seed)
    d = base_samples.shape[1]
    worst = 0.0
    for x in base_samples:
        dirs = rng.normal(size=(pool, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = eps * rng.random(pool) ** (1.0 / d)
        cloud = wrap(x + dirs * radii[:, None])
        cur = np.vstack([x[None, :], cloud])
        alive = np.ones(len(cur), dtype=bool)
        ref_and_cloud = cur.copy()
        for _ in range(inner_horizon):
            ref_and_cloud = fwd(ref_and_cloud)
            delta = ref_and_cloud[1:] - ref_and_cloud[0]
            delta -= np.round(delta)
            alive[1:] &= np.einsum("ij,ij->i", delta, delta) <= eps * eps
        ball = np.vstack([x[None, :], cloud[alive[1:]]])
        if len(ball) < 2:
            continue
        orb = _orbit_table(fwd, ball, ns[-1])
        got = [_greedy_generic(orb, eps / 8.0, n) for n in ns]
        s = _fit_series(eps / 8.0, ns, got, len(ball))
        worst = max(worst, s.slope)
    return worst


def exact_linear_entropy(A):
    """Sum of log |eigenvalue| over the expanding part of the spectrum."""
    aut = as_automorphism(A)
    ev = np.linalg.eigvals(aut.matrix.astype(float))
    mods = np.abs(ev)
    if np.any(np.abs(mods - 1.0) < 1e-9):
        raise NotHyperbolic("eigenvalue modulus 1 within 1e-9")
    return float(np.log(mods[mods > 1.0]).sum())


@dataclass(frozen=True)
class NonConcentrationRow:
    label: str
    entropy: float
    mass: float
    qualifying: bool
    flagged: bool


@dataclass(frozen=True)
class NonConcentrationReport:
    """Mass each measure gives to the union of r-balls at the centers.

    A measure qualifies when its entropy estimate exceeds h0; a
    qualifying measure whose union mass reaches eta is flagged (it would
    witness a concentration the deformation is not supposed to allow).
    """

    rows: tuple
    h0: float
    eta: float
    r: float

    @property
    def n_qualifying(self):
        return sum(1 for row in self.rows if row.qualifying)

    @property
    def flagged(self):
        return tuple(row for row in self.rows if row.flagged)

    @property
    def passed(self):
        return not self.flagged


def check_non_concentration(measures, centers, r, h0, eta):
    """Report union-ball masses; measures carry their entropy estimates."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    rows = []
    for mu in measures:
        inside = np.zeros(len(mu.atoms), dtype=bool)
        for c in centers:
            delta = mu.atoms - c
            delta -= np.round(delta)
            inside |= np.einsum("ij,ij->i", delta, delta) <= r * r
        mass = float(mu.weights[inside].sum())
        h = mu.entropy if mu.entropy is not None else 0.0
        qualifying = h > h0
        rows.append(
            NonConcentrationRow(
                label=mu.label,
                entropy=float(h),
                mass=mass,
                qualifying=qualifying,
                flagged=bool(qualifying and mass >= eta),
            )
        )
    return NonConcentrationReport(rows=tuple(rows), h0=float(h0), eta=float(eta), r=float(r))


@dataclass(frozen=True)
class PeriodicLevel:
    period: int
    count: int
    attempted: int
    continued: int
    estimate: float


@dataclass(frozen=True)
class PeriodicGrowth:
    levels: tuple
    slope: float
    r2: float


def _apply_n(fwd, x, n):
    for _ in range(n):
        x = fwd(x)
    return x


def _continue_periodic(fwd, seeds, n, tol, max_iter, fd_step=1e-7, max_drift=1e-3):
    """Newton on g^n - id seeded at the linear periodic points, batched."""
    d = seeds.shape[1]
    X = seeds.copy()
    for _ in range(max_iter):
        F = minimal_lift(_apply_n(fwd, X, n) - X)
        act = np.abs(F).max(axis=1) > tol
        if not act.any():
            break
        Xa, Fa = X[act], F[act]
        J = np.empty((len(Xa), d, d))
        for c in range(d):
            e = np.zeros(d)
            e[c] = fd_step
            Fc = minimal_lift(_apply_n(fwd, wrap(Xa + e), n) - (Xa + e))
            J[:, :, c] = (Fc - Fa) / fd_step
        try:
            step = np.linalg.solve(J, Fa)
        except np.linalg.LinAlgError:
            step = np.stack(
                [np.linalg.lstsq(J[i], Fa[i], rcond=None)[0] for i in range(len(Xa))]
            )
        norm = np.abs(step).max(axis=1, keepdims=True)
        step = step * np.minimum(1.0, 0.05 / np.maximum(norm, 1e-300))
        Xa = wrap(Xa - step)
        X[act] = Xa
    F = minimal_lift(_apply_n(fwd, X, n) - X)
    drift = np.abs(minimal_lift(X - seeds)).max(axis=1)
    ok = (np.abs(F).max(axis=1) <= tol) & (drift <= max_drift)
    return int(ok.sum())


def periodic_growth(g, f_A, n_max, cap=2000, tol=1e-10, max_iter=40):
    """Continue linear period-n points into g and fit the count growth.

    Counts of the linear model are exact (|det(A^n - I)|); levels beyond
    cap representatives are subsampled, and the g-side estimate scales
    the exact count by the continuation success rate.  Newton failures
    are recorded per level, never fatal.
    """
    aut = as_automorphism(f_A)
    same = _linear_matrix(g) is not None and np.array_equal(
        _linear_matrix(g), aut.matrix
    )
    fwd = _forward(g)
    # the n-fold composition amplifies float noise by the spectral radius
    # per step, so the residual floor rises with n
    sp_radius = float(np.abs(np.linalg.eigvals(aut.matrix.astype(float))).max())
    levels = []
    for n in range(1, int(n_max) + 1):
        pd = periodic_points(aut, n, max_points=cap)
        seeds = np.asarray(pd.points, dtype=float)
        attempted = len(seeds)
        tol_n = max(tol, sp_radius**n * 1e-14)
        if same:
            continued = attempted
        else:
            continued = _continue_periodic(fwd, seeds, n, tol_n, max_iter)
        rate = continued / attempted if attempted else 0.0
        levels.append(
            PeriodicLevel(
                period=n,
                count=pd.count,
                attempted=attempted,
                continued=continued,
                estimate=pd.count * rate,
            )
        )
    usable = [(lv.period, math.log(lv.estimate)) for lv in levels if lv.estimate > 0]
    if len(usable) >= 4:
        usable = usable[len(usable) // 4 :]
    if len(usable) < 2:
        raise FitFailure("fewer than 2 levels with surviving periodic points")
    ns = np.array([u[0] for u in usable])
    ys = np.array([u[1] for u in usable])
    slope, intercept = np.polyfit(ns, ys, 1)
    resid = ys - (slope * ns + intercept)
    tot = ((ys - ys.mean()) ** 2).sum()
    r2 = 1.0 if tot == 0.0 else 1.0 - float((resid**2).sum()) / float(tot)
    return PeriodicGrowth(levels=tuple(levels), slope=float(slope), r2=float(r2))

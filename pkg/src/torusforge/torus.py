"""Integer toral automorphisms: spectra, fixed and periodic points, seed search.

Points on T^d = R^d / Z^d are float arrays with coordinates in [0, 1).
Batched functions accept shape (d,) or (n, d). All integer matrix work
(determinants, Smith form, adjugates) is done in exact Python ints; float
linear algebra only enters for eigen-data, which is Newton-polished against
the exact characteristic polynomial.
"""

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DegeneratePeriod,
    FixedPointSearchFailed,
    NotHyperbolic,
    SearchFailed,
    UnsupportedSpectrum,
)

HYPERBOLICITY_TOL = 1e-9


def wrap(x):
    """Reduce coordinates mod 1 into [0, 1)."""
    return np.asarray(x, dtype=float) % 1.0


def minimal_lift(v):
    """Shift each coordinate by an integer into [-1/2, 1/2]."""
    v = np.asarray(v, dtype=float)
    return v - np.round(v)


def torus_distance(x, y):
    """Flat torus distance: Euclidean norm of the minimal lift of x - y.

    Broadcasts over leading axes; returns a scalar for single points.
    """
    d = minimal_lift(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    return np.linalg.norm(d, axis=-1)


# ---------------------------------------------------------------------------
# exact integer helpers


def _int_rows(M):
    """Matrix as a list of lists of Python ints."""
    a = np.asarray(M)
    return [[int(round(float(a[i, j]))) for j in range(a.shape[1])] for i in range(a.shape[0])]


def det_exact(M):
    """Fraction-free Bareiss determinant over Python ints."""
    a = [row[:] for row in (M if isinstance(M, list) else _int_rows(M))]
    n = len(a)
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
            a[i][k] = 0
        prev = a[k][k]
    return sign * a[-1][-1]


def adjugate_exact(M):
    """Adjugate matrix over Python ints, adj(M) M = det(M) I."""
    rows = M if isinstance(M, list) else _int_rows(M)
    n = len(rows)
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [[rows[r][c] for c in range(n) if c != j] for r in range(n) if r != i]
            adj[j][i] = (-1) ** (i + j) * (det_exact(minor) if minor else 1)
    return adj


def _mat_mul_int(a, b):
    n, m, p = len(a), len(b), len(b[0])
    return [[sum(a[i][k] * b[k][j] for k in range(m)) for j in range(p)] for i in range(n)]


def _mat_pow_int(a, n):
    size = len(a)
    out = [[1 if i == j else 0 for j in range(size)] for i in range(size)]
    base = [row[:] for row in a]
    while n > 0:
        if n & 1:
            out = _mat_mul_int(out, base)
        base = _mat_mul_int(base, base)
        n >>= 1
    return out


def smith_normal_form(M):
    """U M V = D with U, V unimodular and D diagonal, d_i | d_{i+1}.

    Returns (U, D, V) as lists of lists of Python ints.
    """
    a = [row[:] for row in (M if isinstance(M, list) else _int_rows(M))]
    n = len(a)
    m = len(a[0])
    U = [[1 if i == j else 0 for j in range(n)] for i in range(n)]
    V = [[1 if i == j else 0 for j in range(m)] for i in range(m)]

    def swap_rows(i, j):
        a[i], a[j] = a[j], a[i]
        U[i], U[j] = U[j], U[i]

    def swap_cols(i, j):
        for r in range(n):
            a[r][i], a[r][j] = a[r][j], a[r][i]
        for r in range(m):
            V[r][i], V[r][j] = V[r][j], V[r][i]

    def add_row(src, dst, c):
        for j in range(m):
            a[dst][j] += c * a[src][j]
        for j in range(n):
            U[dst][j] += c * U[src][j]

    def add_col(src, dst, c):
        for r in range(n):
            a[r][dst] += c * a[r][src]
        for r in range(m):
            V[r][dst] += c * V[r][src]

    t = 0
    while t < min(n, m):
        # pivot: smallest nonzero entry in the remaining block
        piv = None
        for i in range(t, n):
            for j in range(t, m):
                if a[i][j] != 0 and (piv is None or abs(a[i][j]) < abs(a[piv[0]][piv[1]])):
                    piv = (i, j)
        if piv is None:
            break
        swap_rows(t, piv[0])
        swap_cols(t, piv[1])
        cleared = False
        while not cleared:
            cleared = True
            for i in range(t + 1, n):
                if a[i][t] != 0:
                    add_row(t, i, -(a[i][t] // a[t][t]))
                    if a[i][t] != 0:  # remainder strictly smaller, new pivot
                        swap_rows(t, i)
                        cleared = False
            for j in range(t + 1, m):
                if a[t][j] != 0:
                    add_col(t, j, -(a[t][j] // a[t][t]))
                    if a[t][j] != 0:
                        swap_cols(t, j)
                        cleared = False
        # divisibility: pivot must divide the whole remaining block
        bad = None
        for i in range(t + 1, n):
            if any(a[i][j] % a[t][t] != 0 for j in range(t + 1, m)):
                bad = i
                break
        if bad is not None:
            add_row(bad, t, 1)
            continue  # redo stage t, gcd can only shrink
        t += 1
    for t in range(min(n, m)):
        if a[t][t] < 0:
            for j in range(m):
                a[t][j] = -a[t][j]
            for j in range(n):
                U[t][j] = -U[t][j]
    return U, a, V


def char_poly_exact(M):
    """Characteristic polynomial coefficients, leading first, exact ints.

    Newton's identities on integer power sums; Fractions internally, the
    results are integers.
    """
    rows = M if isinstance(M, list) else _int_rows(M)
    n = len(rows)
    power = [[1 if i == j else 0 for j in range(n)] for i in range(n)]
    traces = []
    for _ in range(n):
        power = _mat_mul_int(power, rows)
        traces.append(sum(power[i][i] for i in range(n)))
    e = [Fraction(1)]
    for k in range(1, n + 1):
        s = Fraction(0)
        for i in range(1, k + 1):
            s += (-1) ** (i - 1) * e[k - i] * traces[i - 1]
        e.append(s / k)
    coeffs = [(-1) ** k * e[k] for k in range(n + 1)]
    assert all(c.denominator == 1 for c in coeffs)
    return [int(c) for c in coeffs]


# ---------------------------------------------------------------------------
# automorphism wrapper and spectral data


@dataclass(frozen=True)
class ToralAutomorphism:
    """Integer matrix with |det| = 1 acting on T^d."""

    matrix: np.ndarray
    inverse: np.ndarray
    det: int

    @classmethod
    def from_matrix(cls, M):
        a = np.asarray(M)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        if not np.allclose(a, np.round(a)):
            raise ValueError("matrix must have integer entries")
        rows = _int_rows(a)
        d = det_exact(rows)
        if abs(d) != 1:
            raise ValueError("matrix must have determinant +-1, got %d" % d)
        adj = adjugate_exact(rows)
        inv = [[v * d for v in row] for row in adj]  # det is +-1
        mat = np.array(rows, dtype=np.int64)
        mat.setflags(write=False)
        invm = np.array(inv, dtype=np.int64)
        invm.setflags(write=False)
        return cls(matrix=mat, inverse=invm, det=d)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def __call__(self, x):
        return apply_automorphism(self, x)

    def key(self):
        return self.matrix.tobytes() + bytes([self.dim])


def as_automorphism(A):
    if isinstance(A, ToralAutomorphism):
        return A
    return ToralAutomorphism.from_matrix(A)


def apply_automorphism(A, x, inverse=False):
    """wrap(A x), batched over leading axes."""
    aut = as_automorphism(A)
    M = aut.inverse if inverse else aut.matrix
    x = np.asarray(x, dtype=float)
    return wrap(x @ M.T.astype(float))


@dataclass(frozen=True)
class SpectralData:
    """Eigen-data of a hyperbolic automorphism with real simple spectrum.

    eigenvalues are sorted ascending by modulus. basis columns are unit
    eigenvectors, first nonzero component positive; basis_inv is the exact
    float inverse. The eigenbasis of the seed matrices here is far from
    orthogonal (cond can exceed 20), so adapted-norm computations must go
    through basis_inv rather than transposes.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray
    basis_inv: np.ndarray
    stable: tuple
    unstable: tuple
    lambda0: float
    mu0: float
    lambda1: float
    entropy: float
    cond: float
    min_angle_sin: float
    oblique_norm: float


def _newton_polish_roots(coeffs, roots, steps=4):
    c = np.asarray(coeffs, dtype=float)
    dc = c[:-1] * np.arange(len(c) - 1, 0, -1)
    r = np.array(roots, dtype=float)
    for _ in range(steps):
        r = r - np.polyval(c, r) / np.polyval(dc, r)
    return r


_SPECTRAL_CACHE = {}


def spectral_decomposition(A):
    """Spectral data for a hyperbolic integer automorphism.

    Raises NotHyperbolic if any eigenvalue modulus is 1 within 1e-9, and
    UnsupportedSpectrum for complex or repeated eigenvalues.
    """
    aut = as_automorphism(A)
    cached = _SPECTRAL_CACHE.get(aut.key())
    if cached is not None:
        return cached
    coeffs = char_poly_exact(_int_rows(aut.matrix))
    raw = np.roots(np.asarray(coeffs, dtype=float))
    if np.any(np.abs(np.abs(raw) - 1.0) < HYPERBOLICITY_TOL):
        raise NotHyperbolic("eigenvalue modulus 1 within %g" % HYPERBOLICITY_TOL)
    if np.any(np.abs(raw.imag) > 1e-9 * (1.0 + np.abs(raw.real))):
        raise UnsupportedSpectrum("complex eigenvalues")
    lam = _newton_polish_roots(coeffs, np.sort_complex(raw).real)
    lam = lam[np.argsort(np.abs(lam))]
    if np.min(np.diff(np.sort(lam))) < 1e-9 * max(1.0, np.max(np.abs(lam))):
        raise UnsupportedSpectrum("repeated eigenvalues")

    d = aut.dim
    P = np.zeros((d, d))
    M = aut.matrix.astype(float)
    for j, ev in enumerate(lam):
        B = M - ev * np.eye(d)
        _, _, vt = np.linalg.svd(B)
        v = vt[-1]
        nz = np.nonzero(np.abs(v) > 1e-9)[0][0]
        if v[nz] < 0:
            v = -v
        P[:, j] = v / np.linalg.norm(v)
    Pinv = np.linalg.inv(P)

    stable = tuple(int(i) for i in range(d) if abs(lam[i]) < 1.0)
    unstable = tuple(int(i) for i in range(d) if abs(lam[i]) > 1.0)
    if not stable or not unstable:
        raise UnsupportedSpectrum("need both stable and unstable eigenvalues")
    lambda0 = float(np.min(np.abs(lam[list(unstable)])))
    mu0 = float(np.max(np.abs(lam[list(stable)])))
    lambda1 = min(lambda0, 1.0 / mu0)
    entropy = float(np.sum(np.log(np.abs(lam[list(unstable)]))))

    # worst-case norm ratio between plane components: oblique projection
    # onto E^u along E^s (same value for the complementary projection)
    Pu = P[:, list(unstable)]
    Ps = P[:, list(stable)]
    proj_u = Pu @ Pinv[list(unstable), :]
    oblique = float(np.linalg.svd(proj_u, compute_uv=False)[0])
    # smallest principal angle between the stable and unstable planes
    qu, _ = np.linalg.qr(Pu)
    qs, _ = np.linalg.qr(Ps)
    cosines = np.linalg.svd(qu.T @ qs, compute_uv=False)
    min_sin = float(np.sqrt(max(0.0, 1.0 - float(np.max(cosines)) ** 2)))

    data = SpectralData(
        matrix=aut.matrix,
        eigenvalues=lam,
        basis=P,
        basis_inv=Pinv,
        stable=stable,
        unstable=unstable,
        lambda0=lambda0,
        mu0=mu0,
        lambda1=lambda1,
        entropy=entropy,
        cond=float(np.linalg.cond(P)),
        min_angle_sin=min_sin,
        oblique_norm=oblique,
    )
    _SPECTRAL_CACHE[aut.key()] = data
    return data


# ---------------------------------------------------------------------------
# periodic points


@dataclass(frozen=True)
class PeriodicData:
    """Exact period-n point count and (possibly subsampled) representatives."""

    period: int
    count: int
    points: np.ndarray
    subsampled: bool


def periodic_points(A, period, max_points=100000):
    """Points of period dividing n: count |det(A^n - I)| exact, reps via SNF.

    Representatives are exact rationals evaluated in float; if the count
    exceeds max_points a deterministic stride subsample is returned and
    flagged. Raises DegeneratePeriod when det(A^n - I) = 0.
    """
    aut = as_automorphism(A)
    d = aut.dim
    rows = _mat_pow_int(_int_rows(aut.matrix), period)
    M = [[rows[i][j] - (1 if i == j else 0) for j in range(d)] for i in range(d)]
    det = det_exact(M)
    if det == 0:
        raise DegeneratePeriod("det(A^%d - I) = 0" % period)
    count = abs(det)
    adj = adjugate_exact(M)
    if det < 0:
        adj = [[-v for v in row] for row in adj]
        det = -det
    # x = adj(M) m / det over coset representatives m = U^{-1} t,
    # t in prod [0, s_i) from the Smith form U M V = S
    U, S, _ = smith_normal_form(M)
    Uinv = adjugate_exact(U)
    du = det_exact(U)
    if du == -1:
        Uinv = [[-v for v in row] for row in Uinv]
    diag = [S[i][i] for i in range(d)]
    assert math.prod(diag) == count
    total = count
    stride = max(1, -(-total // max_points))  # ceil
    picked = range(0, total, stride)
    pts = np.empty((len(picked), d), dtype=float)
    for row_out, flat in enumerate(picked):
        t = []
        rem = flat
        for s in reversed(diag):
            t.append(rem % s)
            rem //= s
        t.reverse()
        m = [sum(Uinv[i][j] * t[j] for j in range(d)) for i in range(d)]
        num = [sum(adj[i][j] * m[j] for j in range(d)) % det for i in range(d)]
        pts[row_out] = [n / det for n in num]
    return PeriodicData(period=period, count=count, points=pts, subsampled=stride > 1)


def fixed_points(A):
    """All fixed points of A on the torus, exact."""
    return periodic_points(A, 1, max_points=10**6)


def choose_stage_centers(A, count=3):
    """Deterministic pick of `count` non-origin fixed points.

    Maximizes the minimal pairwise torus distance, distance to the origin
    included since the origin stays undeformed; ties broken lexicographically.
    """
    aut = as_automorphism(A)
    reps = fixed_points(aut).points
    nonzero = [p for p in reps if np.linalg.norm(minimal_lift(p)) > 1e-12]
    if len(nonzero) < count:
        raise FixedPointSearchFailed(
            "need %d non-origin fixed points, found %d" % (count, len(nonzero))
        )
    nonzero.sort(key=lambda p: tuple(p))
    origin = np.zeros(aut.dim)
    best = None
    best_score = -1.0
    for combo in itertools.combinations(range(len(nonzero)), count):
        pts = [nonzero[i] for i in combo] + [origin]
        score = min(
            torus_distance(pts[i], pts[j])
            for i in range(len(pts))
            for j in range(i + 1, len(pts))
        )
        if score > best_score + 1e-12:
            best_score = score
            best = combo
    return np.array([nonzero[i] for i in best]), best_score


# ---------------------------------------------------------------------------
# seed matrix search


def _companion(coeffs_desc):
    """Companion matrix of a monic integer polynomial, coefficients leading first."""
    n = len(coeffs_desc) - 1
    C = [[0] * n for _ in range(n)]
    for i in range(1, n):
        C[i][i - 1] = 1
    for i in range(n):
        C[i][n - 1] = -coeffs_desc[n - i]
    return C


def find_bv_matrix(max_a=40):
    """Deterministic search for a 4D seed automorphism with split spectrum.

    Scans reciprocal quartics t^4 - a t^3 + b t^2 - a t + 1 (so the spectrum
    comes in inverse pairs) and powers C^k, k <= 3, accepting the first one
    with four distinct positive real eigenvalues, lambda_2 < 1/3, lambda_3 > 3
    and at least 4 fixed points. The b range is where all four roots are real
    and positive.
    """
    for a in range(3, max_a + 1):
        for b in range(2 * a - 1, (a * a + 8) // 4 + 1):
            C = _companion([1, -a, b, -a, 1])
            if det_exact(C) != 1:
                continue
            for k in (1, 2, 3):
                rows = _mat_pow_int(C, k)
                try:
                    aut = ToralAutomorphism.from_matrix(np.array(rows, dtype=np.int64))
                    spec = spectral_decomposition(aut)
                except (NotHyperbolic, UnsupportedSpectrum, ValueError, OverflowError):
                    continue
                lam = spec.eigenvalues
                if len(lam) != 4 or np.any(lam <= 0):
                    continue
                if not (lam[1] < 1.0 / 3.0 and lam[2] > 3.0):
                    continue
                MI = [[rows[i][j] - (1 if i == j else 0) for j in range(4)] for i in range(4)]
                if abs(det_exact(MI)) < 4:
                    continue
                return aut
    raise SearchFailed("no seed matrix with a <= %d" % max_a)


CAT_MAP = np.array([[2, 1], [1, 1]], dtype=np.int64)

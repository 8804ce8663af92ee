"""Compactly supported planar vector fields with exact Jacobians.

Fields live on the closed unit disk of a chart plane. Hamiltonian kinds are
built as X = J grad(G(x) phi(r)) from a polynomial stream function G and a
radial C^2 cutoff phi, so their divergence vanishes identically (the
Jacobian J.Hess is assembled from a symmetric Hessian, making the float
trace exactly zero as well). The Stretch kind is deliberately not
divergence free.
"""

from dataclasses import dataclass

import numpy as np

FIELD_KINDS = ("Saddle", "Center", "Stretch", "Homoclinic")


@dataclass(frozen=True)
class CutoffFunction:
    """Radial quintic-smoothstep bump: 1 on [0, r_in], 0 beyond r_out, C^2.

    value/d1/d2 are derivatives with respect to r, batched over arrays.
    """

    r_in: float = 0.05
    r_out: float = 0.95

    def _s(self, r):
        return (np.asarray(r, dtype=float) - self.r_in) / (self.r_out - self.r_in)

    def value(self, r):
        s = np.clip(self._s(r), 0.0, 1.0)
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)

    def d1(self, r):
        s = self._s(r)
        inside = (s > 0.0) & (s < 1.0)
        s = np.where(inside, s, 0.0)
        return np.where(inside, -30.0 * s**2 * (1.0 - s) ** 2 / (self.r_out - self.r_in), 0.0)

    def d2(self, r):
        s = self._s(r)
        inside = (s > 0.0) & (s < 1.0)
        s = np.where(inside, s, 0.0)
        val = -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (self.r_out - self.r_in) ** 2
        return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class PlanarVectorField:
    """One of the FIELD_KINDS on the unit disk.

    rate is the linearization strength at the origin: Saddle has
    DX(0) = rate*diag(-1, 1), Center DX(0) = rate*J, Homoclinic uses rate as
    the overall Hamiltonian scale delta. Stretch ignores rate and uses
    stretch_rates = (b1, b2) with DX(0) = diag(b1, b2).
    """

    kind: str
    rate: float
    cutoff: CutoffFunction = CutoffFunction()
    stretch_rates: tuple = None
    cubic: float = 3.0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError("unknown field kind %r" % (self.kind,))
        if self.kind == "Stretch" and self.stretch_rates is None:
            raise ValueError("Stretch needs stretch_rates")

    @property
    def volume_preserving(self):
        return self.kind != "Stretch"

    # stream data: G, grad G, Hess G (Hamiltonian kinds only)
    def _stream(self, x):
        x1, x2 = x[..., 0], x[..., 1]
        n = x.shape[:-1]
        H = np.zeros(n + (2, 2))
        if self.kind == "Saddle":
            G = -self.rate * x1 * x2
            g = np.stack([-self.rate * x2, -self.rate * x1], axis=-1)
            H[..., 0, 1] = -self.rate
            H[..., 1, 0] = -self.rate
        elif self.kind == "Center":
            G = -0.5 * self.rate * (x1**2 + x2**2)
            g = np.stack([-self.rate * x1, -self.rate * x2], axis=-1)
            H[..., 0, 0] = -self.rate
            H[..., 1, 1] = -self.rate
        elif self.kind == "Homoclinic":
            d, k = self.rate, self.cubic
            G = d * (0.5 * x2**2 - 0.5 * x1**2 + (k / 3.0) * x1**3)
            g = np.stack([d * (-x1 + k * x1**2), d * x2], axis=-1)
            H[..., 0, 0] = d * (-1.0 + 2.0 * k * x1)
            H[..., 1, 1] = d
        else:
            raise ValueError("no stream function for %s" % self.kind)
        return G, g, H

    def value(self, x):
        """Field values, shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        phi = self.cutoff.value(r)
        if self.kind == "Stretch":
            b = np.asarray(self.stretch_rates)
            return b * x * phi[..., None]
        G, g, _ = self._stream(x)
        dphi = self.cutoff.d1(r)
        rsafe = np.where(r > 0, r, 1.0)
        xhat = x / rsafe[..., None]
        grad = g * phi[..., None] + (G * dphi)[..., None] * xhat
        # X = J grad with J = [[0, 1], [-1, 0]]
        return np.stack([grad[..., 1], -grad[..., 0]], axis=-1)

    def jacobian(self, x):
        """Exact Jacobians, shape (..., 2, 2)."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        phi = self.cutoff.value(r)
        dphi = self.cutoff.d1(r)
        ddphi = self.cutoff.d2(r)
        rsafe = np.where(r > 0, r, 1.0)
        xhat = x / rsafe[..., None]
        if self.kind == "Stretch":
            b = np.asarray(self.stretch_rates)
            J = np.zeros(x.shape[:-1] + (2, 2))
            J[..., 0, 0] = b[0] * phi
            J[..., 1, 1] = b[1] * phi
            J += (b * x)[..., :, None] * (dphi[..., None] * xhat)[..., None, :]
            return J
        G, g, HG = self._stream(x)
        # Hess(G phi) = phi HG + gradG (x) gradphi + gradphi (x) gradG + G Hess(phi)
        gp = dphi[..., None] * xhat
        S = phi[..., None, None] * HG
        S += g[..., :, None] * gp[..., None, :] + gp[..., :, None] * g[..., None, :]
        # Hess(phi) = ddphi xhat xhat^T + (dphi/r)(I - xhat xhat^T), zero at r = 0
        outer = xhat[..., :, None] * xhat[..., None, :]
        eye = np.zeros_like(outer)
        eye[..., 0, 0] = 1.0
        eye[..., 1, 1] = 1.0
        dphir = np.where(r > 0, dphi / rsafe, 0.0)
        Hphi = ddphi[..., None, None] * outer + dphir[..., None, None] * (eye - outer)
        S += G[..., None, None] * Hphi
        # DX = J S, trace = S21 - S12 = 0 exactly for symmetric S
        J = np.empty_like(S)
        J[..., 0, :] = S[..., 1, :]
        J[..., 1, :] = -S[..., 0, :]
        return J

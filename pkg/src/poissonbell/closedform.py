"""Explicit kernels: classical half-space, Caffarelli-Silvestre, and the
homogeneous family ``L = (p^2+q^2) y^{2/mu-2} d_xx - 2q y^{1/mu-1} d_xy + d_yy``.

Profiles follow ``P_{(x,y)}(x') = y^{-1/mu} P(y^{-1/mu}(x' - x))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, loggamma


def _dist2(x, x0, d):
    x = np.asarray(x, dtype=float)
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return (x - x0.reshape(()) if x0.size == 1 else x - x0) ** 2
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}")
    return np.sum((x - x0) ** 2, axis=-1)


def classical_kernel(d: int, x, y: float, x0=None):
    """Poisson kernel of the upper half-space in ``R^{d+1}``."""
    if y <= 0:
        raise ValueError("y must be positive")
    c = math.exp(gammaln((d + 1) / 2) - (d + 1) / 2 * math.log(math.pi))
    return c * y / (_dist2(x, x0, d) + y * y) ** ((d + 1) / 2)


def cs_kernel(d: int, alpha: float, x, y: float, x0=None):
    """Caffarelli-Silvestre kernel for the extension of order ``alpha``.

    Normalised to unit mass: ``Gamma((d+alpha)/2) / (pi^{d/2} Gamma(alpha/2))``.
    An extra ``1/alpha`` in front would leave mass ``1/alpha``.
    """
    if not 0 < alpha < 2:
        raise ValueError("alpha must lie in (0, 2)")
    if y <= 0:
        raise ValueError("y must be positive")
    logc = gammaln((d + alpha) / 2) - d / 2 * math.log(math.pi) - gammaln(alpha / 2)
    return math.exp(logc) * y**alpha / (_dist2(x, x0, d) + y * y) ** ((d + alpha) / 2)


@dataclass(frozen=True)
class HomogeneousKernelParams:
    """Parameters of the homogeneous family and its profile constant."""

    p: float
    q: float
    mu: float

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("p must be nonnegative")
        if not 0 < self.mu < 2:
            raise ValueError("mu must lie in (0, 2)")
        if self.p == 0 and (self.q == 0 or self.mu == 1):
            raise ValueError("p = 0 needs q != 0 and mu != 1 (otherwise the kernel is a point mass)")

    @property
    def shift(self) -> float:
        return self.mu * self.q

    @property
    def kappa(self) -> float:
        """Exponent ``(1-mu) q / p`` of the arctan factor (p > 0)."""
        return (1.0 - self.mu) * self.q / self.p

    @property
    def beta(self) -> float:
        """Coefficient of ``-1/(x - mu q)`` in the exponent (p = 0)."""
        return (1.0 - self.mu) * self.mu * self.q

    @property
    def log_C(self) -> float:
        mu = self.mu
        if self.p > 0:
            z = complex((1 + mu) / 2, (1 - mu) * self.q / (2 * self.p))
            assert z.real > 0
            return (
                mu * math.log(2 * mu * self.p)
                - math.log(2 * math.pi)
                - gammaln(mu)
                + 2.0 * loggamma(z).real
            )
        return mu * math.log(abs(self.beta)) - gammaln(mu)

    @property
    def C(self) -> float:
        return math.exp(self.log_C)


class HomogeneousProfile:
    """Callable profile ``P`` with exact first and second derivatives."""

    def __init__(self, params: HomogeneousKernelParams):
        self.params = params

    def _log_parts(self, x):
        pr = self.params
        s = np.asarray(x, dtype=float) - pr.shift
        mu = pr.mu
        if pr.p > 0:
            mp = mu * pr.p
            h = s * s + mp * mp
            logp = pr.log_C + pr.kappa * np.arctan(s / mp) - 0.5 * (mu + 1) * np.log(h)
            d1 = (pr.kappa * mp - (mu + 1) * s) / h
            d2 = (-(mu + 1) * h - (pr.kappa * mp - (mu + 1) * s) * 2 * s) / (h * h)
            return logp, d1, d2, np.ones_like(s, dtype=bool)
        beta = pr.beta
        inside = s * np.sign(beta) > 0
        ss = np.where(inside, s, np.sign(beta))
        logp = pr.log_C - beta / ss - (mu + 1) * np.log(np.abs(ss))
        d1 = beta / ss**2 - (mu + 1) / ss
        d2 = -2 * beta / ss**3 + (mu + 1) / ss**2
        return logp, d1, d2, inside

    def __call__(self, x):
        logp, _, _, inside = self._log_parts(x)
        return np.where(inside, np.exp(logp), 0.0)

    def derivatives(self, x):
        """``(P, P', P'')`` evaluated from the logarithmic derivative."""
        logp, d1, d2, inside = self._log_parts(x)
        P = np.where(inside, np.exp(logp), 0.0)
        return P, P * d1, P * (d1 * d1 + d2)


def homogeneous_profile(params: HomogeneousKernelParams, x=None):
    """The profile as a callable, or its values at ``x`` when given."""
    prof = HomogeneousProfile(params)
    return prof if x is None else prof(x)


def _fd_derivatives(P: Callable, x, h: float):
    x = np.asarray(x, dtype=float)
    f = [P(x + k * h) for k in (-2, -1, 0, 1, 2)]
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    return f[2], d1, d2


def homogeneous_ode_residual(P, params: HomogeneousKernelParams, x_grid, fd_step: Optional[float] = None):
    """Max relative residual of the profile ODE on ``x_grid``.

    Each point's residual is divided by the sum of the absolute values of
    the three terms.  Exact derivatives are used when ``P`` provides them,
    otherwise fourth-order central differences.
    """
    x = np.asarray(x_grid, dtype=float)
    if hasattr(P, "derivatives") and fd_step is None:
        f, d1, d2 = P.derivatives(x)
    else:
        f, d1, d2 = _fd_derivatives(P, x, fd_step or 1e-3)
    mu, q, p = params.mu, params.q, params.p
    c2 = x * x - 2 * mu * q * x + mu * mu * (p * p + q * q)
    c1 = (3 + mu) * x - 4 * mu * q
    terms = np.stack([c2 * d2, c1 * d1, (mu + 1) * f])
    scale = np.sum(np.abs(terms), axis=0)
    lhs = np.abs(np.sum(terms, axis=0))
    ok = scale > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(lhs[ok] / scale[ok]))


def scale_kernel(P: Callable, y: float, mu: float, x: float = 0.0):
    """``x' -> y^{-1/mu} P(y^{-1/mu} (x' - x))``."""
    if y <= 0:
        raise ValueError("y must be positive")
    s = y ** (-1.0 / mu)

    def scaled(xp):
        return s * P(s * (np.asarray(xp, dtype=float) - x))

    scaled.derivatives = lambda xp: tuple(
        s ** (k + 1) * v for k, v in enumerate(_derivs(P, s * (np.asarray(xp, dtype=float) - x)))
    )
    return scaled


def _derivs(P, z):
    if hasattr(P, "derivatives"):
        return P.derivatives(z)
    return _fd_derivatives(P, z, 1e-3)


def unscale_kernel(Py: Callable, y: float, mu: float, x: float = 0.0):
    """Inverse of ``scale_kernel``: recover ``P`` from ``P_{(x,y)}``."""
    s = y ** (1.0 / mu)

    def prof(z):
        return s * Py(s * np.asarray(z, dtype=float) + x)

    return prof


def homogeneous_kernel_at_height(params: HomogeneousKernelParams, y: float):
    """``z -> P_y(z)`` in the ``P_{(x,y)}(x') = P_y(x - x')`` convention."""
    prof = HomogeneousProfile(params)
    s = y ** (-1.0 / params.mu)
    return lambda z: s * prof(-s * np.asarray(z, dtype=float))


def cs_height(p: float, mu: float, y: float) -> float:
    """Height at which ``cs_kernel(alpha=mu)`` equals the ``q = 0`` profile at ``y``."""
    return mu * p * y ** (1.0 / mu)

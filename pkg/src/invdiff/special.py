"""Mittag-Leffler function on the negative real axis and its classical bounds.

Only real arguments ``z <= 0`` are supported, which is all that is needed to
evaluate mode decay factors ``E_{alpha,beta}(-lambda t^alpha)``.

Evaluation strategy
-------------------
* ``|z| <= 1``: the defining power series, summed until the terms drop below
  double precision.
* ``|z| > 1``: trapezoidal quadrature of the inverse Laplace transform of
  ``s^(alpha-beta) / (s^alpha - z)`` along a parabolic contour. For
  ``alpha <= 1`` and ``z < 0`` the integrand has no singularities off the
  branch cut, so no residues are needed.
* ``alpha == beta == 1``: ``exp(z)`` directly, to keep relative accuracy
  where the exponential underflows faster than the contour error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, gammaln

__all__ = [
    "DomainError",
    "MLParams",
    "mittag_leffler",
    "ml_upper_bound",
    "ml_lower_bound",
    "ml_derivative_identity_check",
]

# Series is used up to this |z|; the contour takes over beyond it.
SERIES_CUTOFF = 1.0
# Number of contour nodes on each side of the real axis.
CONTOUR_NODES = 16
_MAX_SERIES_TERMS = 20000


class DomainError(ValueError):
    """Raised when parameters fall outside the supported domain."""


@dataclass(frozen=True)
class MLParams:
    """Parameters ``(alpha, beta)`` of the two-parameter Mittag-Leffler function."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        _check_params(self.alpha, self.beta)

    def __call__(self, z):
        return mittag_leffler(self.alpha, self.beta, z)


def _check_params(alpha, beta):
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha!r}")
    if not (beta > 0.0):
        raise DomainError(f"beta must be positive, got {beta!r}")


def _series(alpha, beta, z):
    # terms z^k / Gamma(alpha k + beta); stop once 1/Gamma(.) < 1e-18 (|z| <= 1)
    k_needed = 1
    while gammaln(alpha * k_needed + beta) < 42.0 and k_needed < _MAX_SERIES_TERMS:
        k_needed += 1
    k = np.arange(k_needed + 1)
    inv_gamma = np.exp(-gammaln(alpha * k + beta))
    # Horner evaluation keeps it vectorised over z.
    out = np.zeros_like(z)
    for c in inv_gamma[::-1]:
        out = out * z + c
    return out


def _contour(alpha, beta, z, n_nodes=CONTOUR_NODES):
    h = 3.0 / n_nodes
    mu = np.pi * n_nodes / 12.0
    u = np.arange(-n_nodes, n_nodes + 1) * h
    s = mu * (1j * u + 1.0) ** 2
    ds = 2j * mu * (1j * u + 1.0)
    weights = np.exp(s) * ds * s ** (alpha - beta) * (h / (2j * np.pi))
    sa = s**alpha
    vals = (weights[None, :] / (sa[None, :] - z[:, None])).sum(axis=1)
    return vals.real


def mittag_leffler(alpha, beta, z):
    """Evaluate ``E_{alpha,beta}(z)`` for real ``z <= 0``.

    Parameters
    ----------
    alpha : float
        Order, ``0 < alpha <= 1``.
    beta : float
        Second parameter, ``beta > 0``.
    z : float or array_like
        Non-positive argument(s).

    Returns
    -------
    float or ndarray
        Same shape as ``z``.
    """
    _check_params(alpha, beta)
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr > 0):
        raise DomainError("only non-positive arguments are supported")
    flat = z_arr.ravel()
    out = np.empty_like(flat)

    if alpha == 1.0 and beta == 1.0:
        out[:] = np.exp(flat)
    else:
        small = np.abs(flat) <= SERIES_CUTOFF
        if np.any(small):
            out[small] = _series(alpha, beta, flat[small])
        if np.any(~small):
            out[~small] = _contour(alpha, beta, flat[~small])
    out = out.reshape(z_arr.shape)
    return float(out) if out.ndim == 0 else out


def ml_upper_bound(alpha, x):
    """Upper bound ``1 / (1 + x / Gamma(1 + alpha))`` for ``E_{alpha,1}(-x)``."""
    if not (0.0 < alpha <= 1.0):
        raise DomainError(f"alpha must lie in (0, 1], got {alpha!r}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("x must be non-negative")
    return 1.0 / (1.0 + x / gamma(1.0 + alpha))


def ml_lower_bound(alpha, x):
    """Lower bound ``1 / (1 + Gamma(1 - alpha) x)`` for ``E_{alpha,1}(-x)``.

    Undefined at ``alpha = 1`` where ``Gamma(0)`` has a pole.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("x must be non-negative")
    return 1.0 / (1.0 + gamma(1.0 - alpha) * x)


def ml_derivative_identity_check(alpha, lam, s, h):
    """Residual of ``d/ds E_{a,1}(-lam s^a) = -lam s^(a-1) E_{a,a}(-lam s^a)``.

    The derivative is approximated by a centred difference with step ``h``,
    so the residual is ``O(h^2)``.
    """
    if s - h <= 0:
        raise DomainError("need s - h > 0")
    lhs = lam * s ** (alpha - 1.0) * mittag_leffler(alpha, alpha, -lam * s**alpha)
    fwd = mittag_leffler(alpha, 1.0, -lam * (s + h) ** alpha)
    bwd = mittag_leffler(alpha, 1.0, -lam * (s - h) ** alpha)
    return abs(lhs + (fwd - bwd) / (2.0 * h))

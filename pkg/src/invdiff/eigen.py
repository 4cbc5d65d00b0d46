"""Sturm-Liouville eigenpairs, the Liouville normal form and transformation kernels.

The kernel ``K(x, t)`` of the transformation operator between
``-d^2/dx^2 + P`` and ``-d^2/dx^2 + Q`` solves the Goursat problem

    K_xx - K_tt = (Q(x) - P(t)) K,    K(x, x) = c + 1/2 int_0^x (Q - P),

with ``c = 0`` and ``K`` odd in ``t`` for Dirichlet data at ``x = 0``, and
``c = h`` with ``K`` even in ``t`` for impedance data ``u'(0) = h u(0)``.
In the characteristic variables ``xi = (x+t)/2``, ``eta = (x-t)/2`` this is
the Volterra equation

    G(xi, eta) = G(xi, 0) + G(0, eta) - G(0, 0) + int_0^xi int_0^eta F G,

solved here by successive approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import eigh_tridiagonal

from .discretization import (
    BoundaryCondition,
    Grid,
    SampledField,
    assemble_operator,
    differentiate,
    flux_derivative,
    integrate_cumulative,
    l2_norm,
)

__all__ = [
    "EigenSystem",
    "CanonicalForm",
    "GLKernel",
    "KernelConvergenceError",
    "LipschitzReport",
    "discrete_modes",
    "solve_eigen",
    "liouville_transform",
    "eigenvalue_asymptotics_check",
    "gl_kernel",
    "lipschitz_diagnostics",
]

DEFAULT_MODES = 10


class KernelConvergenceError(RuntimeError):
    """Successive approximation for the kernel did not reach the tolerance."""

    def __init__(self, sweeps: int, residual: float):
        super().__init__(f"kernel iteration stalled after {sweeps} sweeps (residual {residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


def discrete_modes(grid, a, q, bc_left, bc_right, n_modes):
    """Lowest eigenpairs of the assembled operator.

    Returns
    -------
    lam : ndarray, shape (n_modes,)
    phi : ndarray, shape (len(index), n_modes)
        Eigenvectors on the non-Dirichlet nodes, orthonormal in the weighted
        inner product ``sum(weights * f * g)``.
    weights : ndarray
        Quadrature weights ``h * w_i`` on the non-Dirichlet nodes.
    index : ndarray
        Node indices of the non-Dirichlet nodes.
    """
    op = assemble_operator(grid, a, q, bc_left, bc_right)
    d, e, idx, w = op.symmetric_tridiagonal()
    if n_modes > idx.size:
        raise ValueError("more modes requested than unknowns")
    lam, v = eigh_tridiagonal(d, e, select="i", select_range=(0, n_modes - 1))
    weights = grid.h * w
    phi = v / np.sqrt(weights)[:, None]
    return lam, phi, weights, idx


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenvalues with eigenfunctions under the shooting normalisation.

    ``eigenfunctions[n]`` has ``u'(0) = 1`` when the left condition is
    Dirichlet and ``u(0) = 1`` otherwise. ``orthonormal`` keeps copies with unit
    L2 norm (columns), used for expansions.
    """

    eigenvalues: np.ndarray
    eigenfunctions: tuple
    orthonormal: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return self.eigenvalues.size


def solve_eigen(
    grid: Grid,
    a,
    q,
    bc_left: Optional[BoundaryCondition] = None,
    bc_right: Optional[BoundaryCondition] = None,
    n_modes: int = DEFAULT_MODES,
) -> EigenSystem:
    """Lowest ``n_modes`` eigenpairs of ``-(a u')' + q u = lambda u``."""
    bc_left = bc_left or BoundaryCondition.dirichlet()
    bc_right = bc_right or BoundaryCondition.dirichlet()
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if n_modes > grid.n_nodes / 8:
        raise ValueError(
            f"{n_modes} modes are under-resolved on {grid.n_nodes} nodes (limit n_nodes/8)"
        )
    lam, phi, weights, idx = discrete_modes(grid, a, q, bc_left, bc_right, n_modes)
    full = np.zeros((grid.n_nodes, n_modes))
    full[idx] = phi
    full_w = np.zeros(grid.n_nodes)
    full_w[idx] = weights
    funcs = []
    for k in range(n_modes):
        f = SampledField(grid, full[:, k])
        if bc_left.kind == "dirichlet":
            scale = differentiate(f).values[0]
        else:
            scale = f.values[0]
        funcs.append(f / scale)
    return EigenSystem(lam, tuple(funcs), full, full_w)


@dataclass(frozen=True, eq=False)
class CanonicalForm:
    """Potential form ``-v'' + Q v = lambda v`` on ``(0, L)`` of a divergence-form operator.

    ``ell`` samples the map ``x -> y`` on the original grid; ``x_of_y`` samples
    its inverse on the uniform ``y`` grid of ``Q``.
    """

    length: float
    Q: SampledField
    ell: SampledField
    x_of_y: np.ndarray

    def on_unit_interval(self) -> SampledField:
        """``L^2 Q(L s)`` on ``(0, 1)``; its eigenvalues are ``L^2`` times the originals."""
        g = Grid(self.Q.grid.n_nodes, 1.0)
        return SampledField(g, self.length**2 * self.Q.values)


def liouville_transform(a: SampledField, q: SampledField) -> CanonicalForm:
    """Map ``-(a u')' + q u`` to potential form with ``y = int_0^x a^(-1/2)``."""
    if a.grid != q.grid:
        raise ValueError("a and q must share a grid")
    if np.any(a.values <= 0):
        raise ValueError("diffusion coefficient must be strictly positive")
    grid = a.grid
    ell = integrate_cumulative(a.with_values(a.values ** -0.5))
    length = float(ell.values[-1])
    m = a.with_values(a.values ** -0.25)
    inner = flux_derivative(a, m)
    q_x = q.values - a.values**0.25 * inner.values

    y_grid = Grid(grid.n_nodes, length)
    x_of_y = PchipInterpolator(ell.values, grid.nodes)(y_grid.nodes)
    x_of_y[0], x_of_y[-1] = 0.0, grid.length
    Q = SampledField(y_grid, CubicSpline(grid.nodes, q_x)(x_of_y))
    return CanonicalForm(length, Q, ell, x_of_y)


def eigenvalue_asymptotics_check(Q: SampledField, eigenvalues) -> np.ndarray:
    """Residuals ``lambda_n - n^2 pi^2 - int Q + int Q cos(2 n pi t)`` on ``(0, 1)``."""
    lam = np.asarray(eigenvalues, dtype=float)
    x = Q.grid.nodes
    h = Q.grid.h
    n = np.arange(1, lam.size + 1)
    mean = np.trapezoid(Q.values, dx=h)
    cos_mom = np.trapezoid(Q.values[None, :] * np.cos(2 * np.pi * n[:, None] * x[None, :]), dx=h, axis=1)
    return lam - (n * np.pi) ** 2 - mean + cos_mom


@dataclass(frozen=True, eq=False)
class GLKernel:
    """Kernel samples ``K[p, r] = K(x_p, t_r)`` for ``r <= p`` (NaN above the diagonal)."""

    grid: Grid
    K: np.ndarray
    Q: SampledField
    P: SampledField
    boundary_h: Optional[float]
    sweeps: int
    residual: float

    def diagonal(self) -> np.ndarray:
        return np.diag(self.K).copy()

    def triangle(self):
        """``(x, t, K)`` triples for ``0 <= t <= x``, rows ordered by ``x`` then ``t``."""
        p, r = np.tril_indices(self.grid.n_nodes)
        x = self.grid.nodes
        return x[p], x[r], self.K[p, r]

    def sup(self) -> float:
        return float(np.nanmax(np.abs(self.K)))


def _cumtrapz2(f, k):
    g = cumulative_trapezoid(f, dx=k, axis=0, initial=0.0)
    return cumulative_trapezoid(g, dx=k, axis=1, initial=0.0)


def gl_kernel(
    Q: SampledField,
    P: Optional[SampledField] = None,
    boundary_h: Optional[float] = None,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> GLKernel:
    """Transformation kernel from ``-d^2 + P`` to ``-d^2 + Q`` on the unit triangle.

    Parameters
    ----------
    Q, P : SampledField
        Potentials on a common grid over ``(0, 1)``; ``P`` defaults to zero.
    boundary_h : float or None
        ``None`` gives the Dirichlet (odd) kernel; a number ``h`` gives the
        impedance (even) kernel with ``K(x, x) = h + 1/2 int_0^x (Q - P)``.
    tol, max_sweeps
        Stopping rule of the successive approximation (sup norm of the update).

    Raises
    ------
    KernelConvergenceError
        If ``max_sweeps`` sweeps do not reach ``tol``.
    """
    grid = Q.grid
    if P is None:
        P = Q * 0.0
    if P.grid != grid:
        raise ValueError("P and Q must share a grid")
    n = grid.n_nodes
    N2 = 2 * (n - 1)
    k = grid.h / 2.0
    s = np.arange(N2 + 1) * k
    s[-1] = min(s[-1], grid.length)
    q_fine = CubicSpline(grid.nodes, Q.values)(s)
    p_fine = CubicSpline(grid.nodes, P.values)(s)
    d_int = cumulative_trapezoid(q_fine - p_fine, dx=k, initial=0.0)

    i = np.arange(N2 + 1)
    inside = (i[:, None] + i[None, :]) <= N2
    x_idx = np.minimum(i[:, None] + i[None, :], N2)
    t_idx = np.abs(i[:, None] - i[None, :])
    F = np.where(inside, q_fine[x_idx] - p_fine[t_idx], 0.0)

    if boundary_h is None:
        d_plus, d_minus, corner = 0.5 * d_int, -0.5 * d_int, 0.0
    else:
        d_plus = boundary_h + 0.5 * d_int
        d_minus = d_plus
        corner = float(boundary_h)
    base = np.where(inside, d_plus[:, None] + d_minus[None, :] - corner, 0.0)

    G = base.copy()
    residual = np.inf
    for sweep in range(1, max_sweeps + 1):
        G_new = base + np.where(inside, _cumtrapz2(F * G, k), 0.0)
        residual = float(np.max(np.abs(G_new - G)))
        G = G_new
        if residual <= tol * max(1.0, float(np.max(np.abs(G)))):
            break
    else:
        raise KernelConvergenceError(max_sweeps, residual)

    pp, rr = np.tril_indices(n)
    K = np.full((n, n), np.nan)
    K[pp, rr] = G[pp + rr, pp - rr]
    return GLKernel(grid, K, Q, P, boundary_h, sweep, residual)


@dataclass(frozen=True)
class LipschitzReport:
    """Empirical Lipschitz ratios against ``||Q1 - Q2||_2``; NaN when the potentials coincide."""

    eig_gap_ratio: float
    kernel_gap_ratio: float
    efunc_gap_ratio: float

    @property
    def skipped(self) -> bool:
        return bool(np.isnan(self.eig_gap_ratio))


def lipschitz_diagnostics(Q1: SampledField, Q2: SampledField, n_modes: int = DEFAULT_MODES) -> LipschitzReport:
    """Eigenvalue, kernel and eigenfunction gaps relative to the potential gap.

    Both potentials live on ``(0, 1)`` with Dirichlet conditions. Eigenfunctions
    are compared with unit L2 norm and positive slope at ``x = 0``.
    """
    if Q1.grid != Q2.grid:
        raise ValueError("potentials must share a grid")
    gap = l2_norm(Q1.values - Q2.values, Q1.grid.h)
    if gap == 0.0:
        nan = float("nan")
        return LipschitzReport(nan, nan, nan)
    grid = Q1.grid
    one = Q1 * 0.0 + 1.0
    e1 = solve_eigen(grid, one, Q1, n_modes=n_modes)
    e2 = solve_eigen(grid, one, Q2, n_modes=n_modes)
    eig = float(np.max(np.abs(e1.eigenvalues - e2.eigenvalues)))

    def unit(es):
        return [np.sqrt(2.0 * lam) * f.values for lam, f in zip(es.eigenvalues, es.eigenfunctions)]

    ef = max(float(np.max(np.abs(f - g))) for f, g in zip(unit(e1), unit(e2)))
    k1, k2 = gl_kernel(Q1), gl_kernel(Q2)
    kern = float(np.nanmax(np.abs(k1.K - k2.K)))
    return LipschitzReport(eig / gap, kern / gap, ef / gap)

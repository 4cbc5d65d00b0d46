"""Time stepping for ``D_t^alpha u - (a u')' + q f(u) = r`` on an interval.

``alpha = 1`` uses implicit Euler (default) or Crank-Nicolson; ``alpha < 1``
uses the L1 approximation of the Caputo derivative on a uniform time mesh.
A truncated eigenfunction expansion is provided as an independent oracle for
linear problems with homogeneous boundary data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gamma

from .discretization import (
    BoundaryCondition,
    Grid,
    SampledField,
    assemble_operator,
    flux_derivative,
)
from .special import mittag_leffler

__all__ = [
    "ForwardSolveError",
    "ProblemSpec",
    "SolutionHistory",
    "solve_forward",
    "spectral_solution",
    "caputo_at_final",
    "l1_weights",
    "caputo_from_state",
]

Forcing = Callable[[np.ndarray, float, np.ndarray], np.ndarray]
Reaction = Callable[[np.ndarray], np.ndarray]

_NEWTON_TOL = 1e-10
_NEWTON_MAX = 25


class ForwardSolveError(RuntimeError):
    """Nonlinear time-step iteration failed to converge."""

    def __init__(self, step: int, residual: float):
        super().__init__(f"nonlinear solve diverged at step {step} (residual {residual:.3e})")
        self.step = step
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything needed to run one forward solve.

    ``forcing`` is ``r(x, t, u)``; ``None`` means ``r = 0``. ``reaction`` is
    ``f(u)``; ``None`` means the identity.
    """

    alpha: float
    T: float
    grid: Grid
    a: SampledField
    q: SampledField
    u0: SampledField
    bc_left: BoundaryCondition = field(default_factory=BoundaryCondition.dirichlet)
    bc_right: BoundaryCondition = field(default_factory=BoundaryCondition.dirichlet)
    forcing: Optional[Forcing] = None
    reaction: Optional[Reaction] = None

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.T > 0:
            raise ValueError("final time must be positive")
        for name in ("a", "q", "u0"):
            if getattr(self, name).grid != self.grid:
                raise ValueError(f"{name} is sampled on a different grid")
        if np.any(self.a.values <= 0):
            raise ValueError("diffusion coefficient must be strictly positive")
        if self.reaction is not None and not np.isfinite(self.reaction(np.zeros(1))).all():
            raise ValueError("reaction f(0) must be finite")

    @property
    def linear(self) -> bool:
        return self.reaction is None

    def f(self, u: np.ndarray) -> np.ndarray:
        return u if self.reaction is None else np.asarray(self.reaction(u), dtype=float)

    def r(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.grid.n_nodes)
        val = self.forcing(self.grid.nodes, t, u)
        return np.broadcast_to(np.asarray(val, dtype=float), (self.grid.n_nodes,)).copy()

    def replace(self, **changes) -> "ProblemSpec":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ProblemSpec(**kw)


@dataclass(frozen=True, eq=False)
class SolutionHistory:
    """Time levels, the state at every level and ``D_t^alpha u(., T)``.

    ``caputo_direct`` holds the time-stepping scheme's own approximation of the
    derivative at ``T`` and ``caputo_discrepancy`` its sup distance from
    ``caputo_at_T`` on interior nodes (diagnostic only).
    """

    grid: Grid
    times: np.ndarray
    states: np.ndarray
    caputo_at_T: SampledField
    caputo_direct: Optional[SampledField] = None
    caputo_discrepancy: float = float("nan")

    def __post_init__(self):
        for arr in (self.times, self.states):
            arr.flags.writeable = False

    def state(self, m: int) -> SampledField:
        return SampledField(self.grid, self.states[m])

    @property
    def final(self) -> SampledField:
        return self.state(-1)

    @property
    def T(self) -> float:
        return float(self.times[-1])


def l1_weights(alpha: float, n: int) -> np.ndarray:
    """``b_k = (k+1)^(1-alpha) - k^(1-alpha)`` for ``k = 0..n-1``."""
    k = np.arange(n, dtype=float)
    return (k + 1.0) ** (1.0 - alpha) - k ** (1.0 - alpha)


def caputo_from_state(spec: ProblemSpec, u: np.ndarray, t: float) -> np.ndarray:
    """``(a u')' - q f(u) + r`` for a state ``u`` at time ``t``."""
    flux = flux_derivative(spec.a, SampledField(spec.grid, u))
    return flux.values - spec.q.values * spec.f(u) + spec.r(t, u)


def solve_forward(spec: ProblemSpec, n_steps: int = 2048, scheme: str = "auto") -> SolutionHistory:
    """Integrate the problem from ``t = 0`` to ``T`` on a uniform time mesh.

    Parameters
    ----------
    spec : ProblemSpec
    n_steps : int
        Number of time steps (at least 8).
    scheme : {"auto", "euler", "cn", "l1"}
        ``auto`` selects implicit Euler for ``alpha = 1`` and L1 otherwise.
        Crank-Nicolson is only available for ``alpha = 1``.

    Returns
    -------
    SolutionHistory
    """
    if n_steps < 8:
        raise ValueError("n_steps must be at least 8")
    if scheme == "auto":
        scheme = "euler" if spec.alpha == 1.0 else "l1"
    if scheme not in ("euler", "cn", "l1"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme in ("euler", "cn") and spec.alpha != 1.0:
        raise ValueError(f"scheme {scheme!r} needs alpha = 1")

    grid = spec.grid
    n, M = grid.n_nodes, n_steps
    dt = spec.T / M
    times = np.linspace(0.0, spec.T, M + 1)
    q_op = spec.q if spec.linear else spec.q * 0.0
    op = assemble_operator(grid, spec.a, q_op, spec.bc_left, spec.bc_right)
    mask = op.dirichlet_mask
    for idx, bc in ((0, spec.bc_left), (-1, spec.bc_right)):
        if mask[idx] and abs(spec.u0.values[idx] - bc.value(0.0)) > 1e-10 and spec.alpha < 1:
            warnings.warn("initial data do not match Dirichlet data at t=0", stacklevel=2)

    U = np.empty((M + 1, n))
    U[0] = spec.u0.values
    qv = spec.q.values
    iterate = not spec.linear or spec.forcing is not None

    def source(t, u):
        s = spec.r(t, u)
        return s if spec.linear else s - qv * spec.f(u)

    if scheme == "l1":
        c0 = dt ** (-spec.alpha) / gamma(2.0 - spec.alpha)
        b = l1_weights(spec.alpha, M + 1)
        D = np.empty((M, n))
        shift = c0
    elif scheme == "euler":
        shift = 1.0 / dt
    else:
        # Crank-Nicolson scaled by 2: (2/dt + L) u_m = (2/dt - L) u_{m-1} + sums of sources
        shift = 2.0 / dt
    ab = op.banded(shift)

    def step_solve(m, base, t, guess, src_old):
        # Newton on the implicit level; the source acts pointwise in u, so its
        # Jacobian is diagonal (finite differences) and the system stays tridiagonal
        u = guess
        change = np.inf
        bvec = op.boundary_vector(t)
        for _ in range(_NEWTON_MAX if iterate else 1):
            src = source(t, u)
            rhs = base + src + bvec
            if src_old is not None:
                rhs = rhs + src_old
            rhs[mask] = bvec[mask]
            if not np.all(np.isfinite(rhs)):
                raise ForwardSolveError(m, float("inf"))
            if iterate:
                eps = 1e-7 * (1.0 + np.abs(u))
                jac = (source(t, u + eps) - src) / eps
                jac[mask] = 0.0
                ab_j = ab.copy()
                ab_j[1] -= jac
                with np.errstate(all="ignore"):
                    u_new = solve_banded((1, 1), ab_j, rhs - jac * u)
            else:
                u_new = solve_banded((1, 1), ab, rhs)
            if not np.all(np.isfinite(u_new)):
                raise ForwardSolveError(m, float("inf"))
            if not iterate:
                return u_new
            change = float(np.max(np.abs(u_new - u)))
            u = u_new
            # relative to the solution size so small-amplitude states still iterate
            if change <= _NEWTON_TOL * max(float(np.max(np.abs(u))), 1e-300):
                return u
        raise ForwardSolveError(m, change)

    src_old = source(0.0, U[0]) if scheme == "cn" else None
    for m in range(1, M + 1):
        t = times[m]
        u_prev = U[m - 1]
        if scheme == "euler":
            base = u_prev / dt
        elif scheme == "cn":
            base = 2.0 * u_prev / dt - op.apply(u_prev) + _impedance_data(op, times[m - 1])
        else:
            base = c0 * u_prev
            if m > 1:
                base = base - c0 * (b[1:m][::-1] @ D[: m - 1])
        U[m] = step_solve(m, base, t, u_prev, src_old)
        if scheme == "l1":
            D[m - 1] = U[m] - u_prev
        elif scheme == "cn":
            src_old = source(t, U[m])

    # the scheme's own derivative approximation at T
    if scheme == "l1":
        direct = c0 * (b[:M][::-1] @ D)
    else:
        direct = (U[-1] - U[-2]) / dt
    return _finish(spec, times, U, direct)


def _impedance_data(op, t: float) -> np.ndarray:
    # old-level boundary terms for Crank-Nicolson; Dirichlet couplings are already in op.apply
    b = np.zeros(op.grid.n_nodes)
    for idx, bc, scale in ((0, op.bc_left, op.data_scale[0]), (-1, op.bc_right, op.data_scale[1])):
        if bc.kind == "impedance":
            b[idx] = scale * bc.value(t)
    return b


def _finish(spec, times, U, direct) -> SolutionHistory:
    grid = spec.grid
    res = caputo_from_state(spec, U[-1], float(times[-1]))
    interior = slice(1, grid.n_nodes - 1)
    disc = float(np.max(np.abs(res[interior] - direct[interior]))) if direct is not None else float("nan")
    return SolutionHistory(
        grid=grid,
        times=times,
        states=U,
        caputo_at_T=SampledField(grid, res),
        caputo_direct=None if direct is None else SampledField(grid, direct),
        caputo_discrepancy=disc,
    )


def caputo_at_final(history: SolutionHistory, spec: ProblemSpec) -> SampledField:
    """``D_t^alpha u(., T)`` from the equation residual ``(a u')' - q f(u) + r``."""
    return SampledField(spec.grid, caputo_from_state(spec, history.states[-1], history.T))


def spectral_solution(
    spec: ProblemSpec,
    n_modes: int = 64,
    times=None,
) -> SolutionHistory:
    """Truncated eigenfunction expansion of the solution.

    Only valid for ``r = 0``, ``f`` the identity and homogeneous boundary
    data. Uses discrete eigenpairs of the assembled operator, so it differs
    from :func:`solve_forward` only by time-discretisation and truncation error.
    """
    from .eigen import discrete_modes

    if spec.forcing is not None or not spec.linear:
        raise ValueError("spectral solution needs r = 0 and f = identity")
    if not (spec.bc_left.is_homogeneous and spec.bc_right.is_homogeneous):
        raise ValueError("spectral solution needs homogeneous boundary data")
    times = np.array([0.0, spec.T]) if times is None else np.asarray(times, dtype=float)
    lam, phi, weights, idx = discrete_modes(
        spec.grid, spec.a, spec.q, spec.bc_left, spec.bc_right, n_modes
    )
    # phi columns are orthonormal in the weighted inner product sum(w * f * g)
    coef = phi.T @ (weights * spec.u0.values[idx])
    n = spec.grid.n_nodes
    U = np.zeros((times.size, n))
    for j, t in enumerate(times):
        decay = mittag_leffler(spec.alpha, 1.0, -lam * t**spec.alpha) if t > 0 else np.ones_like(lam)
        U[j, idx] = phi @ (coef * decay)
    decay_T = mittag_leffler(spec.alpha, 1.0, -lam * times[-1] ** spec.alpha)
    dcap = np.zeros(n)
    dcap[idx] = -(phi @ (lam * coef * decay_T))
    return SolutionHistory(
        grid=spec.grid,
        times=times,
        states=U,
        caputo_at_T=SampledField(spec.grid, dcap),
    )

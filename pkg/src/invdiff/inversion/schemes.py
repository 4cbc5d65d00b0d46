"""Fixed-point reconstruction of ``(a, q)`` from two final-time profiles.

Each observation ``g`` satisfies, at the observation time,

    -(a g')' + q f(g) = r - D_t^alpha u =: R,

where ``D_t^alpha u`` comes from a forward solve with the current iterate.
The schemes differ in how this linear system for ``(a, q)`` is inverted:

* ``parallel``: both coefficients expanded in Gaussian RBFs, joint least squares;
* ``eliminate_q``: combining the equations gives ``(a W)' = phi`` with the
  Wronskian-like ``W = g_v g_u' - g_u g_v'``, so ``a W = a(0) W(0) + int phi``;
  ``q`` then follows pointwise from the first equation;
* ``eliminate_a``: eliminating ``a'`` gives
  ``q W = -a (g_v' g_u'' - g_u' g_v'') - psi`` with the current ``a``;
  ``a`` then follows by least squares;
* ``potential_only``: ``a`` known, ``q = (r + (a g')' - D_t^alpha u) / f(g)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..discretization import (
    SampledField,
    differentiate,
    excise_and_interpolate,
    flux_derivative,
    integrate_cumulative,
    second_derivative,
)
from .basis import AdmissibleSet, RbfBasis, tsvd_solve
from .model import ForwardModel, ForwardOutputs, ObservationSet

__all__ = [
    "SCHEMES",
    "SchemeError",
    "StepOptions",
    "ReconstructionState",
    "RunResult",
    "compute_W",
    "find_W_zeros",
    "rhs_fields",
    "step_parallel",
    "step_eliminate_q",
    "step_eliminate_a",
    "step_potential_only",
    "run_scheme",
]

SCHEMES = ("parallel", "eliminate_q", "eliminate_a", "potential_only")
# finite-difference order used for every derivative of the data
_ORDER = 4
_RISE_TOL = 1e-3


class SchemeError(RuntimeError):
    """A reconstruction step cannot proceed with the given data."""


@dataclass(frozen=True)
class StepOptions:
    """Tunable numerical settings shared by the steps.

    ``rcond`` of ``None`` selects the truncated-SVD cutoff automatically:
    ``1e-12`` for exact data and ``10 * delta`` for noisy data.
    """

    half_width: int = 7
    zero_rel_tol: float = 1e-3
    f_floor: float = 0.05
    rcond: Optional[float] = None
    cond_threshold: float = 1e3
    potential_floor: float = 1e-3
    w_ratio_threshold: float = 0.05

    def cutoff(self, noise_level: float) -> float:
        if self.rcond is not None:
            return self.rcond
        return 1e-12 if noise_level == 0 else 10.0 * noise_level


@dataclass(frozen=True, eq=False)
class ReconstructionState:
    """Iterate ``k`` with its coefficients and per-step diagnostics."""

    k: int
    a: SampledField
    q: SampledField
    residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of :func:`run_scheme`.

    ``history`` rows are dictionaries with keys ``iter, res, err_a_sup,
    err_q_sup, err_a_l2, err_q_l2``. ``stop_index`` is the first iterate meeting
    the discrepancy rule (``None`` if never met).
    """

    scheme: str
    states: tuple
    history: tuple
    stop_index: Optional[int]
    stopped_by: str
    diverging: bool
    threshold: float

    @property
    def final(self) -> ReconstructionState:
        return self.states[-1]


def compute_W(g_u: SampledField, g_v: SampledField) -> SampledField:
    """``W = g_v g_u' - g_u g_v'``."""
    if g_u.grid != g_v.grid:
        raise ValueError("observations live on different grids")
    return g_v * differentiate(g_u, _ORDER) - g_u * differentiate(g_v, _ORDER)


def find_W_zeros(W: SampledField, rel_tol: float = 1e-3) -> list[int]:
    """Node indices of zeros of ``W``: sign changes and near-vanishing local minima of ``|W|``."""
    w = W.values
    aw = np.abs(w)
    scale = aw.max()
    if scale == 0.0:
        return list(range(w.size))
    found = set()
    for i in np.flatnonzero(np.sign(w[:-1]) * np.sign(w[1:]) < 0):
        found.add(int(i if aw[i] <= aw[i + 1] else i + 1))
    small = aw < rel_tol * scale
    for i in np.flatnonzero(small):
        lo, hi = max(i - 1, 0), min(i + 2, w.size)
        if aw[i] == aw[lo:hi].min():
            found.add(int(i))
    found |= {int(i) for i in np.flatnonzero(w == 0.0)}
    # merge clusters, keeping the smallest |W| in each
    out: list[int] = []
    for i in sorted(found):
        if out and i - out[-1] <= 2:
            if aw[i] < aw[out[-1]]:
                out[-1] = i
            continue
        out.append(i)
    return out


def _holes(zeros, n, half_width):
    holes = []
    for z in zeros:
        s, e = max(z - half_width, 0), min(z + half_width + 1, n)
        if holes and s <= holes[-1][1]:
            holes[-1] = (holes[-1][0], e)
        else:
            holes.append((s, e))
    return holes


def _residuals(obs: ObservationSet, out: ForwardOutputs):
    return [r.values - d.values for r, d in zip(out.forcing, out.caputo)]


def rhs_fields(obs: ObservationSet, out: ForwardOutputs):
    """Elimination right-hand sides ``(phi, psi)``.

    ``phi = g_u R_v - g_v R_u`` and ``psi = R_u g_v' - R_v g_u'`` with
    ``R = r - D_t^alpha u`` from the forward solve at the current iterate.
    """
    g_u, g_v = obs.g_u, obs.g_v
    R_u, R_v = _residuals(obs, out)
    phi = g_u * R_v - g_v * R_u
    psi = differentiate(g_v, _ORDER) * R_u - differentiate(g_u, _ORDER) * R_v
    return phi, psi


def _fill_holes(f: SampledField, holes, noise_level):
    if not holes:
        return f
    return excise_and_interpolate(f, holes, noise_level=noise_level, allow_edges=True)


def _check_identity(model: ForwardModel, scheme: str):
    if not model.spec_u.linear:
        raise SchemeError(f"{scheme} needs f = identity; use the parallel scheme")


def _constrained_lstsq(M, rhs, n_a, pin_row, pin_value, rcond):
    """Least squares in ``coef = (alpha, beta)`` with ``pin_row @ alpha = pin_value`` exact.

    The constraint is eliminated through its null space, so it is satisfied
    exactly and does not distort the singular values used for truncation.
    """
    c = np.asarray(pin_row, dtype=float)
    alpha_p = c * (pin_value / (c @ c))
    _, _, vt = np.linalg.svd(c[None, :])
    null = vt[1:].T
    n_b = M.shape[1] - n_a
    Z = np.zeros((M.shape[1], null.shape[1] + n_b))
    Z[:n_a, : null.shape[1]] = null
    Z[n_a:, null.shape[1]:] = np.eye(n_b)
    shift = np.zeros(M.shape[1])
    shift[:n_a] = alpha_p
    z, s, rank = tsvd_solve(M @ Z, rhs - M @ shift, rcond)
    return shift + Z @ z, s, rank


def _a_columns(basis: RbfBasis, g: SampledField) -> np.ndarray:
    # column j samples -(b_j g')', differentiated like the forward residual
    return -flux_derivative(basis.matrix, g)


def _pin_row(basis: RbfBasis, admissible: AdmissibleSet) -> np.ndarray:
    return basis.matrix[admissible.pin_index]


def step_parallel(
    state: ReconstructionState,
    obs: ObservationSet,
    out: ForwardOutputs,
    basis: RbfBasis,
    admissible: AdmissibleSet,
    model: ForwardModel,
    options: StepOptions = StepOptions(),
) -> ReconstructionState:
    """Joint RBF least-squares update of ``(a, q)``.

    ``diagnostics`` carries the singular values of the stacked ``A`` (diffusion)
    and ``Q`` (potential) blocks and the numerical rank used.
    """
    f = model.spec_u.f
    A_blocks, Q_blocks, rhs = [], [], []
    for g, R in zip(obs.filtered, _residuals(obs, out)):
        A_blocks.append(_a_columns(basis, g))
        Q_blocks.append(basis.matrix * f(g.values)[:, None])
        rhs.append(R)
    A = np.vstack(A_blocks)
    Q = np.vstack(Q_blocks)
    M = np.hstack([A, Q])
    nb = basis.n_centers
    coef, s, rank = _constrained_lstsq(
        M, np.concatenate(rhs), nb, _pin_row(basis, admissible), admissible.a_pinned,
        options.cutoff(obs.noise_level),
    )
    a_new = admissible.project(basis.evaluate(coef[:nb]))
    q_new = basis.evaluate(coef[nb:])
    diag = {
        "sv_A": np.linalg.svd(A, compute_uv=False),
        "sv_Q": np.linalg.svd(Q, compute_uv=False),
        "sv_system": s,
        "rank": rank,
    }
    return ReconstructionState(state.k + 1, a_new, q_new, diagnostics=diag)


def _W_setup(obs: ObservationSet, options: StepOptions):
    W = compute_W(obs.g_u, obs.g_v)
    zeros = find_W_zeros(W, options.zero_rel_tol)
    holes = _holes(zeros, W.grid.n_nodes, options.half_width)
    covered = sum(e - s for s, e in holes)
    if covered > 0.25 * W.grid.n_nodes:
        raise SchemeError(f"zero set of W covers {covered} nodes, beyond the excision cap")
    mask = np.ones(W.grid.n_nodes, dtype=bool)
    for s, e in holes:
        mask[s:e] = False
    aw = np.abs(W.values)
    diag = {
        "W_zeros": zeros,
        "W_min_ratio": float(aw.min() / aw.max()) if aw.max() > 0 else 0.0,
        "W_min_kept_ratio": float(aw[mask].min() / aw.max()) if mask.any() and aw.max() > 0 else 0.0,
        "holes": holes,
    }
    diag["ill_conditioned"] = diag["W_min_ratio"] <= options.w_ratio_threshold
    return W, zeros, holes, mask, diag


def _q_pointwise(a_new, gs, Rs, f, basis, options, rcond):
    """Pointwise least-squares ``q`` from the equations of all observations.

    Nodes where every ``|f(g_i)|`` is weak fall back to an RBF fit.
    """
    num = np.zeros(a_new.grid.n_nodes)
    den = np.zeros(a_new.grid.n_nodes)
    rows, rhs = [], []
    for g, R in zip(gs, Rs):
        fg = f(g.values)
        target = R + flux_derivative(a_new, g).values
        num += fg * target
        den += fg * fg
        rows.append(basis.matrix * fg[:, None])
        rhs.append(target)
    q_vals = num / np.where(den == 0, 1.0, den)
    root = np.sqrt(den)
    weak = root < options.f_floor * np.max(root)
    if np.any(weak):
        coef = tsvd_solve(np.vstack(rows), np.concatenate(rhs), rcond)[0]
        q_vals = np.where(weak, basis.matrix @ coef, q_vals)
    return a_new.with_values(q_vals), int(weak.sum())


def step_eliminate_q(
    state: ReconstructionState,
    obs: ObservationSet,
    out: ForwardOutputs,
    basis: RbfBasis,
    admissible: AdmissibleSet,
    model: ForwardModel,
    options: StepOptions = StepOptions(),
) -> ReconstructionState:
    """Update ``a`` from ``a W = a_0 W(0) + int phi``, then ``q`` from the first equation."""
    _check_identity(model, "eliminate_q")
    W, zeros, holes, mask, diag = _W_setup(obs, options)
    phi, _ = rhs_fields(obs, out)
    Phi = integrate_cumulative(phi)
    i0 = admissible.pin_index
    if i0 == 0:
        numer = Phi + admissible.a_pinned * W.values[0]
    else:
        numer = Phi - Phi.values[-1] + admissible.a_pinned * W.values[-1]
    interior = [z for z in zeros if 0 < z < W.grid.n_nodes - 1]
    numer_holes = [h for h in holes if h[0] >= 1 and h[1] <= W.grid.n_nodes - 1]
    if numer_holes:
        numer = excise_and_interpolate(numer, numer_holes, interior, obs.noise_level)
    a_vals = np.where(mask, numer.values / np.where(mask, W.values, 1.0), 0.0)
    a_new = _fill_holes(W.with_values(a_vals), holes, obs.noise_level)
    a_new = admissible.project(a_new)

    q_new, n_weak = _q_pointwise(
        a_new, obs.filtered, _residuals(obs, out), model.spec_u.f, basis, options,
        options.cutoff(obs.noise_level),
    )
    diag.update(numerator=numer, W=W, n_weak_f=n_weak)
    return ReconstructionState(state.k + 1, a_new, q_new, diagnostics=diag)


def step_eliminate_a(
    state: ReconstructionState,
    obs: ObservationSet,
    out: ForwardOutputs,
    basis: RbfBasis,
    admissible: AdmissibleSet,
    model: ForwardModel,
    options: StepOptions = StepOptions(),
) -> ReconstructionState:
    """Update ``q`` from ``q W = -a (g_v' g_u'' - g_u' g_v'') - psi``, then ``a`` by least squares."""
    _check_identity(model, "eliminate_a")
    W, zeros, holes, mask, diag = _W_setup(obs, options)
    _, psi = rhs_fields(obs, out)
    du, dv = differentiate(obs.g_u, _ORDER), differentiate(obs.g_v, _ORDER)
    ddu, ddv = second_derivative(obs.g_u, _ORDER), second_derivative(obs.g_v, _ORDER)
    cross = dv * ddu - du * ddv
    numer = -(state.a * cross) - psi
    q_vals = np.where(mask, numer.values / np.where(mask, W.values, 1.0), 0.0)
    q_new = _fill_holes(W.with_values(q_vals), holes, obs.noise_level)

    dW = differentiate(W, _ORDER)
    kept = np.abs(W.values[mask]).min() if mask.any() else 0.0
    cond = float(np.max(np.abs(dW.values)) / kept) if kept > 0 else math.inf
    diag["W_slope_ratio"] = cond
    if cond > options.cond_threshold:
        warnings.warn(
            f"eliminate_a: ||W'||/min|W| = {cond:.3g} exceeds {options.cond_threshold:g}",
            RuntimeWarning,
            stacklevel=2,
        )

    f = model.spec_u.f
    rows, rhs = [], []
    for g, R in zip(obs.filtered, _residuals(obs, out)):
        rows.append(_a_columns(basis, g))
        rhs.append(R - q_new.values * f(g.values))
    coef, s, rank = _constrained_lstsq(
        np.vstack(rows), np.concatenate(rhs), basis.n_centers,
        _pin_row(basis, admissible), admissible.a_pinned, options.cutoff(obs.noise_level),
    )
    a_new = admissible.project(basis.evaluate(coef))
    diag.update(W=W, rank=rank)
    return ReconstructionState(state.k + 1, a_new, q_new, diagnostics=diag)


def step_potential_only(
    q_k: SampledField,
    g: SampledField,
    out: ForwardOutputs,
    a: SampledField,
    floor: float,
    reaction: Optional[Callable] = None,
) -> SampledField:
    """``q+ = (r + (a g')' - D_t^alpha u(T; q_k)) / f(g)`` with ``a`` known."""
    fg = g.values if reaction is None else np.asarray(reaction(g.values), dtype=float)
    if np.min(np.abs(fg)) < floor:
        raise SchemeError(f"|f(g)| drops to {np.min(np.abs(fg)):.3g}, below the floor {floor:g}")
    flux = flux_derivative(a, g).values
    return q_k.with_values((out.forcing[0].values + flux - out.caputo[0].values) / fg)


def _errors(state, truth):
    if truth is None:
        nan = float("nan")
        return nan, nan, nan, nan
    a_t, q_t = truth
    da, dq = state.a - a_t, state.q - q_t
    return da.sup(), dq.sup(), da.l2(), dq.l2()


def run_scheme(
    scheme: str,
    model: ForwardModel,
    obs: ObservationSet,
    start: tuple,
    admissible: AdmissibleSet = AdmissibleSet(),
    basis: Optional[RbfBasis] = None,
    truth: Optional[tuple] = None,
    tau: float = 1.1,
    k_max: int = 20,
    fixed_iterations: Optional[int] = None,
    res_floor: float = 1e-6,
    options: StepOptions = StepOptions(),
) -> RunResult:
    """Iterate a reconstruction step from ``start = (a_0, q_0)``.

    Stops at the first iterate ``k >= 1`` whose misfit satisfies
    ``||u_i(T; a_k, q_k) - g_i||_2 <= tau * max(delta, res_floor) * ||g_i||_2`` for
    every observation, or after ``k_max`` steps (raised to ``ceil(log(1/delta))``
    if smaller). With ``fixed_iterations`` exactly that many steps are taken and
    the discrepancy index is only recorded.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    basis = basis or RbfBasis(model.grid)
    delta = obs.noise_level
    if delta > 0:
        k_max = max(k_max, math.ceil(math.log(1.0 / delta)))
    n_iter = fixed_iterations if fixed_iterations is not None else k_max
    level = tau * max(delta, res_floor)
    norms = [g.l2() for g in obs.raw]

    step = {
        "parallel": step_parallel,
        "eliminate_q": step_eliminate_q,
        "eliminate_a": step_eliminate_a,
    }.get(scheme)

    def misfit(out):
        return [(s - g).l2() for s, g in zip(out.states, obs.raw)]

    a0, q0 = start
    out = model.solve(a0, q0)
    mis = misfit(out)
    state = ReconstructionState(0, a0, q0, max(mis))
    states = [state]
    history = [_row(state, truth)]
    stop_index, stopped_by, rises = None, "k_max", 0
    diverging = False
    for _ in range(n_iter):
        if scheme == "potential_only":
            q_new = step_potential_only(
                state.q, obs.filtered[0], out, state.a, options.potential_floor, model.spec_u.reaction
            )
            new = ReconstructionState(state.k + 1, state.a, q_new)
        else:
            new = step(state, obs, out, basis, admissible, model, options)
        out = model.solve(new.a, new.q)
        mis = misfit(out)
        res = max(mis)
        # plateaus jitter at round-off level; only count clear increases
        rises = rises + 1 if res > state.residual * (1.0 + _RISE_TOL) else 0
        diverging = diverging or rises >= 3
        state = ReconstructionState(new.k, new.a, new.q, res, new.diagnostics)
        states.append(state)
        history.append(_row(state, truth))
        if stop_index is None and all(m <= level * nrm for m, nrm in zip(mis, norms)):
            stop_index = state.k
            if fixed_iterations is None:
                stopped_by = "discrepancy"
                break
    if fixed_iterations is not None:
        stopped_by = "fixed"
    return RunResult(scheme, tuple(states), tuple(history), stop_index, stopped_by, diverging, level)


def _row(state, truth):
    ea, eq, ea2, eq2 = _errors(state, truth)
    return {
        "iter": state.k,
        "res": state.residual,
        "err_a_sup": ea,
        "err_q_sup": eq,
        "err_a_l2": ea2,
        "err_q_l2": eq2,
    }

"""Contraction diagnostics: the time-decay bound ``Phi(T)`` and empirical contraction factors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..discretization import SampledField
from ..special import mittag_leffler
from .basis import AdmissibleSet, RbfBasis, triple_norm
from .model import ForwardModel, ObservationSet
from .schemes import (
    ReconstructionState,
    StepOptions,
    step_eliminate_a,
    step_eliminate_q,
    step_parallel,
    step_potential_only,
)

__all__ = [
    "phi_integrand_alpha1",
    "phi_integral",
    "phi_of_T",
    "ProbePair",
    "make_probe_pairs",
    "ContractionReport",
    "contraction_factor",
]

_GL_POINTS = 16
_LEVELS = 48
_LATTICE_MAX = 1e6


def phi_integrand_alpha1(lam, mu, T):
    """Closed form of the ``alpha = 1`` integral ``max(1, mu) int_0^T e^{-lam s} e^{-mu (T-s)} ds``."""
    lam, mu = np.broadcast_arrays(np.asarray(lam, float), np.asarray(mu, float))
    d = mu - lam
    close = np.abs(d) <= 1e-9 * np.maximum(np.abs(mu), 1.0)
    safe = np.where(close, 1.0, d)
    # (e^{-lam T} - e^{-mu T}) / (mu - lam), written with expm1 to survive mu ~ lam
    base = np.exp(-np.minimum(lam, mu) * T) * -np.expm1(-np.abs(d) * T) / np.abs(safe)
    base = np.where(close, T * np.exp(-lam * T), base)
    return np.maximum(1.0, mu) * base


def _gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _graded_rule(alpha, T, n_gl=_GL_POINTS, levels=_LEVELS):
    """Nodes ``s`` and weights for ``int_0^T s^(alpha-1) F(s) ds`` (weight included).

    Both halves of ``[0, T]`` are split geometrically towards their endpoint so
    that boundary layers of width down to ``T * 2^-levels`` are resolved. The
    innermost cells use ``s = eps * sigma^(1/alpha)`` (and the mirrored
    substitution at ``s = T``) to absorb the ``s^(alpha-1)`` and ``(T-s)^alpha``
    endpoint behaviour.
    """
    x, w = _gauss_legendre(n_gl)
    half = 0.5 * T
    edges = half * 0.5 ** np.arange(levels + 1)  # half, half/2, ..., eps
    eps = edges[-1]
    s_parts, w_parts = [], []

    # left innermost cell [0, eps]: s = eps * sigma^(1/alpha), s^(alpha-1) ds = eps^alpha / alpha dsigma
    s_parts.append(eps * x ** (1.0 / alpha))
    w_parts.append(w * eps**alpha / alpha)
    # left geometric cells [edges[k+1], edges[k]]
    for k in range(levels):
        lo, hi = edges[k + 1], edges[k]
        s = lo + (hi - lo) * x
        s_parts.append(s)
        w_parts.append((hi - lo) * w * s ** (alpha - 1.0))
    # right geometric cells [T - edges[k], T - edges[k+1]]
    for k in range(levels):
        lo, hi = T - edges[k], T - edges[k + 1]
        s = lo + (hi - lo) * x
        s_parts.append(s)
        w_parts.append((hi - lo) * w * s ** (alpha - 1.0))
    # right innermost cell: T - s = eps * tau^(1/alpha), ds = eps/alpha * tau^(1/alpha - 1) dtau
    t = eps * x ** (1.0 / alpha)
    s = T - t
    s_parts.append(s)
    w_parts.append(w * (eps / alpha) * x ** (1.0 / alpha - 1.0) * s ** (alpha - 1.0))
    return np.concatenate(s_parts), np.concatenate(w_parts)


def _lambda_factor(alpha, lam, s):
    """``E_{alpha,alpha}(-lam s^alpha)`` for every ``lam`` (rows) and node (columns)."""
    return mittag_leffler(alpha, alpha, -np.outer(lam, s**alpha))


def _mu_factor(alpha, mu, T, s):
    """``max(1, mu) E_{alpha,1}(-mu (T-s)^alpha)``."""
    t = np.maximum(T - s, 0.0)
    return np.maximum(1.0, mu)[:, None] * mittag_leffler(alpha, 1.0, -np.outer(mu, t**alpha))


def phi_integral(alpha: float, lam, mu, T: float, n_gl: int = _GL_POINTS) -> np.ndarray:
    """``int_0^T s^(alpha-1) E_{alpha,alpha}(-lam s^alpha) max(1,mu) E_{alpha,1}(-mu (T-s)^alpha) ds``.

    Returns the matrix over ``lam`` (rows) and ``mu`` (columns).
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    if not T > 0:
        raise ValueError("T must be positive")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    s, w = _graded_rule(alpha, T, n_gl)
    L = _lambda_factor(alpha, lam, s)
    M = _mu_factor(alpha, mu, T, s)
    return (L * w) @ M.T


def phi_of_T(
    alpha: float,
    lambda1: float,
    mu1: float,
    T: float,
    n_lattice: int = 49,
    n_gl: int = _GL_POINTS,
    upper: float = _LATTICE_MAX,
) -> float:
    """Double supremum over ``lam >= lambda1``, ``mu >= mu1`` of :func:`phi_integral`.

    The suprema are taken over a log-spaced lattice from ``(lambda1, mu1)`` to
    ``upper`` in each variable.
    """
    if not (lambda1 > 0 and mu1 > 0):
        raise ValueError("lambda1 and mu1 must be positive")
    lam = np.geomspace(lambda1, max(upper, lambda1), n_lattice)
    mu = np.geomspace(mu1, max(upper, mu1), n_lattice)
    return float(np.max(phi_integral(alpha, lam, mu, T, n_gl)))


@dataclass(frozen=True, eq=False)
class ProbePair:
    """Two coefficient pairs ``(a, q)`` and ``(a_t, q_t)`` fed through one step."""

    a: SampledField
    q: SampledField
    a_t: SampledField
    q_t: SampledField

    @property
    def distance(self) -> float:
        return triple_norm(self.a - self.a_t, self.q - self.q_t)


def make_probe_pairs(
    a_ref: SampledField,
    q_ref: SampledField,
    n_pairs: int = 5,
    seed: int = 0,
    scale: float = 0.05,
    n_modes: int = 4,
    admissible: AdmissibleSet = AdmissibleSet(),
) -> list[ProbePair]:
    """Seeded pairs of perturbations of ``(a_ref, q_ref)``.

    Perturbations of ``a`` are sine combinations vanishing at the pinned end,
    so both members respect the pinned boundary value.
    """
    grid = a_ref.grid
    x = grid.nodes / grid.length
    if admissible.pin_at == "right":
        x = 1.0 - x
    k = np.arange(1, n_modes + 1)
    shapes = np.sin(0.5 * np.pi * np.outer(x, 2 * k - 1))  # vanish at the pinned end
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        fields = []
        for _member in range(2):
            da = shapes @ rng.uniform(-1.0, 1.0, n_modes) * scale / n_modes
            dq = shapes @ rng.uniform(-1.0, 1.0, n_modes) * scale / n_modes
            a = admissible.project(a_ref + da)
            fields += [a, q_ref + dq]
        pairs.append(ProbePair(*fields))
    return pairs


@dataclass(frozen=True)
class ContractionReport:
    """Per-probe contraction ratios and their maximum (``nan`` when every probe is skipped)."""

    ratios: tuple
    factor: float


def _apply_step(scheme, a, q, obs, model, basis, admissible, options):
    out = model.solve(a, q)
    state = ReconstructionState(0, a, q)
    if scheme == "potential_only":
        q_new = step_potential_only(
            q, obs.filtered[0], out, a, options.potential_floor, model.spec_u.reaction
        )
        return a, q_new
    step = {
        "parallel": step_parallel,
        "eliminate_q": step_eliminate_q,
        "eliminate_a": step_eliminate_a,
    }[scheme]
    new = step(state, obs, out, basis, admissible, model, options)
    return new.a, new.q


def contraction_factor(
    scheme: str,
    model: ForwardModel,
    obs: ObservationSet,
    probes: Sequence[ProbePair],
    basis: Optional[RbfBasis] = None,
    admissible: AdmissibleSet = AdmissibleSet(),
    options: StepOptions = StepOptions(),
) -> ContractionReport:
    """Empirical Lipschitz constant of one reconstruction step in the triple norm.

    Each probe gives ``|||T(a,q) - T(a_t,q_t)||| / |||(a,q) - (a_t,q_t)|||``.
    Identical members (zero distance) are skipped.
    """
    if obs.noise_level != 0.0:
        raise ValueError("contraction factors need noise-free data")
    basis = basis or RbfBasis(model.grid)
    ratios = []
    for p in probes:
        d0 = p.distance
        if d0 == 0.0:
            ratios.append(float("nan"))
            continue
        a1, q1 = _apply_step(scheme, p.a, p.q, obs, model, basis, admissible, options)
        a2, q2 = _apply_step(scheme, p.a_t, p.q_t, obs, model, basis, admissible, options)
        ratios.append(triple_norm(a1 - a2, q1 - q2) / d0)
    valid = [r for r in ratios if np.isfinite(r)]
    return ContractionReport(tuple(ratios), max(valid) if valid else float("nan"))

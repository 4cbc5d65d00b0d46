"""Forward map from coefficients to final-time observations, and noisy data sets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..discretization import Grid, SampledField, smooth_to_h2
from ..forward import ProblemSpec, caputo_from_state, solve_forward

__all__ = ["ForwardModel", "ForwardOutputs", "ObservationSet", "make_observations"]

MODES = ("two_experiments", "two_times", "single")


@dataclass(frozen=True, eq=False)
class ForwardOutputs:
    """Observed states, ``D_t^alpha`` at the observation times and the forcing there.

    All tuples have one entry per observation (two, or one in ``single`` mode).
    """

    states: tuple
    caputo: tuple
    forcing: tuple


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """Evaluate the observation operator for given ``(a, q)``.

    Modes
    -----
    ``two_experiments``
        ``u(., T)`` and ``v(., T)`` from two runs differing in initial and
        boundary data (``spec_u``, ``spec_v``).
    ``two_times``
        ``u(., T/2)`` and ``u(., T)`` from the single run ``spec_u``.
    ``single``
        ``u(., T)`` only.
    """

    spec_u: ProblemSpec
    spec_v: Optional[ProblemSpec] = None
    n_steps: int = 2048
    scheme: str = "auto"
    mode: str = "two_experiments"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown observation mode {self.mode!r}")
        if self.mode == "two_experiments" and self.spec_v is None:
            raise ValueError("two_experiments mode needs a second problem")
        if self.mode == "two_times" and self.n_steps % 2:
            raise ValueError("two_times mode needs an even number of steps")

    @property
    def grid(self) -> Grid:
        return self.spec_u.grid

    @property
    def n_obs(self) -> int:
        return 1 if self.mode == "single" else 2

    def specs(self) -> Sequence[ProblemSpec]:
        return (self.spec_u,) if self.mode != "two_experiments" else (self.spec_u, self.spec_v)

    def with_coefficients(self, a: SampledField, q: SampledField) -> "ForwardModel":
        su = self.spec_u.replace(a=a, q=q)
        sv = None if self.spec_v is None else self.spec_v.replace(a=a, q=q)
        return ForwardModel(su, sv, self.n_steps, self.scheme, self.mode)

    def solve(self, a: SampledField, q: SampledField) -> ForwardOutputs:
        model = self.with_coefficients(a, q)
        grid = self.grid
        states, caps, forcing = [], [], []
        if model.mode == "two_times":
            spec = model.spec_u
            hist = solve_forward(spec, model.n_steps, model.scheme)
            mid = model.n_steps // 2
            t_mid = float(hist.times[mid])
            states = [hist.state(mid), hist.final]
            caps = [
                SampledField(grid, caputo_from_state(spec, hist.states[mid], t_mid)),
                hist.caputo_at_T,
            ]
            forcing = [
                SampledField(grid, spec.r(t_mid, hist.states[mid])),
                SampledField(grid, spec.r(spec.T, hist.states[-1])),
            ]
        else:
            for spec in model.specs():
                hist = solve_forward(spec, model.n_steps, model.scheme)
                states.append(hist.final)
                caps.append(hist.caputo_at_T)
                forcing.append(SampledField(grid, spec.r(spec.T, hist.states[-1])))
        return ForwardOutputs(tuple(states), tuple(caps), tuple(forcing))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Raw and filtered observations plus the noise description.

    ``raw[i]`` is the (possibly noisy) data of observation ``i``; ``filtered[i]``
    is what the reconstruction schemes use. ``clean`` keeps the noise-free
    values when they are known.
    """

    raw: tuple
    filtered: tuple
    noise_level: float = 0.0
    seed: Optional[int] = None
    clean: Optional[tuple] = None

    def __post_init__(self):
        if len(self.raw) != len(self.filtered):
            raise ValueError("raw and filtered observation counts differ")
        if self.noise_level == 0.0:
            for r, f in zip(self.raw, self.filtered):
                if not np.array_equal(r.values, f.values):
                    raise ValueError("noise-free observations must not be filtered")

    @property
    def g_u(self) -> SampledField:
        return self.filtered[0]

    @property
    def g_v(self) -> SampledField:
        return self.filtered[1]

    def __len__(self):
        return len(self.raw)


def make_observations(
    clean: Sequence[SampledField],
    noise_level: float = 0.0,
    seed: Optional[int] = None,
) -> ObservationSet:
    """Add seeded uniform noise on ``[-delta, delta] * ||g||_inf`` and filter.

    Noise for the observations is drawn in order from one generator, so the
    result depends only on ``(clean, noise_level, seed)``.
    """
    if not (0.0 <= noise_level <= 0.2):
        raise ValueError("noise level must lie in [0, 0.2]")
    clean = tuple(clean)
    if noise_level == 0.0:
        return ObservationSet(clean, clean, 0.0, seed, clean)
    rng = np.random.default_rng(seed)
    raw, filt = [], []
    for g in clean:
        eps = rng.uniform(-1.0, 1.0, size=g.grid.n_nodes)
        noisy = g + noise_level * g.sup() * eps
        raw.append(noisy)
        filt.append(smooth_to_h2(noisy, noise_level))
    return ObservationSet(tuple(raw), tuple(filt), noise_level, seed, clean)

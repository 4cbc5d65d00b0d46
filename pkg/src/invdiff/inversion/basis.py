"""Gaussian RBF expansions, the admissible coefficient set and small linear-algebra helpers."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..discretization import Grid, SampledField, differentiate, l2_norm

__all__ = ["RbfBasis", "AdmissibleSet", "triple_norm", "tsvd_solve"]


@dataclass(frozen=True, eq=False)
class RbfBasis:
    """Shifted Gaussians ``b_j(x) = exp(-(x - x_j)^2 / sigma)`` sampled on a grid.

    ``sigma`` defaults to ``(width_factor * spacing)^2`` for uniformly spaced
    centres. Gaussians whose width is a fixed small multiple of the spacing
    saturate in accuracy; a factor of 5 brings the approximation error of
    smooth coefficients down to about 1e-6.
    """

    grid: Grid
    n_centers: int = 41
    sigma: float | None = None
    width_factor: float = 5.0

    def __post_init__(self):
        if self.n_centers < 1:
            raise ValueError("need at least one basis function")
        if self.n_centers > self.grid.n_nodes / 4:
            raise ValueError(
                f"{self.n_centers} centres exceed n_nodes/4 = {self.grid.n_nodes / 4:g}"
            )
        if self.sigma is None:
            spacing = self.grid.length / max(self.n_centers - 1, 1)
            object.__setattr__(self, "sigma", (self.width_factor * spacing) ** 2)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @cached_property
    def centers(self) -> np.ndarray:
        if self.n_centers == 1:
            return np.array([0.5 * self.grid.length])
        return np.linspace(0.0, self.grid.length, self.n_centers)

    @cached_property
    def matrix(self) -> np.ndarray:
        """``B[i, j] = b_j(x_i)``."""
        d = self.grid.nodes[:, None] - self.centers[None, :]
        return np.exp(-(d * d) / self.sigma)

    @cached_property
    def derivative_matrix(self) -> np.ndarray:
        """``B'[i, j] = b_j'(x_i)``."""
        d = self.grid.nodes[:, None] - self.centers[None, :]
        return -2.0 * d / self.sigma * self.matrix

    def evaluate(self, coef) -> SampledField:
        return SampledField(self.grid, self.matrix @ np.asarray(coef, dtype=float))

    def fit(self, f: SampledField, rcond: float = 1e-10) -> np.ndarray:
        """Least-squares coefficients of ``f`` in the basis."""
        return tsvd_solve(self.matrix, f.values, rcond)[0]


def tsvd_solve(M: np.ndarray, rhs: np.ndarray, rcond: float):
    """Truncated-SVD least squares, discarding singular values below ``rcond * s_max``.

    Returns ``(x, singular_values, rank)``.
    """
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > rcond * s[0]
    x = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
    return x, s, int(keep.sum())


def triple_norm(a: SampledField, q: SampledField) -> float:
    """``||a'||_2 + ||a||_inf + ||q||_2``."""
    return differentiate(a).l2() + a.sup() + q.l2()


@dataclass(frozen=True)
class AdmissibleSet:
    """Coefficient pairs with ``a >= a_min``, a pinned boundary value of ``a`` and norm bounds.

    ``q_ref`` and ``radius`` bound ``||q - q_ref||_2``. The embedding and
    elliptic-regularity constants enter the membership test only; they default
    to 1 because they are not available in closed form.
    """

    a_min: float = 0.5
    a_pinned: float = 1.0
    pin_at: str = "left"
    q_ref: float = 0.0
    radius: float = np.inf
    embed_const: float = 1.0
    elliptic_const: float = 1.0

    def __post_init__(self):
        if not self.a_min > 0:
            raise ValueError("a_min must be positive")
        if self.pin_at not in ("left", "right"):
            raise ValueError("pin_at must be 'left' or 'right'")

    @property
    def pin_index(self) -> int:
        return 0 if self.pin_at == "left" else -1

    def project(self, a: SampledField) -> SampledField:
        """Clip at ``a_min`` and pin the boundary value (idempotent)."""
        vals = np.maximum(a.values, self.a_min)
        vals[self.pin_index] = self.a_pinned
        return a.with_values(vals)

    def contains(self, a: SampledField, q: SampledField, atol: float = 1e-12) -> bool:
        if abs(a.values[self.pin_index] - self.a_pinned) > atol:
            return False
        if np.any(a.values < self.a_min - atol):
            return False
        if l2_norm(q.values - self.q_ref, q.grid.h) > self.radius / self.embed_const**2:
            return False
        bound = self.a_min / (self.embed_const * self.elliptic_const)
        return differentiate(a).l2() <= bound

"""Uniform 1D grids, sampled fields and the discrete elliptic operator.

The operator ``L w = -(a w')' + q w`` is discretised in conservative form with
arithmetic half-node averages of ``a``. Impedance rows (``a dw/dn + gamma w =
data``) eliminate a ghost node through the centred difference of the boundary
condition; the half-node coefficient outside the domain is extrapolated
linearly, which keeps the rows second-order consistent when ``a' != 0`` at the
boundary. The matrix stays tridiagonal and is symmetric after diagonal
scaling. Dirichlet rows are identity rows; their data enter through
:meth:`EllipticOperator.boundary_vector`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline, make_smoothing_spline
from scipy.linalg import solve_banded, solveh_banded

__all__ = [
    "Grid",
    "BoundaryCondition",
    "SampledField",
    "EllipticOperator",
    "assemble_operator",
    "differentiate",
    "second_derivative",
    "flux_derivative",
    "integrate_cumulative",
    "smooth_to_h2",
    "noise_amplitude",
    "excise_and_interpolate",
    "write_field_csv",
    "read_field_csv",
    "l2_norm",
]

BoundaryData = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class Grid:
    """Uniform mesh ``x_i = i h`` on ``[0, length]``."""

    n_nodes: int = 513
    length: float = 1.0

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("a grid needs at least 3 nodes")
        if not self.length > 0:
            raise ValueError("grid length must be positive")

    @property
    def h(self) -> float:
        return self.length / (self.n_nodes - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(0.0, self.length, self.n_nodes)
        x.flags.writeable = False
        return x

    def sample(self, func) -> "SampledField":
        """Evaluate a callable at the nodes."""
        vals = np.broadcast_to(np.asarray(func(self.nodes), dtype=float), (self.n_nodes,))
        return SampledField(self, vals)


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet (``w = data``) or impedance (``a dw/dn + gamma w = data``) condition.

    ``data`` may be a constant or a callable of time. Neumann is impedance with
    ``gamma = 0``.
    """

    kind: str = "dirichlet"
    gamma: float = 0.0
    data: BoundaryData = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "impedance"):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "impedance" and self.gamma < 0:
            raise ValueError("impedance coefficient gamma must be >= 0")

    @classmethod
    def dirichlet(cls, value: BoundaryData = 0.0) -> "BoundaryCondition":
        return cls("dirichlet", 0.0, value)

    @classmethod
    def neumann(cls, flux: BoundaryData = 0.0) -> "BoundaryCondition":
        return cls("impedance", 0.0, flux)

    @classmethod
    def impedance(cls, gamma: float, data: BoundaryData = 0.0) -> "BoundaryCondition":
        return cls("impedance", gamma, data)

    def value(self, t: float) -> float:
        v = self.data(t) if callable(self.data) else self.data
        v = float(v)
        if not np.isfinite(v):
            raise ValueError(f"boundary data not finite at t={t}")
        return v

    @property
    def is_homogeneous(self) -> bool:
        return not callable(self.data) and float(self.data) == 0.0


@dataclass(frozen=True, eq=False)
class SampledField:
    """Values of a function at the nodes of a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"expected {self.grid.n_nodes} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("sampled field contains non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.grid.n_nodes

    def with_values(self, values) -> "SampledField":
        return SampledField(self.grid, values)

    def _coerce(self, other):
        if isinstance(other, SampledField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._coerce(other))

    def __rsub__(self, other):
        return self.with_values(self._coerce(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._coerce(other))

    def __neg__(self):
        return self.with_values(-self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2(self) -> float:
        return l2_norm(self.values, self.grid.h)


def l2_norm(values, h: float) -> float:
    """Trapezoidal approximation of the continuous L2 norm."""
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(np.trapezoid(v * v, dx=h)))


def _as_values(f, grid: Grid) -> np.ndarray:
    if isinstance(f, SampledField):
        if f.grid != grid:
            raise ValueError("field grid does not match operator grid")
        return f.values
    arr = np.broadcast_to(np.asarray(f, dtype=float), (grid.n_nodes,))
    return np.array(arr)


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """Tridiagonal representation of ``-(a w')' + q w`` with boundary rows folded in.

    ``lower[i]`` multiplies ``w[i-1]``, ``upper[i]`` multiplies ``w[i+1]`` in row
    ``i``. Dirichlet rows are identity rows.
    """

    grid: Grid
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    bc_left: BoundaryCondition
    bc_right: BoundaryCondition
    weights: np.ndarray = field(repr=False)
    data_scale: tuple = (1.0, 1.0)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.n_nodes, dtype=bool)
        mask[0] = self.bc_left.kind == "dirichlet"
        mask[-1] = self.bc_right.kind == "dirichlet"
        return mask

    def apply(self, w) -> np.ndarray:
        """Return the row-wise product ``L w`` (identity on Dirichlet rows)."""
        w = _as_values(w, self.grid)
        out = self.diag * w
        out[1:] += self.lower[1:] * w[:-1]
        out[:-1] += self.upper[:-1] * w[1:]
        return out

    def boundary_vector(self, t: float = 0.0) -> np.ndarray:
        """Right-hand-side contribution of the boundary data at time ``t``.

        Dirichlet values are also lifted out of the neighbouring rows, matching
        the decoupled matrix returned by :meth:`banded`.
        """
        b = np.zeros(self.grid.n_nodes)
        for idx, bc, scale in ((0, self.bc_left, self.data_scale[0]), (-1, self.bc_right, self.data_scale[1])):
            b[idx] = scale * bc.value(t)
        if self.bc_left.kind == "dirichlet":
            b[1] -= self.lower[1] * b[0]
        if self.bc_right.kind == "dirichlet":
            b[-2] -= self.upper[-2] * b[-1]
        return b

    def to_dense(self) -> np.ndarray:
        n = self.grid.n_nodes
        m = np.diag(self.diag)
        m[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        m[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return m

    def banded(self, shift: float = 0.0) -> np.ndarray:
        """Banded storage of ``shift*I + L`` with Dirichlet nodes decoupled.

        Dirichlet rows are identity rows and their columns are cleared, so the
        boundary values are reproduced exactly by the solve; the cleared
        couplings are carried by :meth:`boundary_vector`.
        """
        n = self.grid.n_nodes
        ab = np.zeros((3, n))
        ab[0, 1:] = self.upper[:-1]
        ab[1] = self.diag + shift
        ab[2, :-1] = self.lower[1:]
        mask = self.dirichlet_mask
        ab[1, mask] = 1.0
        if mask[0]:
            ab[0, 1] = 0.0
            ab[2, 0] = 0.0
        if mask[-1]:
            ab[2, -2] = 0.0
            ab[0, -1] = 0.0
        return ab

    def solve_shifted(self, shift: float, rhs, t: float = 0.0) -> np.ndarray:
        """Solve ``(shift*I + L) w = rhs + b(t)`` with Dirichlet values imposed."""
        r = np.array(rhs, dtype=float) + self.boundary_vector(t)
        mask = self.dirichlet_mask
        r[mask] = self.boundary_vector(t)[mask]
        return solve_banded((1, 1), self.banded(shift), r)

    def symmetric_tridiagonal(self):
        """Symmetrised tridiagonal on the non-Dirichlet nodes.

        Returns ``(d, e, index, weights)`` such that ``W^(1/2) L W^(-1/2)``
        restricted to ``index`` has diagonal ``d`` and off-diagonal ``e``.
        """
        idx = np.flatnonzero(~self.dirichlet_mask)
        d = self.diag[idx].copy()
        up = self.upper[idx[:-1]]
        lo = self.lower[idx[1:]]
        e = -np.sqrt(up * lo)
        return d, e, idx, self.weights[idx]


def assemble_operator(
    grid: Grid,
    a,
    q,
    bc_left: BoundaryCondition,
    bc_right: BoundaryCondition,
) -> EllipticOperator:
    """Assemble the conservative finite-difference form of ``-(a w')' + q w``."""
    a = _as_values(a, grid)
    q = _as_values(q, grid)
    if np.any(a <= 0):
        raise ValueError("diffusion coefficient must be strictly positive")
    n, h = grid.n_nodes, grid.h
    a_half = 0.5 * (a[1:] + a[:-1])
    inv_h2 = 1.0 / (h * h)

    lower = np.zeros(n)
    upper = np.zeros(n)
    diag = np.array(q, dtype=float)
    lower[1:-1] = -a_half[:-1] * inv_h2
    upper[1:-1] = -a_half[1:] * inv_h2
    diag[1:-1] += (a_half[:-1] + a_half[1:]) * inv_h2

    weights = np.ones(n)
    scale = [1.0, 1.0]
    if bc_left.kind == "impedance":
        # ghost node from a_0 (w_1 - w_{-1}) / (2h) = gamma w_0 - data
        a_out = _ghost_half(a[0], a[1], a_half[0])
        s_ = a_half[0] + a_out
        upper[0] = -s_ * inv_h2
        diag[0] += s_ * inv_h2 + 2.0 * bc_left.gamma * a_out / (a[0] * h)
        scale[0] = 2.0 * a_out / (a[0] * h)
        weights[0] = a_half[0] / s_
    else:
        diag[0] = 1.0
    if bc_right.kind == "impedance":
        a_out = _ghost_half(a[-1], a[-2], a_half[-1])
        s_ = a_half[-1] + a_out
        lower[-1] = -s_ * inv_h2
        diag[-1] += s_ * inv_h2 + 2.0 * bc_right.gamma * a_out / (a[-1] * h)
        scale[1] = 2.0 * a_out / (a[-1] * h)
        weights[-1] = a_half[-1] / s_
    else:
        diag[-1] = 1.0

    return EllipticOperator(grid, lower, diag, upper, bc_left, bc_right, weights, tuple(scale))


def _ghost_half(a_end, a_next, a_inner_half):
    # linear extrapolation of a to the half node outside the domain
    a_out = 1.5 * a_end - 0.5 * a_next
    return a_out if a_out > 0 else a_inner_half


# one-sided fourth-order stencils for the first two nodes (times 12 h, 12 h^2)
_D1_EDGE = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0, 0.0], [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]])
_D2_EDGE = np.array([[45.0, -154.0, 214.0, -156.0, 61.0, -10.0], [10.0, -15.0, -4.0, 14.0, -6.0, 1.0]])


def _d1(v: np.ndarray, h: float, order: int) -> np.ndarray:
    if order == 2:
        return np.gradient(v, h, axis=0, edge_order=2)
    if order != 4:
        raise ValueError("order must be 2 or 4")
    if v.shape[0] < 6:
        raise ValueError("fourth-order differences need at least 6 nodes")
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / 12.0
    out[:2] = np.tensordot(_D1_EDGE, v[:6], axes=(1, 0)) / 12.0
    out[-2:] = -np.tensordot(_D1_EDGE[::-1], v[-6:][::-1], axes=(1, 0)) / 12.0
    return out / h


def _d2(v: np.ndarray, h: float, order: int) -> np.ndarray:
    out = np.empty_like(v)
    if order == 2:
        if v.shape[0] < 4:
            raise ValueError("second derivative needs at least 4 nodes")
        out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
        out[0] = 2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]
        out[-1] = 2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]
        return out / (h * h)
    if order != 4:
        raise ValueError("order must be 2 or 4")
    if v.shape[0] < 6:
        raise ValueError("fourth-order differences need at least 6 nodes")
    out[2:-2] = (-v[:-4] + 16.0 * v[1:-3] - 30.0 * v[2:-2] + 16.0 * v[3:-1] - v[4:]) / 12.0
    out[:2] = np.tensordot(_D2_EDGE, v[:6], axes=(1, 0)) / 12.0
    out[-2:] = np.tensordot(_D2_EDGE[::-1], v[-6:][::-1], axes=(1, 0)) / 12.0
    return out / (h * h)


def differentiate(f: SampledField, order: int = 2) -> SampledField:
    """First derivative by finite differences.

    ``order=2``: centred differences inside, one-sided second order at the ends.
    ``order=4``: five-point centred stencil, one-sided fourth order at the two
    nodes next to each end.
    """
    return f.with_values(_d1(f.values, f.grid.h, order))


def second_derivative(f: SampledField, order: int = 2) -> SampledField:
    """Second derivative; same ``order`` convention as :func:`differentiate`."""
    return f.with_values(_d2(f.values, f.grid.h, order))


def flux_derivative(a, u: SampledField, order: int = 4) -> SampledField:
    """``(a u')'`` evaluated as ``a u'' + a' u'``.

    The default fourth-order stencils keep the error smooth up to the
    boundary, so further differentiation of derived quantities does not lose
    an order there. ``a`` may be a field or an array of shape ``(n,)`` or
    ``(n, m)``; in the latter case every column is treated as a coefficient.
    """
    av = a.values if isinstance(a, SampledField) else np.asarray(a, dtype=float)
    h = u.grid.h
    du = _d1(u.values, h, order)
    d2u = _d2(u.values, h, order)
    da = _d1(av, h, order)
    if av.ndim == 2:
        return av * d2u[:, None] + da * du[:, None]
    return u.with_values(av * d2u + da * du)


def integrate_cumulative(f: SampledField) -> SampledField:
    """Cumulative trapezoidal integral from ``x = 0``."""
    return f.with_values(cumulative_trapezoid(f.values, dx=f.grid.h, initial=0.0))


def _whittaker(y: np.ndarray, lam: float) -> np.ndarray:
    # (I + lam D2^T D2) z = y, D2 the second-difference matrix; pentadiagonal SPD.
    n = y.size
    d2 = np.zeros((3, n))
    # diagonals of D2^T D2
    main = np.full(n, 6.0)
    main[[0, -1]] = 1.0
    main[[1, -2]] = 5.0
    off1 = np.full(n - 1, -4.0)
    off1[[0, -1]] = -2.0
    off2 = np.ones(n - 2)
    d2[2] = 1.0 + lam * main
    d2[1, 1:] = lam * off1
    d2[0, 2:] = lam * off2
    return solveh_banded(d2, y)


def noise_amplitude(residual) -> float:
    """Amplitude ``sqrt(3) * RMS`` of uniform noise with the same RMS as ``residual``."""
    r = np.asarray(residual, dtype=float)
    return float(np.sqrt(3.0 * np.mean(r * r)))


def smooth_to_h2(noisy: SampledField, noise_level: float, max_steps: int = 60) -> SampledField:
    """Filter noisy samples with a discrete cubic smoothing spline.

    The fit minimises ``|z - y|^2 + lam |D2 z|^2`` (``D2`` the second
    difference). ``lam`` is found by bisection in ``log10`` so that the
    residual amplitude :func:`noise_amplitude` of ``z - y`` equals
    ``noise_level * max|y|``, the amplitude of uniform noise on
    ``[-delta, delta] * max|y|``. That residual grows monotonically with
    ``lam``; a sup-norm residual would not, being set by the single largest
    noise sample. With ``noise_level == 0`` the input is returned unchanged.
    """
    if noise_level < 0:
        raise ValueError("noise level must be non-negative")
    if noise_level == 0:
        return noisy
    y = noisy.values
    target = noise_level * np.max(np.abs(y))

    def resid(log_lam):
        z = _whittaker(y, 10.0**log_lam)
        return noise_amplitude(z - y), z

    # n^4 penalty already forces an almost linear fit; beyond it the system loses definiteness
    lo, hi = -8.0, 4.0 * np.log10(y.size) + 2.0
    r_lo, z_lo = resid(lo)
    r_hi, z_hi = resid(hi)
    if r_lo >= target:
        return noisy.with_values(z_lo)
    if r_hi <= target:
        return noisy.with_values(z_hi)
    z_best = z_hi
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        r_mid, z_best = resid(mid)
        if abs(r_mid - target) <= 1e-3 * target:
            break
        if r_mid > target:
            hi = mid
        else:
            lo = mid
    return noisy.with_values(z_best)


def excise_and_interpolate(
    f: SampledField,
    holes: Sequence[tuple[int, int]],
    pinned_zeros: Sequence[int] = (),
    noise_level: float = 0.0,
    allow_edges: bool = False,
) -> SampledField:
    """Replace values on index intervals by a spline through the surrounding data.

    Parameters
    ----------
    f : SampledField
        Field to repair.
    holes : sequence of (start, stop)
        Half-open index intervals ``[start, stop)`` to refill. Must be disjoint
        and, unless ``allow_edges``, strictly inside the domain.
    pinned_zeros : sequence of int
        Nodes (inside holes) where the refilled curve is forced through 0.
    noise_level : float
        0 selects an interpolating cubic spline; otherwise a smoothing spline
        with GCV-chosen smoothing is fitted.
    allow_edges : bool
        Permit holes touching an endpoint; the spline then extrapolates.
    """
    n = f.grid.n_nodes
    holes = sorted((int(s), int(e)) for s, e in holes)
    if not holes:
        return f
    covered = sum(e - s for s, e in holes)
    if covered > 0.25 * n:
        raise ValueError(f"holes cover {covered} of {n} nodes (> 25%)")
    prev_end = -1
    for s, e in holes:
        if e <= s:
            raise ValueError(f"empty hole {(s, e)}")
        if s < prev_end:
            raise ValueError("holes must be disjoint")
        if not allow_edges and (s < 1 or e > n - 1):
            raise ValueError(f"hole {(s, e)} is not strictly inside the domain")
        prev_end = e

    x = f.grid.nodes
    vals = f.values.copy()
    in_hole = np.zeros(n, dtype=bool)
    for s, e in holes:
        in_hole[max(s, 0):min(e, n)] = True
    pinned = set(int(p) for p in pinned_zeros)

    for s, e in holes:
        width = e - s
        pad = max(3 * width, 8)
        lo, hi = max(0, s - pad), min(n, e + pad)
        support = np.arange(lo, hi)
        support = support[~in_hole[support]]
        pins = [p for p in sorted(pinned) if s <= p < e]
        xs = np.concatenate([x[support], x[pins]])
        ys = np.concatenate([f.values[support], np.zeros(len(pins))])
        order = np.argsort(xs)
        xs, ys = xs[order], ys[order]
        if noise_level > 0 and xs.size > 5:
            w = np.ones_like(xs)
            w[np.isin(xs, x[pins])] = 1e6
            spl = make_smoothing_spline(xs, ys, w=w)
        else:
            spl = CubicSpline(xs, ys, bc_type="not-a-knot")
        idx = np.arange(max(s, 0), min(e, n))
        vals[idx] = spl(x[idx])
        for p in pins:
            vals[p] = 0.0
    return f.with_values(vals)


def write_field_csv(path, f: SampledField) -> Path:
    """Write ``x,value`` rows with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("x,value\n")
        for xi, vi in zip(f.grid.nodes, f.values):
            fh.write(f"{xi:.17g},{vi:.17g}\n")
    return path


def read_field_csv(path, length: float | None = None) -> SampledField:
    """Read a field written by :func:`write_field_csv`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "value"]:
        raise ValueError(f"{path}: expected header 'x,value'")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    grid = Grid(len(data), float(data[-1, 0]) if length is None else length)
    if not np.allclose(grid.nodes, data[:, 0], rtol=0, atol=1e-12 * grid.length):
        raise ValueError(f"{path}: nodes are not a uniform grid")
    return SampledField(grid, data[:, 1])

"""Experiment orchestration: data generation, inversions, the three-scheme table and sweeps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..discretization import BoundaryCondition, Grid, SampledField, differentiate, write_field_csv
from ..forward import ForwardSolveError, ProblemSpec
from ..inversion.basis import AdmissibleSet, RbfBasis
from ..inversion.diagnostics import contraction_factor, make_probe_pairs
from ..inversion.model import ForwardModel, ObservationSet, make_observations
from ..inversion.schemes import (
    RunResult,
    SchemeError,
    StepOptions,
    compute_W,
    run_scheme,
)
from .config import COEFFICIENTS, FORCINGS, PROFILES, REACTIONS, ExperimentConfig, serialize
from .plotting import emit_plot, emit_xy_plot

__all__ = [
    "Setup",
    "build_setup",
    "generate_data",
    "run_inversion",
    "TableEntry",
    "Table1",
    "run_table1",
    "SweepPoint",
    "run_sweep",
    "write_history_csv",
    "HISTORY_COLUMNS",
]

HISTORY_COLUMNS = ("iter", "res", "err_a_sup", "err_q_sup", "err_a_l2", "err_q_l2")
TABLE_SCHEMES = ("parallel", "eliminate_q", "eliminate_a")
NUMERICAL_ERRORS = (ForwardSolveError, SchemeError, np.linalg.LinAlgError, FloatingPointError)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _bc(cfg: ExperimentConfig, prefix: str) -> BoundaryCondition:
    return BoundaryCondition(cfg[f"{prefix}.kind"], cfg[f"{prefix}.gamma"], cfg[f"{prefix}.data"])


@dataclass(frozen=True, eq=False)
class Setup:
    """Everything derived from a configuration: grid, true coefficients, forward model."""

    config: ExperimentConfig
    grid: Grid
    a_true: SampledField
    q_true: SampledField
    model: ForwardModel
    admissible: AdmissibleSet
    basis: RbfBasis
    options: StepOptions

    @property
    def truth(self):
        return (self.a_true, self.q_true)

    def start(self, scheme: Optional[str] = None):
        scheme = scheme or self.config["inversion.scheme"]
        q0 = self.grid.sample(COEFFICIENTS[self.config["inversion.start_q"]])
        if scheme == "potential_only":
            return (self.a_true, q0)
        return (self.grid.sample(COEFFICIENTS[self.config["inversion.start_a"]]), q0)


def _model(cfg: ExperimentConfig, grid: Grid) -> tuple:
    a = grid.sample(COEFFICIENTS[cfg["problem.a"]])
    q = grid.sample(COEFFICIENTS[cfg["problem.q"]])
    common = dict(
        alpha=cfg["problem.alpha"],
        T=cfg["problem.T"],
        grid=grid,
        a=a,
        q=q,
        forcing=FORCINGS[cfg["problem.forcing"]],
        reaction=REACTIONS[cfg["problem.reaction"]],
    )
    spec_u = ProblemSpec(
        u0=grid.sample(PROFILES[cfg["problem.u0"]]),
        bc_left=_bc(cfg, "problem.u.left"),
        bc_right=_bc(cfg, "problem.u.right"),
        **common,
    )
    spec_v = None
    if cfg["problem.mode"] == "two_experiments":
        spec_v = ProblemSpec(
            u0=grid.sample(PROFILES[cfg["problem.v0"]]),
            bc_left=_bc(cfg, "problem.v.left"),
            bc_right=_bc(cfg, "problem.v.right"),
            **common,
        )
    model = ForwardModel(
        spec_u, spec_v, cfg["problem.n_steps"], cfg["problem.time_scheme"], cfg["problem.mode"]
    )
    return a, q, model


def build_setup(cfg: ExperimentConfig) -> Setup:
    grid = Grid(cfg["problem.n_nodes"])
    a, q, model = _model(cfg, grid)
    admissible = AdmissibleSet(
        a_min=cfg["inversion.a_min"], a_pinned=cfg["inversion.a_pinned"], pin_at=cfg["inversion.pin_at"]
    )
    sigma = cfg["inversion.sigma"] or None
    basis = RbfBasis(grid, cfg["inversion.n_centers"], sigma, cfg["inversion.width_factor"])
    options = StepOptions(rcond=cfg["inversion.rcond"] or None)
    return Setup(cfg, grid, a, q, model, admissible, basis, options)


def _clean_data(setup: Setup) -> tuple:
    cfg = setup.config
    r = cfg["problem.data_refine"]
    if r == 1:
        return setup.model.solve(setup.a_true, setup.q_true).states
    # data from an r-times finer grid, subsampled onto the inversion grid
    fine = Grid((setup.grid.n_nodes - 1) * r + 1, setup.grid.length)
    a, q, model = _model(cfg, fine)
    states = model.solve(a, q).states
    return tuple(SampledField(setup.grid, s.values[::r]) for s in states)


def generate_data(setup: Setup, out_dir: Optional[Path] = None) -> ObservationSet:
    """Forward-solve at the true coefficients, add seeded noise and filter.

    With ``out_dir`` the raw and filtered data, the initial values and ``W``
    are written as CSV files and SVG plots.
    """
    cfg = setup.config
    obs = make_observations(_clean_data(setup), cfg["noise.delta"], cfg["noise.seed"])
    if out_dir is not None:
        out = Path(out_dir)
        names = ("g_u", "g_v") if cfg["problem.mode"] != "two_times" else ("g_1", "g_2")
        for name, raw, filt in zip(names, obs.raw, obs.filtered):
            write_field_csv(out / f"{name}.csv", raw)
            write_field_csv(out / f"{name}_filtered.csv", filt)
        inits = [s.u0 for s in setup.model.specs()]
        labels = ["u0", "v0"][: len(inits)]
        emit_plot(inits + list(obs.filtered), labels + [f"{n} (filtered)" for n in names[: len(obs)]],
                  out / "data.svg", title="initial values and data")
        if len(obs) == 2:
            W = compute_W(obs.g_u, obs.g_v)
            emit_plot([W, differentiate(W, 4)], ["W", "W'"], out / "W.svg", title="W and W'")
    return obs


def write_history_csv(path: Path, result: RunResult) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in result.history:
            w.writerow([_fmt(row[c]) for c in HISTORY_COLUMNS])
    return path


def _write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _run(setup: Setup, obs: ObservationSet, scheme: str, truth=True) -> RunResult:
    cfg = setup.config
    fixed = cfg["inversion.fixed_iterations"] or None
    return run_scheme(
        scheme,
        setup.model,
        obs,
        setup.start(scheme),
        setup.admissible,
        setup.basis,
        setup.truth if truth else None,
        tau=cfg["inversion.tau"],
        k_max=cfg["inversion.k_max"],
        fixed_iterations=fixed,
        options=setup.options,
    )


def run_inversion(
    setup: Setup,
    obs: Optional[ObservationSet] = None,
    scheme: Optional[str] = None,
    out_dir: Optional[Path] = None,
) -> RunResult:
    """Run one scheme on configured data; optionally write iterates, history and metadata."""
    cfg = setup.config
    scheme = scheme or cfg["inversion.scheme"]
    if obs is None:
        obs = generate_data(setup, out_dir)
    result = _run(setup, obs, scheme)
    if out_dir is not None:
        out = Path(out_dir)
        for st in result.states:
            write_field_csv(out / "iterates" / f"a_{st.k}.csv", st.a)
            write_field_csv(out / "iterates" / f"q_{st.k}.csv", st.q)
        write_history_csv(out / "history.csv", result)
        last = result.states[-1]
        emit_plot([last.a, setup.a_true], [f"a_{last.k}", "a_act"], out / "a.svg", title=f"{scheme}: a")
        emit_plot([last.q, setup.q_true], [f"q_{last.k}", "q_act"], out / "q.svg", title=f"{scheme}: q")
        if scheme == "parallel" and "sv_A" in result.states[1].diagnostics:
            d = result.states[1].diagnostics
            n = min(d["sv_A"].size, d["sv_Q"].size)
            emit_xy_plot(np.arange(1, n + 1), [d["sv_A"][:n], d["sv_Q"][:n]], ["A", "Q"],
                         out / "singular_values.svg", xlabel="index", logy=True,
                         title="singular values")
        _write_json(out / "run.json", {
            "scheme": scheme,
            "seed": cfg["noise.seed"],
            "noise_level": cfg["noise.delta"],
            "iterations": result.states[-1].k,
            "stop_index": result.stop_index,
            "stopped_by": result.stopped_by,
            "diverging": result.diverging,
            "threshold": result.threshold,
            "config": serialize(cfg).splitlines(),
        })
    return result


@dataclass(frozen=True)
class TableEntry:
    """Per-iteration norms of one scheme, or the error that stopped it."""

    scheme: str
    history: tuple = ()
    stop_index: Optional[int] = None
    diverging: bool = False
    error: str = ""

    def row(self, key: str) -> list:
        return [h[key] for h in self.history[1:]]


@dataclass(frozen=True)
class Table1:
    entries: tuple

    ROWS = (
        ("err_a_sup", "||a_n - a_act||_inf"),
        ("err_q_sup", "||q_n - q_act||_inf"),
        ("err_a_l2", "||a_n - a_act||_2"),
        ("err_q_l2", "||q_n - q_act||_2"),
    )

    def entry(self, scheme: str) -> TableEntry:
        for e in self.entries:
            if e.scheme == scheme:
                return e
        raise KeyError(scheme)

    def format(self) -> str:
        width = max((len(e.history) - 1 for e in self.entries), default=0)
        lines = ["Iteration".ljust(24) + "".join(f"{k:>10d}" for k in range(1, width + 1))]
        for e in self.entries:
            note = f"  [{e.error}]" if e.error else ("  [diverging]" if e.diverging else "")
            lines.append(f"{e.scheme} scheme{note}")
            for key, label in self.ROWS:
                vals = e.row(key)
                cells = "".join(f"{v:10.4f}" for v in vals) + "         -" * (width - len(vals))
                lines.append(f"  {label:<22}{cells}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "norm", "iter", "value"])
            for e in self.entries:
                for key, _ in self.ROWS:
                    for k, v in enumerate(e.row(key), start=1):
                        w.writerow([e.scheme, key, k, _fmt(v)])
        return path


def run_table1(setup: Setup, out_dir: Optional[Path] = None, obs: Optional[ObservationSet] = None) -> Table1:
    """Run the three schemes on one data set and tabulate the error norms per iteration.

    A scheme that fails is recorded with its error message instead of aborting the table.
    """
    if obs is None:
        obs = generate_data(setup, out_dir)
    entries = []
    for scheme in TABLE_SCHEMES:
        try:
            r = _run(setup, obs, scheme)
            entries.append(TableEntry(scheme, r.history, r.stop_index, r.diverging))
        except NUMERICAL_ERRORS as exc:
            entries.append(TableEntry(scheme, error=f"{type(exc).__name__}: {exc}"))
    table = Table1(tuple(entries))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table1.txt").write_text(table.format())
        table.write_csv(out / "table1.csv")
    return table


@dataclass(frozen=True)
class SweepPoint:
    value: float
    iterations: int = 0
    stop_index: Optional[int] = None
    first_err_a_sup: float = float("nan")
    final_err_a_sup: float = float("nan")
    final_err_q_l2: float = float("nan")
    contraction: float = float("nan")
    error: str = ""


_AXES = {"T": "problem.T", "alpha": "problem.alpha", "delta": "noise.delta"}


def run_sweep(
    setup: Setup,
    axis: str,
    values: Sequence[float],
    out_dir: Optional[Path] = None,
    contraction: bool = False,
    n_probes: int = 5,
) -> list[SweepPoint]:
    """Repeat the configured inversion for each value of ``T``, ``alpha`` or ``delta``.

    Failures are recorded per value and the sweep continues. With
    ``contraction`` the empirical contraction factor on exact data is added.
    """
    if axis not in _AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    values = [float(v) for v in values]
    if values != sorted(values):
        raise ValueError("sweep values must be sorted")
    scheme = setup.config["inversion.scheme"]
    points = []
    for value in values:
        cfg = setup.config.with_updates(**{_AXES[axis]: value})
        try:
            s = build_setup(cfg)
            obs = generate_data(s)
            r = _run(s, obs, scheme)
            factor = float("nan")
            if contraction:
                exact = make_observations(obs.clean, 0.0) if obs.noise_level else obs
                probes = make_probe_pairs(s.a_true, s.q_true, n_probes, cfg["noise.seed"], admissible=s.admissible)
                factor = contraction_factor(scheme, s.model, exact, probes, s.basis, s.admissible, s.options).factor
            h = r.history
            points.append(SweepPoint(value, h[-1]["iter"], r.stop_index, h[1]["err_a_sup"],
                                     h[-1]["err_a_sup"], h[-1]["err_q_l2"], factor))
        except NUMERICAL_ERRORS as exc:
            points.append(SweepPoint(value, error=f"{type(exc).__name__}: {exc}"))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([axis, "iterations", "stop_index", "first_err_a_sup", "final_err_a_sup",
                        "final_err_q_l2", "contraction", "error"])
            for p in points:
                w.writerow([_fmt(p.value), p.iterations, "" if p.stop_index is None else p.stop_index,
                            _fmt(p.first_err_a_sup), _fmt(p.final_err_a_sup), _fmt(p.final_err_q_l2),
                            _fmt(p.contraction), p.error])
        ok = [p for p in points if not p.error]
        if ok:
            emit_xy_plot([p.value for p in ok],
                         [[p.first_err_a_sup for p in ok], [p.final_err_a_sup for p in ok],
                          [p.final_err_q_l2 for p in ok]],
                         ["first ||a-a_act||_inf", "final ||a-a_act||_inf", "final ||q-q_act||_2"],
                         out / "sweep.svg", xlabel=axis, title=f"{scheme} sweep over {axis}")
    return points

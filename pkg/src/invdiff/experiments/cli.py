"""Command line entry point ``invdiff``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..discretization import SampledField, write_field_csv
from ..eigen import KernelConvergenceError, gl_kernel, liouville_transform, solve_eigen
from ..forward import solve_forward
from ..special import DomainError, mittag_leffler
from .config import ConfigError, ExperimentConfig, load_config, serialize
from .plotting import emit_plot
from .runner import NUMERICAL_ERRORS, build_setup, run_inversion, run_sweep, run_table1

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_SCHEME_NAMES = {
    "parallel": "parallel",
    "eliminate-q": "eliminate_q",
    "eliminate-a": "eliminate_a",
    "potential-only": "potential_only",
}


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_updates(**{"noise.seed": args.seed})
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_forward(args) -> int:
    cfg = _config(args)
    setup = build_setup(cfg)
    out = _out(args)
    model = setup.model.with_coefficients(setup.a_true, setup.q_true)
    finals, labels = [], []
    for name, spec in zip(("u", "v"), model.specs()):
        hist = solve_forward(spec, model.n_steps, model.scheme)
        write_field_csv(out / f"{name}_T.csv", hist.final)
        write_field_csv(out / f"{name}_caputo_T.csv", hist.caputo_at_T)
        finals.append(hist.final)
        labels.append(f"{name}(x, T)")
    emit_plot(finals, labels, out / "forward.svg", title="final-time profiles")
    (out / "config.txt").write_text(serialize(cfg))
    return EXIT_OK


def _cmd_invert(args) -> int:
    cfg = _config(args)
    if args.scheme:
        cfg = cfg.with_updates(**{"inversion.scheme": _SCHEME_NAMES[args.scheme]})
    out = _out(args)
    result = run_inversion(build_setup(cfg), out_dir=out)
    last = result.history[-1]
    print(f"{result.scheme}: {last['iter']} iterations, residual {_fmt(last['res'])}, stop {result.stopped_by}")
    return EXIT_OK


def _cmd_table1(args) -> int:
    cfg = _config(args)
    table = run_table1(build_setup(cfg), out_dir=_out(args))
    sys.stdout.write(table.format())
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    values = sorted(float(v) for v in args.values.split(","))
    points = run_sweep(build_setup(cfg), args.axis, values, _out(args), contraction=args.contraction)
    for p in points:
        status = p.error or f"iterations {p.iterations}, final ||a-a_act||_inf {_fmt(p.final_err_a_sup)}"
        print(f"{args.axis}={_fmt(p.value)}: {status}")
    return EXIT_OK


def _cmd_ml_eval(args) -> int:
    z = np.array([float(v) for v in args.z.split(",")])
    vals = np.atleast_1d(mittag_leffler(args.alpha, args.beta, z))
    rows = [(zi, vi) for zi, vi in zip(z, vals)]
    if args.out:
        out = _out(args)
        with open(out / "mittag_leffler.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z", "value"])
            w.writerows([[_fmt(zi), _fmt(vi)] for zi, vi in rows])
    for zi, vi in rows:
        print(f"{_fmt(zi)},{_fmt(vi)}")
    return EXIT_OK


def _cmd_spectral(args) -> int:
    cfg = _config(args)
    setup = build_setup(cfg)
    spec = setup.model.spec_u
    system = solve_eigen(setup.grid, setup.a_true, setup.q_true, spec.bc_left, spec.bc_right, args.modes)
    out = _out(args)
    with open(out / "eigenvalues.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "eigenvalue"])
        for n, lam in enumerate(system.eigenvalues, start=1):
            w.writerow([n, _fmt(lam)])
    for n, phi in enumerate(system.eigenfunctions, start=1):
        write_field_csv(out / f"eigenfunction_{n}.csv", phi)
    k = min(4, len(system.eigenfunctions))
    emit_plot(list(system.eigenfunctions[:k]), [f"phi_{n}" for n in range(1, k + 1)],
              out / "eigenfunctions.svg", title="eigenfunctions")
    for n, lam in enumerate(system.eigenvalues, start=1):
        print(f"{n},{_fmt(lam)}")
    return EXIT_OK


def _cmd_gl_kernel(args) -> int:
    cfg = _config(args)
    setup = build_setup(cfg)
    canon = liouville_transform(setup.a_true, setup.q_true).on_unit_interval()
    kern = gl_kernel(canon)
    out = _out(args)
    diag = SampledField(kern.grid, kern.diagonal())
    write_field_csv(out / "kernel_diagonal.csv", diag)
    write_field_csv(out / "canonical_potential.csv", canon)
    with open(out / "kernel.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "t", "K"])
        w.writerows([_fmt(x), _fmt(t), _fmt(k)] for x, t, k in zip(*kern.triangle()))
    emit_plot([diag], ["K(x, x)"], out / "kernel_diagonal.svg", title="kernel diagonal")
    print(f"sweeps {kern.sweeps}, residual {_fmt(kern.residual)}, sup|K| {_fmt(kern.sup())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invdiff", description="Coefficient identification for (fractional) diffusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="configuration file (defaults when omitted)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override noise.seed")

    p = sub.add_parser("forward", help="solve the forward problems at the true coefficients")
    common(p)
    p.set_defaults(func=_cmd_forward)

    p = sub.add_parser("invert", help="run one reconstruction scheme")
    common(p)
    p.add_argument("--scheme", choices=sorted(_SCHEME_NAMES))
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("table1", help="compare the three schemes on one data set")
    common(p)
    p.set_defaults(func=_cmd_table1)

    p = sub.add_parser("sweep", help="repeat the inversion over T, alpha or delta")
    common(p)
    p.add_argument("--axis", required=True, choices=("T", "alpha", "delta"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--contraction", action="store_true", help="also estimate contraction factors")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ml-eval", help="evaluate the Mittag-Leffler function")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--x", "--z", dest="z", required=True, help="comma-separated non-positive arguments")
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(func=_cmd_ml_eval)

    p = sub.add_parser("spectral", help="eigenvalues of the configured operator")
    common(p)
    p.add_argument("--modes", type=int, default=10)
    p.set_defaults(func=_cmd_spectral)

    p = sub.add_parser("gl-kernel", help="transmutation kernel of the canonical potential")
    common(p)
    p.set_defaults(func=_cmd_gl_kernel)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS + (KernelConvergenceError,) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

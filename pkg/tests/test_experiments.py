import filecmp
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invdiff.discretization import Grid
from invdiff.experiments import (
    ConfigError,
    ExperimentConfig,
    build_setup,
    emit_plot,
    emit_xy_plot,
    generate_data,
    parse_config,
    run_inversion,
    run_sweep,
    run_table1,
    serialize,
)
from invdiff.experiments.cli import main
from invdiff.experiments.config import DEFAULTS

SMALL = {
    "problem.n_nodes": 65,
    "problem.n_steps": 64,
    "inversion.n_centers": 9,
    "inversion.k_max": 2,
}


def small_text(**extra):
    values = {**SMALL, **extra}
    return "".join(f"{k} = {v}\n" for k, v in values.items())


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("# small grid for quick runs\n" + small_text())
    return path


def tree(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg["problem.T"] == 0.5 and cfg["noise.seed"] == 1 and cfg["inversion.scheme"] == "parallel"

    def test_round_trip_of_defaults(self):
        cfg = ExperimentConfig()
        assert parse_config(serialize(cfg)) == cfg

    @settings(max_examples=50, deadline=None)
    @given(
        T=st.floats(1e-3, 10.0),
        alpha=st.floats(0.01, 1.0),
        n=st.integers(9, 4097),
        delta=st.floats(0.0, 0.2),
        scheme=st.sampled_from(["parallel", "eliminate_q", "eliminate_a", "potential_only"]),
        seed=st.integers(0, 2**31),
    )
    def test_round_trip(self, T, alpha, n, delta, scheme, seed):
        cfg = ExperimentConfig().with_updates(**{
            "problem.T": T, "problem.alpha": alpha, "problem.n_nodes": n,
            "noise.delta": delta, "inversion.scheme": scheme, "noise.seed": seed,
        })
        back = parse_config(serialize(cfg))
        assert back == cfg and serialize(back) == serialize(cfg)

    def test_comments_and_blank_lines(self):
        cfg = parse_config("\n# comment\nproblem.T = 2.0  # trailing\n\n")
        assert cfg["problem.T"] == 2.0

    @pytest.mark.parametrize("text", [
        "problem.T = -1",
        "problem.alpha = 1.5",
        "problem.n_nodes = 4",
        "problem.n_nodes = many",
        "noise.delta = 0.5",
        "problem.a = unknown_profile",
        "inversion.scheme = newton",
        "no.such.key = 1",
        "problem.T",
        "problem.T = 1\nproblem.T = 2",
        "problem.T = nan",
        "inversion.a_min = 0",
    ])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_every_default_key_is_serialised(self):
        lines = serialize(ExperimentConfig()).splitlines()
        assert [line.split(" = ")[0] for line in lines] == sorted(DEFAULTS)


class TestPlots:
    def test_svg_is_deterministic_and_valid(self, tmp_path):
        g = Grid(33)
        fields = [g.sample(np.sin), g.sample(np.cos)]
        p1 = emit_plot(fields, ["sin", "cos"], tmp_path / "a.svg", title="t")
        p2 = emit_plot(fields, ["sin", "cos"], tmp_path / "b.svg", title="t")
        assert p1.read_bytes() == p2.read_bytes()
        ET.fromstring(p1.read_bytes())  # well-formed XML

    def test_csv_sidecar(self, tmp_path):
        g = Grid(5)
        emit_plot([g.sample(lambda x: 2 * x)], ["two x"], tmp_path / "p.svg")
        rows = (tmp_path / "p.csv").read_text().splitlines()
        assert rows[0] == "x,two x" and len(rows) == 6
        assert [float(v) for v in rows[-1].split(",")] == [1.0, 2.0]

    def test_xy_plot_log_axis(self, tmp_path):
        path = emit_xy_plot([1, 2, 3], [[1.0, 0.1, 0.01]], ["s"], tmp_path / "s.svg", logy=True)
        assert path.exists() and (tmp_path / "s.csv").exists()

    def test_argument_checks(self, tmp_path):
        g = Grid(5)
        with pytest.raises(ValueError):
            emit_plot([], [], tmp_path / "x.svg")
        with pytest.raises(ValueError):
            emit_plot([g.sample(np.sin)], ["a", "b"], tmp_path / "x.svg")
        with pytest.raises(ValueError):
            emit_plot([g.sample(np.sin), Grid(9).sample(np.sin)], ["a", "b"], tmp_path / "x.svg")
        with pytest.raises(ValueError):
            emit_xy_plot([1, 2], [[1, 2, 3]], ["a"], tmp_path / "x.svg")


@pytest.fixture(scope="module")
def small_setup():
    return build_setup(ExperimentConfig().with_updates(**SMALL))


class TestRunner:
    def test_generate_data_writes_files(self, small_setup, tmp_path):
        obs = generate_data(small_setup, tmp_path)
        assert len(obs) == 2 and obs.noise_level == 0.01
        for name in ("g_u.csv", "g_v_filtered.csv", "data.svg", "data.csv", "W.svg"):
            assert (tmp_path / name).exists(), name

    def test_run_inversion_outputs(self, small_setup, tmp_path):
        result = run_inversion(small_setup, out_dir=tmp_path)
        assert (tmp_path / "history.csv").read_text().startswith("iter,res,err_a_sup")
        assert (tmp_path / "iterates" / f"a_{result.final.k}.csv").exists()
        assert (tmp_path / "run.json").exists() and (tmp_path / "singular_values.svg").exists()

    def test_table_layout(self, small_setup, tmp_path):
        table = run_table1(small_setup, tmp_path)
        assert [e.scheme for e in table.entries] == ["parallel", "eliminate_q", "eliminate_a"]
        text = table.format()
        assert text.count("||a_n - a_act||_inf") == 3 and text.count("||q_n - q_act||_2") == 3
        for e in table.entries:
            assert e.error or len(e.history) >= 2
        rows = (tmp_path / "table1.csv").read_text().splitlines()
        assert rows[0] == "scheme,norm,iter,value"

    def test_table_records_failures(self, tmp_path):
        s = build_setup(ExperimentConfig().with_updates(**SMALL, **{"problem.reaction": "quadratic"}))
        table = run_table1(s)
        assert table.entry("eliminate_q").error.startswith("SchemeError")
        assert table.entry("eliminate_a").error.startswith("SchemeError")
        # the third parallel iterate has q near 10, for which u(1 - u) blows up in finite time
        assert table.entry("parallel").error.startswith("ForwardSolveError")
        assert "[ForwardSolveError" in table.format()

    def test_sweep(self, small_setup, tmp_path):
        points = run_sweep(small_setup, "T", [0.25, 0.5], tmp_path)
        assert [p.value for p in points] == [0.25, 0.5]
        assert all(not p.error for p in points)
        assert (tmp_path / "sweep.csv").exists() and (tmp_path / "sweep.svg").exists()

    def test_sweep_rejects_bad_axis(self, small_setup):
        with pytest.raises(ValueError):
            run_sweep(small_setup, "gamma", [1.0])
        with pytest.raises(ValueError):
            run_sweep(small_setup, "T", [2.0, 1.0])


class TestCli:
    def test_forward(self, config_file, tmp_path):
        out = tmp_path / "fwd"
        assert main(["forward", "--config", str(config_file), "--out", str(out)]) == 0
        assert {"u_T.csv", "v_T.csv", "forward.svg", "forward.csv", "config.txt"} <= set(tree(out))

    def test_invert(self, config_file, tmp_path, capsys):
        out = tmp_path / "inv"
        code = main(["invert", "--config", str(config_file), "--out", str(out), "--scheme", "eliminate-q"])
        assert code == 0 and "eliminate_q:" in capsys.readouterr().out

    def test_table1(self, config_file, tmp_path, capsys):
        assert main(["table1", "--config", str(config_file), "--out", str(tmp_path / "t")]) == 0
        assert "parallel scheme" in capsys.readouterr().out

    def test_sweep(self, config_file, tmp_path, capsys):
        code = main(["sweep", "--config", str(config_file), "--out", str(tmp_path / "s"),
                     "--axis", "delta", "--values", "0.02,0.01"])
        assert code == 0 and capsys.readouterr().out.startswith("delta=0.01")

    def test_ml_eval(self, capsys, tmp_path):
        assert main(["ml-eval", "--alpha", "0.5", "--x", "0,-1", "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "0,1"
        assert float(lines[1].split(",")[1]) == pytest.approx(0.427583576155807, rel=1e-14)
        assert (tmp_path / "mittag_leffler.csv").exists()

    def test_spectral(self, config_file, tmp_path, capsys):
        assert main(["spectral", "--config", str(config_file), "--out", str(tmp_path), "--modes", "3"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_gl_kernel(self, config_file, tmp_path, capsys):
        assert main(["gl-kernel", "--config", str(config_file), "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.startswith("sweeps")
        assert (tmp_path / "kernel.csv").exists() and (tmp_path / "kernel_diagonal.svg").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("problem.alpha = 2\n")
        assert main(["forward", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert main(["forward", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 2
        assert main(["ml-eval", "--alpha", "0.5", "--x", "1.0"]) == 2

    def test_numerical_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "nl.cfg"
        cfg.write_text(small_text(**{"problem.reaction": "quadratic", "inversion.scheme": "eliminate_q"}))
        assert main(["invert", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_deterministic_output_tree(self, config_file, tmp_path):
        dirs = []
        for run in ("one", "two"):
            out = tmp_path / run
            assert main(["table1", "--config", str(config_file), "--out", str(out), "--seed", "5"]) == 0
            dirs.append(out)
        assert tree(dirs[0]) == tree(dirs[1])
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], tree(dirs[0]), shallow=False)
        assert not mismatch and not errors

    def test_console_script_module(self):
        proc = subprocess.run([sys.executable, "-m", "invdiff.experiments.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "gl-kernel" in proc.stdout

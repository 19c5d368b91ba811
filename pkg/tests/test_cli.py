"""Config parsing, command dispatch, exit codes, artifact layout."""

import numpy as np
import pytest

from fracctrl.cli import (
    ConfigError,
    RunConfig,
    build_spec,
    main,
    parse_config,
    serialize_config,
)
from fracctrl.fracop import assemble_operator

TINY = """
problem.n = 31
problem.nt = 40
optimizer.kkt_tol = 1e-8
verify.mp_cases = 5
verify.estimate_cases = 3
verify.derivative_cases = 2
verify.lipschitz_pairs = 2
verify.vi_samples = 10
verify.coercivity_samples = 4
verify.growth_samples = 4
verify.starts = 2
"""


def read_kv(path):
    out = {}
    for line in path.read_text().strip().splitlines():
        key, value = line.split(" = ", 1)
        out[key] = value
    return out


class TestConfigParsing:
    def test_default_round_trip(self):
        cfg = RunConfig()
        assert parse_config(serialize_config(cfg)) == cfg

    def test_modified_round_trip(self):
        cfg = parse_config(TINY)
        assert cfg.problem.n == 31
        assert cfg.verify.mp_cases == 5
        assert parse_config(serialize_config(cfg)) == cfg

    def test_spec_round_trip_field_for_field(self):
        cfg = parse_config(TINY)
        spec_a = build_spec(cfg.problem)
        spec_b = build_spec(parse_config(serialize_config(cfg)).problem)
        assert spec_a.grid == spec_b.grid
        assert (spec_a.s, spec_a.alpha, spec_a.vmin, spec_a.vmax) == \
               (spec_b.s, spec_b.alpha, spec_b.vmin, spec_b.vmax)
        assert np.array_equal(spec_a.rho0, spec_b.rho0)
        assert np.array_equal(spec_a.rho_target, spec_b.rho_target)
        assert spec_a.rho0_sup == spec_b.rho0_sup

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="alpha_"):
            parse_config("problem.alpha_ = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="solver"):
            parse_config("solver.tol = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("problem.alpha\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="problem.n"):
            parse_config("problem.n = twelve\n")

    def test_unknown_suite_rejected(self):
        with pytest.raises(ConfigError, match="frobnicate"):
            parse_config("verify.suites = operator,frobnicate\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# header\n\nproblem.alpha = 2.0  # trailing\n")
        assert cfg.problem.alpha == 2.0

    def test_sigma0_auto(self):
        assert parse_config("optimizer.sigma0 = auto\n").optimizer.sigma0 is None
        assert parse_config("optimizer.sigma0 = 0.5\n").optimizer.sigma0 == 0.5

    def test_profile_errors(self):
        cfg = parse_config("problem.rho0 = blobby(1)\n")
        with pytest.raises(ConfigError, match="blobby"):
            build_spec(cfg.problem)


class TestCommands:
    def test_solve_zero_problem(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(TINY + "problem.rho0 = zero\n")
        out = tmp_path / "out"
        code = main(["solve", "--config", str(config), "--out", str(out)])
        assert code == 0
        rows = (out / "rho.csv").read_text().strip().splitlines()
        assert rows[0] == "t,x,value"
        values = np.array([float(r.split(",")[2]) for r in rows[1:]])
        assert np.all(values == 0.0)
        summary = read_kv(out / "summary.txt")
        spec = build_spec(parse_config(config.read_text()).problem)
        expected = np.sqrt(spec.grid.dx * np.sum(spec.rho_target**2))
        assert float(summary["tracking_error_l2"]) == pytest.approx(expected, rel=1e-14)

    def test_solve_eigen_instance_matches_closed_form(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            "problem.n = 24\nproblem.nt = 16\nproblem.omega_a = -1\nproblem.omega_b = 1\n"
            "problem.m = -2\nproblem.M = 2\nproblem.rho0 = eigen(1)\nproblem.rhod = zero\n")
        out = tmp_path / "out"
        code = main(["solve", "--config", str(config), "--out", str(out),
                     "--control", "constant(0.3)"])
        assert code == 0
        spec = build_spec(parse_config(config.read_text()).problem)
        vals, vecs = np.linalg.eigh(assemble_operator(spec.grid, spec.s).matrix)
        lam = vals[0]
        phi = vecs[:, 0]
        phi = phi / phi[np.argmax(np.abs(phi))]
        grid = spec.grid
        expected = ((1 + grid.dt * (lam - 0.3)) ** (-grid.nt)
                    * np.sqrt(grid.dx * np.dot(phi, phi)))
        summary = read_kv(out / "summary.txt")
        assert float(summary["tracking_error_l2"]) == pytest.approx(expected, rel=1e-12)

    def test_adjoint_command(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(TINY)
        out = tmp_path / "out"
        code = main(["adjoint", "--config", str(config), "--out", str(out),
                     "--control", "constant(0.2)"])
        assert code == 0
        assert (out / "q.csv").exists()
        assert "adjoint_sup" in read_kv(out / "summary.txt")

    def test_solve_with_csv_control_round_trip(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(TINY)
        out1 = tmp_path / "a"
        assert main(["optimize", "--config", str(config), "--out", str(out1)]) == 0
        out2 = tmp_path / "b"
        code = main(["solve", "--config", str(config), "--out", str(out2),
                     "--control", f"csv({out1 / 'u.csv'})"])
        assert code == 0

    def test_optimize_writes_artifacts_and_converges(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(TINY)
        out = tmp_path / "out"
        code = main(["optimize", "--config", str(config), "--out", str(out)])
        assert code == 0
        summary = read_kv(out / "summary.txt")
        assert summary["status"] == "converged"
        assert float(summary["kkt_residual"]) <= 1e-8
        assert summary["uniqueness_holds"] == "True"
        for name in ("u.csv", "rho.csv", "q.csv"):
            assert (out / name).exists()

    def test_optimize_budget_exhaustion_exit_code(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(TINY + "optimizer.max_iters = 1\noptimizer.kkt_tol = 1e-13\n")
        out = tmp_path / "out"
        code = main(["optimize", "--config", str(config), "--out", str(out)])
        assert code == 4
        assert (out / "u.csv").exists()  # artifacts written despite failure

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["solve", "--config", str(tmp_path / "nope.cfg"), "--out",
                     str(tmp_path / "out")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_key_exit_code(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("problem.alpha_ = 1\n")
        code = main(["solve", "--config", str(config), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "alpha_" in capsys.readouterr().err

    def test_stability_violation_exit_code(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("problem.T = 10\nproblem.nt = 2\n")
        code = main(["solve", "--config", str(config), "--out", str(tmp_path / "out"),
                     "--control", "constant(1)"])
        assert code == 3
        assert "stability" in capsys.readouterr().err

    def test_gradcheck(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(TINY)
        code = main(["gradcheck", "--config", str(config)])
        assert code == 0
        assert "relative_error" in capsys.readouterr().out

    def test_verify_single_suite(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["verify", "--suite", "operator", "--out", str(out)])
        assert code == 0
        text = (out / "report.txt").read_text()
        assert "overall: pass" in text
        assert (out / "report.csv").exists()

    def test_verify_reports_byte_identical_under_seed(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(TINY)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = main(["verify", "--config", str(config), "--seed", "7",
                         "--suite", "maximum-principle", "--out", str(out)])
            assert code == 0
            outs.append((out / "report.txt").read_bytes()
                        + (out / "report.csv").read_bytes())
        assert outs[0] == outs[1]

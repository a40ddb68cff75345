"""Tests for config parsing, case runs, studies, and the CLI."""

import numpy as np
import pytest

from pmgflow import harness as hz
from pmgflow.harness import (CaseConfig, ConfigError, SolverStats,
                             StageRecord, parse_config_text, parse_variants)


BOX_EULER = """
# free-stream box case
mesh.kind = box
mesh.nx = 3
mesh.ny = 3
equation.kind = euler
equation.mach = 0.3
case.degree = 2
case.scheme = esdirk2
case.dt = 0.1
case.steps = 1
ptc.atol = 1e-10
"""

SMALL_CYL = """
mesh.kind = cylinder
mesh.n_circ = 12
mesh.n_rad = 2
mesh.r_far = 8.0
equation.kind = navier-stokes
equation.mach = 0.1
equation.reynolds = 100
case.degree = 1
case.scheme = esdirk2
case.dt = 0.2
case.steps = 1
ptc.rtol = 1e-3
ptc.max_iters = 60
ptc.dtau_init = 0.1
ptc.refresh_every_n_ptc = 10
"""


class TestConfigParsing:
    def test_defaults_fill_missing_keys(self):
        cfg = parse_config_text("")
        assert cfg["case.scheme"] == "esdirk2"
        assert cfg["gmres.kdim"] == 30
        assert cfg["ptc.atol"] is None

    def test_values_and_comments(self):
        cfg = parse_config_text("case.dt = 0.25  # quarter step\n"
                                "mesh.periodic = true\n")
        assert cfg["case.dt"] == 0.25
        assert cfg["mesh.periodic"] is True

    def test_unknown_key_is_named(self):
        with pytest.raises(ConfigError, match="solver.magic"):
            parse_config_text("solver.magic = on")

    def test_bad_value_is_rejected(self):
        with pytest.raises(ConfigError, match="case.steps"):
            parse_config_text("case.steps = many")

    def test_invalid_scheme_lists_choices(self):
        with pytest.raises(ConfigError, match="esdirk2"):
            parse_config_text("case.scheme = bdf2")

    def test_missing_equals_sign(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("case.dt 0.1")

    def test_overrides_win(self):
        cfg = parse_config_text("case.dt = 0.1",
                                overrides={"case.dt": "0.5"})
        assert cfg["case.dt"] == 0.5

    def test_file_mesh_requires_path(self):
        cfg = parse_config_text("mesh.kind = file")
        with pytest.raises(ConfigError, match="mesh.path"):
            hz.mesh_from_config(cfg)


class TestVariants:
    def test_parse_blocks(self):
        v = parse_variants("variant a\ncase.precond = ej\n"
                           "variant b\ncase.precond = pmg\npmg.levels = 3-1\n")
        assert [name for name, _ in v] == ["a", "b"]
        assert v[1][1]["pmg.levels"] == "3-1"

    def test_key_before_header_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            parse_variants("case.dt = 0.1\n")

    def test_empty_file_rejected(self):
        with pytest.raises(ConfigError):
            parse_variants("# nothing here\n")


class TestSolverStats:
    def test_averages_recompute_from_records(self):
        st = SolverStats(kdim=30)
        st.records = [StageRecord(0, 1, 4, 12, 0, 0.1),
                      StageRecord(0, 2, 6, 20, 0, 0.2),
                      StageRecord(1, 1, 2, 10, 0, 0.1)]
        assert st.n_ptc_avg == pytest.approx((4 + 6 + 2) / 3)
        assert st.n_gmres_avg == pytest.approx((12 + 20 + 10) / 3)
        assert st.n_stages == 3

    def test_empty_stats(self):
        st = SolverStats(kdim=10)
        assert st.n_ptc_avg == 0.0
        assert st.n_gmres_avg == 0.0


class TestRunCase:
    def test_free_stream_step_is_trivial(self, tmp_path):
        cfg = parse_config_text(BOX_EULER)
        s = hz.run_case(cfg, tmp_path)
        assert s["converged"]
        assert s["final_residual"] < 1e-9
        for name in ("residual.csv", "stats.csv", "summary.csv"):
            text = (tmp_path / name).read_text()
            assert text.startswith("# pmgflow")

    def test_row_scheme_path(self, tmp_path):
        cfg = parse_config_text(BOX_EULER, overrides={"case.scheme": "row2"})
        s = hz.run_case(cfg, tmp_path)
        assert s["converged"]
        assert s["final_residual"] < 1e-9
        # one linear solve per stage was logged
        assert s["stats"].n_stages == 2

    def test_cylinder_writes_forces(self, tmp_path):
        cfg = parse_config_text(SMALL_CYL)
        s = hz.run_case(cfg, tmp_path)
        assert s["converged"]
        lines = (tmp_path / "forces.csv").read_text().splitlines()
        assert lines[0] == "# pmgflow forces v1"
        assert lines[1] == "t,cd,cl"
        assert len(lines) == 3

    def test_residual_csv_bitwise_deterministic(self, tmp_path):
        cfg = parse_config_text(SMALL_CYL)
        hz.run_case(cfg, tmp_path / "a")
        hz.run_case(cfg, tmp_path / "b")
        ra = (tmp_path / "a" / "residual.csv").read_bytes()
        rb = (tmp_path / "b" / "residual.csv").read_bytes()
        assert len(ra) > 100
        assert ra == rb

    def test_nonconvergence_flushes_artifacts(self, tmp_path):
        cfg = parse_config_text(SMALL_CYL, overrides={
            "ptc.max_iters": "2", "gmres.kdim": "5",
            "gmres.max_restarts": "1"})
        s = hz.run_case(cfg, tmp_path)
        assert not s["converged"]
        assert (tmp_path / "residual.csv").exists()
        assert (tmp_path / "stats.csv").exists()

    def test_steady_pmg_solver(self, tmp_path):
        cfg = parse_config_text("""
mesh.nx = 4
mesh.ny = 4
equation.kind = advection-diffusion
equation.advection_x = 1.0
equation.advection_y = 0.4
case.degree = 2
case.steady = true
case.solver = pmg-solver
case.init = zero
pmg.levels = 2-1
ptc.atol = 1e-10
""")
        s = hz.run_case(cfg, tmp_path)
        assert s["converged"]


class TestOoaStudy:
    def test_needs_two_levels(self):
        cfg = parse_config_text("")
        with pytest.raises(ConfigError, match="2"):
            hz.ooa_study(cfg, 1)

    def test_case_equation_mismatch(self):
        cfg = parse_config_text("ooa.case = vortex\n"
                                "equation.kind = advection-diffusion\n")
        with pytest.raises(ConfigError, match="euler"):
            hz.ooa_study(cfg, 2)

    def test_temporal_slope_second_order(self, tmp_path):
        cfg = parse_config_text("""
mesh.nx = 3
equation.kind = advection-diffusion
equation.advection_x = 1.0
equation.advection_y = 0.0
case.degree = 6
case.scheme = esdirk2
case.dt = 0.1
case.steps = 2
case.init = zero
ptc.rtol = 1e-11
gmres.rtol = 1e-10
gmres.kdim = 80
ooa.mode = temporal
""")
        rows = hz.ooa_study(cfg, 3, tmp_path)
        assert rows[-1][3] > 1.8
        assert (tmp_path / "ooa.csv").read_text().startswith(
            "# pmgflow ooa v1")


class TestBench:
    def test_speedup_and_dnf(self, tmp_path):
        variants = parse_variants("""
variant ej
case.precond = ej
variant broke
case.precond = ej
ptc.max_iters = 1
gmres.kdim = 3
gmres.max_restarts = 1
""")
        rows = hz.precond_bench(SMALL_CYL, variants, tmp_path)
        assert rows[0][0] == "ej"
        assert rows[0][7] == pytest.approx(1.0)
        assert rows[1][3] == "DNF"
        text = (tmp_path / "bench.csv").read_text()
        assert "DNF" in text


class TestCli:
    def _write(self, tmp_path, text):
        p = tmp_path / "case.cfg"
        p.write_text(text)
        return str(p)

    def test_run_exit_zero(self, tmp_path, capsys):
        cfg = self._write(tmp_path, BOX_EULER)
        rc = hz.main(["run", "--config", cfg,
                      "--out", str(tmp_path / "out")])
        assert rc == 0
        assert "converged=True" in capsys.readouterr().out

    def test_config_error_exit_two(self, tmp_path, capsys):
        cfg = self._write(tmp_path, "who.knows = 1\n")
        rc = hz.main(["run", "--config", cfg,
                      "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "who.knows" in capsys.readouterr().err

    def test_nonconvergence_exit_three(self, tmp_path):
        cfg = self._write(tmp_path, SMALL_CYL + "\nptc.max_iters = 2\n"
                          "gmres.kdim = 5\ngmres.max_restarts = 1\n")
        rc = hz.main(["run", "--config", cfg,
                      "--out", str(tmp_path / "out")])
        assert rc == 3

    def test_mesh_gen(self, tmp_path, capsys):
        out = str(tmp_path / "mesh.txt")
        rc = hz.main(["mesh-gen", "--kind", "box", "--nx", "3",
                      "--ny", "2", "--out", out])
        assert rc == 0
        assert "6 elements" in capsys.readouterr().out
        from pmgflow.mesh import load_mesh
        assert load_mesh(out).n_elements == 6

"""Case orchestration: config files, solver drivers, studies, CLI.

Config files are line-oriented `section.key = value` text with `#`
comments.  Every key is validated against the schema before any
compute.  Artifacts are CSV files with versioned headers; residual
CSVs contain no timing data so reruns are bitwise identical.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import newton_krylov as nk
from . import pmg as pmg_mod
from . import time_integration as ti
from .mesh import (Mesh, generate_box, generate_cylinder_omesh, load_mesh,
                   save_mesh)
from .spatial import Discretization, EquationSpec


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

def _as_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (type converter, default); None default means "unset"
SCHEMA = {
    "mesh.kind": (str, "box"),            # box | cylinder | file
    "mesh.path": (str, None),
    "mesh.nx": (int, 4),
    "mesh.ny": (int, 4),
    "mesh.lx": (float, 1.0),
    "mesh.ly": (float, 1.0),
    "mesh.periodic": (_as_bool, False),
    "mesh.tag": (str, "far-field"),
    "mesh.n_circ": (int, 40),
    "mesh.n_rad": (int, 20),
    "mesh.r_wall": (float, 0.5),
    "mesh.r_far": (float, 60.0),
    "mesh.stretch": (float, 1.25),
    "mesh.wall_tag": (str, "wall-adiabatic"),

    "equation.kind": (str, "euler"),
    "equation.mach": (float, 0.1),
    "equation.reynolds": (float, 100.0),
    "equation.ref_length": (float, 1.0),
    "equation.gamma": (float, 1.4),
    "equation.prandtl": (float, 0.72),
    "equation.advection_x": (float, 1.0),
    "equation.advection_y": (float, 0.0),
    "equation.diffusivity": (float, 0.0),

    "case.degree": (int, 2),
    "case.scheme": (str, "esdirk2"),
    "case.dt": (float, 0.1),
    "case.steps": (int, 1),
    "case.steady": (_as_bool, False),
    "case.solver": (str, "jfnk"),         # jfnk | pmg-solver
    "case.precond": (str, "ej"),          # ej | pmg | none
    "case.init": (str, "free-stream"),    # free-stream | zero
    "case.seed": (int, 0),

    "ptc.dtau_init": (float, 1e-3),
    "ptc.dtau_max": (float, 1e12),
    "ptc.max_iters": (int, 100),
    "ptc.rtol": (float, 1e-4),
    "ptc.atol": (float, None),
    "ptc.ser": (_as_bool, True),
    "ptc.ser_as_printed": (_as_bool, False),
    "ptc.refresh_every_n_ptc": (int, 0),
    "ptc.max_halvings": (int, 8),

    "gmres.kdim": (int, 30),
    "gmres.max_restarts": (int, 10),
    "gmres.rtol": (float, 1e-4),

    "pmg.levels": (str, "3-1"),
    "pmg.smooth": (str, "2"),
    "pmg.smoother": (str, "ej"),
    "pmg.switch_after": (int, None),
    "pmg.mbnk.rtol": (float, 0.1),
    "pmg.mbnk.maxiter": (int, 5),
    "pmg.smoother_shift": (float, 0.0),

    "adapt.enable": (_as_bool, False),
    "adapt.variable": (str, "momentum-x"),
    "adapt.nu_max": (float, 0.2),
    "adapt.nu_min": (float, 0.001),
    "adapt.p_min": (int, 1),
    "adapt.p_max": (int, 4),
    "adapt.every_n_steps": (int, 10),

    "ooa.mode": (str, "spatial"),         # spatial | temporal
    "ooa.case": (str, "advected-sine"),   # advected-sine | vortex
}

_VALID_CHOICES = {
    "mesh.kind": ("box", "cylinder", "file"),
    "equation.kind": ("euler", "navier-stokes", "advection-diffusion"),
    "case.scheme": ("esdirk2", "esdirk4", "row2", "row4"),
    "case.solver": ("jfnk", "pmg-solver"),
    "case.precond": ("ej", "pmg", "none"),
    "case.init": ("free-stream", "zero"),
    "ooa.mode": ("spatial", "temporal"),
    "ooa.case": ("advected-sine", "vortex"),
}


@dataclass
class CaseConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v


def parse_config_text(text: str, overrides: dict | None = None) -> CaseConfig:
    values = {k: default for k, (_, default) in SCHEMA.items()}
    entries = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'section.key = value'")
        key, val = (t.strip() for t in line.split("=", 1))
        entries[key] = (val, ln)
    if overrides:
        for k, v in overrides.items():
            entries[k] = (str(v), 0)
    for key, (val, ln) in entries.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} (line {ln})")
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    for key, choices in _VALID_CHOICES.items():
        if values[key] is not None and values[key] not in choices:
            raise ConfigError(
                f"{key} must be one of {choices}, got {values[key]!r}")
    return CaseConfig(values)


def load_config(path) -> CaseConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# statistics

@dataclass
class StageRecord:
    step: int
    stage: int
    ptc_iters: int
    gmres_iters: int
    vcycles: int
    wall_time: float


@dataclass
class SolverStats:
    kdim: int
    records: list = dc_field(default_factory=list)
    total_runtime: float = 0.0
    residual_log: list = dc_field(default_factory=list)
    fallbacks: int = 0

    @property
    def n_stages(self) -> int:
        return len(self.records)

    @property
    def n_ptc_avg(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.ptc_iters for r in self.records) / len(self.records)

    @property
    def n_gmres_avg(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.gmres_iters for r in self.records) / len(self.records)


# ---------------------------------------------------------------------------
# case construction

def mesh_from_config(cfg: CaseConfig) -> Mesh:
    kind = cfg["mesh.kind"]
    if kind == "box":
        return generate_box(cfg["mesh.nx"], cfg["mesh.ny"], cfg["mesh.lx"],
                            cfg["mesh.ly"], periodic=cfg["mesh.periodic"],
                            tag=cfg["mesh.tag"])
    if kind == "cylinder":
        return generate_cylinder_omesh(
            cfg["mesh.n_circ"], cfg["mesh.n_rad"], cfg["mesh.r_wall"],
            cfg["mesh.r_far"], cfg["mesh.stretch"],
            wall_tag=cfg["mesh.wall_tag"])
    if cfg["mesh.path"] is None:
        raise ConfigError("mesh.kind = file requires mesh.path")
    return load_mesh(cfg["mesh.path"])


def equation_from_config(cfg: CaseConfig) -> EquationSpec:
    try:
        return EquationSpec(
            kind=cfg["equation.kind"], mach=cfg["equation.mach"],
            reynolds=cfg["equation.reynolds"],
            ref_length=cfg["equation.ref_length"],
            gamma=cfg["equation.gamma"], prandtl=cfg["equation.prandtl"],
            advection=(cfg["equation.advection_x"],
                       cfg["equation.advection_y"]),
            diffusivity=cfg["equation.diffusivity"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def initial_field(disc: Discretization, cfg: CaseConfig) -> np.ndarray:
    if cfg["case.init"] == "zero" or disc.eqn.kind == "advection-diffusion":
        return disc.new_field().data
    return disc.free_stream_field().data


def ptc_config(cfg: CaseConfig) -> nk.PtcConfig:
    return nk.PtcConfig(
        dtau_init=cfg["ptc.dtau_init"], dtau_max=cfg["ptc.dtau_max"],
        max_iters=cfg["ptc.max_iters"], rtol=cfg["ptc.rtol"],
        atol=cfg["ptc.atol"], ser=cfg["ptc.ser"],
        ser_as_printed=cfg["ptc.ser_as_printed"],
        refresh_every=cfg["ptc.refresh_every_n_ptc"],
        max_halvings=cfg["ptc.max_halvings"])


def krylov_config(cfg: CaseConfig) -> nk.KrylovConfig:
    return nk.KrylovConfig(kdim=cfg["gmres.kdim"],
                           max_restarts=cfg["gmres.max_restarts"],
                           rtol=cfg["gmres.rtol"])


def hierarchy_from_config(cfg: CaseConfig) -> pmg_mod.PHierarchy:
    try:
        return pmg_mod.PHierarchy.parse(
            cfg["pmg.levels"], cfg["pmg.smooth"], cfg["pmg.smoother"],
            cfg["pmg.switch_after"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# the implicit driver

class ImplicitDriver:
    """Stage solvers shared by run_case, the studies, and the bench."""

    def __init__(self, disc: Discretization, cfg: CaseConfig):
        self.disc = disc
        self.cfg = cfg
        self.ptc = ptc_config(cfg)
        self.krylov = krylov_config(cfg)
        self.precond = cfg["case.precond"]
        self.stats = SolverStats(kdim=self.krylov.kdim)
        self.ctx = None
        if self.precond == "pmg":
            h = hierarchy_from_config(cfg)
            pc = pmg_mod.PmgPrecondConfig(
                h, mbnk_rtol=cfg["pmg.mbnk.rtol"],
                mbnk_maxiter=cfg["pmg.mbnk.maxiter"],
                smoother_shift=cfg["pmg.smoother_shift"])
            self.ctx = pmg_mod.PmgContext(disc, pc)
        self._step = 0
        self._stage = 0

    def _precond_factory(self, shift0: float):
        if self.precond == "none":
            return None
        if self.precond == "ej":
            def factory(q, dtau):
                bj = nk.assemble_element_blocks(
                    self.disc, q, shift0 + 1.0 / dtau)
                return lambda v: nk.ej_apply(bj, v)
            return factory

        def factory(q, dtau):
            self.ctx.prepare(q, shift0 + 1.0 / dtau)
            return self.ctx.precondition
        return factory

    def solve_stage(self, prob: ti.StageProblem, q0: np.ndarray):
        """Nonlinear stage solver for ESDIRK (and steady problems)."""
        t0 = time.perf_counter()

        def F(q):
            return ti.stage_function(q, prob)

        cycles0 = self.ctx.cycles_done if self.ctx is not None else 0
        q, stats = nk.ptc_solve(F, q0, self.ptc, self.krylov,
                                precond_factory=self._precond_factory(
                                    prob.shift))
        wall = time.perf_counter() - t0
        cycles = (self.ctx.cycles_done - cycles0) if self.ctx is not None \
            else 0
        self.stats.records.append(StageRecord(
            self._step, self._stage, stats["iters"], stats["gmres_iters"],
            cycles, wall))
        for it, (absr, relr, dtau) in enumerate(stats["history"]):
            self.stats.residual_log.append(
                (self._step, self._stage, it, absr, relr, dtau))
        if self.ctx is not None:
            self.stats.fallbacks = self.ctx.fallbacks
        return q, stats

    def solve_linear(self, q_lin: np.ndarray, R_lin: np.ndarray):
        """Returns a Rosenbrock stage solver with the Jacobian state
        frozen at q_lin (one preconditioner build per physical step)."""
        prepared = {}

        def solve(rhs, sigma, stage):
            t0 = time.perf_counter()
            if "P" not in prepared:
                if self.precond == "ej":
                    bj = nk.assemble_element_blocks(self.disc, q_lin, sigma)
                    prepared["P"] = lambda v: nk.ej_apply(bj, v)
                elif self.precond == "pmg":
                    self.ctx.prepare(q_lin, sigma)
                    prepared["P"] = self.ctx.precondition
                else:
                    prepared["P"] = None

            def matvec(v):
                return nk.jfnk_matvec(v, q_lin, R_lin,
                                      self.disc.residual, sigma)

            Y, iters, relres = nk.gmres_solve(matvec, rhs, self.krylov,
                                              precond=prepared["P"])
            wall = time.perf_counter() - t0
            converged = relres <= self.krylov.rtol
            self.stats.records.append(StageRecord(
                self._step, stage, 0, iters, 0, wall))
            self.stats.residual_log.append(
                (self._step, stage, iters, relres * np.linalg.norm(rhs),
                 relres, 0.0))
            return Y, {"converged": bool(converged), "iters": iters,
                       "relres": relres}
        return solve


# ---------------------------------------------------------------------------
# running a case

def _write_csv(path: Path, header_comment: str, columns, rows):
    with open(path, "w", newline="") as f:
        f.write(f"# {header_comment}\n")
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v
                        for v in row])


def run_case(cfg: CaseConfig, out_dir) -> dict:
    """Run one configured case; returns a summary dict.

    Artifacts in out_dir: residual.csv, stats.csv, forces.csv (wall
    cases only), summary.csv.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = mesh_from_config(cfg)
    eqn = equation_from_config(cfg)
    disc = Discretization(mesh, cfg["case.degree"], eqn)
    scheme = ti.get_scheme(cfg["case.scheme"])
    driver = ImplicitDriver(disc, cfg)
    q = initial_field(disc, cfg)
    dt = cfg["case.dt"]
    has_walls = any(t.startswith("wall") for t in mesh.boundary_tags) \
        and eqn.kind != "advection-diffusion"
    forces = []
    t_begin = time.perf_counter()
    converged = True

    try:
        if cfg["case.steady"]:
            if cfg["case.solver"] == "pmg-solver":
                h = hierarchy_from_config(cfg)
                pc = pmg_mod.PmgPrecondConfig(
                    h, mbnk_rtol=cfg["pmg.mbnk.rtol"],
                    mbnk_maxiter=cfg["pmg.mbnk.maxiter"],
                    smoother_shift=cfg["pmg.smoother_shift"])
                ctx = pmg_mod.PmgContext(disc, pc)
                q, stats = pmg_mod.pmg_solve(ctx, q, driver.ptc)
                driver.stats.records.append(StageRecord(
                    0, 0, stats["iters"], 0, stats["vcycles"], 0.0))
            else:
                prob = ti.StageProblem(disc.residual, steady=True)
                q, stats = driver.solve_stage(prob, q)
            converged = stats["converged"]
            for it, (absr, relr, dtau) in enumerate(stats["history"]):
                if cfg["case.solver"] == "pmg-solver":
                    driver.stats.residual_log.append(
                        (0, 0, it, absr, relr, dtau))
            final_norm = stats["final_norm"]
        else:
            for step in range(cfg["case.steps"]):
                driver._step = step
                if scheme.kind == "esdirk":
                    def solve_stage(prob, q0, d=driver, s=[0]):
                        d._stage = s[0] = s[0] + 1
                        return d.solve_stage(prob, q0)
                    q, _ = ti.esdirk_step(q, dt, scheme, disc.residual,
                                          solve_stage)
                else:
                    R_lin = disc.residual(q)
                    q, infos = ti.row_step(q, dt, scheme, disc.residual,
                                           driver.solve_linear(q, R_lin))
                if has_walls:
                    fd, fl, cd, cl = disc.compute_forces(q)
                    forces.append(((step + 1) * dt, cd, cl))
            final_norm = float(np.linalg.norm(disc.residual(q)))
    except RuntimeError as exc:
        converged = False
        final_norm = float("nan")
        summary_error = str(exc)
    else:
        summary_error = ""

    runtime = time.perf_counter() - t_begin
    driver.stats.total_runtime = runtime
    st = driver.stats

    _write_csv(out / "residual.csv", "pmgflow residual v1",
               ("step", "stage", "iter", "absolute", "relative", "dtau"),
               st.residual_log)
    _write_csv(out / "stats.csv", "pmgflow stats v1",
               ("step", "stage", "n_ptc", "n_gmres", "n_vcycles",
                "wall_time"),
               [(r.step, r.stage, r.ptc_iters, r.gmres_iters, r.vcycles,
                 r.wall_time) for r in st.records])
    if has_walls and forces:
        _write_csv(out / "forces.csv", "pmgflow forces v1",
                   ("t", "cd", "cl"), forces)

    summary = {
        "converged": converged,
        "final_residual": final_norm,
        "n_ptc_avg": st.n_ptc_avg,
        "n_gmres_avg": st.n_gmres_avg,
        "kdim": st.kdim,
        "runtime": runtime,
        "error": summary_error,
        "stats": st,
        "q": q,
        "disc": disc,
    }
    _write_csv(out / "summary.csv", "pmgflow summary v1",
               ("converged", "final_residual", "n_ptc_avg", "n_gmres_avg",
                "kdim", "runtime"),
               [(int(converged), final_norm, st.n_ptc_avg, st.n_gmres_avg,
                 st.kdim, runtime)])
    return summary


# ---------------------------------------------------------------------------
# analytic cases for order studies

def advected_sine(eqn: EquationSpec, t: float):
    ax, ay = eqn.advection

    def fn(x, y):
        v = np.sin(2 * np.pi * (x - ax * t)) * np.sin(2 * np.pi * (y - ay * t))
        return v[..., None]
    return fn


def isentropic_vortex(eqn: EquationSpec, t: float, L: float = 10.0,
                      beta: float = 5.0):
    """Vortex advecting with the free stream on a periodic [0,L]^2 box."""
    g = eqn.gamma
    Tinf = 1.0 / (g * eqn.mach**2)

    def fn(x, y):
        xc = np.mod(x - 1.0 * t - L / 2, L) - L / 2 + 0.0
        yc = y - L / 2
        r2 = xc * xc + yc * yc
        e = np.exp(0.5 * (1.0 - r2))
        u = 1.0 - beta / (2 * np.pi) * e * yc
        v = beta / (2 * np.pi) * e * xc
        T = Tinf - (g - 1.0) * beta**2 / (8.0 * g * np.pi**2) * np.exp(1 - r2)
        rho = (T / Tinf) ** (1.0 / (g - 1.0))
        p = rho * T
        E = p / (g - 1.0) + 0.5 * rho * (u * u + v * v)
        return np.stack([rho, rho * u, rho * v, E], axis=-1)
    return fn


def _integrate(disc: Discretization, cfg: CaseConfig, q: np.ndarray,
               dt: float, steps: int, scheme) -> np.ndarray:
    driver = ImplicitDriver(disc, cfg)
    for step in range(steps):
        driver._step = step
        if scheme.kind == "esdirk":
            q, _ = ti.esdirk_step(q, dt, scheme, disc.residual,
                                  driver.solve_stage)
        else:
            R_lin = disc.residual(q)
            q, _ = ti.row_step(q, dt, scheme, disc.residual,
                               driver.solve_linear(q, R_lin))
    return q


def ooa_study(cfg: CaseConfig, levels: int, out_dir=None) -> list:
    """Grid- or step-refinement study; returns rows of
    (level, h_or_dt, l2_error, observed_order)."""
    if levels < 2:
        raise ConfigError("order study needs at least 2 refinement levels")
    mode = cfg["ooa.mode"]
    case = cfg["ooa.case"]
    scheme = ti.get_scheme(cfg["case.scheme"])
    eqn = equation_from_config(cfg)
    if case == "vortex" and eqn.kind != "euler":
        raise ConfigError("the vortex study needs equation.kind = euler")
    if case == "advected-sine" and eqn.kind != "advection-diffusion":
        raise ConfigError("the advected-sine study needs "
                          "equation.kind = advection-diffusion")
    p = cfg["case.degree"]
    rows = []
    errs = []
    for k in range(levels):
        if case == "advected-sine":
            L = 1.0
            exact0, exact = advected_sine(eqn, 0.0), None
            var = 0
        else:
            L = 10.0
            exact0 = isentropic_vortex(eqn, 0.0)
            var = 0
        if mode == "spatial":
            nx = cfg["mesh.nx"] * 2**k
            dt = cfg["case.dt"] / 2**k
        else:
            nx = cfg["mesh.nx"]
            dt = cfg["case.dt"] / 2**k
        steps = cfg["case.steps"] * 2**k
        mesh = generate_box(nx, nx, L, L, periodic=True)
        disc = Discretization(mesh, p, eqn)
        q0 = disc.project(exact0).data
        q = _integrate(disc, cfg, q0, dt, steps, scheme)
        t_end = dt * steps
        fn = (advected_sine if case == "advected-sine"
              else isentropic_vortex)(eqn, t_end)
        err = disc.l2_error(q, fn, var=var)
        errs.append(err)
        h = L / nx if mode == "spatial" else dt
        order = np.log2(errs[-2] / errs[-1]) if k else float("nan")
        rows.append((k, h, err, order))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "ooa.csv", "pmgflow ooa v1",
                   ("level", "h_or_dt", "l2_error", "order"), rows)
    return rows


# ---------------------------------------------------------------------------
# preconditioner benchmark

def parse_variants(text: str) -> list:
    """Variant file: `variant NAME` lines start a block; following
    `key = value` lines override the base config for that variant."""
    variants = []
    current = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("variant "):
            current = (line.split(None, 1)[1].strip(), {})
            variants.append(current)
            continue
        if current is None:
            raise ConfigError(f"line {ln}: key before any 'variant' header")
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        k, v = (t.strip() for t in line.split("=", 1))
        current[1][k] = v
    if not variants:
        raise ConfigError("variants file defines no variants")
    return variants


def precond_bench(base_text: str, variants: list, out_dir) -> list:
    """Run each variant over the same window; one table row each.

    Columns: Method, p-hierarchy, dt, runtime, n_ptc_avg, n_gmres_avg,
    kdim, speedup (baseline runtime / variant runtime).  A variant
    that aborts or fails to converge is recorded as a DNF row.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    base_runtime = None
    for i, (name, over) in enumerate(variants):
        cfg = parse_config_text(base_text, overrides=over)
        hier = cfg["pmg.levels"] if cfg["case.precond"] == "pmg" else "-"
        try:
            summary = run_case(cfg, out / name)
            ok = summary["converged"]
        except RuntimeError:
            ok = False
            summary = None
        if not ok:
            rows.append((name, hier, cfg["case.dt"], "DNF", "", "",
                         cfg["gmres.kdim"], ""))
            continue
        rt = summary["runtime"]
        if base_runtime is None:
            base_runtime = rt
        rows.append((name, hier, cfg["case.dt"], rt,
                     summary["n_ptc_avg"], summary["n_gmres_avg"],
                     summary["kdim"], base_runtime / rt))
    _write_csv(out / "bench.csv", "pmgflow bench v1",
               ("method", "p_hierarchy", "dt", "runtime", "n_ptc_avg",
                "n_gmres_avg", "kdim", "speedup"), rows)
    return rows


# ---------------------------------------------------------------------------
# CLI

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pmgflow")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured case")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="out")

    p_ooa = sub.add_parser("ooa", help="order-of-accuracy study")
    p_ooa.add_argument("--config", required=True)
    p_ooa.add_argument("--levels", type=int, required=True)
    p_ooa.add_argument("--out", default="out")

    p_bench = sub.add_parser("bench", help="preconditioner comparison")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--variants", required=True)
    p_bench.add_argument("--out", default="out")

    p_mesh = sub.add_parser("mesh-gen", help="generate a mesh file")
    p_mesh.add_argument("--kind", choices=("box", "cylinder"), required=True)
    p_mesh.add_argument("--out", required=True)
    p_mesh.add_argument("--nx", type=int, default=4)
    p_mesh.add_argument("--ny", type=int, default=4)
    p_mesh.add_argument("--lx", type=float, default=1.0)
    p_mesh.add_argument("--ly", type=float, default=1.0)
    p_mesh.add_argument("--periodic", action="store_true")
    p_mesh.add_argument("--n-circ", type=int, default=40)
    p_mesh.add_argument("--n-rad", type=int, default=20)
    p_mesh.add_argument("--r-wall", type=float, default=0.5)
    p_mesh.add_argument("--r-far", type=float, default=60.0)
    p_mesh.add_argument("--stretch", type=float, default=1.25)

    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            summary = run_case(cfg, args.out)
            print(f"converged={summary['converged']} "
                  f"final_residual={summary['final_residual']:.6e} "
                  f"n_ptc_avg={summary['n_ptc_avg']:.2f} "
                  f"n_gmres_avg={summary['n_gmres_avg']:.2f}")
            return 0 if summary["converged"] else 3
        if args.command == "ooa":
            cfg = load_config(args.config)
            rows = ooa_study(cfg, args.levels, args.out)
            for lvl, h, err, order in rows:
                print(f"level {lvl}: h/dt {h:.4e} error {err:.6e} "
                      f"order {order:.3f}")
            return 0
        if args.command == "bench":
            rows = precond_bench(Path(args.config).read_text(),
                                 parse_variants(Path(args.variants).read_text()),
                                 args.out)
            for row in rows:
                print(" ".join(str(c) for c in row))
            return 0 if all(r[3] != "DNF" for r in rows) else 3
        if args.command == "mesh-gen":
            if args.kind == "box":
                mesh = generate_box(args.nx, args.ny, args.lx, args.ly,
                                    periodic=args.periodic)
            else:
                mesh = generate_cylinder_omesh(
                    args.n_circ, args.n_rad, args.r_wall, args.r_far,
                    args.stretch)
            save_mesh(mesh, args.out)
            print(f"wrote {args.out}: {mesh.n_elements} elements")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

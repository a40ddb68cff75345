import numpy as np
import pytest

from pmgflow import newton_krylov as nk
from pmgflow import pmg
from pmgflow.mesh import generate_box
from pmgflow.spatial import Discretization, EquationSpec


def scalar_disc(n=4, p=2, diff=1.0, adv=(0.0, 0.0)):
    mesh = generate_box(n, n, 1.0, 1.0, periodic=True)
    eqn = EquationSpec(kind="advection-diffusion", advection=adv,
                       diffusivity=diff)
    return Discretization(mesh, p, eqn)


def bump_field(disc, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(disc.n_dofs)


class TestPHierarchy:
    def test_parse_two_level(self):
        h = pmg.PHierarchy.parse("3-1", "2-4", "ej-mbnk")
        assert h.levels == (3, 1)
        assert h.smooth == (2, 4)
        assert h.smoothers == ("ej", "mbnk")

    def test_parse_broadcast(self):
        h = pmg.PHierarchy.parse("4-2-0", "3", "ej")
        assert h.smooth == (3, 3, 3)
        assert h.smoothers == ("ej", "ej", "ej")

    def test_label(self):
        assert pmg.PHierarchy.parse("3-1-0").label() == "p{3-1-0}"

    def test_nonmonotone_rejected(self):
        with pytest.raises(ValueError):
            pmg.PHierarchy.parse("1-3")

    def test_bad_counts_rejected(self):
        with pytest.raises(ValueError):
            pmg.PHierarchy.parse("3-1", "0-2")
        with pytest.raises(ValueError):
            pmg.PHierarchy.parse("3-1", "2-2-2")
        with pytest.raises(ValueError):
            pmg.PHierarchy.parse("3-1", "2", "sor")


class TestSmoothers:
    def test_ej_fixed_point(self):
        disc = scalar_disc()
        q = bump_field(disc)
        lev = pmg.LevelState(disc, shift=5.0, q=q.copy())
        lev.S_base = lev.F(q)
        lev.blocks = nk.assemble_element_blocks(disc, q, 5.0)
        pmg.smooth_ej(lev, 3)
        assert np.allclose(lev.q, q, atol=1e-13)

    def test_ej_reduces_residual(self):
        # diffusion with BR1 couples past the adjacent element, so the
        # frozen blocks only damp reliably at a stiff pseudo-time shift
        disc = scalar_disc()
        q = bump_field(disc)
        lev = pmg.LevelState(disc, shift=5000.0, q=q.copy())
        lev.S_base = np.zeros(disc.n_dofs)
        lev.blocks = nk.assemble_element_blocks(disc, q, 5000.0)
        norms = [np.linalg.norm(lev.defect())]
        for _ in range(5):
            pmg.smooth_ej(lev, 1)
            norms.append(np.linalg.norm(lev.defect()))
        assert all(b < a for a, b in zip(norms, norms[1:]))

    def test_mbnk_zero_defect_no_update(self):
        disc = scalar_disc()
        q = bump_field(disc)
        lev = pmg.LevelState(disc, shift=5.0, q=q.copy())
        lev.S_base = lev.F(q)
        lev.sparse = nk.assemble_sparse_blocks(disc, q, 5.0)
        lev.ilu = nk.ilu0_factor(lev.sparse)
        pmg.smooth_mbnk(lev)
        assert np.allclose(lev.q, q, atol=1e-13)

    def test_mbnk_drops_linear_residual(self):
        # pure advection is linear with face-compact coupling, so the
        # sparse matrix is exact and a tight-tolerance Newton update
        # must shrink the defect a lot
        disc = scalar_disc(diff=0.0, adv=(1.0, 0.4))
        q = bump_field(disc)
        lev = pmg.LevelState(disc, shift=20.0, q=q.copy())
        lev.S_base = np.zeros(disc.n_dofs)
        lev.sparse = nk.assemble_sparse_blocks(disc, q, 20.0)
        lev.ilu = nk.ilu0_factor(lev.sparse)
        before = np.linalg.norm(lev.defect())
        pmg.smooth_mbnk(lev, rtol=1e-10, maxiter=60)
        assert np.linalg.norm(lev.defect()) <= before / 10.0


class TestPrecondition:
    def make_ctx(self, disc, levels="2-1", smooth="1", smoother="ej",
                 shift=10.0, seed=3):
        h = pmg.PHierarchy.parse(levels, smooth, smoother)
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        q = bump_field(disc, seed)
        ctx.prepare(q, shift)
        return ctx, q

    def test_zero_input_zero_output(self):
        disc = scalar_disc()
        ctx, _ = self.make_ctx(disc)
        Y = ctx.precondition(np.zeros(disc.n_dofs))
        assert np.all(Y == 0.0)

    def test_degenerate_config_recovers_element_jacobi(self):
        # single level, one EJ sweep: Y must equal D^{-1} X exactly
        mesh = generate_box(4, 4, 1.0, 1.0)
        disc = Discretization(
            mesh, 2, EquationSpec(kind="navier-stokes", mach=0.3,
                                  reynolds=100.0))
        rng = np.random.default_rng(1)
        q = disc.free_stream_field().data
        q *= 1.0 + 0.01 * rng.standard_normal(len(q))
        h = pmg.PHierarchy.parse("2", "1", "ej")
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        shift = 30.0
        ctx.prepare(q, shift)
        X = rng.standard_normal(disc.n_dofs)
        Y = ctx.precondition(X)
        ref = nk.ej_apply(nk.assemble_element_blocks(disc, q, shift), X)
        assert np.abs(Y - ref).max() <= 1e-12

    def test_linear_homogeneity(self):
        disc = scalar_disc()
        ctx, _ = self.make_ctx(disc, levels="2-1", smooth="2")
        rng = np.random.default_rng(4)
        X = rng.standard_normal(disc.n_dofs)
        Y1 = ctx.precondition(X)
        Y2 = ctx.precondition(3.0 * X)
        scale = np.abs(Y2).max()
        assert np.abs(Y2 - 3.0 * Y1).max() <= 1e-12 * max(scale, 1.0)

    def test_deterministic(self):
        disc = scalar_disc()
        ctx, _ = self.make_ctx(disc)
        X = bump_field(disc, 9)
        assert np.array_equal(ctx.precondition(X), ctx.precondition(X))

    def test_beats_ej_inside_gmres(self):
        # shifted advection system solved with GMRES using either
        # preconditioner; pMG should need at most half the iterations
        # of plain element-Jacobi
        disc = scalar_disc(n=8, p=3, diff=0.0, adv=(1.0, 0.4))
        shift = 10.0
        q = np.zeros(disc.n_dofs)
        h = pmg.PHierarchy.parse("3-1", "2", "ej")
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        ctx.prepare(q, shift)
        blocks = nk.assemble_element_blocks(disc, q, shift)

        def matvec(v):  # the residual is linear, so this is exact
            return shift * v - disc.residual(v)

        b = bump_field(disc, 11)
        cfg = nk.KrylovConfig(kdim=120, max_restarts=1, rtol=1e-8)
        _, it_ej, _ = nk.gmres_solve(matvec, b, cfg,
                                     precond=lambda v: nk.ej_apply(blocks, v))
        _, it_pmg, _ = nk.gmres_solve(matvec, b, cfg,
                                      precond=ctx.precondition)
        assert it_pmg * 2 <= it_ej


class TestVcycle:
    def test_single_level_is_smoothing_only(self):
        disc = scalar_disc()
        q = bump_field(disc, 5)
        shift = 10.0
        h1 = pmg.PHierarchy.parse("2", "2", "ej")
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h1))
        ctx.prepare(q, shift)
        fine = ctx.levels[0]
        fine.q = q.copy()
        fine.S_base = np.zeros(disc.n_dofs)
        fine.S_extra = 0.0
        ctx.vcycle()
        lev = pmg.LevelState(disc, shift=shift, q=q.copy(),
                             S_base=np.zeros(disc.n_dofs))
        lev.blocks = nk.assemble_element_blocks(disc, q, shift)
        pmg.smooth_ej(lev, 2)
        assert np.allclose(fine.q, lev.q, atol=1e-14)

    def test_fixed_point_at_exact_solution(self):
        # S chosen so F(q*) = S; starting at q* the cycle must not move
        disc = scalar_disc()
        qstar = bump_field(disc, 6)
        shift = 10.0
        h = pmg.PHierarchy.parse("2-1", "2", "ej")
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        ctx.prepare(qstar, shift)
        fine = ctx.levels[0]
        fine.q = qstar.copy()
        fine.S_base = fine.F(qstar)
        fine.S_extra = 0.0
        ctx.vcycle()
        assert np.abs(fine.q - qstar).max() <= 1e-11

    def contraction_factor(self, apply_iter, n, iters=40, seed=12):
        rng = np.random.default_rng(seed)
        e = rng.standard_normal(n)
        rho = None
        for _ in range(iters):
            e2 = apply_iter(e)
            rho = np.linalg.norm(e2) / np.linalg.norm(e)
            e = e2 / np.linalg.norm(e2)
        return rho

    def test_two_level_contracts_better_than_smoothing(self):
        disc = scalar_disc(n=6, p=2, diff=1.0)
        shift = 5000.0  # admissible pseudo step for this diffusion case
        qstar = np.zeros(disc.n_dofs)
        h = pmg.PHierarchy.parse("2-1", "1", "ej")
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        ctx.prepare(qstar, shift)
        S = ctx.levels[0].F(qstar)

        def cycle(e):
            fine = ctx.levels[0]
            fine.q = qstar + e
            fine.S_base = S
            fine.S_extra = 0.0
            ctx.vcycle()
            return fine.q - qstar

        def smooth_only(e):
            lev = pmg.LevelState(disc, shift=shift, q=qstar + e, S_base=S)
            lev.blocks = ctx.levels[0].blocks
            pmg.smooth_ej(lev, 2)  # equal fine-level work: pre+post
            return lev.q - qstar

        rho_mg = self.contraction_factor(cycle, disc.n_dofs)
        rho_sm = self.contraction_factor(smooth_only, disc.n_dofs)
        assert rho_mg < 0.9
        assert rho_mg < rho_sm


class TestPmgSolve:
    def steady_ctx(self, levels="2-1", smooth="2", n=4, p=2):
        # steady advection with inflow boundaries: nonsingular operator
        # and a pseudo-time smoother that stays stable as SER grows
        mesh = generate_box(n, n, 1.0, 1.0)
        eqn = EquationSpec(kind="advection-diffusion", advection=(1.0, 0.4),
                           diffusivity=0.0)
        disc = Discretization(mesh, p, eqn)
        h = pmg.PHierarchy.parse(levels, smooth, "ej")
        return disc, pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))

    def test_already_converged(self):
        disc, ctx = self.steady_ctx()
        q0 = np.zeros(disc.n_dofs)
        q, stats = pmg.pmg_solve(ctx, q0, nk.PtcConfig(dtau_init=0.1))
        assert stats["vcycles"] == 0 and np.all(q == 0.0)

    def test_matches_ptc_gmres_solution(self):
        # steady forced problem: R(q) + const = 0 has the solution the
        # PTC+GMRES route finds; both solvers must agree
        disc, ctx = self.steady_ctx()
        rng = np.random.default_rng(13)
        const = rng.standard_normal(disc.n_dofs)
        cfg = nk.PtcConfig(dtau_init=0.05, dtau_max=1e10, rtol=1e-10,
                           max_iters=200)
        q_mg, st_mg = pmg.pmg_solve(ctx, np.zeros(disc.n_dofs), cfg,
                                    shift0=0.0, const=const)

        def F(q):
            return -disc.residual(q) - const

        def factory(q, dtau):
            bj = nk.assemble_element_blocks(disc, q, 1.0 / dtau)
            return lambda v: nk.ej_apply(bj, v)

        q_nk, st_nk = nk.ptc_solve(F, np.zeros(disc.n_dofs), cfg,
                                   nk.KrylovConfig(kdim=60, rtol=1e-6),
                                   precond_factory=factory)
        assert st_mg["converged"] and st_nk["converged"]
        assert np.abs(q_mg - q_nk).max() <= 1e-7 * max(np.abs(q_nk).max(), 1)

    def test_multilevel_needs_fewer_cycles(self):
        cfg = nk.PtcConfig(dtau_init=0.05, dtau_max=1e10, rtol=1e-8,
                           max_iters=400)
        rng = np.random.default_rng(14)

        disc, ctx3 = self.steady_ctx(levels="3-1-0", smooth="2", p=3)
        const = rng.standard_normal(disc.n_dofs)
        _, st3 = pmg.pmg_solve(ctx3, np.zeros(disc.n_dofs), cfg, const=const)

        h1 = pmg.PHierarchy.parse("3", "2", "ej")
        ctx1 = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h1))
        _, st1 = pmg.pmg_solve(ctx1, np.zeros(disc.n_dofs), cfg, const=const)
        assert st3["converged"]
        assert st3["vcycles"] < st1["vcycles"] or not st1["converged"]

    def test_switch_after_engages_mbnk(self):
        disc, _ = self.steady_ctx(n=3)
        h = pmg.PHierarchy((2, 1), (1, 1), ("ej", "ej"), switch_after=2)
        ctx = pmg.PmgContext(disc, pmg.PmgPrecondConfig(h))
        rng = np.random.default_rng(15)
        const = rng.standard_normal(disc.n_dofs)
        cfg = nk.PtcConfig(dtau_init=0.05, dtau_max=1e10, rtol=1e-8,
                           max_iters=100)
        q, stats = pmg.pmg_solve(ctx, np.zeros(disc.n_dofs), cfg, const=const)
        assert stats["converged"]
        # the sparse smoother state was actually built after the switch
        assert ctx.levels[0].sparse is not None

"""Polynomial multigrid: V-cycle solver and nonlinear preconditioner.

Levels share the mesh and coarsen only in polynomial degree, with
per-element degree nesting so adapted meshes coarsen consistently.
Each level carries the same equations discretized at its degree, a
forcing term, and either an element-Jacobi (EJ) or matrix-based
Newton-Krylov (MBNK) smoother.

The level equation is F(q) = S with F(q) = s q - R(q) for a caller
chosen shift s.  Defects are evaluated as (S_base - F(q)) + S_extra,
keeping the additive forcing exact in floating point: at q equal to
the linearization state the defect is S_extra bitwise, which is what
makes the one-sweep single-level preconditioner coincide with the
element-Jacobi preconditioner to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import newton_krylov as nk
from .operators import transfer_operators
from .p_adapt import nest_hierarchy
from .spatial import Discretization, NonPhysicalStateError


@dataclass(frozen=True)
class PHierarchy:
    """Level degrees, smoothing counts, and smoother kinds."""

    levels: tuple
    smooth: tuple
    smoothers: tuple
    switch_after: int | None = None

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("level degrees must be strictly decreasing")
        if len(self.smooth) != len(self.levels) \
                or len(self.smoothers) != len(self.levels):
            raise ValueError("per-level settings must match the level count")
        if any(n < 1 for n in self.smooth):
            raise ValueError("smoothing counts must be positive")
        if any(s not in ("ej", "mbnk") for s in self.smoothers):
            raise ValueError("smoother kinds are 'ej' or 'mbnk'")

    @classmethod
    def parse(cls, levels: str, smooth: str = "2", smoother: str = "ej",
              switch_after: int | None = None) -> "PHierarchy":
        """Build from config strings like levels='3-1', smooth='2-2'."""
        degs = tuple(int(t) for t in str(levels).split("-"))
        L = len(degs)

        def broadcast(text, cast):
            toks = [cast(t) for t in str(text).split("-")]
            if len(toks) == 1:
                toks = toks * L
            if len(toks) != L:
                raise ValueError(
                    f"{text!r} does not match {L} hierarchy levels")
            return tuple(toks)

        return cls(degs, broadcast(smooth, int), broadcast(smoother, str),
                   switch_after)

    def label(self) -> str:
        return "p{" + "-".join(str(p) for p in self.levels) + "}"


@dataclass
class PmgPrecondConfig:
    hierarchy: PHierarchy
    m_max: int = 1
    mbnk_rtol: float = 0.1
    mbnk_maxiter: int = 5
    omega: float = 1.0
    # extra pseudo-time shift added to the EJ smoother blocks only: the
    # level defect keeps the true shift, so the fixed point is unchanged
    # but each sweep takes a damped (smaller) pseudo-time step
    smoother_shift: float = 0.0

    def __post_init__(self):
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")


# ---------------------------------------------------------------------------
# inter-level field transfer

@dataclass
class _TransferTable:
    """Degree-pair grouped index/operator lists between two level grids."""

    pairs: list  # (idx_hi, idx_lo, n_hi, n_lo, ops or None)


def _make_table(disc_hi: Discretization, disc_lo: Discretization):
    groups = {}
    for e in range(disc_hi.mesh.n_elements):
        groups.setdefault((int(disc_hi.degrees[e]),
                           int(disc_lo.degrees[e])), []).append(e)
    pairs = []
    nv = disc_hi.nvars
    for (ph, pl), elems in sorted(groups.items()):
        elems = np.asarray(elems)
        sh = nv * (ph + 1) ** 2
        sl = nv * (pl + 1) ** 2
        idx_hi = disc_hi.offsets[elems][:, None] + np.arange(sh)
        idx_lo = disc_lo.offsets[elems][:, None] + np.arange(sl)
        ops = None if ph == pl else transfer_operators(ph, pl)
        pairs.append((idx_hi, idx_lo, ph + 1, pl + 1, ops))
    return _TransferTable(pairs)


def _restrict(table: _TransferTable, data_hi: np.ndarray, nv: int,
              out: np.ndarray):
    for idx_hi, idx_lo, nh, nl, ops in table.pairs:
        if ops is None:
            out[idx_lo] = data_hi[idx_hi]
            continue
        Q = data_hi[idx_hi].reshape(-1, nh, nh, nv)
        out[idx_lo] = np.einsum("ai,bj,mijv->mabv", ops.gamma, ops.gamma,
                                Q).reshape(idx_lo.shape)


def _prolong(table: _TransferTable, data_lo: np.ndarray, nv: int,
             out: np.ndarray):
    for idx_hi, idx_lo, nh, nl, ops in table.pairs:
        if ops is None:
            out[idx_hi] = data_lo[idx_lo]
            continue
        Q = data_lo[idx_lo].reshape(-1, nl, nl, nv)
        out[idx_hi] = np.einsum("ai,bj,mijv->mabv", ops.pi, ops.pi,
                                Q).reshape(idx_hi.shape)


# ---------------------------------------------------------------------------
# level state and smoothers

@dataclass
class LevelState:
    disc: Discretization
    shift: float = 0.0
    q: np.ndarray | None = None
    S_base: np.ndarray | float = 0.0
    S_extra: np.ndarray | float = 0.0
    nsweeps: int = 1
    smoother: str = "ej"
    blocks: object = None        # BlockJacobian
    sparse: object = None        # SparseBlockMatrix
    ilu: object = None           # Ilu0Factors

    def F(self, q: np.ndarray) -> np.ndarray:
        return self.shift * q - self.disc.residual(q)

    def defect(self) -> np.ndarray:
        return (self.S_base - self.F(self.q)) + self.S_extra


def smooth_ej(level: LevelState, n: int, omega: float = 1.0):
    for _ in range(n):
        level.q = level.q + omega * level.blocks.apply(level.defect())


def smooth_mbnk(level: LevelState, rtol: float = 0.1, maxiter: int = 5):
    """One Newton update with the assembled block matrix and ILU0."""
    r = level.defect()
    offs = level.disc.offsets
    cfg = nk.KrylovConfig(kdim=maxiter, max_restarts=1, rtol=rtol)
    dq, _, _ = nk.gmres_solve(
        lambda v: level.sparse.matvec(v, offs), r, cfg,
        precond=lambda v: nk.ilu0_apply(level.ilu, v, offs))
    level.q = level.q + dq


# ---------------------------------------------------------------------------
# the context: levels, transfers, smoother state

class PmgContext:
    """Bundles the level hierarchy for one discretization.

    prepare() freezes the smoother linearization at an outer state;
    precondition() then applies the nonlinear pMG preconditioner, and
    vcycle()/pmg_solve use the same levels in solver mode.
    """

    def __init__(self, disc: Discretization, cfg: PmgPrecondConfig):
        self.disc = disc
        self.cfg = cfg
        h = cfg.hierarchy
        p_top = h.levels[0]
        if int(disc.degrees.max()) > p_top:
            raise ValueError("element degree exceeds the hierarchy top level")
        nested = np.array([nest_hierarchy(int(p), p_top, h.levels)
                           for p in disc.degrees])
        self.levels = []
        for k in range(len(h.levels)):
            d = disc if k == 0 and np.array_equal(nested[:, 0], disc.degrees) \
                else Discretization(disc.mesh, nested[:, k], disc.eqn)
            self.levels.append(LevelState(
                d, nsweeps=h.smooth[k], smoother=h.smoothers[k]))
        self.tables = [
            _make_table(self.levels[k].disc, self.levels[k + 1].disc)
            for k in range(len(self.levels) - 1)]
        self.cycles_done = 0
        self.fallbacks = 0
        self.q_outer = None
        self.R_outer = None
        self.shift = 0.0

    # -- smoother state ----------------------------------------------------

    def _effective_smoother(self, level_index: int) -> str:
        h = self.cfg.hierarchy
        if h.switch_after is not None and self.cycles_done >= h.switch_after:
            return "mbnk"
        return h.smoothers[level_index]

    def prepare(self, q: np.ndarray, shift: float):
        """Freeze linearization state and assemble smoother operators."""
        self.q_outer = q.copy()
        self.R_outer = self.levels[0].disc.residual(q)
        self.shift = shift
        qk = q
        for k, lev in enumerate(self.levels):
            if k > 0:
                qlo = np.empty(lev.disc.n_dofs)
                _restrict(self.tables[k - 1], qk, lev.disc.nvars, qlo)
                qk = qlo
            lev.shift = shift
            lev.frozen_q = qk.copy()
            lev.blocks = nk.assemble_element_blocks(
                lev.disc, qk, shift + self.cfg.smoother_shift)
            lev.sparse = lev.ilu = None
        self.cycles_done = 0

    def _ensure_sparse(self, lev: LevelState):
        if lev.sparse is None:
            lev.sparse = nk.assemble_sparse_blocks(lev.disc, lev.frozen_q,
                                                   lev.shift)
            lev.ilu = nk.ilu0_factor(lev.sparse)

    def _smooth(self, k: int):
        lev = self.levels[k]
        kind = self._effective_smoother(k)
        if kind == "ej":
            smooth_ej(lev, lev.nsweeps, self.cfg.omega)
        else:
            self._ensure_sparse(lev)
            for _ in range(lev.nsweeps):
                smooth_mbnk(lev, self.cfg.mbnk_rtol, self.cfg.mbnk_maxiter)

    # -- the V-cycle -------------------------------------------------------

    def vcycle(self, k: int = 0):
        lev = self.levels[k]
        self._smooth(k)
        if k == len(self.levels) - 1:
            return
        d = lev.defect()
        coarse = self.levels[k + 1]
        nv = lev.disc.nvars
        qb = np.empty(coarse.disc.n_dofs)
        gd = np.empty(coarse.disc.n_dofs)
        _restrict(self.tables[k], lev.q, nv, qb)
        _restrict(self.tables[k], d, nv, gd)
        coarse.q = qb.copy()
        coarse.S_base = coarse.F(qb)
        coarse.S_extra = gd
        self.vcycle(k + 1)
        corr = np.empty(lev.disc.n_dofs)
        _prolong(self.tables[k], coarse.q - qb, nv, corr)
        lev.q = lev.q + corr
        self._smooth(k)

    # -- preconditioner mode ----------------------------------------------

    def precondition(self, X: np.ndarray) -> np.ndarray:
        """Approximate (s I - dR/dq)^{-1} X by pseudo-time V-cycles.

        The preconditioner marches the auxiliary problem
        s qhat - R(qhat) = X + s q - R(q) from qhat = q and returns
        qhat - q.  A non-physical intermediate state falls back to the
        plain element-Jacobi application for this call.
        """
        fine = self.levels[0]
        fine.q = self.q_outer.copy()
        fine.S_base = self.shift * self.q_outer - self.R_outer
        fine.S_extra = X
        try:
            for _ in range(self.cfg.m_max):
                self.vcycle()
        except NonPhysicalStateError:
            self.fallbacks += 1
            return fine.blocks.apply(X)
        return fine.q - self.q_outer


def pmg_precondition(X: np.ndarray, ctx: PmgContext) -> np.ndarray:
    return ctx.precondition(X)


# ---------------------------------------------------------------------------
# solver mode

def pmg_solve(ctx: PmgContext, q0: np.ndarray, cfg: nk.PtcConfig,
              shift0: float = 0.0, const: np.ndarray | float = 0.0):
    """Drive shift0 q - R(q) - const = 0 by PTC with one V-cycle per
    outer iteration (nonlinear multigrid solver mode).

    SER adjusts the pseudo step; the smoother linearization keeps the
    shift it was assembled with between refreshes.  Returns (q, stats)
    shaped like ptc_solve's.
    """
    fine = ctx.levels[0]

    def outer_F(q):
        return shift0 * q - fine.disc.residual(q) - const

    q = q0.copy()
    Fk = outer_F(q)
    n0 = float(np.linalg.norm(Fk))
    stats = {"iters": 0, "gmres_iters": 0, "vcycles": 0, "converged": True,
             "aborted": False, "history": [(n0, 1.0, cfg.dtau_init)],
             "final_norm": n0}
    if n0 == 0.0 or (cfg.atol is not None and n0 <= cfg.atol):
        return q, stats

    dtau = cfg.dtau_init
    ctx.prepare(q, 1.0 / dtau + shift0)
    halved = False
    k = 0
    while k < cfg.max_iters:
        s_tot = 1.0 / dtau + shift0
        for lev in ctx.levels:
            lev.shift = s_tot
        fine.q = q.copy()
        fine.S_base = 0.0
        fine.S_extra = q / dtau + const
        try:
            ctx.vcycle()
            qn = fine.q
            Fn = outer_F(qn)
        except NonPhysicalStateError:
            if halved:
                stats["converged"] = False
                stats["aborted"] = True
                return q, stats
            halved = True
            dtau = 0.5 * dtau
            continue

        k += 1
        ctx.cycles_done += 1
        stats["iters"] = k
        stats["vcycles"] = k
        q, Fk = qn, Fn
        nk_norm = float(np.linalg.norm(Fk))
        if cfg.ser:
            prev = stats["history"][-1][0]
            dtau = nk.ser_update(dtau, prev, nk_norm, cfg.dtau_max,
                                 cfg.ser_as_printed)
        stats["history"].append((nk_norm, nk_norm / n0 if n0 else 0.0, dtau))
        stats["final_norm"] = nk_norm
        if nk_norm / n0 <= cfg.rtol or \
                (cfg.atol is not None and nk_norm <= cfg.atol):
            return q, stats
        if cfg.refresh_every and k % cfg.refresh_every == 0:
            ctx.prepare(q, 1.0 / dtau + shift0)

    stats["converged"] = False
    return q, stats

"""Pseudo-transient Newton-Krylov machinery.

Restarted right-preconditioned GMRES, the finite-difference Jacobian
action, pseudo-transient continuation (PTC) with SER time-step growth,
per-element Jacobi blocks, and a block-sparse matrix with block ILU0
for the matrix-based smoother.

The linearized system solved each PTC iteration is

    (I/dtau + I/(a_ii dt) - dR/dq) dq = -F(q)

with the Jacobian action approximated by one extra residual
evaluation per Krylov vector at a fixed perturbation size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .spatial import Discretization, NonPhysicalStateError

FD_EPS = 1e-6  # fixed finite-difference perturbation


@dataclass
class PtcConfig:
    dtau_init: float = 1e-3
    dtau_max: float = 1e12
    max_iters: int = 100
    rtol: float = 1e-4
    atol: float | None = None
    ser: bool = True
    ser_as_printed: bool = False
    refresh_every: int = 0   # 0: preconditioner built once per solve
    max_halvings: int = 1    # dtau halvings tolerated on bad states

    def __post_init__(self):
        if self.dtau_init <= 0:
            raise ValueError("dtau_init must be positive")


@dataclass
class KrylovConfig:
    kdim: int = 30
    max_restarts: int = 10
    rtol: float = 1e-4

    def __post_init__(self):
        if self.kdim < 1:
            raise ValueError("kdim must be >= 1")


def ser_update(dtau: float, f_old: float, f_new: float, dtau_max: float,
               as_printed: bool = False) -> float:
    """Next pseudo time step from the residual-norm ratio.

    The default grows dtau as the residual falls; as_printed flips the
    ratio (see the solver documentation for why both exist).
    """
    if f_old == 0.0:
        return dtau_max
    if f_new == 0.0:
        return dtau_max
    ratio = (f_new / f_old) if as_printed else (f_old / f_new)
    return min(dtau * ratio, dtau_max)


def jfnk_matvec(X: np.ndarray, q: np.ndarray, R0: np.ndarray, residual,
                shift: float, eps: float = FD_EPS) -> np.ndarray:
    """(shift I - dR/dq) X by forward differencing around q."""
    if not np.any(X):
        return np.zeros_like(X)
    return shift * X - (residual(q + eps * X) - R0) / eps


def gmres_solve(matvec, b: np.ndarray, cfg: KrylovConfig, x0=None,
                precond=None):
    """Right-preconditioned restarted GMRES.

    Returns (x, total inner iterations, final relative residual).
    Happy breakdown counts as convergence; a NaN entering the Arnoldi
    process raises RuntimeError with the iteration index.
    """
    n = len(b)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return x, 0, 0.0
    if precond is None:
        precond = lambda v: v

    total = 0
    relres = np.inf
    for _ in range(cfg.max_restarts):
        r = b - matvec(x) if np.any(x) else b.copy()
        beta = float(np.linalg.norm(r))
        relres = beta / bnorm
        if relres <= cfg.rtol:
            return x, total, relres

        m = cfg.kdim
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        breakdown = False
        for j in range(m):
            w = matvec(precond(V[j]))
            if not np.all(np.isfinite(w)):
                raise RuntimeError(f"non-finite Arnoldi vector at inner "
                                   f"iteration {total + 1}")
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = V[i] @ w
                w = w - H[i, j] * V[i]
            H[j + 1, j] = float(np.linalg.norm(w))
            total += 1
            if H[j + 1, j] > 1e-14 * bnorm:
                V[j + 1] = w / H[j + 1, j]
            else:
                breakdown = True
            # apply stored rotations, then form the new one
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            rho = np.hypot(H[j, j], H[j + 1, j])
            if rho == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = H[j, j] / rho
                sn[j] = H[j + 1, j] / rho
            H[j, j] = rho
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_done = j + 1
            relres = abs(g[j + 1]) / bnorm
            if relres <= cfg.rtol or breakdown:
                break
        y = scipy.linalg.solve_triangular(H[:j_done, :j_done], g[:j_done])
        x = x + precond(V[:j_done].T @ y)
        if relres <= cfg.rtol or breakdown:
            return x, total, relres
    return x, total, relres


# ---------------------------------------------------------------------------
# element-Jacobi blocks

@dataclass
class BlockJacobian:
    """Factorized diagonal blocks of (shift I - dR/dq), one per element."""

    disc: Discretization
    shift: float
    inv: list            # per degree group: (Mg, sz, sz) stacked inverses
    blocks: list         # per degree group: the unfactorized blocks

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = np.empty_like(X)
        for g, inv in zip(self.disc.groups, self.inv):
            xg = X[g.idx]
            out[g.idx] = np.einsum("mij,mj->mi", inv, xg)
        return out


def element_jacobian_block(disc: Discretization, e: int, data: np.ndarray,
                           frozen, eps: float = FD_EPS) -> np.ndarray:
    """Dense -dR_e/dq_e with neighbor face data frozen (no shift)."""
    n = disc.degrees[e] + 1
    sz = disc.nvars * n * n
    Q0 = data[disc.offsets[e]:disc.offsets[e + 1]].reshape(n, n, disc.nvars)
    batch = np.broadcast_to(Q0, (sz + 1, n, n, disc.nvars)).copy()
    flat = batch.reshape(sz + 1, sz)
    flat[np.arange(1, sz + 1), np.arange(sz)] += eps
    R = disc.element_residual(e, batch, frozen).reshape(sz + 1, sz)
    return -(R[1:] - R[0]).T / eps


def assemble_element_blocks(disc: Discretization, data: np.ndarray,
                            shift: float, frozen=None) -> BlockJacobian:
    """Per-element blocks of A = shift I - dR/dq, inverted for ej_apply."""
    if frozen is None:
        frozen = disc.freeze(data)
    inv_groups = []
    blk_groups = []
    for g in disc.groups:
        sz = disc.nvars * g.n * g.n
        blocks = np.empty((len(g.elems), sz, sz))
        for k, e in enumerate(g.elems):
            blocks[k] = element_jacobian_block(disc, int(e), data, frozen)
            blocks[k][np.arange(sz), np.arange(sz)] += shift
        try:
            inv_groups.append(np.linalg.inv(blocks))
        except np.linalg.LinAlgError:
            # find the offender for the error message
            for k, e in enumerate(g.elems):
                if not np.isfinite(np.linalg.cond(blocks[k])) or \
                        np.linalg.cond(blocks[k]) > 1e15:
                    raise RuntimeError(f"singular Jacobi block for element {e}")
            raise
        blk_groups.append(blocks)
    return BlockJacobian(disc, shift, inv_groups, blk_groups)


def ej_apply(blocks: BlockJacobian, X: np.ndarray) -> np.ndarray:
    return blocks.apply(X)


# ---------------------------------------------------------------------------
# block-sparse matrix and ILU0

@dataclass
class SparseBlockMatrix:
    """Block-CSR over element adjacency (diagonal plus face neighbors)."""

    n: int               # block rows
    indptr: np.ndarray
    indices: np.ndarray  # column (element) ids, sorted per row
    blocks: list         # dense block per stored entry
    sizes: np.ndarray    # per-element block size

    def entry(self, i: int, j: int):
        for k in range(self.indptr[i], self.indptr[i + 1]):
            if self.indices[k] == j:
                return k
        return -1

    def check_symmetric_pattern(self):
        for i in range(self.n):
            for k in range(self.indptr[i], self.indptr[i + 1]):
                j = int(self.indices[k])
                if self.entry(j, i) < 0:
                    raise ValueError(
                        f"asymmetric sparsity: ({i},{j}) present, "
                        f"({j},{i}) missing")

    def matvec(self, X: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        out = np.zeros_like(X)
        for i in range(self.n):
            acc = np.zeros(self.sizes[i])
            for k in range(self.indptr[i], self.indptr[i + 1]):
                j = int(self.indices[k])
                acc += self.blocks[k] @ X[offsets[j]:offsets[j] + self.sizes[j]]
            out[offsets[i]:offsets[i] + self.sizes[i]] = acc
        return out


def coupling_block(disc: Discretization, e: int, f: int, data: np.ndarray,
                   frozen, eps: float = FD_EPS) -> np.ndarray:
    """-dR_e/dq_nb across face f of element e, by batched differencing."""
    info = disc.face_of[e][f]
    nb = info[1]
    n_nb = disc.degrees[nb] + 1
    sz_nb = disc.nvars * n_nb * n_nb
    n_e = disc.degrees[e] + 1
    sz_e = disc.nvars * n_e * n_e

    Q_nb = data[disc.offsets[nb]:disc.offsets[nb + 1]].reshape(
        n_nb, n_nb, disc.nvars)
    batch = np.broadcast_to(Q_nb, (sz_nb + 1, n_nb, n_nb, disc.nvars)).copy()
    flat = batch.reshape(sz_nb + 1, sz_nb)
    flat[np.arange(1, sz_nb + 1), np.arange(sz_nb)] += eps
    rec = disc.neighbor_face_record(e, f, batch, frozen)

    Q_e = data[disc.offsets[e]:disc.offsets[e + 1]].reshape(
        n_e, n_e, disc.nvars)
    Q_e_b = np.broadcast_to(Q_e, (sz_nb + 1, n_e, n_e, disc.nvars))
    R = disc.element_residual(e, Q_e_b, frozen,
                              face_override={f: rec}).reshape(sz_nb + 1, sz_e)
    return -(R[1:] - R[0]).T / eps


def assemble_sparse_blocks(disc: Discretization, data: np.ndarray,
                           shift: float, frozen=None) -> SparseBlockMatrix:
    """A = shift I - dR/dq restricted to the element-adjacency pattern."""
    if frozen is None:
        frozen = disc.freeze(data)
    M = disc.mesh.n_elements
    sizes = disc.nvars * (disc.degrees + 1) ** 2
    adj = [set([i]) for i in range(M)]
    for eL, fL, eR, fR, _ in disc.mesh.interior_faces:
        adj[eL].add(int(eR))
        adj[eR].add(int(eL))
    indptr = [0]
    indices = []
    for i in range(M):
        cols = sorted(adj[i])
        indices.extend(cols)
        indptr.append(len(indices))
    indptr = np.array(indptr)
    indices = np.array(indices)

    blocks = [None] * len(indices)
    S = SparseBlockMatrix(M, indptr, indices, blocks, sizes)
    for e in range(M):
        blk = element_jacobian_block(disc, e, data, frozen)
        blk[np.arange(sizes[e]), np.arange(sizes[e])] += shift
        blocks[S.entry(e, e)] = blk
    # accumulate: periodic meshes can connect a pair through two faces
    for eL, fL, eR, fR, _ in disc.mesh.interior_faces:
        for e, f, nb in ((int(eL), int(fL), int(eR)),
                         (int(eR), int(fR), int(eL))):
            k = S.entry(e, nb)
            blk = coupling_block(disc, e, f, data, frozen)
            blocks[k] = blk if blocks[k] is None else blocks[k] + blk
    return S


@dataclass
class Ilu0Factors:
    pattern: SparseBlockMatrix  # shares indptr/indices; blocks are factors
    diag_inv: list              # inverse of the factored diagonal blocks


def ilu0_factor(A: SparseBlockMatrix) -> Ilu0Factors:
    """Block ILU with zero fill on A's own sparsity pattern."""
    A.check_symmetric_pattern()
    blocks = [b.copy() for b in A.blocks]
    F = SparseBlockMatrix(A.n, A.indptr, A.indices, blocks, A.sizes)
    diag_inv = [None] * A.n
    for i in range(A.n):
        row = list(range(F.indptr[i], F.indptr[i + 1]))
        for k in row:
            kk = int(F.indices[k])
            if kk >= i:
                continue
            blocks[k] = blocks[k] @ diag_inv[kk]   # L factor entry
            krow = {int(F.indices[t]): t
                    for t in range(F.indptr[kk], F.indptr[kk + 1])}
            for k2 in row:
                j = int(F.indices[k2])
                if j > kk and j in krow:
                    blocks[k2] = blocks[k2] - blocks[k] @ blocks[krow[j]]
        d = blocks[F.entry(i, i)]
        try:
            diag_inv[i] = np.linalg.inv(d)
        except np.linalg.LinAlgError:
            raise RuntimeError(f"singular ILU0 pivot block at element {i}")
    return Ilu0Factors(F, diag_inv)


def ilu0_apply(fac: Ilu0Factors, X: np.ndarray,
               offsets: np.ndarray) -> np.ndarray:
    """Solve LU y = X with the incomplete factors (block sweeps)."""
    F = fac.pattern
    sz = F.sizes
    y = np.zeros_like(X)
    for i in range(F.n):  # forward, unit block diagonal in L
        acc = X[offsets[i]:offsets[i] + sz[i]].copy()
        for k in range(F.indptr[i], F.indptr[i + 1]):
            j = int(F.indices[k])
            if j < i:
                acc -= F.blocks[k] @ y[offsets[j]:offsets[j] + sz[j]]
        y[offsets[i]:offsets[i] + sz[i]] = acc
    out = np.zeros_like(X)
    for i in range(F.n - 1, -1, -1):  # backward with U
        acc = y[offsets[i]:offsets[i] + sz[i]].copy()
        for k in range(F.indptr[i], F.indptr[i + 1]):
            j = int(F.indices[k])
            if j > i:
                acc -= F.blocks[k] @ out[offsets[j]:offsets[j] + sz[j]]
        out[offsets[i]:offsets[i] + sz[i]] = fac.diag_inv[i] @ acc
    return out


# ---------------------------------------------------------------------------
# pseudo-transient continuation

def ptc_solve(F, q0: np.ndarray, cfg: PtcConfig, krylov: KrylovConfig,
              precond_factory=None, eps: float = FD_EPS):
    """Drive F(q) = 0 by pseudo-transient continuation.

    Each iteration solves (I/dtau + dF/dq) dq = -F(q) by JFNK GMRES.
    precond_factory(q, dtau) -> callable builds the preconditioner; it
    is refreshed every cfg.refresh_every iterations (0: never after
    the start).  Returns (q, stats dict); stats['converged'] is False
    when the iteration budget runs out, stats['aborted'] when a
    non-physical state could not be stepped around.
    """
    q = q0.copy()
    Fk = F(q)
    n0 = float(np.linalg.norm(Fk))
    stats = {"iters": 0, "gmres_iters": 0, "converged": True,
             "aborted": False, "history": [(n0, 1.0, cfg.dtau_init)],
             "final_norm": n0}
    if n0 == 0.0 or (cfg.atol is not None and n0 <= cfg.atol):
        return q, stats

    dtau = cfg.dtau_init
    P = precond_factory(q, dtau) if precond_factory else None
    halvings = 0
    k = 0
    while k < cfg.max_iters:
        def matvec(X, q=q, Fk=Fk, dtau=dtau):
            if not np.any(X):
                return np.zeros_like(X)
            return X / dtau + (F(q + eps * X) - Fk) / eps

        try:
            dq, it, _ = gmres_solve(matvec, -Fk, krylov, precond=P)
            stats["gmres_iters"] += it
            qn = q + dq
            Fn = F(qn)
        except NonPhysicalStateError:
            halvings += 1
            if halvings > cfg.max_halvings:
                stats["converged"] = False
                stats["aborted"] = True
                return q, stats
            dtau = 0.5 * dtau
            continue

        k += 1
        stats["iters"] = k
        q, Fk = qn, Fn
        nk = float(np.linalg.norm(Fk))
        if cfg.ser:
            prev = stats["history"][-1][0]
            dtau = ser_update(dtau, prev, nk, cfg.dtau_max,
                              cfg.ser_as_printed)
        stats["history"].append((nk, nk / n0 if n0 else 0.0, dtau))
        stats["final_norm"] = nk
        if nk / n0 <= cfg.rtol or (cfg.atol is not None and nk <= cfg.atol):
            return q, stats
        if precond_factory and cfg.refresh_every and k % cfg.refresh_every == 0:
            P = precond_factory(q, dtau)

    stats["converged"] = False
    return q, stats

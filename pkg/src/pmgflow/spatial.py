"""Flux-reconstruction spatial discretization, dq/dt = R(q).

2D compressible Euler / Navier-Stokes plus a scalar
advection-diffusion model equation on quad meshes, with per-element
polynomial degrees.  The scheme is the DG-equivalent FR correction on
tensor-product Gauss-Legendre points: interface coupling through Roe
fluxes (inviscid) and BR1 arithmetic means (viscous), metric terms in
divergence form so uniform free-stream states are preserved to
roundoff.

Array layout is channel-last: element data is (n, n, nv) with the
first tensor index along eta and the second along xi; face data is
(n_pts, nv) ordered counter-clockwise around the element.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from types import SimpleNamespace

import numpy as np

from .mesh import Mesh, element_geometry
from .operators import basis, transfer_operators


class NonPhysicalStateError(Exception):
    """Negative density or pressure encountered during a flux evaluation."""

    def __init__(self, element: int, what: str = "state"):
        self.element = int(element)
        super().__init__(f"non-physical {what} in element {self.element}")


@dataclass(frozen=True)
class EquationSpec:
    """What is being solved and with which reference quantities.

    Flow cases are non-dimensionalized so the free stream is
    (rho, u, v) = (1, 1, 0) with pressure fixed by the Mach number;
    the constant viscosity follows from the Reynolds number and
    reference length.
    """

    kind: str = "euler"  # euler | navier-stokes | advection-diffusion
    mach: float = 0.1
    reynolds: float = 100.0
    ref_length: float = 1.0
    gamma: float = 1.4
    prandtl: float = 0.72
    advection: tuple = (1.0, 0.0)
    diffusivity: float = 0.0

    def __post_init__(self):
        if self.kind not in ("euler", "navier-stokes", "advection-diffusion"):
            raise ValueError(f"unknown equation kind {self.kind!r}")
        if self.kind != "advection-diffusion" and self.mach <= 0:
            raise ValueError("Mach number must be positive")
        if self.kind == "navier-stokes" and self.reynolds <= 0:
            raise ValueError("Reynolds number must be positive")

    @property
    def nvars(self) -> int:
        return 1 if self.kind == "advection-diffusion" else 4

    @property
    def viscous(self) -> bool:
        if self.kind == "navier-stokes":
            return True
        return self.kind == "advection-diffusion" and self.diffusivity > 0.0

    @property
    def mu(self) -> float:
        if self.kind != "navier-stokes":
            return 0.0
        return self.ref_length / self.reynolds

    @property
    def heat_conductivity(self) -> float:
        g = self.gamma
        return self.mu * g / ((g - 1.0) * self.prandtl)

    def free_stream(self) -> np.ndarray:
        if self.kind == "advection-diffusion":
            return np.zeros(1)
        p = 1.0 / (self.gamma * self.mach**2)
        E = p / (self.gamma - 1.0) + 0.5
        return np.array([1.0, 1.0, 0.0, E])


# ---------------------------------------------------------------------------
# pointwise flux kernels (channel-last, arbitrary leading dims)

def primitive(q: np.ndarray, gamma: float):
    """(rho, u, v, p) from conserved variables; no positivity checks."""
    rho = q[..., 0]
    u = q[..., 1] / rho
    v = q[..., 2] / rho
    p = (gamma - 1.0) * (q[..., 3] - 0.5 * rho * (u * u + v * v))
    return rho, u, v, p


def euler_flux(q: np.ndarray, gamma: float):
    """Physical inviscid flux vectors (f_x, f_y)."""
    rho, u, v, p = primitive(q, gamma)
    fx = np.stack([q[..., 1], q[..., 1] * u + p, q[..., 1] * v,
                   u * (q[..., 3] + p)], axis=-1)
    fy = np.stack([q[..., 2], q[..., 2] * u, q[..., 2] * v + p,
                   v * (q[..., 3] + p)], axis=-1)
    return fx, fy


def roe_flux(qL: np.ndarray, qR: np.ndarray, normal: np.ndarray,
             gamma: float) -> np.ndarray:
    """Roe approximate Riemann flux (no entropy fix) along `normal`.

    Shapes broadcast; the last axis is the 4 conserved variables and
    normal[..., :] the unit face normal.
    """
    nx, ny = normal[..., 0], normal[..., 1]
    rL, uL, vL, pL = primitive(qL, gamma)
    rR, uR, vR, pR = primitive(qR, gamma)
    HL = (qL[..., 3] + pL) / rL
    HR = (qR[..., 3] + pR) / rR

    sL, sR = np.sqrt(rL), np.sqrt(rR)
    w = sL / (sL + sR)
    u = w * uL + (1.0 - w) * uR
    v = w * vL + (1.0 - w) * vR
    H = w * HL + (1.0 - w) * HR
    a2 = (gamma - 1.0) * (H - 0.5 * (u * u + v * v))
    a = np.sqrt(a2)
    rbar = sL * sR

    un = u * nx + v * ny
    dr = rR - rL
    dp = pR - pL
    dun = (uR - uL) * nx + (vR - vL) * ny
    dut = -(uR - uL) * ny + (vR - vL) * nx

    a1 = (dp - rbar * a * dun) / (2.0 * a2)
    a2w = dr - dp / a2
    a3 = rbar * dut
    a4 = (dp + rbar * a * dun) / (2.0 * a2)

    l1 = np.abs(un - a)
    l2 = np.abs(un)
    l4 = np.abs(un + a)

    ke = 0.5 * (u * u + v * v)
    ut = -u * ny + v * nx
    K1 = np.stack([np.ones_like(u), u - a * nx, v - a * ny, H - a * un], axis=-1)
    K2 = np.stack([np.ones_like(u), u, v, ke], axis=-1)
    K3 = np.stack([np.zeros_like(u), -ny + 0 * u, nx + 0 * u, ut], axis=-1)
    K4 = np.stack([np.ones_like(u), u + a * nx, v + a * ny, H + a * un], axis=-1)

    diss = ((l1 * a1)[..., None] * K1 + (l2 * a2w)[..., None] * K2
            + (l2 * a3)[..., None] * K3 + (l4 * a4)[..., None] * K4)

    fxL, fyL = euler_flux(qL, gamma)
    fxR, fyR = euler_flux(qR, gamma)
    fn = 0.5 * (fxL + fxR) * nx[..., None] + 0.5 * (fyL + fyR) * ny[..., None]
    return fn - 0.5 * diss


def viscous_flux_ns(q, gx, gy, mu, kappa):
    """Viscous flux vectors from gradients of (u, v, T), T = p/rho."""
    rho = q[..., 0]
    u = q[..., 1] / rho
    v = q[..., 2] / rho
    ux, vx, Tx = gx[..., 0], gx[..., 1], gx[..., 2]
    uy, vy, Ty = gy[..., 0], gy[..., 1], gy[..., 2]
    div = ux + vy
    txx = mu * (2.0 * ux - (2.0 / 3.0) * div)
    tyy = mu * (2.0 * vy - (2.0 / 3.0) * div)
    txy = mu * (uy + vx)
    z = np.zeros_like(txx)
    fx = np.stack([z, txx, txy, u * txx + v * txy + kappa * Tx], axis=-1)
    fy = np.stack([z, txy, tyy, u * txy + v * tyy + kappa * Ty], axis=-1)
    return fx, fy


def boundary_state(q: np.ndarray, tag: str, normal: np.ndarray,
                   eqn: EquationSpec) -> np.ndarray:
    """Ghost state outside a boundary face given the interior trace."""
    if eqn.kind == "advection-diffusion":
        if tag == "far-field":
            return np.zeros_like(q)
        return q.copy()  # zero-flux walls for the scalar model
    if tag == "far-field":
        return np.broadcast_to(eqn.free_stream(), q.shape).copy()
    if tag == "wall-slip":
        un = (q[..., 1] * normal[..., 0] + q[..., 2] * normal[..., 1])
        g = q.copy()
        g[..., 1] -= 2.0 * un * normal[..., 0]
        g[..., 2] -= 2.0 * un * normal[..., 1]
        return g
    if tag == "wall-adiabatic":
        g = q.copy()
        g[..., 1] *= -1.0
        g[..., 2] *= -1.0
        return g
    raise ValueError(f"unknown boundary tag {tag!r}")


# ---------------------------------------------------------------------------
# solution storage

@dataclass
class SolutionField:
    """Flat global vector with per-element degree bookkeeping.

    Element e occupies data[offsets[e]:offsets[e+1]], shaped
    (p_e+1, p_e+1, nvars) in C order.
    """

    nvars: int
    degrees: np.ndarray
    offsets: np.ndarray
    data: np.ndarray

    @classmethod
    def zeros(cls, nvars: int, degrees) -> "SolutionField":
        degrees = np.asarray(degrees, dtype=np.int64)
        sizes = nvars * (degrees + 1) ** 2
        offsets = np.concatenate(([0], np.cumsum(sizes)))
        return cls(nvars, degrees, offsets, np.zeros(offsets[-1]))

    @property
    def n_elements(self) -> int:
        return len(self.degrees)

    def element(self, e: int) -> np.ndarray:
        n = self.degrees[e] + 1
        return self.data[self.offsets[e]:self.offsets[e + 1]].reshape(n, n, self.nvars)

    def copy(self) -> "SolutionField":
        return SolutionField(self.nvars, self.degrees, self.offsets, self.data.copy())

    def with_data(self, data: np.ndarray) -> "SolutionField":
        return SolutionField(self.nvars, self.degrees, self.offsets, data)


# ---------------------------------------------------------------------------
# discretization

@dataclass
class _DegreeGroup:
    p: int
    elems: np.ndarray      # global element ids
    geom: object           # ElementGeometry
    D: np.ndarray
    eL: np.ndarray
    eR: np.ndarray
    lL: np.ndarray
    lR: np.ndarray
    xy: np.ndarray         # (Mg, n, n, 2) physical solution points
    idx: np.ndarray        # (Mg, elem_size) flat gather indices

    @property
    def n(self) -> int:
        return self.p + 1


@dataclass
class _FaceBatch:
    gL: int
    gR: int
    iL: np.ndarray
    fL: np.ndarray
    iR: np.ndarray
    fR: np.ndarray
    rev: bool


@dataclass
class _BoundaryBatch:
    g: int
    tag: str
    i: np.ndarray
    f: np.ndarray


def _solution_point_coords(mesh: Mesh, p: int, elems: np.ndarray) -> np.ndarray:
    pts = basis(p).points
    n = p + 1
    xi = np.tile(pts, n)
    eta = np.repeat(pts, n)
    N = 0.25 * np.stack([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)], axis=-1)
    xy = np.einsum("ka,maj->mkj", N, mesh.nodes[mesh.elements[elems]])
    return xy.reshape(len(elems), n, n, 2)


class Discretization:
    """FR residual operator on a mesh with a per-element degree map."""

    def __init__(self, mesh: Mesh, degrees, eqn: EquationSpec):
        self.mesh = mesh
        self.eqn = eqn
        degrees = np.asarray(degrees, dtype=np.int64)
        if degrees.ndim == 0:
            degrees = np.full(mesh.n_elements, int(degrees))
        if len(degrees) != mesh.n_elements:
            raise ValueError("degree map length does not match element count")
        if (degrees < 0).any():
            raise ValueError("degrees must be >= 0")
        self.degrees = degrees
        self.nvars = eqn.nvars

        sizes = self.nvars * (degrees + 1) ** 2
        self.offsets = np.concatenate(([0], np.cumsum(sizes)))
        self.n_dofs = int(self.offsets[-1])

        self.groups: list[_DegreeGroup] = []
        self.elem_group = np.empty(mesh.n_elements, dtype=np.int64)
        self.elem_local = np.empty(mesh.n_elements, dtype=np.int64)
        for gi, p in enumerate(np.unique(degrees)):
            elems = np.nonzero(degrees == p)[0]
            self.elem_group[elems] = gi
            self.elem_local[elems] = np.arange(len(elems))
            b = basis(int(p))
            eLv = b.eval_at(np.array([-1.0]))[0]
            eRv = b.eval_at(np.array([1.0]))[0]
            n = int(p) + 1
            sz = self.nvars * n * n
            idx = self.offsets[elems][:, None] + np.arange(sz)
            self.groups.append(_DegreeGroup(
                int(p), elems, element_geometry(mesh, int(p), elems),
                b.diff_matrix, eLv, eRv, eLv / b.weights, eRv / b.weights,
                _solution_point_coords(mesh, int(p), elems), idx))

        # face batches keyed by (group pair, reversal)
        batches: dict[tuple, list] = {}
        for eL, fL, eR, fR, rev in mesh.interior_faces:
            key = (self.elem_group[eL], self.elem_group[eR], bool(rev))
            batches.setdefault(key, []).append(
                (self.elem_local[eL], fL, self.elem_local[eR], fR))
        self.face_batches = [
            _FaceBatch(gL, gR, *(np.array(c) for c in zip(*rows)), rev)
            for (gL, gR, rev), rows in sorted(batches.items())
        ]

        bnd: dict[tuple, list] = {}
        for (e, f), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
            bnd.setdefault((self.elem_group[e], tag), []).append(
                (self.elem_local[e], f))
        self.boundary_batches = [
            _BoundaryBatch(g, tag, *(np.array(c) for c in zip(*rows)))
            for (g, tag), rows in sorted(bnd.items())
        ]

        # neighbor lookup for Jacobian assembly: element -> face -> record
        self.face_of = [[None] * 4 for _ in range(mesh.n_elements)]
        for eL, fL, eR, fR, rev in mesh.interior_faces:
            self.face_of[eL][fL] = ("interior", int(eR), int(fR), bool(rev))
            self.face_of[eR][fR] = ("interior", int(eL), int(fL), bool(rev))
        for (e, f), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
            self.face_of[e][f] = ("boundary", tag)

    # -- field plumbing ----------------------------------------------------

    def new_field(self) -> SolutionField:
        return SolutionField.zeros(self.nvars, self.degrees)

    def free_stream_field(self) -> SolutionField:
        f = self.new_field()
        qinf = self.eqn.free_stream()
        for g in self.groups:
            f.data[g.idx] = np.broadcast_to(
                qinf, (len(g.elems), g.n, g.n, self.nvars)).reshape(g.idx.shape)
        return f

    def project(self, fn) -> SolutionField:
        """Pointwise evaluation of fn(x, y) -> (nv,) at solution points."""
        f = self.new_field()
        for g in self.groups:
            vals = fn(g.xy[..., 0], g.xy[..., 1])
            f.data[g.idx] = np.asarray(vals).reshape(g.idx.shape)
        return f

    def l2_error(self, data: np.ndarray, fn, var: int = 0) -> float:
        """Quadrature L2 norm of (numerical - fn) for one variable."""
        total = 0.0
        for g in self.groups:
            w = basis(g.p).weights
            Q = data[g.idx].reshape(-1, g.n, g.n, self.nvars)
            exact = np.asarray(fn(g.xy[..., 0], g.xy[..., 1]))[..., var]
            d2 = (Q[..., var] - exact) ** 2
            total += float(np.einsum("a,b,mab->", w, w, d2 * g.geom.det))
        return np.sqrt(total)

    def _gather(self, data: np.ndarray):
        return [data[g.idx].reshape(-1, g.n, g.n, self.nvars) for g in self.groups]

    # -- trace extraction --------------------------------------------------

    @staticmethod
    def _traces(g, Q):
        """(..., 4, n, w) face values, counter-clockwise per face."""
        t0 = np.einsum("a,...abv->...bv", g.eL, Q)
        t1 = np.einsum("b,...abv->...av", g.eR, Q)
        t2 = np.einsum("a,...abv->...bv", g.eR, Q)[..., ::-1, :]
        t3 = np.einsum("b,...abv->...av", g.eL, Q)[..., ::-1, :]
        return np.stack([t0, t1, t2, t3], axis=-3)

    @staticmethod
    def _divergence(g, geom, Ft, Gt, Fc):
        """FR divergence from transformed volume fluxes and face fluxes.

        Ft, Gt: (..., n, n, w) contravariant fluxes at solution points;
        Fc: (..., 4, n, w) physical normal flux at face points (CCW,
        outward normal).  Returns (..., n, n, w).
        """
        div = (np.einsum("bc,...acv->...abv", g.D, Ft)
               + np.einsum("ac,...cbv->...abv", g.D, Gt))
        js = geom.face_jac  # (..., 4)
        Ft1 = np.einsum("b,...abv->...av", g.eR, Ft)
        Ft3 = np.einsum("b,...abv->...av", g.eL, Ft)
        Gt2 = np.einsum("a,...abv->...bv", g.eR, Gt)
        Gt0 = np.einsum("a,...abv->...bv", g.eL, Gt)
        Fs1 = js[..., 1, None, None] * Fc[..., 1, :, :]
        Fs3 = -js[..., 3, None, None] * Fc[..., 3, ::-1, :]
        Gs2 = js[..., 2, None, None] * Fc[..., 2, ::-1, :]
        Gs0 = -js[..., 0, None, None] * Fc[..., 0, :, :]
        div = div + np.einsum("b,...av->...abv", g.lR, Fs1 - Ft1)
        div = div - np.einsum("b,...av->...abv", g.lL, Fs3 - Ft3)
        div = div + np.einsum("a,...bv->...abv", g.lR, Gs2 - Gt2)
        div = div - np.einsum("a,...bv->...abv", g.lL, Gs0 - Gt0)
        return div / geom.det[..., None]

    @staticmethod
    def _transformed(geom, fx, fy):
        J = geom.jac
        Ft = J[..., 1, 1, None] * fx - J[..., 0, 1, None] * fy
        Gt = -J[..., 1, 0, None] * fx + J[..., 0, 0, None] * fy
        return Ft, Gt

    def _check_physical(self, g, Q, where="state"):
        if self.eqn.kind == "advection-diffusion":
            return
        rho, _, _, p = primitive(Q, self.eqn.gamma)
        bad = ~((rho > 0.0) & (p > 0.0))
        if bad.any():
            m = np.nonzero(bad.reshape(bad.shape[0], -1).any(axis=1))[0][0]
            raise NonPhysicalStateError(g.elems[m], where)

    def _grad_vars(self, Q):
        """Variables whose gradients feed the viscous flux."""
        if self.eqn.kind == "advection-diffusion":
            return Q
        rho = Q[..., 0]
        return np.stack([Q[..., 1] / rho, Q[..., 2] / rho,
                         primitive(Q, self.eqn.gamma)[3] / rho], axis=-1)

    def _one_sided_fvn(self, q_tr, gx_tr, gy_tr, normal):
        """Viscous normal flux from one side's trace data."""
        if self.eqn.kind == "advection-diffusion":
            k = self.eqn.diffusivity
            fx, fy = k * gx_tr, k * gy_tr
        else:
            fx, fy = viscous_flux_ns(q_tr, gx_tr, gy_tr,
                                     self.eqn.mu, self.eqn.heat_conductivity)
        return fx * normal[..., :1] + fy * normal[..., 1:2]

    # -- mixed-degree face transfer ---------------------------------------

    def _pair_align(self, b: _FaceBatch, XL, XR):
        """Both sides' face values at the common (higher-degree) points,
        aligned to the L side's CCW ordering."""
        a = XL[b.iL, b.fL]
        c = XR[b.iR, b.fR]
        if b.rev:
            c = c[:, ::-1]
        pL, pR = self.groups[b.gL].p, self.groups[b.gR].p
        pH = max(pL, pR)
        if pL < pH:
            a = np.einsum("kl,nlv->nkv", transfer_operators(pH, pL).pi, a)
        if pR < pH:
            c = np.einsum("kl,nlv->nkv", transfer_operators(pH, pR).pi, c)
        return a, c

    def _pair_scatter(self, b: _FaceBatch, bufL, bufR, val_hi):
        """Write a common normal flux (at high points, L-aligned, along
        L's outward normal) back to both sides' face buffers."""
        pL, pR = self.groups[b.gL].p, self.groups[b.gR].p
        pH = max(pL, pR)
        vL = val_hi
        vR = -val_hi
        if pL < pH:
            vL = np.einsum("lk,nkv->nlv", transfer_operators(pH, pL).gamma, vL)
        if pR < pH:
            vR = np.einsum("lk,nkv->nlv", transfer_operators(pH, pR).gamma, vR)
        if b.rev:
            vR = vR[:, ::-1]
        bufL[b.iL, b.fL] = vL
        bufR[b.iR, b.fR] = vR

    # -- the residual ------------------------------------------------------

    def residual(self, data: np.ndarray) -> np.ndarray:
        """R(q) as a flat vector, same layout as the input."""
        eqn = self.eqn
        Qs = self._gather(data)
        traces = []
        for g, Q in zip(self.groups, Qs):
            self._check_physical(g, Q)
            tr = self._traces(g, Q)
            self._check_physical(g, tr, "trace")
            traces.append(tr)

        # ghost states once per boundary face batch
        ghosts = []
        for b in self.boundary_batches:
            g = self.groups[b.g]
            qb = traces[b.g][b.i, b.f]
            nrm = g.geom.face_normals[b.i, b.f][:, None, :]
            ghosts.append(boundary_state(qb, b.tag, nrm, eqn))

        # inviscid common normal fluxes
        Fc_inv = [np.zeros((len(g.elems), 4, g.n, self.nvars)) for g in self.groups]
        for b in self.face_batches:
            qa, qc = self._pair_align(b, traces[b.gL], traces[b.gR])
            nrm = self.groups[b.gL].geom.face_normals[b.iL, b.fL][:, None, :]
            self._pair_scatter(b, Fc_inv[b.gL], Fc_inv[b.gR],
                               self._num_flux(qa, qc, nrm))
        for b, gh in zip(self.boundary_batches, ghosts):
            g = self.groups[b.g]
            qb = traces[b.g][b.i, b.f]
            nrm = g.geom.face_normals[b.i, b.f][:, None, :]
            Fc_inv[b.g][b.i, b.f] = self._num_flux(qb, gh, nrm)

        if not eqn.viscous:
            return self._assemble(Qs, Fc_inv, None)

        # BR1 gradients of the viscous variables
        Ws = [self._grad_vars(Q) for Q in Qs]
        w_traces = [self._grad_vars(tr) for tr in traces]
        nw = Ws[0].shape[-1]
        What = [np.zeros((len(g.elems), 4, g.n, nw)) for g in self.groups]
        for b in self.face_batches:
            wa, wc = self._pair_align(b, w_traces[b.gL], w_traces[b.gR])
            self._pair_scatter_values(b, What, 0.5 * (wa + wc))
        for b, gh in zip(self.boundary_batches, ghosts):
            What[b.g][b.i, b.f] = 0.5 * (w_traces[b.g][b.i, b.f]
                                         + self._grad_vars(gh))

        grads = [self._br1_gradient(g, g.geom, W, Wh)
                 for g, W, Wh in zip(self.groups, Ws, What)]

        # one-sided viscous normal fluxes at faces
        fvn = []
        for g, tr, (gx, gy) in zip(self.groups, traces, grads):
            gx_tr = self._traces(g, gx)
            gy_tr = self._traces(g, gy)
            nrm = g.geom.face_normals[:, :, None, :]
            fvn.append(self._one_sided_fvn(tr, gx_tr, gy_tr, nrm))

        Fc_vis = [np.zeros_like(f) for f in Fc_inv]
        for b in self.face_batches:
            fa, fc = self._pair_align(b, fvn[b.gL], fvn[b.gR])
            # fc was computed with R's outward normal = -n_L
            self._pair_scatter(b, Fc_vis[b.gL], Fc_vis[b.gR], 0.5 * (fa - fc))
        for b in self.boundary_batches:
            val = fvn[b.g][b.i, b.f].copy()
            if b.tag == "wall-adiabatic" and eqn.kind == "navier-stokes":
                val[..., 3] = 0.0  # no heat flux, no slip work at the wall
            Fc_vis[b.g][b.i, b.f] = val

        return self._assemble(Qs, Fc_inv, (grads, Fc_vis))

    def _pair_scatter_values(self, b: _FaceBatch, bufs, val_hi):
        """Like _pair_scatter but for a shared scalar/vector value (no
        sign flip between the sides)."""
        pL, pR = self.groups[b.gL].p, self.groups[b.gR].p
        pH = max(pL, pR)
        vL = vR = val_hi
        if pL < pH:
            vL = np.einsum("lk,nkv->nlv", transfer_operators(pH, pL).gamma, vL)
        if pR < pH:
            vR = np.einsum("lk,nkv->nlv", transfer_operators(pH, pR).gamma, vR)
        if b.rev:
            vR = vR[:, ::-1]
        bufs[b.gL][b.iL, b.fL] = vL
        bufs[b.gR][b.iR, b.fR] = vR

    def _num_flux(self, qL, qR, normal):
        if self.eqn.kind == "advection-diffusion":
            an = (self.eqn.advection[0] * normal[..., 0]
                  + self.eqn.advection[1] * normal[..., 1])[..., None]
            return 0.5 * an * (qL + qR) - 0.5 * np.abs(an) * (qR - qL)
        return roe_flux(qL, qR, normal, self.eqn.gamma)

    def _br1_gradient(self, g, geom, W, What):
        """Corrected physical gradients (gx, gy) of the viscous variables."""
        J = geom.jac
        nx = geom.face_normals[..., 0][..., None, None]
        ny = geom.face_normals[..., 1][..., None, None]
        gx = self._divergence(
            g, geom, J[..., 1, 1, None] * W, -J[..., 1, 0, None] * W, nx * What)
        gy = self._divergence(
            g, geom, -J[..., 0, 1, None] * W, J[..., 0, 0, None] * W, ny * What)
        return gx, gy

    def _assemble(self, Qs, Fc_inv, viscous):
        out = np.empty(self.n_dofs)
        for gi, (g, Q) in enumerate(zip(self.groups, Qs)):
            if self.eqn.kind == "advection-diffusion":
                ax, ay = self.eqn.advection
                fx, fy = ax * Q, ay * Q
            else:
                fx, fy = euler_flux(Q, self.eqn.gamma)
            Fc = Fc_inv[gi]
            if viscous is not None:
                (grads, Fc_vis) = viscous
                gx, gy = grads[gi]
                if self.eqn.kind == "advection-diffusion":
                    k = self.eqn.diffusivity
                    fvx, fvy = k * gx, k * gy
                else:
                    fvx, fvy = viscous_flux_ns(Q, gx, gy, self.eqn.mu,
                                               self.eqn.heat_conductivity)
                fx = fx - fvx
                fy = fy - fvy
                Fc = Fc - Fc_vis[gi]
            Ft, Gt = self._transformed(g.geom, fx, fy)
            R = -self._divergence(g, g.geom, Ft, Gt, Fc)
            out[g.idx] = R.reshape(g.idx.shape)
        return out

    # -- forces ------------------------------------------------------------

    def compute_forces(self, data: np.ndarray):
        """Integrated wall force and coefficients (Fd, Fl, Cd, Cl).

        Pressure plus viscous traction over all wall-tagged faces; the
        coefficients are normalized with the reference length as the
        projected area.
        """
        eqn = self.eqn
        if eqn.kind == "advection-diffusion":
            raise ValueError("forces are only defined for flow equations")
        wall = [b for b in self.boundary_batches if b.tag.startswith("wall")]
        if not wall:
            raise ValueError("mesh has no wall boundary faces")

        Qs = self._gather(data)
        grads = None
        if eqn.viscous:
            traces = [self._traces(g, Q) for g, Q in zip(self.groups, Qs)]
            Ws = [self._grad_vars(Q) for Q in Qs]
            w_traces = [self._grad_vars(tr) for tr in traces]
            nw = 3
            What = [np.zeros((len(g.elems), 4, g.n, nw)) for g in self.groups]
            for b in self.face_batches:
                wa, wc = self._pair_align(b, w_traces[b.gL], w_traces[b.gR])
                self._pair_scatter_values(b, What, 0.5 * (wa + wc))
            for b in self.boundary_batches:
                g = self.groups[b.g]
                qb = traces[b.g][b.i, b.f]
                nrm = g.geom.face_normals[b.i, b.f][:, None, :]
                gh = boundary_state(qb, b.tag, nrm, eqn)
                What[b.g][b.i, b.f] = 0.5 * (w_traces[b.g][b.i, b.f]
                                             + self._grad_vars(gh))
            grads = [self._br1_gradient(g, g.geom, W, Wh)
                     for g, W, Wh in zip(self.groups, Ws, What)]

        F = np.zeros(2)
        for b in wall:
            g = self.groups[b.g]
            wq = basis(g.p).weights
            Q = Qs[b.g]
            tr = self._traces(g, Q)[b.i, b.f]          # (nf, n, 4)
            nrm = g.geom.face_normals[b.i, b.f]        # (nf, 2)
            js = g.geom.face_jac[b.i, b.f]             # (nf,)
            p = primitive(tr, eqn.gamma)[3]            # (nf, n)
            # pressure force on the body: +p n (n points into the body)
            contrib = p[..., None] * nrm[:, None, :]
            if grads is not None:
                gx, gy = grads[b.g]
                gx_tr = self._traces(g, gx)[b.i, b.f]
                gy_tr = self._traces(g, gy)[b.i, b.f]
                ux, vx = gx_tr[..., 0], gx_tr[..., 1]
                uy, vy = gy_tr[..., 0], gy_tr[..., 1]
                div = ux + vy
                txx = eqn.mu * (2 * ux - (2.0 / 3.0) * div)
                tyy = eqn.mu * (2 * vy - (2.0 / 3.0) * div)
                txy = eqn.mu * (uy + vx)
                tn_x = txx * nrm[:, None, 0] + txy * nrm[:, None, 1]
                tn_y = txy * nrm[:, None, 0] + tyy * nrm[:, None, 1]
                contrib = contrib - np.stack([tn_x, tn_y], axis=-1)
            F += np.einsum("k,n,nkj->j", wq, js, contrib)

        qref = 0.5 * 1.0 * 1.0**2 * eqn.ref_length  # rho_inf U_inf^2 A / 2
        return F[0], F[1], F[0] / qref, F[1] / qref

    # ------------------------------------------------------------------
    # element-local residual with frozen neighbor data (Jacobian blocks)

    def freeze(self, data: np.ndarray) -> list:
        """Per-element frozen face context for local linearizations.

        Each entry is a list of 4 face records.  Interior records carry
        the neighbor's trace, viscous variables, and one-sided viscous
        normal flux, all aligned to this element's CCW face ordering,
        transferred to its face points, and projected along its outward
        normal.  Boundary records carry the tag.
        """
        Qs = self._gather(data)
        traces = [self._traces(g, Q) for g, Q in zip(self.groups, Qs)]
        w_traces = fvn = None
        if self.eqn.viscous:
            W = None  # gradients recomputed below via the global path
            Ws = [self._grad_vars(Q) for Q in Qs]
            w_traces = [self._grad_vars(tr) for tr in traces]
            nw = w_traces[0].shape[-1]
            What = [np.zeros((len(g.elems), 4, g.n, nw)) for g in self.groups]
            for b in self.face_batches:
                wa, wc = self._pair_align(b, w_traces[b.gL], w_traces[b.gR])
                self._pair_scatter_values(b, What, 0.5 * (wa + wc))
            for b in self.boundary_batches:
                g = self.groups[b.g]
                qb = traces[b.g][b.i, b.f]
                nrm = g.geom.face_normals[b.i, b.f][:, None, :]
                gh = boundary_state(qb, b.tag, nrm, self.eqn)
                What[b.g][b.i, b.f] = 0.5 * (w_traces[b.g][b.i, b.f]
                                             + self._grad_vars(gh))
            grads = [self._br1_gradient(g, g.geom, Wv, Wh)
                     for g, Wv, Wh in zip(self.groups, Ws, What)]
            fvn = []
            for g, tr, (gx, gy) in zip(self.groups, traces, grads):
                gx_tr = self._traces(g, gx)
                gy_tr = self._traces(g, gy)
                nrm = g.geom.face_normals[:, :, None, :]
                fvn.append(self._one_sided_fvn(tr, gx_tr, gy_tr, nrm))

        def aligned(src, e, f, nb, fnb, rev, negate=False):
            g_e = self.elem_group[e]
            g_n = self.elem_group[nb]
            val = src[g_n][self.elem_local[nb], fnb]
            if rev:
                val = val[::-1]
            pe, pn = self.groups[g_e].p, self.groups[g_n].p
            if pn != pe:
                t = transfer_operators(max(pe, pn), min(pe, pn))
                mat = t.pi if pn < pe else t.gamma
                val = np.einsum("kl,lv->kv", mat, val)
            return -val if negate else val

        frozen = []
        for e in range(self.mesh.n_elements):
            recs = []
            for f in range(4):
                info = self.face_of[e][f]
                if info[0] == "boundary":
                    recs.append(("boundary", info[1]))
                    continue
                _, nb, fnb, rev = info
                rec = {"q": aligned(traces, e, f, nb, fnb, rev)}
                if self.eqn.viscous:
                    rec["w"] = aligned(w_traces, e, f, nb, fnb, rev)
                    # neighbor flux uses its own outward normal = -ours
                    rec["fvn"] = aligned(fvn, e, f, nb, fnb, rev, negate=True)
                recs.append(("interior", nb, rec))
            frozen.append(recs)
        return frozen

    def element_residual(self, e: int, Q: np.ndarray, frozen,
                         face_override: dict | None = None) -> np.ndarray:
        """Residual of element e with neighbor face data held frozen.

        Q is (..., n, n, nv) with an optional batch axis; the frozen
        context comes from freeze().  face_override maps a face index
        to a record like the frozen one (used to probe cross-element
        coupling).  All face couplings other than through the provided
        records are ignored, which is exactly the compact linearization
        the smoothers are built on.
        """
        g = self.groups[self.elem_group[e]]
        m = self.elem_local[e]
        geom = SimpleNamespace(
            jac=g.geom.jac[m], det=g.geom.det[m],
            face_normals=g.geom.face_normals[m], face_jac=g.geom.face_jac[m])
        eqn = self.eqn
        tr = self._traces(g, Q)           # (..., 4, n, nv)
        recs = frozen[e]

        def face_rec(f):
            if face_override and f in face_override:
                return ("interior", None, face_override[f])
            return recs[f]

        # inviscid common fluxes
        Fc = np.zeros(Q.shape[:-3] + (4, g.n, self.nvars))
        ghost_cache = {}
        for f in range(4):
            rec = face_rec(f)
            nrm = geom.face_normals[f]
            if rec[0] == "boundary":
                gh = boundary_state(tr[..., f, :, :], rec[1], nrm, eqn)
                ghost_cache[f] = gh
                q_out = gh
            else:
                q_out = rec[2]["q"]
            Fc[..., f, :, :] = self._num_flux(tr[..., f, :, :], q_out, nrm)

        viscous = None
        if eqn.viscous:
            W = self._grad_vars(Q)
            w_tr = self._grad_vars(tr)
            nw = W.shape[-1]
            What = np.zeros(Q.shape[:-3] + (4, g.n, nw))
            for f in range(4):
                rec = face_rec(f)
                if rec[0] == "boundary":
                    What[..., f, :, :] = 0.5 * (w_tr[..., f, :, :]
                                                + self._grad_vars(ghost_cache[f]))
                else:
                    What[..., f, :, :] = 0.5 * (w_tr[..., f, :, :] + rec[2]["w"])
            gx, gy = self._br1_gradient(g, geom, W, What)
            gx_tr = self._traces(g, gx)
            gy_tr = self._traces(g, gy)
            nrm_all = geom.face_normals[:, None, :]
            fvn_own = self._one_sided_fvn(tr, gx_tr, gy_tr, nrm_all)
            Fc_vis = np.zeros_like(Fc)
            for f in range(4):
                rec = face_rec(f)
                if rec[0] == "boundary":
                    val = fvn_own[..., f, :, :].copy()
                    if rec[1] == "wall-adiabatic" and eqn.kind == "navier-stokes":
                        val[..., 3] = 0.0
                    Fc_vis[..., f, :, :] = val
                else:
                    Fc_vis[..., f, :, :] = 0.5 * (fvn_own[..., f, :, :]
                                                  + rec[2]["fvn"])
            if eqn.kind == "advection-diffusion":
                k = eqn.diffusivity
                fvx, fvy = k * gx, k * gy
            else:
                fvx, fvy = viscous_flux_ns(Q, gx, gy, eqn.mu,
                                           eqn.heat_conductivity)
            viscous = (fvx, fvy, Fc_vis)

        if eqn.kind == "advection-diffusion":
            ax, ay = eqn.advection
            fx, fy = ax * Q, ay * Q
        else:
            fx, fy = euler_flux(Q, eqn.gamma)
        if viscous is not None:
            fvx, fvy, Fc_vis = viscous
            fx, fy, Fc = fx - fvx, fy - fvy, Fc - Fc_vis
        Ft, Gt = self._transformed(geom, fx, fy)
        return -self._divergence(g, geom, Ft, Gt, Fc)

    def neighbor_face_record(self, e: int, f: int, Q_nb: np.ndarray, frozen):
        """Recompute the face record of e's face f from a perturbed
        neighbor state Q_nb (batched), with the neighbor's other faces
        frozen.  Used to probe off-diagonal Jacobian blocks."""
        info = self.face_of[e][f]
        if info[0] != "interior":
            raise ValueError("face has no neighbor")
        _, nb, fnb, rev = info
        g_e = self.groups[self.elem_group[e]]
        g_n = self.groups[self.elem_group[nb]]
        tr = self._traces(g_n, Q_nb)

        def align(val):
            if rev:
                val = val[..., ::-1, :]
            if g_n.p != g_e.p:
                t = transfer_operators(max(g_e.p, g_n.p), min(g_e.p, g_n.p))
                mat = t.pi if g_n.p < g_e.p else t.gamma
                val = np.einsum("kl,...lv->...kv", mat, val)
            return val

        rec = {"q": align(tr[..., fnb, :, :])}
        if self.eqn.viscous:
            m = self.elem_local[nb]
            geom = SimpleNamespace(
                jac=g_n.geom.jac[m], det=g_n.geom.det[m],
                face_normals=g_n.geom.face_normals[m],
                face_jac=g_n.geom.face_jac[m])
            W = self._grad_vars(Q_nb)
            w_tr = self._grad_vars(tr)
            nw = W.shape[-1]
            What = np.zeros(Q_nb.shape[:-3] + (4, g_n.n, nw))
            for ff in range(4):
                nrec = frozen[nb][ff]
                if nrec[0] == "boundary":
                    nrm = geom.face_normals[ff]
                    gh = boundary_state(tr[..., ff, :, :], nrec[1], nrm, self.eqn)
                    What[..., ff, :, :] = 0.5 * (w_tr[..., ff, :, :]
                                                 + self._grad_vars(gh))
                else:
                    What[..., ff, :, :] = 0.5 * (w_tr[..., ff, :, :]
                                                 + nrec[2]["w"])
            gx, gy = self._br1_gradient(g_n, geom, W, What)
            gx_tr = self._traces(g_n, gx)[..., fnb, :, :]
            gy_tr = self._traces(g_n, gy)[..., fnb, :, :]
            nrm = geom.face_normals[fnb]
            fvn = self._one_sided_fvn(tr[..., fnb, :, :], gx_tr, gy_tr, nrm)
            rec["w"] = align(w_tr[..., fnb, :, :])
            rec["fvn"] = -align(fvn)
        return rec

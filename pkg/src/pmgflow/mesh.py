"""2D quadrilateral meshes.

Structured generators (periodic box, cylinder O-grid with geometric
wall clustering), a small line-oriented text format, face connectivity,
and bilinear mapping metrics.  Elements are straight-sided Q1 quads, so
the mapping Jacobian determinant is affine in (xi, eta) and positivity
can be checked at the four corners, face normals are constant along
each edge, and the discrete metric identity sum(n_f * |e_f|) = 0 holds
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .operators import basis

# local face f connects corner nodes FACE_NODES[f], counter-clockwise
FACE_NODES = ((0, 1), (1, 2), (2, 3), (3, 0))

BOUNDARY_TAGS = ("wall-adiabatic", "wall-slip", "far-field")


class MeshError(Exception):
    """Invalid mesh topology, geometry, or file contents."""


@dataclass(frozen=True)
class Mesh:
    """Immutable unstructured quad mesh with precomputed connectivity.

    interior_faces rows are (elemL, faceL, elemR, faceR, reversed_flag);
    periodic pairs are stored there too and are indistinguishable from
    ordinary interior faces as far as the residual is concerned.
    boundary_faces rows are (elem, face) with the matching tag in
    boundary_tags.
    """

    nodes: np.ndarray          # (n_nodes, 2)
    elements: np.ndarray       # (n_elem, 4) CCW corner indices
    interior_faces: np.ndarray  # (n_int, 5) int
    boundary_faces: np.ndarray  # (n_bnd, 2) int
    boundary_tags: tuple       # tag string per boundary face

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_corners(self, e: int) -> np.ndarray:
        return self.nodes[self.elements[e]]

    def edge_lengths(self) -> np.ndarray:
        """(n_elem, 4) straight edge lengths."""
        xy = self.nodes[self.elements]  # (M, 4, 2)
        d = xy[:, [1, 2, 3, 0], :] - xy
        return np.sqrt((d * d).sum(axis=2))

    @property
    def h_min(self) -> float:
        return float(self.edge_lengths().min())


def _corner_detj(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """detJ at the four reference corners of each element, (M, 4)."""
    xy = nodes[elements]
    out = np.empty((elements.shape[0], 4))
    corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    for c, (xi, eta) in enumerate(corners):
        dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
        deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
        x_xi = xy[:, :, 0] @ dxi
        y_xi = xy[:, :, 1] @ dxi
        x_eta = xy[:, :, 0] @ deta
        y_eta = xy[:, :, 1] @ deta
        out[:, c] = x_xi * y_eta - x_eta * y_xi
    return out


def build_mesh(nodes, elements, boundary, periodic_pairs=()) -> Mesh:
    """Assemble a Mesh from raw arrays, matching faces by shared nodes.

    boundary maps (elem, face) -> tag for faces without a neighbor;
    periodic_pairs lists (elemL, faceL, elemR, faceR) to join as if
    interior.  Raises MeshError on dangling faces, unknown tags, or a
    non-positive Jacobian.
    """
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4)
    if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
        raise MeshError("element references a node index out of range")

    detj = _corner_detj(nodes, elements)
    bad = np.nonzero((detj <= 0.0).any(axis=1))[0]
    if bad.size:
        raise MeshError(f"element {bad[0]} has non-positive mapping Jacobian")

    open_faces: dict[tuple, tuple] = {}
    interior = []
    for e in range(elements.shape[0]):
        for f, (a, b) in enumerate(FACE_NODES):
            na, nb = int(elements[e, a]), int(elements[e, b])
            key = (min(na, nb), max(na, nb))
            if key in open_faces:
                eL, fL, nL = open_faces.pop(key)
                rev = 1 if nL == (nb, na) else 0
                interior.append((eL, fL, e, f, rev))
            else:
                open_faces[key] = (e, f, (na, nb))

    paired = set()
    for eL, fL, eR, fR in periodic_pairs:
        interior.append((int(eL), int(fL), int(eR), int(fR), 1))
        paired.add((int(eL), int(fL)))
        paired.add((int(eR), int(fR)))

    bnd = []
    tags = []
    for e, f, _ in open_faces.values():
        if (e, f) in paired:
            continue
        tag = boundary.get((e, f))
        if tag is None:
            raise MeshError(f"face {f} of element {e} has no neighbor and no boundary tag")
        if tag not in BOUNDARY_TAGS:
            raise MeshError(f"unknown boundary tag {tag!r}")
        bnd.append((e, f))
        tags.append(tag)

    order = np.lexsort(([f for _, f in bnd], [e for e, _ in bnd])) if bnd else []
    bnd_arr = np.array([bnd[i] for i in order], dtype=np.int64).reshape(-1, 2)
    tags_t = tuple(tags[i] for i in order)
    int_arr = np.array(sorted(interior), dtype=np.int64).reshape(-1, 5)
    return Mesh(nodes, elements, int_arr, bnd_arr, tags_t)


def generate_box(nx: int, ny: int, Lx: float, Ly: float,
                 periodic: bool = False, tag: str = "far-field") -> Mesh:
    """Uniform nx-by-ny quad grid on [0, Lx] x [0, Ly].

    With periodic=True the left/right and bottom/top faces are paired
    and there are no boundary faces.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    nid = lambda i, j: j * (nx + 1) + i
    nodes = np.array([(x, y) for y in ys for x in xs])
    eid = lambda i, j: j * nx + i
    elements = np.array([
        (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
        for j in range(ny) for i in range(nx)
    ])

    boundary = {}
    pairs = []
    if periodic:
        for j in range(ny):
            pairs.append((eid(nx - 1, j), 1, eid(0, j), 3))
        for i in range(nx):
            pairs.append((eid(i, ny - 1), 2, eid(i, 0), 0))
    else:
        for i in range(nx):
            boundary[(eid(i, 0), 0)] = tag
            boundary[(eid(i, ny - 1), 2)] = tag
        for j in range(ny):
            boundary[(eid(nx - 1, j), 1)] = tag
            boundary[(eid(0, j), 3)] = tag
    return build_mesh(nodes, elements, boundary, pairs)


def generate_cylinder_omesh(n_circ: int, n_rad: int, r_wall: float,
                            r_far: float, stretch: float,
                            wall_tag: str = "wall-adiabatic") -> Mesh:
    """O-grid around a cylinder of radius r_wall out to radius r_far.

    Radial layer heights grow geometrically by `stretch`; the first
    layer height is (r_far - r_wall)(s - 1)/(s^n - 1) for s > 1 and the
    uniform spacing for s = 1.  The inner ring is tagged `wall_tag`,
    the outer ring far-field; the grid closes on itself
    circumferentially so no periodic bookkeeping is needed.
    """
    if n_circ < 8 or n_circ % 2:
        raise ValueError("n_circ must be an even number >= 8")
    if n_rad < 2:
        raise ValueError("n_rad must be >= 2")
    if r_far <= r_wall or r_wall <= 0:
        raise ValueError("need 0 < r_wall < r_far")
    if stretch < 1.0:
        raise ValueError("stretch must be >= 1")

    span = r_far - r_wall
    if stretch == 1.0:
        h0 = span / n_rad
    else:
        h0 = span * (stretch - 1.0) / (stretch**n_rad - 1.0)
    if h0 <= 0.0:
        raise ValueError("first-layer height must be positive")

    radii = r_wall + np.concatenate(
        ([0.0], np.cumsum(h0 * stretch ** np.arange(n_rad))))
    radii[-1] = r_far  # kill geometric-series roundoff at the outer ring
    theta = 2.0 * np.pi * np.arange(n_circ) / n_circ

    nid = lambda i, k: k * n_circ + (i % n_circ)
    nodes = np.array([(r * np.cos(t), r * np.sin(t))
                      for r in radii for t in theta])
    # corners ordered inner-i, outer-i, outer-i+1, inner-i+1: CCW for
    # the exterior-flow orientation, so face 3 lies on the wall
    elements = np.array([
        (nid(i, k), nid(i, k + 1), nid(i + 1, k + 1), nid(i + 1, k))
        for k in range(n_rad) for i in range(n_circ)
    ])
    boundary = {}
    for i in range(n_circ):
        boundary[(i, 3)] = wall_tag
        boundary[((n_rad - 1) * n_circ + i, 1)] = "far-field"
    return build_mesh(nodes, elements, boundary)


def first_layer_height(n_rad: int, r_wall: float, r_far: float, stretch: float) -> float:
    """Height of the innermost O-grid layer for the given stretching."""
    span = r_far - r_wall
    if stretch == 1.0:
        return span / n_rad
    return span * (stretch - 1.0) / (stretch**n_rad - 1.0)


def load_mesh(path: str) -> Mesh:
    """Read the native text format (see save_mesh) and validate."""
    with open(path) as fh:
        raw = fh.readlines()
    lines = []
    for ln, text in enumerate(raw, start=1):
        text = text.split("#", 1)[0].strip()
        if text:
            lines.append((ln, text))

    pos = 0

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise MeshError(f"unexpected end of file, expected {what}")
        ln, text = lines[pos]
        pos += 1
        return ln, text

    ln, header = take("header")
    if header != "pmgmesh 1":
        raise MeshError(f"line {ln}: expected header 'pmgmesh 1'")

    ln, text = take("nodes count")
    parts = text.split()
    if len(parts) != 2 or parts[0] != "nodes":
        raise MeshError(f"line {ln}: expected 'nodes N'")
    n_nodes = int(parts[1])
    nodes = np.empty((n_nodes, 2))
    for i in range(n_nodes):
        ln, text = take("node coordinates")
        vals = text.split()
        if len(vals) != 2:
            raise MeshError(f"line {ln}: expected 'x y'")
        nodes[i] = [float(v) for v in vals]

    ln, text = take("elements count")
    parts = text.split()
    if len(parts) != 2 or parts[0] != "elements":
        raise MeshError(f"line {ln}: expected 'elements M'")
    n_elem = int(parts[1])
    elements = np.empty((n_elem, 4), dtype=np.int64)
    for i in range(n_elem):
        ln, text = take("element connectivity")
        vals = text.split()
        if len(vals) != 4:
            raise MeshError(f"line {ln}: expected four node indices")
        idx = [int(v) for v in vals]
        if any(v < 0 or v >= n_nodes for v in idx):
            raise MeshError(f"line {ln}: node index out of range")
        elements[i] = idx

    boundary = {}
    while pos < len(lines):
        ln, text = take("boundary section")
        parts = text.split()
        if len(parts) != 3 or parts[0] != "boundary":
            raise MeshError(f"line {ln}: expected 'boundary TAG K'")
        tag, count = parts[1], int(parts[2])
        for _ in range(count):
            ln, text = take("boundary face")
            vals = text.split()
            if len(vals) != 2:
                raise MeshError(f"line {ln}: expected 'elem face'")
            e, f = int(vals[0]), int(vals[1])
            if e < 0 or e >= n_elem or f < 0 or f > 3:
                raise MeshError(f"line {ln}: boundary face out of range")
            boundary[(e, f)] = tag

    return build_mesh(nodes, elements, boundary)


def save_mesh(mesh: Mesh, path: str) -> None:
    """Write the native text format, round-trippable via load_mesh."""
    out = ["pmgmesh 1", f"nodes {len(mesh.nodes)}"]
    out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    out.append(f"elements {mesh.n_elements}")
    out += [" ".join(str(v) for v in row) for row in mesh.elements]
    by_tag: dict[str, list] = {}
    for (e, f), tag in zip(mesh.boundary_faces, mesh.boundary_tags):
        by_tag.setdefault(tag, []).append((int(e), int(f)))
    for tag in sorted(by_tag):
        faces = by_tag[tag]
        out.append(f"boundary {tag} {len(faces)}")
        out += [f"{e} {f}" for e, f in faces]
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


@dataclass(frozen=True)
class ElementGeometry:
    """Mapping metrics for a batch of elements at a common degree p.

    Solution-point arrays are laid out (n_batch, n, n, ...) with the
    first tensor index along eta and the second along xi.  Face arrays
    follow the local CCW face numbering; straight edges make the normal
    and surface Jacobian constant per face.
    """

    degree: int
    jac: np.ndarray        # (M, n, n, 2, 2) d(x,y)/d(xi,eta)
    det: np.ndarray        # (M, n, n)
    inv: np.ndarray        # (M, n, n, 2, 2) d(xi,eta)/d(x,y)
    face_normals: np.ndarray  # (M, 4, 2) outward unit
    face_jac: np.ndarray   # (M, 4) = edge_length / 2
    face_det: np.ndarray   # (M, 4, n) detJ at the face flux points
    face_jac_cols: np.ndarray  # (M, 4, n, 2, 2) Jacobian at face points
    h_min: np.ndarray      # (M,) min edge length

    @property
    def n(self) -> int:
        return self.degree + 1


def _bilinear_jacobian(xy: np.ndarray, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Jacobian of the Q1 map at points (xi[k], eta[k]); (M, K, 2, 2)."""
    dxi = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)], axis=-1)
    deta = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)], axis=-1)
    J = np.empty(xy.shape[:1] + xi.shape + (2, 2))
    J[..., 0, 0] = np.einsum("ma,ka->mk", xy[:, :, 0], dxi)
    J[..., 1, 0] = np.einsum("ma,ka->mk", xy[:, :, 1], dxi)
    J[..., 0, 1] = np.einsum("ma,ka->mk", xy[:, :, 0], deta)
    J[..., 1, 1] = np.einsum("ma,ka->mk", xy[:, :, 1], deta)
    return J


def element_geometry(mesh: Mesh, p: int, elems=None) -> ElementGeometry:
    """Compute ElementGeometry at the degree-p tensor solution points."""
    if elems is None:
        elems = np.arange(mesh.n_elements)
    elems = np.asarray(elems, dtype=np.int64)
    xy = mesh.nodes[mesh.elements[elems]]  # (M, 4, 2)
    pts = basis(p).points
    n = p + 1

    # solution points: index (a, b) -> (eta_a, xi_b)
    eta_g, xi_g = np.meshgrid(pts, pts, indexing="ij")
    J = _bilinear_jacobian(xy, xi_g.ravel(), eta_g.ravel())
    J = J.reshape(len(elems), n, n, 2, 2)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if (det <= 0.0).any():
        m = int(elems[np.nonzero((det <= 0.0).any(axis=(1, 2)))[0][0]])
        raise MeshError(f"element {m} has non-positive mapping Jacobian")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    inv[..., 1, 1] = J[..., 0, 0] / det

    edges = xy[:, [1, 2, 3, 0], :] - xy  # (M, 4, 2) CCW edge vectors
    elen = np.sqrt((edges * edges).sum(axis=2))
    normals = np.stack([edges[..., 1], -edges[..., 0]], axis=-1) / elen[..., None]
    face_jac = 0.5 * elen

    # flux points along each face, in the element's CCW traversal
    face_xi = np.stack([pts, np.ones(n), pts[::-1], -np.ones(n)])
    face_eta = np.stack([-np.ones(n), pts, np.ones(n), pts[::-1]])
    Jf = _bilinear_jacobian(xy, face_xi.ravel(), face_eta.ravel())
    Jf = Jf.reshape(len(elems), 4, n, 2, 2)
    detf = Jf[..., 0, 0] * Jf[..., 1, 1] - Jf[..., 0, 1] * Jf[..., 1, 0]

    return ElementGeometry(p, J, det, inv, normals, face_jac, detf, Jf,
                           elen.min(axis=1))

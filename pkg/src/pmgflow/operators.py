"""Reference-element machinery.

1D Lagrange bases at Gauss-Legendre solution points, mass matrices,
L2 restriction/prolongation operators between polynomial degrees, and
the orthonormal (Legendre) modal transform used by the smoothness
indicator.  Everything here is immutable after construction and cheap
enough to cache per degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_rule(n: int):
    """n-point Gauss-Legendre rule on [-1, 1] (points, weights)."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def lagrange_eval(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the Lagrange cardinal basis on `nodes` at points `x`.

    Returns L with L[m, i] = l_i(x[m]), computed with the barycentric
    formula (stable for the modest degrees used here).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = nodes.size
    # barycentric weights
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / diff.prod(axis=1)

    L = np.zeros((x.size, n))
    d = x[:, None] - nodes[None, :]
    exact = np.isclose(d, 0.0, atol=1e-14)
    on_node = exact.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = bw[None, :] / d
        L[~on_node] = t[~on_node] / t[~on_node].sum(axis=1, keepdims=True)
    for m in np.nonzero(on_node)[0]:
        L[m] = 0.0
        L[m, np.argmax(exact[m])] = 1.0
    return L


def lagrange_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Differentiation matrix D[k, i] = l_i'(nodes[k])."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / diff.prod(axis=1)
    D = np.zeros((n, n))
    for k in range(n):
        for i in range(n):
            if i != k:
                D[k, i] = bw[i] / bw[k] / (nodes[k] - nodes[i])
        D[k, k] = -D[k].sum()
    return D


@dataclass(frozen=True)
class Basis:
    """Lagrange basis of degree p on Gauss-Legendre solution points."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def eval_at(self, x) -> np.ndarray:
        return lagrange_eval(self.points, x)

    @property
    def diff_matrix(self) -> np.ndarray:
        return lagrange_diff_matrix(self.points)


@lru_cache(maxsize=None)
def basis(p: int) -> Basis:
    if p < 0:
        raise ValueError("polynomial degree must be >= 0")
    x, w = gauss_rule(p + 1)
    return Basis(p, x, w)


def mass_matrix(p: int) -> np.ndarray:
    """Exact 1D mass matrix M_ij = integral of l_i l_j over [-1, 1]."""
    return cross_mass_matrix(p, p)


def cross_mass_matrix(p_row: int, p_col: int) -> np.ndarray:
    """Cross mass matrix between the degree-p_row and degree-p_col bases.

    Quadrature is Gauss-Legendre with enough points to be exact for the
    degree p_row + p_col integrand.
    """
    if p_row < 0 or p_col < 0:
        raise ValueError("degrees must be >= 0")
    nq = (p_row + p_col) // 2 + 1 + ((p_row + p_col) % 2)
    nq = max(nq, 1)
    xq, wq = gauss_rule(nq)
    Lr = basis(p_row).eval_at(xq)  # (nq, p_row+1)
    Lc = basis(p_col).eval_at(xq)
    return np.einsum("q,qi,qj->ij", wq, Lr, Lc)


def restriction_operator(p0: int, p1: int) -> np.ndarray:
    """L2 projection matrix from fine degree p0 to coarse degree p1."""
    if p1 >= p0:
        raise ValueError(f"restriction needs p1 < p0, got p0={p0}, p1={p1}")
    return np.linalg.solve(mass_matrix(p1), cross_mass_matrix(p1, p0))


def prolongation_operator(p0: int, p1: int) -> np.ndarray:
    """Exact-injection matrix from coarse degree p1 to fine degree p0."""
    if p1 >= p0:
        raise ValueError(f"prolongation needs p1 < p0, got p0={p0}, p1={p1}")
    return np.linalg.solve(mass_matrix(p0), cross_mass_matrix(p0, p1))


@dataclass(frozen=True)
class TransferOperators:
    """Paired 1D restriction/prolongation between two degrees.

    2D (tensor-product) application acts along both axes of a
    (..., n, n) nodal array.
    """

    p_fine: int
    p_coarse: int
    gamma: np.ndarray  # (p_coarse+1, p_fine+1)
    pi: np.ndarray     # (p_fine+1, p_coarse+1)

    def restrict_2d(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("ai,bj,...ij->...ab", self.gamma, self.gamma, values)

    def prolong_2d(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("ai,bj,...ij->...ab", self.pi, self.pi, values)


@lru_cache(maxsize=None)
def transfer_operators(p_fine: int, p_coarse: int) -> TransferOperators:
    if p_fine == p_coarse:
        eye = np.eye(p_fine + 1)
        return TransferOperators(p_fine, p_coarse, eye, eye.copy())
    return TransferOperators(
        p_fine, p_coarse,
        restriction_operator(p_fine, p_coarse),
        prolongation_operator(p_fine, p_coarse),
    )


@lru_cache(maxsize=None)
def orthonormal_legendre_vandermonde(p: int) -> np.ndarray:
    """V[m, k] = orthonormal Legendre P~_k at the degree-p solution points."""
    b = basis(p)
    V = np.zeros((p + 1, p + 1))
    for k in range(p + 1):
        coef = np.zeros(k + 1)
        coef[k] = 1.0
        V[:, k] = np.polynomial.legendre.legval(b.points, coef)
        V[:, k] *= np.sqrt((2 * k + 1) / 2.0)
    return V


def modal_coefficients(nodal: np.ndarray, p: int) -> np.ndarray:
    """Nodal values -> orthonormal Legendre modal coefficients.

    Accepts a length p+1 array (1D) or a (p+1, p+1) array / flat
    (p+1)^2 vector (2D tensor basis).  The inverse is
    `nodal_values`.
    """
    n = p + 1
    nodal = np.asarray(nodal, dtype=float)
    V = orthonormal_legendre_vandermonde(p)
    if nodal.size == n:
        return np.linalg.solve(V, nodal.reshape(n))
    if nodal.size == n * n:
        Vinv = np.linalg.inv(V)
        return np.einsum("ai,bj,ij->ab", Vinv, Vinv, nodal.reshape(n, n))
    raise ValueError(f"nodal data of size {nodal.size} does not match degree {p}")


def nodal_values(modal: np.ndarray, p: int) -> np.ndarray:
    """Inverse of `modal_coefficients`."""
    n = p + 1
    modal = np.asarray(modal, dtype=float)
    V = orthonormal_legendre_vandermonde(p)
    if modal.size == n:
        return V @ modal.reshape(n)
    if modal.size == n * n:
        return np.einsum("ia,jb,ab->ij", V, V, modal.reshape(n, n))
    raise ValueError(f"modal data of size {modal.size} does not match degree {p}")

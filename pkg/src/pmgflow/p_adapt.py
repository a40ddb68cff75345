"""Per-element polynomial adaptation.

A spectral-decay smoothness indicator drives degree changes of at
most one per adaptation event, with L2-projection solution transfer.
Also holds the degree-nesting rule that maps a global multigrid level
list onto elements of lower degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import modal_coefficients, transfer_operators
from .spatial import SolutionField

_VAR_NAMES = {"density": 0, "momentum-x": 1, "momentum-y": 2, "energy": 3}


@dataclass
class AdaptConfig:
    variable: str = "momentum-x"
    nu_max: float = 0.2
    nu_min: float = 0.001
    p_min: int = 1
    p_max: int = 4
    every_n_steps: int = 10

    def __post_init__(self):
        if not (0.0 < self.nu_min < self.nu_max < 1.0):
            raise ValueError("need 0 < nu_min < nu_max < 1")
        if not (0 <= self.p_min <= self.p_max):
            raise ValueError("need 0 <= p_min <= p_max")

    def var_index(self, nvars: int) -> int:
        if nvars == 1:
            return 0
        return _VAR_NAMES[self.variable]


def smoothness_indicator(values: np.ndarray, p: int) -> float:
    """Relative energy of the highest tensor modes of one element.

    values is the (p+1, p+1) nodal data of the indicator variable.
    The truncation to degree p-1 drops every orthonormal mode with
    max(k_x, k_y) = p, so the indicator is the L2 fraction removed:
    eta = ||s_p - s_{p-1}|| / ||s_p||, always in [0, 1].
    """
    if p < 1:
        raise ValueError("indicator needs degree >= 1")
    c = modal_coefficients(values, p)
    total = float(np.sum(c * c))
    if total == 0.0:
        return 0.0
    kept = float(np.sum(c[:p, :p] ** 2))
    return math.sqrt(max(total - kept, 0.0) / total)


def indicator_field(field: SolutionField, var: int) -> np.ndarray:
    """eta for every element (0 where the degree is below 1)."""
    eta = np.zeros(field.n_elements)
    for e in range(field.n_elements):
        p = int(field.degrees[e])
        if p >= 1:
            eta[e] = smoothness_indicator(field.element(e)[..., var], p)
    return eta


def adapt(field: SolutionField, cfg: AdaptConfig):
    """One adaptation event: new degree map plus transferred solution.

    Degrees move by at most one, raised where eta_k > nu_max eta_max
    and lowered where eta_k < nu_min eta_max, clamped to
    [p_min, p_max].  Raised elements get the exact degree embedding,
    lowered ones the L2 projection (element means are preserved).
    Returns (new_field, eta).
    """
    var = cfg.var_index(field.nvars)
    eta = indicator_field(field, var)
    eta_max = eta.max() if len(eta) else 0.0

    new_deg = field.degrees.copy()
    for e in range(field.n_elements):
        if eta[e] > cfg.nu_max * eta_max:
            new_deg[e] = min(field.degrees[e] + 1, cfg.p_max)
        elif eta[e] < cfg.nu_min * eta_max:
            new_deg[e] = max(field.degrees[e] - 1, cfg.p_min)
        new_deg[e] = min(max(new_deg[e], cfg.p_min), cfg.p_max)

    out = SolutionField.zeros(field.nvars, new_deg)
    for e in range(field.n_elements):
        src = field.element(e)
        p_old, p_new = int(field.degrees[e]), int(new_deg[e])
        if p_new == p_old:
            out.element(e)[:] = src
            continue
        t = transfer_operators(max(p_old, p_new), min(p_old, p_new))
        vals = np.moveaxis(src, -1, 0)  # (nv, n, n)
        moved = t.restrict_2d(vals) if p_new < p_old else t.prolong_2d(vals)
        out.element(e)[:] = np.moveaxis(moved, 0, -1)
    return out, eta


def nest_hierarchy(p_e: int, p_max: int, levels) -> tuple:
    """Per-element multigrid degrees nested under the top-level list.

    levels is the degree sequence used by elements at p_max (strictly
    decreasing).  Lower-degree elements scale the level gap down
    proportionally, rounding up, so every element reaches a comparably
    coarse space in the same number of levels.
    """
    levels = tuple(int(v) for v in levels)
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise ValueError("level degrees must be strictly decreasing")
    if p_e > p_max:
        raise ValueError("element degree exceeds the hierarchy maximum")
    if len(levels) == 1 or p_e == 0:
        return (p_e,) * len(levels)
    g = levels[0] - levels[1]
    g_e = math.ceil(p_e * g / p_max)
    return tuple(max(p_e - k * g_e, 0) for k in range(len(levels)))

"""Implicit time integration: ESDIRK and Rosenbrock (ROW) steppers.

Both families advance dq/dt = R(q).  ESDIRK solves a nonlinear stage
equation per implicit stage through a caller-supplied solver; ROW
schemes are linearly implicit, needing one linear solve per stage with
the Jacobian frozen at the step start:

    (I/(gamma dt) - dR/dq) K_i = R(q + sum_j A_ij K_j)
                                 + (1/dt) sum_j C_ij K_j
    q_new = q + sum_j M_j K_j

The ROW coefficients are stored in that transformed (K-variable)
convention, lower triangles row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StageScheme:
    """Butcher-style description of one built-in scheme."""

    name: str
    kind: str       # "esdirk" | "row"
    order: int
    a: np.ndarray   # (s, s); ESDIRK: full lower triangle incl. diagonal
    b: np.ndarray   # ESDIRK weights / ROW M coefficients
    c: np.ndarray   # ESDIRK abscissae (informational)
    cmat: np.ndarray | None = None  # ROW C coefficients
    gamma: float = 0.0              # ROW diagonal

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def diagonal(self) -> float:
        return self.gamma if self.kind == "row" else float(self.a[-1, -1])


def _esdirk2() -> StageScheme:
    g = (2.0 - np.sqrt(2.0)) / 2.0
    a = np.array([[0.0, 0.0, 0.0],
                  [g, g, 0.0],
                  [(1 - g) / 2, (1 - g) / 2, g]])
    b = a[-1].copy()
    c = a.sum(axis=1)
    return StageScheme("esdirk2", "esdirk", 2, a, b, c)


def _esdirk4() -> StageScheme:
    # six-stage, stiffly accurate, L-stable, gamma = 1/4
    g = 0.25
    a = np.zeros((6, 6))
    a[1] = [g, g, 0, 0, 0, 0]
    a[2] = [8611 / 62500, -1743 / 31250, g, 0, 0, 0]
    a[3] = [5012029 / 34652500, -654441 / 2922500, 174375 / 388108, g, 0, 0]
    a[4] = [15267082809 / 155376265600, -71443401 / 120774400,
            730878875 / 902184768, 2285395 / 8070912, g, 0]
    a[5] = [82889 / 524892, 0, 15625 / 83664, 69875 / 102672, -2260 / 8211, g]
    b = a[-1].copy()
    c = a.sum(axis=1)
    return StageScheme("esdirk4", "esdirk", 4, a, b, c)


def _row2() -> StageScheme:
    g = 1.0 + 1.0 / np.sqrt(2.0)
    a = np.array([[0.0, 0.0],
                  [1.0 / g, 0.0]])
    cm = np.array([[0.0, 0.0],
                   [-2.0 / g, 0.0]])
    m = np.array([3.0 / (2.0 * g), 1.0 / (2.0 * g)])
    return StageScheme("row2", "row", 2, a, m, a.sum(axis=1), cm, g)


def _row4() -> StageScheme:
    # six-stage stiffly accurate Rosenbrock, gamma = 1/4
    g = 0.25
    a = np.zeros((6, 6))
    cm = np.zeros((6, 6))
    a[1, 0] = 1.544
    a[2, :2] = [0.9466785280815826, 0.2557011698983284]
    a[3, :3] = [3.314825187068521, 2.896124015972201, 0.9986419139977817]
    a[4, :4] = [1.221224509226641, 6.019134481288629, 12.53708332932087,
                -0.6878860361058950]
    a[5, :5] = [1.221224509226641, 6.019134481288629, 12.53708332932087,
                -0.6878860361058950, 1.0]
    cm[1, 0] = -5.6688
    cm[2, :2] = [-2.430093356833875, -0.2063599157091915]
    cm[3, :3] = [-0.1073529058151375, -9.594562251023355, -20.47028614809616]
    cm[4, :4] = [7.496443313967647, -10.24680431464352, -33.99990352819905,
                 11.70890893206160]
    cm[5, :5] = [8.083246795921522, -7.981132988064893, -31.52159432874371,
                 16.31930543123136, -6.058818238834054]
    m = np.array([1.221224509226641, 6.019134481288629, 12.53708332932087,
                  -0.6878860361058950, 1.0, 1.0])
    alpha = np.array([0.0, 0.386, 0.210, 0.630, 1.0, 1.0])
    return StageScheme("row4", "row", 4, a, m, alpha, cm, g)


_SCHEMES = {"esdirk2": _esdirk2, "esdirk4": _esdirk4,
            "row2": _row2, "row4": _row4}


def get_scheme(name: str) -> StageScheme:
    try:
        return _SCHEMES[name]()
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; "
                         f"available: {sorted(_SCHEMES)}") from None


@dataclass
class StageProblem:
    """Frozen data defining one implicit stage equation F(q) = 0.

    Unsteady: F(q) = (q - explicit)/(a_ii dt) - R(q) where explicit
    collects q^n and the already-computed stage residuals.  Steady
    mode drops the dt terms entirely: F(q) = -R(q).
    """

    residual: object            # callable q -> R(q)
    a_ii: float = 1.0
    dt: float = np.inf
    explicit: np.ndarray | None = None
    steady: bool = False

    @property
    def shift(self) -> float:
        """The 1/(a_ii dt) coefficient; zero in steady mode."""
        return 0.0 if self.steady else 1.0 / (self.a_ii * self.dt)


def stage_function(q: np.ndarray, prob: StageProblem) -> np.ndarray:
    if prob.steady:
        return -prob.residual(q)
    return (q - prob.explicit) / (prob.a_ii * prob.dt) - prob.residual(q)


def esdirk_step(q: np.ndarray, dt: float, scheme: StageScheme,
                residual, solve_stage):
    """One ESDIRK step.

    solve_stage(prob, q0) -> (q, info) solves the implicit stage
    equation; info dicts are collected per stage.  Raises RuntimeError
    when a stage solver reports nonconvergence.
    """
    if scheme.kind != "esdirk":
        raise ValueError("scheme is not an ESDIRK tableau")
    s = scheme.stages
    stage_R = [residual(q)]  # explicit first stage
    stage_info = []
    qi = q
    for i in range(1, s):
        explicit = q + dt * sum(scheme.a[i, j] * stage_R[j] for j in range(i))
        prob = StageProblem(residual, float(scheme.a[i, i]), dt, explicit)
        qi, info = solve_stage(prob, qi)
        stage_info.append(info)
        if not info.get("converged", True):
            raise RuntimeError(f"stage {i + 1} nonlinear solve did not "
                               f"converge: {info}")
        stage_R.append(residual(qi))
    q_new = q + dt * sum(scheme.b[j] * stage_R[j] for j in range(s))
    return q_new, stage_info


def row_step(q: np.ndarray, dt: float, scheme: StageScheme,
             residual, solve_linear):
    """One Rosenbrock step.

    solve_linear(rhs, sigma, info_tag) -> (Y, info) solves
    (sigma I - dR/dq) Y = rhs with the Jacobian frozen at q; sigma is
    1/(gamma dt).  Raises RuntimeError on reported nonconvergence.
    """
    if scheme.kind != "row":
        raise ValueError("scheme is not a Rosenbrock tableau")
    s = scheme.stages
    sigma = 1.0 / (scheme.gamma * dt)
    K = []
    stage_info = []
    for i in range(s):
        y = q + sum(scheme.a[i, j] * K[j] for j in range(i)) if i else q
        rhs = residual(y)
        for j in range(i):
            rhs = rhs + (scheme.cmat[i, j] / dt) * K[j]
        Ki, info = solve_linear(rhs, sigma, i)
        stage_info.append(info)
        if not info.get("converged", True):
            raise RuntimeError(f"stage {i + 1} linear solve did not "
                               f"converge: {info}")
        K.append(Ki)
    q_new = q + sum(scheme.b[j] * K[j] for j in range(s))
    return q_new, stage_info


def stability_function(scheme: StageScheme, z: complex) -> complex:
    """Amplification factor of one step on dq/dt = lambda q, z = lambda dt.

    Evaluated by running the actual stage algebra with exact scalar
    solves, so it exercises the same coefficient pathways as the
    steppers.
    """
    if scheme.kind == "esdirk":
        qs = [1.0 + 0j]
        for i in range(1, scheme.stages):
            explicit = 1.0 + sum(scheme.a[i, j] * z * qs[j] for j in range(i))
            qs.append(explicit / (1.0 - scheme.a[i, i] * z))
        return 1.0 + sum(scheme.b[j] * z * qs[j] for j in range(scheme.stages))
    denom = 1.0 / scheme.gamma - z
    K = []
    for i in range(scheme.stages):
        y = 1.0 + sum(scheme.a[i, j] * K[j] for j in range(i))
        rhs = z * y + sum(scheme.cmat[i, j] * K[j] for j in range(i))
        K.append(rhs / denom)
    return 1.0 + sum(scheme.b[j] * K[j] for j in range(scheme.stages))


def validate_tableau(scheme: StageScheme) -> dict:
    """Self-checks on a tableau; returns {check name: bool}."""
    report = {}
    if scheme.kind == "esdirk":
        report["explicit_first_stage"] = scheme.a[0, 0] == 0.0
        diag = np.diag(scheme.a)[1:]
        report["constant_implicit_diagonal"] = bool(
            np.allclose(diag, diag[0]) and diag[0] > 0)
        report["consistency_sum_b"] = bool(np.isclose(scheme.b.sum(), 1.0))
        csum = scheme.a.sum(axis=1)
        report["order2_condition"] = bool(
            np.isclose(scheme.b @ csum, 0.5, atol=1e-12))
    else:
        report["strictly_lower_a"] = bool(
            np.allclose(scheme.a, np.tril(scheme.a, -1)))
        report["positive_diagonal"] = scheme.gamma > 0.0
        if not report["positive_diagonal"]:
            report["consistency_sum_b"] = False
            report["nominal_order"] = False
            return report
        # first-order consistency via the stability function's slope
        h = 1e-7
        d1 = (stability_function(scheme, h) - 1.0) / h
        report["consistency_sum_b"] = bool(abs(d1 - 1.0) < 1e-6)
    # nominal order verified against exp(z) on a shrinking step
    errs = [abs(stability_function(scheme, z) - np.exp(z))
            for z in (0.2, 0.1)]
    slope = np.log2(errs[0] / max(errs[1], 1e-300))
    report["nominal_order"] = bool(slope >= scheme.order + 0.7)
    return report

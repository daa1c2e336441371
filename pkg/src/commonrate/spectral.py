"""Spectral feasibility analysis and closed-form power solutions.

For a common SINR target ``t`` the single-layer balance equations read
``p = t * norm_macro @ p + t * norm_noise``; a nonnegative solution exists iff
``t < 1 / rho(norm_macro)`` where ``rho`` is the spectral radius.  The
two-layer system aggregates macro and low-power serving powers through
``mix = [I | diag(serving_ratio)]`` and reduces to the same structure via the
minimum-norm right inverse of ``mix``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np


class PowerStatus(Enum):
    FEASIBLE = "feasible"
    INFEASIBLE_SINR = "infeasible_sinr"
    EXCEEDS_CAPS = "exceeds_caps"


@dataclass(frozen=True)
class FeasibilityReport:
    rho: float                      # spectral radius of the coupling matrix
    gamma_max: float                # 1/rho, max feasible common SINR (linear)
    r_max: float                    # log2(1 + gamma_max), bits/s/Hz
    irreducible_verified: bool = True


@dataclass(frozen=True)
class PowerSolution:
    macro_power: np.ndarray | None
    low_power: np.ndarray | None
    status: PowerStatus
    achieved_sinr: np.ndarray | None = None
    note: str = ""


def spectral_radius(matrix: np.ndarray, tol: float = 1e-10,
                    max_iter: int = 100_000) -> float:
    """Dominant eigenvalue of a nonnegative matrix by power iteration.

    Zero-diagonal matrices can be imprimitive (the plain iteration then
    oscillates between directions), so those are shifted by s*I first; the
    Perron root shifts by exactly s.  The iteration starts from a positive
    vector, which always overlaps the dominant eigenspace of a nonnegative
    matrix, and stops once the eigen-residual of the Rayleigh estimate drops
    below the relative tolerance.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValueError("matrix must be square")
    if np.any(matrix < 0):
        raise ValueError("matrix must be nonnegative")
    row_norm = float(np.max(np.sum(matrix, axis=1))) if n else 0.0
    if row_norm == 0.0:
        return 0.0
    shift = 0.0 if np.all(np.diag(matrix) > 0) else 0.5 * row_norm

    x = np.full(n, 1.0 / np.sqrt(n))
    estimate = 0.0
    for _ in range(max_iter):
        y = matrix @ x + shift * x
        estimate = float(x @ y)  # Rayleigh quotient, x has unit norm
        residual = float(np.linalg.norm(y - estimate * x))
        x = y / np.linalg.norm(y)
        if residual <= tol * max(estimate, 1e-300):
            break
    return max(estimate - shift, 0.0)


def irreducible_by_row_rule(matrix: np.ndarray) -> bool:
    """Zero-pattern sufficient test: no row may contain more than one zero."""
    return bool(np.all(np.sum(np.asarray(matrix) == 0.0, axis=1) <= 1))


def feasibility_single(norm_macro: np.ndarray) -> FeasibilityReport:
    """Max feasible common SINR of the single-layer system: 1/rho."""
    rho = spectral_radius(norm_macro)
    gamma_max = np.inf if rho == 0.0 else 1.0 / rho
    r_max = np.inf if np.isinf(gamma_max) else float(np.log2(1.0 + gamma_max))
    return FeasibilityReport(rho=rho, gamma_max=gamma_max, r_max=r_max,
                             irreducible_verified=irreducible_by_row_rule(norm_macro))


def solve_single_analytic(norm_macro: np.ndarray, norm_noise: np.ndarray,
                          sinr_target: float) -> PowerSolution:
    """Unconstrained fixed point p = t*(norm_macro @ p + norm_noise).

    Solves the linear system (I - t*norm_macro) p = t*norm_noise when the
    target is below the spectral bound; otherwise reports infeasibility.
    """
    if sinr_target <= 0:
        raise ValueError(f"sinr_target must be positive, got {sinr_target}")
    norm_macro = np.asarray(norm_macro, dtype=float)
    norm_noise = np.asarray(norm_noise, dtype=float)
    n = norm_macro.shape[0]
    rho = spectral_radius(norm_macro)
    if rho > 0 and sinr_target >= 1.0 / rho:
        return PowerSolution(macro_power=None, low_power=None,
                             status=PowerStatus.INFEASIBLE_SINR,
                             note=f"target {sinr_target:.6g} >= 1/rho {1.0 / rho:.6g}")
    p = np.linalg.solve(np.eye(n) - sinr_target * norm_macro,
                        sinr_target * norm_noise)
    achieved = p / (norm_macro @ p + norm_noise)
    return PowerSolution(macro_power=p, low_power=None,
                         status=PowerStatus.FEASIBLE, achieved_sinr=achieved)


class TwoLayerCoupling(NamedTuple):
    coupling: np.ndarray       # (2n, 2n) reduced interference matrix
    mix_right_inv: np.ndarray  # (2n, n) minimum-norm right inverse of [I | diag(ratio)]


def build_two_layer_coupling(serving_ratio: np.ndarray, norm_macro: np.ndarray,
                             norm_low: np.ndarray) -> TwoLayerCoupling:
    """Reduce the two-layer balance system through the signal-mix matrix.

    With mix = [I | diag(serving_ratio)] (n x 2n) the right inverse is
    mix^T (mix mix^T)^{-1}, and mix mix^T = I + diag(ratio)^2 is diagonal, so
    the inverse is exact.  The reduced matrix satisfies
    mix @ coupling == [norm_macro | norm_low] identically.
    """
    ratio = np.asarray(serving_ratio, dtype=float)
    if ratio.ndim == 2:
        ratio = np.diag(ratio)
    if np.any(ratio < 0):
        raise ValueError("serving_ratio must be nonnegative")
    n = ratio.shape[0]
    denom = 1.0 + ratio ** 2
    mix_right_inv = np.vstack([np.diag(1.0 / denom), np.diag(ratio / denom)])
    cross = np.hstack([norm_macro, norm_low])
    coupling = mix_right_inv @ cross
    mix = np.hstack([np.eye(n), np.diag(ratio)])
    residual = np.max(np.abs(mix @ coupling - cross))
    scale = max(1.0, float(np.max(np.abs(cross))))
    if residual > 1e-12 * scale:
        raise AssertionError(f"right-inverse identity violated: {residual:.3e}")
    return TwoLayerCoupling(coupling=coupling, mix_right_inv=mix_right_inv)


def solve_two_layer_analytic(serving_ratio: np.ndarray, norm_macro: np.ndarray,
                             norm_low: np.ndarray, norm_noise: np.ndarray,
                             sinr_target: float) -> PowerSolution:
    """Unconstrained two-layer solution x = t*(I - t*coupling)^{-1} mix_right_inv @ nn.

    The spectral bound rho(coupling) < 1/target is necessary; unlike the
    single-layer case the reduced matrix does not guarantee a nonnegative
    solution, so a negative component also degrades to infeasible.
    """
    if sinr_target <= 0:
        raise ValueError(f"sinr_target must be positive, got {sinr_target}")
    ratio = np.asarray(serving_ratio, dtype=float)
    if ratio.ndim == 2:
        ratio = np.diag(ratio)
    n = ratio.shape[0]
    sys = build_two_layer_coupling(ratio, norm_macro, norm_low)
    rho = spectral_radius(sys.coupling)
    if rho > 0 and sinr_target >= 1.0 / rho:
        return PowerSolution(macro_power=None, low_power=None,
                             status=PowerStatus.INFEASIBLE_SINR,
                             note=f"target {sinr_target:.6g} >= 1/rho {1.0 / rho:.6g}")
    rhs = sinr_target * (sys.mix_right_inv @ np.asarray(norm_noise, dtype=float))
    x = np.linalg.solve(np.eye(2 * n) - sinr_target * sys.coupling, rhs)
    neg_tol = 1e-10 * max(1.0, float(np.max(np.abs(x))))
    if np.any(x < -neg_tol):
        return PowerSolution(macro_power=None, low_power=None,
                             status=PowerStatus.INFEASIBLE_SINR,
                             note="negative component in the unconstrained solution")
    p, q = x[:n], x[n:]
    achieved = (p + ratio * q) / (norm_macro @ p + norm_low @ q + norm_noise)
    return PowerSolution(macro_power=p, low_power=q,
                         status=PowerStatus.FEASIBLE, achieved_sinr=achieved)

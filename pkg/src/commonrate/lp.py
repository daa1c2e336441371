"""Box-constrained minimum-total-power problem at a fixed SINR target.

This is the inner subproblem of the rate search: minimize the summed transmit
power subject to every active user reaching the target SINR, per-station power
caps, and silenced low-power stations outside the relay decode set.  Raw gains
span many orders of magnitude, so each SINR row is scaled by its right-hand
side before the solve.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .channel import GainSystem, sinr_from_raw

FEASIBILITY_TOL = 1e-8


class LPStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


class LPSolverError(RuntimeError):
    """The LP backend failed numerically after restarts."""


@dataclass(frozen=True)
class MinPowerProblem:
    gains: GainSystem
    sinr_target: float           # linear
    macro_cap_w: float           # per macro station, np.inf for uncapped
    low_cap_w: float = np.inf
    relay_active: np.ndarray | None = None  # bool mask, None means all active

    def __post_init__(self):
        if self.sinr_target < 0:
            raise ValueError("sinr_target must be >= 0")
        if self.macro_cap_w <= 0 and self.sinr_target > 0:
            pass  # zero caps are legal, the LP just reports infeasible
        mask = self.relay_active
        if mask is not None and len(mask) != self.gains.n:
            raise ValueError("relay_active mask length must equal the user count")

    def mask(self) -> np.ndarray:
        if self.relay_active is None:
            return np.ones(self.gains.n, dtype=bool)
        return np.asarray(self.relay_active, dtype=bool)


@dataclass(frozen=True)
class AssembledLP:
    """Standard-form data: minimize c @ x s.t. a_ub @ x <= b_ub, bounds."""
    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    bounds: list[tuple[float, float | None]]
    row_scale: np.ndarray


@dataclass(frozen=True)
class LPSolution:
    macro_power: np.ndarray
    low_power: np.ndarray
    objective_w: float
    status: LPStatus
    slacks: np.ndarray | None  # achieved SINR minus target, linear


def assemble_lp(problem: MinPowerProblem) -> AssembledLP:
    """Build the scaled <= system from the SINR constraints.

    Row i encodes
      serving_i . x_i - target * sum_{j != i} cross_ij . x_j >= target * noise_i
    flipped to <= form and divided by the right-hand side.
    """
    gs = problem.gains
    n = gs.n
    t = problem.sinr_target
    mask = problem.mask()

    macro_block = t * gs.macro_gain.copy()
    low_block = t * gs.low_gain.copy()
    np.fill_diagonal(macro_block, -np.diag(gs.macro_gain))
    np.fill_diagonal(low_block, -np.diag(gs.low_gain))
    a_ub = np.hstack([macro_block, low_block])
    b_ub = -t * gs.noise

    rhs = t * gs.noise
    row_scale = np.where(rhs > 0, rhs, 1.0)
    a_ub = a_ub / row_scale[:, None]
    b_ub = b_ub / row_scale

    p_hi = None if np.isinf(problem.macro_cap_w) else float(problem.macro_cap_w)
    q_hi = None if np.isinf(problem.low_cap_w) else float(problem.low_cap_w)
    bounds = [(0.0, p_hi)] * n
    bounds += [(0.0, q_hi) if mask[j] else (0.0, 0.0) for j in range(n)]

    return AssembledLP(c=np.ones(2 * n), a_ub=a_ub, b_ub=b_ub,
                       bounds=bounds, row_scale=row_scale)


_SOLVER_LADDER = ("highs", "highs-ds", "highs-ipm")


def solve_min_power(problem: MinPowerProblem) -> LPSolution:
    """Minimize total transmit power at the fixed SINR target.

    Returns an Optimal solution with per-user SINR surplus, or Infeasible when
    no power vector inside the caps reaches the target for every user.
    Numerical backend failures are retried across solver variants before
    raising.
    """
    lp = assemble_lp(problem)
    gs = problem.gains
    n = gs.n

    failures = []
    for method in _SOLVER_LADDER:
        res = linprog(lp.c, A_ub=lp.a_ub, b_ub=lp.b_ub, bounds=lp.bounds,
                      method=method,
                      options={"primal_feasibility_tolerance": 1e-9,
                               "dual_feasibility_tolerance": 1e-9})
        if res.status == 2:
            return LPSolution(macro_power=np.zeros(n), low_power=np.zeros(n),
                              objective_w=np.inf, status=LPStatus.INFEASIBLE,
                              slacks=None)
        if res.status == 0:
            x = np.asarray(res.x)
            residual = np.max(lp.a_ub @ x - lp.b_ub) if n else 0.0
            if residual > FEASIBILITY_TOL:
                failures.append(f"{method}: scaled residual {residual:.3e}")
                continue
            p, q = x[:n], x[n:]
            achieved = sinr_from_raw(gs.macro_gain, gs.low_gain, gs.noise, p, q)
            return LPSolution(macro_power=p, low_power=q,
                              objective_w=float(np.sum(x)), status=LPStatus.OPTIMAL,
                              slacks=achieved - problem.sinr_target)
        failures.append(f"{method}: status {res.status} ({res.message})")
    raise LPSolverError("; ".join(failures))


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    sinr_ok: bool
    bounds_ok: bool
    mask_ok: bool
    minimal_ok: bool
    worst_sinr_margin: float


def verify_solution(problem: MinPowerProblem, solution: LPSolution,
                    tol: float = 1e-6) -> VerifyReport:
    """Independent recheck of an LP solution against the raw gains.

    Recomputes every SINR, checks the boxes and the relay mask, and probes
    local minimality: a uniform scale-down by (1 - 1e-6) must break at least
    one SINR constraint whenever the solution transmits anything.
    """
    gs = problem.gains
    p, q = solution.macro_power, solution.low_power
    t = problem.sinr_target
    achieved = sinr_from_raw(gs.macro_gain, gs.low_gain, gs.noise, p, q)
    margin = float(np.min(achieved - t)) if gs.n else 0.0

    sinr_ok = bool(np.all(achieved >= t * (1.0 - tol) - 1e-300))
    bounds_ok = bool(np.all(p >= -1e-12) and np.all(q >= -1e-12)
                     and np.all(p <= problem.macro_cap_w * (1 + tol) + 1e-15)
                     and np.all(q <= problem.low_cap_w * (1 + tol) + 1e-15))
    mask = problem.mask()
    mask_ok = bool(np.all(q[~mask] <= 1e-15))

    minimal_ok = True
    if solution.status is LPStatus.OPTIMAL and solution.objective_w > 0 and t > 0:
        shrink = 1.0 - 1e-6
        down = sinr_from_raw(gs.macro_gain, gs.low_gain, gs.noise, shrink * p, shrink * q)
        minimal_ok = bool(np.any(down < t))

    ok = sinr_ok and bounds_ok and mask_ok and minimal_ok
    return VerifyReport(ok=ok, sinr_ok=sinr_ok, bounds_ok=bounds_ok,
                        mask_ok=mask_ok, minimal_ok=minimal_ok,
                        worst_sinr_margin=margin)


def _mps_value(v: float) -> str:
    return f"{v:12.5E}"


def _mps_line(f1: str, f2: str, f3: str = "", f4: str = "") -> str:
    line = f" {f1:<2} {f2:<8}"
    if f3 or f4:
        line += f"  {f3:<8}  {f4:>12}"
    return line.rstrip() + "\n"


def write_mps(problem: MinPowerProblem, path: str | Path,
              name: str = "MINPOWER") -> None:
    """Dump the scaled LP in fixed MPS format for external cross-validation.

    Greater-or-equal SINR rows, an all-ones objective, UP bounds for capped
    stations and FX 0 for silenced relays.  Values carry 6 significant digits.
    """
    lp = assemble_lp(problem)
    n = problem.gains.n
    var = [f"P{j + 1:04d}" for j in range(n)] + [f"Q{j + 1:04d}" for j in range(n)]
    row = [f"SINR{i + 1:04d}" for i in range(n)]

    with open(Path(path), "w") as fh:
        fh.write(f"NAME          {name:<8}\n")
        fh.write("ROWS\n")
        fh.write(_mps_line("N", "COST"))
        for r in row:
            fh.write(_mps_line("G", r))
        fh.write("COLUMNS\n")
        for j, v in enumerate(var):
            fh.write(_mps_line("", v, "COST", _mps_value(1.0)))
            for i, r in enumerate(row):
                coeff = -lp.a_ub[i, j]  # back to >= orientation
                if coeff != 0.0:
                    fh.write(_mps_line("", v, r, _mps_value(coeff)))
        fh.write("RHS\n")
        for i, r in enumerate(row):
            fh.write(_mps_line("", "RHS1", r, _mps_value(-lp.b_ub[i])))
        fh.write("BOUNDS\n")
        for j, v in enumerate(var):
            lo, hi = lp.bounds[j]
            if hi is not None and hi == 0.0:
                fh.write(_mps_line("FX", "BND1", v, _mps_value(0.0)))
            elif hi is not None:
                fh.write(_mps_line("UP", "BND1", v, _mps_value(hi)))
        fh.write("ENDATA\n")

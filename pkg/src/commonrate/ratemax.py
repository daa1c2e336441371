"""Common-rate maximization: grid search, user discarding, relay decode sets.

The search starts from a small feasible rate and climbs in fixed increments
while the minimum-power subproblem stays solvable inside the caps and below
the spectral bound; the last solvable grid point is returned.  Relay systems
recompute the decode set at each candidate rate, since a relay can only
retransmit what it can decode at that rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .channel import ChannelModel, Drop, GainSystem, sinr_from_raw
from .lp import LPStatus, MinPowerProblem, solve_min_power
from .spectral import (PowerSolution, PowerStatus, build_two_layer_coupling,
                       feasibility_single, spectral_radius)


class ScenarioKind(str, Enum):
    SINGLE_LAYER = "single_layer"
    MACRO_MICRO = "macro_micro"
    MACRO_RELAY = "macro_relay"
    UNCOORDINATED_SINGLE = "uncoordinated_single"
    UNCOORDINATED_MICRO = "uncoordinated_micro"
    UNCOORDINATED_RELAY = "uncoordinated_relay"


COORDINATED = (ScenarioKind.SINGLE_LAYER, ScenarioKind.MACRO_MICRO,
               ScenarioKind.MACRO_RELAY)


@dataclass(frozen=True)
class RateResult:
    common_rate: float             # bits/s/Hz
    powers: PowerSolution
    active_users: np.ndarray       # drop-level user ids in service
    active_relays: np.ndarray      # drop-level ids of transmitting low-power stations
    iterations: int
    init_feasible: bool = True


def full_power_sinr(gains: GainSystem, macro_power_w: float,
                    low_power_w: float = 0.0) -> np.ndarray:
    """SINR of every user when all active stations transmit at the given caps."""
    p = np.full(gains.n, macro_power_w)
    q = np.full(gains.n, low_power_w)
    return sinr_from_raw(gains.macro_gain, gains.low_gain, gains.noise, p, q)


def removal_order(gains: GainSystem, macro_power_w: float,
                  low_power_w: float = 0.0) -> list[int]:
    """Worst-first removal sequence under full-power SINR.

    The worst user is removed and SINRs are recomputed with its stations
    silenced, repeatedly; truncating this sequence reproduces the discard
    outcome for any load, so it is computed once per drop and scenario family.
    """
    survivors = list(range(gains.n))
    order: list[int] = []
    while len(survivors) > 1:
        idx = np.array(survivors)
        sub = np.ix_(idx, idx)
        sinr = sinr_from_raw(gains.macro_gain[sub], gains.low_gain[sub],
                             gains.noise[idx],
                             np.full(idx.size, macro_power_w),
                             np.full(idx.size, low_power_w))
        order.append(survivors.pop(int(np.argmin(sinr))))
    order.append(survivors[0])
    return order


def discard_users(gains: GainSystem, load: float, macro_power_w: float,
                  low_power_w: float = 0.0) -> np.ndarray:
    """Keep the ceil(load * n) users that survive worst-first discarding."""
    if not 0.0 < load <= 1.0:
        raise ValueError(f"load must lie in (0, 1], got {load}")
    keep = math.ceil(load * gains.n)
    removed = removal_order(gains, macro_power_w, low_power_w)[:gains.n - keep]
    return np.array(sorted(set(range(gains.n)) - set(removed)), dtype=int)


def relay_decode_rates(drop: Drop, active: np.ndarray, model: ChannelModel,
                       macro_power_w: float) -> np.ndarray:
    """Max decodable rate at each active relay during the first transmission.

    The relay listens to its own sector at full power with every other active
    sector interfering at full power and all relays silent.
    """
    idx = np.asarray(sorted(active), dtype=int)
    m = drop.decode_gain[np.ix_(idx, idx)]
    p = np.full(idx.size, macro_power_w)
    signal = np.diag(m) * p
    interference = m @ p - signal
    sinr = signal / (interference + model.noise_power_w)
    return np.log2(1.0 + sinr)


def relay_decode_set(drop: Drop, active: np.ndarray, rate: float,
                     model: ChannelModel, macro_power_w: float) -> np.ndarray:
    """Active relays able to decode the first transmission sent at ``rate``."""
    idx = np.asarray(sorted(active), dtype=int)
    rates = relay_decode_rates(drop, idx, model, macro_power_w)
    return idx[rates >= rate]


def _zero_solution(n: int, two_layer: bool) -> PowerSolution:
    return PowerSolution(macro_power=np.zeros(n),
                         low_power=np.zeros(n) if two_layer else None,
                         status=PowerStatus.FEASIBLE,
                         achieved_sinr=np.zeros(n))


def maximize_single(gains: GainSystem, macro_cap_w: float, rate_init: float = 0.1,
                    rate_step: float = 0.1, user_ids: np.ndarray | None = None,
                    max_steps: int = 10_000) -> RateResult:
    """Largest grid rate a single-layer system can guarantee to every user.

    Climbs the rate grid while the target stays below the spectral bound and
    the minimum-power problem stays solvable inside the macro caps.
    """
    if rate_init <= 0 or rate_step <= 0:
        raise ValueError("rate_init and rate_step must be positive")
    user_ids = np.arange(gains.n) if user_ids is None else np.asarray(user_ids)
    limit = feasibility_single(gains.norm_macro).gamma_max
    no_relays = np.zeros(gains.n, dtype=bool)

    best = None
    steps = 0
    for k in range(max_steps):
        rate = rate_init + k * rate_step
        target = 2.0 ** rate - 1.0
        if not target < limit:
            break
        sol = solve_min_power(MinPowerProblem(gains=gains, sinr_target=target,
                                              macro_cap_w=macro_cap_w,
                                              low_cap_w=0.0, relay_active=no_relays))
        steps += 1
        if sol.status is not LPStatus.OPTIMAL:
            break
        best = (rate, sol)
    else:
        raise RuntimeError("single-layer rate search did not terminate; "
                           "check caps and noise configuration")

    if best is None:
        return RateResult(common_rate=0.0, powers=_zero_solution(gains.n, False),
                          active_users=user_ids, active_relays=np.array([], dtype=int),
                          iterations=max(steps, 1), init_feasible=False)
    rate, sol = best
    powers = PowerSolution(macro_power=sol.macro_power, low_power=None,
                           status=PowerStatus.FEASIBLE,
                           achieved_sinr=(2.0 ** rate - 1.0) + sol.slacks)
    return RateResult(common_rate=rate, powers=powers, active_users=user_ids,
                      active_relays=np.array([], dtype=int), iterations=steps)


def maximize_two_layer(gains: GainSystem, macro_cap_w: float, low_cap_w: float,
                       kind: ScenarioKind, decode_rates: np.ndarray | None = None,
                       rate_init: float = 0.1, rate_step: float = 0.1,
                       decode_mode: str = "per_rate",
                       user_ids: np.ndarray | None = None,
                       max_steps: int = 10_000) -> RateResult:
    """Largest grid rate for a macro+micro or macro+relay system.

    Micro systems keep every low-power station available; relay systems
    silence relays outside the decode set, which is re-evaluated at each
    candidate rate (or frozen at the initial rate with
    ``decode_mode="at_init"``).
    """
    if rate_init <= 0 or rate_step <= 0:
        raise ValueError("rate_init and rate_step must be positive")
    if kind not in (ScenarioKind.MACRO_MICRO, ScenarioKind.MACRO_RELAY):
        raise ValueError(f"kind must be a two-layer scenario, got {kind}")
    if kind is ScenarioKind.MACRO_RELAY:
        if decode_rates is None:
            raise ValueError("macro_relay needs the per-relay decode rates")
        decode_rates = np.asarray(decode_rates, dtype=float)
    if decode_mode not in ("per_rate", "at_init"):
        raise ValueError(f"unknown decode_mode {decode_mode!r}")
    user_ids = np.arange(gains.n) if user_ids is None else np.asarray(user_ids)
    n = gains.n
    frozen_mask = None
    if kind is ScenarioKind.MACRO_RELAY and decode_mode == "at_init":
        frozen_mask = decode_rates >= rate_init

    best = None
    steps = 0
    for k in range(max_steps):
        rate = rate_init + k * rate_step
        target = 2.0 ** rate - 1.0
        if kind is ScenarioKind.MACRO_MICRO:
            mask = np.ones(n, dtype=bool)
        elif frozen_mask is not None:
            mask = frozen_mask
        else:
            mask = decode_rates >= rate
        coupling = build_two_layer_coupling(gains.serving_ratio * mask,
                                            gains.norm_macro,
                                            gains.norm_low * mask).coupling
        rho = spectral_radius(coupling)
        limit = np.inf if rho == 0.0 else 1.0 / rho
        if not target < limit:
            break
        sol = solve_min_power(MinPowerProblem(gains=gains, sinr_target=target,
                                              macro_cap_w=macro_cap_w,
                                              low_cap_w=low_cap_w,
                                              relay_active=mask))
        steps += 1
        if sol.status is not LPStatus.OPTIMAL:
            break
        best = (rate, sol, mask)
    else:
        raise RuntimeError("two-layer rate search did not terminate; "
                           "check caps and noise configuration")

    if best is None:
        return RateResult(common_rate=0.0, powers=_zero_solution(n, True),
                          active_users=user_ids, active_relays=np.array([], dtype=int),
                          iterations=max(steps, 1), init_feasible=False)
    rate, sol, mask = best
    powers = PowerSolution(macro_power=sol.macro_power, low_power=sol.low_power,
                           status=PowerStatus.FEASIBLE,
                           achieved_sinr=(2.0 ** rate - 1.0) + sol.slacks)
    return RateResult(common_rate=rate, powers=powers, active_users=user_ids,
                      active_relays=user_ids[mask], iterations=steps)


def uncoordinated_rate(gains: GainSystem, kind: ScenarioKind, macro_cap_w: float,
                       low_cap_w: float = 0.0,
                       decode_rates: np.ndarray | None = None,
                       user_ids: np.ndarray | None = None) -> RateResult:
    """Common rate with every station at maximum power and no optimization.

    The rate is log2(1 + min SINR), not quantized to the search grid.  For
    relay systems, relays that cannot decode at the resulting rate shut off
    and the rate is recomputed; the set shrinks monotonically until stable.
    """
    user_ids = np.arange(gains.n) if user_ids is None else np.asarray(user_ids)
    n = gains.n
    p = np.full(n, macro_cap_w)
    base = kind.value.removeprefix("uncoordinated_")

    if base in ("single", ScenarioKind.SINGLE_LAYER.value):
        sinr = sinr_from_raw(gains.macro_gain, gains.low_gain, gains.noise, p)
        rate = float(np.log2(1.0 + np.min(sinr)))
        powers = PowerSolution(macro_power=p, low_power=None,
                               status=PowerStatus.FEASIBLE, achieved_sinr=sinr)
        return RateResult(common_rate=rate, powers=powers, active_users=user_ids,
                          active_relays=np.array([], dtype=int), iterations=1)

    if base in ("micro", ScenarioKind.MACRO_MICRO.value):
        q = np.full(n, low_cap_w)
        sinr = sinr_from_raw(gains.macro_gain, gains.low_gain, gains.noise, p, q)
        rate = float(np.log2(1.0 + np.min(sinr)))
        powers = PowerSolution(macro_power=p, low_power=q,
                               status=PowerStatus.FEASIBLE, achieved_sinr=sinr)
        return RateResult(common_rate=rate, powers=powers, active_users=user_ids,
                          active_relays=user_ids.copy(), iterations=1)

    if decode_rates is None:
        raise ValueError("uncoordinated relay baseline needs the decode rates")
    decode_rates = np.asarray(decode_rates, dtype=float)
    mask = np.ones(n, dtype=bool)
    rate = 0.0
    sinr = np.zeros(n)
    iterations = 0
    for _ in range(n + 1):
        iterations += 1
        q = np.where(mask, low_cap_w, 0.0)
        sinr = sinr_from_raw(gains.macro_gain, gains.low_gain, gains.noise, p, q)
        rate = float(np.log2(1.0 + np.min(sinr)))
        new_mask = mask & (decode_rates >= rate)
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    powers = PowerSolution(macro_power=p, low_power=np.where(mask, low_cap_w, 0.0),
                           status=PowerStatus.FEASIBLE, achieved_sinr=sinr)
    return RateResult(common_rate=rate, powers=powers, active_users=user_ids,
                      active_relays=user_ids[mask], iterations=iterations)

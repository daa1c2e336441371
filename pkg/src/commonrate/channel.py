"""Link gains: path-loss models, sector antenna pattern, shadowing, link budget.

Everything downstream of this module works on linear power gains.  A drop is
one Monte Carlo realization: user positions plus every per-link shadowing draw,
stored as three full gain tables (macro-to-user, low-power-to-user, and
macro-to-relay decode links).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import Layout, StationKind, StationSite, UserSite

PATHLOSS_MODELS = ("cost231_hata", "walfish_ikegami_nlos", "shared")


def pathloss_macro_hata(d: np.ndarray | float) -> np.ndarray | float:
    """Modified COST 231 Hata urban model at 1900 MHz: 34.5 + 35 log10(d/m)."""
    return 34.5 + 35.0 * np.log10(d)


def pathloss_micro_wi(d: np.ndarray | float) -> np.ndarray | float:
    """COST 231 Walfish-Ikegami NLOS model at 1900 MHz: 34.53 + 38 log10(d/m)."""
    return 34.53 + 38.0 * np.log10(d)


def pathloss_shared(d: np.ndarray | float) -> np.ndarray | float:
    """Single-slope model applied to both layers: 31.5 + 38 log10(d/m)."""
    return 31.5 + 38.0 * np.log10(d)


_PATHLOSS = {
    "cost231_hata": pathloss_macro_hata,
    "walfish_ikegami_nlos": pathloss_micro_wi,
    "shared": pathloss_shared,
}


def antenna_gain(theta_deg: np.ndarray | float, theta_3db: float = 65.0,
                 a_max: float = 20.0) -> np.ndarray | float:
    """Three-sector horizontal pattern: -min(12 (theta/theta_3db)^2, a_max) dBi.

    The angle is normalized into [-180, 180) first; the result is even in
    theta and clamped to [-a_max, 0].
    """
    theta = geometry.wrap_angle_deg(theta_deg)
    return -np.minimum(12.0 * (theta / theta_3db) ** 2, a_max)


@dataclass(frozen=True)
class ChannelModel:
    """Propagation and link-budget parameters shared by every link in a drop."""

    macro_pathloss: str = "cost231_hata"
    lowpower_pathloss: str = "walfish_ikegami_nlos"
    shadow_sigma_macro: float = 8.0      # dB
    shadow_sigma_lowpower: float = 10.0  # dB
    tx_antenna_gain_macro: float = 15.0  # dB, macro sectors only
    rx_antenna_gain: float = -1.0        # dB
    other_losses: float = -10.0          # dB (cabling etc., added to the budget)
    noise_power_dbm: float = -95.0
    theta_3db: float = 65.0
    a_max: float = 20.0
    d_min_macro: float = 35.0            # m, path-loss validity clamp
    d_min_lowpower: float = 20.0

    def __post_init__(self):
        if self.macro_pathloss not in _PATHLOSS:
            raise ValueError(f"unknown macro_pathloss {self.macro_pathloss!r}")
        if self.lowpower_pathloss not in _PATHLOSS:
            raise ValueError(f"unknown lowpower_pathloss {self.lowpower_pathloss!r}")
        if self.shadow_sigma_macro < 0 or self.shadow_sigma_lowpower < 0:
            raise ValueError("shadowing standard deviations must be >= 0")
        if self.theta_3db <= 0 or self.a_max <= 0:
            raise ValueError("theta_3db and a_max must be positive")

    @classmethod
    def cost231(cls, **overrides) -> "ChannelModel":
        """Hata urban for the macro layer, Walfish-Ikegami NLOS for low power."""
        return cls(**overrides)

    @classmethod
    def shared_raman(cls, **overrides) -> "ChannelModel":
        """One single-slope model for both layers, 8 dB shadowing everywhere."""
        base = dict(macro_pathloss="shared", lowpower_pathloss="shared",
                    shadow_sigma_lowpower=8.0)
        base.update(overrides)
        return cls(**base)

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    def macro_pathloss_db(self, d):
        return _PATHLOSS[self.macro_pathloss](np.maximum(d, self.d_min_macro))

    def lowpower_pathloss_db(self, d):
        return _PATHLOSS[self.lowpower_pathloss](np.maximum(d, self.d_min_lowpower))

    def pattern_db(self, theta_deg):
        return antenna_gain(theta_deg, self.theta_3db, self.a_max)


def macro_strength_db(model: ChannelModel, layout: Layout, positions: np.ndarray,
                      boresights: np.ndarray, point: np.ndarray,
                      shadows_db: np.ndarray) -> np.ndarray:
    """Received strength (dB, up to the common transmit power) from every macro sector."""
    dist, bearing = geometry.wrap_links(layout, positions, point)
    theta = geometry.wrap_angle_deg(bearing - boresights)
    return (model.tx_antenna_gain_macro + model.pattern_db(theta)
            + model.rx_antenna_gain + model.other_losses
            - model.macro_pathloss_db(dist) - shadows_db)


def link_gain(tx: StationSite, rx: UserSite | np.ndarray, shadow_db: float,
              model: ChannelModel, layout: Layout) -> float:
    """Linear power gain of one station-to-point link.

    Budget: tx antenna gain (sector pattern for macro, 0 dBi omni for low
    power) + rx gain + other losses - path loss - shadowing, all in dB, then
    converted to linear.
    """
    point = rx.position if isinstance(rx, UserSite) else np.asarray(rx)
    dist, bearing = geometry.wrap_links(layout, tx.position[None, :], point)
    if tx.kind is StationKind.MACRO_SECTOR:
        theta = geometry.wrap_angle_deg(bearing[0] - tx.boresight_deg)
        gain_db = (model.tx_antenna_gain_macro + model.pattern_db(theta)
                   + model.rx_antenna_gain + model.other_losses
                   - model.macro_pathloss_db(dist[0]) - shadow_db)
    else:
        gain_db = (model.rx_antenna_gain + model.other_losses
                   - model.lowpower_pathloss_db(dist[0]) - shadow_db)
    return float(10.0 ** (gain_db / 10.0))


@dataclass(frozen=True)
class Drop:
    """One Monte Carlo realization with full link-gain tables (linear).

    Row index is always the receiver.  ``macro_gain[i, j]`` is user ``i`` from
    the macro sector serving slot ``j``; ``low_gain[i, j]`` from the low-power
    station bound to slot ``j``; ``decode_gain[k, j]`` is the low-power site
    ``k`` receiving macro sector ``j`` (the relay decode link, which drops the
    user rx gain but keeps the sector pattern).
    """

    users: tuple[UserSite, ...]
    macro_gain: np.ndarray
    low_gain: np.ndarray
    decode_gain: np.ndarray


def build_drop(layout: Layout, model: ChannelModel, rng: np.random.Generator,
               lowpower_sites: list[StationSite] | None = None,
               max_retries: int = 1000, association_shadowing: bool = True,
               association_margin_db: float = 0.0) -> Drop:
    """Place users and synthesize every link gain for one drop.

    The macro shadowing accepted during placement is reused for the gain
    table, so the association rule and the gains describe the same channel.
    """
    if lowpower_sites is None:
        lowpower_sites = geometry.place_lowpower(layout)
    if len(lowpower_sites) != layout.n_sectors:
        raise ValueError("two-layer drops need one low-power station per sector")

    users, macro_shadow = geometry.place_users(layout, model, rng, max_retries,
                                               use_shadowing=association_shadowing,
                                               margin_db=association_margin_db)
    n = layout.n_sectors
    sector_pos = layout.sector_positions()
    boresights = layout.sector_boresight_deg
    low_pos = np.array([s.position for s in lowpower_sites])

    low_shadow = rng.normal(0.0, model.shadow_sigma_lowpower, size=(n, n))
    decode_shadow = rng.normal(0.0, model.shadow_sigma_macro, size=(n, n))

    macro_gain = np.empty((n, n))
    low_gain = np.empty((n, n))
    decode_gain = np.empty((n, n))
    for i, user in enumerate(users):
        macro_gain[i] = 10.0 ** (macro_strength_db(
            model, layout, sector_pos, boresights, user.position, macro_shadow[i]) / 10.0)
        dist, _ = geometry.wrap_links(layout, low_pos, user.position)
        low_db = (model.rx_antenna_gain + model.other_losses
                  - model.lowpower_pathloss_db(dist) - low_shadow[i])
        low_gain[i] = 10.0 ** (low_db / 10.0)
    for k in range(n):
        dist, bearing = geometry.wrap_links(layout, sector_pos, low_pos[k])
        theta = geometry.wrap_angle_deg(bearing - boresights)
        dec_db = (model.tx_antenna_gain_macro + model.pattern_db(theta)
                  + model.other_losses
                  - model.macro_pathloss_db(dist) - decode_shadow[k])
        decode_gain[k] = 10.0 ** (dec_db / 10.0)

    return Drop(users=tuple(users), macro_gain=macro_gain, low_gain=low_gain,
                decode_gain=decode_gain)


@dataclass(frozen=True)
class GainSystem:
    """Gain matrices of the active user set, raw and normalized.

    ``norm_macro[i, j]`` is the off-diagonal macro cross gain divided by user
    i's serving macro gain (zero diagonal); ``serving_ratio[i]`` the serving
    low-power gain over the serving macro gain; ``norm_low`` the low-power
    cross gains under the same normalization (zero diagonal); ``norm_noise[i]``
    the noise power over the serving macro gain.
    """

    n: int
    macro_gain: np.ndarray    # (n, n) raw linear
    low_gain: np.ndarray      # (n, n) raw linear
    noise: np.ndarray         # (n,) linear watts
    norm_macro: np.ndarray
    serving_ratio: np.ndarray
    norm_low: np.ndarray
    norm_noise: np.ndarray

    @classmethod
    def from_raw(cls, macro_gain: np.ndarray, low_gain: np.ndarray,
                 noise: np.ndarray) -> "GainSystem":
        macro_gain = np.asarray(macro_gain, dtype=float)
        low_gain = np.asarray(low_gain, dtype=float)
        noise = np.asarray(noise, dtype=float)
        n = macro_gain.shape[0]
        if macro_gain.shape != (n, n) or low_gain.shape != (n, n) or noise.shape != (n,):
            raise ValueError("gain matrices must be square and match the noise vector")
        serving = np.diag(macro_gain)
        if np.any(serving <= 0) or np.any(macro_gain < 0) or np.any(low_gain < 0):
            raise ValueError("degenerate gain table (nonpositive serving gain)")
        if np.any(noise <= 0):
            raise ValueError("noise powers must be positive")
        norm_macro = macro_gain / serving[:, None]
        np.fill_diagonal(norm_macro, 0.0)
        serving_ratio = np.diag(low_gain) / serving
        norm_low = low_gain / serving[:, None]
        np.fill_diagonal(norm_low, 0.0)
        return cls(n=n, macro_gain=macro_gain, low_gain=low_gain, noise=noise,
                   norm_macro=norm_macro, serving_ratio=serving_ratio,
                   norm_low=norm_low, norm_noise=noise / serving)


def build_gain_system(drop: Drop, active: np.ndarray, model: ChannelModel) -> GainSystem:
    """Restrict the drop's tables to the active users and normalize.

    Slots outside ``active`` are silent: their sectors and low-power stations
    do not appear as interferers.
    """
    active = np.asarray(sorted(active), dtype=int)
    if active.size == 0:
        raise ValueError("active user set is empty")
    sub = np.ix_(active, active)
    noise = np.full(active.size, model.noise_power_w)
    return GainSystem.from_raw(drop.macro_gain[sub], drop.low_gain[sub], noise)


def sinr_from_raw(macro_gain: np.ndarray, low_gain: np.ndarray, noise: np.ndarray,
                  p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    """Per-user SINR from raw gains and power vectors (macro p, low-power q)."""
    p = np.asarray(p, dtype=float)
    q = np.zeros_like(p) if q is None else np.asarray(q, dtype=float)
    signal = np.diag(macro_gain) * p + np.diag(low_gain) * q
    total = macro_gain @ p + low_gain @ q
    return signal / (total - signal + noise)


def sinr_from_normalized(norm_macro: np.ndarray, serving_ratio: np.ndarray,
                         norm_low: np.ndarray, norm_noise: np.ndarray,
                         p: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    """Same SINR computed in the normalized domain (serving macro gain = 1)."""
    p = np.asarray(p, dtype=float)
    q = np.zeros_like(p) if q is None else np.asarray(q, dtype=float)
    return (p + serving_ratio * q) / (norm_macro @ p + norm_low @ q + norm_noise)


_MATRIX_FIELDS = ("macro_gain", "low_gain", "noise", "norm_macro",
                  "serving_ratio", "norm_low", "norm_noise")


def dump_gain_system(gs: GainSystem, outdir: str | Path, model_id: str = "unknown") -> None:
    """Write one CSV per matrix (row-major, header carries n and the model id)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in _MATRIX_FIELDS:
        value = np.atleast_2d(getattr(gs, name))
        with open(outdir / f"{name}.csv", "w") as fh:
            fh.write(f"# n={gs.n} model={model_id} matrix={name}\n")
            for row in value:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def load_gain_matrix(path: str | Path) -> np.ndarray:
    """Read one matrix written by :func:`dump_gain_system`."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split(",")])
    out = np.array(rows)
    return out[0] if out.shape[0] == 1 else out

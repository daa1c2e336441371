"""Hexagonal cell layout, sector geometry, station/user placement, wrap-around metric.

The service area is a cluster of hexagonal cells on a triangular lattice
(one macro station with three 120-degree sectors per cell).  Edge effects are
removed by the wrap-around trick: the cluster tiles the plane under a
super-lattice, and every distance is taken to the nearest periodic image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SQRT3 = math.sqrt(3.0)


class PlacementError(RuntimeError):
    """User placement failed to find an acceptable position within the retry budget."""


class StationKind(Enum):
    MACRO_SECTOR = "macro_sector"
    LOW_POWER = "low_power"


@dataclass(frozen=True)
class Layout:
    """Immutable cell cluster: cell centers, sectors, and wrap translations.

    Sector ``s`` belongs to cell ``sector_cell[s]`` and points at azimuth
    ``sector_boresight_deg[s]``.  ``wrap_translations`` holds the zero vector
    plus the 6 nearest super-lattice offsets; all distances in the cluster are
    minimized over these images.
    """

    cell_radius: float
    cells: np.ndarray                 # (n_cells, 2) centers, meters
    sector_cell: np.ndarray           # (n_sectors,) cell index per sector
    sector_boresight_deg: np.ndarray  # (n_sectors,) azimuth of max gain
    wrap_translations: np.ndarray     # (7, 2) offsets, meters

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_sectors(self) -> int:
        return len(self.sector_cell)

    def sector_positions(self) -> np.ndarray:
        """Macro transmitter position per sector (the owning cell's center)."""
        return self.cells[self.sector_cell]


@dataclass(frozen=True)
class StationSite:
    kind: StationKind
    position: np.ndarray
    serving_sector_id: int
    boresight_deg: float | None = None


@dataclass(frozen=True)
class UserSite:
    position: np.ndarray
    sector_id: int


def _hex_rings(rings: int) -> list[tuple[int, int]]:
    coords = []
    for i in range(-rings, rings + 1):
        for j in range(-rings, rings + 1):
            if (abs(i) + abs(j) + abs(i + j)) // 2 <= rings:
                coords.append((i, j))
    return coords


def build_layout(cell_radius: float = 1000.0, rings: int = 2,
                 boresight0_deg: float = 90.0) -> Layout:
    """Build the hexagonal cluster with ``1 + 3*rings*(rings+1)`` cells.

    ``rings=2`` gives the standard 19-cell cluster.  Adjacent centers are
    ``sqrt(3) * cell_radius`` apart; each cell gets 3 sectors with boresights
    at ``boresight0_deg + {0, 120, 240}``.
    """
    if cell_radius <= 0:
        raise ValueError(f"cell_radius must be positive, got {cell_radius}")
    if rings < 0:
        raise ValueError(f"rings must be >= 0, got {rings}")

    spacing = SQRT3 * cell_radius
    a1 = spacing * np.array([1.0, 0.0])
    a2 = spacing * np.array([0.5, SQRT3 / 2.0])

    coords = _hex_rings(rings)
    centers = np.array([i * a1 + j * a2 for i, j in coords])
    # stable ordering: center cell first, then by ring and azimuth
    ring = np.array([(abs(i) + abs(j) + abs(i + j)) // 2 for i, j in coords])
    ang = np.mod(np.arctan2(centers[:, 1], centers[:, 0]), 2 * np.pi)
    order = np.lexsort((ang, ring))
    centers = centers[order]

    n_cells = len(centers)
    sector_cell = np.repeat(np.arange(n_cells), 3)
    sector_boresight = np.tile(np.array([0.0, 120.0, 240.0]), n_cells)
    sector_boresight = np.mod(sector_boresight + boresight0_deg, 360.0)

    # super-lattice translation (rings+1, rings) and its five 60-degree rotations
    base = (rings + 1, rings)
    images = [(0, 0)]
    ij = base
    for _ in range(6):
        images.append(ij)
        ij = (-ij[1], ij[0] + ij[1])
    translations = np.array([i * a1 + j * a2 for i, j in images])

    return Layout(cell_radius=float(cell_radius), cells=centers,
                  sector_cell=sector_cell, sector_boresight_deg=sector_boresight,
                  wrap_translations=translations)


def wrap_angle_deg(theta: np.ndarray | float) -> np.ndarray | float:
    """Normalize an angle (degrees) into [-180, 180)."""
    return np.mod(np.asarray(theta) + 180.0, 360.0) - 180.0


def wrap_distance(a: np.ndarray, b: np.ndarray, layout: Layout) -> float:
    """Distance from ``a`` to the nearest wrap image of ``b``."""
    diffs = np.asarray(a) - (np.asarray(b) + layout.wrap_translations)
    return float(np.min(np.hypot(diffs[:, 0], diffs[:, 1])))


def wrap_links(layout: Layout, stations: np.ndarray, point: np.ndarray):
    """Wrap geometry from many stations to one receive point.

    Returns ``(dist, bearing_deg)`` where ``dist[j]`` is the distance from the
    nearest image of station ``j`` and ``bearing_deg[j]`` the azimuth from that
    image toward the point.
    """
    point = np.asarray(point, dtype=float)
    diffs = point[None, None, :] - (stations[None, :, :] + layout.wrap_translations[:, None, :])
    dist = np.hypot(diffs[..., 0], diffs[..., 1])          # (7, n_stations)
    best = np.argmin(dist, axis=0)
    cols = np.arange(stations.shape[0])
    vec = diffs[best, cols, :]
    bearing = np.degrees(np.arctan2(vec[:, 1], vec[:, 0]))
    return dist[best, cols], bearing


def macro_sector_sites(layout: Layout) -> list[StationSite]:
    centers = layout.sector_positions()
    return [StationSite(kind=StationKind.MACRO_SECTOR, position=centers[s],
                        serving_sector_id=s, boresight_deg=float(layout.sector_boresight_deg[s]))
            for s in range(layout.n_sectors)]


def place_lowpower(layout: Layout, per_cell: int = 3) -> list[StationSite]:
    """Place low-power stations halfway out along sector boresights.

    ``per_cell=3`` binds one omni station to every sector (the default the
    two-layer solvers require); ``per_cell=1`` keeps only the first sector's
    site in each cell.
    """
    if per_cell not in (1, 3):
        raise ValueError(f"per_cell must be 1 or 3, got {per_cell}")
    sites = []
    for s in range(layout.n_sectors):
        if per_cell == 1 and s % 3 != 0:
            continue
        center = layout.cells[layout.sector_cell[s]]
        azim = math.radians(layout.sector_boresight_deg[s])
        offset = 0.5 * layout.cell_radius * np.array([math.cos(azim), math.sin(azim)])
        sites.append(StationSite(kind=StationKind.LOW_POWER, position=center + offset,
                                 serving_sector_id=s))
    return sites


def point_in_cell(point: np.ndarray, center: np.ndarray, cell_radius: float) -> bool:
    """Membership test for the pointy-top hexagon of circumradius ``cell_radius``."""
    local = np.asarray(point) - np.asarray(center)
    half_width = SQRT3 / 2.0 * cell_radius
    for k in range(6):
        azim = math.radians(60.0 * k)
        if local[0] * math.cos(azim) + local[1] * math.sin(azim) > half_width + 1e-9:
            return False
    return True


def sample_point_in_sector(layout: Layout, sector_id: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point over the sector wedge (hexagon intersected with 120 degrees)."""
    center = layout.cells[layout.sector_cell[sector_id]]
    boresight = layout.sector_boresight_deg[sector_id]
    r = layout.cell_radius
    while True:
        local = rng.uniform([-SQRT3 / 2.0 * r, -r], [SQRT3 / 2.0 * r, r])
        if not point_in_cell(center + local, center, r):
            continue
        if local[0] == 0.0 and local[1] == 0.0:
            continue
        azim = math.degrees(math.atan2(local[1], local[0]))
        if abs(wrap_angle_deg(azim - boresight)) < 60.0:
            return center + local


def place_users(layout: Layout, model, rng: np.random.Generator,
                max_retries: int = 1000, use_shadowing: bool = True,
                margin_db: float = 0.0):
    """Drop one user per sector, enforcing the strongest-server association rule.

    A candidate is drawn uniformly over its sector wedge together with one
    shadowing realization per macro sector; it is accepted only when its
    serving sector is received within ``margin_db`` of the strongest sector at
    equal transmit powers (``margin_db=0`` is the strict strongest-server
    rule, larger margins model handover hysteresis).  ``use_shadowing``
    controls whether the comparison includes the shadowing draws or only path
    loss and antenna pattern; the draws end up in the gain tables either way.
    Rejected candidates are discarded and redrawn.

    Returns ``(users, shadow_db)`` where ``shadow_db[i, j]`` is the accepted
    shadowing draw between user ``i`` and macro sector ``j``; the same draws
    must be reused when building the drop's gain tables so the association
    test and the gains stay consistent.
    """
    from . import channel as _channel  # local import, geometry <-> channel cycle

    n = layout.n_sectors
    positions = layout.sector_positions()
    boresights = layout.sector_boresight_deg
    users: list[UserSite] = []
    shadow_rows = np.zeros((n, n))

    for sector_id in range(n):
        for _ in range(max_retries):
            pos = sample_point_in_sector(layout, sector_id, rng)
            shadows = rng.normal(0.0, model.shadow_sigma_macro, size=n)
            strength = _channel.macro_strength_db(
                model, layout, positions, boresights, pos,
                shadows if use_shadowing else np.zeros(n))
            if strength[sector_id] >= np.max(strength) - margin_db:
                users.append(UserSite(position=pos, sector_id=sector_id))
                shadow_rows[sector_id] = shadows
                break
        else:
            raise PlacementError(
                f"no acceptable user found for sector {sector_id} "
                f"after {max_retries} attempts")
    return users, shadow_rows


def layout_to_dict(layout: Layout, lowpower: list[StationSite] | None = None) -> dict:
    """JSON-ready description of the layout (used by the CLI dump and goldens)."""
    out = {
        "cell_radius_m": layout.cell_radius,
        "cells": [[float(x), float(y)] for x, y in layout.cells],
        "sectors": [{"cell": int(c), "boresight_deg": float(b)}
                    for c, b in zip(layout.sector_cell, layout.sector_boresight_deg)],
        "wrap_translations": [[float(x), float(y)] for x, y in layout.wrap_translations],
    }
    if lowpower is not None:
        out["lowpower"] = [{"position": [float(s.position[0]), float(s.position[1])],
                            "sector": int(s.serving_sector_id)} for s in lowpower]
    return out

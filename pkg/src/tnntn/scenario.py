"""Deployment generation: hexagonal macro grid, one LEO beam, hot-spot UE drop.

All lengths are metres internally; the config carries km where that is the
natural unit.  Base-station indices put the macros first (``0..M-1``) and the
satellite last, which is also the tie-break order used by the solvers.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

MACRO = 0
SATELLITE = 1


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ScenarioConfig:
    area_side_km: float = 50.0
    inter_site_distance_m: float = 1732.0
    ue_density: float = 2.0  # UEs per km^2
    hotspot_bs_fraction: float = 0.30
    hotspot_ue_fraction: float = 0.50
    hotspot_radius_m: float = 200.0
    satellite_altitude_km: float = 600.0
    satellite_elevation_deg: float = 90.0
    with_satellite: bool = True
    rng_seed: int = 0

    def validate(self, prefix: str = "scenario") -> "ScenarioConfig":
        for name in ("area_side_km", "inter_site_distance_m", "ue_density",
                     "hotspot_radius_m", "satellite_altitude_km"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{prefix}.{name}", f"must be > 0, got {v!r}")
        for name in ("hotspot_bs_fraction", "hotspot_ue_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{prefix}.{name}", f"must lie in [0, 1], got {v!r}")
        if not 0.0 < self.satellite_elevation_deg <= 90.0:
            raise ConfigError(f"{prefix}.satellite_elevation_deg",
                              f"must lie in (0, 90], got {self.satellite_elevation_deg!r}")
        return self

    @property
    def area_side_m(self) -> float:
        return self.area_side_km * 1e3

    @property
    def area_km2(self) -> float:
        return self.area_side_km ** 2

    @property
    def n_ues(self) -> int:
        return int(round(self.ue_density * self.area_km2))


@dataclass
class Topology:
    """Positions and static attributes of every node.

    ``bs_xy`` holds macro sites then the satellite beam centre.  For the
    satellite, ``sat_xyz`` is the spacecraft position (flat-earth frame, z up).
    """

    bs_xy: np.ndarray              # (B, 2) m
    bs_tier: np.ndarray            # (B,) MACRO / SATELLITE
    bs_max_power_dbm: np.ndarray   # (B,) per RE
    bs_gain_dbi: np.ndarray        # (B,)
    ue_xy: np.ndarray              # (K, 2) m
    ue_hotspot: np.ndarray         # (K,) bool
    ue_anchor: np.ndarray          # (K,) anchor macro index, -1 if uniform
    area_side_m: float
    sat_xyz: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sat_altitude_m: float = 0.0
    sat_elevation_deg: float = 90.0

    @property
    def n_bs(self) -> int:
        return len(self.bs_tier)

    @property
    def n_ues(self) -> int:
        return len(self.ue_xy)

    @property
    def sat_mask(self) -> np.ndarray:
        return self.bs_tier == SATELLITE

    @property
    def n_macro(self) -> int:
        return int(np.sum(self.bs_tier == MACRO))

    def slant_range_m(self, ue_xy: np.ndarray | None = None) -> np.ndarray:
        """(K, N) distance from each UE to each satellite."""
        xy = self.ue_xy if ue_xy is None else np.atleast_2d(ue_xy)
        d = xy[:, None, :] - self.sat_xyz[None, :, :2]
        return np.sqrt(np.sum(d ** 2, axis=-1) + self.sat_xyz[None, :, 2] ** 2)

    def elevation_deg(self) -> np.ndarray:
        """(K, N) elevation angle of each satellite seen from each UE."""
        d = self.ue_xy[:, None, :] - self.sat_xyz[None, :, :2]
        ground = np.sqrt(np.sum(d ** 2, axis=-1))
        return np.degrees(np.arctan2(self.sat_xyz[None, :, 2], ground))

    def dumps(self) -> str:
        """One record per node: ``id,tier,x,y,attrs``.  Floats use repr, so
        the text is a lossless, byte-stable serialization."""
        out = io.StringIO()
        out.write(f"# area_side_m={self.area_side_m!r}\n")
        out.write("id,tier,x_m,y_m,attrs\n")
        sat_k = 0
        for j in range(self.n_bs):
            x, y = (float(v) for v in self.bs_xy[j])
            attrs = (f"max_power_dbm={float(self.bs_max_power_dbm[j])!r};"
                     f"gain_dbi={float(self.bs_gain_dbi[j])!r}")
            if self.bs_tier[j] == SATELLITE:
                sx, sy, sz = (float(v) for v in self.sat_xyz[sat_k])
                attrs += (f";altitude_m={self.sat_altitude_m!r}"
                          f";elevation_deg={self.sat_elevation_deg!r}"
                          f";sat_xyz={sx!r}/{sy!r}/{sz!r}")
                tier = "satellite"
                sat_k += 1
            else:
                tier = "macro"
            out.write(f"bs{j},{tier},{x!r},{y!r},{attrs}\n")
        for i in range(self.n_ues):
            x, y = (float(v) for v in self.ue_xy[i])
            out.write(f"ue{i},ue,{x!r},{y!r},hotspot={int(self.ue_hotspot[i])};"
                      f"anchor={int(self.ue_anchor[i])}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "Topology":
        lines = text.splitlines()
        area = float(lines[0].split("=", 1)[1])
        bs_xy, tier, pmax, gain, sat_xyz = [], [], [], [], []
        ue_xy, hot, anchor = [], [], []
        alt, elev = 0.0, 90.0
        for line in lines[2:]:
            if not line.strip():
                continue
            node, kind, x, y, attrs = line.split(",", 4)
            kv = dict(a.split("=", 1) for a in attrs.split(";"))
            if kind == "ue":
                ue_xy.append((float(x), float(y)))
                hot.append(bool(int(kv["hotspot"])))
                anchor.append(int(kv["anchor"]))
                continue
            bs_xy.append((float(x), float(y)))
            pmax.append(float(kv["max_power_dbm"]))
            gain.append(float(kv["gain_dbi"]))
            if kind == "satellite":
                tier.append(SATELLITE)
                sat_xyz.append(tuple(float(v) for v in kv["sat_xyz"].split("/")))
                alt, elev = float(kv["altitude_m"]), float(kv["elevation_deg"])
            else:
                tier.append(MACRO)
        return cls(
            bs_xy=np.array(bs_xy, dtype=float).reshape(-1, 2),
            bs_tier=np.array(tier, dtype=int),
            bs_max_power_dbm=np.array(pmax, dtype=float),
            bs_gain_dbi=np.array(gain, dtype=float),
            ue_xy=np.array(ue_xy, dtype=float).reshape(-1, 2),
            ue_hotspot=np.array(hot, dtype=bool),
            ue_anchor=np.array(anchor, dtype=int),
            area_side_m=area,
            sat_xyz=np.array(sat_xyz, dtype=float).reshape(-1, 3),
            sat_altitude_m=alt,
            sat_elevation_deg=elev,
        )


def build_hex_grid(cfg: ScenarioConfig) -> np.ndarray:
    """Centres of a flat hexagonal lattice clipped to the square area.

    The lattice is inset from the (0, 0) corner by half a site spacing in x
    and half a row spacing in y; odd rows are shifted by half a spacing.
    A site is kept iff its centre lies inside the closed square.
    """
    cfg.validate()
    side = cfg.area_side_m
    isd = cfg.inter_site_distance_m
    row_h = isd * math.sqrt(3.0) / 2.0
    sites = []
    r = 0
    while True:
        y = row_h / 2.0 + r * row_h
        if y > side:
            break
        x = isd / 2.0 + (isd / 2.0 if r % 2 else 0.0)
        x -= math.floor(x / isd) * isd  # leftmost lattice point with x >= 0
        while x <= side:
            sites.append((x, y))
            x += isd
        r += 1
    if not sites:
        raise ValueError("empty grid")
    return np.array(sites, dtype=float)


def place_satellite(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(beam_centre_xy, spacecraft_xyz)``.

    The beam is centred on the study area; the sub-satellite point is offset
    along -x so that the elevation at the beam centre is the configured one.
    """
    cfg.validate()
    h = cfg.satellite_altitude_km * 1e3
    c = cfg.area_side_m / 2.0
    elev = math.radians(cfg.satellite_elevation_deg)
    offset = 0.0 if cfg.satellite_elevation_deg == 90.0 else h / math.tan(elev)
    return np.array([c, c]), np.array([c - offset, c, h])


def deploy_ues(cfg: ScenarioConfig, grid: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hot-spot plus uniform UE drop.  Returns ``(xy, hotspot_flag, anchor)``."""
    if len(grid) == 0:
        raise ValueError("empty grid")
    rng = np.random.default_rng([int(seed), 0])
    side = cfg.area_side_m
    n = cfg.n_ues
    n_hot = int(round(cfg.hotspot_ue_fraction * n))
    n_hot_bs = int(round(cfg.hotspot_bs_fraction * len(grid)))
    if n_hot > 0:
        n_hot_bs = max(n_hot_bs, 1)
    else:
        n_hot_bs = 0
    hot_bs = np.sort(rng.choice(len(grid), size=n_hot_bs, replace=False)) if n_hot_bs else np.zeros(0, int)

    xy = np.empty((n, 2))
    anchor = np.full(n, -1, dtype=int)
    hot = np.zeros(n, dtype=bool)
    for i in range(n_hot):
        a = int(hot_bs[rng.integers(n_hot_bs)])
        # rejection keeps the UE inside the area and inside the disk
        while True:
            rad = cfg.hotspot_radius_m * math.sqrt(rng.random())
            ang = 2.0 * math.pi * rng.random()
            p = grid[a] + rad * np.array([math.cos(ang), math.sin(ang)])
            if 0.0 <= p[0] <= side and 0.0 <= p[1] <= side:
                break
        xy[i] = p
        anchor[i] = a
        hot[i] = True
    xy[n_hot:] = rng.uniform(0.0, side, size=(n - n_hot, 2))
    return xy, hot, anchor


def build_topology(cfg: ScenarioConfig, seed: int | None = None, *,
                   max_power_dbm: tuple[float, float] = (17.7, 15.8),
                   gain_dbi: tuple[float, float] = (14.0, 30.0)) -> Topology:
    """Full deployment.  ``max_power_dbm`` and ``gain_dbi`` are (macro, satellite)."""
    cfg.validate()
    seed = cfg.rng_seed if seed is None else seed
    grid = build_hex_grid(cfg)
    ue_xy, hot, anchor = deploy_ues(cfg, grid, seed)
    m = len(grid)
    bs_xy = [grid]
    tier = [np.full(m, MACRO)]
    pmax = [np.full(m, max_power_dbm[0])]
    gain = [np.full(m, gain_dbi[0])]
    sat_xyz = np.zeros((0, 3))
    if cfg.with_satellite:
        centre, sat_xyz = place_satellite(cfg)
        bs_xy.append(centre[None, :])
        tier.append(np.array([SATELLITE]))
        pmax.append(np.array([max_power_dbm[1]]))
        gain.append(np.array([gain_dbi[1]]))
        sat_xyz = sat_xyz[None, :]
    return Topology(
        bs_xy=np.vstack(bs_xy),
        bs_tier=np.concatenate(tier).astype(int),
        bs_max_power_dbm=np.concatenate(pmax).astype(float),
        bs_gain_dbi=np.concatenate(gain).astype(float),
        ue_xy=ue_xy,
        ue_hotspot=hot,
        ue_anchor=anchor,
        area_side_m=cfg.area_side_m,
        sat_xyz=sat_xyz,
        sat_altitude_m=cfg.satellite_altitude_km * 1e3,
        sat_elevation_deg=cfg.satellite_elevation_deg,
    )


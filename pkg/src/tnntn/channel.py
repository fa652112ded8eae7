"""Large-scale channel gains for macro and satellite links.

Gains are built in dB and converted to linear once.  Losses are positive dB
numbers; the shadowing draw is a zero-mean normal added as a loss, so its sign
convention is immaterial.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .scenario import ConfigError, Topology

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def fspl_db(distance_m, freq_hz):
    """Free-space path loss 20 log10(4 pi d f / c)."""
    d = np.asarray(distance_m, dtype=float)
    return 20.0 * np.log10(4.0 * math.pi * d * freq_hz / SPEED_OF_LIGHT)


@dataclass(frozen=True)
class ChannelParams:
    """Parameterised log-distance / LoS-probability channel.

    Terrestrial path loss is ``intercept + 10 n log10(d / 1 m)`` per LoS
    state.  The default coefficients follow the rural-macro slopes (about 22
    and 39 dB/decade at 2 GHz) with intercepts set so that a reference-scale
    deployment leaves a few percent of UEs below the -120 dBm threshold when
    served by macros only.
    """

    carrier_freq_ghz: float = 2.0
    tn_los_exponent: float = 2.2
    tn_nlos_exponent: float = 3.86
    tn_los_intercept_db: float = 72.0
    tn_nlos_intercept_db: float = 56.0
    tn_shadow_sigma_los_db: float = 4.0
    tn_shadow_sigma_nlos_db: float = 8.0
    ntn_shadow_sigma_los_db: float = 0.0
    ntn_shadow_sigma_nlos_db: float = 12.0
    clutter_loss_db: float = 19.5
    scintillation_loss_db: float = 2.2
    # P_LoS(d) = exp(-max(d - d0, 0) / d1)
    tn_los_d0_m: float = 10.0
    tn_los_d1_m: float = 1000.0
    # P_LoS(theta) = 1 - a exp(-theta / b), theta in degrees
    ntn_los_a: float = 0.357
    ntn_los_b_deg: float = 20.2
    tn_antenna_gain_dbi: float = 14.0
    ntn_antenna_gain_dbi: float = 30.0
    min_distance_m: float = 10.0

    def validate(self, prefix: str = "channel") -> "ChannelParams":
        if not self.carrier_freq_ghz > 0:
            raise ConfigError(f"{prefix}.carrier_freq_ghz", "must be > 0")
        for name in ("tn_shadow_sigma_los_db", "tn_shadow_sigma_nlos_db",
                     "ntn_shadow_sigma_los_db", "ntn_shadow_sigma_nlos_db",
                     "clutter_loss_db", "scintillation_loss_db", "tn_los_d0_m"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{prefix}.{name}", "must be >= 0")
        for name in ("tn_los_exponent", "tn_nlos_exponent", "tn_los_d1_m",
                     "ntn_los_b_deg", "min_distance_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}", "must be > 0")
        if not 0.0 <= self.ntn_los_a <= 1.0:
            raise ConfigError(f"{prefix}.ntn_los_a", "must lie in [0, 1]")
        return self

    @property
    def carrier_freq_hz(self) -> float:
        return self.carrier_freq_ghz * 1e9


@dataclass(frozen=True)
class ChannelState:
    """Linear large-scale gains ``beta[i, j]`` (UE i, BS j), fixed for a run."""

    beta: np.ndarray
    los: np.ndarray
    sat_mask: np.ndarray
    rng_seed: int | None = None

    @property
    def n_ues(self) -> int:
        return self.beta.shape[0]

    @property
    def n_bs(self) -> int:
        return self.beta.shape[1]

    def to_csv(self, path) -> None:
        """Row = UE, column = BS; linear gains at full double precision."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ue"] + [("sat" if s else "bs") + str(j) for j, s in enumerate(self.sat_mask)])
            for i, row in enumerate(self.beta):
                w.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ChannelState":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        sat = np.array([h.startswith("sat") for h in rows[0][1:]])
        beta = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(beta=beta, los=np.ones_like(beta, dtype=bool), sat_mask=sat)


def tn_los_probability(distance_m, params: ChannelParams):
    d = np.asarray(distance_m, dtype=float)
    return np.exp(-np.maximum(d - params.tn_los_d0_m, 0.0) / params.tn_los_d1_m)


def ntn_los_probability(elevation_deg, params: ChannelParams):
    th = np.asarray(elevation_deg, dtype=float)
    return 1.0 - params.ntn_los_a * np.exp(-th / params.ntn_los_b_deg)


def tn_pathloss_db(distance_m, los, params: ChannelParams):
    d = np.asarray(distance_m, dtype=float)
    n = np.where(los, params.tn_los_exponent, params.tn_nlos_exponent)
    a = np.where(los, params.tn_los_intercept_db, params.tn_nlos_intercept_db)
    return a + 10.0 * n * np.log10(d)


def _clamp_distance(d, params: ChannelParams):
    d = np.asarray(d, dtype=float)
    small = d < params.min_distance_m
    if np.any(small):
        log.info("clamping %d link distance(s) below %.1f m", int(np.sum(small)), params.min_distance_m)
        d = np.maximum(d, params.min_distance_m)
    return d


def terrestrial_gain_db(distance_m, params: ChannelParams, rng=None, *, los=None, shadow_db=None,
                        gain_dbi=None):
    """G_TX - PL - SF in dB.  Missing ``los``/``shadow_db`` are drawn from ``rng``."""
    d = _clamp_distance(distance_m, params)
    if los is None:
        los = rng.random(d.shape) < tn_los_probability(d, params)
    los = np.asarray(los, dtype=bool)
    if shadow_db is None:
        sigma = np.where(los, params.tn_shadow_sigma_los_db, params.tn_shadow_sigma_nlos_db)
        shadow_db = sigma * rng.standard_normal(d.shape)
    g = params.tn_antenna_gain_dbi if gain_dbi is None else gain_dbi
    return g - tn_pathloss_db(d, los, params) - shadow_db


def terrestrial_gain(distance_m, params: ChannelParams, rng=None, **kw):
    return db_to_linear(terrestrial_gain_db(distance_m, params, rng, **kw))


def satellite_gain_db(slant_range_m, elevation_deg, params: ChannelParams, rng=None, *,
                      los=None, shadow_db=None, gain_dbi=None):
    """G_TX - FSPL - SF - CL (NLoS only) - PL_s in dB."""
    d = np.asarray(slant_range_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("slant range must be positive")
    if los is None:
        los = rng.random(d.shape) < ntn_los_probability(elevation_deg, params)
    los = np.asarray(los, dtype=bool)
    if shadow_db is None:
        sigma = np.where(los, params.ntn_shadow_sigma_los_db, params.ntn_shadow_sigma_nlos_db)
        shadow_db = sigma * rng.standard_normal(d.shape)
    g = params.ntn_antenna_gain_dbi if gain_dbi is None else gain_dbi
    clutter = np.where(los, 0.0, params.clutter_loss_db)
    return (g - fspl_db(d, params.carrier_freq_hz) - shadow_db - clutter
            - params.scintillation_loss_db)


def satellite_gain(slant_range_m, elevation_deg, params: ChannelParams, rng=None, **kw):
    return db_to_linear(satellite_gain_db(slant_range_m, elevation_deg, params, rng, **kw))


def build_channel_state(topology: Topology, params: ChannelParams, seed: int) -> ChannelState:
    """Draw LoS states and shadowing for every (UE, BS) pair."""
    params.validate()
    rng = np.random.default_rng([int(seed), 1])
    k, b = topology.n_ues, topology.n_bs
    sat = topology.sat_mask
    beta_db = np.empty((k, b))
    los = np.zeros((k, b), dtype=bool)

    macro_idx = np.flatnonzero(~sat)
    d = np.sqrt(np.sum((topology.ue_xy[:, None, :] - topology.bs_xy[None, macro_idx, :]) ** 2, axis=-1))
    d = _clamp_distance(d, params)
    los_t = rng.random(d.shape) < tn_los_probability(d, params)
    sig_t = np.where(los_t, params.tn_shadow_sigma_los_db, params.tn_shadow_sigma_nlos_db)
    sf_t = sig_t * rng.standard_normal(d.shape)
    beta_db[:, macro_idx] = terrestrial_gain_db(d, params, los=los_t, shadow_db=sf_t,
                                                gain_dbi=topology.bs_gain_dbi[macro_idx])
    los[:, macro_idx] = los_t

    sat_idx = np.flatnonzero(sat)
    if len(sat_idx):
        slant = topology.slant_range_m()
        elev = topology.elevation_deg()
        los_s = rng.random(slant.shape) < ntn_los_probability(elev, params)
        sig_s = np.where(los_s, params.ntn_shadow_sigma_los_db, params.ntn_shadow_sigma_nlos_db)
        sf_s = sig_s * rng.standard_normal(slant.shape)
        beta_db[:, sat_idx] = satellite_gain_db(slant, elev, params, los=los_s, shadow_db=sf_s,
                                                gain_dbi=topology.bs_gain_dbi[sat_idx])
        los[:, sat_idx] = los_s

    beta = db_to_linear(beta_db)
    beta.setflags(write=False)
    los.setflags(write=False)
    return ChannelState(beta=beta, los=los, sat_mask=sat.copy(), rng_seed=int(seed))

"""SINR, Shannon rate, RSRP and the sum-log-throughput (SLT) objective.

Association is carried as ``serving``: an int vector with the serving BS
index of each UE.  :func:`assoc_matrix` expands it to the binary matrix X
when the matrix form is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ConfigError

OBJECTIVE_VARIANTS = ("paper", "bandwidth-only")


@dataclass(frozen=True)
class RadioConfig:
    total_bandwidth_hz: float = 40e6
    subcarrier_spacing_hz: float = 15e3
    noise_density_dbm_per_hz: float = -174.0
    coverage_threshold_dbm: float = -120.0
    tn_max_power_per_re_dbm: float = 17.7
    ntn_max_power_per_re_dbm: float = 15.8
    # "paper": log(eps * R) with R already using W*eps; "bandwidth-only": log(R)
    objective_variant: str = "paper"

    def validate(self, prefix: str = "radio") -> "RadioConfig":
        for name in ("total_bandwidth_hz", "subcarrier_spacing_hz"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}", "must be > 0")
        if self.objective_variant not in OBJECTIVE_VARIANTS:
            raise ConfigError(f"{prefix}.objective_variant",
                              f"must be one of {OBJECTIVE_VARIANTS}, got {self.objective_variant!r}")
        return self

    @property
    def noise_power_w(self) -> float:
        """Noise power over one resource element."""
        dbm = self.noise_density_dbm_per_hz + 10.0 * np.log10(self.subcarrier_spacing_hz)
        return float(10.0 ** ((dbm - 30.0) / 10.0))

    @property
    def p_min_w(self) -> float:
        return float(10.0 ** ((self.coverage_threshold_dbm - 30.0) / 10.0))

    def p_max_w(self, sat_mask) -> np.ndarray:
        dbm = np.where(sat_mask, self.ntn_max_power_per_re_dbm, self.tn_max_power_per_re_dbm)
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def split_exponent(self) -> int:
        """Power of the split factor inside log(.) of the objective."""
        return 2 if self.objective_variant == "paper" else 1


def dbm_to_w(x):
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


def w_to_dbm(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float)) + 30.0


def assoc_matrix(serving, n_bs: int) -> np.ndarray:
    serving = np.asarray(serving)
    x = np.zeros((len(serving), n_bs), dtype=np.int8)
    x[np.arange(len(serving)), serving] = 1
    return x


def loads(serving, n_bs: int) -> np.ndarray:
    return np.bincount(np.asarray(serving), minlength=n_bs)


def interference_matrix(beta, p, sat_mask) -> np.ndarray:
    """(K, B): total same-tier received power at UE i excluding BS j itself."""
    rx = beta * p[None, :]
    tier_total = np.where(sat_mask[None, :],
                          rx[:, sat_mask].sum(axis=1, keepdims=True),
                          rx[:, ~sat_mask].sum(axis=1, keepdims=True))
    return tier_total - rx


def sinr_matrix(beta, p, sat_mask, noise_w) -> np.ndarray:
    """gamma[i, j] = beta_ij p_j / (sum of same-tier others + noise)."""
    p = np.asarray(p, dtype=float)
    return beta * p[None, :] / (interference_matrix(beta, p, sat_mask) + noise_w)


def sinr(ue: int, bs: int, beta, p, sat_mask, noise_w) -> float:
    """Scalar SINR of one link; interferers are the other BSs of the same tier."""
    p = np.asarray(p, dtype=float)
    same = np.flatnonzero(sat_mask == sat_mask[bs])
    others = same[same != bs]
    interf = float(np.sum(beta[ue, others] * p[others]))
    return float(beta[ue, bs] * p[bs] / (interf + noise_w))


def tier_bandwidth(epsilon: float, sat_mask, total_bw: float) -> np.ndarray:
    return np.where(sat_mask, total_bw * epsilon, total_bw * (1.0 - epsilon))


def split_factor(epsilon: float, sat_mask) -> np.ndarray:
    return np.where(sat_mask, epsilon, 1.0 - epsilon)


def rate(gamma, bandwidth_hz, k_j):
    """(W_j / k_j) log2(1 + gamma) in bit/s."""
    k_j = np.asarray(k_j, dtype=float)
    if np.any(k_j <= 0):
        raise ValueError("unloaded BS rate undefined")
    return np.asarray(bandwidth_hz) / k_j * np.log2(1.0 + np.asarray(gamma))


def rsrp_dbm(beta, p):
    """Per-RE received power 10 log10(beta p) + 30."""
    return w_to_dbm(np.asarray(beta) * np.asarray(p))


def served_sinr(serving, p, beta, sat_mask, noise_w) -> np.ndarray:
    serving = np.asarray(serving)
    idx = np.arange(len(serving))
    p = np.asarray(p, dtype=float)
    rx = beta * p[None, :]
    sat_ue = sat_mask[serving]
    tier_total = np.where(sat_ue, rx[:, sat_mask].sum(axis=1), rx[:, ~sat_mask].sum(axis=1))
    sig = rx[idx, serving]
    return sig / (tier_total - sig + noise_w)


def served_rates(serving, epsilon, p, channel, radio: RadioConfig, k=None) -> np.ndarray:
    """Per-UE Shannon rate on the serving link.  ``k`` defaults to the
    integer loads implied by ``serving``."""
    serving = np.asarray(serving)
    sat = channel.sat_mask
    if k is None:
        k = loads(serving, channel.n_bs)
    gamma = served_sinr(serving, p, channel.beta, sat, radio.noise_power_w)
    bw = tier_bandwidth(epsilon, sat, radio.total_bandwidth_hz)[serving]
    kj = np.maximum(np.asarray(k, dtype=float)[serving], 1e-300)
    return bw / kj * np.log2(1.0 + gamma)


def utility_terms(serving, epsilon, p, channel, radio: RadioConfig, k=None) -> np.ndarray:
    """Per-UE log(split * R) (paper) or log(R) (bandwidth-only); -inf if R <= 0."""
    r = served_rates(serving, epsilon, p, channel, radio, k)
    if radio.objective_variant == "paper":
        r = r * split_factor(epsilon, channel.sat_mask)[np.asarray(serving)]
    with np.errstate(divide="ignore"):
        return np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), -np.inf)


def network_slt(serving, epsilon, p, channel, radio: RadioConfig, k=None, mask=None) -> float:
    """Sum over UEs of the natural-log utility of the serving link.

    ``mask`` restricts the sum (e.g. to covered UEs).  Any included UE with a
    non-positive rate makes the result ``-inf``.
    """
    u = utility_terms(serving, epsilon, p, channel, radio, k)
    if mask is not None:
        u = u[np.asarray(mask, dtype=bool)]
    if np.any(np.isneginf(u)):
        return -np.inf
    return float(np.sum(u))


def covered(serving, p, channel, radio: RadioConfig) -> np.ndarray:
    """Coverage test in linear watts: p_j beta_ij >= p_min."""
    serving = np.asarray(serving)
    rx = np.asarray(p, dtype=float)[serving] * channel.beta[np.arange(len(serving)), serving]
    return rx >= radio.p_min_w

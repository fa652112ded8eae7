"""Stage 2: per-BS power control under fixed association and split.

Diagonal-Hessian Newton ascent on the SLT, projected onto the box
[tau_j, p_max_j] where tau_j is the smallest power that keeps every UE served
by BS j at or above the coverage threshold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .linkmodel import RadioConfig, network_slt, served_sinr
from .scenario import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerOptions:
    max_iter: int = 100
    tol: float = 1e-6
    delta0: float = 1.0
    line_search: bool = True
    max_backtracks: int = 40

    def validate(self, prefix: str = "power") -> "PowerOptions":
        if self.max_iter < 1:
            raise ConfigError(f"{prefix}.max_iter", "must be >= 1")
        if self.max_backtracks < 0:
            raise ConfigError(f"{prefix}.max_backtracks", "must be >= 0")
        for name in ("tol", "delta0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}", "must be > 0")
        return self


@dataclass
class PowerBox:
    tau: np.ndarray
    p_max: np.ndarray
    infeasible: dict = field(default_factory=dict)  # bs -> list of UEs it cannot cover

    @property
    def feasible(self) -> bool:
        return not self.infeasible


@dataclass
class PowerResult:
    p: np.ndarray
    slt: float
    box: PowerBox
    trajectory: list
    iterations: int
    converged: bool


def _same_tier_others(serving, sat_mask) -> np.ndarray:
    """(K, B) mask: BS j is in UE i's serving tier and is not its server."""
    serving = np.asarray(serving)
    m = sat_mask[None, :] == sat_mask[serving][:, None]
    m[np.arange(len(serving)), serving] = False
    return m


def _link_terms(p, serving, channel, radio: RadioConfig):
    serving = np.asarray(serving)
    p = np.asarray(p, dtype=float)
    gamma = served_sinr(serving, p, channel.beta, channel.sat_mask, radio.noise_power_w)
    r = np.log1p(gamma)
    if np.any(r <= 0):
        raise ValueError("zero-rate served link")
    b_own = channel.beta[np.arange(len(serving)), serving]
    return gamma, r, b_own, p[serving]


def slt_gradient(p, serving, epsilon, channel, radio: RadioConfig) -> np.ndarray:
    """Analytic dSLT/dp_j: own-signal term minus same-tier interference term."""
    serving = np.asarray(serving)
    gamma, r, b_own, p_own = _link_terms(p, serving, channel, radio)
    g = np.zeros(channel.n_bs)
    np.add.at(g, serving, gamma / (r * (1.0 + gamma)) / p_own)
    coef = gamma ** 2 / (b_own * r * (1.0 + gamma) * p_own)
    cross = coef[:, None] * channel.beta * _same_tier_others(serving, channel.sat_mask)
    return g - cross.sum(axis=0)


def slt_hessian_diag(p, serving, epsilon, channel, radio: RadioConfig) -> np.ndarray:
    """Analytic d2SLT/dp_j^2 (diagonal only)."""
    serving = np.asarray(serving)
    gamma, r, b_own, p_own = _link_terms(p, serving, channel, radio)
    h = np.zeros(channel.n_bs)
    own = -(1.0 / r ** 2 + 1.0 / r) * gamma ** 2 / (1.0 + gamma) ** 2 / p_own ** 2
    np.add.at(h, serving, own)
    coef = (gamma ** 3 * (2.0 * r + gamma * (r - 1.0))
            / (b_own ** 2 * r ** 2 * (1.0 + gamma) ** 2 * p_own ** 2))
    cross = coef[:, None] * channel.beta ** 2 * _same_tier_others(serving, channel.sat_mask)
    return h + cross.sum(axis=0)


def newton_step(grad, hess_diag, fallback_step: float = 1.0) -> np.ndarray:
    """grad / |hess|; plain gradient step where the curvature vanishes."""
    grad = np.asarray(grad, dtype=float)
    hess = np.abs(np.asarray(hess_diag, dtype=float))
    flat = hess == 0
    out = np.where(flat, fallback_step * grad, grad / np.where(flat, 1.0, hess))
    return np.where(flat & (grad == 0), 0.0, out)


def coverage_lower_bounds(serving, channel, radio: RadioConfig, usable=None) -> PowerBox:
    """tau_j = max over served UEs of p_min / beta_ij; 0 for unloaded BSs.

    tau is nudged up by ulps where needed so that tau_j * beta_ij >= p_min
    holds exactly in floating point.  A BS whose tau exceeds p_max is
    recorded as infeasible and its tau is clamped to p_max.
    """
    serving = np.asarray(serving)
    p_min = radio.p_min_w
    p_max = radio.p_max_w(channel.sat_mask)
    b_own = channel.beta[np.arange(len(serving)), serving]
    need = p_min / b_own
    tau = np.zeros(channel.n_bs)
    np.maximum.at(tau, serving, need)
    for j in np.unique(serving):
        bj = b_own[serving == j]
        while np.any(tau[j] * bj < p_min):
            tau[j] = np.nextafter(tau[j], np.inf)
    infeasible = {}
    for j in np.flatnonzero(tau > p_max):
        infeasible[int(j)] = [int(i) for i in np.flatnonzero((serving == j) & (need > p_max[j]))]
    if infeasible:
        log.info("coverage infeasible at %d BS(s); tau clamped to p_max", len(infeasible))
    tau = np.minimum(tau, p_max)
    return PowerBox(tau=tau, p_max=p_max, infeasible=infeasible)


def _summary(t, slt, p, sat):
    return dict(t=t, slt=slt, mean_p=float(np.mean(p)),
                mean_p_macro=float(np.mean(p[~sat])) if np.any(~sat) else float("nan"),
                mean_p_sat=float(np.mean(p[sat])) if np.any(sat) else float("nan"))


def solve_power(p0, serving, epsilon, channel, radio: RadioConfig,
                opts: PowerOptions = PowerOptions()) -> PowerResult:
    """Projected diagonal-Newton ascent with step delta0 / sqrt(t).

    With ``line_search`` the step is halved until the SLT does not decrease;
    if no halving helps the iteration stops at the current point.
    """
    serving = np.asarray(serving)
    sat = channel.sat_mask
    box = coverage_lower_bounds(serving, channel, radio)
    p = np.clip(np.asarray(p0, dtype=float), box.tau, box.p_max)

    def f(x):
        return network_slt(serving, epsilon, x, channel, radio)

    cur = f(p)
    traj = [_summary(0, cur, p, sat)]
    converged = False
    t = 0
    for t in range(1, opts.max_iter + 1):
        g = slt_gradient(p, serving, epsilon, channel, radio)
        h = slt_hessian_diag(p, serving, epsilon, channel, radio)
        step = newton_step(g, h)
        delta = opts.delta0 / math.sqrt(t)
        trial = np.clip(p + delta * step, box.tau, box.p_max)
        val = f(trial)
        if opts.line_search:
            n_bt = 0
            while val < cur and n_bt < opts.max_backtracks:
                delta *= 0.5
                trial = np.clip(p + delta * step, box.tau, box.p_max)
                val = f(trial)
                n_bt += 1
            if val < cur:
                converged = True
                break
        change = abs(val - cur)
        p, cur = trial, val
        traj.append(_summary(t, cur, p, sat))
        if change < opts.tol * abs(cur):
            converged = True
            break
    return PowerResult(p=p, slt=cur, box=box, trajectory=traj, iterations=t, converged=converged)

"""Stage 1: association, load and bandwidth split under fixed power.

The Lagrangian relaxes the coverage, load-consistency, total-load and
``eps <= 1`` constraints with multipliers ``lam`` (per UE), ``mu`` (per BS),
``alpha`` and ``rho``.  Each iteration maximises it in closed form (argmax
association, exponential load, quadratic-root split) and takes a projected
subgradient step on the multipliers.

Because the relaxed association is not feasible in general, every iterate is
also turned into a primal point: UEs that could be covered but are not get
moved to their best-scoring covering BS, loads are recounted, and the split is
set to the SLT-optimal ``K_S / K``.  The best such point is returned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linkmodel import (RadioConfig, loads, network_slt, sinr_matrix, split_factor,
                        tier_bandwidth, w_to_dbm)
from .scenario import ConfigError

log = logging.getLogger(__name__)

EPS_MIN = 1e-6


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step delta0 / sqrt(t), t >= 1."""

    delta0: float

    def __call__(self, t: int) -> float:
        if t < 1:
            raise ValueError("iteration index starts at 1")
        return self.delta0 / math.sqrt(t)


@dataclass(frozen=True)
class DualOptions:
    max_iter: int = 200
    tol: float = 1e-4
    window: int = 5
    epsilon0: float = 0.5
    delta_mu: float = 0.02    # 0.1 lets empty-BS prices collapse and flood the satellite
    delta_lambda: float = 1e-2
    delta_alpha: float | None = None  # None -> 0.1 / K
    delta_rho: float = 0.1
    rho0: float = 1.0
    coverage_residual: str = "db"      # "db" | "linear"
    rho_update: str = "paper"          # "paper" | "slackness"
    fixed_epsilon: float | None = None
    mu_init: str = "zero"              # "zero" | "loads"

    def validate(self, prefix: str = "dual") -> "DualOptions":
        if self.max_iter < 1 or self.window < 1:
            raise ConfigError(f"{prefix}.max_iter", "max_iter and window must be >= 1")
        for name in ("tol", "delta_mu", "delta_lambda", "delta_rho"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{prefix}.{name}", "must be > 0")
        if self.delta_alpha is not None and not self.delta_alpha > 0:
            raise ConfigError(f"{prefix}.delta_alpha", "must be > 0")
        if self.rho0 < 0:
            raise ConfigError(f"{prefix}.rho0", "must be >= 0")
        if not 0.0 < self.epsilon0 < 1.0:
            raise ConfigError(f"{prefix}.epsilon0", "must lie in (0, 1)")
        for name, allowed in (("coverage_residual", ("db", "linear")),
                              ("rho_update", ("paper", "slackness")),
                              ("mu_init", ("loads", "zero"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{prefix}.{name}", f"must be one of {allowed}")
        if self.fixed_epsilon is not None and not 0.0 <= self.fixed_epsilon <= 1.0:
            raise ConfigError(f"{prefix}.fixed_epsilon", "must lie in [0, 1]")
        return self

    def schedules(self, n_ues: int) -> tuple[StepSchedule, ...]:
        d3 = self.delta_alpha if self.delta_alpha is not None else 0.1 / max(n_ues, 1)
        return (StepSchedule(self.delta_mu), StepSchedule(self.delta_lambda),
                StepSchedule(d3), StepSchedule(self.delta_rho))


@dataclass
class DualState:
    lam: np.ndarray
    mu: np.ndarray
    alpha: float = 0.0
    rho: float = 1.0
    t: int = 0

    @classmethod
    def initial(cls, n_ues: int, n_bs: int, rho0: float = 1.0) -> "DualState":
        return cls(lam=np.zeros(n_ues), mu=np.zeros(n_bs), alpha=0.0, rho=rho0, t=0)

    def copy(self) -> "DualState":
        return replace(self, lam=self.lam.copy(), mu=self.mu.copy())


@dataclass
class AssociationResult:
    serving: np.ndarray
    k: np.ndarray          # integer loads of ``serving``
    epsilon: float
    slt: float
    dual: DualState
    trajectory: list = field(default_factory=list)
    converged: bool = False
    feasible: bool = True
    infeasible_events: int = 0


def link_quality(channel, p, radio: RadioConfig, mode: str = "db"):
    """Coverage quantity per link and its threshold: RSRP in dBm, or watts."""
    rx = channel.beta * np.asarray(p, dtype=float)[None, :]
    if mode == "db":
        return w_to_dbm(rx), radio.coverage_threshold_dbm
    if mode == "linear":
        return rx, radio.p_min_w
    raise ValueError(f"unknown coverage residual mode {mode!r}")


def _coverage_term(lam, q) -> np.ndarray:
    """lam_i * q_ij, with links of zero received power pinned to -inf."""
    with np.errstate(invalid="ignore"):
        return np.where(np.isneginf(q), -np.inf, lam[:, None] * q)


def _log_full_rate(channel, p, radio: RadioConfig, usable) -> np.ndarray:
    """log(W log2(1 + gamma)), -inf on unusable links."""
    gamma = sinr_matrix(channel.beta, np.asarray(p, dtype=float), channel.sat_mask, radio.noise_power_w)
    r = radio.total_bandwidth_hz * np.log2(1.0 + gamma)
    ok = usable[None, :] & (r > 0)
    with np.errstate(divide="ignore"):
        return np.where(ok, np.log(np.where(ok, r, 1.0)), -np.inf)


def score_matrix(channel, p, radio: RadioConfig, dual: DualState, epsilon: float, k,
                 usable=None, mode: str = "db", quality=None) -> np.ndarray:
    """Derivative of the Lagrangian w.r.t. every x_ij.

    log(split_j * R_ij) + lam_i * q_ij - mu_j with R_ij = W_j / k_j log2(1+gamma_ij)
    and ``k`` floored at 1.  Links with zero rate score -inf.
    """
    sat = channel.sat_mask
    usable = np.ones(channel.n_bs, bool) if usable is None else np.asarray(usable, bool)
    gamma = sinr_matrix(channel.beta, np.asarray(p, dtype=float), sat, radio.noise_power_w)
    bw = tier_bandwidth(epsilon, sat, radio.total_bandwidth_hz)
    kk = np.maximum(np.asarray(k, dtype=float), 1.0)
    r = (bw / kk)[None, :] * np.log2(1.0 + gamma)
    if radio.objective_variant == "paper":
        r = r * split_factor(epsilon, sat)[None, :]
    ok = usable[None, :] & (r > 0)
    with np.errstate(divide="ignore"):
        s = np.where(ok, np.log(np.where(ok, r, 1.0)), -np.inf)
    if quality is None:
        quality, _ = link_quality(channel, p, radio, mode)
    return s + _coverage_term(dual.lam, quality) - dual.mu[None, :]


def association_score(i: int, j: int, channel, p, radio: RadioConfig, dual: DualState,
                      epsilon: float, k, mode: str = "db") -> float:
    """Single-link version of :func:`score_matrix` (reference path)."""
    sat = channel.sat_mask
    p = np.asarray(p, dtype=float)
    same = np.flatnonzero(sat == sat[j])
    others = same[same != j]
    gamma = channel.beta[i, j] * p[j] / (np.sum(channel.beta[i, others] * p[others]) + radio.noise_power_w)
    w_j = radio.total_bandwidth_hz * (epsilon if sat[j] else 1.0 - epsilon)
    r = w_j / max(float(k[j]), 1.0) * math.log2(1.0 + gamma)
    if radio.objective_variant == "paper":
        r *= epsilon if sat[j] else 1.0 - epsilon
    if r <= 0:
        return -math.inf
    rx = channel.beta[i, j] * p[j]
    q = 10.0 * math.log10(rx) + 30.0 if mode == "db" else rx
    return math.log(r) + dual.lam[i] * q - dual.mu[j]


def optimal_association(scores) -> np.ndarray:
    """Row-wise argmax, ties to the lowest BS index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if np.any(np.all(np.isneginf(scores), axis=1)):
        raise ValueError("UE infeasible at current duals")
    return np.argmax(scores, axis=1)


def optimal_load(mu, alpha: float, n_ues: int) -> np.ndarray:
    """exp(mu_j - alpha - 1) clamped to [0, K]."""
    expo = np.asarray(mu, dtype=float) - alpha - 1.0
    cap = math.log(n_ues) if n_ues > 0 else -math.inf
    if np.any(expo > cap):
        log.debug("load exponent above log K for %d BS(s); clamping", int(np.sum(expo > cap)))
    return np.where(expo > cap, float(n_ues), np.exp(np.minimum(expo, cap)))


def _epsilon_root(n: float, n_s: float, rho: float) -> float:
    """Smaller root of rho e^2 - (K + rho) e + K_S = 0, in cancellation-free form.

    2 K_S / (K + rho + sqrt(...)) equals (K + rho - sqrt(...)) / (2 rho) and
    tends to K_S / K as rho -> 0.
    """
    b = n + rho
    disc = max(b * b - 4.0 * rho * n_s, 0.0)
    return 2.0 * n_s / (b + math.sqrt(disc))


def optimal_epsilon(n_ues: int, n_sat: int, rho: float) -> float:
    """Bandwidth share of the satellite tier maximising the split terms."""
    if n_ues <= 0:
        raise ValueError("empty network")
    if not 0 <= n_sat <= n_ues:
        raise ValueError("K_S must lie in [0, K]")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if n_sat == 0:
        return 0.0
    if n_sat == n_ues:
        return 1.0
    e = _epsilon_root(float(n_ues), float(n_sat), float(rho))
    return min(max(e, EPS_MIN), 1.0 - EPS_MIN)


def dual_update(dual: DualState, serving, k_star, epsilon_star: float, quality_served, q_min: float,
                opts: DualOptions, n_bs: int) -> DualState:
    """One projected subgradient step on all four multipliers."""
    n_ues = len(serving)
    t = dual.t + 1
    d1, d2, d3, d4 = (s(t) for s in opts.schedules(n_ues))
    assigned = loads(serving, n_bs)
    mu = dual.mu - d1 * (k_star - assigned)
    lam = np.maximum(dual.lam - d2 * (quality_served - q_min), 0.0)
    alpha = dual.alpha - d3 * (n_ues - float(np.sum(k_star)))
    if opts.fixed_epsilon is not None:
        rho = dual.rho
    elif opts.rho_update == "paper":
        rho = max(dual.rho + d4 * epsilon_star, 0.0)
    elif opts.rho_update == "slackness":
        rho = max(dual.rho - d4 * (1.0 - epsilon_star), 0.0)
    else:
        raise ValueError(f"unknown rho_update {opts.rho_update!r}")
    return DualState(lam=lam, mu=mu, alpha=alpha, rho=rho, t=t)


def dual_value(channel, p, radio: RadioConfig, dual: DualState, usable=None, mode: str = "db",
               fixed_epsilon: float | None = None) -> float:
    """Exact Lagrangian dual function at the given multipliers.

    The load terms use the decoupled form ``-k_j log k_j``, which coincides
    with the SLT whenever k_j = sum_i x_ij.  The joint maximum over (X, eps)
    is found exactly: for a given number of satellite UEs K_S the best set is
    the K_S UEs with the largest satellite-over-macro advantage, and the best
    split for that K_S is a closed-form root.
    """
    sat = channel.sat_mask
    n = channel.n_ues
    usable = np.ones(channel.n_bs, bool) if usable is None else np.asarray(usable, bool)
    q, q_min = link_quality(channel, p, radio, mode)
    a = _log_full_rate(channel, p, radio, usable) + _coverage_term(dual.lam, q) - dual.mu[None, :]
    c = radio.split_exponent

    # k-part: max over k in [0, K] of (mu - alpha) k - k log k
    kk = optimal_load(dual.mu, dual.alpha, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        klogk = np.where(kk > 0, kk * np.log(np.where(kk > 0, kk, 1.0)), 0.0)
    k_part = float(np.sum((dual.mu - dual.alpha) * kk - klogk))
    const = dual.alpha * n - float(np.sum(dual.lam)) * q_min + dual.rho

    if fixed_epsilon is not None:
        with np.errstate(divide="ignore"):
            w = np.log(split_factor(fixed_epsilon, sat))
        best = np.max(a + c * w[None, :], axis=1)
        return float(np.sum(best)) + k_part + const - dual.rho * fixed_epsilon

    a_s = np.max(a[:, sat], axis=1) if np.any(sat) else np.full(n, -np.inf)
    a_t = np.max(a[:, ~sat], axis=1) if np.any(~sat) else np.full(n, -np.inf)
    with np.errstate(invalid="ignore"):
        adv = np.where(np.isneginf(a_s), -np.inf, np.where(np.isneginf(a_t), np.inf, a_s - a_t))
    order = np.argsort(-adv, kind="stable")
    s_sorted, t_sorted = a_s[order], a_t[order]
    prefix_s = np.concatenate([[0.0], np.cumsum(s_sorted)])
    suffix_t = np.concatenate([np.cumsum(t_sorted[::-1])[::-1], [0.0]])
    best = -np.inf
    for n_s in range(n + 1):
        base = prefix_s[n_s] + suffix_t[n_s]
        if not np.isfinite(base):
            continue
        n_t = n - n_s
        if n_s == 0:
            h = 0.0
        elif n_t == 0:
            e = 1.0 if dual.rho <= c * n else c * n / dual.rho
            h = c * n * math.log(e) - dual.rho * e
        else:
            e = _epsilon_root(float(n), float(n_s), dual.rho / c)
            h = c * (n_s * math.log(e) + n_t * math.log1p(-e)) - dual.rho * e
        best = max(best, base + h)
    return best + k_part + const


def max_rsrp_serving(channel, p, usable=None) -> np.ndarray:
    rx = channel.beta * np.asarray(p, dtype=float)[None, :]
    if usable is not None:
        rx = np.where(np.asarray(usable, bool)[None, :], rx, -np.inf)
    return np.argmax(rx, axis=1)


def _repair(serving, scores, covers, coverable, rx) -> tuple[np.ndarray, int]:
    """Move coverable-but-uncovered UEs to their best-scoring covering BS."""
    idx = np.arange(len(serving))
    bad = coverable & ~covers[idx, serving]
    if not np.any(bad):
        return serving, 0
    out = serving.copy()
    masked = np.where(covers[bad], scores[bad], -np.inf)
    # a covering link may still score -inf (zero rate); fall back to strongest covering link
    alt = np.argmax(masked, axis=1)
    dead = np.all(np.isneginf(masked), axis=1)
    if np.any(dead):
        strongest = np.argmax(np.where(covers[bad], rx[bad], -np.inf), axis=1)
        alt[dead] = strongest[dead]
    out[bad] = alt
    return out, int(np.sum(bad))


def solve_association(channel, p, radio: RadioConfig, opts: DualOptions = DualOptions(),
                      usable=None, init_serving=None, init_dual: DualState | None = None,
                      init_epsilon: float | None = None, on_iter=None) -> AssociationResult:
    """Subgradient iterations of the dual problem with primal recovery.

    Starts from max-RSRP association and ``opts.epsilon0`` unless a warm
    start is given.  Each iteration maximises the Lagrangian (X*, k*, eps*),
    repairs X* into a coverage-feasible association, and records the repaired
    primal: its SLT, its split K_S/K under ``epsilon`` and the dual iterate
    eps* under ``epsilon_dual``.  Stops when the recovered SLT changes by less
    than ``tol`` (relative) over ``window`` iterations, or at ``max_iter``;
    the best feasible primal seen is returned.

    ``on_iter``, if given, is called once per iteration with a dict holding
    the pre-update dual state, X*, k*, eps*, the dual value and the repaired
    association.
    """
    p = np.asarray(p, dtype=float)
    sat = channel.sat_mask
    n, b = channel.n_ues, channel.n_bs
    usable = np.ones(b, bool) if usable is None else np.asarray(usable, bool).copy()
    fixed = opts.fixed_epsilon
    if fixed is not None:
        if fixed <= 0.0:
            usable &= ~sat
        if fixed >= 1.0:
            usable &= sat
    mode = opts.coverage_residual
    quality, q_min = link_quality(channel, p, radio, mode)
    rx = channel.beta * p[None, :]
    covers = (rx >= radio.p_min_w) & usable[None, :]
    coverable = np.any(covers, axis=1)

    serving = max_rsrp_serving(channel, p, usable) if init_serving is None else np.asarray(init_serving).copy()
    if init_dual is not None:
        dual = init_dual.copy()
    else:
        dual = DualState.initial(n, b, opts.rho0)
        if opts.mu_init == "loads":
            # prices at which the load rule reproduces the starting loads
            dual.mu = 1.0 + np.log(np.maximum(loads(serving, b), 1.0))
    eps_iter = fixed if fixed is not None else (opts.epsilon0 if init_epsilon is None else init_epsilon)
    k_prev = loads(serving, b).astype(float)

    def primal_eps(srv):
        if fixed is not None:
            return fixed
        return optimal_epsilon(n, int(np.sum(sat[srv])), 0.0)

    def feasible(srv):
        return bool(np.all(covers[np.arange(n), srv] | ~coverable))

    slt0 = network_slt(serving, eps_iter, p, channel, radio)
    best = (slt0, serving.copy(), eps_iter)
    feas0 = feasible(serving)
    cand = network_slt(serving, primal_eps(serving), p, channel, radio)
    if feas0 and cand > best[0]:
        best = (cand, serving.copy(), primal_eps(serving))
    best_feasible = feas0
    trajectory = [dict(t=0, slt=slt0, epsilon=eps_iter, epsilon_dual=eps_iter, sat_fraction=float(np.mean(sat[serving])),
                       dual_value=float("nan"), lam_norm=0.0, mu_norm=0.0,
                       alpha=dual.alpha, rho=dual.rho, repaired=0, feasible=feas0)]
    converged = False
    infeasible_events = 0
    for _ in range(opts.max_iter):
        eps_score = eps_iter if fixed is not None else min(max(eps_iter, EPS_MIN), 1.0 - EPS_MIN)
        scores = score_matrix(channel, p, radio, dual, eps_score, k_prev, usable, mode, quality)
        dead = np.all(np.isneginf(scores), axis=1)
        if np.any(dead):
            infeasible_events += int(np.sum(dead))
            x_star = np.argmax(scores, axis=1)
            x_star[dead] = max_rsrp_serving(channel, p, usable)[dead]
        else:
            x_star = optimal_association(scores)
        k_star = optimal_load(dual.mu, dual.alpha, n)
        if fixed is None:
            n_s = int(np.sum(sat[x_star]))
            eps_star = optimal_epsilon(n, n_s, dual.rho / radio.split_exponent)
        else:
            eps_star = fixed
        d_val = dual_value(channel, p, radio, dual, usable, mode, fixed)

        serving, n_rep = _repair(x_star, scores, covers, coverable, rx)
        eps_p = primal_eps(serving)
        slt = network_slt(serving, eps_p, p, channel, radio)
        feas = feasible(serving)
        if feas and (slt > best[0] or not best_feasible):
            best = (slt, serving.copy(), eps_p)
            best_feasible = True

        if on_iter is not None:
            on_iter(dict(t=dual.t + 1, dual=dual, x_star=x_star, k_star=k_star, eps_star=eps_star,
                         n_sat_star=int(np.sum(sat[x_star])), dual_value=d_val,
                         serving=serving, slt=slt, feasible=feas))
        q_served = quality[np.arange(n), x_star]
        dual = dual_update(dual, x_star, k_star, eps_star, q_served, q_min, opts, b)
        k_prev = k_star
        eps_iter = eps_star
        trajectory.append(dict(t=dual.t, slt=slt, epsilon=eps_p, epsilon_dual=eps_star,
                               sat_fraction=float(np.mean(sat[serving])), dual_value=float(d_val),
                               lam_norm=float(np.linalg.norm(dual.lam)),
                               mu_norm=float(np.linalg.norm(dual.mu)),
                               alpha=dual.alpha, rho=dual.rho, repaired=n_rep, feasible=feas))
        if len(trajectory) > opts.window:
            ref = trajectory[-1 - opts.window]["slt"]
            if np.isfinite(slt) and abs(slt - ref) <= opts.tol * abs(slt):
                converged = True
                break
    if not converged:
        log.warning("association did not converge in %d iterations; returning best-so-far", opts.max_iter)
    slt, srv, eps = best
    return AssociationResult(serving=srv, k=loads(srv, b), epsilon=eps, slt=slt, dual=dual,
                             trajectory=trajectory, converged=converged, feasible=best_feasible,
                             infeasible_events=infeasible_events)

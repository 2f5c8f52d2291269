"""Tail estimation, decay-rate fitting and empirical audits of the urn bounds."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .drift import DriftProfile, equilibrium_solve
from .exact import dp_rows, tail_mass
from .model import iterate_batch, sample_z
from .streams import trial_batches

Z99 = float(stats.norm.ppf(0.995))
MONTE_CARLO = "MonteCarlo"
EXACT = "Exact"


@dataclass(frozen=True)
class TailEstimate:
    n: int
    eps: float
    trials: int
    hits: int
    p_hat: float
    ci_half_width: float
    provenance: str = MONTE_CARLO

    def __post_init__(self):
        if not 0 <= self.hits <= max(self.trials, 0) and self.provenance == MONTE_CARLO:
            raise ValueError("hits must lie in [0, trials]")

    @property
    def se(self):
        if self.provenance == EXACT or self.trials == 0:
            return 0.0
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.trials)


def _ci99(hits, trials, exact_ci):
    p = hits / trials
    if exact_ci and hits < 10:
        lo = stats.beta.ppf(0.005, hits, trials - hits + 1) if hits > 0 else 0.0
        hi = stats.beta.ppf(0.995, hits + 1, trials - hits) if hits < trials else 1.0
        return float(max(p - lo, hi - p))
    return Z99 * math.sqrt(p * (1 - p) / trials)


def _estimate(n, eps, hits, trials, exact_ci):
    hits = int(hits)
    return TailEstimate(n, eps, trials, hits, hits / trials, _ci99(hits, trials, exact_ci))


def mc_tail_grid(config, y_star, ns, eps_list, trials, seed, threads=1, exact_ci=False):
    """Monte Carlo P(|Z_n - y*| > eps) for every (n, eps) pair from one set of paths."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps must be positive")
    ns = [int(n) for n in ns]
    z = sample_z(config, ns, trials, seed, threads)
    out = []
    for j, n in enumerate(ns):
        dev = np.abs(z[:, j] - y_star)
        for eps in eps_list:
            out.append(_estimate(n, eps, np.count_nonzero(dev > eps), trials, exact_ci))
    return out


def mc_tail_estimate(config, y_star, n, eps, trials, seed, threads=1, exact_ci=False):
    return mc_tail_grid(config, y_star, [n], [eps], trials, seed, threads, exact_ci)[0]


def exact_tail_grid(config, y_star, ns, eps_list):
    """Exact counterparts of :func:`mc_tail_grid` (one DP pass)."""
    out = []
    for dist in dp_rows(config, ns):
        for eps in eps_list:
            out.append(TailEstimate(dist.n, eps, 0, 0, tail_mass(dist, eps, y_star), 0.0, EXACT))
    return out


# ---------------------------------------------------------------------------
# decay-rate fit


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    points: tuple
    a_hat: float
    log_c_hat: float
    r_squared: float
    points_used: int
    points_zero: int


def rate_fit(estimates, zero_policy="exclude"):
    """Least-squares fit of log p = log C - a n.

    Zero estimates are dropped and counted (``zero_policy="exclude"``) or
    replaced by the rule-of-three bound 3/trials (``"rule_of_three"``).
    """
    pts, zeros = [], 0
    for e in estimates:
        if isinstance(e, TailEstimate):
            n, p, trials = e.n, e.p_hat, e.trials
        else:
            (n, p), trials = e, 0
        if p > 0:
            pts.append((n, p))
        else:
            zeros += 1
            if zero_policy == "rule_of_three" and trials > 0:
                pts.append((n, 3.0 / trials))
    if len(pts) < 3:
        raise InsufficientPointsError(f"need >= 3 positive points, got {len(pts)}")
    n = np.array([q[0] for q in pts], dtype=float)
    logp = np.log([q[1] for q in pts])
    res = stats.linregress(n, logp)
    r2 = min(max(res.rvalue**2, 0.0), 1.0) if np.ptp(logp) > 0 else 1.0
    return RateFit(tuple(pts), float(-res.slope), float(res.intercept), float(r2), len(pts), zeros)


# ---------------------------------------------------------------------------
# explicit martingale-sum bound


@dataclass(frozen=True)
class Lemma31Params:
    beta: float
    k: int
    n: int
    eps: float
    big_k: float
    matrix: object

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not 0 < self.k <= self.n:
            raise ValueError("need 0 < k <= n")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.eps > self.eps_max:
            raise ValueError(f"eps={self.eps} exceeds the admissible {self.eps_max:.6g}")
        if self.big_k < 0:
            raise ValueError("K must be nonnegative")

    @property
    def h_min(self):
        return min(self.matrix.h1, self.matrix.h2)

    @property
    def h_sum(self):
        return self.matrix.h1 + self.matrix.h2

    @property
    def eps_max(self):
        return 4 * self.beta * self.h_sum**2 / self.h_min * math.log(self.beta)


@dataclass(frozen=True)
class Lemma31Terms:
    s: float
    drift_term: float
    numerator: float
    denominator: float
    t: float
    chernoff_ok: bool
    bound: float


def lemma31_terms(params):
    """All intermediate quantities of the bound, including the Chernoff check.

    ``t`` is the exponential-moment parameter; the quadratic bound on exp
    used to derive the inequality needs ``t*A/(B*k) <= log(beta)``.
    """
    a = 4 * params.h_sum
    b = 2 * params.h_min
    s = math.fsum(1.0 / i**2 for i in range(params.k, params.n + 1))
    drift = params.big_k / b**2 * s
    num = params.eps - drift
    den = 2 * params.beta * a**2 / b**2 * s
    if num <= 0 or s == 0:
        return Lemma31Terms(s, drift, num, den, math.nan, False, 2.0)
    t = num / (params.beta * a**2 / b**2 * s)
    ok = t * a / (b * params.k) <= math.log(params.beta)
    bound = min(2.0, 2.0 * math.exp(-(num**2) / den)) if ok else 2.0
    return Lemma31Terms(s, drift, num, den, t, ok, bound)


def lemma31_bound(params):
    """Upper bound on P(|sum_{i=k}^{n} dM_{i+1}/T_{i+1}| >= eps); 2 when not applicable."""
    return lemma31_terms(params).bound


# ---------------------------------------------------------------------------
# path audits


def k_bound(matrix):
    """Analytic cap on |E[dM/T_{n+1} | F_n]| * T_n^2 over all states."""
    spread = max(abs(matrix.h11 - matrix.h12), abs(matrix.h22 - matrix.h21))
    return abs(matrix.h2 - matrix.h1) * spread / 4.0


def _cond_mean_dm_over_t(step, matrix):
    h1, h2 = matrix.h1, matrix.h2
    l1 = matrix.h11 - step.z * h1
    l2 = matrix.h12 - step.z * h2
    p = step.p
    mean = p * l1 + (1 - p) * l2
    return p * (l1 - mean) / (step.t + h1) + (1 - p) * (l2 - mean) / (step.t + h2)


def _martingale_sums_block(config, k, n, seed, start, count):
    acc = np.zeros(count)
    for step in iterate_batch(config, n + 1, seed, start, count):
        if step.m >= k:
            acc += step.delta_m / step.t_next
    return acc


def _map_blocks(fn, trials, n_steps, threads):
    chunks = trial_batches(trials, max(n_steps, 1))
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def martingale_sums(config, k, n, paths, seed, threads=1):
    """sum_{i=k}^{n} dM_{i+1}/T_{i+1} for each of ``paths`` trials."""
    blocks = _map_blocks(
        lambda c: _martingale_sums_block(config, k, n, seed, c[0], c[1]), paths, n + 1, threads
    )
    return np.concatenate(blocks)


def martingale_sum_exceedance(config, k, n, eps, paths, seed, threads=1):
    sums = martingale_sums(config, k, n, paths, seed, threads)
    return float(np.mean(np.abs(sums) >= eps)), sums


@dataclass
class BoundCheck:
    check_id: str
    description: str
    status: str
    worst_value: float
    worst_step: int
    violations: int = 0


@dataclass
class BoundReport:
    checks: list
    k_hat: float
    k_hat_per_path: np.ndarray
    y_star: float | None
    paths: int
    n: int
    extras: dict = field(default_factory=dict)

    def by_id(self, check_id):
        return next(c for c in self.checks if c.check_id == check_id)

    @property
    def ok(self):
        return all(c.status != "fail" for c in self.checks)


class _Worst:
    """Running maximum of a ratio with the step where it occurred."""

    def __init__(self):
        self.value, self.step, self.violations = -math.inf, -1, 0

    def update(self, ratios, step, limit=1.0, tol=1e-12):
        i = int(np.argmax(ratios))
        if ratios[i] > self.value:
            self.value, self.step = float(ratios[i]), step
        self.violations += int(np.count_nonzero(ratios > limit + tol))


def _audit_block(config, n, seed, start, count, profile, y_star, eps_list):
    m_ = config.matrix
    h1, h2 = float(m_.h1), float(m_.h2)
    hmin, hmax, hs = min(h1, h2), max(h1, h2), h1 + h2
    t0 = float(config.t0)
    w = {key: _Worst() for key in ("dm", "h", "env_lo", "env_hi", "lit", "step")}
    k_path = np.zeros(count)
    k_step = np.full(count, -1)
    incl = {e: [0, 0, 0, 0] for e in eps_list}  # antecedents/violations, upper and lower
    for s in iterate_batch(config, n, seed, start, count):
        m = s.m
        w["dm"].update(np.abs(s.delta_m) / (4 * hs), m)
        w["h"].update(np.abs(profile.h_values(s.z)) / (2 * hs), m)
        kk = np.abs(_cond_mean_dm_over_t(s, m_)) * s.t**2
        better = kk > k_path
        k_path = np.where(better, kk, k_path)
        k_step = np.where(better, m, k_step)
        grown = s.t_next - t0
        steps = m + 1
        w["env_lo"].update(np.atleast_1d(steps * hmin / grown), m + 1)
        w["env_hi"].update(np.atleast_1d(grown / (steps * hmax)), m + 1)
        w["lit"].update(np.maximum(2 * steps * hmin / s.t_next, s.t_next / (2 * steps * hmax)), m + 1)
        dz = np.abs(s.z_next - s.z)
        w["step"].update(dz / (3 * hs / ((m + 1) * hmin)), m)
        if y_star is not None:
            for e in eps_list:
                if m > 12 * hs / (e * hmin):
                    ante = s.z - y_star <= e / 2
                    incl[e][0] += int(ante.sum())
                    incl[e][1] += int(np.count_nonzero(ante & (s.z_next - y_star > 0.75 * e)))
                if m > 12 * hs / (e * hmax):
                    ante = s.z - y_star >= -e / 2
                    incl[e][2] += int(ante.sum())
                    incl[e][3] += int(np.count_nonzero(ante & (s.z_next - y_star < -0.75 * e)))
    return w, k_path, k_step, incl


def bound_verification(config, n, paths, seed, eps_list=(0.05, 0.1, 0.2), y_star=None, threads=1):
    """Simulate ``paths`` trials of ``n`` draws and audit every per-step bound.

    ``worst_value`` is the largest observed ratio to the bound (so <= 1
    passes), except for the conditional-mean check where it is the fitted K.
    The literal form 2n*min(H) <= T_n <= 2n*max(H) is reported as ``info``:
    it cannot hold for large n when T_0 is small, unlike the exact envelope.
    """
    if paths < 1:
        raise ValueError("paths must be >= 1")
    profile = DriftProfile(config.matrix, config.skew)
    if y_star is None:
        y_star = equilibrium_solve(profile).y_star
    blocks = _map_blocks(
        lambda c: _audit_block(config, n, seed, c[0], c[1], profile, y_star, eps_list),
        paths, n, threads,
    )
    merged = {}
    for key in blocks[0][0]:
        agg = _Worst()
        for b in blocks:
            part = b[0][key]
            agg.violations += part.violations
            if part.value > agg.value:
                agg.value, agg.step = part.value, part.step
        merged[key] = agg
    k_path = np.concatenate([b[1] for b in blocks])
    k_step = np.concatenate([b[2] for b in blocks])
    k_hat = float(k_path.max())
    cap = k_bound(config.matrix)

    def status(worst):
        return "pass" if worst.violations == 0 else "fail"

    checks = [
        BoundCheck("b3_martingale_increment", "|dM_{n+1}| <= 4(H1+H2)",
                   status(merged["dm"]), merged["dm"].value, merged["dm"].step, merged["dm"].violations),
        BoundCheck("b6_conditional_mean", f"sup |E[dM/T_(n+1) | F_n]| * T_n^2 (analytic cap {cap:.6g})",
                   "pass" if math.isfinite(k_hat) and k_hat <= cap * (1 + 1e-9) + 1e-15 else "fail",
                   k_hat, int(k_step[int(np.argmax(k_path))]), 0),
        BoundCheck("b2_drift_bound", "|h(Z_n)| <= 2(H1+H2)",
                   status(merged["h"]), merged["h"].value, merged["h"].step, merged["h"].violations),
        BoundCheck("b1_envelope_lower", "n*min(H1,H2) <= T_n - T_0",
                   status(merged["env_lo"]), merged["env_lo"].value, merged["env_lo"].step,
                   merged["env_lo"].violations),
        BoundCheck("b1_envelope_upper", "T_n - T_0 <= n*max(H1,H2)",
                   status(merged["env_hi"]), merged["env_hi"].value, merged["env_hi"].step,
                   merged["env_hi"].violations),
        BoundCheck("b1_literal", "2n*min(H1,H2) <= T_n <= 2n*max(H1,H2) (informational)",
                   "info", merged["lit"].value, merged["lit"].step, merged["lit"].violations),
        BoundCheck("step_bound", "|Z_{k+1}-Z_k| <= 3(H1+H2)/((k+1)*min(H1,H2))",
                   status(merged["step"]), merged["step"].value, merged["step"].step,
                   merged["step"].violations),
    ]
    inclusion = {}
    if y_star is not None:
        incl = {e: [sum(b[3][e][i] for b in blocks) for i in range(4)] for e in eps_list}
        for e, (au, vu, al, vl) in incl.items():
            inclusion[e] = {"upper_antecedents": au, "upper_violations": vu,
                            "lower_antecedents": al, "lower_violations": vl}
            checks.append(BoundCheck(
                f"step_inclusion_eps={e:g}",
                "Z_k-y*<=eps/2 => Z_(k+1)-y*<=3eps/4 and Z_k-y*>=-eps/2 => Z_(k+1)-y*>=-3eps/4",
                "pass" if vu + vl == 0 else "fail", float(vu + vl), -1, vu + vl,
            ))
    return BoundReport(checks, k_hat, k_path, y_star, paths, n,
                       {"k_cap": cap, "inclusions": inclusion})

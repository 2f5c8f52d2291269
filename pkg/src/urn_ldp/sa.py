"""Stochastic approximation X_{n+1} = X_n + gamma_{n+1} (g(X_n) + U_{n+1}).

Synthetic problems pair a drift with a deterministic step schedule and an
i.i.d. bounded noise built from one uniform per step; the urn is recast as
an instance whose step size 1/T_{n+1} and noise dM_{n+1} come from the draw.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drift import DriftProfile, drift_eval, equilibrium_solve
from .ldp import TailEstimate, _ci99, k_bound
from .model import (
    MAX_PATH_STEPS,
    ResourceLimitError,
    conditional_increment_stats,
    urn_step,
)
from .streams import check_seed, trial_batches, trial_rng, uniform_block


class RangeViolation(ValueError):
    """A bounded recursion left [0, 1]."""


# ---------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class HarmonicSchedule:
    """gamma_n = scale / (n + offset)."""

    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, n):
        return self.scale / (n + self.offset)


@dataclass(frozen=True)
class RademacherNoise:
    bound: float = 1.0
    mean: float = 0.0

    def from_uniform(self, u):
        return np.where(u < 0.5, -self.bound, self.bound) if isinstance(u, np.ndarray) else (
            -self.bound if u < 0.5 else self.bound
        )


@dataclass(frozen=True)
class UniformNoise:
    bound: float = 1.0
    mean: float = 0.0

    def from_uniform(self, u):
        return self.bound * (2.0 * u - 1.0)


@dataclass(frozen=True)
class ZeroNoise:
    bound: float = 0.0
    mean: float = 0.0

    def from_uniform(self, u):
        return np.zeros_like(u) if isinstance(u, np.ndarray) else 0


@dataclass(frozen=True)
class TanhDrift:
    """g(x) = -strength * tanh(x - x_star); limits -strength at +inf, +strength at -inf."""

    strength: float
    x_star: float = 0.0

    def __call__(self, x):
        # np.tanh for scalars too, so batch and scalar runs agree bitwise
        out = -self.strength * np.tanh(x - self.x_star)
        return out if isinstance(x, np.ndarray) else float(out)


@dataclass(frozen=True)
class LinearDrift:
    slope: float
    x_star: float = 0.5

    def __call__(self, x):
        return -self.slope * (x - self.x_star)


class _IIDInnovations:
    def __init__(self, schedule, noise, rng):
        self.schedule, self.noise, self.rng = schedule, noise, rng

    def conditional_mean(self, n, x):
        return self.schedule(n + 1) * self.noise.mean

    def advance(self, n, x):
        return self.schedule(n + 1), self.noise.from_uniform(self.rng.random())


class UrnInnovations:
    """Step size 1/T_{n+1} and noise dM_{n+1} produced by one urn draw."""

    def __init__(self, config, rng, exact):
        self.config, self.rng = config, rng
        self.state = config.initial_state(exact)

    def conditional_mean(self, n, x):
        c = self.config
        return conditional_increment_stats(self.state, c.matrix, c.skew).cond_mean_dm_over_t

    def advance(self, n, x):
        c = self.config
        self.state, rec = urn_step(self.state, c.matrix, c.skew, self.rng)
        return rec.gamma, rec.delta_m


@dataclass(frozen=True)
class SAProblem:
    drift: Callable
    x0: float
    bounded: bool
    schedule: Callable | None = None
    noise: object = None
    innovations: Callable | None = None
    u_l: float | None = None
    u_u: float | None = None
    k_g: float | None = None
    k_u: float | None = None
    k_e: float | None = None
    k_gl: float | None = None
    k_gu: float | None = None
    x_star: float | None = None
    name: str = ""

    def start(self, rng):
        if self.innovations is not None:
            return self.innovations(rng)
        return _IIDInnovations(self.schedule, self.noise, rng)

    @property
    def vectorizable(self):
        return self.innovations is None


def synthetic_problem(drift, noise, x0, schedule=None, bounded=False, x_star=None, name=""):
    """SA problem with i.i.d. noise and a harmonic-type schedule.

    Declared constants come from the parts: schedule bounds for n >= 1,
    ``K_u`` from the noise bound, ``K_e = 0`` (mean-zero noise with a
    deterministic step), and drift limits for tanh drifts.
    """
    schedule = schedule or HarmonicSchedule()
    if isinstance(schedule, HarmonicSchedule):
        ends = (schedule.scale, schedule.scale / (1 + schedule.offset))
        u_l, u_u = min(ends), max(ends)
    else:
        u_l = u_u = None
    k_gl = k_gu = k_g = None
    if isinstance(drift, TanhDrift):
        k_gl = k_gu = drift.strength
    if bounded:
        k_g = max(abs(drift(0.0)), abs(drift(1.0)))
    if x_star is None:
        x_star = getattr(drift, "x_star", None)
    return SAProblem(
        drift=drift, x0=x0, bounded=bounded, schedule=schedule, noise=noise,
        u_l=u_l, u_u=u_u, k_g=k_g, k_u=noise.bound, k_e=0.0,
        k_gl=k_gl, k_gu=k_gu, x_star=x_star, name=name,
    )


def urn_as_sa(config, exact=None, k_hat=None):
    """Recast the urn proportion as an SA recursion.

    ``g = h``, ``gamma_{n+1} = 1/T_{n+1}`` and ``U_{n+1} = dM_{n+1}``.  With
    T_0 + n*min(H) <= T_n <= T_0 + n*max(H) the schedule constants are
    ``u_l = 1/(T_0 + max H)`` and ``u_u = 1/min H``; ``K_e`` is the
    conditional-mean constant K (analytic cap unless ``k_hat`` is given)
    divided by min(H)^2.
    """
    if exact is None:
        exact = config.supports_exact
    m = config.matrix
    hmin, hmax, hs = min(m.h1, m.h2), max(m.h1, m.h2), m.h1 + m.h2
    profile = DriftProfile(m, config.skew)
    big_k = k_bound(m) if k_hat is None else k_hat
    return SAProblem(
        drift=lambda x: drift_eval(profile, x),
        x0=config.initial_state(exact).z,
        bounded=True,
        innovations=lambda rng: UrnInnovations(config, rng, exact),
        u_l=1 / (config.t0 + hmax),
        u_u=1 / hmin,
        k_g=2 * hs,
        k_u=4 * hs,
        k_e=big_k / hmin**2,
        x_star=equilibrium_solve(profile).y_star,
        name="urn",
    )


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class SAStep:
    n: int
    gamma: float
    noise: float
    drift: float
    cond_mean: float | None


@dataclass
class SATrajectory:
    problem: SAProblem
    seed: int
    states: list
    audit: list
    trial: int = 0


def run_sa(problem, n, seed, trial=0, cap=MAX_PATH_STEPS):
    """Iterate the recursion ``n`` times; a bounded problem leaving [0, 1] raises."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > cap:
        raise ResourceLimitError(f"n={n} exceeds the path cap {cap}")
    inn = problem.start(trial_rng(seed, trial))
    x = problem.x0
    states, audit = [x], []
    for i in range(n):
        cm = inn.conditional_mean(i, x)
        gamma, u = inn.advance(i, x)
        g = problem.drift(x)
        x = x + gamma * (g + u)
        if problem.bounded and not 0 <= x <= 1:
            raise RangeViolation(f"X_{i + 1}={float(x)} left [0, 1]")
        states.append(x)
        audit.append(SAStep(i, gamma, u, g, cm))
    return SATrajectory(problem, check_seed(seed), states, audit, trial)


@dataclass(frozen=True)
class ConditionAudit:
    """``declared``/``observed`` are (lower, upper) pairs for the step-size condition."""

    status: str
    declared: object
    observed: object
    worst_step: int


@dataclass
class AuditReport:
    conditions: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(c.status in ("pass", "not-applicable") for c in self.conditions.values())


def _verdict(observed, declared, tol=1e-12):
    if declared is None:
        return "undeclared"
    return "pass" if observed <= declared * (1 + tol) + tol else "fail"


def condition_audit(trajectory):
    """Check the four SA conditions along a trajectory and report observed constants."""
    p, steps = trajectory.problem, trajectory.audit
    out = AuditReport()
    if not steps:
        return out
    # gamma_{n+1} * (n+1) must lie in [u_l, u_u]
    scaled = [float(s.gamma) * (s.n + 1) for s in steps]
    lo_i = min(range(len(scaled)), key=scaled.__getitem__)
    hi_i = max(range(len(scaled)), key=scaled.__getitem__)
    if p.u_l is None or p.u_u is None:
        st, worst = "undeclared", hi_i
    else:
        low_bad = scaled[lo_i] < p.u_l * (1 - 1e-12)
        high_bad = scaled[hi_i] > p.u_u * (1 + 1e-12)
        st = "fail" if low_bad or high_bad else "pass"
        worst = lo_i if low_bad else hi_i
    out.conditions["sa1"] = ConditionAudit(
        st, (p.u_l, p.u_u), (scaled[lo_i], scaled[hi_i]), worst
    )

    if p.bounded:
        g = [abs(float(s.drift)) for s in steps]
        i = max(range(len(g)), key=g.__getitem__)
        out.conditions["sa2"] = ConditionAudit(_verdict(g[i], p.k_g), p.k_g, g[i], i)
    else:
        out.conditions["sa2"] = ConditionAudit("not-applicable", p.k_g, math.nan, -1)

    u = [abs(float(s.noise)) for s in steps]
    i = max(range(len(u)), key=u.__getitem__)
    out.conditions["sa3"] = ConditionAudit(_verdict(u[i], p.k_u), p.k_u, u[i], i)

    if any(s.cond_mean is None for s in steps):
        out.conditions["sa4"] = ConditionAudit("not-auditable", p.k_e, math.nan, -1)
    else:
        ke = [(abs(float(s.cond_mean)) * s.n**2, s.n) for s in steps if s.n >= 1]
        val, i = max(ke) if ke else (0.0, -1)
        out.conditions["sa4"] = ConditionAudit(_verdict(val, p.k_e), p.k_e, val, i)
    return out


# ---------------------------------------------------------------------------
# tail experiments


def _batch_states(problem, checkpoints, seed, start, count):
    last = max(checkpoints)
    col = {n: j for j, n in enumerate(checkpoints)}
    out = np.empty((count, len(checkpoints)))
    u = uniform_block(seed, start, count, last)
    x = np.full(count, float(problem.x0))
    if 0 in col:
        out[:, col[0]] = x
    for i in range(last):
        gamma = problem.schedule(i + 1)
        x = x + gamma * (problem.drift(x) + problem.noise.from_uniform(u[:, i]))
        if problem.bounded and np.any((x < 0) | (x > 1)):
            raise RangeViolation(f"a trajectory left [0, 1] at step {i + 1}")
        j = col.get(i + 1)
        if j is not None:
            out[:, j] = x
    return out


def sample_states(problem, checkpoints, trials, seed, threads=1):
    """X_n at each checkpoint for every trial; shape (trials, len(checkpoints))."""
    checkpoints = [int(n) for n in checkpoints]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    last = max(checkpoints)
    if not problem.vectorizable:
        rows = []
        for tr in range(trials):
            xs = run_sa(problem, last, seed, trial=tr).states
            rows.append([float(xs[n]) for n in checkpoints])
        return np.array(rows)
    chunks = trial_batches(trials, max(last, 1))
    work = lambda c: _batch_states(problem, checkpoints, seed, c[0], c[1])
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.vstack(list(pool.map(work, chunks)))
    return np.vstack([work(c) for c in chunks])


@dataclass(frozen=True)
class ShapeFit:
    exp_r2: float | None
    stretched_r2: float | None
    stretched_exponent: float | None
    better: str


def _r2(x, y):
    if len(x) < 3 or np.ptp(x) == 0:
        return None, None
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if ss == 0 else max(0.0, 1.0 - np.sum(resid**2) / ss)
    return float(r2), float(slope)


def decay_shape_fit(estimates):
    """Compare log p ~ n (exponential) against log(-log p) ~ log n (stretched)."""
    pts = [(e.n, e.p_hat) for e in estimates if 0 < e.p_hat < 1]
    n = np.array([q[0] for q in pts], dtype=float)
    p = np.array([q[1] for q in pts])
    if len(pts) < 3:
        return ShapeFit(None, None, None, "insufficient-data")
    exp_r2, _ = _r2(n, np.log(p))
    st_r2, c = _r2(np.log(n), np.log(-np.log(p)))
    better = "exponential" if exp_r2 >= st_r2 else "stretched"
    return ShapeFit(exp_r2, st_r2, c, better)


def _predict(bounded, k_lim, k_u):
    if bounded:
        return "exponential", None
    if k_lim is None or k_u is None:
        return "unknown", None
    if k_lim > k_u:
        return "exponential", None
    if k_lim < k_u:
        return "stretched", k_lim / k_u
    return "boundary", None


@dataclass
class RegimeSummary:
    predicted_upper: str
    predicted_lower: str
    upper_exponent: float | None
    lower_exponent: float | None
    upper_fit: ShapeFit
    lower_fit: ShapeFit


@dataclass
class TailExperiment:
    upper: list
    lower: list
    summary: RegimeSummary


def tail_experiment(problem, x_star, n_grid, eps, trials, seed, threads=1):
    """One-sided tails P(X_n - x* > eps) and P(X_n - x* < -eps) over ``n_grid``.

    The predicted regime per side follows from the drift limit against the
    noise bound (K_gl for the upper tail, K_gu for the lower one); the
    empirical shape is whichever of the two decay fits explains the data best.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_grid = [int(n) for n in n_grid]
    x = sample_states(problem, n_grid, trials, seed, threads)
    dev = x - x_star
    upper, lower = [], []
    for j, n in enumerate(n_grid):
        for side, hits in ((upper, np.count_nonzero(dev[:, j] > eps)),
                           (lower, np.count_nonzero(dev[:, j] < -eps))):
            side.append(TailEstimate(n, eps, trials, int(hits), hits / trials,
                                     _ci99(int(hits), trials, False)))
    pu, eu = _predict(problem.bounded, problem.k_gl, problem.k_u)
    pl, el = _predict(problem.bounded, problem.k_gu, problem.k_u)
    summary = RegimeSummary(pu, pl, eu, el, decay_shape_fit(upper), decay_shape_fit(lower))
    return TailExperiment(upper, lower, summary)


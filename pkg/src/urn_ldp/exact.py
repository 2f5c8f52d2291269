"""Exact law of Z_n by dynamic programming over the number of type-1 draws.

After ``m`` draws of which ``k`` were type 1 the urn holds
``y1_0 + k*H11 + (m-k)*H12`` type-1 balls out of ``t_0 + k*H1 + (m-k)*H2``, so
the distribution of Z_m lives on at most ``m + 1`` atoms and the forward
recursion costs O(n^2) time and O(n) memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ResourceLimitError

DP_CAP = 20_000


@dataclass
class ExactDistribution:
    n: int
    k: np.ndarray
    z: np.ndarray
    prob: np.ndarray
    config: object

    @property
    def support(self):
        return list(zip(self.k.tolist(), self.z.tolist(), self.prob.tolist()))

    def total(self):
        return math.fsum(self.prob)


def state_map(config, m):
    """Arrays (k, y1, t, z) of the deterministic state after m draws with k of type 1."""
    mat = config.matrix
    k = np.arange(m + 1, dtype=float)
    y1 = config.y1 + k * mat.h11 + (m - k) * mat.h12
    t = config.t0 + k * mat.h1 + (m - k) * mat.h2
    return k, y1, t, y1 / t


def _check(n, cap):
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > cap:
        raise ResourceLimitError(f"n={n} exceeds the exact-distribution cap {cap}")


def dp_rows(config, ns, cap=DP_CAP):
    """Yield the exact distribution at each requested step, in increasing order."""
    wanted = sorted({int(n) for n in ns})
    if not wanted:
        return
    _check(wanted[-1], cap)
    skew = config.skew
    row = np.ones(1)
    pending = iter(wanted)
    target = next(pending)
    m = 0
    while True:
        if m == target:
            k, _, _, z = state_map(config, m)
            yield ExactDistribution(m, k.astype(int), z, row.copy(), config)
            target = next(pending, None)
            if target is None:
                return
        _, _, _, z = state_map(config, m)
        fz, fc = skew.values(z), skew.values(1.0 - z)
        p = fz / (fz + fc)
        nxt = np.zeros(m + 2)
        nxt[1:] += row * p
        nxt[:-1] += row * (1.0 - p)
        row = nxt
        m += 1


def dp_distribution(config, n, cap=DP_CAP):
    return next(dp_rows(config, [n], cap))


def tail_mass(dist, eps, y_star):
    """P(|Z_n - y*| > eps); atoms exactly at distance eps are excluded."""
    mask = np.abs(dist.z - y_star) > eps
    return math.fsum(dist.prob[mask])


def exact_tail_probability(config, n, eps, y_star, cap=DP_CAP):
    if eps <= 0:
        raise ValueError("eps must be positive")
    return tail_mass(dp_distribution(config, n, cap), eps, y_star)


def exact_moments(config, n, cap=DP_CAP):
    """(mean, variance) of Z_n."""
    d = dp_distribution(config, n, cap)
    mean = math.fsum(d.prob * d.z)
    var = math.fsum(d.prob * (d.z - mean) ** 2)
    return mean, max(var, 0.0)

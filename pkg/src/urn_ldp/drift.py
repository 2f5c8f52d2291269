"""Drift of the urn proportion, its equilibria and the monotonicity conditions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .model import GRID_RESOLUTION, IDENTITY, POWER, DomainError, SkewSpec

DEFAULT_TOL = 1e-12
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class DriftProfile:
    matrix: object
    skew: SkewSpec
    grid_resolution: int = GRID_RESOLUTION

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise ValueError("grid_resolution must be >= 2")

    def grid(self):
        return np.linspace(0.0, 1.0, self.grid_resolution)

    def h(self, y):
        return drift_eval(self, y)

    def h_values(self, ys):
        """Vectorised drift on a float array."""
        m = self.matrix
        ys = np.asarray(ys, dtype=float)
        f, fc = self.skew.values(ys), self.skew.values(1.0 - ys)
        return ((m.h11 - ys * m.h1) * f + (m.h12 - ys * m.h2) * fc) / (f + fc)


def drift_eval(profile, y):
    """h(y): mean one-step change of the proportion, scaled by the total count."""
    if not 0 <= y <= 1:
        raise DomainError(f"drift argument {y} outside [0, 1]")
    m, skew = profile.matrix, profile.skew
    f, fc = skew.value(y), skew.value(1 - y)
    return ((m.h11 - y * m.h1) * f + (m.h12 - y * m.h2) * fc) / (f + fc)


def drift_derivative(profile, y):
    """Closed-form h'(y) built from f and f' (one-sided at the endpoints)."""
    if not 0 <= y <= 1:
        raise DomainError(f"drift argument {y} outside [0, 1]")
    m, skew = profile.matrix, profile.skew
    f, fc = skew.value(y), skew.value(1 - y)
    df, dfc = skew.derivative(y), skew.derivative(1 - y)
    denom = f + fc
    spread = (m.h11 - y * m.h1) - (m.h12 - y * m.h2)
    num = (-m.h1 * f - m.h2 * fc) * denom + (df * fc + f * dfc) * spread
    return num / denom**2


def interval_istar(matrix):
    """Interval [min, max] of H11/H1 and H12/H2 that contains every zero of h."""
    a, b = matrix.h11 / matrix.h1, matrix.h12 / matrix.h2
    return min(a, b), max(a, b)


@dataclass(frozen=True)
class MonotonicityVerdict:
    passed: bool
    worst_increase: float
    worst_pair: tuple
    note: str = (
        "checked on the closed interval [0, 1]; the tail argument only uses "
        "monotonicity on the open interval"
    )


def monotonicity_check(profile, slack=MONOTONE_SLACK):
    """Pass iff no adjacent grid pair has h increasing by more than ``slack``."""
    ys = profile.grid()
    d = np.diff(profile.h_values(ys))
    i = int(np.argmax(d))
    return MonotonicityVerdict(
        passed=bool(d[i] <= slack),
        worst_increase=float(d[i]),
        worst_pair=(float(ys[i]), float(ys[i + 1])),
    )


@dataclass
class EquilibriumReport:
    istar_lo: float
    istar_hi: float
    y_star: float | None
    h_prime_at_root: float | None
    monotone_nonincreasing: bool
    worst_violation: float
    worst_pair: tuple
    stable: bool | None
    sign_pattern: bool | None
    roots_found: list = field(default_factory=list)
    roots_in_istar: bool = True

    @property
    def unique(self):
        return self.y_star is not None


def _sign_brackets(ys, hs):
    roots, brackets = [], []
    for i in range(len(ys) - 1):
        a, b = hs[i], hs[i + 1]
        if a == 0:
            roots.append(float(ys[i]))
        elif a * b < 0:
            brackets.append((float(ys[i]), float(ys[i + 1])))
    if hs[-1] == 0:
        roots.append(float(ys[-1]))
    return roots, brackets


def _local_sign_pattern(profile, y_star, radius=1e-3, points=24):
    """h > 0 just left of y* and h < 0 just right of it (where [0, 1] allows)."""
    offsets = np.geomspace(1e-7, radius, points)
    left = y_star - offsets
    right = y_star + offsets
    left, right = left[left >= 0], right[right <= 1]
    ok_left = bool(np.all(profile.h_values(left) > 0)) if left.size else True
    ok_right = bool(np.all(profile.h_values(right) < 0)) if right.size else True
    return ok_left and ok_right


def equilibrium_solve(profile, tol=DEFAULT_TOL):
    """Locate the zeros of h on [0, 1] by bisection and classify them.

    With a monotone drift a single bisection over [0, 1] is used; otherwise
    every sign change on the grid is refined and all roots are listed, and
    ``y_star`` is only set when exactly one root exists.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lo, hi = interval_istar(profile.matrix)
    mono = monotonicity_check(profile)
    h = lambda y: float(drift_eval(profile, y))
    h0, h1 = h(0.0), h(1.0)
    if mono.passed and h0 > 0 > h1:
        roots = [bisect(h, 0.0, 1.0, xtol=tol)]
    else:
        ys = profile.grid()
        exact_roots, brackets = _sign_brackets(ys, profile.h_values(ys))
        roots = sorted(exact_roots + [bisect(h, a, b, xtol=tol) for a, b in brackets])
    y_star = roots[0] if len(roots) == 1 else None
    hp = stable = pattern = None
    if y_star is not None:
        hp = float(drift_derivative(profile, y_star))
        pattern = _local_sign_pattern(profile, y_star)
        stable = hp < 0 or pattern
    in_istar = all(lo - tol <= r <= hi + tol for r in roots)
    return EquilibriumReport(
        istar_lo=lo,
        istar_hi=hi,
        y_star=y_star,
        h_prime_at_root=hp,
        monotone_nonincreasing=mono.passed,
        worst_violation=mono.worst_increase,
        worst_pair=mono.worst_pair,
        stable=stable,
        sign_pattern=pattern,
        roots_found=roots,
        roots_in_istar=in_istar,
    )


# ---------------------------------------------------------------------------
# closed-form sufficient conditions for a non-increasing drift


@dataclass(frozen=True)
class Inequality:
    name: str
    lhs: float
    rhs: float
    relation: str = "<="

    @property
    def passed(self):
        return self.lhs <= self.rhs if self.relation == "<=" else self.lhs >= self.rhs


@dataclass
class RemarkReport:
    family: str
    checks: list
    passed: bool
    case: int | None = None
    y0: float | None = None
    ratio_ordered: bool = True
    skew_concave: bool | None = None
    concavity_ok: bool = True
    p3_grid_min: float | None = None


class UnsupportedFamilyError(ValueError):
    pass


def _p3(m, y):
    h1, h2 = m.h1, m.h2
    return (h1 + h2) * y**2 + (h1 - 3 * h2) * y + h2 + m.h12 - m.h11


def remark_condition_checks(matrix, skew):
    """Evaluate the closed-form sufficient conditions for h' <= 0.

    Identity skew: h'(0) <= 0 and h'(1) <= 0.  Power(2) skew: the quadratic
    P3 >= 0 on [0, 1], either through the three-point test or through the
    case split on the position of its vertex.  Also reports the concavity
    precondition needed when H11/H1 > H12/H2.
    """
    m = matrix
    h1, h2 = m.h1, m.h2
    ordered = m.h11 / h1 <= m.h12 / h2
    concave = skew.is_concave()
    lin = [
        Inequality("h'(0)<=0: H11 <= H22 + 2*H12", m.h11, m.h22 + 2 * m.h12),
        Inequality("h'(1)<=0: H22 <= H11 + 2*H21", m.h22, m.h11 + 2 * m.h21),
    ]
    if skew.family == IDENTITY:
        return RemarkReport(
            family="Identity",
            checks=lin,
            passed=all(c.passed for c in lin),
            ratio_ordered=ordered,
            skew_concave=concave,
            concavity_ok=ordered or concave,
        )
    if not (skew.family == POWER and skew.p == 2):
        raise UnsupportedFamilyError(f"no closed-form conditions for {skew.label}")

    y0 = (3 * h2 - h1) / (2 * (h1 + h2))
    vertex = Inequality(
        "P3(y0)>=0: 10*H1*H2 + 4*(H12-H11)*(H1+H2) >= 5*H2^2 + H1^2",
        10 * h1 * h2 + 4 * (m.h12 - m.h11) * (h1 + h2),
        5 * h2**2 + h1**2,
        ">=",
    )
    three_point = [
        Inequality("P3(0)>=0: " + lin[0].name.split(": ")[1], lin[0].lhs, lin[0].rhs),
        Inequality("P3(1)>=0: " + lin[1].name.split(": ")[1], lin[1].lhs, lin[1].rhs),
        vertex,
    ]
    if y0 <= 0:
        case = 1
        case_checks = [Inequality("case 1: 3*H2 <= H1", 3 * h2, h1), three_point[0]]
    elif y0 >= 1:
        case = 2
        case_checks = [Inequality("case 2: H2 >= 3*H1", h2, 3 * h1, ">="), three_point[1]]
    else:
        case = 3
        case_checks = [
            Inequality("case 3: H1/3 <= H2", h1 / 3, h2),
            Inequality("case 3: H2 <= 3*H1", h2, 3 * h1),
            vertex,
        ]
    ys = np.linspace(0.0, 1.0, GRID_RESOLUTION)
    p3_min = float(np.min(_p3(m, ys)))
    passed = all(c.passed for c in three_point) or all(c.passed for c in case_checks)
    return RemarkReport(
        family="Power(2)",
        checks=three_point + case_checks,
        passed=passed,
        case=case,
        y0=y0,
        ratio_ordered=ordered,
        skew_concave=concave,
        concavity_ok=ordered or concave,
        p3_grid_min=p3_min,
    )

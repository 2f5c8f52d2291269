"""Two-color nonlinear unbalanced urn: data types, condition checks and dynamics.

The urn holds ``y1`` balls of type 1 and ``y2`` of type 2.  A type-1 ball is
drawn with probability ``f(z) / (f(z) + f(1 - z))`` where ``z = y1 / t`` and
``f`` is the skew function; drawing type ``j`` adds column ``j`` of the
replacement matrix.

Single paths can run in exact rational arithmetic (integer matrix, integer
counts, rational skew), which makes the martingale identities hold exactly.
Monte Carlo work goes through the vectorised float engine ``iterate_batch``.
"""

from __future__ import annotations

import bisect
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real

import numpy as np

from .streams import check_seed, trial_batches, trial_rng, uniform_block

MAX_PATH_STEPS = 1_000_000
MAX_BATCH_STEPS = 100_000
GRID_RESOLUTION = 4097


class DomainError(ValueError):
    """Argument outside the domain of a function (e.g. y not in [0, 1])."""


class ResourceLimitError(RuntimeError):
    """A requested run exceeds a configured size cap."""


def _as_number(x):
    if isinstance(x, bool) or not isinstance(x, Real):
        raise TypeError(f"expected a real number, got {x!r}")
    if isinstance(x, float) and not math.isfinite(x):
        raise ValueError(f"expected a finite number, got {x!r}")
    return x


def _is_integral(x):
    return isinstance(x, int) or (isinstance(x, Fraction) and x.denominator == 1) or (
        isinstance(x, float) and x.is_integer()
    )


def _normalize(x):
    """Integral values become ``int`` so counts stay exact."""
    return int(x) if _is_integral(x) else float(x)


@dataclass(frozen=True)
class ReplacementMatrix:
    """Addition rule: drawing type ``j`` adds ``h1j`` type-1 and ``h2j`` type-2 balls.

    Construction only requires finite numbers; the structural conditions
    (nonnegativity, unbalance, positive off-diagonal) are reported by
    :func:`validate_config` so that invalid matrices can still be examined.
    """

    h11: Real
    h12: Real
    h21: Real
    h22: Real

    def __post_init__(self):
        for name in ("h11", "h12", "h21", "h22"):
            object.__setattr__(self, name, _normalize(_as_number(getattr(self, name))))

    @classmethod
    def from_rows(cls, rows):
        (a, b), (c, d) = rows
        return cls(a, b, c, d)

    @property
    def h1(self):
        """Balls added per type-1 draw (first column sum)."""
        return self.h11 + self.h21

    @property
    def h2(self):
        """Balls added per type-2 draw (second column sum)."""
        return self.h12 + self.h22

    @property
    def is_integral(self):
        return all(isinstance(v, int) for v in self.entries())

    def entries(self):
        return (self.h11, self.h12, self.h21, self.h22)

    def rows(self):
        return [[self.h11, self.h12], [self.h21, self.h22]]

    def column(self, outcome):
        if Outcome(outcome) is Outcome.E1:
            return self.h11, self.h21
        return self.h12, self.h22


# ---------------------------------------------------------------------------
# skew functions


IDENTITY = "identity"
POWER = "power"
MIRROR_POWER = "mirror_power"
TABLE = "table"
FAMILIES = (IDENTITY, POWER, MIRROR_POWER, TABLE)


@dataclass(frozen=True)
class SkewSpec:
    """Drawing-rule function f on [0, 1].

    ``power`` is ``y**p``, ``mirror_power`` is ``1 - (1 - y)**p`` and
    ``table`` interpolates monotone knots piecewise linearly.  A table whose
    values are not increasing can be built (for negative tests) and is
    flagged by :func:`validate_config`; its abscissae must still be strictly
    increasing and span [0, 1].
    """

    family: str
    p: float = 1.0
    knots: tuple = ()
    concave_declared: bool | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown skew family {self.family!r}")
        if self.family in (POWER, MIRROR_POWER):
            p = _normalize(_as_number(self.p))
            object.__setattr__(self, "p", p)
        if self.family == TABLE:
            knots = tuple((_as_number(y), _as_number(v)) for y, v in self.knots)
            if len(knots) < 2:
                raise ValueError("a table skew needs at least two knots")
            ys = [y for y, _ in knots]
            if any(b <= a for a, b in zip(ys, ys[1:])):
                raise ValueError("table knots must have strictly increasing y")
            if ys[0] != 0 or ys[-1] != 1:
                raise ValueError("table knots must span y in [0, 1]")
            object.__setattr__(self, "knots", knots)

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def power(cls, p, concave_declared=None):
        return cls(POWER, p=p, concave_declared=concave_declared)

    @classmethod
    def mirror_power(cls, p, concave_declared=None):
        return cls(MIRROR_POWER, p=p, concave_declared=concave_declared)

    @classmethod
    def table(cls, knots, concave_declared=None):
        return cls(TABLE, knots=tuple(knots), concave_declared=concave_declared)

    @property
    def label(self):
        if self.family == IDENTITY:
            return "Identity"
        if self.family == POWER:
            return f"Power({self.p})"
        if self.family == MIRROR_POWER:
            return f"MirrorPower({self.p})"
        return f"MonotoneTable({len(self.knots)} knots)"

    @property
    def is_rational(self):
        """True when f maps rationals to rationals (exact arithmetic possible)."""
        if self.family in (POWER, MIRROR_POWER):
            return isinstance(self.p, int)
        return True

    def _table_segment(self, y):
        ys = [k[0] for k in self.knots]
        i = bisect.bisect_right(ys, y) - 1
        return min(max(i, 0), len(self.knots) - 2)

    def _knots_for(self, y):
        if isinstance(y, Fraction):
            return [(Fraction(a), Fraction(b)) for a, b in self.knots]
        return self.knots

    def value(self, y):
        if not 0 <= y <= 1:
            raise DomainError(f"skew argument {y} outside [0, 1]")
        fam = self.family
        if fam == IDENTITY:
            return y
        if fam == POWER:
            return y**self.p
        if fam == MIRROR_POWER:
            return 1 - (1 - y) ** self.p
        knots = self._knots_for(y)
        i = self._table_segment(y)
        (y0, f0), (y1, f1) = knots[i], knots[i + 1]
        return f0 + (y - y0) * (f1 - f0) / (y1 - y0)

    def derivative(self, y):
        if not 0 <= y <= 1:
            raise DomainError(f"skew argument {y} outside [0, 1]")
        fam = self.family
        if fam == IDENTITY:
            return 1 if isinstance(y, (int, Fraction)) else 1.0
        if fam == POWER:
            if self.p == 1:
                return 1.0
            return self.p * y ** (self.p - 1)
        if fam == MIRROR_POWER:
            if self.p == 1:
                return 1.0
            return self.p * (1 - y) ** (self.p - 1)
        # right-continuous: at a knot the slope of the segment to its right
        knots = self._knots_for(y)
        i = self._table_segment(y)
        (y0, f0), (y1, f1) = knots[i], knots[i + 1]
        return (f1 - f0) / (y1 - y0)

    def values(self, y):
        """Vectorised ``value`` for float arrays (no exact arithmetic)."""
        y = np.asarray(y, dtype=float)
        if np.any((y < 0) | (y > 1)):
            raise DomainError("skew argument outside [0, 1]")
        fam = self.family
        if fam == IDENTITY:
            return y
        if fam == POWER:
            return np.power(y, float(self.p))
        if fam == MIRROR_POWER:
            return 1.0 - np.power(1.0 - y, float(self.p))
        ys = np.array([float(k[0]) for k in self.knots])
        fs = np.array([float(k[1]) for k in self.knots])
        return np.interp(y, ys, fs)

    def is_concave(self, slack=1e-12):
        if self.concave_declared is not None:
            return bool(self.concave_declared)
        if self.family == IDENTITY:
            return True
        if self.family == POWER:
            return self.p <= 1
        if self.family == MIRROR_POWER:
            return self.p >= 1
        # discrete second differences of the knot slopes
        slopes = [
            (float(b[1]) - float(a[1])) / (float(b[0]) - float(a[0]))
            for a, b in zip(self.knots, self.knots[1:])
        ]
        return all(s2 <= s1 + slack for s1, s2 in zip(slopes, slopes[1:]))


def skew_eval(skew, y):
    return skew.value(y)


def skew_derivative(skew, y):
    return skew.derivative(y)


# ---------------------------------------------------------------------------
# configuration and validation


@dataclass(frozen=True)
class UrnConfig:
    matrix: ReplacementMatrix
    skew: SkewSpec
    y1: Real
    y2: Real

    def __post_init__(self):
        object.__setattr__(self, "y1", _normalize(_as_number(self.y1)))
        object.__setattr__(self, "y2", _normalize(_as_number(self.y2)))

    @property
    def t0(self):
        return self.y1 + self.y2

    @property
    def supports_exact(self):
        return (
            self.matrix.is_integral
            and isinstance(self.y1, int)
            and isinstance(self.y2, int)
            and self.skew.is_rational
        )

    def initial_state(self, exact=False):
        return UrnState.make(0, self.y1, self.y2, exact)


@dataclass(frozen=True)
class ConditionResult:
    code: str
    check: str
    passed: bool
    detail: str
    fatal: bool = True


@dataclass
class ValidationReport:
    results: list = field(default_factory=list)

    @property
    def ok(self):
        return all(r.passed or not r.fatal for r in self.results)

    def failed(self, include_flags=False):
        return [r for r in self.results if not r.passed and (r.fatal or include_flags)]

    def failed_codes(self):
        return sorted({r.code for r in self.failed()})

    def add(self, code, check, passed, detail, fatal=True):
        self.results.append(ConditionResult(code, check, bool(passed), detail, fatal))


def _check_skew(skew, report, grid):
    fam = skew.family
    if fam in (POWER, MIRROR_POWER):
        report.add(
            "C1", "finite_derivatives", skew.p >= 1,
            f"p={skew.p} (p >= 1 keeps one-sided derivatives at 0 and 1 finite)",
        )
    if fam == TABLE:
        fs = [v for _, v in skew.knots]
        strict = all(b > a for a, b in zip(fs, fs[1:]))
        bad = [
            (skew.knots[i][0], skew.knots[i + 1][0])
            for i in range(len(fs) - 1)
            if fs[i + 1] <= fs[i]
        ]
        report.add(
            "C1", "table_knots_increasing", strict,
            "knot values strictly increasing" if strict else f"non-increasing between y in {bad}",
        )
    f0, f1 = skew.value(0.0), skew.value(1.0)
    report.add("C1", "f(0)=0", f0 == 0, f"f(0)={f0}")
    report.add("C1", "f(1)=1", f1 == 1, f"f(1)={f1}")
    ys = np.linspace(0.0, 1.0, grid)
    vals = skew.values(ys)
    diffs = np.diff(vals)
    worst = int(np.argmin(diffs))
    mono = bool(diffs[worst] >= -1e-12)
    report.add(
        "C1", "non_decreasing_on_grid", mono,
        f"min increment {diffs[worst]:.3g} between y={ys[worst]:.6g} and y={ys[worst + 1]:.6g}",
    )
    pos = bool(np.all(vals[1:] > 0))
    report.add("C1", "positive_on_(0,1]", pos, f"min f on (0,1] grid = {vals[1:].min():.3g}")


def validate_config(matrix, skew, y0, grid=GRID_RESOLUTION):
    """Check conditions C1-C4 and return a report (never raises on failure)."""
    y1, y2 = (_as_number(v) for v in y0)
    report = ValidationReport()
    _check_skew(skew, report, grid)

    h1, h2 = matrix.h1, matrix.h2
    report.add("C2", "unbalanced", h1 != h2, f"H1={h1}, H2={h2}")

    entries = matrix.entries()
    report.add("C4", "entries_nonnegative", all(v >= 0 for v in entries), f"H={matrix.rows()}")
    report.add("C4", "not_all_zero", any(v != 0 for v in entries), f"H={matrix.rows()}")
    report.add(
        "C4", "off_diagonal_positive", matrix.h12 > 0 and matrix.h21 > 0,
        f"H12={matrix.h12}, H21={matrix.h21}",
    )

    report.add("C3", "initial_total_positive", y1 >= 0 and y2 >= 0 and y1 + y2 > 0, f"y0=({y1}, {y2})")
    # Z0 in {0, 1}: one color is undrawable at step 1; the positive
    # off-diagonal entries replenish it, so this is flagged, not fatal.
    report.add(
        "C3", "initial_counts_positive", y1 > 0 and y2 > 0,
        f"y0=({y1}, {y2})" + ("" if y1 > 0 and y2 > 0 else "; a color is undrawable at step 1"),
        fatal=False,
    )
    report.add(
        "C3", "replenishing_rule", matrix.h12 > 0 and matrix.h21 > 0,
        "tenability relies on H12 > 0 and H21 > 0",
    )
    return report


# ---------------------------------------------------------------------------
# dynamics


class Outcome(enum.IntEnum):
    E1 = 1
    E2 = 2


@dataclass(frozen=True)
class UrnState:
    n: int
    y1: Real
    y2: Real
    t: Real
    z: Real

    @classmethod
    def make(cls, n, y1, y2, exact=False):
        t = y1 + y2
        if t <= 0:
            raise ValueError("urn is empty (total count must be positive)")
        z = Fraction(y1, t) if exact else y1 / t
        return cls(n, y1, y2, t, z)

    @property
    def exact(self):
        return isinstance(self.z, Fraction)


@dataclass(frozen=True)
class StepRecord:
    outcome: Outcome
    l: Real
    cond_mean_l: Real
    delta_m: Real
    gamma: Real


@dataclass(frozen=True)
class OutcomeRow:
    outcome: Outcome
    prob: Real
    l: Real
    delta_m: Real
    t_next: Real


@dataclass(frozen=True)
class IncrementStats:
    cond_mean_l: Real
    cond_mean_dm_over_t: Real
    table: tuple


def draw_probability(state, skew):
    """P(next draw is type 1 | state)."""
    fz, fc = skew.value(state.z), skew.value(1 - state.z)
    return fz / (fz + fc)


def _increments(z, matrix):
    return matrix.h11 - z * matrix.h1, matrix.h12 - z * matrix.h2


def conditional_increment_stats(state, matrix, skew):
    """Both outcomes of the next draw with E[L | F_n] and E[dM / T_{n+1} | F_n]."""
    p = draw_probability(state, skew)
    l1, l2 = _increments(state.z, matrix)
    mean = p * l1 + (1 - p) * l2
    t1, t2 = state.t + matrix.h1, state.t + matrix.h2
    rows = (
        OutcomeRow(Outcome.E1, p, l1, l1 - mean, t1),
        OutcomeRow(Outcome.E2, 1 - p, l2, l2 - mean, t2),
    )
    if state.exact:
        cm = sum(r.prob * r.delta_m / r.t_next for r in rows)
    else:
        cm = math.fsum(r.prob * r.delta_m / r.t_next for r in rows)
    return IncrementStats(mean, cm, rows)


def urn_step(state, matrix, skew, rng=None, outcome=None):
    """Draw once and return ``(next_state, record)``.

    ``outcome`` forces the draw (no randomness consumed); otherwise one
    uniform is taken from ``rng`` and type 1 is drawn when it falls below the
    draw probability.
    """
    p = draw_probability(state, skew)
    if outcome is None:
        outcome = Outcome.E1 if rng.random() < p else Outcome.E2
    outcome = Outcome(outcome)
    l1, l2 = _increments(state.z, matrix)
    mean = p * l1 + (1 - p) * l2
    a, b = matrix.column(outcome)
    l = l1 if outcome is Outcome.E1 else l2
    nxt = UrnState.make(state.n + 1, state.y1 + a, state.y2 + b, state.exact)
    gamma = Fraction(1, nxt.t) if state.exact else 1 / nxt.t
    return nxt, StepRecord(outcome, l, mean, l - mean, gamma)


@dataclass
class UrnPath:
    config: UrnConfig
    seed: int
    states: list
    steps: list
    trial: int = 0

    @property
    def n(self):
        return len(self.steps)

    def z_values(self):
        return [s.z for s in self.states]

    def e1_count(self):
        return sum(1 for r in self.steps if r.outcome is Outcome.E1)


def simulate_path(config, n, seed, trial=0, exact=None, outcomes=None, cap=MAX_PATH_STEPS):
    """Run ``n`` draws; deterministic in ``(config, n, seed, trial)``.

    ``exact=None`` picks exact rational arithmetic whenever the config allows it.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > cap:
        raise ResourceLimitError(f"n={n} exceeds the path cap {cap}")
    if exact is None:
        exact = config.supports_exact
    elif exact and not config.supports_exact:
        raise ValueError("exact arithmetic needs integer counts and a rational skew")
    if outcomes is not None and len(outcomes) != n:
        raise ValueError("forced outcome list must have length n")
    rng = trial_rng(seed, trial) if outcomes is None else None
    state = config.initial_state(exact)
    states, steps = [state], []
    for i in range(n):
        forced = None if outcomes is None else outcomes[i]
        state, rec = urn_step(state, config.matrix, config.skew, rng, forced)
        states.append(state)
        steps.append(rec)
    return UrnPath(config, check_seed(seed), states, steps, trial)


# ---------------------------------------------------------------------------
# vectorised engine


@dataclass
class BatchStep:
    """Arrays over trials for the draw taken from state index ``m``."""

    m: int
    z: np.ndarray
    t: np.ndarray
    p: np.ndarray
    e1: np.ndarray
    l: np.ndarray
    cond_mean: np.ndarray
    delta_m: np.ndarray
    t_next: np.ndarray
    z_next: np.ndarray


def iterate_batch(config, n, seed, first_trial, count, cap=MAX_BATCH_STEPS):
    """Yield one :class:`BatchStep` per draw for trials ``first_trial..+count``.

    Trial ``i`` consumes the same uniforms as ``simulate_path(..., trial=i)``.
    """
    if n > cap:
        raise ResourceLimitError(f"n={n} exceeds the batch cap {cap}")
    m_ = config.matrix
    h11, h12, h21, h22 = (float(v) for v in m_.entries())
    h1, h2 = h11 + h21, h12 + h22
    u = uniform_block(seed, first_trial, count, n)
    y1 = np.full(count, float(config.y1))
    y2 = np.full(count, float(config.y2))
    t = y1 + y2
    z = y1 / t
    skew = config.skew
    for m in range(n):
        fz, fc = skew.values(z), skew.values(1.0 - z)
        p = fz / (fz + fc)
        e1 = u[:, m] < p
        l1, l2 = h11 - z * h1, h12 - z * h2
        mean = p * l1 + (1.0 - p) * l2
        l = np.where(e1, l1, l2)
        y1 = y1 + np.where(e1, h11, h12)
        y2 = y2 + np.where(e1, h21, h22)
        t_next = y1 + y2
        z_next = y1 / t_next
        yield BatchStep(m, z, t, p, e1, l, mean, l - mean, t_next, z_next)
        t, z = t_next, z_next


def _z_at_block(config, checkpoints, seed, start, count):
    out = np.empty((count, len(checkpoints)))
    last = max(checkpoints)
    z0 = config.y1 / config.t0
    col = {n: j for j, n in enumerate(checkpoints)}
    if 0 in col:
        out[:, col[0]] = z0
    for step in iterate_batch(config, last, seed, start, count):
        j = col.get(step.m + 1)
        if j is not None:
            out[:, j] = step.z_next
    return out


def sample_z(config, checkpoints, trials, seed, threads=1):
    """Z_n for every trial at each checkpoint n; shape (trials, len(checkpoints))."""
    checkpoints = [int(n) for n in checkpoints]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    last = max(checkpoints)
    chunks = trial_batches(trials, max(last, 1))
    work = lambda c: _z_at_block(config, checkpoints, seed, c[0], c[1])
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(work, chunks))
    else:
        blocks = [work(c) for c in chunks]
    return np.vstack(blocks)

import math

import numpy as np
import pytest

from conftest import make_config
from oracles import harmonic_tail
from urn_ldp import (
    Lemma31Params,
    ReplacementMatrix,
    bound_verification,
    exact_tail_probability,
    lemma31_bound,
    mc_tail_estimate,
    rate_fit,
)
from urn_ldp.ldp import (
    InsufficientPointsError,
    TailEstimate,
    exact_tail_grid,
    k_bound,
    lemma31_terms,
    martingale_sum_exceedance,
    martingale_sums,
    mc_tail_grid,
)
from urn_ldp.model import iterate_batch

H = ReplacementMatrix(2, 4, 3, 6)
Y_GOLDEN = (math.sqrt(5) - 1) / 4


def test_rate_fit_pure_exponential():
    pts = [(n, math.exp(-0.1 * n)) for n in range(10, 200, 10)]
    fit = rate_fit(pts)
    assert abs(fit.a_hat - 0.1) <= 1e-12
    assert abs(fit.r_squared - 1) <= 1e-12
    assert fit.points_zero == 0 and fit.points_used == len(pts)


def test_rate_fit_with_constant():
    fit = rate_fit([(n, 2 * math.exp(-0.25 * n)) for n in (4, 8, 12, 16, 20)])
    assert abs(fit.a_hat - 0.25) <= 1e-12
    assert abs(fit.log_c_hat - math.log(2)) <= 1e-12


def test_rate_fit_zero_policies():
    est = [TailEstimate(n, 0.1, 1000, h, h / 1000, 0.0) for n, h in [(10, 400), (20, 150), (30, 60), (40, 0)]]
    fit = rate_fit(est)
    assert (fit.points_used, fit.points_zero) == (3, 1)
    fit3 = rate_fit(est, zero_policy="rule_of_three")
    assert fit3.points_used == 4 and fit3.points[-1] == (40, 0.003)
    with pytest.raises(InsufficientPointsError):
        rate_fit(est[:2])


def test_mc_tail_deterministic_and_zero_beyond_range(base_config):
    a = mc_tail_estimate(base_config, 0.4, 50, 0.05, 2000, seed=3)
    b = mc_tail_estimate(base_config, 0.4, 50, 0.05, 2000, seed=3)
    assert a == b
    big = mc_tail_estimate(base_config, 0.4, 50, 0.7, 500, seed=3)
    assert big.hits == 0 and big.p_hat == 0.0
    with pytest.raises(ValueError):
        mc_tail_estimate(base_config, 0.4, 50, 0.05, 0, seed=3)


def test_mc_threads_do_not_change_results(golden_config):
    a = mc_tail_grid(golden_config, Y_GOLDEN, [20, 60], [0.05, 0.1], 3000, seed=8, threads=1)
    b = mc_tail_grid(golden_config, Y_GOLDEN, [20, 60], [0.05, 0.1], 3000, seed=8, threads=3)
    assert a == b


def test_mc_vs_exact_nondegenerate(golden_config):
    trials = 40_000
    grid = mc_tail_grid(golden_config, Y_GOLDEN, [20, 80], [0.05, 0.1], trials, seed=2024)
    for est in grid:
        p = exact_tail_probability(golden_config, est.n, est.eps, Y_GOLDEN)
        assert p > 0
        assert abs(est.p_hat - p) <= 3 * math.sqrt(p * (1 - p) / trials) + 1e-6


def test_ci99_and_exact_interval():
    est = mc_tail_estimate(make_config([[4, 1], [5, 4]]), Y_GOLDEN, 30, 0.05, 5000, seed=1)
    assert est.ci_half_width == pytest.approx(2.5758293035489 * est.se, rel=1e-9)
    cp = mc_tail_estimate(make_config([[4, 1], [5, 4]]), Y_GOLDEN, 30, 0.3, 5000, seed=1, exact_ci=True)
    assert cp.hits < 10 and cp.ci_half_width > 0


def test_exact_grid_provenance(golden_config):
    rows = exact_tail_grid(golden_config, Y_GOLDEN, [10, 30], [0.05])
    assert [r.provenance for r in rows] == ["Exact", "Exact"]
    assert rows[1].p_hat == exact_tail_probability(golden_config, 30, 0.05, Y_GOLDEN)


def params(**kw):
    base = dict(beta=math.e, k=100, n=2000, eps=0.5, big_k=k_bound(H), matrix=H)
    base.update(kw)
    return Lemma31Params(**base)


def test_lemma31_terms_by_hand():
    p = params()
    t = lemma31_terms(p)
    s = harmonic_tail(100, 2000)
    assert t.s == pytest.approx(s, rel=1e-14)
    a, b = 60.0, 10.0
    num = 0.5 - p.big_k / b**2 * s
    den = 2 * math.e * a**2 / b**2 * s
    assert t.chernoff_ok
    assert t.bound == pytest.approx(2 * math.exp(-num**2 / den), rel=1e-12)


def test_lemma31_shrinks_with_s():
    bounds = [lemma31_bound(params(k=k, n=2 * k, eps=1.0)) for k in (100, 1000, 10_000, 100_000)]
    assert all(x > y for x, y in zip(bounds, bounds[1:]))
    assert bounds[-1] < 1e-50


def test_lemma31_without_drift_term_is_gaussian_form():
    p = params(k=5000, n=50_000, eps=1.0, big_k=0.0)
    s = harmonic_tail(5000, 50_000)
    expected = 2 * math.exp(-1.0 / (2 * math.e * 36 * s))
    assert lemma31_bound(p) == pytest.approx(expected, rel=1e-12)


def test_lemma31_trivial_cases():
    # drift term swallows eps
    assert lemma31_bound(params(k=1, n=2, eps=0.01, big_k=1e6)) == 2.0
    # at the admissibility edge the exponential-moment step is not justified
    edge = params(eps=params().eps_max, k=100, n=101)
    t = lemma31_terms(edge)
    assert not t.chernoff_ok and t.bound == 2.0
    with pytest.raises(ValueError):
        params(eps=params().eps_max * 1.01)
    with pytest.raises(ValueError):
        params(beta=1.0)


def test_martingale_sums_match_scalar_accumulation(base_config):
    sums = martingale_sums(base_config, 5, 40, 6, seed=9)
    manual = np.zeros(6)
    for s in iterate_batch(base_config, 41, 9, 0, 6):
        if s.m >= 5:
            manual += s.delta_m / s.t_next
    assert np.array_equal(sums, manual)
    freq, _ = martingale_sum_exceedance(base_config, 5, 40, 0.01, 6, seed=9)
    assert freq == np.mean(np.abs(manual) >= 0.01)


def test_k_bound_dominates_states():
    for y1 in range(0, 40):
        for y2 in range(1, 40):
            t = y1 + y2
            z = y1 / t
            l1, l2 = 2 - 5 * z, 4 - 10 * z
            mean = z * l1 + (1 - z) * l2
            cm = z * (l1 - mean) / (t + 5) + (1 - z) * (l2 - mean) / (t + 10)
            assert abs(cm) * t**2 <= k_bound(H) + 1e-12


@pytest.mark.parametrize("rows", [[[2, 4], [3, 6]], [[4, 1], [5, 4]], [[1, 2], [3, 4]]])
def test_bound_verification_passes(rows):
    rep = bound_verification(make_config(rows), 400, 50, seed=17)
    assert rep.ok
    for cid in ("b3_martingale_increment", "b2_drift_bound", "b1_envelope_lower",
                "b1_envelope_upper", "step_bound"):
        chk = rep.by_id(cid)
        assert chk.status == "pass" and chk.violations == 0 and chk.worst_value <= 1
    assert 0 < rep.k_hat <= rep.extras["k_cap"]
    assert rep.by_id("b1_literal").status == "info"


def test_literal_envelope_flags_small_start(base_config):
    rep = bound_verification(base_config, 300, 5, seed=1)
    assert rep.by_id("b1_literal").violations > 0

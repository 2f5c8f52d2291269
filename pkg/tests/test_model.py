import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_config
from oracles import one_step_moments
from urn_ldp import (
    Outcome,
    ReplacementMatrix,
    SkewSpec,
    UrnState,
    draw_probability,
    simulate_path,
    skew_derivative,
    skew_eval,
    urn_step,
    validate_config,
)
from urn_ldp.model import (
    DomainError,
    ResourceLimitError,
    conditional_increment_stats,
    iterate_batch,
    sample_z,
)

H = ReplacementMatrix(2, 4, 3, 6)


def test_matrix_column_sums():
    assert (H.h1, H.h2) == (5, 10)
    assert H.column(Outcome.E1) == (2, 3)
    assert H.column(Outcome.E2) == (4, 6)
    assert ReplacementMatrix(2.0, 4, 3, 6).is_integral


@pytest.mark.parametrize(
    "skew, y, expected",
    [
        (SkewSpec.identity(), 0.3, 0.3),
        (SkewSpec.power(2), 0.5, 0.25),
        (SkewSpec.mirror_power(2), 0.5, 0.75),
    ],
)
def test_skew_eval(skew, y, expected):
    assert skew_eval(skew, y) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "skew, y, expected",
    [
        (SkewSpec.identity(), 0.0, 1.0),
        (SkewSpec.identity(), 0.77, 1.0),
        (SkewSpec.power(2), 0.0, 0.0),
        (SkewSpec.power(3), 0.5, 0.75),
        (SkewSpec.mirror_power(2), 1.0, 0.0),
    ],
)
def test_skew_derivative(skew, y, expected):
    assert skew_derivative(skew, y) == pytest.approx(expected, abs=1e-15)


def test_skew_domain_error():
    with pytest.raises(DomainError):
        skew_eval(SkewSpec.identity(), 1.2)
    with pytest.raises(DomainError):
        skew_derivative(SkewSpec.power(2), -0.1)


def test_table_skew_interpolates_and_keeps_fractions():
    sk = SkewSpec.table([(0, 0), (Fraction(1, 2), Fraction(1, 4)), (1, 1)])
    assert sk.value(0.25) == pytest.approx(0.125)
    assert sk.value(Fraction(3, 4)) == Fraction(5, 8)
    assert sk.derivative(0.5) == pytest.approx(1.5)
    assert sk.derivative(1.0) == pytest.approx(1.5)
    assert np.allclose(sk.values([0.25, 0.75]), [0.125, 0.625])
    with pytest.raises(ValueError):
        SkewSpec.table([(0, 0), (0.6, 0.5), (0.4, 0.7), (1, 1)])


def test_validate_reference_matrix_passes():
    rep = validate_config(H, SkewSpec.identity(), (1, 1))
    assert rep.ok
    assert rep.failed() == []


def test_validate_identity_matrix_fails_c2_and_c4():
    rep = validate_config(ReplacementMatrix(1, 0, 0, 1), SkewSpec.identity(), (1, 1))
    assert not rep.ok
    assert {"C2", "C4"} <= set(rep.failed_codes())


def test_validate_zero_type1_start_is_flagged_not_fatal():
    rep = validate_config(H, SkewSpec.power(2), (0, 5))
    flagged = [c for c in rep.results if not c.passed]
    assert [c.check for c in flagged] == ["initial_counts_positive"]
    assert not flagged[0].fatal
    assert rep.ok


def test_validate_non_monotone_table_fails_c1():
    sk = SkewSpec.table([(0, 0), (0.4, 0.6), (0.6, 0.3), (1, 1)])
    rep = validate_config(H, sk, (1, 1))
    assert "C1" in rep.failed_codes()
    assert any(c.check == "non_decreasing_on_grid" for c in rep.failed())


def test_validate_skew_endpoints():
    rep = validate_config(H, SkewSpec.table([(0, 0.1), (1, 1)]), (1, 1))
    assert any(c.check == "f(0)=0" for c in rep.failed())
    rep = validate_config(H, SkewSpec.power(0.5), (1, 1))
    assert any(c.check == "finite_derivatives" for c in rep.failed())


def test_validate_negative_entry_and_empty_urn():
    rep = validate_config(ReplacementMatrix(-1, 4, 3, 6), SkewSpec.identity(), (1, 1))
    assert "C4" in rep.failed_codes()
    rep = validate_config(H, SkewSpec.identity(), (0, 0))
    assert "C3" in rep.failed_codes()


@pytest.mark.parametrize(
    "z, skew, expected",
    [
        (Fraction(1), SkewSpec.power(2), 1),
        (Fraction(1), SkewSpec.identity(), 1),
        (Fraction(1, 2), SkewSpec.identity(), Fraction(1, 2)),
        (Fraction(1, 4), SkewSpec.power(2), Fraction(1, 10)),
    ],
)
def test_draw_probability_examples(z, skew, expected):
    state = UrnState.make(0, z.numerator, z.denominator - z.numerator, exact=True)
    assert draw_probability(state, skew) == expected


def test_forced_steps_by_hand():
    s0 = UrnState.make(0, 1, 1, exact=True)
    s1, rec = urn_step(s0, H, SkewSpec.identity(), outcome=Outcome.E1)
    assert (s1.y1, s1.y2, s1.t, s1.z) == (3, 4, 7, Fraction(3, 7))
    assert rec.gamma == Fraction(1, 7)
    s2, _ = urn_step(s0, H, SkewSpec.identity(), outcome=Outcome.E2)
    assert (s2.y1, s2.y2, s2.t, s2.z) == (5, 7, 12, Fraction(5, 12))


def test_cond_mean_l_at_half():
    s = UrnState.make(0, 1, 1)
    stats = conditional_increment_stats(s, H, SkewSpec.identity())
    assert stats.cond_mean_l == pytest.approx(-0.75, abs=1e-15)


def test_cond_mean_dm_over_t_matches_oracle():
    for y1, y2 in [(1, 1), (3, 7), (10, 2)]:
        s = UrnState.make(0, y1, y2, exact=True)
        stats = conditional_increment_stats(s, H, SkewSpec.identity())
        mean, dm = one_step_moments(H.rows(), lambda y: y, Fraction(y1), Fraction(y2))
        assert stats.cond_mean_l == mean
        assert stats.cond_mean_dm_over_t == dm
        rows = stats.table
        assert rows[0].prob * rows[0].delta_m + rows[1].prob * rows[1].delta_m == 0


def test_balanced_matrix_has_zero_conditional_mean():
    bal = ReplacementMatrix(2, 3, 3, 2)
    s = UrnState.make(0, 2, 5, exact=True)
    assert conditional_increment_stats(s, bal, SkewSpec.power(2)).cond_mean_dm_over_t == 0


def test_simulate_path_zero_steps(base_config):
    path = simulate_path(base_config, 0, seed=1)
    assert len(path.states) == 1 and path.steps == []


def test_simulate_path_forced_accounting(base_config):
    path = simulate_path(base_config, 2, seed=0, outcomes=[Outcome.E1, Outcome.E2])
    last = path.states[-1]
    assert (last.y1, last.y2, last.t) == (7, 10, 17)


def test_simulate_path_deterministic(base_config):
    a = simulate_path(base_config, 300, seed=42, trial=3)
    b = simulate_path(base_config, 300, seed=42, trial=3)
    c = simulate_path(base_config, 300, seed=43, trial=3)
    assert a.z_values() == b.z_values()
    assert a.z_values() != c.z_values()


def test_path_accounting_invariants(base_config):
    path = simulate_path(base_config, 500, seed=7)
    k = path.e1_count()
    last = path.states[-1]
    assert last.t == 2 + k * 5 + (500 - k) * 10
    assert last.y1 == 1 + k * 2 + (500 - k) * 4
    for s, nxt, rec in zip(path.states, path.states[1:], path.steps):
        # Z_{n+1} - Z_n = gamma_{n+1} * L_{n+1} exactly
        assert nxt.z - s.z == rec.gamma * rec.l


def test_path_cap(base_config):
    with pytest.raises(ResourceLimitError):
        simulate_path(base_config, 11, seed=1, cap=10)


def test_batch_engine_matches_scalar_paths():
    cfg = make_config([[4, 1], [5, 4]], SkewSpec.power(2), (2, 3))
    zs = np.array([s.z_next for s in iterate_batch(cfg, 200, 99, 5, 4)]).T
    for i in range(4):
        scalar = simulate_path(cfg, 200, 99, trial=5 + i, exact=False).z_values()[1:]
        assert np.array_equal(zs[i], np.array(scalar))


def test_sample_z_threads_independent_of_split(base_config):
    a = sample_z(base_config, [10, 50], 300, seed=5, threads=1)
    b = sample_z(base_config, [10, 50], 300, seed=5, threads=4)
    assert a.shape == (300, 2)
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(
    h=st.lists(st.integers(0, 9), min_size=4, max_size=4),
    y1=st.integers(0, 6),
    y2=st.integers(1, 6),
    p=st.integers(1, 3),
    fam=st.sampled_from(["identity", "power", "mirror_power"]),
    seed=st.integers(0, 2**32),
)
def test_path_properties(h, y1, y2, p, fam, seed):
    mat = ReplacementMatrix(h[0], max(h[1], 1), max(h[2], 1), h[3])
    skew = SkewSpec.identity() if fam == "identity" else SkewSpec(fam, p=p)
    cfg = make_config(mat.rows(), skew, (y1, y2))
    path = simulate_path(cfg, 40, seed)
    hs = mat.h1 + mat.h2
    for s, rec in zip(path.states, path.steps):
        assert 0 <= s.z <= 1
        pr = draw_probability(s, skew)
        assert 0 <= pr <= 1
        assert abs(rec.delta_m) <= 4 * hs
        stats = conditional_increment_stats(s, mat, skew)
        assert sum(r.prob * r.delta_m for r in stats.table) == 0
    if skew.value(0) == 0:
        assert draw_probability(UrnState.make(0, 0, 3, exact=True), skew) == 0
    assert draw_probability(UrnState.make(0, 3, 0, exact=True), skew) == 1


def test_float_and_exact_paths_agree(base_config):
    ex = simulate_path(base_config, 400, seed=11, exact=True).z_values()
    fl = simulate_path(base_config, 400, seed=11, exact=False).z_values()
    assert max(abs(float(a) - b) for a, b in zip(ex, fl)) < 1e-12
    assert math.isclose(float(ex[-1]), fl[-1], rel_tol=1e-12)

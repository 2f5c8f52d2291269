import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import make_config
from oracles import brute_force_law, skew_fn
from urn_ldp import SkewSpec, dp_distribution, exact_moments, exact_tail_probability
from urn_ldp.exact import dp_rows
from urn_ldp.model import ResourceLimitError

CASES = [
    ([[2, 4], [3, 6]], "identity", 1, (1, 1)),
    ([[4, 1], [5, 4]], "identity", 1, (2, 3)),
    ([[1, 2], [3, 4]], "power", 2, (1, 1)),
    ([[6, 2], [10, 3]], "power", 2, (3, 1)),
    ([[2, 10], [3, 6]], "mirror_power", 2, (1, 2)),
    ([[7, 1], [2, 3]], "mirror_power", 3, (4, 1)),
]


def skew_spec(family, p):
    return SkewSpec.identity() if family == "identity" else SkewSpec(family, p=p)


def test_n0_single_atom(base_config):
    d = dp_distribution(base_config, 0)
    assert d.support == [(0, 0.5, 1.0)]
    assert exact_moments(base_config, 0) == (0.5, 0.0)


def test_n1_hand_case(base_config):
    d = dp_distribution(base_config, 1)
    assert d.support == [(0, 5 / 12, 0.5), (1, 3 / 7, 0.5)]
    mean, var = exact_moments(base_config, 1)
    assert mean == pytest.approx(71 / 168, abs=1e-15)
    assert var == pytest.approx(((3 / 7 - 5 / 12) / 2) ** 2, abs=1e-15)


@pytest.mark.parametrize("rows, family, p, y0", CASES)
@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_dp_matches_brute_force(rows, family, p, y0, n):
    cfg = make_config(rows, skew_spec(family, p), y0)
    law = brute_force_law(rows, skew_fn(family, p), *y0, n)
    d = dp_distribution(cfg, n)
    got = {}
    for _, z, pr in d.support:
        got[z] = got.get(z, 0.0) + pr
    assert len(law) == len(got)
    for z, pr in law.items():
        match = min(got, key=lambda g: abs(g - float(z)))
        assert abs(match - float(z)) < 1e-15
        assert abs(got[match] - float(pr)) <= 1e-13


@pytest.mark.parametrize("rows, family, p, y0", CASES)
def test_rows_sum_to_one(rows, family, p, y0):
    cfg = make_config(rows, skew_spec(family, p), y0)
    for d in dp_rows(cfg, range(0, 301, 25)):
        assert abs(d.total() - 1) <= 1e-12
        assert np.all(d.prob >= 0)


def test_tail_beyond_range_is_zero(golden_config):
    d = dp_distribution(golden_config, 40)
    y = 0.3
    far = float(np.max(np.abs(d.z - y)))
    assert exact_tail_probability(golden_config, 40, far, y) == 0.0
    assert exact_tail_probability(golden_config, 40, far * 0.999, y) > 0


def test_tail_excludes_atoms_at_distance_eps(base_config):
    d = dp_distribution(base_config, 1)
    # atoms at 3/7 and 5/12; center the window so 3/7 sits exactly at the edge
    y, eps = 5 / 12, 3 / 7 - 5 / 12
    assert exact_tail_probability(base_config, 1, eps, y) == 0.0
    assert exact_tail_probability(base_config, 1, eps / 2, y) == 0.5
    with pytest.raises(ValueError):
        exact_tail_probability(base_config, 1, 0.0, y)


def test_tail_matches_fraction_oracle():
    rows = [[4, 1], [5, 4]]
    cfg = make_config(rows, SkewSpec.identity(), (1, 1))
    y, eps = (math.sqrt(5) - 1) / 4, 0.05
    law = brute_force_law(rows, skew_fn("identity"), 1, 1, 12)
    expected = math.fsum(float(p) for z, p in law.items() if abs(float(z) - y) > eps)
    assert exact_tail_probability(cfg, 12, eps, y) == pytest.approx(expected, abs=1e-13)


def test_moments_match_oracle():
    rows = [[1, 2], [3, 4]]
    cfg = make_config(rows, SkewSpec.power(2), (1, 1))
    law = brute_force_law(rows, skew_fn("power", 2), 1, 1, 8)
    mean = sum(p * z for z, p in law.items())
    var = sum(p * (z - mean) ** 2 for z, p in law.items())
    m, v = exact_moments(cfg, 8)
    assert m == pytest.approx(float(mean), abs=1e-14)
    assert v == pytest.approx(float(var), abs=1e-14)
    assert isinstance(mean, Fraction)


def test_dp_cap(base_config):
    with pytest.raises(ResourceLimitError):
        dp_distribution(base_config, 50, cap=10)

import itertools

import numpy as np
import pytest

from planrisk.cli import prop_check
from planrisk.errors import ArgumentError
from planrisk.submodular import (GREEDY_BOUND, CoverageFunction, check_grouped, check_properties, eval_coverage,
                                 greedy_ratio, grouped, random_coverage)


def test_coverage_passes():
    f = CoverageFunction.from_sets([{0, 1}, {1, 2}, {3}], [1.0, 2.0, 0.5, 4.0])
    assert eval_coverage(f, []) == 0.0
    assert f({0, 1}) == 3.5
    assert check_properties(f, range(3)).ok


def test_square_cardinality_witness():
    rep = check_properties(lambda S: float(len(S) ** 2), range(3))
    assert rep.normalized and rep.monotone and not rep.submodular
    w = rep.witnesses["submodular"]
    A, B, h = set(w["A"]), set(w["B"]), w["h"]
    assert A <= B and h not in B
    assert len(A | {h}) ** 2 - len(A) ** 2 < len(B | {h}) ** 2 - len(B) ** 2
    assert (w["A"], w["B"], w["h"]) == ([], [1], 0)


def test_non_monotone_and_unnormalized():
    rep = check_properties(lambda S: 1.0 - len(S), range(2))
    assert not rep.normalized and not rep.monotone
    assert rep.witnesses["normalized"] == {"F_empty": 1.0}
    assert set(rep.witnesses["monotone"]["A"]) < set(rep.witnesses["monotone"]["B"])


def test_labels_are_reported():
    rep = check_properties(lambda S: float(len(S) ** 2), ["x", "y"])
    assert rep.witnesses["submodular"]["h"] in ("x", "y")


def test_grouping_preserves_properties(rng):
    for _ in range(30):
        n = int(rng.integers(3, 9))
        f = random_coverage(rng, n, 10)
        k = int(rng.integers(1, n + 1))
        labels = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        groups = [np.flatnonzero(labels == g).tolist() for g in range(k)]
        assert check_grouped(f, groups).ok
    f = random_coverage(rng, 4, 5)
    assert grouped(f, [[0, 1], [2, 3]])({1}) == f({2, 3})


def test_limits():
    with pytest.raises(ArgumentError):
        check_properties(lambda S: 0.0, range(13))
    with pytest.raises(ArgumentError):
        check_grouped(lambda S: 0.0, [[i] for i in range(11)])
    with pytest.raises(ArgumentError):
        greedy_ratio(lambda S: 0.0, 17, 2)


def test_tight_coverage_instance():
    # greedy takes {a, b} first and then one more element; the optimum pairs {a, c} with {b, d}
    f = CoverageFunction.from_sets([{0, 2}, {1, 3}, {0, 1}], [1.1, 1.1, 1.0, 1.0])
    r = greedy_ratio(f, 3, 2)
    assert r.chosen[0] == 2
    assert r.greedy == pytest.approx(3.2) and r.optimum == pytest.approx(4.2)
    assert r.ratio == pytest.approx(3.2 / 4.2)
    assert r.ratio >= GREEDY_BOUND


def test_greedy_ratio_matches_independent_optimum(rng):
    for _ in range(30):
        n = int(rng.integers(3, 10))
        f = random_coverage(rng, n, 12)
        b = int(rng.integers(2, 5))
        r = greedy_ratio(f, n, b)
        opt = max(f(set(c)) for k in range(b + 1) for c in itertools.combinations(range(n), k))
        assert r.optimum == pytest.approx(opt)
        assert r.ratio >= GREEDY_BOUND - 1e-12


def test_zero_function_ratio():
    assert greedy_ratio(lambda S: 0.0, 4, 2).ratio == 1.0


def test_prop_check_report():
    rep = prop_check(instances=20, max_regions=8, seed=1)
    assert rep["passed"] and rep["worst_ratio"] >= GREEDY_BOUND
    assert not rep["examples"]["square_cardinality"]["submodular"]
    assert rep["examples"]["coverage"]["submodular"]

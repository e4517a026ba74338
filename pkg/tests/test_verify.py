import numpy as np
import pytest

from maresu.verify import (
    MAX_D,
    MAX_N,
    MIN_DENOMINATOR,
    SUITES,
    _lam_denominators,
    check_degenerate,
    opposite_keys_instance,
    random_instance,
    run_suites,
)


def test_instances_in_range():
    for seed in range(200):
        q, k, v = random_instance(seed)
        assert 1 <= q.shape[0] <= MAX_N and q.shape == k.shape
        assert 1 <= q.shape[1] <= MAX_D and 1 <= v.shape[1] <= MAX_D
        assert _lam_denominators(q, k).min() >= MIN_DENOMINATOR


def test_instances_replayable():
    a = random_instance(42)
    b = random_instance(42)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_opposite_keys_has_zero_denominator():
    q, k, _ = opposite_keys_instance(5)
    np.testing.assert_allclose(_lam_denominators(q, k), 0.0, atol=1e-15)


@pytest.mark.parametrize("name", sorted(SUITES))
def test_each_suite_passes(name):
    assert all(SUITES[name](seed, 1e-12) for seed in range(30))


def test_run_suites_reports():
    results = run_suites(seed=500, instances=20)
    assert [r.name for r in results] == list(SUITES)
    assert all(r.ok for r in results)
    assert results[0].passed == 21  # the opposite-keys case rides along
    assert "PASS" in results[0].line()


def test_unguarded_degenerate_fails_with_seed():
    assert check_degenerate(7, guard=True)
    assert not check_degenerate(7, guard=False)
    results = run_suites(seed=7, instances=3, guard=False)
    oracle = results[0]
    assert not oracle.ok and oracle.failed_seeds == [7]
    assert "replay seeds: 7" in oracle.line()

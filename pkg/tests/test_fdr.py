import numpy as np
import pytest

from hdglm.exceptions import ValidationError
from hdglm.fdr import benjamini_hochberg

from conftest import brute_force_bh


def test_spec_example():
    rej, _ = benjamini_hochberg([0.001, 0.2, 0.9], 0.05)
    assert rej.tolist() == [True, False, False]


def test_all_ones_rejects_none():
    rej, adj = benjamini_hochberg(np.ones(6), 0.1)
    assert not rej.any() and np.all(adj == 1.0)


def test_equality_boundary_rejects_all():
    m, q = 8, 0.2
    rej, _ = benjamini_hochberg(np.full(m, q / m), q)
    assert rej.all()


def test_step_up_not_step_down():
    # p_(1) fails its own threshold but p_(2) passes, so both are rejected
    rej, _ = benjamini_hochberg([0.04, 0.045, 0.9], 0.1)
    assert rej.tolist() == [True, True, False]


@pytest.mark.parametrize("m", range(1, 13))
def test_matches_brute_force(m):
    rng = np.random.default_rng(m)
    for k in range(40):
        p = rng.random(m) ** rng.uniform(1, 4)
        if k % 3 == 0:
            p = np.round(p, 1)  # ties
        q = float(rng.choice([0.01, 0.05, 0.1, 0.25]))
        rej, adj = benjamini_hochberg(p, q)
        brej, badj = brute_force_bh(p, q)
        np.testing.assert_array_equal(rej, brej)
        np.testing.assert_allclose(adj, badj, rtol=1e-15, atol=0)
        np.testing.assert_array_equal(rej, adj <= q)


def test_monotone_in_q():
    p = np.random.default_rng(0).random(50) ** 3
    small, _ = benjamini_hochberg(p, 0.01)
    large, _ = benjamini_hochberg(p, 0.2)
    assert np.all(large[small])


@pytest.mark.parametrize("bad", [[0.1, 1.2], [np.nan], [-0.01]])
def test_invalid_p_values(bad):
    with pytest.raises(ValidationError, match="index"):
        benjamini_hochberg(bad, 0.1)


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1])
def test_invalid_q(q):
    with pytest.raises(ValidationError):
        benjamini_hochberg([0.1], q)


def test_empty_input():
    with pytest.raises(ValidationError):
        benjamini_hochberg([], 0.1)

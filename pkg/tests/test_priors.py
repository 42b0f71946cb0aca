import numpy as np
import pytest

from ncdl.priors import build_prior, lognormal_prior, uniform_prior

# Inverse-CDF oracle values for C=8, M=100, mu=1, sigma=0.5, computed at
# 50-digit precision with mpmath (exp(mu + sigma*sqrt(2)*erfinv(2q-1)) at
# quantile midpoints, sorted descending, rescaled to sum 100).
GOLDEN_C8_M100 = np.array(
    [
        24.239323137328811,
        17.540092222455278,
        14.372320521644876,
        12.177272536945483,
        10.404731170598798,
        8.8156430234922659,
        7.2235222900269118,
        5.2270950975075756,
    ]
)


def test_lognormal_matches_oracle():
    prior = lognormal_prior(8, 100.0)
    np.testing.assert_allclose(prior.masses, GOLDEN_C8_M100, rtol=1e-12)
    assert prior.total_mass == 100.0


def test_single_class():
    np.testing.assert_allclose(lognormal_prior(1, 42.0).masses, [42.0])
    np.testing.assert_allclose(uniform_prior(1, 42.0).masses, [42.0])


def test_sorted_descending_and_sums():
    for c, m in [(3, 10.0), (50, 1234.5), (500, 7.0)]:
        prior = lognormal_prior(c, m)
        assert np.all(np.diff(prior.masses) < 0) or c == 1
        assert np.all(prior.masses > 0)
        assert abs(prior.masses.sum() - m) <= 1e-9 * m


def test_uniform_values():
    prior = uniform_prior(4, 100.0)
    np.testing.assert_array_equal(prior.masses, [25.0, 25.0, 25.0, 25.0])
    for c in (1, 3, 7, 100):
        assert uniform_prior(c, 50.0).masses.sum() == pytest.approx(50.0, rel=1e-12)


def test_spread_grows_with_sigma():
    narrow = lognormal_prior(100, 100.0, sigma=0.25)
    wide = lognormal_prior(100, 100.0, sigma=0.5)
    ratio = lambda p: p.masses.max() / p.masses.min()
    assert ratio(wide) > ratio(narrow)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        lognormal_prior(0, 10.0)
    with pytest.raises(ValueError):
        lognormal_prior(4, -1.0)
    with pytest.raises(ValueError):
        lognormal_prior(4, 10.0, sigma=0.0)
    with pytest.raises(ValueError):
        build_prior("zipf", 4, 10.0)


def test_build_prior_dispatch():
    np.testing.assert_array_equal(build_prior("uniform", 2, 4.0).masses, [2.0, 2.0])
    np.testing.assert_allclose(build_prior("lognormal", 8, 100.0).masses, GOLDEN_C8_M100, rtol=1e-12)

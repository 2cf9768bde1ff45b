import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lintx.stats import (
    FeatureMap,
    affinity,
    center,
    channel_mean_std,
    covariance,
    gram,
)
from lintx.tensor import frob_norm_sq, spd_power, sym_eig


def fm(data):
    return FeatureMap.flat(np.asarray(data, dtype=np.float64))


def test_feature_map_shape_checks():
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 5)), 2, 2)
    with pytest.raises(ValueError):
        FeatureMap(np.array([[np.inf, 0.0]]), 1, 2)
    f = FeatureMap.from_chw(np.arange(12.0).reshape(3, 2, 2))
    assert (f.channels, f.n, f.height, f.width) == (3, 4, 2, 2)
    assert np.array_equal(f.to_chw(), np.arange(12.0).reshape(3, 2, 2))


def test_center_constant_map():
    centered, mean = center(fm(np.full((3, 6), 5.0)))
    assert np.array_equal(centered.data, np.zeros((3, 6)))
    assert np.array_equal(mean, [5.0, 5.0, 5.0])


def test_center_single_pixel():
    centered, mean = center(fm([[1.5], [-2.0]]))
    assert np.array_equal(centered.data, np.zeros((2, 1)))
    assert np.array_equal(mean, [1.5, -2.0])


def test_center_roundtrip():
    f = fm(np.random.default_rng(0).standard_normal((3, 16)))
    centered, mean = center(f)
    np.testing.assert_allclose(centered.data.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(centered.data + mean[:, None], f.data, rtol=0, atol=1e-14)


def test_covariance_examples():
    assert np.array_equal(covariance(fm(np.full((2, 4), 3.0))), np.zeros((2, 2)))
    np.testing.assert_allclose(covariance(fm([[1.0, -1.0], [1.0, -1.0]])), [[1, 1], [1, 1]])


def test_covariance_of_whitened_map_is_identity():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 200)) * [[1.0], [3.0], [0.2], [5.0]]
    x[1] += 0.7 * x[0]
    f = fm(x)
    centered, _ = center(f)
    whitened = fm(spd_power(covariance(f), -0.5, 1e-12) @ centered.data)
    np.testing.assert_allclose(covariance(whitened), np.eye(4), atol=1e-8)


def test_gram_against_double_loop():
    x = np.random.default_rng(2).standard_normal((4, 9))
    oracle = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            oracle[i, j] = sum(x[i, k] * x[j, k] for k in range(9)) / 9
    np.testing.assert_allclose(gram(fm(x)), oracle, atol=1e-12)
    assert np.array_equal(gram(fm(np.zeros((3, 5)))), np.zeros((3, 3)))


def test_gram_equals_covariance_for_zero_mean():
    x = np.random.default_rng(3).standard_normal((3, 10))
    x -= x.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(gram(fm(x)), covariance(fm(x)), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(c=st.integers(1, 8), n=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
def test_covariance_is_gram_of_centered_and_psd(c, n, seed):
    f = fm(np.random.default_rng(seed).standard_normal((c, n)) * 3 + 1)
    cov = covariance(f)
    assert np.array_equal(cov, gram(center(f)[0]))
    norm = np.sqrt(frob_norm_sq(cov))
    assert np.sqrt(frob_norm_sq(cov - cov.T)) <= 1e-10 * norm
    assert sym_eig(cov).values.min() >= -1e-9 * np.trace(cov)


def test_channel_mean_std():
    mean, std = channel_mean_std(fm(np.full((2, 5), 7.0)), 0.0)
    assert np.array_equal(mean, [7.0, 7.0]) and np.array_equal(std, [0.0, 0.0])
    mean, std = channel_mean_std(fm([[0.0, 2.0]]), 0.0)
    assert mean[0] == 1.0 and std[0] == 1.0
    x = np.random.default_rng(4).standard_normal((3, 20))
    mean, std = channel_mean_std(fm(x), 1e-3)
    for c in range(3):
        m = sum(x[c]) / 20
        var = sum((v - m) ** 2 for v in x[c]) / 20
        assert abs(mean[c] - m) < 1e-12 and abs(std[c] - np.sqrt(var + 1e-3)) < 1e-12


def test_affinity_scalar_case():
    np.testing.assert_allclose(affinity(fm([[1.0, -1.0]])), [[1, -1], [-1, 1]], atol=1e-12)


def test_affinity_matches_eigendecomposition_path():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 64))
    f = fm(x)
    direct = affinity(f, 1e-10)
    # independent order: whiten with explicit eigenpairs, then take inner products
    xc = x - x.mean(axis=1, keepdims=True)
    dec = sym_eig(xc @ xc.T / 64)
    z = (dec.vectors.T @ xc) / np.sqrt(dec.values)[:, None]
    np.testing.assert_allclose(direct, z.T @ z, atol=1e-8)


def test_affinity_invariant_under_channel_mixing():
    rng = np.random.default_rng(6)
    for _ in range(10):
        x = rng.standard_normal((4, 50))
        m = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        a = affinity(fm(x), 1e-12)
        b = affinity(fm(m @ x + rng.standard_normal((4, 1))), 1e-12)
        assert np.sqrt(frob_norm_sq(a - b)) <= 1e-6 * np.sqrt(frob_norm_sq(a))


def test_affinity_pixel_cap():
    with pytest.raises(ValueError):
        affinity(fm(np.zeros((2, 5000))))

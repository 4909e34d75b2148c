import numpy as np
import pytest

from pohmmkit.errors import InvalidInputError
from pohmmkit.quantize import GroupSpec, decode, encode, fit_codebook, kmeans_fit


def test_group_spec_parse_and_validation():
    spec = GroupSpec.parse("legs:0,1,2; arms:3,4")
    assert spec.names == ["legs", "arms"] and spec.max_column == 4
    with pytest.raises(InvalidInputError):
        GroupSpec.parse("a:0,1;b:1,2")
    with pytest.raises(InvalidInputError):
        GroupSpec.parse("a:")
    with pytest.raises(InvalidInputError):
        GroupSpec(())


def test_k1_is_mean(rng):
    x = rng.normal(size=(50, 3))
    fit = kmeans_fit(x, 1, seed=0)
    np.testing.assert_allclose(fit.centroids[0], x.mean(axis=0), atol=1e-12)


def test_k_equals_distinct_points(rng):
    x = np.repeat(rng.normal(size=(5, 2)), 3, axis=0)
    fit = kmeans_fit(x, 5, seed=1)
    assert fit.distortion == pytest.approx(0.0, abs=1e-20)


def test_planted_blobs():
    rng = np.random.default_rng(0)
    means = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    x = np.concatenate([m + rng.normal(scale=0.5, size=(200, 2)) for m in means])
    fit = kmeans_fit(x, 4, seed=0)
    c = fit.centroids[np.lexsort(fit.centroids.T[::-1])]
    np.testing.assert_allclose(c, means[np.lexsort(means.T[::-1])], atol=0.1)


def test_distortion_trace_non_increasing(rng):
    x = rng.normal(size=(300, 3))
    for seed in range(5):
        tr = kmeans_fit(x, 6, restarts=1, seed=seed).trace
        assert np.all(np.diff(tr) <= 1e-12)


def test_kmeans_deterministic_and_errors(rng):
    x = rng.normal(size=(40, 2))
    a, b = kmeans_fit(x, 3, seed=4), kmeans_fit(x, 3, seed=4)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    with pytest.raises(InvalidInputError):
        kmeans_fit(np.ones((10, 2)), 2)


def test_encode_exact_centroid_and_ties():
    spec = GroupSpec.parse("g:0")
    x = np.array([[0.0], [2.0], [4.0]])
    cb = fit_codebook(x, spec, 3, seed=0)
    cent = cb.centroids[0][:, 0]
    for j, v in enumerate(cent):
        assert encode(np.array([[v]]), spec, cb)[0, 0] == j
    # equidistant from two centroids -> lower index
    lo, hi = sorted(range(3), key=lambda j: cent[j])[:2]
    mid = (cent[lo] + cent[hi]) / 2
    assert encode(np.array([[mid]]), spec, cb)[0, 0] == min(lo, hi)


def test_six_groups_give_six_dims(rng):
    frames = rng.normal(size=(400, 18))
    spec = GroupSpec(tuple((f"g{i}", list(range(3 * i, 3 * i + 3))) for i in range(6)))
    cb = fit_codebook(frames, spec, 25, restarts=2, seed=0)
    sym = encode(frames, spec, cb)
    assert sym.shape == (400, 6) and sym.max() < 25 and cb.sizes == [25] * 6


def test_reencode_decoded_and_extra_columns(rng):
    frames = rng.normal(size=(100, 5))
    spec = GroupSpec.parse("a:0,1;b:3")
    for standardize in (False, True):
        cb = fit_codebook(frames, spec, 4, seed=1, standardize=standardize)
        sym = encode(frames, spec, cb)
        np.testing.assert_array_equal(encode(decode(sym, cb, 5), spec, cb), sym)
        wider = np.hstack([frames, rng.normal(size=(100, 3))])
        np.testing.assert_array_equal(encode(wider, spec, cb), sym)


def test_encode_width_mismatch(rng):
    spec = GroupSpec.parse("a:0,4")
    cb = fit_codebook(rng.normal(size=(20, 5)), spec, 2)
    with pytest.raises(InvalidInputError):
        encode(rng.normal(size=(5, 3)), spec, cb)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stable_velocity import gmm, targets
from stable_velocity.rng import substream
from stable_velocity.schedules import Schedule, cond_velocity, corrupt

from conftest import delta_spec


def _brute_target(points, schedule, xt, t):
    """Reference implementation: explicit normalized Gaussian likelihoods."""
    a, s = schedule.alpha(t), schedule.sigma(t)
    logp = np.array([-np.sum((xt - a * p) ** 2) / (2 * s * s) for p in points])
    w = np.exp(logp - logp.max())
    w /= w.sum()
    return sum(wi * cond_velocity(schedule, xt, p, t) for wi, p in zip(w, points))


@given(st.integers(0, 10**6), st.integers(1, 12), st.floats(0.02, 0.98))
def test_target_matches_brute_force(seed, n, t):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    xt = rng.normal(size=3)
    for s in (Schedule("linear"), Schedule("vp-cosine")):
        np.testing.assert_allclose(targets.stablevm_target(pts, s, xt, t), _brute_target(pts, s, xt, t), atol=1e-9)


@given(st.integers(0, 10**6))
def test_target_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(9, 2))
    xt = rng.normal(size=2)
    s = Schedule("vp-cosine")
    perm = rng.permutation(9)
    np.testing.assert_allclose(targets.stablevm_target(pts, s, xt, 0.4), targets.stablevm_target(pts[perm], s, xt, 0.4),
                               atol=1e-12)


def test_single_reference_is_conditional_velocity(schedule):
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(1, 4))
    xt = rng.normal(size=(7, 4))
    for t in (0.1, 0.5, 0.9):
        np.testing.assert_array_equal(targets.stablevm_target(x0, schedule, xt, t),
                                      cond_velocity(schedule, xt, np.broadcast_to(x0[0], xt.shape), t))


def test_symmetric_pair_target_is_zero(linear):
    pts = np.array([[-1.0], [1.0]])
    assert targets.stablevm_target(pts, linear, np.array([0.0]), 0.5)[0] == pytest.approx(0.0, abs=1e-15)


def test_saturated_weights_pick_the_nearest_reference(schedule):
    t = 0.3
    s = schedule.sigma(t)
    a = schedule.alpha(t)
    x0 = np.array([0.5, -0.5])
    far = x0 + np.array([[10 * s / a, 0], [0, -12 * s / a], [15 * s / a, 15 * s / a]])
    pts = np.vstack([x0, far])
    xt = a * x0
    got = targets.stablevm_target(pts, schedule, xt, t)
    np.testing.assert_allclose(got, cond_velocity(schedule, xt, x0, t), atol=1e-6)


def test_weights_sum_to_one_and_batched_forms_agree(schedule):
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(30, 3))
    xt = rng.normal(size=(5, 3))
    w = targets.stable_weights(pts, schedule, xt, 0.45)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    for i in range(5):
        np.testing.assert_allclose(w[i], targets.stable_weights(pts, schedule, xt[i], 0.45), atol=1e-12)
    stacked = np.broadcast_to(pts, (5, 30, 3))
    np.testing.assert_allclose(targets.stablevm_target(stacked, schedule, xt, 0.45),
                               targets.stablevm_target(pts, schedule, xt, 0.45), atol=1e-12)


def test_per_sample_times(schedule):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(6, 2))
    xt = rng.normal(size=(4, 2))
    t = np.array([0.1, 0.3, 0.6, 0.9])
    batch = targets.stablevm_target(pts, schedule, xt, t)
    for i in range(4):
        np.testing.assert_allclose(batch[i], targets.stablevm_target(pts, schedule, xt[i], t[i]), atol=1e-12)


def test_gmm_path_single_reference_matches_cfm_law(linear):
    x0 = np.array([[1.5, -0.5]])
    p = targets.sample_gmm_path(x0, linear, 0.6, substream(1), size=20_000)
    assert np.all(p.index == 0)
    z = (p.xt - 0.4 * x0) / 0.6
    assert np.all(np.abs(z.mean(axis=0)) < 3 / np.sqrt(2e4))
    assert np.all(np.abs(z.var(axis=0) - 1) < 3 * np.sqrt(2 / 2e4))


def test_gmm_path_symmetric_mean(linear):
    p = targets.sample_gmm_path(np.array([[-1.0], [1.0]]), linear, 0.5, substream(2), size=100_000)
    se = p.xt.std() / np.sqrt(1e5)
    assert abs(p.xt.mean()) < 3 * se


def test_gmm_path_is_deterministic(schedule):
    pts = np.random.default_rng(0).normal(size=(8, 3))
    a = targets.sample_gmm_path(pts, schedule, 0.3, substream(5), size=10)
    b = targets.sample_gmm_path(pts, schedule, 0.3, substream(5), size=10)
    assert np.array_equal(a.xt, b.xt) and np.array_equal(a.index, b.index)


def test_stf_noises_from_first_reference(linear):
    pts = np.array([[-1.0], [1.0]])
    xt, tgt = targets.stf_target(pts, linear, 0.5, substream(3), size=100_000)
    se = xt.std() / np.sqrt(1e5)
    assert abs(xt.mean() - 0.5 * -1.0) < 3 * se
    assert abs(xt.mean()) > 10 * se
    np.testing.assert_allclose(tgt, targets.stablevm_target(pts, linear, xt, 0.5), atol=1e-14)


def test_stf_single_reference_matches_cfm(schedule):
    x0 = np.array([[0.2, 0.4]])
    xt, tgt = targets.stf_target(x0, schedule, 0.7, substream(4), size=5)
    xc, tc = targets.cfm_sample(np.repeat(x0, 5, axis=0), schedule, 0.7, substream(4))
    np.testing.assert_allclose(xt, xc, atol=1e-15)
    np.testing.assert_allclose(tgt, tc, atol=1e-12)


def test_snis_single_point_is_conditional_velocity(schedule):
    x0 = np.array([[0.3, -0.7]])
    xt = np.random.default_rng(0).normal(size=(4, 2))
    np.testing.assert_allclose(targets.snis_velocity(x0, schedule, xt, 0.5),
                               cond_velocity(schedule, xt, np.broadcast_to(x0, xt.shape), 0.5), atol=1e-14)


@pytest.fixture(scope="module")
def snis_data(mixture10):
    return gmm.sample(mixture10, substream(0, "snis-data"), 50_000)


@pytest.mark.parametrize("t", [
    pytest.param(0.2, marks=pytest.mark.xfail(strict=True, reason=(
        "effective sample size is roughly 10-90 of 50,000 at t=0.2; the delta-method standard "
        "error undercovers there (about 95% of errors fall within 3 SE)"))),
    0.3, 0.4, 0.5,
])
def test_snis_agrees_with_oracle_at_n_50000(linear, mixture10, snis_data, t):
    rng = substream(0, "snis-probes", t)
    x0 = gmm.sample(mixture10, rng, 320)
    xt = corrupt(linear, x0, rng.standard_normal(x0.shape), t).xt
    v, se = targets.snis_velocity(snis_data, linear, xt, t, return_stderr=True)
    z = np.abs(v - gmm.exact_velocity(mixture10, linear, xt, t)) / se
    # 3200 coordinate-wise 3-SE checks: coverage should sit near the nominal 99.7%
    assert np.mean(z < 3) >= 0.99, np.mean(z < 3)


def test_snis_stderr_shrinks_with_more_data(linear, mixture10):
    rng = substream(1, "se")
    x0 = gmm.sample(mixture10, rng, 20)
    xt = corrupt(linear, x0, rng.standard_normal(x0.shape), 0.4).xt
    big = gmm.sample(mixture10, substream(1, "big"), 40_000)
    _, se_small = targets.snis_velocity(big[:20_000], linear, xt, 0.4, return_stderr=True)
    _, se_big = targets.snis_velocity(big, linear, xt, 0.4, return_stderr=True)
    assert se_big.mean() <= se_small.mean()


def test_snis_chunking_is_exact(schedule):
    rng = np.random.default_rng(7)
    data = rng.normal(size=(3000, 2))
    xt = rng.normal(size=(3, 2))
    whole = targets.snis_velocity(data, schedule, xt, 0.3, chunk=10_000)
    chunked = targets.snis_velocity(data, schedule, xt, 0.3, chunk=257)
    np.testing.assert_allclose(chunked, whole, atol=1e-12)


def test_posterior_refs_shapes_and_delta_collapse(schedule):
    spec = delta_spec([0.25, -0.5])
    refs = targets.sample_posterior_refs(spec, schedule, np.array([0.1, 0.2]), 0.6, 5, substream(1))
    assert refs.points.shape == (5, 2)
    np.testing.assert_allclose(refs.points, np.broadcast_to([0.25, -0.5], (5, 2)), atol=1e-4)
    one = targets.sample_posterior_refs(spec, schedule, np.array([0.1, 0.2]), 0.6, 1, substream(2))
    assert one.points.shape == (1, 2)
    stack = targets.sample_posterior_refs(spec, schedule, np.zeros((4, 2)), 0.6, 3, substream(3))
    assert stack.points.shape == (4, 3, 2)


def test_posterior_row_matches_conjugate_gaussian(linear, std_normal):
    # one reference: every row is the exact posterior draw N(1, 0.5) at xt=1, t=0.5
    refs = targets.sample_posterior_refs(std_normal, linear, np.array([1.0]), 0.5, 1, substream(4), trials=100_000)
    x = refs.points[:, 0, 0]
    assert abs(x.mean() - 1.0) < 3 * np.sqrt(0.5 / 1e5)
    assert abs(x.var() - 0.5) < 3 * 0.5 * np.sqrt(2 / 1e5)


def test_reference_batch_validation():
    with pytest.raises(ValueError):
        targets.ReferenceBatch(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        targets.ReferenceBatch(np.array([[np.nan, 0.0]]))

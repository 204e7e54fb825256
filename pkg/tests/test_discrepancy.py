import numpy as np
import pytest

from jmmd.discrepancy import (
    jmmd,
    jmmd_grad,
    jmmd_linear,
    jmmd_value_and_grad,
    joint_gram,
    layerwise_mmd_value_and_grad,
    mmd,
    report,
)
from jmmd.kernels import KernelSpec, gram, median_bandwidth
from oracles import brute_jmmd, brute_linear, fd_grad, rel_err

LIN = KernelSpec.linear()


def random_stacks(rng, ns, nt, dims=(3, 2), shift=0.0):
    zs = [rng.normal(size=(ns, d)) for d in dims]
    zt = [rng.normal(size=(nt, d)) + shift for d in dims]
    return zs, zt


def kernel_sets(zs, zt):
    gauss = [KernelSpec.gaussian(median_bandwidth(np.vstack([a, b]))) for a, b in zip(zs, zt)]
    return {"gaussian": gauss, "linear": [LIN] * len(zs), "mixed": [gauss[0]] + [LIN] * (len(zs) - 1)}


# --- values -----------------------------------------------------------------


def test_mmd_examples():
    x = np.array([[0.3, -1.0], [2.0, 0.5]])
    assert mmd(KernelSpec.gaussian(1.0), x, x.copy(), "biased") == 0.0
    assert mmd(LIN, [[0.0]], [[2.0]], "biased") == 4.0
    assert mmd(KernelSpec.gaussian(1.0), [[0.0], [0.0]], [[0.0], [0.0]], "unbiased") == 0.0


def test_mmd_errors():
    with pytest.raises(ValueError):
        mmd(LIN, np.zeros((0, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        mmd(LIN, np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        mmd(LIN, np.ones((1, 2)), np.ones((3, 2)), "unbiased")
    with pytest.raises(ValueError):
        mmd(LIN, np.ones((2, 2)), np.ones((2, 2)), "bogus")


def test_jmmd_matches_bruteforce_small_integers():
    zs = [np.array([[1.0], [2.0]]), np.array([[0.0, 1.0], [1.0, 1.0]])]
    zt = [np.array([[0.0], [3.0]]), np.array([[2.0, 0.0], [1.0, -1.0]])]
    # by hand: joint Kss=[[1,2],[2,8]], Ktt=[[0,0],[0,18]], Kst=[[0,-3],[0,0]]
    assert brute_jmmd([LIN, LIN], zs, zt) == pytest.approx(13 / 4 + 18 / 4 - 2 * (-3 / 4), rel=1e-15)
    assert jmmd([LIN, LIN], zs, zt, "biased") == pytest.approx(brute_jmmd([LIN, LIN], zs, zt), rel=1e-14)


@pytest.mark.parametrize("estimator", ["biased", "unbiased"])
def test_jmmd_matches_bruteforce_random(estimator, rng):
    for _ in range(10):
        zs, zt = random_stacks(rng, 6, 5)
        for name, ks in kernel_sets(zs, zt).items():
            fast = jmmd(ks, zs, zt, estimator)
            slow = brute_jmmd(ks, zs, zt, unbiased=estimator == "unbiased")
            assert fast == pytest.approx(slow, rel=1e-10, abs=1e-13), name


def test_jmmd_identical_samples_zero(rng):
    zs, _ = random_stacks(rng, 5, 5)
    ks = kernel_sets(zs, zs)["gaussian"]
    assert jmmd(ks, zs, [z.copy() for z in zs], "biased") == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("estimator", ["biased", "unbiased", "linear"])
def test_single_layer_reduction_is_exact(estimator, rng):
    for _ in range(100):
        zs, zt = random_stacks(rng, 6, 6, dims=(3,))
        spec = KernelSpec.gaussian(rng.uniform(0.5, 5.0))
        for k in (spec, LIN):
            assert jmmd([k], zs, zt, estimator) == mmd(k, zs[0], zt[0], estimator)


def test_joint_gram_is_product_of_layer_grams(rng):
    zs, zt = random_stacks(rng, 4, 7)
    ks = kernel_sets(zs, zt)["mixed"]
    expected = gram(ks[0], zs[0], zt[0]) * gram(ks[1], zs[1], zt[1])
    np.testing.assert_array_equal(joint_gram(ks, zs, zt), expected)


@pytest.mark.parametrize("estimator", ["biased", "unbiased"])
def test_symmetry(estimator, rng):
    for _ in range(20):
        zs, zt = random_stacks(rng, 8, 8, shift=0.5)
        for ks in kernel_sets(zs, zt).values():
            assert abs(jmmd(ks, zs, zt, estimator) - jmmd(ks, zt, zs, estimator)) <= 1e-12


def test_biased_nonnegative(rng):
    # products of PSD kernels stay PSD, so every kernel set qualifies
    for _ in range(100):
        zs, zt = random_stacks(rng, rng.integers(1, 8), rng.integers(1, 8))
        for ks in kernel_sets(zs, zt).values():
            assert jmmd(ks, zs, zt, "biased") >= -1e-12


def test_layer_count_mismatch():
    z = [np.ones((2, 2)), np.ones((2, 1))]
    with pytest.raises(ValueError):
        jmmd([LIN], z, z)
    with pytest.raises(ValueError):
        jmmd([LIN, LIN], z, [np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(ValueError):
        jmmd([LIN, LIN], [np.ones((2, 2)), np.ones((3, 1))], z)


# --- linear-time ---------------------------------------------------------------


def test_linear_examples():
    assert jmmd_linear([LIN], [[[0.0], [0.0]]], [[[1.0], [1.0]]]) == 1.0
    z = [np.full((4, 2), 0.7), np.full((4, 1), -1.0)]
    ks = [KernelSpec.gaussian(1.0), LIN]
    assert jmmd_linear(ks, z, [m.copy() for m in z]) == 0.0


def test_linear_matches_bruteforce(rng):
    for _ in range(20):
        zs, zt = random_stacks(rng, 8, 8, shift=0.3)
        for ks in kernel_sets(zs, zt).values():
            assert jmmd_linear(ks, zs, zt) == pytest.approx(brute_linear(ks, zs, zt), rel=1e-12, abs=1e-14)


def test_linear_rejects_odd_or_unequal():
    z4 = [np.ones((4, 1))]
    with pytest.raises(ValueError):
        jmmd_linear([LIN], [np.ones((3, 1))], [np.ones((3, 1))])
    with pytest.raises(ValueError):
        jmmd_linear([LIN], z4, [np.ones((6, 1))])


def test_linear_unbiased_over_repairings(rng):
    zs, zt = random_stacks(rng, 64, 64, shift=0.4)
    ks = kernel_sets(zs, zt)["gaussian"]
    target = jmmd(ks, zs, zt, "unbiased")
    vals = []
    for _ in range(1000):
        ps, pt = rng.permutation(64), rng.permutation(64)
        vals.append(jmmd_linear(ks, [z[ps] for z in zs], [z[pt] for z in zt]))
    vals = np.array(vals)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - target) <= 3 * se


# --- gradients -------------------------------------------------------------------


def test_grad_closed_form_single_point():
    zs, zt = [np.array([[1.5]])], [np.array([[-0.5]])]
    assert jmmd([LIN], zs, zt) == pytest.approx(4.0)
    gs, gt = jmmd_grad([LIN], zs, zt, "biased")
    np.testing.assert_allclose(gs[0], [[4.0]])
    np.testing.assert_allclose(gt[0], [[-4.0]])


def test_grad_zero_at_coincidence(rng):
    zs, _ = random_stacks(rng, 6, 6)
    zt = [z.copy() for z in zs]
    for ks in kernel_sets(zs, zt).values():
        gs, gt = jmmd_grad(ks, zs, zt, "biased")
        for a, b in zip(gs, gt):
            np.testing.assert_allclose(a + b, 0.0, atol=1e-10)


@pytest.mark.parametrize("estimator", ["biased", "unbiased", "linear"])
@pytest.mark.parametrize("family", ["gaussian", "linear", "mixed"])
def test_grad_finite_differences(estimator, family, rng):
    worst = 0.0
    for _ in range(50):
        zs, zt = random_stacks(rng, 4, 4, dims=(2, 2), shift=0.5)
        ks = kernel_sets(zs, zt)[family]
        gs, gt = jmmd_grad(ks, zs, zt, estimator)
        num = fd_grad(lambda: jmmd(ks, zs, zt, estimator), zs + zt)
        worst = max(worst, rel_err(gs + gt, num))
    assert worst < 1e-4


def test_value_and_grad_consistent(rng):
    zs, zt = random_stacks(rng, 6, 6)
    ks = kernel_sets(zs, zt)["gaussian"]
    for est in ("biased", "unbiased", "linear"):
        v, gs, gt = jmmd_value_and_grad(ks, zs, zt, est)
        assert v == jmmd(ks, zs, zt, est)


def test_layerwise_mmd_is_sum_and_grad(rng):
    zs, zt = random_stacks(rng, 4, 4, shift=0.2)
    ks = kernel_sets(zs, zt)["gaussian"]
    v, gs, gt = layerwise_mmd_value_and_grad(ks, zs, zt, "biased")
    assert v == pytest.approx(sum(mmd(k, a, b) for k, a, b in zip(ks, zs, zt)))

    def f():
        return layerwise_mmd_value_and_grad(ks, zs, zt, "biased")[0]

    assert rel_err(gs + gt, fd_grad(f, zs + zt)) < 1e-4


def test_two_sample_behaviour():
    rng = np.random.default_rng(2024)
    n, reps = 500, 200
    spec = KernelSpec.gaussian(median_bandwidth(rng.normal(size=(400, 2))))
    null = []
    for _ in range(reps):
        null.append(mmd(spec, rng.normal(size=(n, 2)), rng.normal(size=(n, 2)), "unbiased"))
    null = np.array(null)
    assert abs(null.mean()) <= 3 * null.std(ddof=1) / np.sqrt(reps)
    q99 = np.quantile(null, 0.99)
    for _ in range(20):
        alt = mmd(spec, rng.normal(size=(n, 2)), rng.normal(size=(n, 2)) + [3.0, 0.0], "unbiased")
        assert alt > q99


def test_report_fields(rng):
    zs, zt = random_stacks(rng, 5, 7)
    ks = kernel_sets(zs, zt)["gaussian"]
    r = report(ks, zs, zt, "unbiased")
    d = r.to_dict()
    assert d["statistic"] == "jmmd" and d["estimator"] == "unbiased"
    assert d["n_source"] == 5 and d["n_target"] == 7
    assert len(d["kernels"]) == 2
    assert report(ks[:1], zs[:1], zt[:1]).statistic == "mmd"

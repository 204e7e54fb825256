import math

import numpy as np
import pytest

from jmmd.kernels import KernelSpec, gram, kernel_eval, kernel_grad, median_bandwidth, paired_kernel


def test_kernel_eval_examples():
    g1 = KernelSpec.gaussian(1.0)
    assert kernel_eval(KernelSpec.gaussian(3.7), [1.0, -2.0], [1.0, -2.0]) == 1.0
    assert kernel_eval(g1, [0.0], [1.0]) == pytest.approx(math.exp(-1), rel=1e-15)
    assert kernel_eval(KernelSpec.linear(), [1, 2], [3, 4]) == 11.0


def test_kernel_eval_symmetric_exactly(rng):
    for spec in (KernelSpec.gaussian(0.7), KernelSpec.linear()):
        for _ in range(50):
            x, y = rng.normal(size=(2, 4))
            assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec.linear(), [1, 2], [1, 2, 3])


def test_kernelspec_validation():
    with pytest.raises(ValueError):
        KernelSpec.gaussian(0.0)
    with pytest.raises(ValueError):
        KernelSpec("polynomial", 1.0)
    KernelSpec("linear", 0.0)  # bandwidth ignored


def test_gram_examples(rng):
    a = rng.normal(size=(7, 3))
    np.testing.assert_array_equal(np.diag(gram(KernelSpec.gaussian(2.0), a, a)), np.ones(7))
    np.testing.assert_array_equal(gram(KernelSpec.linear(), [[1.0], [2.0]], [[3.0]]), [[3.0], [6.0]])
    np.testing.assert_allclose(gram(KernelSpec.gaussian(2.0), [[0.0]], [[2.0]]), [[math.exp(-2)]], rtol=1e-15)


def test_gram_matches_kernel_eval(rng):
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    for spec in (KernelSpec.gaussian(1.3), KernelSpec.linear()):
        K = gram(spec, a, b)
        ref = np.array([[kernel_eval(spec, x, y) for y in b] for x in a])
        np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(paired_kernel(spec, a[:4], b), np.diag(ref), rtol=1e-12)


def test_gaussian_gram_psd(rng):
    for _ in range(10):
        a = rng.normal(size=(20, 3))
        K = gram(KernelSpec.gaussian(median_bandwidth(a)), a, a)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8
        v = rng.normal(size=(100, 20))
        assert np.einsum("ki,ij,kj->k", v, K, v).min() >= -1e-8


def test_median_bandwidth_examples():
    assert median_bandwidth([[0.0], [1.0], [3.0]]) == 4.0
    assert median_bandwidth([[2.0, 1.0], [2.0, 1.0]]) == 1.0
    assert median_bandwidth([[0.0], [2.0]]) == 4.0


def test_median_bandwidth_fallback_smallest_positive():
    # 10 zero-distance pairs and 5 pairs at 9: median is 0, fallback gives 9
    data = [[0.0]] * 5 + [[3.0]]
    assert median_bandwidth(data) == 9.0


def test_median_bandwidth_errors_and_permutation(rng):
    with pytest.raises(ValueError):
        median_bandwidth([[1.0, 2.0]])
    a = rng.normal(size=(15, 2))
    assert median_bandwidth(a) == median_bandwidth(a[rng.permutation(15)])


def test_kernel_grad_examples():
    gx, gy = kernel_grad(KernelSpec.gaussian(2.0), [1.0, 3.0], [1.0, 3.0])
    np.testing.assert_array_equal(gx, [0.0, 0.0])
    np.testing.assert_array_equal(gy, [0.0, 0.0])
    gx, gy = kernel_grad(KernelSpec.linear(), [1.0], [5.0])
    np.testing.assert_array_equal(gx, [5.0])
    np.testing.assert_array_equal(gy, [1.0])
    gx, gy = kernel_grad(KernelSpec.gaussian(1.0), [0.0], [1.0])
    np.testing.assert_allclose(gx, [2 * math.exp(-1)], rtol=1e-15)
    np.testing.assert_allclose(gy, [-2 * math.exp(-1)], rtol=1e-15)


@pytest.mark.parametrize("spec", [KernelSpec.gaussian(1.7), KernelSpec.linear()], ids=["gaussian", "linear"])
def test_kernel_grad_finite_differences(spec, rng):
    h = 1e-6
    for _ in range(50):
        x, y = rng.normal(size=(2, 3))
        gx, gy = kernel_grad(spec, x, y)
        for g, which in ((gx, 0), (gy, 1)):
            num = np.zeros(3)
            for d in range(3):
                e = np.zeros(3)
                e[d] = h
                if which == 0:
                    num[d] = (kernel_eval(spec, x + e, y) - kernel_eval(spec, x - e, y)) / (2 * h)
                else:
                    num[d] = (kernel_eval(spec, x, y + e) - kernel_eval(spec, x, y - e)) / (2 * h)
            scale = max(np.max(np.abs(g)), 1e-6)
            assert np.max(np.abs(g - num)) / scale < 1e-5

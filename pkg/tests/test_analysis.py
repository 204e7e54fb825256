import csv

import numpy as np
import pytest

from jmmd.analysis import export_features, fit_logistic, measure_jmmd, one_hot, proxy_a_distance
from jmmd.datagen import Dataset, blobs, two_moons_pair
from jmmd.discrepancy import jmmd, mmd
from jmmd.kernels import KernelSpec, median_kernels
from jmmd.network import MlpSpec, features, init_params


@pytest.fixture(scope="module")
def net():
    spec = MlpSpec((2, 16, 8, 2))
    return spec, init_params(spec, 0)


def test_a_distance_identity():
    x = np.random.default_rng(0).normal(size=(100, 3))
    r = proxy_a_distance(x, x.copy(), seed=0)
    assert abs(r.d_A) < 0.2
    assert r.d_A == 2.0 * (1.0 - 2.0 * r.epsilon)


def test_a_distance_disjoint_blobs():
    a = blobs(200, 4, np.zeros(4), 1.0, seed=1)
    b = blobs(200, 4, np.r_[10.0, 0, 0, 0], 1.0, seed=2)
    r = proxy_a_distance(a.features, b.features, seed=3)
    assert r.d_A > 1.8 and r.epsilon == 0.0 and r.d_A == 2.0
    assert r.to_dict()["classifier"]["l2"] == 1e-3


def test_a_distance_swap_symmetric(rng):
    for seed in range(5):
        a = rng.normal(size=(80, 2))
        b = rng.normal(size=(60, 2)) + [0.7, 0.0]
        ab = proxy_a_distance(a, b, seed).d_A
        ba = proxy_a_distance(b, a, seed).d_A
        assert abs(ab - ba) <= 0.1
        assert -2.0 <= ab <= 2.0


def test_a_distance_errors():
    with pytest.raises(ValueError, match="dimension"):
        proxy_a_distance(np.ones((5, 2)), np.ones((5, 3)))
    with pytest.raises(ValueError, match="at least 4"):
        proxy_a_distance(np.ones((3, 2)), np.ones((5, 2)))


def test_logistic_matches_optimality(rng):
    x = rng.normal(size=(200, 2))
    y = (x @ [1.0, -2.0] + 0.3 * rng.normal(size=200) > 0).astype(float)
    w, b, _, converged = fit_logistic(x, y, l2=1e-3)
    assert converged
    z = x @ w + b
    p = 1 / (1 + np.exp(-z))
    # stationarity of the regularised loss
    np.testing.assert_allclose(x.T @ (p - y) / 200 + 1e-3 * w, 0.0, atol=1e-7)
    assert abs(np.mean(p - y)) < 1e-7


def test_measure_jmmd_uses_features_and_one_hot(net):
    spec, params = net
    src, tgt = two_moons_pair(40, seed=1)
    r = measure_jmmd(params, spec, None, src, tgt)
    fs, ft = features(params, spec, src.features), features(params, spec, tgt.features)
    zs, zt = [fs, one_hot(src.eval_labels, 2)], [ft, one_hot(tgt.eval_labels, 2)]
    ks = median_kernels([np.vstack([a, b]) for a, b in zip(zs, zt)])
    assert r.value == jmmd(ks, zs, zt)
    assert r.statistic == "jmmd" and r.n_source == 40


def test_measure_single_layer_is_mmd(net):
    spec, params = net
    src, tgt = two_moons_pair(30, seed=2)
    k = KernelSpec.gaussian(0.7)
    r = measure_jmmd(params, spec, [k], src, tgt, "unbiased", with_labels=False)
    assert r.value == mmd(k, features(params, spec, src.features), features(params, spec, tgt.features), "unbiased")


def test_measure_identical_domains_below_permutation_quantile(net):
    spec, params = net
    src, _ = two_moons_pair(60, seed=3)
    tgt = src.as_target()
    r = measure_jmmd(params, spec, None, src, tgt)
    assert r.value == pytest.approx(0.0, abs=1e-12)

    z = [features(params, spec, src.features), one_hot(src.eval_labels, 2)]
    pooled = [np.vstack([a, a]) for a in z]
    rng = np.random.default_rng(0)
    null = []
    for _ in range(200):
        perm = rng.permutation(120)
        null.append(jmmd(r.kernels, [p[perm[:60]] for p in pooled], [p[perm[60:]] for p in pooled]))
    assert r.value < np.quantile(null, 0.99)


def test_measure_requires_eval_labels(net):
    spec, params = net
    src, tgt = two_moons_pair(20, seed=4)
    tgt = Dataset(tgt.features, None, "target")
    with pytest.raises(ValueError, match="evaluation labels"):
        measure_jmmd(params, spec, None, src, tgt)


def test_export_features(net, tmp_path):
    spec, params = net
    src, _ = two_moons_pair(25, seed=5)
    p = export_features(params, spec, src, tmp_path / "f.csv")
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    d = spec.layer_dims[-2]
    assert rows[0] == [f"f{i}" for i in range(d)] + ["domain", "label"]
    assert len(rows) == 26 and all(len(r) == d + 2 for r in rows)
    got = np.array([[float(v) for v in r[:d]] for r in rows[1:]])
    assert got.tobytes() == features(params, spec, src.features).tobytes()
    first = p.read_bytes()
    export_features(params, spec, src, p)
    assert p.read_bytes() == first

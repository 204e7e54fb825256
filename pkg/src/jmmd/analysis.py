"""Post-hoc diagnostics: proxy A-distance, JMMD on learned features, feature export."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .discrepancy import BIASED, report
from .kernels import KernelSpec, median_kernels
from .network import features
from .numerics import as_matrix, derive_seed, make_rng

L2_STRENGTH = 1e-3


@dataclass
class ADistanceReport:
    epsilon: float
    d_A: float
    classifier: dict = field(default_factory=dict)
    seed: int = 0
    n_train: int = 0
    n_test: int = 0

    def to_dict(self):
        return {
            "epsilon": float(self.epsilon),
            "d_A": float(self.d_A),
            "classifier": dict(self.classifier),
            "seed": int(self.seed),
            "n_train": int(self.n_train),
            "n_test": int(self.n_test),
        }


def _split(seed, n):
    # depends only on (seed, n): swapping domains swaps nothing but the labels
    perm = make_rng(derive_seed(seed, n)).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def fit_logistic(x, y, l2=L2_STRENGTH, tol=1e-8, max_iter=20000):
    """L2-regularised logistic regression by full-batch gradient descent.

    Minimises ``mean(log(1 + exp(-s z))) + l2/2 |w|^2`` with ``s = 2y - 1``
    and ``z = x w + b``; the bias is not penalised. The step size is the
    inverse of the loss's Lipschitz constant, so the iteration is monotone.

    Returns ``(w, b, n_iter, converged)``.
    """
    x = as_matrix(x, "x")
    s = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    m, d = x.shape
    xa = np.hstack([x, np.ones((m, 1))])
    lip = 0.25 * np.linalg.norm(xa, 2) ** 2 / m + l2
    step = 1.0 / lip
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    it, converged = 0, False
    for it in range(1, max_iter + 1):
        z = xa @ theta
        # d/dz log(1 + exp(-s z)) = -s sigmoid(-s z)
        g = xa.T @ (-s * 0.5 * (1.0 - np.tanh(0.5 * s * z))) / m + reg * theta
        if np.linalg.norm(g) < tol:
            converged = True
            break
        theta -= step * g
    return theta[:-1], float(theta[-1]), it, converged


def proxy_a_distance(features_s, features_t, seed=0, l2=L2_STRENGTH):
    """Proxy A-distance ``2 (1 - 2 eps)`` from a linear source-vs-target discriminator.

    Each domain is split 50/50 into train and test rows, the permutation
    seeded by ``(seed, n_rows)`` alone; ``eps`` is the discriminator's error
    on the pooled test rows. Features are standardised with training-split
    statistics before fitting.
    """
    xs = as_matrix(features_s, "features_s")
    xt = as_matrix(features_t, "features_t")
    if xs.shape[1] != xt.shape[1]:
        raise ValueError(f"dimension mismatch: source has {xs.shape[1]} columns, target has {xt.shape[1]}")
    for name, m in (("source", xs), ("target", xt)):
        if m.shape[0] < 4:
            raise ValueError(f"{name} has {m.shape[0]} rows; at least 4 are needed for a train/test split")
    s_tr, s_te = _split(seed, xs.shape[0])
    t_tr, t_te = _split(seed, xt.shape[0])
    x_tr = np.vstack([xs[s_tr], xt[t_tr]])
    y_tr = np.r_[np.zeros(len(s_tr)), np.ones(len(t_tr))]
    x_te = np.vstack([xs[s_te], xt[t_te]])
    y_te = np.r_[np.zeros(len(s_te)), np.ones(len(t_te))]

    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    w, b, n_iter, converged = fit_logistic((x_tr - mu) / sd, y_tr, l2=l2)
    pred = ((x_te - mu) / sd) @ w + b > 0
    eps = float(np.mean(pred != (y_te == 1)))
    return ADistanceReport(
        epsilon=eps,
        d_A=2.0 * (1.0 - 2.0 * eps),
        classifier={"model": "linear logistic regression", "solver": "gradient descent",
                    "l2": l2, "iterations": n_iter, "converged": converged, "split": "stratified 50/50"},
        seed=seed,
        n_train=len(y_tr),
        n_test=len(y_te),
    )


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def evaluation_stack(params, spec, dataset, with_labels=True):
    """Feature-layer activations, plus one-hot ground truth when ``with_labels``."""
    layers = [features(params, spec, dataset.features)]
    if with_labels:
        if dataset.eval_labels is None:
            raise ValueError(f"{dataset.domain} dataset has no evaluation labels")
        if dataset.eval_labels.size and dataset.eval_labels.max() >= spec.n_classes:
            raise ValueError(f"{dataset.domain} labels exceed the network's {spec.n_classes} classes")
        layers.append(one_hot(dataset.eval_labels, spec.n_classes))
    return layers


def measure_jmmd(params, spec, kernels, source, target, estimator=BIASED, with_labels=True):
    """JMMD between domains on learned features and ground-truth labels.

    Labels enter one-hot at the label slot, so this is an evaluation-only
    quantity; training uses predicted probabilities instead. With
    ``kernels=None`` a median-heuristic Gaussian kernel is fitted per layer on
    the pooled sample.
    """
    zs = evaluation_stack(params, spec, source, with_labels)
    zt = evaluation_stack(params, spec, target, with_labels)
    if kernels is None:
        kernels = median_kernels([np.vstack([a, b]) for a, b in zip(zs, zt)])
    kernels = [k if isinstance(k, KernelSpec) else KernelSpec.from_dict(k) for k in kernels]
    layers = ["features", "labels"] if with_labels else ["features"]
    return report(kernels, zs, zt, estimator, statistic="jmmd" if with_labels else "mmd", layers=layers)


def export_features(params, spec, dataset, path):
    """Write final-hidden-layer activations as CSV: ``f0..f{d-1},domain,label``.

    ``dataset`` may also be a sequence of datasets, written one after another.
    """
    datasets = [dataset] if isinstance(dataset, Dataset) else list(dataset)
    blocks = [features(params, spec, ds.features) for ds in datasets]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(blocks[0].shape[1])] + ["domain", "label"])
        for ds, f in zip(datasets, blocks):
            labels = ds.eval_labels
            for i, row in enumerate(f):
                w.writerow([format(v, ".17g") for v in row] + [ds.domain, "" if labels is None else str(int(labels[i]))])
    return path

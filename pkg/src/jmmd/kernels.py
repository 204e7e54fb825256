"""Kernels, Gram matrices and the median bandwidth heuristic.

The Gaussian kernel is ``exp(-|x - y|^2 / b)`` where ``b`` is measured in
squared feature distance, so a pair at the median squared distance evaluates
to ``exp(-1)`` when ``b`` comes from :func:`median_bandwidth`.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, pairwise_sq_dists

GAUSSIAN = "gaussian"
LINEAR = "linear"
FAMILIES = (GAUSSIAN, LINEAR)


@dataclass(frozen=True)
class KernelSpec:
    family: str = GAUSSIAN
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.family == GAUSSIAN and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"Gaussian bandwidth must be positive and finite, got {self.bandwidth}")

    @classmethod
    def gaussian(cls, bandwidth):
        return cls(GAUSSIAN, float(bandwidth))

    @classmethod
    def linear(cls):
        return cls(LINEAR, 1.0)

    def to_dict(self):
        return {"family": self.family, "bandwidth": float(self.bandwidth)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], float(d.get("bandwidth", 1.0)))


def _vectors(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"kernel arguments differ in dimension: {x.shape[0]} vs {y.shape[0]}")
    return x, y


def kernel_eval(spec, x, y):
    x, y = _vectors(x, y)
    if spec.family == LINEAR:
        return float(np.dot(x, y))
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / spec.bandwidth))


def kernel_grad(spec, x, y):
    """Return ``(dk/dx, dk/dy)`` for a single pair of vectors."""
    x, y = _vectors(x, y)
    if spec.family == LINEAR:
        return y.copy(), x.copy()
    k = kernel_eval(spec, x, y)
    gx = -(2.0 / spec.bandwidth) * k * (x - y)
    return gx, -gx


def gram(spec, a, b):
    """Kernel matrix with entry ``(i, j) = k(a_i, b_j)``."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b") if b is not a else a
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"gram column mismatch: {a.shape} vs {b.shape}")
    if spec.family == LINEAR:
        return a @ b.T
    return np.exp(-pairwise_sq_dists(a, b) / spec.bandwidth)


def paired_kernel(spec, a, b):
    """Row-wise kernel values ``k(a_i, b_i)`` for equally sized ``a`` and ``b``."""
    if spec.family == LINEAR:
        return np.einsum("ij,ij->i", a, b)
    diff = a - b
    return np.exp(-np.einsum("ij,ij->i", diff, diff) / spec.bandwidth)


def median_bandwidth(data):
    """Median of the off-diagonal pairwise squared distances of ``data``.

    Falls back to the smallest positive squared distance when the median is
    zero, and to 1.0 when every row is identical.
    """
    data = as_matrix(data, "data")
    n = data.shape[0]
    if n < 2:
        raise ValueError(f"median_bandwidth needs at least 2 rows, got {n}")
    d = pairwise_sq_dists(data, data)
    iu = np.triu_indices(n, k=1)
    off = d[iu]
    med = float(np.median(off))
    if med > 0:
        return med
    positive = off[off > 0]
    if positive.size:
        return float(positive.min())
    return 1.0


def median_kernels(layers):
    """One Gaussian :class:`KernelSpec` per matrix, each with its own median bandwidth."""
    return [KernelSpec.gaussian(median_bandwidth(z)) for z in layers]

"""Dense array helpers and seeded random streams.

Matrices are plain 2-D ``float64`` numpy arrays. Random streams use numpy's
PCG64 bit generator, which yields the same sequence for the same seed on
every platform numpy supports.
"""

import numpy as np

# element budget for the identical-row scan in pairwise_sq_dists
_EXACT_ZERO_LIMIT = 4_000_000


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-D float64 array, promoting 1-D input to one row."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def check_finite(a, name="array"):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains non-finite entries")
    return a


def make_rng(seed):
    """Seeded PCG64 generator. ``seed`` must be a non-negative integer."""
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master, *keys):
    """Deterministic child seed from a master seed and integer keys."""
    ss = np.random.SeedSequence([int(master), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def pairwise_sq_dists(a, b):
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Uses the expansion ``|a|^2 + |b|^2 - 2 a.b`` floored at zero. Entries for
    bitwise-identical rows are forced to exactly zero.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"pairwise_sq_dists column mismatch: {a.shape} vs {b.shape}")
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    if a is b:
        np.fill_diagonal(d, 0.0)
        d = 0.5 * (d + d.T)
    elif a.size * b.shape[0] <= _EXACT_ZERO_LIMIT:
        d[(a[:, None, :] == b[None, :, :]).all(axis=2)] = 0.0
    return d


def softmax(logits, axis=-1):
    """Softmax with max-subtraction; rows of a 2-D input are normalised."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)

"""MMD and joint MMD estimators with analytic gradients.

An activation stack is a sequence of 2-D arrays, one per adapted layer, all
with the same number of rows. The joint kernel between two rows is the
product of the per-layer kernels, so every estimator here works on the
entrywise product of per-layer Gram matrices.

Three estimators are provided:

``biased``
    V-statistic. All ``(i, j)`` pairs including ``i == j``; nonnegative.
``unbiased``
    U-statistic. Within-domain diagonals dropped, denominators ``n(n-1)``.
``linear``
    Consecutive-pair estimator over ``n/2`` quadruples; needs ``n_s == n_t``
    and ``n`` even.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import LINEAR, KernelSpec, gram, paired_kernel
from .numerics import as_matrix

BIASED = "biased"
UNBIASED = "unbiased"
LINEAR_TIME = "linear"
ESTIMATORS = (BIASED, UNBIASED, LINEAR_TIME)


@dataclass
class DiscrepancyReport:
    statistic: str
    estimator: str
    value: float
    n_source: int
    n_target: int
    kernels: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "statistic": self.statistic,
            "estimator": self.estimator,
            "value": float(self.value),
            "n_source": int(self.n_source),
            "n_target": int(self.n_target),
            "kernels": [k.to_dict() for k in self.kernels],
        }
        d.update(self.extra)
        return d


def _stack(z, name):
    if isinstance(z, np.ndarray) and z.ndim == 2:
        z = [z]
    layers = [as_matrix(m, f"{name}[{i}]") for i, m in enumerate(z)]
    if not layers:
        raise ValueError(f"{name} must contain at least one layer")
    n = layers[0].shape[0]
    if n == 0:
        raise ValueError(f"{name} is empty")
    for i, m in enumerate(layers):
        if m.shape[0] != n:
            raise ValueError(f"{name}[{i}] has {m.shape[0]} rows, expected {n}")
    return layers


def _check(kernels, zs, zt, estimator):
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    zs = _stack(zs, "zs")
    zt = _stack(zt, "zt")
    kernels = list(kernels)
    if not (len(kernels) == len(zs) == len(zt)):
        raise ValueError(
            f"layer count mismatch: {len(kernels)} kernels, {len(zs)} source layers, {len(zt)} target layers"
        )
    for i, (a, b) in enumerate(zip(zs, zt)):
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"layer {i} dimension mismatch: source {a.shape[1]} vs target {b.shape[1]}")
    ns, nt = zs[0].shape[0], zt[0].shape[0]
    if estimator == UNBIASED and (ns < 2 or nt < 2):
        raise ValueError("unbiased estimator needs at least 2 rows per domain")
    if estimator == LINEAR_TIME:
        if ns != nt:
            raise ValueError(f"linear-time estimator needs equal batch sizes, got {ns} and {nt}")
        if ns % 2:
            raise ValueError(f"linear-time estimator needs an even batch size, got {ns}")
    return kernels, zs, zt


def _product(factors):
    out = factors[0].copy()
    for f in factors[1:]:
        out *= f
    return out


def _leave_one_out(factors):
    """Products of all factors except the l-th, without dividing."""
    L = len(factors)
    ones = np.ones_like(factors[0])
    prefix = [ones]
    for f in factors[:-1]:
        prefix.append(prefix[-1] * f)
    out = [None] * L
    suffix = ones
    for l in range(L - 1, -1, -1):
        out[l] = prefix[l] * suffix
        suffix = suffix * factors[l]
    return out


def joint_gram(kernels, za, zb):
    """Entrywise product of the per-layer Gram matrices."""
    return _product([gram(k, a, b) for k, a, b in zip(kernels, za, zb)])


# --- quadratic estimators -------------------------------------------------


def _quadratic_value(Kss, Ktt, Kst, unbiased):
    ns, nt = Kss.shape[0], Ktt.shape[0]
    if unbiased:
        ss = (Kss.sum() - np.trace(Kss)) / (ns * (ns - 1))
        tt = (Ktt.sum() - np.trace(Ktt)) / (nt * (nt - 1))
    else:
        ss = Kss.mean()
        tt = Ktt.mean()
    return float(ss + tt - 2.0 * Kst.mean())


def _term_grads(kernels, grams, C, za, zb):
    """Gradients of ``sum_ij C_ij prod_l k_l(za_i, zb_j)`` w.r.t. ``za`` and ``zb``."""
    others = _leave_one_out(grams)
    ga, gb = [], []
    for spec, K, P, a, b in zip(kernels, grams, others, za, zb):
        W = C * P
        if spec.family == LINEAR:
            ga.append(W @ b)
            gb.append(W.T @ a)
        else:
            M = W * K
            s = 2.0 / spec.bandwidth
            ga.append(-s * (M.sum(axis=1)[:, None] * a - M @ b))
            gb.append(s * (M.T @ a - M.sum(axis=0)[:, None] * b))
    return ga, gb


def _quadratic(kernels, zs, zt, unbiased, need_grad):
    gss = [gram(k, a, a) for k, a in zip(kernels, zs)]
    gtt = [gram(k, a, a) for k, a in zip(kernels, zt)]
    gst = [gram(k, a, b) for k, a, b in zip(kernels, zs, zt)]
    value = _quadratic_value(_product(gss), _product(gtt), _product(gst), unbiased)
    if not need_grad:
        return value, None, None
    ns, nt = zs[0].shape[0], zt[0].shape[0]
    if unbiased:
        Css = (1.0 - np.eye(ns)) / (ns * (ns - 1))
        Ctt = (1.0 - np.eye(nt)) / (nt * (nt - 1))
    else:
        Css = np.full((ns, ns), 1.0 / (ns * ns))
        Ctt = np.full((nt, nt), 1.0 / (nt * nt))
    Cst = np.full((ns, nt), -2.0 / (ns * nt))
    a1, b1 = _term_grads(kernels, gss, Css, zs, zs)
    a2, b2 = _term_grads(kernels, gtt, Ctt, zt, zt)
    a3, b3 = _term_grads(kernels, gst, Cst, zs, zt)
    grad_s = [x + y + z for x, y, z in zip(a1, b1, a3)]
    grad_t = [x + y + z for x, y, z in zip(a2, b2, b3)]
    return value, grad_s, grad_t


# --- linear-time estimator -------------------------------------------------


def _paired_term(kernels, za, zb, coef, need_grad):
    kv = [paired_kernel(k, a, b) for k, a, b in zip(kernels, za, zb)]
    total = coef * _product(kv).sum()
    if not need_grad:
        return total, None, None
    ga, gb = [], []
    for spec, k, P, a, b in zip(kernels, kv, _leave_one_out(kv), za, zb):
        w = coef * P
        if spec.family == LINEAR:
            ga.append(w[:, None] * b)
            gb.append(w[:, None] * a)
        else:
            g = -(2.0 / spec.bandwidth) * (w * k)[:, None] * (a - b)
            ga.append(g)
            gb.append(-g)
    return total, ga, gb


def _linear(kernels, zs, zt, need_grad):
    n = zs[0].shape[0]
    c = 2.0 / n
    so = [z[0::2] for z in zs]
    se = [z[1::2] for z in zs]
    to = [z[0::2] for z in zt]
    te = [z[1::2] for z in zt]
    v1, g1a, g1b = _paired_term(kernels, so, se, c, need_grad)
    v2, g2a, g2b = _paired_term(kernels, to, te, c, need_grad)
    v3, g3a, g3b = _paired_term(kernels, so, te, -c, need_grad)
    v4, g4a, g4b = _paired_term(kernels, to, se, -c, need_grad)
    value = float(v1 + v2 + v3 + v4)
    if not need_grad:
        return value, None, None
    grad_s = [np.zeros_like(z) for z in zs]
    grad_t = [np.zeros_like(z) for z in zt]
    for l in range(len(zs)):
        grad_s[l][0::2] = g1a[l] + g3a[l]
        grad_s[l][1::2] = g1b[l] + g4b[l]
        grad_t[l][0::2] = g2a[l] + g4a[l]
        grad_t[l][1::2] = g2b[l] + g3b[l]
    return value, grad_s, grad_t


def _dispatch(kernels, zs, zt, estimator, need_grad):
    kernels, zs, zt = _check(kernels, zs, zt, estimator)
    if estimator == LINEAR_TIME:
        return _linear(kernels, zs, zt, need_grad)
    return _quadratic(kernels, zs, zt, estimator == UNBIASED, need_grad)


# --- public API -------------------------------------------------------------


def jmmd(kernels, zs, zt, estimator=BIASED):
    """Joint MMD between two activation stacks.

    ``estimator`` is ``"biased"``, ``"unbiased"`` or ``"linear"``; the last
    is the same as :func:`jmmd_linear`.
    """
    return _dispatch(kernels, zs, zt, estimator, need_grad=False)[0]


def jmmd_linear(kernels, zs, zt):
    return jmmd(kernels, zs, zt, LINEAR_TIME)


def mmd(spec, xs, xt, estimator=BIASED):
    """Single-kernel MMD; identical to :func:`jmmd` with one layer."""
    return jmmd([spec], [xs], [xt], estimator)


def jmmd_grad(kernels, zs, zt, estimator=BIASED):
    """Gradients of the chosen JMMD estimator w.r.t. every activation entry.

    Returns two lists shaped like ``zs`` and ``zt``.
    """
    _, gs, gt = _dispatch(kernels, zs, zt, estimator, need_grad=True)
    return gs, gt


def jmmd_value_and_grad(kernels, zs, zt, estimator=BIASED):
    return _dispatch(kernels, zs, zt, estimator, need_grad=True)


def layerwise_mmd_value_and_grad(kernels, zs, zt, estimator=BIASED):
    """Sum of independent per-layer MMDs (multi-layer baseline without the joint product)."""
    kernels, zs, zt = _check(kernels, zs, zt, estimator)
    total = 0.0
    gs, gt = [], []
    for k, a, b in zip(kernels, zs, zt):
        v, ga, gb = _dispatch([k], [a], [b], estimator, need_grad=True)
        total += v
        gs.append(ga[0])
        gt.append(gb[0])
    return total, gs, gt


def report(kernels, zs, zt, estimator=BIASED, statistic=None, **extra):
    zs = _stack(zs, "zs")
    zt = _stack(zt, "zt")
    kernels = [k if isinstance(k, KernelSpec) else KernelSpec.from_dict(k) for k in kernels]
    if statistic is None:
        statistic = "mmd" if len(zs) == 1 else "jmmd"
    return DiscrepancyReport(
        statistic=statistic,
        estimator=estimator,
        value=jmmd(kernels, zs, zt, estimator),
        n_source=zs[0].shape[0],
        n_target=zt[0].shape[0],
        kernels=kernels,
        extra=extra,
    )

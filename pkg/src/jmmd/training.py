"""JAN and adversarial JAN training loops.

The objective is source cross-entropy plus ``lambda_p`` times a joint MMD of
the adapted activations. With ``adversarial=True`` the activations first
pass through an :class:`~jmmd.network.AdversarialHead` whose parameters
ascend the same objective while the classifier descends it; both move in a
single simultaneous momentum-SGD update, the head's gradient sign-flipped.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .discrepancy import ESTIMATORS, LINEAR_TIME, jmmd_value_and_grad, layerwise_mmd_value_and_grad
from .kernels import median_kernels
from .network import (
    MlpSpec,
    _forward,
    backward,
    cross_entropy,
    forward,
    head_backward,
    head_forward,
    init_head,
    init_params,
    predict,
)
from .numerics import derive_seed, make_rng

CRITERIA = ("jmmd", "layerwise")


class TrainingDiverged(FloatingPointError):
    """Raised when the loss stops being finite; carries a snapshot of the state."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    lambda_max: float = 1.0
    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    gamma: float = 10.0
    momentum: float = 0.9
    # rate multiplier for layers trained from scratch (all of them here)
    scratch_lr_mult: float = 10.0
    batch_size: int = 64
    steps: int = 1500
    seed: int = 0
    adversarial: bool = False
    head_lr_scale: float = 1.0
    head_noise: float = 0.01
    estimator: str = LINEAR_TIME
    criterion: str = "jmmd"
    hidden: tuple = (64, 32)
    activation: str = "relu"
    adapted_layers: tuple = None
    recompute_bandwidth: bool = True
    clip_grad: bool = False
    clip_norm: float = 10.0
    eval_every: int = 10

    def errors(self):
        """Every validation problem, as a list of messages."""
        errs = []
        if not self.lambda_max >= 0:
            errs.append(f"lambda_max must be >= 0 (got {self.lambda_max})")
        if not self.eta0 >= 0:
            errs.append(f"eta0 must be >= 0 (got {self.eta0})")
        if not self.scratch_lr_mult >= 0:
            errs.append(f"scratch_lr_mult must be >= 0 (got {self.scratch_lr_mult})")
        if not 0 <= self.momentum < 1:
            errs.append(f"momentum must lie in [0, 1) (got {self.momentum})")
        if not isinstance(self.batch_size, int) or self.batch_size < 2 or self.batch_size % 2:
            errs.append(f"batch_size must be an even integer >= 2 (got {self.batch_size})")
        elif self.estimator == LINEAR_TIME and self.batch_size % 4:
            errs.append(f"linear estimator needs an even half-batch, so batch_size must be a multiple of 4 (got {self.batch_size})")
        if not isinstance(self.steps, int) or self.steps < 1:
            errs.append(f"steps must be an integer >= 1 (got {self.steps})")
        if not isinstance(self.seed, int) or self.seed < 0:
            errs.append(f"seed must be a non-negative integer (got {self.seed})")
        if self.estimator not in ESTIMATORS:
            errs.append(f"estimator must be one of {ESTIMATORS} (got {self.estimator!r})")
        if self.criterion not in CRITERIA:
            errs.append(f"criterion must be one of {CRITERIA} (got {self.criterion!r})")
        if not self.head_lr_scale >= 0:
            errs.append(f"head_lr_scale must be >= 0 (got {self.head_lr_scale})")
        if not self.clip_norm > 0:
            errs.append(f"clip_norm must be > 0 (got {self.clip_norm})")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            errs.append(f"hidden must list at least one positive width (got {self.hidden})")
        if self.activation not in ("relu", "tanh"):
            errs.append(f"activation must be 'relu' or 'tanh' (got {self.activation!r})")
        if not isinstance(self.eval_every, int) or self.eval_every < 1:
            errs.append(f"eval_every must be an integer >= 1 (got {self.eval_every})")
        return errs

    def validate(self):
        errs = self.errors()
        if errs:
            raise ValueError("invalid TrainConfig:\n  " + "\n  ".join(errs))
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["adapted_layers"] = None if self.adapted_layers is None else list(self.adapted_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        if d.get("adapted_layers") is not None:
            d["adapted_layers"] = tuple(d["adapted_layers"])
        return cls(**d)

    def network_spec(self, input_dim, n_classes):
        dims = (int(input_dim), *map(int, self.hidden), int(n_classes))
        adapted = self.adapted_layers
        if adapted is None:
            adapted = (len(dims) - 3, len(dims) - 2)
        return MlpSpec(dims, self.activation, adapted)


def lr_schedule(cfg, p):
    """``eta0 / (1 + alpha p)^beta``."""
    return cfg.eta0 / (1.0 + cfg.alpha * p) ** cfg.beta


def lambda_schedule(cfg, p):
    """``lambda_max (2 / (1 + exp(-gamma p)) - 1)``, rising from 0."""
    return cfg.lambda_max * (2.0 / (1.0 + math.exp(-cfg.gamma * p)) - 1.0)


class BatchSampler:
    """Equal-sized source and target half-batches, without replacement within an epoch.

    Each domain is reshuffled whenever fewer than a half-batch of rows remain
    in its current permutation; leftover rows wait for the next epoch.
    """

    def __init__(self, rng, source, target, batch_size):
        if batch_size < 2 or batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {batch_size}")
        self.half = batch_size // 2
        for ds in (source, target):
            if len(ds) < self.half:
                raise ValueError(f"{ds.domain} domain has {len(ds)} rows, fewer than half-batch {self.half}")
        self.rng = rng
        self.source = source
        self.target = target
        self._order = {"s": None, "t": None}
        self._pos = {"s": 0, "t": 0}
        self.epochs = {"s": 0, "t": 0}

    def _take(self, key, n_rows):
        if self._order[key] is None or self._pos[key] + self.half > n_rows:
            self._order[key] = self.rng.permutation(n_rows)
            self._pos[key] = 0
            self.epochs[key] += 1
        i = self._pos[key]
        self._pos[key] = i + self.half
        return self._order[key][i : i + self.half]

    def sample_batch(self):
        """Return ``(source_x, source_y, target_x, source_idx, target_idx)``."""
        si = self._take("s", len(self.source))
        ti = self._take("t", len(self.target))
        return self.source.features[si], self.source.labels[si], self.target.features[ti], si, ti


@dataclass
class TrainState:
    spec: MlpSpec
    params: object
    head: object
    kernels: list
    velocity: list
    head_velocity: list
    step: int = 0
    history: list = field(default_factory=list)

    def progress(self, steps):
        return self.step / steps


def accuracy(params, spec, features, labels):
    if labels is None or len(labels) == 0:
        return None
    return float(np.mean(predict(params, spec, features) == labels))


def adapted_inputs(state, acts):
    return head_forward(state.head, acts) if state.head is not None else acts


def fit_kernels(state, source, target):
    """Median-heuristic Gaussian kernel per adapted layer on the pooled data."""
    x = np.vstack([source.features, target.features])
    _, acts = forward(state.params, state.spec, x)
    state.kernels = median_kernels(adapted_inputs(state, acts))
    return state.kernels


def init_state(source, target, cfg):
    cfg.validate()
    if source.dim != target.dim:
        raise ValueError(f"source has {source.dim} features, target has {target.dim}")
    n_classes = int(source.labels.max()) + 1
    if target.eval_labels is not None and target.eval_labels.size:
        n_classes = max(n_classes, int(target.eval_labels.max()) + 1)
    spec = cfg.network_spec(source.dim, max(n_classes, 2))
    params = init_params(spec, derive_seed(cfg.seed, 1))
    head = None
    if cfg.adversarial:
        head = init_head(spec.adapted_dims, derive_seed(cfg.seed, 2), noise=cfg.head_noise)
    state = TrainState(
        spec=spec,
        params=params,
        head=head,
        kernels=[],
        velocity=[np.zeros_like(a) for a in params.arrays()],
        head_velocity=[] if head is None else [np.zeros_like(a) for a in head.arrays()],
    )
    fit_kernels(state, source, target)
    return state


def _penalty(state, cfg, acts, ns):
    z = adapted_inputs(state, acts)
    zs = [a[:ns] for a in z]
    zt = [a[ns:] for a in z]
    if cfg.criterion == "layerwise":
        return layerwise_mmd_value_and_grad(state.kernels, zs, zt, cfg.estimator)
    return jmmd_value_and_grad(state.kernels, zs, zt, cfg.estimator)


def train_step(state, cfg, batch):
    """One simultaneous momentum-SGD update; returns the step's metrics record."""
    xs, ys, xt = batch[:3]
    ns = xs.shape[0]
    p = state.progress(cfg.steps)
    eta = lr_schedule(cfg, p)
    step_size = cfg.scratch_lr_mult * eta
    lam = lambda_schedule(cfg, p)

    x = np.vstack([xs, xt])
    cache = _forward(state.params, state.spec, x)
    probs = cache.post[-1]
    acts = [cache.post[i] for i in state.spec.adapted_layers]
    ce = cross_entropy(probs, ys)
    value, gs, gt = _penalty(state, cfg, acts, ns)
    loss = ce + lam * value
    if not (math.isfinite(loss) and math.isfinite(value)):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}: cross-entropy={ce}, discrepancy={value}, lambda={lam}",
            {"step": state.step, "params": state.params.copy(),
             "head": None if state.head is None else state.head.copy(), "batch": batch},
        )

    upstream = None
    head_grads = None
    if lam != 0.0:
        gz = [lam * np.vstack([a, b]) for a, b in zip(gs, gt)]
        if state.head is not None:
            head_grads, upstream = head_backward(state.head, acts, gz)
        else:
            upstream = gz
    grads = backward(state.params, state.spec, x, ys, upstream, cache)

    if cfg.clip_grad:
        total = sum(float(np.sum(g * g)) for g in grads + (head_grads or []))
        norm = math.sqrt(total)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
            grads = [g * scale for g in grads]
            head_grads = None if head_grads is None else [g * scale for g in head_grads]

    mu = cfg.momentum
    for w, v, g in zip(state.params.arrays(), state.velocity, grads):
        v *= mu
        v -= step_size * g
        w += v
    if state.head is not None and head_grads is not None:
        eta_head = step_size * cfg.head_lr_scale
        for w, v, g in zip(state.head.arrays(), state.head_velocity, head_grads):
            v *= mu
            v += eta_head * g  # ascent: the descent update on the negated gradient
            w += v

    batch_acc = float(np.mean(np.argmax(probs[:ns], axis=1) == ys))
    record = {
        "step": state.step,
        "p": p,
        "eta": eta,
        "lambda": lam,
        "cross_entropy": ce,
        "jmmd": value,
        "loss": loss,
        "batch_source_acc": batch_acc,
    }
    state.step += 1
    return record


def train(source, target, cfg, on_record=None):
    """Run ``cfg.steps`` updates; returns the final :class:`TrainState`.

    Target ground truth (``target.eval_labels``) is read only for the
    ``target_acc`` metric.
    """
    state = init_state(source, target, cfg)
    sampler = BatchSampler(make_rng(derive_seed(cfg.seed, 3)), source, target, cfg.batch_size)
    steps_per_epoch = max(1, len(source) // sampler.half)
    for _ in range(cfg.steps):
        if cfg.recompute_bandwidth and state.step and state.step % steps_per_epoch == 0:
            fit_kernels(state, source, target)
        record = train_step(state, cfg, sampler.sample_batch())
        if state.step % cfg.eval_every == 0 or state.step == cfg.steps:
            record["source_acc"] = accuracy(state.params, state.spec, source.features, source.labels)
            record["target_acc"] = accuracy(state.params, state.spec, target.features, target.eval_labels)
        else:
            record["source_acc"] = None
            record["target_acc"] = None
        state.history.append(record)
        if on_record is not None:
            on_record(record)
    return state


def metrics_line(record):
    return json.dumps(record, sort_keys=True, allow_nan=False)


def write_metrics(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        for r in history:
            fh.write(metrics_line(r) + "\n")


def smoothed(history, key="jmmd", window=50):
    v = np.array([r[key] for r in history], dtype=np.float64)
    if v.size < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")

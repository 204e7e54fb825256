"""Feed-forward classifier with exact backprop, and the adversarial head.

Layer ``i`` of an :class:`MlpSpec` is the ``i``-th affine map. Hidden layers
apply ReLU or Tanh; the last layer applies softmax. ``adapted_layers`` lists
the layer indices whose post-activation outputs feed the discrepancy
penalty. For the last layer that output is the probability vector.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix, make_rng, softmax

RELU = "relu"
TANH = "tanh"
PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple = (2, 64, 32, 2)
    activation: str = RELU
    adapted_layers: tuple = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "adapted_layers", tuple(sorted({int(i) for i in self.adapted_layers})))
        if len(self.layer_dims) < 3:
            raise ValueError("need input, at least one hidden layer, and an output layer")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive: {self.layer_dims}")
        if self.activation not in (RELU, TANH):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.adapted_layers:
            raise ValueError("adapted_layers must be nonempty")
        if not all(0 <= i < self.n_layers for i in self.adapted_layers):
            raise ValueError(f"adapted_layers {self.adapted_layers} out of range for {self.n_layers} layers")

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    @property
    def adapted_dims(self):
        return [self.layer_dims[i + 1] for i in self.adapted_layers]

    @property
    def feature_layer(self):
        """Index of the last hidden layer."""
        return self.n_layers - 2

    def to_dict(self):
        return {
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "adapted_layers": list(self.adapted_layers),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_dims"]), d["activation"], tuple(d["adapted_layers"]))


@dataclass
class NetworkParams:
    weights: list
    biases: list
    seed: int = 0

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)


def init_params(spec, seed):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-s, s, size=fan_out))
    return NetworkParams(weights, biases, int(seed))


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == RELU else np.tanh(z)


def _act_grad(kind, z, h):
    return (z > 0).astype(np.float64) if kind == RELU else 1.0 - h * h


@dataclass
class _Cache:
    x: np.ndarray
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


def _check_shapes(params, spec, x):
    x = as_matrix(x, "x")
    if x.shape[1] != spec.layer_dims[0]:
        raise ValueError(f"input has {x.shape[1]} columns, network expects {spec.layer_dims[0]}")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (spec.layer_dims[i], spec.layer_dims[i + 1]) or b.shape != (spec.layer_dims[i + 1],):
            raise ValueError(f"layer {i} parameter shapes {w.shape}/{b.shape} do not match spec")
    return x


def _forward(params, spec, x):
    x = _check_shapes(params, spec, x)
    cache = _Cache(x)
    h = x
    last = spec.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = softmax(z, axis=1) if i == last else _act(spec.activation, z)
        cache.pre.append(z)
        cache.post.append(h)
    return cache


def forward(params, spec, x):
    """Return ``(probs, acts)`` where ``acts`` has one matrix per adapted layer."""
    cache = _forward(params, spec, x)
    return cache.post[-1], [cache.post[i] for i in spec.adapted_layers]


def features(params, spec, x):
    """Activations of the last hidden layer."""
    return _forward(params, spec, x).post[spec.feature_layer]


def predict(params, spec, x):
    return np.argmax(forward(params, spec, x)[0], axis=1)


def _check_labels(labels, n_classes, n_rows):
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size > n_rows:
        raise ValueError(f"{labels.size} labels for {n_rows} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(probs, labels):
    """Mean of ``-log p[i, y_i]`` over the labelled rows, with probabilities floored at 1e-12.

    ``labels`` annotate the first ``len(labels)`` rows of ``probs``.
    """
    probs = as_matrix(probs, "probs")
    labels = _check_labels(labels, probs.shape[1], probs.shape[0])
    if labels.size == 0:
        return 0.0
    p = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR))))


def backward(params, spec, x, labels, upstream_act_grads=None, cache=None):
    """Gradients of source cross-entropy plus injected activation gradients.

    The first ``len(labels)`` rows of ``x`` are the labelled (source) rows;
    the rest contribute only through ``upstream_act_grads``, which holds
    ``d(penalty)/d(act)`` for each adapted layer (or ``None`` for none).
    Returns a list ordered like :meth:`NetworkParams.arrays`.
    """
    if cache is None:
        cache = _forward(params, spec, x)
    n = cache.x.shape[0]
    labels = _check_labels(labels, spec.n_classes, n)
    upstream = {}
    if upstream_act_grads is not None:
        if len(upstream_act_grads) != len(spec.adapted_layers):
            raise ValueError("one upstream gradient per adapted layer required")
        for layer, g in zip(spec.adapted_layers, upstream_act_grads):
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != cache.post[layer].shape:
                raise ValueError(f"upstream gradient for layer {layer} has shape {g.shape}, expected {cache.post[layer].shape}")
            upstream[layer] = g

    last = spec.n_layers - 1
    probs = cache.post[last]
    dz = np.zeros_like(probs)
    if labels.size:
        m = labels.size
        dz[:m] = probs[:m]
        dz[np.arange(m), labels] -= 1.0
        dz[:m] /= m
    if last in upstream:
        g = upstream[last]
        dz += probs * (g - np.sum(g * probs, axis=1, keepdims=True))

    grads = [None] * (2 * spec.n_layers)
    for i in range(last, -1, -1):
        h_in = cache.x if i == 0 else cache.post[i - 1]
        grads[2 * i] = h_in.T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i == 0:
            break
        dh = dz @ params.weights[i].T
        if i - 1 in upstream:
            dh = dh + upstream[i - 1]
        dz = dh * _act_grad(spec.activation, cache.pre[i - 1], cache.post[i - 1])
    return grads


# --- adversarial head ----------------------------------------------------------


@dataclass
class HeadBlock:
    """``out = z A + tanh(z W1 + b1) W2 + b2`` for one adapted layer."""

    A: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return [self.A, self.W1, self.b1, self.W2, self.b2]

    @property
    def in_dim(self):
        return self.A.shape[0]

    @property
    def out_dim(self):
        return self.A.shape[1]


@dataclass
class AdversarialHead:
    blocks: list

    def arrays(self):
        return [a for blk in self.blocks for a in blk.arrays()]

    def copy(self):
        return AdversarialHead([HeadBlock(*(a.copy() for a in blk.arrays())) for blk in self.blocks])

    @property
    def out_dims(self):
        return [blk.out_dim for blk in self.blocks]


def init_head(in_dims, seed, noise=0.01, width_factor=2, out_dims=None):
    """Near-identity head: skip map ``A`` is the identity embedding, interior weights are noise."""
    rng = make_rng(seed)
    out_dims = list(in_dims) if out_dims is None else list(out_dims)
    blocks = []
    for d, o in zip(in_dims, out_dims):
        if d < 1 or o < 1:
            raise ValueError("head dimensions must be positive")
        h = width_factor * d
        blocks.append(
            HeadBlock(
                A=np.eye(d, o) + noise * rng.normal(size=(d, o)),
                W1=noise * rng.normal(size=(d, h)),
                b1=np.zeros(h),
                W2=noise * rng.normal(size=(h, o)),
                b2=np.zeros(o),
            )
        )
    return AdversarialHead(blocks)


def _head_inputs(head, acts):
    if len(acts) != len(head.blocks):
        raise ValueError(f"head has {len(head.blocks)} blocks but got {len(acts)} activation layers")
    out = []
    for i, (blk, z) in enumerate(zip(head.blocks, acts)):
        z = as_matrix(z, f"acts[{i}]")
        if z.shape[1] != blk.in_dim:
            raise ValueError(f"head block {i} expects dim {blk.in_dim}, got {z.shape[1]}")
        out.append(z)
    return out


def head_forward(head, acts):
    out = []
    for blk, z in zip(head.blocks, _head_inputs(head, acts)):
        u = np.tanh(z @ blk.W1 + blk.b1)
        out.append(z @ blk.A + u @ blk.W2 + blk.b2)
    return out


def head_backward(head, acts, out_grads):
    """Return ``(theta_grads, act_grads)`` for the head given ``d(loss)/d(outputs)``.

    ``theta_grads`` is ordered like :meth:`AdversarialHead.arrays`.
    """
    theta, act_grads = [], []
    for blk, z, g in zip(head.blocks, _head_inputs(head, acts), out_grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != (z.shape[0], blk.out_dim):
            raise ValueError(f"head output gradient has shape {g.shape}, expected {(z.shape[0], blk.out_dim)}")
        u = np.tanh(z @ blk.W1 + blk.b1)
        du = (g @ blk.W2.T) * (1.0 - u * u)
        theta += [z.T @ g, z.T @ du, du.sum(axis=0), u.T @ g, g.sum(axis=0)]
        act_grads.append(g @ blk.A.T + du @ blk.W1.T)
    return theta, act_grads


# --- checkpoints -------------------------------------------------------------------


def _mat(a):
    return np.asarray(a, dtype=np.float64).tolist()


def save_checkpoint(path, spec, params, head=None, **meta):
    """JSON checkpoint. Python float repr round-trips every float64 exactly."""
    doc = {
        "format": "jmmd-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "seed": params.seed,
        "weights": [_mat(w) for w in params.weights],
        "biases": [_mat(b) for b in params.biases],
        "head": None if head is None else [[_mat(a) for a in blk.arrays()] for blk in head.blocks],
        "meta": meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(spec, params, head, meta)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "jmmd-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    spec = MlpSpec.from_dict(doc["spec"])

    def arr(x):
        return np.array(x, dtype=np.float64)

    params = NetworkParams([arr(w) for w in doc["weights"]], [arr(b) for b in doc["biases"]], doc["seed"])
    head = None
    if doc["head"] is not None:
        head = AdversarialHead([HeadBlock(*(arr(a) for a in blk)) for blk in doc["head"]])
    return spec, params, head, doc.get("meta", {})

"""Synthetic domain-shift datasets and CSV ingestion.

Target datasets never expose labels through ``labels``; their ground truth,
when known, sits in ``eval_labels`` and is only read by evaluation code.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .numerics import as_matrix, derive_seed, make_rng

SOURCE = "source"
TARGET = "target"

COVARIATE = "covariate"
CONDITIONAL = "conditional"
JOINT = "joint"
SHIFT_KINDS = (COVARIATE, CONDITIONAL, JOINT)

# centre of point symmetry of the canonical moons
_MOONS_CENTRE = np.array([0.5, 0.25])


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray = None
    domain: str = SOURCE
    eval_labels: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        n = self.features.shape[0]
        for name in ("labels", "eval_labels"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64).ravel()
                if v.shape[0] != n:
                    raise ValueError(f"{name} has {v.shape[0]} entries for {n} rows")
                if v.size and v.min() < 0:
                    raise ValueError(f"{name} must be non-negative")
                setattr(self, name, v)
        if self.domain == SOURCE and self.labels is None:
            raise ValueError("source datasets require labels")
        if self.domain == TARGET and self.labels is not None:
            raise ValueError("target datasets carry ground truth only in eval_labels")
        if self.domain == SOURCE and self.eval_labels is None:
            self.eval_labels = self.labels

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def as_target(self):
        """Same rows re-tagged as an unlabelled target domain."""
        gt = self.eval_labels if self.eval_labels is not None else self.labels
        return Dataset(self.features, None, TARGET, gt, dict(self.provenance))


@dataclass(frozen=True)
class ShiftSpec:
    """Domain shift between class-conditional Gaussian domains.

    ``offset`` translates target features (covariate) or is scaled by
    ``c + 1`` for class ``c`` (conditional, joint). ``target_priors`` only
    matters for the joint kind.
    """

    kind: str = COVARIATE
    offset: tuple = (0.0, 0.0)
    source_priors: tuple = (0.5, 0.5)
    target_priors: tuple = (0.5, 0.5)
    class_sep: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"unknown shift kind {self.kind!r}; expected one of {SHIFT_KINDS}")
        for name in ("source_priors", "target_priors"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            if p.ndim != 1 or p.size < 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} must be a probability vector with >= 2 classes")
        if len(self.source_priors) != len(self.target_priors):
            raise ValueError("source and target priors must cover the same classes")
        if not np.all(np.isfinite(self.offset)):
            raise ValueError("offset must be finite")
        if self.class_sep < 0:
            raise ValueError("class_sep must be non-negative")

    @property
    def n_classes(self):
        return len(self.source_priors)


def moons(n, noise_sigma, rng):
    """Canonical interleaved moons, centred on their point of symmetry."""
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, size=n_out)
    t_in = rng.uniform(0.0, np.pi, size=n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner]) - _MOONS_CENTRE
    y = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    if noise_sigma > 0:
        x = x + rng.normal(scale=noise_sigma, size=x.shape)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def rotation(degrees):
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s], [-s, c]])  # row vectors: x @ R rotates counter-clockwise


def two_moons(n, noise_sigma=0.1, rotation_degrees=0.0, seed=0, domain=SOURCE):
    """Two-moons sample rotated about the origin by ``rotation_degrees``.

    For ``domain="target"`` the labels are moved to ``eval_labels``.
    """
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    if not noise_sigma >= 0:
        raise ValueError("noise_sigma must be non-negative")
    x, y = moons(int(n), float(noise_sigma), make_rng(seed))
    if rotation_degrees:
        x = x @ rotation(rotation_degrees)
    prov = {"generator": "two_moons", "n": int(n), "noise_sigma": float(noise_sigma),
            "rotation_degrees": float(rotation_degrees), "seed": int(seed)}
    if domain == TARGET:
        return Dataset(x, None, TARGET, y, prov)
    return Dataset(x, y, SOURCE, None, prov)


def two_moons_pair(n, noise_sigma=0.1, rotation_degrees=30.0, seed=0):
    """Source moons and an independently drawn target rotated by ``rotation_degrees``."""
    src = two_moons(n, noise_sigma, 0.0, derive_seed(seed, 0), SOURCE)
    tgt = two_moons(n, noise_sigma, rotation_degrees, derive_seed(seed, 1), TARGET)
    return src, tgt


def class_means(n_classes, d, sep):
    means = np.zeros((n_classes, d))
    for c in range(n_classes):
        means[c, c % d] = sep if (c // d) % 2 == 0 else -sep
    return means


def _gaussian_domain(n, d, priors, means, rng):
    y = rng.choice(len(priors), size=n, p=np.asarray(priors, dtype=np.float64))
    x = means[y] + rng.normal(size=(n, d))
    return x, y.astype(np.int64)


def gaussian_shift(n, d, shift):
    """Source and target samples from class-conditional unit Gaussians under ``shift``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    offset = np.asarray(shift.offset, dtype=np.float64).ravel()
    if offset.size not in (1, d):
        raise ValueError(f"offset must have 1 or {d} entries, got {offset.size}")
    offset = np.broadcast_to(offset, (d,))
    C = shift.n_classes
    means = class_means(C, d, shift.class_sep)
    t_priors = shift.source_priors
    if shift.kind == COVARIATE:
        t_means = means + offset
    else:
        t_means = means + np.arange(1, C + 1)[:, None] * offset
        if shift.kind == JOINT:
            t_priors = shift.target_priors
    xs, ys = _gaussian_domain(n, d, shift.source_priors, means, make_rng(derive_seed(shift.seed, 0)))
    xt, yt = _gaussian_domain(n, d, t_priors, t_means, make_rng(derive_seed(shift.seed, 1)))
    prov = {"generator": "gaussian_shift", "n": int(n), "d": int(d), "kind": shift.kind,
            "offset": offset.tolist(), "source_priors": list(shift.source_priors),
            "target_priors": list(t_priors), "class_sep": float(shift.class_sep), "seed": int(shift.seed)}
    return Dataset(xs, ys, SOURCE, None, prov), Dataset(xt, None, TARGET, yt, dict(prov))


def blobs(n, d, centre, sigma, seed, domain=SOURCE):
    """Single isotropic Gaussian blob with all-zero labels."""
    rng = make_rng(seed)
    x = np.asarray(centre, dtype=np.float64) + sigma * rng.normal(size=(n, d))
    y = np.zeros(n, dtype=np.int64)
    prov = {"generator": "blob", "n": n, "d": d, "centre": list(map(float, np.broadcast_to(centre, (d,)))),
            "sigma": sigma, "seed": seed}
    if domain == TARGET:
        return Dataset(x, None, TARGET, y, prov)
    return Dataset(x, y, SOURCE, None, prov)


# --- CSV ------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column layout. ``feature_columns=None`` takes every non-label, non-domain column."""

    feature_columns: tuple = None
    label_column: str = "label"
    domain_column: str = "domain"
    require_labels: bool = False
    domain: str = SOURCE


class CsvFormatError(ValueError):
    pass


def _read_rows(path, schema):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if r and any(c.strip() for c in r)]
    label_col = schema.label_column if schema.label_column in header else None
    domain_col = schema.domain_column if schema.domain_column in header else None
    if schema.require_labels and label_col is None:
        raise CsvFormatError(f"{path}: label column {schema.label_column!r} required but missing from header")
    if schema.feature_columns is None:
        fcols = [h for h in header if h not in (label_col, domain_col)]
    else:
        fcols = list(schema.feature_columns)
        missing = [c for c in fcols if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: feature columns {missing} not in header")
    if not fcols:
        raise CsvFormatError(f"{path}: no feature columns")
    idx = {h: i for i, h in enumerate(header)}
    feats, labels, domains = [], [], []
    for line, r in rows:
        if len(r) != len(header):
            raise CsvFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(r)}")
        try:
            feats.append([float(r[idx[c]]) for c in fcols])
        except ValueError:
            raise CsvFormatError(f"{path}:{line}: non-numeric feature value") from None
        if label_col is not None:
            cell = r[idx[label_col]].strip()
            if cell == "":
                labels.append(-1)
            else:
                try:
                    v = int(cell)
                except ValueError:
                    raise CsvFormatError(f"{path}:{line}: label {cell!r} is not an integer") from None
                if v < 0:
                    raise CsvFormatError(f"{path}:{line}: negative label {v}")
                labels.append(v)
        if domain_col is not None:
            cell = r[idx[domain_col]].strip().lower()
            if cell not in (SOURCE, TARGET):
                raise CsvFormatError(f"{path}:{line}: domain must be 'source' or 'target', got {cell!r}")
            domains.append(cell)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(fcols))
    y = np.array(labels, dtype=np.int64) if label_col is not None else None
    d = np.array(domains) if domain_col is not None else None
    return x, y, d, fcols


def _make(x, y, domain, prov, path, require_labels):
    if y is not None and np.any(y < 0):
        if domain == SOURCE or require_labels:
            raise CsvFormatError(f"{path}: missing label values in {domain} rows")
        y = None
    if domain == SOURCE:
        if y is None:
            raise CsvFormatError(f"{path}: source rows need a label column")
        return Dataset(x, y, SOURCE, None, prov)
    return Dataset(x, None, TARGET, y, prov)


def load_csv(path, schema=CsvSchema()):
    """Read one domain from ``path``; the domain comes from ``schema.domain``.

    Labels in a target file become evaluation-only labels.
    """
    x, y, _, fcols = _read_rows(path, schema)
    prov = {"generator": "csv", "path": str(path), "columns": fcols}
    return _make(x, y, schema.domain, prov, path, schema.require_labels)


def load_csv_domains(path, schema=CsvSchema(), standardize=False):
    """Split a file with a domain column into ``(source, target)``."""
    x, y, d, fcols = _read_rows(path, schema)
    if d is None:
        raise CsvFormatError(f"{path}: domain column {schema.domain_column!r} missing")
    out = []
    for dom in (SOURCE, TARGET):
        m = d == dom
        if not m.any():
            raise CsvFormatError(f"{path}: no {dom} rows")
        prov = {"generator": "csv", "path": str(path), "columns": fcols, "domain": dom}
        out.append(_make(x[m], None if y is None else y[m], dom, prov, path, schema.require_labels))
    src, tgt = out
    if standardize:
        src, tgt = standardize_pair(src, tgt)
    return src, tgt


def standardize_pair(source, target):
    """Z-score both domains with statistics fitted on the source only."""
    mu = source.features.mean(axis=0)
    sd = source.features.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    stats = {"mean": mu.tolist(), "std": sd.tolist()}
    s = replace(source, features=(source.features - mu) / sd, provenance={**source.provenance, "standardized": stats})
    t = replace(target, features=(target.features - mu) / sd, provenance={**target.provenance, "standardized": stats})
    return s, t


def write_csv(path, *datasets, with_domain=None):
    """Write datasets with 17-significant-digit floats, header ``x1..xd[,label][,domain]``."""
    if not datasets:
        raise ValueError("nothing to write")
    d = datasets[0].dim
    if any(ds.dim != d for ds in datasets):
        raise ValueError("datasets differ in feature dimension")
    if with_domain is None:
        with_domain = len(datasets) > 1
    header = [f"x{i + 1}" for i in range(d)] + ["label"] + (["domain"] if with_domain else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for ds in datasets:
            lab = ds.labels if ds.labels is not None else ds.eval_labels
            for i in range(len(ds)):
                row = [format(v, ".17g") for v in ds.features[i]]
                row.append("" if lab is None else str(int(lab[i])))
                if with_domain:
                    row.append(ds.domain)
                w.writerow(row)

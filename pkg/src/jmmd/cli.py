"""Command-line entry point: ``jmmd {gen,stat,train,analyze}``.

Output is one JSON document on stdout unless ``--pretty`` is given. Exit
codes are 0 on success, 1 for usage, configuration or input errors, and 2
when training stops on a non-finite loss.
"""

import argparse
import json
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .analysis import export_features, measure_jmmd, one_hot, proxy_a_distance
from .datagen import (
    CONDITIONAL,
    COVARIATE,
    JOINT,
    SOURCE,
    TARGET,
    CsvSchema,
    ShiftSpec,
    blobs,
    gaussian_shift,
    load_csv,
    load_csv_domains,
    standardize_pair,
    two_moons_pair,
    write_csv,
)
from .discrepancy import ESTIMATORS, report
from .kernels import KernelSpec, median_kernels
from .network import features, load_checkpoint, save_checkpoint
from .numerics import derive_seed
from .training import TrainConfig, TrainingDiverged, accuracy, metrics_line, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- generator specs ------------------------------------------------------------

GENERATORS = ("two-moons", "gaussian-shift", "blobs")


def parse_gen(text):
    """Split ``name[:key=value,...]`` into ``(name, options)``.

    The bare token ``zero`` sets a zero-magnitude shift.
    """
    name, _, rest = text.partition(":")
    name = name.strip()
    if name not in GENERATORS:
        raise UsageError(f"unknown generator {name!r}; expected one of {', '.join(GENERATORS)}")
    opts = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        if item == "zero":
            opts["zero"] = True
            continue
        key, eq, val = item.partition("=")
        if not eq:
            raise UsageError(f"generator option {item!r} is not key=value")
        opts[key.strip()] = val.strip()
    return name, opts


def _num(opts, key, default, cast=float):
    try:
        return cast(opts.pop(key, default))
    except ValueError:
        raise UsageError(f"generator option {key}={opts.get(key)!r} is not a number") from None


def generate(text, n, seed):
    """Build ``(source, target)`` from a generator spec string."""
    name, opts = parse_gen(text)
    n = _num(opts, "n", n, int)
    zero = opts.pop("zero", False)
    if name == "two-moons":
        rot = 0.0 if zero else _num(opts, "rot", 30.0)
        noise = _num(opts, "noise", 0.1)
        out = two_moons_pair(n, noise, rot, seed)
    elif name == "gaussian-shift":
        d = _num(opts, "d", 2, int)
        kind = opts.pop("kind", COVARIATE)
        if kind not in (COVARIATE, CONDITIONAL, JOINT):
            raise UsageError(f"gaussian-shift kind must be covariate, conditional or joint, got {kind!r}")
        shift = 0.0 if zero else _num(opts, "shift", 1.0)
        sep = _num(opts, "sep", 3.0)
        p0 = _num(opts, "prior", 0.5)
        tp0 = p0 if zero else _num(opts, "target-prior", p0)
        try:
            spec = ShiftSpec(kind, (shift,) + (0.0,) * (d - 1), (p0, 1 - p0), (tp0, 1 - tp0), sep, seed)
        except ValueError as e:
            raise UsageError(str(e)) from None
        out = gaussian_shift(n, d, spec)
    else:
        d = _num(opts, "d", 2, int)
        sep = 0.0 if zero else _num(opts, "sep", 10.0)
        centre = np.zeros(d)
        centre[0] = sep
        out = (blobs(n, d, np.zeros(d), 1.0, derive_seed(seed, 0), SOURCE),
               blobs(n, d, centre, 1.0, derive_seed(seed, 1), TARGET))
    if opts:
        raise UsageError(f"unknown options for {name}: {', '.join(sorted(opts))}")
    return out


# --- experiment config ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything a ``train`` or ``analyze`` run reads; round-trips through JSON."""

    gen: str = "two-moons:rot=30"
    n: int = 300
    data: str = None
    source: str = None
    target: str = None
    standardize: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: str = None
    checkpoint: str = None
    lambda_sweep: list = None
    sweep_seeds: int = 10
    sweep_out: str = None

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        return cls(**d)

    def errors(self):
        errs = [f"train.{e}" for e in self.train.errors()]
        if self.data is None and (self.source is None) != (self.target is None):
            errs.append("source and target files must be given together")
        if self.data is not None and self.source is not None:
            errs.append("give either data or source/target, not both")
        if not isinstance(self.n, int) or self.n < 2:
            errs.append(f"n must be an integer >= 2 (got {self.n})")
        if self.lambda_sweep is not None:
            if not self.lambda_sweep or any(not (isinstance(v, (int, float)) and v >= 0) for v in self.lambda_sweep):
                errs.append(f"lambda_sweep must list non-negative numbers (got {self.lambda_sweep})")
            if not isinstance(self.sweep_seeds, int) or self.sweep_seeds < 1:
                errs.append(f"sweep_seeds must be an integer >= 1 (got {self.sweep_seeds})")
        return errs


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config {path} is not valid JSON: {e}") from None
    try:
        return ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as e:
        raise UsageError(f"config {path}: {e}") from None


def _datasets(cfg, seed):
    try:
        if cfg.data is not None:
            src, tgt = load_csv_domains(cfg.data, CsvSchema(require_labels=False))
        elif cfg.source is not None:
            src = load_csv(cfg.source, CsvSchema(require_labels=True, domain=SOURCE))
            tgt = load_csv(cfg.target, CsvSchema(domain=TARGET))
        else:
            return generate(cfg.gen, cfg.n, seed)
    except FileNotFoundError as e:
        raise UsageError(f"no such file: {e.filename}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg.standardize:
        src, tgt = standardize_pair(src, tgt)
    return src, tgt


# --- output -------------------------------------------------------------------------


def _emit(obj, pretty):
    if pretty:
        print(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))
    else:
        print(json.dumps(obj, sort_keys=True, allow_nan=False))


# --- commands -----------------------------------------------------------------------


def _stat_layers(statistic, dataset):
    layers = [dataset.features]
    if statistic == "jmmd":
        if dataset.eval_labels is None:
            raise UsageError("jmmd on raw data needs a label column in both inputs")
        layers.append(one_hot(dataset.eval_labels, 0 if not dataset.eval_labels.size else dataset.eval_labels.max() + 1))
    return layers


def _pad_one_hot(zs, zt):
    if len(zs) == 2:
        c = max(zs[1].shape[1], zt[1].shape[1])
        zs[1] = np.pad(zs[1], ((0, 0), (0, c - zs[1].shape[1])))
        zt[1] = np.pad(zt[1], ((0, 0), (0, c - zt[1].shape[1])))
    return zs, zt


def _stat_once(args, src, tgt):
    zs, zt = _pad_one_hot(_stat_layers(args.statistic, src), _stat_layers(args.statistic, tgt))
    if args.kernel == "linear":
        kernels = [KernelSpec.linear()] * len(zs)
    elif args.bandwidth is not None:
        kernels = [KernelSpec.gaussian(args.bandwidth)] * len(zs)
    else:
        kernels = median_kernels([np.vstack([a, b]) for a, b in zip(zs, zt)])
    try:
        return report(kernels, zs, zt, args.estimator, statistic=args.statistic)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _stat_inputs(args, seed):
    # raw statistics do not need source labels, so both files load as unlabelled-capable targets
    try:
        if args.data is not None:
            return load_csv_domains(args.data)
        if args.source is not None or args.target is not None:
            if args.source is None or args.target is None:
                raise UsageError("--source and --target must be given together")
            return load_csv(args.source, CsvSchema(domain=TARGET)), load_csv(args.target, CsvSchema(domain=TARGET))
    except FileNotFoundError as e:
        raise UsageError(f"no such file: {e.filename}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.gen is None:
        raise UsageError("stat needs --source/--target, --data or --gen")
    return generate(args.gen, args.n, seed)


def cmd_stat(args):
    if args.reps < 1:
        raise UsageError(f"--reps must be >= 1, got {args.reps}")
    if args.reps == 1:
        return _stat_once(args, *_stat_inputs(args, args.seed)).to_dict()
    if args.gen is None:
        raise UsageError("--reps needs --gen so each repetition can draw fresh data")
    vals = np.array([_stat_once(args, *generate(args.gen, args.n, derive_seed(args.seed, r))).value
                     for r in range(args.reps)])
    sd = float(vals.std(ddof=1))
    return {
        "statistic": args.statistic,
        "estimator": args.estimator,
        "generator": args.gen,
        "reps": args.reps,
        "mean": float(vals.mean()),
        "std": sd,
        "stderr": sd / np.sqrt(args.reps),
        "quantile_99": float(np.quantile(vals, 0.99)),
    }


def _train_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    t = cfg.train.to_dict()
    for flag, key in (("lam", "lambda_max"), ("seed", "seed"), ("steps", "steps"), ("eta0", "eta0"),
                      ("batch_size", "batch_size"), ("estimator", "estimator"), ("criterion", "criterion")):
        v = getattr(args, flag, None)
        if v is not None:
            t[key] = v
    if args.adversarial:
        t["adversarial"] = True
    if args.clip_grad:
        t["clip_grad"] = True
    cfg.train = TrainConfig.from_dict(t)
    for key in ("gen", "n", "data", "source", "target", "metrics", "checkpoint", "sweep_seeds", "sweep_out"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.gen is not None:
        cfg.data = cfg.source = cfg.target = None
    if args.standardize:
        cfg.standardize = True
    if args.lambda_sweep is not None:
        try:
            cfg.lambda_sweep = [float(v) for v in args.lambda_sweep.split(",")]
        except ValueError:
            raise UsageError(f"--lambda-sweep must be comma-separated numbers, got {args.lambda_sweep!r}") from None
    errs = cfg.errors()
    if errs:
        raise UsageError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def _summary(state, src, tgt):
    last = state.history[-1]
    return {
        "source_acc": accuracy(state.params, state.spec, src.features, src.labels),
        "target_acc": accuracy(state.params, state.spec, tgt.features, tgt.eval_labels),
        "final_jmmd": last["jmmd"],
        "steps": len(state.history),
    }


def _run(src, tgt, tcfg, metrics_fh=None):
    cb = None if metrics_fh is None else (lambda r: metrics_fh.write(metrics_line(r) + "\n"))
    return train(src, tgt, tcfg, on_record=cb)


def lambda_sweep(cfg):
    """Mean target accuracy per lambda over ``cfg.sweep_seeds`` seeds."""
    rows = []
    base = cfg.train.seed
    for lam in cfg.lambda_sweep:
        accs = []
        for i in range(cfg.sweep_seeds):
            seed = base + i
            src, tgt = _datasets(cfg, seed)
            tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), "lambda_max": lam, "seed": seed})
            state = _run(src, tgt, tcfg)
            accs.append(accuracy(state.params, state.spec, tgt.features, tgt.eval_labels))
        rows.append({"lambda": lam, "mean_target_acc": float(np.mean(accs)), "target_acc": accs})
    best = max(rows, key=lambda r: r["mean_target_acc"])
    return {"sweep": rows, "best_lambda": best["lambda"], "seeds": cfg.sweep_seeds}


def _write_sweep_csv(path, result):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lambda,mean_target_acc\n")
        for r in result["sweep"]:
            fh.write(f"{r['lambda']!r},{r['mean_target_acc']!r}\n")


def cmd_train(args):
    cfg = _train_config(args)
    if args.dump_config:
        return cfg.to_dict()
    if cfg.lambda_sweep is not None:
        result = lambda_sweep(cfg)
        if cfg.sweep_out:
            _write_sweep_csv(cfg.sweep_out, result)
        if args.pretty:
            lines = ["lambda     mean target acc"]
            lines += [f"{r['lambda']:<10g} {100 * r['mean_target_acc']:6.2f}%" for r in result["sweep"]]
            lines.append(f"best lambda: {result['best_lambda']:g}")
            return "\n".join(lines)
        return result
    src, tgt = _datasets(cfg, cfg.train.seed)
    if cfg.metrics:
        with open(cfg.metrics, "w", encoding="utf-8") as fh:
            state = _run(src, tgt, cfg.train, fh)
    else:
        state = _run(src, tgt, cfg.train)
    out = _summary(state, src, tgt)
    out["adversarial"] = cfg.train.adversarial
    out["lambda_max"] = cfg.train.lambda_max
    if cfg.checkpoint:
        save_checkpoint(cfg.checkpoint, state.spec, state.params, state.head,
                        config=cfg.to_dict(), kernels=[k.to_dict() for k in state.kernels])
        out["checkpoint"] = cfg.checkpoint
    return out


def cmd_analyze(args):
    try:
        spec, params, _, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"no such checkpoint: {args.checkpoint}") from None
    except (KeyError, ValueError) as e:
        raise UsageError(f"checkpoint {args.checkpoint} is malformed: {e}") from None
    try:
        cfg = ExperimentConfig.from_dict(meta["config"]) if "config" in meta else ExperimentConfig()
    except (TypeError, ValueError) as e:
        raise UsageError(f"checkpoint {args.checkpoint} has a bad config: {e}") from None
    for key in ("gen", "n", "data", "source", "target"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.gen is not None:
        cfg.data = cfg.source = cfg.target = None
    seed = args.seed if args.seed is not None else cfg.train.seed
    src, tgt = _datasets(cfg, seed)
    if src.dim != spec.layer_dims[0]:
        raise UsageError(f"data has {src.dim} features, checkpoint expects {spec.layer_dims[0]}")
    fs, ft = features(params, spec, src.features), features(params, spec, tgt.features)
    out = {"checkpoint": args.checkpoint, "a_distance": proxy_a_distance(fs, ft, seed).to_dict()}
    try:
        out["jmmd"] = measure_jmmd(params, spec, None, src, tgt, args.estimator).to_dict()
    except ValueError as e:
        out["jmmd"] = {"error": str(e)}
    if args.export_features:
        export_features(params, spec, [src, tgt], args.export_features)
        out["features"] = args.export_features
    return out


def cmd_gen(args):
    src, tgt = generate(args.gen, args.n, args.seed)
    write_csv(args.out, src, tgt, with_domain=True)
    return {"out": args.out, "n_source": len(src), "n_target": len(tgt), "dim": src.dim,
            "generator": args.gen, "seed": args.seed}


# --- parser --------------------------------------------------------------------------


def _data_flags(p, n_default=None):
    p.add_argument("--gen", help="generator spec, e.g. two-moons:rot=30 or gaussian-shift:zero")
    p.add_argument("--n", type=int, default=n_default, help="rows per domain for generated data")
    p.add_argument("--data", help="CSV with a domain column")
    p.add_argument("--source", help="source CSV")
    p.add_argument("--target", help="target CSV")


def build_parser():
    parser = _Parser(prog="jmmd", description="Joint MMD statistics and adaptation experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="human-readable output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stat", parents=[common], help="MMD / JMMD between two samples")
    _data_flags(p, n_default=300)
    p.add_argument("--statistic", choices=("mmd", "jmmd"), default="mmd")
    p.add_argument("--estimator", choices=ESTIMATORS, default="unbiased")
    p.add_argument("--kernel", choices=("gaussian", "linear"), default="gaussian")
    p.add_argument("--bandwidth", type=float, help="Gaussian bandwidth; median heuristic when omitted")
    p.add_argument("--reps", type=int, default=1, help="repetitions over freshly generated data")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stat)

    p = sub.add_parser("train", parents=[common], help="train JAN or JAN-A")
    p.add_argument("--config", help="JSON experiment config; flags override it")
    _data_flags(p)
    p.add_argument("--standardize", action="store_true", help="z-score both domains with source statistics")
    p.add_argument("--lambda", dest="lam", type=float, help="lambda_max")
    p.add_argument("--adversarial", action="store_true", help="train JAN-A")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--eta0", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--criterion", choices=("jmmd", "layerwise"))
    p.add_argument("--clip-grad", action="store_true")
    p.add_argument("--metrics", help="write per-step records as JSON lines")
    p.add_argument("--checkpoint", help="write the trained model here")
    p.add_argument("--lambda-sweep", help="comma-separated lambda_max values")
    p.add_argument("--sweep-seeds", type=int)
    p.add_argument("--sweep-out", help="CSV series for the sweep")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", parents=[common], help="A-distance and JMMD of a trained model")
    p.add_argument("--checkpoint", required=True)
    _data_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--estimator", choices=ESTIMATORS, default="biased")
    p.add_argument("--export-features", help="write feature CSV here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen", parents=[common], help="write a generated source/target pair as CSV")
    p.add_argument("--gen", required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except UsageError as e:
        print(f"jmmd {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"jmmd {args.command}: {e.filename or ''}: {e.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"jmmd {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if isinstance(out, str):
        print(out)
    else:
        _emit(out, args.pretty)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

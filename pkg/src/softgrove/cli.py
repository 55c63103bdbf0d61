"""Command-line entry point: ``softgrove {train,benchmark,gradcheck,synth,eval}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 training error, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .benchmark import DEFAULT_GRID, MODELS, BenchmarkConfig, StageError, default_workers, run_benchmark
from .data import SYNTH_NAMES, DataError, Dataset, load_csv, normalize, split_test_third, synth, write_csv
from .gradients import LossSpec, backward, finite_diff_grads, random_batch
from .hardtree import HardTree, grow_hard
from .io import ModelFormatError, load_model, save_model
from .training import TrainConfig, TrainHistory, TrainingError, _better, derive_seed, score, sgd_fit
from .tree import TASKS, active_leaves, harden, random_tree, tree_size

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING, EXIT_CHECK = 0, 1, 2, 3, 4

SOFT_KINDS = ("soft", "budding", "distributed")


class UsageError(Exception):
    pass


class CheckFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- configuration ---------------------------------------------------------

# key -> (parser, default); keys double as --config file keys
_TRAIN_KEYS = {
    "lr": (float, None),
    "lambda": (float, None),
    "epochs": (int, 100),
    "batch": (int, 1),
    "seed": (int, 0),
    "init_scale": (float, 1.0),
    "growth_threshold": (float, 1e-2),
    "prune_eps": (float, 1e-2),
}
_BENCH_KEYS = {
    **{k: v for k, v in _TRAIN_KEYS.items() if k not in ("lr", "lambda")},
    "grid": (str, "default"),
    "models": (str, "hard,budding,distributed"),
    "alpha": (float, 0.05),
    "workers": (int, None),
}


def read_config_file(path, allowed) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Unknown keys are rejected."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = value
    return out


def _resolve(args, keys) -> dict:
    """Flags beat the config file, which beats built-in defaults."""
    from_file = read_config_file(args.config, keys) if args.config else {}
    out = {}
    for key, (kind, default) in keys.items():
        flag = getattr(args, key.replace("lambda", "lam"))
        if flag is not None:
            out[key] = flag
        elif key in from_file:
            try:
                out[key] = kind(from_file[key])
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {from_file[key]!r}") from None
        else:
            out[key] = default
    return out


def parse_grid(spec: str):
    """``default`` or comma-separated ``lr:lambda`` pairs."""
    if spec.strip() == "default":
        return DEFAULT_GRID
    grid = []
    for item in spec.split(","):
        try:
            lr, lam = item.split(":")
            grid.append((float(lr), float(lam)))
        except ValueError:
            raise UsageError(f"bad grid point {item!r}; expected lr:lambda") from None
    if not grid:
        raise UsageError("empty grid")
    return tuple(grid)


@dataclass
class RunSpec:
    """Validated invocation: everything a command needs before it computes."""

    command: str
    data: str | None = None
    synth: str | None = None
    n: int | None = None
    task: str | None = None
    models: tuple[str, ...] = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: tuple = DEFAULT_GRID
    out: str | None = None
    seed: int = 0

    def describe(self) -> dict:
        d = asdict(self)
        d["grid"] = [list(p) for p in self.grid]
        d["models"] = list(self.models)
        return d


def _train_config(values: dict, lr=0.1, lam=0.0) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=lr,
            lam=lam,
            epochs=values["epochs"],
            batch_size=values["batch"],
            seed=values["seed"],
            growth_threshold=values["growth_threshold"],
            init_scale=values["init_scale"],
            prune_eps=values["prune_eps"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _data_source(args) -> None:
    if (args.data is None) == (args.synth is None):
        raise UsageError("give exactly one of --data PATH or --synth NAME")
    if args.data is not None and args.task is None:
        raise UsageError("--data needs --task")
    if args.synth is not None and args.synth not in SYNTH_NAMES:
        raise UsageError(f"unknown --synth {args.synth!r}; choose from {', '.join(SYNTH_NAMES)}")


def _load_data(spec: RunSpec) -> Dataset:
    if spec.synth is not None:
        return synth(spec.synth, spec.n, spec.seed)
    try:
        return load_csv(spec.data, spec.task)
    except OSError as exc:
        raise DataError(f"cannot read {spec.data}: {exc}") from None


# --- commands ----------------------------------------------------------------


def _metric_name(task: str) -> str:
    return "mse" if task == "regression" else "accuracy"


def _fit(kind, train, valid, cfg):
    if kind == "hard":
        tree = grow_hard(train, valid)
        history = TrainHistory()
        history.append(1, float("nan"), score(tree, valid), tree_size(tree))
        history.best_epoch = 1
        return tree, history
    return sgd_fit(kind, train, valid, cfg)


def cmd_train(args) -> int:
    _data_source(args)
    values = _resolve(args, _TRAIN_KEYS)
    lrs = (values["lr"],) if values["lr"] is not None else tuple(sorted({p[0] for p in DEFAULT_GRID}))
    lams = (values["lambda"],) if values["lambda"] is not None else tuple(sorted({p[1] for p in DEFAULT_GRID}))
    grid = tuple((lr, lam) for lr in lrs for lam in lams)
    if args.model == "hard":
        grid = grid[:1]
    for lr, lam in grid:
        _train_config(values, lr, lam)
    spec = RunSpec(
        "train",
        data=args.data,
        synth=args.synth,
        n=args.n,
        task="binary" if args.synth else args.task,
        models=(args.model,),
        train=_train_config(values),
        grid=grid,
        out=args.out,
        seed=values["seed"],
    )
    if values["lr"] == 0:
        print("warning: learning rate 0 leaves the initial bud untrained", file=sys.stderr)
    data = _load_data(spec)
    train_idx, valid_idx = split_test_third(data, spec.seed)
    (train, valid), norm = normalize(data.subset(train_idx), data.subset(valid_idx))
    runs = []
    best = None
    for gi, (lr, lam) in enumerate(grid):
        cfg = replace(spec.train, learning_rate=lr, lam=lam, seed=derive_seed(spec.seed, 0, gi))
        model, history = _fit(args.model, train, valid, cfg)
        v = score(model, valid)
        runs.append(
            {
                "lr": lr,
                "lambda": lam,
                "valid_metric": v,
                "train_metric": score(model, train),
                "size": tree_size(model),
                "best_epoch": history.best_epoch,
            }
        )
        if best is None or _better(v, best[0], data.task):
            best = (v, model, history, gi)
    v, model, history, gi = best
    os.makedirs(spec.out, exist_ok=True)
    extra = {
        "normalization": {
            "mean": norm.mean.tolist(),
            "std": norm.std.tolist(),
            "target_mean": None if norm.y_mean is None else norm.y_mean.tolist(),
            "target_std": None if norm.y_std is None else norm.y_std.tolist(),
        },
        "class_names": list(data.class_names),
    }
    save_model(model, os.path.join(spec.out, "model.json"), extra)
    with open(os.path.join(spec.out, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(history.to_csv())
    summary = {
        "seed": spec.seed,
        "config": spec.describe(),
        "chosen": {"lr": grid[gi][0], "lambda": grid[gi][1]},
        "valid_metric": v,
        "train_metric": runs[gi]["train_metric"],
        "size": tree_size(model),
        "runs": runs,
    }
    with open(os.path.join(spec.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    name = _metric_name(data.task)
    print(f"chosen lr={grid[gi][0]:g} lambda={grid[gi][1]:g}")
    print(f"validation {name}: {v:.4f}")
    print(f"size: {tree_size(model)}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    _data_source(args)
    values = _resolve(args, _BENCH_KEYS)
    models = tuple(m.strip() for m in values["models"].split(",") if m.strip())
    workers = values["workers"] if values["workers"] is not None else default_workers()
    try:
        config = BenchmarkConfig(
            models=models,
            grid=parse_grid(values["grid"]),
            train=_train_config(values),
            alpha=values["alpha"],
            workers=workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    spec = RunSpec(
        "benchmark",
        data=args.data,
        synth=args.synth,
        n=args.n,
        task="binary" if args.synth else args.task,
        models=models,
        train=config.train,
        grid=config.grid,
        out=args.out,
        seed=values["seed"],
    )
    data = _load_data(spec)
    table = run_benchmark(data, config, spec.seed)
    os.makedirs(spec.out, exist_ok=True)
    with open(os.path.join(spec.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(table.to_json())
    with open(os.path.join(spec.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(table.to_text())
    print(table.to_text(), end="")
    return EXIT_OK


def gradcheck_trials(trials, depth, dim, seed, batch=8, step=1e-5, corrupt=False):
    """Worst relative error per trial, cycling through every kind and task."""
    rng = np.random.default_rng(seed)
    results = []
    for i in range(trials):
        kind = SOFT_KINDS[i % 3]
        task = TASKS[(i // 3) % 3]
        d = int(rng.integers(1, dim + 1))
        out_dim = 1 if task == "binary" else (3 if task == "multiclass" else int(rng.integers(1, 3)))
        tree = random_tree(kind, int(rng.integers(0, depth + 1)), d, out_dim, task, rng)
        X, T = random_batch(tree, batch, rng)
        lam = float(rng.choice([0.0, 0.01]))
        spec = LossSpec(task, lam)
        exact = backward(tree, X, T, spec)
        if corrupt:
            exact.d_rho[0, 0] += 0.5
        err, name, node = exact.compare(finite_diff_grads(tree, X, T, spec, step))
        results.append((err, kind, task, name, node))
    return results


def cmd_gradcheck(args) -> int:
    if args.trials < 1 or args.depth < 0 or args.dim < 1 or args.batch < 1:
        raise UsageError("--trials, --dim and --batch must be positive and --depth nonnegative")
    results = gradcheck_trials(args.trials, args.depth, args.dim, args.seed, args.batch, args.step, args.corrupt)
    err, kind, task, name, node = max(results, key=lambda r: r[0])
    print(f"trials: {len(results)}")
    print(f"max relative error: {err:.3e}")
    if err > args.tol:
        print(
            f"FAIL: worst case kind={kind} task={task} parameter={name} node={node} "
            f"exceeds tolerance {args.tol:g}",
            file=sys.stderr,
        )
        raise CheckFailure()
    print("ok")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 8:
        raise UsageError("--n must be at least 8")
    write_csv(synth(args.name, args.n, args.seed), args.out)
    print(f"wrote {args.n} rows to {args.out}")
    return EXIT_OK


def _apply_model_preprocessing(data: Dataset, doc: dict, model) -> Dataset:
    if data.input_dim != model.input_dim:
        raise DataError(f"model expects d={model.input_dim} features but data has d={data.input_dim}")
    names = doc.get("class_names") or []
    if data.task != "regression" and names and data.class_names:
        lookup = {name: i for i, name in enumerate(names)}
        missing = [c for c in data.class_names if c not in lookup]
        if missing:
            raise DataError(f"data has classes unknown to the model: {missing}")
        remap = np.array([lookup[c] for c in data.class_names])
        data = replace(data, y=remap[data.y], n_classes=len(names), class_names=list(names))
    norm = doc.get("normalization")
    if norm:
        X = (data.X - np.asarray(norm["mean"])) / np.asarray(norm["std"])
        y = data.y
        if data.task == "regression" and norm.get("target_mean") is not None:
            y = (y - np.asarray(norm["target_mean"])) / np.asarray(norm["target_std"])
        data = replace(data, X=X, y=y)
    return data


def cmd_eval(args) -> int:
    if (args.data is None) == (args.synth is None):
        raise UsageError("give exactly one of --data PATH or --synth NAME")
    try:
        model, doc = load_model(args.model)
    except OSError as exc:
        raise DataError(f"cannot read model file: {exc}") from None
    task = args.task or model.task
    if task != model.task:
        raise UsageError(f"model was trained for {model.task}, not {task}")
    if args.synth is not None:
        data = synth(args.synth, args.n, args.seed)
    else:
        try:
            data = load_csv(args.data, task)
        except OSError as exc:
            raise DataError(f"cannot read {args.data}: {exc}") from None
    data = _apply_model_preprocessing(data, doc, model)
    if args.harden and not isinstance(model, HardTree):
        model = harden(model, args.threshold)
    print(f"{_metric_name(task)}: {score(model, data)!r}")
    print(f"size: {tree_size(model)}")
    if not isinstance(model, HardTree) and (args.harden or model.kind == "distributed"):
        hard = model if model.hardened else harden(model, args.threshold)
        counts = Counter(len(active_leaves(hard, x)) for x in data.augmented)
        print("active-leaf histogram (leaves: inputs)")
        for k in sorted(counts):
            print(f"  {k}: {counts[k]}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def _data_flags(p, with_task=True):
    p.add_argument("--data", help="CSV file with header, target in the last column")
    p.add_argument("--synth", help=f"synthetic dataset: {', '.join(SYNTH_NAMES)}")
    p.add_argument("--n", type=int, default=400, help="synthetic sample count (default 400)")
    if with_task:
        p.add_argument("--task", choices=TASKS)


def _train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--growth-threshold", dest="growth_threshold", type=float)
    p.add_argument("--prune-eps", dest="prune_eps", type=float)
    p.add_argument("--config", help="key=value file overriding defaults; flags override the file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softgrove", description="Differentiable decision trees.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train one model on a 2:1 train/validation split")
    _data_flags(p)
    p.add_argument("--model", required=True, choices=MODELS)
    p.add_argument("--lr", type=float, help="learning rate (default: tune over the default grid)")
    p.add_argument("--lambda", dest="lam", type=float, help="leafness penalty (default: tune)")
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", help="test third + 5x2 folds + per-fold tuning")
    _data_flags(p)
    p.add_argument("--models", help="comma list of " + ",".join(MODELS))
    p.add_argument("--grid", help="'default' or lr:lambda pairs, comma separated")
    p.add_argument("--alpha", type=float)
    p.add_argument("--workers", type=int, help="parallel workers (default SOFTGROVE_THREADS or CPU count)")
    p.add_argument("--out", required=True)
    _train_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="compare backpropagation with finite differences")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    p.add_argument("--name", required=True, choices=SYNTH_NAMES)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    _data_flags(p)
    p.add_argument("--seed", type=int, default=0, help="seed for --synth")
    p.add_argument("--harden", action="store_true", help="evaluate the hardened tree")
    p.add_argument("--threshold", type=float, default=0.5, help="gate threshold for hardening")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except StageError as exc:
        print(f"benchmark stage failed: {exc}", file=sys.stderr)
        if isinstance(exc.cause, DataError):
            return EXIT_DATA
        return EXIT_TRAINING
    except CheckFailure:
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())

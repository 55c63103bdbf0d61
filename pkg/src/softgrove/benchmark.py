"""The full evaluation protocol: test third, 5x2 folds, per-fold tuning, report."""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

from .data import Dataset, cv_5x2, normalize, split_test_third
from .hardtree import grow_hard
from .stats import ComparisonTable, EvalReport, report
from .training import TrainConfig, _better, derive_seed, score, sgd_fit
from .tree import tree_size

MODELS = ("hard", "soft", "budding", "distributed")
DEFAULT_GRID = tuple((lr, lam) for lr in (0.01, 0.05, 0.1, 0.5) for lam in (0.0, 1e-4, 1e-3, 1e-2))


class StageError(RuntimeError):
    """A benchmark stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class BenchmarkConfig:
    models: tuple[str, ...] = ("hard", "budding", "distributed")
    grid: tuple[tuple[float, float], ...] = DEFAULT_GRID
    train: TrainConfig = field(default_factory=TrainConfig)
    alpha: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if not self.models:
            raise ValueError("no models requested")
        for m in self.models:
            if m not in MODELS:
                raise ValueError(f"unknown model {m!r}; choose from {MODELS}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("models listed twice")
        if not self.grid:
            raise ValueError("hyperparameter grid is empty")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def describe(self) -> dict:
        return {
            "models": list(self.models),
            "grid": [[lr, lam] for lr, lam in self.grid],
            "train": asdict(self.train),
            "alpha": self.alpha,
        }


@dataclass
class FoldResult:
    model: str
    fold: int
    metric: float
    size: int
    choice: tuple[float, float] | None = None


def default_workers() -> int:
    env = os.environ.get("SOFTGROVE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"SOFTGROVE_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError("SOFTGROVE_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def prepare_folds(data: Dataset, seed: int):
    """Ten normalized (train, valid, test) triples; statistics come from each fold's train half."""
    trainval_idx, test_idx = split_test_third(data, seed)
    trainval, test = data.subset(trainval_idx), data.subset(test_idx)
    plan = cv_5x2(trainval, seed)
    folds = []
    for tr, va in plan:
        parts, _ = normalize(trainval.subset(tr), trainval.subset(va), test)
        folds.append(tuple(parts))
    return folds


def run_fold(model: str, fold: int, train: Dataset, valid: Dataset, test: Dataset, config: BenchmarkConfig) -> FoldResult:
    """Tune on the fold's validation half, then score the chosen model on the test third."""
    if model == "hard":
        tree = grow_hard(train, valid)
        return FoldResult(model, fold, score(tree, test), tree_size(tree))
    best = None
    for gi, (lr, lam) in enumerate(config.grid):
        cfg = replace(config.train, learning_rate=lr, lam=lam, seed=derive_seed(config.train.seed, fold, gi))
        tree, _ = sgd_fit(model, train, valid, cfg)
        v = score(tree, valid)
        if best is None or _better(v, best[0], train.task):
            best = (v, tree, (lr, lam))
    _, tree, choice = best
    return FoldResult(model, fold, score(tree, test), tree_size(tree), choice)


def _job(args):
    model, fold, parts, config = args
    try:
        return run_fold(model, fold, *parts, config)
    except Exception as exc:  # re-raised with the stage attached
        raise StageError(f"training {model} on fold {fold + 1}", exc) from exc


def run_benchmark(data: Dataset, config: BenchmarkConfig, seed: int) -> ComparisonTable:
    """Every model on every fold; report is identical for any worker count."""
    try:
        folds = prepare_folds(data, seed)
    except Exception as exc:
        raise StageError("splitting", exc) from exc
    train = replace(config.train, seed=seed)
    config = replace(config, train=train)
    jobs = [(m, f, parts, config) for m in config.models for f, parts in enumerate(folds)]
    if config.workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    results.sort(key=lambda r: (config.models.index(r.model), r.fold))
    reports = []
    for m in config.models:
        mine = [r for r in results if r.model == m]
        extra = {}
        if m != "hard":
            extra["chosen"] = [list(r.choice) for r in mine]
        reports.append(
            EvalReport(m, data.name, data.task, [r.metric for r in mine], [r.size for r in mine], extra)
        )
    meta = {
        "dataset": data.name,
        "task": data.task,
        "n": len(data),
        "input_dim": data.input_dim,
        "seed": seed,
        "config": config.describe(),
    }
    try:
        return report(reports, config.alpha, meta)
    except Exception as exc:
        raise StageError("reporting", exc) from exc

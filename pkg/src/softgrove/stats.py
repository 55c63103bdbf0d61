"""Metrics, significance tests and comparison tables."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def metric(predictions, targets, task: str) -> float:
    """100 x MSE for regression, percentage accuracy for classification."""
    p = np.asarray(predictions)
    t = np.asarray(targets)
    if len(p) != len(t):
        raise ValueError(f"{len(p)} predictions but {len(t)} targets")
    if len(p) == 0:
        raise ValueError("cannot score an empty prediction set")
    if task == "regression":
        p = p.astype(float).reshape(len(p), -1)
        t = t.astype(float).reshape(len(t), -1)
        return float(100.0 * np.mean((p - t) ** 2))
    return float(100.0 * np.mean(p.reshape(-1) == t.reshape(-1)))


def higher_is_better(task: str) -> bool:
    return task != "regression"


# --- Student t distribution -------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float, complement: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``complement`` may carry ``1 - x`` computed without cancellation.
    """
    y = 1.0 - x if complement is None else complement
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log(y))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def student_t_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc(0.5 * df, 0.5, df / (df + t2), t2 / (df + t2))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    winner: str | None
    degenerate: bool = False


def paired_t_test(a, b, alpha: float = 0.05, higher_is_better: bool = True) -> TTestResult:
    """Two-sided paired t-test on ``d = a - b``; winner is ``'a'``, ``'b'`` or None."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, False, None, degenerate=True)
        t = math.copysign(math.inf, mean)
        p = 0.0
        degenerate = True
    else:
        t = mean / (sd / math.sqrt(n))
        p = min(1.0, max(0.0, student_t_two_sided(t, n - 1)))
        degenerate = False
    significant = p < alpha
    winner = None
    if significant:
        a_better = (mean > 0) == higher_is_better
        winner = "a" if a_better else "b"
    return TTestResult(t, p, significant, winner, degenerate)


# --- Wilcoxon rank-sum --------------------------------------------------------


def midranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RankSumResult:
    statistic: float  # rank sum of the first sample
    u: float
    p: float
    significant: bool
    method: str
    winner: str | None = None


EXACT_BELOW = 8


def _exact_two_sided(ranks: np.ndarray, k: int, observed: float) -> float:
    """P(|W - E W| >= |w - E W|) over all size-k subsets of ``ranks``, by counting."""
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    n = len(doubled)
    # counts[j, s]: subsets of size j with doubled rank sum s
    counts = np.zeros((k + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled:
        counts[1:, r:] += counts[:-1, : total + 1 - r].copy()
    center2 = k * (n + 1)  # twice the null mean, doubled units
    dev_obs = abs(int(round(2.0 * observed)) - center2)
    sums = np.arange(total + 1)
    extreme = np.abs(sums - center2) >= dev_obs
    return float(counts[k, extreme].sum() / counts[k].sum())


def wilcoxon_rank_sum(a, b, alpha: float = 0.05, lower_is_better: bool = True) -> RankSumResult:
    """Two-sided rank-sum test with midranks.

    Exact null distribution when either group has fewer than eight values,
    otherwise the normal approximation with tie correction (no continuity
    correction).  ``winner`` names the group with the smaller (or larger,
    if ``lower_is_better`` is False) mean rank when the test is significant.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("rank-sum test needs two nonempty samples")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    N = n1 + n2
    ranks = midranks(np.concatenate([a, b]))
    w = float(ranks[:n1].sum())
    u = w - n1 * (n1 + 1) / 2.0
    if min(n1, n2) < EXACT_BELOW:
        if n1 <= n2:
            p = _exact_two_sided(ranks, n1, w)
        else:
            p = _exact_two_sided(ranks[::-1], n2, float(ranks[n1:].sum()))
        method = "exact"
    else:
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float((tie_counts**3 - tie_counts).sum()) / (N * (N - 1))
        var = n1 * n2 / 12.0 * ((N + 1) - tie_term)
        if var <= 0:
            p = 1.0
        else:
            z = (w - n1 * (N + 1) / 2.0) / math.sqrt(var)
            p = math.erfc(abs(z) / math.sqrt(2.0))
        method = "normal"
    p = min(1.0, max(0.0, p))
    significant = p < alpha
    winner = None
    if significant:
        a_low = w / n1 < (N * (N + 1) / 2.0 - w) / n2
        winner = "a" if a_low == lower_is_better else "b"
    return RankSumResult(w, u, p, significant, method, winner)


# --- reports ------------------------------------------------------------------


@dataclass
class EvalReport:
    model: str
    dataset: str
    task: str
    metric_folds: list[float]
    size_folds: list[int]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.metric_folds) != len(self.size_folds):
            raise ValueError("need one size per fold metric")

    @property
    def metric_mean(self) -> float:
        return float(np.mean(self.metric_folds))

    @property
    def metric_std(self) -> float:
        return float(np.std(self.metric_folds, ddof=1)) if len(self.metric_folds) > 1 else 0.0

    @property
    def size_mean(self) -> float:
        return float(np.mean(self.size_folds))

    @property
    def size_std(self) -> float:
        return float(np.std(self.size_folds, ddof=1)) if len(self.size_folds) > 1 else 0.0


def _significant_best(reports, values, better_of, test) -> str | None:
    """Name of the model that beats every other model significantly, if any."""
    if len(reports) < 2:
        return None
    best = better_of(range(len(reports)), key=lambda i: values[i])
    for j in range(len(reports)):
        if j == best:
            continue
        if reports[j].model == reports[best].model:
            return None
        if test(reports[best], reports[j]) != "a":
            return None
    return reports[best].model


@dataclass
class ComparisonTable:
    rows: list[dict]
    alpha: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = dict(self.meta)
        out["alpha"] = self.alpha
        out["tables"] = self.rows
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        lines = []
        for row in self.rows:
            names = [m["name"] for m in row["models"]]
            label = "MSE" if row["task"] == "regression" else "Accuracy"
            width = max(10, *(len(n) + 2 for n in names))
            head = f"{row['dataset']:<14}" + "".join(f"{n:>{width}}" for n in names)
            lines.append(head)
            cells = []
            for m in row["models"]:
                mark = "*" if row["metric_winner"] == m["name"] else " "
                cells.append(f"{m['metric_mean']:.2f}{mark}".rjust(width))
            lines.append(f"{label:<14}" + "".join(cells))
            cells = []
            for m in row["models"]:
                mark = "*" if row["size_winner"] == m["name"] else " "
                cells.append(f"{m['size_mean']:.2f}{mark}".rjust(width))
            lines.append(f"{'Size':<14}" + "".join(cells))
            lines.append("")
        lines.append(f"* significantly best at alpha = {self.alpha}")
        return "\n".join(lines) + "\n"


def report(reports: list[EvalReport], alpha: float = 0.05, meta: dict | None = None) -> ComparisonTable:
    """Per-dataset comparison rows with significance marks.

    Metrics are compared with the paired t-test, sizes with the rank-sum test.
    """
    by_dataset: dict[str, list[EvalReport]] = {}
    for r in reports:
        by_dataset.setdefault(r.dataset, []).append(r)
    model_sets = {tuple(r.model for r in rs) for rs in by_dataset.values()}
    if len(model_sets) > 1:
        raise ValueError("every dataset must be evaluated with the same models")
    rows = []
    for dataset, rs in by_dataset.items():
        task = rs[0].task
        folds = {len(r.metric_folds) for r in rs}
        if len(folds) != 1 or any(r.task != task for r in rs):
            raise ValueError(f"reports for {dataset!r} are not aligned")
        hib = higher_is_better(task)
        metric_winner = _significant_best(
            rs,
            [r.metric_mean for r in rs],
            max if hib else min,
            lambda x, y: paired_t_test(x.metric_folds, y.metric_folds, alpha, hib).winner,
        )
        size_winner = _significant_best(
            rs,
            [r.size_mean for r in rs],
            min,
            lambda x, y: wilcoxon_rank_sum(x.size_folds, y.size_folds, alpha).winner,
        )
        rows.append(
            {
                "dataset": dataset,
                "task": task,
                "models": [
                    {
                        "name": r.model,
                        "metric_mean": r.metric_mean,
                        "metric_folds": [float(v) for v in r.metric_folds],
                        "size_mean": r.size_mean,
                        "size_folds": [int(v) for v in r.size_folds],
                        **r.extra,
                    }
                    for r in rs
                ],
                "metric_winner": metric_winner,
                "size_winner": size_winner,
                "alpha": alpha,
            }
        )
    return ComparisonTable(rows, alpha, dict(meta or {}))

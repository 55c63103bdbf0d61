"""Differentiable decision trees: hard, soft, budding and distributed."""

from .data import Dataset, FoldPlan, cv_5x2, load_csv, normalize, split_test_third, synth
from .gradients import LossSpec, ParamGrads, backward, finite_diff_grads, forward_loss
from .hardtree import HardNode, HardTree, eval_hard, grow_hard, prune_hard
from .io import load_model, save_model
from .stats import metric, paired_t_test, report, wilcoxon_rank_sum
from .training import TrainConfig, predict, score, sgd_fit, tune
from .tree import (
    SoftNode,
    SoftTree,
    StructureError,
    active_leaves,
    eval_budding,
    eval_distributed,
    evaluate,
    harden,
    prune,
    to_soft,
    tree_size,
)

__version__ = "0.1.0"

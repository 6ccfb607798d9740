"""Early pruning of drafted tokens against mid-forward predictions.

After n backbone layers, a lightweight early head predicts each node's likely
successors; a drafted child survives only if its token appears in its parent's
early top-K list (and the parent itself survived).  Depth-1 nodes are exempt:
their parent is the committed root, whose early prediction belongs to the
previous iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .token_tree import ROOT, TokenId, TokenTree, restrict, subsample_mask


@dataclass(frozen=True)
class PruneConfig:
    layer: int = 4
    topk: int = 50

    def __post_init__(self) -> None:
        if self.layer < 1:
            raise ValueError("prune layer must be >= 1")
        if self.topk < 1:
            raise ValueError("prune top-K must be >= 1")


@dataclass(frozen=True)
class PruneDecision:
    """Surviving node indices (increasing) and the fraction removed."""

    survivors: tuple[int, ...]
    prune_rate: float


def prune(tree: TokenTree, early_topk: Sequence[Sequence[TokenId]], config: PruneConfig) -> PruneDecision:
    """Keep nodes whose token the parent's early head anticipated.

    ``early_topk[i]`` is node i's early top-K successor list (distinct
    tokens).  Survival propagates top-down in one pass over the topological
    order; a node with a pruned parent is pruned regardless of its own token.
    """
    n = len(tree)
    if len(early_topk) != n:
        raise ValueError("early_topk must have one list per tree node")
    sets: list[set[int]] = []
    for i, lst in enumerate(early_topk):
        s = {int(t) for t in lst}
        if len(s) != len(lst):
            raise ValueError(f"node {i}: early top-K list has duplicates")
        if len(lst) > config.topk:
            raise ValueError(f"node {i}: early list longer than top-K = {config.topk}")
        sets.append(s)
    alive = np.zeros(n, dtype=bool)
    for i, node in enumerate(tree.nodes):
        if node.parent == ROOT:
            alive[i] = True
        else:
            alive[i] = alive[node.parent] and node.token in sets[node.parent]
    survivors = tuple(int(i) for i in np.flatnonzero(alive))
    rate = 0.0 if n == 0 else 1.0 - len(survivors) / n
    return PruneDecision(survivors, rate)


def apply_decision(
    tree: TokenTree, mask: np.ndarray, decision: PruneDecision
) -> tuple[TokenTree, np.ndarray]:
    """Pruned tree plus the subsampled (not rebuilt) attention mask."""
    return restrict(tree, decision.survivors), subsample_mask(mask, decision.survivors)


def probability_prune(*args, **kwargs):
    """Placeholder for thresholding on early-head probabilities.

    Top-K membership is the only shipped criterion; a probability threshold
    would need calibrated early-head scores, so this entry point is disabled.
    """
    raise NotImplementedError("probability-threshold pruning is not enabled; use top-K prune()")

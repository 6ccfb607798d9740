"""Online acceptance estimation and expected-length tree selection.

Tracks, per draft head, the cumulative probability that the realized token
lands in that head's top-k list, derives per-rank marginals from the
cumulative curve, and scores candidate trees by expected accepted length
(sum over nodes of the product of marginals along the node's path).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .token_tree import RankPath, TokenId, TokenTree


@dataclass(frozen=True)
class HeadPredictions:
    """Per-head top-k drafts: ``tokens[d-1, k-1]`` is head d's rank-k token."""

    tokens: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape != scores.shape:
            raise ValueError("tokens and scores must be matching 2-D arrays")
        for d, row in enumerate(tokens, start=1):
            if len(set(row.tolist())) != row.size:
                raise ValueError(f"head {d}: duplicate tokens in the top-k list")
        if np.any(np.diff(scores, axis=1) > 0):
            raise ValueError("scores must be non-increasing within each head")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "scores", scores)

    @property
    def depth_count(self) -> int:
        return self.tokens.shape[0]

    @property
    def k_max(self) -> int:
        return self.tokens.shape[1]

    def token(self, depth: int, rank: int) -> TokenId:
        if not 1 <= depth <= self.depth_count or not 1 <= rank <= self.k_max:
            raise IndexError(f"no prediction at depth {depth}, rank {rank}")
        return int(self.tokens[depth - 1, rank - 1])

    def rank_of(self, depth: int, token: TokenId) -> int | None:
        """1-based rank of ``token`` in head ``depth``'s list, None if absent."""
        row = self.tokens[depth - 1]
        hits = np.flatnonzero(row == token)
        return int(hits[0]) + 1 if hits.size else None


class AcceptanceStats:
    """Cumulative top-k hit rates per head, with derived rank marginals.

    ``alpha`` is the exponential-moving-average step; ``alpha=None`` uses the
    running-mean schedule (step 1/n), which is the same recursion with a
    decaying step and is what the convergence suites use.
    """

    def __init__(
        self,
        depth_count: int,
        k_max: int,
        alpha: float | None = 0.05,
        prewarm: bool = True,
    ) -> None:
        if depth_count < 1 or k_max < 1:
            raise ValueError("depth_count and k_max must be positive")
        if alpha is not None and not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1] or be None")
        self.alpha = alpha
        self.counts = np.zeros(depth_count, dtype=np.int64)
        if prewarm:
            depth_cap = np.minimum(0.9, 0.5 ** np.arange(1, depth_count + 1))
            ramp = np.arange(1, k_max + 1) / k_max
            self.P = np.outer(depth_cap, ramp)
        else:
            self.P = np.zeros((depth_count, k_max))

    @property
    def depth_count(self) -> int:
        return self.P.shape[0]

    @property
    def k_max(self) -> int:
        return self.P.shape[1]

    def update(self, realized: Mapping[int, TokenId], predictions: HeadPredictions) -> None:
        """Fold in one iteration's realized tokens.

        ``realized`` carries only the depths whose ground truth is known this
        iteration (the committed offsets); other heads are untouched.
        """
        if predictions.depth_count != self.depth_count or predictions.k_max != self.k_max:
            raise ValueError("predictions shape does not match the tracked grid")
        for depth, token in realized.items():
            if not 1 <= depth <= self.depth_count:
                raise ValueError(f"depth {depth} outside 1..{self.depth_count}")
            rank = predictions.rank_of(depth, token)
            hit = np.zeros(self.k_max)
            if rank is not None:
                hit[rank - 1 :] = 1.0
            self.counts[depth - 1] += 1
            step = self.alpha if self.alpha is not None else 1.0 / self.counts[depth - 1]
            self.P[depth - 1] = (1.0 - step) * self.P[depth - 1] + step * hit

    def marginals(self) -> np.ndarray:
        """Per-rank acceptance marginals: first difference of the cumulative curve."""
        return np.diff(self.P, axis=1, prepend=0.0)

    def marginal(self, depth: int, rank: int) -> float:
        if not 1 <= depth <= self.depth_count or not 1 <= rank <= self.k_max:
            raise IndexError(f"no entry at depth {depth}, rank {rank}")
        prev = self.P[depth - 1, rank - 2] if rank > 1 else 0.0
        return float(self.P[depth - 1, rank - 1] - prev)

    def path_contribution(self, path: Sequence[tuple[int, int]]) -> float:
        """Product of marginals along a path of (depth, rank) pairs.

        Depths must run 1..n consecutively; the empty path contributes 1.
        """
        value = 1.0
        for i, (depth, rank) in enumerate(path, start=1):
            if depth != i:
                raise ValueError("path depths must be consecutive starting at 1")
            value *= self.marginal(depth, rank)
        return value

    def expected_tree_length(self, tree: TokenTree) -> float:
        """Expected number of accepted nodes: sum of path contributions."""
        contrib = np.empty(len(tree))
        total = 0.0
        for i, node in enumerate(tree.nodes):
            base = contrib[node.parent] if node.parent >= 0 else 1.0
            contrib[i] = base * self.marginal(node.depth, node.rank)
            total += contrib[i]
        return float(total)

    def snapshot_csv(self) -> str:
        """Estimator state as CSV rows (depth, rank, cumulative, marginal)."""
        buf = io.StringIO()
        buf.write("depth,rank,cumulative,marginal\n")
        m = self.marginals()
        for d in range(self.depth_count):
            for k in range(self.k_max):
                buf.write(f"{d + 1},{k + 1},{float(self.P[d, k])!r},{float(m[d, k])!r}\n")
        return buf.getvalue()


def grid_candidates(depth_count: int, k_max: int) -> tuple[RankPath, ...]:
    """The selector's candidate universe: depth_count * k_max grid nodes.

    The rank-k candidate of head d extends the top-1 chain of depth d-1, so
    rank >= 2 nodes are side branches off the spine and candidate paths are
    ``(1, ..., 1, k)``.
    """
    return tuple(
        (1,) * (d - 1) + (k,)
        for d in range(1, depth_count + 1)
        for k in range(1, k_max + 1)
    )


@dataclass(frozen=True)
class TreeSelection:
    """A chosen node set and its expected accepted length."""

    paths: tuple[RankPath, ...]
    expected_length: float

    def weights(self, stats: AcceptanceStats) -> dict[RankPath, float]:
        return {
            p: stats.path_contribution(list(enumerate(p, start=1)))
            for p in self.paths
        }


def select_best_nodes(stats: AcceptanceStats, sizes: Sequence[int]) -> dict[int, TreeSelection]:
    """Best tree per requested size: the top-i grid nodes by path contribution.

    Greedy selection is exactly optimal over ancestor-closed grid subsets
    because a child's contribution never exceeds its parent's; ties break to
    lower depth, then lower rank, keeping the prefix ancestor-closed.
    """
    capacity = stats.depth_count * stats.k_max
    for size in sizes:
        if not 1 <= size <= capacity:
            raise ValueError(f"size {size} outside the 1..{capacity} grid capacity")
    m = stats.marginals()
    spine = np.concatenate([[1.0], np.cumprod(m[:, 0])])
    candidates = grid_candidates(stats.depth_count, stats.k_max)
    contrib = {p: float(spine[len(p) - 1] * m[len(p) - 1, p[-1] - 1]) for p in candidates}
    order = sorted(candidates, key=lambda p: (-contrib[p], len(p), p[-1]))
    out: dict[int, TreeSelection] = {}
    for size in sizes:
        chosen = tuple(order[:size])
        out[size] = TreeSelection(chosen, float(sum(contrib[p] for p in chosen)))
    return out

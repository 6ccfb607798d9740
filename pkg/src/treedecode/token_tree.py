"""Token trees and tree-attention masks for parallel decoding.

A token tree packs many candidate continuations of a committed context into
one structure by merging shared prefixes: every node is one drafted token and
every root-to-leaf path is one candidate sequence.  Nodes are kept in a fixed
topological order (depth-major, parents before children, siblings by ascending
rank), which makes the attention mask lower-triangular and lets pruning
subsample a cached mask instead of rebuilding it.

Node descriptors are rank paths: the tuple of per-head ranks along the path
from the root, e.g. ``(1, 2)`` is the rank-2 child of the depth-1 rank-1 node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .acceptance import HeadPredictions

TokenId = int
RankPath = tuple[int, ...]

# Parent index of depth-1 nodes: their real parent is the committed root
# token, which lives outside the tree.
ROOT = -1


@dataclass(frozen=True)
class TreeNode:
    """One drafted token.

    ``depth`` is the head that drafted it (1-based), ``rank`` its position in
    that head's top-k list (1-based), ``weight`` the expected-acceptance
    contribution of the path ending here (1.0 when no estimate is attached).
    """

    token: TokenId
    parent: int
    depth: int
    rank: int
    weight: float = 1.0


@dataclass(frozen=True)
class TokenTree:
    """Ancestor-closed candidate tree in topological node order."""

    nodes: tuple[TreeNode, ...]
    root_token: TokenId

    def __post_init__(self) -> None:
        edges: set[tuple[int, TokenId]] = set()
        for i, node in enumerate(self.nodes):
            if not ROOT <= node.parent < i:
                raise ValueError(f"node {i}: parent {node.parent} must precede the node")
            if node.depth < 1 or node.rank < 1:
                raise ValueError(f"node {i}: depth and rank are 1-based")
            if not 0.0 <= node.weight <= 1.0:
                raise ValueError(f"node {i}: weight {node.weight} outside [0, 1]")
            if node.parent == ROOT:
                if node.depth != 1:
                    raise ValueError(f"node {i}: depth must be 1 when the parent is the root")
            else:
                parent = self.nodes[node.parent]
                if node.depth != parent.depth + 1:
                    raise ValueError(f"node {i}: depth {node.depth} != parent depth + 1")
                if node.weight > parent.weight:
                    raise ValueError(f"node {i}: weight exceeds its parent's weight")
            edge = (node.parent, node.token)
            if edge in edges:
                raise ValueError(f"node {i}: duplicate token {node.token} under parent {node.parent}")
            edges.add(edge)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def tokens(self) -> np.ndarray:
        return np.array([n.token for n in self.nodes], dtype=np.int64)

    @property
    def parents(self) -> np.ndarray:
        return np.array([n.parent for n in self.nodes], dtype=np.int64)

    @property
    def depths(self) -> np.ndarray:
        return np.array([n.depth for n in self.nodes], dtype=np.int64)

    def children(self) -> list[list[int]]:
        """Child index lists per node; index -1 view is given by ``roots``."""
        out: list[list[int]] = [[] for _ in self.nodes]
        for i, node in enumerate(self.nodes):
            if node.parent != ROOT:
                out[node.parent].append(i)
        return out

    def roots(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.parent == ROOT]

    def ancestors(self, index: int) -> list[int]:
        """Ancestor indices of ``index`` in root-to-node order, excluding it."""
        chain: list[int] = []
        p = self.nodes[index].parent
        while p != ROOT:
            chain.append(p)
            p = self.nodes[p].parent
        chain.reverse()
        return chain

    def leaves(self) -> list[int]:
        has_child = [False] * len(self.nodes)
        for n in self.nodes:
            if n.parent != ROOT:
                has_child[n.parent] = True
        return [i for i, h in enumerate(has_child) if not h]

    def rank_path(self, index: int) -> RankPath:
        return tuple(self.nodes[j].rank for j in self.ancestors(index)) + (self.nodes[index].rank,)


def build_tree(
    predictions: "HeadPredictions",
    selected: Iterable[RankPath],
    *,
    root_token: TokenId,
    weights: Mapping[RankPath, float] | None = None,
) -> TokenTree:
    """Materialize the selected rank paths into a TokenTree.

    ``selected`` must be ancestor-closed (every non-trivial path's prefix is
    also selected); tokens are looked up in ``predictions``.  ``weights`` maps
    each selected path to its expected-acceptance contribution and must cover
    the whole selection when given.
    """
    paths = {tuple(int(r) for r in p) for p in selected}
    for path in paths:
        if len(path) == 0:
            raise ValueError("empty rank path")
        if len(path) > predictions.depth_count:
            raise ValueError(f"path {path}: depth {len(path)} exceeds {predictions.depth_count} heads")
        if any(not 1 <= r <= predictions.k_max for r in path):
            raise ValueError(f"path {path}: ranks must lie in 1..{predictions.k_max}")
        if len(path) > 1 and path[:-1] not in paths:
            raise ValueError(f"path {path}: selection is not ancestor-closed")

    index: dict[RankPath, int] = {}
    nodes: list[TreeNode] = []
    max_depth = max((len(p) for p in paths), default=0)
    for depth in range(1, max_depth + 1):
        level = [p for p in paths if len(p) == depth]
        level.sort(key=lambda p: (index[p[:-1]] if depth > 1 else ROOT, p[-1]))
        for path in level:
            parent = index[path[:-1]] if depth > 1 else ROOT
            weight = 1.0 if weights is None else float(weights[path])
            rank = path[-1]
            nodes.append(
                TreeNode(
                    token=int(predictions.token(depth, rank)),
                    parent=parent,
                    depth=depth,
                    rank=rank,
                    weight=weight,
                )
            )
            index[path] = len(nodes) - 1
    return TokenTree(tuple(nodes), int(root_token))


def make_mask(tree: TokenTree) -> np.ndarray:
    """Boolean visibility mask: ``mask[i, j]`` iff j is i or one of its ancestors.

    Lower-triangular by construction because parents precede children in the
    node order.
    """
    n = len(tree)
    mask = np.zeros((n, n), dtype=bool)
    for i, node in enumerate(tree.nodes):
        if node.parent != ROOT:
            mask[i, : i] = mask[node.parent, : i]
        mask[i, i] = True
    return mask


def subsample_mask(mask: np.ndarray, survivors: Sequence[int]) -> np.ndarray:
    """Row/column gather of ``mask`` onto an ancestor-closed survivor set.

    Equivalent to rebuilding the mask of the pruned tree, without touching the
    tree itself.  ``survivors`` must be strictly increasing node indices.
    """
    n = mask.shape[0]
    surv = np.asarray(survivors, dtype=np.int64)
    if surv.ndim != 1:
        raise ValueError("survivors must be a flat index list")
    if surv.size and (surv[0] < 0 or surv[-1] >= n):
        raise ValueError("survivor index out of range")
    if np.any(np.diff(surv) <= 0):
        raise ValueError("survivors must be strictly increasing")
    kept = np.zeros(n, dtype=bool)
    kept[surv] = True
    for s in surv:
        if not np.all(kept[mask[s]]):
            raise ValueError(f"survivor {s}: an ancestor was dropped (set is not ancestor-closed)")
    return mask[np.ix_(surv, surv)].copy()


def restrict(tree: TokenTree, survivors: Sequence[int]) -> TokenTree:
    """The subtree induced by an ancestor-closed, increasing survivor index set."""
    surv = [int(s) for s in survivors]
    if any(b <= a for a, b in zip(surv, surv[1:])):
        raise ValueError("survivors must be strictly increasing")
    remap = {old: new for new, old in enumerate(surv)}
    nodes: list[TreeNode] = []
    for old in surv:
        node = tree.nodes[old]
        if node.parent == ROOT:
            parent = ROOT
        elif node.parent in remap:
            parent = remap[node.parent]
        else:
            raise ValueError(f"survivor {old}: parent {node.parent} was dropped")
        nodes.append(TreeNode(node.token, parent, node.depth, node.rank, node.weight))
    return TokenTree(tuple(nodes), tree.root_token)


def flatten_paths(tree: TokenTree) -> list[list[TokenId]]:
    """Candidate sequences, one per leaf, tokens in root-to-leaf order.

    Leaves are listed in depth-first preorder (children by ascending rank), so
    the spine path comes before its side branches.
    """
    children = tree.children()
    out: list[list[TokenId]] = []

    def walk(i: int, prefix: list[TokenId]) -> None:
        path = prefix + [tree.nodes[i].token]
        if not children[i]:
            out.append(path)
            return
        for c in children[i]:
            walk(c, path)

    for r in tree.roots():
        walk(r, [])
    return out


def complete_tree_paths(depth_count: int, k_max: int) -> list[RankPath]:
    """Every rank path of the full k^D candidate universe, depth-major order."""
    paths: list[RankPath] = []
    level: list[RankPath] = [()]
    for _ in range(depth_count):
        level = [p + (k,) for p in level for k in range(1, k_max + 1)]
        paths.extend(level)
    return paths


# --- debug serialization (golden-file friendly) ---------------------------


def format_tree(tree: TokenTree) -> str:
    """One node per line: index token parent depth rank weight."""
    lines = [f"root {tree.root_token}"]
    for i, n in enumerate(tree.nodes):
        lines.append(f"{i} {n.token} {n.parent} {n.depth} {n.rank} {n.weight!r}")
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> TokenTree:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("root "):
        raise ValueError("tree text must start with a 'root <token>' line")
    root_token = int(lines[0].split()[1])
    nodes: list[TreeNode] = []
    for ln in lines[1:]:
        idx, token, parent, depth, rank, weight = ln.split()
        if int(idx) != len(nodes):
            raise ValueError(f"node lines out of order at index {idx}")
        nodes.append(TreeNode(int(token), int(parent), int(depth), int(rank), float(weight)))
    return TokenTree(tuple(nodes), root_token)


def format_mask(mask: np.ndarray) -> str:
    n = mask.shape[0]
    lines = [str(n)]
    for row in mask.astype(int):
        lines.append("".join(str(v) for v in row))
    return "\n".join(lines) + "\n"

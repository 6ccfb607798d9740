"""Greedy tree verification.

Walk the candidate tree from the root, at each step accepting the child whose
drafted token equals the model's argmax at the current position; the argmax at
the stopping point is committed as the bonus token, so every iteration commits
accepted_length + 1 tokens and the output stream is exactly the greedy
(one-token-at-a-time) stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .token_tree import TokenId, TokenTree


@dataclass(frozen=True)
class VerifyResult:
    """Accepted node indices (a root chain, in order) and the bonus token."""

    accepted: tuple[int, ...]
    bonus: TokenId

    @property
    def accepted_length(self) -> int:
        return len(self.accepted)


def verify(tree: TokenTree, node_argmax: Sequence[TokenId], root_argmax: TokenId) -> VerifyResult:
    """Longest drafted prefix matching the model's greedy chain.

    ``node_argmax[i]`` is the model's argmax after node i's path;
    ``root_argmax`` is the argmax given just the committed context.  Sibling
    tokens are distinct, so at most one child can match at each step.
    """
    if len(node_argmax) != len(tree):
        raise ValueError("node_argmax must align with the tree's nodes")
    children = tree.children()
    frontier = tree.roots()
    target = int(root_argmax)
    accepted: list[int] = []
    while True:
        match = None
        for i in frontier:
            if tree.nodes[i].token == target:
                match = i
                break
        if match is None:
            return VerifyResult(tuple(accepted), target)
        accepted.append(match)
        target = int(node_argmax[match])
        frontier = children[match]

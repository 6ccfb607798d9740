"""Token trees from draft heads, and the attention mask that scores them.

Builds a small candidate tree out of per-head top-k predictions, prints the
canonical node order, the ancestor-visibility mask, and what survives a
restriction to a subset of nodes.
"""

import numpy as np

from treedecode import (
    HeadPredictions,
    build_tree,
    flatten_paths,
    format_mask,
    make_mask,
    restrict,
    subsample_mask,
)


def main():
    # Three draft heads, two candidates each. Row d is head d's top-k list,
    # best first; these would normally come from backend.draft().
    preds = HeadPredictions(
        tokens=np.array([[11, 12], [21, 22], [31, 32]]),
        scores=np.array([[0.9, 0.4], [0.8, 0.3], [0.7, 0.2]]),
    )

    # A rank path names one node: (1, 2) is "head 1's best, then head 2's
    # second choice". The selection must contain every prefix of every path.
    selection = {(1,), (1, 1), (1, 2), (1, 1, 1)}
    tree = build_tree(preds, selection, root_token=5)

    print("canonical node order (depth-major, siblings by rank):")
    for i, node in enumerate(tree.nodes):
        print(f"  [{i}] token={node.token} depth={node.depth} rank={node.rank} parent={node.parent}")

    print("\ncandidate continuations (root-to-leaf paths):")
    for path in flatten_paths(tree):
        print(f"  {path}")

    mask = make_mask(tree)
    print("\nattention mask (row i may look at column j):")
    print(f"  encoded: {format_mask(mask)}")
    for row in mask.astype(int):
        print("  " + " ".join(str(v) for v in row))
    print("lower-triangular: each node sees itself and its ancestors, nothing else.")

    # Pruning keeps an ancestor-closed subset. The mask of the smaller tree
    # is exactly a row/column gather of the original: no rebuild needed.
    survivors = [0, 1, 2]
    smaller = restrict(tree, survivors)
    gathered = subsample_mask(mask, survivors)
    rebuilt = make_mask(smaller)
    print(f"\nkeep nodes {survivors}: gathered mask == rebuilt mask -> "
          f"{np.array_equal(gathered, rebuilt)}")


if __name__ == "__main__":
    main()

"""Mid-forward pruning: drop branches the early layers already disbelieve.

Runs one tree forward on the tiny transformer with a pruning hook after
layer 2, showing the early top-K lists, which nodes survive, and how the
prune rate reacts to K. Depth-1 nodes are exempt: the verifier needs every
first-step candidate to stay comparable with plain greedy decoding.
"""

import numpy as np

from treedecode import (
    PruneConfig,
    TinyTransformer,
    TinyTransformerConfig,
    build_tree,
    make_mask,
    prune,
)


def drafted_tree(tt, state):
    preds = tt.draft(state, 3)
    selection = {(1,), (2,), (3,), (1, 1), (1, 2), (2, 1), (1, 1, 1), (1, 1, 2)}
    return build_tree(preds, selection, root_token=state.committed[-1])


def forward_with_prune(tt, prompt, topk):
    state = tt.prefill(prompt)
    tree = drafted_tree(tt, state)
    mask = make_mask(tree)
    positions = state.length + tree.depths - 1
    seen = {}

    def hook(lists):
        decision = prune(tree, lists, PruneConfig(layer=2, topk=topk))
        seen["lists"] = lists
        seen["decision"] = decision
        return decision.survivors

    tt.forward_tree(
        state, tree.tokens, positions, mask,
        prune_layer=2, early_topk=topk, prune_callback=hook,
    )
    return tree, seen["lists"], seen["decision"]


def main():
    tt = TinyTransformer(TinyTransformerConfig(layers=4, hidden=64, heads=4, vocab=64, seed=3))
    prompt = [7, 3, 29, 50]

    tree, lists, decision = forward_with_prune(tt, prompt, topk=4)
    print(f"tree of {len(tree)} nodes; early head consulted after layer 2 with K=4\n")
    alive = set(decision.survivors)
    for i, node in enumerate(tree.nodes):
        mark = "kept" if i in alive else "cut "
        reason = ""
        if node.depth == 1:
            reason = "(depth 1 is always kept)"
        elif node.parent not in alive:
            reason = "(parent already gone)"
        elif node.token not in lists[node.parent]:
            reason = f"(token {node.token} not in parent's early top-4 {lists[node.parent]})"
        print(f"  [{i}] {mark} depth={node.depth} token={node.token} {reason}")
    print(f"\nprune rate: {decision.prune_rate:.2f}")

    print("\nwidening K keeps more of the tree (same drafts, same weights):")
    for topk in (1, 4, 16, 32, 48, 64):
        _, _, d = forward_with_prune(tt, prompt, topk)
        kept = len(d.survivors)
        print(f"  K={topk:>2}: {kept}/{len(tree)} nodes survive, rate {d.prune_rate:.2f}")
    print("at K = vocab the early list contains everything, so nothing is cut.")


if __name__ == "__main__":
    main()

"""Estimating what the heads get right, and sizing the tree accordingly.

The synthetic oracle drafts the true next token at a known per-rank rate, so
the estimator's cumulative hit curves have an exact target. Once the curves
converge, expected-length-per-node selection picks the best tree for every
size budget, and the bigger trees stop paying for themselves.
"""

import numpy as np

from treedecode import (
    AcceptanceStats,
    CostModel,
    SyntheticOracle,
    SyntheticOracleConfig,
    choose_size,
    select_best_nodes,
)

Q = ((0.70, 0.12), (0.55, 0.12), (0.40, 0.12))


def converge(iterations=3000, seed=0):
    oracle = SyntheticOracle(SyntheticOracleConfig(
        vocab=256, draft_heads=3, layers=4, rank_quality=Q, seed=7,
    ))
    stats = AcceptanceStats(depth_count=3, k_max=2, alpha=None)
    rng = np.random.default_rng(seed)
    for _ in range(iterations):
        ctx = rng.integers(0, 256, size=5).tolist()
        preds = oracle.draft(oracle.prefill(ctx), 2)
        walk, realized = list(ctx), {}
        for d in (1, 2, 3):
            tok = oracle.greedy_token(walk)
            realized[d] = tok
            walk.append(tok)
        stats.update(realized, preds)
    return stats


def main():
    stats = converge()
    target = np.cumsum(np.asarray(Q), axis=1)
    print("cumulative top-k hit rates, estimated vs true:")
    for d in range(3):
        est = " ".join(f"{v:.3f}" for v in stats.P[d])
        true = " ".join(f"{v:.3f}" for v in target[d])
        print(f"  head {d + 1}: P_hat [{est}]   P* [{true}]")

    print("\nbest tree per size budget (expected accepted tokens per pass):")
    selections = select_best_nodes(stats, sizes=list(range(1, 7)))
    for size, sel in selections.items():
        paths = " ".join("".join(map(str, p)) for p in sel.paths)
        print(f"  {size} nodes -> l = {sel.expected_length:.3f}   {{{paths}}}")
    print("rank paths read as head ranks: 112 = best, best, then second choice.")

    # Marry the curve to a cost line and the sweet spot falls out: expected
    # tokens per unit time, scanned over the candidate sizes.
    cost = CostModel(sizes=range(1, 7), prewarm_beta=(2.0, 0.9))
    l_curve = {s: sel.expected_length for s, sel in selections.items()}
    print("\nspeed value v(size) = l / T with T = 2.0 + 0.9 * size:")
    for s, l in l_curve.items():
        print(f"  size {s}: v = {l / cost.estimate(s):.4f}")
    print(f"chosen size: {choose_size(l_curve, cost)}")


if __name__ == "__main__":
    main()

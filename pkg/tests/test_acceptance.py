"""Acceptance gate: one test per release criterion, at its stated tolerance.

`pytest tests/test_acceptance.py -v` prints one pass/fail line per criterion;
each test also prints the measured numbers (visible with -rA or -s).
"""

import time

import numpy as np
import pytest

from treedecode.acceptance import (
    AcceptanceStats,
    HeadPredictions,
    grid_candidates,
    select_best_nodes,
)
from treedecode.backends import (
    LatencyModel,
    SyntheticOracle,
    SyntheticOracleConfig,
    TinyTransformer,
    TinyTransformerConfig,
)
from treedecode.cost_model import CostModel
from treedecode.engine import DecodeEngine, EngineConfig
from treedecode.pruning import PruneConfig
from treedecode.scheduler import SchedulerConfig, choose_size
from treedecode.selftest import dummy_predictions
from treedecode.token_tree import (
    build_tree,
    complete_tree_paths,
    make_mask,
    restrict,
    subsample_mask,
)

from oracles import (
    brute_force_choose,
    enumerate_best_trees,
    greedy_transcript,
    random_closed_selection,
)

TREE_MODES = ("static_tree", "prune_only", "dynamic_only", "propd_full")

TT_CFG = TinyTransformerConfig(
    layers=4, hidden=64, heads=4, vocab=256, draft_heads=4, max_positions=64, seed=17
)


def report(criterion, detail):
    print(f"criterion {criterion}: PASS ({detail})")


def rendered(transcripts):
    return "\n".join(" ".join(str(t) for t in row) for row in transcripts)


def random_survivors(rng, tree, keep_prob=0.7):
    """One top-down pass: ancestor-closed, strictly increasing, non-empty."""
    kept, kept_set = [], set()
    for i, node in enumerate(tree.nodes):
        if (node.parent == -1 or node.parent in kept_set) and rng.random() < keep_prob:
            kept.append(i)
            kept_set.add(i)
    if not kept:
        kept, kept_set = [0], {0}
    return kept


# ---------------------------------------------------------------------------
# 1. Losslessness: every tree mode emits the autoregressive token stream.
# ---------------------------------------------------------------------------


def test_criterion_1_losslessness():
    t0 = time.perf_counter()

    def engines_agree(make_backend, engine_kwargs, vocab, n_prompts, max_tokens, batch):
        rng = np.random.default_rng(101)
        prompts = [rng.integers(0, vocab, size=8).tolist() for _ in range(n_prompts)]
        outputs = {}
        for mode in ("autoregressive",) + TREE_MODES:
            kwargs = dict(engine_kwargs)
            if mode not in ("prune_only", "propd_full"):
                kwargs["prune"] = None
            cfg = EngineConfig(mode=mode, acceptance_alpha=None, **kwargs)
            engine = DecodeEngine(make_backend(), cfg, LatencyModel())
            outputs[mode] = rendered(engine.run(prompts, max_tokens, batch_size=batch).transcripts)
        baseline = outputs["autoregressive"]
        return all(outputs[mode] == baseline for mode in TREE_MODES)

    sched = SchedulerConfig(replan_period=8, size_candidates=(1, 2, 4, 6, 8))
    assert engines_agree(
        lambda: TinyTransformer(TT_CFG),
        dict(draft_heads=4, draft_topk=3, prune=PruneConfig(layer=2, topk=16), scheduler=sched),
        vocab=TT_CFG.vocab,
        n_prompts=200,
        max_tokens=10,
        batch=25,
    )
    oracle_cfg = SyntheticOracleConfig(
        vocab=256,
        draft_heads=4,
        layers=8,
        rank_quality=((0.6, 0.12, 0.05),) * 4,
        early_quality=0.9,
        seed=19,
    )
    assert engines_agree(
        lambda: SyntheticOracle(oracle_cfg),
        dict(draft_heads=4, draft_topk=3, prune=PruneConfig(layer=4, topk=12), scheduler=sched),
        vocab=256,
        n_prompts=200,
        max_tokens=12,
        batch=25,
    )
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    report(1, f"200+200 prompts x 4 tree modes byte-identical to greedy, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Tree-attention oracle: one masked pass == per-path sequential forwards.
# ---------------------------------------------------------------------------


def test_criterion_2_tree_attention_oracle():
    t0 = time.perf_counter()
    tt = TinyTransformer(TT_CFG)
    rng = np.random.default_rng(202)
    max_rel = 0.0
    checked = 0
    pruned_cases = 0
    for case in range(100):
        depth = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        selection = random_closed_selection(rng, complete_tree_paths(depth, k), keep_prob=0.5)
        while len(selection) > 16:
            selection.remove(max(selection, key=lambda p: (len(p), p)))
        grid = rng.choice(TT_CFG.vocab, size=depth * k, replace=False).reshape(depth, k)
        preds = HeadPredictions(
            grid.astype(np.int64), -np.tile(np.arange(k, dtype=np.float64), (depth, 1))
        )
        tree = build_tree(preds, selection, root_token=0)
        ctx = rng.integers(0, TT_CFG.vocab, size=6).tolist()
        tokens = tree.tokens
        positions = len(ctx) + tree.depths - 1
        mask = make_mask(tree)
        state = tt.prefill(ctx)
        if case % 2:
            survivors = random_survivors(rng, tree)
            fwd = tt.forward_tree(
                state, tokens, positions, mask,
                prune_layer=2, early_topk=4,
                prune_callback=lambda lists, s=survivors: s,
            )
            assert fwd.survivors == tuple(survivors)
            pruned_cases += 1
        else:
            fwd = tt.forward_tree(state, tokens, positions, mask)
        for row, idx in enumerate(fwd.survivors):
            chain = [int(tokens[j]) for j in tree.ancestors(idx)] + [int(tokens[idx])]
            ref = tt.prefill(ctx + chain).last_logits
            rel = np.max(np.abs(fwd.logits[row] - ref) / np.maximum(np.abs(ref), 1e-12))
            max_rel = max(max_rel, float(rel))
            checked += 1
    assert max_rel <= 1e-5
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report(
        2,
        f"{checked} node logit rows over 100 trees ({pruned_cases} pruned), "
        f"max relative error {max_rel:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. Mask subsample oracle: gather == rebuild, exhaustively then randomly.
# ---------------------------------------------------------------------------


def test_criterion_3_mask_subsample_oracle():
    universe = complete_tree_paths(3, 2)
    preds = dummy_predictions(3, 2)
    index = {p: i for i, p in enumerate(universe)}
    trees = 0
    checks = 0
    for bits in range(1, 1 << len(universe)):
        if bits.bit_count() > 6:
            continue
        selection = [universe[i] for i in range(len(universe)) if bits >> i & 1]
        if any(len(p) > 1 and not bits >> index[p[:-1]] & 1 for p in selection):
            continue
        tree = build_tree(preds, selection, root_token=0)
        mask = make_mask(tree)
        parents = tree.parents
        n = len(tree)
        for sbits in range(1 << n):
            survivors = [i for i in range(n) if sbits >> i & 1]
            if any(parents[i] >= 0 and not sbits >> int(parents[i]) & 1 for i in survivors):
                continue
            gathered = subsample_mask(mask, survivors)
            rebuilt = make_mask(restrict(tree, survivors))
            assert np.array_equal(gathered, rebuilt)
            checks += 1
        trees += 1
    rng = np.random.default_rng(303)
    big_universe = complete_tree_paths(4, 3)
    big_preds = dummy_predictions(4, 3)
    for _ in range(500):
        selection = random_closed_selection(rng, big_universe, keep_prob=0.35)
        tree = build_tree(big_preds, selection, root_token=0)
        survivors = random_survivors(rng, tree, keep_prob=0.6)
        gathered = subsample_mask(make_mask(tree), survivors)
        rebuilt = make_mask(restrict(tree, survivors))
        assert np.array_equal(gathered, rebuilt)
        checks += 1
    report(3, f"{trees} exhaustive trees (all survivor subsets) + 500 random, {checks} exact checks")


# ---------------------------------------------------------------------------
# 4. Regression recovery: t = 3 + 0.2*size, noisy to 2%, noiseless to 1e-9.
# ---------------------------------------------------------------------------


def test_criterion_4_regression_recovery():
    sizes = list(range(1, 65))
    rng = np.random.default_rng(404)

    noisy_clock = LatencyModel(c0_base=3.0, c1_base=0.2, noise=0.05, seed=44)
    noisy = CostModel(sizes, alpha=0.4, staleness_decay=0.0)
    for i in range(1, 101):
        s = int(rng.choice(sizes))
        noisy.observe(s, noisy_clock.iteration_time(s), now=i)
    b0, b1 = noisy.fit(now=101)
    assert abs(b0 - 3.0) / 3.0 < 0.02
    assert abs(b1 - 0.2) / 0.2 < 0.02

    exact_clock = LatencyModel(c0_base=3.0, c1_base=0.2, noise=0.0)
    exact = CostModel(sizes, alpha=0.4, staleness_decay=0.0)
    for i in range(1, 101):
        s = int(rng.choice(sizes))
        exact.observe(s, exact_clock.iteration_time(s), now=i)
    e0, e1 = exact.fit(now=101)
    assert abs(e0 - 3.0) < 1e-9
    assert abs(e1 - 0.2) < 1e-9
    report(
        4,
        f"noisy fit ({b0:.4f}, {b1:.5f}) within 2%, "
        f"noiseless error ({abs(e0 - 3.0):.1e}, {abs(e1 - 0.2):.1e})",
    )


# ---------------------------------------------------------------------------
# 5. Estimator convergence and expected length vs Monte-Carlo.
# ---------------------------------------------------------------------------


def mc_full_grid_length(q, k_max, trials, seed):
    """Simulate realized draft ranks; count accepted nodes of the full grid."""
    rng = np.random.default_rng(seed)
    cum = np.cumsum(q, axis=1)
    depth_count, rank_count = q.shape
    u = rng.random((trials, depth_count))
    ranks = np.empty((trials, depth_count), dtype=np.int64)
    for d in range(depth_count):
        ranks[:, d] = np.searchsorted(cum[d], u[:, d], side="right") + 1
    hit = ranks <= rank_count
    in_tree = hit & (ranks <= k_max)
    spine_ok = np.ones(trials, dtype=bool)
    total = 0
    for d in range(depth_count):
        total += int(np.sum(spine_ok & in_tree[:, d]))
        spine_ok &= hit[:, d] & (ranks[:, d] == 1)
    return total / trials


def test_criterion_5_estimator_convergence():
    q = np.array([[0.65, 0.15, 0.05], [0.55, 0.15, 0.05], [0.45, 0.15, 0.05]])
    oracle = SyntheticOracle(
        SyntheticOracleConfig(
            vocab=256,
            draft_heads=3,
            layers=4,
            rank_quality=tuple(tuple(row) for row in q),
            early_quality=0.9,
            seed=55,
        )
    )
    stats = AcceptanceStats(3, 3, alpha=None)
    rng = np.random.default_rng(505)
    for _ in range(5000):
        ctx = rng.integers(0, 256, size=6).tolist()
        preds = oracle.draft(oracle.prefill(ctx), 3)
        walk = list(ctx)
        realized = {}
        for d in range(1, 4):
            nxt = oracle.greedy_token(walk)
            realized[d] = nxt
            walk.append(nxt)
        stats.update(realized, preds)
    target = np.cumsum(q, axis=1)
    err = float(np.max(np.abs(stats.P - target)))
    assert err < 0.03

    ideal = AcceptanceStats(3, 3, prewarm=False)
    ideal.P = target.copy()
    grid_tree = build_tree(dummy_predictions(3, 3), set(grid_candidates(3, 3)), root_token=0)
    analytic = ideal.expected_tree_length(grid_tree)
    mc = mc_full_grid_length(q, k_max=3, trials=10**5, seed=515)
    gap = abs(analytic - mc) / analytic
    assert gap < 0.02
    report(
        5,
        f"max |P_hat - P*| = {err:.4f} after 5000 iterations; "
        f"grid length analytic {analytic:.4f} vs MC {mc:.4f} ({gap:.2%})",
    )


# ---------------------------------------------------------------------------
# 6. Worked contribution arithmetic on the four-node example tree.
# ---------------------------------------------------------------------------


def test_criterion_6_worked_tree_arithmetic():
    stats = AcceptanceStats(3, 2, prewarm=False)
    stats.P = np.array([
        [0.80, 0.85],    # depth 1: p(a) = 0.8
        [0.75, 0.975],   # depth 2: p(b) = 0.75, p(c) = 0.225
        [0.50, 0.60],    # depth 3: p(d) = 0.5,  p(e) = 0.1
    ])
    contrib_b = stats.path_contribution([(1, 1), (2, 1)])
    contrib_e = stats.path_contribution([(1, 1), (2, 1), (3, 2)])
    assert contrib_b == pytest.approx(0.6, abs=1e-12)
    assert contrib_e == pytest.approx(0.06, abs=1e-12)
    tree = build_tree(
        dummy_predictions(3, 2), {(1,), (1, 1), (1, 2), (1, 1, 1)}, root_token=0
    )
    expected = stats.expected_tree_length(tree)
    assert expected == pytest.approx(1.88, abs=1e-12)
    report(6, f"contributions {contrib_b:.3f} / {contrib_e:.3f}, tree length {expected:.2f}")


# ---------------------------------------------------------------------------
# 7. Size selection equals brute force; node selection equals enumeration.
# ---------------------------------------------------------------------------


def test_criterion_7_size_selection_oracle():
    rng = np.random.default_rng(707)
    for _ in range(1000):
        n_sizes = int(rng.integers(2, 9))
        sizes = sorted(rng.choice(np.arange(1, 65), size=n_sizes, replace=False).tolist())
        b0 = float(rng.uniform(0.5, 5.0))
        b1 = float(rng.uniform(0.01, 1.0))
        cost = CostModel(sizes, alpha=1.0, staleness_decay=0.0)
        if rng.random() > 0.1:
            for i, s in enumerate(sizes, start=1):
                cost.observe(s, b0 + b1 * s, now=i)
            cost.fit(now=n_sizes + 1)
        l_curve = {
            s: float(v)
            for s, v in zip(sizes, np.cumsum(rng.uniform(0.05, 1.0, size=n_sizes)))
        }
        include = bool(rng.random() < 0.5)
        assert choose_size(l_curve, cost, include) == brute_force_choose(l_curve, cost, include)

    grids = [(d, k) for d in range(1, 5) for k in range(1, 5) if d * k <= 12]
    grid_checks = 0
    for case in range(30):
        depth_count, k_max = grids[case % len(grids)]
        stats = AcceptanceStats(depth_count, k_max, prewarm=False)
        stats.P = np.sort(rng.uniform(0.0, 1.0, size=(depth_count, k_max)), axis=1)
        universe = grid_candidates(depth_count, k_max)
        all_sizes = list(range(1, depth_count * k_max + 1))
        chosen = select_best_nodes(stats, all_sizes)
        for size in all_sizes:
            best_value, argmax_sets = enumerate_best_trees(stats, universe, size)
            sel = chosen[size]
            assert sel.expected_length == pytest.approx(best_value, abs=1e-12)
            assert frozenset(sel.paths) in argmax_sets
            grid_checks += 1
    report(7, f"1000 size choices match brute force; {grid_checks} grid selections match enumeration")


# ---------------------------------------------------------------------------
# 8. Batch trend: dynamic trees + pruning win where verification cost bites.
# ---------------------------------------------------------------------------


def test_criterion_8_batch_trend():
    t0 = time.perf_counter()
    batches = (1, 2, 4, 8, 16)
    modes = ("autoregressive",) + TREE_MODES
    oracle_cfg = SyntheticOracleConfig(
        vocab=256,
        draft_heads=4,
        layers=8,
        rank_quality=(
            (0.60, 0.12, 0.05),
            (0.55, 0.12, 0.05),
            (0.50, 0.12, 0.05),
            (0.45, 0.12, 0.05),
        ),
        early_quality=0.97,
        seed=7,
    )
    sched = SchedulerConfig(replan_period=16, size_candidates=(1, 2, 4, 6, 8, 10, 12))
    rng = np.random.default_rng(11)
    prompts = [rng.integers(0, 256, size=8).tolist() for _ in range(32)]

    speed = {}
    for batch in batches:
        for mode in modes:
            cfg = EngineConfig(
                mode=mode,
                draft_heads=4,
                draft_topk=3,
                prune=PruneConfig(layer=4, topk=12) if mode in ("prune_only", "propd_full") else None,
                scheduler=sched,
            )
            clock = LatencyModel(
                c0_base=3.0, c0_batch=0.1, c0_seqlen=0.0,
                c1_base=0.01, c1_batch=0.08, noise=0.02, seed=8,
            )
            engine = DecodeEngine(SyntheticOracle(oracle_cfg), cfg, clock)
            speed[(batch, mode)] = engine.run(prompts, 64, batch_size=batch).summary.tokens_per_sec

    for batch in batches:
        assert speed[(batch, "propd_full")] >= speed[(batch, "static_tree")]
    ratio = speed[(16, "propd_full")] / speed[(16, "static_tree")]
    assert ratio >= 1.1
    for batch in (4, 8, 16):
        best = speed[(batch, "propd_full")]
        for mode in modes:
            if mode != "propd_full":
                assert best > speed[(batch, mode)], (batch, mode)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    report(
        8,
        f"propd_full >= static_tree at all batches (x{ratio:.2f} at 16), "
        f"strictly fastest at batch >= 4, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 9. Prune sweep: rate falls as the early top-K widens; perfect early head
#    never costs acceptance.
# ---------------------------------------------------------------------------


def test_criterion_9_prune_sweep():
    q = ((0.7, 0.1), (0.6, 0.1), (0.5, 0.1))
    rng = np.random.default_rng(909)
    prompts = [rng.integers(0, 64, size=6).tolist() for _ in range(8)]

    def summary_for(early_quality, mode, layer, topk):
        oracle = SyntheticOracle(
            SyntheticOracleConfig(
                vocab=64, draft_heads=3, layers=6,
                rank_quality=q, early_quality=early_quality, seed=9,
            )
        )
        cfg = EngineConfig(
            mode=mode,
            draft_heads=3,
            draft_topk=3,
            prune=PruneConfig(layer=layer, topk=topk) if mode == "prune_only" else None,
            scheduler=SchedulerConfig(replan_period=8, size_candidates=(2, 4, 6)),
            acceptance_alpha=None,
        )
        clock = LatencyModel(c0_base=2.0, c1_base=0.05, seed=10)
        return DecodeEngine(oracle, cfg, clock).run(prompts, 24, batch_size=4).summary

    topks = (2, 4, 8, 16, 32)
    rate_rows = {}
    for layer in (2, 3):
        rates = [summary_for(0.9, "prune_only", layer, k).mean_prune_rate for k in topks]
        assert all(a >= b for a, b in zip(rates, rates[1:])), (layer, rates)
        assert rates[-1] < rates[0]
        rate_rows[layer] = rates

    pruned = summary_for(1.0, "prune_only", 2, 8)
    plain = summary_for(1.0, "static_tree", 2, 8)
    assert pruned.mean_accepted == plain.mean_accepted
    assert pruned.total_tokens == plain.total_tokens
    report(
        9,
        "prune rate monotone in top-K "
        + "; ".join(
            f"layer {layer}: {' >= '.join(f'{r:.3f}' for r in rates)}"
            for layer, rates in rate_rows.items()
        )
        + f"; perfect early head keeps acceptance at {plain.mean_accepted:.3f}",
    )

"""Reduced-scale oracle suites runnable without a test harness.

Each suite checks an implementation against an independent recomputation
(exhaustive enumeration, a from-scratch rerun, a known closed form, or a
Monte-Carlo simulation) at a scale that finishes in seconds.  The check
functions accept the implementation under test as an argument so a deliberate
bug can be injected to confirm the suite actually discriminates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .acceptance import AcceptanceStats, HeadPredictions, grid_candidates
from .backends import (
    LatencyModel,
    SyntheticOracle,
    SyntheticOracleConfig,
    TinyTransformer,
    TinyTransformerConfig,
)
from .cost_model import CostModel
from .engine import DecodeEngine, EngineConfig
from .pruning import PruneConfig
from .scheduler import SchedulerConfig
from .token_tree import (
    RankPath,
    TokenTree,
    build_tree,
    complete_tree_paths,
    make_mask,
    restrict,
    subsample_mask,
)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    detail: str


# ===========================================================================
# Shared oracle helpers (tests import these too)
# ===========================================================================


def dummy_predictions(depth_count: int, k_max: int) -> HeadPredictions:
    """Distinct placeholder tokens per (depth, rank) grid cell."""
    tokens = np.arange(depth_count * k_max, dtype=np.int64).reshape(depth_count, k_max) + 1
    scores = -np.tile(np.arange(k_max, dtype=np.float64), (depth_count, 1))
    return HeadPredictions(tokens, scores)


def enumerate_closed_selections(
    universe: Sequence[RankPath], max_nodes: int
) -> Iterator[frozenset[RankPath]]:
    """All ancestor-closed, non-empty subsets of ``universe`` up to ``max_nodes``."""
    paths = list(universe)
    n = len(paths)
    index = {p: i for i, p in enumerate(paths)}
    for bits in range(1, 1 << n):
        if bits.bit_count() > max_nodes:
            continue
        chosen = [paths[i] for i in range(n) if bits >> i & 1]
        ok = all(len(p) == 1 or (p[:-1] in index and bits >> index[p[:-1]] & 1) for p in chosen)
        if ok:
            yield frozenset(chosen)


def closed_survivor_subsets(tree: TokenTree) -> Iterator[tuple[int, ...]]:
    """All ancestor-closed survivor index subsets of ``tree`` (including empty)."""
    n = len(tree)
    parents = tree.parents
    for bits in range(1 << n):
        ok = all(
            not bits >> i & 1 or parents[i] < 0 or bits >> parents[i] & 1
            for i in range(n)
        )
        if ok:
            yield tuple(i for i in range(n) if bits >> i & 1)


# ===========================================================================
# Suites
# ===========================================================================


def mask_subsample_suite(
    seed: int = 0,
    subsample_fn: Callable[[np.ndarray, Sequence[int]], np.ndarray] = subsample_mask,
    max_nodes: int = 5,
) -> SuiteResult:
    """Subsampled masks must equal masks rebuilt from the pruned tree.

    Exhaustive over every ancestor-closed tree up to ``max_nodes`` nodes in the
    depth-3, top-2 candidate universe, crossed with every ancestor-closed
    survivor subset; plus seeded random larger trees.
    """
    name = "mask-subsample"
    preds = dummy_predictions(3, 2)
    universe = complete_tree_paths(3, 2)
    cases = 0
    rng = np.random.default_rng(seed)

    def check(tree: TokenTree, mask: np.ndarray, surv: tuple[int, ...]) -> str | None:
        try:
            got = subsample_fn(mask, surv)
        except Exception as exc:  # noqa: BLE001 - injected bugs may raise
            return f"subsample raised {exc!r} on a valid survivor set"
        want = make_mask(restrict(tree, surv))
        if got.shape != want.shape or not np.array_equal(got.astype(bool), want):
            return f"mismatch on tree size {len(tree)}, survivors {surv}"
        return None

    for selection in enumerate_closed_selections(universe, max_nodes):
        tree = build_tree(preds, selection, root_token=0)
        mask = make_mask(tree)
        for surv in closed_survivor_subsets(tree):
            cases += 1
            err = check(tree, mask, surv)
            if err:
                return SuiteResult(name, False, err)
    # Random larger trees: grow ancestor-closed selections in a bigger universe.
    big = complete_tree_paths(4, 3)
    for _ in range(60):
        selection: set[RankPath] = set()
        for p in sorted(big, key=len):
            if (len(p) == 1 or p[:-1] in selection) and rng.random() < 0.45:
                selection.add(p)
        if not selection:
            continue
        tree = build_tree(dummy_predictions(4, 3), selection, root_token=0)
        mask = make_mask(tree)
        keep = rng.random(len(tree)) < 0.6
        # random keep set, closed top-down so it is a valid survivor set
        alive: set[int] = set()
        surv: tuple[int, ...] = ()
        for i in range(len(tree)):
            if keep[i] and (tree.nodes[i].parent < 0 or tree.nodes[i].parent in alive):
                alive.add(i)
                surv += (i,)
        cases += 1
        err = check(tree, mask, surv)
        if err:
            return SuiteResult(name, False, err)
    return SuiteResult(name, True, f"{cases} tree/survivor cases, subsample == rebuild")


def losslessness_suite(
    seed: int = 0,
    prompt_count: int = 6,
    max_tokens: int = 12,
    engine_factory: Callable[..., DecodeEngine] = DecodeEngine,
) -> SuiteResult:
    """Every tree mode's transcripts must equal plain greedy decoding's."""
    name = "losslessness"
    rng = np.random.default_rng(seed)
    checked = 0
    for kind in ("tiny", "synthetic"):
        def backend():
            if kind == "tiny":
                return TinyTransformer(TinyTransformerConfig(
                    layers=3, hidden=32, heads=2, vocab=64, draft_heads=3, seed=seed,
                ))
            return SyntheticOracle(SyntheticOracleConfig(
                vocab=64, draft_heads=3, layers=6,
                rank_quality=((0.7, 0.1), (0.6, 0.1), (0.5, 0.1)),
                early_quality=0.9, seed=seed,
            ))

        vocab = backend().vocab_size
        prompts = [rng.integers(0, vocab, size=4).tolist() for _ in range(prompt_count)]
        latency = lambda: LatencyModel(c0_base=1.0, c1_base=0.02, seed=seed)
        scheduler = SchedulerConfig(replan_period=6, size_candidates=(1, 2, 4, 6))
        base_kwargs = dict(draft_heads=3, draft_topk=2, scheduler=scheduler, acceptance_alpha=None)
        prune_cfg = PruneConfig(layer=2, topk=8)
        baseline = engine_factory(
            backend(), EngineConfig(mode="autoregressive", **base_kwargs), latency()
        ).run(prompts, max_tokens, batch_size=3)
        for mode in ("static_tree", "prune_only", "dynamic_only", "propd_full"):
            cfg = EngineConfig(
                mode=mode,
                prune=prune_cfg if mode in ("prune_only", "propd_full") else None,
                **base_kwargs,
            )
            out = engine_factory(backend(), cfg, latency()).run(prompts, max_tokens, batch_size=3)
            checked += 1
            if out.transcripts != baseline.transcripts:
                return SuiteResult(name, False, f"{kind}/{mode} diverged from greedy decoding")
    return SuiteResult(name, True, f"{checked} mode runs matched greedy transcripts exactly")


def regression_suite(seed: int = 0, cost_model_cls: type[CostModel] = CostModel) -> SuiteResult:
    """The fitted line must recover the latency model's coefficients."""
    name = "regression-recovery"
    rng = np.random.default_rng(seed)
    sizes = list(range(1, 65))
    # Exact recovery on noiseless data.
    clean = LatencyModel(c0_base=3.0, c1_base=0.2, noise=0.0, seed=seed)
    model = cost_model_cls(sizes, alpha=0.2, staleness_decay=0.01)
    for now in range(1, 61):
        s = int(rng.integers(1, 65))
        model.observe(s, clean.iteration_time(s), now=now)
    b0, b1 = model.fit(now=61)
    if abs(b0 - 3.0) > 1e-9 or abs(b1 - 0.2) > 1e-9:
        return SuiteResult(name, False, f"noiseless fit off: ({b0}, {b1}) vs (3.0, 0.2)")
    # Within-tolerance recovery under bounded noise.
    noisy = LatencyModel(c0_base=3.0, c1_base=0.2, noise=0.05, seed=seed)
    model = cost_model_cls(sizes, alpha=0.2, staleness_decay=0.01)
    for now in range(1, 101):
        s = int(rng.integers(1, 65))
        model.observe(s, noisy.iteration_time(s), now=now)
    b0, b1 = model.fit(now=101)
    if abs(b0 - 3.0) / 3.0 > 0.02 or abs(b1 - 0.2) / 0.2 > 0.02:
        return SuiteResult(name, False, f"noisy fit off: ({b0}, {b1}) vs (3.0, 0.2)")
    return SuiteResult(name, True, f"recovered (3.0, 0.2); noisy fit ({b0:.4f}, {b1:.4f})")


def mc_expected_grid_length(
    q: Sequence[Sequence[float]], k_max: int, trials: int, seed: int = 0
) -> float:
    """Monte-Carlo mean accepted-node count of the full candidate grid.

    Per trial each head realizes a rank by its containment probabilities (or
    misses); a grid node counts when the spine above it realized rank 1 and
    its own head realized its rank (any rank <= k_max for the side branches).
    """
    rng = np.random.default_rng(seed)
    depth = len(q)
    counts = np.zeros(trials)
    spine_ok = np.ones(trials, dtype=bool)
    for d in range(depth):
        row = np.asarray(q[d], dtype=np.float64)
        u = rng.random(trials)
        hit = np.searchsorted(np.cumsum(row), u, side="right")
        present = hit < row.size
        rank = hit + 1
        counts += spine_ok & present & (rank <= k_max)
        spine_ok = spine_ok & present & (rank == 1)
    return float(counts.mean())


def estimator_suite(
    seed: int = 0,
    iterations: int = 1500,
    tolerance: float = 0.05,
    stats_cls: type[AcceptanceStats] = AcceptanceStats,
) -> SuiteResult:
    """Tracked hit rates must converge to the oracle's containment curves,
    and the analytic expected tree length must match simulation."""
    name = "estimator-convergence"
    q = ((0.65, 0.15, 0.05), (0.55, 0.15, 0.05), (0.45, 0.15, 0.05))
    oracle = SyntheticOracle(SyntheticOracleConfig(
        vocab=128, draft_heads=3, layers=4, rank_quality=q, seed=seed,
    ))
    rng = np.random.default_rng(seed)
    ctx = rng.integers(0, 128, size=4).tolist()
    stats = stats_cls(3, 3, alpha=None)
    state = oracle.prefill(ctx)
    for _ in range(iterations):
        preds = oracle.draft(state, 3)
        walk = list(state.committed)
        realized = {}
        for d in range(1, 4):
            nxt = oracle.greedy_token(walk)
            realized[d] = nxt
            walk.append(nxt)
        stats.update(realized, preds)
        state.committed.append(realized[1])
    p_star = np.cumsum(np.asarray(q), axis=1)
    err = float(np.max(np.abs(stats.P - p_star)))
    if err >= tolerance:
        return SuiteResult(name, False, f"max cumulative-rate error {err:.4f} >= {tolerance}")
    grid_tree = build_tree(dummy_predictions(3, 3), grid_candidates(3, 3), root_token=0)
    analytic = stats.expected_tree_length(grid_tree)
    simulated = mc_expected_grid_length(q, 3, trials=20_000, seed=seed + 1)
    rel = abs(analytic - simulated) / simulated
    if rel > 0.05:
        return SuiteResult(name, False, f"expected length {analytic:.4f} vs MC {simulated:.4f} ({rel:.2%})")
    return SuiteResult(
        name, True, f"max rate error {err:.4f}; expected length {analytic:.3f} vs MC {simulated:.3f}"
    )


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        losslessness_suite(seed=seed),
        mask_subsample_suite(seed=seed),
        regression_suite(seed=seed),
        estimator_suite(seed=seed),
    ]

"""The decode loop: draft, plan, build, verify-with-pruning, commit.

One iteration drafts per-head candidates for every active sequence, picks a
tree (a fixed shape, or the expected-length/cost trade-off when dynamic
generation is on), scores all nodes in one masked forward (optionally pruning
midway), greedily verifies, and commits accepted tokens plus the bonus token.
Every mode emits the exact greedy token stream; modes differ only in how much
work each committed token costs.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .acceptance import AcceptanceStats, grid_candidates, select_best_nodes
from .backends import LatencyModel, ModelBackend
from .cost_model import CostModel, InsufficientDataError
from .pruning import PruneConfig, apply_decision, prune
from .scheduler import RuntimeSnapshot, SchedulerConfig, choose_size, should_replan
from .token_tree import RankPath, build_tree, make_mask
from .verification import verify

MODES = ("autoregressive", "static_tree", "prune_only", "dynamic_only", "propd_full")


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "propd_full"
    draft_heads: int = 4
    draft_topk: int = 3
    prune: PruneConfig | None = None
    scheduler: SchedulerConfig = SchedulerConfig()
    static_tree: tuple[RankPath, ...] | None = None
    acceptance_alpha: float | None = 0.05
    cost_alpha: float = 0.2
    cost_staleness: float = 0.01
    include_bonus_in_speed: bool = False
    probe_rounds: int = 1
    eos_token: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.draft_heads < 1 or self.draft_topk < 1:
            raise ValueError("draft_heads and draft_topk must be positive")
        if self.uses_prune and self.prune is None:
            raise ValueError(f"mode {self.mode!r} needs a prune config")
        if self.probe_rounds < 0:
            raise ValueError("probe_rounds must be non-negative")

    @property
    def uses_tree(self) -> bool:
        return self.mode != "autoregressive"

    @property
    def uses_prune(self) -> bool:
        return self.mode in ("prune_only", "propd_full")

    @property
    def uses_dynamic(self) -> bool:
        return self.mode in ("dynamic_only", "propd_full")


@dataclass
class SequenceRun:
    state: object
    prompt: list[int]
    generated: list[int] = field(default_factory=list)
    finished: bool = False

    @property
    def last_token(self) -> int:
        return self.generated[-1] if self.generated else self.prompt[-1]


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    batch: int
    mean_seqlen: float
    tree_size: int
    mean_survivors: float
    prune_rate: float
    mean_accepted: float
    tokens_committed: int
    iteration_time: float
    replanned: bool

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "batch": self.batch,
            "mean_seqlen": self.mean_seqlen,
            "tree_size": self.tree_size,
            "mean_survivors": self.mean_survivors,
            "prune_rate": self.prune_rate,
            "mean_accepted": self.mean_accepted,
            "tokens_committed": self.tokens_committed,
            "iteration_time": self.iteration_time,
            "replanned": self.replanned,
        }


@dataclass(frozen=True)
class PlanEvent:
    iteration: int
    trigger: str
    chosen_size: int
    l_curve: dict[int, float]
    v_curve: dict[int, float | None]


@dataclass(frozen=True)
class RunSummary:
    mode: str
    iterations: int
    total_tokens: int
    total_time: float
    tokens_per_sec: float
    mean_accepted: float
    mean_prune_rate: float
    mean_tree_size: float


@dataclass(frozen=True)
class RunResult:
    transcripts: list[list[int]]
    prompts: list[list[int]]
    metrics: list[IterationMetrics]
    plan_events: list[PlanEvent]
    summary: RunSummary


class DecodeEngine:
    """Runs one backend in one of the five modes.

    ``latency_model`` drives the simulated clock (fully reproducible); without
    it, iteration times come from the wall clock.
    """

    def __init__(
        self,
        backend: ModelBackend,
        config: EngineConfig,
        latency_model: LatencyModel | None = None,
    ) -> None:
        self.backend = backend
        self.config = config
        self.latency = latency_model
        if config.uses_tree:
            if config.draft_heads != backend.draft_head_count:
                raise ValueError("engine draft_heads must match the backend's head count")
            if config.draft_topk >= backend.vocab_size:
                raise ValueError("draft_topk must be smaller than the vocabulary")
        if config.uses_prune and not 1 <= config.prune.layer < backend.num_layers:
            raise ValueError("prune layer must lie strictly inside the backbone")
        grid = config.draft_heads * config.draft_topk
        self.size_candidates = sorted({min(int(s), grid) for s in config.scheduler.size_candidates})
        if config.mode in ("static_tree", "prune_only"):
            self.static_paths: tuple[RankPath, ...] = (
                config.static_tree
                if config.static_tree is not None
                else grid_candidates(config.draft_heads, config.draft_topk)
            )
        else:
            self.static_paths = ()
        cost_sizes = set(self.size_candidates)
        if self.static_paths:
            cost_sizes.add(len(self.static_paths))
        self.stats = AcceptanceStats(config.draft_heads, config.draft_topk, alpha=config.acceptance_alpha)
        self.cost = CostModel(cost_sizes, alpha=config.cost_alpha, staleness_decay=config.cost_staleness)
        self._mask_cache: dict[tuple[int, ...], np.ndarray] = {}
        self._iteration = 0
        self._selection: tuple[RankPath, ...] | None = None
        self._tree_size = 0
        self._planned_batch: int | None = None
        self._planned_seqlen = 0.0
        self._planned_iteration = 0
        self._probe_queue: deque[int] = deque(self.size_candidates * config.probe_rounds)
        self.plan_events: list[PlanEvent] = []

    # -- public entry ---------------------------------------------------------

    def run(
        self,
        prompts: Sequence[Sequence[int]],
        max_tokens: int,
        batch_size: int | None = None,
    ) -> RunResult:
        """Decode every prompt for up to ``max_tokens`` new tokens.

        Prompts are processed in consecutive batches of ``batch_size`` (all at
        once by default); estimator and cost state carry across batches.
        """
        if max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        prompts = [list(map(int, p)) for p in prompts]
        if not prompts or any(len(p) == 0 for p in prompts):
            raise ValueError("prompts must be non-empty")
        chunk = len(prompts) if batch_size is None else max(1, int(batch_size))
        transcripts: list[list[int]] = []
        metrics: list[IterationMetrics] = []
        for lo in range(0, len(prompts), chunk):
            seqs = [SequenceRun(self.backend.prefill(p), p) for p in prompts[lo : lo + chunk]]
            active = list(seqs)
            while active:
                metrics.append(self._step(active, max_tokens))
                active = [s for s in seqs if not s.finished]
            transcripts.extend(s.generated for s in seqs)
        return RunResult(
            transcripts=transcripts,
            prompts=prompts,
            metrics=metrics,
            plan_events=list(self.plan_events),
            summary=self._summarize(metrics),
        )

    # -- one iteration ----------------------------------------------------------

    def _step(self, active: list[SequenceRun], max_tokens: int) -> IterationMetrics:
        self._iteration += 1
        batch = len(active)
        mean_seqlen = float(np.mean([s.state.length for s in active]))
        wall_start = time.perf_counter() if self.latency is None else 0.0

        if not self.config.uses_tree:
            tokens_committed = 0
            for s in active:
                bonus = self.backend.next_argmax(s.state)
                self.backend.commit(s.state, [], bonus)
                tokens_committed += self._absorb(s, [bonus], max_tokens)
            t = self._clock(wall_start, rows=1.0, batch=batch, seqlen=mean_seqlen)
            return IterationMetrics(
                self._iteration, batch, mean_seqlen, 0, 0.0, 0.0, 0.0,
                tokens_committed, t, False,
            )

        cfg = self.config
        drafts = [self.backend.draft(s.state, cfg.draft_topk) for s in active]
        roots = [self.backend.next_argmax(s.state) for s in active]
        paths, replanned = self._plan(batch, mean_seqlen)
        weights = None
        if cfg.uses_dynamic:
            weights = {
                p: self.stats.path_contribution(list(enumerate(p, start=1))) for p in paths
            }
        drafted_n = len(paths)
        survived_total = 0
        accepted_total = 0
        tokens_committed = 0
        prune_rates: list[float] = []
        for s, pred, root in zip(active, drafts, roots):
            tree = build_tree(pred, paths, root_token=s.last_token, weights=weights)
            mask = self._mask_for(tree)
            positions = s.state.length + tree.depths - 1
            if cfg.uses_prune:
                holder: dict = {}

                def on_early(lists, _tree=tree, _holder=holder):
                    decision = prune(_tree, lists, cfg.prune)
                    _holder["decision"] = decision
                    return decision.survivors

                fwd = self.backend.forward_tree(
                    s.state, tree.tokens, positions, mask,
                    prune_layer=cfg.prune.layer,
                    early_topk=cfg.prune.topk,
                    prune_callback=on_early,
                )
                decision = holder["decision"]
                verified_tree, _ = apply_decision(tree, mask, decision)
                prune_rates.append(decision.prune_rate)
            else:
                fwd = self.backend.forward_tree(s.state, tree.tokens, positions, mask)
                verified_tree = tree
            result = verify(verified_tree, fwd.argmax, root)
            self.backend.commit(s.state, result.accepted, result.bonus)
            newly = [verified_tree.nodes[i].token for i in result.accepted] + [result.bonus]
            tokens_committed += self._absorb(s, newly, max_tokens)
            accepted_total += result.accepted_length
            survived_total += len(fwd.survivors)
            realized = {d: newly[d - 1] for d in range(1, min(len(newly), cfg.draft_heads) + 1)}
            self.stats.update(realized, pred)

        survived_mean = survived_total / batch
        if cfg.uses_prune:
            n_split = cfg.prune.layer
            total = self.backend.num_layers
            rows = (n_split * drafted_n + (total - n_split) * survived_mean) / total
        else:
            rows = float(drafted_n)
        t = self._clock(wall_start, rows=rows, batch=batch, seqlen=mean_seqlen)
        self.cost.observe(drafted_n, t, now=self._iteration)
        return IterationMetrics(
            self._iteration, batch, mean_seqlen, drafted_n, survived_mean,
            float(np.mean(prune_rates)) if prune_rates else 0.0,
            accepted_total / batch, tokens_committed, t, replanned,
        )

    # -- planning -----------------------------------------------------------------

    def _plan(self, batch: int, mean_seqlen: float) -> tuple[tuple[RankPath, ...], bool]:
        if not self.config.uses_dynamic:
            return self.static_paths, False
        if (
            self._planned_batch is not None
            and abs(batch - self._planned_batch) >= self.config.scheduler.resize_batch_delta
        ):
            # Batch resizes invalidate the per-size time averages (the last
            # fitted line keeps serving estimates until fresh data arrives).
            self.cost.reset()
            self._probe_queue = deque(self.size_candidates * self.config.probe_rounds)
        if self._probe_queue:
            size = self._probe_queue.popleft()
            selection = select_best_nodes(self.stats, [size])[size]
            self._record_plan("probe", size, {size: selection.expected_length}, batch, mean_seqlen)
            self._selection = selection.paths
            self._tree_size = size
            return selection.paths, True
        trigger = self._replan_trigger(batch, mean_seqlen)
        if trigger is None:
            return self._selection, False
        try:
            self.cost.fit(self._iteration)
        except InsufficientDataError:
            pass
        curves = select_best_nodes(self.stats, self.size_candidates)
        l_curve = {size: sel.expected_length for size, sel in curves.items()}
        size = choose_size(l_curve, self.cost, self.config.include_bonus_in_speed)
        self._record_plan(trigger, size, l_curve, batch, mean_seqlen)
        self._selection = curves[size].paths
        self._tree_size = size
        return self._selection, True

    def _replan_trigger(self, batch: int, mean_seqlen: float) -> str | None:
        if self._selection is None:
            return "initial"
        snapshot = RuntimeSnapshot(
            batch=batch,
            mean_seqlen=mean_seqlen,
            iterations_since_plan=self._iteration - self._planned_iteration,
            planned_batch=self._planned_batch if self._planned_batch is not None else batch,
            planned_seqlen=self._planned_seqlen,
        )
        if not should_replan(snapshot, self.config.scheduler):
            return None
        if abs(snapshot.batch - snapshot.planned_batch) >= self.config.scheduler.resize_batch_delta:
            return "batch"
        if abs(snapshot.mean_seqlen - snapshot.planned_seqlen) >= self.config.scheduler.resize_seqlen_delta:
            return "seqlen"
        return "period"

    def _record_plan(
        self, trigger: str, size: int, l_curve: dict[int, float], batch: int, seqlen: float
    ) -> None:
        v_curve: dict[int, float | None] = {}
        for s, l in l_curve.items():
            try:
                t = self.cost.estimate(s)
                v_curve[s] = (l + (1.0 if self.config.include_bonus_in_speed else 0.0)) / t if t > 0 else None
            except InsufficientDataError:
                v_curve[s] = None
        self.plan_events.append(PlanEvent(self._iteration, trigger, size, dict(l_curve), v_curve))
        self._planned_batch = batch
        self._planned_seqlen = seqlen
        self._planned_iteration = self._iteration

    # -- helpers ----------------------------------------------------------------

    def _mask_for(self, tree) -> np.ndarray:
        key = tuple(int(p) for p in tree.parents)
        mask = self._mask_cache.get(key)
        if mask is None:
            mask = make_mask(tree)
            self._mask_cache[key] = mask
        return mask

    def _absorb(self, seq: SequenceRun, newly: list[int], max_tokens: int) -> int:
        kept = 0
        for tok in newly:
            seq.generated.append(int(tok))
            kept += 1
            if self.config.eos_token is not None and tok == self.config.eos_token:
                seq.finished = True
                break
            if len(seq.generated) >= max_tokens:
                seq.finished = True
                break
        return kept

    def _clock(self, wall_start: float, rows: float, batch: int, seqlen: float) -> float:
        if self.latency is None:
            return max(time.perf_counter() - wall_start, 1e-9)
        return self.latency.iteration_time(rows, batch=batch, seqlen=seqlen)

    def _summarize(self, metrics: list[IterationMetrics]) -> RunSummary:
        total_tokens = sum(m.tokens_committed for m in metrics)
        total_time = sum(m.iteration_time for m in metrics)
        tree_rows = [m for m in metrics if m.tree_size > 0]
        return RunSummary(
            mode=self.config.mode,
            iterations=len(metrics),
            total_tokens=total_tokens,
            total_time=total_time,
            tokens_per_sec=total_tokens / total_time if total_time > 0 else 0.0,
            mean_accepted=float(np.mean([m.mean_accepted for m in tree_rows])) if tree_rows else 0.0,
            mean_prune_rate=float(np.mean([m.prune_rate for m in tree_rows])) if tree_rows else 0.0,
            mean_tree_size=float(np.mean([m.tree_size for m in tree_rows])) if tree_rows else 0.0,
        )

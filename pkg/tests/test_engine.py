import numpy as np
import pytest

from treedecode.backends import (
    LatencyModel,
    SyntheticOracle,
    SyntheticOracleConfig,
    TinyTransformer,
    TinyTransformerConfig,
)
from treedecode.engine import MODES, DecodeEngine, EngineConfig
from treedecode.pruning import PruneConfig
from treedecode.scheduler import SchedulerConfig

from oracles import greedy_transcript

ORACLE_CFG = SyntheticOracleConfig(
    vocab=64,
    draft_heads=3,
    layers=6,
    rank_quality=((0.7, 0.1), (0.6, 0.1), (0.5, 0.1)),
    early_quality=0.9,
    seed=21,
)
SCHED = SchedulerConfig(
    resize_batch_delta=2, resize_seqlen_delta=64, replan_period=4, size_candidates=(2, 4)
)


def oracle():
    return SyntheticOracle(ORACLE_CFG)


def clock():
    return LatencyModel(c0_base=2.0, c1_base=0.05, noise=0.0, seed=0)


def engine_cfg(mode, **over):
    base = dict(
        mode=mode,
        draft_heads=3,
        draft_topk=3,
        prune=PruneConfig(layer=2, topk=10) if mode in ("prune_only", "propd_full") else None,
        scheduler=SCHED,
        acceptance_alpha=None,
    )
    base.update(over)
    return EngineConfig(**base)


def prompts(n=4, length=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, ORACLE_CFG.vocab, size=(n, length)).tolist()


class TestEngineConfig:
    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="unknown mode"):
            EngineConfig(mode="banana")

    def test_prune_modes_need_prune_config(self):
        for mode in ("prune_only", "propd_full"):
            with pytest.raises(ValueError, match="needs a prune config"):
                EngineConfig(mode=mode, prune=None)

    def test_capability_flags(self):
        flags = {
            "autoregressive": (False, False, False),
            "static_tree": (True, False, False),
            "prune_only": (True, True, False),
            "dynamic_only": (True, False, True),
            "propd_full": (True, True, True),
        }
        assert set(flags) == set(MODES)
        for mode, (tree, pr, dyn) in flags.items():
            cfg = engine_cfg(mode)
            assert (cfg.uses_tree, cfg.uses_prune, cfg.uses_dynamic) == (tree, pr, dyn)

    def test_positive_knobs(self):
        with pytest.raises(ValueError):
            EngineConfig(draft_heads=0)
        with pytest.raises(ValueError):
            EngineConfig(draft_topk=0)
        with pytest.raises(ValueError):
            EngineConfig(probe_rounds=-1)


class TestEngineConstruction:
    def test_head_count_must_match_backend(self):
        with pytest.raises(ValueError, match="head count"):
            DecodeEngine(oracle(), engine_cfg("static_tree", draft_heads=2), clock())

    def test_topk_must_fit_vocab(self):
        with pytest.raises(ValueError, match="vocabulary"):
            DecodeEngine(oracle(), engine_cfg("static_tree", draft_topk=64), clock())

    def test_prune_layer_must_sit_inside_backbone(self):
        cfg = engine_cfg("prune_only", prune=PruneConfig(layer=6, topk=10))
        with pytest.raises(ValueError, match="strictly inside"):
            DecodeEngine(oracle(), cfg, clock())

    def test_ar_mode_ignores_head_count(self):
        DecodeEngine(oracle(), engine_cfg("autoregressive", draft_heads=2), clock())


class TestLosslessness:
    def test_ar_mode_matches_plain_greedy_loop(self):
        ps = prompts(3)
        eng = DecodeEngine(oracle(), engine_cfg("autoregressive"), clock())
        out = eng.run(ps, max_tokens=16)
        for p, t in zip(ps, out.transcripts):
            assert t == greedy_transcript(oracle(), p, 16)

    @pytest.mark.parametrize("mode", ["static_tree", "prune_only", "dynamic_only", "propd_full"])
    def test_tree_modes_emit_the_greedy_stream(self, mode):
        ps = prompts(3)
        eng = DecodeEngine(oracle(), engine_cfg(mode), clock())
        out = eng.run(ps, max_tokens=16, batch_size=2)
        for p, t in zip(ps, out.transcripts):
            assert t == greedy_transcript(oracle(), p, 16)

    def test_tiny_transformer_tree_mode_matches_its_greedy_loop(self):
        tt_cfg = TinyTransformerConfig(
            layers=2, hidden=32, heads=2, vocab=64, draft_heads=2, max_positions=64, seed=9
        )
        cfg = EngineConfig(
            mode="propd_full",
            draft_heads=2,
            draft_topk=3,
            prune=PruneConfig(layer=1, topk=16),
            scheduler=SCHED,
            acceptance_alpha=None,
        )
        ps = prompts(2, seed=3)
        out = DecodeEngine(TinyTransformer(tt_cfg), cfg, clock()).run(ps, max_tokens=10)
        for p, t in zip(ps, out.transcripts):
            assert t == greedy_transcript(TinyTransformer(tt_cfg), p, 10)


class TestDeterminism:
    def test_same_seed_same_everything(self):
        ps = prompts(4)
        runs = []
        for _ in range(2):
            eng = DecodeEngine(oracle(), engine_cfg("propd_full"), clock())
            runs.append(eng.run(ps, max_tokens=20, batch_size=2))
        a, b = runs
        assert a.transcripts == b.transcripts
        assert [m.to_json() for m in a.metrics] == [m.to_json() for m in b.metrics]
        assert a.summary == b.summary
        assert a.plan_events == b.plan_events


class TestClipping:
    def test_transcripts_stop_exactly_at_max_tokens(self):
        eng = DecodeEngine(oracle(), engine_cfg("propd_full"), clock())
        out = eng.run(prompts(4), max_tokens=13)
        assert all(len(t) == 13 for t in out.transcripts)

    def test_eos_truncates_mid_tree(self):
        ps = prompts(2)
        plain = DecodeEngine(oracle(), engine_cfg("propd_full"), clock()).run(ps, max_tokens=24)
        eos = plain.transcripts[0][7]
        eng = DecodeEngine(oracle(), engine_cfg("propd_full", eos_token=eos), clock())
        out = eng.run(ps, max_tokens=24)
        for full, clipped in zip(plain.transcripts, out.transcripts):
            if eos in full:
                stop = full.index(eos)
                assert clipped == full[: stop + 1]
            else:
                assert clipped == full

    def test_tokens_committed_add_up(self):
        eng = DecodeEngine(oracle(), engine_cfg("propd_full"), clock())
        out = eng.run(prompts(4), max_tokens=15, batch_size=2)
        assert sum(m.tokens_committed for m in out.metrics) == sum(
            len(t) for t in out.transcripts
        )
        assert out.summary.total_tokens == 4 * 15

    def test_run_input_validation(self):
        eng = DecodeEngine(oracle(), engine_cfg("propd_full"), clock())
        with pytest.raises(ValueError, match="max_tokens"):
            eng.run(prompts(1), max_tokens=0)
        with pytest.raises(ValueError, match="non-empty"):
            eng.run([], max_tokens=4)
        with pytest.raises(ValueError, match="non-empty"):
            eng.run([[1, 2], []], max_tokens=4)


class TestPlanning:
    def test_probe_queue_runs_each_candidate_per_round(self):
        cfg = engine_cfg("dynamic_only", probe_rounds=2)
        eng = DecodeEngine(oracle(), cfg, clock())
        eng.run(prompts(4), max_tokens=20)
        probes = [e for e in eng.plan_events if e.trigger == "probe"]
        assert [e.chosen_size for e in probes] == [2, 4, 2, 4]
        assert [e.iteration for e in probes] == [1, 2, 3, 4]
        rest = [e for e in eng.plan_events if e.trigger != "probe"]
        assert rest and all(e.trigger in ("initial", "batch", "seqlen", "period") for e in rest)

    def test_periodic_replan_cadence(self):
        cfg = engine_cfg("dynamic_only", probe_rounds=0)
        eng = DecodeEngine(oracle(), cfg, clock())
        eng.run(prompts(4), max_tokens=24)
        assert eng.plan_events[0].trigger == "initial"
        period_events = [e for e in eng.plan_events if e.trigger == "period"]
        assert period_events
        gaps = np.diff([e.iteration for e in eng.plan_events])
        assert all(g == SCHED.replan_period for g in gaps)

    def test_batch_resize_reprobes_and_resets_cost(self):
        cfg = engine_cfg("propd_full", probe_rounds=1)
        eng = DecodeEngine(oracle(), cfg, clock())
        eng.run(prompts(4), max_tokens=12)
        first = sum(1 for e in eng.plan_events if e.trigger == "probe")
        assert first == 2
        eng.run(prompts(1, seed=5), max_tokens=12)  # batch 4 -> 1 crosses the delta
        again = [e for e in eng.plan_events if e.trigger == "probe"]
        assert len(again) == 4

    def test_static_tree_used_verbatim(self):
        cfg = engine_cfg("static_tree", static_tree=((1,), (1, 1)))
        eng = DecodeEngine(oracle(), cfg, clock())
        out = eng.run(prompts(2), max_tokens=10)
        assert all(m.tree_size == 2 for m in out.metrics)
        assert eng.plan_events == []

    def test_default_static_tree_is_the_full_grid(self):
        eng = DecodeEngine(oracle(), engine_cfg("static_tree"), clock())
        out = eng.run(prompts(2), max_tokens=8)
        assert all(m.tree_size == 9 for m in out.metrics)

    def test_bonus_flag_shifts_the_value_curve(self):
        events = {}
        for flag in (False, True):
            cfg = engine_cfg("dynamic_only", include_bonus_in_speed=flag, probe_rounds=1)
            eng = DecodeEngine(oracle(), cfg, clock())
            eng.run(prompts(4), max_tokens=20)
            events[flag] = next(e for e in eng.plan_events if e.trigger != "probe")
        plain, bonus = events[False], events[True]
        assert plain.iteration == bonus.iteration
        assert plain.l_curve == bonus.l_curve
        compared = 0
        for size, v_plain in plain.v_curve.items():
            v_bonus = bonus.v_curve[size]
            if v_plain is None or v_bonus is None:
                continue
            l = plain.l_curve[size]
            assert v_bonus / v_plain == pytest.approx((l + 1.0) / l, rel=1e-9)
            compared += 1
        assert compared > 0


class TestMetrics:
    def test_tree_metrics_are_sane(self):
        eng = DecodeEngine(oracle(), engine_cfg("propd_full"), clock())
        out = eng.run(prompts(4), max_tokens=16, batch_size=2)
        for m in out.metrics:
            assert m.tree_size > 0
            assert 0.0 <= m.prune_rate <= 1.0
            assert 0 < m.mean_survivors <= m.tree_size
            assert 0.0 <= m.mean_accepted <= ORACLE_CFG.draft_heads
            assert m.iteration_time > 0
        assert [m.iteration for m in out.metrics] == list(
            range(1, len(out.metrics) + 1)
        )
        s = out.summary
        assert s.mode == "propd_full"
        assert s.tokens_per_sec == pytest.approx(s.total_tokens / s.total_time)

    def test_wall_clock_fallback_produces_positive_times(self):
        eng = DecodeEngine(oracle(), engine_cfg("autoregressive"), latency_model=None)
        out = eng.run(prompts(1), max_tokens=5)
        assert all(m.iteration_time > 0 for m in out.metrics)

    def test_ar_metrics_have_no_tree_fields(self):
        eng = DecodeEngine(oracle(), engine_cfg("autoregressive"), clock())
        out = eng.run(prompts(2), max_tokens=6)
        assert all(m.tree_size == 0 for m in out.metrics)
        assert out.summary.mean_tree_size == 0.0
        assert len(out.metrics) == 6

"""Parallel decoding with dynamic token trees and mid-forward early pruning.

The engine drafts several future tokens per step with lightweight draft
heads, arranges the candidates into a prefix-merged token tree, verifies the
whole tree in one batched forward pass, and keeps only the tokens the model
itself would have produced one by one.  Tree shape is re-planned online from
tracked acceptance statistics and a fitted per-iteration cost model, and weak
branches are dropped halfway through the verify pass using an early
prediction head.
"""

from .acceptance import (
    AcceptanceStats,
    HeadPredictions,
    TreeSelection,
    grid_candidates,
    select_best_nodes,
)
from .backends import (
    DecodeState,
    LatencyModel,
    ModelBackend,
    SyntheticOracle,
    SyntheticOracleConfig,
    TinyTransformer,
    TinyTransformerConfig,
    TreeForward,
)
from .config import CONFIG_SCHEMA, ConfigError, load_config
from .cost_model import CostModel, InsufficientDataError
from .engine import (
    MODES,
    DecodeEngine,
    EngineConfig,
    IterationMetrics,
    PlanEvent,
    RunResult,
    RunSummary,
)
from .pruning import PruneConfig, PruneDecision, apply_decision, prune
from .scheduler import RuntimeSnapshot, SchedulerConfig, choose_size, should_replan
from .selftest import SuiteResult, run_all
from .token_tree import (
    ROOT,
    RankPath,
    TokenId,
    TokenTree,
    TreeNode,
    build_tree,
    complete_tree_paths,
    flatten_paths,
    format_mask,
    format_tree,
    make_mask,
    parse_tree,
    restrict,
    subsample_mask,
)
from .verification import VerifyResult, verify

__version__ = "0.1.0"

__all__ = [
    "AcceptanceStats",
    "CONFIG_SCHEMA",
    "ConfigError",
    "CostModel",
    "DecodeEngine",
    "DecodeState",
    "EngineConfig",
    "HeadPredictions",
    "InsufficientDataError",
    "IterationMetrics",
    "LatencyModel",
    "MODES",
    "ModelBackend",
    "PlanEvent",
    "PruneConfig",
    "PruneDecision",
    "ROOT",
    "RankPath",
    "RunResult",
    "RunSummary",
    "RuntimeSnapshot",
    "SchedulerConfig",
    "SuiteResult",
    "SyntheticOracle",
    "SyntheticOracleConfig",
    "TinyTransformer",
    "TinyTransformerConfig",
    "TokenId",
    "TokenTree",
    "TreeForward",
    "TreeNode",
    "TreeSelection",
    "VerifyResult",
    "apply_decision",
    "build_tree",
    "choose_size",
    "complete_tree_paths",
    "flatten_paths",
    "format_mask",
    "format_tree",
    "grid_candidates",
    "load_config",
    "make_mask",
    "parse_tree",
    "prune",
    "restrict",
    "run_all",
    "select_best_nodes",
    "should_replan",
    "subsample_mask",
    "verify",
    "__version__",
]

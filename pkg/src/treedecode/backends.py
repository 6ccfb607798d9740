"""Model backends: a tiny deterministic transformer, a synthetic oracle, and a
latency model for the simulated clock.

A backend owns per-sequence decode states.  ``prefill``/``commit`` are the
only mutations; ``draft``/``next_argmax``/``forward_tree`` read state.  The
tree forward scores every node against the committed cache plus its tree
ancestors and can hand early top-K successor lists to a prune callback midway
through the stack, finishing the remaining layers on the survivors only.
"""

from __future__ import annotations

import abc
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .acceptance import HeadPredictions
from .token_tree import TokenId, subsample_mask

PruneCallback = Callable[[list[list[int]]], Sequence[int]]

# ===========================================================================
# Interface
# ===========================================================================


@dataclass
class DecodeState:
    """Per-sequence committed context plus the last tree handed to commit."""

    committed: list[int] = field(default_factory=list)
    last_tree: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def length(self) -> int:
        return len(self.committed)


@dataclass(frozen=True)
class TreeForward:
    """Survivor indices (into the drafted tree), their argmax tokens, and
    their final logits (None for backends without real logits)."""

    survivors: tuple[int, ...]
    argmax: np.ndarray
    logits: np.ndarray | None


class ModelBackend(abc.ABC):
    @property
    @abc.abstractmethod
    def vocab_size(self) -> int: ...

    @property
    @abc.abstractmethod
    def num_layers(self) -> int: ...

    @property
    @abc.abstractmethod
    def draft_head_count(self) -> int: ...

    @abc.abstractmethod
    def prefill(self, prompt: Sequence[int]) -> DecodeState:
        """Ingest a non-empty prompt and return a fresh decode state."""

    @abc.abstractmethod
    def draft(self, state: DecodeState, k: int) -> HeadPredictions:
        """Top-k candidate tokens per draft head, from the last committed position."""

    @abc.abstractmethod
    def next_argmax(self, state: DecodeState) -> TokenId:
        """Greedy next token given the committed context."""

    @abc.abstractmethod
    def forward_tree(
        self,
        state: DecodeState,
        tokens: np.ndarray,
        positions: np.ndarray,
        mask: np.ndarray,
        *,
        prune_layer: int | None = None,
        early_topk: int = 0,
        prune_callback: PruneCallback | None = None,
    ) -> TreeForward:
        """Score all tree nodes in one masked pass; optionally prune midway."""

    @abc.abstractmethod
    def commit(self, state: DecodeState, accepted: Sequence[int], bonus: TokenId) -> None:
        """Append an accepted root chain (indices into the last verified tree)
        plus the bonus token to the committed context."""


def _validate_commit_path(mask: np.ndarray, accepted: Sequence[int]) -> None:
    # Each accepted node must see exactly the previously accepted nodes:
    # that is what makes the path a contiguous root chain of the tree.
    prev: set[int] = set()
    for idx in accepted:
        if not 0 <= idx < mask.shape[0]:
            raise ValueError(f"accepted index {idx} outside the verified tree")
        row = set(np.flatnonzero(mask[idx]).tolist())
        if row != prev | {idx}:
            raise ValueError("accepted path is not a contiguous root chain")
        prev.add(idx)


# ===========================================================================
# Tiny deterministic transformer
# ===========================================================================


@dataclass(frozen=True)
class TinyTransformerConfig:
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    vocab: int = 256
    draft_heads: int = 4
    max_positions: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ValueError("layers, hidden, and heads must be positive")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if self.vocab < 2 or self.draft_heads < 1 or self.max_positions < 2:
            raise ValueError("vocab, draft_heads, max_positions too small")


def _ln(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


@dataclass
class _TTState(DecodeState):
    k_cache: list[np.ndarray] = field(default_factory=list)
    v_cache: list[np.ndarray] = field(default_factory=list)
    last_hidden: np.ndarray | None = None
    last_logits: np.ndarray | None = None


class TinyTransformer(ModelBackend):
    """Seeded random-weight pre-LN transformer in float64.

    Learned positional offsets (a seeded position table added to token
    embeddings), a language-model head, an early head read after a chosen
    layer, and Medusa-style draft heads on the final hidden state.  Random
    weights decode arbitrary but fully deterministic token streams, which is
    exactly what the equivalence oracles need.
    """

    def __init__(self, config: TinyTransformerConfig = TinyTransformerConfig()) -> None:
        self.config = config
        rng = np.random.default_rng(config.seed)
        h, v = config.hidden, config.vocab
        scale = 1.0 / np.sqrt(h)
        self.emb = rng.normal(0.0, scale, size=(v, h))
        self.pos = rng.normal(0.0, scale, size=(config.max_positions, h))
        self.blocks = []
        for _ in range(config.layers):
            self.blocks.append(
                {
                    "wq": rng.normal(0.0, scale, size=(h, h)),
                    "wk": rng.normal(0.0, scale, size=(h, h)),
                    "wv": rng.normal(0.0, scale, size=(h, h)),
                    "wo": rng.normal(0.0, scale, size=(h, h)),
                    "w1": rng.normal(0.0, scale, size=(h, 4 * h)),
                    "w2": rng.normal(0.0, 0.5 / np.sqrt(h), size=(4 * h, h)),
                }
            )
        self.w_lm = rng.normal(0.0, scale, size=(h, v))
        self.w_early = rng.normal(0.0, scale, size=(h, v))
        self.w_draft = rng.normal(0.0, scale, size=(config.draft_heads, h, v))

    # -- interface properties ------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return self.config.vocab

    @property
    def num_layers(self) -> int:
        return self.config.layers

    @property
    def draft_head_count(self) -> int:
        return self.config.draft_heads

    # -- internals -----------------------------------------------------------

    def _block(
        self,
        x: np.ndarray,
        li: int,
        cache_k: np.ndarray,
        cache_v: np.ndarray,
        vis: np.ndarray,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One pre-LN block over new rows.  ``vis`` masks attention among the
        new rows; all cached rows are visible to every new row."""
        w = self.blocks[li]
        a = self.config.heads
        dh = self.config.hidden // a
        n = x.shape[0]
        h = _ln(x)
        q = h @ w["wq"]
        k_new = h @ w["wk"]
        v_new = h @ w["wv"]
        keys = np.concatenate([cache_k, k_new], axis=0)
        vals = np.concatenate([cache_v, v_new], axis=0)
        m = keys.shape[0]
        t = m - n
        qh = q.reshape(n, a, dh)
        kh = keys.reshape(m, a, dh)
        vh = vals.reshape(m, a, dh)
        scores = np.einsum("nad,mad->nam", qh, kh) / np.sqrt(dh)
        full_vis = np.concatenate([np.ones((n, t), dtype=bool), vis], axis=1)
        scores = np.where(full_vis[:, None, :], scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        ctx = np.einsum("nam,mad->nad", probs, vh).reshape(n, self.config.hidden)
        x = x + ctx @ w["wo"]
        h2 = _ln(x)
        x = x + _gelu(h2 @ w["w1"]) @ w["w2"]
        return x, k_new, v_new

    def _extend(self, state: _TTState, tokens: Sequence[int]) -> None:
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size == 0:
            raise ValueError("cannot extend with zero tokens")
        if np.any(toks < 0) or np.any(toks >= self.config.vocab):
            raise ValueError("token id outside the vocabulary")
        t0 = state.length
        n = toks.size
        if t0 + n > self.config.max_positions:
            raise ValueError("sequence exceeds max_positions")
        x = self.emb[toks] + self.pos[t0 : t0 + n]
        vis = np.tril(np.ones((n, n), dtype=bool))
        for li in range(self.config.layers):
            x, k_new, v_new = self._block(x, li, state.k_cache[li], state.v_cache[li], vis)
            state.k_cache[li] = np.concatenate([state.k_cache[li], k_new], axis=0)
            state.v_cache[li] = np.concatenate([state.v_cache[li], v_new], axis=0)
        xf = _ln(x)
        logits = xf @ self.w_lm
        state.committed.extend(int(t) for t in toks)
        state.last_hidden = xf[-1]
        state.last_logits = logits[-1]

    # -- interface -----------------------------------------------------------

    def prefill(self, prompt: Sequence[int]) -> _TTState:
        if len(prompt) == 0:
            raise ValueError("prompt must be non-empty")
        h = self.config.hidden
        state = _TTState(
            k_cache=[np.zeros((0, h)) for _ in range(self.config.layers)],
            v_cache=[np.zeros((0, h)) for _ in range(self.config.layers)],
        )
        self._extend(state, prompt)
        return state

    def draft(self, state: _TTState, k: int) -> HeadPredictions:
        if not 1 <= k <= self.config.vocab:
            raise ValueError("k outside 1..vocab")
        hidden = state.last_hidden
        tokens = np.empty((self.config.draft_heads, k), dtype=np.int64)
        scores = np.empty((self.config.draft_heads, k))
        for d in range(self.config.draft_heads):
            logits = hidden @ self.w_draft[d]
            order = np.argsort(-logits, kind="stable")[:k]
            tokens[d] = order
            scores[d] = logits[order]
        return HeadPredictions(tokens, scores)

    def next_argmax(self, state: _TTState) -> TokenId:
        return int(np.argmax(state.last_logits))

    def forward_tree(
        self,
        state: _TTState,
        tokens: np.ndarray,
        positions: np.ndarray,
        mask: np.ndarray,
        *,
        prune_layer: int | None = None,
        early_topk: int = 0,
        prune_callback: PruneCallback | None = None,
    ) -> TreeForward:
        toks = np.asarray(tokens, dtype=np.int64)
        pos = np.asarray(positions, dtype=np.int64)
        n = toks.size
        if mask.shape != (n, n) or pos.shape != (n,):
            raise ValueError("tokens, positions, and mask sizes disagree")
        if np.any(toks < 0) or np.any(toks >= self.config.vocab):
            raise ValueError("token id outside the vocabulary")
        if np.any(pos < state.length) or np.any(pos >= self.config.max_positions):
            raise ValueError("tree positions must follow the committed context")
        if prune_callback is not None:
            if prune_layer is None or not 1 <= prune_layer < self.config.layers:
                raise ValueError("prune layer must lie strictly inside the stack")
            if early_topk < 1:
                raise ValueError("early_topk must be positive when pruning")
        x = self.emb[toks] + self.pos[pos]
        vis = mask.astype(bool)
        keep = np.arange(n)
        for li in range(self.config.layers):
            x, _, _ = self._block(x, li, state.k_cache[li], state.v_cache[li], vis)
            if prune_callback is not None and prune_layer == li + 1:
                early_logits = x @ self.w_early
                kk = min(early_topk, self.config.vocab)
                order = np.argsort(-early_logits, axis=1, kind="stable")[:, :kk]
                survivors = [int(s) for s in prune_callback([row.tolist() for row in order])]
                vis = subsample_mask(vis, survivors)
                x = x[survivors]
                keep = keep[survivors]
        xf = _ln(x)
        logits = xf @ self.w_lm
        state.last_tree = (toks[keep].copy(), vis.copy())
        return TreeForward(
            tuple(int(i) for i in keep),
            np.argmax(logits, axis=1).astype(np.int64),
            logits,
        )

    def commit(self, state: _TTState, accepted: Sequence[int], bonus: TokenId) -> None:
        accepted = [int(a) for a in accepted]
        if accepted:
            if state.last_tree is None:
                raise ValueError("commit with accepted nodes needs a preceding tree forward")
            tree_tokens, tree_mask = state.last_tree
            _validate_commit_path(tree_mask, accepted)
            toks = [int(tree_tokens[i]) for i in accepted] + [int(bonus)]
        else:
            toks = [int(bonus)]
        self._extend(state, toks)
        state.last_tree = None


# ===========================================================================
# Synthetic oracle
# ===========================================================================

_TAG_GREEDY = 1
_TAG_DRAFT = 2
_TAG_EARLY = 3


@dataclass(frozen=True)
class SyntheticOracleConfig:
    """Ground-truth next-token function plus containment probabilities.

    ``rank_quality[d-1][r-1]`` is the probability that head d drafts the true
    token at rank r (the remainder of each row is the miss probability);
    ``early_quality`` is the probability that a node's early top-K list
    contains its true successor, placed at ``early_true_rank``.
    """

    vocab: int = 256
    draft_heads: int = 4
    layers: int = 8
    rank_quality: tuple[tuple[float, ...], ...] = (
        (0.60, 0.12, 0.05),
        (0.55, 0.12, 0.05),
        (0.50, 0.12, 0.05),
        (0.45, 0.12, 0.05),
    )
    early_quality: float = 0.9
    early_true_rank: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab < 8 or self.layers < 2:
            raise ValueError("vocab must be >= 8 and layers >= 2")
        if len(self.rank_quality) != self.draft_heads:
            raise ValueError("rank_quality needs one row per draft head")
        for row in self.rank_quality:
            if any(q < 0.0 for q in row) or sum(row) > 1.0 + 1e-9:
                raise ValueError("rank probabilities must be non-negative and sum to <= 1")
        if not 0.0 <= self.early_quality <= 1.0:
            raise ValueError("early_quality must lie in [0, 1]")
        if self.early_true_rank < 1:
            raise ValueError("early_true_rank is 1-based")


class SyntheticOracle(ModelBackend):
    """Hash-defined greedy model with tunable draft/early-head quality.

    The true next token is a keyed blake2b hash of the context, so any two
    computations of the same sequence agree exactly.  All randomness (draft
    rank draws, filler tokens, early containment) is derived per (context,
    node/head) from the hash, never from a shared mutable stream: drafts are
    identical across engine modes and tree sizes, and early lists are
    prefix-stable across top-K values.
    """

    def __init__(self, config: SyntheticOracleConfig = SyntheticOracleConfig()) -> None:
        self.config = config
        self._key = struct.pack("<q", config.seed)
        self._q = [np.asarray(row, dtype=np.float64) for row in config.rank_quality]

    @property
    def vocab_size(self) -> int:
        return self.config.vocab

    @property
    def num_layers(self) -> int:
        return self.config.layers

    @property
    def draft_head_count(self) -> int:
        return self.config.draft_heads

    # -- hash plumbing -------------------------------------------------------

    def _digest(self, context: Sequence[int], tag: int, extra: int = 0) -> bytes:
        h = hashlib.blake2b(digest_size=16, key=self._key)
        h.update(np.asarray(list(context), dtype=np.int64).tobytes())
        h.update(struct.pack("<qq", tag, extra))
        return h.digest()

    def greedy_token(self, context: Sequence[int]) -> TokenId:
        """The model's (deterministic) greedy continuation of ``context``."""
        raw = self._digest(context, _TAG_GREEDY)
        return int(int.from_bytes(raw[:8], "little") % self.config.vocab)

    def _rng(self, context: Sequence[int], tag: int, extra: int = 0) -> np.random.Generator:
        words = np.frombuffer(self._digest(context, tag, extra), dtype=np.uint32)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))

    def _candidate_list(
        self,
        rng: np.random.Generator,
        size: int,
        true_token: int,
        true_slot: int | None,
    ) -> list[int]:
        """``size`` distinct tokens, the true one at ``true_slot`` when given.

        Fillers never collide with the true token, so absence is exact; they
        are drawn as a stream, so shorter lists are prefixes of longer ones.
        """
        out: list[int] = []
        used = {true_token}
        while len(out) < size - (1 if true_slot is not None else 0):
            cand = int(rng.integers(self.config.vocab))
            if cand in used:
                continue
            used.add(cand)
            out.append(cand)
        if true_slot is not None:
            out.insert(true_slot, true_token)
        return out[:size]

    # -- interface -----------------------------------------------------------

    def prefill(self, prompt: Sequence[int]) -> DecodeState:
        if len(prompt) == 0:
            raise ValueError("prompt must be non-empty")
        toks = [int(t) for t in prompt]
        if any(not 0 <= t < self.config.vocab for t in toks):
            raise ValueError("token id outside the vocabulary")
        return DecodeState(committed=toks)

    def next_argmax(self, state: DecodeState) -> TokenId:
        return self.greedy_token(state.committed)

    def draft(self, state: DecodeState, k: int) -> HeadPredictions:
        if not 1 <= k < self.config.vocab:
            raise ValueError("k outside 1..vocab-1")
        ctx = list(state.committed)
        chain: list[int] = []
        walk = list(ctx)
        for _ in range(self.config.draft_heads):
            nxt = self.greedy_token(walk)
            chain.append(nxt)
            walk.append(nxt)
        tokens = np.empty((self.config.draft_heads, k), dtype=np.int64)
        for d in range(self.config.draft_heads):
            rng = self._rng(ctx, _TAG_DRAFT, d)
            u = rng.random()
            cum = np.cumsum(self._q[d])
            hit = int(np.searchsorted(cum, u, side="right"))
            rank = hit + 1 if hit < cum.size else None
            slot = rank - 1 if rank is not None and rank <= k else None
            tokens[d] = self._candidate_list(rng, k, chain[d], slot)
        scores = np.tile(2.0 ** -np.arange(1, k + 1, dtype=np.float64), (self.config.draft_heads, 1))
        return HeadPredictions(tokens, scores)

    def forward_tree(
        self,
        state: DecodeState,
        tokens: np.ndarray,
        positions: np.ndarray,
        mask: np.ndarray,
        *,
        prune_layer: int | None = None,
        early_topk: int = 0,
        prune_callback: PruneCallback | None = None,
    ) -> TreeForward:
        toks = np.asarray(tokens, dtype=np.int64)
        n = toks.size
        if mask.shape != (n, n):
            raise ValueError("mask does not match the flattened tree")
        ctx = list(state.committed)
        if np.asarray(positions).shape != (n,) or (n and np.asarray(positions).min() < len(ctx)):
            raise ValueError("tree positions must follow the committed context")
        if prune_callback is not None and (
            prune_layer is None or not 1 <= prune_layer < self.config.layers
        ):
            raise ValueError("prune layer must lie strictly inside the stack")
        paths = [ctx + [int(toks[j]) for j in np.flatnonzero(mask[i])] for i in range(n)]
        succ = np.array([self.greedy_token(p) for p in paths], dtype=np.int64)
        vis = mask.astype(bool)
        keep = np.arange(n)
        if prune_callback is not None:
            kk = min(early_topk, self.config.vocab - 1)
            if kk < 1:
                raise ValueError("early_topk must be positive when pruning")
            lists = []
            for i in range(n):
                rng = self._rng(paths[i], _TAG_EARLY)
                contained = bool(rng.random() < self.config.early_quality)
                slot = (
                    self.config.early_true_rank - 1
                    if contained and self.config.early_true_rank <= kk
                    else None
                )
                lists.append(self._candidate_list(rng, kk, int(succ[i]), slot))
            survivors = [int(s) for s in prune_callback(lists)]
            vis = subsample_mask(vis, survivors)
            keep = keep[survivors]
        state.last_tree = (toks[keep].copy(), vis.copy())
        return TreeForward(tuple(int(i) for i in keep), succ[keep], None)

    def commit(self, state: DecodeState, accepted: Sequence[int], bonus: TokenId) -> None:
        accepted = [int(a) for a in accepted]
        if not 0 <= int(bonus) < self.config.vocab:
            raise ValueError("bonus token outside the vocabulary")
        if accepted:
            if state.last_tree is None:
                raise ValueError("commit with accepted nodes needs a preceding tree forward")
            tree_tokens, tree_mask = state.last_tree
            _validate_commit_path(tree_mask, accepted)
            toks = [int(tree_tokens[i]) for i in accepted] + [int(bonus)]
        else:
            toks = [int(bonus)]
        state.committed.extend(toks)
        state.last_tree = None


# ===========================================================================
# Latency model (simulated clock)
# ===========================================================================


class LatencyModel:
    """Iteration time affine in compute rows: c0(batch, seqlen) + c1(batch) * rows.

    With zero noise the times are exactly affine in ``rows`` at fixed batch and
    sequence length, which is what the regression-recovery oracle exploits.
    """

    def __init__(
        self,
        c0_base: float = 1.0,
        c0_batch: float = 0.0,
        c0_seqlen: float = 0.0,
        c1_base: float = 0.05,
        c1_batch: float = 0.0,
        noise: float = 0.0,
        seed: int = 0,
    ) -> None:
        if noise < 0.0:
            raise ValueError("noise amplitude must be non-negative")
        self.c0_base = float(c0_base)
        self.c0_batch = float(c0_batch)
        self.c0_seqlen = float(c0_seqlen)
        self.c1_base = float(c1_base)
        self.c1_batch = float(c1_batch)
        self.noise = float(noise)
        self._rng = np.random.default_rng(seed)

    def iteration_time(self, rows: float, batch: int = 1, seqlen: float = 0.0) -> float:
        c0 = self.c0_base + self.c0_batch * batch + self.c0_seqlen * seqlen
        c1 = self.c1_base + self.c1_batch * batch
        t = c0 + c1 * float(rows)
        if self.noise > 0.0:
            t += float(self._rng.uniform(-self.noise, self.noise))
        if t <= 0.0:
            raise ValueError("latency coefficients produced a non-positive time")
        return float(t)

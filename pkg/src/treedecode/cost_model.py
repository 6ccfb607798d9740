"""Iteration-time estimation: per-size moving averages + staleness-weighted fit.

Each observed tree size keeps an exponential moving average of its iteration
time; a weighted least-squares line through the per-size averages (weights
decaying with observation staleness) yields the time estimate for sizes never
or rarely run.
"""

from __future__ import annotations

import math

import numpy as np


class InsufficientDataError(RuntimeError):
    """Fewer than two distinct sizes carry usable observations."""


class CostModel:
    def __init__(
        self,
        sizes,
        alpha: float = 0.2,
        staleness_decay: float = 0.01,
        prewarm_beta: tuple[float, float] | None = None,
    ) -> None:
        uniq = sorted({int(s) for s in sizes})
        if not uniq or uniq[0] < 1:
            raise ValueError("sizes must be positive integers")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if staleness_decay < 0.0:
            raise ValueError("staleness_decay must be non-negative")
        self.sizes = uniq
        self.alpha = alpha
        self.staleness_decay = staleness_decay
        self._t_perf: dict[int, float] = {}
        self._last_update: dict[int, int] = {}
        self._beta: tuple[float, float] | None = (
            (float(prewarm_beta[0]), float(prewarm_beta[1])) if prewarm_beta is not None else None
        )

    @property
    def beta(self) -> tuple[float, float] | None:
        """Most recent usable line (last successful fit, else the pre-warm one)."""
        return self._beta

    def observe(self, size: int, t: float, now: int) -> None:
        """Fold one measured iteration time into the size's moving average.

        ``now`` is the engine's iteration counter, the time base for
        staleness.  The first observation of a size seeds the average
        directly.
        """
        if size not in self._known:
            raise ValueError(f"size {size} is not a tracked candidate")
        if not t > 0.0:
            raise ValueError("iteration time must be positive")
        prev = self._t_perf.get(size)
        self._t_perf[size] = float(t) if prev is None else (1.0 - self.alpha) * prev + self.alpha * float(t)
        self._last_update[size] = int(now)

    @property
    def _known(self) -> set[int]:
        return set(self.sizes)

    def weights(self, now: int) -> np.ndarray:
        """Staleness weights aligned with ``self.sizes``; never-observed sizes get 0."""
        w = np.zeros(len(self.sizes))
        for i, size in enumerate(self.sizes):
            last = self._last_update.get(size)
            if last is not None:
                w[i] = math.exp(-self.staleness_decay * (int(now) - last))
        return w

    def fit(self, now: int) -> tuple[float, float]:
        """Weighted least squares of the per-size averages against size.

        Returns (intercept, slope) and stores it as the current line.  Raises
        InsufficientDataError when fewer than two distinct sizes are usable;
        the previous line (or pre-warm) keeps serving estimates in that case.
        """
        w = self.weights(now)
        active = w > 0.0
        xs = np.array(self.sizes, dtype=np.float64)[active]
        if np.unique(xs).size < 2:
            raise InsufficientDataError("need observations at two distinct sizes to fit a line")
        ys = np.array([self._t_perf[s] for s, a in zip(self.sizes, active) if a])
        ww = w[active]
        sw = ww.sum()
        sx = float(ww @ xs)
        sy = float(ww @ ys)
        sxx = float(ww @ (xs * xs))
        sxy = float(ww @ (xs * ys))
        denom = sw * sxx - sx * sx
        if denom <= 0.0:
            raise InsufficientDataError("degenerate design: distinct sizes collapsed")
        slope = (sw * sxy - sx * sy) / denom
        intercept = (sy - slope * sx) / sw
        self._beta = (intercept, slope)
        return self._beta

    def estimate(self, size: int) -> float:
        """Estimated iteration time for ``size`` from the current line."""
        if self._beta is None:
            raise InsufficientDataError("no fit has succeeded and no pre-warm line is set")
        b0, b1 = self._beta
        return b0 + b1 * float(size)

    def reset(self) -> None:
        """Drop all per-size averages (e.g. after a batch-size change).

        The last fitted line is kept as the estimate fallback until enough
        fresh observations support a new fit.
        """
        self._t_perf.clear()
        self._last_update.clear()

    def diagnostics(self, now: int) -> list[dict]:
        """Per-size view of the regression inputs, for inspection dumps."""
        w = self.weights(now)
        rows = []
        for i, size in enumerate(self.sizes):
            last = self._last_update.get(size)
            rows.append(
                {
                    "size": size,
                    "t_perf": self._t_perf.get(size),
                    "staleness": None if last is None else int(now) - last,
                    "weight": float(w[i]),
                }
            )
        return rows

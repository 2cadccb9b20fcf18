"""Episode traces: the unit the gradient estimator consumes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..optiongraph import TraversalTrace


@dataclass
class EpisodeStep:
    """One step of one agent: baseline features, the fresh decisions made
    this step, and the immediate reward received for it."""

    features: np.ndarray | None     # (ego speed/10, dist-to-merge/100) or None
    traversal: TraversalTrace
    reward: float


@dataclass
class EpisodeTrace:
    agent_id: int
    gamma: float
    steps: list = field(default_factory=list)
    outcome: str = ""

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    @property
    def total_return(self) -> float:
        """Discounted return from step 0."""
        total, g = 0.0, 1.0
        for s in self.steps:
            total += g * s.reward
            g *= self.gamma
        return total

    def _suffix_returns(self) -> np.ndarray:
        """D[t] = sum_{k>=t} gamma^(k-t) r_k, one entry past the end."""
        cached = getattr(self, "_suffix", None)
        if cached is not None and len(cached) == len(self.steps) + 1:
            return cached
        d = np.zeros(len(self.steps) + 1)
        for t in range(len(self.steps) - 1, -1, -1):
            d[t] = self.steps[t].reward + self.gamma * d[t + 1]
        self._suffix = d
        return d

    def credited_return(self, t: int, window: int | None) -> float:
        """Reward credited to a decision at step t: discounted reward-to-go,
        truncated after ``window`` steps (None = to episode end)."""
        d = self._suffix_returns()
        t = min(t, len(self.steps))
        if window is None:
            return float(d[t])
        end = min(t + window, len(self.steps))
        return float(d[t] - self.gamma ** (end - t) * d[end])

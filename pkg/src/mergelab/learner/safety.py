"""Safety-variance diagnostics: why rare catastrophic penalties blow up
policy-gradient variance, made measurable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def safety_bound(p: float, r: float) -> float:
    """Lower bound p*r^2 - (p*r + (1-p))^2 on Var[R] when an event of
    probability p costs -r and everything else stays within [-1, 1]."""
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    if r <= 0:
        raise ValueError("r must be > 0")
    return p * r ** 2 - (p * r + (1 - p)) ** 2


def two_point_variance(p: float, r: float, c: float = 1.0) -> float:
    """Exact variance of the two-point return: -r with probability p,
    c in [-1, 1] otherwise."""
    if not -1 <= c <= 1:
        raise ValueError("the non-accident return must lie in [-1, 1]")
    mean = -p * r + (1 - p) * c
    second = p * r ** 2 + (1 - p) * c ** 2
    return second - mean ** 2


@dataclass
class SafetyDiagnostics:
    accident_probability: float
    accident_penalty: float
    variance_lower_bound: float
    empirical_return_variance: float
    empirical_grad_variance_by_set: dict


def compute_safety_diagnostics(traces, accident_penalty: float,
                               grad_variance_by_set: dict | None = None) -> SafetyDiagnostics:
    """Estimate the accident rate and return variance from rollout traces
    and attach the corresponding variance lower bound."""
    outcomes = [trace.outcome for trace in traces]
    returns = np.array([trace.total_return for trace in traces])
    p_hat = sum(1 for o in outcomes if o == "accident") / max(1, len(outcomes))
    bound = (safety_bound(p_hat, accident_penalty)
             if 0 < p_hat < 1 else 0.0)
    return SafetyDiagnostics(
        accident_probability=p_hat,
        accident_penalty=accident_penalty,
        variance_lower_bound=bound,
        empirical_return_variance=float(returns.var()) if len(returns) else 0.0,
        empirical_grad_variance_by_set=dict(grad_variance_by_set or {}),
    )

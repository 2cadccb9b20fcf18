"""The policy-gradient estimator over recorded traces.

For every decision the estimator weights the decision's score-function
gradient by (credited return - baseline): the credited return is the
discounted reward-to-go truncated to the decision's credit window, and
the baseline never looks at the decision's action or anything after it.
No Markov assumption enters anywhere; the enumeration tests check the
estimator's expectation against finite differences of the true expected
return on history-dependent environments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import net
from .baselines import BaselineState


@dataclass
class GradientEstimate:
    grads: dict            # parameter set -> mean gradient vector
    variance_by_set: dict  # parameter set -> mean per-coordinate trace variance
    n_traces: int


def estimate_gradient_moments(traces, params: dict, baseline: BaselineState):
    """Raw moment sums of the per-trace estimator contributions:
    (sum, sum of squares, count) per parameter set.  Kept separate from
    estimate_gradient so parallel workers can reduce across processes."""
    if not traces:
        raise ValueError("no traces to estimate from")
    sums = {name: np.zeros(p.n_params) for name, p in params.items()}
    sq_sums = {name: np.zeros(p.n_params) for name, p in params.items()}
    temp = {name: np.zeros(p.n_params) for name, p in params.items()}

    for trace in traces:
        if not np.isfinite(trace.rewards).all():
            raise ValueError(f"trace for agent {trace.agent_id} has non-finite rewards")
        for vec in temp.values():
            vec[:] = 0.0
        for t, step in enumerate(trace.steps):
            for rec in step.traversal.records:
                credited = trace.credited_return(t, rec.window)
                b = baseline.value(rec.param_set, t, step.features)
                net.logprob_grad_into(params[rec.param_set], rec.tape,
                                      rec.choice_index, credited - b,
                                      temp[rec.param_set])
        for name, vec in temp.items():
            sums[name] += vec
            sq_sums[name] += vec ** 2
    return sums, sq_sums, len(traces)


def estimate_gradient(traces, params: dict, baseline: BaselineState) -> GradientEstimate:
    """Mean over traces of sum_decisions (credited - baseline) * grad log pi.

    Also reports the across-trace per-coordinate variance of each
    parameter set's contribution, for the training diagnostics.
    """
    sums, sq_sums, n = estimate_gradient_moments(traces, params, baseline)
    grads, variance = {}, {}
    for name in params:
        mean = sums[name] / n
        grads[name] = mean
        variance[name] = float(np.mean(np.maximum(sq_sums[name] / n - mean ** 2, 0.0)))
        if not np.isfinite(grads[name]).all():
            raise ValueError(f"non-finite gradient for parameter set {name}")
    return GradientEstimate(grads=grads, variance_by_set=variance, n_traces=n)


def update_online_baseline(state: BaselineState, trace) -> BaselineState:
    """Fold one trace's (features, credited return) pairs into the online
    regressor.  Call after the batch gradient so baselines never depend
    on the actions of the traces they are subtracted from."""
    for t, step in enumerate(trace.steps):
        for rec in step.traversal.records:
            state.observe(rec.param_set, t, step.features,
                          trace.credited_return(t, rec.window))
    return state

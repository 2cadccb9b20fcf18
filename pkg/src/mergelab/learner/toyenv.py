"""Fully enumerable, deliberately history-dependent test environment.

State transitions are drawn independently for every full history prefix,
so P[s_t | history] genuinely depends on more than (s_{t-1}, a_{t-1});
rewards are tabular over complete trajectories.  The whole trajectory
space stays small enough to enumerate, which makes exact expectations of
any estimator computable and turns the gradient identities into testable
equalities.

The policy is one net-module network over a one-hot state encoding, so
pi(a_t | s_t) depends on the current state only, matching the estimator's
architectural assumption while the environment stays non-Markovian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import net
from ..optiongraph import Decision, TraversalTrace
from .traces import EpisodeStep, EpisodeTrace

POLICY_SET = "policy"


@dataclass(frozen=True)
class ToyEnv:
    """Finite non-Markovian environment.

    transitions maps a history prefix (tuple of (state, action) pairs) to
    (support states, probabilities) for the next state; the empty prefix
    gives the initial-state distribution.  rewards maps complete
    trajectories to R(trajectory).
    """

    n_states: int
    n_actions: int
    horizon: int
    transitions: dict
    rewards: dict

    @classmethod
    def random(cls, seed: int, n_states: int = 3, n_actions: int = 2,
               horizon: int = 3, support: int = 2) -> "ToyEnv":
        """Seeded random instance; every reachable prefix gets its own
        freshly drawn next-state distribution."""
        rng = np.random.default_rng(np.random.SeedSequence([23, seed]))
        transitions, rewards = {}, {}

        def draw_support(k):
            states = rng.choice(n_states, size=min(k, n_states), replace=False)
            probs = rng.uniform(0.2, 1.0, size=len(states))
            return tuple(int(s) for s in states), probs / probs.sum()

        def build(prefix):
            if len(prefix) == horizon:
                rewards[prefix] = float(rng.uniform(-1.0, 1.0))
                return
            states, probs = draw_support(support if prefix else n_states)
            transitions[prefix] = (states, probs)
            for s in states:
                for a in range(n_actions):
                    build(prefix + ((s, a),))

        build(())
        return cls(n_states=n_states, n_actions=n_actions, horizon=horizon,
                   transitions=transitions, rewards=rewards)

    def init_policy(self, seed: int, hidden: int = 4) -> net.NetParams:
        rng = np.random.default_rng(np.random.SeedSequence([29, seed]))
        return net.init_params(rng, self.n_states, self.n_actions, hidden=hidden)

    def policy_table(self, params: net.NetParams):
        """(probs[s], tape[s]) for each state; one forward per state."""
        probs, tapes = [], []
        for s in range(self.n_states):
            x = np.zeros(self.n_states)
            x[s] = 1.0
            p, tape = net.forward(params, x)
            probs.append(p)
            tapes.append(tape)
        return probs, tapes

    def grad_table(self, params: net.NetParams):
        """Exact grad(log pi(a|s)) for every (state, action) pair."""
        probs, tapes = self.policy_table(params)
        return [[net.logprob_grad(params, tapes[s], a) for a in range(self.n_actions)]
                for s in range(self.n_states)], probs

    # -- enumeration ------------------------------------------------------

    def enumerate_trajectories(self, params: net.NetParams):
        """All (trajectory, probability, reward) triples with P > 0."""
        probs, _ = self.policy_table(params)
        out = []

        def walk(prefix, p):
            if len(prefix) == self.horizon:
                out.append((prefix, p, self.rewards[prefix]))
                return
            states, sprobs = self.transitions[prefix]
            for s, sp in zip(states, sprobs):
                for a in range(self.n_actions):
                    walk(prefix + ((s, a),), p * sp * probs[s][a])

        walk((), 1.0)
        return out

    def expected_return(self, params: net.NetParams) -> float:
        return sum(p * r for _, p, r in self.enumerate_trajectories(params))

    def expected_pg(self, params: net.NetParams) -> np.ndarray:
        """Exact E[R(traj) * sum_t grad log pi(a_t|s_t)] by enumeration."""
        grads, _ = self.grad_table(params)
        total = np.zeros(params.n_params)
        for traj, p, r in self.enumerate_trajectories(params):
            g = np.zeros(params.n_params)
            for s, a in traj:
                g += grads[s][a]
            total += p * r * g
        return total

    def fd_gradient(self, params: net.NetParams, step: float = 1e-5) -> np.ndarray:
        """Central finite differences of the enumerated expected return."""
        flat = net.flatten(params)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            hi = flat.copy()
            hi[i] += step
            lo = flat.copy()
            lo[i] -= step
            f_hi = self.expected_return(net.unflatten(params, hi))
            f_lo = self.expected_return(net.unflatten(params, lo))
            grad[i] = (f_hi - f_lo) / (2 * step)
        return grad

    # -- value analogues --------------------------------------------------

    def q_value(self, params: net.NetParams, prefix: tuple) -> float:
        """Expected R over completions of the action-inclusive prefix."""
        if len(prefix) == self.horizon:
            return self.rewards[prefix]
        probs, _ = self.policy_table(params)
        return self._q(prefix, probs)

    def _q(self, prefix, probs):
        if len(prefix) == self.horizon:
            return self.rewards[prefix]
        states, sprobs = self.transitions[prefix]
        total = 0.0
        for s, sp in zip(states, sprobs):
            for a in range(self.n_actions):
                total += sp * probs[s][a] * self._q(prefix + ((s, a),), probs)
        return total

    def v_value(self, params: net.NetParams, prefix: tuple, state: int) -> float:
        """sum_a pi(a|s_t) Q(prefix + (s_t, a))."""
        probs, _ = self.policy_table(params)
        return sum(probs[state][a] * self._q(prefix + ((state, a),), probs)
                   for a in range(self.n_actions))

    def advantage(self, params: net.NetParams, prefix: tuple) -> float:
        """Q of the full prefix minus V of its last state."""
        if not prefix:
            raise ValueError("advantage needs at least one (state, action) pair")
        return (self.q_value(params, prefix)
                - self.v_value(params, prefix[:-1], prefix[-1][0]))

    # -- estimator expectations -------------------------------------------

    def expected_weighted_score(self, params: net.NetParams, weight_fn) -> np.ndarray:
        """Exact E[sum_t w(t, traj) grad log pi(a_t|s_t)] for any per-step
        weight function of the realized trajectory."""
        grads, _ = self.grad_table(params)
        total = np.zeros(params.n_params)
        for traj, p, _ in self.enumerate_trajectories(params):
            g = np.zeros(params.n_params)
            for t, (s, a) in enumerate(traj):
                g += weight_fn(t, traj) * grads[s][a]
            total += p * g
        return total

    def q_estimator_expectation(self, params: net.NetParams) -> np.ndarray:
        """Exact expectation of the estimator with R replaced by the exact
        Q of each realized prefix."""
        probs, _ = self.policy_table(params)
        return self.expected_weighted_score(
            params, lambda t, traj: self._q(traj[:t + 1], probs))

    def baseline_zero_check(self, params: net.NetParams, b) -> float:
        """Max-abs component of E[sum_t b(t, traj) grad log pi(a_t|s_t)].

        The expectation is exactly zero whenever b(t, .) depends only on
        the history before t, the state at t, and the parameters; an
        action-dependent b breaks it (and the tests demonstrate that).
        """
        return float(np.abs(self.expected_weighted_score(params, b)).max())

    # -- sampling ----------------------------------------------------------

    def sample_trajectories(self, params: net.NetParams, rng: np.random.Generator,
                            n: int):
        """n sampled trajectories with rewards, as plain tuples."""
        probs, _ = self.policy_table(params)
        cums = [np.cumsum(p) for p in probs]
        out = []
        for _ in range(n):
            prefix = ()
            for _t in range(self.horizon):
                states, sprobs = self.transitions[prefix]
                s = states[int(np.searchsorted(np.cumsum(sprobs), rng.random(), side="right"))]
                a = int(np.searchsorted(cums[s], rng.random(), side="right"))
                a = min(a, self.n_actions - 1)
                prefix = prefix + ((s, a),)
            out.append((prefix, self.rewards[prefix]))
        return out

    def to_episode_trace(self, params: net.NetParams, traj: tuple, reward: float) -> EpisodeTrace:
        """Wrap one sampled trajectory as an EpisodeTrace: one decision per
        step under the single 'policy' parameter set, full-return credit,
        the trajectory reward attached to the final step."""
        probs, tapes = self.policy_table(params)
        trace = EpisodeTrace(agent_id=0, gamma=1.0)
        for t, (s, a) in enumerate(traj):
            rec = Decision(node_id=POLICY_SET, param_set=POLICY_SET, kind=POLICY_SET,
                           choice=str(a), choice_index=a,
                           logprob=float(np.log(probs[s][a])), tape=tapes[s],
                           window=None)
            r = reward if t == len(traj) - 1 else 0.0
            trace.steps.append(EpisodeStep(
                features=np.array([float(s), float(t)]),
                traversal=TraversalTrace(step=t, records=[rec]),
                reward=r))
        trace.outcome = "done"
        return trace

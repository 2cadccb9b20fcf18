"""Imitation initialization from scripted-expert demonstrations.

The expert only demonstrates motion; per-node training targets are
inferred from the data, not copied from the expert's internals:

  * vehicle labels come from future relative positions (the ego ending up
    ahead of a vehicle it interacted with reads as take-way, behind as
    give-way, never close as offset);
  * lateral / commitment / speed targets come from the realized ego
    motion over a short lookahead;
  * the root choice is the merge-zone indicator visible in the state.

The expert's actual choices are kept alongside purely to measure
agreement of the fitted policy on held-out episodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import net, simulator, util
from ..optiongraph import (COMMITMENT, KIND_CHOICES, LATERAL, ROOT, SPEED,
                           VEHICLE_LABEL, node_input)
from .rollout import ExpertDriver, run_episode
from .selfplay import TrainConfig, _scene_seed, default_world_factory

LOOKAHEAD_LATERAL = 12     # steps of future motion defining lateral targets
LOOKAHEAD_SPEED = 6
LABEL_WINDOW = 25          # steps of future motion defining vehicle labels
FAR_DISTANCE_M = 12.0      # never closer than this reads as offset


# ---------------------------------------------------------------------------
# target inference from realized motion

def infer_lateral(dx: float) -> str:
    if abs(dx) < 0.3:
        return "stay"
    return "right" if dx > 0 else "left"


def infer_commitment(dx: float, x_end: float) -> str:
    """Given a nonzero lateral move: a full lane crossed is go, settling on
    a boundary is push, anything less is stay."""
    if abs(dx) >= 0.8:
        return "go"
    boundary = abs(x_end - np.floor(x_end) - 0.5) <= 0.2
    if boundary and abs(dx) >= 0.3:
        return "push"
    return "stay"


def infer_speed(dv: float) -> str:
    if dv > 0.8:
        return "accelerate"
    if dv < -0.8:
        return "decelerate"
    return "same"


def infer_vehicle_label(end_gap: float, min_dist: float) -> str:
    """end_gap: ego minus vehicle longitudinal position at the end of the
    lookahead; min_dist: closest approach over the lookahead, meters."""
    if min_dist > FAR_DISTANCE_M:
        return "o"
    return "t" if end_gap > 1.0 else "g"


# ---------------------------------------------------------------------------
# demo collection

@dataclass
class DemoData:
    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)      # inferred label indices
    expert: list = field(default_factory=list)       # expert choice indices, -1 if absent
    episode: list = field(default_factory=list)

    def arrays(self):
        return (np.array(self.inputs), np.array(self.targets, dtype=int),
                np.array(self.expert, dtype=int), np.array(self.episode, dtype=int))


@dataclass
class DemoSet:
    per_set: dict
    episodes: int

    def split(self, holdout_frac: float = 0.25):
        """(train, holdout) index masks per set, split by episode so the
        held-out decisions come from unseen scenes."""
        cut = int(np.ceil(self.episodes * (1.0 - holdout_frac)))
        train, hold = {}, {}
        for name, data in self.per_set.items():
            _, _, _, ep = data.arrays()
            train[name] = ep < cut
            hold[name] = ep >= cut
        return train, hold


def collect_demos(config: TrainConfig, n_episodes: int, world_factory=None) -> DemoSet:
    """Run scripted-expert episodes and turn them into per-node datasets."""
    if n_episodes < 1:
        raise ValueError("need at least one demo episode")
    if world_factory is None:
        world_factory = default_world_factory(config)
    graph = config.graph
    per_set = {name: DemoData() for name in graph.param_sets()}

    for ep in range(n_episodes):
        world = world_factory(_scene_seed((config.seed, util.DEMO, ep)))
        n = len(world.vehicles)
        drivers = {i: ExpertDriver(config.schedule, config.expert, graph.delta_v)
                   for i in range(n)}
        result = run_episode(world, drivers, config.reward, config.settings,
                             config.horizon, capture=True)
        history = np.array(result.position_history)   # (steps, n, 3): y, x, speed
        for agent in range(n):
            _harvest_agent(per_set, graph, config.schedule, history, agent,
                           result.captured[agent], ep)
    return DemoSet(per_set=per_set, episodes=n_episodes)


def _harvest_agent(per_set, graph, schedule, history, agent, captured, ep):
    steps = len(captured)
    ys = history[:, agent, 0]
    xs = history[:, agent, 1]
    vs = history[:, agent, 2]
    for t, (state, expert_choices, redecided) in enumerate(captured):
        u_lat = min(t + LOOKAHEAD_LATERAL, steps - 1)
        u_spd = min(t + LOOKAHEAD_SPEED, steps - 1)
        inferred = {
            ROOT: "merge" if state.in_merge else "prepare",
            LATERAL: infer_lateral(xs[u_lat] - xs[t]),
            SPEED: infer_speed(vs[u_spd] - vs[t]),
        }
        if inferred[LATERAL] != "stay":
            inferred[COMMITMENT] = infer_commitment(xs[u_lat] - xs[t], xs[u_lat])
        labels = []
        for v in state.vehicles:
            u = min(t + LABEL_WINDOW, steps - 1)
            other_y = history[t:u + 1, v.agent_id, 0]
            other_x = history[t:u + 1, v.agent_id, 1]
            dists = np.hypot((xs[t:u + 1] - other_x) * state.lane_width,
                             ys[t:u + 1] - other_y)
            labels.append(infer_vehicle_label(ys[u] - other_y[-1], float(dists.min())))

        context = {}
        node = graph.node(graph.root_id)
        chain_pos = 0
        while node.kind != "leaf":
            if node.kind == VEHICLE_LABEL and node.chain_index > len(state.vehicles):
                break
            if node.kind == VEHICLE_LABEL:
                choice = labels[chain_pos]
                expert_choice = (expert_choices["labels"][chain_pos]
                                 if expert_choices else None)
            else:
                choice = inferred.get(node.kind)
                expert_choice = expert_choices.get(node.kind) if expert_choices else None
            if choice is None:
                break
            fresh = node.kind in redecided
            idx = KIND_CHOICES[node.kind].index(choice)
            if fresh:
                data = per_set[node.param_set]
                data.inputs.append(node_input(node, state, context))
                data.targets.append(idx)
                data.expert.append(KIND_CHOICES[node.kind].index(expert_choice)
                                   if expert_choice in KIND_CHOICES[node.kind] else -1)
                data.episode.append(ep)
            if node.kind == VEHICLE_LABEL:
                context["prev_label"] = idx
                chain_pos += 1
            else:
                context[node.kind] = idx
            node = graph.node(node.children[choice])
    return per_set


# ---------------------------------------------------------------------------
# fitting

@dataclass
class ImitationReport:
    holdout_ce_before: dict
    holdout_ce_after: dict
    agreement: float
    samples_per_set: dict


def imitation_init(demos: DemoSet, graph, params: dict, epochs: int = 4,
                   learning_rate: float = 0.05, samples_per_set: int = 4000,
                   holdout_frac: float = 0.25, seed: int = 0):
    """Per-node cross-entropy fit by SGD on the inferred targets; returns
    (new params, ImitationReport).  Zero epochs returns params unchanged."""
    if not any(data.inputs for data in demos.per_set.values()):
        raise ValueError("empty demo set")
    rng = util.rng_stream(seed, util.DEMO, 999)
    train_mask, hold_mask = demos.split(holdout_frac)
    new_params = dict(params)
    ce_before, ce_after, n_samples = {}, {}, {}

    for name, data in demos.per_set.items():
        X, y, _, _ = data.arrays()
        if len(X) == 0:
            continue
        tr, ho = train_mask[name], hold_mask[name]
        ce_before[name] = _cross_entropy(new_params[name], X[ho], y[ho])
        idx = np.flatnonzero(tr)
        if len(idx) > samples_per_set:
            idx = rng.choice(idx, size=samples_per_set, replace=False)
        n_samples[name] = int(len(idx))
        p = new_params[name]
        for _ in range(epochs):
            order = rng.permutation(len(idx))
            for k in order:
                x_k, y_k = X[idx[k]], y[idx[k]]
                _, tape = net.forward(p, x_k)
                grad = net.logprob_grad(p, tape, int(y_k))
                p = net.sgd_step(p, grad, learning_rate, "ascent")
        new_params[name] = p
        ce_after[name] = _cross_entropy(p, X[ho], y[ho])

    agreement = expert_agreement(demos, new_params, hold_mask)
    return new_params, ImitationReport(holdout_ce_before=ce_before,
                                       holdout_ce_after=ce_after,
                                       agreement=agreement,
                                       samples_per_set=n_samples)


def _cross_entropy(params, X, y) -> float:
    if len(X) == 0:
        return 0.0
    total = 0.0
    for x_k, y_k in zip(X, y):
        _, tape = net.forward(params, x_k)
        total -= float(tape.log_probs[int(y_k)])
    return total / len(X)


def expert_agreement(demos: DemoSet, params: dict, masks: dict | None = None) -> float:
    """Fraction of decisions where the fitted policy's argmax matches the
    expert's recorded choice, pooled over all nodes."""
    hits = total = 0
    for name, data in demos.per_set.items():
        X, _, exp, _ = data.arrays()
        if len(X) == 0:
            continue
        mask = masks[name] if masks is not None else np.ones(len(X), dtype=bool)
        for x_k, e_k in zip(X[mask], exp[mask]):
            if e_k < 0:
                continue
            probs, _ = net.forward(params[name], x_k)
            hits += int(np.argmax(probs) == e_k)
            total += 1
    return hits / max(1, total)

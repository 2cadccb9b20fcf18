"""Episode execution: sensing -> option-graph desires -> planned trajectory.

Every episode is fully determined by (world seed, per-agent policy rngs,
configuration); drivers own their randomness streams, so independent
episodes can run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import planner, simulator
from ..optiongraph import (COMMITMENT, LATERAL, ROOT, SPEED, GatingSchedule,
                           TraversalTrace, desires_from_choices, gate)
from .traces import EpisodeStep, EpisodeTrace


@dataclass(frozen=True)
class PlannerSettings:
    """Planner knobs shared by every agent."""

    weights: planner.CostWeights = planner.CostWeights()
    lattice: planner.LatticeSpec = planner.DEFAULT_LATTICE
    min_separation: float = 2.5
    index_window: int = 2
    time_margin: float = 0.5
    intersect_threshold: float = 3.0
    offset_margin: float = 5.0


def plan_for(state, desires, settings: PlannerSettings) -> planner.PlanResult:
    """Plan in the agent's ego frame under its side's drivable corridor."""
    constraints = planner.HardConstraintConfig(
        roadway=simulator.corridor_for(state),
        min_separation=settings.min_separation,
        index_window=settings.index_window,
        time_margin=settings.time_margin)
    return planner.plan(desires, state, settings.weights, constraints,
                        lattice=settings.lattice, lane_width=state.lane_width,
                        threshold=settings.intersect_threshold,
                        offset_margin=settings.offset_margin,
                        time_margin=settings.time_margin)


class ExpertDriver:
    """Scripted driver on the same gating cadence as the learned policy:
    high-level choices persist between re-decisions, and so does the
    lateral target they produced."""

    def __init__(self, schedule: GatingSchedule, expert_cfg: simulator.ExpertConfig,
                 delta_v: float = 2.5):
        self.schedule = schedule
        self.cfg = expert_cfg
        self.delta_v = delta_v
        self.active: dict = {}
        self.lateral_target: float | None = None
        self.last_choices: dict | None = None
        self.last_redecided: set = set()

    def act(self, state, step: int):
        redecide = gate(self.schedule, step)
        fresh = simulator.expert_policy(state, self.cfg)
        choices = {}
        for kind in (ROOT, LATERAL, COMMITMENT):
            if kind in redecide or kind not in self.active:
                choices[kind] = fresh[kind]
            else:
                choices[kind] = self.active[kind]
            self.active[kind] = choices[kind]
        choices[SPEED] = fresh["speed"]
        choices["labels"] = list(fresh["labels"])
        mapped = {k: v for k, v in choices.items() if v is not None}
        desires = desires_from_choices(mapped, state, self.delta_v)
        high_fresh = LATERAL in redecide
        if high_fresh or self.lateral_target is None:
            self.lateral_target = desires.l
        else:
            desires = desires.__class__(v=desires.v, l=self.lateral_target,
                                        labels=desires.labels)
        self.last_choices = choices
        self.last_redecided = redecide
        return desires, TraversalTrace(step=step)


@dataclass
class EpisodeResult:
    world: simulator.WorldState
    outcomes: tuple
    steps: int
    traces: dict = field(default_factory=dict)
    log: list | None = None
    fallbacks: int = 0
    captured: dict | None = None
    position_history: list | None = None


def run_episode(world: simulator.WorldState, drivers: dict,
                reward_config: simulator.RewardConfig, settings: PlannerSettings,
                horizon: int, collect=(), log: bool = False,
                capture: bool = False) -> EpisodeResult:
    """Run one episode to termination or the horizon.

    collect: agent ids whose EpisodeTraces to record (for learning).
    log: build JSON-serializable per-step records.
    capture: record (state, expert choices, redecided kinds) per step and
    the absolute position history, for demo building.
    """
    traces = {i: EpisodeTrace(agent_id=i, gamma=reward_config.gamma) for i in collect}
    log_records: list | None = [] if log else None
    captured: dict | None = {i: [] for i in drivers} if capture else None
    history: list | None = [] if capture else None
    fallbacks = 0
    step_idx = 0

    for step_idx in range(horizon):
        running = world.running()
        if not running:
            break
        if capture:
            history.append([(v.y, v.x, v.speed) for v in world.vehicles])
        plans, pending = {}, {}
        for i in running:
            state = simulator.sense(world, i)
            desires, trace = drivers[i].act(state, step_idx)
            result = plan_for(state, desires, settings)
            plans[i] = result.plan
            fallbacks += result.fallback
            if i in traces or log:
                pending[i] = (state, trace, desires, result)
            if capture:
                captured[i].append((state, getattr(drivers[i], "last_choices", None),
                                    getattr(drivers[i], "last_redecided", set())))
        world, rewards = simulator.step(world, plans, reward_config)
        for i in running:
            r = float(rewards.get(i, 0.0))
            if i in traces:
                state, trace, _, _ = pending[i]
                feats = np.array([state.ego_speed / 10.0, state.dist_to_merge / 100.0])
                traces[i].steps.append(EpisodeStep(features=feats, traversal=trace, reward=r))
            if log:
                state, trace, desires, result = pending[i]
                log_records.append({
                    "time": round(world.time, 3),
                    "agent": i,
                    "state": {"speed": round(state.ego_speed, 4),
                              "lateral": round(state.ego_lateral, 4),
                              "dist_to_merge": round(state.dist_to_merge, 3),
                              "vehicles": len(state.vehicles)},
                    "traversal": [[r_.node_id, r_.choice, round(r_.logprob, 6)]
                                  for r_ in trace.records],
                    "desires": {"v": round(desires.v, 4), "l": desires.l,
                                "labels": list(desires.labels)},
                    "plan": [[round(float(x), 4), round(float(y), 4)]
                             for x, y in result.plan.points],
                    "fallback": bool(result.fallback),
                    "reward": round(r, 6),
                    "outcome": world.outcomes[i],
                })
    else:
        step_idx = horizon

    if world.running():
        world, extra = simulator.finalize_outcomes(world, reward_config)
        for i, r in extra.items():
            if i in traces:
                traces[i].steps.append(EpisodeStep(
                    features=None, traversal=TraversalTrace(step=step_idx), reward=float(r)))

    for i in traces:
        traces[i].outcome = world.outcomes[i]
    return EpisodeResult(world=world, outcomes=world.outcomes, steps=step_idx,
                         traces=traces, log=log_records, fallbacks=fallbacks,
                         captured=captured, position_history=history)

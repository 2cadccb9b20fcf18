"""Deterministic kinematic world model of the double-merge scenario.

Two approach roads (left and right side, a configurable number of lanes
each) run side by side and join in a shared merge area; past the end of
the merge area each vehicle must be on its assigned target side.  Lateral
positions are in lane units: lane centers at whole numbers 1..2n, lane
boundaries at half units, the side divider at n + 0.5.  Longitudinal
positions are in meters.

Vehicles move by executing trajectory-plan points (the plan is the
dynamics: one step teleports the vehicle to the first plan point and
re-derives speed and heading from the displacement).  The simulator owns
collision and outcome detection and reward emission; smoothness lives in
the planner's cost function.

Everything is a value: stepping returns a fresh WorldState, so separate
episodes can run concurrently on separate worlds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import planner

TAU = 0.1
SENSING_RANGE_M = 100.0
ASSIGNMENT_RANGE_M = 300.0
COLLISION_DISTANCE_M = 2.5
VEHICLE_CAP = 8

RUNNING = "running"
MERGED_OK = "merged_ok"
WRONG_SIDE = "wrong_side"
ACCIDENT = "accident"

LEFT = "left"
RIGHT = "right"


@dataclass(frozen=True)
class RoadGeometry:
    """Road layout; ``origin`` shifts the whole scene longitudinally."""

    lanes_per_side: int = 2
    lane_width: float = 3.5
    approach_length: float = 300.0
    merge_length: float = 100.0
    origin: float = 0.0
    v_max: float = 25.0

    def __post_init__(self):
        if self.merge_length <= 0:
            raise ValueError("merge area length must be > 0")
        if self.lanes_per_side < 1 or self.lane_width <= 0 or self.approach_length <= 0:
            raise ValueError("invalid road geometry")

    @property
    def merge_start(self) -> float:
        return self.origin + self.approach_length

    @property
    def merge_end(self) -> float:
        return self.merge_start + self.merge_length

    @property
    def divider(self) -> float:
        return self.lanes_per_side + 0.5

    @property
    def x_min(self) -> float:
        return 0.5

    @property
    def x_max(self) -> float:
        return 2 * self.lanes_per_side + 0.5

    def side_lanes(self, side: str):
        n = self.lanes_per_side
        return tuple(range(1, n + 1)) if side == LEFT else tuple(range(n + 1, 2 * n + 1))

    def side_bounds(self, side: str):
        return (self.x_min, self.divider) if side == LEFT else (self.divider, self.x_max)

    def side_of(self, x: float) -> str:
        return LEFT if x < self.divider else RIGHT


@dataclass(frozen=True)
class VehicleState:
    y: float           # longitudinal position, meters
    x: float           # lateral position, lane units
    speed: float       # m/s
    heading: float     # rad, 0 = straight down the road
    side: str          # side assignment at spawn
    target_side: str   # side the vehicle must be on after the merge area

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")


@dataclass(frozen=True)
class WorldState:
    geometry: RoadGeometry
    vehicles: tuple
    outcomes: tuple
    time: float = 0.0

    def running(self):
        return [i for i, o in enumerate(self.outcomes) if o == RUNNING]


@dataclass(frozen=True)
class RewardConfig:
    """Reward shaping; scaled so non-accident episode returns stay in [-1, 1]."""

    accident_penalty: float = 100.0
    merge_reward: float = 0.7
    wrong_side_penalty: float = -0.35
    comfort_weight: float = 0.002
    comfort_cap: float = 0.001
    gamma: float = 1.0

    def __post_init__(self):
        if self.accident_penalty <= 0:
            raise ValueError("accident penalty must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if abs(self.merge_reward) > 1 or abs(self.wrong_side_penalty) > 1:
            raise ValueError("terminal rewards must stay within [-1, 1]")


@dataclass(frozen=True)
class SensedVehicle:
    """One nearby vehicle in the ego frame."""

    rel_y: float       # meters, positive = ahead
    rel_x: float       # lane units, positive = to the right
    speed: float
    heading: float
    agent_id: int      # opaque tag for logs and demo-label inference


@dataclass
class AgnosticState:
    """Per-agent sensing snapshot: pure ego frame, no absolute positions."""

    ego_speed: float
    ego_lateral: float
    dist_to_merge: float       # meters to merge-area start (negative inside)
    dist_to_merge_end: float
    side: str
    target_side: str | None    # None until within assignment range
    in_merge: bool
    lanes_per_side: int
    lane_width: float
    v_max: float
    vehicles: tuple            # SensedVehicle, nearest-to-merge-point first

    @property
    def divider(self) -> float:
        return self.lanes_per_side + 0.5

    @cached_property
    def ego_features(self) -> np.ndarray:
        return np.array([
            self.ego_speed / 10.0,
            self.ego_lateral,
            self.dist_to_merge / 100.0,
            self.dist_to_merge_end / 100.0,
            {LEFT: 1.0, RIGHT: -1.0, None: 0.0}[self.target_side],
            1.0 if self.side == LEFT else -1.0,
            len(self.vehicles) / VEHICLE_CAP,
            1.0 if self.in_merge else 0.0,
        ])

    def vehicle_features(self, i: int) -> np.ndarray:
        v = self.vehicles[i]
        return np.array([
            1.0,
            v.rel_y / 50.0,
            v.rel_x,
            (v.speed - self.ego_speed) / 10.0,
            v.heading,
        ])


EGO_FEATURES = 8
VEHICLE_FEATURES = 5


# ---------------------------------------------------------------------------
# scene construction

def init_scene(seed: int, agents_per_side: int, geometry: RoadGeometry,
               speed_range=(12.0, 18.0), min_gap: float = 18.0,
               max_gap: float = 32.0) -> WorldState:
    """Seeded random placement: per side, vehicles are strung back from the
    spawn region with randomized same-lane gaps and speeds; target sides
    are drawn per vehicle.  Identical seeds give identical worlds."""
    if agents_per_side < 1:
        raise ValueError("agents_per_side must be >= 1")
    per_lane = -(-agents_per_side // geometry.lanes_per_side)
    needed = per_lane * max_gap + 40.0
    if needed > geometry.approach_length:
        raise ValueError(
            f"approach length {geometry.approach_length} m too short for "
            f"{agents_per_side} agents per side (needs ~{needed:.0f} m)")

    rng = np.random.default_rng(np.random.SeedSequence([17, seed]))
    vehicles = []
    for side in (LEFT, RIGHT):
        lanes = geometry.side_lanes(side)
        lane_order = [lanes[i % len(lanes)] for i in range(agents_per_side)]
        rng.shuffle(lane_order)
        front = {lane: geometry.origin + 25.0 + rng.uniform(0.0, 10.0) for lane in lanes}
        for lane in lane_order:
            y = front[lane]
            front[lane] = y - rng.uniform(min_gap, max_gap)
            vehicles.append(VehicleState(
                y=float(y),
                x=float(lane),
                speed=float(rng.uniform(*speed_range)),
                heading=0.0,
                side=side,
                target_side=LEFT if rng.uniform() < 0.5 else RIGHT,
            ))
    return WorldState(geometry=geometry, vehicles=tuple(vehicles),
                      outcomes=(RUNNING,) * len(vehicles))


# ---------------------------------------------------------------------------
# sensing

def sense(world: WorldState, agent: int) -> AgnosticState:
    """Ego-frame snapshot for one running agent.  Only vehicles within the
    sensing range appear; the target side is withheld until the agent is
    within the assignment range of the merge area."""
    if not 0 <= agent < len(world.vehicles):
        raise ValueError(f"unknown agent {agent}")
    if world.outcomes[agent] != RUNNING:
        raise ValueError(f"agent {agent} is not running ({world.outcomes[agent]})")
    geo = world.geometry
    ego = world.vehicles[agent]
    lw = geo.lane_width

    nearby = []
    for j in world.running():
        if j == agent:
            continue
        v = world.vehicles[j]
        rel_y = v.y - ego.y
        rel_x = v.x - ego.x
        if np.hypot(rel_x * lw, rel_y) <= SENSING_RANGE_M:
            nearby.append((abs(v.y - geo.merge_start), j, v, rel_y, rel_x))
    nearby.sort(key=lambda item: (item[0], item[1]))
    sensed = tuple(
        SensedVehicle(rel_y=rel_y, rel_x=rel_x, speed=v.speed,
                      heading=v.heading, agent_id=j)
        for _, j, v, rel_y, rel_x in nearby[:VEHICLE_CAP])

    dist_to_merge = geo.merge_start - ego.y
    return AgnosticState(
        ego_speed=ego.speed,
        ego_lateral=ego.x,
        dist_to_merge=dist_to_merge,
        dist_to_merge_end=geo.merge_end - ego.y,
        side=ego.side,
        target_side=ego.target_side if dist_to_merge <= ASSIGNMENT_RANGE_M else None,
        in_merge=geo.merge_start <= ego.y < geo.merge_end,
        lanes_per_side=geo.lanes_per_side,
        lane_width=lw,
        v_max=geo.v_max,
        vehicles=sensed,
    )


def corridor_for(state: AgnosticState) -> planner.RoadwayCorridor:
    """Drivable corridor in the ego plan frame: own side only before the
    merge area, the full road from the merge area on."""
    x_min, x_max = 0.5, 2 * state.lanes_per_side + 0.5
    side_lo, side_hi = ((x_min, state.divider) if state.side == LEFT
                        else (state.divider, x_max))
    ms = state.dist_to_merge
    segments = []
    if ms > -1e9:
        segments.append((-1e9, ms, side_lo, side_hi))
    segments.append((ms, 1e9, x_min, x_max))
    return planner.RoadwayCorridor(segments)


# ---------------------------------------------------------------------------
# stepping

def nearest_lane(x: float, lanes_per_side: int) -> int:
    """Deterministic round-half-up lane index, clamped to the road."""
    return int(min(max(np.floor(x + 0.5), 1), 2 * lanes_per_side))


def _merge_outcome(geo: RoadGeometry, vehicle: VehicleState) -> str:
    lane = nearest_lane(vehicle.x, geo.lanes_per_side)
    on_target = lane in geo.side_lanes(vehicle.target_side)
    centered = abs(vehicle.x - lane) <= 0.25
    return MERGED_OK if (on_target and centered) else WRONG_SIDE


def step(world: WorldState, plans: dict, config: RewardConfig):
    """Advance every running agent to the first point of its plan, then
    evaluate collisions and merge outcomes.  Returns (new world, rewards),
    rewards keyed by agent for every agent that was running."""
    geo = world.geometry
    lw = geo.lane_width
    running = world.running()
    for i in running:
        if i not in plans:
            raise ValueError(f"running agent {i} has no plan")

    new_vehicles = list(world.vehicles)
    rewards = {}
    for i in running:
        pts = plans[i].points if isinstance(plans[i], planner.TrajectoryPlan) else np.asarray(plans[i])
        if not np.isfinite(pts).all():
            raise ValueError(f"agent {i}: plan has non-finite coordinates")
        old = world.vehicles[i]
        new_x = float(pts[0, 0])
        new_y = old.y + float(pts[0, 1])
        dx_m = (new_x - old.x) * lw
        dy = new_y - old.y
        dist = float(np.hypot(dx_m, dy))
        new_speed = dist / TAU
        heading = float(np.arctan2(dx_m, dy)) if dist > 1e-9 else old.heading
        new_vehicles[i] = replace(old, y=new_y, x=new_x, speed=new_speed, heading=heading)
        comfort = config.comfort_weight * ((new_speed - old.speed) ** 2 + dx_m ** 2)
        rewards[i] = -min(config.comfort_cap, comfort)

    outcomes = list(world.outcomes)
    # collisions among agents that moved this step
    for a_pos, i in enumerate(running):
        for j in running[a_pos + 1:]:
            vi, vj = new_vehicles[i], new_vehicles[j]
            gap = np.hypot((vi.x - vj.x) * lw, vi.y - vj.y)
            if gap < COLLISION_DISTANCE_M:
                for k in (i, j):
                    if outcomes[k] != ACCIDENT:
                        outcomes[k] = ACCIDENT
                        rewards[k] = -config.accident_penalty

    for i in running:
        if outcomes[i] != RUNNING:
            continue
        if new_vehicles[i].y >= geo.merge_end:
            outcome = _merge_outcome(geo, new_vehicles[i])
            outcomes[i] = outcome
            rewards[i] += (config.merge_reward if outcome == MERGED_OK
                           else config.wrong_side_penalty)

    new_world = WorldState(geometry=geo, vehicles=tuple(new_vehicles),
                           outcomes=tuple(outcomes), time=world.time + TAU)
    return new_world, rewards


def finalize_outcomes(world: WorldState, config: RewardConfig):
    """Horizon cutoff: agents still running failed to complete the merge in
    time and are scored as wrong-side."""
    outcomes = list(world.outcomes)
    rewards = {}
    for i in world.running():
        outcomes[i] = WRONG_SIDE
        rewards[i] = config.wrong_side_penalty
    return replace(world, outcomes=tuple(outcomes)), rewards


def episode_return(rewards, config: RewardConfig) -> float:
    """Discounted return sum_t gamma^t r_t, t counted from 0."""
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * float(r)
        g *= config.gamma
    return total


# ---------------------------------------------------------------------------
# scripted tier: gap-keeping cruise controller with a simple merge rule

@dataclass(frozen=True)
class ExpertConfig:
    """Gap thresholds for the scripted driver.  The defaults are deliberately
    cautious: the expert waits for generous gaps, which costs it merges in
    dense traffic."""

    front_gap: float = 16.0
    back_gap: float = 13.0
    push_front_gap: float = 9.0
    push_back_gap: float = 7.0
    push_distance: float = 50.0
    cruise_speed: float = 17.0
    time_gap: float = 1.1
    label_window: float = 22.0


def expert_policy(state: AgnosticState, cfg: ExpertConfig = ExpertConfig()) -> dict:
    """Deterministic option choices for one step: dict with keys root,
    lateral, commitment (None when lateral is stay), speed, labels."""
    root = "merge" if state.in_merge else "prepare"
    lane = nearest_lane(state.ego_lateral, state.lanes_per_side)
    side_now = LEFT if state.ego_lateral < state.divider else RIGHT
    target = state.target_side or side_now

    lateral, commitment = "stay", None
    if side_now != target or abs(state.ego_lateral - lane) > 0.3:
        direction = 1 if target == RIGHT else -1
        if side_now != target:
            dest = lane + direction
        else:
            dest = lane  # finish settling into the current lane
            direction = 1 if lane > state.ego_lateral else -1
        lateral = "right" if direction > 0 else "left"
        front, back = _dest_lane_gaps(state, dest)
        if front > cfg.front_gap and back > cfg.back_gap:
            commitment = "go"
        elif (state.in_merge and state.dist_to_merge_end < cfg.push_distance
              and front > cfg.push_front_gap and back > cfg.push_back_gap):
            commitment = "push"
        else:
            commitment = "stay"

    speed = _speed_choice(state, lane, cfg)
    labels = _expert_labels(state, lane, target, cfg)
    return {"root": root, "lateral": lateral, "commitment": commitment,
            "speed": speed, "labels": labels}


def _dest_lane_gaps(state: AgnosticState, dest_lane: int):
    front = back = float("inf")
    for v in state.vehicles:
        if abs((state.ego_lateral + v.rel_x) - dest_lane) > 0.6:
            continue
        if v.rel_y >= 0:
            front = min(front, v.rel_y)
        else:
            back = min(back, -v.rel_y)
    return front, back


def _speed_choice(state: AgnosticState, lane: int, cfg: ExpertConfig) -> str:
    lead_gap, lead_speed = float("inf"), None
    for v in state.vehicles:
        if v.rel_y > 0 and abs((state.ego_lateral + v.rel_x) - lane) <= 0.6:
            if v.rel_y < lead_gap:
                lead_gap, lead_speed = v.rel_y, v.speed
    desired = max(6.0, cfg.time_gap * state.ego_speed)
    if lead_speed is not None and lead_gap < desired:
        return "decelerate"
    if (lead_speed is None or lead_gap > 2.0 * desired) and state.ego_speed < cfg.cruise_speed:
        return "accelerate"
    if state.ego_speed > cfg.cruise_speed + 2.0:
        return "decelerate"
    return "same"


def _expert_labels(state: AgnosticState, lane: int, target: str, cfg: ExpertConfig):
    side_now = LEFT if state.ego_lateral < state.divider else RIGHT
    dest = lane + (1 if target == RIGHT else -1) if side_now != target else lane
    labels = []
    for v in state.vehicles:
        v_lane = state.ego_lateral + v.rel_x
        in_conflict = abs(v_lane - dest) <= 0.6 and abs(v.rel_y) <= cfg.label_window
        if not in_conflict:
            labels.append("o")
        elif v.rel_y >= -2.0:
            labels.append("g")
        else:
            labels.append("t")
    return tuple(labels)

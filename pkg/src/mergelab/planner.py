"""Hard-constrained trajectory planner: desires in, safe trajectory out.

This layer is not learned.  It turns a Desires value (target speed,
lateral position, per-vehicle give/take/offset labels) into a cost over
candidate trajectories, rejects every candidate that violates a hard
safety constraint (off the drivable corridor, or closer than the minimum
separation to another vehicle at nearby time indices), and returns the
cheapest survivor.

Plan coordinates: each trajectory point is (x, y) with x the absolute
lateral position in lane units and y the longitudinal offset in meters
from the ego position at planning time.  Points are spaced TAU seconds
apart and there are always PLAN_POINTS of them.  Metric distances convert
lateral lane units to meters via the lane width.

Candidate lattice: piecewise-constant acceleration and lateral velocity,
each held over two half-second stages.  plan() searches the lattice as a
two-stage dynamic program: stage-1 prefixes are pruned as soon as they
violate a hard constraint and merged when they land in identical
(lateral, longitudinal, speed) states, then survivors are expanded into
full candidates and scored exactly.  On this lattice distinct prefixes
only merge when their point sequences are identical (constant-action
segments from one start state), so the search returns the same optimum
as brute-force enumeration; the tests check that equality exactly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numba
import numpy as np

TAU = 0.1
PLAN_POINTS = 10
LANE_WIDTH_M = 3.5


@dataclass(frozen=True)
class TrajectoryPlan:
    """k trajectory points at TAU spacing; (lateral lane units, longitudinal m)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (PLAN_POINTS, 2):
            raise ValueError(f"plan must have shape ({PLAN_POINTS}, 2), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("plan contains non-finite coordinates")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PredictedTrajectory:
    """Constant-velocity extrapolation of one other vehicle, same frame/spacing."""

    points: np.ndarray


@dataclass(frozen=True)
class CostWeights:
    speed: float = 1.0
    lateral: float = 1.0
    giveway: float = 10.0
    takeway: float = 10.0
    offset: float = 5.0
    smoothness: float = 0.1

    def __post_init__(self):
        for name in ("speed", "lateral", "giveway", "takeway", "offset", "smoothness"):
            if getattr(self, name) < 0:
                raise ValueError(f"cost weight {name} must be >= 0")


class RoadwayCorridor:
    """Drivable region as a rectilinear polygon: per longitudinal interval a
    lateral [x_min, x_max] band, in plan coordinates."""

    def __init__(self, segments):
        segs = sorted(tuple(s) for s in segments)
        for (y0, y1, lo, hi) in segs:
            if y1 <= y0 or hi <= lo:
                raise ValueError(f"bad corridor segment {(y0, y1, lo, hi)}")
        self.segments = segs
        self._starts = [s[0] for s in segs]

    def contains(self, x: float, y: float) -> bool:
        idx = bisect.bisect_right(self._starts, y) - 1
        if idx < 0:
            return False
        y0, y1, lo, hi = self.segments[idx]
        return y < y1 and lo <= x <= hi

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Vectorized contains over an (..., 2) array of plan points."""
        pts = points.reshape(-1, 2)
        ok = np.zeros(len(pts), dtype=bool)
        for y0, y1, lo, hi in self.segments:
            in_seg = (pts[:, 1] >= y0) & (pts[:, 1] < y1)
            ok |= in_seg & (pts[:, 0] >= lo) & (pts[:, 0] <= hi)
        return ok.reshape(points.shape[:-1])


@dataclass(frozen=True)
class HardConstraintConfig:
    roadway: RoadwayCorridor
    min_separation: float = 2.5
    index_window: int = 2
    time_margin: float = 0.5

    def __post_init__(self):
        if self.min_separation <= 0:
            raise ValueError("min_separation must be > 0")
        if self.index_window < 0:
            raise ValueError("index_window must be >= 0")


@dataclass(frozen=True)
class LatticeSpec:
    accels: tuple = (-3.0, -1.0, 0.0, 1.0, 3.0)
    lateral_speeds: tuple = (-1.0, 0.0, 1.0)
    stage_steps: tuple = (5, 5)


DEFAULT_LATTICE = LatticeSpec()


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


@dataclass
class PlanResult:
    """Planner output.  The cost breakdown is evaluated lazily (rollouts
    only consume the plan points) and cached on first access."""

    plan: TrajectoryPlan
    fallback: bool
    actions: tuple
    _context: tuple = field(default=None, repr=False)
    _breakdown: tuple = field(default=None, repr=False)

    def _ensure(self):
        if self._breakdown is None:
            desires, state, weights, lw, thr, off_m, t_m = self._context
            predictions = predict_others(state, lw)
            self._breakdown = cost_breakdown(self.plan, desires, predictions,
                                             weights, lw, thr, off_m, t_m)
        return self._breakdown

    @property
    def terms(self) -> dict:
        return self._ensure()[0]

    @property
    def weighted_terms(self) -> dict:
        return self._ensure()[1]

    @property
    def total_cost(self) -> float:
        return self._ensure()[2]


# ---------------------------------------------------------------------------
# prediction

def _predict_array(state, lane_width: float) -> np.ndarray:
    """All predictions at once as an (n, PLAN_POINTS, 2) array."""
    n = len(state.vehicles)
    steps = np.arange(1, PLAN_POINTS + 1) * TAU
    out = np.empty((n, PLAN_POINTS, 2))
    for m, veh in enumerate(state.vehicles):
        vy = veh.speed * np.cos(veh.heading)
        vx = veh.speed * np.sin(veh.heading) / lane_width
        out[m, :, 0] = (state.ego_lateral + veh.rel_x) + vx * steps
        out[m, :, 1] = veh.rel_y + vy * steps
    return out


def predict_others(state, lane_width: float = LANE_WIDTH_M) -> list:
    """Constant-velocity, constant-heading extrapolation for each sensed
    vehicle, PLAN_POINTS steps ahead in the ego plan frame."""
    return [PredictedTrajectory(pts) for pts in _predict_array(state, lane_width)]


# ---------------------------------------------------------------------------
# cost terms
#
# Single-plan entry points route through the same batch arithmetic used by
# the planner search, so scalar and batched evaluations agree bitwise.

def _batch_cost_speed(points: np.ndarray, v: float, lane_width: float) -> np.ndarray:
    d = points[..., 1:, :] - points[..., :-1, :]
    speeds = np.sqrt((d[..., 0] * lane_width) ** 2 + d[..., 1] ** 2) / TAU
    return np.sum((v - speeds) ** 2, axis=-1)


def _batch_cost_lateral(points: np.ndarray, l: float) -> np.ndarray:
    return np.sum(np.abs(points[..., 0] - l), axis=-1)


def _batch_cost_smoothness(points: np.ndarray, lane_width: float) -> np.ndarray:
    second = points[..., 2:, :] - 2.0 * points[..., 1:-1, :] + points[..., :-2, :]
    sq = (second[..., 0] * lane_width) ** 2 + second[..., 1] ** 2
    return np.sum(sq, axis=-1)


def cost_speed(plan: TrajectoryPlan, v: float, lane_width: float = LANE_WIDTH_M) -> float:
    """Sum over i=2..k of (v - segment speed)^2, segment speed in m/s."""
    return float(_batch_cost_speed(plan.points[None], v, lane_width)[0])


def cost_lateral(plan: TrajectoryPlan, l: float) -> float:
    """Sum over all k points of |x_i - l| in lane units."""
    return float(_batch_cost_lateral(plan.points[None], l)[0])


def cost_smoothness(plan: TrajectoryPlan, lane_width: float = LANE_WIDTH_M) -> float:
    """Sum of squared second differences of the points, in meters^2."""
    return float(_batch_cost_smoothness(plan.points[None], lane_width)[0])


def _pair_distances(points: np.ndarray, other: np.ndarray, lane_width: float) -> np.ndarray:
    """(k, k_other) metric distances between plan points and predicted points."""
    dx = (points[:, None, 0] - other[None, :, 0]) * lane_width
    dy = points[:, None, 1] - other[None, :, 1]
    return np.sqrt(dx ** 2 + dy ** 2)


def intersection_indices(plan: TrajectoryPlan, other: PredictedTrajectory,
                         threshold: float = 3.0, lane_width: float = LANE_WIDTH_M):
    """Earliest 1-based plan index i whose point passes within ``threshold``
    of any predicted point, with its smallest witnessing j; None if the
    trajectories never come that close (the i = infinity convention)."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    dist = _pair_distances(plan.points, other.points, lane_width)
    close = dist < threshold
    rows = np.flatnonzero(close.any(axis=1))
    if rows.size == 0:
        return None
    i = int(rows[0])
    j = int(np.flatnonzero(close[i])[0])
    return i + 1, j + 1


def cost_giveway(ij, time_margin: float = 0.5) -> float:
    """[tau*(j - i) + margin]_+ : zero once the ego arrives at the crossing
    at least ``margin`` seconds after the other vehicle."""
    if ij is None:
        return 0.0
    i, j = ij
    return max(0.0, TAU * (j - i) + time_margin)


def cost_takeway(ij, time_margin: float = 0.5) -> float:
    """[tau*(i - j) + margin]_+ : mirror of cost_giveway."""
    if ij is None:
        return 0.0
    i, j = ij
    return max(0.0, TAU * (i - j) + time_margin)


def cost_offset(plan: TrajectoryPlan, other: PredictedTrajectory,
                threshold: float = 3.0, margin: float = 5.0,
                lane_width: float = LANE_WIDTH_M) -> float:
    """Zero when the trajectories never intersect; otherwise margin minus the
    minimum inter-trajectory distance, clamped at zero."""
    if intersection_indices(plan, other, threshold, lane_width) is None:
        return 0.0
    min_dist = float(_pair_distances(plan.points, other.points, lane_width).min())
    return max(0.0, margin - min_dist)


def cost_breakdown(plan: TrajectoryPlan, desires, predictions, weights: CostWeights,
                   lane_width: float = LANE_WIDTH_M, threshold: float = 3.0,
                   offset_margin: float = 5.0, time_margin: float = 0.5):
    """(unweighted terms, weighted terms, total).  Total is the exact float
    sum of the weighted terms in fixed order."""
    labels = list(desires.labels)
    if len(labels) != len(predictions):
        raise ValueError(f"{len(labels)} labels for {len(predictions)} predicted vehicles")
    terms = {
        "speed": cost_speed(plan, desires.v, lane_width),
        "lateral": cost_lateral(plan, desires.l),
        "giveway": 0.0,
        "takeway": 0.0,
        "offset": 0.0,
        "smoothness": cost_smoothness(plan, lane_width),
    }
    for label, pred in zip(labels, predictions):
        ij = intersection_indices(plan, pred, threshold, lane_width)
        if label == "g":
            terms["giveway"] += cost_giveway(ij, time_margin)
        elif label == "t":
            terms["takeway"] += cost_takeway(ij, time_margin)
        elif label == "o":
            terms["offset"] += cost_offset(plan, pred, threshold, offset_margin, lane_width)
        else:
            raise ValueError(f"unknown vehicle label {label!r}")
    weighted = {name: getattr(weights, name) * value for name, value in terms.items()}
    total = 0.0
    for name in ("speed", "lateral", "giveway", "takeway", "offset", "smoothness"):
        total += weighted[name]
    return terms, weighted, total


def total_cost(plan: TrajectoryPlan, desires, predictions, weights: CostWeights,
               **kwargs) -> float:
    """Weighted sum of all cost terms; always >= 0."""
    return cost_breakdown(plan, desires, predictions, weights, **kwargs)[2]


# ---------------------------------------------------------------------------
# hard constraints
#
# Separation compares squared distances so the public check and the
# in-search pruning agree bit for bit.

def feasible(plan: TrajectoryPlan, predictions, constraints: HardConstraintConfig,
             lane_width: float = LANE_WIDTH_M) -> FeasibilityReport:
    """Check every hard constraint and report each violation with indices."""
    report = FeasibilityReport(ok=True)
    on_road = constraints.roadway.contains_points(plan.points)
    for i in np.flatnonzero(~on_road):
        report.violations.append(("off_road", int(i) + 1))
    w = constraints.index_window
    sep_sq = constraints.min_separation ** 2
    win = _index_window_mask(0, PLAN_POINTS, w)
    for v_idx, pred in enumerate(predictions):
        pts = pred.points if isinstance(pred, PredictedTrajectory) else np.asarray(pred)
        dx = (plan.points[:, None, 0] - pts[None, :, 0]) * lane_width
        dy = plan.points[:, None, 1] - pts[None, :, 1]
        viol = (dx ** 2 + dy ** 2 < sep_sq) & win
        for i, j in zip(*np.nonzero(viol)):
            report.violations.append(("separation", v_idx, int(i) + 1, int(j) + 1))
    report.ok = not report.violations
    return report


def _index_window_mask(offset: int, steps: int, w: int) -> np.ndarray:
    i_idx = np.arange(offset, offset + steps)
    return np.abs(i_idx[:, None] - np.arange(PLAN_POINTS)[None, :]) <= w


# ---------------------------------------------------------------------------
# lattice search
#
# The search itself is a compiled kernel: stage-1 prefixes are generated,
# hard-filtered, and merged when they land in identical (x, y, v) states
# (which on constant-action segments implies identical point sequences, so
# the merge is exact), then survivors expand into full candidates whose
# costs decide the optimum.  Python-side code prepares inputs and wraps
# the winner.

@numba.njit(cache=True)
def _roll_check(x0, v0, a, lv, offset, steps, out_pts,
                cy0, cy1, clo, chi, preds, sep_sq, w, lw, tau):
    """Generate one constant-action segment into out_pts[offset:offset+steps]
    and check hard constraints on the fly.  Returns (feasible, end speed)."""
    x_prev = out_pts[offset - 1, 0] if offset > 0 else x0
    y_prev = out_pts[offset - 1, 1] if offset > 0 else 0.0
    v = v0
    for s in range(steps):
        t = (s + 1) * tau
        v = v0 + a * t
        if v < 0.0:
            v = 0.0
        y_prev = y_prev + v * tau
        x = (x0 if offset == 0 else out_pts[offset - 1, 0]) + lv * t
        gi = offset + s
        out_pts[gi, 0] = x
        out_pts[gi, 1] = y_prev
        # roadway corridor
        on_road = False
        for seg in range(cy0.size):
            if y_prev >= cy0[seg] and y_prev < cy1[seg] and x >= clo[seg] and x <= chi[seg]:
                on_road = True
                break
        if not on_road:
            return False, v
        # minimum separation at nearby indices
        jlo = gi - w
        if jlo < 0:
            jlo = 0
        jhi = gi + w + 1
        if jhi > out_pts.shape[0]:
            jhi = out_pts.shape[0]
        for m in range(preds.shape[0]):
            for j in range(jlo, jhi):
                dx = (x - preds[m, j, 0]) * lw
                dy = y_prev - preds[m, j, 1]
                if dx * dx + dy * dy < sep_sq:
                    return False, v
    return True, v


@numba.njit(cache=True)
def _candidate_cost(pts, preds, labels, boxes, v_des, l_des,
                    w_speed, w_lat, w_give, w_take, w_off, w_smooth,
                    thr, off_margin, t_margin, lw, tau, prune_above):
    """Exact candidate cost; returns early with +inf once the partial cost
    provably exceeds ``prune_above`` (all terms are nonnegative)."""
    k = pts.shape[0]
    c = 0.0
    for i in range(1, k):
        dx = (pts[i, 0] - pts[i - 1, 0]) * lw
        dy = pts[i, 1] - pts[i - 1, 1]
        seg_speed = np.sqrt(dx * dx + dy * dy) / tau
        diff = v_des - seg_speed
        c += w_speed * diff * diff
    for i in range(k):
        d = pts[i, 0] - l_des
        c += w_lat * (d if d >= 0 else -d)
    for i in range(1, k - 1):
        sx = (pts[i + 1, 0] - 2.0 * pts[i, 0] + pts[i - 1, 0]) * lw
        sy = pts[i + 1, 1] - 2.0 * pts[i, 1] + pts[i - 1, 1]
        c += w_smooth * (sx * sx + sy * sy)
    if c >= prune_above:
        return 1e301
    if preds.shape[0] == 0:
        return c
    # candidate bounding box for the no-intersection quick reject
    cx_lo = pts[0, 0]
    cx_hi = pts[0, 0]
    for i in range(1, k):
        if pts[i, 0] < cx_lo:
            cx_lo = pts[i, 0]
        if pts[i, 0] > cx_hi:
            cx_hi = pts[i, 0]
    cy_lo = pts[0, 1]
    cy_hi = pts[k - 1, 1]
    thr_sq = thr * thr
    for m in range(preds.shape[0]):
        gx = 0.0
        if boxes[m, 0] - cx_hi > 0.0:
            gx = boxes[m, 0] - cx_hi
        elif cx_lo - boxes[m, 1] > 0.0:
            gx = cx_lo - boxes[m, 1]
        gy = 0.0
        if boxes[m, 2] - cy_hi > 0.0:
            gy = boxes[m, 2] - cy_hi
        elif cy_lo - boxes[m, 3] > 0.0:
            gy = cy_lo - boxes[m, 3]
        gx *= lw
        if gx * gx + gy * gy >= thr_sq:
            continue
        need_min = labels[m] == 2
        hit_i = -1
        hit_j = -1
        min_d2 = 1e18
        for i in range(k):
            for j in range(preds.shape[1]):
                dx = (pts[i, 0] - preds[m, j, 0]) * lw
                dy = pts[i, 1] - preds[m, j, 1]
                d2 = dx * dx + dy * dy
                if d2 < min_d2:
                    min_d2 = d2
                if hit_i < 0 and d2 < thr_sq:
                    hit_i = i
                    hit_j = j
                    if not need_min:
                        break
            if hit_i >= 0 and not need_min:
                break
        if hit_i < 0:
            continue
        if labels[m] == 0:      # give way
            term = tau * (hit_j - hit_i) + t_margin
            if term > 0.0:
                c += w_give * term
        elif labels[m] == 1:    # take way
            term = tau * (hit_i - hit_j) + t_margin
            if term > 0.0:
                c += w_take * term
        else:                   # offset
            term = off_margin - np.sqrt(min_d2)
            if term > 0.0:
                c += w_off * term
        if c >= prune_above:
            return 1e301
    return c


@numba.njit(cache=True)
def _search_kernel(x0, v0, accs, lats, steps1, steps2,
                   cy0, cy1, clo, chi, preds, labels, boxes,
                   sep_sq, w, lw, v_des, l_des,
                   w_speed, w_lat, w_give, w_take, w_off, w_smooth,
                   thr, off_margin, t_margin, tau):
    """Two-stage lattice DP.  Returns (found, best points, best actions)."""
    k = steps1 + steps2
    n_act = accs.size * lats.size
    pref_pts = np.empty((n_act, k, 2))
    pref_v = np.empty(n_act)
    pref_act = np.empty((n_act, 2))
    n_pref = 0
    for ai in range(accs.size):
        for li in range(lats.size):
            ok, v_end = _roll_check(x0, v0, accs[ai], lats[li], 0, steps1,
                                    pref_pts[n_pref], cy0, cy1, clo, chi,
                                    preds, sep_sq, w, lw, tau)
            if not ok:
                continue
            dup = False
            for q in range(n_pref):
                if (pref_pts[q, steps1 - 1, 0] == pref_pts[n_pref, steps1 - 1, 0]
                        and pref_pts[q, steps1 - 1, 1] == pref_pts[n_pref, steps1 - 1, 1]
                        and pref_v[q] == v_end):
                    dup = True
                    break
            if dup:
                continue
            pref_v[n_pref] = v_end
            pref_act[n_pref, 0] = accs[ai]
            pref_act[n_pref, 1] = lats[li]
            n_pref += 1

    best_cost = 1e300
    best_pts = np.empty((k, 2))
    best_act = np.empty(4)
    found = False
    cand = np.empty((k, 2))
    for p in range(n_pref):
        for i in range(steps1):
            cand[i, 0] = pref_pts[p, i, 0]
            cand[i, 1] = pref_pts[p, i, 1]
        for ai in range(accs.size):
            for li in range(lats.size):
                ok, _ = _roll_check(cand[steps1 - 1, 0], pref_v[p], accs[ai],
                                    lats[li], steps1, steps2, cand,
                                    cy0, cy1, clo, chi, preds, sep_sq, w, lw, tau)
                if not ok:
                    continue
                c = _candidate_cost(cand, preds, labels, boxes, v_des, l_des,
                                    w_speed, w_lat, w_give, w_take, w_off,
                                    w_smooth, thr, off_margin, t_margin, lw, tau,
                                    best_cost)
                if c < best_cost:
                    best_cost = c
                    found = True
                    for i in range(k):
                        best_pts[i, 0] = cand[i, 0]
                        best_pts[i, 1] = cand[i, 1]
                    best_act[0] = pref_act[p, 0]
                    best_act[1] = pref_act[p, 1]
                    best_act[2] = accs[ai]
                    best_act[3] = lats[li]
    return found, best_pts, best_act


@numba.njit(cache=True)
def _brake_profile(x0, v0, steps, tau):
    pts = np.empty((steps, 2))
    y = 0.0
    for s in range(steps):
        v = v0 - 3.0 * (s + 1) * tau
        if v < 0.0:
            v = 0.0
        y += v * tau
        pts[s, 0] = x0
        pts[s, 1] = y
    return pts


_LABEL_CODES = {"g": 0, "t": 1, "o": 2}


def _near_vehicle_mask(state, lattice: LatticeSpec, lane_width: float,
                       margin: float) -> np.ndarray:
    """Vehicles that could come within ``margin`` meters of any candidate
    point over the plan horizon; everything else provably contributes zero
    interaction cost and no separation violation."""
    horizon = sum(lattice.stage_steps) * TAU
    max_a = max(abs(a) for a in lattice.accels)
    max_l = max(abs(l) for l in lattice.lateral_speeds)
    ego_reach = (state.ego_speed + max_a * horizon) * horizon + max_l * horizon * lane_width
    mask = np.zeros(len(state.vehicles), dtype=bool)
    for idx, veh in enumerate(state.vehicles):
        now = float(np.hypot(veh.rel_x * lane_width, veh.rel_y))
        mask[idx] = now <= ego_reach + veh.speed * horizon + margin
    return mask


def plan(desires, state, weights: CostWeights, constraints: HardConstraintConfig,
         lattice: LatticeSpec = DEFAULT_LATTICE, lane_width: float = LANE_WIDTH_M,
         threshold: float = 3.0, offset_margin: float = 5.0,
         time_margin: float = 0.5) -> PlanResult:
    """Minimum-cost hard-constraint-feasible trajectory for the desires.

    If no lattice candidate is feasible, falls back to maximum comfortable
    braking (-3 m/s^2) in the current lane and flags it.
    """
    if sum(lattice.stage_steps) != PLAN_POINTS:
        raise ValueError("lattice stages must cover the full plan horizon")
    all_preds = _predict_array(state, lane_width)
    margin = max(constraints.min_separation, threshold, offset_margin) + 1.0
    near = _near_vehicle_mask(state, lattice, lane_width, margin)
    near_idx = np.flatnonzero(near)
    if near_idx.size:
        preds = np.ascontiguousarray(all_preds[near_idx])
        labels = np.array([_LABEL_CODES[desires.labels[i]] for i in near_idx],
                          dtype=np.int64)
        boxes = np.column_stack([preds[:, :, 0].min(axis=1), preds[:, :, 0].max(axis=1),
                                 preds[:, :, 1].min(axis=1), preds[:, :, 1].max(axis=1)])
    else:
        preds = np.empty((0, PLAN_POINTS, 2))
        labels = np.empty(0, dtype=np.int64)
        boxes = np.empty((0, 4))

    segs = np.asarray(constraints.roadway.segments, dtype=float)
    w = weights
    found, pts, acts = _search_kernel(
        float(state.ego_lateral), float(state.ego_speed),
        np.asarray(lattice.accels, dtype=float),
        np.asarray(lattice.lateral_speeds, dtype=float),
        lattice.stage_steps[0], lattice.stage_steps[1],
        segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3],
        preds, labels, boxes,
        float(constraints.min_separation) ** 2, int(constraints.index_window),
        float(lane_width), float(desires.v), float(desires.l),
        w.speed, w.lateral, w.giveway, w.takeway, w.offset, w.smoothness,
        float(threshold), float(offset_margin), float(time_margin), TAU)

    context = (desires, state, weights, lane_width, threshold,
               offset_margin, time_margin)
    if not found:
        brake = _brake_profile(float(state.ego_lateral), float(state.ego_speed),
                               PLAN_POINTS, TAU)
        return PlanResult(TrajectoryPlan(brake), fallback=True,
                          actions=(-3.0, 0.0, -3.0, 0.0), _context=context)
    return PlanResult(TrajectoryPlan(pts.copy()), fallback=False,
                      actions=tuple(acts), _context=context)

"""Option graph: the learnable policy that maps sensing snapshots to Desires.

The policy is a DAG of decision nodes traversed root to leaf.  Each
internal node holds a small policy network (one per parameter set; the
vehicle-label chain shares a single set) that picks among the node kind's
choices:

    root         prepare | merge
    lateral      left | stay | right
    commitment   go | stay | push        (skipped when lateral is stay)
    speed        accelerate | same | decelerate
    vehicle_label  g | t | o             (one chain node per sensed vehicle)

A traversal yields a Desires value: target speed (accelerate/decelerate
move the current speed by the graph's delta_v, clamped to [0, v_max]),
lateral position in half-lane units (go -> target lane center, stay ->
current lane center, push -> the boundary between them), and one
negotiation label per sensed vehicle.

Node inputs: every node sees the ego feature block; downstream nodes also
get one-hot encodings of the upstream choices (the active option, when a
choice is frozen between re-decisions), and chain nodes see the per
vehicle feature block plus the previous vehicle's label.

Decisions re-run on the cadence of a GatingSchedule: high-level kinds
(root/lateral/commitment) every second by default, low-level kinds every
step.  Frozen decisions keep their previous choice and collect no new
gradient terms, which is what shrinks the effective horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import net
from .simulator import EGO_FEATURES, VEHICLE_FEATURES, nearest_lane

ROOT = "root"
LATERAL = "lateral"
COMMITMENT = "commitment"
SPEED = "speed"
VEHICLE_LABEL = "vehicle_label"
LEAF = "leaf"

KIND_CHOICES = {
    ROOT: ("prepare", "merge"),
    LATERAL: ("left", "stay", "right"),
    COMMITMENT: ("go", "stay", "push"),
    SPEED: ("accelerate", "same", "decelerate"),
    VEHICLE_LABEL: ("g", "t", "o"),
    LEAF: (),
}

DECISION_KINDS = (ROOT, LATERAL, COMMITMENT, SPEED, VEHICLE_LABEL)

# upstream one-hot blocks: root(2) + lateral(3) + commitment(3)
_CONTEXT = 8
KIND_INPUT_DIMS = {
    ROOT: EGO_FEATURES,
    LATERAL: EGO_FEATURES + 2,
    COMMITMENT: EGO_FEATURES + 5,
    SPEED: EGO_FEATURES + 8,
    VEHICLE_LABEL: VEHICLE_FEATURES + 3 + _CONTEXT + 3,
}


class GraphDefError(ValueError):
    """Malformed option-graph definition; message carries file:line when parsed."""


@dataclass(frozen=True)
class GraphNode:
    node_id: str
    kind: str
    param_set: str | None
    children: dict = field(default_factory=dict)   # choice -> node id
    chain_index: int = 0                           # 1-based, vehicle_label only


@dataclass(frozen=True)
class OptionGraphDef:
    nodes: dict
    root_id: str
    chain_cap: int
    delta_v: float = 2.5

    def node(self, node_id: str) -> GraphNode:
        return self.nodes[node_id]

    def param_sets(self) -> dict:
        """param set -> (kind, input dim, output dim), in declaration order."""
        sets = {}
        for node in self.nodes.values():
            if node.kind == LEAF:
                continue
            dims = (node.kind, KIND_INPUT_DIMS[node.kind], len(KIND_CHOICES[node.kind]))
            if node.param_set in sets and sets[node.param_set] != dims:
                raise GraphDefError(
                    f"parameter set {node.param_set!r} reused with different dims")
            sets[node.param_set] = dims
        return sets


@dataclass(frozen=True)
class Desires:
    """Planner-facing action: target speed, lateral position, vehicle labels."""

    v: float
    l: float
    labels: tuple

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("desired speed must be >= 0")
        if (2 * self.l) != int(2 * self.l) or self.l < 1:
            raise ValueError(f"lateral position {self.l} not on the half-lane grid")
        for c in self.labels:
            if c not in ("g", "t", "o"):
                raise ValueError(f"unknown vehicle label {c!r}")


@dataclass(frozen=True)
class Decision:
    node_id: str
    param_set: str
    kind: str
    choice: str
    choice_index: int
    logprob: float
    tape: net.ForwardTape
    window: int | None      # credit window in steps; None = to episode end


@dataclass
class TraversalTrace:
    step: int
    records: list = field(default_factory=list)

    @property
    def total_logprob(self) -> float:
        return sum(r.logprob for r in self.records)


@dataclass(frozen=True)
class GatingSchedule:
    high_period: int = 10
    low_period: int = 1
    high_window: int | None = None   # None = credit to episode end
    low_window: int = 25

    def __post_init__(self):
        if self.high_period < 1 or self.low_period < 1:
            raise ValueError("re-decision periods must be >= 1")
        if self.high_window is not None and self.high_window < self.high_period:
            raise ValueError("credit window must cover the re-decision period")
        if self.low_window < self.low_period:
            raise ValueError("credit window must cover the re-decision period")

    def period(self, kind: str) -> int:
        return self.high_period if kind in (ROOT, LATERAL, COMMITMENT) else self.low_period

    def window(self, kind: str):
        return self.high_window if kind in (ROOT, LATERAL, COMMITMENT) else self.low_window


def gate(schedule: GatingSchedule, step: int, previous: TraversalTrace | None = None) -> set:
    """Node kinds that re-decide at this step (all of them at step 0)."""
    return {k for k in DECISION_KINDS if step % schedule.period(k) == 0}


# ---------------------------------------------------------------------------
# default graph and graph files

def default_graph(chain_cap: int = 8, delta_v: float = 2.5,
                  share_lateral: bool = False) -> OptionGraphDef:
    """The double-merge graph: root fans into per-branch lateral nodes, lane
    changes go through a commitment node, then speed, then the shared
    label chain.  share_lateral collapses the two lateral nodes onto one
    parameter set."""
    lat_set = {"lat_prepare": "lateral" if share_lateral else "lat_prepare",
               "lat_merge": "lateral" if share_lateral else "lat_merge"}
    chain_entry = "label_1" if chain_cap >= 1 else "leaf"
    nodes = {
        "root": GraphNode("root", ROOT, "root",
                          {"prepare": "lat_prepare", "merge": "lat_merge"}),
        "lat_prepare": GraphNode("lat_prepare", LATERAL, lat_set["lat_prepare"],
                                 {"left": "commit_left", "stay": "speed",
                                  "right": "commit_right"}),
        "lat_merge": GraphNode("lat_merge", LATERAL, lat_set["lat_merge"],
                               {"left": "commit_left", "stay": "speed",
                                "right": "commit_right"}),
        "commit_left": GraphNode("commit_left", COMMITMENT, "commit_left",
                                 {c: "speed" for c in KIND_CHOICES[COMMITMENT]}),
        "commit_right": GraphNode("commit_right", COMMITMENT, "commit_right",
                                  {c: "speed" for c in KIND_CHOICES[COMMITMENT]}),
        "speed": GraphNode("speed", SPEED, "speed",
                           {c: chain_entry for c in KIND_CHOICES[SPEED]}),
        "leaf": GraphNode("leaf", LEAF, None),
    }
    for i in range(1, chain_cap + 1):
        nxt = f"label_{i + 1}" if i < chain_cap else "leaf"
        nodes[f"label_{i}"] = GraphNode(
            f"label_{i}", VEHICLE_LABEL, "labels",
            {c: nxt for c in KIND_CHOICES[VEHICLE_LABEL]}, chain_index=i)
    graph = OptionGraphDef(nodes=nodes, root_id="root", chain_cap=chain_cap,
                           delta_v=delta_v)
    validate_graph(graph)
    return graph


def validate_graph(graph: OptionGraphDef, source: str = "<graph>") -> None:
    """Structural checks, run at load time so traversal never fails."""
    err = lambda msg: GraphDefError(f"{source}: {msg}")
    nodes = graph.nodes
    if graph.root_id not in nodes:
        raise err(f"root node {graph.root_id!r} is not defined")
    incoming = {nid: 0 for nid in nodes}
    for node in nodes.values():
        expected = KIND_CHOICES[node.kind]
        if node.kind == LEAF:
            if node.children:
                raise err(f"leaf node {node.node_id!r} has outgoing edges")
            continue
        if tuple(node.children) != expected:
            raise err(f"node {node.node_id!r} ({node.kind}) must wire choices "
                      f"{expected}, has {tuple(node.children)}")
        for choice, child in node.children.items():
            if child not in nodes:
                raise err(f"node {node.node_id!r} choice {choice!r} points to "
                          f"undefined node {child!r}")
            incoming[child] += 1
    if incoming[graph.root_id] != 0:
        raise err("root node has incoming edges")

    # acyclicity and leaf reachability by depth-first search
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in nodes}
    reaches_leaf = {}

    def visit(nid):
        if color[nid] == GRAY:
            raise err(f"cycle through node {nid!r}")
        if color[nid] == BLACK:
            return reaches_leaf[nid]
        color[nid] = GRAY
        node = nodes[nid]
        if node.kind == LEAF:
            ok = True
        else:
            ok = all(visit(child) for child in node.children.values())
        color[nid] = BLACK
        reaches_leaf[nid] = ok
        return ok

    if not visit(graph.root_id):
        raise err("some path from the root does not reach a leaf")

    label_sets = {n.param_set for n in nodes.values() if n.kind == VEHICLE_LABEL}
    if len(label_sets) > 1:
        raise err(f"vehicle-label nodes must share one parameter set, found {sorted(label_sets)}")
    chain = sorted((n.chain_index, n.node_id) for n in nodes.values()
                   if n.kind == VEHICLE_LABEL)
    if [c for c, _ in chain] != list(range(1, len(chain) + 1)):
        raise err("vehicle-label chain indices must be 1..n without gaps")
    if len(chain) != graph.chain_cap:
        raise err(f"chain_cap {graph.chain_cap} != {len(chain)} vehicle-label nodes")


def format_graph(graph: OptionGraphDef) -> str:
    lines = ["# mergelab option graph", "version 1",
             f"const delta_v {graph.delta_v}",
             f"const chain_cap {graph.chain_cap}",
             f"root {graph.root_id}"]
    for node in graph.nodes.values():
        lines.append(f"node {node.node_id} {node.kind} {node.param_set or '-'}"
                     + (f" {node.chain_index}" if node.kind == VEHICLE_LABEL else ""))
    for node in graph.nodes.values():
        for choice, child in node.children.items():
            lines.append(f"edge {node.node_id} {choice} {child}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str, source: str = "<graph>") -> OptionGraphDef:
    """Parse the structured-text graph format with line-precise errors."""
    consts = {"delta_v": 2.5, "chain_cap": 0}
    raw_nodes, edges, root_id = {}, [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{source}:{lineno}"
        if parts[0] == "version":
            if parts[1:] != ["1"]:
                raise GraphDefError(f"{where}: unsupported version {parts[1:]}")
        elif parts[0] == "const":
            if len(parts) != 3 or parts[1] not in consts:
                raise GraphDefError(f"{where}: expected 'const <delta_v|chain_cap> <value>'")
            consts[parts[1]] = float(parts[2])
        elif parts[0] == "root":
            if len(parts) != 2:
                raise GraphDefError(f"{where}: expected 'root <node-id>'")
            root_id = parts[1]
        elif parts[0] == "node":
            if len(parts) not in (4, 5):
                raise GraphDefError(f"{where}: expected 'node <id> <kind> <param-set> [chain-index]'")
            nid, kind, pset = parts[1], parts[2], parts[3]
            if kind not in KIND_CHOICES:
                raise GraphDefError(f"{where}: unknown node kind {kind!r}")
            if nid in raw_nodes:
                raise GraphDefError(f"{where}: duplicate node {nid!r}")
            chain_index = int(parts[4]) if len(parts) == 5 else 0
            raw_nodes[nid] = (kind, None if pset == "-" else pset, chain_index)
        elif parts[0] == "edge":
            if len(parts) != 4:
                raise GraphDefError(f"{where}: expected 'edge <from> <choice> <to>'")
            edges.append((lineno, parts[1], parts[2], parts[3]))
        else:
            raise GraphDefError(f"{where}: unknown directive {parts[0]!r}")

    if root_id is None:
        raise GraphDefError(f"{source}: missing 'root' directive")
    children = {nid: {} for nid in raw_nodes}
    for lineno, src, choice, dst in edges:
        where = f"{source}:{lineno}"
        if src not in raw_nodes:
            raise GraphDefError(f"{where}: edge from undefined node {src!r}")
        kind = raw_nodes[src][0]
        if choice not in KIND_CHOICES[kind]:
            raise GraphDefError(f"{where}: {kind} node {src!r} has no choice {choice!r}")
        if choice in children[src]:
            raise GraphDefError(f"{where}: duplicate edge {src!r} --{choice}-->")
        children[src][choice] = dst
    nodes = {}
    for nid, (kind, pset, chain_index) in raw_nodes.items():
        ordered = {c: children[nid][c] for c in KIND_CHOICES[kind] if c in children[nid]}
        nodes[nid] = GraphNode(nid, kind, pset, ordered, chain_index)
    graph = OptionGraphDef(nodes=nodes, root_id=root_id,
                           chain_cap=int(consts["chain_cap"]), delta_v=consts["delta_v"])
    validate_graph(graph, source)
    return graph


def load_graph(path) -> OptionGraphDef:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# parameters and node inputs

def init_graph_params(graph: OptionGraphDef, rng: np.random.Generator,
                      hidden: int = 32) -> dict:
    """One NetParams per parameter set, created in declaration order."""
    return {name: net.init_params(rng, in_dim, out_dim, hidden=hidden)
            for name, (_, in_dim, out_dim) in graph.param_sets().items()}


def _onehot(index: int | None, size: int) -> np.ndarray:
    vec = np.zeros(size)
    if index is not None:
        vec[index] = 1.0
    return vec


def _context_block(context: dict) -> np.ndarray:
    return np.concatenate([
        _onehot(context.get(ROOT), 2),
        _onehot(context.get(LATERAL), 3),
        _onehot(context.get(COMMITMENT), 3),
    ])


def node_input(node: GraphNode, state, context: dict) -> np.ndarray:
    """Feature vector for one decision node given upstream choice indices."""
    ego = state.ego_features
    if node.kind == ROOT:
        return ego
    if node.kind == LATERAL:
        return np.concatenate([ego, _onehot(context.get(ROOT), 2)])
    if node.kind == COMMITMENT:
        return np.concatenate([ego, _onehot(context.get(ROOT), 2),
                               _onehot(context.get(LATERAL), 3)])
    if node.kind == SPEED:
        return np.concatenate([ego, _context_block(context)])
    if node.kind == VEHICLE_LABEL:
        prev = context.get("prev_label")
        return np.concatenate([
            state.vehicle_features(node.chain_index - 1),
            _onehot(prev, 3),
            _context_block(context),
            _onehot(context.get(SPEED), 3),
        ])
    raise GraphDefError(f"node kind {node.kind!r} has no input encoding")


# ---------------------------------------------------------------------------
# traversal

def traverse(graph: OptionGraphDef, params: dict, state, rng: np.random.Generator,
             active: dict | None = None, redecide: set | None = None,
             schedule: GatingSchedule | None = None, step: int = 0):
    """Root-to-leaf traversal producing (Desires, TraversalTrace).

    With ``active`` and ``redecide`` given, nodes of kinds outside
    ``redecide`` reuse their previous choice from ``active`` (and record
    no new decision); fresh decisions sample from the node's policy.  The
    caller merges trace records back into its active map.
    """
    n_vehicles = len(state.vehicles)
    if n_vehicles > graph.chain_cap:
        raise ValueError(f"{n_vehicles} sensed vehicles exceed chain cap {graph.chain_cap}")
    schedule = schedule or GatingSchedule()
    trace = TraversalTrace(step=step)
    context: dict = {}
    choices: dict = {}
    ego = state.ego_features
    # incremental input buffer: ego block plus upstream one-hots; the layout
    # matches node_input() exactly (checked by the tests)
    ctx_vec = np.zeros(_CONTEXT + 3)
    upstream = None
    node = graph.node(graph.root_id)
    while node.kind != LEAF:
        if node.kind == VEHICLE_LABEL and node.chain_index > n_vehicles:
            break
        reuse = (redecide is not None and node.kind not in redecide
                 and active is not None and node.node_id in active)
        if reuse:
            choice = active[node.node_id]
            idx = KIND_CHOICES[node.kind].index(choice)
        else:
            if node.kind == ROOT:
                x = ego
            elif node.kind == LATERAL:
                x = np.concatenate([ego, ctx_vec[:2]])
            elif node.kind == COMMITMENT:
                x = np.concatenate([ego, ctx_vec[:5]])
            elif node.kind == SPEED:
                x = np.concatenate([ego, ctx_vec[:8]])
            else:
                if upstream is None:
                    upstream = ctx_vec.copy()
                x = np.concatenate([state.vehicle_features(node.chain_index - 1),
                                    _onehot(context.get("prev_label"), 3), upstream])
            probs, tape = net.forward(params[node.param_set], x)
            u = rng.random()
            idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
            idx = min(idx, len(probs) - 1)
            choice = KIND_CHOICES[node.kind][idx]
            trace.records.append(Decision(
                node_id=node.node_id, param_set=node.param_set, kind=node.kind,
                choice=choice, choice_index=idx, logprob=float(tape.log_probs[idx]),
                tape=tape, window=schedule.window(node.kind)))
        if node.kind == VEHICLE_LABEL:
            context["prev_label"] = idx
            choices.setdefault("labels", []).append(choice)
        else:
            context[node.kind] = idx
            choices[node.kind] = choice
            if node.kind == ROOT:
                ctx_vec[idx] = 1.0
            elif node.kind == LATERAL:
                ctx_vec[2 + idx] = 1.0
            elif node.kind == COMMITMENT:
                ctx_vec[5 + idx] = 1.0
            elif node.kind == SPEED:
                ctx_vec[8 + idx] = 1.0
        node = graph.node(node.children[choice])
    desires = desires_from_choices(choices, state, graph.delta_v)
    return desires, trace


def desires_from_choices(choices: dict, state, delta_v: float,
                         lateral_target: float | None = None) -> Desires:
    """Deterministic mapping from option choices to a Desires value."""
    v = state.ego_speed
    speed_choice = choices.get(SPEED, "same")
    if speed_choice == "accelerate":
        v = v + delta_v
    elif speed_choice == "decelerate":
        v = v - delta_v
    v = float(min(max(v, 0.0), state.v_max))

    if lateral_target is not None:
        l = lateral_target
    else:
        lane = nearest_lane(state.ego_lateral, state.lanes_per_side)
        lateral = choices.get(LATERAL, "stay")
        if lateral == "stay":
            l = float(lane)
        else:
            direction = 1 if lateral == "right" else -1
            target = int(min(max(lane + direction, 1), 2 * state.lanes_per_side))
            commitment = choices.get(COMMITMENT, "stay")
            if commitment == "go":
                l = float(target)
            elif commitment == "push":
                l = (lane + target) / 2.0
            else:
                l = float(lane)
    labels = tuple(choices.get("labels", ()))
    if len(labels) != len(state.vehicles):
        raise ValueError(f"{len(labels)} labels for {len(state.vehicles)} sensed vehicles")
    return Desires(v=v, l=l, labels=labels)


def desires_from_traversal(graph: OptionGraphDef, traversal: TraversalTrace,
                           state) -> Desires:
    """Replay a complete recorded traversal into Desires, verifying that it
    follows the graph's edges."""
    records = {r.node_id: r for r in traversal.records}
    choices: dict = {}
    node = graph.node(graph.root_id)
    n_vehicles = len(state.vehicles)
    while node.kind != LEAF:
        if node.kind == VEHICLE_LABEL and node.chain_index > n_vehicles:
            break
        rec = records.get(node.node_id)
        if rec is None:
            raise ValueError(f"traversal is missing a decision at node {node.node_id!r}")
        if rec.choice not in node.children:
            raise ValueError(f"choice {rec.choice!r} invalid at node {node.node_id!r}")
        if node.kind == VEHICLE_LABEL:
            choices.setdefault("labels", []).append(rec.choice)
        else:
            choices[node.kind] = rec.choice
        node = graph.node(node.children[rec.choice])
    return desires_from_choices(choices, state, graph.delta_v)


def trace_grad(trace: TraversalTrace, params: dict, weights=None) -> dict:
    """Gradient of the (optionally per-decision weighted) sum of recorded
    log-probabilities, accumulated per parameter set.  Chain decisions all
    land in the shared set."""
    grads = {name: np.zeros(p.n_params) for name, p in params.items()}
    for k, rec in enumerate(trace.records):
        w = 1.0 if weights is None else float(weights[k])
        if rec.tape is None:
            raise ValueError(f"decision at node {rec.node_id!r} has no tape")
        net.logprob_grad_into(params[rec.param_set], rec.tape, rec.choice_index,
                              w, grads[rec.param_set])
    return grads


class PolicyDriver:
    """Per-agent stateful wrapper for rollouts: applies the gating schedule,
    persists frozen choices and the lateral target across steps."""

    def __init__(self, graph: OptionGraphDef, params: dict,
                 schedule: GatingSchedule, rng: np.random.Generator):
        self.graph = graph
        self.params = params
        self.schedule = schedule
        self.rng = rng
        self.active: dict = {}
        self.lateral_target: float | None = None

    def act(self, state, step: int):
        redecide = gate(self.schedule, step)
        desires, trace = traverse(self.graph, self.params, state, self.rng,
                                  active=self.active, redecide=redecide,
                                  schedule=self.schedule, step=step)
        high_fresh = any(r.kind in (LATERAL, COMMITMENT) for r in trace.records)
        for rec in trace.records:
            if rec.kind != VEHICLE_LABEL:
                self.active[rec.node_id] = rec.choice
        if high_fresh or self.lateral_target is None:
            self.lateral_target = desires.l
        else:
            desires = Desires(v=desires.v, l=self.lateral_target, labels=desires.labels)
        return desires, trace

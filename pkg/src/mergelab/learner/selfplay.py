"""A/B self-play training with alternating frozen reference sets.

Agents are split by index parity into sets A and B.  Each round one set
learns by policy gradient while the other plays frozen as reference
traffic; roles swap every round.  Worlds, policy streams, and batch
reductions are all derived from the master seed in a fixed order, so a
training run is bit-reproducible (including under the worker pool: the
episode partition is fixed and results reduce in episode order).
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from .. import net, simulator, util
from ..optiongraph import GatingSchedule, OptionGraphDef, PolicyDriver, default_graph
from .baselines import BaselineState
from .estimator import estimate_gradient_moments, update_online_baseline
from .rollout import ExpertDriver, PlannerSettings, run_episode


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 4
    episodes_per_round: int = 200
    batch_episodes: int = 10
    learning_rate: float = 0.01
    lr_decay: bool = True
    baseline_mode: str = "online-regression"
    agents_per_side: int = 4
    horizon: int = 300
    hidden: int = 32
    seed: int = 0
    eval_episodes: int = 50
    workers: int = 1
    geometry: simulator.RoadGeometry = simulator.RoadGeometry()
    reward: simulator.RewardConfig = simulator.RewardConfig()
    schedule: GatingSchedule = GatingSchedule()
    settings: PlannerSettings = PlannerSettings()
    expert: simulator.ExpertConfig = simulator.ExpertConfig()
    graph: OptionGraphDef = field(default_factory=default_graph)

    def __post_init__(self):
        for name in ("rounds", "episodes_per_round", "batch_episodes",
                     "agents_per_side", "horizon", "hidden", "eval_episodes", "workers"):
            if getattr(self, name) < (0 if name == "rounds" else 1):
                raise ValueError(f"{name} must be >= {0 if name == 'rounds' else 1}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class RoundMetrics:
    round: int
    episodes: int
    merge_rate: float
    wrong_side_rate: float
    accidents: int
    mean_return: float
    grad_variance_by_set: dict
    fallbacks: int


def agent_sets(n_agents: int):
    """Fixed A/B partition: even indices are A, odd are B (both sides mixed)."""
    ids = list(range(n_agents))
    return tuple(ids[0::2]), tuple(ids[1::2])


def default_world_factory(config: TrainConfig):
    def factory(seed: int) -> simulator.WorldState:
        return simulator.init_scene(seed, config.agents_per_side, config.geometry)
    return factory


# ---------------------------------------------------------------------------
# episode workers (top-level so the fork pool can pickle their arguments)

def _run_train_episode(args):
    """One training episode: returns gradient moment sums, baseline
    observations, and outcome stats; traces never cross the process
    boundary."""
    (config, learn_params, frozen_params, baseline, learners, world,
     policy_ids) = args
    drivers = {}
    for i in range(len(world.vehicles)):
        p = learn_params if i in learners else frozen_params
        drivers[i] = PolicyDriver(config.graph, p, config.schedule,
                                  util.rng_stream(*policy_ids, i))
    result = run_episode(world, drivers, config.reward, config.settings,
                         config.horizon, collect=learners)
    traces = [result.traces[i] for i in learners]
    sums, sq_sums, n = estimate_gradient_moments(traces, learn_params, baseline)
    obs = [_observation_rows(t, baseline) for t in traces]
    outcomes = [result.outcomes[i] for i in learners]
    returns = [t.total_return for t in traces]
    accidents = sum(1 for o in result.outcomes if o == simulator.ACCIDENT)
    return (sums, sq_sums, n, obs, outcomes, returns, accidents, result.fallbacks)


def _observation_rows(trace, baseline: BaselineState) -> np.ndarray:
    rows = []
    for t, step in enumerate(trace.steps):
        for rec in step.traversal.records:
            f = step.features if step.features is not None else (0.0, 0.0)
            rows.append((baseline.set_index(rec.param_set), t, f[0], f[1],
                         trace.credited_return(t, rec.window)))
    return np.array(rows, dtype=float) if rows else np.empty((0, 5))


def _run_eval_episode(args):
    config, params, world_seed, policy_ids = args
    world = simulator.init_scene(world_seed, config.agents_per_side, config.geometry)
    n = len(world.vehicles)
    drivers = {i: PolicyDriver(config.graph, params, config.schedule,
                               util.rng_stream(*policy_ids, i))
               for i in range(n)}
    result = run_episode(world, drivers, config.reward, config.settings,
                         config.horizon, collect=range(n))
    returns = [result.traces[i].total_return for i in range(n)]
    return result.outcomes, returns, result.fallbacks


def _run_expert_eval_episode(args):
    config, world_seed = args
    world = simulator.init_scene(world_seed, config.agents_per_side, config.geometry)
    n = len(world.vehicles)
    drivers = {i: ExpertDriver(config.schedule, config.expert, config.graph.delta_v)
               for i in range(n)}
    result = run_episode(world, drivers, config.reward, config.settings,
                         config.horizon, collect=range(n))
    returns = [result.traces[i].total_return for i in range(n)]
    return result.outcomes, returns, result.fallbacks


def _map_ordered(fn, args_list, workers: int):
    """Run fn over args in a fixed order; results come back in args order,
    so downstream float reductions are deterministic."""
    if workers <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    ctx = mp.get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return pool.map(fn, args_list, chunksize=1)


# ---------------------------------------------------------------------------
# training loop

def self_play_train(config: TrainConfig, world_factory=None, params: dict = None):
    """Alternating-role self-play; returns (trained params, round metrics).

    world_factory(seed) -> WorldState controls the scene distribution;
    the default draws from init_scene with the config geometry.
    """
    if world_factory is None:
        world_factory = default_world_factory(config)
    if params is None:
        params = init_params_for(config)
    params_a = dict(params)
    params_b = dict(params)
    baseline = BaselineState(config.baseline_mode, tuple(params))
    metrics: list = []
    learned = dict(params)

    n_agents = 2 * config.agents_per_side
    set_a, set_b = agent_sets(n_agents)

    for rnd in range(config.rounds):
        learners = set_b if rnd % 2 == 0 else set_a
        learn_params = dict(params_b if rnd % 2 == 0 else params_a)
        frozen_params = params_a if rnd % 2 == 0 else params_b
        checkpoint = dict(learn_params)
        lr = config.learning_rate
        if config.lr_decay:
            lr = lr / np.sqrt(rnd + 1)

        stats = _RoundStats(tuple(params))
        ep = 0
        while ep < config.episodes_per_round:
            batch = min(config.batch_episodes, config.episodes_per_round - ep)
            args = []
            for k in range(ep, ep + batch):
                world = world_factory(_scene_seed((config.seed, util.TRAIN, rnd, k)))
                args.append((config, learn_params, frozen_params, baseline,
                             learners, world, (config.seed, util.POLICY, rnd, k)))
            results = _map_ordered(_run_train_episode, args, config.workers)
            try:
                learn_params = _apply_batch(learn_params, baseline, results, lr, stats)
            except ValueError:
                learn_params = checkpoint
                break
            ep += batch

        if rnd % 2 == 0:
            params_b = learn_params
        else:
            params_a = learn_params
        learned = learn_params
        metrics.append(stats.round_metrics(rnd, ep))
    return learned, metrics


def _scene_seed(ids) -> int:
    # compress the stream ids into one scene seed
    return int(np.random.SeedSequence([int(i) for i in ids]).generate_state(1)[0])


def init_params_for(config: TrainConfig, purpose: int = util.POLICY) -> dict:
    from ..optiongraph import init_graph_params
    return init_graph_params(config.graph,
                             util.rng_stream(config.seed, purpose, 0),
                             hidden=config.hidden)


class _RoundStats:
    def __init__(self, set_names):
        self.set_names = set_names
        self.outcomes: list = []
        self.returns: list = []
        self.accidents = 0
        self.fallbacks = 0
        self.grad_sums = None
        self.grad_sqs = None
        self.n_traces = 0

    def round_metrics(self, rnd: int, episodes: int) -> RoundMetrics:
        n = max(1, len(self.outcomes))
        merge = sum(1 for o in self.outcomes if o == simulator.MERGED_OK) / n
        wrong = sum(1 for o in self.outcomes if o == simulator.WRONG_SIDE) / n
        variance = {}
        for name in self.set_names:
            if self.n_traces:
                mean = self.grad_sums[name] / self.n_traces
                var = self.grad_sqs[name] / self.n_traces - mean ** 2
                variance[name] = float(np.mean(np.maximum(var, 0.0)))
            else:
                variance[name] = 0.0
        return RoundMetrics(
            round=rnd, episodes=episodes, merge_rate=merge, wrong_side_rate=wrong,
            accidents=self.accidents,
            mean_return=float(np.mean(self.returns)) if self.returns else 0.0,
            grad_variance_by_set=variance, fallbacks=self.fallbacks)


def _apply_batch(learn_params: dict, baseline: BaselineState, results, lr: float,
                 stats: _RoundStats) -> dict:
    """Reduce one batch of worker results (in episode order), take the SGD
    step, then feed the baseline regressor."""
    total_n = sum(r[2] for r in results)
    sums = {name: np.zeros(p.n_params) for name, p in learn_params.items()}
    sqs = {name: np.zeros(p.n_params) for name, p in learn_params.items()}
    for r in results:
        for name in sums:
            sums[name] += r[0][name]
            sqs[name] += r[1][name]
    if stats.grad_sums is None:
        stats.grad_sums = {n: np.zeros_like(v) for n, v in sums.items()}
        stats.grad_sqs = {n: np.zeros_like(v) for n, v in sqs.items()}
    new_params = {}
    for name, p in learn_params.items():
        grad = sums[name] / total_n
        if not np.isfinite(grad).all():
            raise ValueError(f"non-finite gradient for set {name}")
        new_params[name] = net.sgd_step(p, grad, lr, "ascent")
        stats.grad_sums[name] += sums[name]
        stats.grad_sqs[name] += sqs[name]
    stats.n_traces += total_n
    for r in results:
        for rows in r[3]:
            baseline.observe_rows(rows)
        stats.outcomes.extend(r[4])
        stats.returns.extend(r[5])
        stats.accidents += r[6]
        stats.fallbacks += r[7]
    return new_params


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalMetrics:
    episodes: int
    merge_rate: float
    wrong_side_rate: float
    accidents: int
    mean_return: float
    fallbacks: int


def evaluate_policy(config: TrainConfig, params: dict | None, n_episodes: int,
                    seed_purpose: int = util.EVAL) -> EvalMetrics:
    """Run seeded evaluation episodes with every agent driven by ``params``
    (or by the scripted expert when params is None)."""
    args = []
    for k in range(n_episodes):
        scene = _scene_seed((config.seed, seed_purpose, k))
        if params is None:
            args.append((config, scene))
        else:
            args.append((config, params, scene, (config.seed, seed_purpose, 1000 + k)))
    fn = _run_expert_eval_episode if params is None else _run_eval_episode
    results = _map_ordered(fn, args, config.workers)
    outcomes, returns, fallbacks = [], [], 0
    for o, r, f in results:
        outcomes.extend(o)
        returns.extend(r)
        fallbacks += f
    n = max(1, len(outcomes))
    return EvalMetrics(
        episodes=n_episodes,
        merge_rate=sum(1 for o in outcomes if o == simulator.MERGED_OK) / n,
        wrong_side_rate=sum(1 for o in outcomes if o == simulator.WRONG_SIDE) / n,
        accidents=sum(1 for o in outcomes if o == simulator.ACCIDENT),
        mean_return=float(np.mean(returns)) if returns else 0.0,
        fallbacks=fallbacks)

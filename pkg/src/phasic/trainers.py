"""Population training loops: two-phase diversity training and baselines.

One engine drives every variant so ablations compare like with like:

* ``pdo``        — reward phase per learner, periodic exploitation from the
                   archive, then an auxiliary diversity phase that ascends the
                   kernel determinant on archive copies (never live learners).
* ``pbt``        — pdo minus the auxiliary phase.
* ``dvd``        — joint update mixing reward and diversity gradients with a
                   coefficient picked by Thompson sampling each cycle.
* ``dse-ucb``    — same joint update, coefficient picked by UCB1.
* ``edo-cs``     — pdo loop with exploit/auxiliary candidates picked by
                   behavior-clustered selection instead of top-by-fitness.
                   (The embedding — mean actions on probe states — is a
                   documented stand-in; see that module's docstring.)
* ``ppo-single`` — one plain PPO learner, archive kept for reporting only.

Determinism: all randomness flows from one seed through fixed-order child
streams (one per learner, plus exploitation, auxiliary, and bandit streams),
so ``pdo`` with ``diversity_iters=0`` replays ``pbt`` bit for bit, and every
run is reproducible from its config.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .archive import FitnessQueue, GridArchive, qd_metrics, save_archive
from .detops import diversity_ascent
from .dogfight import DogfightEnv
from .kernels import StateBatch
from .nets import ActionSpace, NormalizedPolicy, Policy, ValueFunction
from .optim import Adam
from .rl import (Normalizer, PPOConfig, RewardScaler, collect_rollout, evaluate,
                 ppo_update)
from .selection import (BanditState, bandit_update, clustering_selection,
                        thompson_select, ucb_select)
from .toy import ToyEnv

TRAINERS = ("pdo", "pbt", "dvd", "dse-ucb", "edo-cs", "ppo-single")
ENVS = ("toy", "dogfight")

# trainers that run the joint reward+diversity update instead of phases
_JOINT = ("dvd", "dse-ucb")
# trainers that exploit the archive into the worst live learner
_EXPLOITING = ("pdo", "pbt", "edo-cs")


@dataclass(frozen=True)
class TrainerConfig:
    env_name: str = "toy"
    trainer: str = "pdo"
    archive: str = "grid"           # container mediating exploit/auxiliary sourcing
    population: int = 5
    total_steps: float = 3e6        # per-learner env steps at full budget
    exploit_period: float = 6e5     # env steps between exploitations (inf disables)
    scale: float = 1.0 / 50.0       # desk-scale factor on both step budgets
    iterations: int | None = None   # overrides the derived iteration count
    rollout_steps: int = 512
    eval_episodes: int = 10
    eval_every: int = 1             # iterations between evaluation cycles
    diversity_iters: int = 20       # auxiliary ascent steps (0 = ablated)
    beta: float = 0.99
    aux_lr: float = 1e-3
    grad_clip: float = 1.0
    metric: str = "w2"
    deterministic_kernel: bool = False
    probe_states: int = 256
    lambda_arms: tuple = (0.0, 0.5)
    hidden: tuple = (64, 64)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    seed: int = 0
    cells_per_dim: int = 10
    queue_capacity: int = 10


def validate_config(config: TrainerConfig) -> None:
    if config.trainer not in TRAINERS:
        raise ValueError(f"unknown trainer {config.trainer!r}; choose from {TRAINERS}")
    if config.env_name not in ENVS:
        raise ValueError(f"unknown env {config.env_name!r}; choose from {ENVS}")
    if config.archive not in ("grid", "queue"):
        raise ValueError("archive must be 'grid' or 'queue'")
    if config.trainer == "ppo-single":
        if config.population != 1:
            raise ValueError("ppo-single runs exactly one learner")
    elif config.population < 2:
        raise ValueError("population trainers need at least 2 learners")
    if config.diversity_iters < 0:
        raise ValueError("diversity_iters must be >= 0")
    if not 0.0 < config.beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if config.scale <= 0 or config.total_steps <= 0:
        raise ValueError("scale and total_steps must be positive")
    if config.exploit_period <= 0:
        raise ValueError("exploit_period must be positive (inf disables)")
    if config.rollout_steps < 1 or config.eval_every < 1 or config.eval_episodes < 1:
        raise ValueError("rollout_steps, eval_every, eval_episodes must be >= 1")
    if config.probe_states < 1:
        raise ValueError("probe_states must be >= 1")
    if config.trainer in _JOINT and not config.lambda_arms:
        raise ValueError("bandit trainers need at least one lambda arm")
    if config.iterations is not None and config.iterations < 1:
        raise ValueError("iterations must be >= 1 when given")


def make_env(name: str):
    if name == "toy":
        return ToyEnv()
    if name == "dogfight":
        return DogfightEnv()
    raise ValueError(f"unknown env {name!r}")


@dataclass
class Learner:
    id: int
    policy: Policy
    value_fn: ValueFunction
    policy_opt: Adam
    value_opt: Adam
    normalizer: Normalizer
    reward_scaler: RewardScaler
    rng: np.random.Generator
    train_env: object
    eval_env: object
    obs: np.ndarray | None = None     # mid-episode continuation point
    pending_return: float = 0.0
    fitness: float = float("nan")
    bd: np.ndarray | None = None
    nan_events: int = 0


def snapshot_payload(learner: Learner) -> dict:
    """Everything exploitation must copy: nets, optimizers, normalizers."""
    return {
        "policy_params": learner.policy.params.copy(),
        "value_params": learner.value_fn.params.copy(),
        "policy_opt": learner.policy_opt.state_dict(),
        "value_opt": learner.value_opt.state_dict(),
        "normalizer": learner.normalizer.state_dict(),
        "reward_scaler": learner.reward_scaler.state_dict(),
    }


def restore_payload(learner: Learner, payload: dict) -> None:
    learner.policy = learner.policy.with_params(payload["policy_params"])
    learner.value_fn = learner.value_fn.with_params(payload["value_params"])
    learner.policy_opt = Adam.from_state(payload["policy_opt"])
    learner.value_opt = Adam.from_state(payload["value_opt"])
    learner.normalizer.load_state(payload["normalizer"])
    learner.reward_scaler.load_state(payload["reward_scaler"])
    learner.obs = None            # the copied policy starts a fresh episode
    learner.pending_return = 0.0


def _wrap(policy: Policy, normalizer: Normalizer | None):
    if normalizer is None:
        return policy
    return NormalizedPolicy(policy, normalizer.stat.mean, normalizer.stat.std)


def _wrap_entry(entry):
    if entry.obs_mean is None:
        return entry.policy
    return NormalizedPolicy(entry.policy, entry.obs_mean, entry.obs_std)


def dvd_update(policies, value_fns, buffers, lam, probe_states, *,
               ppo_config: PPOConfig, policy_opts, value_opts, update_rngs,
               aux_rng=None, aux_lr: float = 1e-3, grad_clip: float = 1.0,
               metric: str = "w2", beta: float = 0.99, deterministic: bool = False,
               normalizers=None):
    """One joint step: theta += (1-lam) * dtheta_reward + lam * dtheta_diversity.

    Reward deltas come from a full PPO update per learner; the diversity delta
    is a single determinant-ascent step on the live population.  ``lam`` = 0
    reproduces the plain PPO result exactly and ``lam`` = 1 the pure ascent
    step; interior values mix the two parameter deltas convexly.  Value
    functions and optimizer state always advance along the reward path.
    Returns (new_policies, new_value_fns, stats_list).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    n = len(policies)
    if normalizers is None:
        normalizers = [None] * n
    aux_deltas = [np.zeros_like(p.params) for p in policies]
    aux_out = None
    if lam > 0.0 and n >= 2:
        wrapped = [_wrap(p, norm) for p, norm in zip(policies, normalizers)]
        aux_out, _ = diversity_ascent(
            wrapped, StateBatch(np.asarray(probe_states, dtype=np.float64)),
            steps=1, metric=metric, beta=beta, lr=aux_lr, grad_clip=grad_clip,
            deterministic=deterministic, rng=aux_rng)
        aux_deltas = [o.params - p.params for o, p in zip(aux_out, policies)]
    new_policies, new_values, stats_list = [], [], []
    for i, policy in enumerate(policies):
        new_policy, new_value, stats = ppo_update(
            policy, value_fns[i], buffers[i], ppo_config,
            policy_opts[i], value_opts[i], update_rngs[i])
        if stats.nan_event:
            new_policies.append(policy)
            new_values.append(value_fns[i])
            stats_list.append(stats)
            continue
        if lam == 0.0:
            mixed = new_policy.params
        elif lam == 1.0:
            mixed = aux_out[i].params
        else:
            mixed = (policy.params + (1.0 - lam) * (new_policy.params - policy.params)
                     + lam * aux_deltas[i])
        if not np.all(np.isfinite(mixed)):
            stats.nan_event = True
            new_policies.append(policy)
            new_values.append(value_fns[i])
        else:
            new_policies.append(policy.with_params(mixed))
            new_values.append(new_value)
        stats_list.append(stats)
    return new_policies, new_values, stats_list


@dataclass
class RunResult:
    config: TrainerConfig
    archive: GridArchive
    queue: FitnessQueue
    records: list
    summary: dict
    learners: list


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _sample_probes(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if pool.shape[0] <= k:
        return pool.copy()
    idx = rng.choice(pool.shape[0], size=k, replace=False)
    return pool[idx]


def run_training(config: TrainerConfig, out_dir=None, env_factory=None) -> RunResult:
    """Execute one training run; writes run artifacts when ``out_dir`` is given.

    The run directory holds config.json, metrics.jsonl (one record per
    iteration), archive/ (policy snapshots + manifest + heatmap), and
    summary.json.  Wall-clock only ever appears in the summary so metric logs
    from equal-seed runs can be compared byte for byte.
    """
    validate_config(config)
    started = time.time()
    factory = env_factory or (lambda: make_env(config.env_name))
    m = config.population
    scale = config.scale
    steps_per_learner = config.total_steps * scale
    if config.iterations is not None:
        n_iters = config.iterations
    else:
        n_iters = max(1, math.ceil(steps_per_learner / config.rollout_steps))
    exploit_period = config.exploit_period * scale
    next_exploit = exploit_period if math.isfinite(exploit_period) else float("inf")

    seqs = np.random.SeedSequence(config.seed).spawn(m + 3)
    exploit_rng = np.random.default_rng(seqs[m])
    aux_rng = np.random.default_rng(seqs[m + 1])
    bandit_rng = np.random.default_rng(seqs[m + 2])

    proto = factory()
    learners = []
    for i in range(m):
        rng = np.random.default_rng(seqs[i])
        policy = Policy.init(proto.obs_dim, proto.action_space, rng, hidden=config.hidden)
        value_fn = ValueFunction.init(proto.obs_dim, rng, hidden=config.hidden)
        learners.append(Learner(
            id=i, policy=policy, value_fn=value_fn,
            policy_opt=Adam(policy.n_params, lr=config.ppo.lr),
            value_opt=Adam(value_fn.params.size, lr=config.ppo.lr),
            normalizer=Normalizer(proto.obs_dim),
            reward_scaler=RewardScaler(config.ppo.gamma),
            rng=rng, train_env=factory(), eval_env=factory()))

    archive = GridArchive(dims=2, cells_per_dim=config.cells_per_dim)
    queue = FitnessQueue(capacity=config.queue_capacity)
    mediator = archive if config.archive == "grid" else queue
    bandit = BanditState(arms=tuple(config.lambda_arms))
    bandit_best = float("-inf")
    joint = config.trainer in _JOINT
    arm = None
    lam = 0.0
    if joint:
        arm = (thompson_select(bandit, bandit_rng) if config.trainer == "dvd"
               else ucb_select(bandit))
        lam = float(bandit.arms[arm])

    # per-learner fallback snapshots for NaN recovery
    last_snapshot = [snapshot_payload(l) for l in learners]
    aux_eval_env = factory()
    records = []
    metrics_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w") as fh:
            json.dump(_jsonable(asdict(config)), fh, indent=2, sort_keys=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "w")

    nan_total = 0
    exploit_events = 0
    aux_offers = 0
    aux_accepts = 0
    try:
        for it in range(n_iters):
            record = {"type": "iteration", "iteration": it,
                      "env_steps": (it + 1) * config.rollout_steps,
                      "learners": [], "eval": None, "archive": None,
                      "exploit": None, "aux": None, "bandit": None}
            buffers = []
            probe_chunks = []
            for learner in learners:
                buf = collect_rollout(
                    learner.policy, learner.value_fn, learner.train_env,
                    config.rollout_steps, learner.rng,
                    normalizer=learner.normalizer,
                    reward_scaler=learner.reward_scaler,
                    learner_id=learner.id, initial_obs=learner.obs,
                    carry_return=learner.pending_return)
                learner.obs = buf.final_obs
                learner.pending_return = buf.pending_return
                buffers.append(buf)
                probe_chunks.append(buf.raw_obs)
            probe_pool = np.concatenate(probe_chunks, axis=0)

            if joint:
                probes = (_sample_probes(probe_pool, config.probe_states, aux_rng)
                          if lam > 0.0 else probe_pool[:1])
                new_ps, new_vs, stats_list = dvd_update(
                    [l.policy for l in learners], [l.value_fn for l in learners],
                    buffers, lam, probes,
                    ppo_config=config.ppo,
                    policy_opts=[l.policy_opt for l in learners],
                    value_opts=[l.value_opt for l in learners],
                    update_rngs=[l.rng for l in learners], aux_rng=aux_rng,
                    aux_lr=config.aux_lr, grad_clip=config.grad_clip,
                    metric=config.metric, beta=config.beta,
                    deterministic=config.deterministic_kernel,
                    normalizers=[l.normalizer for l in learners])
                for learner, new_p, new_v, stats in zip(learners, new_ps, new_vs, stats_list):
                    if stats.nan_event:
                        learner.nan_events += 1
                        nan_total += 1
                        restore_payload(learner, last_snapshot[learner.id])
                    else:
                        learner.policy, learner.value_fn = new_p, new_v
                    record["learners"].append(_learner_record(learner, buffers[learner.id], stats))
            else:
                for learner, buf in zip(learners, buffers):
                    new_p, new_v, stats = ppo_update(
                        learner.policy, learner.value_fn, buf, config.ppo,
                        learner.policy_opt, learner.value_opt, learner.rng)
                    if stats.nan_event:
                        learner.nan_events += 1
                        nan_total += 1
                        restore_payload(learner, last_snapshot[learner.id])
                    else:
                        learner.policy, learner.value_fn = new_p, new_v
                    record["learners"].append(_learner_record(learner, buf, stats))

            cum_steps = (it + 1) * config.rollout_steps
            cycle = ((it + 1) % config.eval_every == 0) or (it == n_iters - 1)
            if cycle:
                evals = []
                for learner in learners:
                    res = evaluate(learner.policy, learner.eval_env, learner.rng,
                                   episodes=config.eval_episodes,
                                   normalizer=learner.normalizer)
                    learner.fitness = res.fitness
                    learner.bd = res.bd
                    payload = snapshot_payload(learner)
                    last_snapshot[learner.id] = payload
                    archive.add(learner.policy, res.fitness, res.bd,
                                obs_mean=learner.normalizer.stat.mean,
                                obs_std=learner.normalizer.stat.std,
                                source=learner.id, iteration=it, payload=payload)
                    queue.add(learner.policy, res.fitness, res.bd,
                              obs_mean=learner.normalizer.stat.mean,
                              obs_std=learner.normalizer.stat.std,
                              source=learner.id, iteration=it, payload=payload)
                    evals.append({"id": learner.id, "fitness": res.fitness,
                                  "bd": res.bd})
                record["eval"] = evals

                if (config.trainer in _EXPLOITING and m >= 2 and len(mediator) > 0
                        and cum_steps >= next_exploit):
                    record["exploit"] = _exploit(
                        config, learners, mediator, exploit_rng, probe_pool)
                    exploit_events += 1
                    while next_exploit <= cum_steps:
                        next_exploit += exploit_period

                if (config.trainer in ("pdo", "edo-cs") and config.diversity_iters > 0
                        and len(mediator) > 0):
                    aux_info = _auxiliary_phase(
                        config, mediator, archive, queue, aux_eval_env, aux_rng,
                        probe_pool, it)
                    aux_offers += aux_info["offered"]
                    aux_accepts += aux_info["accepted"]
                    record["aux"] = aux_info

                if joint:
                    current_best = mediator.max_fitness()
                    improved = (np.isfinite(current_best)
                                and current_best > bandit_best)
                    bandit_update(bandit, arm, bool(improved))
                    if np.isfinite(current_best):
                        bandit_best = max(bandit_best, current_best)
                    arm = (thompson_select(bandit, bandit_rng)
                           if config.trainer == "dvd" else ucb_select(bandit))
                    lam = float(bandit.arms[arm])
                    record["bandit"] = {"arm": arm, "lambda": lam,
                                        "improved": bool(improved)}

                record["archive"] = qd_metrics(archive, fitness_offset=proto.qd_offset)

            clean = _jsonable(record)
            records.append(clean)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(clean, sort_keys=True) + "\n")
                metrics_fh.flush()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    summary = {
        "trainer": config.trainer, "env": config.env_name, "seed": config.seed,
        "iterations": n_iters, "env_steps_per_learner": n_iters * config.rollout_steps,
        "qd": qd_metrics(archive, fitness_offset=proto.qd_offset),
        "queue_best": queue.best().fitness if len(queue) else None,
        "nan_events": nan_total, "exploit_events": exploit_events,
        "aux_offers": aux_offers, "aux_accepts": aux_accepts,
        "wall_clock_s": time.time() - started,
    }
    if out_dir is not None:
        save_archive(archive, out_dir / "archive")
        with open(out_dir / "summary.json", "w") as fh:
            json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    return RunResult(config=config, archive=archive, queue=queue,
                     records=records, summary=summary, learners=learners)


def _learner_record(learner: Learner, buf, stats) -> dict:
    returns = buf.episode_returns
    return {
        "id": learner.id,
        "train_return_mean": float(np.mean(returns)) if returns else None,
        "episodes": len(returns),
        "pi_loss": stats.pi_loss, "v_loss": stats.v_loss,
        "entropy": stats.entropy, "approx_kl": stats.approx_kl,
        "clip_frac": stats.clip_frac, "nan_event": stats.nan_event,
    }


def _exploit(config, learners, source, rng, probe_pool) -> dict:
    """Replace the worst-evaluated live learner with an archived snapshot."""
    worst = min(learners, key=lambda l: (l.fitness, l.id))
    if config.trainer == "edo-cs":
        probes = _sample_probes(probe_pool, config.probe_states, rng)
        picks = clustering_selection(source.entries(),
                                     min(config.population, len(source)),
                                     probes, rng)
        entry = picks[rng.integers(len(picks))]
    else:
        entry = source.sample_uniform(rng)
    if entry.payload is not None:
        restore_payload(worst, entry.payload)
    else:  # externally built archives may lack payloads; copy what exists
        worst.policy = worst.policy.with_params(entry.policy.params)
        worst.obs = None
        worst.pending_return = 0.0
    worst.fitness = entry.fitness
    worst.bd = None if entry.bd.size == 0 else entry.bd.copy()
    return {"target": worst.id, "source_order": entry.order,
            "source_fitness": entry.fitness}


def _auxiliary_phase(config, source, archive, queue, eval_env, rng, probe_pool, it) -> dict:
    """Diversity ascent on archive copies, then gated re-insertion.

    Live learners are never touched: candidates are snapshots wrapped with
    their own frozen normalization constants, ascended jointly, re-evaluated
    with the full episode protocol, and offered back through the same strict
    gate as any other candidate.
    """
    if config.trainer == "edo-cs":
        probes = _sample_probes(probe_pool, config.probe_states, rng)
        entries = clustering_selection(source.entries(),
                                       min(config.population, len(source)),
                                       probes, rng)
        while len(entries) < config.population:
            entries = entries + [entries[0]]
    else:
        entries = source.top(config.population)
    probes = _sample_probes(probe_pool, config.probe_states, rng)
    wrapped = [_wrap_entry(e) for e in entries]
    out, trace = diversity_ascent(
        wrapped, StateBatch(probes), steps=config.diversity_iters,
        metric=config.metric, beta=config.beta, lr=config.aux_lr,
        grad_clip=config.grad_clip, deterministic=config.deterministic_kernel,
        rng=rng)
    accepted = 0
    offers = []
    for entry, cand in zip(entries, out):
        inner = cand.policy if isinstance(cand, NormalizedPolicy) else cand
        normalizer = None
        if entry.obs_mean is not None:
            normalizer = Normalizer(entry.obs_mean.shape[0])
            count = 2.0  # frozen stats: only mean/std matter downstream
            normalizer.stat.load_state({"count": count, "mean": entry.obs_mean,
                                        "m2": entry.obs_std ** 2 * count})
        res = evaluate(inner, eval_env, rng, episodes=config.eval_episodes,
                       normalizer=normalizer)
        payload = None
        if entry.payload is not None:
            payload = dict(entry.payload)
            payload["policy_params"] = inner.params.copy()
        ok_grid = archive.add(inner, res.fitness, res.bd,
                              obs_mean=entry.obs_mean, obs_std=entry.obs_std,
                              source=entry.source, iteration=it, payload=payload)
        ok_queue = queue.add(inner, res.fitness, res.bd,
                             obs_mean=entry.obs_mean, obs_std=entry.obs_std,
                             source=entry.source, iteration=it, payload=payload)
        accepted += int(ok_grid or ok_queue)
        offers.append({"source_order": entry.order, "fitness": res.fitness,
                       "accepted_grid": ok_grid, "accepted_queue": ok_queue})
    return {"offered": len(out), "accepted": accepted,
            "det_start": float(trace[0]), "det_end": float(trace[-1]),
            "offers": offers}


def pdo_train(config: TrainerConfig, out_dir=None, env_factory=None) -> RunResult:
    """Phasic run: reward phase + archive exploitation + auxiliary diversity."""
    if config.trainer != "pdo":
        config = TrainerConfig(**{**asdict(config), "trainer": "pdo",
                                  "ppo": config.ppo})
    return run_training(config, out_dir=out_dir, env_factory=env_factory)


def pbt_train(config: TrainerConfig, out_dir=None, env_factory=None) -> RunResult:
    """Ablation: the same loop with the auxiliary phase removed."""
    if config.trainer != "pbt":
        config = TrainerConfig(**{**asdict(config), "trainer": "pbt",
                                  "ppo": config.ppo})
    return run_training(config, out_dir=out_dir, env_factory=env_factory)

"""Training-loop behavior: ablation identities, exploitation, aux isolation."""

import json
from dataclasses import asdict

import numpy as np
import pytest

from phasic.archive import GridArchive
from phasic.kernels import kernel_entry, StateBatch
from phasic.nets import Policy, ValueFunction
from phasic.optim import Adam
from phasic.rl import Normalizer, PPOConfig, RewardScaler, collect_rollout
from phasic.toy import ToyEnv
from phasic.trainers import (Learner, TrainerConfig, dvd_update, make_env,
                             pbt_train, pdo_train, restore_payload,
                             run_training, snapshot_payload, validate_config,
                             _exploit)


def small_config(**kw):
    base = dict(env_name="toy", trainer="pdo", population=3, iterations=3,
                rollout_steps=96, eval_episodes=2, diversity_iters=5,
                probe_states=48, hidden=(16,), seed=5, exploit_period=200.0,
                scale=1.0)
    base.update(kw)
    return TrainerConfig(**base)


def fresh_learner(seed=0, obs_dim=2, act_dim=2, hidden=(8,), learner_id=0):
    rng = np.random.default_rng(seed)
    policy = Policy.init(obs_dim, ToyEnv().action_space, rng, hidden=hidden)
    value_fn = ValueFunction.init(obs_dim, rng, hidden=hidden)
    return Learner(
        id=learner_id, policy=policy, value_fn=value_fn,
        policy_opt=Adam(policy.n_params), value_opt=Adam(value_fn.params.size),
        normalizer=Normalizer(obs_dim), reward_scaler=RewardScaler(),
        rng=rng, train_env=ToyEnv(), eval_env=ToyEnv())


class TestConfigValidation:
    def test_unknown_trainer(self):
        with pytest.raises(ValueError):
            validate_config(small_config(trainer="sac"))

    def test_unknown_env(self):
        with pytest.raises(ValueError):
            validate_config(small_config(env_name="atari"))

    def test_population_floor(self):
        with pytest.raises(ValueError):
            validate_config(small_config(population=1))

    def test_ppo_single_needs_one_learner(self):
        with pytest.raises(ValueError):
            validate_config(small_config(trainer="ppo-single", population=3))
        validate_config(small_config(trainer="ppo-single", population=1))

    def test_parameter_ranges(self):
        with pytest.raises(ValueError):
            validate_config(small_config(diversity_iters=-1))
        with pytest.raises(ValueError):
            validate_config(small_config(beta=1.0))
        with pytest.raises(ValueError):
            validate_config(small_config(scale=0.0))
        with pytest.raises(ValueError):
            validate_config(small_config(iterations=0))


class TestRunArtifacts:
    def test_run_directory_layout(self, tmp_path):
        res = run_training(small_config(), out_dir=tmp_path / "run")
        root = tmp_path / "run"
        assert (root / "config.json").exists()
        assert (root / "summary.json").exists()
        assert (root / "archive" / "manifest.json").exists()
        lines = (root / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            rec = json.loads(line)
            assert rec["type"] == "iteration"
            assert len(rec["learners"]) == 3
        cfg = json.loads((root / "config.json").read_text())
        assert cfg["trainer"] == "pdo"
        assert cfg["population"] == 3
        summary = json.loads((root / "summary.json").read_text())
        assert summary["iterations"] == 3
        assert "wall_clock_s" in summary
        assert len(res.records) == 3

    def test_iteration_count_derived_from_budget(self):
        cfg = small_config(iterations=None, total_steps=1000.0, scale=0.5,
                           rollout_steps=100, exploit_period=float("inf"))
        res = run_training(cfg)
        # 1000 * 0.5 / 100 = 5 iterations
        assert res.summary["iterations"] == 5


class TestAblationIdentity:
    def test_pdo_without_diversity_equals_pbt(self, tmp_path):
        base = dict(population=3, iterations=4, rollout_steps=96, seed=99,
                    eval_episodes=2, hidden=(16,), exploit_period=150.0,
                    scale=1.0, probe_states=48)
        pdo_res = pdo_train(TrainerConfig(diversity_iters=0, **base),
                            out_dir=tmp_path / "pdo")
        pbt_res = pbt_train(TrainerConfig(diversity_iters=20, **base),
                            out_dir=tmp_path / "pbt")
        a = (tmp_path / "pdo" / "metrics.jsonl").read_text()
        b = (tmp_path / "pbt" / "metrics.jsonl").read_text()
        assert a == b
        for x, y in zip(pdo_res.learners, pbt_res.learners):
            assert np.array_equal(x.policy.params, y.policy.params)
            assert np.array_equal(x.value_fn.params, y.value_fn.params)

    def test_seeded_runs_replay_bit_identically(self, tmp_path):
        cfg = small_config(seed=31)
        run_training(cfg, out_dir=tmp_path / "a")
        run_training(cfg, out_dir=tmp_path / "b")
        assert ((tmp_path / "a" / "metrics.jsonl").read_text()
                == (tmp_path / "b" / "metrics.jsonl").read_text())


class TestAuxiliaryPhase:
    def test_aux_never_touches_live_learners(self):
        # with exploitation disabled, the only cross-learner channel is the
        # auxiliary phase; enabling it must leave learner trajectories intact
        base = dict(population=3, iterations=3, rollout_steps=96, seed=17,
                    eval_episodes=2, hidden=(16,), scale=1.0, probe_states=48,
                    exploit_period=float("inf"))
        with_aux = run_training(TrainerConfig(trainer="pdo", diversity_iters=8, **base))
        without = run_training(TrainerConfig(trainer="pdo", diversity_iters=0, **base))
        for x, y in zip(with_aux.learners, without.learners):
            assert np.array_equal(x.policy.params, y.policy.params)
        for ra, rb in zip(with_aux.records, without.records):
            assert ra["learners"] == rb["learners"]
            assert ra["eval"] == rb["eval"]

    def test_aux_records_det_trace_and_offers(self):
        res = run_training(small_config(diversity_iters=6))
        aux_records = [r["aux"] for r in res.records if r["aux"]]
        assert aux_records
        for aux in aux_records:
            assert aux["offered"] == 3  # population-sized candidate set
            assert len(aux["offers"]) == 3
            # log-det ascent on a frozen objective never loses ground
            assert aux["det_end"] >= aux["det_start"] - 1e-9

    def test_aux_produces_distinct_policies_from_duplicates(self):
        # archive seeded with one policy in three cells: after one auxiliary
        # phase the ascended candidates must have pushed apart
        cfg = small_config(population=3, diversity_iters=10, iterations=1)
        rng = np.random.default_rng(0)
        policy = Policy.init(2, ToyEnv().action_space, rng, hidden=(16,))
        archive = GridArchive()
        for i, bd in enumerate(([0.15, 0.15], [0.45, 0.45], [0.85, 0.85])):
            archive.add(policy, 1.0 + i, bd)
        from phasic.trainers import _auxiliary_phase
        probe_pool = rng.uniform(-1, 1, size=(128, 2))
        info = _auxiliary_phase(cfg, archive, archive, __import__("phasic.archive",
                                fromlist=["FitnessQueue"]).FitnessQueue(10),
                                ToyEnv(), np.random.default_rng(1), probe_pool, 0)
        assert info["offered"] == 3
        assert info["det_end"] > info["det_start"]


class TestExploitation:
    def test_disabled_period_never_copies(self):
        res = run_training(small_config(trainer="pbt",
                                        exploit_period=float("inf")))
        assert res.summary["exploit_events"] == 0
        assert all(r["exploit"] is None for r in res.records)

    def test_exploit_events_logged(self):
        res = run_training(small_config(trainer="pbt", exploit_period=100.0,
                                        iterations=4))
        assert res.summary["exploit_events"] >= 1
        events = [r["exploit"] for r in res.records if r["exploit"]]
        for ev in events:
            assert 0 <= ev["target"] < 3

    def test_exploit_copies_the_full_payload(self):
        donor = fresh_learner(seed=1, learner_id=0)
        # give the donor distinctive state everywhere
        donor.policy_opt.step(donor.policy.params, np.ones(donor.policy.n_params))
        donor.normalizer.update(np.full((6, 2), 3.0))
        donor.reward_scaler.scale(2.0, False)
        payload = snapshot_payload(donor)
        archive = GridArchive()
        assert archive.add(donor.policy, 5.0, [0.5, 0.5], payload=payload)

        target = fresh_learner(seed=2, learner_id=1)
        target.fitness = -1.0
        donor_live = fresh_learner(seed=3, learner_id=0)
        donor_live.fitness = 4.0
        cfg = small_config(population=2)
        ev = _exploit(cfg, [donor_live, target], archive,
                      np.random.default_rng(0), np.zeros((4, 2)))
        assert ev["target"] == 1
        assert np.array_equal(target.policy.params, payload["policy_params"])
        assert np.array_equal(target.value_fn.params, payload["value_params"])
        assert np.array_equal(target.policy_opt.m, payload["policy_opt"]["m"])
        assert target.policy_opt.t == payload["policy_opt"]["t"]
        assert np.array_equal(target.normalizer.stat.mean,
                              payload["normalizer"]["stat"]["mean"])
        assert target.normalizer.stat.count == payload["normalizer"]["stat"]["count"]
        assert target.reward_scaler.ret == payload["reward_scaler"]["ret"]
        assert target.obs is None and target.pending_return == 0.0

    def test_restore_payload_round_trip(self):
        learner = fresh_learner(seed=4)
        snap = snapshot_payload(learner)
        learner.policy = learner.policy.with_params(learner.policy.params + 1.0)
        learner.normalizer.update(np.ones((10, 2)))
        restore_payload(learner, snap)
        assert np.array_equal(learner.policy.params, snap["policy_params"])
        assert learner.normalizer.stat.count == snap["normalizer"]["stat"]["count"]


class TestGatingAcrossRuns:
    @pytest.mark.parametrize("trainer", ["pdo", "pbt", "dvd", "edo-cs"])
    def test_archive_max_fitness_non_decreasing(self, trainer):
        res = run_training(small_config(trainer=trainer, iterations=4))
        best = -np.inf
        seen = False
        for rec in res.records:
            if rec["archive"] is None:
                continue
            seen = True
            assert rec["archive"]["max_fitness"] >= best
            best = rec["archive"]["max_fitness"]
        assert seen


class TestDvdUpdate:
    @staticmethod
    def setup_population(seed=0, n=3, steps=64):
        rng = np.random.default_rng(seed)
        policies, value_fns, buffers = [], [], []
        for i in range(n):
            pol = Policy.init(2, ToyEnv().action_space, rng, hidden=(8,))
            val = ValueFunction.init(2, rng, hidden=(8,))
            buf = collect_rollout(pol, val, ToyEnv(), steps, rng)
            policies.append(pol)
            value_fns.append(val)
            buffers.append(buf)
        probes = rng.uniform(-1, 1, size=(32, 2))
        return policies, value_fns, buffers, probes

    @staticmethod
    def opts(policies, value_fns, lr=3e-4):
        return ([Adam(p.n_params, lr=lr) for p in policies],
                [Adam(v.params.size, lr=lr) for v in value_fns])

    def test_lambda_zero_equals_plain_ppo(self):
        policies, values, buffers, probes = self.setup_population()
        cfg = PPOConfig()
        po1, vo1 = self.opts(policies, values)
        new_ps, new_vs, stats = dvd_update(
            policies, values, buffers, 0.0, probes, ppo_config=cfg,
            policy_opts=po1, value_opts=vo1,
            update_rngs=[np.random.default_rng(100 + i) for i in range(3)])
        po2, vo2 = self.opts(policies, values)
        for i in range(3):
            from phasic.rl import ppo_update
            ref_p, ref_v, _ = ppo_update(policies[i], values[i], buffers[i], cfg,
                                         po2[i], vo2[i], np.random.default_rng(100 + i))
            assert np.array_equal(new_ps[i].params, ref_p.params)
            assert np.array_equal(new_vs[i].params, ref_v.params)
            assert not stats[i].nan_event

    def test_lambda_one_equals_one_ascent_step(self):
        from phasic.detops import diversity_ascent
        policies, values, buffers, probes = self.setup_population(seed=1)
        po, vo = self.opts(policies, values)
        new_ps, _, _ = dvd_update(
            policies, values, buffers, 1.0, probes, ppo_config=PPOConfig(),
            policy_opts=po, value_opts=vo,
            update_rngs=[np.random.default_rng(200 + i) for i in range(3)],
            aux_lr=1e-3)
        ref, _ = diversity_ascent(list(policies), StateBatch(probes), steps=1,
                                  lr=1e-3, rng=np.random.default_rng(0))
        for got, want in zip(new_ps, ref):
            assert np.array_equal(got.params, want.params)

    def test_interior_lambda_is_the_convex_mix(self):
        from phasic.detops import diversity_ascent
        from phasic.rl import ppo_update
        policies, values, buffers, probes = self.setup_population(seed=2)
        cfg = PPOConfig()
        po1, vo1 = self.opts(policies, values)
        mixed, _, _ = dvd_update(
            policies, values, buffers, 0.5, probes, ppo_config=cfg,
            policy_opts=po1, value_opts=vo1,
            update_rngs=[np.random.default_rng(300 + i) for i in range(3)],
            aux_lr=1e-3)
        po2, vo2 = self.opts(policies, values)
        aux_ref, _ = diversity_ascent(list(policies), StateBatch(probes), steps=1,
                                      lr=1e-3, rng=np.random.default_rng(0))
        for i in range(3):
            ppo_ref, _, _ = ppo_update(policies[i], values[i], buffers[i], cfg,
                                       po2[i], vo2[i], np.random.default_rng(300 + i))
            want = (policies[i].params
                    + 0.5 * (ppo_ref.params - policies[i].params)
                    + 0.5 * (aux_ref[i].params - policies[i].params))
            assert mixed[i].params == pytest.approx(want, abs=1e-12)

    def test_lambda_out_of_range_rejected(self):
        policies, values, buffers, probes = self.setup_population(seed=3)
        po, vo = self.opts(policies, values)
        with pytest.raises(ValueError):
            dvd_update(policies, values, buffers, 1.5, probes,
                       ppo_config=PPOConfig(), policy_opts=po, value_opts=vo,
                       update_rngs=[np.random.default_rng(i) for i in range(3)])

    def test_nan_buffer_keeps_original_parameters(self):
        policies, values, buffers, probes = self.setup_population(seed=4)
        buffers[1].rewards = buffers[1].rewards.copy()
        buffers[1].rewards[0] = np.nan
        po, vo = self.opts(policies, values)
        new_ps, _, stats = dvd_update(
            policies, values, buffers, 0.5, probes, ppo_config=PPOConfig(),
            policy_opts=po, value_opts=vo,
            update_rngs=[np.random.default_rng(i) for i in range(3)])
        assert stats[1].nan_event
        assert new_ps[1] is policies[1]
        assert not stats[0].nan_event


class TestBanditTrainers:
    @pytest.mark.parametrize("trainer", ["dvd", "dse-ucb"])
    def test_bandit_records_valid_arms(self, trainer):
        res = run_training(small_config(trainer=trainer, iterations=4,
                                        exploit_period=float("inf")))
        picks = [r["bandit"] for r in res.records if r["bandit"]]
        assert picks
        for b in picks:
            assert b["lambda"] in (0.0, 0.5)
            assert b["arm"] in (0, 1)
            assert isinstance(b["improved"], bool)


class TestPpoSingle:
    def test_runs_without_population_machinery(self):
        res = run_training(small_config(trainer="ppo-single", population=1,
                                        iterations=3))
        assert all(r["exploit"] is None for r in res.records)
        assert all(r["aux"] is None for r in res.records)
        assert all(r["bandit"] is None for r in res.records)
        assert len(res.archive) >= 1


class TestMakeEnv:
    def test_factory_names(self):
        assert make_env("toy").obs_dim == 2
        assert make_env("dogfight").obs_dim == 22
        with pytest.raises(ValueError):
            make_env("pong")


def test_queue_archive_mediates_exploit_and_aux():
    """archive="queue" draws exploit sources and aux candidates from the queue."""
    cfg = TrainerConfig(env_name="toy", trainer="pdo", archive="queue",
                        population=3, iterations=4, rollout_steps=64,
                        eval_episodes=2, eval_every=1, diversity_iters=2,
                        probe_states=32, exploit_period=1.0, scale=1.0,
                        queue_capacity=4, seed=11)
    result = run_training(cfg)
    # the grid archive is still maintained for QD reporting
    assert len(result.archive) >= 1
    assert len(result.queue) >= 1
    exploits = [r["exploit"] for r in result.records if "exploit" in r]
    assert exploits, "queue-mediated run should still trigger exploitation"
    # every exploit source order must exist in the queue's history range
    orders = {e.order for e in result.queue.entries()}
    for ev in exploits:
        assert ev["source_order"] >= 0


def test_queue_archive_rejected_values():
    with pytest.raises(ValueError):
        validate_config(TrainerConfig(archive="ring"))

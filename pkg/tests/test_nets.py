import numpy as np
import pytest

from factories import linear_gaussian_policy, random_gaussian_policy
from oracles import central_diff_grad, grad_close

from phasic.dists import DiagGaussian, DiscreteDist
from phasic.nets import (ActionSpace, NormalizedPolicy, Policy, ValueFunction,
                         deterministic_action, load_policy, log_prob,
                         policy_from_json, policy_to_json, sample_action,
                         save_policy)
from phasic.optim import Adam


class TestForward:
    def test_zero_final_layer_gives_zero_mean(self):
        rng = np.random.default_rng(0)
        pol = Policy.init(3, ActionSpace("continuous", 2), rng, hidden=(8,),
                          log_std_init=-0.5, out_gain=0.0)
        dist = pol.forward(np.ones(3))
        assert np.array_equal(dist.mean, np.zeros(2))
        assert np.allclose(dist.log_std, -0.5)

    def test_hand_set_two_layer_forward(self):
        # tanh hidden layer with identity-ish weights, linear output summing units
        topology = {"obs_dim": 2, "hidden": (2,), "activation": "tanh",
                    "action_space": {"kind": "continuous", "dim": 1}}
        w1 = np.eye(2).ravel()
        b1 = np.zeros(2)
        w2 = np.array([1.0, 1.0])
        b2 = np.zeros(1)
        log_std = np.zeros(1)
        pol = Policy(topology, np.concatenate([w1, b1, w2, b2, log_std]))
        dist = pol.forward(np.array([1.0, 0.0]))
        assert np.isclose(dist.mean[0], np.tanh(1.0), atol=1e-12)

    def test_linear_policy_matrix_multiply(self):
        pol = linear_gaussian_policy([[1.0, 2.0]], [0.5], [0.0])
        dist = pol.forward(np.array([1.0, 0.0]))
        assert np.isclose(dist.mean[0], 1.5, atol=1e-15)

    def test_forward_deterministic(self):
        rng = np.random.default_rng(1)
        pol = random_gaussian_policy(rng)
        obs = rng.standard_normal(2)
        d1, d2 = pol.forward(obs), pol.forward(obs)
        assert np.array_equal(d1.mean, d2.mean)
        assert np.array_equal(d1.log_std, d2.log_std)

    def test_dimension_mismatch(self):
        pol = linear_gaussian_policy([[1.0]], [0.0], [0.0])
        with pytest.raises(ValueError):
            pol.forward(np.zeros(3))

    def test_discrete_probs_normalized(self):
        rng = np.random.default_rng(2)
        pol = Policy.init(2, ActionSpace("discrete", 4), rng, hidden=(3,))
        probs = pol.probs_batch(rng.standard_normal((6, 2)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs > 0.0)


class TestActionHelpers:
    def test_gaussian_log_prob_hand_value(self):
        dist = DiagGaussian(np.zeros(1), np.zeros(1))
        assert np.isclose(log_prob(dist, np.zeros(1)), -0.5 * np.log(2 * np.pi))

    def test_deterministic_action_is_mean_or_argmax(self):
        g = DiagGaussian(np.array([0.3, -0.1]), np.zeros(2))
        assert np.array_equal(deterministic_action(g), g.mean)
        d = DiscreteDist(np.array([0.7, 0.3]))
        assert deterministic_action(d) == 0
        assert np.isclose(log_prob(d, 0), np.log(0.7))

    def test_sampling_seeded(self):
        g = DiagGaussian(np.zeros(2), np.zeros(2))
        a = sample_action(g, np.random.default_rng(3))
        b = sample_action(g, np.random.default_rng(3))
        assert np.array_equal(a, b)


class TestBackward:
    def test_zero_upstream_zero_gradient(self):
        rng = np.random.default_rng(4)
        pol = random_gaussian_policy(rng)
        states = rng.standard_normal((5, 2))
        g = pol.backward_gaussian(states, np.zeros((5, 2)), np.zeros(2))
        assert np.array_equal(g, np.zeros(pol.n_params))

    def test_single_linear_layer_gradient_is_outer_product(self):
        pol = linear_gaussian_policy([[0.3, -0.2]], [0.1], [0.0])
        states = np.array([[1.0, 2.0]])
        upstream = np.array([[2.0]])
        g = pol.backward_gaussian(states, upstream)
        # layout: W (1x2), b (1), log_std (1)
        assert np.allclose(g[:2], [2.0, 4.0], atol=1e-15)
        assert np.isclose(g[2], 2.0)
        assert g[3] == 0.0

    def test_matches_finite_differences_gaussian(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            hidden = tuple(rng.integers(2, 5, size=int(rng.integers(0, 3))))
            pol = random_gaussian_policy(rng, hidden=hidden)
            states = rng.standard_normal((int(rng.integers(1, 5)), 2))
            dmu = rng.standard_normal((states.shape[0], 2))
            dls = rng.standard_normal(2)
            g = pol.backward_gaussian(states, dmu, dls)

            def scalar(p):
                mu, ls = pol.with_params(p).gaussian_batch(states)
                return float(np.sum(mu * dmu) + np.sum(ls * dls))

            assert grad_close(g, central_diff_grad(scalar, pol.params))

    def test_matches_finite_differences_probs(self):
        from factories import random_discrete_policy
        rng = np.random.default_rng(6)
        for _ in range(20):
            pol = random_discrete_policy(rng)
            states = rng.standard_normal((3, 2))
            dp = rng.standard_normal((3, 3))
            g = pol.backward_probs(states, dp)

            def scalar(p):
                return float(np.sum(pol.with_params(p).probs_batch(states) * dp))

            assert grad_close(g, central_diff_grad(scalar, pol.params))

    def test_log_std_clamp_blocks_gradient(self):
        pol = linear_gaussian_policy([[1.0]], [0.0], [5.0])  # clamped at 2
        g = pol.backward_gaussian(np.zeros((1, 1)), np.zeros((1, 1)), np.ones(1))
        assert g[-1] == 0.0

    def test_value_function_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            vf = ValueFunction.init(3, rng, hidden=(4,))
            states = rng.standard_normal((4, 3))
            dv = rng.standard_normal(4)
            g = vf.backward(states, dv)

            def scalar(p):
                return float(np.sum(vf.with_params(p).value_batch(states) * dv))

            assert grad_close(g, central_diff_grad(scalar, vf.params))


class TestImmutabilityAndSerialization:
    def test_params_read_only(self):
        pol = linear_gaussian_policy([[1.0]], [0.0], [0.0])
        with pytest.raises(ValueError):
            pol.params[0] = 7.0

    def test_with_params_leaves_original(self):
        pol = linear_gaussian_policy([[1.0]], [0.0], [0.0])
        new = pol.with_params(pol.params + 1.0)
        assert pol.params[0] == 1.0
        assert new.params[0] == 2.0

    def test_blob_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(8)
        pol = random_gaussian_policy(rng, hidden=(4, 3))
        path = tmp_path / "pol.npz"
        save_policy(path, pol, extra={"obs_mean": np.arange(2.0)})
        loaded, extra = load_policy(path)
        assert np.array_equal(loaded.params, pol.params)
        assert np.array_equal(extra["obs_mean"], np.arange(2.0))
        obs = rng.standard_normal(2)
        a, b = pol.forward(obs), loaded.forward(obs)
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.log_std, b.log_std)

    def test_json_round_trip(self):
        rng = np.random.default_rng(9)
        pol = random_gaussian_policy(rng)
        again = policy_from_json(policy_to_json(pol))
        assert np.array_equal(again.params, pol.params)

    def test_seeded_init_reproducible(self):
        a = Policy.init(3, ActionSpace("continuous", 2), np.random.default_rng(42))
        b = Policy.init(3, ActionSpace("continuous", 2), np.random.default_rng(42))
        assert np.array_equal(a.params, b.params)


class TestNormalizedPolicy:
    def test_observation_transform_applied(self):
        pol = linear_gaussian_policy([[1.0]], [0.0], [0.0])
        wrapped = NormalizedPolicy(pol, obs_mean=np.array([2.0]), obs_std=np.array([4.0]))
        dist = wrapped.forward(np.array([6.0]))
        assert np.isclose(dist.mean[0], 1.0)  # (6-2)/4

    def test_gradients_respect_transform(self):
        rng = np.random.default_rng(10)
        pol = random_gaussian_policy(rng)
        wrapped = NormalizedPolicy(pol, rng.standard_normal(2), rng.uniform(0.5, 2.0, 2))
        states = rng.standard_normal((4, 2))
        dmu = rng.standard_normal((4, 2))
        g = wrapped.backward_gaussian(states, dmu)

        def scalar(p):
            mu, _ = wrapped.with_params(p).gaussian_batch(states)
            return float(np.sum(mu * dmu))

        assert grad_close(g, central_diff_grad(scalar, wrapped.params))


class TestAdam:
    def test_descends_quadratic(self):
        opt = Adam(size=2, lr=0.1)
        x = np.array([3.0, -2.0])
        for _ in range(300):
            x = opt.step(x, 2.0 * x)
        assert np.max(np.abs(x)) < 1e-2

    def test_state_round_trip_bit_identical(self):
        rng = np.random.default_rng(11)
        opt = Adam(size=4, lr=0.01)
        x = rng.standard_normal(4)
        for _ in range(5):
            x = opt.step(x, rng.standard_normal(4))
        clone = Adam.from_state(opt.state_dict())
        g = rng.standard_normal(4)
        assert np.array_equal(opt.step(x.copy(), g), clone.step(x.copy(), g))

"""Small policy/network builders shared across test modules."""

import numpy as np

from phasic.nets import ActionSpace, Policy


def linear_gaussian_policy(w, b, log_std) -> Policy:
    """Continuous policy with no hidden layer: mean = W obs + b."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    log_std = np.broadcast_to(np.asarray(log_std, dtype=np.float64), (w.shape[0],))
    topology = {"obs_dim": w.shape[1], "hidden": (), "activation": "tanh",
                "action_space": {"kind": "continuous", "dim": w.shape[0]}}
    return Policy(topology, np.concatenate([w.ravel(), b, log_std]))


def linear_discrete_policy(w, b) -> Policy:
    """Discrete policy with no hidden layer: logits = W obs + b."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    topology = {"obs_dim": w.shape[1], "hidden": (), "activation": "tanh",
                "action_space": {"kind": "discrete", "dim": w.shape[0]}}
    return Policy(topology, np.concatenate([w.ravel(), b]))


def random_gaussian_policy(rng, obs_dim=2, act_dim=2, hidden=(3,), scale=1.0) -> Policy:
    pol = Policy.init(obs_dim, ActionSpace("continuous", act_dim), rng,
                      hidden=hidden, log_std_init=float(rng.uniform(-0.5, 0.3)))
    params = pol.params + scale * 0.3 * rng.standard_normal(pol.n_params)
    return pol.with_params(params)


def random_discrete_policy(rng, obs_dim=2, n_actions=3, hidden=(3,)) -> Policy:
    pol = Policy.init(obs_dim, ActionSpace("discrete", n_actions), rng, hidden=hidden)
    params = pol.params + 0.3 * rng.standard_normal(pol.n_params)
    return pol.with_params(params)


def clustered_gaussian_policies(rng, m, spread=0.05, obs_dim=2, act_dim=2, hidden=(3,)):
    """Population of small mutual distance, keeping the normalized kernel
    away from its saturated (near-identity) regime."""
    base = random_gaussian_policy(rng, obs_dim=obs_dim, act_dim=act_dim, hidden=hidden)
    return [base.with_params(base.params + spread * rng.standard_normal(base.n_params))
            for _ in range(m)]

"""Small MLP policies and value functions with hand-written backprop.

Parameters live in a single flat float64 vector so population snapshots,
archive copies, and gradient updates are plain array operations.  A policy
maps observations to either a diagonal Gaussian (state-independent learnable
log-std) or a categorical over discrete actions.  The reverse-mode passes are
written out explicitly and are exact for the forward computation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dists import LOG_STD_MAX, LOG_STD_MIN, DiagGaussian, DiscreteDist

BLOB_VERSION = 1


@dataclass(frozen=True)
class ActionSpace:
    kind: str  # 'continuous' | 'discrete'
    dim: int

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown action space kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("action dimension must be >= 1")


def _act(name: str):
    if name == "tanh":
        return np.tanh, lambda z, a: 1.0 - a * a
    if name == "relu":
        return lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {name!r}")


class _Mlp:
    """Shapes and forward/backward passes for one fully-connected stack."""

    def __init__(self, sizes, activation="tanh"):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.activation = activation
        self.shapes = []
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.shapes.append((b, a))  # weight
            self.shapes.append((b,))    # bias
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)

    def unpack(self, flat: np.ndarray):
        out, off = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(flat[off:off + size].reshape(shape))
            off += size
        return out

    def init_params(self, rng: np.random.Generator, out_gain: float,
                    hidden_gain: float = np.sqrt(2.0)) -> np.ndarray:
        flat = np.zeros(self.n_params)
        views = self.unpack(flat)
        n_layers = len(self.sizes) - 1
        for layer in range(n_layers):
            gain = out_gain if layer == n_layers - 1 else hidden_gain
            views[2 * layer][...] = _orthogonal(views[2 * layer].shape, gain, rng)
        return flat

    def forward(self, flat: np.ndarray, x: np.ndarray):
        """Returns (output (N, out), cache for backward)."""
        views = self.unpack(flat)
        f, _ = _act(self.activation)
        acts = [x]
        zs = []
        h = x
        n_layers = len(self.sizes) - 1
        for layer in range(n_layers):
            w, b = views[2 * layer], views[2 * layer + 1]
            z = h @ w.T + b
            zs.append(z)
            h = f(z) if layer < n_layers - 1 else z
            acts.append(h)
        return h, (acts, zs)

    def backward(self, flat: np.ndarray, cache, dout: np.ndarray) -> np.ndarray:
        views = self.unpack(flat)
        _, df = _act(self.activation)
        acts, zs = cache
        grad = np.zeros(self.n_params)
        gviews = self.unpack(grad)
        n_layers = len(self.sizes) - 1
        dz = dout
        for layer in range(n_layers - 1, -1, -1):
            gviews[2 * layer][...] = dz.T @ acts[layer]
            gviews[2 * layer + 1][...] = dz.sum(axis=0)
            if layer > 0:
                dh = dz @ views[2 * layer]
                dz = dh * df(zs[layer - 1], acts[layer])
        return grad


def _orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal(shape)
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == shape else vt
    return gain * q


class Policy:
    """Immutable flat-parameter policy network."""

    def __init__(self, topology: dict, params: np.ndarray):
        self.topology = dict(topology)
        self.topology["hidden"] = tuple(self.topology["hidden"])  # JSON-safe canonical form
        self.action_space = ActionSpace(**self.topology["action_space"])
        sizes = (self.topology["obs_dim"], *self.topology["hidden"], self.action_space.dim)
        self._mlp = _Mlp(sizes, self.topology.get("activation", "tanh"))
        n_extra = self.action_space.dim if self.action_space.kind == "continuous" else 0
        params = np.asarray(params, dtype=np.float64).copy()
        if params.shape != (self._mlp.n_params + n_extra,):
            raise ValueError(f"expected {self._mlp.n_params + n_extra} parameters, "
                             f"got {params.shape}")
        params.setflags(write=False)
        self.params = params

    # -- construction -----------------------------------------------------

    @classmethod
    def init(cls, obs_dim: int, action_space: ActionSpace, rng: np.random.Generator,
             hidden=(64, 64), activation: str = "tanh", log_std_init: float = 0.0,
             out_gain: float = 0.01) -> "Policy":
        topology = {"obs_dim": int(obs_dim), "hidden": tuple(int(h) for h in hidden),
                    "activation": activation,
                    "action_space": {"kind": action_space.kind, "dim": action_space.dim}}
        sizes = (obs_dim, *topology["hidden"], action_space.dim)
        mlp = _Mlp(sizes, activation)
        flat = mlp.init_params(rng, out_gain=out_gain)
        if action_space.kind == "continuous":
            flat = np.concatenate([flat, np.full(action_space.dim, float(log_std_init))])
        return cls(topology, flat)

    def with_params(self, params: np.ndarray) -> "Policy":
        return Policy(self.topology, params)

    @property
    def n_params(self) -> int:
        return self.params.size

    def _split(self):
        if self.action_space.kind == "continuous":
            return self.params[:self._mlp.n_params], self.params[self._mlp.n_params:]
        return self.params, None

    # -- forward ----------------------------------------------------------

    def forward(self, obs: np.ndarray):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.topology["obs_dim"],):
            raise ValueError(f"bad observation shape {obs.shape}")
        if self.action_space.kind == "continuous":
            mu, ls = self.gaussian_batch(obs[None])
            return DiagGaussian(mu[0], ls)
        return DiscreteDist(self.probs_batch(obs[None])[0])

    def gaussian_batch(self, states: np.ndarray):
        """(means (N, A), clamped log_std (A,)) for continuous policies."""
        net, log_std = self._split()
        if log_std is None:
            raise ValueError("gaussian_batch on a discrete policy")
        out, _ = self._mlp.forward(net, np.asarray(states, dtype=np.float64))
        return out, np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)

    def logits_batch(self, states: np.ndarray) -> np.ndarray:
        if self.action_space.kind != "discrete":
            raise ValueError("logits_batch on a continuous policy")
        out, _ = self._mlp.forward(self.params, np.asarray(states, dtype=np.float64))
        return out

    def probs_batch(self, states: np.ndarray) -> np.ndarray:
        return _softmax(self.logits_batch(states))

    # -- reverse mode -----------------------------------------------------

    def backward_gaussian(self, states: np.ndarray, d_mu: np.ndarray,
                          d_log_std: np.ndarray | None = None) -> np.ndarray:
        """Flat parameter gradient from upstream gradients on (mean, log_std)."""
        net, log_std = self._split()
        if log_std is None:
            raise ValueError("backward_gaussian on a discrete policy")
        states = np.asarray(states, dtype=np.float64)
        _, cache = self._mlp.forward(net, states)
        g_net = self._mlp.backward(net, cache, np.asarray(d_mu, dtype=np.float64))
        g_ls = np.zeros_like(log_std)
        if d_log_std is not None:
            # gradient is blocked where the clamp is active
            mask = (log_std > LOG_STD_MIN) & (log_std < LOG_STD_MAX)
            g_ls = np.asarray(d_log_std, dtype=np.float64) * mask
        return np.concatenate([g_net, g_ls])

    def backward_logits(self, states: np.ndarray, d_logits: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        _, cache = self._mlp.forward(self.params, states)
        return self._mlp.backward(self.params, cache, np.asarray(d_logits, dtype=np.float64))

    def backward_probs(self, states: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
        """Upstream on softmax probabilities, routed through the softmax Jacobian."""
        p = self.probs_batch(states)
        d_probs = np.asarray(d_probs, dtype=np.float64)
        inner = np.sum(d_probs * p, axis=1, keepdims=True)
        return self.backward_logits(states, p * (d_probs - inner))


class ValueFunction:
    """Scalar-output MLP sharing the Policy parameter conventions."""

    def __init__(self, topology: dict, params: np.ndarray):
        self.topology = dict(topology)
        self.topology["hidden"] = tuple(self.topology["hidden"])  # JSON-safe canonical form
        sizes = (self.topology["obs_dim"], *self.topology["hidden"], 1)
        self._mlp = _Mlp(sizes, self.topology.get("activation", "tanh"))
        params = np.asarray(params, dtype=np.float64).copy()
        if params.shape != (self._mlp.n_params,):
            raise ValueError("parameter count mismatch")
        params.setflags(write=False)
        self.params = params

    @classmethod
    def init(cls, obs_dim: int, rng: np.random.Generator, hidden=(64, 64),
             activation: str = "tanh") -> "ValueFunction":
        topology = {"obs_dim": int(obs_dim), "hidden": tuple(int(h) for h in hidden),
                    "activation": activation}
        mlp = _Mlp((obs_dim, *topology["hidden"], 1), activation)
        return cls(topology, mlp.init_params(rng, out_gain=1.0))

    def with_params(self, params: np.ndarray) -> "ValueFunction":
        return ValueFunction(self.topology, params)

    def value_batch(self, states: np.ndarray) -> np.ndarray:
        out, _ = self._mlp.forward(self.params, np.asarray(states, dtype=np.float64))
        return out[:, 0]

    def value(self, obs: np.ndarray) -> float:
        return float(self.value_batch(np.asarray(obs)[None])[0])

    def backward(self, states: np.ndarray, d_value: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        _, cache = self._mlp.forward(self.params, states)
        return self._mlp.backward(self.params, cache,
                                  np.asarray(d_value, dtype=np.float64)[:, None])


@dataclass(frozen=True)
class NormalizedPolicy:
    """Policy composed with a frozen observation normalizer.

    Used when archive snapshots are compared or ascended: each snapshot's own
    normalization constants travel with its parameters.
    """

    policy: Policy
    obs_mean: np.ndarray
    obs_std: np.ndarray
    clip: float = 10.0  # same clamp the live observation normalizer applies

    def __post_init__(self):
        object.__setattr__(self, "obs_mean", np.asarray(self.obs_mean, dtype=np.float64))
        object.__setattr__(self, "obs_std",
                           np.maximum(np.asarray(self.obs_std, dtype=np.float64), 1e-8))

    @property
    def action_space(self) -> ActionSpace:
        return self.policy.action_space

    @property
    def params(self) -> np.ndarray:
        return self.policy.params

    def with_params(self, params: np.ndarray) -> "NormalizedPolicy":
        return NormalizedPolicy(self.policy.with_params(params), self.obs_mean,
                                self.obs_std, self.clip)

    def _tx(self, states: np.ndarray) -> np.ndarray:
        z = (np.asarray(states, dtype=np.float64) - self.obs_mean) / self.obs_std
        return np.clip(z, -self.clip, self.clip)

    def forward(self, obs: np.ndarray):
        return self.policy.forward(self._tx(np.asarray(obs)[None])[0])

    def gaussian_batch(self, states):
        return self.policy.gaussian_batch(self._tx(states))

    def probs_batch(self, states):
        return self.policy.probs_batch(self._tx(states))

    def backward_gaussian(self, states, d_mu, d_log_std=None):
        return self.policy.backward_gaussian(self._tx(states), d_mu, d_log_std)

    def backward_probs(self, states, d_probs):
        return self.policy.backward_probs(self._tx(states), d_probs)

    def backward_logits(self, states, d_logits):
        return self.policy.backward_logits(self._tx(states), d_logits)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- distribution helpers ------------------------------------------------

def sample_action(dist, rng: np.random.Generator):
    return dist.sample(rng)


def log_prob(dist, action) -> float:
    return dist.log_prob(action)


def deterministic_action(dist):
    """Mean for Gaussians, argmax for categoricals."""
    return dist.mode()


# -- serialization --------------------------------------------------------

def save_policy(path, policy: Policy, extra: dict | None = None) -> None:
    """Versioned binary blob: topology descriptor + parameters (+ extra arrays)."""
    arrays = {"params": policy.params}
    if extra:
        arrays.update({f"extra_{k}": np.asarray(v) for k, v in extra.items()})
    np.savez(path, version=np.int64(BLOB_VERSION),
             topology=np.frombuffer(json.dumps(policy.topology).encode(), dtype=np.uint8),
             **arrays)


def load_policy(path):
    """Returns (policy, extra dict) from a save_policy blob."""
    with np.load(path) as blob:
        version = int(blob["version"])
        if version != BLOB_VERSION:
            raise ValueError(f"unsupported blob version {version}")
        topology = json.loads(bytes(blob["topology"]).decode())
        extra = {k[len("extra_"):]: blob[k] for k in blob.files if k.startswith("extra_")}
        return Policy(topology, blob["params"]), extra


def policy_to_json(policy: Policy) -> str:
    """Human-inspectable JSON export (exact float round-trip via repr)."""
    return json.dumps({"version": BLOB_VERSION, "topology": policy.topology,
                       "params": policy.params.tolist()})


def policy_from_json(text: str) -> Policy:
    doc = json.loads(text)
    if doc.get("version") != BLOB_VERSION:
        raise ValueError("unsupported JSON policy version")
    return Policy(doc["topology"], np.asarray(doc["params"], dtype=np.float64))

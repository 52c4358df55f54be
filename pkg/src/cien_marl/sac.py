"""Soft actor-critic pieces: squashed-Gaussian policy, twin critics, updates.

Input layouts are fixed throughout:

* actor input  ``[s_i, s_o, c]``
* critic input ``[s_i, s_o, a_i, c]``

where ``c`` (collective influence) is omitted in the modes that have no
influence estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .cien import InfluenceEstimator
from .replay import Batch

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6


@dataclass
class SacHyper:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    policy_delay: int = 2
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    learning_rate: float = 3e-4
    entropy_sign: str = "standard"
    # measure the entropy bonus on the unit-box action tanh(u) rather than on the scaled action
    entropy_unit_box: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.policy_delay < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("policy_delay, batch_size and buffer_capacity must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.entropy_sign not in ("standard", "printed"):
            raise ValueError("entropy_sign must be 'standard' or 'printed'")

    @classmethod
    def from_dict(cls, data: dict) -> "SacHyper":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown hyper keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GaussianPolicy:
    network: nn.DenseNetwork
    action_dim: int
    action_scale: float = 0.05

    def __post_init__(self):
        if self.network.output_head != "gaussian" or self.network.out_dim != 2 * self.action_dim:
            raise nn.ShapeError("policy network needs a gaussian head of width 2 * action_dim")

    @property
    def obs_dim(self) -> int:
        return self.network.in_dim

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.network.copy(), self.action_dim, self.action_scale)


@dataclass
class CriticPair:
    q1: nn.DenseNetwork
    q2: nn.DenseNetwork
    q1_target: nn.DenseNetwork
    q2_target: nn.DenseNetwork

    def __post_init__(self):
        arch = self.q1.architecture()
        for net in (self.q2, self.q1_target, self.q2_target):
            if net.architecture() != arch:
                raise nn.ShapeError("critic architectures are not congruent")
        if self.q1.out_dim != 1:
            raise nn.ShapeError("critics must have a scalar output")

    @property
    def in_dim(self) -> int:
        return self.q1.in_dim

    def copy(self) -> "CriticPair":
        return CriticPair(self.q1.copy(), self.q2.copy(), self.q1_target.copy(), self.q2_target.copy())


def make_policy(obs_dim, action_dim, hidden, rng, action_scale=0.05, zero=False, dtype=np.float64) -> GaussianPolicy:
    net = nn.init_network([obs_dim, *hidden, 2 * action_dim], rng, "relu", "gaussian", dtype=dtype, zero=zero)
    return GaussianPolicy(net, action_dim, action_scale)


def make_critics(in_dim, hidden, rng, zero=False, dtype=np.float64) -> CriticPair:
    q1 = nn.init_network([in_dim, *hidden, 1], rng, "relu", "linear", dtype=dtype, zero=zero)
    q2 = nn.init_network([in_dim, *hidden, 1], rng, "relu", "linear", dtype=dtype, zero=zero)
    return CriticPair(q1, q2, q1.copy(), q2.copy())


@dataclass
class PolicySample:
    action: np.ndarray
    log_prob: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    noise: np.ndarray
    squashed: np.ndarray  # tanh(u)
    cache: nn.ForwardCache


def _squash_log_prob(noise, log_std, squashed, action_scale):
    # log N(u; mu, sigma) at u = mu + sigma * noise, then the tanh and scale Jacobians
    gauss = -0.5 * noise ** 2 - log_std - 0.5 * LOG_2PI
    jac = np.log(1.0 - squashed ** 2 + SQUASH_EPS) + math.log(action_scale)
    return np.sum(gauss - jac, axis=-1)


def policy_sample(policy: GaussianPolicy, obs, noise=None, rng=None, deterministic=False) -> PolicySample:
    """Reparameterized draw ``a = scale * tanh(mu + sigma * noise)`` with its log-density."""
    out, cache = nn.forward(policy.network, obs)
    if not np.all(np.isfinite(out)):
        raise nn.NonFiniteError("policy network produced a non-finite output")
    k = policy.action_dim
    mean, log_std = out[..., :k], out[..., k:]
    if noise is None:
        noise = np.zeros_like(mean) if deterministic else rng.standard_normal(mean.shape)
    noise = np.asarray(noise, dtype=mean.dtype)
    u = mean + np.exp(log_std) * noise
    squashed = np.tanh(u)
    log_prob = _squash_log_prob(noise, log_std, squashed, policy.action_scale)
    return PolicySample(policy.action_scale * squashed, log_prob, mean, log_std, noise, squashed, cache)


def sample_action(policy: GaussianPolicy, obs, rng=None, deterministic=False, noise=None):
    """Return ``(action, log_prob)``; ``deterministic`` uses zero noise (``scale * tanh(mu)``)."""
    s = policy_sample(policy, obs, noise=noise, rng=rng, deterministic=deterministic)
    return s.action, s.log_prob


def entropy_log_prob(log_prob, policy: GaussianPolicy, hyper: SacHyper):
    """Log-density used by the entropy terms of the objectives."""
    if hyper.entropy_unit_box:
        return log_prob + policy.action_dim * math.log(policy.action_scale)
    return log_prob


def actor_input(batch_s_i, batch_s_o, c=None):
    parts = [batch_s_i, batch_s_o] if c is None else [batch_s_i, batch_s_o, c]
    return np.concatenate(parts, axis=-1)


def critic_input(s_i, s_o, a, c=None):
    parts = [s_i, s_o, a] if c is None else [s_i, s_o, a, c]
    return np.concatenate(parts, axis=-1)


def td_target(batch: Batch, critics: CriticPair, policy: GaussianPolicy,
              influence: InfluenceEstimator | None, hyper: SacHyper, rng=None, noise=None) -> np.ndarray:
    """Entropy-regularized bootstrap target; safety terminations mask the bootstrap."""
    if (influence is None) != (batch.c_i is None):
        raise ValueError("influence estimator and batch influence column must both be present or absent")
    c_next = None if influence is None else nn.predict(influence.target_network, batch.s_o_next)
    s = policy_sample(policy, actor_input(batch.s_i_next, batch.s_o_next, c_next), noise=noise, rng=rng)
    q_in = critic_input(batch.s_i_next, batch.s_o_next, s.action, c_next)
    q_min = np.minimum(nn.predict(critics.q1_target, q_in), nn.predict(critics.q2_target, q_in))[:, 0]
    ent = hyper.alpha * entropy_log_prob(s.log_prob, policy, hyper)
    soft = q_min - ent if hyper.entropy_sign == "standard" else q_min + ent
    return batch.reward + hyper.gamma * (1.0 - batch.done) * soft


def critic_loss_and_grad(q: nn.DenseNetwork, inputs, y) -> tuple[float, nn.GradientBundle]:
    """Mean squared TD error and its parameter gradient."""
    pred, cache = nn.forward(q, inputs)
    err = pred[:, 0] - y
    loss = float(np.mean(err ** 2))
    upstream = (2.0 / err.size) * err[:, None]
    grads, _ = nn.backward(q, cache, upstream)
    return loss, grads


def critic_update(critics: CriticPair, batch: Batch, y, opts: tuple[nn.AdamState, nn.AdamState]) -> tuple[float, float]:
    inputs = critic_input(batch.s_i, batch.s_o, batch.a_i, batch.c_i)
    losses = []
    for q, opt in zip((critics.q1, critics.q2), opts):
        loss, grads = critic_loss_and_grad(q, inputs, y)
        if not math.isfinite(loss):
            raise nn.NonFiniteError(f"non-finite critic loss {loss}")
        nn.adam_step(q, grads, opt)
        losses.append(loss)
    return losses[0], losses[1]


def actor_objective_and_grad(policy: GaussianPolicy, q1: nn.DenseNetwork, s_i, s_o, c, noise,
                             hyper: SacHyper) -> tuple[float, nn.GradientBundle]:
    """Mean of ``alpha * log pi(a|.) - Q1(., a, c)`` for reparameterized ``a``, and its gradient."""
    s = policy_sample(policy, actor_input(s_i, s_o, c), noise=noise)
    n = s.action.shape[0]
    q, q_cache = nn.forward(q1, critic_input(s_i, s_o, s.action, c))
    logp = entropy_log_prob(s.log_prob, policy, hyper)
    objective = float(np.mean(hyper.alpha * logp - q[:, 0]))

    _, dq_din = nn.backward(q1, q_cache, np.full_like(q, -1.0 / n), input_only=True)
    a0 = s_i.shape[1] + s_o.shape[1]
    d_action = dq_din[:, a0:a0 + policy.action_dim]
    t = s.squashed
    one_m = 1.0 - t ** 2
    w = hyper.alpha / n
    # u = mu + sigma * noise; log pi contributes through the tanh Jacobian and through -log sigma
    d_u = d_action * policy.action_scale * one_m + w * 2.0 * t * one_m / (one_m + SQUASH_EPS)
    d_mean = d_u
    d_log_std = d_u * np.exp(s.log_std) * s.noise - w
    grads, _ = nn.backward(policy.network, s.cache, np.concatenate([d_mean, d_log_std], axis=1))
    return objective, grads


def actor_update(policy: GaussianPolicy, critics: CriticPair, batch: Batch, hyper: SacHyper,
                 opt: nn.AdamState, rng=None, noise=None) -> float:
    """One Adam step on the actor; bootstraps use stored influence ``batch.c_i``."""
    if noise is None:
        noise = rng.standard_normal((len(batch), policy.action_dim))
    objective, grads = actor_objective_and_grad(policy, critics.q1, batch.s_i, batch.s_o, batch.c_i, noise, hyper)
    nn.adam_step(policy.network, grads, opt)
    return objective


def synchronize_targets(critics: CriticPair, influence: InfluenceEstimator | None, tau: float) -> None:
    """Polyak-average the critic targets and the influence target; there is no target actor."""
    nn.soft_update(critics.q1_target, critics.q1, tau)
    nn.soft_update(critics.q2_target, critics.q2, tau)
    if influence is not None:
        nn.soft_update(influence.target_network, influence.network, tau)

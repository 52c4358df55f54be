"""One learning agent: its networks, optimizers, replay buffer and update cadence.

The same class serves all three configurations; the centralized baseline is
a single agent over the joint state and action, the decentralized modes run
one agent per arm, with or without an influence estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cien, nn, sac
from .replay import Batch, ReplayBuffer, Transition

MODES = ("centralized", "cien_sac", "independent")


@dataclass(frozen=True)
class AgentDims:
    state_dim: int  # s_i: own arm state (joint arm state when centralized)
    object_dim: int
    action_dim: int
    influence_dim: int
    hidden: tuple[int, ...]
    cien_hidden: tuple[int, ...] = cien.CIEN_HIDDEN

    @property
    def actor_in(self) -> int:
        return self.state_dim + self.object_dim + self.influence_dim

    @property
    def critic_in(self) -> int:
        return self.actor_in + self.action_dim


class IsolationMonitor:
    """Counts reads of another agent's data; decentralized runs must stay at zero."""

    def __init__(self):
        self.cross_agent_accesses = 0

    def record(self, reader: int, owner: int | None):
        if owner is not None and owner != reader:
            self.cross_agent_accesses += 1


class Agent:
    def __init__(self, agent_id: int, dims: AgentDims, hyper: sac.SacHyper, rng: np.random.Generator,
                 action_scale: float = 0.05, dtype=np.float64, zero_init: bool = False,
                 monitor: IsolationMonitor | None = None):
        self.agent_id = agent_id
        self.dims = dims
        self.hyper = hyper
        init_rng, self.rng = rng.spawn(2)
        self.policy = sac.make_policy(dims.actor_in, dims.action_dim, dims.hidden, init_rng,
                                      action_scale, zero=zero_init, dtype=dtype)
        self.critics = sac.make_critics(dims.critic_in, dims.hidden, init_rng, zero=zero_init, dtype=dtype)
        self.estimator = (
            cien.make_estimator(init_rng, dims.cien_hidden, zero=zero_init, dtype=dtype)
            if dims.influence_dim else None
        )
        self.monitor = monitor or IsolationMonitor()
        self.reset_optimizers()
        self.reset_buffer()
        self.update_count = 0

    @property
    def uses_influence(self) -> bool:
        return self.estimator is not None

    def reset_optimizers(self):
        lr = self.hyper.learning_rate
        self.opt_q1 = nn.AdamState.for_network(self.critics.q1, lr)
        self.opt_q2 = nn.AdamState.for_network(self.critics.q2, lr)
        self.opt_actor = nn.AdamState.for_network(self.policy.network, lr)
        self.opt_cien = nn.AdamState.for_network(self.estimator.network, lr) if self.estimator else None

    def reset_buffer(self):
        d = self.dims
        self.buffer = ReplayBuffer(self.hyper.buffer_capacity, d.state_dim, d.object_dim, d.action_dim,
                                   d.influence_dim, owner=self.agent_id)

    def influence(self, s_o) -> np.ndarray | None:
        if self.estimator is None:
            return None
        return cien.estimate(self.estimator, s_o)

    def act(self, s_i, s_o, deterministic: bool = False) -> tuple[np.ndarray, np.ndarray | None]:
        c = self.influence(s_o)
        action, _ = sac.sample_action(self.policy, sac.actor_input(s_i, s_o, c), rng=self.rng,
                                      deterministic=deterministic)
        return action, c

    def random_action(self) -> np.ndarray:
        bound = self.policy.action_scale
        return self.rng.uniform(-bound, bound, size=self.dims.action_dim)

    def store(self, t: Transition):
        self.buffer.push(t)

    def ready(self) -> bool:
        return len(self.buffer) >= self.hyper.batch_size

    def update(self) -> tuple[float, float | None]:
        """One critic step; every ``policy_delay``-th call also actor, CIEN and targets.

        Returns the mean critic loss and the actor objective (``None`` on critic-only steps).
        """
        h = self.hyper
        batch: Batch = self.buffer.sample(h.batch_size, self.rng)
        self.monitor.record(self.agent_id, batch.owner)
        y = sac.td_target(batch, self.critics, self.policy, self.estimator, h, rng=self.rng)
        l1, l2 = sac.critic_update(self.critics, batch, y, (self.opt_q1, self.opt_q2))
        self.update_count += 1
        actor_obj = None
        if self.update_count % h.policy_delay == 0:
            actor_obj = sac.actor_update(self.policy, self.critics, batch, h, self.opt_actor, rng=self.rng)
            if self.estimator is not None:
                cien.cien_update(self.estimator, self.critics.q1, batch.s_i, batch.s_o, batch.a_i, self.opt_cien)
            sac.synchronize_targets(self.critics, self.estimator, h.tau)
        return 0.5 * (l1 + l2), actor_obj

    # -- persistence -------------------------------------------------------
    def networks(self) -> dict[str, nn.DenseNetwork]:
        nets = {
            "actor": self.policy.network,
            "q1": self.critics.q1,
            "q2": self.critics.q2,
            "q1_target": self.critics.q1_target,
            "q2_target": self.critics.q2_target,
        }
        if self.estimator is not None:
            nets["cien"] = self.estimator.network
            nets["cien_target"] = self.estimator.target_network
        return nets

    def optimizers(self) -> dict[str, nn.AdamState]:
        opts = {"actor": self.opt_actor, "q1": self.opt_q1, "q2": self.opt_q2}
        if self.opt_cien is not None:
            opts["cien"] = self.opt_cien
        return opts

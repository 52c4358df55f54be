"""Collective influence estimation network (CIEN).

The estimator maps the task-object state ``(height, tilt)`` to a 2-dim
collective-influence vector in ``[-1, 1]^2``. Its size does not depend on the
number of agents. It is trained by ascending the first critic's value with
the influence slots of the critic input replaced by the estimator output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

OBJECT_DIM = 2
INFLUENCE_DIM = 2
CIEN_HIDDEN = (128, 128)


@dataclass
class InfluenceEstimator:
    network: nn.DenseNetwork
    target_network: nn.DenseNetwork

    @property
    def layer_sizes(self) -> list[int]:
        return list(self.network.layer_sizes)

    def copy(self) -> "InfluenceEstimator":
        return InfluenceEstimator(self.network.copy(), self.target_network.copy())


def make_estimator(rng: np.random.Generator | None = None, hidden=CIEN_HIDDEN, zero: bool = False,
                   dtype=np.float64) -> InfluenceEstimator:
    sizes = [OBJECT_DIM, *hidden, INFLUENCE_DIM]
    net = nn.init_network(sizes, rng, "relu", "tanh", dtype=dtype, zero=zero)
    return InfluenceEstimator(net, net.copy())


def estimate(est: InfluenceEstimator, object_state, use_target: bool = False) -> np.ndarray:
    """Influence for one object state ``(2,)`` or a batch ``(B, 2)``."""
    if hasattr(object_state, "as_array"):
        object_state = object_state.as_array()
    net = est.target_network if use_target else est.network
    return nn.predict(net, object_state)


def cien_objective(est: InfluenceEstimator, critic: nn.DenseNetwork, s_i, s_o, a_i) -> float:
    """Empirical mean of ``-Q1(s_i, s_o, a_i, e(s_o))``."""
    c = nn.predict(est.network, s_o)
    q = nn.predict(critic, np.concatenate([s_i, s_o, a_i, c], axis=1))
    return float(-np.mean(q))


def cien_gradient(est: InfluenceEstimator, critic: nn.DenseNetwork, s_i, s_o, a_i) -> tuple[nn.GradientBundle, float]:
    """Gradient of :func:`cien_objective` w.r.t. the online estimator parameters.

    The critic's input gradient on the trailing influence slots is pushed back
    through the estimator; critic parameters receive nothing.
    """
    s_i, s_o, a_i = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (s_i, s_o, a_i))
    width = s_i.shape[1] + s_o.shape[1] + a_i.shape[1] + INFLUENCE_DIM
    if critic.in_dim != width:
        raise nn.ShapeError(f"critic expects input {critic.in_dim}, batch gives {width}")
    batch = s_o.shape[0]
    c, c_cache = nn.forward(est.network, s_o)
    q, q_cache = nn.forward(critic, np.concatenate([s_i, s_o, a_i, c], axis=1))
    _, dq_din = nn.backward(critic, q_cache, np.full_like(q, -1.0 / batch), input_only=True)
    grads, _ = nn.backward(est.network, c_cache, dq_din[:, -INFLUENCE_DIM:])
    return grads, float(-np.mean(q))


def cien_update(est: InfluenceEstimator, critic: nn.DenseNetwork, s_i, s_o, a_i, opt: nn.AdamState) -> float:
    grads, objective = cien_gradient(est, critic, s_i, s_o, a_i)
    nn.adam_step(est.network, grads, opt)
    return objective

"""Finite-difference audit of the three training objectives on small random networks."""

from __future__ import annotations

import numpy as np

from . import cien, nn, sac

FAMILIES = ("critic", "actor", "cien")


def _problem(seed: int, width: int, batch: int):
    rng = np.random.default_rng(seed)
    hyper = sac.SacHyper(alpha=float(rng.uniform(0.05, 0.5)))
    s_i = rng.normal(size=(batch, 6))
    s_o = np.column_stack([rng.uniform(0.8, 1.4, batch), rng.uniform(0.0, 0.5, batch)])
    a = rng.uniform(-0.05, 0.05, size=(batch, 3))
    c = rng.uniform(-1, 1, size=(batch, 2))
    return rng, hyper, s_i, s_o, a, c


def check_critic(seed: int, width: int = 16, batch: int = 4, eps: float = 1e-5) -> float:
    rng, _, s_i, s_o, a, c = _problem(seed, width, batch)
    q = sac.make_critics(13, (width, width), rng).q1
    x = sac.critic_input(s_i, s_o, a, c)
    y = rng.normal(size=batch)
    _, grads = sac.critic_loss_and_grad(q, x, y)
    num = nn.numerical_gradient(q, lambda: sac.critic_loss_and_grad(q, x, y)[0], eps)
    return nn.relative_error(grads.flat(), num)


def check_actor(seed: int, width: int = 16, batch: int = 4, eps: float = 1e-5) -> float:
    rng, hyper, s_i, s_o, _, c = _problem(seed, width, batch)
    policy = sac.make_policy(10, 3, (width, width), rng)
    q1 = sac.make_critics(13, (width, width), rng).q1
    noise = rng.normal(size=(batch, 3))

    def f():
        return sac.actor_objective_and_grad(policy, q1, s_i, s_o, c, noise, hyper)[0]

    _, grads = sac.actor_objective_and_grad(policy, q1, s_i, s_o, c, noise, hyper)
    num = nn.numerical_gradient(policy.network, f, eps)
    return nn.relative_error(grads.flat(), num)


def check_cien(seed: int, width: int = 16, batch: int = 4, eps: float = 1e-5) -> float:
    rng, _, s_i, s_o, a, _ = _problem(seed, width, batch)
    est = cien.make_estimator(rng, (width, width))
    q1 = sac.make_critics(13, (width, width), rng).q1
    grads, _ = cien.cien_gradient(est, q1, s_i, s_o, a)
    num = nn.numerical_gradient(est.network, lambda: cien.cien_objective(est, q1, s_i, s_o, a), eps)
    return nn.relative_error(grads.flat(), num)


CHECKS = {"critic": check_critic, "actor": check_actor, "cien": check_cien}


def run_gradcheck(n_seeds: int = 20, width: int = 16, families=FAMILIES) -> dict[str, float]:
    """Worst relative error per objective family over ``n_seeds`` random problems."""
    return {fam: max(CHECKS[fam](seed, width) for seed in range(n_seeds)) for fam in families}

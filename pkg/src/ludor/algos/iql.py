"""Implicit Q-learning with a deterministic actor and weighted critic/actor losses."""
from __future__ import annotations

import numpy as np

from ..errors import TrainingError
from ..nn import mlp_apply, mlp_backward, mlp_forward, soft_update
from .losses import expectile_loss, weighted_actor_loss
from .td3bc import _adam, bc_term, critic_loss


def value_loss(v, states, target_q, tau):
    """Expectile regression of ``V(s)`` toward ``target_q``.

    Returns ``(loss, grad, advantage)`` with ``advantage = target_q - V(s)``.
    """
    vv, cache = mlp_forward(v, states)
    adv = target_q - vv[:, 0]
    loss, g_adv = expectile_loss(adv, tau)
    return loss, mlp_backward(v, cache, (-g_adv)[:, None]), adv


def awr_actor_loss(actor, states, actions, exp_adv, weights, extra=None):
    """Weighted ``exp_adv * ||pi(s) - a||^2`` (advantage-weighted regression).

    ``extra=(states_d, actions_d)`` adds the combined-loss baseline's BC term.
    Returns ``(loss, grad)``; ``grad`` is None when the batch is skipped.
    """
    pi, cache = mlp_forward(actor, states)
    diff = pi - actions
    sq = np.sum(diff * diff, axis=1)
    loss, scale = weighted_actor_loss(-exp_adv * sq, weights)
    if scale is None:
        return loss, None
    grad = mlp_backward(actor, cache, (scale * exp_adv)[:, None] * 2.0 * diff)
    if extra is not None and len(extra[0]):
        l2, g2 = bc_term(actor, *extra)
        loss += l2
        grad = grad + g2
    return loss, grad


def iql_step(bundle, batch, weights, config, step: int, rng=None, extra=None):
    """One IQL update: value expectile, weighted critics, weighted AWR actor.

    The critic target uses ``V(s')`` from before this step's value update and
    the actor uses the advantage measured before it. ``rng`` is unused (IQL
    draws no noise) and accepted for a uniform step signature.
    """
    nets, opt = dict(bundle.nets), dict(bundle.opt)
    s, a = batch.states, batch.actions
    next_v = mlp_apply(nets["v"], batch.next_states)[:, 0]
    x = np.concatenate([s, a], axis=1)
    target_q = np.minimum(mlp_apply(nets["q1_target"], x), mlp_apply(nets["q2_target"], x))[:, 0]

    metrics = {}
    v_loss, v_grad, adv = value_loss(nets["v"], s, target_q, config.iql_tau)
    metrics["v_loss"] = v_loss
    _adam(nets, opt, "v", v_grad, step)

    target = batch.rewards + (1.0 - batch.dones) * config.discount * next_v
    if not np.all(np.isfinite(target)):
        raise TrainingError("non-finite critic target", step=step)
    for name in ("q1", "q2"):
        loss, grad, _ = critic_loss(nets[name], s, a, target, weights)
        metrics[f"{name}_loss"] = loss
        if grad is not None:
            _adam(nets, opt, name, grad, step)

    exp_adv = np.exp(np.minimum(config.beta * adv, np.log(config.exp_adv_max)))
    loss, grad = awr_actor_loss(nets["actor"], s, a, exp_adv, weights, extra=extra)
    metrics["actor_loss"] = loss
    metrics["mean_adv"] = float(np.mean(adv))
    if grad is not None:
        _adam(nets, opt, "actor", grad, step)
    for src in ("q1", "q2"):
        nets[f"{src}_target"] = soft_update(nets[f"{src}_target"], nets[src], config.tau)
    return bundle.update(nets, opt), metrics

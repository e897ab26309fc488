"""TD3+BC with per-sample discrepancy weights on the critic and actor losses."""
from __future__ import annotations

import numpy as np

from ..errors import TrainingError
from ..nn import adam_step, mlp_apply, mlp_backward, mlp_forward, soft_update
from .losses import mse_loss, weighted_actor_loss, weighted_critic_loss


def critic_loss(q, states, actions, target, weights):
    """Weighted squared TD error of one critic against a fixed target.

    Returns ``(loss, grad, td)``; ``grad`` is None when the batch is skipped.
    """
    qv, cache = mlp_forward(q, np.concatenate([states, actions], axis=1))
    td = qv[:, 0] - target
    loss, scale = weighted_critic_loss(td * td, weights)
    if scale is None:
        return loss, None, td
    return loss, mlp_backward(q, cache, (2.0 * scale * td)[:, None]), td


def bc_term(policy, states, actions):
    """Mean squared action error of ``policy`` on ``(states, actions)``."""
    pred, cache = mlp_forward(policy, states)
    loss, g = mse_loss(pred, actions)
    return loss, mlp_backward(policy, cache, g)


def actor_loss(actor, q1, states, actions, weights, alpha, lam=None, extra=None):
    """Weighted ``-lam * Q1(s, pi(s)) + mean_j (pi(s)_j - a_j)^2``.

    ``lam = alpha / mean|Q1(s, pi(s))|`` is a constant of the step (it carries
    no gradient); pass ``lam`` to pin it. ``extra=(states_d, actions_d)`` adds
    the unlabeled-data BC term of the combined-loss baseline. Returns
    ``(loss, grad, info)``.
    """
    sd = states.shape[1]
    pi, cache = mlp_forward(actor, states)
    qv, qcache = mlp_forward(q1, np.concatenate([states, pi], axis=1))
    qv = qv[:, 0]
    if lam is None:
        lam = alpha / max(float(np.mean(np.abs(qv))), 1e-12)
    diff = pi - actions
    bc = np.mean(diff * diff, axis=1)
    loss, scale = weighted_actor_loss(lam * qv - bc, weights)
    info = {"lam": lam, "actor_q": float(np.mean(qv)), "actor_bc": float(np.mean(bc))}
    if scale is None:
        return loss, None, info
    _, gin = mlp_backward(q1, qcache, (-lam * scale)[:, None], input_grad=True)
    gpi = gin[:, sd:] + scale[:, None] * 2.0 * diff / diff.shape[1]
    grad = mlp_backward(actor, cache, gpi)
    if extra is not None and len(extra[0]):
        l2, g2 = bc_term(actor, *extra)
        loss += l2
        grad = grad + g2
        info["extra_bc"] = l2
    return loss, grad, info


def _adam(nets, opt, name, grad, step):
    try:
        nets[name], opt[name] = adam_step(nets[name], grad, opt[name])
    except TrainingError as exc:
        raise TrainingError(f"{name}: {exc}", step=step) from exc


def td3bc_step(bundle, batch, weights, config, step: int, rng, extra=None):
    """One TD3+BC update on ``batch`` with per-sample ``weights``.

    Both critics regress to ``r + gamma (1 - done) min(Q1', Q2')(s', a')`` with
    ``a'`` the clipped, noised target-actor action. Every ``policy_freq``-th
    step (``step`` is 1-based) the actor is updated and all targets move by
    ``tau``. Returns ``(bundle, metrics)``.
    """
    nets, opt = dict(bundle.nets), dict(bundle.opt)
    ma = bundle.max_action
    s, a = batch.states, batch.actions
    noise = np.clip(
        rng.normal(size=a.shape) * config.policy_noise * ma, -config.noise_clip * ma, config.noise_clip * ma
    )
    a2 = np.clip(mlp_apply(nets["actor_target"], batch.next_states) + noise, -ma, ma)
    x2 = np.concatenate([batch.next_states, a2], axis=1)
    target_q = np.minimum(mlp_apply(nets["q1_target"], x2), mlp_apply(nets["q2_target"], x2))[:, 0]
    target = batch.rewards + (1.0 - batch.dones) * config.discount * target_q
    if not np.all(np.isfinite(target)):
        raise TrainingError("non-finite critic target", step=step)

    metrics = {}
    for name in ("q1", "q2"):
        loss, grad, _ = critic_loss(nets[name], s, a, target, weights)
        metrics[f"{name}_loss"] = loss
        if grad is not None:
            _adam(nets, opt, name, grad, step)

    if step % config.policy_freq == 0:
        loss, grad, info = actor_loss(nets["actor"], nets["q1"], s, a, weights, config.alpha, extra=extra)
        metrics["actor_loss"] = loss
        metrics.update(info)
        if grad is not None:
            _adam(nets, opt, "actor", grad, step)
        for src in ("actor", "q1", "q2"):
            nets[f"{src}_target"] = soft_update(nets[f"{src}_target"], nets[src], config.tau)
    return bundle.update(nets, opt), metrics

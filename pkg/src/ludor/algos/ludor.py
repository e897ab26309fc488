"""Teacher-student wrapper around an actor-critic base learner.

Per training step, in order: BC update of the teacher on an unlabeled batch
(every ``teacher_update_freq`` steps), EMA of the teacher into the student,
discrepancy weights between dataset and teacher actions, then the base
learner's weighted critic and actor updates and target moves.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..nn import adam_step, ema_blend, mlp_apply
from .bundle import pair_batch
from .iql import iql_step
from .losses import discrepancy, uniform_weights
from .td3bc import bc_term, td3bc_step

BASE_STEPS = {"td3bc": td3bc_step, "iql": iql_step}

PHASES = ("teacher_bc", "ema", "kappa", "critic", "actor", "target")


def teacher_bc_step(teacher, state, batch):
    """One Adam step on the mean squared action error. Returns ``(teacher, state, loss)``."""
    if len(batch) == 0:
        raise ConfigurationError("teacher BC needs a non-empty batch")
    loss, grad = bc_term(teacher, batch.states, batch.actions)
    teacher, state = adam_step(teacher, grad, state)
    return teacher, state, loss


def pretrain_teacher(bundle, unlabeled, config, rng):
    """``pretrain_num_epochs`` epochs of teacher BC over ``unlabeled``, then copy it into the student.

    Returns ``(bundle, losses)`` with one loss per minibatch. With zero epochs
    the bundle is returned untouched.
    """
    if config.pretrain_num_epochs == 0:
        return bundle, []
    n = len(unlabeled)
    if n == 0:
        raise ConfigurationError("cannot pretrain the teacher on an empty dataset")
    teacher, state = bundle["teacher"], bundle.opt["teacher"]
    losses = []
    for _ in range(config.pretrain_num_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = pair_batch(unlabeled, order[start : start + config.batch_size])
            teacher, state, loss = teacher_bc_step(teacher, state, batch)
            losses.append(loss)
    nets = {"teacher": teacher, "actor": teacher.copy()}
    if "actor_target" in bundle.nets:
        nets["actor_target"] = teacher.copy()
    return bundle.update(nets, {"teacher": state}), losses


def ludor_train_step(bundle, labeled_batch, unlabeled_batch, config, step: int, rng, extra=None):
    """One teacher-student iteration. ``step`` is 1-based.

    ``metrics["phases"]`` lists the phases executed, in order.
    """
    phases = []
    metrics = {}
    nets, opt = {}, {}
    teacher = bundle["teacher"]
    if config.use_teacher and step % config.teacher_update_freq == 0:
        teacher, opt["teacher"], metrics["teacher_loss"] = teacher_bc_step(teacher, bundle.opt["teacher"], unlabeled_batch)
        nets["teacher"] = teacher
        phases.append("teacher_bc")
    if config.use_ema:
        nets["actor"] = ema_blend(bundle["actor"], teacher, config.ema)
        phases.append("ema")
    if config.use_teacher and config.measure != "uniform":
        weights = discrepancy(config.measure, labeled_batch.actions, mlp_apply(teacher, labeled_batch.states), config.kl2_std)
    else:
        weights = uniform_weights(len(labeled_batch))
    phases.append("kappa")
    metrics["mean_kappa"] = float(np.mean(weights.values))
    if nets:
        bundle = bundle.update(nets, opt)
    bundle, base_metrics = BASE_STEPS[bundle.base](bundle, labeled_batch, weights, config, step, rng, extra=extra)
    metrics.update(base_metrics)
    phases.append("critic")
    if "actor_loss" in base_metrics:
        phases.extend(["actor", "target"])
    metrics["phases"] = phases
    return bundle, metrics

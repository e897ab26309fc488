"""Comparison methods: plain BC, the combined actor loss, zero-reward merging, reward-model labeling."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..data import LabeledDataset, UnlabeledDataset, recover_successors
from ..envs import env_step, get_env
from ..errors import DatasetError, TrainingError
from ..nn import AdamState, MlpParams, adam_step, build_mlp, make_rng, mlp_apply, mlp_backward, mlp_forward
from .bundle import NetworkBundle
from .iql import iql_step
from .losses import mse_loss, uniform_weights
from .td3bc import bc_term, td3bc_step


def baseline_bc_step(policy, state: AdamState, batch):
    """Behaviour cloning: one Adam step on mean squared action error.

    Returns ``(policy, state, loss)``.
    """
    loss, grad = bc_term(policy, batch.states, batch.actions)
    policy, state = adam_step(policy, grad, state)
    return policy, state, loss


def baseline_combined_step(bundle: NetworkBundle, labeled_batch, unlabeled_batch, config, step: int, rng):
    """Base learner step whose actor loss also clones the unlabeled batch.

    Critics are updated exactly as in the base learner; an empty unlabeled
    batch reduces this to the base learner.
    """
    extra = (unlabeled_batch.states, unlabeled_batch.actions)
    step_fn = td3bc_step if bundle.base == "td3bc" else iql_step
    return step_fn(bundle, labeled_batch, uniform_weights(len(labeled_batch)), config, step, rng, extra=extra)


def _successors(labeled: LabeledDataset, unlabeled: UnlabeledDataset):
    recovered = recover_successors(unlabeled)
    if recovered is not None:
        return recovered, "provenance"
    spec = get_env(labeled.env)
    if len(unlabeled) == 0:
        empty = np.zeros((0, spec.state_dim))
        return (empty, np.zeros(0, bool), np.zeros(0, bool)), "env_step"
    nxt, _, done = env_step(spec, unlabeled.states, unlabeled.actions)
    return (nxt, np.asarray(done, bool), np.zeros(len(unlabeled), bool)), "env_step"


def _merge(labeled, unlabeled, rewards, seed, op):
    if labeled.env != unlabeled.env:
        raise DatasetError(f"cannot merge {unlabeled.env} pairs into a {labeled.env} dataset")
    spec = get_env(labeled.env)
    if len(unlabeled) and unlabeled.states.shape[1] != spec.state_dim:
        raise DatasetError("unlabeled state width does not match the environment")
    if len(unlabeled) == 0:
        return LabeledDataset(
            labeled.env, labeled.tier, labeled.states, labeled.actions, labeled.rewards,
            labeled.next_states, labeled.dones, labeled.timeouts, labeled.provenance + (op,),
        )
    (nxt, dones, timeouts), how = _successors(labeled, unlabeled)
    op["successors"] = how
    cat = lambda x, y: np.concatenate([x, y], axis=0)
    states = cat(labeled.states, unlabeled.states)
    order = make_rng(seed, 13).permutation(len(states))
    return LabeledDataset(
        labeled.env, labeled.tier, states[order], cat(labeled.actions, unlabeled.actions)[order],
        cat(labeled.rewards, rewards)[order], cat(labeled.next_states, nxt)[order],
        cat(labeled.dones, dones)[order], cat(labeled.timeouts, timeouts)[order],
        labeled.provenance + (op,),
    )


def uds_merge(labeled: LabeledDataset, unlabeled: UnlabeledDataset, seed: int = 0) -> LabeledDataset:
    """Add the unlabeled pairs as transitions with reward 0, shuffled with ``seed``.

    Successor states come from the pairs' provenance when they were produced
    by stripping a labeled dataset, otherwise from one environment step.
    """
    op = {"op": "uds_merge", "unlabeled": list(unlabeled.provenance), "seed": int(seed)}
    return _merge(labeled, unlabeled, np.zeros(len(unlabeled)), seed, op)


@dataclass(frozen=True)
class OrilConfig:
    steps: int = 3000
    batch_size: int = 256
    hidden: tuple = (64, 64)
    lr: float = 1e-3

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def fit_reward_model(labeled: LabeledDataset, config: OrilConfig, seed: int):
    """Squared-error regression ``r_hat(s, a) ~ r``. Returns ``(model, losses)``.

    Targets are standardised and the output layer is mapped back, so the
    returned model predicts rewards directly. The output layer starts at zero,
    so away from the labeled data the model falls back towards the mean reward. The learning rate follows a
    cosine decay to zero so Adam settles instead of jittering around the fit.
    """
    if len(labeled) == 0:
        raise DatasetError("reward model needs labeled data")
    x = np.concatenate([labeled.states, labeled.actions], axis=1)
    mean = float(labeled.rewards.mean())
    scale = float(labeled.rewards.std())
    scale = scale if scale > 1e-8 else 1.0
    y = ((labeled.rewards - mean) / scale)[:, None]
    model = _zero_output(build_mlp(x.shape[1], 1, tuple(config.hidden), make_rng(seed, 31)))
    state = AdamState.fresh(model.n_params, config.lr)
    rng = make_rng(seed, 32)
    losses = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(x), size=config.batch_size)
        pred, cache = mlp_forward(model, x[idx])
        loss, g = mse_loss(pred, y[idx])
        if not np.isfinite(loss):
            raise TrainingError("reward model loss diverged", step=step)
        state.lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / config.steps))
        model, state = adam_step(model, mlp_backward(model, cache, g), state)
        losses.append(loss * scale * scale)
    return _rescaled(model, mean, scale), losses


def _zero_output(model):
    layers = list(model.layers)
    w, b = layers[-1]
    layers[-1] = (np.zeros_like(w), np.zeros_like(b))
    return MlpParams.from_layers(layers, model.activations, model.out_scale)


def _rescaled(model, mean, scale):
    """Fold ``mean + scale * out`` into the output layer."""
    layers = list(model.layers)
    w, b = layers[-1]
    layers[-1] = (w * scale, b * scale + mean)
    return MlpParams.from_layers(layers, model.activations, model.out_scale)


def oril_label(labeled: LabeledDataset, unlabeled: UnlabeledDataset, config: OrilConfig | None = None, seed: int = 0):
    """Label the unlabeled pairs with a learned reward model and merge them in."""
    config = config or OrilConfig()
    model, _ = fit_reward_model(labeled, config, seed)
    if len(unlabeled):
        rewards = mlp_apply(model, np.concatenate([unlabeled.states, unlabeled.actions], axis=1))[:, 0]
    else:
        rewards = np.zeros(0)
    op = {"op": "oril_label", "unlabeled": list(unlabeled.provenance), "seed": int(seed), "config": config.to_dict()}
    return _merge(labeled, unlabeled, rewards, seed, op)

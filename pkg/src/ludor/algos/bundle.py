from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..envs import EnvSpec
from ..errors import ConfigurationError
from ..nn import AdamState, MlpParams, build_mlp, make_rng
from .config import BASES, AlgoConfig


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray | None = None
    next_states: np.ndarray | None = None
    dones: np.ndarray | None = None

    def __len__(self):
        return len(self.states)


def labeled_batch(dataset, idx) -> Batch:
    return Batch(
        dataset.states[idx], dataset.actions[idx], dataset.rewards[idx],
        dataset.next_states[idx], dataset.dones[idx].astype(np.float64),
    )


def pair_batch(dataset, idx) -> Batch:
    return Batch(dataset.states[idx], dataset.actions[idx])


@dataclass(frozen=True)
class NetworkBundle:
    """Every network of one learner plus one Adam state per trainable net.

    ``nets`` keys: ``actor`` (the student), ``teacher``, ``q1``, ``q2``,
    ``q1_target``, ``q2_target``, and ``actor_target`` (TD3BC) or ``v`` (IQL).
    ``opt`` holds the Adam states of ``actor``, ``teacher``, ``q1``, ``q2``
    and ``v`` where present.
    """

    base: str
    max_action: float
    nets: dict = field(default_factory=dict)
    opt: dict = field(default_factory=dict)

    def __getitem__(self, name) -> MlpParams:
        return self.nets[name]

    def update(self, nets=None, opt=None) -> "NetworkBundle":
        new_nets = dict(self.nets)
        new_opt = dict(self.opt)
        new_nets.update(nets or {})
        new_opt.update(opt or {})
        if "teacher" in new_nets and not new_nets["actor"].same_shape(new_nets["teacher"]):
            raise ConfigurationError("teacher and student architectures differ")
        return replace(self, nets=new_nets, opt=new_opt)


def make_bundle(spec: EnvSpec, config: AlgoConfig, seed: int, base: str = "td3bc") -> NetworkBundle:
    """Fresh networks for ``base`` on ``spec``; each net gets its own init stream."""
    if base not in BASES:
        raise ConfigurationError(f"unknown base learner {base!r}")
    sd, ad, h = spec.state_dim, spec.action_dim, config.hidden
    nets = {
        "actor": build_mlp(sd, ad, h, make_rng(seed, 21), out_scale=spec.max_action),
        "teacher": build_mlp(sd, ad, h, make_rng(seed, 22), out_scale=spec.max_action),
        "q1": build_mlp(sd + ad, 1, h, make_rng(seed, 23)),
        "q2": build_mlp(sd + ad, 1, h, make_rng(seed, 24)),
    }
    nets["q1_target"] = nets["q1"].copy()
    nets["q2_target"] = nets["q2"].copy()
    if base == "td3bc":
        nets["actor_target"] = nets["actor"].copy()
    else:
        nets["v"] = build_mlp(sd, 1, h, make_rng(seed, 25))
    lrs = {"actor": config.actor_lr, "teacher": config.teacher_lr, "q1": config.qf_lr, "q2": config.qf_lr, "v": config.vf_lr}
    opt = {k: AdamState.fresh(nets[k].n_params, lr) for k, lr in lrs.items() if k in nets}
    return NetworkBundle(base, float(spec.max_action), nets, opt)

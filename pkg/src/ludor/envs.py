"""Toy continuous-control tasks and scripted behaviour policies.

Two tasks ship:

``pointmass-2d``
    State ``(x, y, vx, vy)``, action ``(ax, ay)`` in ``[-2, 2]^2``. Semi-implicit
    Euler with ``dt = 0.1``, linear drag, a constant drift acceleration (a
    steady wind along +x) and a current along +y confined to a band around
    ``x = 0`` (strength ``current * exp(-(x / current_width)^2)``). Reward is minus the distance to the goal at the
    origin after the step. The episode terminates when the mass is within
    ``goal_radius`` of the goal or leaves the ``[-arena, arena]^2`` box, and is
    truncated after ``max_steps``. Resets place the mass uniformly in
    ``[-2, 2]^2`` at distance at least 1 from the goal, velocity uniform in
    ``[-0.1, 0.1]^2``.

``pendulum-swingup``
    The classic torque-limited pendulum. State ``(cos th, sin th, thdot)`` with
    ``th = 0`` upright, torque in ``[-2, 2]``, ``dt = 0.05``, speed clipped to
    ``[-8, 8]``. Reward ``-(th^2 + 0.1 thdot^2 + 0.001 u^2)`` with ``th``
    wrapped to ``[-pi, pi]``; its maximum, 0, is attained upright at rest with
    zero torque. Never terminates; truncated after 200 steps. Resets draw
    ``th ~ U[-pi, pi]`` and ``thdot ~ U[-1, 1]``.

Scripted tiers: ``expert`` is a hand-designed controller (PD toward the goal
that cancels wind and current for the point mass; energy pumping plus PD balance for the pendulum),
``medium`` adds Gaussian noise of std ``medium_noise * max_action`` to the
expert action and clips, ``random`` samples uniformly from the action box.

All functions accept a single state ``(state_dim,)`` or a batch
``(n, state_dim)`` and are pure: callers own the episode state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ConfigurationError, EnvError

TIERS = ("random", "medium", "expert")


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    max_action: float
    max_steps: int
    reward: str
    termination: str
    medium_noise: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.action_dim < 1 or self.state_dim < 1:
            raise ConfigurationError("dimensions must be positive")
        if not np.isfinite(self.max_action) or self.max_action <= 0:
            raise ConfigurationError("action bound must be finite and positive")
        if self.max_steps <= 0:
            raise ConfigurationError("max_steps must be positive")


POINTMASS = EnvSpec(
    name="pointmass-2d",
    state_dim=4,
    action_dim=2,
    max_action=2.0,
    max_steps=100,
    reward="-||position|| after the step",
    termination="||position|| < goal_radius or |x|,|y| > arena",
    medium_noise=0.8,
    params={
        "dt": 0.1,
        "drag": 0.5,
        "drift": (0.4, 0.0),
        "current": 1.5,
        "current_width": 0.3,
        "goal_radius": 0.1,
        "arena": 4.0,
        "reset_box": 2.0,
        "reset_min_dist": 1.0,
        "reset_vel": 0.1,
        "kp": 2.0,
        "kd": 2.5,
    },
)

PENDULUM = EnvSpec(
    name="pendulum-swingup",
    state_dim=3,
    action_dim=1,
    max_action=2.0,
    max_steps=200,
    reward="-(th^2 + 0.1 thdot^2 + 0.001 u^2), th wrapped to [-pi, pi]",
    termination="never (truncated at max_steps)",
    medium_noise=0.6,
    params={
        "dt": 0.05,
        "g": 10.0,
        "m": 1.0,
        "l": 1.0,
        "max_speed": 8.0,
        "reset_vel": 1.0,
        "pump_gain": 0.5,
        "balance_cos": 0.85,
        "kp": 10.0,
        "kd": 2.0,
    },
)

ENVS = {POINTMASS.name: POINTMASS, PENDULUM.name: PENDULUM}


def get_env(name: str) -> EnvSpec:
    try:
        return ENVS[name]
    except KeyError:
        raise ConfigurationError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None


def _batch(x, width):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != width:
        raise ConfigurationError(f"expected trailing dimension {width}, got shape {x.shape}")
    return x2, single


def _unbatch(x, single):
    return x[0] if single else x


def env_reset(spec: EnvSpec, rng: np.random.Generator, n: int | None = None):
    """Initial state(s): one ``(state_dim,)`` vector, or ``(n, state_dim)``."""
    m = 1 if n is None else n
    p = spec.params
    if spec.name == POINTMASS.name:
        box, rmin = p["reset_box"], p["reset_min_dist"]
        pos = rng.uniform(-box, box, size=(m, 2))
        # rejection keeps the start away from the goal
        far = np.linalg.norm(pos, axis=1) >= rmin
        while not far.all():
            k = int((~far).sum())
            pos[~far] = rng.uniform(-box, box, size=(k, 2))
            far = np.linalg.norm(pos, axis=1) >= rmin
        vel = rng.uniform(-p["reset_vel"], p["reset_vel"], size=(m, 2))
        s = np.concatenate([pos, vel], axis=1)
    elif spec.name == PENDULUM.name:
        th = rng.uniform(-np.pi, np.pi, size=m)
        thdot = rng.uniform(-p["reset_vel"], p["reset_vel"], size=m)
        s = np.stack([np.cos(th), np.sin(th), thdot], axis=1)
    else:
        raise ConfigurationError(f"no dynamics registered for {spec.name!r}")
    return s[0] if n is None else s


def _pointmass_drift(p, pos):
    """Constant wind plus a +y current concentrated on the band ``|x| < current_width``."""
    band = p["current"] * np.exp(-((pos[:, 0] / p["current_width"]) ** 2))
    return np.asarray(p["drift"]) + np.stack([np.zeros_like(band), band], axis=1)


def env_step(spec: EnvSpec, state, action, rng: np.random.Generator | None = None):
    """Advance one step. Returns ``(next_state, reward, done)``.

    ``done`` is the termination predicate only; truncation at ``max_steps`` is
    the caller's business since the state carries no clock. ``rng`` is
    accepted for interface uniformity; both shipped tasks are deterministic.
    """
    s, single = _batch(state, spec.state_dim)
    a, _ = _batch(action, spec.action_dim)
    if not np.all(np.isfinite(s)):
        raise EnvError(f"{spec.name}: non-finite state")
    if not np.all(np.isfinite(a)):
        raise EnvError(f"{spec.name}: non-finite action")
    a = np.clip(a, -spec.max_action, spec.max_action)
    p = spec.params
    if spec.name == POINTMASS.name:
        dt = p["dt"]
        pos, vel = s[:, :2], s[:, 2:]
        vel2 = vel + dt * (a - p["drag"] * vel + _pointmass_drift(p, pos))
        pos2 = pos + dt * vel2
        dist = np.linalg.norm(pos2, axis=1)
        reward = -dist
        done = (dist < p["goal_radius"]) | (np.abs(pos2) > p["arena"]).any(axis=1)
        nxt = np.concatenate([pos2, vel2], axis=1)
    elif spec.name == PENDULUM.name:
        dt, g, m, l = p["dt"], p["g"], p["m"], p["l"]
        th = np.arctan2(s[:, 1], s[:, 0])
        thdot = s[:, 2]
        u = a[:, 0]
        reward = -(th**2 + 0.1 * thdot**2 + 0.001 * u**2)
        thdot2 = thdot + (3.0 * g / (2.0 * l) * np.sin(th) + 3.0 / (m * l * l) * u) * dt
        thdot2 = np.clip(thdot2, -p["max_speed"], p["max_speed"])
        th2 = th + thdot2 * dt
        nxt = np.stack([np.cos(th2), np.sin(th2), thdot2], axis=1)
        done = np.zeros(len(s), dtype=bool)
    else:
        raise ConfigurationError(f"no dynamics registered for {spec.name!r}")
    if not np.all(np.isfinite(nxt)):
        raise EnvError(f"{spec.name}: dynamics produced a non-finite state")
    return _unbatch(nxt, single), _unbatch(reward, single), _unbatch(done, single)


def expert_action(spec: EnvSpec, state):
    s, single = _batch(state, spec.state_dim)
    p = spec.params
    if spec.name == POINTMASS.name:
        pos, vel = s[:, :2], s[:, 2:]
        # cancel drift and drag, then PD toward the origin
        a = -p["kp"] * pos - p["kd"] * vel + p["drag"] * vel - _pointmass_drift(p, pos)
    elif spec.name == PENDULUM.name:
        c, sn, thdot = s[:, 0], s[:, 1], s[:, 2]
        th = np.arctan2(sn, c)
        g, m, l = p["g"], p["m"], p["l"]
        # energy relative to upright rest (zero there)
        energy = 0.5 * m * l * l / 3.0 * thdot**2 + 0.5 * m * g * l * (c - 1.0)
        pump = -p["pump_gain"] * energy * np.sign(thdot + 1e-9) * spec.max_action
        balance = -p["kp"] * th - p["kd"] * thdot
        a = np.where(c > p["balance_cos"], balance, pump)[:, None]
    else:
        raise ConfigurationError(f"no expert registered for {spec.name!r}")
    return _unbatch(np.clip(a, -spec.max_action, spec.max_action), single)


def scripted_policy(tier: str, spec: EnvSpec, state, rng: np.random.Generator):
    """Action(s) of the ``random``, ``medium`` or ``expert`` behaviour policy."""
    s, single = _batch(state, spec.state_dim)
    if tier == "random":
        a = rng.uniform(-spec.max_action, spec.max_action, size=(len(s), spec.action_dim))
    elif tier == "expert":
        a = expert_action(spec, s)
    elif tier == "medium":
        noise = rng.normal(0.0, spec.medium_noise * spec.max_action, size=(len(s), spec.action_dim))
        a = np.clip(expert_action(spec, s) + noise, -spec.max_action, spec.max_action)
    else:
        raise ConfigurationError(f"unknown tier {tier!r}; choose from {TIERS}")
    return _unbatch(a, single)


def rollout_returns(spec: EnvSpec, policy, n_episodes: int, rng: np.random.Generator):
    """Undiscounted returns of ``n_episodes`` episodes run side by side.

    ``policy(states)`` maps an ``(n, state_dim)`` batch to actions. Finished
    episodes are frozen; every episode stops at termination or ``max_steps``.
    """
    s = env_reset(spec, rng, n_episodes)
    returns = np.zeros(n_episodes)
    alive = np.ones(n_episodes, dtype=bool)
    for _ in range(spec.max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        a = policy(s[idx])
        nxt, r, done = env_step(spec, s[idx], a)
        returns[idx] += r
        s[idx] = nxt
        alive[idx[done]] = False
    return returns


# -- normalisation -----------------------------------------------------------


@dataclass(frozen=True)
class ScoreReference:
    env: str
    random_return: float
    expert_return: float

    def __post_init__(self):
        if not self.expert_return > self.random_return:
            raise ConfigurationError(
                f"{self.env}: expert reference {self.expert_return} must exceed random {self.random_return}"
            )


def normalized_score(raw_return, ref: ScoreReference):
    """``100 * (return - random) / (expert - random)``."""
    span = ref.expert_return - ref.random_return
    if not span > 0:
        raise ConfigurationError("degenerate score reference")
    return 100.0 * (np.asarray(raw_return, dtype=np.float64) - ref.random_return) / span


REFERENCE_SEED = 20240
REFERENCE_EPISODES = 20000


def compute_reference(spec: EnvSpec, episodes: int = REFERENCE_EPISODES, seed: int = REFERENCE_SEED):
    """Mean random- and expert-policy returns over a fixed seed set."""
    from .nn import make_rng

    means = {}
    for i, tier in enumerate(("random", "expert")):
        act_rng = make_rng(seed, 100 + i)
        pol = lambda s, tier=tier: scripted_policy(tier, spec, s, act_rng)
        means[tier] = float(rollout_returns(spec, pol, episodes, make_rng(seed, 1)).mean())
    return ScoreReference(spec.name, means["random"], means["expert"])


_REFERENCES = None


def load_references() -> dict:
    """The versioned reference table shipped as ``references.json``."""
    global _REFERENCES
    if _REFERENCES is None:
        text = resources.files("ludor").joinpath("references.json").read_text()
        raw = json.loads(text)
        _REFERENCES = {
            name: ScoreReference(name, v["random_return"], v["expert_return"])
            for name, v in raw["references"].items()
        }
    return _REFERENCES


def get_reference(name: str) -> ScoreReference:
    refs = load_references()
    if name not in refs:
        raise ConfigurationError(f"no score reference for {name!r}")
    return refs[name]

"""Offline datasets: generation, OOD carving, filtering, subsampling, storage.

Datasets are immutable; every transform returns a new dataset whose
``provenance`` is the parent's plus one operation record. Replaying the
records with :func:`replay` rebuilds the dataset byte for byte.

On-disk format (``.ods``): 8-byte magic ``LDODS001``, uint64 little-endian
header length, a UTF-8 JSON header (kind, env, tier, dims, count, column
layout, provenance), then a row-major little-endian float64 block with one row
per sample. Labeled rows are ``state | action | reward | next_state | done |
timeout``; unlabeled rows are ``state | action``.
"""
from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import TIERS, env_reset, env_step, get_env, scripted_policy
from .errors import ConfigurationError, DatasetError
from .nn import make_rng

ODS_MAGIC = b"LDODS001"


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


def _frozen(a, dtype=np.float64, ndim=2):
    a = np.array(a, dtype=dtype)
    if a.ndim != ndim:
        raise DatasetError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Transitions ``(s, a, r, s', done)`` plus a ``timeouts`` flag.

    ``dones`` mark true terminations and gate bootstrapping; ``timeouts`` mark
    truncation at the episode step cap. Together they delimit episodes.
    """

    env: str
    tier: str
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    timeouts: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        spec = get_env(self.env)
        for name, ndim, dtype in (
            ("states", 2, np.float64),
            ("actions", 2, np.float64),
            ("rewards", 1, np.float64),
            ("next_states", 2, np.float64),
            ("dones", 1, bool),
            ("timeouts", 1, bool),
        ):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype, ndim))
        n = len(self.states)
        if not all(len(x) == n for x in (self.actions, self.rewards, self.next_states, self.dones, self.timeouts)):
            raise DatasetError("dataset columns differ in length")
        if n and (self.states.shape[1] != spec.state_dim or self.next_states.shape[1] != spec.state_dim):
            raise DatasetError(f"state width does not match {self.env}")
        if n and self.actions.shape[1] != spec.action_dim:
            raise DatasetError(f"action width does not match {self.env}")
        if not np.all(np.isfinite(self.rewards)):
            raise DatasetError("non-finite reward")
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]), self.next_states[i], bool(self.dones[i]))

    def take(self, idx, op: dict) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.env, self.tier, self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.dones[idx], self.timeouts[idx], self.provenance + (op,),
        )


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    """State-action pairs only."""

    env: str
    tier: str
    states: np.ndarray
    actions: np.ndarray
    provenance: tuple = ()

    def __post_init__(self):
        spec = get_env(self.env)
        object.__setattr__(self, "states", _frozen(self.states))
        object.__setattr__(self, "actions", _frozen(self.actions))
        if len(self.states) != len(self.actions):
            raise DatasetError("states and actions differ in length")
        if len(self) and (self.states.shape[1] != spec.state_dim or self.actions.shape[1] != spec.action_dim):
            raise DatasetError(f"pair widths do not match {self.env}")
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return len(self.states)

    def take(self, idx, op: dict) -> "UnlabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return UnlabeledDataset(self.env, self.tier, self.states[idx], self.actions[idx], self.provenance + (op,))


@dataclass(frozen=True)
class CarveSpec:
    """Which transitions :func:`carve_ood` deletes.

    ``mode="densest"`` selects the shortest histogram-bin run holding
    ``mass`` of the samples along ``dim``; ``mode="range"`` uses ``[lo, hi]``.
    ``removal_ratio`` of the selected transitions is then deleted.
    """

    dim: int
    removal_ratio: float
    mode: str = "densest"
    lo: float | None = None
    hi: float | None = None
    bins: int = 50
    mass: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.removal_ratio <= 1.0:
            raise ConfigurationError(f"removal_ratio must be in [0, 1], got {self.removal_ratio}")
        if self.mode not in ("densest", "range"):
            raise ConfigurationError(f"unknown carve mode {self.mode!r}")
        if self.mode == "range" and (self.lo is None or self.hi is None or self.lo > self.hi):
            raise ConfigurationError("range mode needs lo <= hi")
        if self.bins < 1:
            raise ConfigurationError("bins must be positive")
        if not 0.0 < self.mass < 1.0:
            raise ConfigurationError(f"mass must be in (0, 1), got {self.mass}")

    def validate(self, state_dim):
        if not 0 <= self.dim < state_dim:
            raise ConfigurationError(f"carve dim {self.dim} out of range for state dim {state_dim}")


# -- generation --------------------------------------------------------------


def generate_dataset(env: str, tier: str, n_transitions: int, seed: int) -> LabeledDataset:
    """Roll out the tier's scripted policy until ``n_transitions`` are collected."""
    if n_transitions <= 0:
        raise ConfigurationError("n_transitions must be positive")
    if tier not in TIERS:
        raise ConfigurationError(f"unknown tier {tier!r}")
    spec = get_env(env)
    reset_rng, act_rng = make_rng(seed, 1), make_rng(seed, 2)
    sd, ad = spec.state_dim, spec.action_dim
    S = np.empty((n_transitions, sd))
    A = np.empty((n_transitions, ad))
    R = np.empty(n_transitions)
    S2 = np.empty((n_transitions, sd))
    D = np.zeros(n_transitions, dtype=bool)
    T = np.zeros(n_transitions, dtype=bool)
    s = env_reset(spec, reset_rng)
    t = 0
    for i in range(n_transitions):
        a = scripted_policy(tier, spec, s, act_rng)
        s2, r, done = env_step(spec, s, a)
        t += 1
        S[i], A[i], R[i], S2[i], D[i] = s, a, r, s2, done
        if done or t >= spec.max_steps:
            T[i] = not done
            s = env_reset(spec, reset_rng)
            t = 0
        else:
            s = s2
    op = {"op": "generate", "env": env, "tier": tier, "n": int(n_transitions), "seed": int(seed)}
    return LabeledDataset(env, tier, S, A, R, S2, D, T, (op,))


# -- OOD carving -------------------------------------------------------------


def _column(dataset, dim):
    states = dataset.states
    if not 0 <= dim < states.shape[1]:
        raise ConfigurationError(f"dim {dim} out of range for state width {states.shape[1]}")
    return states[:, dim]


def densest_segment(values, bin_count: int = 50, mass: float = 0.6):
    """Shortest contiguous run of histogram bins holding at least ``mass``.

    ``values`` is a 1-d sample. Among equally short runs the leftmost wins.
    Returns ``(lo, hi)``, the outer edges of the run. A constant sample yields
    the degenerate interval ``(v, v)`` with a warning.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DatasetError("densest_segment needs a non-empty 1-d sample")
    if not 0.0 < mass < 1.0:
        raise ConfigurationError(f"mass must be in (0, 1), got {mass}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        warnings.warn("constant dimension; densest segment is a single point", stacklevel=2)
        return lo, hi
    counts, edges = np.histogram(x, bins=bin_count, range=(lo, hi))
    need = mass * x.size
    prefix = np.concatenate([[0], np.cumsum(counts)])
    for k in range(1, bin_count + 1):
        window = prefix[k:] - prefix[:-k]
        ok = np.flatnonzero(window >= need - 1e-9)
        if ok.size:
            i = int(ok[0])
            return float(edges[i]), float(edges[i + k])
    return lo, hi


def carve_ood(dataset: LabeledDataset, spec: CarveSpec, seed: int) -> LabeledDataset:
    """Delete ``removal_ratio`` of the transitions whose ``state[dim]`` is in the interval.

    The removed subset is uniform among in-interval transitions, its size
    rounded half-up. Survivors keep their order and values.
    """
    spec.validate(dataset.states.shape[1] if len(dataset) else get_env(dataset.env).state_dim)
    if len(dataset) == 0:
        warnings.warn("carving an empty dataset", stacklevel=2)
        return dataset
    col = _column(dataset, spec.dim)
    if spec.mode == "densest":
        lo, hi = densest_segment(col, spec.bins, spec.mass)
    else:
        lo, hi = float(spec.lo), float(spec.hi)
    inside = np.flatnonzero((col >= lo) & (col <= hi))
    if inside.size == 0:
        warnings.warn(f"carve interval [{lo}, {hi}] selects nothing; dataset unchanged", stacklevel=2)
        return dataset
    n_remove = int(math.floor(spec.removal_ratio * inside.size + 0.5))
    rng = make_rng(seed, 11)
    removed = rng.choice(inside, size=n_remove, replace=False)
    keep = np.ones(len(dataset), dtype=bool)
    keep[removed] = False
    op = {
        "op": "carve", "dim": spec.dim, "ratio": spec.removal_ratio, "mode": spec.mode,
        "mass": spec.mass, "bins": spec.bins, "lo": lo, "hi": hi, "seed": int(seed),
    }
    return dataset.take(np.flatnonzero(keep), op)


def coverage_filter(dataset, dim: int, keep_fraction: float):
    """Keep samples whose ``state[dim]`` lies in the central quantile band of width ``keep_fraction``."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigurationError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    col = _column(dataset, dim)
    if col.size == 0:
        raise DatasetError("cannot filter an empty dataset")
    tail = (1.0 - keep_fraction) / 2.0
    lo, hi = np.quantile(col, [tail, 1.0 - tail])
    keep = np.flatnonzero((col >= lo) & (col <= hi))
    if keep.size == 0:
        raise DatasetError("coverage band is empty")
    op = {"op": "coverage", "dim": int(dim), "keep": float(keep_fraction)}
    return dataset.take(keep, op)


def subsample(dataset, fraction: float, seed: int):
    """``ceil(fraction * N)`` samples drawn uniformly without replacement, order kept."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    k = min(n, math.ceil(fraction * n - 1e-9))
    if k == 0:
        raise DatasetError("subsample is empty")
    rng = make_rng(seed, 12)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    op = {"op": "subsample", "fraction": float(fraction), "seed": int(seed)}
    return dataset.take(idx, op)


def strip_labels(dataset: LabeledDataset) -> UnlabeledDataset:
    """Drop rewards, successors and flags, keeping the ``(s, a)`` pairs."""
    return UnlabeledDataset(
        dataset.env, dataset.tier, dataset.states, dataset.actions,
        dataset.provenance + ({"op": "strip"},),
    )


# -- provenance replay -------------------------------------------------------


def replay(provenance):
    """Rebuild a dataset from its provenance records."""
    provenance = list(provenance)
    if not provenance or provenance[0]["op"] != "generate":
        raise DatasetError("provenance must start with a generate record")
    first = provenance[0]
    ds = generate_dataset(first["env"], first["tier"], first["n"], first["seed"])
    for op in provenance[1:]:
        ds = _apply(ds, op)
    return ds


def _apply(ds, op):
    kind = op["op"]
    if kind == "subsample":
        return subsample(ds, op["fraction"], op["seed"])
    if kind == "carve":
        spec = CarveSpec(op["dim"], op["ratio"], op["mode"], op["lo"], op["hi"], op["bins"], op["mass"])
        return carve_ood(ds, spec, op["seed"])
    if kind == "coverage":
        return coverage_filter(ds, op["dim"], op["keep"])
    if kind == "strip":
        return strip_labels(ds)
    if kind in ("uds_merge", "oril_label"):
        from .algos import baselines

        unlabeled = replay(op["unlabeled"])
        if kind == "uds_merge":
            return baselines.uds_merge(ds, unlabeled, seed=op["seed"])
        return baselines.oril_label(ds, unlabeled, baselines.OrilConfig(**op["config"]), seed=op["seed"])
    raise DatasetError(f"unknown provenance op {kind!r}")


def recover_successors(unlabeled: UnlabeledDataset):
    """Successor states of pairs that came from :func:`strip_labels`, else None.

    Replays the provenance with the strip step skipped; every later op only
    selects rows by state values or seeded index draws, so the labeled replay
    keeps the same rows. Returns ``(next_states, dones, timeouts)``.
    """
    ops = list(unlabeled.provenance)
    if not ops or ops[0]["op"] != "generate" or sum(o["op"] == "strip" for o in ops) != 1:
        return None
    labeled = replay([o for o in ops if o["op"] != "strip"])
    if not isinstance(labeled, LabeledDataset) or len(labeled) != len(unlabeled):
        return None
    if not (np.array_equal(labeled.states, unlabeled.states) and np.array_equal(labeled.actions, unlabeled.actions)):
        return None
    return labeled.next_states, labeled.dones, labeled.timeouts


# -- storage -----------------------------------------------------------------


def _columns(kind, sd, ad):
    if kind == "labeled":
        return [("state", sd), ("action", ad), ("reward", 1), ("next_state", sd), ("done", 1), ("timeout", 1)]
    return [("state", sd), ("action", ad)]


def dataset_bytes(dataset) -> bytes:
    """The exact ``.ods`` encoding of ``dataset``."""
    spec = get_env(dataset.env)
    sd, ad = spec.state_dim, spec.action_dim
    if isinstance(dataset, LabeledDataset):
        kind = "labeled"
        body = np.concatenate(
            [
                dataset.states.reshape(-1, sd), dataset.actions.reshape(-1, ad),
                dataset.rewards[:, None], dataset.next_states.reshape(-1, sd),
                dataset.dones[:, None].astype(np.float64), dataset.timeouts[:, None].astype(np.float64),
            ],
            axis=1,
        )
    else:
        kind = "unlabeled"
        body = np.concatenate([dataset.states.reshape(-1, sd), dataset.actions.reshape(-1, ad)], axis=1)
    header = {
        "kind": kind, "env": dataset.env, "tier": dataset.tier, "state_dim": sd, "action_dim": ad,
        "count": len(dataset), "columns": _columns(kind, sd, ad), "provenance": list(dataset.provenance),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    return b"".join(
        [ODS_MAGIC, struct.pack("<Q", len(blob)), blob, np.ascontiguousarray(body, dtype="<f8").tobytes()]
    )


def save_dataset(dataset, path):
    Path(path).write_bytes(dataset_bytes(dataset))


def load_dataset(path):
    raw = Path(path).read_bytes()
    if raw[:8] != ODS_MAGIC:
        raise DatasetError(f"{path} is not an .ods file")
    (n,) = struct.unpack("<Q", raw[8:16])
    h = json.loads(raw[16 : 16 + n].decode())
    sd, ad, count = h["state_dim"], h["action_dim"], h["count"]
    width = sum(w for _, w in h["columns"])
    body = np.frombuffer(raw[16 + n :], dtype="<f8").astype(np.float64)
    if body.size != count * width:
        raise DatasetError(f"{path}: body holds {body.size} values, expected {count * width}")
    body = body.reshape(count, width)
    prov = tuple(h["provenance"])
    if h["kind"] == "labeled":
        o = np.cumsum([0, sd, ad, 1, sd, 1, 1])
        return LabeledDataset(
            h["env"], h["tier"], body[:, o[0]:o[1]], body[:, o[1]:o[2]], body[:, o[2]],
            body[:, o[3]:o[4]], body[:, o[4]] != 0.0, body[:, o[5]] != 0.0, prov,
        )
    return UnlabeledDataset(h["env"], h["tier"], body[:, :sd], body[:, sd:], prov)


def state_histograms(dataset, bins: int = 50):
    """Per-dimension ``(edges, counts)`` histograms of the states."""
    out = []
    for d in range(dataset.states.shape[1]):
        counts, edges = np.histogram(dataset.states[:, d], bins=bins)
        out.append((edges, counts))
    return out


def write_stats(dataset, out_dir, bins: int = 50):
    """One ``dim_<i>.csv`` (bin_lo, bin_hi, count) per state dimension."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for d, (edges, counts) in enumerate(state_histograms(dataset, bins)):
        p = out_dir / f"dim_{d}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        paths.append(p)
    return paths

"""Training driver, greedy evaluation, run directories and the experiment families.

A run is identified by a hash of every field of its :class:`ExperimentSpec`
that can change the numbers it produces. Its directory
``<runs root>/<hash>/`` holds ``metrics.csv`` (one row per training step and
seed), ``report.json``, ``plot.svg``, ``config.txt`` (the resolved
configuration) and ``checkpoint/seed<k>.ckpt``. A directory whose
``report.json`` is complete is reused instead of recomputed.

Seeds drive everything: seed ``k`` generates the labeled and unlabeled
datasets, carves and subsamples them, initialises the networks and draws the
minibatches and target noise. Specs that share a seed therefore share their
datasets and evaluation episodes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import algos
from .algos import AlgoConfig, make_bundle
from .algos.bundle import labeled_batch, pair_batch
from .data import (
    CarveSpec,
    carve_ood,
    coverage_filter,
    generate_dataset,
    strip_labels,
    subsample,
)
from .envs import get_env, get_reference, normalized_score, rollout_returns
from .errors import ConfigurationError, LudorError
from .nn import AdamState, MlpParams, make_rng, mlp_apply, save_checkpoint

ALGORITHMS = (
    "ludor-td3bc", "ludor-iql", "td3bc", "iql", "bc-union", "bc-unlabeled",
    "td3bc+eq9", "iql+eq9", "uds", "oril",
)
FAMILIES = (
    "general", "teacher_student", "robustness", "ablation_components",
    "ablation_ema", "ablation_data_pct", "ablation_measure", "ablation_dim_removal",
)
FINAL_EVALS = 10
RESULTS_VERSION = 1


def runs_root(default="runs") -> Path:
    return Path(os.environ.get("LUDOR_RUNS_DIR", default))


# -- specs -------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledRecipe:
    """Labeled data: ``n`` transitions of ``tier``, then subsample, then carves in order."""

    tier: str = "medium"
    n: int = 20000
    fraction: float = 1.0
    carves: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "carves", tuple(
            c if isinstance(c, CarveSpec) else CarveSpec(**c) for c in self.carves
        ))


@dataclass(frozen=True)
class UnlabeledRecipe:
    """Unlabeled pairs: ``fraction`` of ``n`` transitions of ``tier``, labels stripped,
    then the central ``coverage`` band of ``coverage_dim`` kept."""

    tier: str = "expert"
    n: int = 100000
    fraction: float = 0.01
    coverage_dim: int = 0
    coverage: float = 1.0


@dataclass(frozen=True)
class ExperimentSpec:
    env: str = "pointmass-2d"
    algo: str = "ludor-td3bc"
    labeled: LabeledRecipe = field(default_factory=LabeledRecipe)
    unlabeled: UnlabeledRecipe = field(default_factory=UnlabeledRecipe)
    overrides: tuple = ()
    seeds: tuple = (0, 1, 2)
    max_timesteps: int = 30000
    eval_freq: int = 2000
    n_episodes: int = 10
    base: str = "td3bc"  # base learner of the uds and oril baselines
    label: str = ""  # display name; not part of the hash

    def __post_init__(self):
        get_env(self.env)
        if self.algo not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.max_timesteps < 0 or self.eval_freq < 1 or self.n_episodes < 1:
            raise ConfigurationError("need max_timesteps >= 0, eval_freq >= 1, n_episodes >= 1")
        if self.base not in ("td3bc", "iql"):
            raise ConfigurationError(f"unknown base learner {self.base!r}")
        if isinstance(self.labeled, dict):
            object.__setattr__(self, "labeled", LabeledRecipe(**self.labeled))
        if isinstance(self.unlabeled, dict):
            object.__setattr__(self, "unlabeled", UnlabeledRecipe(**self.unlabeled))
        ov = dict(self.overrides)
        object.__setattr__(self, "overrides", tuple(sorted(ov.items())))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.config()

    def config(self) -> AlgoConfig:
        return AlgoConfig.from_dict(dict(self.overrides))

    def with_overrides(self, **kw) -> "ExperimentSpec":
        return replace(self, overrides=tuple({**dict(self.overrides), **kw}.items()))

    def canonical(self) -> "ExperimentSpec":
        """The same experiment with every learner hyperparameter spelled out."""
        return replace(self, overrides=tuple(
            (k, tuple(v) if isinstance(v, list) else v) for k, v in self.config().to_dict().items()
        ))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["overrides"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.overrides}
        d["seeds"] = list(self.seeds)
        d["labeled"]["carves"] = [asdict(c) for c in self.labeled.carves]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown experiment keys: {sorted(unknown)}")
        if "overrides" in d and isinstance(d["overrides"], dict):
            d["overrides"] = tuple(
                (k, tuple(v) if isinstance(v, list) else v) for k, v in d["overrides"].items()
            )
        if "labeled" in d and isinstance(d["labeled"], dict):
            d["labeled"] = LabeledRecipe(**d["labeled"])
        if "unlabeled" in d and isinstance(d["unlabeled"], dict):
            d["unlabeled"] = UnlabeledRecipe(**d["unlabeled"])
        return cls(**d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("label")
        # resolved AlgoConfig, so that spelling out a default does not change the hash
        d["overrides"] = self.config().to_dict()
        d["results_version"] = RESULTS_VERSION
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- data --------------------------------------------------------------------


def data_seeds(seed: int):
    """Generation seeds of the labeled and unlabeled sources of run seed ``seed``."""
    return 2 * seed, 2 * seed + 1


@lru_cache(maxsize=32)
def _generated(env, tier, n, seed):
    return generate_dataset(env, tier, n, seed)


def build_labeled(env: str, recipe: LabeledRecipe, seed: int):
    ds = _generated(env, recipe.tier, recipe.n, data_seeds(seed)[0])
    if recipe.fraction < 1.0:
        ds = subsample(ds, recipe.fraction, seed)
    for carve in recipe.carves:
        ds = carve_ood(ds, carve, seed)
    return ds


def build_unlabeled(env: str, recipe: UnlabeledRecipe, seed: int):
    ds = _generated(env, recipe.tier, recipe.n, data_seeds(seed)[1])
    if recipe.fraction < 1.0:
        ds = subsample(ds, recipe.fraction, seed)
    un = strip_labels(ds)
    if recipe.coverage < 1.0:
        un = coverage_filter(un, recipe.coverage_dim, recipe.coverage)
    return un


# -- evaluation --------------------------------------------------------------


def as_policy(policy):
    if isinstance(policy, MlpParams):
        return lambda s: mlp_apply(policy, s)
    return policy


def evaluate_policy(policy, env, n_episodes: int = 10, seed: int = 0):
    """Greedy returns of ``n_episodes`` episodes and their mean normalized score.

    ``policy`` is an actor network or a callable on state batches. Episode
    start states depend only on ``seed``.
    """
    if n_episodes < 1:
        raise ConfigurationError("n_episodes must be >= 1")
    spec = get_env(env) if isinstance(env, str) else env
    returns = rollout_returns(spec, as_policy(policy), n_episodes, make_rng(seed, 1))
    return returns, float(np.mean(normalized_score(returns, get_reference(spec.name))))


def eval_seed(seed: int, k: int) -> int:
    """Episode seed of the ``k``-th evaluation of run seed ``seed``."""
    return 1_000_003 * (seed + 1) + k


# -- training ----------------------------------------------------------------


class _Recorder:
    """Collects per-step metric rows; columns are the union of keys seen."""

    def __init__(self):
        self.rows = []

    def add(self, row):
        self.rows.append(row)

    def write(self, path):
        cols = ["seed", "step"]
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=cols, restval="")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def _scalar_metrics(metrics):
    return {k: float(v) for k, v in metrics.items() if isinstance(v, (int, float, np.floating))}


def train_seed(spec: ExperimentSpec, seed: int, recorder: _Recorder | None = None, step_callback=None):
    """Train one seed of ``spec``. Returns ``(bundle_or_nets, scores, teacher_scores)``.

    ``scores[k]`` is the normalized score after ``k * eval_freq`` steps;
    ``scores[0]`` is measured before any base-learner step (after teacher
    pretraining where there is one).
    """
    env = get_env(spec.env)
    config = spec.config()
    algo = spec.algo
    labeled = build_labeled(spec.env, spec.labeled, seed)
    needs_unlabeled = algo.startswith("ludor") or algo in ("bc-union", "bc-unlabeled", "td3bc+eq9", "iql+eq9", "uds", "oril")
    unlabeled = build_unlabeled(spec.env, spec.unlabeled, seed) if needs_unlabeled else None
    if algo == "uds":
        labeled = algos.uds_merge(labeled, unlabeled, seed=seed)
    elif algo == "oril":
        labeled = algos.oril_label(labeled, unlabeled, seed=seed)

    batch_rng = make_rng(seed, 3)
    pair_rng = make_rng(seed, 4)
    noise_rng = make_rng(seed, 5)
    pretrain_rng = make_rng(seed, 6)
    bs = config.batch_size

    if algo.startswith("bc"):
        if algo == "bc-union":
            states = np.concatenate([labeled.states, unlabeled.states])
            actions = np.concatenate([labeled.actions, unlabeled.actions])
        else:
            states, actions = unlabeled.states, unlabeled.actions
        if len(states) == 0:
            raise ConfigurationError("behaviour cloning needs data")
        policy = make_bundle(env, config, seed, "td3bc")["actor"]
        state = AdamState.fresh(policy.n_params, config.actor_lr)
        from .algos.bundle import Batch

        def step_fn(step):
            nonlocal policy, state
            idx = batch_rng.integers(0, len(states), size=bs)
            policy, state, loss = algos.baseline_bc_step(policy, state, Batch(states[idx], actions[idx]))
            return {"bc_loss": loss}

        current = lambda: policy
        teacher = None
        nets = lambda: {"actor": policy}
    else:
        base = algo.split("-")[-1].split("+")[0] if algo not in ("uds", "oril") else spec.base
        bundle = make_bundle(env, config, seed, base)
        ludor = algo.startswith("ludor")
        if len(labeled) == 0:
            raise ConfigurationError("labeled dataset is empty")
        if ludor and config.use_teacher:
            bundle, _ = algos.pretrain_teacher(bundle, unlabeled, config, pretrain_rng)
        base_step = algos.td3bc_step if base == "td3bc" else algos.iql_step
        uniform = algos.uniform_weights(bs)

        def step_fn(step):
            nonlocal bundle
            lb = labeled_batch(labeled, batch_rng.integers(0, len(labeled), size=bs))
            if ludor:
                ub = pair_batch(unlabeled, pair_rng.integers(0, len(unlabeled), size=bs)) if len(unlabeled) else None
                bundle, m = algos.ludor_train_step(bundle, lb, ub, config, step, noise_rng)
                m.pop("phases")
            elif algo.endswith("eq9"):
                ub = pair_batch(unlabeled, pair_rng.integers(0, len(unlabeled), size=bs))
                bundle, m = algos.baseline_combined_step(bundle, lb, ub, config, step, noise_rng)
            else:
                bundle, m = base_step(bundle, lb, uniform, config, step, noise_rng)
            return m

        current = lambda: bundle["actor"]
        teacher = (lambda: bundle["teacher"]) if ludor else None
        nets = lambda: bundle.nets

    scores, teacher_scores = [], []

    def evaluate(k):
        _, sc = evaluate_policy(current(), env, spec.n_episodes, eval_seed(seed, k))
        scores.append(sc)
        row = {"eval_score": sc}
        if teacher is not None:
            _, tsc = evaluate_policy(teacher(), env, spec.n_episodes, eval_seed(seed, k))
            teacher_scores.append(tsc)
            row["teacher_score"] = tsc
        return row

    first = evaluate(0)
    if recorder is not None:
        recorder.add({"seed": seed, "step": 0, **first})
    for step in range(1, spec.max_timesteps + 1):
        row = _scalar_metrics(step_fn(step))
        if step % spec.eval_freq == 0:
            row.update(evaluate(step // spec.eval_freq))
        if recorder is not None:
            recorder.add({"seed": seed, "step": step, **row})
        if step_callback is not None:
            step_callback(step, nets())
    return nets(), scores, teacher_scores


# -- reports -----------------------------------------------------------------


def final_score(series, k: int = FINAL_EVALS) -> float:
    """Mean of the last ``k`` evaluation points of one seed's series."""
    return float(np.mean(np.asarray(series, dtype=np.float64)[-k:]))


@dataclass
class EvalReport:
    """Scores of one spec across seeds.

    ``series[seed]`` holds the normalized score at steps ``0, eval_freq,
    2*eval_freq, ...``. The final score of a seed is the mean of its last 10
    points; ``final_mean`` and ``final_std`` summarise those over the seeds
    that completed.
    """

    config_hash: str
    spec: dict
    series: dict
    teacher_series: dict
    final_mean: float
    final_std: float
    per_seed_final: dict
    teacher_final_mean: float | None
    failed_seeds: dict
    runtime: float

    @property
    def partial(self) -> bool:
        return bool(self.failed_seeds)

    @property
    def label(self) -> str:
        return self.spec.get("label") or self.spec["algo"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partial"] = self.partial
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d.pop("partial", None)
        return cls(**d)

    def content_hash(self) -> str:
        """Hash of everything except the wall-clock runtime."""
        d = self.to_dict()
        d.pop("runtime")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def summarize(config_hash, spec, series, teacher_series, failed, runtime) -> EvalReport:
    finals = {k: final_score(v) for k, v in series.items()}
    vals = np.array(list(finals.values()), dtype=np.float64)
    tvals = [final_score(v) for v in teacher_series.values() if v]
    return EvalReport(
        config_hash=config_hash,
        spec=spec.canonical().to_dict(),
        series=series,
        teacher_series=teacher_series,
        final_mean=float(vals.mean()) if vals.size else float("nan"),
        final_std=float(vals.std()) if vals.size else float("nan"),
        per_seed_final=finals,
        teacher_final_mean=float(np.mean(tvals)) if tvals else None,
        failed_seeds=failed,
        runtime=runtime,
    )


def resolved_config_text(spec: ExperimentSpec) -> str:
    """``key = value`` lines that :func:`ludor.cli.load_config` reads back into ``spec``."""
    from .cli import format_config

    return format_config(spec)


def run_dir(spec: ExperimentSpec, root=None) -> Path:
    return Path(root or runs_root()) / spec.config_hash()


def load_report(path) -> EvalReport | None:
    path = Path(path)
    if not path.exists():
        return None
    d = json.loads(path.read_text())
    if d.get("complete") is not True:
        return None
    d.pop("complete")
    return EvalReport.from_dict(d)


def run_experiment(spec: ExperimentSpec, root=None, resume: bool = True) -> EvalReport:
    """Train and evaluate every seed of ``spec`` and write its run directory.

    A seed that raises a :class:`LudorError` is recorded in
    ``failed_seeds`` and the report is marked partial.
    """
    out = run_dir(spec, root)
    if resume:
        done = load_report(out / "report.json")
        if done is not None:
            return done
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(resolved_config_text(spec))
    ckpt_dir = out / "checkpoint"
    ckpt_dir.mkdir(exist_ok=True)
    start = time.perf_counter()
    recorder = _Recorder()
    series, teacher_series, failed = {}, {}, {}
    for seed in spec.seeds:
        try:
            nets, scores, tscores = train_seed(spec, seed, recorder)
        except LudorError as exc:
            failed[str(seed)] = f"{type(exc).__name__}: {exc}"
            continue
        series[str(seed)] = scores
        if tscores:
            teacher_series[str(seed)] = tscores
        save_checkpoint(ckpt_dir / f"seed{seed}.ckpt", nets, seed, spec.max_timesteps, {"config_hash": spec.config_hash()})
    recorder.write(out / "metrics.csv")
    report = summarize(spec.config_hash(), spec, series, teacher_series, failed, time.perf_counter() - start)
    (out / "report.json").write_text(json.dumps({**report.to_dict(), "complete": True}, indent=1))
    from .report import render_run_plot

    render_run_plot(report, out / "plot.svg")
    return report


def _run_one(args):
    spec, root, resume = args
    try:
        return run_experiment(spec, root, resume)
    except LudorError:
        return traceback.format_exc()


def run_many(specs, root=None, jobs: int = 1, resume: bool = True):
    """Run specs, in ``jobs`` worker processes when ``jobs > 1``.

    Returns one entry per spec: its report, or the traceback text of a spec
    that could not run at all.
    """
    work = [(s, root, resume) for s in specs]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


# -- experiment families -----------------------------------------------------

ENVS_DEFAULT = ("pointmass-2d", "pendulum-swingup")
OOD_CARVES = {
    # the densest 60% segment of one state dimension, removed entirely
    "pointmass-2d": (CarveSpec(dim=0, removal_ratio=1.0, mass=0.6),),
    "pendulum-swingup": (CarveSpec(dim=0, removal_ratio=1.0, mass=0.6),),
}
COVERAGES = (0.6, 0.8, 1.0)
REMOVAL_RATIOS = (0.4, 0.6, 0.8)
EMA_WEIGHTS = (0.999, 0.99, 0.9)
DATA_FRACTIONS = (0.001, 0.005, 0.01, 0.3, 0.5)
MEASURE_ROWS = ("kl1", "kl2", "js", "cos")
COMPONENT_ROWS = (
    # (label, algo, overrides): teacher-student off, then on with EMA and/or weighting
    ("no teacher-student", "td3bc", {}),
    ("teacher + EMA", "ludor-td3bc", {"measure": "uniform"}),
    ("teacher + kappa", "ludor-td3bc", {"use_ema": False}),
    ("teacher + EMA + kappa", "ludor-td3bc", {}),
)


def ood_spec(base: ExperimentSpec, env: str, algo: str, label: str = "", carves=None, **overrides) -> ExperimentSpec:
    """``base`` moved to ``env`` with the OOD-carved labeled data and ``algo``."""
    carves = OOD_CARVES[env] if carves is None else carves
    spec = replace(base, env=env, algo=algo, labeled=replace(base.labeled, carves=tuple(carves)), label=label or f"{env} {algo}")
    return spec.with_overrides(**overrides) if overrides else spec


LEARNER_SWEEPS = ("general", "teacher_student", "ablation_ema")


def experiment_matrix(family: str, base: ExperimentSpec | None = None, envs=None, algos=None) -> list:
    """Fully specified specs of one experiment family.

    ``base`` supplies the protocol (seeds, steps, evaluation, network size and
    data sizes); every spec of the family shares its seeds, so cells that
    differ in one factor see the same datasets and evaluation episodes.
    ``algos`` restricts the families that sweep over learners
    (``LEARNER_SWEEPS``) to those algorithm ids; other families ignore it.
    """
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown family {family!r}; choose from {FAMILIES}")
    base = base or ExperimentSpec()
    envs = tuple(envs or ENVS_DEFAULT)
    specs = []
    for env in envs:
        if family == "general":
            for algo in ("td3bc", "iql"):
                specs.append(ood_spec(base, env, algo, f"{env} {algo} (full data)", carves=()))
            for algo in ALGORITHMS:
                specs.append(ood_spec(base, env, algo, f"{env} {algo} (OOD)"))
        elif family == "teacher_student":
            for algo in ("ludor-td3bc", "ludor-iql"):
                specs.append(ood_spec(base, env, algo))
        elif family == "robustness":
            carve = OOD_CARVES[env][0]
            for cov in COVERAGES:
                for ratio in REMOVAL_RATIOS:
                    spec = ood_spec(
                        base, env, "ludor-td3bc", f"{env} coverage {cov:g} removal {ratio:g}",
                        carves=(replace(carve, removal_ratio=ratio),),
                    )
                    specs.append(replace(spec, unlabeled=replace(spec.unlabeled, coverage=cov)))
        elif family == "ablation_components":
            for label, algo, ov in COMPONENT_ROWS:
                specs.append(ood_spec(base, env, algo, f"{env} {label}", **ov))
        elif family == "ablation_ema":
            for algo in ("ludor-td3bc", "ludor-iql"):
                for w in EMA_WEIGHTS:
                    specs.append(ood_spec(base, env, algo, f"{env} {algo} ema {w:g}", ema=w))
        elif family == "ablation_data_pct":
            for frac in DATA_FRACTIONS:
                spec = ood_spec(base, env, "ludor-td3bc", f"{env} unlabeled {100 * frac:g}%")
                specs.append(replace(spec, unlabeled=replace(spec.unlabeled, fraction=frac)))
        elif family == "ablation_measure":
            for m in MEASURE_ROWS:
                specs.append(ood_spec(base, env, "ludor-td3bc", f"{env} measure {m}", measure=m))
        elif family == "ablation_dim_removal":
            for d in range(get_env(env).state_dim):
                carve = (replace(OOD_CARVES[env][0], dim=d),)
                for algo in ("td3bc", "ludor-td3bc"):
                    specs.append(ood_spec(base, env, algo, f"{env} dim {d} {algo}", carves=carve))
    if algos and family in LEARNER_SWEEPS:
        specs = [s for s in specs if s.algo in algos]
    return specs

"""Command-line front end: ``ludor data|train|eval|ablate|report``.

Exit status is 0 on success, 1 when a command fails at run time and 2 on a
usage or configuration error.

Config files are plain text, one ``key = value`` per line; ``#`` starts a
comment. Values are JSON literals (``64``, ``0.9``, ``true``, ``[64, 64]``,
``[{"dim": 0, "removal_ratio": 1.0}]``); anything that is not valid JSON is
read as a bare string. Keys are the experiment fields (``env``, ``algo``,
``seeds``, ``max_timesteps``, ``eval_freq``, ``n_episodes``, ``base``,
``label``), the data recipe fields prefixed ``labeled.`` or ``unlabeled.``,
and the learner hyperparameters (``batch_size``, ``hidden``, ``ema``,
``measure``, ...). Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .algos import AlgoConfig
from .algos.config import MEASURES
from .errors import ConfigurationError, LudorError

EXPERIMENT_KEYS = ("env", "algo", "seeds", "max_timesteps", "eval_freq", "n_episodes", "base", "label")
FAMILY_ALIASES = {
    "general": "general",
    "teacher_student": "teacher_student",
    "robustness": "robustness",
    "components": "ablation_components",
    "ema": "ablation_ema",
    "data_pct": "ablation_data_pct",
    "measure": "ablation_measure",
    "dim_removal": "ablation_dim_removal",
}


class UsageError(Exception):
    pass


# -- config files ------------------------------------------------------------


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {n}: empty key")
        out[key] = _value(val)
    return out


def spec_from_mapping(values: dict):
    """Build an :class:`~ludor.harness.ExperimentSpec` from flat config keys."""
    from .harness import ExperimentSpec, LabeledRecipe, UnlabeledRecipe

    algo_keys = {f.name for f in fields(AlgoConfig)}
    recipes = {"labeled": {f.name for f in fields(LabeledRecipe)}, "unlabeled": {f.name for f in fields(UnlabeledRecipe)}}
    top, nested, overrides = {}, {"labeled": {}, "unlabeled": {}}, {}
    unknown = []
    for key, val in values.items():
        if key in EXPERIMENT_KEYS:
            top[key] = val
        elif key in algo_keys:
            overrides[key] = tuple(val) if isinstance(val, list) else val
        elif "." in key and key.split(".", 1)[0] in recipes and key.split(".", 1)[1] in recipes[key.split(".", 1)[0]]:
            group, name = key.split(".", 1)
            nested[group][name] = val
        else:
            unknown.append(key)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "seeds" in top:
        seeds = top["seeds"]
        top["seeds"] = tuple(seeds) if isinstance(seeds, list) else (int(seeds),)
    try:
        labeled = LabeledRecipe(**nested["labeled"])
        unlabeled = UnlabeledRecipe(**nested["unlabeled"])
        return ExperimentSpec(labeled=labeled, unlabeled=unlabeled, overrides=tuple(overrides.items()), **top)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path, overrides: dict | None = None):
    """Read a config file and apply ``overrides`` (flat keys) on top."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    values = parse_config_text(text)
    values.update(overrides or {})
    return spec_from_mapping(values)


def format_config(spec) -> str:
    """Every resolved key of ``spec`` as ``key = value`` lines."""
    d = spec.to_dict()
    lines = [f"{k} = {json.dumps(d[k])}" for k in EXPERIMENT_KEYS]
    for group in ("labeled", "unlabeled"):
        lines += [f"{group}.{k} = {json.dumps(v)}" for k, v in d[group].items()]
    lines += [f"{k} = {json.dumps(v)}" for k, v in spec.config().to_dict().items()]
    return "\n".join(lines) + "\n"


# -- commands ----------------------------------------------------------------


def cmd_data(args) -> int:
    from . import data

    sub = args.data_cmd
    if sub == "gen":
        ds = data.generate_dataset(args.env, args.tier, args.n, args.seed)
    elif sub == "stats":
        ds = data.load_dataset(args.input)
        paths = data.write_stats(ds, args.out, args.bins)
        print("\n".join(str(p) for p in paths))
        return 0
    else:
        src = data.load_dataset(args.input)
        if sub == "carve":
            spec = data.CarveSpec(args.dim, args.ratio, args.mode, args.lo, args.hi, args.bins, args.mass)
            ds = data.carve_ood(src, spec, args.seed)
        elif sub == "filter":
            ds = data.coverage_filter(src, args.dim, args.keep)
        elif sub == "subsample":
            ds = data.subsample(src, args.fraction, args.seed)
        elif sub == "strip":
            ds = data.strip_labels(src)
    data.save_dataset(ds, args.out)
    print(f"{args.out}: {len(ds)} rows")
    return 0


def _cli_overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = _value(v.strip())
    for flag in ("algo", "env", "ema", "measure"):
        val = getattr(args, flag, None)
        if val is not None:
            out[flag] = val
    if getattr(args, "seed", None) is not None:
        out["seeds"] = [args.seed]
    return out


def _base_values(args) -> dict:
    return parse_config_text(Path(args.config).read_text()) if getattr(args, "config", None) else {}


def _resolve(args):
    try:
        base = _base_values(args)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    base.update(_cli_overrides(args))
    return spec_from_mapping(base)


def cmd_train(args) -> int:
    from .harness import run_dir, run_experiment

    spec = _resolve(args)
    report = run_experiment(spec, root=args.runs_dir, resume=not args.force)
    out = run_dir(spec, args.runs_dir)
    print(f"run {out}")
    print(f"final {report.final_mean:.2f} +/- {report.final_std:.2f} over seeds {sorted(report.series)}")
    if report.partial:
        for seed, err in report.failed_seeds.items():
            print(f"seed {seed} failed: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    from .envs import get_env, scripted_policy
    from .harness import evaluate_policy
    from .nn import load_checkpoint, make_rng

    if args.checkpoint:
        nets, header = load_checkpoint(args.checkpoint)
        policy = nets[args.net]
    elif args.policy:
        spec = get_env(args.env)
        rng = make_rng(args.seed, 2)
        policy = lambda s: scripted_policy(args.policy, spec, s, rng)
    else:
        raise UsageError("eval needs --checkpoint or --policy")
    returns, score = evaluate_policy(policy, args.env, args.episodes, args.seed)
    print(f"returns mean {np.mean(returns):.3f} std {np.std(returns):.3f}")
    print(f"normalized {score:.2f}")
    return 0


def cmd_ablate(args) -> int:
    from .harness import experiment_matrix, run_many
    from .report import render_report

    family = FAMILY_ALIASES.get(args.family, args.family)
    base = _resolve(args)
    envs = [args.env] if args.env else None
    specs = experiment_matrix(family, base, envs=envs, algos=[args.algo] if args.algo else None)
    results = run_many(specs, root=args.runs_dir, jobs=args.jobs)
    reports = [r for r in results if not isinstance(r, str)]
    failures = [r for r in results if isinstance(r, str)]
    for text in failures:
        print(text, file=sys.stderr)
    status = 0
    if reports:
        path = render_report(reports, Path(args.out), family)
        print(f"summary {path}")
        for r in reports:
            print(f"{r.label:40s} {r.final_mean:8.2f} +/- {r.final_std:6.2f}")
            if r.partial:
                status = 1
    if failures:
        status = 1
    return status


def cmd_report(args) -> int:
    from .harness import load_report, runs_root
    from .report import render_report

    root = Path(args.runs_dir) if args.runs_dir else runs_root()
    reports = [r for r in (load_report(p) for p in sorted(root.glob("*/report.json"))) if r is not None]
    if not reports:
        print(f"no finished runs under {root}", file=sys.stderr)
        return 1
    print(render_report(reports, Path(args.out), args.name))
    return 0


# -- parser ------------------------------------------------------------------


def _add_run_flags(p):
    defaults = AlgoConfig()
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="run a single seed (default: seeds from the config, 0 1 2)")
    p.add_argument("--algo", help="algorithm id (default ludor-td3bc)")
    p.add_argument("--env", help="environment (default pointmass-2d)")
    p.add_argument("--ema", type=float, help=f"EMA weight of the student (default {defaults.ema})")
    p.add_argument("--measure", choices=MEASURES, help=f"discrepancy measure (default {defaults.measure})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config key; repeatable")
    p.add_argument("--runs-dir", help="output root (default $LUDOR_RUNS_DIR or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ludor", description="Teacher-student offline RL on toy control tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("data", help="build, transform and inspect .ods datasets")
    dsub = p_data.add_subparsers(dest="data_cmd", required=True)
    g = dsub.add_parser("gen", help="roll out a scripted policy")
    g.add_argument("--env", required=True)
    g.add_argument("--tier", required=True, choices=("random", "medium", "expert"))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    c = dsub.add_parser("carve", help="delete transitions in a state range")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--dim", type=int, required=True)
    c.add_argument("--ratio", type=float, required=True)
    c.add_argument("--mode", choices=("densest", "range"), default="densest")
    c.add_argument("--lo", type=float)
    c.add_argument("--hi", type=float)
    c.add_argument("--bins", type=int, default=50)
    c.add_argument("--mass", type=float, default=0.6)
    c.add_argument("--seed", type=int, default=0)
    f = dsub.add_parser("filter", help="keep the central quantile band of one dimension")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--dim", type=int, required=True)
    f.add_argument("--keep", type=float, required=True)
    s = dsub.add_parser("subsample", help="keep a random fraction")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fraction", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    st = dsub.add_parser("strip", help="drop rewards and successors")
    st.add_argument("--in", dest="input", required=True)
    st.add_argument("--out", required=True)
    h = dsub.add_parser("stats", help="per-dimension state histograms as CSV")
    h.add_argument("--in", dest="input", required=True)
    h.add_argument("--out", required=True, help="output directory")
    h.add_argument("--bins", type=int, default=50)

    t = sub.add_parser("train", help="train and evaluate one experiment")
    _add_run_flags(t)
    t.add_argument("--force", action="store_true", help="recompute even if the run directory is complete")

    e = sub.add_parser("eval", help="evaluate a checkpoint or a scripted policy")
    e.add_argument("--env", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--net", default="actor")
    e.add_argument("--policy", choices=("random", "medium", "expert"))
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("ablate", help="run an experiment family and summarise it")
    a.add_argument("family", choices=sorted(set(FAMILY_ALIASES) | set(FAMILY_ALIASES.values())))
    _add_run_flags(a)
    a.add_argument("--out", default="reports")
    a.add_argument("--jobs", type=int, default=1)

    r = sub.add_parser("report", help="summarise every finished run")
    r.add_argument("--runs-dir")
    r.add_argument("--out", default="reports")
    r.add_argument("--name", default="summary")
    return parser


COMMANDS = {"data": cmd_data, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"ludor: error: {exc}", file=sys.stderr)
        return 2
    except (LudorError, OSError, ValueError) as exc:
        print(f"ludor: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

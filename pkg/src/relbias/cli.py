"""Command-line entry point: ``relbias <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 configuration/input problem.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import analysis, probe
from .agents import AgentConfig, ConfigurationError, TransportError
from .cogmodel import ALL_VARIANTS, ModelParams, ModelVariant, ReplayDataError, build_replay
from .fitting import FIT_SCHEMA_VERSION, FitResult, OptimizerConfig, compare_models, fit_all
from .promptgen import PromptStyle
from .runner import LogSchemaError, RunConfig, checkpoint_path, read_log, run_experiment_batch
from .taskdef import TaskSchemaError, default_catalog_path, get_task, load_task_catalog

log = logging.getLogger("relbias")

CONFIG_ENV = "RELBIAS_CONFIG"
# synthetic agents default to parameters near the averages reported for LLMs
SIM_DEFAULTS = ModelParams(omega=0.26, alpha_con=0.5, alpha_dis=0.17,
                           beta_train=20.0, beta_transfer=11.0, b=1.18)
SIM_ALIASES = {"relfull": "REL-full", "absfull": "ABS-full", "rel": "REL", "abs": "ABS",
               "rel2a": "REL-2a", "rel2b": "REL-2b", "abs2a": "ABS-2a", "abs2b": "ABS-2b"}


class UsageError(Exception):
    pass


@dataclass
class RepoConfig:
    endpoints: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "."
    log_level: str = "INFO"

    @classmethod
    def load(cls, path: str | None) -> "RepoConfig":
        path = path or os.environ.get(CONFIG_ENV)
        if not path:
            return cls()
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text()) or {}
        return cls(endpoints=raw.get("endpoints", {}), seed=raw.get("defaults", {}).get("seed", 0),
                   output_dir=raw.get("output_dir", "."), log_level=raw.get("log_level", "INFO"))


def parse_agent(spec: str, config: RepoConfig, params_json: str | None, seed: int) -> AgentConfig:
    kind, _, arg = spec.partition(":")
    if kind == "ideal":
        return AgentConfig("ideal", seed=seed)
    if kind == "random":
        return AgentConfig("uniform_random", seed=seed)
    if kind == "sim":
        variant = ModelVariant.from_name(SIM_ALIASES.get(arg.lower(), arg or "REL-full"))
        values = SIM_DEFAULTS.to_dict()
        if params_json:
            values.update(json.loads(params_json))
        return AgentConfig("rl_simulated", params=ModelParams(**values).restricted(variant),
                           variant=variant, seed=seed)
    if kind == "llm":
        profile = config.endpoints.get(arg)
        if profile is None:
            raise UsageError(f"no endpoint profile {arg!r} in config (known: {sorted(config.endpoints)})")
        cfg = AgentConfig("llm_endpoint", base_url=profile["base_url"], model=profile["model"],
                          auth_env=profile.get("auth_env", "OPENAI_API_KEY"),
                          timeout=float(profile.get("timeout", 60)),
                          max_retries=int(profile.get("max_retries", 5)),
                          rate_limit=float(profile.get("rate_limit", 1.0)), seed=seed)
        if not os.environ.get(cfg.auth_env):
            raise ConfigurationError(f"environment variable {cfg.auth_env} is not set")
        return cfg
    raise UsageError(f"unknown agent {spec!r}; use sim:<variant>, ideal, random or llm:<profile>")


# --------------------------------------------------------------------------
# commands


def cmd_tasks(args, config) -> int:
    tasks = load_task_catalog(args.catalog)
    if args.action == "validate":
        print(f"{args.catalog or default_catalog_path()}: {len(tasks)} tasks OK")
        return 0
    for t in tasks:
        print(f"{t.name:8s} options={len(t.options):2d} contexts={len(t.contexts)} "
              f"training={t.n_training_trials} transfer={t.n_transfer_trials} currency={t.currency}")
    return 0


def cmd_run(args, config) -> int:
    task = get_task(args.task, args.catalog)
    seed = args.seed if args.seed is not None else config.seed
    agent = parse_agent(args.agent, config, args.params, seed)
    out = Path(args.out)
    if out.exists() and not (args.force or args.resume):
        raise UsageError(f"{out} exists; pass --force to overwrite or --resume to continue it")
    if args.resume and out.exists() and not checkpoint_path(out).exists():
        raise UsageError(f"{out} has no checkpoint to resume from")
    cfg = RunConfig(task, PromptStyle(args.style, args.mode), agent, args.runs, seed, args.full_prompts)

    def progress(run_id):
        print(f"run {run_id + 1}/{cfg.n_runs} done", file=sys.stderr)

    run_experiment_batch(cfg, out, force=args.force, catalog_path=args.catalog, on_run_done=progress)
    print(out)
    return 0


def _load_replay(log_path):
    records = read_log(log_path)
    if not records:
        raise UsageError(f"{log_path} contains no trials")
    task = get_task(records[0]["task"])
    return records, task, build_replay(records, task.option_ids)


def _fit_variants(log_path, variants, cfg, jobs) -> dict:
    _, _, data = _load_replay(log_path)
    if jobs <= 1:
        return fit_all(data, cfg, variants)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return fit_all(data, cfg, variants, mapper=pool.map)


def _fits_document(fits: dict, args) -> dict:
    return {"schema": FIT_SCHEMA_VERSION, "log": str(args.log), "starts": args.starts, "seed": args.seed,
            "fits": [f.to_dict() for f in fits.values()]}


def cmd_fit(args, config) -> int:
    variants = list(ALL_VARIANTS) if args.all else [ModelVariant.from_name(args.variant)]
    cfg = OptimizerConfig(n_starts=args.starts, seed=args.seed)
    fits = _fit_variants(args.log, variants, cfg, args.jobs)
    doc = _fits_document(fits, args)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    for f in fits.values():
        print(f"{f.variant.name:9s} k={f.k} nll={f.nll:.4f} bic={f.bic:.4f}")
    return 0


def load_fits(path) -> list[FitResult]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != FIT_SCHEMA_VERSION:
        raise LogSchemaError(f"{path}: fit schema {doc.get('schema')} != {FIT_SCHEMA_VERSION}; refit with `relbias fit`")
    return [FitResult.from_dict(d) for d in doc["fits"]]


def cmd_compare(args, config) -> int:
    if args.fits:
        fits = load_fits(args.fits)
    else:
        fits = list(_fit_variants(args.log, list(ALL_VARIANTS),
                                  OptimizerConfig(n_starts=args.starts, seed=args.seed), args.jobs).values())
    comparison = compare_models(fits)
    print(f"{'model':10s} {'k':>2s} {'NLL':>12s} {'BIC':>12s} {'dBIC':>10s}")
    for row in comparison.table():
        star = "*" if row["best"] else " "
        print(f"{row['variant'] + star:10s} {row['k']:2d} {row['nll']:12.4f} {row['bic']:12.4f} {row['delta_bic']:10.4f}")
    if args.out:
        analysis.write_csv(comparison.table(), args.out)
    return 0


def cmd_analyze(args, config) -> int:
    records = read_log(args.log)
    if not records:
        raise UsageError(f"{args.log} contains no trials")
    task = get_task(records[0]["task"])
    if args.metric == "bias":
        rows = analysis.bias_table(records, task)
    elif args.metric == "accuracy":
        rows = analysis.accuracy_table(records, task)
    elif args.metric == "curves":
        rows = [{"context": c, "index": i + 1, "p_correct": p}
                for c, curve in analysis.learning_curves(records, task).items() for i, p in enumerate(curve)]
        rows += [{"option": o, "transfer_rate": p} for o, p in analysis.transfer_choice_rates(records, task).items()]
    else:
        if not args.fits:
            raise UsageError("--metric predictive needs --fits")
        fits = {f.variant.name: f for f in load_fits(args.fits)}
        fit = fits.get(args.variant)
        if fit is None:
            raise UsageError(f"no {args.variant} fit in {args.fits}")
        style = PromptStyle(records[0].get("style", "standard"))
        rows = analysis.posterior_predictive(fit, task, style, args.sims, args.seed).rows()
    if args.out:
        analysis.write_csv(rows, args.out)
    else:
        analysis.write_csv(rows, "/dev/stdout")
    return 0


def cmd_probe(args, config) -> int:
    task = get_task(args.task, args.catalog)
    acts = probe.read_activations(args.acts)
    trials = probe.read_trials(args.trials)
    if len(trials) != acts.shape[0]:
        raise UsageError(f"{len(trials)} trial rows but {acts.shape[0]} activation rows")
    results = probe.unit_regressions(acts, probe.value_difference_predictors(trials, task), args.alpha)
    table = probe.counts_table(results)
    for row in table:
        print(f"{row['category']:9s} {row['count']:6d} ({row['percent']:.1f}%)")
    effects = probe.effect_size_summary(results)
    print(f"mean |slope| abs={effects['mean_abs_slope_abs']:.4f} rel={effects['mean_abs_slope_rel']:.4f}")
    if args.out:
        analysis.write_csv(table, args.out)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relbias", description=__doc__.splitlines()[0])
    p.add_argument("--config", help=f"repo config YAML (default: ${CONFIG_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tasks", help="list or validate the task catalog")
    t.add_argument("action", choices=["list", "validate"], nargs="?", default="list")
    t.add_argument("--catalog")
    t.set_defaults(func=cmd_tasks)

    r = sub.add_parser("run", help="run a batch of experiments")
    r.add_argument("--task", required=True)
    r.add_argument("--style", choices=["standard", "comparisons"], default="standard")
    r.add_argument("--mode", choices=["chat", "completion"], default="chat")
    r.add_argument("--agent", required=True, help="sim:<variant> | ideal | random | llm:<profile>")
    r.add_argument("--params", help="JSON overrides for sim agent parameters")
    r.add_argument("--runs", type=int, default=30)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--force", action="store_true")
    r.add_argument("--resume", action="store_true")
    r.add_argument("--full-prompts", action="store_true")
    r.add_argument("--catalog")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fit", help="fit cognitive models to a log")
    f.add_argument("--log", required=True)
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--variant")
    g.add_argument("--all", action="store_true")
    f.add_argument("--starts", type=int, default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compare", help="BIC comparison of the eight variants")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--fits")
    src.add_argument("--log")
    c.add_argument("--starts", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("analyze", help="behavioural metrics as CSV")
    a.add_argument("--log", required=True)
    a.add_argument("--metric", choices=["accuracy", "bias", "curves", "predictive"], default="bias")
    a.add_argument("--fits")
    a.add_argument("--variant", default="REL-full")
    a.add_argument("--sims", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("probe", help="per-unit activation regressions")
    pr.add_argument("--acts", required=True)
    pr.add_argument("--trials", required=True)
    pr.add_argument("--task", required=True)
    pr.add_argument("--alpha", type=float, default=0.001)
    pr.add_argument("--catalog")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = RepoConfig.load(args.config)
        return args.func(args, config)
    except (UsageError, ConfigurationError, TaskSchemaError, LogSchemaError, FileExistsError,
            FileNotFoundError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"relbias: error: {msg}", file=sys.stderr)
        return 2
    except (TransportError, ReplayDataError, RuntimeError) as exc:
        print(f"relbias: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

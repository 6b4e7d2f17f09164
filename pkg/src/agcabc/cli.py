"""Command-line experiment runner.

Subcommands::

    agcabc simulate    dump raw data and summaries for a benchmark model
    agcabc infer       run one method once and write its posterior
    agcabc experiment  run a (method x budget x repeat) battery and score it by JSD
    agcabc diagnose    residual-heterogeneity table for one model
    agcabc jsd         compare two density-grid CSV files

Every run seed is derived by hashing ``(base_seed, model, method, budget,
repeat)``, so any single cell of an experiment can be rerun in isolation.
Observed data depend only on ``(base_seed, model, repeat)``; all methods in
a repeat therefore see the same data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .core import InsufficientBudgetError
from .evaluation import (
    DIAGNOSTIC_QUANTILES,
    build_grid,
    compare,
    jsd,
    read_grid_csv,
    reference_posterior,
    residual_heterogeneity,
    simulate_pool,
    write_grid_csv,
    write_meta_json,
    write_table_csv,
)
from .pipeline import KdePosterior, run_method
from .simulators import (
    get_model,
    observe,
    raw_to_csv,
    simulate_table,
    summaries_to_csv,
)

RUN_COLUMNS = ("model", "method", "budget", "repeat", "seed", "jsd", "wall_time_s", "n_sims", "error")
AGGREGATE_COLUMNS = ("model", "method", "budget", "jsd_mean", "jsd_se", "n")
DIAGNOSTIC_COLUMNS = ("quantile", "jsd")
METHOD_LABELS = {"rej": "REJ-ABC", "reg": "REG-ABC", "nn": "NN-ABC", "gc": "GC-ABC", "agc": "AGC-ABC"}


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a tuple of JSON-serializable parts."""
    blob = json.dumps(list(parts), separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big") >> 1


def _method_key(name: str) -> str:
    key = name.lower().replace("-abc", "").replace("_abc", "")
    if key not in METHOD_LABELS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_LABELS)}")
    return key


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ReferenceConfig:
    budget: int = 1_000_000
    quantile: float = 1e-3


@dataclass
class ExperimentConfig:
    model: str
    methods: list = field(default_factory=lambda: ["rej", "reg", "nn", "gc", "agc"])
    budgets: list = field(default_factory=lambda: [10_000])
    n_repeats: int = 15
    base_seed: int = 0
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    output_dir: str = "results"
    jobs: int = 1
    per_dim: int = 30
    timing: str = "wall"
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.reference, dict):
            self.reference = ReferenceConfig(**self.reference)
        self.methods = [_method_key(m) for m in self.methods]
        self.budgets = [int(b) for b in self.budgets]
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise ValueError("budgets must be positive")
        if self.budgets != sorted(set(self.budgets)):
            raise ValueError("budgets must be strictly ascending")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be at least 1")
        if self.timing not in ("wall", "none"):
            raise ValueError("timing must be 'wall' or 'none'")

    def resolved(self) -> dict:
        return asdict(self)


_CONFIG_KEYS = {
    "model": "model",
    "methods": "methods",
    "method": "methods",
    "budgets": "budgets",
    "budget": "budgets",
    "repeats": "n_repeats",
    "n_repeats": "n_repeats",
    "seed": "base_seed",
    "base_seed": "base_seed",
    "reference": "reference",
    "out": "output_dir",
    "output_dir": "output_dir",
    "jobs": "jobs",
    "per_dim": "per_dim",
    "timing": "timing",
    "model_options": "model_options",
}


def load_config(path) -> dict:
    """Read a YAML experiment file into ExperimentConfig keyword arguments."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    out = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}: unknown key {key!r}")
        if key in ("method", "budget") and not isinstance(value, list):
            value = [value]
        out[_CONFIG_KEYS[key]] = value
    return out


# ---------------------------------------------------------------------------
# experiment


def _stem(model: str, method: str, budget: int, repeat: int) -> str:
    return f"{model}_{method}_{budget}_r{repeat:02d}"


def _observed(model, base_seed: int, repeat: int):
    seed = derive_seed(base_seed, model.name, "obs", repeat)
    raw, s = observe(model, seed)
    return seed, raw, s


def _reference(cfg: ExperimentConfig, model, repeat: int, obs_seed: int, s_obs, pool, cache_dir: Path):
    """Reference posterior for one repeat, cached on disk by observed-data seed."""
    ref = cfg.reference
    path = cache_dir / f"reference_{model.name}_r{repeat:02d}_{obs_seed}_{ref.budget}_{ref.quantile!r}.npy"
    if path.exists():
        return KdePosterior(np.load(path), method="reference", n_sims=ref.budget), pool
    if pool is None:
        pool = simulate_pool(model, ref.budget, derive_seed(cfg.base_seed, model.name, "reference"))
    post = reference_posterior(model, model.prior, s_obs, ref.budget, ref.quantile, 0, pool=pool)
    np.save(path, post.samples)
    return post, pool


def _run_cell(task: dict) -> dict:
    """One (method, budget, repeat) cell; runs in a worker process."""
    model = get_model(task["model"], **task["model_options"])
    row = {k: task[k] for k in ("model", "budget", "repeat", "seed")}
    row["method"] = METHOD_LABELS[task["method"]]
    try:
        post, secs = run_method(task["method"], model, task["s_obs"], task["budget"], task["seed"])
        if post.n_sims != task["budget"]:
            raise RuntimeError(f"method used {post.n_sims} simulations for budget {task['budget']}")
        cmp = compare(post, task["reference"], per_dim=task["per_dim"], seed=task["seed"])
        row.update(jsd=cmp.jsd, wall_time_s=secs, n_sims=post.n_sims, error="")
        return {"row": row, "grid": cmp.p, "reference_grid": cmp.q, "flags": post.flags}
    except (InsufficientBudgetError, ValueError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        row.update(jsd="", wall_time_s="", n_sims="", error=f"{type(exc).__name__}: {exc}")
        return {"row": row, "grid": None, "traceback": traceback.format_exc()}


def aggregate(rows) -> list[dict]:
    """Mean and standard error of JSD per (model, method, budget) over successful runs."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        if r["error"]:
            continue
        groups.setdefault((r["model"], r["method"], r["budget"]), []).append(float(r["jsd"]))
    out = []
    for (model, method, budget), vals in groups.items():
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
        out.append({"model": model, "method": method, "budget": budget, "jsd_mean": float(v.mean()), "jsd_se": se, "n": v.size})
    return out


def run_experiment(cfg: ExperimentConfig, log=print) -> int:
    """Run the battery and write its files; returns the number of failed runs."""
    model = get_model(cfg.model, **cfg.model_options)
    out = Path(cfg.output_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    cache = out / "cache"
    cache.mkdir(exist_ok=True)

    tasks, pool = [], None
    for repeat in range(cfg.n_repeats):
        obs_seed, _, s_obs = _observed(model, cfg.base_seed, repeat)
        ref, pool = _reference(cfg, model, repeat, obs_seed, s_obs, pool, cache)
        for method in cfg.methods:
            for budget in cfg.budgets:
                tasks.append(
                    {
                        "model": model.name,
                        "model_options": cfg.model_options,
                        "method": method,
                        "budget": budget,
                        "repeat": repeat,
                        "seed": derive_seed(cfg.base_seed, model.name, method, budget, repeat),
                        "obs_seed": obs_seed,
                        "s_obs": s_obs,
                        "reference": ref,
                        "per_dim": cfg.per_dim,
                    }
                )
    del pool
    log(f"{len(tasks)} runs on {cfg.jobs} worker(s)")

    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_run_cell, tasks, chunksize=1))
    else:
        results = [_run_cell(t) for t in tasks]

    # results come back in task order; writing happens here only
    rows = []
    for task, res in zip(tasks, results):
        row = res["row"]
        if cfg.timing == "none" and not row["error"]:
            row["wall_time_s"] = ""
        rows.append(row)
        stem = _stem(model.name, task["method"], task["budget"], task["repeat"])
        meta = {
            "model": model.name,
            "method": row["method"],
            "budget": task["budget"],
            "repeat": task["repeat"],
            "seed": task["seed"],
            "obs_seed": task["obs_seed"],
            "s_obs": task["s_obs"],
            "reference": asdict(cfg.reference),
        }
        if res["grid"] is None:
            meta["error"] = row["error"]
            log(f"FAILED {stem}: {row['error']}")
        else:
            write_grid_csv(res["grid"], out / "grids" / f"{stem}.grid.csv")
            write_grid_csv(res["reference_grid"], out / "grids" / f"{stem}.reference.grid.csv")
            meta["jsd"] = row["jsd"]
            meta["flags"] = res["flags"]
        write_meta_json(out / "grids" / f"{stem}.meta.json", meta)

    write_table_csv(rows, out / "runs.csv", RUN_COLUMNS)
    write_table_csv(aggregate(rows), out / "aggregate.csv", AGGREGATE_COLUMNS)
    write_meta_json(out / "experiment.meta.json", {"config": cfg.resolved(), "n_runs": len(rows)})
    failed = sum(1 for r in rows if r["error"])
    log(f"wrote {out / 'runs.csv'} ({len(rows) - failed} ok, {failed} failed)")
    return failed


# ---------------------------------------------------------------------------
# other subcommands


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v.strip()]


def cmd_simulate(args) -> int:
    model = get_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(args.seed, model.name, "simulate")
    theta = model.true_theta if args.theta is None else np.asarray(_parse_floats(args.theta))
    if args.n == 0:
        raw, s = observe(model, seed, theta)
        raw_to_csv(raw, out / f"{model.name}.raw.csv")
        summaries_to_csv(s, out / f"{model.name}.summaries.csv", theta)
        meta = {"model": model.name, "seed": seed, "theta": theta}
    else:
        thetas = model.prior.sample(args.n, np.random.default_rng(derive_seed(seed, "prior")))
        table = simulate_table(model, thetas, seed)
        summaries_to_csv(table.summaries, out / f"{model.name}.summaries.csv", table.theta)
        meta = {"model": model.name, "seed": seed, "n": args.n, "truncated": int(np.sum(table.flags))}
    write_meta_json(out / f"{model.name}.meta.json", meta)
    print(f"wrote {out}")
    return 0


def cmd_infer(args) -> int:
    model = get_model(args.model)
    method = _method_key(args.method)
    budget = args.budget[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obs_seed, _, s_obs = _observed(model, args.seed, 0)
    seed = derive_seed(args.seed, model.name, method, budget, 0)
    post, secs = run_method(method, model, s_obs, budget, seed)
    b = post.bound_samples(2000, seed)
    grid = post.on_grid(build_grid(b, b, args.per_dim))
    stem = f"{model.name}_{method}_{budget}"
    write_grid_csv(grid, out / f"{stem}.grid.csv")
    with open(out / f"{stem}.posterior.json", "w") as fh:
        json.dump(post.to_dict(), fh)
    meta = {"model": model.name, "method": METHOD_LABELS[method], "budget": budget, "seed": seed, "obs_seed": obs_seed, "s_obs": s_obs}
    if args.timing == "wall":
        meta["wall_time_s"] = secs
    write_meta_json(out / f"{stem}.meta.json", meta)
    mean = grid.mean()
    print(f"{METHOD_LABELS[method]} on {model.name}, {budget} simulations: posterior mean {np.array2string(mean, precision=4)}")
    return 0


def cmd_diagnose(args) -> int:
    model = get_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    budget = args.budget[0] if args.budget else 200_000
    obs_seed, _, s_obs = _observed(model, args.seed, 0)
    seed = derive_seed(args.seed, model.name, "diagnose", budget)
    qs = _parse_floats(args.quantiles) if args.quantiles else list(DIAGNOSTIC_QUANTILES)
    rows = residual_heterogeneity(model, model.prior, s_obs, qs, budget, seed, regression=args.regression)
    write_table_csv(rows, out / f"{model.name}.diagnostic.csv", DIAGNOSTIC_COLUMNS)
    write_meta_json(
        out / f"{model.name}.diagnostic.meta.json",
        {"model": model.name, "budget": budget, "seed": seed, "obs_seed": obs_seed, "method": args.regression},
    )
    for r in rows:
        print(f"{r.quantile:g}\t{r.jsd:.4f}")
    return 0


def cmd_jsd(args) -> int:
    p, q = read_grid_csv(args.p), read_grid_csv(args.q)
    print(repr(jsd(p, q)))
    return 0


def cmd_experiment(args) -> int:
    kwargs = load_config(args.config) if args.config else {}
    overrides = {
        "model": args.model,
        "methods": args.method,
        "budgets": args.budget,
        "n_repeats": args.repeats,
        "base_seed": args.seed if args.seed_given else None,
        "output_dir": args.out if args.out_given else None,
        "jobs": args.jobs,
        "timing": args.timing if args.timing_given else None,
    }
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    ref = dict(kwargs.get("reference") or {})
    if args.ref_budget is not None:
        ref["budget"] = args.ref_budget
    if args.ref_quantile is not None:
        ref["quantile"] = args.ref_quantile
    kwargs["reference"] = ref
    if "model" not in kwargs:
        raise SystemExit("experiment needs --model or a config file naming one")
    failed = run_experiment(ExperimentConfig(**kwargs))
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# argument parsing


class _Given(argparse.Action):
    """Store the value and remember that the flag was given explicitly."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        setattr(namespace, self.dest + "_given", True)


def _methods(text: str) -> list[str]:
    return [_method_key(m) for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agcabc", description="Adaptive Gaussian copula ABC experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, budget_default=None):
        p.add_argument("--model", help="ma2, mg1, lv, gc_toy or linear_gaussian")
        p.add_argument("--seed", type=int, default=0, action=_Given, help="base seed (default 0)")
        p.add_argument("--out", default="results", action=_Given, help="output directory")
        p.add_argument("--budget", type=_parse_ints, default=budget_default, help="simulation budget(s), comma separated")
        p.add_argument("--timing", choices=("wall", "none"), default="wall", action=_Given,
                       help="'none' leaves wall-clock columns empty so reruns are byte-identical")
        p.set_defaults(seed_given=False, out_given=False, timing_given=False)

    p = sub.add_parser("simulate", help="dump raw data and summaries")
    common(p)
    p.add_argument("--theta", help="comma-separated parameter vector (default: the model's true value)")
    p.add_argument("--n", type=int, default=0, help="simulate N prior draws instead of one dataset")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="run one method once")
    common(p, [10_000])
    p.add_argument("--method", default="agc")
    p.add_argument("--per-dim", type=int, default=30)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("experiment", help="run a JSD battery")
    common(p)
    p.add_argument("--config", help="YAML file; flags given on the command line override it")
    p.add_argument("--method", type=_methods, help="methods, comma separated (default: all)")
    p.add_argument("--repeats", type=int, help="observed datasets per cell (default 15)")
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--ref-budget", type=int, help="reference pool size (default 1e6)")
    p.add_argument("--ref-quantile", type=float, help="reference acceptance quantile (default 1e-3)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("diagnose", help="residual-heterogeneity table")
    common(p)
    p.add_argument("--quantiles", help="comma-separated distance quantiles (default 0.001,0.01,0.1,0.25)")
    p.add_argument("--regression", choices=("select", "linear", "mlp"), default="select")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("jsd", help="JSD between two grid CSV files")
    p.add_argument("p")
    p.add_argument("q")
    p.set_defaults(func=cmd_jsd)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command in ("simulate", "infer", "diagnose") and not args.model:
        build_parser().error(f"{args.command} needs --model")
    try:
        return args.func(args)
    except (ValueError, KeyError, InsufficientBudgetError, OSError) as exc:
        print(f"agcabc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

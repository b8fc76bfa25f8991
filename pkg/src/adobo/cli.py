"""Command-line experiment runner.

Subcommands::

    adobo run      run one method for one or more seeds
    adobo oracle   compute (and cache) the reference optimum J0*
    adobo compare  median/IQR tables and eta curves over finished runs

Configuration files are INI with sections ``[plant]``, ``[cost]``, ``[bo]``
and ``[run]``; every key is optional and overrides the plant preset. Vector
values are comma separated; ``inf`` is accepted. Example::

    [plant]
    name = lin2d_hinge

    [cost]
    lower = 0.5, -0.4
    weight = 100

    [run]
    method = klearn
    budget = 400
    x0 = 2, 1

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, presets
from .bo import AcquisitionConfig
from .core import Box, CostSpec, SoftBounds
from .dobo import ExperimentConfig, run_adobo
from .gp import HyperBounds
from .harness import BoSettings, RunRecord
from .oracle import optimal_cost

logger = logging.getLogger(__name__)

METHODS = ("adobo", "qr", "klearn", "ls", "useq")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CACHE_NAME = "oracle_cache.json"
DEFAULT_CHECKPOINTS = (200, 400, 600)


class ConfigError(Exception):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunOptions:
    method: str = "adobo"
    alpha: float = 0.0  # noise level of the (Q, R)-tuning design model
    input_limit: Optional[float] = None  # control-sequence box half-width
    oracle_seed: int = 0


# ---------------------------------------------------------------- config


def _vector(section: str, key: str, raw: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in raw.replace(";", ",").split(",") if t.strip()])
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected comma-separated numbers, got {raw!r}") from None


def _matrix(section: str, key: str, raw: str, n: int) -> np.ndarray:
    """A length-n vector is a diagonal; n*n values are a row-major matrix."""
    vals = _vector(section, key, raw)
    if vals.size == n:
        return np.diag(vals)
    if vals.size == n * n:
        return vals.reshape(n, n)
    raise ConfigError(f"[{section}] {key}: expected {n} diagonal or {n * n} entries, got {vals.size}")


def _get(parser, section, key, kind, default=None):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(parser: configparser.ConfigParser) -> tuple[ExperimentConfig, RunOptions]:
    """Build an experiment from a parsed INI file (sections may be missing)."""
    for section in ("plant", "cost", "bo", "run"):
        if not parser.has_section(section):
            parser.add_section(section)
    unknown = set(parser.sections()) - {"plant", "cost", "bo", "run"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")

    name = parser.get("plant", "name", fallback="dubins")
    try:
        cfg = presets.preset(name)
    except ValueError as exc:
        raise ConfigError(f"[plant] name: {exc}") from None
    plant = cfg.plant
    params = dict(plant.params)
    for key in ("M", "m", "l", "g"):
        if parser.has_option("plant", key):
            params[key] = _get(parser, "plant", key, float)
    dt = _get(parser, "plant", "dt", float, plant.dt)
    try:
        plant = type(plant)(plant.kind, dt, params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[plant]: {exc}") from None
    n_x, n_u = plant.n_x, plant.n_u

    c = cfg.cost
    get_m = lambda key, cur, n: (  # noqa: E731
        _matrix("cost", key, parser.get("cost", key), n) if parser.has_option("cost", key) else cur
    )
    get_v = lambda key, cur: (  # noqa: E731
        _vector("cost", key, parser.get("cost", key)) if parser.has_option("cost", key) else cur
    )
    sb = c.soft_bounds
    lower = get_v("lower", sb.lower if sb else None)
    upper = get_v("upper", sb.upper if sb else None)
    weight = _get(parser, "cost", "weight", float, sb.weight if sb else 0.0)
    soft = None
    if lower is not None or upper is not None:
        lower = np.full(n_x, -np.inf) if lower is None else lower
        upper = np.full(n_x, np.inf) if upper is None else upper
        try:
            soft = SoftBounds(lower, upper, weight)
        except ValueError as exc:
            raise ConfigError(f"[cost] lower/upper/weight: {exc}") from None
    try:
        cost = CostSpec(
            get_m("Q", c.Q, n_x),
            get_m("R", c.R, n_u),
            get_m("Qf", c.Qf, n_x),
            get_v("x_ref", c.x_ref),
            get_v("u_ref", c.u_ref),
            soft,
        )
    except ValueError as exc:
        raise ConfigError(f"[cost]: {exc}") from None

    acq = AcquisitionConfig(
        n_random=_get(parser, "bo", "n_random", int, 2000),
        n_refine=_get(parser, "bo", "n_refine", int, 5),
        refine_iters=_get(parser, "bo", "refine_iters", int, 50),
        xi=_get(parser, "bo", "xi", float, 0.0),
    )
    settings = BoSettings(
        acquisition=acq,
        hyper=HyperBounds(ard=_get(parser, "bo", "ard", bool, False)),
        restarts=_get(parser, "bo", "restarts", int, cfg.settings.restarts),
        warp=_get(parser, "bo", "warp", bool, cfg.settings.warp),
        n_init=_get(parser, "bo", "n_init", int, cfg.settings.n_init),
    )
    box = cfg.bounds
    if parser.has_option("bo", "bounds"):
        lo_hi = _vector("bo", "bounds", parser.get("bo", "bounds"))
        if lo_hi.size != 2 or not lo_hi[0] < lo_hi[1] or not np.all(np.isfinite(lo_hi)):
            raise ConfigError("[bo] bounds: expected 'low, high' with finite low < high")
        box = Box.uniform(lo_hi[0], lo_hi[1], n_x * (n_x + n_u))

    method = parser.get("run", "method", fallback="adobo")
    if method not in METHODS:
        raise ConfigError(f"[run] method: {method!r} is not one of {METHODS}")
    controller = parser.get("run", "controller", fallback=cfg.controller)
    if controller not in ("auto", "lqr", "mpc"):
        raise ConfigError(f"[run] controller: {controller!r} is not auto, lqr or mpc")
    x0 = _vector("run", "x0", parser.get("run", "x0")) if parser.has_option("run", "x0") else cfg.x0
    j_star = _get(parser, "run", "j_star", float, None)
    try:
        config = ExperimentConfig(
            plant=plant,
            cost=cost,
            x0=x0,
            N=_get(parser, "run", "N", int, cfg.N),
            bounds=box,
            settings=settings,
            budget=_get(parser, "run", "budget", int, cfg.budget),
            seed=_get(parser, "run", "seed", int, 0),
            controller=controller,
            j_star=j_star,
            name=name,
        )
    except ValueError as exc:
        raise ConfigError(f"[run]: {exc}") from None
    options = RunOptions(
        method=method,
        alpha=_get(parser, "run", "alpha", float, 0.0),
        input_limit=_get(parser, "run", "input_limit", float, None),
        oracle_seed=_get(parser, "run", "oracle_seed", int, 0),
    )
    return config, options


def load_config(path: Optional[str]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep Q/R/Qf case
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return parser


def apply_overrides(parser: configparser.ConfigParser, args) -> None:
    """Command-line flags win over the file."""
    for section in ("plant", "bo", "run"):
        if not parser.has_section(section):
            parser.add_section(section)
    if getattr(args, "plant", None):
        parser.set("plant", "name", args.plant)
    if getattr(args, "method", None):
        parser.set("run", "method", args.method)
    if getattr(args, "budget", None) is not None:
        parser.set("run", "budget", str(args.budget))
    if getattr(args, "warp", None):
        parser.set("bo", "warp", args.warp)
    if getattr(args, "alpha", None) is not None:
        parser.set("run", "alpha", repr(args.alpha))


def _fmt_vec(v) -> str:
    return ", ".join(repr(float(x)) for x in np.ravel(v))


def snapshot(config: ExperimentConfig, options: RunOptions) -> configparser.ConfigParser:
    """Fully resolved INI that reproduces the run when replayed."""
    p = configparser.ConfigParser()
    p.optionxform = str
    p["plant"] = {"name": config.name, "dt": repr(config.plant.dt)}
    for k, v in config.plant.params.items():
        p["plant"][k] = repr(float(v))
    c = config.cost
    p["cost"] = {
        "Q": _fmt_vec(c.Q),
        "R": _fmt_vec(c.R),
        "Qf": _fmt_vec(c.Qf),
        "x_ref": _fmt_vec(c.x_ref),
        "u_ref": _fmt_vec(c.u_ref),
    }
    if c.soft_bounds is not None:
        p["cost"]["lower"] = _fmt_vec(c.soft_bounds.lower)
        p["cost"]["upper"] = _fmt_vec(c.soft_bounds.upper)
        p["cost"]["weight"] = repr(c.soft_bounds.weight)
    s = config.settings
    p["bo"] = {
        "warp": str(s.warp).lower(),
        "restarts": str(s.restarts),
        "n_init": str(s.n_init),
        "ard": str(s.hyper.ard).lower(),
        "n_random": str(s.acquisition.n_random),
        "n_refine": str(s.acquisition.n_refine),
        "refine_iters": str(s.acquisition.refine_iters),
        "xi": repr(s.acquisition.xi),
        "bounds": _fmt_vec([config.bounds.lower.min(), config.bounds.upper.max()]),
    }
    p["run"] = {
        "method": options.method,
        "x0": _fmt_vec(config.x0),
        "N": str(config.N),
        "budget": str(config.budget),
        "seed": str(config.seed),
        "controller": config.controller,
        "alpha": repr(options.alpha),
        "oracle_seed": str(options.oracle_seed),
    }
    if options.input_limit is not None:
        p["run"]["input_limit"] = repr(options.input_limit)
    if config.j_star is not None:
        p["run"]["j_star"] = repr(config.j_star)
    return p


# ---------------------------------------------------------------- oracle cache


def oracle_key(config: ExperimentConfig, seed: int = 0) -> str:
    c = config.cost
    payload = {
        "plant": [config.plant.kind, config.plant.dt, sorted(config.plant.params.items())],
        "Q": c.Q.tolist(),
        "R": c.R.tolist(),
        "Qf": c.Qf.tolist(),
        "x_ref": c.x_ref.tolist(),
        "u_ref": c.u_ref.tolist(),
        "soft": None
        if c.soft_bounds is None
        else [
            [repr(x) for x in c.soft_bounds.lower],
            [repr(x) for x in c.soft_bounds.upper],
            c.soft_bounds.weight,
        ],
        "x0": config.x0.tolist(),
        "N": config.N,
        # exact routes ignore the multistart seed
        "seed": seed if not config.plant.is_linear else None,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def cached_oracle(config: ExperimentConfig, cache_dir: Path, seed: int = 0) -> tuple[float, bool]:
    """``(J0*, served_from_cache)``; computes and stores on a miss."""
    path = Path(cache_dir) / CACHE_NAME
    cache = json.loads(path.read_text()) if path.exists() else {}
    key = oracle_key(config, seed)
    if key in cache:
        return float(cache[key]["j_star"]), True
    j = optimal_cost(config.plant, config.cost, config.x0, config.N, rng=np.random.default_rng(seed))
    cache[key] = {"j_star": j, "plant": config.name, "N": config.N, "x0": config.x0.tolist()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cache, indent=1, sort_keys=True))
    return j, False


# ---------------------------------------------------------------- run


def execute(config: ExperimentConfig, options: RunOptions, trace: Optional[dict] = None) -> list[RunRecord]:
    """Dispatch to the method named in ``options``."""
    m = options.method
    if m == "adobo":
        return run_adobo(config, trace=trace)
    if m == "qr":
        return baselines.run_qr_tuning(config, alpha=options.alpha, trace=trace)
    if m == "klearn":
        return baselines.run_k_learning(config, trace=trace)
    if m == "ls":
        return baselines.run_ls_identification(config, trace=trace)
    if m == "useq":
        return baselines.run_control_sequence_learning(
            config, input_limit=options.input_limit, trace=trace
        )
    raise ConfigError(f"unknown method {m!r}")


def write_records(path: Path, records: Sequence[RunRecord], method: str) -> None:
    D = records[0].theta.size if records else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n"] + [f"theta_{i + 1}" for i in range(D)] + ["J", "y", "J_best", "eta", "method", "flag"])
        for r in records:
            w.writerow(
                [r.n]
                + [repr(float(t)) for t in r.theta]
                + [repr(r.raw_cost), repr(r.warped_cost), repr(r.best_so_far), repr(r.eta), method, r.flag]
            )


def read_records(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def run_one(config: ExperimentConfig, options: RunOptions, out: Path) -> Path:
    """Execute one seed and write its run directory."""
    run_dir = Path(out) / f"{config.name}_{options.method}_seed{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    if config.j_star is None:
        j_star, _ = cached_oracle(config, Path(out), options.oracle_seed)
        config = config.replace(j_star=j_star)
    with open(run_dir / "config.ini", "w", encoding="utf-8") as fh:
        snapshot(config, options).write(fh)
    trace: dict = {}
    t0 = time.perf_counter()
    records = execute(config, options, trace)
    wall = time.perf_counter() - t0
    write_records(run_dir / "records.csv", records, options.method)
    if trace.get("y") is not None and len(trace["y"]):
        with open(run_dir / "gp_data.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            Z = trace["Z"]
            w.writerow([f"z_{i + 1}" for i in range(Z.shape[1])] + ["y_standardized"])
            for z, y in zip(Z, trace["y"]):
                w.writerow([repr(float(t)) for t in z] + [repr(float(y))])
    best = min(records, key=lambda r: r.raw_cost)
    params = trace.get("params")
    summary = {
        "plant": config.name,
        "method": options.method,
        "seed": config.seed,
        "budget": config.budget,
        "j_star": config.j_star,
        "final_eta": records[-1].eta,
        "final_J_best": records[-1].best_so_far,
        "best_theta": best.theta.tolist(),
        "wall_time_s": wall,
        "kernel": None
        if params is None
        else {
            "signal_std": params.signal_std,
            "lengthscales": np.atleast_1d(params.lengthscales).tolist(),
            "noise_std": params.noise_std,
        },
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    return run_dir


def parse_seeds(text: str) -> list[int]:
    """``"7"``, ``"1..5"`` or ``"1,3,9"``."""
    try:
        if ".." in text:
            a, b = text.split("..")
            seeds = list(range(int(a), int(b) + 1))
        else:
            seeds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: cannot parse {text!r}") from None
    if not seeds:
        raise ConfigError("--seeds: empty seed list")
    return seeds


def _run_job(job):
    config, options, out = job
    return str(run_one(config, options, out))


def cmd_run(args) -> int:
    parser = load_config(args.config)
    apply_overrides(parser, args)
    config, options = parse_config(parser)
    if args.seeds is not None:
        seeds = parse_seeds(args.seeds)
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [config.seed]
    out = Path(args.out)
    if config.j_star is None:
        # compute once before fanning out so workers share the cached value
        j_star, _ = cached_oracle(config, out, options.oracle_seed)
        config = config.replace(j_star=j_star)
    jobs = [(config.replace(seed=s), options, out) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            dirs = list(pool.map(_run_job, jobs))
    else:
        dirs = [_run_job(j) for j in jobs]
    for d in dirs:
        summary = json.loads((Path(d) / "summary.json").read_text())
        print(f"{d}: final eta {summary['final_eta']:.4g}% (J* = {summary['j_star']:.6g})")
    return EXIT_OK


def cmd_oracle(args) -> int:
    parser = load_config(args.config)
    apply_overrides(parser, args)
    config, options = parse_config(parser)
    seed = options.oracle_seed if args.seed is None else args.seed
    j, hit = cached_oracle(config, Path(args.out), seed)
    print(f"{config.name}: J0* = {j!r}{' (cached)' if hit else ''}")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def _quantiles(values) -> tuple[float, float, float]:
    q25, med, q75 = np.percentile(np.asarray(values, float), [25, 50, 75])
    return float(med), float(q25), float(q75)


def compare_runs(run_dirs: Sequence[Path], checkpoints: Sequence[int]):
    """Per-method median/IQR of eta at checkpoints, and per-iteration curves."""
    runs = []
    for d in run_dirs:
        d = Path(d)
        try:
            summary = json.loads((d / "summary.json").read_text())
            rows = read_records(d / "records.csv")
        except OSError as exc:
            raise ConfigError(f"{d}: not a finished run directory ({exc})") from None
        runs.append((summary, np.array([float(r["eta"]) for r in rows])))
    plants = {s["plant"] for s, _ in runs}
    if len(plants) > 1:
        raise ConfigError(f"runs are on different plants: {sorted(plants)}")
    by_method: dict[str, list[np.ndarray]] = {}
    for s, eta in runs:
        by_method.setdefault(s["method"], []).append(eta)
    table, curves = [], []
    for method, etas in by_method.items():
        shortest = min(len(e) for e in etas)
        for c in checkpoints:
            if c > shortest:
                raise ConfigError(f"checkpoint {c} exceeds the shortest {method} run ({shortest} iterations)")
            med, q25, q75 = _quantiles([e[c - 1] for e in etas])
            table.append({"method": method, "iteration": c, "runs": len(etas), "median": med, "q25": q25, "q75": q75})
        for n in range(shortest):
            med, q25, q75 = _quantiles([e[n] for e in etas])
            curves.append({"method": method, "n": n + 1, "median": med, "q25": q25, "q75": q75})
    return table, curves


def _write_dicts(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_compare(args) -> int:
    try:
        checkpoints = [int(c) for c in args.checkpoints.split(",") if c.strip()]
    except ValueError:
        raise ConfigError(f"--checkpoints: cannot parse {args.checkpoints!r}") from None
    table, curves = compare_runs(args.runs, checkpoints)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_dicts(out / "compare_table.csv", table)
    _write_dicts(out / "eta_curves.csv", curves)
    print(f"{'method':<8} {'iter':>5} {'runs':>4} {'median':>10} {'q25':>10} {'q75':>10}")
    for r in table:
        print(
            f"{r['method']:<8} {r['iteration']:>5} {r['runs']:>4} "
            f"{r['median']:>10.4g} {r['q25']:>10.4g} {r['q75']:>10.4g}"
        )
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adobo", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment file")
        p.add_argument("--plant", choices=sorted(presets.PRESETS), help="plant preset")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")

    r = sub.add_parser("run", help="run a method")
    common(r)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--budget", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", help="seed list: '1..5' or '1,2,7'")
    r.add_argument("--warp", choices=("on", "off"))
    r.add_argument("--alpha", type=float, help="design-model noise for --method qr")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("oracle", help="compute and cache J0*")
    common(o)
    o.add_argument("--seed", type=int, help="multistart seed (nonlinear plants)")
    o.set_defaults(func=cmd_oracle)

    c = sub.add_parser("compare", help="summarize finished runs")
    c.add_argument("runs", nargs="+", help="run directories")
    c.add_argument("--checkpoints", default=",".join(map(str, DEFAULT_CHECKPOINTS)))
    c.add_argument("--out", default="compare")
    c.set_defaults(func=cmd_compare)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 -- report, then signal runtime failure
        logger.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

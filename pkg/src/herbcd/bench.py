"""
Experiment runner: multi-seed runs with shared initializations, trace export
and summary statistics.

Config grammar (INI, parsed with :mod:`configparser`)::

    [experiment]
    version = 1                 # required, must be 1
    n_runs = 20                 # >= 1
    max_outer_iters = 200       # at least one of max_outer_iters / max_time
    max_time =                  # seconds, empty for none
    seed = 0                    # run j draws its init from seed + j
    record_e = false            # factor error per iteration (needs a truth)
    output_dir = results        # overridden by --output
    inner_max_iters = 50
    inner_tol = 1e-2
    tucker_ranks =              # e.g. 10,10,10 to run on a HOSVD compression
    rotate_modes = false        # move the smallest mode last
    her_true_f = false          # HER traces record true F instead of F_hat

    [instance]                  # synthetic ...
    shape = 50,50,50
    rank = 10
    noise_sigma = 0
    ill_conditioned = false
    seed = 0
    # ... or from file (paths relative to the config file):
    # path = tensor.bin
    # rank = 10
    # truth = truth.bin

    [algorithm her-ahals]       # one section per algorithm, NAME is free
    driver = her                # ao | her | bro | gr | ls | apg | ibpg
    solver = ahals              # ao / her / bro / gr / ls only
    form = modified             # bro / gr / ls only
    beta0 = 0.5                 # her only, also gamma, gamma_bar, eta

Output layout::

    <output_dir>/traces/<algorithm>_run<j>.csv   iter,time_s,f,e,restarted,beta
    <output_dir>/manifest.json                   per-run f0, final f/e, seeds
    <output_dir>/summary.json                    per-algorithm statistics
    <output_dir>/curves/<algorithm>_iter.csv     median f - f_min per iteration
    <output_dir>/curves/<algorithm>_time.csv     median f - f_min on a time grid
"""
import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .ao import AoConfig, ao_run, current_objective
from .baselines import apg_run, extrapolated_ao_run, ibpg_run
from .datagen import SyntheticSpec, generate, random_init
from .fileio import load_kruskal, load_tensor, save_kruskal, save_tensor
from .her import HerParams, her_run
from .metrics import factor_error, interpolate_curve, median_curve
from .nnls import SOLVERS, InnerStop
from .tensor_core import GramCache, KruskalModel, as_provider
from .tucker import hosvd_compress

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_OUTPUT",
    "EXIT_ALGORITHM",
    "EXIT_SOLVER",
    "EXIT_TRACES",
    "BenchError",
    "AlgorithmSpec",
    "ExperimentConfig",
    "load_config",
    "run_experiment",
    "postprocess",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_OUTPUT = 4
EXIT_ALGORITHM = 5
EXIT_SOLVER = 6
EXIT_TRACES = 7

CONFIG_VERSION = 1
DRIVERS = ("ao", "her", "bro", "gr", "ls", "apg", "ibpg")
CSV_HEADER = "iter,time_s,f,e,restarted,beta"
HER_KEYS = ("beta0", "gamma", "gamma_bar", "eta")
TIME_GRID_POINTS = 200


class BenchError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    driver: str
    solver: str = "ahals"
    form: str = "modified"
    her: HerParams = HerParams()


@dataclass
class ExperimentConfig:
    algorithms: list
    n_runs: int = 20
    max_outer_iters: Optional[int] = None
    max_time: Optional[float] = None
    seed: int = 0
    record_e: bool = False
    output_dir: str = "results"
    inner_stop: InnerStop = InnerStop()
    tucker_ranks: Optional[tuple] = None
    rotate_modes: bool = False
    her_true_f: bool = False
    synthetic: Optional[SyntheticSpec] = None
    path: Optional[str] = None
    truth_path: Optional[str] = None
    rank: Optional[int] = None

    def __post_init__(self):
        if self.n_runs < 1:
            raise BenchError(EXIT_CONFIG, "n_runs must be >= 1")
        if self.max_outer_iters is None and self.max_time is None:
            raise BenchError(EXIT_CONFIG, "set max_outer_iters and/or max_time")
        if not self.algorithms:
            raise BenchError(EXIT_CONFIG, "no [algorithm ...] section")
        if (self.synthetic is None) == (self.path is None):
            raise BenchError(EXIT_CONFIG, "[instance] needs either shape or path")


# ---------------------------------------------------------------- config


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt(section, key, conv):
    raw = section.get(key, fallback="").strip()
    return conv(raw) if raw else None


def _parse_algorithm(name: str, sec) -> AlgorithmSpec:
    driver = sec.get("driver", fallback="").strip()
    if driver not in DRIVERS:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: driver must be one of {DRIVERS}")
    keys = set(sec.keys()) - {"driver"}
    if driver in ("apg", "ibpg") and "solver" in keys:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: {driver} takes no NNLS solver")
    if driver not in ("bro", "gr", "ls") and "form" in keys:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: form only applies to bro/gr/ls")
    her_keys = keys & set(HER_KEYS)
    if driver != "her" and her_keys:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: {sorted(her_keys)} only apply to her")
    unknown = keys - {"solver", "form", *HER_KEYS}
    if unknown:
        raise BenchError(EXIT_CONFIG, f"[algorithm {name}]: unknown keys {sorted(unknown)}")
    solver = sec.get("solver", fallback="ahals").strip()
    if solver not in SOLVERS:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: unknown solver {solver!r}")
    form = sec.get("form", fallback="modified").strip()
    if form not in ("original", "modified"):
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: form must be original or modified")
    if driver == "ls" and form == "original":
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: ls has no original form")
    try:
        her = HerParams(**{k: float(sec[k]) for k in her_keys})
    except ValueError as exc:
        raise BenchError(EXIT_ALGORITHM, f"[algorithm {name}]: {exc}") from None
    return AlgorithmSpec(name, driver, solver, form, her)


def load_config(path) -> ExperimentConfig:
    """Parse an experiment config; raise :class:`BenchError` on any problem."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise BenchError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
    try:
        return _build_config(parser, path.parent)
    except BenchError:
        raise
    except (KeyError, ValueError) as exc:
        raise BenchError(EXIT_CONFIG, f"invalid config {path}: {exc}") from None


def _build_config(parser, base: Path) -> ExperimentConfig:
    if not parser.has_section("experiment") or not parser.has_section("instance"):
        raise BenchError(EXIT_CONFIG, "config needs [experiment] and [instance] sections")
    ex, inst = parser["experiment"], parser["instance"]
    version = ex.getint("version", fallback=None)
    if version != CONFIG_VERSION:
        raise BenchError(EXIT_CONFIG, f"config version must be {CONFIG_VERSION}, got {version}")
    algorithms = []
    for sec in parser.sections():
        if sec.startswith("algorithm "):
            name = sec[len("algorithm "):].strip()
            if not name or any(c in name for c in "/\\"):
                raise BenchError(EXIT_CONFIG, f"bad algorithm name {name!r}")
            algorithms.append(_parse_algorithm(name, parser[sec]))
        elif sec not in ("experiment", "instance"):
            raise BenchError(EXIT_CONFIG, f"unknown section [{sec}]")
    synthetic = path = truth = None
    if inst.get("path", fallback="").strip():
        path = str(base / inst["path"].strip())
        t = inst.get("truth", fallback="").strip()
        truth = str(base / t) if t else None
        rank = inst.getint("rank")
    else:
        synthetic = SyntheticSpec(
            shape=_ints(inst["shape"]),
            rank=inst.getint("rank"),
            noise_sigma=inst.getfloat("noise_sigma", fallback=0.0),
            ill_conditioned=inst.getboolean("ill_conditioned", fallback=False),
            seed=inst.getint("seed", fallback=0),
        )
        rank = synthetic.rank
    max_iters = _opt(ex, "max_outer_iters", int)
    max_time = _opt(ex, "max_time", float)
    if (max_iters is not None and max_iters < 1) or (max_time is not None and max_time <= 0):
        raise BenchError(EXIT_CONFIG, "budgets must be positive")
    return ExperimentConfig(
        algorithms=algorithms,
        n_runs=ex.getint("n_runs", fallback=20),
        max_outer_iters=max_iters,
        max_time=max_time,
        seed=ex.getint("seed", fallback=0),
        record_e=ex.getboolean("record_e", fallback=False),
        output_dir=ex.get("output_dir", fallback="results").strip(),
        inner_stop=InnerStop(ex.getint("inner_max_iters", fallback=50),
                             ex.getfloat("inner_tol", fallback=1e-2)),
        tucker_ranks=_opt(ex, "tucker_ranks", _ints),
        rotate_modes=ex.getboolean("rotate_modes", fallback=False),
        her_true_f=ex.getboolean("her_true_f", fallback=False),
        synthetic=synthetic,
        path=path,
        truth_path=truth,
        rank=rank,
    )


# ---------------------------------------------------------------- running


def _rotation(shape) -> list:
    """Mode order that moves the (first) smallest mode last."""
    last = int(np.argmin(shape))
    return [p for p in range(len(shape)) if p != last] + [last]


def _load_instance(cfg: ExperimentConfig):
    if cfg.synthetic is not None:
        tensor, truth = generate(cfg.synthetic)
    else:
        try:
            tensor = load_tensor(cfg.path)
            truth = load_kruskal(cfg.truth_path) if cfg.truth_path else None
        except (OSError, ValueError) as exc:
            raise BenchError(EXIT_CONFIG, f"cannot load instance: {exc}") from None
    order = list(range(tensor.ndim))
    if cfg.rotate_modes:
        order = _rotation(tensor.shape)
        tensor = np.ascontiguousarray(np.transpose(tensor, order))
        if truth is not None:
            truth = KruskalModel([truth.factors[p] for p in order])
    data = tensor
    if cfg.tucker_ranks is not None:
        ranks = [cfg.tucker_ranks[p] for p in order]
        try:
            data = hosvd_compress(tensor, ranks)
        except ValueError as exc:
            raise BenchError(EXIT_CONFIG, f"tucker_ranks: {exc}") from None
    return tensor, data, truth, order


def _run_one(alg: AlgorithmSpec, data, init, cfg: ExperimentConfig, truth):
    ao_cfg = AoConfig(solver=alg.solver, inner_stop=cfg.inner_stop,
                      max_outer_iters=cfg.max_outer_iters, max_time=cfg.max_time,
                      record_factor_error=cfg.record_e and truth is not None)
    if alg.driver == "ao":
        return ao_run(data, init, ao_cfg, truth)
    if alg.driver == "her":
        return her_run(data, init, ao_cfg, alg.her, truth, record_true_f=cfg.her_true_f)
    if alg.driver in ("bro", "gr", "ls"):
        return extrapolated_ao_run(data, init, ao_cfg, alg.driver, alg.form, truth=truth)
    if alg.driver == "apg":
        return apg_run(data, init, ao_cfg, truth=truth)
    return ibpg_run(data, init, ao_cfg, truth=truth)


def final_objective(data, model) -> float:
    """True objective of ``model`` (which may hold unprojected extrapolated blocks)."""
    provider = as_provider(data)
    factors = list(model.factors)
    cache = GramCache.from_factors(factors, provider.norm_sq)
    return current_objective(provider, factors, cache)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return repr(float(v))


def write_trace(path, trace) -> None:
    lines = [CSV_HEADER]
    for r in trace:
        lines.append(",".join([str(r.k), _fmt(r.t), _fmt(r.f), _fmt(r.e), _fmt(r.restarted), _fmt(r.beta)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> dict:
    """Columns of a trace CSV; empty cells become NaN."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: bad header")
    cols = {name: [] for name in CSV_HEADER.split(",")}
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(cols):
            raise ValueError(f"{path}: bad row {line!r}")
        for name, cell in zip(cols, cells):
            cols[name].append(float(cell) if cell else np.nan)
    return {k: np.array(v) for k, v in cols.items()}


def _prepare_output(out: Path) -> None:
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
        (out / "curves").mkdir(exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise BenchError(EXIT_OUTPUT, f"output directory {out} is not writable: {exc}") from None


def run_experiment(cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> int:
    """Run every (algorithm, run) pair, write traces, manifest, summary and curves."""
    out = Path(output_dir or cfg.output_dir)
    _prepare_output(out)
    tensor, data, truth, order = _load_instance(cfg)
    if cfg.rank is None or cfg.rank < 1:
        raise BenchError(EXIT_CONFIG, "rank must be >= 1")
    original_shape = [tensor.shape[order.index(p)] for p in range(tensor.ndim)]
    inits = []
    for j in range(cfg.n_runs):
        m = random_init(original_shape, cfg.rank, cfg.seed + j)
        inits.append(KruskalModel([m.factors[p] for p in order]))

    jobs = [(alg, j) for j in range(cfg.n_runs) for alg in cfg.algorithms]

    def work(job):
        alg, j = job
        try:
            model, trace = _run_one(alg, data, inits[j], cfg, truth)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            return alg, j, None, None, f"{type(exc).__name__}: {exc}"
        write_trace(out / "traces" / f"{alg.name}_run{j}.csv", trace)
        return alg, j, model, trace, None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]

    runs = []
    errors = []
    for alg, j, model, trace, err in results:
        entry = {"algorithm": alg.name, "run": j, "init_seed": cfg.seed + j}
        if err is not None:
            entry["error"] = err
            errors.append(f"{alg.name} run {j}: {err}")
        else:
            entry.update({
                "f0": trace.f0,
                "e0": trace.e0,
                "f_final": final_objective(data, model),
                "e_final": factor_error(model, truth) if truth is not None else None,
                "iterations": len(trace),
                "time_s": float(trace.records[-1].t) if len(trace) else 0.0,
                "restarts": trace.restarts if alg.driver in ("her", "bro", "gr", "ls", "apg") else None,
            })
        runs.append(entry)
    noiseless = cfg.synthetic is not None and cfg.synthetic.noise_sigma == 0
    manifest = {
        "version": CONFIG_VERSION,
        "shape": list(tensor.shape),
        "mode_order": order,
        "rank": cfg.rank,
        "seed": cfg.seed,
        "n_runs": cfg.n_runs,
        "noiseless": noiseless,
        "algorithms": [{"name": a.name, "driver": a.driver} for a in cfg.algorithms],
        "runs": runs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if errors:
        for e in errors:
            print(f"bench: solver error in {e}", file=sys.stderr)
        return EXIT_SOLVER
    postprocess(out)
    return EXIT_OK


# ---------------------------------------------------------------- post-processing


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"median": float(np.median(v)), "min": float(v.min()), "max": float(v.max())}


def summarize_runs(manifest: dict) -> dict:
    """Per-algorithm statistics of final f (and e) plus global minima."""
    runs = [r for r in manifest["runs"] if "error" not in r]
    f_all = [r["f_final"] for r in runs]
    e_all = [r["e_final"] for r in runs if r.get("e_final") is not None]
    f_min = 0.0 if manifest.get("noiseless") else (float(min(f_all)) if f_all else None)
    records = []
    for alg in manifest["algorithms"]:
        mine = [r for r in runs if r["algorithm"] == alg["name"]]
        if not mine:
            continue
        fs = _stats([r["f_final"] for r in mine])
        rec = {"algorithm": alg["name"], "runs": len(mine),
               "f_median": fs["median"], "f_min": fs["min"], "f_max": fs["max"]}
        es = [r["e_final"] for r in mine if r.get("e_final") is not None]
        if es:
            rec["e_median"] = float(np.median(es))
        if alg["driver"] == "her":
            rec["restarts_total"] = int(sum(r["restarts"] or 0 for r in mine))
        records.append(rec)
    return {"algorithms": records, "f_min": f_min, "e_min": float(min(e_all)) if e_all else None}


def postprocess(out) -> dict:
    """Write ``summary.json`` and median curves from a finished output directory."""
    out = Path(out)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise BenchError(EXIT_TRACES, f"cannot read manifest in {out}: {exc}") from None
    summary = summarize_runs(manifest)
    f_min = summary["f_min"] or 0.0
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    f0 = {(r["algorithm"], r["run"]): r.get("f0") for r in manifest["runs"]}
    for alg in manifest["algorithms"]:
        name = alg["name"]
        traces = []
        for j in range(manifest["n_runs"]):
            path = out / "traces" / f"{name}_run{j}.csv"
            if not path.exists():
                raise BenchError(EXIT_TRACES, f"missing trace {path}")
            try:
                traces.append((f0.get((name, j)), read_trace(path)))
            except ValueError as exc:
                raise BenchError(EXIT_TRACES, str(exc)) from None
        it_curve, grid, t_curve = median_curves(traces)
        _write_columns(curves / f"{name}_iter.csv", "iter,f_minus_fmin",
                       np.arange(1, it_curve.size + 1), it_curve - f_min)
        _write_columns(curves / f"{name}_time.csv", "time_s,f_minus_fmin", grid, t_curve - f_min)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def median_curves(traces, n_grid: int = TIME_GRID_POINTS):
    """
    Median of ``(f0, columns)`` traces over iterations and over a shared time grid.

    Runs stopped early by a time budget are held at their last value. On the
    time axis each run starts at ``(0, f0)`` when ``f0`` is known.
    """
    fs = [cols["f"] for _, cols in traces]
    if not fs or any(f.size == 0 for f in fs):
        raise BenchError(EXIT_TRACES, "empty trace")
    n = max(f.size for f in fs)
    it_curve = median_curve([np.concatenate([f, np.full(n - f.size, f[-1])]) for f in fs])
    t_end = max(cols["time_s"][-1] for _, cols in traces)
    grid = np.linspace(0.0, t_end, n_grid)
    sampled = []
    for f0, cols in traces:
        t, f = cols["time_s"], cols["f"]
        if f0 is not None:
            t, f = np.concatenate([[0.0], t]), np.concatenate([[f0], f])
        sampled.append(interpolate_curve((t, f), grid))
    return it_curve, grid, median_curve(sampled)


def _write_columns(path, header, x, y) -> None:
    rows = [header] + [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y)]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------- CLI


def _parse_spec(text: str) -> SyntheticSpec:
    """``key=value`` pairs (space or ';' separated) or a config file with [instance]."""
    if os.path.isfile(text):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(text) as fh:
            parser.read_file(fh)
        items = dict(parser["instance"])
    else:
        items = {}
        for tok in text.replace(";", " ").split():
            if "=" not in tok:
                raise ValueError(f"expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            items[k.strip()] = v.strip()
    known = {"shape", "rank", "noise_sigma", "ill_conditioned", "seed"}
    if set(items) - known:
        raise ValueError(f"unknown keys {sorted(set(items) - known)}")
    return SyntheticSpec(
        shape=_ints(items["shape"]),
        rank=int(items["rank"]),
        noise_sigma=float(items.get("noise_sigma", 0.0)),
        ill_conditioned=items.get("ill_conditioned", "false").lower() in ("1", "true", "yes", "on"),
        seed=int(items.get("seed", 0)),
    )


def truth_path_for(out) -> Path:
    """Sidecar path for the truth factors: ``data.bin`` -> ``data_truth.bin``."""
    out = Path(out)
    return out.with_name(out.stem + "_truth" + out.suffix)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    return run_experiment(cfg, args.output, args.threads)


def _cmd_gen(args) -> int:
    try:
        spec = _parse_spec(args.spec)
    except (OSError, KeyError, ValueError, configparser.Error) as exc:
        raise BenchError(EXIT_CONFIG, f"invalid spec: {exc}") from None
    tensor, truth = generate(spec)
    try:
        save_tensor(args.out, tensor)
        save_kruskal(truth_path_for(args.out), truth)
    except OSError as exc:
        raise BenchError(EXIT_OUTPUT, f"cannot write {args.out}: {exc}") from None
    return EXIT_OK


def _cmd_summarize(args) -> int:
    summary = postprocess(args.input)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Nonnegative CP decomposition benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--output", default=None, help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, default=1, help="parallel (algorithm, run) pairs")
    r.set_defaults(func=_cmd_run)
    g = sub.add_parser("gen", help="export a synthetic instance and its truth factors")
    g.add_argument("--spec", required=True, help="'shape=20,20,20 rank=5 ...' or a config file")
    g.add_argument("--out", required=True, help="tensor file (.txt for text)")
    g.set_defaults(func=_cmd_gen)
    s = sub.add_parser("summarize", help="recompute summary.json and curves of an output directory")
    s.add_argument("--input", required=True)
    s.set_defaults(func=_cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("bench: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except BenchError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return exc.code

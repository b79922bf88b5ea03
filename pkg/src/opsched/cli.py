"""opsched command line: simulate, sweep, train and time schedulers."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .cost import HardwareProfile, ProfileError, load_profile
from .fixtures import benchmark_suite, fixture_params, random_chain, synth_graph
from .graph import GraphError, ModelGraph, load_graph
from .manifest import RunManifest
from .nn.layers import ConfigError
from .plan import SchedulePlan
from .predictor import (GroundTruthGrid, PredictorConfig, ThresholdModel, ThresholdSample, generate_ground_truth,
                        oracle_thresholds, train)
from .rl import baselines
from .rl.sac import SacConfig, TrainingDiverged, train_sac
from .seeding import derive_seed
from .sim import BatchConfig, SimulationError, optimize_batch, simulate

log = logging.getLogger("opsched")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4
SCHEDULERS = ("sac", "greedy", "dp", "static", "cpu_only", "gpu_only")
SWEEP_COLUMNS = ("model", "profile", "scheduler", "latency", "energy", "gpu_share",
                 "convergence_seconds", "speedup_vs_cpu")
TIMING_COLUMNS = ("convergence_seconds",)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


@dataclass
class ExperimentConfig:
    graph: str = "suite:0"
    profile: str = "agx_orin"
    scheduler: str = "dp"
    seed: int = 0
    episodes: int = 600
    batch: int = 1
    out: str = "out"
    predictor: Optional[str] = None
    co_execution: str = "split"
    batch_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise CliError(f"unknown scheduler {self.scheduler!r}; choose from {', '.join(SCHEDULERS)}")
        if self.batch < 1 or self.episodes < 1:
            raise CliError("batch and episodes must be >= 1")


# --- inputs -----------------------------------------------------------------------

def resolve_graph(ref: str, seed: int = 0) -> ModelGraph:
    """``fixture:<family>``, ``suite:<i>``, ``chain:<n>`` or a graph file path."""
    kind, _, arg = ref.partition(":")
    try:
        if kind == "fixture":
            if arg not in fixture_params()["families"]:
                raise KeyError(f"unknown fixture family {arg!r}")
            return synth_graph(arg, seed=derive_seed(seed, "graph"))
        if kind == "suite":
            suite = benchmark_suite()
            return suite[int(arg)]
        if kind == "chain":
            return random_chain(int(arg), derive_seed(seed, "graph"))
    except (KeyError, IndexError, ValueError) as exc:
        raise CliError(f"bad graph ref {ref!r}: {exc}") from None
    path = Path(ref)
    if not path.is_file():
        raise CliError(f"graph file not found: {ref}")
    return load_graph(path)


def read_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(f"config {path}: top level must be an object")
    return doc


def _profile(name: str) -> HardwareProfile:
    try:
        return load_profile(name)
    except ProfileError as exc:
        raise CliError(str(exc)) from None


# --- scheduling -------------------------------------------------------------------

def thresholds_for(graph: ModelGraph, profile: HardwareProfile, batch: int = 1,
                   predictor: Optional[str] = None) -> list[tuple[float, float]]:
    """Per-operator (s, c) from a predictor checkpoint, or from the cost model when none is given."""
    if predictor:
        return [(p.s, p.c) for p in ThresholdModel.load(predictor).predict(graph)]
    return [oracle_thresholds(n, profile, batch) for n in graph.nodes]


def make_plan(scheduler: str, graph: ModelGraph, profile: HardwareProfile, seed: int = 0, episodes: int = 600,
              batch: int = 1, predictor: Optional[str] = None) -> SchedulePlan:
    if scheduler == "cpu_only":
        return baselines.cpu_only(graph)
    if scheduler == "gpu_only":
        return baselines.gpu_only(graph)
    if scheduler == "greedy":
        return baselines.greedy_schedule(graph, profile, batch)
    if scheduler == "dp":
        return baselines.dp_schedule(graph, profile, batch, allow_dag=True)
    if scheduler == "static":
        return baselines.static_threshold_schedule(graph, profile, thresholds_for(graph, profile, batch, predictor),
                                                   batch)
    if scheduler == "sac":
        return train_sac(graph, profile, episodes=episodes, seed=derive_seed(seed, "sac"), batch=batch).plan
    raise CliError(f"unknown scheduler {scheduler!r}")


def _sweep_entry(args) -> dict:
    model, profile_name, scheduler, seed, episodes = args
    graph = resolve_graph(model, seed)
    profile = load_profile(profile_name)
    t0 = time.perf_counter()
    plan = make_plan(scheduler, graph, profile, seed, episodes)
    elapsed = time.perf_counter() - t0
    rep = simulate(plan, graph, profile)
    cpu = simulate(baselines.cpu_only(graph), graph, profile).total_latency
    return {"model": graph.name, "profile": profile.name, "scheduler": scheduler,
            "latency": rep.total_latency, "energy": rep.energy, "gpu_share": rep.gpu_op_share,
            "convergence_seconds": elapsed, "speedup_vs_cpu": cpu / rep.total_latency}


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


# --- commands ---------------------------------------------------------------------

def cmd_simulate(args, cfg: dict) -> list[Path]:
    ec = ExperimentConfig(**{k: cfg[k] for k in cfg if k in {f.name for f in fields(ExperimentConfig)}})
    out = Path(ec.out)
    out.mkdir(parents=True, exist_ok=True)
    profile = _profile(ec.profile)
    rows = []
    reports = []
    for k in range(args.repeat):
        seed = ec.seed if args.repeat == 1 else derive_seed(ec.seed, f"repeat{k}")
        graph = resolve_graph(ec.graph, seed)
        plan = make_plan(ec.scheduler, graph, profile, seed, ec.episodes, ec.batch, ec.predictor)
        batch = ec.batch
        trace = []
        if args.optimize_batch:
            bc = dict(ec.batch_config)
            if "sparsity_threshold" not in bc and "intensity_threshold" not in bc:
                th = np.array(thresholds_for(graph, profile, ec.batch, ec.predictor))
                bc["sparsity_threshold"], bc["intensity_threshold"] = float(th[:, 0].mean()), float(th[:, 1].mean())
            batch, trace = optimize_batch(graph, plan, profile, BatchConfig(**bc))
        rep = simulate(plan, graph, profile, batch, ec.co_execution)
        rep.batch_trace = trace
        reports.append(rep)
        rows.append([k, seed, rep.total_latency, rep.energy, rep.gpu_op_share, batch])
    written = []
    rep = reports[0]
    (out / "report.json").write_text(json.dumps({**rep.to_dict(with_timeline=True), "graph": graph.name,
                                                 "profile": profile.name, "scheduler": ec.scheduler,
                                                 "plan_digest": plan.digest()}, indent=2) + "\n",
                                     encoding="utf-8")
    (out / "phases.csv").write_text(rep.phase_csv(), encoding="utf-8")
    written += [out / "report.json", out / "phases.csv"]
    if trace:
        _write_csv(out / "batch_trace.csv", ["iter", "B", "L", "M"], trace)
        written.append(out / "batch_trace.csv")
    lat = np.array([r[2] for r in rows])
    en = np.array([r[3] for r in rows])
    share = np.array([r[4] for r in rows])
    ddof = 1 if len(rows) > 1 else 0
    table = rows + [["mean", "", float(lat.mean()), float(en.mean()), float(share.mean()), ""],
                    ["std", "", float(lat.std(ddof=ddof)), float(en.std(ddof=ddof)), float(share.std(ddof=ddof)), ""]]
    _write_csv(out / "runs.csv", ["run", "seed", "latency", "energy", "gpu_share", "batch"], table)
    written.append(out / "runs.csv")
    print(f"{graph.name} {profile.name} {ec.scheduler}: latency {lat.mean():.6g} s, "
          f"gpu share {share.mean():.3f}")
    return written


def cmd_sweep(args, cfg: dict) -> list[Path]:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    models = cfg.get("models") or [f"suite:{i}" for i in range(10)]
    profiles = cfg.get("profiles") or [cfg.get("profile", "agx_orin")]
    scheds = cfg.get("schedulers") or ["cpu_only", "gpu_only", "greedy", "dp", "static"]
    for s in scheds:
        if s not in SCHEDULERS:
            raise CliError(f"unknown scheduler {s!r}")
    for p in profiles:
        _profile(p)
    seed, episodes = int(cfg.get("seed", 0)), int(cfg.get("episodes", 600))
    jobs = [(m, p, s, seed, episodes) for m in models for p in profiles for s in scheds]
    workers = int(cfg.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_entry, jobs))
    else:
        results = [_sweep_entry(j) for j in jobs]
    path = out / "sweep.csv"
    _write_csv(path, SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in results])
    print(f"wrote {len(results)} rows to {path}")
    return [path]


def cmd_gen_groundtruth(args, cfg: dict) -> list[Path]:
    names = cfg.get("profiles") or [cfg.get("profile", "agx_orin")]
    samples = []
    for name in names:
        samples += generate_ground_truth(_profile(name), GroundTruthGrid())
    path = Path(cfg.get("samples_out") or Path(cfg.get("out", "out")) / "samples.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [{"x": s.x.tolist(), "s": s.s, "c": s.c, "kind": s.kind, "size": s.size, "batch": s.batch,
            "profile": s.profile} for s in samples]
    path.write_text(json.dumps({"samples": doc}) + "\n", encoding="utf-8")
    print(f"wrote {len(samples)} samples to {path}")
    return [path]


def load_samples(path) -> list[ThresholdSample]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return [ThresholdSample(np.asarray(d["x"], dtype=float), d["s"], d["c"], d["kind"], d["size"], d["batch"],
                                d["profile"]) for d in doc["samples"]]
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed samples file {path}: missing {exc}") from None


def cmd_train_predictor(args, cfg: dict) -> list[Path]:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    if cfg.get("samples"):
        samples = load_samples(cfg["samples"])
    else:
        samples = generate_ground_truth(_profile(cfg.get("profile", "agx_orin")))
    pc = {f.name: cfg[f.name] for f in fields(PredictorConfig) if cfg.get(f.name) is not None}
    pc["seed"] = int(cfg.get("seed", 0))
    report = train(samples, PredictorConfig(**pc))
    ckpt = Path(cfg.get("checkpoint") or out / "predictor.json")
    report.model.save(ckpt)
    (out / "predictor_metrics.csv").write_text(report.metrics_csv(), encoding="utf-8")
    print(f"held-out accuracy s {report.test_acc[0]:.1f}% c {report.test_acc[1]:.1f}% "
          f"(linear baseline {report.baseline_acc[0]:.1f}% / {report.baseline_acc[1]:.1f}%)")
    return [ckpt, out / "predictor_metrics.csv"]


def cmd_train_scheduler(args, cfg: dict) -> list[Path]:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    graph = resolve_graph(cfg.get("graph", "suite:0"), seed)
    profile = _profile(cfg.get("profile", "agx_orin"))
    sc = {f.name: cfg[f.name] for f in fields(SacConfig) if cfg.get(f.name) is not None}
    res = train_sac(graph, profile, episodes=int(cfg.get("episodes", 600)), seed=derive_seed(seed, "sac"),
                    config=SacConfig(**sc))
    (out / "plan.json").write_text(json.dumps(res.plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    (out / "learning_curve.csv").write_text(res.curve_csv(), encoding="utf-8")
    res.agent.save(out / "agent.json")
    print(f"{graph.name}: best plan latency {res.best_latency:.6g} s after {res.episodes} episodes")
    return [out / "plan.json", out / "learning_curve.csv", out / "agent.json"]


def cmd_convergence(args, cfg: dict) -> list[Path]:
    out = Path(cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    graph = resolve_graph(cfg.get("graph", "suite:0"), seed)
    profile = _profile(cfg.get("profile", "agx_orin"))
    scheds = cfg.get("schedulers") or ["greedy", "dp", "static", "sac"]
    rows = []
    for s in scheds:
        t0 = time.perf_counter()
        plan = make_plan(s, graph, profile, seed, int(cfg.get("episodes", 600)))
        elapsed = time.perf_counter() - t0
        rows.append([s, elapsed, simulate(plan, graph, profile).total_latency, plan.digest()])
    path = out / "convergence.csv"
    _write_csv(path, ["scheduler", "seconds", "latency", "plan_digest"], rows)
    for r in rows:
        print(f"{r[0]:>9}: {r[1]:.4f} s")
    return [path]


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "train-predictor": cmd_train_predictor,
            "train-scheduler": cmd_train_scheduler, "gen-groundtruth": cmd_gen_groundtruth,
            "convergence": cmd_convergence}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    hide = argparse.SUPPRESS    # so a flag given before the subcommand is not reset by it
    common.add_argument("--seed", type=int, default=hide, help="master seed (default 0)")
    common.add_argument("--out", default=hide, help="output directory (default ./out)")
    common.add_argument("--profile", default=hide, help="profile name or file (default agx_orin)")
    common.add_argument("--config", default=hide, help="JSON file with option defaults")
    common.add_argument("-v", "--verbose", action="store_true", default=hide)

    p = argparse.ArgumentParser(prog="opsched", description=__doc__, parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="schedule and simulate one graph")
    s.add_argument("--graph", default=None, help="fixture:<family> | suite:<i> | chain:<n> | path")
    s.add_argument("--scheduler", choices=SCHEDULERS, default=None)
    s.add_argument("--episodes", type=int, default=None)
    s.add_argument("--batch", type=int, default=None)
    s.add_argument("--repeat", type=int, default=1)
    s.add_argument("--optimize-batch", action="store_true")
    s.add_argument("--co-execution", choices=("split", "duplicate"), default=None)
    s.add_argument("--predictor", default=None, help="predictor checkpoint for the static scheduler")

    w = sub.add_parser("sweep", parents=[common], help="scheduler x model x profile table")
    w.add_argument("--models", nargs="+", default=None)
    w.add_argument("--profiles", nargs="+", default=None)
    w.add_argument("--schedulers", nargs="+", default=None)
    w.add_argument("--episodes", type=int, default=None)
    w.add_argument("--workers", type=int, default=None)

    g = sub.add_parser("gen-groundtruth", parents=[common], help="threshold labels from the cost model")
    g.add_argument("--profiles", nargs="+", default=None)
    g.add_argument("--samples-out", default=None)

    t = sub.add_parser("train-predictor", parents=[common], help="fit the threshold predictor")
    t.add_argument("--samples", default=None)
    t.add_argument("--checkpoint", default=None)
    for name, typ in (("hidden", int), ("heads", int), ("encoder-layers", int), ("lstm-hidden", int),
                      ("epochs", int), ("lr", float), ("train-fraction", float), ("batch-size", int),
                      ("lr-final-fraction", float)):
        t.add_argument(f"--{name}", type=typ, default=None)

    r = sub.add_parser("train-scheduler", parents=[common], help="train the SAC scheduler on one graph")
    r.add_argument("--graph", default=None)
    r.add_argument("--episodes", type=int, default=None)
    for name, typ in (("hidden", int), ("lr", float), ("gamma", float), ("tau", float), ("warmup", int),
                      ("eps-pin", float)):
        r.add_argument(f"--{name}", type=typ, default=None)

    c = sub.add_parser("convergence", parents=[common], help="wall-clock time to produce a plan")
    c.add_argument("--graph", default=None)
    c.add_argument("--schedulers", nargs="+", default=None)
    c.add_argument("--episodes", type=int, default=None)
    return p


def merged_config(args) -> dict:
    cfg = read_config_file(getattr(args, "config", None))
    for key, value in vars(args).items():
        if key in ("config", "command", "verbose", "repeat", "optimize_batch"):
            continue
        if value is not None:
            cfg[key] = value
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "out")
    cfg.setdefault("profile", "agx_orin")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = merged_config(args)
        manifest = RunManifest.start(args.command, cfg, [cfg.get("config"), cfg.get("samples"),
                                                         cfg.get("graph") if Path(str(cfg.get("graph", ""))).is_file()
                                                         else None])
        outputs = COMMANDS[args.command](args, cfg)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        manifest.finish(outputs).write(out / f"manifest-{args.command}.json")
        return EXIT_OK
    except (CliError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, GraphError, ProfileError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: infeasible schedule: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FloatingPointError, TrainingDiverged) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 1 other library error, 2 parse or validation error,
3 configuration error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import __version__
from .base_predictor import frequency_classifier
from .coverage_analysis import evaluate, gap_grid, summarize_grid
from .csvio import (
    TRACE_HEADER,
    WEIGHT_HEADER,
    read_graph,
    read_probabilities,
    read_rows,
    read_sets,
    write_graph,
    write_probabilities,
    write_rows,
    write_sets,
    LABEL_HEADER,
)
from .efficiency_optimizer import OptimizerConfig
from .errors import ConfigError, ParseError, TempoConformalError
from .nonconformity import SCORE_KINDS, DiffusionParams
from .pipeline import QUANTILE_KINDS, calibrate
from .synth import SynthConfig, chronological_split, generate_temporal_graph
from .temporal_graph import NeighborQueryParams, TemporalNodeId

MODES = ("calibrate", "evaluate", "synth", "gap-analysis")
THREADS_ENV = "TEMPO_CONFORMAL_THREADS"


def _time_radius(text: str):
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return int(text)


def _shift_list(text: str):
    return tuple(float(x) for x in text.split("|") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    mode: str
    alpha: float = 0.05
    lambda1: float = 0.01
    lambda2: float = 0.01
    dst: int = 1
    tst: float = 2
    temperature: float = 0.01
    tau: float = 0.1
    epochs: int = 100
    lr: float = 0.01
    decay: float = 0.99
    score: str = "diffusion"
    quantile: str = "learned"
    seed: int = 0
    edges: str | None = None
    labels: str | None = None
    probs: str | None = None
    sets: str | None = None
    # synth
    nodes: int = 300
    timesteps: int = 20
    edges_per_step: int = 600
    density: float | None = None
    classes: int = 3
    drift: float = 0.0
    changepoint: float = 0.5
    # gap-analysis
    shifts: tuple = (0.0, 0.25, 0.5, 1.0)
    replicates: int = 20
    calib_size: int = 19
    samples: int = 50_000
    bins: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.score not in SCORE_KINDS:
            raise ConfigError(f"score must be one of {SCORE_KINDS}, got {self.score!r}")
        if self.quantile not in QUANTILE_KINDS:
            raise ConfigError(f"quantile must be one of {QUANTILE_KINDS}, got {self.quantile!r}")
        required = {"calibrate": ("edges", "labels"), "evaluate": ("sets", "labels")}
        for name in required.get(self.mode, ()):
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"--{name} is required in {self.mode} mode")
        for name in ("edges", "labels", "probs", "sets"):
            path = getattr(self, name)
            if path is not None and self.mode in required and not Path(path).is_file():
                raise ConfigError(f"--{name}: no such file {path}")

    def manifest_items(self):
        """Every setting except the output directory, in declaration order."""
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = "|".join(repr(float(x)) for x in value)
            elif isinstance(value, float):
                value = repr(value)
            yield f.name, str(value)


# flag name -> parser for its value
_FLAGS = {
    "mode": str,
    "alpha": float,
    "lambda1": float,
    "lambda2": float,
    "dst": int,
    "tst": _time_radius,
    "temperature": float,
    "tau": float,
    "epochs": int,
    "lr": float,
    "decay": float,
    "score": str,
    "quantile": str,
    "seed": int,
    "edges": str,
    "labels": str,
    "probs": str,
    "sets": str,
    "nodes": int,
    "timesteps": int,
    "edges-per-step": int,
    "density": float,
    "classes": int,
    "drift": float,
    "changepoint": float,
    "shifts": _shift_list,
    "replicates": int,
    "calib-size": int,
    "samples": int,
    "bins": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="tempo-conformal",
        description="Conformal prediction sets for node classification on temporal graphs.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--out", help="output directory (default: current directory)")
    for flag, kind in _FLAGS.items():
        p.add_argument(f"--{flag}", type=kind, default=None)
    return p


def read_config_file(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected key=value, got {raw!r}", n)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "version":
            continue
        if key not in _FLAGS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            out[key] = _FLAGS[key](value)
        except ValueError:
            raise ParseError(f"{path}: bad value for {key}: {value!r}", n) from None
    return out


def resolve_config(argv=None) -> tuple[RunConfig, Path]:
    args = build_parser().parse_args(argv)
    settings = read_config_file(args.config) if args.config else {}
    for flag in _FLAGS:
        value = getattr(args, flag.replace("-", "_"))
        if value is not None:
            settings[flag] = value
    if "mode" not in settings:
        raise ConfigError("--mode is required")
    kwargs = {k.replace("-", "_"): v for k, v in settings.items()}
    out = Path(args.out) if args.out else Path(".")
    return RunConfig(**kwargs), out


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw is None:
        return cap
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return min(n, cap)


def write_manifest(cfg: RunConfig, out: Path):
    lines = [f"version={__version__}"] + [f"{k}={v}" for k, v in cfg.manifest_items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_report(report, out: Path):
    write_rows(
        out / "report.csv",
        ("coverage", "efficiency", "n_test", "alpha"),
        [(float(report.coverage), float(report.efficiency), report.n_test, float(report.alpha))],
    )


def _run_synth(cfg: RunConfig, out: Path):
    sc = SynthConfig(
        n_nodes=cfg.nodes,
        n_timesteps=cfg.timesteps,
        edges_per_step=cfg.edges_per_step,
        edge_density=cfg.density,
        n_classes=cfg.classes,
        drift_rate=cfg.drift,
        changepoint_fraction=cfg.changepoint,
        seed=cfg.seed,
    )
    g, probs = generate_temporal_graph(sc)
    write_graph(g, out / "edges.csv", out / "labels.csv")
    write_probabilities(probs, out / "probs.csv")
    print(f"synth: {g.num_edges} edges, {g.num_occurrences} occurrences -> {out}")


def _run_calibrate(cfg: RunConfig, out: Path):
    g = read_graph(cfg.edges, cfg.labels)
    plan = chronological_split(g)
    if cfg.probs:
        probs = read_probabilities(cfg.probs, g.num_classes)
    else:
        probs = frequency_classifier(g, plan.train)
    dp = DiffusionParams(
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        neighbor_params=NeighborQueryParams(cfg.dst, cfg.tst),
        temporal_window=cfg.tst,
    )
    opt = OptimizerConfig(
        epochs=cfg.epochs,
        learning_rate=cfg.lr,
        T=cfg.temperature,
        tau=cfg.tau,
        alpha=cfg.alpha,
        seed=cfg.seed,
    )
    res = calibrate(
        g,
        probs,
        plan,
        alpha=cfg.alpha,
        score_kind=cfg.score,
        dp=dp,
        quantile_kind=cfg.quantile,
        opt=opt,
        decay=cfg.decay,
    )
    write_sets(res.sets, out / "sets.csv")
    _write_report(res.report, out)
    if res.trace is not None:
        write_rows(out / "trace.csv", TRACE_HEADER, res.trace.records)
        write_rows(
            out / "weights.csv",
            WEIGHT_HEADER,
            (
                (i, float(lg), float(w))
                for i, (lg, w) in enumerate(zip(res.weights.logits, res.weights.weights))
            ),
        )
    print(
        f"calibrate: threshold={res.threshold!r} coverage={res.report.coverage!r} "
        f"efficiency={res.report.efficiency!r} n_test={res.report.n_test}"
    )


def _read_labels(path) -> dict:
    _, body = read_rows(path, LABEL_HEADER)
    labels = {}
    for i, rec in enumerate(body):
        if len(rec) != 3:
            raise ParseError(f"expected 3 fields, got {len(rec)}", i + 2)
        try:
            labels[TemporalNodeId(int(rec[0]), int(rec[1]))] = int(rec[2])
        except ValueError as exc:
            raise ParseError(str(exc), i + 2) from None
    return labels


def _run_evaluate(cfg: RunConfig, out: Path):
    report = evaluate(read_sets(cfg.sets), _read_labels(cfg.labels), cfg.alpha)
    _write_report(report, out)
    print(f"evaluate: coverage={report.coverage!r} efficiency={report.efficiency!r} n_test={report.n_test}")


def _run_gap_analysis(cfg: RunConfig, out: Path):
    cells = gap_grid(
        shifts=cfg.shifts,
        n_seeds=cfg.replicates,
        n_calib=cfg.calib_size,
        alpha=cfg.alpha,
        n_samples=cfg.samples,
        n_bins=cfg.bins,
        seed=cfg.seed,
        max_workers=_threads(),
    )
    write_rows(
        out / "gap_cells.csv",
        ("shift", "replicate", "seed", "empirical_gap", "bound", "se"),
        cells,
    )
    summary = summarize_grid(cells)
    write_rows(out / "gap_summary.csv", ("shift", "mean_gap", "mean_bound", "se"), summary)
    for s in summary:
        print(f"gap-analysis: shift={s.shift!r} gap={s.mean_gap:.4f} bound={s.mean_bound:.4f}")


_RUNNERS = {
    "synth": _run_synth,
    "calibrate": _run_calibrate,
    "evaluate": _run_evaluate,
    "gap-analysis": _run_gap_analysis,
}


def run(cfg: RunConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    _RUNNERS[cfg.mode](cfg, out)
    write_manifest(cfg, out)
    return 0


def main(argv=None) -> int:
    try:
        cfg, out = resolve_config(argv)
        return run(cfg, out)
    except TempoConformalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

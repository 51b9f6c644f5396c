"""Command-line front end: ``icapm-breaks {ingest,estimate,breaks,simulate,report}``.

Every command reads one JSON config (``--config``), may override the seed
(``--seed``) and the output directory (``--out``), and writes its outputs
atomically. Exit codes: 0 success, 2 configuration error, 3 data error,
4 estimation failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .breaks import SegmentationProblem, analyze, table2_report
from .data import (
    Panel,
    VariableConfig,
    atomic_write_text,
    descriptive_stats,
    estimation_sample,
    format_month,
    ingest_csv,
    panel_to_csv_text,
    sample_from_panel,
    sample_to_panel,
)
from .errors import ConditioningError, ConfigError, DataError, EstimationError
from .estimate import OptimizerConfig, fit, standardized_residuals, table1_report
from .simulate import DgpSpec, StepSpec, simulate_icapm, simulate_mean_shift, spec_from_dict

log = logging.getLogger("icapm_breaks")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4

# output file names inside --out
SAMPLE_CSV = "sample.csv"
INGEST_JSON = "ingest.json"
ESTIMATE_JSON = "estimate.json"
PHI_CSV = "phi.csv"
BREAKS_JSON = "breaks.json"
STEP_CSV = "step_fit.csv"
BREAKS_SVG = "breaks.svg"
SERIES_CSV = "series.csv"
TRUTH_CSV = "truth.csv"
SIMULATE_JSON = "simulate.json"
REPORT_JSON = "report.json"


@dataclass(frozen=True)
class BreakSettings:
    max_breaks: int = 5
    trim: float = 0.10
    alpha: float = 0.05
    level: float = 0.95
    series: Path | None = None
    column: str = "phi"

    def __post_init__(self):
        if not 0.0 < self.trim <= 0.25:
            raise ConfigError(f"breaks.trim must lie in (0, 0.25], got {self.trim}")
        if self.max_breaks < 1:
            raise ConfigError(f"breaks.max_breaks must be at least 1, got {self.max_breaks}")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("breaks.level must lie in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; relative paths resolve against the config file."""

    out: Path
    seed: int = 0
    data: Path | None = None
    schema: dict | None = None
    sample: Path | None = None
    variables: VariableConfig = field(default_factory=VariableConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    breaks: BreakSettings = field(default_factory=BreakSettings)
    simulate: dict | None = None

    @classmethod
    def from_dict(cls, d: dict, base: Path, out=None, seed=None) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"out", "seed", "data", "sample", "variables", "optimizer", "breaks", "simulate"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

        def path(v):
            if v is None:
                return None
            if not isinstance(v, str):
                raise ConfigError(f"expected a path string, got {v!r}")
            p = Path(v)
            return p if p.is_absolute() else base / p

        try:
            run_seed = int(seed if seed is not None else d.get("seed", 0))
            data = d.get("data")
            schema = None
            if isinstance(data, dict):
                schema = data.get("schema")
                data = data.get("path")
            opt = dict(d.get("optimizer", {}))
            opt["seed"] = run_seed
            brk = dict(d.get("breaks", {}))
            settings = BreakSettings(
                max_breaks=int(brk.get("max_breaks", 5)),
                trim=float(brk.get("trim", 0.10)),
                alpha=float(brk.get("alpha", 0.05)),
                level=float(brk.get("level", 0.95)),
                series=path(brk.get("series")),
                column=str(brk.get("column", "phi")),
            )
            sim = d.get("simulate")
            if isinstance(sim, str):
                sim = {"spec": str(path(sim))}
            elif isinstance(sim, dict) and isinstance(sim.get("spec"), str):
                sim = {**sim, "spec": str(path(sim["spec"]))}
            out_dir = path(out if out is not None else d.get("out"))
            if out_dir is None:
                raise ConfigError("no output directory: pass --out or set 'out' in the config")
            return cls(
                out=out_dir,
                seed=run_seed,
                data=path(data),
                schema=schema,
                sample=path(d.get("sample")),
                variables=VariableConfig.from_dict(d.get("variables")),
                optimizer=OptimizerConfig.from_dict(opt),
                breaks=settings,
                simulate=sim,
            )
        except ConfigError:
            raise
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None


def load_config(path, out=None, seed=None) -> RunConfig:
    if path is None:
        return RunConfig.from_dict({}, Path.cwd(), out, seed)
    p = Path(path)
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    return RunConfig.from_dict(d, p.resolve().parent, out, seed)


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, NaN/inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, report: dict) -> None:
    text = json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"
    atomic_write_text(path, text)


def _out(cfg: RunConfig, name: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out / name


def plot_step_fit(path, months, y, fitted, dates) -> None:
    """Series with the fitted step function as a deterministic SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = np.arange(len(y))
    with matplotlib.rc_context({"svg.hashsalt": "icapm-breaks", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(8, 3.5))
        ax.plot(x, y, lw=0.9, color="0.35", label="series")
        ax.step(x, fitted, where="mid", lw=1.6, color="C3", label="regime means")
        for d in dates:
            ax.axvline(d - 0.5, ls=":", lw=0.8, color="C0")
        ticks = x[:: max(1, len(x) // 8)]
        ax.set_xticks(ticks)
        ax.set_xticklabels([format_month(months[i], "colon") for i in ticks], fontsize=8)
        ax.set_ylabel("degree of integration")
        ax.legend(loc="best", fontsize=8, frameon=False)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write_text(path, buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def _sample(cfg: RunConfig):
    """Estimation sample from ``sample`` (a prepared panel) or raw ``data``."""
    if cfg.sample is not None:
        return sample_from_panel(ingest_csv(cfg.sample))
    if cfg.data is None:
        raise ConfigError("config needs 'data' (raw panel) or 'sample' (prepared panel)")
    panel = ingest_csv(cfg.data, cfg.schema)
    return estimation_sample(panel, cfg.variables)


def cmd_ingest(cfg: RunConfig) -> dict:
    returns, info = _sample(cfg)
    panel = sample_to_panel(returns, info)
    atomic_write_text(_out(cfg, SAMPLE_CSV), panel_to_csv_text(panel))
    report = {
        "command": "ingest",
        "nobs": len(panel),
        "start": format_month(panel.start),
        "end": format_month(panel.months[-1]),
        "columns": list(panel.names),
        "diagnostics": {
            name: descriptive_stats(returns[:, j]).to_dict() for j, name in enumerate(("mexico", "world"))
        },
    }
    write_json(_out(cfg, INGEST_JSON), report)
    return report


def cmd_estimate(cfg: RunConfig) -> dict:
    returns, info = _sample(cfg)
    res = fit(returns, info, cfg.optimizer)
    _, reps = standardized_residuals(res.filter)
    report = {"command": "estimate", "seed": cfg.seed, **table1_report(res, reps, format_month(info.start))}
    res.filter.write_csv(_out(cfg, PHI_CSV))
    write_json(_out(cfg, ESTIMATE_JSON), report)
    return report


def _break_series(cfg: RunConfig):
    src = cfg.breaks.series or cfg.out / PHI_CSV
    if not Path(src).exists():
        raise ConfigError(f"break series {src} not found; run 'estimate' first or set breaks.series")
    panel = ingest_csv(src)
    col = cfg.breaks.column
    if col not in panel:
        if len(panel.names) == 1:
            col = panel.names[0]
        else:
            raise DataError(f"column {col!r} not in {src}")
    return panel.series(col)


def cmd_breaks(cfg: RunConfig) -> dict:
    series = _break_series(cfg)
    s = cfg.breaks
    prob = SegmentationProblem(series.values, s.max_breaks, s.trim, series.start)
    fit_, tests = analyze(prob, s.alpha, s.level)
    report = {"command": "breaks", **table2_report(fit_, tests, s.level)}
    fitted = fit_.fitted()
    regime = np.repeat(np.arange(1, fit_.m + 2, dtype=float), np.diff(fit_.edges))
    step = Panel(series.start, {"y": series.values, "fitted": fitted, "regime": regime})
    atomic_write_text(_out(cfg, STEP_CSV), panel_to_csv_text(step))
    plot_step_fit(_out(cfg, BREAKS_SVG), step.months, series.values, fitted, fit_.dates)
    write_json(_out(cfg, BREAKS_JSON), report)
    return report


def cmd_simulate(cfg: RunConfig) -> dict:
    sim = cfg.simulate
    if not sim:
        raise ConfigError("config needs a 'simulate' section (spec path or inline spec)")
    if "spec" in sim:
        spec_path = Path(sim["spec"])
        try:
            d = json.loads(spec_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"no such spec file: {spec_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"spec file {spec_path} is not valid JSON: {exc}") from None
    else:
        d = dict(sim)
    if not isinstance(d, dict):
        raise ConfigError("spec must be a JSON object")
    d = {**d, "seed": cfg.seed}
    spec = spec_from_dict(d)
    files = []
    if isinstance(spec, DgpSpec):
        R, info, truth = simulate_icapm(spec)
        atomic_write_text(_out(cfg, SAMPLE_CSV), panel_to_csv_text(sample_to_panel(R, info)))
        truth.write_csv(_out(cfg, TRUTH_CSV))
        files = [SAMPLE_CSV, TRUTH_CSV]
        summary = {"kind": "icapm", "T": spec.T, "mean_phi": float(np.mean(truth.phi)), "params": spec.params.to_dict()}
    else:
        assert isinstance(spec, StepSpec)
        series = simulate_mean_shift(spec)
        atomic_write_text(_out(cfg, SERIES_CSV), panel_to_csv_text(Panel(series.start, {"phi": series.values})))
        files = [SERIES_CSV]
        summary = {
            "kind": "mean_shift",
            "T": spec.T,
            "means": list(spec.means),
            "breaks": list(spec.breaks),
            "break_months": [format_month(series.start + (b - 1), "colon") for b in spec.breaks],
            "sigma": spec.sigma,
            "rho": spec.rho,
        }
    report = {"command": "simulate", "seed": cfg.seed, "start": format_month(spec.start), "files": files, **summary}
    write_json(_out(cfg, SIMULATE_JSON), report)
    return report


def cmd_report(cfg: RunConfig) -> dict:
    """Ingest, estimate, then date breaks in the fitted integration path."""
    ing = cmd_ingest(cfg)
    est = cmd_estimate(cfg)
    brk = cmd_breaks(replace(cfg, breaks=replace(cfg.breaks, series=None)))
    report = {
        "command": "report",
        "seed": cfg.seed,
        "nobs": ing["nobs"],
        "start": ing["start"],
        "mean_phi": est["sample"]["mean_phi"],
        "mean_price_world": est["sample"]["mean_price_world"],
        "mean_price_local": est["sample"]["mean_price_local"],
        "loglik": est["sample"]["loglik"],
        "panel_d": est["panel_d"],
        "breaks": [b["formatted"] for b in brk["breaks"]],
        "regimes": [r["formatted"] for r in brk["regimes"]],
        "files": [SAMPLE_CSV, INGEST_JSON, ESTIMATE_JSON, PHI_CSV, BREAKS_JSON, STEP_CSV, BREAKS_SVG],
    }
    write_json(_out(cfg, REPORT_JSON), report)
    return report


COMMANDS = {
    "ingest": (cmd_ingest, "build the aligned estimation sample and return diagnostics"),
    "estimate": (cmd_estimate, "fit the model by QML; write estimates and the integration path"),
    "breaks": (cmd_breaks, "date mean shifts in a series (default: the fitted integration path)"),
    "simulate": (cmd_simulate, "draw a synthetic dataset from a spec"),
    "report": (cmd_report, "ingest, estimate and breaks into one directory"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icapm-breaks", description="Market-integration estimation and mean-shift break analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON run configuration")
        p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.out, args.seed)
        func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, ConditioningError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(json.dumps(_clean(diag), sort_keys=True), file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line interface: ``isacsim run|sweep|verify``.

Exit status is 0 on success, 1 for invalid input (bad config, bad flags,
missing fixtures, failed verification) and 2 for runtime or numeric errors.
Outputs are staged in a scratch directory and moved into place only after
every file is written, so a failed command leaves no partial results behind.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

import click

from . import __version__
from .comm import NumericError
from .config import ConfigError, SimConfig, parse_config
from .engine import FrameMetrics, run_simulation, run_sweep, summarize
from .sensing import EstimationError

log = logging.getLogger("isacsim")

SCHEMA_VERSION = 1
METRICS_HEADER = ("seed", "frame", "slot", "estimator", "throughput_bps_hz", "correlation", "pos_error_m")
TRAJECTORY_HEADER = (
    "seed", "frame", "true_x_m", "true_y_m", "est_x_m", "est_y_m", "est_speed_mps", "pos_error_m", "fallback",
)
SWEEP_HEADER = (
    "param", "value", "estimator", "skipped", "n_seeds",
    "throughput_mean", "throughput_ci_low", "throughput_ci_high",
    "correlation_mean", "correlation_ci_low", "correlation_ci_high",
)
DEFAULT_TOLERANCE = {"rel": 1e-9, "abs": 1e-12}

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class VerificationFailed(Exception):
    pass


def _num(v: Any) -> str:
    # repr keeps full double precision and never uses locale separators
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_seeds(text: str) -> tuple[int, ...]:
    """Parse ``"0-19"``, ``"1,4,7"`` or a mix such as ``"0-3,10"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                a, b = int(lo), int(hi)
                if b < a:
                    raise ValueError
                seeds.extend(range(a, b + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise click.BadParameter(f"not a seed or seed range: {part!r}", param_hint="--seeds") from None
    if not seeds:
        raise click.BadParameter("no seeds given", param_hint="--seeds")
    if any(s < 0 for s in seeds):
        raise click.BadParameter("seeds must be non-negative", param_hint="--seeds")
    return tuple(sorted(set(seeds)))


def parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}", param_hint="--values") from None
    if not values:
        raise click.BadParameter("no values given", param_hint="--values")
    return values


@contextmanager
def staged_output(out: Path) -> Iterator[Path]:
    """Yield a scratch directory whose files are moved into ``out`` on success."""
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".isacsim-", dir=out))
    try:
        yield scratch
        for f in sorted(scratch.iterdir()):
            os.replace(f, out / f.name)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def metrics_rows(series: dict[int, list[FrameMetrics]]) -> list[tuple]:
    rows = []
    for seed, frames in series.items():
        for fm in frames:
            for est in fm.throughput:
                for i, (tp, corr) in enumerate(zip(fm.throughput[est], fm.correlation[est])):
                    # slot 0 is the sensing slot; communication slots start at 1
                    rows.append((seed, fm.frame, i + 1, est, tp, corr, fm.pos_error))
    rows.sort(key=lambda r: r[:4])
    return rows


def write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def write_run_outputs(out: Path, cfg: SimConfig, series: dict[int, list[FrameMetrics]]) -> dict:
    write_csv(out / "metrics.csv", METRICS_HEADER, metrics_rows(series))
    traj = [
        (seed, fm.frame, *fm.true_centroid, fm.fused.x_hat, fm.fused.y_hat, fm.fused.v_hat, fm.pos_error, fm.fallback)
        for seed, frames in series.items()
        for fm in frames
    ]
    write_csv(out / "trajectory.csv", TRAJECTORY_HEADER, traj)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "isacsim_version": __version__,
        **summarize(series, cfg),
        "config": cfg.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    write_csv(path, SWEEP_HEADER, [tuple(r.get(k, "") for k in SWEEP_HEADER) for r in rows])


def plot_sweep(csv_path: Path, out_dir: Path) -> list[Path]:
    """Render one SVG per metric from an existing ``sweep.csv``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with csv_path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r["skipped"] == "0"]
    if not rows:
        return []
    param = rows[0]["param"]
    xlabel = {"aps": "Number of APs", "power": "AP transmission power (dBm)"}[param]
    written = []
    # svg.fonttype "none" keeps labels as SVG text rather than glyph outlines
    style = {"svg.fonttype": "none", "svg.hashsalt": "isacsim"}
    for metric, ylabel in (("throughput", "Average throughput (bits/s/Hz)"),
                           ("correlation", "Correlation coefficient")):
        with plt.rc_context(style):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for est in dict.fromkeys(r["estimator"] for r in rows):
                pts = [r for r in rows if r["estimator"] == est]
                x = [float(r["value"]) for r in pts]
                y = [float(r[f"{metric}_mean"]) for r in pts]
                err = [
                    [m - float(r[f"{metric}_ci_low"]) for m, r in zip(y, pts)],
                    [float(r[f"{metric}_ci_high"]) - m for m, r in zip(y, pts)],
                ]
                ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=est)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            path = out_dir / f"sweep_{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        written.append(path)
    return written


def _flatten(obj: Any, prefix: str = "") -> dict[str, Any]:
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return out
    if isinstance(obj, list):
        out = {}
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


def load_tolerances(path: Path | None) -> tuple[dict, dict[str, dict]]:
    """Read ``{"default": {...}, "fields": {name: {...}}}``; missing file means defaults."""
    if path is None or not path.is_file():
        log.info("no tolerance file; using default rel=%g abs=%g for every field",
                 DEFAULT_TOLERANCE["rel"], DEFAULT_TOLERANCE["abs"])
        return dict(DEFAULT_TOLERANCE), {}
    data = json.loads(path.read_text(encoding="utf-8"))
    default = {**DEFAULT_TOLERANCE, **data.get("default", {})}
    return default, data.get("fields", {})


def _tolerance_for(field: str, default: dict, per_field: dict[str, dict]) -> dict:
    # exact field names win, then the longest matching prefix ("estimators.ls")
    best, best_len = default, -1
    for name, tol in per_field.items():
        if (field == name or field.startswith(name + ".") or field.startswith(name + "[")) and len(name) > best_len:
            best, best_len = {**default, **tol}, len(name)
    return best


def compare_summaries(
    produced: dict, golden: dict, default: dict, per_field: dict[str, dict]
) -> list[tuple[str, Any, Any, bool]]:
    got, want = _flatten(produced), _flatten(golden)
    results = []
    for key in sorted(want):
        if key.startswith("isacsim_version"):
            continue
        g = want[key]
        if key not in got:
            results.append((key, g, None, False))
            continue
        p = got[key]
        if isinstance(g, (int, float)) and not isinstance(g, bool) and isinstance(p, (int, float)):
            tol = _tolerance_for(key, default, per_field)
            ok = math.isclose(p, g, rel_tol=tol["rel"], abs_tol=tol["abs"]) or (math.isnan(g) and math.isnan(p))
        else:
            ok = p == g
        results.append((key, g, p, ok))
    return results


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(config: str, seeds: str | None, frames: int | None) -> SimConfig:
    cfg = parse_config(config)
    changes: dict[str, Any] = {}
    if seeds is not None:
        changes["seeds"] = parse_seeds(seeds)
    if frames is not None:
        changes["frames"] = frames
    return cfg.replace(**changes) if changes else cfg


@click.group()
@click.version_option(__version__, prog_name="isacsim")
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose: int) -> None:
    """Sensing-assisted channel estimation simulator for distributed MIMO."""
    _setup_logging(verbose)


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--seeds", help="Seeds, e.g. '0-19' or '1,5,9'. Defaults to the config value.")
@click.option("--frames", type=click.IntRange(min=1), help="Frames per seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--workers", type=click.IntRange(min=1), help="Parallel seed workers (default: ISACSIM_THREADS or CPU count).")
def run(config: str, seeds: str | None, frames: int | None, out_dir: str, workers: int | None) -> None:
    """Simulate one scenario and write metrics.csv, trajectory.csv and summary.json."""
    cfg = _load(config, seeds, frames)
    with staged_output(Path(out_dir)) as scratch:
        summary = write_run_outputs(scratch, cfg, run_simulation(cfg, workers))
    click.echo(f"mean position error: {summary['mean_pos_error_m']:.4f} m over {summary['n_frames']} frames")
    for est, s in summary["estimators"].items():
        click.echo(f"{est:>8}: throughput {s['mean_throughput_bps_hz']:.3f} bits/s/Hz, "
                   f"correlation {s['mean_correlation']:.4f}")


@main.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--param", type=click.Choice(["aps", "power"]), required=True, help="Swept parameter.")
@click.option("--values", "values_text", required=True, help="Comma-separated values, e.g. '2,3,4,5'.")
@click.option("--seeds", help="Seeds, e.g. '0-19'. Defaults to the config value.")
@click.option("--frames", type=click.IntRange(min=1), help="Frames per seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--plot", is_flag=True, help="Also write one SVG chart per metric.")
@click.option("--workers", type=click.IntRange(min=1), help="Parallel seed workers.")
def sweep(config: str, param: str, values_text: str, seeds: str | None, frames: int | None,
          out_dir: str, plot: bool, workers: int | None) -> None:
    """Sweep AP count or AP power and write sweep.csv."""
    values = parse_values(values_text)
    if param == "aps" and any(v != int(v) or v < 1 for v in values):
        raise click.BadParameter("AP counts must be positive integers", param_hint="--values")
    cfg = _load(config, seeds, frames)
    if param == "aps":
        values = [int(v) for v in values]
        if max(values) > len(cfg.ap_positions_m):
            raise click.BadParameter(
                f"only {len(cfg.ap_positions_m)} AP positions are configured", param_hint="--values"
            )
    with staged_output(Path(out_dir)) as scratch:
        write_sweep_csv(scratch / "sweep.csv", run_sweep(cfg, param, values, workers))
        if plot:
            plot_sweep(scratch / "sweep.csv", scratch)
    click.echo(f"wrote {Path(out_dir) / 'sweep.csv'}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory holding the produced summary.json.")
@click.option("--golden", "golden_dir", required=True, type=click.Path(file_okay=False), help="Directory holding the golden summary.json.")
@click.option("--tolerances", type=click.Path(dir_okay=False), help="Tolerance file (default: <golden>/tolerances.json).")
def verify(out_dir: str, golden_dir: str, tolerances: str | None) -> None:
    """Compare a produced summary.json against golden fixtures."""
    produced_path = Path(out_dir) / "summary.json"
    golden_path = Path(golden_dir) / "summary.json"
    for p in (produced_path, golden_path):
        if not p.is_file():
            raise click.UsageError(f"missing fixture: {p}")
    tol_path = Path(tolerances) if tolerances else Path(golden_dir) / "tolerances.json"
    if tolerances and not tol_path.is_file():
        raise click.UsageError(f"missing fixture: {tol_path}")
    default, per_field = load_tolerances(tol_path)
    results = compare_summaries(
        json.loads(produced_path.read_text(encoding="utf-8")),
        json.loads(golden_path.read_text(encoding="utf-8")),
        default, per_field,
    )
    width = max(len(k) for k, *_ in results)
    for key, g, p, ok in results:
        click.echo(f"{'PASS' if ok else 'FAIL'}  {key:<{width}}  golden={g!r}  produced={p!r}")
    failed = [k for k, _, _, ok in results if not ok]
    click.echo(f"{len(results) - len(failed)}/{len(results)} fields within tolerance")
    if failed:
        raise VerificationFailed(", ".join(failed))


def cli(argv: list[str] | None = None) -> int:
    """Entry point mapping failures onto the documented exit codes."""
    try:
        main.main(args=argv, prog_name="isacsim", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.UsageError as exc:
        exc.show()
        return EXIT_INVALID
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_INVALID
    except VerificationFailed as exc:
        click.echo(f"verification failed: {exc}", err=True)
        return EXIT_INVALID
    except (NumericError, EstimationError, ArithmeticError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a bug, but keep the exit contract
        log.debug("unexpected failure", exc_info=True)
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


def entry_point() -> None:
    sys.exit(cli())

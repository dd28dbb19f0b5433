import sys
from functools import wraps
from pathlib import Path
from typing import List, Optional

import orjson
import pandas as pd
import typer
import yaml
from pydantic import ValidationError

from config import settings
from config.run_config import load_run_config
from src.bev import CameraIntrinsics, DepthMap, SegMap, depth_to_points, project_to_bev
from src.controller import weights_from_alphas
from src.errors import ConfigError, FusionNavError, GeodesyError
from src.formats import read_depth, read_pgm, write_json, write_pgm
from src.geodesy import GeoPoint, Pose, route_point_to_local
from src.harness import evaluate_records, plot_record, policy_trace, run_episodes, tune_lateral_gains
from src.stream_predictor import serve_stream
from utils.helpers import log_message, parse_float_list, setup_logging

EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

app = typer.Typer(help="Navigation-and-control stack with a closed-loop driving simulator.", no_args_is_help=True)


# ------------------------------
# Error handling and logging
# ------------------------------
def cli_errors(func):
    """Map configuration problems to exit code 2 and episode failures to exit code 3."""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, ValidationError, FileNotFoundError) as e:
            log_message(f"Configuration error: {e}", level="error")
            typer.echo(f"Configuration error: {e}", err=True)
            raise typer.Exit(EXIT_CONFIG_ERROR)
        except FusionNavError as e:
            log_message(f"Run failed: {e}", level="error")
            typer.echo(f"Run failed: {e}", err=True)
            raise typer.Exit(EXIT_RUNTIME_ERROR)
        except ValueError as e:
            log_message(f"Invalid input: {e}", level="error")
            typer.echo(f"Invalid input: {e}", err=True)
            raise typer.Exit(EXIT_CONFIG_ERROR)
    return wrapper


@app.callback()
def main(log_level: str = typer.Option(settings.LOG_LEVEL, help="Logging level")):
    try:
        settings.validate_settings()
    except ValueError as e:
        typer.echo(str(e), err=True)
        raise typer.Exit(EXIT_CONFIG_ERROR)
    setup_logging(log_level.upper())


def _echo_json(obj):
    typer.echo(orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2).decode())


def _geo(text: str) -> GeoPoint:
    values = parse_float_list(text)
    if len(values) != 2:
        raise ConfigError(f"Expected 'lat,lon', got '{text}'")
    return GeoPoint(*values)


# ------------------------------
# Commands
# ------------------------------
@app.command()
@cli_errors
def simulate(
    config_path: Path = typer.Argument(Path(settings.DEFAULT_CONFIG_PATH), help="Run configuration (YAML)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the configured seed"),
    noise_gnss_m: Optional[float] = typer.Option(None, "--noise-gnss-m", help="GNSS noise sigma in meters"),
    noise_bearing_deg: Optional[float] = typer.Option(None, "--noise-bearing-deg", help="Bearing noise sigma in degrees"),
    predictor: Optional[str] = typer.Option(None, "--predictor", help="oracle | playback | external-stream"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory"),
    runs: int = typer.Option(1, "--runs", min=1, help="Number of consecutive seeds to run"),
    jobs: int = typer.Option(1, "--jobs", help="Parallel episodes (joblib n_jobs)"),
):
    """Run closed-loop episodes and write one directory per seed."""
    config = load_run_config(config_path, **{
        "seed": seed,
        "noise.gnss_sigma_m": noise_gnss_m,
        "noise.bearing_sigma_deg": noise_bearing_deg,
        "predictor": predictor,
        "output_dir": str(out) if out else None,
    })
    results = run_episodes(config, [config.seed + i for i in range(runs)], n_jobs=jobs)
    _echo_json([{**r.to_dict(), "run_dir": str(r.run_dir)} for r in results])


@app.command()
@cli_errors
def evaluate(
    records: List[Path] = typer.Argument(..., help="Driving records (JSON Lines)"),
    truth: Optional[List[Path]] = typer.Option(None, "--truth", help="Ground truth record per driving record"),
    out: Optional[Path] = typer.Option(None, "--out", help="Directory for report.json and scores.csv"),
):
    """Score driving records and print the report."""
    report = evaluate_records(records, truth)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "report.json", report.to_dict())
        pd.DataFrame(report.to_csv_rows()).to_csv(out / "scores.csv", index=False)
    _echo_json(report.to_dict())


@app.command()
@cli_errors
def geodesy(
    origin: str = typer.Argument(..., help="Vehicle position 'lat,lon'"),
    target: str = typer.Argument(..., help="Route point 'lat,lon'"),
    bearing: float = typer.Option(0.0, "--bearing", help="Vehicle bearing in degrees clockwise from north"),
):
    """Print a route point in the vehicle frame."""
    try:
        point = route_point_to_local(Pose(_geo(origin), bearing), _geo(target))
    except GeodesyError as e:
        raise ConfigError(str(e)) from e
    _echo_json({"x_m": point.x_m, "y_m": point.y_m})


@app.command()
@cli_errors
def bev(
    depth: Path = typer.Argument(..., help="Depth raster (DPF1)"),
    seg: Path = typer.Argument(..., help="Segmentation raster (PGM)"),
    intrinsics: Path = typer.Argument(..., help="Camera intrinsics (YAML or JSON)"),
    out: Path = typer.Option(Path("bev.pgm"), "--out", help="Output BEV grid (PGM)"),
):
    """Project depth and segmentation into a BEV grid file."""
    try:
        intr = CameraIntrinsics.from_dict(yaml.safe_load(intrinsics.read_text(encoding="utf-8")))
    except (ValueError, TypeError, yaml.YAMLError) as e:
        raise ConfigError(f"Invalid intrinsics {intrinsics}: {e}") from e
    grid = project_to_bev(depth_to_points(DepthMap(read_depth(depth)), intr), SegMap(read_pgm(seg)))
    write_pgm(out, grid.raster)
    typer.echo(str(out))


@app.command("policy-trace")
@cli_errors
def policy_trace_command(
    csv: Path = typer.Argument(..., help="CSV with mlp_steering, mlp_throttle, pid_steering, pid_throttle"),
    alphas: str = typer.Option("1,1,1", "--alphas", help="Waypoint, steering and throttle loss weights"),
    min_level: float = typer.Option(settings.AGENT_MIN_LEVEL, "--min-level"),
):
    """Print the fused control for each row of agent controls."""
    values = parse_float_list(alphas)
    if len(values) != 3:
        raise ConfigError(f"Expected three alphas, got '{alphas}'")
    try:
        table = policy_trace(csv, weights_from_alphas(*values), min_level)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    typer.echo(table.to_csv(index=False), nl=False)


@app.command()
@cli_errors
def plot(
    record: Path = typer.Argument(..., help="Driving record (JSON Lines)"),
    out: Optional[Path] = typer.Option(None, "--out", help="Output directory (default: next to the record)"),
):
    """Write a trajectory SVG and a per-tick CSV for a record."""
    paths = plot_record(record, out)
    _echo_json({name: str(path) for name, path in paths.items()})


@app.command("predictor-serve")
def predictor_serve():
    """Serve the oracle predictor over the line-delimited stream protocol."""
    handled = serve_stream(sys.stdin.buffer, sys.stdout.buffer)
    log_message(f"Served {handled} predictor requests")


@app.command()
@cli_errors
def tune(
    config_path: Path = typer.Argument(..., help="Run configuration (YAML)"),
    kp: str = typer.Option("-0.4,-0.8,-1.2", "--kp", help="Lateral kp candidates"),
    kd: str = typer.Option("0,-0.2", "--kd", help="Lateral kd candidates"),
    jobs: int = typer.Option(1, "--jobs"),
):
    """Grid-search the lateral PID gains on a run configuration."""
    config = load_run_config(config_path)
    table = tune_lateral_gains(config, parse_float_list(kp), parse_float_list(kd), n_jobs=jobs)
    typer.echo(table.to_csv(index=False), nl=False)


if __name__ == "__main__":
    app()

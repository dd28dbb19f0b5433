"""
Episode runner and experiment plumbing.

An episode runs the closed loop at the record rate:
sense -> route window -> BEV -> predict -> controller fusion -> intervention
check -> vehicle step, writing one driving-record line per tick.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import orjson
import pandas as pd
from joblib import Parallel, delayed

from config.run_config import RunConfig
from config.settings import STEP_DT_S
from src.bev import depth_to_points, project_to_bev
from src.controller import ControlWeights, Control, fuse
from src.errors import ConfigError, EvaluationError, WorldError
from src.formats import RecordWriter, read_records, write_depth, write_json, write_pgm, write_records
from src.geodesy import GeoPoint, geo_to_offset
from src.metrics import ScoreReport, record_scores
from src.predictor import ObservationBundle, OraclePredictor, PlaybackPredictor, ground_truth_waypoints
from src.route import Route, RouteTracker, advance, command, window
from src.stream_predictor import StreamPredictor
from src.vehicle_sim import InterventionEvent, InterventionSupervisor, footprint, initial_state, sense, step
from src.world import World
from utils.helpers import ensure_directory_exists, log_message

PathLike = Union[str, Path]
RECORD_FILE = "record.jsonl"
RASTER_DIR = "rasters"


@dataclass
class EpisodeResult:
    run_dir: Path
    record_path: Path
    finished: bool
    ticks: int
    interventions: List[InterventionEvent] = field(default_factory=list)
    collision_ticks: int = 0
    cross_track_mean_m: float = 0.0
    cross_track_max_m: float = 0.0
    dt: float = STEP_DT_S

    @property
    def intervention_s(self) -> float:
        return sum(e.duration_s(self.dt) for e in self.interventions)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "record": self.record_path.name,
            "finished": self.finished,
            "ticks": self.ticks,
            "interventions": [e.to_dict() for e in self.interventions],
            "intervention_count": len(self.interventions),
            "intervention_s": self.intervention_s,
            "collision_ticks": self.collision_ticks,
            "cross_track_mean_m": self.cross_track_mean_m,
            "cross_track_max_m": self.cross_track_max_m,
        }


# =============================================================================
# Setup
# =============================================================================
def load_world(config: RunConfig) -> World:
    try:
        route = Route.from_file(config.route) if config.route else None
        return World.from_file(config.world, route_override=route)
    except (WorldError, OSError, orjson.JSONDecodeError, ValueError) as e:
        raise ConfigError(f"Cannot load world {config.world}: {e}") from e


def build_predictor(config: RunConfig):
    if config.predictor == "oracle":
        return OraclePredictor(config.oracle.speed_target, config.oracle.to_params(config.vehicle))
    elif config.predictor == "playback":
        return PlaybackPredictor(read_records(config.playback_record))
    else:
        return StreamPredictor(config.external_command)


def _pose_dict(position: GeoPoint, bearing_deg: float) -> Dict[str, float]:
    return {"lat": position.lat_deg, "lon": position.lon_deg, "bearing_deg": bearing_deg}


# =============================================================================
# Episodes
# =============================================================================
def run_episode(config: RunConfig, run_dir: Optional[PathLike] = None, world: Optional[World] = None) -> EpisodeResult:
    """Run one closed-loop episode and write its record, config copy and summary to `run_dir`."""
    run_dir = ensure_directory_exists(run_dir or Path(config.output_dir) / f"seed_{config.seed}")
    world = world or load_world(config)
    intr = config.camera.to_intrinsics()
    params = config.vehicle.to_params()
    noise = config.noise.to_noise(config.seed)
    write_json(run_dir / "config.json", config.to_json_dict())

    if config.save_rasters:
        ensure_directory_exists(run_dir / RASTER_DIR)
    rng = noise.rng()
    controller = config.controller.build()
    supervisor = InterventionSupervisor(
        world, params,
        horizon_s=config.intervention.horizon_s,
        off_route_m=config.intervention.off_route_m,
        rejoin_m=config.intervention.rejoin_m,
        speed_mps=config.intervention.speed_mps,
        lookahead_m=config.intervention.lookahead_m,
    )
    pose_filter = config.localization.build(config.noise, config.vehicle)
    tracker = RouteTracker.start(world.route)
    state = initial_state(world)
    record_path = run_dir / RECORD_FILE
    finished, ticks, collision_ticks, cross_track = False, 0, 0, []

    log_message(f"Episode start: seed {config.seed}, predictor {config.predictor}, output {run_dir}")
    predictor = build_predictor(config)
    try:
        with RecordWriter(record_path) as writer:
            for tick in range(config.tick_limit):
                obs = sense(world, state, noise, rng, intr, params)
                pose = pose_filter.update(obs.gnss, obs.bearing_deg, obs.wheels)
                tracker, finished = advance(tracker, pose)
                if finished:
                    break
                win = window(tracker, pose)
                bev = project_to_bev(depth_to_points(obs.depth, intr), obs.seg)
                prediction = predictor.predict(ObservationBundle(bev, win, obs.wheels), tick)
                output = controller.act(prediction.waypoints, obs.wheels, prediction.control, params.dt)
                applied, intervening = supervisor.update(state, output.fused, tick)

                x, y = world.to_local(state.pose.position)
                offset = float(world.cross_track_m(float(x), float(y)))
                cross_track.append(offset)
                if world.hits_obstacle(footprint(float(x), float(y), state.pose.bearing_deg, params)):
                    collision_ticks += 1

                record = {
                    "t": state.t_s,
                    "tick": tick,
                    "gnss": obs.gnss.to_dict(),
                    "bearing_deg": obs.bearing_deg,
                    "omega_l": obs.wheels.omega_l,
                    "omega_r": obs.wheels.omega_r,
                    "steering": applied.steering,
                    "throttle": applied.throttle,
                    "control_pred": prediction.control.to_dict(),
                    "control_pid": output.pid.to_dict(),
                    "rp_window": win.to_dict(),
                    "route_index": tracker.current_index,
                    "command": command(win).value,
                    "waypoints_pred": prediction.waypoints.as_list(),
                    "waypoints_gt": None,
                    "intervention_flag": intervening,
                    "intervention_id": supervisor.current_event_id,
                    "intervention_cause": supervisor.active.cause.value if intervening else None,
                    "pose_true": _pose_dict(state.pose.position, state.pose.bearing_deg),
                    "pose_est": _pose_dict(pose.position, pose.bearing_deg),
                    "cross_track_m": offset,
                    "depth_path": None,
                    "seg_path": None,
                    "bev_path": None,
                }
                if config.save_rasters:
                    record.update(_save_rasters(run_dir, tick, obs.depth.raster, obs.seg.raster, bev.raster))
                writer.write(record)
                log_message(f"tick {tick}: applied {applied}, intervening {intervening}", level="debug")

                state = step(state, applied, params)
                ticks += 1
    finally:
        predictor.close()

    events = supervisor.finish(max(ticks - 1, 0))
    _attach_ground_truth(record_path)
    result = EpisodeResult(
        run_dir=run_dir,
        record_path=record_path,
        finished=finished,
        ticks=ticks,
        interventions=events,
        collision_ticks=collision_ticks,
        cross_track_mean_m=float(np.mean(cross_track)) if cross_track else 0.0,
        cross_track_max_m=float(np.max(cross_track)) if cross_track else 0.0,
        dt=params.dt,
    )
    write_json(run_dir / "summary.json", {**result.to_dict(), "seed": config.seed, "predictor": config.predictor})
    log_message(f"Episode end: finished={finished}, ticks={ticks}, interventions={len(events)}")
    return result


def _save_rasters(run_dir: Path, tick: int, depth: np.ndarray, seg: np.ndarray, bev: np.ndarray) -> Dict[str, str]:
    paths = {
        "depth_path": f"{RASTER_DIR}/depth_{tick:05d}.dpf",
        "seg_path": f"{RASTER_DIR}/seg_{tick:05d}.pgm",
        "bev_path": f"{RASTER_DIR}/bev_{tick:05d}.pgm",
    }
    write_depth(run_dir / paths["depth_path"], depth)
    write_pgm(run_dir / paths["seg_path"], seg)
    write_pgm(run_dir / paths["bev_path"], bev)
    return paths


def _attach_ground_truth(record_path: Path):
    """Fill `waypoints_gt` from the recorded trajectory once the episode is complete."""
    records = read_records(record_path)
    for rec, truth in zip(records, ground_truth_waypoints(records)):
        rec["waypoints_gt"] = truth.as_list() if truth is not None else None
    write_records(record_path, records)


def _run_seed(config: RunConfig, seed: int) -> EpisodeResult:
    seeded = config.with_overrides(seed=seed)
    return run_episode(seeded, Path(config.output_dir) / f"seed_{seed}")


def run_episodes(config: RunConfig, seeds: Sequence[int], n_jobs: int = 1) -> List[EpisodeResult]:
    """Run one episode per seed, each in its own directory, optionally in parallel."""
    if not seeds:
        raise ConfigError("At least one seed is required")
    log_message(f"Running {len(seeds)} episodes with n_jobs={n_jobs}")
    return Parallel(n_jobs=n_jobs)(delayed(_run_seed)(config, seed) for seed in seeds)


# =============================================================================
# Evaluation
# =============================================================================
def _with_ground_truth(records: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    if any(r.get("waypoints_gt") is not None for r in records):
        return records
    truth = ground_truth_waypoints(records)
    return [{**r, "waypoints_gt": t.as_list() if t is not None else None} for r, t in zip(records, truth)]


def evaluate_records(record_paths: Sequence[PathLike], truth_paths: Optional[Sequence[PathLike]] = None) -> ScoreReport:
    """Score each record against its ground truth (itself when none is given) and average across runs."""
    if not record_paths:
        raise EvaluationError("No driving records to evaluate")
    truth_paths = list(truth_paths) if truth_paths else list(record_paths)
    if len(truth_paths) != len(record_paths):
        raise EvaluationError(f"{len(record_paths)} records but {len(truth_paths)} ground truth records")

    runs = []
    for record_path, truth_path in zip(record_paths, truth_paths):
        record_path, truth_path = Path(record_path), Path(truth_path)
        records = read_records(record_path)
        truths = _with_ground_truth(read_records(truth_path))
        runs.append(record_scores(records, truths, record_path.parent, truth_path.parent, name=str(record_path)))
        log_message(f"Scored {record_path}")
    return ScoreReport(runs)


# =============================================================================
# Lateral gain tuning
# =============================================================================
def tune_lateral_gains(config: RunConfig, kp_values: Iterable[float], kd_values: Iterable[float],
                       n_jobs: int = 1) -> pd.DataFrame:
    """Grid search over lateral kp/kd ranked by collisions, interventions and mean cross-track error."""
    candidates = [(kp, kd) for kp in kp_values for kd in kd_values]
    if not candidates:
        raise ConfigError("Empty gain grid")
    tune_dir = Path(config.output_dir) / "tune"

    def run_candidate(kp: float, kd: float) -> Dict[str, Any]:
        candidate = config.with_overrides(**{"controller.lateral.kp": kp, "controller.lateral.kd": kd,
                                             "save_rasters": False})
        result = run_episode(candidate, tune_dir / f"kp_{kp:+.3f}_kd_{kd:+.3f}")
        return {"kp": kp, "kd": kd, "finished": result.finished, "collision_ticks": result.collision_ticks,
                "interventions": len(result.interventions), "cross_track_mean_m": result.cross_track_mean_m}

    rows = Parallel(n_jobs=n_jobs)(delayed(run_candidate)(kp, kd) for kp, kd in candidates)
    table = pd.DataFrame(rows).sort_values(
        ["collision_ticks", "interventions", "cross_track_mean_m", "kp", "kd"], kind="mergesort"
    ).reset_index(drop=True)
    log_message(f"Best lateral gains: kp={table.loc[0, 'kp']}, kd={table.loc[0, 'kd']}")
    return table


# =============================================================================
# Policy trace and plots
# =============================================================================
POLICY_COLUMNS = ("mlp_steering", "mlp_throttle", "pid_steering", "pid_throttle")


def policy_trace(csv_path: PathLike, weights: ControlWeights, min_level: float) -> pd.DataFrame:
    """Fused control for each row of agent controls."""
    table = pd.read_csv(csv_path)
    missing = [c for c in POLICY_COLUMNS if c not in table.columns]
    if missing:
        raise ValueError(f"{csv_path} is missing columns: {', '.join(missing)}")
    fused = [
        fuse(Control(row.mlp_steering, row.mlp_throttle), Control(row.pid_steering, row.pid_throttle), weights, min_level)
        for row in table.itertuples(index=False)
    ]
    table["fused_steering"] = [c.steering for c in fused]
    table["fused_throttle"] = [c.throttle for c in fused]
    return table


def record_frame(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Flat per-tick table with positions in meters east/north of the first true pose."""
    if not records:
        raise EvaluationError("Record is empty")
    first = records[0].get("pose_true") or records[0]["gnss"]
    origin = GeoPoint(first["lat"], first["lon"])
    rows = []
    for rec in records:
        measured = geo_to_offset(origin, GeoPoint(rec["gnss"]["lat"], rec["gnss"]["lon"]))
        true_pose = rec.get("pose_true") or rec["gnss"]
        actual = geo_to_offset(origin, GeoPoint(true_pose["lat"], true_pose["lon"]))
        rows.append({
            "tick": rec["tick"],
            "t": rec["t"],
            "east_m": actual.dx_m,
            "north_m": actual.dy_m,
            "gnss_east_m": measured.dx_m,
            "gnss_north_m": measured.dy_m,
            "bearing_deg": rec["bearing_deg"],
            "steering": rec["steering"],
            "throttle": rec["throttle"],
            "command": rec.get("command"),
            "route_index": rec.get("route_index"),
            "cross_track_m": rec.get("cross_track_m", math.nan),
            "intervention": bool(rec["intervention_flag"]),
        })
    return pd.DataFrame(rows)


def plot_record(record_path: PathLike, out_dir: Optional[PathLike] = None) -> Dict[str, Path]:
    """Write a trajectory SVG and a per-tick CSV next to the record (or into `out_dir`)."""
    record_path = Path(record_path)
    out = ensure_directory_exists(out_dir or record_path.parent)
    frame = record_frame(read_records(record_path))
    csv_path = out / f"{record_path.stem}_ticks.csv"
    svg_path = out / f"{record_path.stem}_trajectory.svg"
    frame.to_csv(csv_path, index=False)

    fig, ax = plt.subplots(figsize=(6, 8))
    ax.plot(frame["east_m"], frame["north_m"], label="vehicle", color="tab:blue")
    ax.scatter(frame["gnss_east_m"], frame["gnss_north_m"], s=4, label="GNSS", color="tab:gray", alpha=0.5)
    flagged = frame[frame["intervention"]]
    if not flagged.empty:
        ax.scatter(flagged["east_m"], flagged["north_m"], s=10, label="intervention", color="tab:red")
    ax.set_xlabel("east [m]")
    ax.set_ylabel("north [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best")
    ax.set_title(record_path.stem)
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    log_message(f"Wrote {svg_path} and {csv_path}")
    return {"svg": svg_path, "csv": csv_path}

"""
Line-delimited JSON protocol for plugging an external waypoint predictor into
the simulator over standard streams.

Request (one line per tick):
    {"tick", "bev_b64", "bev_shape", "cell_m", "rp1", "rp2", "omega_l", "omega_r", "wheel_radius_m"}
Response (one line per request):
    {"deltas": [[dx, dy] x 3], "control": {"steering", "throttle"}}  or  {"error": "..."}
"""
import base64
import subprocess
import sys
from typing import Any, BinaryIO, Dict, List, Optional, Sequence

import numpy as np
import orjson

from src.bev import BevGrid
from src.controller import Control, WheelFeedback
from src.errors import ExternalPredictorError
from src.geodesy import LocalPoint
from src.predictor import ObservationBundle, OraclePredictor, PredictionOutput, WaypointDelta, deltas_between, waypoints_from_deltas
from src.route import RouteWindow
from utils.helpers import log_message


def encode_request(bundle: ObservationBundle, tick: int) -> Dict[str, Any]:
    raster = np.ascontiguousarray(bundle.bev.raster, dtype=np.uint8)
    return {
        "tick": tick,
        "bev_b64": base64.b64encode(raster.tobytes()).decode("ascii"),
        "bev_shape": list(raster.shape),
        "cell_m": bundle.bev.cell_m,
        "rp1": bundle.window.rp1.as_list(),
        "rp2": bundle.window.rp2.as_list(),
        "omega_l": bundle.wheels.omega_l,
        "omega_r": bundle.wheels.omega_r,
        "wheel_radius_m": bundle.wheels.wheel_radius_m,
    }


def decode_request(request: Dict[str, Any]) -> ObservationBundle:
    rows, cols = request["bev_shape"]
    raster = np.frombuffer(base64.b64decode(request["bev_b64"]), dtype=np.uint8).reshape(rows, cols)
    return ObservationBundle(
        bev=BevGrid(raster.copy(), float(request["cell_m"])),
        window=RouteWindow(LocalPoint(*request["rp1"]), LocalPoint(*request["rp2"])),
        wheels=WheelFeedback(float(request["omega_l"]), float(request["omega_r"]), float(request["wheel_radius_m"])),
    )


def encode_response(output: PredictionOutput) -> Dict[str, Any]:
    points = [output.waypoints.wp1, output.waypoints.wp2, output.waypoints.wp3]
    return {
        "deltas": [[d.dx_m, d.dy_m] for d in deltas_between(points)],
        "control": output.control.to_dict(),
    }


def decode_response(response: Dict[str, Any]) -> PredictionOutput:
    if "error" in response:
        raise ExternalPredictorError(f"External predictor failed: {response['error']}")
    try:
        deltas = [WaypointDelta(float(dx), float(dy)) for dx, dy in response["deltas"]]
        control = Control(float(response["control"]["steering"]), float(response["control"]["throttle"]))
        return PredictionOutput(waypoints_from_deltas(deltas), control)
    except (KeyError, TypeError, ValueError) as e:
        raise ExternalPredictorError(f"Malformed predictor response {response}: {e}") from e


def handle_request(line: bytes, predictor) -> bytes:
    """Answer one request line; failures become an error response rather than ending the stream."""
    try:
        request = orjson.loads(line)
        output = predictor.predict(decode_request(request), int(request.get("tick", 0)))
        reply = encode_response(output)
    except Exception as e:
        log_message(f"Predictor request failed: {e}", level="warning")
        reply = {"error": str(e)}
    return orjson.dumps(reply) + b"\n"


def serve_stream(stdin: Optional[BinaryIO] = None, stdout: Optional[BinaryIO] = None, predictor=None) -> int:
    """Serve requests until end of input; returns the number handled."""
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    predictor = predictor or OraclePredictor()
    handled = 0
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handle_request(line, predictor))
        stdout.flush()
        handled += 1
    return handled


class StreamPredictor:
    """
    Runs an external predictor process and exchanges one JSON line per tick with it.
    """
    name = "external-stream"

    def __init__(self, command: Sequence[str]):
        self.command: List[str] = list(command)
        try:
            self._process = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as e:
            raise ExternalPredictorError(f"Cannot start predictor {self.command}: {e}") from e
        log_message(f"Started external predictor: {' '.join(self.command)}")

    def predict(self, bundle: ObservationBundle, tick: int) -> PredictionOutput:
        try:
            self._process.stdin.write(orjson.dumps(encode_request(bundle, tick)) + b"\n")
            self._process.stdin.flush()
            line = self._process.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise ExternalPredictorError(f"Predictor process stream failed at tick {tick}: {e}") from e
        if not line:
            raise ExternalPredictorError(f"Predictor process exited at tick {tick} (code {self._process.poll()})")
        try:
            return decode_response(orjson.loads(line))
        except orjson.JSONDecodeError as e:
            raise ExternalPredictorError(f"Predictor returned invalid JSON at tick {tick}: {e}") from e

    def close(self):
        if self._process.poll() is None:
            self._process.stdin.close()
            try:
                self._process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._process.kill()
                self._process.wait()
        log_message(f"External predictor exited with code {self._process.returncode}")

"""
File formats: route files, depth rasters (DPF1), class rasters (binary PGM),
world files and JSON Lines driving records.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np
import orjson
from PIL import Image

from src.errors import RasterFormatError, RecordFormatError
from src.geodesy import GeoPoint
from utils.helpers import ensure_directory_exists, log_message

PathLike = Union[str, Path]

DEPTH_MAGIC = b"DPF1"
DEPTH_HEADER_BYTES = 16
JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


# =============================================================================
# Route files
# =============================================================================
def read_route_file(path: PathLike) -> List[GeoPoint]:
    """Load an ordered JSON array of {lat_deg, lon_deg} objects."""
    try:
        data = orjson.loads(Path(path).read_bytes())
        return [GeoPoint(float(p["lat_deg"]), float(p["lon_deg"])) for p in data]
    except (OSError, orjson.JSONDecodeError, KeyError, TypeError) as e:
        log_message(f"Error reading route file {path}: {e}", level="error")
        raise


def write_route_file(path: PathLike, points: Sequence[GeoPoint]):
    """Write a route with 9 fractional digits per coordinate."""
    lines = [f'  {{"lat_deg": {p.lat_deg:.9f}, "lon_deg": {p.lon_deg:.9f}}}' for p in points]
    Path(path).write_text("[\n" + ",\n".join(lines) + "\n]\n", encoding="utf-8")


# =============================================================================
# Rasters
# =============================================================================
def write_depth(path: PathLike, depth: np.ndarray):
    """Write a float depth raster: 16-byte header then row-major little-endian float32."""
    raster = np.ascontiguousarray(depth, dtype="<f4")
    if raster.ndim != 2:
        raise RasterFormatError(f"Depth raster must be 2-D, got shape {raster.shape}")
    rows, cols = raster.shape
    header = DEPTH_MAGIC + np.array([rows, cols, 0], dtype="<u4").tobytes()
    Path(path).write_bytes(header + raster.tobytes())


def read_depth(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < DEPTH_HEADER_BYTES or data[:4] != DEPTH_MAGIC:
        raise RasterFormatError(f"{path} is not a DPF1 depth raster")
    rows, cols, _ = np.frombuffer(data[4:DEPTH_HEADER_BYTES], dtype="<u4")
    expected = DEPTH_HEADER_BYTES + int(rows) * int(cols) * 4
    if len(data) != expected:
        raise RasterFormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(data)}")
    values = np.frombuffer(data[DEPTH_HEADER_BYTES:], dtype="<f4").reshape(int(rows), int(cols))
    return values.astype(np.float64)


def write_pgm(path: PathLike, raster: np.ndarray):
    """Write class ids as a binary PGM (P5, maxval 255)."""
    if raster.ndim != 2 or raster.min(initial=0) < 0 or raster.max(initial=0) > 255:
        raise RasterFormatError("Class raster must be 2-D with values in [0, 255]")
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(path, format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as image:
            if image.mode != "L":
                raise RasterFormatError(f"{path}: expected a grayscale PGM, got mode {image.mode}")
            return np.array(image, dtype=np.uint8)
    except OSError as e:
        raise RasterFormatError(f"Cannot read PGM {path}: {e}") from e


# =============================================================================
# JSON documents and JSON Lines records
# =============================================================================
def read_json(path: PathLike) -> Any:
    return orjson.loads(Path(path).read_bytes())


def write_json(path: PathLike, obj: Any):
    Path(path).write_bytes(orjson.dumps(obj, option=JSON_OPTIONS | orjson.OPT_INDENT_2) + b"\n")


def dumps_line(obj: Dict[str, Any]) -> bytes:
    return orjson.dumps(obj, option=JSON_OPTIONS) + b"\n"


class RecordWriter:
    """
    Streams one JSON object per tick into a driving record file.
    """
    def __init__(self, path: PathLike):
        self.path = Path(path)
        ensure_directory_exists(self.path.parent)
        self._handle = open(self.path, "wb")
        self.ticks_written = 0

    def write(self, tick: Dict[str, Any]):
        self._handle.write(dumps_line(tick))
        self.ticks_written += 1

    def close(self):
        if not self._handle.closed:
            self._handle.close()
            log_message(f"Wrote {self.ticks_written} ticks to {self.path}")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path: PathLike) -> List[Dict[str, Any]]:
    records = []
    with open(path, "rb") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(orjson.loads(line))
            except orjson.JSONDecodeError as e:
                raise RecordFormatError(f"{path}:{line_no}: invalid JSON line ({e})") from e
    return records


def write_records(path: PathLike, records: Iterable[Dict[str, Any]]):
    with open(path, "wb") as handle:
        for record in records:
            handle.write(dumps_line(record))

import logging
import hashlib
from pathlib import Path
from typing import Iterable, Union

from pythonjsonlogger.json import JsonFormatter

from config.settings import LOG_DIRECTORY, LOG_FILE_NAME, LOG_LEVEL

PathLike = Union[str, Path]


def setup_logging(level: str = LOG_LEVEL, log_dir: PathLike = LOG_DIRECTORY):
    """Setup logging: plain text to the console, JSON lines to the log file (safe against duplicate handlers)."""
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger()
    if logger.hasHandlers():
        logger.handlers.clear()

    file_handler = logging.FileHandler(log_path / LOG_FILE_NAME)
    file_handler.setFormatter(
        JsonFormatter("%(asctime)s %(levelname)s %(name)s %(message)s")
    )
    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))

    logger.setLevel(level)
    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)


def log_message(message: str, level: str = "info"):
    """Log a message with timestamp."""
    logger = logging.getLogger(__name__)
    getattr(logger, level.lower(), logger.info)(message)


def ensure_directory_exists(directory: PathLike) -> Path:
    """Ensure a directory exists, create if it doesn't."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def calculate_file_hash(path: PathLike) -> str:
    """Generate a SHA-256 digest of a file's bytes (used to compare driving records)."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def parse_float_list(text: str) -> list:
    """Parse a comma separated list of numbers, e.g. '34.7,137.4'."""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ValueError(f"Expected comma separated numbers, got '{text}'") from e


def resolve_relative(base: PathLike, paths: Iterable[PathLike]) -> list:
    """Resolve paths relative to the directory of `base` unless already absolute."""
    root = Path(base).parent
    return [Path(p) if Path(p).is_absolute() else root / p for p in paths]

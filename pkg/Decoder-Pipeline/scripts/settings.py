"""
Runtime configuration for the decoding pipeline.
Reads from environment variables (and a .env file, when present).
"""

import hashlib
import json
import logging
import os
from pathlib import Path

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()

BASE_DIR = Path(__file__).parent.parent
REPO_ROOT = BASE_DIR.parent

SETTINGS = {
    "data_dir":   Path(os.getenv("QLDPC_DATA_DIR", REPO_ROOT / "data")),
    "runs_dir":   Path(os.getenv("QLDPC_RUNS_DIR", REPO_ROOT / "data" / "runs")),
    "config_dir": Path(os.getenv("QLDPC_CONFIG_DIR", REPO_ROOT / "configs")),
    "log_level":  os.getenv("QLDPC_LOG_LEVEL", "INFO").upper(),
    "log_file":   os.getenv("QLDPC_LOG_FILE", ""),
    "workers":    int(os.getenv("QLDPC_WORKERS", 1)),
}


def configure_logging(level: str | None = None) -> None:
    """Set up root logging for scripts and the CLI."""
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    log_file = SETTINGS["log_file"]
    if log_file:
        path = Path(log_file)
        if not path.is_absolute():
            path = BASE_DIR / "logs" / path
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path))
    logging.basicConfig(
        level=level or SETTINGS["log_level"],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=handlers,
        force=True,
    )


def load_json_config(path: str | Path) -> dict:
    """Load a JSON experiment config, resolving bare names against configs/."""
    path = Path(path)
    if not path.exists():
        candidate = SETTINGS["config_dir"] / path
        if candidate.exists():
            path = candidate
    try:
        with open(path) as f:
            config = json.load(f)
    except FileNotFoundError:
        logger.error("Config file not found: %s", path)
        raise
    logger.info("Loaded config from %s", path)
    return config


def config_hash(config: dict) -> str:
    """Short SHA-256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def resolve_path(path: str | Path) -> Path:
    """Relative paths that do not exist from the working directory are taken from the repository root."""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    return REPO_ROOT / path

"""
Artifacts
CSV/JSON I/O, run manifests, content-addressed run directories and MLflow tracking
"""

import hashlib
import json
import os
import subprocess
from pathlib import Path

import pandas as pd

from casimir_cusp import __version__
from casimir_cusp.errors import DependencyError
from casimir_cusp.logging_utils import get_logger

logger = get_logger(__name__)

DEFAULT_TRACKING_URI = "file:./mlruns"
EXPERIMENT = "casimir-cusp"
RUNS_DIR = "runs"


def get_git_describe():
    """Gets `git describe` of the working tree, or "unknown" outside a repository"""
    try:
        return (
            subprocess.check_output(
                ["git", "describe", "--always", "--dirty"], stderr=subprocess.DEVNULL
            )
            .decode("ascii")
            .strip()
        )
    except Exception:
        return "unknown"


def require(path, command):
    """Returns the path if it exists, else DependencyError naming the producing command"""
    path = Path(path)
    if not path.exists():
        raise DependencyError(str(path), command)
    return path


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=4, default=_jsonable)
    return path


def read_json(path, command=None):
    path = require(path, command) if command else Path(path)
    with open(path) as f:
        return json.load(f)


def write_csv(path, frame: pd.DataFrame):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr precision so a re-read frame is bit-identical
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_csv(path, command=None):
    path = require(path, command) if command else Path(path)
    return pd.read_csv(path)


def _jsonable(value):
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "model_dump"):
        return value.model_dump()
    if hasattr(value, "value"):
        return value.value
    return str(value)


def config_hash(config: dict):
    """sha256 of the canonical JSON form of a resolved config"""
    canonical = json.dumps(config, sort_keys=True, default=_jsonable)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_dir(root, config: dict):
    """Content-addressed directory runs/<sha[:12]> below root"""
    path = Path(root) / RUNS_DIR / config_hash(config)[:12]
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out_dir, command, config: dict, inputs=(), outputs=()):
    """
    Writes manifest_<command>.json next to the outputs

    The manifest carries everything needed to rerun the command: the resolved config, the
    input and output artifact names, the code revision and the library version.
    """
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "git": get_git_describe(),
        "version": __version__,
    }
    path = write_json(Path(out_dir) / f"manifest_{command}.json", manifest)
    logger.info({"event": "manifest_written", "command": command, "path": str(path)})
    return path


def track_run(run_name, params: dict, metrics: dict, artifacts=()):
    """
    Logs one run to MLflow; tracking failures only warn

    The tracking URI comes from MLFLOW_TRACKING_URI and defaults to a local file store.
    """
    try:
        import mlflow

        mlflow.set_tracking_uri(os.getenv("MLFLOW_TRACKING_URI", DEFAULT_TRACKING_URI))
        mlflow.set_experiment(EXPERIMENT)
        with mlflow.start_run(run_name=run_name) as run:
            mlflow.log_params({k: _flat(v) for k, v in params.items()})
            mlflow.log_param("git_describe", get_git_describe())
            for key, value in metrics.items():
                if value is not None:
                    mlflow.log_metric(key, float(value))
            for path in artifacts:
                mlflow.log_artifact(str(path))
            return run.info.run_id
    except Exception as e:
        logger.warning({"event": "tracking_skipped", "run": run_name, "error": str(e)})
        return None


def _flat(value):
    # mlflow params are strings of at most 500 chars
    text = value if isinstance(value, str) else json.dumps(value, default=_jsonable)
    return text[:500]

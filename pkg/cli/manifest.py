"""
Run manifests.

Every subcommand writes exactly one ``manifest.json`` into its output
directory and mirrors it into ``cli.RunManifest``. The registry write is best
effort: a database problem is logged and the run still succeeds.
"""
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

from django.conf import settings
from django.db import DatabaseError

from core.exceptions import DataValidationError
from .models import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "Django", "celery")
TIMING_FIELDS = ("wall_clock_seconds",)


def package_versions() -> Dict[str, str]:
    versions = {"python": sys.version.split()[0]}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunManifestWriter:
    """
    Collects a run's outputs and writes its manifest when the block exits.

    Usage::

        with RunManifestWriter("fit-batch", out_dir, config_hash, seed, argv) as run:
            ...
            run.add_output("summary", path)
    """

    def __init__(self, command: str, output_dir, config_hash: str, seed=None, argv: Optional[List[str]] = None):
        self.command = command
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.seed = seed
        self.argv = list(argv or [])
        self.outputs: Dict[str, str] = {}
        self.started = None
        self.document = None

    def add_output(self, name: str, path) -> Path:
        path = Path(path)
        try:
            self.outputs[name] = str(path.relative_to(self.output_dir))
        except ValueError:
            self.outputs[name] = str(path)
        return path

    def __enter__(self) -> "RunManifestWriter":
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.started = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "succeeded" if exc_type is None else "failed"
        self.write(status, "" if exc is None else f"{exc_type.__name__}: {exc}")
        return False

    def write(self, status: str = "succeeded", error: str = "") -> dict:
        self.document = {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": None if self.seed is None else str(self.seed),
            "versions": package_versions(),
            "argv": self.argv,
            "outputs": dict(sorted(self.outputs.items())),
            "wall_clock_seconds": round(time.monotonic() - self.started, 3) if self.started else 0.0,
            "status": status,
            "error": error,
        }
        path = self.output_dir / MANIFEST_FILE
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.document, handle, indent=2, sort_keys=True)
            handle.write("\n")
        logger.info(f"Wrote {path} ({status})")
        if getattr(settings, "EPIREGIME_RECORD_RUNS", True):
            record_run(self.document, self.output_dir)
        return self.document


def record_run(document: dict, output_dir) -> Optional[object]:
    """Mirror a manifest into the run registry; failures are logged, never raised."""
    try:
        return RunManifest.objects.create(
            command=document["command"],
            output_dir=str(Path(output_dir).resolve()),
            config_hash=document["config_hash"],
            seed=document["seed"],
            versions=document["versions"],
            argv=document["argv"],
            outputs=document["outputs"],
            wall_clock_seconds=document["wall_clock_seconds"],
            status=document["status"],
            error=document["error"],
        )
    except DatabaseError as e:
        logger.warning(f"Could not record run in the registry: {e}")
        return None


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_FILE
    if not path.exists():
        raise DataValidationError("run directory has no manifest", path=str(path))
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)

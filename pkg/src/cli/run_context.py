"""
Run directories and run manifests.
Each CLI invocation writes its artifacts into <runs_dir>/<UTC timestamp>-seed<seed>
and records the resolved config plus a SHA-256 digest of every artifact.
"""

import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

MANIFEST_FILE = "run_manifest.json"


def file_digest(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunContext:
    """
    Owns the output directory of one subcommand run.
    """

    def __init__(self, subcommand: str, seed: int, settings: Dict[str, Any],
                 runs_dir: str = "runs", out_dir: Optional[str] = None):
        """
        Initialize the run context and create its directory.

        Args:
            subcommand (str): Subcommand name
            seed (int): Seed recorded in the manifest and the directory name
            settings (dict): Resolved configuration
            runs_dir (str): Parent directory for timestamped runs
            out_dir (str, optional): Exact directory to use instead of a timestamped one
        """
        self.subcommand = subcommand
        self.seed = seed
        self.settings = settings
        self.started = datetime.now(timezone.utc)
        self.directory = out_dir or self._fresh_directory(runs_dir)
        os.makedirs(self.directory, exist_ok=True)
        self.artifacts: List[str] = []
        logger.info(f"Run directory: {self.directory}")

    def _fresh_directory(self, runs_dir: str) -> str:
        stamp = self.started.strftime("%Y%m%dT%H%M%SZ")
        base = os.path.join(runs_dir, f"{stamp}-seed{self.seed}")
        candidate, suffix = base, 1
        while os.path.exists(candidate):
            candidate = f"{base}-{suffix}"
            suffix += 1
        return candidate

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def record(self, *paths: str):
        """Register written files for the manifest."""
        for path in paths:
            if path not in self.artifacts:
                self.artifacts.append(path)

    def finish(self) -> str:
        digests = {
            os.path.relpath(path, self.directory): file_digest(path)
            for path in sorted(self.artifacts)
        }
        manifest = {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "config": self.settings,
            "started_utc": self.started.isoformat(),
            "artifacts": digests,
        }
        manifest_path = self.path(MANIFEST_FILE)
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info(f"✅ {self.subcommand} finished: {len(digests)} artifacts in {self.directory}")
        return manifest_path

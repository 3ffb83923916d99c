# src/storage.py
"""Storage module for Fair GLM.

This module provides:
- RunStore: Output directory of a sweep (trajectory, summary, manifest, D dumps)
- CacheKeyGenerator: Content hashes keying cached penalty matrices
- PenaltyCache: Directory of binary D dumps shared between runs
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from src.errors import StorageError
from src.penalty import PenaltyMatrix, dump_penalty, load_penalty

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"


def _format_float(value: float) -> str:
    """Shortest repr that round-trips; integral values keep their '.0'."""
    return repr(float(value))


class RunStore:
    """Files of one sweep run.

    Attributes:
        root: Output directory.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def __enter__(self) -> 'RunStore':
        self.ensure_directory()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()

    def close(self) -> None:
        """Remove temporary files left by an interrupted write."""
        if self.root.is_dir():
            for leftover in self.root.glob("*.tmp"):
                leftover.unlink()

    def ensure_directory(self) -> Path:
        """Create the output directory if missing."""
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create output directory {self.root}: {e}")
        return self.root

    def path(self, name: str) -> Path:
        return self.root / name

    def _write_text(self, name: str, text: str) -> Path:
        """Write through a temporary file so readers never see partial output."""
        target = self.path(name)
        staging = target.with_name(target.name + ".tmp")
        try:
            with open(staging, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
            staging.replace(target)
        except OSError as e:
            raise StorageError(f"cannot write {target}: {e}")
        logger.debug("wrote %s", target)
        return target

    def save_table(self, name: str, frame: pd.DataFrame) -> Path:
        """CSV with a fixed float format and Unix line endings."""
        text = frame.to_csv(index=False, float_format=_format_float, lineterminator='\n')
        return self._write_text(name, text)

    def save_trajectory(self, frame: pd.DataFrame) -> Path:
        return self.save_table(TRAJECTORY_FILE, frame)

    def save_summary(self, frame: pd.DataFrame) -> Path:
        return self.save_table(SUMMARY_FILE, frame)

    def save_manifest(self, manifest: Dict[str, Any]) -> Path:
        return self._write_text(MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def load_trajectory(self) -> pd.DataFrame:
        try:
            return pd.read_csv(self.path(TRAJECTORY_FILE))
        except (OSError, pd.errors.ParserError) as e:
            raise StorageError(f"cannot read trajectory from {self.root}: {e}")

    def load_manifest(self) -> Dict[str, Any]:
        try:
            return json.loads(self.path(MANIFEST_FILE).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise StorageError(f"cannot read manifest from {self.root}: {e}")

    def save_penalty(self, name: str, penalty: PenaltyMatrix) -> Path:
        self.ensure_directory()
        return dump_penalty(penalty, self.path(name))

    def load_penalty(self, name: str) -> PenaltyMatrix:
        return load_penalty(self.path(name))


# =============================================================================
# Penalty Cache
# =============================================================================

class CacheKeyGenerator:
    """Stable hex keys from named parts."""

    def __init__(self, algorithm: str = "sha256", hash_length: int = 32):
        self.algorithm = algorithm
        self.hash_length = hash_length

    def generate(self, **parts: Any) -> str:
        """Hash the parts as canonical JSON (sorted keys)."""
        payload = json.dumps(parts, sort_keys=True, default=str).encode('utf-8')
        return hashlib.new(self.algorithm, payload).hexdigest()[:self.hash_length]

    @staticmethod
    def file_digest(path: Union[str, Path]) -> str:
        """sha256 of a file's bytes."""
        digest = hashlib.sha256()
        try:
            with open(path, 'rb') as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    digest.update(chunk)
        except OSError as e:
            raise StorageError(f"cannot hash {path}: {e}")
        return digest.hexdigest()


class PenaltyCache:
    """Binary D dumps keyed by content hash."""

    SUFFIX = ".fglmd"

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}{self.SUFFIX}"

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def get(self, key: str) -> Optional[PenaltyMatrix]:
        """Cached matrix, or None on a miss or an unreadable entry."""
        if not self.exists(key):
            return None
        try:
            return load_penalty(self._path(key))
        except StorageError as e:
            logger.warning("ignoring unreadable cache entry %s: %s", key, e)
            return None

    def put(self, key: str, penalty: PenaltyMatrix) -> Path:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create cache directory {self.root}: {e}")
        return dump_penalty(penalty, self._path(key))

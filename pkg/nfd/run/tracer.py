"""Run manifest: stage traces, artifact list and reproducibility metadata."""

import json
import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

from ..types import PathLike

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class StageTrace:
    """Represents one traced stage of a run."""
    name: str
    start_time: datetime
    end_time: Optional[datetime] = None
    error: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def duration_ms(self) -> Optional[float]:
        if self.end_time:
            return (self.end_time - self.start_time).total_seconds() * 1000
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "start_time": self.start_time.isoformat(),
            "end_time": self.end_time.isoformat() if self.end_time else None,
            "duration_ms": self.duration_ms(),
            "error": self.error,
            "metadata": self.metadata,
        }


class RunTracer:
    """Tracer for the stages and artifacts of one scenario run.

    Timestamps only ever appear in the manifest; artifacts stay deterministic.
    """

    def __init__(self, storage_path: Optional[PathLike] = None, scenario_hash: str = "",
                 seed: Optional[int] = None, workers: int = 1):
        self.storage_path = Path(storage_path) if storage_path else None
        self.scenario_hash = scenario_hash
        self.seed = seed
        self.workers = workers
        self.stages: List[StageTrace] = []
        self.artifacts: List[str] = []
        self.stats = {
            "total_stages": 0,
            "successful_stages": 0,
            "failed_stages": 0,
        }

    def start_stage(self, name: str, metadata: Optional[Dict[str, Any]] = None) -> int:
        """Start tracing a stage; returns its handle."""
        self.stages.append(StageTrace(name=name, start_time=datetime.now(),
                                      metadata=metadata or {}))
        self.stats["total_stages"] += 1
        log.debug("Stage %s started", name)
        return len(self.stages) - 1

    def end_stage(self, handle: int, error: Optional[str] = None, **metadata: Any) -> None:
        """End tracing a stage."""
        if not 0 <= handle < len(self.stages):
            return
        stage = self.stages[handle]
        stage.end_time = datetime.now()
        stage.error = error
        stage.metadata.update(metadata)
        if error:
            self.stats["failed_stages"] += 1
        else:
            self.stats["successful_stages"] += 1
        log.debug("Stage %s finished in %.1f ms", stage.name, stage.duration_ms())

    def add_artifact(self, path: PathLike) -> None:
        """Record an artifact, relative to the output directory when possible."""
        path = Path(path)
        if self.storage_path is not None:
            try:
                path = path.resolve().relative_to(self.storage_path.resolve())
            except ValueError:
                pass
        self.artifacts.append(str(path))

    def get_stats(self) -> Dict[str, Any]:
        """Get tracing statistics."""
        return self.stats.copy()

    def manifest(self) -> Dict[str, Any]:
        from .. import __version__

        return {
            "scenario_sha256": self.scenario_hash,
            "seed": self.seed,
            "workers": self.workers,
            "versions": {
                "nearfield-distortion": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "artifacts": sorted(self.artifacts),
            "stages": [stage.to_dict() for stage in self.stages],
            "stats": self.stats,
        }

    def save_manifest(self) -> Optional[Path]:
        """Save the manifest to storage if configured."""
        if not self.storage_path:
            return None

        manifest_file = self.storage_path / MANIFEST_NAME
        manifest_file.parent.mkdir(parents=True, exist_ok=True)

        with open(manifest_file, 'w') as f:
            json.dump(self.manifest(), f, indent=2)
        return manifest_file

"""Trace publisher - writes run traces, AdaComm events and result tables as CSV."""
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from . import __version__

logger = logging.getLogger(__name__)


class PublishError(OSError):
    """Output file could not be written."""


@dataclass
class RunManifest:
    """JSON sidecar describing how a CSV was produced."""
    command: str
    seed: Optional[int] = None
    config: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: Optional[float] = None

    @property
    def duration(self) -> Optional[float]:
        return None if self.finished is None else self.finished - self.started

    def finish(self):
        self.finished = time.time()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration"] = self.duration
        return d


def manifest_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".manifest.json")


class TracePublisher:
    """Write tables under one output location; every write is logged."""

    def __init__(self, out_path=None):
        self.out_path = Path(out_path) if out_path else None
        self.written: List[Path] = []
        logger.debug("TracePublisher init: out_path=%s", self.out_path)

    def write_rows(self, path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(columns)
                n = 0
                for row in rows:
                    writer.writerow(["" if v is None else v for v in row])
                    n += 1
        except OSError as e:
            raise PublishError(f"cannot write {path}: {e}") from e
        self.written.append(path)
        logger.info("Wrote %d rows to %s", n, path)
        return path

    def write_trace(self, trace, path=None) -> Path:
        """Per-synchronization trace: wall_clock, iteration, round, tau, lr, loss, grad norm."""
        path = path or self.out_path
        if path is None:
            raise PublishError("no output path for trace")
        return self.write_rows(path, trace.columns(), trace.rows())

    def write_events(self, events, path) -> Path:
        from .adacomm import AdaCommEvent

        return self.write_rows(path, AdaCommEvent.CSV_COLUMNS, [e.as_row() for e in events])

    def write_manifest(self, manifest: RunManifest, path=None) -> Path:
        if path is None:
            if self.out_path is None:
                raise PublishError("no output path for manifest")
            path = manifest_path_for(self.out_path)
        path = Path(path)
        if manifest.finished is None:
            manifest.finish()
        manifest.outputs = [str(p) for p in self.written]
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                json.dump(manifest.to_dict(), f, indent=2, ensure_ascii=False, default=str)
        except OSError as e:
            raise PublishError(f"cannot write {path}: {e}") from e
        logger.debug("Manifest written: %s", path)
        return path


def read_rows(path) -> List[Dict[str, str]]:
    """Read a published CSV back as a list of dicts (values stay strings)."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))

"""Run directories and persisted outputs

Layout: <output_dir>/<experiment_id>/<timestamp>/{config.json, logs/, tables/, systems/}.
Every JSON and CSV artifact carries a header with the tool version, the full
config and the seed; payloads contain no timestamps so reruns are byte-identical.
"""

import csv
import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"
SUBDIRS = ("logs", "tables", "systems")


def artifact_header(config: Optional[Mapping[str, Any]], seed: Optional[int]) -> Dict[str, Any]:
    return {"tool": "quadricrl", "version": __version__, "seed": seed, "config": dict(config or {})}


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def write_json(path: Union[str, Path], payload: Any, header: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"header": header, "result": payload} if header is not None else payload
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    return path


def read_json(path: Union[str, Path]) -> Any:
    """Load a JSON artifact, unwrapping the {header, result} envelope if present"""
    with open(path, "r") as f:
        document = json.load(f)
    if isinstance(document, dict) and set(document) == {"header", "result"}:
        return document["result"]
    return document


def dumps_json(payload: Any, header: Optional[Dict[str, Any]] = None) -> str:
    document = {"header": header, "result": payload} if header is not None else payload
    return json.dumps(document, indent=2, sort_keys=True, default=_jsonable)


def write_csv(
    path: Union[str, Path],
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str],
    header: Optional[Dict[str, Any]] = None,
) -> Path:
    """CSV with an optional '# '-prefixed JSON header line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if header is not None:
            f.write("# " + json.dumps(header, sort_keys=True, default=_jsonable) + "\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, "r", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_svg_chart(
    path: Union[str, Path],
    x: Sequence[float],
    series: Mapping[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
    log_x: bool = False,
) -> Optional[Path]:
    """Line chart as SVG; skipped with a warning when matplotlib is missing"""
    try:
        import matplotlib

        matplotlib.use("Agg")
        from matplotlib import pyplot as plt
    except ImportError:
        logger.warning("matplotlib is not installed; skipping chart %s (pip install quadricrl[plot])", path)
        return None

    matplotlib.rcParams["svg.hashsalt"] = "quadricrl"
    fig = plt.figure(figsize=(7, 5))
    ax = plt.gca()
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", label=label)
    if log_x:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    plt.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


class RunDirectory:
    """Owns one experiment directory for the lifetime of a process

    Use as a context manager; the lockfile is removed on exit.
    """

    def __init__(self, root: Path, config: ExperimentConfig):
        self.root = root
        self.config = config
        self._locked = False

    @classmethod
    def create(cls, config: ExperimentConfig, timestamp: Optional[str] = None) -> "RunDirectory":
        stamp = timestamp or datetime.now().strftime("%Y%m%dT%H%M%S")
        root = Path(config.output_dir) / config.experiment_id / stamp
        for sub in SUBDIRS:
            (root / sub).mkdir(parents=True, exist_ok=True)
        run = cls(root, config)
        write_json(root / "config.json", config.model_dump(mode="json"))
        return run

    @property
    def header(self) -> Dict[str, Any]:
        return artifact_header(self.config.model_dump(mode="json"), self.config.seed)

    def path(self, kind: str, name: str) -> Path:
        if kind not in SUBDIRS:
            raise ValueError(f"unknown artifact kind '{kind}'")
        return self.root / kind / name

    def acquire(self) -> None:
        lock = self.root / LOCK_NAME
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            raise ConfigurationError(f"run directory {self.root} is locked by another process") from e
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        self._locked = True

    def release(self) -> None:
        if self._locked:
            (self.root / LOCK_NAME).unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "RunDirectory":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


__all__ = [
    "artifact_header",
    "write_json",
    "read_json",
    "dumps_json",
    "write_csv",
    "read_csv",
    "write_svg_chart",
    "RunDirectory",
]

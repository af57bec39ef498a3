"""
Artifact Store - run directory persistence with atomic writes and validation.
"""

import csv
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ArtifactError

REPORT_VERSION = 1
REPORT_FILE = "report.json"
TRUTH_FILE = "truth.json"
CONFIG_FILE = "config.json"

REQUIRED_REPORT_KEYS = ("version", "config", "per_run", "summary")
REQUIRED_RUN_KEYS = ("repetition", "estimate", "estimates_by_threshold", "levels", "counts", "schedules")


class ArtifactStore:
    """Reads and writes the files of one run directory."""

    def __init__(self, run_dir: str) -> None:
        self._run_dir = run_dir
        os.makedirs(self._run_dir, exist_ok=True)

    @property
    def run_dir(self) -> str:
        return self._run_dir

    def path(self, name: str) -> str:
        return os.path.join(self._run_dir, name)

    def exists(self, name: str) -> bool:
        return os.path.isfile(self.path(name))

    # ------------------------------------------------------------------
    # JSON
    # ------------------------------------------------------------------

    def write_json(self, name: str, payload: dict) -> str:
        """Persist JSON atomically (write to .tmp then replace)."""
        final_path = self.path(name)
        tmp_path = final_path + ".tmp"
        with open(tmp_path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=_to_builtin)
        os.replace(tmp_path, final_path)
        return final_path

    def read_json(self, name: str) -> dict:
        path = self.path(name)
        if not os.path.isfile(path):
            raise ArtifactError(f"missing artifact {path}")
        try:
            with open(path, "r") as f:
                return json.load(f)
        except (json.JSONDecodeError, OSError) as exc:
            raise ArtifactError(f"unreadable artifact {path}: {exc}") from exc

    def save_report(self, report: dict, config: dict, extra: Optional[dict] = None) -> str:
        payload = {"version": REPORT_VERSION, "config": config, **report}
        if extra:
            payload.update(extra)
        validate_report(payload)
        return self.write_json(REPORT_FILE, payload)

    def load_report(self) -> dict:
        """Load and validate ``report.json``."""
        payload = self.read_json(REPORT_FILE)
        validate_report(payload)
        return payload

    # ------------------------------------------------------------------
    # CSV
    # ------------------------------------------------------------------

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        final_path = self.path(name)
        tmp_path = final_path + ".tmp"
        with open(tmp_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format(v) for v in row])
        os.replace(tmp_path, final_path)
        return final_path

    def read_csv(self, name: str) -> List[Dict[str, str]]:
        path = self.path(name)
        if not os.path.isfile(path):
            raise ArtifactError(f"missing artifact {path}")
        with open(path, "r", newline="") as f:
            return list(csv.DictReader(f))

    def write_fields(self, name: str, fields: np.ndarray) -> str:
        """One row per realization, one column per cell (row-major for 2-D grids)."""
        fields = np.atleast_2d(np.asarray(fields, dtype=float))
        header = [f"c{i}" for i in range(fields.shape[1])]
        return self.write_csv(name, header, fields.tolist())

    def read_fields(self, name: str) -> np.ndarray:
        rows = self.read_csv(name)
        if not rows:
            raise ArtifactError(f"{name} has no realizations")
        return np.array([[float(v) for v in row.values()] for row in rows])


def validate_report(payload: dict) -> None:
    """Check the report schema; raises ArtifactError naming the first problem."""
    for key in REQUIRED_REPORT_KEYS:
        if key not in payload:
            raise ArtifactError(f"report is missing {key!r}")
    if payload["version"] != REPORT_VERSION:
        raise ArtifactError(f"unsupported report version {payload['version']}")
    if not isinstance(payload["per_run"], list) or not payload["per_run"]:
        raise ArtifactError("report has no runs")
    for run in payload["per_run"]:
        for key in REQUIRED_RUN_KEYS:
            if key not in run:
                raise ArtifactError(f"run {run.get('repetition', '?')} is missing {key!r}")
        for value in run["estimates_by_threshold"].values():
            if not 0.0 <= float(value) <= 1.0:
                raise ArtifactError(f"run {run['repetition']} has an estimate outside [0, 1]: {value}")


def _to_builtin(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)

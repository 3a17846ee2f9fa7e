"""Coupling and strong approximation experiments."""

import csv
import io
import json

from ._core import (
    CONFIG_SCHEMA_VERSION,
    CSV_HEADER,
    ConfigError,
    default_depth,
    full_depth,
    rosenblatt_triangular,
    seq_m_l,
    solve_coupling_constants,
    tusnady_check,
    uniform_leaf_counts,
)
from ._core import run_json as _run_json

__all__ = [
    "CONFIG_SCHEMA_VERSION",
    "CSV_HEADER",
    "ConfigError",
    "default_depth",
    "full_depth",
    "rosenblatt_triangular",
    "run_experiment",
    "seq_m_l",
    "solve_coupling_constants",
    "tusnady_check",
    "uniform_leaf_counts",
]


def run_experiment(config, threads=1):
    """Run an experiment from a config dict or JSON string.

    Returns a dict with the CSV text, the parsed rows and the sidecar.
    """
    doc = config if isinstance(config, str) else json.dumps(config)
    text, sidecar = _run_json(doc, threads)
    rows = list(csv.DictReader(io.StringIO(text)))
    return {"csv": text, "rows": rows, "sidecar": json.loads(sidecar)}

"""Bundled example triangles."""
from __future__ import annotations

import json
from importlib import resources

from .triangle import Kind, Triangle, parse_triangle

__all__ = ["DATASETS", "load_dataset", "default_sim_parameters"]

# name -> (file, kind as stored)
DATASETS = {
    "taylor_ashe": ("taylor_ashe.csv", Kind.INCREMENTAL),
    "abc": ("abc.csv", Kind.CUMULATIVE),
}


def _text(filename: str) -> str:
    return resources.files(__package__).joinpath("data", filename).read_text(encoding="utf-8")


def load_dataset(name: str) -> Triangle:
    """Load ``"taylor_ashe"`` (incremental, n=10) or ``"abc"`` (cumulative, n=11)."""
    key = name.lower().removesuffix(".csv").replace("-", "_")
    if key not in DATASETS:
        raise KeyError(f"unknown dataset {name!r}; available: {', '.join(sorted(DATASETS))}")
    filename, kind = DATASETS[key]
    return parse_triangle(_text(filename), format="wide", kind=kind)


def default_sim_parameters() -> dict:
    """True parameters for simulation runs: the quadratic-variance independence fit to ``taylor_ashe``."""
    return json.loads(_text("sim_theta.json"))

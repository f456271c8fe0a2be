"""Python access to the xbarnet simulator.

Configs and run records are plain dicts with the same layout as the JSON
files the command-line tool reads and writes.
"""

import json

from ._xbarnet import (
    CheckpointError,
    ConfigError,
    Network,
    load_checkpoint,
    make_mlp,
    select_cells,
)
from . import _xbarnet

__all__ = [
    "CheckpointError",
    "ConfigError",
    "Network",
    "export_plot_data",
    "inject_faults",
    "load_checkpoint",
    "make_mlp",
    "normalize_config",
    "run_experiment",
    "select_cells",
]

SF1 = 1
SF0 = 2


def normalize_config(config):
    """Validate a config dict and return it with every default filled in."""
    return json.loads(_xbarnet.normalize_config(json.dumps(config)))


def run_experiment(config):
    """Run a configured experiment and return its record as a dict."""
    return json.loads(_xbarnet.run_experiment(json.dumps(config)))


def export_plot_data(records, figure):
    """CSV text for one of fig2, fig4, fig7, fig9."""
    return _xbarnet.export_plot_data([json.dumps(r) for r in records], figure)


def inject_faults(rows, cols, device=None, seed=1):
    """Fault map as a uint8 array: 0 healthy, 1 SF1 (stuck at high resistance), 2 SF0 (stuck at low resistance)."""
    return _xbarnet.inject_faults(rows, cols, json.dumps(device or {}), seed)

"""CSV loading with fixed-schema validation.

The producers document four artifact schemas (basin maps, per-player learner
rows, run traces, cost components).  Loading validates the header against the
expected schema and fails fast naming the offending column; an input without
data rows raises EmptyInput.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Dict

import numpy as np


class PlotKitError(Exception):
    pass


class SchemaMismatch(PlotKitError):
    pass


class EmptyInput(PlotKitError):
    pass


@dataclass
class Table:
    columns: Dict[str, np.ndarray]
    n_players: int

    def __getitem__(self, key):
        return self.columns[key]


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{path}: no header row")
        rows = [r for r in reader if r]
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return header, rows


def _to_table(header, rows, n_players) -> Table:
    data = np.array(rows, dtype=float)
    return Table(columns={name: data[:, j] for j, name in enumerate(header)},
                 n_players=n_players)


def _check_exact(path, header, expected):
    for name in expected:
        if name not in header:
            raise SchemaMismatch(f"{path}: missing column {name!r}")
    for name in header:
        if name not in expected:
            raise SchemaMismatch(f"{path}: unexpected column {name!r}")
    if list(header) != list(expected):
        raise SchemaMismatch(f"{path}: column order must be {expected}")


def load_basin(path) -> Table:
    """start_x1..start_xn, basin_label, end_x1..end_xn, stable."""
    header, rows = _read_rows(path)
    starts = [h for h in header if re.fullmatch(r"start_x\d+", h)]
    n = len(starts)
    if n == 0:
        raise SchemaMismatch(f"{path}: missing column 'start_x1'")
    expected = [f"start_x{i+1}" for i in range(n)] + ["basin_label"] \
        + [f"end_x{i+1}" for i in range(n)] + ["stable"]
    _check_exact(path, header, expected)
    return _to_table(header, rows, n)


LEARNER_COLUMNS = ["k", "player", "loss", "V_k", "theta_err", "xi_norm_sq",
                   "pe_window_min_eig"]


def load_learner(path) -> Table:
    header, rows = _read_rows(path)
    _check_exact(path, header, LEARNER_COLUMNS)
    table = _to_table(header, rows, 0)
    table.n_players = int(table["player"].max())
    return table


def load_trace(path) -> Table:
    header, rows = _read_rows(path)
    xs = [h for h in header if re.fullmatch(r"x_\d+", h)]
    n = len(xs)
    if n == 0:
        raise SchemaMismatch(f"{path}: missing column 'x_1'")
    expected = (["k"] + [f"x_{i+1}" for i in range(n)] + ["xd_err", "v_err"]
                + [f"loss_{i+1}" for i in range(n)]
                + [f"theta_err_{i+1}" for i in range(n)]
                + [f"V_{i+1}" for i in range(n)]
                + [f"xi_sq_{i+1}" for i in range(n)]
                + ["pe_min_eig", "design_residual", "design_slack"])
    _check_exact(path, header, expected)
    return _to_table(header, rows, n)


COMPONENT_COLUMNS = ["k", "player", "nominal_est", "incentive_est", "xhat",
                     "x_actual"]


def load_components(path) -> Table:
    header, rows = _read_rows(path)
    _check_exact(path, header, COMPONENT_COLUMNS)
    table = _to_table(header, rows, 0)
    table.n_players = int(table["player"].max())
    return table

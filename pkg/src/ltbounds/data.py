"""Data contracts for combined short-term/long-term samples.

Two pooled samples drive everything downstream: an experimental group
(``g="E"``) with randomized treatment where only the short-term outcome is
recorded, and an observational group (``g="O"``) with self-selected
treatment where both outcomes are recorded.  This module validates raw
rows, packs them into a column-oriented dataset, and tabulates cell-level
frequency tables that every estimator and bound consumes.

Covariates are pre-discretized integer cells; continuous covariates are
the caller's problem.  All probabilities live in float64 and the table
layer enforces a 1e-12 normalization tolerance.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

PMF_TOL = 1e-12
MASS_FLOOR = 1e-15


class DataError(Exception):
    """Base class for ingestion and tabulation failures."""


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"row {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class MissingnessViolation(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"row {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptyInput(DataError):
    pass


class EmptyCell(DataError):
    def __init__(self, x: int, g: str, detail: str = ""):
        msg = f"cell (x={x}, g={g}) has no observations"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.x = x
        self.g = g
        self.detail = detail


class ZeroConditioningMass(DataError):
    def __init__(self, conditioning):
        super().__init__(f"conditioning event has zero mass: {conditioning}")
        self.conditioning = conditioning


@dataclass(frozen=True)
class Observation:
    """One unit: ``y2`` is None exactly when the unit is experimental.

    Attributes
    ----------
    y2 : int or None
        Long-term outcome in {0,1}; absent (None) for g="E".
    y1 : int
        Short-term outcome in {0,1}.
    w : int
        Treatment indicator in {0,1}; randomized for E, self-selected for O.
    x : int
        Covariate cell index.
    g : str
        Sample tag, "E" or "O".
    """

    y2: Optional[int]
    y1: int
    w: int
    x: int
    g: str

    def __post_init__(self):
        if self.g not in ("E", "O"):
            raise ValueError(f"g must be 'E' or 'O', got {self.g!r}")
        if self.y1 not in (0, 1) or self.w not in (0, 1):
            raise ValueError("y1 and w must be binary")
        if self.x < 0:
            raise ValueError("x must be a non-negative cell index")
        if self.g == "E" and self.y2 is not None:
            raise ValueError("experimental rows must not carry y2")
        if self.g == "O" and self.y2 not in (0, 1):
            raise ValueError("observational rows must carry binary y2")


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CombinedDataset:
    """Column-oriented pooled sample.

    ``y2`` uses -1 as the missing code for experimental rows.  Both groups
    must be non-empty; row order is preserved from ingestion.
    """

    y2: np.ndarray
    y1: np.ndarray
    w: np.ndarray
    x: np.ndarray
    is_o: np.ndarray
    n_cells: int

    def __post_init__(self):
        n = len(self.y1)
        for name in ("y2", "y1", "w", "x", "is_o"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ValueError("column length mismatch")
            object.__setattr__(self, name, _frozen(arr))
        if n == 0:
            raise EmptyInput("dataset has no rows")
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        if self.x.min() < 0 or self.x.max() >= self.n_cells:
            raise ValueError("x outside declared cell range")
        miss = self.y2 < 0
        if not np.array_equal(miss, ~self.is_o):
            raise MissingnessViolation(-1, "y2 missing pattern does not match g")
        if self.n_e == 0:
            raise EmptyInput("no experimental rows")
        if self.n_o == 0:
            raise EmptyInput("no observational rows")

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def n_e(self) -> int:
        return int((~self.is_o).sum())

    @property
    def n_o(self) -> int:
        return int(self.is_o.sum())

    @classmethod
    def from_observations(cls, obs: Sequence[Observation], n_cells: int) -> "CombinedDataset":
        if not obs:
            raise EmptyInput("no observations")
        y2 = np.array([-1 if o.y2 is None else o.y2 for o in obs], dtype=np.int8)
        y1 = np.array([o.y1 for o in obs], dtype=np.int8)
        w = np.array([o.w for o in obs], dtype=np.int8)
        x = np.array([o.x for o in obs], dtype=np.int32)
        is_o = np.array([o.g == "O" for o in obs], dtype=bool)
        return cls(y2=y2, y1=y1, w=w, x=x, is_o=is_o, n_cells=n_cells)

    def rows(self) -> Iterator[Observation]:
        for i in range(self.n):
            g = "O" if self.is_o[i] else "E"
            y2 = int(self.y2[i]) if self.is_o[i] else None
            yield Observation(y2=y2, y1=int(self.y1[i]), w=int(self.w[i]),
                              x=int(self.x[i]), g=g)

    def subset(self, mask: np.ndarray) -> "CombinedDataset":
        return CombinedDataset(y2=self.y2[mask], y1=self.y1[mask], w=self.w[mask],
                               x=self.x[mask], is_o=self.is_o[mask],
                               n_cells=self.n_cells)


_HEADER = ["y2", "y1", "w", "x", "g"]


def ingest(csv_stream, n_cells: int, extra_columns=()):
    """Parse a `y2,y1,w,x,g` CSV stream into a validated CombinedDataset.

    Parameters
    ----------
    csv_stream : file-like or iterable of str or str
        CSV text with the exact header ``y2,y1,w,x,g``.  Columns beyond
        the first five are ignored (they may carry auxiliary variables
        such as a test instrument).  The y2 field is blank exactly for
        experimental rows.
    n_cells : int
        Declared number of covariate cells; every x must be in range.
    extra_columns : sequence of str, optional
        Names of trailing columns to extract alongside the dataset; when
        non-empty the return value is ``(dataset, {name: int array})``.

    Raises
    ------
    MalformedRow, MissingnessViolation, EmptyInput
    """
    if isinstance(csv_stream, (str, bytes)):
        csv_stream = io.StringIO(csv_stream.decode() if isinstance(csv_stream, bytes) else csv_stream)
    reader = csv.reader(csv_stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInput("empty stream")
    header = [h.strip().lower() for h in header]
    if header[: len(_HEADER)] != _HEADER:
        raise MalformedRow(1, f"header must start with {','.join(_HEADER)}, got {','.join(header)}")
    extra_idx = {}
    for name in extra_columns:
        key = name.strip().lower()
        if key not in header:
            raise MalformedRow(1, f"column {name!r} not found in header")
        extra_idx[name] = header.index(key)
    extras = {name: [] for name in extra_columns}

    obs = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) < len(_HEADER):
            raise MalformedRow(line_no, f"expected at least {len(_HEADER)} fields, got {len(row)}")
        y2_raw, y1_raw, w_raw, x_raw, g_raw = (f.strip() for f in row[:5])
        g = g_raw.upper()
        if g not in ("E", "O"):
            raise MalformedRow(line_no, f"g must be E or O, got {g_raw!r}")
        if g == "E":
            if y2_raw != "":
                raise MissingnessViolation(line_no, "y2 present on an experimental row")
            y2 = None
        else:
            if y2_raw == "":
                raise MissingnessViolation(line_no, "y2 missing on an observational row")
            if y2_raw not in ("0", "1"):
                raise MalformedRow(line_no, f"y2 must be binary, got {y2_raw!r}")
            y2 = int(y2_raw)
        if y1_raw not in ("0", "1"):
            raise MalformedRow(line_no, f"y1 must be binary, got {y1_raw!r}")
        if w_raw not in ("0", "1"):
            raise MalformedRow(line_no, f"w must be binary, got {w_raw!r}")
        try:
            x = int(x_raw)
        except ValueError:
            raise MalformedRow(line_no, f"x must be an integer, got {x_raw!r}")
        if not 0 <= x < n_cells:
            raise MalformedRow(line_no, f"x={x} outside [0, {n_cells})")
        obs.append(Observation(y2=y2, y1=int(y1_raw), w=int(w_raw), x=x, g=g))
        for name, idx in extra_idx.items():
            if idx >= len(row) or not row[idx].strip():
                raise MalformedRow(line_no, f"column {name!r} missing a value")
            try:
                extras[name].append(int(row[idx]))
            except ValueError:
                raise MalformedRow(line_no, f"column {name!r} must be integer")

    if not obs:
        raise EmptyInput("no data rows")
    ds = CombinedDataset.from_observations(obs, n_cells)
    if extra_columns:
        return ds, {name: np.asarray(vals, dtype=int) for name, vals in extras.items()}
    return ds


@dataclass(frozen=True)
class CellTable:
    """Cell-level frequency tables.

    ``pmf_o[x, y2, y1, w]`` is the joint pmf over (y2, y1, w) within
    observational cell x; ``pmf_e[x, y1, w]`` the joint over (y1, w)
    within experimental cell x.  ``fx_o``/``fx_e`` are the cell weights
    f(x|g).  Each pmf and each weight vector sums to one within 1e-12.
    """

    pmf_o: np.ndarray
    pmf_e: np.ndarray
    fx_o: np.ndarray
    fx_e: np.ndarray
    counts_o: np.ndarray
    counts_e: np.ndarray

    def __post_init__(self):
        for name in ("pmf_o", "pmf_e", "fx_o", "fx_e", "counts_o", "counts_e"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)
                                                   if name.startswith(("pmf", "fx"))
                                                   else np.asarray(getattr(self, name))))
        k = self.n_cells
        if self.pmf_o.shape != (k, 2, 2, 2) or self.pmf_e.shape != (k, 2, 2):
            raise ValueError("pmf shape mismatch")
        if (self.pmf_o < -MASS_FLOOR).any() or (self.pmf_e < -MASS_FLOOR).any():
            raise ValueError("negative pmf mass")
        sums_o = self.pmf_o.reshape(k, -1).sum(axis=1)
        sums_e = self.pmf_e.reshape(k, -1).sum(axis=1)
        if np.abs(sums_o - 1.0).max() > PMF_TOL or np.abs(sums_e - 1.0).max() > PMF_TOL:
            raise ValueError("cell pmf does not sum to 1 within tolerance")
        if abs(self.fx_o.sum() - 1.0) > PMF_TOL or abs(self.fx_e.sum() - 1.0) > PMF_TOL:
            raise ValueError("cell weights do not sum to 1 within tolerance")

    @property
    def n_cells(self) -> int:
        return self.pmf_o.shape[0]

    # -- joint masses -------------------------------------------------

    def joint_o(self) -> np.ndarray:
        """f(y2, y1, w, x | O) as an array indexed [x, y2, y1, w]."""
        return self.pmf_o * self.fx_o[:, None, None, None]

    def joint_e(self) -> np.ndarray:
        """f(y1, w, x | E) as an array indexed [x, y1, w]."""
        return self.pmf_e * self.fx_e[:, None, None]

    def f_wx(self, g: str) -> np.ndarray:
        """f(w, x | g) indexed [x, w]."""
        if g == "O":
            return self.joint_o().sum(axis=(1, 2))
        return self.joint_e().sum(axis=1)

    def p_w_given_x(self, g: str) -> np.ndarray:
        """P(W=w | x, g) indexed [x, w]; nan where the cell is empty of mass."""
        if g == "O":
            marg = self.pmf_o.sum(axis=(1, 2))
        else:
            marg = self.pmf_e.sum(axis=1)
        return marg

    def to_json_dict(self) -> dict:
        cells = []
        for x in range(self.n_cells):
            cells.append({"cell": x, "g": "O",
                          "pmf": [float(v) for v in self.pmf_o[x].reshape(-1)]})
            cells.append({"cell": x, "g": "E",
                          "pmf": [float(v) for v in self.pmf_e[x].reshape(-1)]})
        return {"n_cells": self.n_cells,
                "fx_o": [float(v) for v in self.fx_o],
                "fx_e": [float(v) for v in self.fx_e],
                "counts_o": [int(v) for v in self.counts_o],
                "counts_e": [int(v) for v in self.counts_e],
                "cells": cells}

    @classmethod
    def from_masses(cls, pmf_o, pmf_e, fx_o, fx_e,
                    counts_o=None, counts_e=None) -> "CellTable":
        """Build a population-level table directly from exact masses."""
        pmf_o = np.asarray(pmf_o, dtype=float)
        pmf_e = np.asarray(pmf_e, dtype=float)
        k = pmf_o.shape[0]
        if counts_o is None:
            counts_o = np.zeros(k, dtype=np.int64)
        if counts_e is None:
            counts_e = np.zeros(k, dtype=np.int64)
        return cls(pmf_o=pmf_o, pmf_e=pmf_e,
                   fx_o=np.asarray(fx_o, dtype=float),
                   fx_e=np.asarray(fx_e, dtype=float),
                   counts_o=np.asarray(counts_o), counts_e=np.asarray(counts_e))


def tabulate(ds: CombinedDataset) -> CellTable:
    """Count a CombinedDataset into a CellTable of relative frequencies.

    Raises
    ------
    EmptyCell
        If some (x, g) cell has zero observations.
    """
    k = ds.n_cells
    counts_o = np.zeros((k, 2, 2, 2), dtype=np.int64)
    counts_e = np.zeros((k, 2, 2), dtype=np.int64)

    o = ds.is_o
    np.add.at(counts_o, (ds.x[o], ds.y2[o], ds.y1[o], ds.w[o]), 1)
    e = ~o
    np.add.at(counts_e, (ds.x[e], ds.y1[e], ds.w[e]), 1)

    cell_o = counts_o.reshape(k, -1).sum(axis=1)
    cell_e = counts_e.reshape(k, -1).sum(axis=1)
    for x in range(k):
        if cell_o[x] == 0:
            raise EmptyCell(x, "O")
        if cell_e[x] == 0:
            raise EmptyCell(x, "E")

    pmf_o = counts_o / cell_o[:, None, None, None]
    pmf_e = counts_e / cell_e[:, None, None]
    fx_o = cell_o / cell_o.sum()
    fx_e = cell_e / cell_e.sum()
    return CellTable(pmf_o=pmf_o, pmf_e=pmf_e, fx_o=fx_o, fx_e=fx_e,
                     counts_o=cell_o, counts_e=cell_e)


def cond_mean(ct: CellTable, target: str, conditioning: Mapping[str, object]) -> float:
    """Conditional mean of a binary column from tabulated masses.

    Parameters
    ----------
    ct : CellTable
    target : str
        One of "y2", "y1", "w".
    conditioning : mapping
        Must contain "g" ("E" or "O"); may fix any of y2, y1, w, x.

    Returns
    -------
    float
        Exact ratio of tabulated masses.

    Raises
    ------
    ZeroConditioningMass
        If the conditioning event has zero tabulated mass.
    """
    cond = dict(conditioning)
    g = cond.pop("g", None)
    if g not in ("E", "O"):
        raise ValueError("conditioning must specify g in {'E','O'}")
    if g == "E" and target == "y2":
        raise ValueError("y2 is not observed in the experimental sample")

    if g == "O":
        mass = ct.joint_o()          # [x, y2, y1, w]
        axes = {"x": 0, "y2": 1, "y1": 2, "w": 3}
    else:
        mass = ct.joint_e()          # [x, y1, w]
        axes = {"x": 0, "y1": 1, "w": 2}

    index = [slice(None)] * mass.ndim
    for key, val in cond.items():
        if key not in axes:
            raise ValueError(f"unknown conditioning variable {key!r} for g={g}")
        index[axes[key]] = int(val)
    sub = mass[tuple(index)]

    target_axis = axes.get(target)
    if target_axis is None:
        raise ValueError(f"target {target!r} not available for g={g}")
    # position of the target axis after the fixed axes are squeezed out
    kept = [a for k_, a in sorted(axes.items(), key=lambda kv: kv[1]) if k_ not in cond]
    pos = kept.index(target_axis)

    total = sub.sum()
    if total <= MASS_FLOOR:
        raise ZeroConditioningMass({**cond, "g": g})
    ones = np.take(sub, 1, axis=pos).sum()
    return float(ones / total)


@dataclass(frozen=True)
class RestrictionSet:
    """Which identification assumptions to impose on the sharp set.

    ``nsd`` selects the point-identified estimand and is rejected by the
    bound-computation pipeline; all other flags combine freely.
    """

    iv: bool = False
    ev: bool = False
    lu: bool = False
    mtr: bool = False
    sd: bool = False
    st: bool = False
    pco: bool = False
    nsd: bool = False

    _FLAGS = ("iv", "ev", "lu", "mtr", "sd", "st", "pco", "nsd")

    def names(self) -> tuple:
        return tuple(f for f in self._FLAGS if getattr(self, f))

    def is_subset_of(self, other: "RestrictionSet") -> bool:
        return all(getattr(other, f) for f in self.names())

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "RestrictionSet":
        kwargs = {}
        for name in names:
            name = name.strip().lower()
            if not name:
                continue
            if name not in cls._FLAGS:
                raise ValueError(f"unknown restriction {name!r}")
            kwargs[name] = True
        return cls(**kwargs)

    def __str__(self):
        return "{" + ",".join(self.names()) + "}"

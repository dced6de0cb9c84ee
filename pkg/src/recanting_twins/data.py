"""Observed-data container, CSV ingestion and cross-fitting folds.

A dataset holds ``O = (W, A, Z, M, Y)`` with a binary exposure ``A``,
a categorical intermediate confounder ``Z`` and a categorical mediator
``M``.  Category labels are remapped to dense 0-based indices on load so
that downstream probability tables can be indexed directly.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class DatasetError(ValueError):
    """Base class for ingestion failures."""


class SchemaError(DatasetError):
    """A column named by the schema is missing, or the schema is malformed."""


class ParseError(DatasetError):
    """A cell could not be interpreted; ``row`` is the 1-based data row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


ROLES = ("exposure", "intermediate", "mediator", "outcome")


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observed data.

    Attributes
    ----------
    w : ndarray, shape (n, p)
        Baseline covariates.
    a : ndarray of int, shape (n,)
        Binary exposure.
    z, m : ndarray of int, shape (n,)
        Dense category indices of the intermediate confounder and mediator.
    y : ndarray of float, shape (n,)
        Outcome.
    k_z, k_m : int
        Number of categories of ``z`` and ``m``.
    covariate_names : tuple of str
    z_labels, m_labels : tuple of int
        Original label of each dense index.
    names : dict
        Column name used for each role, for reporting and serialization.
    """

    w: np.ndarray
    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray
    k_z: int
    k_m: int
    covariate_names: tuple = ()
    z_labels: tuple = ()
    m_labels: tuple = ()
    names: dict = field(default_factory=lambda: dict(
        exposure="a", intermediate="z", mediator="m", outcome="y"))

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        n = w.shape[0]
        a = np.asarray(self.a).astype(np.int64)
        z = np.asarray(self.z).astype(np.int64)
        m = np.asarray(self.m).astype(np.int64)
        y = np.asarray(self.y, dtype=float)
        for name, v in (("a", a), ("z", z), ("m", m), ("y", y)):
            if v.shape != (n,):
                raise DatasetError(f"{name} has shape {v.shape}, expected ({n},)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise DatasetError("covariates and outcome must be finite")
        if np.any((a != 0) & (a != 1)):
            raise DatasetError("exposure must be binary")
        if self.k_z < 2 or self.k_m < 2:
            raise DatasetError("k_z and k_m must be at least 2")
        if n and (z.min() < 0 or z.max() >= self.k_z):
            raise DatasetError("z index out of range")
        if n and (m.min() < 0 or m.max() >= self.k_m):
            raise DatasetError("m index out of range")
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "m", _frozen(m))
        object.__setattr__(self, "y", _frozen(y))
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names",
                               tuple(f"w{j + 1}" for j in range(w.shape[1])))
        if not self.z_labels:
            object.__setattr__(self, "z_labels", tuple(range(self.k_z)))
        if not self.m_labels:
            object.__setattr__(self, "m_labels", tuple(range(self.k_m)))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    @property
    def binary_outcome(self) -> bool:
        return bool(np.all((self.y == 0) | (self.y == 1)))

    def subset(self, idx) -> "Dataset":
        """Rows ``idx`` as a new dataset with the same category space."""
        return Dataset(self.w[idx], self.a[idx], self.z[idx], self.m[idx],
                       self.y[idx], self.k_z, self.k_m, self.covariate_names,
                       self.z_labels, self.m_labels, dict(self.names))

    def equals(self, other: "Dataset") -> bool:
        return (self.k_z == other.k_z and self.k_m == other.k_m
                and self.covariate_names == other.covariate_names
                and self.z_labels == other.z_labels
                and self.m_labels == other.m_labels
                and np.array_equal(self.w, other.w)
                and np.array_equal(self.a, other.a)
                and np.array_equal(self.z, other.z)
                and np.array_equal(self.m, other.m)
                and np.array_equal(self.y, other.y))


def default_schema(covariates: Sequence[str]) -> dict:
    return dict(exposure="a", intermediate="z", mediator="m", outcome="y",
                covariates=list(covariates))


def _check_schema(schema: Mapping) -> None:
    for role in ROLES:
        if not isinstance(schema.get(role), str):
            raise SchemaError(f"schema must name one '{role}' column")
    covs = schema.get("covariates", [])
    if isinstance(covs, str) or not all(isinstance(c, str) for c in covs):
        raise SchemaError("schema 'covariates' must be a list of column names")
    used = [schema[r] for r in ROLES] + list(covs)
    if len(set(used)) != len(used):
        raise SchemaError("a column is assigned to more than one role")


def _parse_float(cell: str, col: str, row: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r} in column {col!r}", row) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {cell!r} in column {col!r}", row)
    return v


def _parse_category(cell: str, col: str, row: int) -> int:
    v = _parse_float(cell, col, row)
    if v < 0 or v != int(v):
        raise ParseError(
            f"category column {col!r} needs a non-negative integer, got {cell!r}", row)
    return int(v)


def load_dataset(source, schema: Mapping) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    Parameters
    ----------
    source : path or text stream
        UTF-8 CSV with a header row.
    schema : mapping
        ``exposure``, ``intermediate``, ``mediator`` and ``outcome`` name
        one column each; ``covariates`` is a (possibly empty) list.

    Raises
    ------
    SchemaError
        If a named column is absent from the header.
    ParseError
        On a non-numeric cell, an exposure outside {0, 1}, or a negative
        or fractional category; the message names the 1-based data row.
    """
    _check_schema(schema)
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_dataset(fh, schema)

    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file: header row required") from None
    covs = list(schema.get("covariates", []))
    pos = {}
    for col in [schema[r] for r in ROLES] + covs:
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
        pos[col] = header.index(col)

    ex, zc, mc, yc = (schema[r] for r in ROLES)
    w_rows, a, z, m, y = [], [], [], [], []
    for i, rec in enumerate(reader, start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(rec)}", i)
        cell = lambda col: rec[pos[col]].strip()  # noqa: E731
        av = _parse_float(cell(ex), ex, i)
        if av not in (0.0, 1.0):
            raise ParseError(f"exposure {ex!r} must be 0 or 1, got {cell(ex)!r}", i)
        a.append(int(av))
        z.append(_parse_category(cell(zc), zc, i))
        m.append(_parse_category(cell(mc), mc, i))
        y.append(_parse_float(cell(yc), yc, i))
        w_rows.append([_parse_float(cell(c), c, i) for c in covs])

    if not a:
        raise ParseError("no data rows")
    z_labels, z_idx = np.unique(np.array(z), return_inverse=True)
    m_labels, m_idx = np.unique(np.array(m), return_inverse=True)
    if len(z_labels) < 2 or len(m_labels) < 2:
        raise ParseError("intermediate and mediator need at least two observed levels")
    w = np.array(w_rows, dtype=float).reshape(len(a), len(covs))
    return Dataset(w, np.array(a), z_idx, m_idx, np.array(y),
                   k_z=len(z_labels), k_m=len(m_labels),
                   covariate_names=tuple(covs),
                   z_labels=tuple(int(v) for v in z_labels),
                   m_labels=tuple(int(v) for v in m_labels),
                   names={r: schema[r] for r in ROLES})


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_csv(data: Dataset, dest) -> None:
    """Write ``data`` with its original labels; floats keep full precision."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_csv(data, fh)
        return
    names = data.names
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(list(data.covariate_names) + [names["exposure"], names["intermediate"],
                                                   names["mediator"], names["outcome"]])
    zl, ml = data.z_labels, data.m_labels
    for i in range(data.n):
        writer.writerow([repr(float(v)) for v in data.w[i]]
                        + [str(data.a[i]), str(zl[data.z[i]]), str(ml[data.m[i]]),
                           _fmt(data.y[i])])


def to_csv_string(data: Dataset) -> str:
    buf = io.StringIO()
    write_csv(data, buf)
    return buf.getvalue()


def dataset_schema(data: Dataset) -> dict:
    return dict(data.names, covariates=list(data.covariate_names))


@dataclass
class DiagnosticsReport:
    """Positivity diagnostics; ``warnings`` is empty when nothing is flagged."""

    n: int
    level_counts: dict
    empty_az: list
    empty_am: list
    empty_azm: list
    propensity_range: tuple
    warnings: list

    @property
    def ok(self) -> bool:
        return not self.warnings


def validate(data: Dataset, propensity_bounds: tuple = (0.01, 0.99)) -> DiagnosticsReport:
    """Report empty exposure-by-category cells and the fitted propensity range.

    Never raises and never modifies ``data``.
    """
    from .glm import fit_binary_glm, predict_binary

    a, z, m = data.a, data.z, data.m
    counts_az = np.zeros((2, data.k_z), dtype=int)
    np.add.at(counts_az, (a, z), 1)
    counts_am = np.zeros((2, data.k_m), dtype=int)
    np.add.at(counts_am, (a, m), 1)
    counts_azm = np.zeros((2, data.k_z, data.k_m), dtype=int)
    np.add.at(counts_azm, (a, z, m), 1)

    empty_az = [(int(i), int(j)) for i, j in zip(*np.nonzero(counts_az == 0))]
    empty_am = [(int(i), int(j)) for i, j in zip(*np.nonzero(counts_am == 0))]
    empty_azm = [tuple(int(v) for v in t) for t in zip(*np.nonzero(counts_azm == 0))]

    warnings = []
    for av, zi in empty_az:
        warnings.append(f"no rows with (a={av}, z={data.z_labels[zi]})")
    for av, mi in empty_am:
        warnings.append(f"no rows with (a={av}, m={data.m_labels[mi]})")
    for av, zi, mi in empty_azm:
        warnings.append(
            f"no rows with (a={av}, z={data.z_labels[zi]}, m={data.m_labels[mi]})")

    prange = (float("nan"), float("nan"))
    if 0 < a.sum() < data.n:
        try:
            fit = fit_binary_glm(data.w, a.astype(float), ridge=1e-8)
            ps = predict_binary(fit.coef, data.w)
            prange = (float(ps.min()), float(ps.max()))
        except Exception as exc:  # diagnostics only
            warnings.append(f"propensity model failed: {exc}")
    else:
        warnings.append("exposure takes a single value")
    lo, hi = propensity_bounds
    if np.isfinite(prange[0]) and (prange[0] < lo or prange[1] > hi):
        warnings.append(
            f"fitted propensity range [{prange[0]:.4f}, {prange[1]:.4f}] "
            f"extends outside [{lo}, {hi}]")

    level_counts = dict(
        a=np.bincount(a, minlength=2).tolist(),
        z=np.bincount(z, minlength=data.k_z).tolist(),
        m=np.bincount(m, minlength=data.k_m).tolist(),
    )
    return DiagnosticsReport(data.n, level_counts, empty_az, empty_am, empty_azm,
                             prange, warnings)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    q: int
    seed: int

    def validation(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def training(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.q)


def assign_folds(n: int, q: int, seed: int) -> FoldAssignment:
    """Random balanced partition of ``range(n)`` into ``q`` folds.

    Fold sizes differ by at most one; the result depends only on
    ``(n, q, seed)``.
    """
    if not 2 <= q <= n:
        raise ValueError(f"need 2 <= q <= n, got q={q}, n={n}")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % q
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, q, seed)

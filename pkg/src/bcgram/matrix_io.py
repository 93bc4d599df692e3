"""Partially observed matrices and their CSV representation.

Missing cells are stored as ``0.0`` in :attr:`ObservedMatrix.values`; the
mask is the only record of which cells were observed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError

DEFAULT_MISSING_TOKENS = ("", "NA")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """N x D data with a binary revelation mask (1 = observed).

    Construct through :meth:`from_complete` or :meth:`from_nan` when the raw
    data still carries values at masked cells; the plain constructor insists
    that masked cells are already zero.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DomainError(
                f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes"
            )
        if not np.isin(mask, (0, 1)).all():
            raise DomainError("mask entries must be 0 or 1")
        mask = mask.astype(np.int8)
        n, d = values.shape
        if n < 2 or d < 1:
            raise DomainError(f"need at least 2 samples and 1 feature, got {n}x{d}")
        if not np.isfinite(values).all():
            raise DomainError("values must be finite")
        if np.any(values[mask == 0] != 0):
            raise DomainError("masked cells must hold 0")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))

    @classmethod
    def from_complete(cls, complete, mask) -> "ObservedMatrix":
        """Hide the cells of ``complete`` where ``mask`` is 0."""
        complete = np.asarray(complete, dtype=float)
        mask = np.asarray(mask).astype(np.int8)
        return cls(np.where(mask == 1, complete, 0.0), mask)

    @classmethod
    def from_nan(cls, data) -> "ObservedMatrix":
        """Treat NaN cells of ``data`` as missing."""
        data = np.asarray(data, dtype=float)
        mask = (~np.isnan(data)).astype(np.int8)
        return cls(np.where(mask == 1, data, 0.0), mask)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d_in(self) -> int:
        return self.values.shape[1]

    @property
    def missing_fraction(self) -> float:
        return 1.0 - float(self.mask.mean())

    def columns(self, idx) -> "ObservedMatrix":
        """Restrict to a subset of features."""
        return ObservedMatrix(self.values[:, idx], self.mask[:, idx])


def _is_missing(cell: str, tokens) -> bool:
    return cell.strip() in tokens


def _parse(path, tokens, header):
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    if header and rows:
        rows = rows[1:]
    rows = [r for r in rows if r]  # tolerate a trailing blank line
    if not rows:
        raise ParseError(f"{path}: no data rows")

    width = len(rows[0])
    values = np.zeros((len(rows), width))
    mask = np.ones((len(rows), width), dtype=np.int8)
    # coordinates in messages are 1-based data rows and columns
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"{path}: row {i + 1} has {len(row)} cells, expected {width}"
            )
        for s, cell in enumerate(row):
            if _is_missing(cell, tokens):
                mask[i, s] = 0
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric cell {cell!r} at row {i + 1}, column {s + 1}"
                ) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite cell {cell!r} at row {i + 1}, column {s + 1}")
            values[i, s] = v
    return path, values, mask


def read_matrix(path, missing_token: str | None = None, header: bool = False) -> ObservedMatrix:
    """Parse a headerless (by default) numeric CSV into an :class:`ObservedMatrix`.

    Cells equal to ``missing_token`` are missing. When ``missing_token`` is
    None both the empty string and ``"NA"`` count as missing.
    """
    tokens = DEFAULT_MISSING_TOKENS if missing_token is None else (missing_token,)
    path, values, mask = _parse(path, tokens, header)
    try:
        return ObservedMatrix(values, mask)
    except DomainError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def format_float(x: float) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def write_array(a, path, fmt=format_float) -> None:
    """Write a dense 2-D (or 1-D, one value per line) array as CSV."""
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    lines = [",".join(fmt(v) for v in row) for row in a]
    _write_text(path, "\n".join(lines) + "\n")


def read_array(path, header: bool = False) -> np.ndarray:
    """Read a complete numeric CSV (no missing cells allowed)."""
    return _parse(path, (), header)[1]


def write_matrix(m: ObservedMatrix, path, missing_token: str = "NA") -> None:
    """Emit ``m`` as CSV, writing ``missing_token`` at masked cells."""
    lines = []
    for vrow, mrow in zip(m.values, m.mask):
        lines.append(
            ",".join(format_float(v) if o else missing_token for v, o in zip(vrow, mrow))
        )
    _write_text(path, "\n".join(lines) + "\n")


def write_mask(m: ObservedMatrix | np.ndarray, path) -> None:
    mask = m.mask if isinstance(m, ObservedMatrix) else np.asarray(m)
    write_array(mask, path, fmt=lambda v: str(int(v)))


def read_mask(path) -> np.ndarray:
    mask = read_array(path)
    if not np.isin(mask, (0, 1)).all():
        raise ParseError(f"{path}: mask cells must be 0 or 1")
    return mask.astype(np.int8)


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc

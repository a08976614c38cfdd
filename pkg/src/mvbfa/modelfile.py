"""Human-readable text persistence for fitted mixture parameters.

Layout (all values space-separated, floats at full round-trip precision):

    mvbfa-model 1
    dims G n p q r
    component 1
    weight <w>
    mean            n lines of p values
    left_loading    n lines of q values (omitted when q = 0)
    right_loading   p lines of r values (omitted when r = 0)
    row_noise       one line of n values
    col_noise       one line of p values
    component 2
    ...
"""

from __future__ import annotations

import os

import numpy as np

from .dataio import _atomic_write_text
from .errors import FormatError
from .model import ComponentParams, MixtureParams

__all__ = ["write_model", "read_model"]

_MAGIC = "mvbfa-model"
_VERSION = 1


def write_model(params: MixtureParams, path: str | os.PathLike) -> None:
    """Serialize a fitted mixture; the write is atomic (temp file + rename)."""
    n, p = params.shape
    q = params.components[0].dims[2]
    r = params.components[0].dims[3]
    lines = [f"{_MAGIC} {_VERSION}", f"dims {params.G} {n} {p} {q} {r}"]
    for g, comp in enumerate(params.components, start=1):
        lines.append(f"component {g}")
        lines.append(f"weight {float(comp.weight)!r}")
        lines.append("mean")
        lines.extend(_matrix_lines(comp.mean))
        if q:
            lines.append("left_loading")
            lines.extend(_matrix_lines(comp.left_loading))
        if r:
            lines.append("right_loading")
            lines.extend(_matrix_lines(comp.right_loading))
        lines.append("row_noise " + _vector_line(comp.row_noise))
        lines.append("col_noise " + _vector_line(comp.col_noise))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_model(path: str | os.PathLike) -> MixtureParams:
    """Read a model file written by :func:`write_model`."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    cursor = _Cursor(path, lines)
    head = cursor.next().split()
    if len(head) != 2 or head[0] != _MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic line)")
    if head[1] != str(_VERSION):
        raise FormatError(f"{path}: unsupported model format version {head[1]}")
    dims = cursor.next().split()
    if len(dims) != 6 or dims[0] != "dims":
        raise FormatError(f"{path}: expected 'dims G n p q r'")
    try:
        G, n, p, q, r = (int(v) for v in dims[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimension") from exc
    comps = []
    for g in range(1, G + 1):
        cursor.expect(f"component {g}")
        weight = cursor.floats_after("weight", 1)[0]
        cursor.expect("mean")
        mean = cursor.matrix(n, p)
        if q:
            cursor.expect("left_loading")
            left = cursor.matrix(n, q)
        else:
            left = np.zeros((n, 0))
        if r:
            cursor.expect("right_loading")
            right = cursor.matrix(p, r)
        else:
            right = np.zeros((p, 0))
        row_noise = np.array(cursor.floats_after("row_noise", n))
        col_noise = np.array(cursor.floats_after("col_noise", p))
        comps.append(ComponentParams(
            weight=weight, mean=mean, left_loading=left, right_loading=right,
            row_noise=row_noise, col_noise=col_noise,
        ))
    if cursor.remaining():
        raise FormatError(f"{path}: trailing content after component {G}")
    try:
        return MixtureParams(tuple(comps))
    except Exception as exc:
        raise FormatError(f"{path}: inconsistent parameters: {exc}") from exc


def _matrix_lines(m: np.ndarray) -> list[str]:
    return [_vector_line(row) for row in m]


def _vector_line(v: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in v)


class _Cursor:
    def __init__(self, path, lines):
        self.path = path
        self.lines = lines
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise FormatError(f"{self.path}: unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, want: str) -> None:
        got = self.next()
        if got != want:
            raise FormatError(
                f"{self.path}:{self.pos}: expected {want!r}, found {got!r}"
            )

    def floats_after(self, key: str, count: int) -> list[float]:
        parts = self.next().split()
        if not parts or parts[0] != key:
            raise FormatError(f"{self.path}:{self.pos}: expected {key!r} line")
        if len(parts) != count + 1:
            raise FormatError(
                f"{self.path}:{self.pos}: {key} needs {count} values, got {len(parts) - 1}"
            )
        try:
            return [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{self.path}:{self.pos}: unparseable number") from exc

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty((rows, cols))
        for i in range(rows):
            parts = self.next().split()
            if len(parts) != cols:
                raise FormatError(
                    f"{self.path}:{self.pos}: expected {cols} values, got {len(parts)}"
                )
            try:
                out[i] = [float(v) for v in parts]
            except ValueError as exc:
                raise FormatError(f"{self.path}:{self.pos}: unparseable number") from exc
        return out

    def remaining(self) -> bool:
        return self.pos < len(self.lines)

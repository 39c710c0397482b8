"""Core sequence types and matrix file I/O shared by every other module.

A sequence is stored dense, one column per frame.  Two on-disk matrix
formats are supported:

* CSV: first line ``rows,cols``, then ``rows`` lines of ``cols``
  comma-separated decimal reals (written with 17 significant digits so
  float64 round-trips are exact).
* binary: 4-byte magic ``MVTW``, rows and cols as 32-bit unsigned
  little-endian, then rows*cols float64 little-endian values, row-major.

Annotation files hold one integer per line, one per frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BINARY_MAGIC = b"MVTW"


class LoadError(ValueError):
    """Raised when a matrix/annotation file is malformed."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SequenceView:
    """One view of a sequence: a D x N matrix (features x frames).

    ``annotations`` optionally attaches an integer temporal-phase label to
    every frame.  Instances are immutable; the backing arrays are marked
    read-only on construction.
    """

    data: np.ndarray
    annotations: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"sequence data must be a D x N matrix with D,N >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("sequence data contains non-finite entries")
        object.__setattr__(self, "data", _readonly(data))
        if self.annotations is not None:
            ann = np.asarray(self.annotations, dtype=np.int64)
            if ann.ndim != 1 or ann.shape[0] != data.shape[1]:
                raise ValueError(
                    f"annotations must have length N={data.shape[1]}, got shape {ann.shape}"
                )
            object.__setattr__(self, "annotations", _readonly(ann))

    @property
    def n_features(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PairedViews:
    """A pair of views to align.  Feature counts and lengths may differ."""

    x: SequenceView
    y: SequenceView


@dataclass(frozen=True)
class AlignmentPath:
    """A pair of equal-length monotone index sequences into two views.

    Construction checks only shape agreement; :func:`cdctw.warp.validate_path`
    performs the full boundary/step check against concrete view lengths.
    """

    px: np.ndarray
    py: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.px, dtype=np.int64)
        py = np.asarray(self.py, dtype=np.int64)
        if px.ndim != 1 or py.ndim != 1 or px.shape != py.shape or px.size == 0:
            raise ValueError("px and py must be non-empty 1-D index vectors of equal length")
        object.__setattr__(self, "px", _readonly(px))
        object.__setattr__(self, "py", _readonly(py))

    def __len__(self) -> int:
        return int(self.px.shape[0])


def apply_path(view: SequenceView, idx: np.ndarray) -> SequenceView:
    """Permute/repeat the frames of ``view`` by an index vector.

    Column k of the result is column ``idx[k]`` of the input; annotations are
    permuted identically.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("index vector must be non-empty and 1-D")
    n = view.n_frames
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError(f"path index out of range [0, {n})")
    ann = view.annotations[idx] if view.annotations is not None else None
    return SequenceView(view.data[:, idx], annotations=ann, name=view.name)


# ---------------------------------------------------------------------------
# matrix I/O
# ---------------------------------------------------------------------------

def load_matrix(path: str | Path, format: str = "csv", name: str | None = None) -> SequenceView:
    """Load a SequenceView from a CSV or binary matrix file."""
    path = Path(path)
    if format == "csv":
        data = _load_csv(path)
    elif format == "binary":
        data = _load_binary(path)
    else:
        raise ValueError(f"unknown matrix format {format!r} (expected 'csv' or 'binary')")
    return SequenceView(data, name=name if name is not None else path.stem)


def save_matrix(view_or_array: SequenceView | np.ndarray, path: str | Path, format: str = "csv") -> None:
    data = view_or_array.data if isinstance(view_or_array, SequenceView) else np.asarray(view_or_array, dtype=np.float64)
    path = Path(path)
    if format == "csv":
        rows, cols = data.shape
        lines = [f"{rows},{cols}"]
        for r in range(rows):
            lines.append(",".join(f"{v:.17g}" for v in data[r]))
        path.write_text("\n".join(lines) + "\n")
    elif format == "binary":
        rows, cols = data.shape
        payload = np.ascontiguousarray(data, dtype="<f8").tobytes()
        path.write_bytes(BINARY_MAGIC + struct.pack("<II", rows, cols) + payload)
    else:
        raise ValueError(f"unknown matrix format {format!r} (expected 'csv' or 'binary')")


def _load_csv(path: Path) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as e:
        raise LoadError(f"{path}: {e}") from e
    lines = text.splitlines()
    if not lines:
        raise LoadError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) != 2:
        raise LoadError(f"{path}: header must be 'rows,cols', got {lines[0]!r}")
    try:
        rows, cols = int(header[0]), int(header[1])
    except ValueError as e:
        raise LoadError(f"{path}: non-integer header {lines[0]!r}") from e
    if rows < 1 or cols < 1:
        raise LoadError(f"{path}: header declares empty matrix {rows}x{cols}")
    if len(lines) < 1 + rows:
        raise LoadError(f"{path}: header declares {rows} rows but file has {len(lines) - 1}")
    data = np.empty((rows, cols), dtype=np.float64)
    for r in range(rows):
        cells = lines[1 + r].split(",")
        if len(cells) != cols:
            raise LoadError(f"{path}: row {r} has {len(cells)} columns, expected {cols}")
        for c, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError as e:
                raise LoadError(f"{path}: row {r} column {c}: unparseable value {cell!r}") from e
            if not np.isfinite(v):
                raise LoadError(f"{path}: row {r} column {c}: non-finite value {cell!r}")
            data[r, c] = v
    return data


def _load_binary(path: Path) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise LoadError(f"{path}: {e}") from e
    if len(blob) < 12:
        raise LoadError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != BINARY_MAGIC:
        raise LoadError(f"{path}: bad magic {blob[:4]!r}, expected {BINARY_MAGIC!r}")
    rows, cols = struct.unpack("<II", blob[4:12])
    if rows < 1 or cols < 1:
        raise LoadError(f"{path}: header declares empty matrix {rows}x{cols}")
    expected = 12 + 8 * rows * cols
    if len(blob) != expected:
        raise LoadError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=12).reshape(rows, cols).astype(np.float64)
    if not np.isfinite(data).all():
        r, c = map(int, np.argwhere(~np.isfinite(data))[0])
        raise LoadError(f"{path}: non-finite value at row {r} column {c}")
    return data


# ---------------------------------------------------------------------------
# annotation I/O
# ---------------------------------------------------------------------------

def load_annotations(path: str | Path) -> np.ndarray:
    path = Path(path)
    values = []
    for i, line in enumerate(path.read_text().splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError as e:
            raise LoadError(f"{path}: line {i}: not an integer: {line!r}") from e
    if not values:
        raise LoadError(f"{path}: empty annotation file")
    return np.asarray(values, dtype=np.int64)


def save_annotations(annotations: np.ndarray, path: str | Path) -> None:
    Path(path).write_text("\n".join(str(int(v)) for v in annotations) + "\n")

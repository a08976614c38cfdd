"""Datasets of matrix observations: containers, synthesis, and file formats.

A dataset is N matrices of common shape n x p plus optional integer labels,
where label 0 marks an unlabeled observation and labels 1..G tie observations
to mixture components. Three on-disk formats live here:

* a plain text format for matrix datasets (header, one matrix per block,
  optional trailing label line),
* the big-endian IDX image/label format used by the MNIST distribution,
* binary PGM (P5) export for quick visual inspection of location matrices.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

__all__ = [
    "DataSet3D",
    "SyntheticSpec",
    "generate",
    "mask_labels",
    "sim_spec",
    "read_t3",
    "write_t3",
    "read_idx_images",
    "write_heatmap_pgm",
]


@dataclass(frozen=True)
class DataSet3D:
    """N observed matrices stacked as an (N, n, p) array, with optional labels.

    ``labels`` is an (N,) integer array where 0 means unlabeled; ``None`` is
    equivalent to all zeros.
    """

    obs: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.obs, dtype=np.float64)
        if obs.ndim != 3:
            raise InputError(f"observations must be 3-dimensional, got shape {obs.shape}")
        if min(obs.shape) < 1:
            raise InputError(f"empty dataset: shape {obs.shape}")
        if not np.isfinite(obs).all():
            bad = int(np.argwhere(~np.isfinite(obs).all(axis=(1, 2)))[0, 0])
            raise InputError(f"non-finite entries in observation {bad}")
        object.__setattr__(self, "obs", obs)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (obs.shape[0],):
                raise InputError(
                    f"labels must have shape ({obs.shape[0]},), got {lab.shape}"
                )
            if not np.issubdtype(lab.dtype, np.integer):
                if not np.all(lab == np.floor(lab)):
                    raise InputError("labels must be integers")
            lab = lab.astype(np.int64)
            if (lab < 0).any():
                raise InputError("labels must be >= 0 (0 marks unlabeled)")
            object.__setattr__(self, "labels", lab)

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.obs.shape[1], self.obs.shape[2]

    def n_labeled(self) -> int:
        if self.labels is None:
            return 0
        return int((self.labels > 0).sum())


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth parameters and sampling plan for a synthetic dataset.

    Arrays are stacked over components: weights (G,), means (G, n, p),
    left loadings (G, n, q), right loadings (G, p, r), row noise variances
    (G, n), column noise variances (G, p). ``supervision`` optionally records
    the fraction of observations whose labels should be kept when the dataset
    is masked for semi-supervised runs; ``generate`` itself always returns the
    full ground truth.
    """

    weights: np.ndarray
    means: np.ndarray
    left_loadings: np.ndarray
    right_loadings: np.ndarray
    row_noise: np.ndarray
    col_noise: np.ndarray
    size: int
    seed: int
    supervision: float | None = None

    def __post_init__(self):
        for name in ("weights", "means", "left_loadings", "right_loadings",
                     "row_noise", "col_noise"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        G = self.weights.shape[0]
        if self.means.shape[0] != G:
            raise InputError("means and weights disagree on component count")
        if self.size < 1:
            raise InputError("size must be >= 1")
        if abs(self.weights.sum() - 1.0) > 1e-9 or (self.weights <= 0).any():
            raise InputError("weights must be positive and sum to 1")
        if self.supervision is not None and not 0.0 <= self.supervision <= 1.0:
            raise InputError("supervision fraction must lie in [0, 1]")

    @property
    def G(self) -> int:
        return self.weights.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        n, q = self.left_loadings.shape[1:]
        p, r = self.right_loadings.shape[1:]
        return n, p, q, r


def generate(spec: SyntheticSpec) -> DataSet3D:
    """Draw ``spec.size`` observations from the bilinear factor model.

    Each observation is M_g + A_g U B_g' + A_g E_b + E_a B_g' + E with the
    latent blocks standard normal scaled by the component's noise variances.
    Returns the dataset with ground-truth labels 1..G. Deterministic in
    ``spec.seed``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([_mask_seed(spec.seed), 0x6765]))
    N = spec.size
    n, p, q, r = spec.dims
    comp = rng.choice(spec.G, size=N, p=spec.weights)
    obs = np.empty((N, n, p))
    for g in range(spec.G):
        idx = np.flatnonzero(comp == g)
        m = idx.size
        A = spec.left_loadings[g]
        B = spec.right_loadings[g]
        s_row = np.sqrt(spec.row_noise[g])
        s_col = np.sqrt(spec.col_noise[g])
        core = rng.standard_normal((m, q, r))
        e_left = rng.standard_normal((m, q, p)) * s_col[None, None, :]
        e_right = rng.standard_normal((m, n, r)) * s_row[None, :, None]
        e_full = rng.standard_normal((m, n, p)) * (s_row[:, None] * s_col[None, :])
        x = spec.means[g] + A @ core @ B.T + A @ e_left + e_right @ B.T + e_full
        obs[idx] = x
    return DataSet3D(obs, comp + 1)


def mask_labels(data: DataSet3D, fraction: float, seed: int) -> DataSet3D:
    """Keep a deterministic random ``fraction`` of the labels, zero the rest."""
    if data.labels is None:
        raise InputError("cannot mask a dataset that has no labels")
    if not 0.0 <= fraction <= 1.0:
        raise InputError("fraction must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([_mask_seed(seed), 0x6d61]))
    N = data.size
    keep = rng.permutation(N)[: int(round(fraction * N))]
    labels = np.zeros(N, dtype=np.int64)
    labels[keep] = data.labels[keep]
    return DataSet3D(data.obs, labels)


def _mask_seed(seed: int) -> int:
    # SeedSequence entropy words must be non-negative
    return int(seed) & 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# bundled simulation presets

_PRESETS = ("sim1", "sim2")


def sim_spec(name: str, size: int, seed: int,
             supervision: float | None = None) -> SyntheticSpec:
    """Bundled synthetic-study presets.

    ``sim1``: two components of 10 x 7 matrices with 2 left and 3 right
    factors, equal weights. ``sim2``: three components of 28 x 17 matrices
    with the same factor counts and weights (0.4, 0.2, 0.4). Locations sit in
    disjoint blocks offset by 5, loadings have standard normal entries drawn
    once from a fixed preset stream, and all noise variances are 1, so the
    components are well separated.
    """
    if name == "sim1":
        G, n, p, q, r = 2, 10, 7, 2, 3
        weights = np.array([0.5, 0.5])
        means = np.zeros((G, n, p))
        means[0, :5, :4] = 5.0
        means[1, 5:, 3:] = 5.0
    elif name == "sim2":
        G, n, p, q, r = 3, 28, 17, 2, 3
        weights = np.array([0.4, 0.2, 0.4])
        means = np.zeros((G, n, p))
        means[0, 0:9, 0:6] = 5.0
        means[1, 9:18, 6:12] = 5.0
        means[2, 18:28, 12:17] = 5.0
    else:
        raise InputError(f"unknown preset {name!r}; choose one of {_PRESETS}")
    # parameters are part of the preset, drawn once from a fixed stream
    prng = np.random.default_rng(np.random.SeedSequence([0x70726573, 1 if name == "sim1" else 2]))
    left = prng.standard_normal((G, n, q))
    right = prng.standard_normal((G, p, r))
    return SyntheticSpec(
        weights=weights,
        means=means,
        left_loadings=left,
        right_loadings=right,
        row_noise=np.ones((G, n)),
        col_noise=np.ones((G, p)),
        size=size,
        seed=seed,
        supervision=supervision,
    )


# ---------------------------------------------------------------------------
# plain text dataset format
#
#   line 1:        N n p
#   then N blocks: n lines of p comma-separated values
#   optionally:    labels: l_1,...,l_N

def write_t3(data: DataSet3D, path: str | os.PathLike) -> None:
    """Write a dataset in the text format, at full round-trip precision."""
    N = data.size
    n, p = data.shape
    lines = [f"{N} {n} {p}"]
    for i in range(N):
        for j in range(n):
            lines.append(",".join(repr(float(v)) for v in data.obs[i, j]))
    if data.labels is not None:
        lines.append("labels: " + ",".join(str(int(v)) for v in data.labels))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_t3(path: str | os.PathLike) -> DataSet3D:
    """Read a dataset written by :func:`write_t3`."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"{path}:1: header must be 'N n p', got {lines[0]!r}")
    try:
        N, n, p = (int(v) for v in head)
    except ValueError as exc:
        raise FormatError(f"{path}:1: non-integer header field") from exc
    if N < 1 or n < 1 or p < 1:
        raise FormatError(f"{path}:1: header dimensions must be positive")
    need = N * n
    body = lines[1:]
    labels = None
    if len(body) == need + 1 and body[-1].startswith("labels:"):
        lab_txt = body[-1][len("labels:"):].strip()
        parts = lab_txt.split(",") if lab_txt else []
        if len(parts) != N:
            raise FormatError(f"{path}: label line has {len(parts)} entries, expected {N}")
        try:
            labels = np.array([int(v) for v in parts], dtype=np.int64)
        except ValueError as exc:
            raise FormatError(f"{path}: non-integer label") from exc
        body = body[:-1]
    if len(body) != need:
        raise FormatError(
            f"{path}: expected {need} matrix rows for N={N}, n={n}, found {len(body)}"
        )
    obs = np.empty((N, n, p))
    for k, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != p:
            raise FormatError(f"{path}:{k + 2}: expected {p} values, got {len(parts)}")
        try:
            obs[k // n, k % n] = [float(v) for v in parts]
        except ValueError as exc:
            raise FormatError(f"{path}:{k + 2}: unparseable value") from exc
    try:
        return DataSet3D(obs, labels)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# IDX (MNIST) ingestion

_IDX_IMAGES_MAGIC = 0x803
_IDX_LABELS_MAGIC = 0x801


def read_idx_images(images_path: str | os.PathLike,
                    labels_path: str | os.PathLike,
                    keep_labels: tuple[int, ...] | list[int],
                    *,
                    jitter: bool = True,
                    lift_nonzero: bool = True,
                    seed: int = 0) -> DataSet3D:
    """Load big-endian IDX image/label files, keeping only ``keep_labels``.

    Dataset labels become 1..G by the sorted order of ``keep_labels``. Two
    preprocessing steps (each toggleable) stabilize variance estimation on
    images with exactly-constant background: ``jitter`` adds Uniform(0, 1)
    noise to every pixel, and ``lift_nonzero`` then adds 50 to every pixel
    that was nonzero in the raw image.
    """
    keep = sorted(set(int(v) for v in keep_labels))
    if not keep:
        raise InputError("keep_labels must name at least one class")
    raw_labels = _read_idx_labels(labels_path)
    images = _read_idx_image_array(images_path)
    if images.shape[0] != raw_labels.shape[0]:
        raise FormatError(
            f"image count {images.shape[0]} != label count {raw_labels.shape[0]}"
        )
    mask = np.isin(raw_labels, keep)
    if not mask.any():
        raise InputError(f"no observations carry labels {keep}")
    images = images[mask].astype(np.float64)
    relabel = {v: i + 1 for i, v in enumerate(keep)}
    labels = np.array([relabel[int(v)] for v in raw_labels[mask]], dtype=np.int64)
    nonzero = images > 0
    if jitter:
        rng = np.random.default_rng(np.random.SeedSequence([_mask_seed(seed), 0x6964]))
        images = images + rng.random(images.shape)
    if lift_nonzero:
        images = images + 50.0 * nonzero
    return DataSet3D(images, labels)


def _read_idx_labels(path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != _IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:x}, expected 0x{_IDX_LABELS_MAGIC:x}")
    if len(buf) != 8 + count:
        raise FormatError(f"{path}: expected {count} label bytes, found {len(buf) - 8}")
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def _read_idx_image_array(path) -> np.ndarray:
    buf = _read_bytes(path)
    if len(buf) < 16:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:x}, expected 0x{_IDX_IMAGES_MAGIC:x}")
    if len(buf) != 16 + count * rows * cols:
        raise FormatError(f"{path}: image payload size mismatch")
    arr = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return arr.reshape(count, rows, cols)


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# PGM heatmap export

def write_heatmap_pgm(matrix: np.ndarray, path: str | os.PathLike) -> None:
    """Write a matrix as a binary PGM (P5) image, min-max scaled to 0..255.

    A constant matrix maps to mid-gray (128). Width is the column count,
    height the row count.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"heatmap input must be a matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise InputError("heatmap input contains non-finite values")
    span = m.max() - m.min()
    if span == 0:
        pix = np.full(m.shape, 128, dtype=np.uint8)
    else:
        pix = np.round((m - m.min()) / span * 255.0).astype(np.uint8)
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii")
    _atomic_write_bytes(path, header + pix.tobytes())


# ---------------------------------------------------------------------------
# atomic writes shared by every producer of output files

def _atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-mvbfa-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _atomic_write_text(path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("ascii"))

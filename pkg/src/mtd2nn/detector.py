"""Detector regions, readout, target encodings and decision rules.

Detector cells are indexed region-major: with ``sub_split = s`` the cell for
region ``r`` and half ``k`` (left to right) sits at index ``r * s + k``.  A
codec tells which cells a task reads and whether its class is the brightest
(``argmax``) or darkest (``argmin``) of them.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["DetectorLayout", "LabelCodec", "default_layout", "default_codecs", "read",
           "read_adjoint", "decide", "encode_target", "ideal_reading", "guess_task"]


@dataclass(frozen=True)
class DetectorLayout:
    """Rectangular detector regions ``(row0, col0, height, width)`` in pixels."""

    regions: tuple
    sub_split: int = 1

    def __post_init__(self):
        regions = tuple(tuple(int(v) for v in r) for r in self.regions)
        object.__setattr__(self, "regions", regions)
        if not regions:
            raise ValueError("layout needs at least one region")
        if self.sub_split < 1:
            raise ValueError("sub_split must be >= 1")
        for r in regions:
            if len(r) != 4 or r[2] <= 0 or r[3] <= 0 or r[0] < 0 or r[1] < 0:
                raise ValueError(f"bad region {r}")
            if r[3] % self.sub_split:
                raise ValueError(f"region width {r[3]} is not divisible by sub_split={self.sub_split}")
        for i, a in enumerate(regions):
            for b in regions[i + 1:]:
                if (a[0] < b[0] + b[2] and b[0] < a[0] + a[2]
                        and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]):
                    raise ValueError(f"regions {a} and {b} overlap")

    @property
    def n_regions(self):
        return len(self.regions)

    @property
    def n_cells(self):
        return len(self.regions) * self.sub_split

    def cells(self):
        """Rectangles of every readout cell in index order."""
        out = []
        for r0, c0, h, w in self.regions:
            sw = w // self.sub_split
            out.extend((r0, c0 + k * sw, h, sw) for k in range(self.sub_split))
        return out

    def check_fits(self, shape):
        rows, cols = shape
        for r0, c0, h, w in self.regions:
            if r0 + h > rows or c0 + w > cols:
                raise ValueError(f"region {(r0, c0, h, w)} falls outside the {rows}x{cols} grid")

    def to_dict(self):
        return {"regions": [list(r) for r in self.regions], "sub_split": self.sub_split}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(r) for r in d["regions"]), int(d.get("sub_split", 1)))


def default_layout(rows=200, cols=200, size=None, sub_split=1, n_rows=2, n_cols=5):
    """Centered ``n_rows x n_cols`` grid of square regions with even gaps.

    ``size`` defaults to a tenth of the smaller grid side (20 px on 200x200).
    """
    size = size or min(rows, cols) // 10
    if sub_split > 1:
        size -= size % sub_split
    gap_r = (rows - n_rows * size) // (n_rows + 1)
    gap_c = (cols - n_cols * size) // (n_cols + 1)
    if gap_r < 0 or gap_c < 0:
        raise ValueError(f"{n_rows}x{n_cols} regions of {size}px do not fit a {rows}x{cols} grid")
    # split any leftover pixels evenly on both borders
    off_r = (rows - n_rows * size - (n_rows - 1) * gap_r) // 2
    off_c = (cols - n_cols * size - (n_cols - 1) * gap_c) // 2
    regions = tuple((off_r + i * (size + gap_r), off_c + j * (size + gap_c), size, size)
                    for i in range(n_rows) for j in range(n_cols))
    return DetectorLayout(regions, sub_split)


@lru_cache(maxsize=16)
def _cell_matrix(layout, shape):
    layout.check_fits(shape)
    rows, cols = shape
    W = np.zeros((layout.n_cells, rows * cols))
    for i, (r0, c0, h, w) in enumerate(layout.cells()):
        plane = np.zeros(shape)
        plane[r0:r0 + h, c0:c0 + w] = 1.0
        W[i] = plane.ravel()
    W.setflags(write=False)
    return W


def read(intensity, layout):
    """Sum the intensity image over each cell; batched over leading axes."""
    intensity = np.asarray(intensity, dtype=np.float64)
    shape = intensity.shape[-2:]
    layout.check_fits(shape)
    # direct slicing keeps each sum exact and independent of the other cells
    sums = [intensity[..., r0:r0 + h, c0:c0 + w].sum(axis=(-2, -1))
            for r0, c0, h, w in layout.cells()]
    return np.stack(sums, axis=-1)


def read_adjoint(grad_reading, layout, shape):
    """Pull a gradient on the reading back to a gradient on the intensity image."""
    W = _cell_matrix(layout, tuple(shape))
    g = np.asarray(grad_reading, dtype=np.float64)
    return (g @ W).reshape(*g.shape[:-1], *shape)


@dataclass(frozen=True)
class LabelCodec:
    """How one task's classes map onto detector cells."""

    task_id: int
    polarity: str
    n_classes: int = 10
    sub_split: int = 1
    sub_index: int = 0

    def __post_init__(self):
        if self.polarity not in ("argmin", "argmax"):
            raise ValueError(f"polarity must be 'argmin' or 'argmax', got {self.polarity!r}")
        if not 0 <= self.sub_index < self.sub_split:
            raise ValueError("sub_index out of range")

    @property
    def length(self):
        return self.n_classes * self.sub_split

    @property
    def background(self):
        """Target value of every cell except the class cell."""
        return 1.0 if self.polarity == "argmin" else 0.0

    def to_dict(self):
        return {"task_id": self.task_id, "polarity": self.polarity, "n_classes": self.n_classes,
                "sub_split": self.sub_split, "sub_index": self.sub_index}


def default_codecs(n_tasks, n_classes=10):
    """Codecs for ``n_tasks`` tasks sharing one set of ``n_classes`` regions.

    One task reads the brightest region.  Two tasks pair an argmin-coded first
    task with an argmax-coded second task.  Beyond that each region is split
    into ``ceil(T / 2)`` cells; the first half of the tasks is argmax-coded and
    the second half argmin-coded, task ``t`` reading cell ``t mod s``.
    """
    if n_tasks == 1:
        return [LabelCodec(0, "argmax", n_classes)]
    if n_tasks == 2:
        return [LabelCodec(0, "argmin", n_classes), LabelCodec(1, "argmax", n_classes)]
    s = -(-n_tasks // 2)
    return [LabelCodec(t, "argmax" if t < s else "argmin", n_classes, s, t % s)
            for t in range(n_tasks)]


def _check_length(values, codec):
    if values.shape[-1] != codec.length:
        raise ValueError(f"reading has {values.shape[-1]} cells, codec expects {codec.length}")


def decide(reading, codec):
    """Class index (or array of indices for a batch); ties go to the lowest index."""
    values = np.asarray(reading, dtype=np.float64)
    _check_length(values, codec)
    own = values[..., codec.sub_index::codec.sub_split]
    if codec.polarity == "argmin":
        return np.argmin(own, axis=-1)
    return np.argmax(own, axis=-1)


def encode_target(codec, label):
    """0/1 training target over all detector cells for ``label`` (scalar or array)."""
    labels = np.asarray(label)
    if labels.size and (labels.min() < 0 or labels.max() >= codec.n_classes):
        raise ValueError(f"class index out of range [0, {codec.n_classes})")
    target = np.full(labels.shape + (codec.length,), codec.background)
    cell = labels * codec.sub_split + codec.sub_index
    np.put_along_axis(target, cell[..., None].astype(np.intp), 1.0 - codec.background, axis=-1)
    return target


def ideal_reading(codec, label):
    """Reading a perfectly trained network would produce: the target itself."""
    return encode_target(codec, label)


def guess_task(reading, codecs):
    """Heuristic task identification from a single reading.

    Not a paper-defined rule.  Scores each codec by how far its selected cell
    stands out from the runner-up in its own direction, normalized by the
    reading's spread, and returns the index of the best-scoring codec.
    """
    values = np.asarray(reading, dtype=np.float64)
    spread = np.ptp(values) or 1.0
    scores = []
    for codec in codecs:
        own = np.sort(values[codec.sub_index::codec.sub_split])
        margin = own[1] - own[0] if codec.polarity == "argmin" else own[-1] - own[-2]
        scores.append(margin / spread)
    return int(np.argmax(scores))

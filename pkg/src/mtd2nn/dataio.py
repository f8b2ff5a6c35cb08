"""Dataset ingestion, input-field encoding, checkpoints and PGM export."""

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from mtd2nn.detector import DetectorLayout
from mtd2nn.field import PropagationSpec
from mtd2nn.layers import BeamSplitterSpec
from mtd2nn.network import MultiTaskD2NN

__all__ = ["IdxError", "CheckpointError", "Dataset", "Encoding", "load_idx", "read_idx",
           "encode_input", "save_checkpoint", "load_checkpoint", "checkpoint_bytes",
           "export_heatmap", "export_trace", "write_pgm", "config_hash"]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
CHECKPOINT_MAGIC = b"D2NN"
CHECKPOINT_VERSION = 1


class IdxError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    task_id: int = 0
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= 10:
            raise ValueError("labels must be < 10")

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        """First ``n`` samples (the whole set if ``n`` is falsy or too large)."""
        if not n or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.task_id, self.split)


def _open(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic=None):
    """Parse one big-endian IDX file into a uint8 array of its declared shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated header at offset 0")
    magic = struct.unpack(">I", raw[:4])[0]
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IdxError(f"{path}: bad magic 0x{magic:08x} at offset 0 (expected unsigned-byte IDX)")
    if expected_magic is not None and magic != expected_magic:
        raise IdxError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = raw[3]
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header_end < count:
        raise IdxError(f"{path}: truncated data at offset {len(raw)}, "
                       f"expected {count} bytes after offset {header_end}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end).reshape(dims)


def load_idx(image_path, label_path, task_id=0, split="train"):
    images = read_idx(image_path, IMAGE_MAGIC)
    labels = read_idx(label_path, LABEL_MAGIC)
    if images.ndim != 3:
        raise IdxError(f"{image_path}: expected 3 dimensions, got {images.ndim}")
    if len(images) != len(labels):
        raise IdxError(f"count mismatch: {len(images)} images in {image_path} "
                       f"vs {len(labels)} labels in {label_path}")
    return Dataset(images, labels.astype(np.int64), task_id, split)


@dataclass(frozen=True)
class Encoding:
    """How a byte image becomes the input field.

    ``fraction`` is the side of the centered image square relative to the grid,
    ``amplitude`` the field amplitude of a 255 pixel.  With ``phase`` the pixel
    value sets a phase in [0, pi] on a unit-amplitude square instead.
    """

    fraction: float = 1.0
    amplitude: float = 1.0
    phase: bool = False

    def to_dict(self):
        return asdict(self)


def _interp_matrix(n_out, n_in):
    """Bilinear (align-corners) resampling matrix of shape (n_out, n_in)."""
    if n_out == n_in:
        return np.eye(n_in)
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2])
    else:
        pos = np.linspace(0, n_in - 1, n_out)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    w = pos - lo
    M = np.zeros((n_out, n_in))
    M[np.arange(n_out), lo] += 1 - w
    M[np.arange(n_out), hi] += w
    return M


def encode_input(images, spec, encoding=Encoding()):
    """Map byte images ``(..., h, w)`` onto complex input fields on ``spec``'s grid."""
    images = np.asarray(images, dtype=np.float64) / 255.0
    h, w = images.shape[-2:]
    rows, cols = spec.shape
    side = int(round(encoding.fraction * min(rows, cols)))
    if side < 1 or side > min(rows, cols):
        raise ValueError(f"image square of {side}px does not fit the {rows}x{cols} grid")
    scaled = _interp_matrix(side, h) @ images @ _interp_matrix(side, w).T
    r0, c0 = (rows - side) // 2, (cols - side) // 2
    field = np.zeros(images.shape[:-2] + (rows, cols), dtype=np.complex128)
    if encoding.phase:
        field[..., r0:r0 + side, c0:c0 + side] = encoding.amplitude * np.exp(1j * np.pi * scaled)
    else:
        field[..., r0:r0 + side, c0:c0 + side] = encoding.amplitude * scaled
    return field


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _architecture(model):
    spec = model.spec
    return {
        "n_shared": len(model.shared),
        "n_branch_layers": len(model.branches[0]),
        "n_tasks": model.n_tasks,
        "spec": {"wavelength": spec.wavelength, "layer_distance": spec.layer_distance,
                 "pixel_pitch": spec.pixel_pitch, "grid_rows": spec.grid_rows,
                 "grid_cols": spec.grid_cols, "pad": spec.pad},
        "splitter": [model.splitter.transmitted_fraction, model.splitter.reflected_fraction],
        "layout": model.layout.to_dict(),
        "input_modulation": model.input_modulation,
    }


def checkpoint_bytes(model, optimizer_state=None, metadata=None):
    """Serialize a model (and optionally Adam state) to the checkpoint byte layout.

    Layout: ``b"D2NN"``, uint32 LE version, uint32 LE header length, UTF-8 JSON
    header, then every array as little-endian float64 in row-major order: the
    masks in declaration order followed by Adam's first and second moments.
    """
    arrays = model.masks()
    header = {"architecture": _architecture(model), "metadata": metadata or {},
              "optimizer": None}
    if optimizer_state is not None:
        header["optimizer"] = {"step": int(optimizer_state["step"])}
        arrays = arrays + list(optimizer_state["m"]) + list(optimizer_state["v"])
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)), blob]
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise CheckpointError("refusing to save a non-finite parameter")
        parts.append(np.ascontiguousarray(a).astype("<f8", copy=False).tobytes())
    return b"".join(parts)


def save_checkpoint(model, path, optimizer_state=None, metadata=None):
    data = checkpoint_bytes(model, optimizer_state, metadata)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Read a checkpoint.

    Returns
    -------
    model : MultiTaskD2NN
    optimizer_state : dict or None
    metadata : dict
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated before header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        arch = header["architecture"]
        spec = PropagationSpec(**arch["spec"])
        n_masks = arch["n_shared"] + arch["n_tasks"] * arch["n_branch_layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc
    opt = header.get("optimizer")
    n_arrays = n_masks * (3 if opt else 1)
    per = spec.grid_rows * spec.grid_cols * 8
    body = raw[12 + hlen:]
    if len(body) != n_arrays * per:
        raise CheckpointError(f"{path}: shape mismatch, header implies {n_arrays} arrays of "
                              f"{spec.grid_rows}x{spec.grid_cols} ({n_arrays * per} bytes) "
                              f"but {len(body)} bytes follow")
    arrays = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(n_arrays, *spec.shape)
    if not np.all(np.isfinite(arrays)):
        raise CheckpointError(f"{path}: non-finite parameter")
    masks = list(arrays[:n_masks])
    s, nb = arch["n_shared"], arch["n_branch_layers"]
    model = MultiTaskD2NN(masks[:s],
                          [masks[s + t * nb: s + (t + 1) * nb] for t in range(arch["n_tasks"])],
                          spec, BeamSplitterSpec(*arch["splitter"]),
                          DetectorLayout.from_dict(arch["layout"]),
                          arch.get("input_modulation", False))
    state = None
    if opt:
        state = {"step": opt["step"], "m": list(arrays[n_masks:2 * n_masks]),
                 "v": list(arrays[2 * n_masks:])}
    return model, state, header.get("metadata", {})


def write_pgm(path, image8):
    image8 = np.asarray(image8, dtype=np.uint8)
    rows, cols = image8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {cols} {rows} 255\n".encode("ascii"))
        fh.write(image8.tobytes())


def to_gray(data, phase=False):
    """Min-max normalize to 0..255; complex data maps to magnitude (or phase)."""
    data = np.asarray(data)
    if np.iscomplexobj(data):
        data = np.angle(data) if phase else np.abs(data)
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError("cannot export non-finite data")
    lo, hi = data.min(), data.max()
    if hi == lo:
        return np.zeros(data.shape, dtype=np.uint8)
    return np.round((data - lo) / (hi - lo) * 255).astype(np.uint8)


def export_heatmap(data, path, phase=False):
    """Write a 2-D field or intensity as an 8-bit binary PGM."""
    write_pgm(path, to_gray(data, phase))
    return Path(path)


def export_trace(trace, out_dir, phase=False):
    """One PGM per trace stage, numbered in beam order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (name, data) in enumerate(trace.stages()):
        paths.append(export_heatmap(data, out_dir / f"{i:02d}_{name}.pgm", phase))
    return paths

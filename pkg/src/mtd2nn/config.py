"""JSON run configuration with strict validation.

Unknown keys are errors.  :func:`load_config` gathers every problem it finds
and raises one :class:`ConfigError` listing them all.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mtd2nn.dataio import IMAGE_MAGIC, LABEL_MAGIC, Dataset, Encoding, IdxError, load_idx, read_idx
from mtd2nn.detector import default_codecs
from mtd2nn.network import ArchConfig
from mtd2nn.noise import MAX_SPLITTER_EPSILON, noise_grid
from mtd2nn.train import TrainConfig

__all__ = ["ConfigError", "TaskData", "NoiseConfig", "RunConfig", "load_config",
           "parse_config", "load_task_datasets"]


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass
class TaskData:
    name: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    polarity: str = ""
    first_ten_classes: bool = False


@dataclass
class NoiseConfig:
    detector_sigmas: list = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2])
    device_sigmas: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    splitter_epsilons: list = field(default_factory=lambda: [-0.1, -0.05, 0.0, 0.05, 0.1])
    detector_mu: float = 0.0
    repeats: int = 10
    seed: int = 0
    per_region: bool = False

    def grids(self):
        """The three sweeps: detector x device, detector x splitter, device x splitter."""
        return {
            "detector_device": noise_grid(self.detector_sigmas, self.device_sigmas, [0.0],
                                          self.detector_mu),
            "detector_splitter": noise_grid(self.detector_sigmas, [0.0], self.splitter_epsilons,
                                            self.detector_mu),
            "device_splitter": noise_grid([0.0], self.device_sigmas, self.splitter_epsilons,
                                          self.detector_mu),
        }


@dataclass
class RunConfig:
    architecture: ArchConfig = field(default_factory=ArchConfig)
    encoding: Encoding = field(default_factory=Encoding)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: list = field(default_factory=list)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    output_dir: str = "runs/default"

    def to_dict(self):
        return {
            "architecture": self.architecture.to_dict(),
            "encoding": self.encoding.to_dict(),
            "training": self.training.to_dict(),
            "data": [dataclasses.asdict(d) for d in self.data],
            "noise": dataclasses.asdict(self.noise),
            "output_dir": self.output_dir,
        }


def _fill(cls, block, where, problems, **converters):
    if block is None:
        block = {}
    if not isinstance(block, dict):
        problems.append(f"{where}: expected an object")
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(block) - names):
        problems.append(f"{where}: unknown key {key!r}")
    kwargs = {k: converters.get(k, lambda v: v)(v) for k, v in block.items() if k in names}
    return kwargs


def _build(cls, kwargs, where, problems):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def parse_config(raw, base_dir=".", check_paths=True):
    """Validate a config mapping and return a :class:`RunConfig`."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in sorted(set(raw) - top):
        problems.append(f"unknown top-level key {key!r}")

    arch_kw = _fill(ArchConfig, raw.get("architecture"), "architecture", problems,
                    splitter=tuple)
    arch = _build(ArchConfig, arch_kw, "architecture", problems) if arch_kw is not None else None
    if arch is not None:
        if arch.n_tasks < 1 or arch.n_shared < 1 or arch.n_branch_layers < 1:
            problems.append("architecture: n_tasks, n_shared and n_branch_layers must be >= 1")
        if arch.grid < 2 or arch.grid % 2:
            problems.append("architecture: grid must be an even integer >= 2")
        for name in ("wavelength", "pixel_pitch", "layer_distance"):
            if not getattr(arch, name) > 0:
                problems.append(f"architecture: {name} must be > 0")
        if len(arch.splitter) != 2 or any(not 0 <= s <= 1 for s in arch.splitter):
            problems.append("architecture: splitter must be two amplitude factors in [0, 1]")

    enc_kw = _fill(Encoding, raw.get("encoding"), "encoding", problems)
    encoding = _build(Encoding, enc_kw, "encoding", problems) if enc_kw is not None else None
    if encoding is not None and not 0 < encoding.fraction <= 1:
        problems.append("encoding: fraction must lie in (0, 1]")

    tr_kw = _fill(TrainConfig, raw.get("training"), "training", problems, lambdas=tuple)
    training = None
    if tr_kw is not None:
        try:
            training = TrainConfig(**tr_kw)
        except ValueError as exc:
            problems.extend(f"training: {p}" for p in str(exc).split("; "))
        except TypeError as exc:
            problems.append(f"training: {exc}")
    if training is not None and arch is not None and len(training.lambdas) != arch.n_tasks:
        problems.append(f"training: {arch.n_tasks} tasks need {arch.n_tasks} lambdas, "
                        f"got {len(training.lambdas)}")

    tasks = []
    data = raw.get("data", [])
    if not isinstance(data, list):
        problems.append("data: expected a list of task blocks")
        data = []
    base = Path(base_dir)
    for i, block in enumerate(data):
        kw = _fill(TaskData, block, f"data[{i}]", problems)
        if kw is None:
            continue
        task = TaskData(**kw)
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            value = getattr(task, key)
            if not value:
                problems.append(f"data[{i}]: {key} is required")
                continue
            path = Path(value)
            if not path.is_absolute():
                path = base / path
            setattr(task, key, str(path))
            if check_paths and not path.exists():
                problems.append(f"data[{i}]: {key} path does not exist: {path}")
        tasks.append(task)
    if arch is not None and tasks:
        if len(tasks) != arch.n_tasks:
            problems.append(f"data: {arch.n_tasks} tasks configured but {len(tasks)} data blocks")
        codecs = default_codecs(arch.n_tasks)
        for i, (task, codec) in enumerate(zip(tasks, codecs)):
            if task.polarity and task.polarity != codec.polarity:
                problems.append(f"data[{i}]: polarity {task.polarity!r} conflicts with task "
                                f"position (expected {codec.polarity!r})")
        if arch.n_tasks == 2:
            argmin = [t for t in tasks if t.polarity == "argmin"]
            if len(argmin) > 1:
                problems.append("data: exactly one task may be argmin-coded in 2-task mode")

    nz_kw = _fill(NoiseConfig, raw.get("noise"), "noise", problems)
    noise = _build(NoiseConfig, nz_kw, "noise", problems) if nz_kw is not None else None
    if noise is not None:
        if any(s < 0 for s in noise.detector_sigmas + noise.device_sigmas):
            problems.append("noise: sigmas must be >= 0")
        if any(abs(e) > MAX_SPLITTER_EPSILON for e in noise.splitter_epsilons):
            problems.append("noise: splitter_epsilons must lie in [-0.1, 0.1]")
        if noise.repeats < 1:
            problems.append("noise: repeats must be >= 1")

    out = raw.get("output_dir", "runs/default")
    if not isinstance(out, str):
        problems.append("output_dir must be a string")
    if problems:
        raise ConfigError(problems)
    return RunConfig(arch, encoding, training, tasks, noise, out)


def load_config(path, check_paths=True):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    return parse_config(raw, path.parent, check_paths)


def _load_raw(images, labels, task_id, split, first_ten):
    if not first_ten:
        return load_idx(images, labels, task_id, split)
    x = read_idx(images, IMAGE_MAGIC)
    y = read_idx(labels, LABEL_MAGIC).astype(np.int64)
    if len(x) != len(y):
        raise IdxError(f"count mismatch: {len(x)} images vs {len(y)} labels")
    keep = np.unique(y)[:10]
    mask = np.isin(y, keep)
    return Dataset(x[mask], np.searchsorted(keep, y[mask]), task_id, split)


def load_task_datasets(cfg):
    """Train and test :class:`Dataset` lists, trimmed to the configured sizes."""
    train_sets, test_sets = [], []
    for t, task in enumerate(cfg.data):
        tr = _load_raw(task.train_images, task.train_labels, t, "train", task.first_ten_classes)
        te = _load_raw(task.test_images, task.test_labels, t, "test", task.first_ten_classes)
        train_sets.append(tr.subset(cfg.training.train_size))
        test_sets.append(te.subset(cfg.training.test_size))
    return train_sets, test_sets

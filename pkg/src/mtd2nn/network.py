"""End-to-end multi-task D2NN: shared trunk, beam split, task branches, detector plane."""

from dataclasses import dataclass, field, asdict

import numpy as np

from mtd2nn.detector import DetectorLayout, default_codecs, default_layout
from mtd2nn.field import PropagationSpec, as_field, propagate
from mtd2nn.layers import BeamSplitterSpec, check_mask

__all__ = ["ArchConfig", "MultiTaskD2NN", "ForwardTrace", "build_model", "forward",
           "forward_cached", "forward_trace"]


@dataclass
class ArchConfig:
    """Topology and optics of a model; everything :func:`build_model` needs."""

    n_shared: int = 4
    n_branch_layers: int = 2
    n_tasks: int = 2
    grid: int = 200
    wavelength: float = 0.75e-3
    pixel_pitch: float = 0.4e-3
    layer_distance: float = 30e-3
    pad: bool = False
    splitter: tuple = (0.5, 0.5)
    region_size: int = 0
    regions: list = None
    input_modulation: bool = False
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["splitter"] = list(self.splitter)
        return d

    def spec(self):
        return PropagationSpec(self.wavelength, self.layer_distance, self.pixel_pitch,
                               self.grid, self.grid, self.pad)


@dataclass
class MultiTaskD2NN:
    """Phase masks plus the optics they sit in.

    ``shared`` holds the trunk masks in beam order and ``branches[t]`` the
    masks of task ``t``.  Masks are plain float64 arrays of unwrapped phase.
    """

    shared: list
    branches: list
    spec: PropagationSpec
    splitter: BeamSplitterSpec = field(default_factory=BeamSplitterSpec)
    layout: DetectorLayout = None
    input_modulation: bool = False

    def __post_init__(self):
        shape = self.spec.shape
        self.shared = [check_mask(m, shape) for m in self.shared]
        self.branches = [[check_mask(m, shape) for m in b] for b in self.branches]
        if not self.shared:
            raise ValueError("model needs at least one shared layer")
        if not self.branches or any(len(b) == 0 for b in self.branches):
            raise ValueError("every branch needs at least one layer")
        if len({len(b) for b in self.branches}) != 1:
            raise ValueError("all branches must have the same depth")
        if self.layout is None:
            sub = default_codecs(self.n_tasks)[0].sub_split
            self.layout = default_layout(*shape, sub_split=sub)
        self.layout.check_fits(shape)
        if self.layout.sub_split != self.codecs[0].sub_split:
            raise ValueError(f"{self.n_tasks} tasks need sub_split={self.codecs[0].sub_split}, "
                             f"layout has {self.layout.sub_split}")

    @property
    def n_tasks(self):
        return len(self.branches)

    @property
    def codecs(self):
        return default_codecs(self.n_tasks, self.layout.n_regions if self.layout else 10)

    def masks(self):
        """All masks in declaration order: trunk first, then each branch."""
        return list(self.shared) + [m for b in self.branches for m in b]

    def with_masks(self, masks):
        """Copy of the model with ``masks`` (declaration order) swapped in."""
        masks = list(masks)
        s, nb = len(self.shared), len(self.branches[0])
        shared = masks[:s]
        branches = [masks[s + t * nb: s + (t + 1) * nb] for t in range(self.n_tasks)]
        return MultiTaskD2NN(shared, branches, self.spec, self.splitter, self.layout,
                             self.input_modulation)

    def with_splitter(self, splitter):
        return MultiTaskD2NN(self.shared, self.branches, self.spec, splitter, self.layout,
                             self.input_modulation)


def build_model(cfg=None, **overrides):
    """Create a model with i.i.d. uniform [0, 2 pi) masks, seeded by ``cfg.seed``."""
    cfg = cfg or ArchConfig()
    if overrides:
        cfg = ArchConfig(**{**cfg.to_dict(), **overrides})
    if cfg.n_tasks < 1 or cfg.n_shared < 1 or cfg.n_branch_layers < 1:
        raise ValueError("n_tasks, n_shared and n_branch_layers must all be >= 1")
    spec = cfg.spec()
    codecs = default_codecs(cfg.n_tasks)
    if cfg.regions:
        layout = DetectorLayout(tuple(tuple(r) for r in cfg.regions), codecs[0].sub_split)
    else:
        layout = default_layout(cfg.grid, cfg.grid, size=cfg.region_size or None,
                                sub_split=codecs[0].sub_split)
    rng = np.random.default_rng(cfg.seed)
    shape = spec.shape
    shared = [rng.uniform(0, 2 * np.pi, shape) for _ in range(cfg.n_shared)]
    branches = [[rng.uniform(0, 2 * np.pi, shape) for _ in range(cfg.n_branch_layers)]
                for _ in range(cfg.n_tasks)]
    return MultiTaskD2NN(shared, branches, spec, BeamSplitterSpec(*cfg.splitter), layout,
                         cfg.input_modulation)


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values after {where}")


def forward_cached(model, inputs):
    """Run the model and keep what the adjoint pass needs.

    Uses linearity twice: the first branch hop is computed once on the trunk
    output and scaled per branch, and the branch fields are summed before a
    single final hop to the detector plane.

    Returns
    -------
    intensity : ndarray
        ``|z|**2`` on the detector plane, same leading shape as ``inputs``.
    cache : dict
        Modulated field after every mask plus the detector-plane field ``z``.
    """
    spec = model.spec
    u = as_field(inputs, spec.shape)
    trunk = []
    for i, theta in enumerate(model.shared):
        a = u if (i == 0 and model.input_modulation) else propagate(u, spec)
        u = a * np.exp(1j * theta)
        _check_finite(u, f"shared layer {i}")
        trunk.append(u)
    hop = propagate(u, spec)
    fractions = model.splitter.fractions(model.n_tasks)
    branch_fields = []
    total = 0
    for t, masks in enumerate(model.branches):
        b = fractions[t] * hop
        fields = []
        for j, theta in enumerate(masks):
            if j:
                b = propagate(b, spec)
            b = b * np.exp(1j * theta)
            _check_finite(b, f"branch {t} layer {j}")
            fields.append(b)
        branch_fields.append(fields)
        total = total + b
    z = propagate(total, spec)
    intensity = (z * z.conj()).real
    cache = {"trunk": trunk, "branches": branch_fields, "z": z, "fractions": fractions}
    return intensity, cache


def forward(model, inputs):
    """Detector-plane intensity for one field or a batch of fields."""
    return forward_cached(model, inputs)[0]


@dataclass
class ForwardTrace:
    """Every intermediate plane of one forward pass, for inspection and export."""

    input_field: np.ndarray
    trunk: list
    branches: list
    detector_fields: list
    combined: np.ndarray
    intensity: np.ndarray

    def path(self, task):
        """Stages seen by one task's light: trunk, its branch, combined plane, intensity."""
        return list(self.trunk) + list(self.branches[task]) + [self.combined, self.intensity]

    def stages(self):
        """Ordered ``(name, array)`` pairs covering the whole network once."""
        out = [("input", self.input_field)]
        out += [(f"shared{i + 1}", f) for i, f in enumerate(self.trunk)]
        for t, fields in enumerate(self.branches):
            out += [(f"task{t + 1}_layer{j + 1}", f) for j, f in enumerate(fields)]
        out += [("detector_field", self.combined), ("intensity", self.intensity)]
        return out

    def __len__(self):
        return len(self.stages())


def forward_trace(model, inputs):
    """Like :func:`forward`, retaining every intermediate field of a single input."""
    x = as_field(inputs, model.spec.shape)
    intensity, cache = forward_cached(model, x)
    detector_fields = []
    for fields in cache["branches"]:
        detector_fields.append(propagate(fields[-1], model.spec))
    return ForwardTrace(x, cache["trunk"], cache["branches"], detector_fields, cache["z"],
                        intensity)

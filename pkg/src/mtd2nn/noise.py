"""Noise injection (detector, phase device variation, beam splitter) and sweeps."""

import csv
import itertools
from dataclasses import dataclass, asdict, replace

import numpy as np

from mtd2nn.dataio import Encoding, encode_input
from mtd2nn.detector import decide, read
from mtd2nn.layers import BeamSplitterSpec
from mtd2nn.network import forward

__all__ = ["NoiseSpec", "apply_detector_noise", "apply_reading_noise", "apply_phase_noise",
           "perturb_phases", "apply_splitter_noise", "noisy_inference", "noise_grid",
           "noise_sweep", "SweepResult", "MAX_SPLITTER_EPSILON"]

MAX_SPLITTER_EPSILON = 0.1
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class NoiseSpec:
    """One point of the robustness grid.

    ``detector_sigma`` and ``detector_mu`` are fractions of the mean pixel
    intensity of the clean detector-plane image; ``device_sigma`` is in
    radians; ``splitter_epsilon`` shifts amplitude from the reflected to the
    transmitted arm.
    """

    detector_sigma: float = 0.0
    detector_mu: float = 0.0
    device_sigma: float = 0.0
    splitter_epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.detector_sigma < 0 or self.device_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if abs(self.splitter_epsilon) > MAX_SPLITTER_EPSILON + 1e-12:
            raise ValueError(f"splitter_epsilon must lie in [-{MAX_SPLITTER_EPSILON}, "
                             f"{MAX_SPLITTER_EPSILON}], got {self.splitter_epsilon}")

    @property
    def is_clean(self):
        return not (self.detector_sigma or self.detector_mu or self.device_sigma
                    or self.splitter_epsilon)


def _rng(spec, rng):
    return rng if rng is not None else np.random.default_rng(spec.seed)


def apply_detector_noise(intensity, spec, rng=None):
    """Add per-pixel Gaussian noise scaled by each image's mean clean intensity."""
    intensity = np.asarray(intensity, dtype=np.float64)
    if not (spec.detector_sigma or spec.detector_mu):
        return intensity.copy()
    rng = _rng(spec, rng)
    level = intensity.mean(axis=(-2, -1), keepdims=True)
    noise = rng.standard_normal(intensity.shape)
    return intensity + level * (spec.detector_mu + spec.detector_sigma * noise)


def apply_reading_noise(reading, intensity_level, spec, rng=None):
    """Per-region alternative: noise on the summed reading instead of on pixels.

    ``intensity_level`` is the mean clean pixel intensity per sample.
    """
    reading = np.asarray(reading, dtype=np.float64)
    if not (spec.detector_sigma or spec.detector_mu):
        return reading.copy()
    rng = _rng(spec, rng)
    level = np.asarray(intensity_level, dtype=np.float64)[..., None]
    return reading + level * (spec.detector_mu + spec.detector_sigma
                              * rng.standard_normal(reading.shape))


def perturb_phases(model, deltas):
    """Add ``deltas`` (one array per mask, declaration order) and wrap to [0, 2 pi)."""
    return model.with_masks([np.mod(m + d, TWO_PI) for m, d in zip(model.masks(), deltas)])


def apply_phase_noise(model, spec, rng=None):
    """Device variation: i.i.d. N(0, sigma^2) radians on every mask, then wrap."""
    if not spec.device_sigma:
        return model
    rng = _rng(spec, rng)
    deltas = [spec.device_sigma * rng.standard_normal(m.shape) for m in model.masks()]
    return perturb_phases(model, deltas)


def apply_splitter_noise(bs, spec):
    eps = spec.splitter_epsilon
    if abs(eps) > MAX_SPLITTER_EPSILON + 1e-12:
        raise ValueError(f"splitter_epsilon {eps} outside [-0.1, 0.1]")
    if not eps:
        return bs
    return BeamSplitterSpec(min(1.0, max(0.0, bs.transmitted_fraction + eps)),
                            min(1.0, max(0.0, bs.reflected_fraction - eps)))


def _noisy_model(model, spec, rng):
    noisy = apply_phase_noise(model, spec, rng)
    bs = apply_splitter_noise(model.splitter, spec)
    return noisy if bs is model.splitter else noisy.with_splitter(bs)


def noisy_inference(model, inputs, noise, codec, rng=None, per_region=False):
    """Class decision(s) with device, splitter and detector noise composed in beam order."""
    rng = _rng(noise, rng)
    noisy = _noisy_model(model, noise, rng)
    intensity = forward(noisy, inputs)
    if per_region:
        level = intensity.mean(axis=(-2, -1))
        reading = apply_reading_noise(read(intensity, model.layout), level, noise, rng)
    else:
        reading = read(apply_detector_noise(intensity, noise, rng), model.layout)
    return decide(reading, codec)


def noise_grid(detector_sigmas=(0.0,), device_sigmas=(0.0,), splitter_epsilons=(0.0,),
               detector_mu=0.0):
    return [NoiseSpec(float(a), detector_mu, float(b), float(c))
            for a, b, c in itertools.product(detector_sigmas, device_sigmas, splitter_epsilons)]


def _key(x):
    return int(round(x * 1e6))


@dataclass
class SweepResult:
    """Per-seed accuracy records plus aggregation helpers."""

    records: list

    FIELDS = ("task", "detector_sigma", "device_sigma", "splitter_epsilon", "seed", "accuracy")

    def summary(self):
        """One row per (task, noise point): mean, sample std and count of accuracy."""
        groups = {}
        for r in self.records:
            k = (r["task"], r["detector_sigma"], r["device_sigma"], r["splitter_epsilon"])
            groups.setdefault(k, []).append(r["accuracy"])
        rows = []
        for (task, ds, dv, eps), accs in groups.items():
            # shifted by the minimum so identical repeats give exactly that value, std 0
            a = np.asarray(accs)
            lo = a.min()
            rows.append({"task": task, "detector_sigma": ds, "device_sigma": dv,
                         "splitter_epsilon": eps, "mean": float(lo + (a - lo).mean()),
                         "std": float((a - lo).std(ddof=1)) if len(a) > 1 else 0.0,
                         "n": len(a)})
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.records:
                w.writerow({k: (f"{r[k]:.6g}" if isinstance(r[k], float) else r[k])
                            for k in self.FIELDS})

    def write_summary_csv(self, path):
        rows = self.summary()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})

    def table(self, task, row_axis, col_axis, **fixed):
        """Mean accuracy matrix over two noise axes for one task.

        Returns ``(row_values, col_values, means)``; other axes are pinned by
        ``fixed`` or must be single-valued.
        """
        rows = [r for r in self.summary() if r["task"] == task
                and all(abs(r[k] - v) < 1e-12 for k, v in fixed.items())]
        rv = sorted({r[row_axis] for r in rows})
        cv = sorted({r[col_axis] for r in rows})
        means = np.full((len(rv), len(cv)), np.nan)
        for r in rows:
            means[rv.index(r[row_axis]), cv.index(r[col_axis])] = r["mean"]
        return rv, cv, means


def noise_sweep(model, test_sets, grid, repeats=10, base_seed=0, encoding=Encoding(),
                batch_size=256, per_region=False):
    """Accuracy of every task at every grid point, ``repeats`` seeds each.

    Points sharing device and splitter noise reuse one noisy forward pass per
    seed.  Every (seed, point, task) owns its own RNG stream, so the table
    does not depend on grid order.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("noise grid is empty")
    if len(test_sets) != model.n_tasks:
        raise ValueError("need one test set per task")
    codecs = model.codecs
    groups = {}
    for spec in grid:
        groups.setdefault((spec.device_sigma, spec.splitter_epsilon), []).append(spec)
    records = []
    for (dev, eps), specs in groups.items():
        # without any random component every seed gives the same answer
        random = dev > 0 or any(s.detector_sigma for s in specs)
        for rep in range(repeats if random else 1):
            seed = base_seed + rep
            phase_rng = np.random.default_rng([seed, 0, _key(dev), _key(eps + 1)])
            noisy = _noisy_model(model, NoiseSpec(0, 0, dev, eps), phase_rng)
            for t, (data, codec) in enumerate(zip(test_sets, codecs)):
                det_rngs = [np.random.default_rng([seed, 1, t, _key(s.detector_sigma),
                                                   _key(s.detector_mu + 1), _key(dev),
                                                   _key(eps + 1)]) for s in specs]
                correct = np.zeros(len(specs), dtype=np.int64)
                for start in range(0, len(data), batch_size):
                    x = encode_input(data.images[start:start + batch_size], model.spec, encoding)
                    labels = data.labels[start:start + batch_size]
                    intensity = forward(noisy, x)
                    for i, (s, r) in enumerate(zip(specs, det_rngs)):
                        if per_region:
                            level = intensity.mean(axis=(-2, -1))
                            reading = apply_reading_noise(read(intensity, model.layout),
                                                          level, s, r)
                        else:
                            reading = read(apply_detector_noise(intensity, s, r), model.layout)
                        correct[i] += int(np.sum(decide(reading, codec) == labels))
                for s, c in zip(specs, correct):
                    records.append({"task": t, "detector_sigma": s.detector_sigma,
                                    "device_sigma": dev, "splitter_epsilon": eps,
                                    "seed": seed, "accuracy": c / len(data)})
    return SweepResult(records)

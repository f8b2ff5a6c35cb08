"""Phase masks, diffractive layers and the beam splitter."""

from dataclasses import dataclass

import numpy as np

from mtd2nn.field import as_field, propagate

__all__ = ["BeamSplitterSpec", "NOMINAL_SPLIT", "LOSSLESS_SPLIT", "modulate",
           "diffractive_layer", "split", "combine", "check_mask"]

NOMINAL_SPLIT = 0.5
# Power-conserving amplitude factor of a physical 50-50 splitter.
LOSSLESS_SPLIT = 1 / np.sqrt(2)


@dataclass(frozen=True)
class BeamSplitterSpec:
    """Amplitude factors applied to the transmitted and reflected arms."""

    transmitted_fraction: float = NOMINAL_SPLIT
    reflected_fraction: float = NOMINAL_SPLIT

    def __post_init__(self):
        for name in ("transmitted_fraction", "reflected_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def lossless(cls):
        return cls(LOSSLESS_SPLIT, LOSSLESS_SPLIT)

    def fractions(self, n_branches):
        """Amplitude factor per branch.

        Two branches use (transmitted, reflected).  More branches are fed by a
        splitter tree, so every branch after the first takes the reflected
        factor; a single branch is unsplit.
        """
        if n_branches == 1:
            return (1.0,)
        return (self.transmitted_fraction,) + (self.reflected_fraction,) * (n_branches - 1)


def check_mask(theta, shape=None):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2:
        raise ValueError(f"phase mask must be 2-D, got shape {theta.shape}")
    if shape is not None and theta.shape != tuple(shape):
        raise ValueError(f"phase mask shape {theta.shape} does not match grid {tuple(shape)}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("phase mask contains NaN or Inf")
    return theta


def modulate(field, theta):
    """Multiply ``field`` by ``exp(j theta)`` pixelwise."""
    theta = check_mask(theta)
    field = as_field(field, theta.shape)
    return field * np.exp(1j * theta)


def diffractive_layer(field, theta, spec):
    """Propagate to the mask plane, then apply the mask."""
    return modulate(propagate(field, spec), theta)


def split(field, bs):
    field = as_field(field)
    return bs.transmitted_fraction * field, bs.reflected_fraction * field


def combine(a, b):
    """Coherent superposition of two fields on the same plane."""
    a = as_field(a)
    b = as_field(b, a.shape[-2:])
    return a + b

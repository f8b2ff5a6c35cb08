import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtd2nn.field import (PropagationSpec, propagate, propagate_adjoint, propagate_direct,
                          transfer_function)

from conftest import random_field


def test_transfer_function_is_unit_modulus():
    H = transfer_function(PropagationSpec(grid_rows=32, grid_cols=48))
    np.testing.assert_allclose(np.abs(H), 1.0, atol=1e-15)


def test_transfer_function_dc_sample():
    spec = PropagationSpec(wavelength=0.6e-3, layer_distance=7e-3, grid_rows=8, grid_cols=8)
    H = transfer_function(spec)
    assert H[0, 0] == pytest.approx(np.exp(1j * spec.wavenumber * spec.layer_distance), abs=1e-12)


def test_dc_phase_vanishes_for_default_optics():
    # kd = 2 pi * 0.03 / 0.00075 = 2 pi * 40
    spec = PropagationSpec(wavelength=0.75e-3, layer_distance=30e-3, grid_rows=8, grid_cols=8)
    assert spec.wavenumber * spec.layer_distance / (2 * np.pi) == pytest.approx(40.0)
    assert abs(np.angle(transfer_function(spec)[0, 0])) < 1e-9


def test_transfer_function_sign_and_frequencies():
    spec = PropagationSpec(grid_rows=8, grid_cols=8)
    H = transfer_function(spec)
    fx = 1 / (8 * spec.pixel_pitch)
    expected = np.exp(-1j * np.pi * spec.wavelength * spec.layer_distance * fx ** 2)
    assert H[0, 1] == pytest.approx(expected, abs=1e-12)
    # FFT ordering: index N/2 holds the most negative frequency -N/(2 N pitch)
    f_nyq = -4 / (8 * spec.pixel_pitch)
    assert H[4, 0] == pytest.approx(np.exp(-1j * np.pi * spec.wavelength * spec.layer_distance
                                           * f_nyq ** 2), abs=1e-12)


@pytest.mark.parametrize("kwargs", [
    {"wavelength": 0.0}, {"layer_distance": -1.0}, {"pixel_pitch": float("nan")},
    {"grid_rows": 7}, {"grid_cols": 0}, {"grid_rows": 2.5},
])
def test_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        PropagationSpec(**kwargs)


def test_uniform_field_energy(rng):
    spec = PropagationSpec(grid_rows=64, grid_cols=64)
    u = np.ones(spec.shape, complex)
    out = propagate(u, spec)
    rel = abs(np.sum(abs(out) ** 2) - np.sum(abs(u) ** 2)) / np.sum(abs(u) ** 2)
    assert rel < 1e-12


def test_point_source_spreads():
    spec = PropagationSpec(grid_rows=32, grid_cols=32)
    u = np.zeros(spec.shape, complex)
    u[16, 16] = 1.0
    out = propagate(u, spec)
    assert np.sum(abs(out) ** 2) == pytest.approx(1.0, rel=1e-12)
    assert np.count_nonzero(abs(out) > 1e-6) > 1


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        propagate(np.ones((8, 10)), PropagationSpec(grid_rows=8, grid_cols=8))


def test_nonfinite_field_rejected():
    u = np.ones((8, 8), complex)
    u[1, 1] = np.nan
    with pytest.raises(ValueError):
        propagate(u, PropagationSpec(grid_rows=8, grid_cols=8))


@pytest.mark.parametrize("n", [8, 16])
def test_matches_direct_convolution(rng, n):
    spec = PropagationSpec(grid_rows=n, grid_cols=n)
    u = random_field(rng, spec.shape)
    assert np.max(abs(propagate(u, spec) - propagate_direct(u, spec))) < 1e-9


def test_direct_rectangular_and_batched(rng):
    spec = PropagationSpec(grid_rows=6, grid_cols=10)
    u = random_field(rng, (3, *spec.shape))
    assert np.max(abs(propagate(u, spec) - propagate_direct(u, spec))) < 1e-9


def test_direct_delta_gives_impulse_response():
    spec = PropagationSpec(grid_rows=8, grid_cols=8)
    delta = np.zeros(spec.shape, complex)
    delta[0, 0] = 1
    h = np.fft.ifft2(transfer_function(spec))
    np.testing.assert_allclose(propagate_direct(delta, spec), h, atol=1e-13)


def test_direct_is_linear(rng):
    spec = PropagationSpec(grid_rows=8, grid_cols=8)
    u, v = random_field(rng, spec.shape), random_field(rng, spec.shape)
    a, b = 0.3 - 1.2j, 2.0 + 0.5j
    lhs = propagate_direct(a * u + b * v, spec)
    rhs = a * propagate_direct(u, spec) + b * propagate_direct(v, spec)
    assert np.max(abs(lhs - rhs)) < 1e-12


def test_direct_cap():
    spec = PropagationSpec(grid_rows=66, grid_cols=66)
    with pytest.raises(ValueError, match="cap"):
        propagate_direct(np.ones(spec.shape), spec)


def test_padded_mode_matches_padded_direct(rng):
    spec = PropagationSpec(grid_rows=8, grid_cols=8, pad=True)
    u = random_field(rng, spec.shape)
    assert np.max(abs(propagate(u, spec) - propagate_direct(u, spec))) < 1e-9


def test_round_trip_with_conjugate_filter(rng):
    spec = PropagationSpec(grid_rows=32, grid_cols=32)
    u = random_field(rng, spec.shape)
    assert np.max(abs(propagate_adjoint(propagate(u, spec), spec) - u)) < 1e-10


def test_semigroup():
    spec = PropagationSpec(grid_rows=16, grid_cols=16)
    u = np.random.default_rng(1).normal(size=spec.shape).astype(complex)
    twice = propagate(propagate(u, spec), spec)
    np.testing.assert_allclose(twice, propagate(u, spec.with_distance(2 * spec.layer_distance)),
                               atol=1e-9)


grid_sizes = st.sampled_from([2, 4, 6, 8, 10, 16])


@settings(max_examples=40, deadline=None)
@given(rows=grid_sizes, cols=grid_sizes, seed=st.integers(0, 2**32 - 1),
       distance=st.floats(1e-3, 0.2), wavelength=st.floats(1e-4, 2e-3))
def test_energy_conservation_property(rows, cols, seed, distance, wavelength):
    spec = PropagationSpec(wavelength, distance, 0.4e-3, rows, cols)
    u = random_field(np.random.default_rng(seed), spec.shape)
    e_in = np.sum(abs(u) ** 2)
    assert abs(np.sum(abs(propagate(u, spec)) ** 2) - e_in) / e_in < 1e-12


@settings(max_examples=25, deadline=None)
@given(n=st.sampled_from([2, 4, 8, 12, 16]), seed=st.integers(0, 2**32 - 1))
def test_oracle_equivalence_property(n, seed):
    spec = PropagationSpec(grid_rows=n, grid_cols=n)
    u = random_field(np.random.default_rng(seed), spec.shape)
    assert np.max(abs(propagate(u, spec) - propagate_direct(u, spec))) < 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.complex_numbers(max_magnitude=10),
       b=st.complex_numbers(max_magnitude=10))
def test_linearity_property(seed, a, b):
    spec = PropagationSpec(grid_rows=16, grid_cols=16)
    rng = np.random.default_rng(seed)
    u, v = random_field(rng, spec.shape), random_field(rng, spec.shape)
    lhs = propagate(a * u + b * v, spec)
    rhs = a * propagate(u, spec) + b * propagate(v, spec)
    assert np.max(abs(lhs - rhs)) <= 1e-12 * max(np.max(abs(rhs)), 1e-300)

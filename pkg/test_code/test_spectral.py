from __future__ import annotations

from math import pi

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stable_averaging.spectral import (
    SineGrid,
    SpectralField,
    SpectrumSpec,
    embed,
    from_grid,
    hs_norm,
    project,
    semigroup_apply,
    smoothing_ratio,
    to_grid,
)


coefficients = arrays(np.float64, 6, elements=st.floats(-100.0, 100.0, allow_nan=False))


def test_dirichlet_eigenvalues() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(4)
    np.testing.assert_allclose(spectrum.eigenvalues, pi**2 * np.array([1.0, 4.0, 9.0, 16.0]))
    assert spectrum.lambda_1 == pytest.approx(pi**2)
    assert spectrum.growth_exponent() == 2.0


def test_spectrum_rejects_bad_eigenvalues() -> None:
    with pytest.raises(ValueError):
        SpectrumSpec(eigenvalues=np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        SpectrumSpec(eigenvalues=np.array([-1.0, 2.0]))
    with pytest.raises(ValueError):
        SpectrumSpec.dirichlet_laplacian_1d(0)


def test_fitted_growth_exponent_for_custom_spectrum() -> None:
    k = np.arange(1, 9, dtype=np.float64)
    spectrum = SpectrumSpec(eigenvalues=3.0 * k**1.5)
    assert spectrum.growth_exponent() == pytest.approx(1.5)


def test_field_validation() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(3)
    with pytest.raises(ValueError):
        SpectralField(coeffs=np.zeros(4), spectrum=spectrum)
    with pytest.raises(ValueError):
        SpectralField(coeffs=np.array([0.0, np.nan, 0.0]), spectrum=spectrum)
    other = SpectrumSpec(eigenvalues=np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        SpectralField.zeros(spectrum) + SpectralField.zeros(other)


def test_field_arithmetic() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(3)
    first = SpectralField(coeffs=np.array([1.0, 2.0, 3.0]), spectrum=spectrum)
    second = SpectralField.basis(spectrum, 2, 5.0)
    np.testing.assert_allclose((first + second).coeffs, [1.0, 7.0, 3.0])
    np.testing.assert_allclose((first - second).coeffs, [1.0, -3.0, 3.0])
    np.testing.assert_allclose((2.0 * first).coeffs, [2.0, 4.0, 6.0])
    np.testing.assert_allclose((-first).coeffs, [-1.0, -2.0, -3.0])


@given(coefficients, st.floats(-2.0, 2.0))
def test_hs_norm_weights(coeffs: np.ndarray, s: float) -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(6)
    field = SpectralField(coeffs=coeffs, spectrum=spectrum)
    expected = np.sqrt(np.sum(spectrum.eigenvalues**s * coeffs**2))
    assert hs_norm(field, s) == pytest.approx(expected, rel=1e-12, abs=1e-12)
    assert hs_norm(field, 0.0) == pytest.approx(np.linalg.norm(coeffs), rel=1e-12, abs=1e-12)


def test_hs_norm_over_ensemble() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(2)
    field = SpectralField(coeffs=np.array([[3.0, 4.0], [0.0, 1.0]]), spectrum=spectrum)
    np.testing.assert_allclose(field.norm(), [5.0, 1.0])


def test_semigroup() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(3)
    field = SpectralField(coeffs=np.ones(3), spectrum=spectrum)
    np.testing.assert_array_equal(semigroup_apply(field, 0.0).coeffs, field.coeffs)
    np.testing.assert_allclose(semigroup_apply(field, 0.1).coeffs, np.exp(-0.1 * spectrum.eigenvalues))
    composed = semigroup_apply(semigroup_apply(field, 0.05), 0.05)
    np.testing.assert_allclose(composed.coeffs, semigroup_apply(field, 0.1).coeffs, rtol=1e-12)
    with pytest.raises(ValueError):
        semigroup_apply(field, -1.0)


@settings(max_examples=50)
@given(coefficients, st.floats(1e-4, 2.0))
def test_smoothing_ratio_bounded(coeffs: np.ndarray, t: float) -> None:
    # lambda t e^{-2 lambda t} e^{lambda_1 t} <= 1/e for every mode
    if np.linalg.norm(coeffs) < 1e-6:
        return
    field = SpectralField(coeffs=coeffs, spectrum=SpectrumSpec.dirichlet_laplacian_1d(6))
    assert smoothing_ratio(field, t, 0.0, 1.0) <= np.exp(-0.5) + 1e-9


def test_project_and_embed() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(5)
    field = SpectralField(coeffs=np.arange(1.0, 6.0), spectrum=spectrum)
    low = project(field, 2)
    assert low.spectrum.m == 2
    np.testing.assert_array_equal(low.coeffs, [1.0, 2.0])
    padded = embed(low, spectrum)
    np.testing.assert_array_equal(padded.coeffs, [1.0, 2.0, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        embed(field, SpectrumSpec.dirichlet_laplacian_1d(3))
    with pytest.raises(ValueError):
        project(field, 6)


def test_sine_grid_values_of_a_basis_mode() -> None:
    grid = SineGrid.for_modes(3)
    assert grid.n_points == 7
    np.testing.assert_allclose(grid.nodes, np.arange(1, 8) / 8.0)
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(3)
    values = to_grid(SpectralField.basis(spectrum, 2), grid)
    np.testing.assert_allclose(values, np.sqrt(2.0) * np.sin(2.0 * pi * grid.nodes), atol=1e-14)


def test_sampled_sine_projects_onto_second_mode() -> None:
    grid = SineGrid.for_modes(4)
    field = from_grid(np.sin(2.0 * pi * grid.nodes), grid, 4)
    np.testing.assert_allclose(field.coeffs, [0.0, 1.0 / np.sqrt(2.0), 0.0, 0.0], atol=1e-14)


@given(coefficients)
def test_sine_grid_inverts_band_limited_fields(coeffs: np.ndarray) -> None:
    grid = SineGrid.for_modes(6)
    field = from_grid(grid.values_from_coeffs(coeffs), grid, 6)
    np.testing.assert_allclose(field.coeffs, coeffs, rtol=1e-10, atol=1e-10)


def test_sine_grid_shape_errors() -> None:
    grid = SineGrid.for_modes(4)
    with pytest.raises(ValueError):
        grid.values_from_coeffs(np.zeros(3))
    with pytest.raises(ValueError):
        grid.coeffs_from_values(np.zeros(grid.n_points + 1))
    with pytest.raises(ValueError):
        SineGrid.for_modes(4, n_points=3)
    with pytest.raises(ValueError):
        from_grid(np.zeros(grid.n_points), grid, 4, spectrum=SpectrumSpec.dirichlet_laplacian_1d(3))

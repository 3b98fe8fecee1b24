"""Truncated eigenbasis fields, Sobolev norms, the diagonal semigroup and the sine grid."""
from __future__ import annotations

from dataclasses import dataclass
from math import pi

import numpy as np


DIRICHLET_LAPLACIAN_1D = "dirichlet-laplacian-1d"


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SpectrumSpec:
    eigenvalues: np.ndarray
    preset: str | None = None

    def __post_init__(self) -> None:
        eigenvalues = _frozen_array(self.eigenvalues)
        if eigenvalues.ndim != 1 or eigenvalues.size == 0:
            raise ValueError("Spectrum needs a non-empty 1-d vector of eigenvalues.")
        if not np.all(np.isfinite(eigenvalues)) or np.any(eigenvalues <= 0.0):
            raise ValueError("Eigenvalues must be finite and strictly positive.")
        if np.any(np.diff(eigenvalues) <= 0.0):
            raise ValueError("Eigenvalues must be strictly increasing.")
        object.__setattr__(self, "eigenvalues", eigenvalues)

    @classmethod
    def dirichlet_laplacian_1d(cls, m: int) -> SpectrumSpec:
        if m < 1:
            raise ValueError(f"Mode count must be positive, got {m}.")
        k = np.arange(1, m + 1, dtype=np.float64)
        return cls(eigenvalues=(pi * k) ** 2, preset=DIRICHLET_LAPLACIAN_1D)

    @classmethod
    def from_preset(cls, preset: str, m: int) -> SpectrumSpec:
        if preset == DIRICHLET_LAPLACIAN_1D:
            return cls.dirichlet_laplacian_1d(m)
        raise ValueError(f"Unknown spectrum preset: {preset}")

    @property
    def m(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0])

    def truncated(self, m_target: int) -> SpectrumSpec:
        if not 1 <= m_target <= self.m:
            raise ValueError(f"Cannot truncate a {self.m}-mode spectrum to {m_target} modes.")
        return SpectrumSpec(eigenvalues=self.eigenvalues[:m_target], preset=self.preset)

    def matches(self, other: SpectrumSpec) -> bool:
        return self is other or (
            self.m == other.m and bool(np.array_equal(self.eigenvalues, other.eigenvalues))
        )

    def growth_exponent(self) -> float:
        # lambda_k ~ k^q; exact for the preset, least squares otherwise
        if self.preset == DIRICHLET_LAPLACIAN_1D:
            return 2.0
        if self.m < 3:
            return float("nan")
        k = np.arange(1, self.m + 1, dtype=np.float64)
        slope, _ = np.polyfit(np.log(k[1:]), np.log(self.eigenvalues[1:]), 1)
        return float(slope)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients against e_1..e_m; any leading axes index an ensemble of fields."""

    coeffs: np.ndarray
    spectrum: SpectrumSpec

    def __post_init__(self) -> None:
        coeffs = _frozen_array(self.coeffs)
        if coeffs.ndim == 0 or coeffs.shape[-1] != self.spectrum.m:
            raise ValueError(
                f"Field width {coeffs.shape[-1] if coeffs.ndim else 0} does not match "
                f"spectrum width {self.spectrum.m}."
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("Field coefficients must be finite.")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, spectrum: SpectrumSpec, batch_shape: tuple[int, ...] = ()) -> SpectralField:
        return cls(coeffs=np.zeros(batch_shape + (spectrum.m,)), spectrum=spectrum)

    @classmethod
    def basis(cls, spectrum: SpectrumSpec, k: int, amplitude: float = 1.0) -> SpectralField:
        if not 1 <= k <= spectrum.m:
            raise ValueError(f"Basis index {k} outside 1..{spectrum.m}.")
        coeffs = np.zeros(spectrum.m)
        coeffs[k - 1] = amplitude
        return cls(coeffs=coeffs, spectrum=spectrum)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    def norm(self):
        return hs_norm(self, 0.0)

    def _check_partner(self, other: SpectralField) -> None:
        if not self.spectrum.matches(other.spectrum):
            raise ValueError("Fields belong to different spectra.")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._check_partner(other)
        return SpectralField(coeffs=self.coeffs + other.coeffs, spectrum=self.spectrum)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._check_partner(other)
        return SpectralField(coeffs=self.coeffs - other.coeffs, spectrum=self.spectrum)

    def __mul__(self, scale: float) -> SpectralField:
        return SpectralField(coeffs=self.coeffs * float(scale), spectrum=self.spectrum)

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return SpectralField(coeffs=-self.coeffs, spectrum=self.spectrum)


def hs_norm(field: SpectralField, s: float):
    # negative s is accepted; at finite m every H^s norm is finite
    weights = field.spectrum.eigenvalues ** float(s)
    squared = np.sum(weights * field.coeffs**2, axis=-1)
    result = np.sqrt(squared)
    return float(result) if result.ndim == 0 else result


def semigroup_apply(field: SpectralField, t: float) -> SpectralField:
    if t < 0.0:
        raise ValueError(f"Semigroup time must be nonnegative, got {t}.")
    decay = np.exp(-field.spectrum.eigenvalues * float(t))
    return SpectralField(coeffs=field.coeffs * decay, spectrum=field.spectrum)


def project(field: SpectralField, m_target: int) -> SpectralField:
    """Orthogonal projection onto the first m_target modes, on the truncated spectrum."""
    truncated = field.spectrum.truncated(m_target)
    return SpectralField(coeffs=field.coeffs[..., :m_target], spectrum=truncated)


def embed(field: SpectralField, spectrum: SpectrumSpec) -> SpectralField:
    """Zero-pad a field into a wider spectrum whose leading eigenvalues agree."""
    m = field.spectrum.m
    if spectrum.m < m or not np.array_equal(spectrum.eigenvalues[:m], field.spectrum.eigenvalues):
        raise ValueError("Target spectrum does not extend the field's spectrum.")
    coeffs = np.zeros(field.batch_shape + (spectrum.m,))
    coeffs[..., :m] = field.coeffs
    return SpectralField(coeffs=coeffs, spectrum=spectrum)


def smoothing_ratio(field: SpectralField, t: float, sigma_1: float, sigma_2: float):
    """||e^{tA} f||_{s2} t^{(s2-s1)/2} e^{lambda_1 t/2} / ||f||_{s1}; bounded in t for s1 <= s2."""
    if t <= 0.0:
        raise ValueError("Smoothing ratio needs t > 0.")
    numerator = hs_norm(semigroup_apply(field, t), sigma_2)
    scale = t ** ((sigma_2 - sigma_1) / 2.0) * np.exp(field.spectrum.lambda_1 * t / 2.0)
    return numerator * scale / hs_norm(field, sigma_1)


@dataclass(frozen=True, eq=False)
class SineGrid:
    n_points: int
    m: int
    nodes: np.ndarray
    matrix: np.ndarray

    @classmethod
    def for_modes(cls, m: int, n_points: int | None = None) -> SineGrid:
        # 2m+1 points keep quadratic products of m-band fields alias-free
        resolved = 2 * m + 1 if n_points is None else int(n_points)
        if m < 1:
            raise ValueError(f"Mode count must be positive, got {m}.")
        if resolved < m:
            raise ValueError(f"Sine grid needs n_points >= m ({resolved} < {m}).")
        nodes = np.arange(1, resolved + 1, dtype=np.float64) / (resolved + 1)
        k = np.arange(1, m + 1, dtype=np.float64)
        matrix = np.sqrt(2.0) * np.sin(pi * np.outer(nodes, k))
        return cls(n_points=resolved, m=m, nodes=_frozen_array(nodes), matrix=_frozen_array(matrix))

    def values_from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1] != self.m:
            raise ValueError(f"Coefficient width {coeffs.shape[-1]} does not match grid width {self.m}.")
        return coeffs @ self.matrix.T

    def coeffs_from_values(self, values: np.ndarray, m: int | None = None) -> np.ndarray:
        # discrete sine orthogonality: sum_j 2 sin(k pi xi_j) sin(l pi xi_j) = (n+1) delta_kl
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.n_points:
            raise ValueError(f"Grid sample count {values.shape[-1]} does not match n_points {self.n_points}.")
        width = self.m if m is None else int(m)
        if not 1 <= width <= self.m:
            raise ValueError(f"Requested {width} modes from a {self.m}-mode grid.")
        return (values @ self.matrix[:, :width]) / (self.n_points + 1)


def to_grid(field: SpectralField, grid: SineGrid) -> np.ndarray:
    return grid.values_from_coeffs(field.coeffs)


def from_grid(
    values: np.ndarray,
    grid: SineGrid,
    m: int,
    spectrum: SpectrumSpec | None = None,
) -> SpectralField:
    resolved_spectrum = spectrum or SpectrumSpec.dirichlet_laplacian_1d(m)
    if resolved_spectrum.m != m:
        raise ValueError(f"Spectrum width {resolved_spectrum.m} does not match m = {m}.")
    return SpectralField(coeffs=grid.coeffs_from_values(values, m), spectrum=resolved_spectrum)

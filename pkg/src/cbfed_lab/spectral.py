"""Truncated Fourier representation of periodic vector fields on the d-torus.

Conventions
-----------
A field is expanded as ``y(x) = sum_k yhat_k exp(2*pi*i k.x / L)`` over the
integer lattice retained by the grid.  Coefficients are stored in numpy's
``fftn`` layout, scaled by ``1/N^d`` so that Parseval reads

    integral |y|^2 dx = L^d * sum_k |yhat_k|^2.

Modes on the Nyquist planes (|k_j| = N/2) are forced to zero: every retained
mode then belongs to a clean conjugate pair and first derivatives are
unambiguous.  Nonlinear products are evaluated on an enlarged collocation
grid (3/2 rule by default) and truncated back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "FourierField",
    "PhysicalField",
    "to_physical",
    "to_fourier",
    "leray_project",
    "stokes_apply",
    "norm",
    "inner_h",
    "random_field",
    "shear_field",
    "single_mode_field",
]


class ConfigurationError(ValueError):
    """Inconsistent grid/shape input."""


class DomainError(ValueError):
    """Input outside an operation's admissible domain."""


@dataclass(frozen=True)
class GridSpec:
    """Spectral grid: d-torus of period ``length`` with ``modes`` modes per axis."""

    dim: int
    modes: int
    length: float = 1.0
    dealias_factor: float = 1.5

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.modes < 8 or self.modes % 2 != 0:
            raise ConfigurationError(f"modes must be even and >= 8, got {self.modes}")
        if self.length <= 0:
            raise ConfigurationError("length must be positive")
        if self.dealias_factor < 1.5:
            raise ConfigurationError("dealias factor below the 3/2 rule")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.modes,) * self.dim

    @property
    def padded_modes(self) -> int:
        return _padded_size(self.modes, self.dealias_factor)

    @property
    def padded_shape(self) -> tuple[int, ...]:
        return (self.padded_modes,) * self.dim

    @property
    def n_points(self) -> int:
        return self.modes ** self.dim

    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers per axis, shape (dim, modes, ..., modes)."""
        return _wavenumbers(self.dim, self.modes)

    def k_squared(self) -> np.ndarray:
        return _k_squared(self.dim, self.modes)

    def stokes_eigenvalues(self) -> np.ndarray:
        """lambda_k = (2*pi/L)^2 |k|^2 on the coefficient layout."""
        return (2.0 * np.pi / self.length) ** 2 * self.k_squared()

    def nyquist_mask(self) -> np.ndarray:
        """True on modes kept after zeroing the Nyquist planes."""
        return _open_band_mask(self.dim, self.modes)

    def nodes(self, padded: bool = False) -> np.ndarray:
        """Collocation nodes, shape (dim, M, ..., M)."""
        m = self.padded_modes if padded else self.modes
        axes = [np.arange(m) * (self.length / m) for _ in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


def _padded_size(n: int, factor: float) -> int:
    m = math.ceil(n * factor)
    return m + (m % 2)


@lru_cache(maxsize=32)
def _wavenumbers(dim: int, n: int) -> np.ndarray:
    k1 = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
    grids = np.meshgrid(*[k1] * dim, indexing="ij")
    out = np.stack(grids)
    out.setflags(write=False)
    return out

@lru_cache(maxsize=32)
def _k_squared(dim: int, n: int) -> np.ndarray:
    k = _wavenumbers(dim, n)
    out = np.sum(k.astype(np.float64) ** 2, axis=0)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _open_band_mask(dim: int, n: int) -> np.ndarray:
    k = _wavenumbers(dim, n)
    out = np.all(np.abs(k) < n // 2, axis=0)
    out.setflags(write=False)
    return out


@dataclass
class FourierField:
    """A real d-component vector field stored as truncated Fourier coefficients."""

    grid: GridSpec
    coeffs: np.ndarray  # complex128, shape (dim, N, ..., N)
    divergence_free: bool = False

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.shape
        if self.coeffs.shape != expected:
            raise ConfigurationError(
                f"coefficient shape {self.coeffs.shape} != {expected}")
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)

    # -- basic algebra ----------------------------------------------------
    def copy(self) -> "FourierField":
        return FourierField(self.grid, self.coeffs.copy(), self.divergence_free)

    def __add__(self, other: "FourierField") -> "FourierField":
        _check_same_grid(self, other)
        return FourierField(self.grid, self.coeffs + other.coeffs,
                            self.divergence_free and other.divergence_free)

    def __sub__(self, other: "FourierField") -> "FourierField":
        _check_same_grid(self, other)
        return FourierField(self.grid, self.coeffs - other.coeffs,
                            self.divergence_free and other.divergence_free)

    def __mul__(self, a: float) -> "FourierField":
        return FourierField(self.grid, self.coeffs * a, self.divergence_free)

    __rmul__ = __mul__

    def __neg__(self) -> "FourierField":
        return self * (-1.0)

    @classmethod
    def zero(cls, grid: GridSpec, divergence_free: bool = True) -> "FourierField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape, dtype=np.complex128),
                   divergence_free)

    # -- diagnostics --------------------------------------------------------
    def hermitian_defect(self) -> float:
        """Max |coeff(-k) - conj(coeff(k))| over the lattice."""
        flipped = _reverse_modes(self.coeffs)
        return float(np.max(np.abs(flipped.conj() - self.coeffs)))

    def divergence_defect(self) -> float:
        """Max over k != 0 of |k . coeff(k)| / ||coeff(k)||."""
        k = self.grid.wavenumbers().astype(np.float64)
        dot = np.abs(np.sum(k * self.coeffs, axis=0))
        mag = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))
        mask = mag > 0
        mask[(0,) * self.grid.dim] = False
        if not np.any(mask):
            return 0.0
        return float(np.max(dot[mask] / mag[mask]))


def _check_same_grid(a: FourierField, b: FourierField) -> None:
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")


def _reverse_modes(coeffs: np.ndarray) -> np.ndarray:
    """coeff(k) -> coeff(-k) in fftn layout (index n -> -n mod N per axis)."""
    out = coeffs
    for ax in range(1, coeffs.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


@dataclass
class PhysicalField:
    """Collocated values on the dealiased physical grid."""

    grid: GridSpec
    values: np.ndarray  # float64, shape (dim, M, ..., M)

    def __post_init__(self):
        expected = (self.grid.dim,) + self.grid.padded_shape
        if self.values.shape != expected:
            raise ConfigurationError(
                f"value shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("non-finite physical values")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def _mode_slices(n_small: int) -> list[slice]:
    """Slices selecting the open band |k| < n_small/2 in fftn layout."""
    half = n_small // 2
    return [slice(0, half), slice(-(half - 1), None)]


def _pad_coeffs(coeffs: np.ndarray, n_small: int, n_big: int) -> np.ndarray:
    dim = coeffs.ndim - 1
    out = np.zeros((coeffs.shape[0],) + (n_big,) * dim, dtype=np.complex128)
    for idx_small in _band_index_product(dim, n_small):
        idx_big = idx_small  # identical slices address the same wavenumbers
        out[(slice(None),) + idx_big] = coeffs[(slice(None),) + idx_small]
    return out


def _truncate_coeffs(coeffs: np.ndarray, n_big: int, n_small: int) -> np.ndarray:
    dim = coeffs.ndim - 1
    out = np.zeros((coeffs.shape[0],) + (n_small,) * dim, dtype=np.complex128)
    for idx in _band_index_product(dim, n_small):
        out[(slice(None),) + idx] = coeffs[(slice(None),) + idx]
    return out


@lru_cache(maxsize=32)
def _band_index_product(dim: int, n_small: int) -> tuple:
    from itertools import product
    return tuple(product(_mode_slices(n_small), repeat=dim))


def to_physical(f: FourierField) -> PhysicalField:
    """Evaluate on the dealiased collocation grid (zero-padded inverse FFT)."""
    g = f.grid
    m = g.padded_modes
    padded = _pad_coeffs(f.coeffs, g.modes, m)
    axes = tuple(range(1, g.dim + 1))
    vals = sfft.ifftn(padded * (m ** g.dim), axes=axes).real
    return PhysicalField(g, np.ascontiguousarray(vals))


def to_fourier(p: PhysicalField) -> FourierField:
    """Transform collocated values back, truncating to the retained band."""
    g = p.grid
    m = g.padded_modes
    axes = tuple(range(1, g.dim + 1))
    big = sfft.fftn(p.values, axes=axes) / (m ** g.dim)
    # Truncation copies the open band only, so Nyquist planes come out zero.
    coeffs = _truncate_coeffs(big, m, g.modes)
    return FourierField(g, coeffs)


def zero_nyquist(coeffs: np.ndarray) -> np.ndarray:
    """Zero Nyquist planes in place (axis index N/2 per spatial axis)."""
    for ax in range(1, coeffs.ndim):
        n = coeffs.shape[ax]
        idx = [slice(None)] * coeffs.ndim
        idx[ax] = n // 2
        coeffs[tuple(idx)] = 0.0
    return coeffs


def values_to_field(grid: GridSpec, values: np.ndarray) -> FourierField:
    """Sample values given on the *unpadded* N^d grid into a FourierField."""
    axes = tuple(range(1, grid.dim + 1))
    coeffs = sfft.fftn(values, axes=axes) / grid.n_points
    zero_nyquist(coeffs)
    return FourierField(grid, coeffs)


# ---------------------------------------------------------------------------
# projections and operators
# ---------------------------------------------------------------------------

DIVFREE_TOL = 1e-12


@lru_cache(maxsize=32)
def _leray_arrays(dim: int, n: int):
    k = _wavenumbers(dim, n).astype(np.float64)
    k2 = _k_squared(dim, n).copy()
    k2[(0,) * dim] = 1.0  # k = 0 untouched; avoids 0/0
    k2.setflags(write=False)
    return k, k2


def leray_project(f: FourierField) -> FourierField:
    """Orthogonal projection onto divergence-free fields: I - k k^T/|k|^2 per mode."""
    g = f.grid
    k, k2 = _leray_arrays(g.dim, g.modes)
    dot = np.sum(k * f.coeffs, axis=0)
    coeffs = f.coeffs - k * (dot / k2)
    zero = (slice(None),) + (0,) * g.dim
    coeffs[zero] = f.coeffs[zero]
    return FourierField(g, coeffs, divergence_free=True)


def stokes_apply(f: FourierField) -> FourierField:
    """Apply A = -Laplacian on divergence-free fields (diagonal, lambda_k)."""
    if f.divergence_defect() > 1e-8:
        raise DomainError("stokes_apply requires a divergence-free field")
    lam = f.grid.stokes_eigenvalues()
    return FourierField(f.grid, f.coeffs * lam, divergence_free=True)


def inner_h(f: FourierField, g: FourierField) -> float:
    """H inner product (f, g) = integral f.g dx via Parseval."""
    _check_same_grid(f, g)
    ld = f.grid.length ** f.grid.dim
    return float(np.real(np.sum(f.coeffs * np.conj(g.coeffs))) * ld)


def norm(f: FourierField, which: str = "H", p: float | None = None) -> float:
    """Norms used throughout: H, gradH, V, D(A), or Lp by quadrature."""
    g = f.grid
    ld = g.length ** g.dim
    if which == "H":
        return math.sqrt(np.sum(np.abs(f.coeffs) ** 2) * ld)
    if which == "gradH":
        lam = g.stokes_eigenvalues()
        return math.sqrt(np.sum(lam * np.abs(f.coeffs) ** 2) * ld)
    if which == "V":
        lam = g.stokes_eigenvalues()
        return math.sqrt(np.sum((1.0 + lam) * np.abs(f.coeffs) ** 2) * ld)
    if which == "D(A)":
        lam = g.stokes_eigenvalues()
        return math.sqrt(np.sum(lam ** 2 * np.abs(f.coeffs) ** 2) * ld)
    if which == "Lp":
        if p is None or p < 1:
            raise DomainError("Lp norm needs p >= 1")
        vals = to_physical(f).values
        return lp_norm_values(g, vals, p)
    raise DomainError(f"unknown norm kind {which!r}")


def lp_norm_values(grid: GridSpec, values: np.ndarray, p: float) -> float:
    """L^p norm of the pointwise Euclidean magnitude, physical-grid quadrature."""
    mag2 = np.sum(values ** 2, axis=0)
    cell = (grid.length / values.shape[1]) ** grid.dim
    return float((np.sum(mag2 ** (p / 2.0)) * cell) ** (1.0 / p))


def dual_norm_surrogate(f: FourierField) -> float:
    """Spectral dual-norm scale ||(I+A)^{-1/2} f||_H used for V' diagnostics."""
    g = f.grid
    lam = g.stokes_eigenvalues()
    ld = g.length ** g.dim
    return math.sqrt(np.sum(np.abs(f.coeffs) ** 2 / (1.0 + lam) * ld))


# ---------------------------------------------------------------------------
# field constructors
# ---------------------------------------------------------------------------

def shear_field(grid: GridSpec, amplitude: float = 1.0, wavenumber: int = 1) -> FourierField:
    """Parallel shear (a sin(2*pi m x_2 / L), 0, ...): divergence-free eigenmode."""
    f = FourierField.zero(grid)
    idx_plus = [0] * grid.dim
    idx_minus = [0] * grid.dim
    idx_plus[1] = wavenumber % grid.modes
    idx_minus[1] = (-wavenumber) % grid.modes
    f.coeffs[(0,) + tuple(idx_plus)] = amplitude / 2.0j
    f.coeffs[(0,) + tuple(idx_minus)] = -amplitude / 2.0j
    f.divergence_free = True
    return f


def single_mode_field(grid: GridSpec, k: tuple[int, ...],
                      amplitude: np.ndarray) -> FourierField:
    """Real field a * cos-type mode: amplitude * (e^{ik.x} + e^{-ik.x}) / 2."""
    if len(k) != grid.dim:
        raise ConfigurationError("wavenumber arity mismatch")
    f = FourierField.zero(grid, divergence_free=False)
    amp = np.asarray(amplitude, dtype=np.complex128)
    ip = tuple(ki % grid.modes for ki in k)
    im = tuple((-ki) % grid.modes for ki in k)
    for c in range(grid.dim):
        f.coeffs[(c,) + ip] += amp[c] / 2.0
        f.coeffs[(c,) + im] += np.conj(amp[c]) / 2.0
    return f


def restrict_field(f: FourierField, grid: GridSpec) -> FourierField:
    """Restrict to a coarser grid's retained band (for refinement studies)."""
    if grid.modes > f.grid.modes or grid.dim != f.grid.dim:
        raise ConfigurationError("target grid must be a coarsening")
    out = FourierField.zero(grid, divergence_free=f.divergence_free)
    for idx in _band_index_product(grid.dim, grid.modes):
        out.coeffs[(slice(None),) + idx] = f.coeffs[(slice(None),) + idx]
    return out


def random_field(grid: GridSpec, rng: np.random.Generator, kmax: int | None = None,
                 amplitude: float = 1.0, decay: float = 2.0,
                 divergence_free: bool = True) -> FourierField:
    """Random real band-limited field with |k|^-decay spectral falloff."""
    if kmax is None:
        kmax = grid.modes // 4
    kmax = min(kmax, grid.modes // 2 - 1)
    shape = (grid.dim,) + grid.shape
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k = grid.wavenumbers()
    k2 = grid.k_squared()
    band = np.all(np.abs(k) <= kmax, axis=0)
    envelope = np.where(band, (1.0 + k2) ** (-decay / 2.0), 0.0)
    coeffs = raw * envelope
    # Hermitian symmetrization makes the field real-valued.
    coeffs = 0.5 * (coeffs + _reverse_modes(coeffs).conj())
    zero_nyquist(coeffs)
    f = FourierField(grid, coeffs)
    if divergence_free:
        f = leray_project(f)
    h = norm(f, "H")
    if h > 0:
        f = f * (amplitude / h)
    return f

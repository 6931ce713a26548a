"""Trace-class noise: covariance (I+A)^{-eps}, eigenbasis, sampling, OU process.

The covariance acts diagonally on a real orthonormal basis of the retained
divergence-free subspace: d constant modes at k = 0 and, for each conjugate
pair {k, -k}, (d-1) polarizations times a cosine and a sine mode, all with
Stokes eigenvalue lambda_k = (2 pi / L)^2 |k|^2 and covariance eigenvalue
mu_k = (1 + lambda_k)^{-eps}.

Every random draw is keyed by (master seed, path, step) through the
counter-based generator, so paths reproduce bit-identically under any
execution schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .deterministic import TimeGrid, Trajectory
from .operators import ModelParams
from .spectral import DomainError, FourierField, GridSpec, norm

__all__ = [
    "NoiseSpec",
    "EigenMode",
    "NoiseBasis",
    "enumerate_basis",
    "trace_q",
    "trace_aq",
    "sqrtq_apply",
    "invsqrtq_apply",
    "wiener_increment",
    "ou_path",
    "ou_stationary_variance",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Covariance exponent, overall amplitude and the seeding policy."""

    eps: float = 2.5
    amplitude: float = 1.0
    master_seed: int = 0

    def validate(self, dim: int) -> None:
        if self.eps <= dim / 2 + 1:
            raise DomainError(
                f"covariance exponent must exceed d/2 + 1 = {dim / 2 + 1}")
        if self.amplitude < 0:
            raise DomainError("noise amplitude must be nonnegative")


@dataclass(frozen=True)
class EigenMode:
    """One real eigenmode of the covariance operator."""

    wavenumber: tuple[int, ...]
    stokes_eigenvalue: float
    covariance_eigenvalue: float
    polarization: tuple[float, ...]
    phase: str  # "const" | "cos" | "sin"


def _half_lattice(grid: GridSpec) -> np.ndarray:
    """One representative per conjugate pair, open band, k != 0."""
    half = grid.modes // 2 - 1
    axes = [np.arange(-half, half + 1)] * grid.dim
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    keep = []
    for k in pts:
        for c in k:
            if c > 0:
                keep.append(k)
                break
            if c < 0:
                break
    return np.array(keep, dtype=np.int64)


def _polarizations(k: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the plane orthogonal to k ((d-1) vectors)."""
    d = k.shape[0]
    kf = k.astype(np.float64)
    if d == 2:
        p = np.array([-kf[1], kf[0]]) / np.linalg.norm(kf)
        return p[None, :]
    ref = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(ref, kf)) > 0.9 * np.linalg.norm(kf):
        ref = np.array([0.0, 1.0, 0.0])
    p1 = np.cross(kf, ref)
    p1 /= np.linalg.norm(p1)
    p2 = np.cross(kf, p1)
    p2 /= np.linalg.norm(p2)
    return np.stack([p1, p2])


class NoiseBasis:
    """Vectorized assembly/projection tables for the covariance eigenbasis."""

    def __init__(self, grid: GridSpec, spec: NoiseSpec):
        spec.validate(grid.dim)
        self.grid = grid
        self.spec = spec
        d = grid.dim
        n = grid.modes
        c_lam = (2.0 * np.pi / grid.length) ** 2

        reps = _half_lattice(grid)
        lam_rep = c_lam * np.sum(reps.astype(np.float64) ** 2, axis=1)
        order = np.lexsort(tuple(reps[:, ax] for ax in reversed(range(d))) + (lam_rep,))
        reps = reps[order]
        lam_rep = lam_rep[order]

        pols, pair_k, pair_lam = [], [], []
        for k, lam in zip(reps, lam_rep):
            for pol in _polarizations(k):
                pols.append(pol)
                pair_k.append(k)
                pair_lam.append(lam)
        self.pair_k = np.array(pair_k, dtype=np.int64)
        self.pair_pol = np.array(pols)
        self.pair_lam = np.array(pair_lam)
        self.pair_mu = (1.0 + self.pair_lam) ** (-spec.eps)

        strides = np.array([n ** (d - 1 - ax) for ax in range(d)], dtype=np.int64)
        self.pair_plus = (self.pair_k % n) @ strides
        self.pair_minus = ((-self.pair_k) % n) @ strides

        # global mode order: d constants first, then (cos, sin) per pair
        self.n_pairs = len(self.pair_k)
        self.n_modes = d + 2 * self.n_pairs
        self.lam = np.concatenate([np.zeros(d), np.repeat(self.pair_lam, 2)])
        self.mu = (1.0 + self.lam) ** (-spec.eps)
        self._ld = grid.length ** d
        self._const_amp = self._ld ** -0.5
        self._pair_amp = 1.0 / (math.sqrt(2.0) * self._ld ** 0.5)

    # -- assembly ---------------------------------------------------------
    def field_from_coefficients(self, c: np.ndarray) -> FourierField:
        """Assemble sum_i c_i e_i as a FourierField."""
        g = self.grid
        d = g.dim
        coeffs = np.zeros((d, g.n_points), dtype=np.complex128)
        coeffs[:, 0] = c[:d] * self._const_amp
        cc = c[d::2]
        cs = c[d + 1::2]
        zpair = (cc - 1j * cs) * self._pair_amp
        contrib = self.pair_pol.T * zpair  # (d, n_pairs)
        coeffs[:, self.pair_plus] += contrib
        coeffs[:, self.pair_minus] += contrib.conj()
        return FourierField(g, coeffs.reshape((d,) + g.shape), divergence_free=True)

    def project(self, f: FourierField) -> np.ndarray:
        """Coefficients (f, e_i)_H of a field against the basis."""
        g = self.grid
        d = g.dim
        flat = f.coeffs.reshape(d, -1)
        out = np.empty(self.n_modes)
        out[:d] = flat[:, 0].real * self._const_amp * self._ld
        fp = np.einsum("pd,dp->p", self.pair_pol, flat[:, self.pair_plus])
        scale = 2.0 * self._pair_amp * self._ld
        out[d::2] = fp.real * scale
        out[d + 1::2] = -fp.imag * scale
        return out

    def modes(self) -> list[EigenMode]:
        d = self.grid.dim
        out = [EigenMode((0,) * d, 0.0, 1.0,
                         tuple(1.0 if i == j else 0.0 for j in range(d)), "const")
               for i in range(d)]
        for j in range(self.n_pairs):
            k = tuple(int(v) for v in self.pair_k[j])
            pol = tuple(float(v) for v in self.pair_pol[j])
            lam = float(self.pair_lam[j])
            mu = float(self.pair_mu[j])
            for phase in ("cos", "sin"):
                out.append(EigenMode(k, lam, mu, pol, phase))
        return out


def enumerate_basis(grid: GridSpec, spec: NoiseSpec) -> list[EigenMode]:
    """Real orthonormal eigenbasis, sorted by Stokes eigenvalue ascending."""
    return NoiseBasis(grid, spec).modes()


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def _tail_bound(grid: GridSpec, eps: float, with_lambda: bool) -> float:
    """Comparison-series bound on the trace mass outside the retained band.

    Lattice points with sup-norm m carry Stokes eigenvalue >= c*m^2; shells
    are summed until the increment is negligible.
    """
    d = grid.dim
    c = (2.0 * np.pi / grid.length) ** 2
    m0 = grid.modes // 2
    total = 0.0
    m = m0
    while True:
        count = (2 * m + 1) ** d - (2 * m - 1) ** d
        lam = c * m * m
        term = count * (d - 1) * (1.0 + lam) ** (-eps)
        if with_lambda:
            term *= lam
        total += term
        if term < 1e-16 * max(total, 1e-300) or m > m0 + 200000:
            break
        m += 1
    return total


def trace_q(grid: GridSpec, spec: NoiseSpec) -> tuple[float, float]:
    """(partial sum of Tr Q over retained modes, tail bound for the rest)."""
    basis = NoiseBasis(grid, spec)
    partial = float(np.sum(basis.mu)) * spec.amplitude ** 2
    return partial, _tail_bound(grid, spec.eps, False) * spec.amplitude ** 2


def trace_aq(grid: GridSpec, spec: NoiseSpec) -> tuple[float, float]:
    """(partial sum of Tr(AQ) over retained modes, tail bound)."""
    basis = NoiseBasis(grid, spec)
    partial = float(np.sum(basis.lam * basis.mu)) * spec.amplitude ** 2
    return partial, _tail_bound(grid, spec.eps, True) * spec.amplitude ** 2


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def sqrtq_apply(f: FourierField, spec: NoiseSpec) -> FourierField:
    """Multiply each mode by amplitude * (1 + lambda_k)^{-eps/2}."""
    lam = f.grid.stokes_eigenvalues()
    mult = spec.amplitude * (1.0 + lam) ** (-spec.eps / 2.0)
    return FourierField(f.grid, f.coeffs * mult, f.divergence_free)


def invsqrtq_apply(f: FourierField, spec: NoiseSpec) -> FourierField:
    """Inverse of sqrtq_apply (well defined since ker Q = {0})."""
    if spec.amplitude == 0:
        raise DomainError("inverse undefined for zero amplitude")
    lam = f.grid.stokes_eigenvalues()
    mult = (1.0 + lam) ** (spec.eps / 2.0) / spec.amplitude
    return FourierField(f.grid, f.coeffs * mult, f.divergence_free)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def wiener_increment(dt: float, basis: NoiseBasis, path: int = 0,
                     step: int = 0) -> FourierField:
    """sqrt(Q) dW over one step: independent N(0, mu_k dt) per mode."""
    if dt <= 0:
        raise DomainError("dt must be positive")
    xi = crng.normals(basis.spec.master_seed, path, step, basis.n_modes)
    amp = basis.spec.amplitude * np.sqrt(basis.mu * dt)
    return basis.field_from_coefficients(amp * xi)


def ou_stationary_variance(mu_k: np.ndarray | float, lam: np.ndarray | float,
                           p: ModelParams, amplitude: float = 1.0) -> np.ndarray | float:
    """Stationary variance amplitude^2 mu_k / (2 (mu lambda_k + alpha)) per mode."""
    return amplitude ** 2 * np.asarray(mu_k) / (2.0 * (p.mu * np.asarray(lam) + p.alpha))


class OUIntegrator:
    """Distributionally exact per-mode update of the linear noise equation.

    dY + (mu A + alpha I) Y dt = sqrt(Q) dW;   per mode
    Y(t+dt) = e^{-nu dt} Y(t) + sigma xi,  sigma^2 = mu_k (1 - e^{-2 nu dt}) / (2 nu)
    with nu = mu lambda_k + alpha.
    """

    def __init__(self, basis: NoiseBasis, p: ModelParams, dt: float):
        self.basis = basis
        self.nu = p.mu * basis.lam + p.alpha
        self.decay = np.exp(-self.nu * dt)
        var = basis.mu * -np.expm1(-2.0 * self.nu * dt) / (2.0 * self.nu)
        self.sigma = basis.spec.amplitude * np.sqrt(var)
        self.dt = dt

    def fresh_state(self) -> np.ndarray:
        return np.zeros(self.basis.n_modes)

    def advance(self, state: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return self.decay * state + self.sigma * xi


def ou_path(grid: GridSpec, tg: TimeGrid, spec: NoiseSpec, p: ModelParams,
            path: int = 0) -> Trajectory:
    """Sample the noise response process from rest at the grid times."""
    basis = NoiseBasis(grid, spec)
    ou = OUIntegrator(basis, p, tg.dt)
    state = ou.fresh_state()
    times = tg.times()
    series = {"norm_H": np.zeros(tg.steps + 1), "sup_abs": np.zeros(tg.steps + 1)}
    snapshots = [(0.0, basis.field_from_coefficients(state))]
    for n in range(tg.steps):
        xi = crng.normals(spec.master_seed, path, n, basis.n_modes, crng.PURPOSE_OU)
        state = ou.advance(state, xi)
        field = basis.field_from_coefficients(state)
        series["norm_H"][n + 1] = norm(field, "H")
        from .spectral import to_physical
        series["sup_abs"][n + 1] = float(np.max(np.abs(to_physical(field).values)))
        if tg.snapshot_stride and (n + 1) % tg.snapshot_stride == 0:
            snapshots.append((times[n + 1], field))
    final = basis.field_from_coefficients(state)
    snapshots.append((times[-1], final))
    return Trajectory(times=times, series=series, snapshots=snapshots, final=final)

"""Model operators for the damped/pumped convective Brinkman-Forchheimer flow.

The evolution operator splits as

    Gamma(y) = mu*A y + alpha*y + B(y) + beta*C1(y) + gamma*C2(y)

with A the Stokes operator, B(y) = P[(y.grad)y] the projected advection,
C1(y) = P[|y|^{r-1} y] the absorption term and C2(y) = P[|y|^{q-1} y] the
damping/pumping term.  Nonlinear terms are evaluated pointwise on the
dealiased collocation grid and truncated back.

``derived_constants`` evaluates the quasi-monotonicity shift constants
eta_1..eta_3 and kappa; the remaining bookkeeping constants for the energy
bounds (eta_4..eta_7, varkappa) live here as plain functions of the model
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .spectral import (
    DomainError,
    FourierField,
    GridSpec,
    PhysicalField,
    inner_h,
    leray_project,
    lp_norm_values,
    norm,
    stokes_apply,
    to_fourier,
    to_physical,
)

__all__ = [
    "ModelParams",
    "DerivedConstants",
    "bilinear_B",
    "trilinear_b",
    "damping_C1",
    "pumping_C2",
    "gamma_apply",
    "gamma_nonlinear",
    "explicit_rhs",
    "derived_constants",
    "monotonicity_gap",
    "c1_monotonicity_gap",
    "commutation_identity_residual",
    "eta4",
    "eta5",
    "eta6",
    "eta7",
    "varkappa",
]


class AdmissibilityError(ValueError):
    """Parameter combination outside the admissible regime."""


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model."""

    mu: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = -0.5
    r: float = 4.0
    q: float = 2.0
    dim: int = 2
    length: float = 1.0

    def __post_init__(self):
        if self.mu <= 0 or self.alpha <= 0 or self.beta < 0:
            raise AdmissibilityError("mu, alpha must be positive and beta nonnegative")
        if self.r < 3:
            raise AdmissibilityError("absorption exponent r must be >= 3")
        if not (1 <= self.q < self.r):
            raise AdmissibilityError("need r > q >= 1")
        # beta = 0 is admitted only as a diagnostic configuration (linear-exactness
        # runs); the monotonicity/steering machinery demands beta > 0.
        if self.beta > 0 and self.r == 3 and 2 * self.beta * self.mu <= 1:
            raise AdmissibilityError("critical case r = 3 requires 2*beta*mu > 1")

    @property
    def torus_volume(self) -> float:
        return self.length ** self.dim


@dataclass(frozen=True)
class DerivedConstants:
    """Quasi-monotonicity constants and the shift kappa >= eta1+eta2+eta3."""

    eta1: float
    eta2: float
    eta3: float
    kappa: float
    eps_p31: float

    def as_dict(self) -> dict:
        return {"eta1": self.eta1, "eta2": self.eta2, "eta3": self.eta3,
                "kappa": self.kappa, "eps_p31": self.eps_p31}


# ---------------------------------------------------------------------------
# bilinear term
# ---------------------------------------------------------------------------

def _padded_spectrum(y: FourierField) -> np.ndarray:
    from .spectral import _pad_coeffs  # internal reuse

    return _pad_coeffs(y.coeffs, y.grid.modes, y.grid.padded_modes)


def _values_from_padded(g: GridSpec, padded: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, g.dim + 1))
    m = g.padded_modes
    return sfft.ifftn(padded * (m ** g.dim), axes=axes).real


def _values_and_gradient(g: GridSpec, padded: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Field values and partial_i y_j on the padded grid via one batched transform."""
    k = _padded_wavenumbers(g)
    m = g.padded_modes
    two_pi_i = 2j * np.pi / g.length
    batch = np.empty((g.dim + 1,) + padded.shape, dtype=np.complex128)
    batch[0] = padded * (m ** g.dim)
    for i in range(g.dim):
        batch[i + 1] = batch[0] * (two_pi_i * k[i])
    axes = tuple(range(2, g.dim + 2))
    out = sfft.ifftn(batch, axes=axes).real
    return out[0], out[1:]


def _gradient_from_padded(g: GridSpec, padded: np.ndarray) -> np.ndarray:
    """partial_i y_j on the padded grid, shape (d, d, M.., M) indexed [i, j]."""
    k = _padded_wavenumbers(g)
    axes = tuple(range(1, g.dim + 1))
    m = g.padded_modes
    two_pi_i = 2j * np.pi / g.length
    grads = [sfft.ifftn(padded * (two_pi_i * m ** g.dim * k[i]), axes=axes).real
             for i in range(g.dim)]
    return np.stack(grads)  # [i, j, x...]


def _gradient_physical(y: FourierField) -> np.ndarray:
    return _gradient_from_padded(y.grid, _padded_spectrum(y))


@lru_cache(maxsize=32)
def _padded_wavenumbers_cached(dim: int, m: int):
    from .spectral import _wavenumbers, _open_band_mask

    k = _wavenumbers(dim, m).astype(np.float64).copy()
    # Nyquist planes of the padded grid carry no retained content; zeroing the
    # wavenumber there keeps odd derivatives unambiguous.
    k[:, ~_open_band_mask(dim, m)] = 0.0
    k.setflags(write=False)
    return k


def _padded_wavenumbers(g: GridSpec):
    return _padded_wavenumbers_cached(g.dim, g.padded_modes)


def bilinear_B(y: FourierField) -> FourierField:
    """B(y) = P[(y.grad)y], dealiased."""
    g = y.grid
    yv, grads = _values_and_gradient(g, _padded_spectrum(y))
    conv = np.einsum("in,ijn->jn", _as_flat(yv), _as_flat2(grads))
    conv = conv.reshape(yv.shape)
    return leray_project(to_fourier(PhysicalField(g, conv)))


def _as_flat(v: np.ndarray) -> np.ndarray:
    return v.reshape(v.shape[0], -1)


def _as_flat2(v: np.ndarray) -> np.ndarray:
    return v.reshape(v.shape[0], v.shape[1], -1)


def trilinear_b(y: FourierField, z: FourierField, w: FourierField) -> float:
    """b(y, z, w) = integral (y.grad)z . w dx by dealiased quadrature."""
    g = y.grid
    yv = to_physical(y).values
    wv = to_physical(w).values
    gz = _gradient_physical(z)
    integrand = np.einsum("in,ijn,jn->n",
                          _as_flat(yv), _as_flat2(gz), _as_flat(wv))
    cell = (g.length / g.padded_modes) ** g.dim
    return float(np.sum(integrand) * cell)


# ---------------------------------------------------------------------------
# absorption / damping terms
# ---------------------------------------------------------------------------

def _power_law_values(values: np.ndarray, exponent: float) -> np.ndarray:
    """|y|^exponent * y pointwise; |y| = 0 maps to 0 (and to y for exponent 0)."""
    mag = np.sqrt(np.sum(values ** 2, axis=0))
    return values * mag ** exponent


def damping_C1(y: FourierField, r: float) -> FourierField:
    """C1(y) = P[|y|^{r-1} y] evaluated on the refined grid."""
    if r < 1:
        raise DomainError("exponent must be >= 1")
    vals = to_physical(y).values
    return leray_project(to_fourier(PhysicalField(y.grid, _power_law_values(vals, r - 1.0))))


def pumping_C2(y: FourierField, q: float) -> FourierField:
    """C2(y) = P[|y|^{q-1} y]; identical mechanics with the secondary exponent."""
    return damping_C1(y, q)


# ---------------------------------------------------------------------------
# assembled operator
# ---------------------------------------------------------------------------

def gamma_apply(y: FourierField, p: ModelParams) -> FourierField:
    """Gamma(y) = mu*A y + alpha*y + B(y) + beta*C1(y) + gamma*C2(y)."""
    lin = FourierField(y.grid, p.mu * stokes_apply(y).coeffs + p.alpha * y.coeffs,
                       divergence_free=y.divergence_free)
    return lin + gamma_nonlinear(y, p)


def gamma_nonlinear(y: FourierField, p: ModelParams) -> FourierField:
    """B(y) + beta*C1(y) + gamma*C2(y), fused into one transform pass."""
    out, _ = explicit_rhs(y, p)
    return out


def explicit_rhs(y: FourierField, p: ModelParams,
                 with_vdiag: bool = False) -> tuple[FourierField, dict]:
    """Nonlinear part of Gamma plus the collocation diagnostics it yields.

    Returns ``(P[(y.grad)y + beta |y|^{r-1}y + gamma |y|^{q-1}y], diag)`` with
    ``diag`` holding the L^{r+1} and L^{q+1} norms measured on the same grid.
    ``with_vdiag`` adds the weighted gradient integrals used by the V-level
    energy bounds.
    """
    g = y.grid
    yv, grads = _values_and_gradient(g, _padded_spectrum(y))
    conv = np.einsum("in,ijn->jn", _as_flat(yv), _as_flat2(grads))
    conv = conv.reshape(yv.shape)
    mag = np.sqrt(np.sum(yv ** 2, axis=0))
    total = conv + (p.beta * mag ** (p.r - 1.0) + p.gamma * mag ** (p.q - 1.0)) * yv
    cell = (g.length / g.padded_modes) ** g.dim
    diag = {
        "lr1": float(np.sum(mag ** (p.r + 1.0)) * cell),  # ||y||_{L^{r+1}}^{r+1}
        "lq1": float(np.sum(mag ** (p.q + 1.0)) * cell),
    }
    if with_vdiag:
        grad_sq = np.sum(grads ** 2, axis=(0, 1))
        diag["pw_grad_r"] = float(np.sum(mag ** (p.r - 1.0) * grad_sq) * cell)
        diag["pw_grad_1"] = float(np.sum(mag ** 2 * grad_sq) * cell)
    return leray_project(to_fourier(PhysicalField(g, total))), diag


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def derived_constants(p: ModelParams, eps_p31: float = 1.0) -> DerivedConstants:
    """eta_1..eta_3 and kappa = eta1 + eta2 + eta3 by direct formula evaluation."""
    if p.r == p.q:
        raise DomainError("constants undefined for r = q")
    if eps_p31 <= 0:
        raise DomainError("eps_p31 must be positive")
    if p.beta == 0:
        raise AdmissibilityError("quasi-monotonicity constants require beta > 0")
    r, q, beta, mu, ag = p.r, p.q, p.beta, p.mu, abs(p.gamma)
    if q == 1 or ag == 0:
        eta1 = eta2 = 0.0
    else:
        expo = (q - 1.0) / (r - q)
        eta1 = (r - q) / (r - 1.0) * ((2.0 ** q) * q * ag * (q - 1.0) / (beta * (r - 1.0))) ** expo
        eta2 = (r - q) / (r - 1.0) * ((2.0 ** (q + 1)) * q * ag * (q - 1.0) / (beta * (r - 1.0))) ** expo
    if p.r == 3:
        if 2 * beta * mu <= 1:
            raise AdmissibilityError("critical case r = 3 requires 2*beta*mu > 1")
        eta3 = 0.0
    else:
        eta3 = (r - 3.0) / (2.0 * mu * (r - 1.0)) * (4.0 / (eps_p31 * beta * mu * (r - 1.0))) ** (2.0 / (r - 3.0))
    return DerivedConstants(eta1, eta2, eta3, eta1 + eta2 + eta3, eps_p31)


def eta4(p: ModelParams) -> float:
    if p.r == 3:
        return 0.0
    r = p.r
    return (r - 3.0) / (2.0 * p.mu * (r - 1.0)) * (8.0 / (p.beta * p.mu * (r - 1.0))) ** (2.0 / (r - 3.0))


def eta5(p: ModelParams) -> float:
    r, q, ag = p.r, p.q, abs(p.gamma)
    if ag == 0:
        return 0.0
    return ((q * ag) ** ((r - 1.0) / (r - q))
            * ((4.0 / p.beta) * ((q - 1.0) / (r - 1.0))) ** ((q - 1.0) / (r - q))
            * ((r - q) / (r - 1.0)))


def eta6(p: ModelParams, theta: float) -> float:
    """Critical-case damping constant; requires r = 3 and theta in (0, 1)."""
    if not (0 < theta < 1):
        raise DomainError("theta must lie in (0, 1)")
    q, ag = p.q, abs(p.gamma)
    if ag == 0:
        return 0.0
    if q == 1:
        return ag  # linear secondary term: |gamma (y, A y)| = |gamma| ||grad y||^2
    return (2.0 * theta * p.mu * ag * q * (q - 1.0)) ** ((3.0 - q) / (q - 1.0)) * ((3.0 - q) / 2.0)


def eta7(p: ModelParams) -> float:
    if p.r == 3:
        return 0.0
    r = p.r
    return (r - 3.0) / (2.0 * p.mu * (r - 1.0)) * (2.0 / (p.beta * p.mu * (r - 1.0))) ** (2.0 / (r - 3.0))


def varkappa(p: ModelParams) -> float:
    """Young-inequality constant absorbing the pumping term into absorption."""
    r, q = p.r, p.q
    return (p.beta * (r + 1.0) / (q + 1.0)) ** ((q + 1.0) / (r - q)) * ((r - q) / (r + 1.0))


# ---------------------------------------------------------------------------
# inequality probes
# ---------------------------------------------------------------------------

def monotonicity_gap(y: FourierField, z: FourierField, kappa: float,
                     p: ModelParams) -> float:
    """((Gamma + kappa I)(y) - (Gamma + kappa I)(z), y - z)."""
    diff = y - z
    gy = gamma_apply(y, p)
    gz = gamma_apply(z, p)
    return inner_h(gy - gz, diff) + kappa * norm(diff, "H") ** 2


def c1_monotonicity_gap(y: FourierField, z: FourierField, r: float) -> tuple[float, float]:
    """(<C1(y)-C1(z), y-z>, 2^{1-r} ||y-z||_{L^{r+1}}^{r+1}) for the lower bound."""
    lhs = inner_h(damping_C1(y, r) - damping_C1(z, r), y - z)
    rhs = 2.0 ** (1.0 - r) * norm(y - z, "Lp", p=r + 1.0) ** (r + 1.0)
    return lhs, rhs


def commutation_identity_residual(y: FourierField, r: float) -> float:
    """Relative defect of the torus integration-by-parts identity.

    LHS = int (-Lap y) . |y|^{r-1} y dx
    RHS = int |grad y|^2 |y|^{r-1} dx
          + 4 (r-1)/(r+1)^2 int |grad |y|^{(r+1)/2}|^2 dx

    The two sides agree in the continuum; on a grid the defect is a pure
    quadrature/truncation error and must vanish under refinement.
    """
    g = y.grid
    m = g.padded_modes
    axes = tuple(range(1, g.dim + 1))
    cell = (g.length / m) ** g.dim

    lam = g.stokes_eigenvalues()
    neg_lap = FourierField(g, y.coeffs * lam, divergence_free=y.divergence_free)
    nl_vals = to_physical(neg_lap).values
    yv = to_physical(y).values
    mag = np.sqrt(np.sum(yv ** 2, axis=0))
    lhs = float(np.sum(nl_vals * mag ** (r - 1.0) * yv) * cell)

    grads = _gradient_physical(y)
    grad_sq = np.sum(grads ** 2, axis=(0, 1))
    term1 = float(np.sum(grad_sq * mag ** (r - 1.0)) * cell)

    phi = mag ** ((r + 1.0) / 2.0)
    phihat = sfft.fftn(phi, axes=tuple(range(g.dim)))
    kpad = _padded_wavenumbers(g)
    two_pi_i = 2j * np.pi / g.length
    grad_phi_sq = np.zeros_like(phi)
    for i in range(g.dim):
        dphi = sfft.ifftn(phihat * (two_pi_i * kpad[i]), axes=tuple(range(g.dim))).real
        grad_phi_sq += dphi ** 2
    term2 = 4.0 * (r - 1.0) / (r + 1.0) ** 2 * float(np.sum(grad_phi_sq) * cell)

    rhs = term1 + term2
    if lhs == 0.0 and rhs == 0.0:
        return 0.0
    return abs(lhs - rhs) / max(abs(lhs), 1e-300)

"""Sign-feedback steering: finite-time decay to a target state.

The multivalued sign feedback v = -rho * sgn(y - y1) is realized through its
smooth approximation

    theta_eps(w) = w / eps            if ||w||_H <= eps
                   w / ||w||_H        otherwise,

i.e. v = -g w with gain g = rho / max(eps, ||w||_H).  The closed loop freezes
g over each step and folds it into the exponential linear factor, which keeps
the loop stable arbitrarily close to the target (an explicit treatment
oscillates at amplitude dt * rho around it); the reported control still obeys
sup_t ||v||_H <= rho by construction.

For gains above ||Gamma(y1)||_H the decay certificate

    e^{-kappa t} ||y(t)-y1||_H + (rho - ||Gamma(y1)||_H)(1 - e^{-kappa t})/kappa
        <= ||y0 - y1||_H

holds up to the predicted extinction time

    T0 = -(1/kappa) log(1 - kappa ||y0-y1||_H / (rho - ||Gamma(y1)||_H)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .deterministic import BlowUpError, TimeGrid, Trajectory
from .noise import NoiseBasis, NoiseSpec
from .operators import ModelParams, derived_constants, explicit_rhs, gamma_apply
from .spectral import DomainError, FourierField, GridSpec, inner_h, norm

__all__ = [
    "SteerConfig",
    "SteerReport",
    "ToleranceUnreachableError",
    "smooth_sgn",
    "extinction_time",
    "rho_min",
    "steer",
    "decay_certificate",
    "approx_steer_with_B",
    "ApproxControlResult",
]


class ToleranceUnreachableError(RuntimeError):
    def __init__(self, best: float):
        super().__init__(f"mode truncation cannot reach tolerance; best {best:.3e}")
        self.best = best


@dataclass
class SteerConfig:
    """Target, horizon, gain and smoothing for one steering problem."""

    target: FourierField
    horizon: float
    rho: float
    eps_sgn: float = 1e-2
    eps_min: float = 1e-5
    delta: float = 1e-3  # success tolerance on ||y(T) - y1||_H

    def __post_init__(self):
        if self.rho <= 0:
            raise DomainError("feedback gain must be positive")
        if not (0 < self.eps_min <= self.eps_sgn):
            raise DomainError("need eps_sgn >= eps_min > 0")
        if self.delta <= 0 or self.horizon <= 0:
            raise DomainError("delta and horizon must be positive")


@dataclass
class SteerReport:
    dist0: float
    achieved_distance: float
    first_hit_time: float | None
    predicted_t0: float
    rho: float
    kappa: float
    gamma_target_norm: float
    control_energy: float
    success: bool
    max_certificate_residual: float
    resolution_warning: bool

    def as_dict(self) -> dict:
        return {
            "dist0": self.dist0,
            "achieved_distance": self.achieved_distance,
            "first_hit_time": self.first_hit_time,
            "predicted_t0": self.predicted_t0,
            "rho": self.rho,
            "kappa": self.kappa,
            "gamma_target_norm": self.gamma_target_norm,
            "control_energy": self.control_energy,
            "success": self.success,
            "max_certificate_residual": self.max_certificate_residual,
            "resolution_warning": self.resolution_warning,
        }


def smooth_sgn(w: FourierField, eps: float) -> FourierField:
    """Smooth selection of the sign map: w/eps inside the eps-ball, w/||w|| outside."""
    if eps <= 0:
        raise DomainError("smoothing parameter must be positive")
    h = norm(w, "H")
    return w * (1.0 / eps) if h <= eps else w * (1.0 / h)


def extinction_time(rho: float, kappa: float, dist0: float,
                    gamma_target_norm: float) -> float:
    """Certified extinction time; inf when the gain is too small."""
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    if dist0 < 0:
        raise DomainError("dist0 must be nonnegative")
    if rho <= gamma_target_norm:
        raise DomainError("need rho > ||Gamma(target)||_H")
    arg = 1.0 - kappa * dist0 / (rho - gamma_target_norm)
    if arg <= 0.0:
        return math.inf
    return -math.log(arg) / kappa


def rho_min(dist0: float, gamma_target_norm: float, kappa: float, horizon: float,
            margin: float = 1.1) -> float:
    """Smallest gain whose certified extinction time fits in the horizon."""
    if horizon <= 0 or kappa <= 0:
        raise DomainError("horizon and kappa must be positive")
    base = gamma_target_norm + kappa * dist0 / -math.expm1(-kappa * horizon)
    return margin * base


def _steer_weights(grid: GridSpec, p: ModelParams, dt: float, gain: float):
    lam_bar = p.mu * grid.stokes_eigenvalues() + p.alpha + gain
    z = -lam_bar * dt
    return np.exp(z), dt * np.expm1(z) / z


def _highmode_fraction(f: FourierField) -> float:
    g = f.grid
    k = g.wavenumbers()
    rough = np.max(np.abs(k), axis=0) > g.modes // 4
    total = np.sum(np.abs(f.coeffs) ** 2)
    if total == 0:
        return 0.0
    return float(np.sum(np.abs(f.coeffs[:, rough]) ** 2) / total)


def _closed_loop(y0: FourierField, cfg: SteerConfig, p: ModelParams, tg: TimeGrid,
                 mask: np.ndarray | None) -> tuple[Trajectory, list[FourierField], float, float | None]:
    """Shared feedback loop; ``mask`` (Fourier multiplier) truncates the control.

    The feedback -g (y - y1) with frozen per-step gain is folded into the
    exponential factor, so the loop is stable arbitrarily close to the target.
    Returns (trajectory, applied control series, control energy, first hit).
    """
    g = y0.grid
    y1 = cfg.target
    steps = tg.steps
    dt = tg.dt
    times = tg.times()
    series = {k: np.zeros(steps + 1) for k in
              ("dist", "norm_H", "control_norm", "eps", "work")}
    controls: list[FourierField] = []
    snapshots = [(0.0, y0.copy())]
    cap = 1e6 * (norm(y0, "H") + 1.0)
    lam_bar = p.mu * g.stokes_eigenvalues() + p.alpha
    gain_rate = mask if mask is not None else 1.0

    y = y0.copy()
    first_hit = None
    energy = 0.0
    weight_cache: dict[float, tuple] = {}

    for n in range(steps + 1):
        w = y - y1
        dist = norm(w, "H")
        series["dist"][n] = dist
        series["norm_H"][n] = norm(y, "H")
        if first_hit is None and dist <= cfg.delta:
            first_hit = times[n]
        eps_n = max(cfg.eps_min, min(cfg.eps_sgn, dist / 10.0))
        gain = cfg.rho / max(eps_n, dist)
        # the applied control, after truncation: -g * P_M (y - y1)
        vc = w.coeffs * (-gain) if mask is None else w.coeffs * (-gain * mask)
        v = FourierField(g, vc, divergence_free=True)
        series["control_norm"][n] = norm(v, "H")
        series["eps"][n] = eps_n
        series["work"][n] = inner_h(v, y)
        controls.append(v)
        if n == steps:
            break
        energy += dt * norm(v, "H") ** 2

        if gain not in weight_cache:
            if len(weight_cache) > 64:
                weight_cache.clear()
            z = -(lam_bar + gain * gain_rate) * dt
            weight_cache[gain] = (np.exp(z), dt * np.expm1(z) / z)
        e_fac, w1 = weight_cache[gain]
        nl, _ = explicit_rhs(y, p)
        # frozen-gain feedback: rate g*P_M plus source g*P_M y1
        rhs = -nl.coeffs + (gain * y1.coeffs if mask is None
                            else gain * mask * y1.coeffs)
        y = FourierField(g, e_fac * y.coeffs + w1 * rhs, divergence_free=True)
        if not np.all(np.isfinite(y.coeffs)):
            raise BlowUpError(n, "non-finite coefficients")
        if norm(y, "H") > cap:
            raise BlowUpError(n, "H-norm cap exceeded")
        if tg.snapshot_stride and (n + 1) % tg.snapshot_stride == 0:
            snapshots.append((times[n + 1], y.copy()))

    if not (tg.snapshot_stride and steps % tg.snapshot_stride == 0):
        snapshots.append((times[-1], y.copy()))
    traj = Trajectory(times=times, series=series, snapshots=snapshots, final=y)
    return traj, controls, energy, first_hit


def steer(y0: FourierField, cfg: SteerConfig, p: ModelParams, tg: TimeGrid,
          eps_p31: float = 1.0) -> tuple[Trajectory, list[FourierField], SteerReport]:
    """Run the closed loop; returns trajectory, control series, report."""
    y1 = cfg.target
    kappa = derived_constants(p, eps_p31).kappa
    gnorm = norm(gamma_apply(y1, p), "H")
    dist0 = norm(y0 - y1, "H")
    t0_pred = (extinction_time(cfg.rho, kappa, dist0, gnorm)
               if cfg.rho > gnorm else math.inf)

    traj, controls, energy, first_hit = _closed_loop(y0, cfg, p, tg, mask=None)
    cert = decay_certificate(traj, cfg, kappa, gnorm)
    achieved = float(traj.series["dist"][-1])
    report = SteerReport(
        dist0=dist0,
        achieved_distance=achieved,
        first_hit_time=first_hit,
        predicted_t0=t0_pred,
        rho=cfg.rho,
        kappa=kappa,
        gamma_target_norm=gnorm,
        control_energy=energy,
        success=achieved <= cfg.delta,
        max_certificate_residual=float(np.max(cert)) if cert.size else 0.0,
        resolution_warning=_highmode_fraction(y1) > 0.01,
    )
    return traj, controls, report


def decay_certificate(traj: Trajectory, cfg: SteerConfig, kappa: float,
                      gamma_target_norm: float) -> np.ndarray:
    """Relative overshoot of the extinction certificate, up to predicted T0.

    Past the extinction time both sides of the integrated inequality meet, so
    the audit window is [0, min(T0, T)].
    """
    dist = traj.series["dist"]
    t = traj.times
    d0 = dist[0]
    if d0 == 0:
        return np.zeros(1)
    t0 = (extinction_time(cfg.rho, kappa, d0, gamma_target_norm)
          if cfg.rho > gamma_target_norm else math.inf)
    mask = t <= min(t0, t[-1])
    lhs = (np.exp(-kappa * t[mask]) * dist[mask]
           + (cfg.rho - gamma_target_norm) * -np.expm1(-kappa * t[mask]) / kappa)
    return np.maximum(0.0, lhs - d0) / d0


# ---------------------------------------------------------------------------
# approximate controllability through the noise operator
# ---------------------------------------------------------------------------

@dataclass
class ApproxControlResult:
    u_coefficients: np.ndarray     # (steps, n_modes) eigenbasis coefficients
    bu_controls: list[FourierField]
    endpoint_distance: float
    modes_kept: int
    tail_norm: float
    eps_tol: float
    bound: float
    steer_report: SteerReport
    final_state: FourierField | None = None

    def as_dict(self) -> dict:
        return {"endpoint_distance": self.endpoint_distance,
                "modes_kept": self.modes_kept, "tail_norm": self.tail_norm,
                "eps_tol": self.eps_tol, "bound": self.bound,
                "steer_success": self.steer_report.success}


def mode_cutoff_mask(basis: NoiseBasis, m_keep: int) -> tuple[np.ndarray, int]:
    """Fourier multiplier keeping the lowest modes, rounded up to whole
    wavenumber sites (a site = both conjugate lattice points with every
    polarization and phase), so the projection acts per lattice site."""
    g = basis.grid
    d = g.dim
    per_site = 2 * (d - 1)
    if m_keep <= d:
        s_keep = 0
    else:
        s_keep = -(-(m_keep - d) // per_site)  # ceil
    m_rounded = d + per_site * s_keep
    mask = np.zeros(g.n_points)
    mask[0] = 1.0  # k = 0 site (the constant modes)
    rows = slice(0, s_keep * (d - 1))
    mask[basis.pair_plus[rows]] = 1.0
    mask[basis.pair_minus[rows]] = 1.0
    return mask.reshape(g.shape), min(m_rounded, basis.n_modes)


def approx_steer_with_B(y0: FourierField, cfg: SteerConfig, p: ModelParams,
                        tg: TimeGrid, noise: NoiseSpec, eps_tol: float,
                        eps_p31: float = 1.0) -> ApproxControlResult:
    """Replace the sign feedback by B u with B = sqrt(Q) and u = Q^{-1/2} P_M v.

    P_M keeps the lowest M covariance eigenmodes, M minimal with
    ||P_M v - v||_{L^2(0,T;H)} <= eps_tol for the recorded feedback v.  The
    system is then re-run with the feedback filtered through P_M (so B u is
    exactly the applied control: B B^{-1} cancels on the retained range, and
    with P_M = I the re-run reproduces the steering loop bit for bit).  The
    endpoint obeys the certificate e^{2 kappa T}/(2 kappa) sqrt(eps_tol) + delta.
    """
    if eps_tol <= 0:
        raise DomainError("eps_tol must be positive")
    if noise.amplitude <= 0:
        raise DomainError("B = sqrt(Q) needs a positive noise amplitude")
    g = y0.grid
    basis = NoiseBasis(g, noise)
    _, controls, report = steer(y0, cfg, p, tg, eps_p31)
    dt = tg.dt

    coeff = np.stack([basis.project(v) for v in controls[:-1]])  # (steps, n_modes)
    mode_energy = dt * np.sum(coeff ** 2, axis=0)
    tail2 = np.concatenate([np.cumsum(mode_energy[::-1])[::-1], [0.0]])
    tail = np.sqrt(np.maximum(tail2, 0.0))  # tail[m] = ||v - P_m v||_{L2}
    admissible = np.nonzero(tail <= eps_tol)[0]
    # keeping every retained mode reproduces v exactly, so a cutoff always exists
    m_min = int(admissible[0]) if admissible.size else basis.n_modes
    mask, m_keep = mode_cutoff_mask(basis, m_min)
    tail_norm = float(tail[m_keep])
    if tail_norm > eps_tol:
        raise ToleranceUnreachableError(tail_norm)

    traj, bu, _, _ = _closed_loop(y0, cfg, p, tg, mask=mask)
    endpoint = float(traj.series["dist"][-1])
    u_coeff = np.stack([basis.project(v) for v in bu[:-1]])
    u_coeff /= noise.amplitude * np.sqrt(basis.mu)

    kappa = report.kappa
    bound = (math.exp(2.0 * kappa * tg.t_final) / (2.0 * kappa)
             * math.sqrt(eps_tol) + cfg.delta)
    return ApproxControlResult(
        u_coefficients=u_coeff, bu_controls=bu, endpoint_distance=endpoint,
        modes_kept=m_keep, tail_norm=tail_norm, eps_tol=eps_tol, bound=bound,
        steer_report=report, final_state=traj.final)

"""Time integration of the controlled deterministic system.

The stiff linear part mu*A + alpha*I is diagonal in Fourier space and is
integrated exactly through its exponential; the advection, absorption and
pumping terms plus any forcing are treated explicitly with exponential
quadrature weights (ETD1, optionally the two-stage ETD2RK corrector).

Per-step energy diagnostics are recorded so the discrete energy balance

    d/dt (1/2)||y||_H^2 + mu ||grad y||^2 + alpha ||y||^2
        + beta ||y||_{L^{r+1}}^{r+1} + gamma ||y||_{L^{q+1}}^{q+1} = (f + v, y)

can be audited after the fact at the scheme's order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .operators import ModelParams, explicit_rhs
from .spectral import ConfigurationError, FourierField, GridSpec, inner_h, norm

__all__ = [
    "TimeGrid",
    "Trajectory",
    "BlowUpError",
    "step",
    "solve",
    "energy_balance_residual",
]

ForcingSource = Optional[Callable[[float], Optional[FourierField]] | FourierField]


class BlowUpError(RuntimeError):
    """Numerical blow-up; carries the offending step index."""

    def __init__(self, step_index: int, message: str = "solution blew up"):
        super().__init__(f"{message} at step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class TimeGrid:
    """Uniform step layout on [0, T]."""

    t_final: float
    dt: float
    snapshot_stride: int = 0  # 0: keep only endpoints

    def __post_init__(self):
        if self.t_final <= 0 or self.dt <= 0:
            raise ValueError("t_final and dt must be positive")
        steps = round(self.t_final / self.dt)
        if steps < 1 or abs(steps * self.dt - self.t_final) > 1e-12 * max(1.0, self.t_final):
            raise ValueError("dt must divide t_final")

    @property
    def steps(self) -> int:
        return round(self.t_final / self.dt)

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass
class Trajectory:
    """Step-time scalar series plus strided field snapshots."""

    times: np.ndarray
    series: dict[str, np.ndarray]
    snapshots: list[tuple[float, FourierField]] = field(default_factory=list)
    final: FourierField | None = None

    def last(self, key: str) -> float:
        return float(self.series[key][-1])


def _weights(grid: GridSpec, p: ModelParams, dt: float):
    """Exponential factor and ETD quadrature weights for one step size."""
    lam_bar = p.mu * grid.stokes_eigenvalues() + p.alpha
    z = -lam_bar * dt
    e = np.exp(z)
    w1 = dt * np.expm1(z) / z
    w2 = dt * (np.expm1(z) - z) / (z * z)
    return e, w1, w2


def step(y: FourierField, forcing: FourierField | None, dt: float,
         p: ModelParams, scheme: str = "etd1",
         weights=None, step_index: int = 0) -> tuple[FourierField, dict]:
    """Advance one step; returns the new field and collocation diagnostics."""
    g = y.grid
    if weights is None:
        weights = _weights(g, p, dt)
    e, w1, w2 = weights
    try:
        nl, diag = explicit_rhs(y, p)
    except ConfigurationError as exc:
        raise BlowUpError(step_index, str(exc)) from exc
    rhs = -nl.coeffs
    if forcing is not None:
        rhs = rhs + forcing.coeffs
    diag["explicit_increment"] = float(np.sqrt(np.sum(np.abs(w1 * nl.coeffs) ** 2)
                                               * g.length ** g.dim))
    if scheme == "etd1":
        new = e * y.coeffs + w1 * rhs
    elif scheme == "etd2":
        pred = FourierField(g, e * y.coeffs + w1 * rhs, divergence_free=True)
        try:
            nl2, _ = explicit_rhs(pred, p)
        except ConfigurationError as exc:
            raise BlowUpError(step_index, str(exc)) from exc
        rhs2 = -nl2.coeffs
        if forcing is not None:
            rhs2 = rhs2 + forcing.coeffs
        new = pred.coeffs + w2 * (rhs2 - rhs)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(new)):
        raise BlowUpError(step_index, "non-finite coefficients")
    return FourierField(g, new, divergence_free=True), diag


def _resolve(source: ForcingSource, t: float) -> FourierField | None:
    if source is None:
        return None
    if callable(source):
        return source(t)
    return source


def _combine(a: FourierField | None, b: FourierField | None) -> FourierField | None:
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def solve(y0: FourierField, control: ForcingSource, f: ForcingSource,
          tg: TimeGrid, p: ModelParams, scheme: str = "etd1",
          safety: bool = True, max_halvings: int = 8) -> Trajectory:
    """Integrate the controlled system over the time grid.

    ``control`` and ``f`` may be None, a fixed field, or a callable of time.
    A step whose explicit nonlinear increment exceeds 20% of the field norm is
    re-done as halved substeps (pumping guard); the H-norm is capped at
    1e6 * (||y0||_H + 1).
    """
    g = y0.grid
    steps = tg.steps
    times = tg.times()
    keys = ("norm_H", "norm_gradH", "lr1", "lq1", "work")
    series = {k: np.zeros(steps + 1) for k in keys}
    cap = 1e6 * (norm(y0, "H") + 1.0)
    weights = _weights(g, p, tg.dt)

    y = y0.copy()
    snapshots: list[tuple[float, FourierField]] = [(0.0, y0.copy())]

    def record(n: int, yn: FourierField, diag: dict | None, t: float):
        series["norm_H"][n] = norm(yn, "H")
        series["norm_gradH"][n] = norm(yn, "gradH")
        if diag is None:
            from .operators import explicit_rhs as _rhs
            _, diag = _rhs(yn, p)
        series["lr1"][n] = diag["lr1"]
        series["lq1"][n] = diag["lq1"]
        forcing = _combine(_resolve(control, t), _resolve(f, t))
        series["work"][n] = 0.0 if forcing is None else inner_h(forcing, yn)

    for n in range(steps):
        t = times[n]
        forcing = _combine(_resolve(control, t), _resolve(f, t))
        y_next, diag = _attempt_step(y, forcing, tg.dt, p, scheme, weights,
                                     n, safety, max_halvings)
        record(n, y, diag, t)
        y = y_next
        if series["norm_H"][n] > cap or norm(y, "H") > cap:
            raise BlowUpError(n, "H-norm cap exceeded")
        if tg.snapshot_stride and (n + 1) % tg.snapshot_stride == 0:
            snapshots.append((times[n + 1], y.copy()))
    record(steps, y, None, times[-1])
    if not (tg.snapshot_stride and steps % tg.snapshot_stride == 0):
        snapshots.append((times[-1], y.copy()))
    return Trajectory(times=times, series=series, snapshots=snapshots, final=y)


def _attempt_step(y, forcing, dt, p, scheme, weights, n, safety, budget):
    y_next, diag = step(y, forcing, dt, p, scheme, weights, n)
    if safety and budget > 0:
        h = norm(y, "H")
        if h > 0 and diag["explicit_increment"] > 0.2 * h:
            half = _weights(y.grid, p, dt / 2)
            y_mid, diag = _attempt_step(y, forcing, dt / 2, p, scheme, half,
                                        n, safety, budget - 1)
            y_next, diag2 = _attempt_step(y_mid, forcing, dt / 2, p, scheme, half,
                                          n, safety, budget - 1)
            diag = {**diag2, "explicit_increment": diag["explicit_increment"]}
    return y_next, diag


def energy_balance_residual(traj: Trajectory, p: ModelParams) -> np.ndarray:
    """Per-step defect of the energy balance, relative to its largest term.

    The dissipation and work integrals over [t_n, t_{n+1}] are approximated by
    endpoint averages, so the residual converges at the scheme's order.
    """
    s = traj.series
    dt = np.diff(traj.times)
    h2 = s["norm_H"] ** 2
    mid = lambda a: 0.5 * (a[1:] + a[:-1])
    dissipation = (p.mu * mid(s["norm_gradH"] ** 2) + p.alpha * mid(h2)
                   + p.beta * mid(s["lr1"]) + p.gamma * mid(s["lq1"]))
    work = mid(s["work"])
    lhs = 0.5 * np.diff(h2) + dt * dissipation - dt * work
    scale = np.maximum.reduce([
        np.abs(0.5 * np.diff(h2)),
        dt * np.abs(dissipation),
        dt * np.abs(work),
        np.full_like(dt, 1e-300),
    ])
    return np.abs(lhs) / scale

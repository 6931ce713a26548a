"""Flat text configuration (key = value with [sections]) for experiment runs.

All cross-field admissibility rules are enforced here, before any compute:
the critical-case gate 2*beta*mu > 1 at r = 3, the covariance exponent floor
eps > d/2 + 1, and the time-grid divisibility.  Every run draws all of its
randomness from the single master seed.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as crng
from .deterministic import TimeGrid
from .noise import NoiseSpec
from .operators import AdmissibilityError, ModelParams
from .spectral import (ConfigurationError, FourierField, GridSpec,
                       leray_project, random_field, shear_field,
                       single_mode_field)

__all__ = ["RunConfig", "SchemaError", "load_config", "parse_field_spec"]

KINDS = ("simulate", "steer", "approx-control", "ou-check", "sde-run",
         "sde-bounds", "irreducibility", "accessibility", "invariants")


class SchemaError(ValueError):
    """Malformed or inadmissible configuration."""


@dataclass
class RunConfig:
    kind: str
    seed: int
    out_dir: str | None
    threads: int
    grid: GridSpec
    model: ModelParams
    tg: TimeGrid
    noise: NoiseSpec
    steer: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    echo: dict = field(default_factory=dict)


def parse_field_spec(spec: str, grid: GridSpec, seed: int,
                     stream: int = 0) -> FourierField:
    """Build a field from a textual description.

    zero | constant:a,b[,c] | shear:amp[,mode] | mode:k1,k2[,k3]:a,b[,c]
    | random:kmax,amp[,decay]
    """
    spec = spec.strip()
    if spec == "zero":
        return FourierField.zero(grid)
    name, _, args = spec.partition(":")
    if name == "constant":
        amp = np.array([float(v) for v in args.split(",")])
        if amp.size != grid.dim:
            raise SchemaError(f"constant field needs {grid.dim} components")
        return leray_project(single_mode_field(grid, (0,) * grid.dim, amp))
    if name == "shear":
        parts = [float(v) for v in args.split(",")]
        mode = int(parts[1]) if len(parts) > 1 else 1
        return shear_field(grid, amplitude=parts[0], wavenumber=mode)
    if name == "mode":
        kpart, _, apart = args.partition(":")
        k = tuple(int(v) for v in kpart.split(","))
        amp = np.array([float(v) for v in apart.split(",")])
        return leray_project(single_mode_field(grid, k, amp))
    if name == "random":
        parts = [float(v) for v in args.split(",")]
        kmax = int(parts[0])
        amp = parts[1]
        decay = parts[2] if len(parts) > 2 else 2.0
        gen = crng.generator(seed, stream, 0, crng.PURPOSE_FIELD)
        return random_field(grid, gen, kmax=kmax, amplitude=amp, decay=decay)
    raise SchemaError(f"unknown field spec {spec!r}")


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    return dict(parser[name]) if parser.has_section(name) else {}


def load_config(path: str | Path, seed_override: int | None = None,
                out_override: str | None = None,
                threads_override: int | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise SchemaError(f"cannot parse config: {exc}") from exc

    try:
        run = _section(parser, "run")
        kind = run.get("kind", "")
        if kind not in KINDS:
            raise SchemaError(f"run.kind must be one of {KINDS}, got {kind!r}")
        seed = int(run.get("seed", "0")) if seed_override is None else seed_override
        out_dir = out_override or run.get("out")
        threads = int(run.get("threads", "1")) if threads_override is None else threads_override
        if threads < 1:
            raise SchemaError("threads must be >= 1")

        gsec = _section(parser, "grid")
        grid = GridSpec(dim=int(gsec.get("dim", "2")),
                        modes=int(gsec.get("modes", "64")),
                        length=float(gsec.get("length", "1.0")),
                        dealias_factor=float(gsec.get("dealias", "1.5")))

        msec = _section(parser, "model")
        model = ModelParams(mu=float(msec.get("mu", "1.0")),
                            alpha=float(msec.get("alpha", "1.0")),
                            beta=float(msec.get("beta", "1.0")),
                            gamma=float(msec.get("gamma", "-0.5")),
                            r=float(msec.get("r", "4.0")),
                            q=float(msec.get("q", "2.0")),
                            dim=grid.dim, length=grid.length)

        tsec = _section(parser, "time")
        tg = TimeGrid(t_final=float(tsec.get("t_final", "1.0")),
                      dt=float(tsec.get("dt", "1e-3")),
                      snapshot_stride=int(tsec.get("snapshot_stride", "0")))

        nsec = _section(parser, "noise")
        noise = NoiseSpec(eps=float(nsec.get("eps", "2.5")),
                          amplitude=float(nsec.get("amplitude", "1.0")),
                          master_seed=seed)
        noise.validate(grid.dim)

        cfg = RunConfig(kind=kind, seed=seed, out_dir=out_dir, threads=threads,
                        grid=grid, model=model, tg=tg, noise=noise,
                        steer=_section(parser, "steer"),
                        experiment=_section(parser, "experiment"))
    except (ValueError, ConfigurationError, AdmissibilityError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc)) from exc

    cfg.echo = {s: dict(parser[s]) for s in parser.sections()}
    cfg.echo.setdefault("run", {})
    cfg.echo["run"]["kind"] = kind
    cfg.echo["run"]["seed"] = str(seed)
    cfg.echo["run"]["threads"] = str(threads)
    return cfg

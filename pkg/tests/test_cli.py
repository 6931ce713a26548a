"""Configuration parsing, the experiment runner, artifacts and determinism."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from cbfed_lab.cli import main, run_config
from cbfed_lab.config import SchemaError, load_config, parse_field_spec
from cbfed_lab.reporting import read_snapshot, write_snapshot
from cbfed_lab.spectral import GridSpec, norm

from conftest import make_field


def write_cfg(tmp_path, body, name="run.ini"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


BASE = """
[run]
kind = {kind}
seed = 33
threads = 1

[grid]
modes = 16

[time]
t_final = 0.1
dt = 5e-3
"""


class TestConfigParsing:
    def test_missing_file(self):
        with pytest.raises(SchemaError):
            load_config("/nonexistent/path.ini")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(SchemaError):
            load_config(write_cfg(tmp_path, BASE.format(kind="frobnicate")))

    def test_inadmissible_model(self, tmp_path):
        body = BASE.format(kind="simulate") + "\n[model]\nr = 3.0\nbeta = 0.3\n"
        with pytest.raises(SchemaError):
            load_config(write_cfg(tmp_path, body))  # 2*beta*mu <= 1 at r = 3

    def test_inadmissible_noise_exponent(self, tmp_path):
        body = BASE.format(kind="simulate") + "\n[noise]\neps = 1.5\n"
        with pytest.raises(SchemaError):
            load_config(write_cfg(tmp_path, body))

    def test_overrides(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, BASE.format(kind="simulate")),
                          seed_override=99, threads_override=4)
        assert cfg.seed == 99
        assert cfg.threads == 4
        assert cfg.noise.master_seed == 99

    def test_field_specs(self):
        grid = GridSpec(2, 16)
        z = parse_field_spec("zero", grid, 1)
        assert norm(z, "H") == 0.0
        c = parse_field_spec("constant:0.3,-0.1", grid, 1)
        assert abs(norm(c, "H") - np.hypot(0.3, 0.1)) <= 1e-12
        s = parse_field_spec("shear:0.5,2", grid, 1)
        assert abs(norm(s, "H") - 0.5 / np.sqrt(2)) <= 1e-12
        r1 = parse_field_spec("random:3,0.4", grid, 7)
        r2 = parse_field_spec("random:3,0.4", grid, 7)
        assert np.array_equal(r1.coeffs, r2.coeffs)
        with pytest.raises(SchemaError):
            parse_field_spec("wavelet:1", grid, 1)


class TestRunner:
    def test_invariants_pass_and_write_report(self, tmp_path):
        rc = main(["--config", write_cfg(tmp_path, BASE.format(kind="invariants")),
                   "--out", str(tmp_path / "out"), "--quiet"])
        assert rc == 0
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert rep["passed"] is True
        assert rep["kind"] == "invariants"
        assert rep["seed_manifest"]["master_seed"] == 33

    def test_simulate_writes_artifacts(self, tmp_path):
        body = BASE.format(kind="simulate").replace(
            "dt = 5e-3", "dt = 5e-3\nsnapshot_stride = 10") + (
            "\n[experiment]\ninitial = random:3,0.4\n")
        rc = main(["--config", write_cfg(tmp_path, body),
                   "--out", str(tmp_path / "out"), "--quiet"])
        assert rc == 0
        assert (tmp_path / "out" / "series" / "series.csv").exists()
        snaps = sorted((tmp_path / "out" / "fields").glob("*.bin"))
        assert len(snaps) >= 2
        f = read_snapshot(snaps[0])
        assert f.grid.modes == 16

    def test_malformed_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("no sections here")
        assert main(["--config", str(bad)]) == 2

    def test_numerical_abort_exits_3(self, tmp_path):
        body = BASE.format(kind="simulate").replace(
            "t_final = 0.1\ndt = 5e-3", "t_final = 5.0\ndt = 0.5") + (
            "\n[model]\ngamma = -40.0\nq = 3.9\n"
            "[experiment]\ninitial = random:2,20.0\n")
        rc = main(["--config", write_cfg(tmp_path, body), "--quiet"])
        assert rc == 3

    def test_env_var_out_dir(self, tmp_path, monkeypatch):
        out = tmp_path / "envout"
        monkeypatch.setenv("CBFED_LAB_OUT", str(out))
        rc = main(["--config", write_cfg(tmp_path, BASE.format(kind="invariants")),
                   "--quiet"])
        assert rc == 0
        assert (out / "report.json").exists()

    def test_steer_scenario_passes(self, tmp_path):
        # the discrete extinction tail costs a few steps, so the grid must
        # resolve the certified horizon
        body = BASE.format(kind="steer").replace("dt = 5e-3", "dt = 1e-3") + (
            "[steer]\nstart = random:2,0.3\ntarget = random:2,0.25\n")
        rc = main(["--config", write_cfg(tmp_path, body),
                   "--out", str(tmp_path / "out"), "--quiet"])
        assert rc == 0


class TestSnapshotFormat:
    def test_round_trip(self, tmp_path, grid16):
        f = make_field(grid16, 3, amplitude=0.7)
        path = write_snapshot(f, tmp_path / "f.bin")
        g = read_snapshot(path)
        assert np.array_equal(g.coeffs, f.coeffs)
        assert g.divergence_free == f.divergence_free
        assert g.grid == f.grid

    def test_header_layout(self, tmp_path, grid16):
        f = make_field(grid16, 4)
        path = write_snapshot(f, tmp_path / "f.bin")
        raw = path.read_bytes()
        assert raw[:4] == b"CBFD"
        # version, d, N little-endian u32 then L f64 then kind u8
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 16
        assert raw[24] == 1  # divergence-free kind byte
        payload = len(raw) - 25
        assert payload == 2 * 16 * 16 * 2 * 8


class TestDeterminism:
    def test_report_metrics_identical_across_thread_counts(self, tmp_path):
        body = """
[run]
kind = irreducibility
seed = 77

[grid]
modes = 16

[time]
t_final = 0.2
dt = 5e-3

[experiment]
start = zero
target = constant:0.35,0.05
n_paths = 100
nd_samples = 500
"""
        blobs = []
        for threads in (1, 3):
            cfg = load_config(write_cfg(tmp_path, body, f"t{threads}.ini"),
                              threads_override=threads)
            report, _ = run_config(cfg, quiet=True)
            # thread count must not leak into the determinism contract
            report.config["run"]["threads"] = "x"
            blobs.append(report.metrics_blob())
        assert blobs[0] == blobs[1]

    def test_repeat_run_byte_identical(self, tmp_path):
        body = BASE.format(kind="sde-run") + "[experiment]\ninitial = random:2,0.3\n"
        cfg = load_config(write_cfg(tmp_path, body))
        r1, _ = run_config(cfg, quiet=True)
        r2, _ = run_config(cfg, quiet=True)
        assert r1.metrics_blob() == r2.metrics_blob()

"""Acceptance suite: the ten exit criteria at desk scale.

Defaults: d = 2 on a 64^2 grid, r = 4, q = 2, mu = alpha = beta = 1,
gamma = -0.5.  Each test prints one pass/fail line; every tolerance is fixed
here, nothing is calibrated at run time.
"""

import math
import time

import numpy as np
import pytest

from cbfed_lab import rng as crng
from cbfed_lab.deterministic import TimeGrid, solve
from cbfed_lab.irreducibility import (HittingExperiment, hitting_probability,
                                      shadowing_gap)
from cbfed_lab.noise import NoiseBasis, NoiseSpec, trace_aq, trace_q
from cbfed_lab.operators import (ModelParams, c1_monotonicity_gap,
                                 commutation_identity_residual,
                                 damping_C1, derived_constants, gamma_apply,
                                 monotonicity_gap, trilinear_b)
from cbfed_lab.reporting import RunReport
from cbfed_lab.spectral import (FourierField, GridSpec, inner_h,
                                leray_project, norm, random_field,
                                restrict_field, shear_field,
                                single_mode_field)
from cbfed_lab.steering import (SteerConfig, approx_steer_with_B, rho_min,
                                steer)
from cbfed_lab.stochastic import (StochasticRunConfig, expectation_bound_check,
                                  solve_direct)

GRID = GridSpec(2, 64)
PARAMS = ModelParams()  # mu = alpha = beta = 1, gamma = -0.5, r = 4, q = 2
NOISE = NoiseSpec(eps=2.5, amplitude=1.0, master_seed=20240)
THREADS = 2


def field(seed, kmax=8, amplitude=0.6, grid=GRID, decay=2.0):
    gen = crng.generator(seed, 0, 0, crng.PURPOSE_FIELD)
    return random_field(grid, gen, kmax=kmax, amplitude=amplitude, decay=decay)


def smooth_target(grid, a, b, ripple_seed):
    const = single_mode_field(grid, (0, 0), np.array([a, b]))
    ripple = field(ripple_seed, kmax=1, amplitude=0.02, grid=grid)
    return leray_project(const + ripple)


def report(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")


class TestCriteria:
    def test_01_operator_property_suite(self):
        t0 = time.perf_counter()
        dc = derived_constants(PARAMS)

        worst_div = 0.0
        for i in range(20):
            f = field(10_000 + i)
            worst_div = max(worst_div, leray_project(f).divergence_defect())
        assert worst_div <= 1e-12

        worst_b = 0.0
        for i in range(50):
            y, z, w = field(11_000 + i), field(12_000 + i), field(13_000 + i)
            s1 = norm(y, "H") * norm(z, "V") ** 2
            worst_b = max(worst_b, abs(trilinear_b(y, z, z)) / s1)
            s2 = norm(y, "H") * norm(z, "V") * norm(w, "V")
            worst_b = max(worst_b, abs(trilinear_b(y, z, w) + trilinear_b(y, w, z)) / s2)
        assert worst_b <= 1e-10

        worst_pair = 0.0
        for i in range(50):
            y = field(14_000 + i)
            lr = norm(y, "Lp", p=PARAMS.r + 1) ** (PARAMS.r + 1)
            worst_pair = max(worst_pair, abs(inner_h(damping_C1(y, PARAMS.r), y) - lr) / lr)
        assert worst_pair <= 1e-8

        c1_viol = 0
        mono_viol = 0
        for i in range(500):
            y = field(15_000 + i)
            z = field(16_000 + i)
            lhs, rhs = c1_monotonicity_gap(y, z, PARAMS.r)
            if lhs - rhs < -1e-10 * max(abs(lhs), 1.0):
                c1_viol += 1
            gap = monotonicity_gap(y, z, dc.kappa, PARAMS)
            if gap < -1e-10 * (norm(y, "V") ** 2 + norm(z, "V") ** 2):
                mono_viol += 1
        assert c1_viol == 0 and mono_viol == 0

        dt = time.perf_counter() - t0
        assert dt <= 120.0
        report("1 operator-properties", True,
               f"(500 pairs, zero violations, {dt:.0f}s)")

    def test_02_commutation_identity_refinement(self):
        t0 = time.perf_counter()
        fine = GridSpec(2, 256)
        gen = crng.generator(3, 0, 0, crng.PURPOSE_FIELD)
        master = random_field(fine, gen, kmax=120, amplitude=2.0, decay=2.0)
        res = [commutation_identity_residual(restrict_field(master, GridSpec(2, n)), 3.0)
               for n in (32, 64, 128)]
        o1 = math.log2(res[0] / res[1])
        o2 = math.log2(res[1] / res[2])
        dt = time.perf_counter() - t0
        assert o1 >= 1.8 and o2 >= 1.8
        assert dt <= 120.0
        report("2 commutation-identity", True,
               f"(orders {o1:.2f}, {o2:.2f}, {dt:.0f}s)")

    def test_03_linear_exactness(self):
        p0 = ModelParams(beta=0.0, gamma=0.0)
        s = shear_field(GRID, 0.7)
        rate = 4 * np.pi ** 2 * p0.mu + p0.alpha
        errs = []
        for dt in (1e-3, 5e-4, 2.5e-4):
            traj = solve(s, None, None, TimeGrid(1.0, dt), p0)
            errs.append(norm(traj.final - s * math.exp(-rate), "H"))
        assert errs[0] <= 1e-8
        # the exact linear factor leaves only rounding noise; the halving
        # check allows the floor it sits on
        floor = 1e-12
        for e0, e1 in zip(errs, errs[1:]):
            assert e1 <= max(e0 / 2 ** 0.9, floor)
        report("3 linear-exactness", True, f"(endpoint error {errs[0]:.2e})")

    def test_04_finite_time_steering(self):
        t0 = time.perf_counter()
        dc = derived_constants(PARAMS)
        tg = TimeGrid(1.0, 1e-3)
        for i in range(5):
            y0 = field(20_000 + i, kmax=2, amplitude=0.4)
            y1 = field(21_000 + i, kmax=2, amplitude=0.35)
            g = norm(gamma_apply(y1, PARAMS), "H")
            d0 = norm(y0 - y1, "H")
            rho = 1.1 * rho_min(d0, g, dc.kappa, 1.0, margin=1.0)
            cfg = SteerConfig(target=y1, horizon=1.0, rho=rho,
                              delta=1e-3 * d0, eps_min=1e-4 * d0)
            traj, controls, rep = steer(y0, cfg, PARAMS, tg)
            assert rep.achieved_distance <= 1e-3 * d0, f"pair {i}"
            assert rep.first_hit_time is not None and \
                rep.first_hit_time <= rep.predicted_t0, f"pair {i}"
            assert rep.max_certificate_residual <= 1e-3, f"pair {i}"
            assert max(norm(v, "H") for v in controls) <= rho * (1 + 1e-12)
        dt = time.perf_counter() - t0
        assert dt <= 300.0
        report("4 finite-time-steering", True, f"(5 pairs, {dt:.0f}s)")

    def test_05_approximate_controllability(self):
        dc = derived_constants(PARAMS)
        tg = TimeGrid(1.0, 1e-3)
        y0 = field(22_000, kmax=2, amplitude=0.4)
        y1 = field(23_000, kmax=2, amplitude=0.35)
        g = norm(gamma_apply(y1, PARAMS), "H")
        d0 = norm(y0 - y1, "H")
        cfg = SteerConfig(target=y1, horizon=1.0,
                          rho=rho_min(d0, g, dc.kappa, 1.0),
                          delta=1e-3 * d0, eps_min=1e-4 * d0)
        endpoints = []
        for eps_tol in (1e-2, 1e-4):
            res = approx_steer_with_B(y0, cfg, PARAMS, tg, NOISE, eps_tol)
            bound = (math.exp(2 * dc.kappa) / (2 * dc.kappa) * math.sqrt(eps_tol)
                     + cfg.delta)
            assert res.endpoint_distance <= bound
            endpoints.append(res.endpoint_distance)
        assert endpoints[1] <= endpoints[0] * 1.1 + 1e-12
        report("5 approximate-controllability", True,
               f"(endpoints {endpoints[0]:.2e} -> {endpoints[1]:.2e})")

    def test_06_noise_statistics(self):
        t0 = time.perf_counter()
        # partial trace sums against an independent brute-force lattice sum
        for grid, eps in ((GRID, 2.5), (GridSpec(2, 128), 3.0)):
            spec = NoiseSpec(eps=eps, amplitude=1.0, master_seed=1)
            tq = trace_q(grid, spec)[0]
            taq = trace_aq(grid, spec)[0]
            c_lam = (2 * np.pi / grid.length) ** 2
            half = grid.modes // 2 - 1
            acc, acc_a = 2.0, 0.0
            for k1 in range(-half, half + 1):
                for k2 in range(-half, half + 1):
                    if k1 == 0 and k2 == 0:
                        continue
                    lam = c_lam * (k1 * k1 + k2 * k2)
                    acc += (1 + lam) ** -eps
                    acc_a += lam * (1 + lam) ** -eps
            assert abs(tq - acc) <= 1e-12 * acc
            assert abs(taq - acc_a) <= 1e-12 * max(acc_a, 1.0)

        # per-mode stationary variance over 1e4 samples, 20 modes, within 3 sigma
        basis = NoiseBasis(GRID, NOISE)
        n_modes, n_samples, n_steps = 20, 10_000, 50
        lam = basis.lam[:n_modes]
        mu_k = basis.mu[:n_modes]
        nu = PARAMS.mu * lam + PARAMS.alpha
        dtt = 10.0 / (n_steps * np.min(nu))
        decay = np.exp(-nu * dtt)
        sig = np.sqrt(mu_k * -np.expm1(-2 * nu * dtt) / (2 * nu))
        gen = crng.generator(NOISE.master_seed, 0, 0, crng.PURPOSE_OU)
        state = np.zeros((n_samples, n_modes))
        for _ in range(n_steps):
            state = decay * state + sig * gen.standard_normal((n_samples, n_modes))
        target = mu_k / (2 * nu) * -np.expm1(-2 * nu * n_steps * dtt)
        emp = np.var(state, axis=0, ddof=1)
        assert np.all(np.abs(emp - target) <= 3 * target * math.sqrt(2 / n_samples))

        # E || sqrt(Q) dW ||_H^2 = Tr Q * dt within 3 sigma
        trq = trace_q(GRID, NOISE)[0]
        dtw = 1e-2
        gen2 = crng.generator(NOISE.master_seed, 1, 0, crng.PURPOSE_OU)
        xi = gen2.standard_normal((n_samples, basis.n_modes))
        samples = np.sum(basis.mu * dtw * xi ** 2, axis=1)
        ci3 = 3 * np.std(samples, ddof=1) / math.sqrt(n_samples)
        assert abs(float(np.mean(samples)) - trq * dtw) <= ci3

        dt = time.perf_counter() - t0
        assert dt <= 180.0
        report("6 noise-statistics", True, f"({dt:.0f}s)")

    def test_07_stochastic_energy(self):
        t0 = time.perf_counter()
        x0 = FourierField.zero(GRID)

        # identity exactly closed at t = 0; refinement order of the audit
        # (RMS end defect over 48 paths tames the estimator noise of the
        # martingale-dominated residual)
        from concurrent.futures import ThreadPoolExecutor
        _, d0 = solve_direct(StochasticRunConfig(x0, TimeGrid(0.24, 4e-3),
                                                 PARAMS, NOISE), path=0)
        assert d0.ito_residual[0] == 0.0
        dts = (8e-3, 4e-3, 2e-3, 1e-3)
        n_paths = 48

        def end_residual(arg):
            dtt, path = arg
            _, dg = solve_direct(StochasticRunConfig(
                x0, TimeGrid(0.24, dtt), PARAMS, NOISE), path=path)
            return dg.ito_residual[-1]

        rms = []
        for dtt in dts:
            with ThreadPoolExecutor(max_workers=THREADS) as ex:
                ends = list(ex.map(end_residual, [(dtt, p) for p in range(n_paths)]))
            rms.append(float(np.sqrt(np.mean(np.square(ends)))))
        order = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
        assert order >= 0.4

        # H-level moment bound over 200 paths
        xs = field(30_000, kmax=2, amplitude=0.3)
        cfg = StochasticRunConfig(xs, TimeGrid(1.0, 2e-3), PARAMS, NOISE)
        res_h = expectation_bound_check("H", 200, cfg, threads=THREADS)
        assert res_h.passed

        # V-level bound for x in V at covariance exponent d/2 + 1.5
        res_v = expectation_bound_check("V", 60, cfg, threads=THREADS)
        assert res_v.passed

        dt = time.perf_counter() - t0
        assert dt <= 900.0
        report("7 stochastic-energy", True,
               f"(order {order:.2f}, H slack {res_h.slack:.1f}, "
               f"V slack {res_v.slack:.1f}, {dt:.0f}s)")

    def test_08_irreducibility_witness(self):
        t0 = time.perf_counter()
        tg = TimeGrid(1.0, 4e-3)
        dc = derived_constants(PARAMS)
        pairs = [
            (FourierField.zero(GRID), smooth_target(GRID, 0.4, 0.0, 40_001)),
            (smooth_target(GRID, -0.3, 0.2, 40_002), smooth_target(GRID, 0.25, 0.3, 40_003)),
            (smooth_target(GRID, 0.5, -0.1, 40_004), FourierField.zero(GRID)),
        ]
        for idx, (x, x1) in enumerate(pairs):
            d0 = norm(x - x1, "H")
            # pre-screen: a steering control reaches the target
            g = norm(gamma_apply(x1, PARAMS), "H")
            cfg = SteerConfig(target=x1, horizon=1.0,
                              rho=rho_min(d0, g, dc.kappa, 1.0),
                              delta=1e-2 * d0, eps_min=1e-4 * d0)
            _, _, rep = steer(x, cfg, PARAMS, TimeGrid(1.0, 4e-3))
            assert rep.success, f"pair {idx} failed steering pre-screen"

            exp = HittingExperiment(x, x1, tg, (0.5 * d0, 0.75 * d0, 1.0 * d0),
                                    200, NOISE, PARAMS, threads=THREADS)
            res = hitting_probability(exp)
            lo = res.ci[res.radii[0]][0]
            assert lo > 0.0, f"pair {idx}: CI lower bound {lo}"
            ps = [res.p_hat[r] for r in res.radii]
            assert all(a <= b for a, b in zip(ps, ps[1:])), f"pair {idx}"
        dt = time.perf_counter() - t0
        assert dt <= 1200.0
        report("8 irreducibility-witness", True, f"(3 pairs, {dt:.0f}s)")

    def test_09_shadowing_structure(self):
        t0 = time.perf_counter()
        dc = derived_constants(PARAMS)
        tg = TimeGrid(1.0, 4e-3)
        x = FourierField.zero(GRID)
        x1 = smooth_target(GRID, 0.4, 0.0, 40_001)
        g = norm(gamma_apply(x1, PARAMS), "H")
        d0 = norm(x - x1, "H")
        cfg = SteerConfig(target=x1, horizon=1.0,
                          rho=rho_min(d0, g, dc.kappa, 1.0),
                          delta=1e-3 * d0, eps_min=1e-4 * d0)
        ctrl = approx_steer_with_B(x, cfg, PARAMS, tg, NOISE, eps_tol=1e-2)
        res = shadowing_gap(x, ctrl, tg, PARAMS, NOISE, n_paths=200,
                            threads=THREADS)
        assert res.rank_correlation >= 0.3
        assert res.envelope_exponent <= (PARAMS.r + 1) / (2 * PARAMS.r) + 0.15
        dt = time.perf_counter() - t0
        report("9 shadowing-structure", True,
               f"(rank corr {res.rank_correlation:.2f}, "
               f"slope {res.envelope_exponent:.2f}, {dt:.0f}s)")

    def test_10_reproducibility_across_threads(self):
        # byte-identical report metrics for the same seed at different
        # thread counts, on a (reduced) hitting experiment
        grid = GridSpec(2, 32)
        x = FourierField.zero(grid)
        x1 = smooth_target(grid, 0.35, 0.05, 40_009)
        d0 = norm(x - x1, "H")
        blobs = []
        for threads in (1, 4):
            exp = HittingExperiment(x, x1, TimeGrid(0.25, 5e-3),
                                    (0.5 * d0, 1.0 * d0), 100, NOISE, PARAMS,
                                    threads=threads)
            res = hitting_probability(exp)
            rep = RunReport(kind="irreducibility", config={"seed": NOISE.master_seed},
                            seed_manifest=res.seed_manifest,
                            metrics=res.as_dict())
            blobs.append(rep.metrics_blob().encode())
        assert blobs[0] == blobs[1]
        report("10 reproducibility", True, "(byte-identical across threads)")

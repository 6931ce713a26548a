"""Model operators, derived constants and inequality probes."""

import math

import numpy as np
import pytest

from cbfed_lab import rng as crng
from cbfed_lab.operators import (
    AdmissibilityError,
    ModelParams,
    bilinear_B,
    c1_monotonicity_gap,
    commutation_identity_residual,
    damping_C1,
    derived_constants,
    eta4,
    eta5,
    eta6,
    eta7,
    explicit_rhs,
    gamma_apply,
    gamma_nonlinear,
    monotonicity_gap,
    pumping_C2,
    trilinear_b,
    varkappa,
)
from cbfed_lab.spectral import (
    DomainError,
    FourierField,
    GridSpec,
    dual_norm_surrogate,
    inner_h,
    norm,
    random_field,
    restrict_field,
    shear_field,
    stokes_apply,
)

from conftest import make_field


class TestModelParams:
    def test_defaults_admissible(self):
        ModelParams()

    def test_rejects_bad_exponents(self):
        with pytest.raises(AdmissibilityError):
            ModelParams(r=2.5)
        with pytest.raises(AdmissibilityError):
            ModelParams(q=5.0)
        with pytest.raises(AdmissibilityError):
            ModelParams(q=0.5)

    def test_critical_gate(self):
        with pytest.raises(AdmissibilityError):
            ModelParams(r=3.0, q=1.5, beta=0.4, mu=1.0)  # 2*beta*mu = 0.8
        ModelParams(r=3.0, q=1.5, beta=0.6, mu=1.0)  # 1.2 > 1 admissible

    def test_negative_constants_rejected(self):
        with pytest.raises(AdmissibilityError):
            ModelParams(mu=-1.0)
        with pytest.raises(AdmissibilityError):
            ModelParams(alpha=0.0)


class TestBilinear:
    def test_shear_flow_annihilated(self, grid32):
        s = shear_field(grid32, 0.9)
        assert norm(bilinear_B(s), "H") <= 1e-14

    def test_zero_field(self, grid32):
        assert norm(bilinear_B(FourierField.zero(grid32)), "H") == 0.0

    def test_cancellation_b_yzz(self, grid32):
        for seed in range(10):
            y = make_field(grid32, 100 + seed)
            z = make_field(grid32, 200 + seed)
            scale = norm(y, "H") * norm(z, "V") ** 2
            assert abs(trilinear_b(y, z, z)) <= 1e-10 * scale

    def test_antisymmetry(self, grid32):
        for seed in range(10):
            y = make_field(grid32, 300 + seed)
            z = make_field(grid32, 400 + seed)
            w = make_field(grid32, 500 + seed)
            scale = norm(y, "H") * norm(z, "V") * norm(w, "V")
            assert abs(trilinear_b(y, z, w) + trilinear_b(y, w, z)) <= 1e-10 * scale

    def test_b_with_zero_first_slot(self, grid16):
        z = make_field(grid16, 1)
        w = make_field(grid16, 2)
        assert trilinear_b(FourierField.zero(grid16), z, w) == 0.0

    def test_pairing_against_trilinear(self, grid32):
        y = make_field(grid32, 600)
        w = make_field(grid32, 601)
        lhs = inner_h(bilinear_B(y), w)
        rhs = trilinear_b(y, y, w)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(rhs), 1.0)


class TestNonlinearTerms:
    def test_zero_maps_to_zero(self, grid16):
        z = FourierField.zero(grid16)
        assert norm(damping_C1(z, 3.0), "H") == 0.0
        assert norm(pumping_C2(z, 2.0), "H") == 0.0

    def test_shear_r3_pairing_value(self, grid32):
        # <C1(y), y> = int sin^4 = (3/8) a^4 for the shear profile
        a = 1.1
        s = shear_field(grid32, a)
        val = inner_h(damping_C1(s, 3.0), s)
        assert abs(val - 3.0 / 8.0 * a ** 4) <= 1e-10

    def test_pairing_equals_lr_norm(self, grid32, params):
        for seed in range(5):
            y = make_field(grid32, 700 + seed)
            lr = norm(y, "Lp", p=params.r + 1.0) ** (params.r + 1.0)
            assert abs(inner_h(damping_C1(y, params.r), y) - lr) <= 1e-8 * lr

    def test_q_one_is_identity(self, grid32):
        y = make_field(grid32, 710)
        assert norm(pumping_C2(y, 1.0) - y, "H") <= 1e-12

    def test_c2_pairing(self, grid32, params):
        y = make_field(grid32, 711)
        lq = norm(y, "Lp", p=params.q + 1.0) ** (params.q + 1.0)
        assert abs(inner_h(pumping_C2(y, params.q), y) - lq) <= 1e-8 * lq

    def test_c1_monotonicity_lower_bound(self, grid32, params):
        for seed in range(30):
            y = make_field(grid32, 800 + seed)
            z = make_field(grid32, 900 + seed)
            lhs, rhs = c1_monotonicity_gap(y, z, params.r)
            assert lhs >= rhs - 1e-10 * max(abs(lhs), 1.0)

    def test_exponent_below_one_rejected(self, grid16):
        with pytest.raises(DomainError):
            damping_C1(make_field(grid16, 1), 0.5)

    def test_local_lipschitz_surrogate(self, grid32, params):
        # dual-norm surrogate of C1(y)-C1(z) against the Lipschitz constant
        r = params.r
        const = r * 2.0 ** (r - 2.0)
        for seed in range(10):
            y = make_field(grid32, 950 + seed)
            z = make_field(grid32, 960 + seed)
            lhs = dual_norm_surrogate(damping_C1(y, r) - damping_C1(z, r))
            rhs = const * (norm(y, "Lp", p=r + 1) ** (r - 1)
                           + norm(z, "Lp", p=r + 1) ** (r - 1)) \
                * norm(y - z, "Lp", p=r + 1)
            assert lhs <= rhs


class TestGamma:
    def test_zero(self, grid16, params):
        assert norm(gamma_apply(FourierField.zero(grid16), params), "H") == 0.0

    def test_linear_eigen_action_on_shear(self, grid32):
        p = ModelParams(beta=0.0, gamma=0.0)
        s = shear_field(grid32, 0.6)
        out = gamma_apply(s, p)
        factor = p.mu * (2 * np.pi) ** 2 + p.alpha
        assert norm(out - s * factor, "H") <= 1e-10

    def test_term_by_term_reassembly(self, grid32, params):
        y = make_field(grid32, 980)
        total = gamma_apply(y, params)
        parts = FourierField(grid32,
                             params.mu * stokes_apply(y).coeffs + params.alpha * y.coeffs,
                             divergence_free=True)
        parts = parts + bilinear_B(y) + params.beta * damping_C1(y, params.r) \
            + params.gamma * pumping_C2(y, params.q)
        assert norm(total - parts, "H") <= 1e-12 * norm(total, "H")

    def test_nonlinear_split(self, grid32, params):
        y = make_field(grid32, 981)
        nl = gamma_nonlinear(y, params)
        lin = FourierField(grid32,
                           params.mu * stokes_apply(y).coeffs + params.alpha * y.coeffs,
                           divergence_free=True)
        assert norm(lin + nl - gamma_apply(y, params), "H") <= 1e-12 * norm(nl, "H")

    def test_vdiag_keys(self, grid16, params):
        _, diag = explicit_rhs(make_field(grid16, 982), params, with_vdiag=True)
        assert {"lr1", "lq1", "pw_grad_r", "pw_grad_1"} <= set(diag)


class TestDerivedConstants:
    def test_printed_formula_value(self):
        p = ModelParams(r=5.0, q=2.0, beta=1.0, mu=1.0, gamma=1.0)
        dc = derived_constants(p)
        assert abs(dc.eta1 - 0.75 * 2.0 ** (1.0 / 3.0)) <= 1e-12
        assert abs(dc.eta1 - 0.944940787421155) <= 1e-9

    def test_q_one_collapses(self):
        dc = derived_constants(ModelParams(q=1.0, gamma=2.0))
        assert dc.eta1 == 0.0 and dc.eta2 == 0.0

    def test_gamma_zero_collapses(self):
        dc = derived_constants(ModelParams(gamma=0.0))
        assert dc.eta1 == 0.0 and dc.eta2 == 0.0

    def test_r3_sets_eta3_zero(self):
        dc = derived_constants(ModelParams(r=3.0, q=1.5))
        assert dc.eta3 == 0.0

    def test_kappa_is_sum(self, params):
        dc = derived_constants(params)
        assert dc.kappa == dc.eta1 + dc.eta2 + dc.eta3
        assert dc.kappa >= 0

    def test_eps_p31_scales_eta3(self, params):
        a = derived_constants(params, eps_p31=1.0)
        b = derived_constants(params, eps_p31=2.0)
        assert b.eta3 < a.eta3

    def test_beta_zero_rejected(self):
        with pytest.raises(AdmissibilityError):
            derived_constants(ModelParams(beta=0.0, gamma=0.0))

    def test_auxiliary_constants(self, params):
        # spot values for the energy-bound bookkeeping constants (r=4, q=2)
        assert abs(eta4(params) - (1.0 / 6.0) * (8.0 / 3.0) ** 2) <= 1e-12
        e5 = (2 * 0.5) ** (3.0 / 2.0) * (4.0 / 3.0) ** 0.5 * (2.0 / 3.0)
        assert abs(eta5(params) - e5) <= 1e-12
        assert eta7(params) < eta4(params)
        vk = (5.0 / 3.0) ** 1.5 * (2.0 / 5.0)
        assert abs(varkappa(params) - vk) <= 1e-12
        p3 = ModelParams(r=3.0, q=2.0)
        assert abs(eta6(p3, 0.5) - 0.5) <= 1e-12
        assert eta6(ModelParams(r=3.0, q=1.0), 0.5) == abs(p3.gamma)


class TestMonotonicity:
    def test_gap_zero_at_equal_inputs(self, grid32, params):
        y = make_field(grid32, 990)
        dc = derived_constants(params)
        assert abs(monotonicity_gap(y, y, dc.kappa, params)) <= 1e-12

    def test_linear_shear_pair_formula(self, grid32):
        # with B vanishing and gamma = 0 the gap is exactly
        # mu ||grad w||^2 + (alpha + kappa) ||w||^2 + beta <C1(y)-C1(z), w>
        p = ModelParams(gamma=0.0)
        y = shear_field(grid32, 0.8)
        z = shear_field(grid32, 0.3)
        w = y - z
        kappa = 0.7
        gap = monotonicity_gap(y, z, kappa, p)
        c1_term = inner_h(damping_C1(y, p.r) - damping_C1(z, p.r), w)
        expect = (p.mu * norm(w, "gradH") ** 2 + (p.alpha + kappa) * norm(w, "H") ** 2
                  + p.beta * c1_term)
        assert abs(gap - expect) <= 1e-10 * abs(expect)
        assert gap >= 0

    def test_random_pairs_nonnegative(self, grid32, params):
        dc = derived_constants(params)
        for seed in range(40):
            y = make_field(grid32, 1000 + seed)
            z = make_field(grid32, 1100 + seed)
            gap = monotonicity_gap(y, z, dc.kappa, params)
            scale = norm(y, "V") ** 2 + norm(z, "V") ** 2
            assert gap >= -1e-10 * scale


class TestCommutationIdentity:
    def test_zero_field_convention(self, grid16):
        assert commutation_identity_residual(FourierField.zero(grid16), 3.0) == 0.0

    def test_r_one_reduces_to_integration_by_parts(self, grid32):
        for seed in range(5):
            y = make_field(grid32, 1200 + seed, kmax=8)
            assert commutation_identity_residual(y, 1.0) <= 1e-10

    def test_refinement_decay_r3(self):
        fine = GridSpec(2, 256)
        master = random_field(fine, crng.generator(3, 0, 0, crng.PURPOSE_FIELD),
                              kmax=120, amplitude=2.0, decay=2.0)
        res = [commutation_identity_residual(restrict_field(master, GridSpec(2, n)), 3.0)
               for n in (32, 64, 128)]
        assert res[0] > res[1] > res[2]
        assert math.log2(res[0] / res[1]) >= 1.8
        assert math.log2(res[1] / res[2]) >= 1.8

import numpy as np
import pytest

from nctorus.bundle import (
    AlgebraSection,
    build_twist,
    fiber_involution,
    random_connection,
    random_section,
    zero_connection,
)
from nctorus.clifford import build_clifford
from nctorus.fluctuation import (
    abelian_sigma3_field,
    build_fluctuation,
    curvature,
    fluctuated_dirac,
    fluctuation_operator,
    gamma_one_form_op,
    gauge_transform,
    gauge_transformed_field,
    plaquette_curvature,
    random_gauge_field,
    unitary_section,
    yang_mills_functional,
)
from nctorus.torus import TrigPoly, square_torus
from nctorus.triple import assemble_triple

GEOM2 = square_torus(2)
CM2 = build_clifford(2)


def triple_d2(flux=0, K=3, conn_scale=0.3, seed=0):
    tw = build_twist(2, flux)
    if conn_scale == 0.0:
        conn = zero_connection(tw, GEOM2)
    else:
        conn = random_connection(tw, GEOM2, 1, np.random.default_rng(seed), scale=conn_scale)
    return assemble_triple(tw, conn, GEOM2, CM2, K, (0.5, 0.5))


class TestBuildFluctuation:
    def test_unit_pair_gives_zero(self):
        st = triple_d2(flux=1, seed=1)
        one = AlgebraSection.unit(st.twist, GEOM2)
        fl = build_fluctuation(st, [(one, one)])
        assert max(c.coeff_norm() for c in fl.a_mu) <= 1e-15
        assert fl.presym_defect <= 1e-15

    def test_flux0_matrix_unit_pair_closed_form(self):
        # pair (E11, E11 e^{i x_1}), omega = 0:
        # A_mu = -i a d_mu b symmetrised; d_1 b = i e^{ix_1} E11, so the raw
        # potential is E11 e^{ix_1} whose Hermitian part is E11 cos(x_1).
        st = triple_d2(flux=0, conn_scale=0.0)
        E11 = np.diag([1.0, 0.0])
        a = AlgebraSection.from_matrix_poly(st.twist, GEOM2, {(0, 0): E11})
        b = AlgebraSection.from_matrix_poly(st.twist, GEOM2, {(1, 0): E11})
        fl = build_fluctuation(st, [(a, b)])
        pts = GEOM2.grid(9)
        expected = np.cos(pts[:, 0])[:, None, None] * E11
        assert np.max(np.abs(fl.a_mu[0].sample(pts) - expected)) <= 1e-13
        assert fl.a_mu[1].coeff_norm() <= 1e-15
        assert fl.presym_defect > 0.1  # e^{ix} E11 is genuinely non-Hermitian

    def test_operator_matches_gamma_one_form(self):
        st = triple_d2(flux=1, seed=2)
        rng = np.random.default_rng(3)
        pairs = [
            (random_section(st.twist, GEOM2, 1, rng), random_section(st.twist, GEOM2, 1, rng))
            for _ in range(2)
        ]
        fl = build_fluctuation(st, pairs)
        A = fluctuation_operator(st, fl)
        # oracle: independently contract gamma^mu with left multiplication
        B = gamma_one_form_op(st, fl.a_mu, action="left")
        v = st.random_vector(rng)
        assert np.linalg.norm(A(v) - B(v)) <= 1e-13
        assert max(c.trace_poly().max_abs_coeff() for c in fl.pert) <= 1e-14

    def test_pert_components_antihermitian_traceless(self):
        st = triple_d2(flux=1, seed=4)
        rng = np.random.default_rng(5)
        pairs = [(random_section(st.twist, GEOM2, 1, rng), random_section(st.twist, GEOM2, 1, rng))]
        fl = build_fluctuation(st, pairs)
        for c in fl.pert:
            assert (0.5 * (c + c.star())).coeff_norm() <= 1e-13
            assert c.trace_poly().max_abs_coeff() <= 1e-14


class TestFluctuatedDirac:
    def test_central_field_is_eliminated(self):
        # A_mu = i alpha(x) Id changes nothing: ad of central sections vanishes
        st = triple_d2(flux=0, seed=6)
        alpha = TrigPoly.cosine(GEOM2, 0, 0.8) + TrigPoly.sine(GEOM2, 1, 0.3)
        central = AlgebraSection(
            st.twist,
            GEOM2,
            np.concatenate(
                [1j * alpha.coeffs[None], np.zeros((3,) + alpha.coeffs.shape)], axis=0
            ),
        )
        DA = fluctuated_dirac(st, [central, central])
        v = st.random_vector(np.random.default_rng(7))
        assert np.linalg.norm(DA(v) - st.dirac(v)) <= 1e-12

    def test_zero_field_returns_dirac(self):
        st = triple_d2(flux=1, seed=8)
        zero = AlgebraSection.zero(st.twist, GEOM2)
        DA = fluctuated_dirac(st, [zero, zero])
        v = st.random_vector(np.random.default_rng(9))
        assert np.linalg.norm(DA(v) - st.dirac(v)) == 0.0

    def test_constant_abelian_field_shifted_adjoint_spectrum(self):
        # flux 0, constant field i*c*sigma_3 in component 1: the adjoint action
        # diagonalises with eigenvalues {0, 0, +-2c}, so the spectrum is the
        # union of free spectra with k_1 shifted by 0, 0, +-2c.
        c = 0.35
        st = triple_d2(flux=0, conn_scale=0.0, K=2)
        field = [
            AlgebraSection.from_matrix_poly(st.twist, GEOM2, {(0, 0): 1j * c * np.diag([1, -1])}),
            AlgebraSection.zero(st.twist, GEOM2),
        ]
        DA = fluctuated_dirac(st, field)
        lat = st.lattice
        ks = lat.kflat[: lat.block_sizes[0]]
        expected = []
        for shift in (0.0, 0.0, 2 * c, -2 * c):
            norms = np.sqrt((ks[:, 0] + shift) ** 2 + ks[:, 1] ** 2)
            expected.extend(np.concatenate([norms, -norms]))
        assert np.allclose(np.sort(DA.eigenvalues()), np.sort(expected), atol=1e-10)

    def test_non_selfadjoint_field_rejected(self):
        st = triple_d2(flux=1, seed=10)
        bad = random_section(st.twist, GEOM2, 1, np.random.default_rng(11), hermitian=True)
        zero = AlgebraSection.zero(st.twist, GEOM2)
        with pytest.raises(ValueError, match="anti-Hermitian"):
            fluctuated_dirac(st, [bad, zero])

    def test_hermitian(self):
        st = triple_d2(flux=1, seed=12)
        field = random_gauge_field(st, 1, np.random.default_rng(13))
        DA = fluctuated_dirac(st, field)
        assert DA.hermiticity_residual(np.random.default_rng(14)) <= 1e-12


class TestGaugeTransform:
    def test_identity_gauge_fixes_field(self):
        st = triple_d2(flux=1, seed=15)
        field = random_gauge_field(st, 1, np.random.default_rng(16))
        u = AlgebraSection.unit(st.twist, GEOM2)
        new, residual = gauge_transform(st, field, u)
        assert residual <= 1e-12
        for old_c, new_c in zip(field, new):
            assert (old_c - new_c).coeff_norm() <= 1e-13

    def test_pure_gauge_is_isospectral_to_free(self):
        st = triple_d2(flux=0, conn_scale=0.0, K=8)
        gen = 0.25j * np.diag([1.0, -1.0])
        g = AlgebraSection.from_matrix_poly(
            st.twist, GEOM2, {(1, 0): 0.5 * gen, (-1, 0): 0.5 * gen}
        )  # i*0.25*sigma3*cos(x1)
        u = unitary_section(g)
        zero = [AlgebraSection.zero(st.twist, GEOM2)] * 2
        pure, residual = gauge_transform(st, zero, u)
        assert residual <= 1e-8
        # dense spectra agree in the bulk: compare spectral actions at a
        # scale suppressing the truncation edge (Lambda = kmax/6)
        DA = fluctuated_dirac(st, pure)
        ev_a, ev_b = DA.eigenvalues(), st.dirac.eigenvalues()
        lam = np.max(np.abs(ev_b)) / 6.0
        sa = np.sum(np.exp(-((ev_a / lam) ** 2)))
        sb = np.sum(np.exp(-((ev_b / lam) ** 2)))
        assert abs(sa - sb) <= 1e-8 * abs(sb)

    @pytest.mark.parametrize("flux", [0, 1])
    def test_random_gauge_covariance(self, flux):
        st = triple_d2(flux=flux, seed=17 + flux)
        rng = np.random.default_rng(18 + flux)
        field = random_gauge_field(st, 1, rng)
        gen = 0.5 * random_section(st.twist, GEOM2, 1, rng, hermitian=False, traceless=True)
        u = unitary_section(gen)
        _, residual = gauge_transform(st, field, u, rng=rng)
        assert residual <= 1e-8

    def test_non_unitary_rejected(self):
        st = triple_d2(flux=1, seed=19)
        not_u = random_section(st.twist, GEOM2, 1, np.random.default_rng(20))
        field = random_gauge_field(st, 1, np.random.default_rng(21))
        with pytest.raises(ValueError, match="unitary"):
            gauge_transform(st, field, not_u)


class TestCurvature:
    def test_zero_field_zero_curvature(self):
        tw = build_twist(2, 1)
        F = curvature(zero_connection(tw, GEOM2))
        assert all(c.coeff_norm() <= 1e-15 for c in F.components.values())

    def test_abelian_embedded_analytic_curvature(self):
        # A_2 = i sigma_3 sin(x_1) -> F_12 = i sigma_3 cos(x_1)
        tw = build_twist(2, 0)
        st = assemble_triple(tw, zero_connection(tw, GEOM2), GEOM2, CM2, 2, (0.5, 0.5))
        field = abelian_sigma3_field(st, 1.0, wave_axis=0, comp_axis=1)
        F = curvature(st.connection, field)
        pts = GEOM2.grid(9)
        expected = 1j * np.cos(pts[:, 0])[:, None, None] * np.diag([1.0, -1.0])
        assert np.max(np.abs(F.f(0, 1).sample(pts) - expected)) <= 1e-13

    def test_constant_noncommuting_fields(self):
        # A_1 = i c1 sigma_1, A_2 = i c2 sigma_2 -> F_12 = [A_1, A_2] = -2 c1 c2 i sigma_3
        tw = build_twist(2, 0)
        c1, c2 = 0.7, 0.4
        s1 = np.array([[0, 1], [1, 0]], dtype=complex)
        s2 = np.array([[0, -1j], [1j, 0]])
        s3 = np.diag([1.0, -1.0])
        conn = zero_connection(tw, GEOM2)
        field = [
            AlgebraSection.from_matrix_poly(tw, GEOM2, {(0, 0): 1j * c1 * s1}),
            AlgebraSection.from_matrix_poly(tw, GEOM2, {(0, 0): 1j * c2 * s2}),
        ]
        F = curvature(conn, field)
        val = F.f(0, 1).sample(np.zeros((1, 2)))[0]
        assert np.max(np.abs(val - (-2.0 * c1 * c2 * 1j * s3))) <= 1e-13

    def test_invariants_and_bianchi_d4(self):
        geom = square_torus(4)
        cm = build_clifford(4)
        flux = np.zeros((4, 4), dtype=int)
        flux[0, 1], flux[1, 0] = 1, -1
        tw = build_twist(2, flux)
        rng = np.random.default_rng(22)
        conn = random_connection(tw, geom, 1, rng, scale=0.4)
        st = assemble_triple(tw, conn, geom, cm, 1, (0.5,) * 4)
        field = random_gauge_field(st, 1, rng, scale=0.3)
        F = curvature(conn, field)
        assert F.antihermiticity_residual() <= 1e-12
        assert F.trace_residual() <= 1e-13
        pts = rng.uniform(0, 2 * np.pi, size=(6, 4))
        assert F.bianchi_residual(pts) <= 1e-10

    def test_plaquette_holonomy_oracle(self):
        tw = build_twist(2, 1)
        conn = random_connection(tw, GEOM2, 1, np.random.default_rng(23), scale=0.5)
        field = [
            0.4 * random_section(tw, GEOM2, 1, np.random.default_rng(24), hermitian=False, traceless=True)
            for _ in range(2)
        ]
        F = curvature(conn, field)
        x = np.array([1.3, 2.1])
        exact = F.f(0, 1).sample(x[None, :])[0]
        errs = []
        for h in (0.02, 0.01):
            approx = plaquette_curvature(F.source, x, 0, 1, h)
            errs.append(np.max(np.abs(approx - exact)))
        assert errs[1] <= 0.6 * errs[0]  # first-order shrink of the O(h) defect
        assert errs[1] <= 0.05

    def test_gauge_covariance_of_curvature(self):
        st = triple_d2(flux=1, seed=25)
        rng = np.random.default_rng(26)
        field = random_gauge_field(st, 1, rng)
        gen = 0.4 * random_section(st.twist, GEOM2, 1, rng, hermitian=False, traceless=True)
        u = unitary_section(gen)
        new_field = gauge_transformed_field(st, field, u)
        F = curvature(st.connection, field)
        Fu = curvature(st.connection, new_field)
        pts = rng.uniform(0, 2 * np.pi, size=(8, 2))
        uvals = u.sample(pts)
        for (mu, nu) in F.components:
            lhs = Fu.f(mu, nu).sample(pts)
            rhs = np.einsum("pij,pjk,plk->pil", uvals, F.f(mu, nu).sample(pts), np.conj(uvals))
            assert np.max(np.abs(lhs - rhs)) <= 1e-10


class TestYangMills:
    def test_zero_field(self):
        tw = build_twist(2, 1)
        F = curvature(zero_connection(tw, GEOM2))
        assert yang_mills_functional(F)["value_norm"] == 0.0

    def test_abelian_closed_form(self):
        # F_12 = i sigma_3 cos(x_1): integral ||F||^2 = tr(sigma_3^2) * int cos^2
        #      = 2 * 2 pi^2 on the 2pi x 2pi torus
        tw = build_twist(2, 0)
        st = assemble_triple(tw, zero_connection(tw, GEOM2), GEOM2, CM2, 2, (0.5, 0.5))
        field = abelian_sigma3_field(st, 1.0)
        F = curvature(st.connection, field)
        ym = yang_mills_functional(F)
        assert np.isclose(ym["value_norm"], 2.0 * 2.0 * np.pi**2, rtol=1e-12)
        assert np.isclose(ym["value_trF2"], -ym["value_norm"])

    def test_quadratic_scaling_abelian(self):
        tw = build_twist(2, 0)
        st = assemble_triple(tw, zero_connection(tw, GEOM2), GEOM2, CM2, 2, (0.5, 0.5))
        lam = 1.7
        f1 = yang_mills_functional(curvature(st.connection, abelian_sigma3_field(st, 1.0)))
        f2 = yang_mills_functional(curvature(st.connection, abelian_sigma3_field(st, lam)))
        assert np.isclose(f2["value_norm"], lam**2 * f1["value_norm"], rtol=1e-12)

    def test_gauge_invariance(self):
        st = triple_d2(flux=1, seed=27)
        rng = np.random.default_rng(28)
        field = random_gauge_field(st, 1, rng)
        u = unitary_section(0.5 * random_section(st.twist, GEOM2, 1, rng, hermitian=False, traceless=True))
        new_field = gauge_transformed_field(st, field, u)
        v1 = yang_mills_functional(curvature(st.connection, field))["value_norm"]
        v2 = yang_mills_functional(curvature(st.connection, new_field))["value_norm"]
        assert abs(v1 - v2) <= 1e-10 * max(1.0, abs(v1))

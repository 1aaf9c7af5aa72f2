"""Inner fluctuations, gauge transformations and field strength.

Sign bookkeeping (one canonical storage form to prevent drift):

* gauge potentials extracted from commutator pairs are stored as pointwise
  Hermitian sections A_mu with A_mu = -i sum_j a_j nabla_mu(b_j), so the
  fluctuation operator is literally A = sum_mu gamma^mu L_{A_mu};
* the combined operator D_A = D + A + eps' J A J^{-1} acts as
  D + sum_mu gamma^mu ad(A_mu), i.e. the total anti-Hermitian gauge field is
  omega_mu + i A_mu; perturbation fields ("pert") are stored anti-Hermitian;
* curvature components F_munu are anti-Hermitian and traceless, so
  tr F^2 <= 0 pointwise; reports carry that value and the positive norm
  convention -tr F^2 side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .bundle import (
    AlgebraSection,
    BundleConnection,
    commutator,
    fiber_involution,
    fiber_product,
    random_section,
)
from .operators import OperatorHandle
from .triple import SpectralTripleData


def _validate_pert(st, pert, tol=1e-10, require_traceless=False):
    pert = list(pert)
    if len(pert) != st.geometry.dim:
        raise ValueError(f"need {st.geometry.dim} field components")
    for comp in pert:
        if comp.twist != st.twist:
            raise ValueError("incompatible twists")
        herm = 0.5 * (comp + comp.star())
        if herm.coeff_norm() > tol * max(comp.coeff_norm(), 1.0):
            raise ValueError("gauge field components must be anti-Hermitian")
        if require_traceless and comp.trace_poly().max_abs_coeff() > tol:
            raise ValueError("gauge field components must be traceless")
    return pert


@dataclass
class InnerFluctuation:
    """Gauge potential data extracted from sum_j a_j [D, b_j]."""

    pairs: list
    a_mu: list  # Hermitian 1-form components (after symmetrisation)
    pert: list  # anti-Hermitian traceless components of the total field shift
    presym_defect: float
    trace_part_norm: float


def gamma_one_form_op(st: SpectralTripleData, components, action: str = "left") -> OperatorHandle:
    """Operator sum_mu gamma^mu (x) M_mu with M_mu a (left/right/ad) multiplier."""
    lat = st.lattice
    gammas = [np.ascontiguousarray(g) for g in st.clifford.gammas]
    plans = []
    for comp in components:
        if action == "ad":
            plans.append(lat.commutator_plans(comp))
        else:
            plans.append((lat.mult_plan(comp, action), None))

    def apply(v):
        v2 = v.reshape(lat.bdim, lat.spinor_dim)
        out = np.zeros_like(v2)
        for mu, (plan_a, plan_b) in enumerate(plans):
            w = lat.apply_plan(plan_a, v2)
            if plan_b is not None:
                lat.apply_plan(plan_b, -v2, out=w)
            out += w @ gammas[mu].T
        return out.reshape(-1)

    return OperatorHandle(lat.hilbert_dim, apply=apply, hermitian=False, label=f"gamma_{action}")


def build_fluctuation(st: SpectralTripleData, pairs) -> InnerFluctuation:
    """Extract A_mu = -i sum_j a_j nabla_mu(b_j) and reduce it.

    The raw potential is symmetrised to its Hermitian part (the defect is
    recorded) and the pointwise trace part is removed (unimodular reduction);
    the removed central part never acts on the triple since the combined
    operator only sees ad(A_mu).
    """
    d = st.geometry.dim
    conn = st.connection
    a_mu = [AlgebraSection.zero(st.twist, st.geometry) for _ in range(d)]
    for a, b in pairs:
        if a.twist != st.twist or b.twist != st.twist:
            raise ValueError("fluctuation pairs must live on the triple's twist")
        for mu in range(d):
            a_mu[mu] = a_mu[mu] + (-1j) * fiber_product(a, conn.deriv(b, mu))
    presym = 0.0
    symmetrised = []
    for comp in a_mu:
        herm = comp.hermitian_part()
        presym = max(presym, (comp - herm).coeff_norm())
        symmetrised.append(herm.trim())
    trace_norm = max(c.trace_poly().max_abs_coeff() for c in symmetrised)
    pert = [(1j * c.traceless_part()).trim() for c in symmetrised]
    return InnerFluctuation(
        pairs=list(pairs),
        a_mu=symmetrised,
        pert=pert,
        presym_defect=presym,
        trace_part_norm=trace_norm,
    )


def fluctuation_operator(st: SpectralTripleData, fluct: InnerFluctuation) -> OperatorHandle:
    """The raw perturbation A = sum_mu gamma^mu (left mult by A_mu)."""
    return gamma_one_form_op(st, fluct.a_mu, action="left")


def fluctuated_dirac(st: SpectralTripleData, fluct_or_field) -> OperatorHandle:
    """D_A = D + A + eps' J A J^{-1}, acting as D + gamma^mu ad(A_mu).

    Accepts an InnerFluctuation or a direct anti-Hermitian 1-form field
    (the parametrisation by adjoint-valued sections); central components act
    trivially, which is the u(1) elimination.
    """
    if isinstance(fluct_or_field, InnerFluctuation):
        pert = fluct_or_field.pert
    else:
        pert = _validate_pert(st, fluct_or_field)
    lat = st.lattice
    if all(not np.any(c.coeffs) for c in pert):
        return OperatorHandle(
            lat.hilbert_dim, apply=st.dirac.apply, hermitian=True, label="dirac_fluctuated"
        )
    gammas = [np.ascontiguousarray(g) for g in st.clifford.gammas]
    plans = [lat.commutator_plans(c) for c in pert]
    base = st.dirac

    def apply(v):
        out2 = base.apply(v).reshape(lat.bdim, lat.spinor_dim)
        v2 = v.reshape(lat.bdim, lat.spinor_dim)
        for mu, (pl, pr) in enumerate(plans):
            w = lat.apply_plan(pl, v2)
            lat.apply_plan(pr, -v2, out=w)
            out2 += (-1j * w) @ gammas[mu].T
        return out2.reshape(-1)

    return OperatorHandle(lat.hilbert_dim, apply=apply, hermitian=True, label="dirac_fluctuated")


def unitary_section(generator: AlgebraSection, order: int = 24) -> AlgebraSection:
    """exp(generator) for an anti-Hermitian section, by coefficient power series.

    The series is evaluated exactly at coefficient level (windows grow per
    term); the order must dominate the generator size, which is checked by a
    unitarity sample test.
    """
    twist, geometry = generator.twist, generator.geometry
    herm = 0.5 * (generator + generator.star())
    if herm.coeff_norm() > 1e-12 * max(generator.coeff_norm(), 1.0):
        raise ValueError("generator must be anti-Hermitian for a unitary section")
    out = AlgebraSection.unit(twist, geometry)
    term = AlgebraSection.unit(twist, geometry)
    for n in range(1, order + 1):
        term = fiber_product((1.0 / n) * term, generator).prune(1e-12)
        out = out + term
    out = out.prune(1e-12)
    res = unitarity_residual(out)
    if res > 1e-10:
        raise ValueError(f"exp series did not converge to a unitary (residual {res:.2e})")
    return out


def unitarity_residual(u: AlgebraSection, samples: int = 8) -> float:
    pts = np.random.default_rng(0).uniform(0, 1, size=(samples, u.geometry.dim)) * np.asarray(
        u.geometry.lengths
    )
    vals = u.sample(pts)
    eye = np.eye(u.twist.N)
    worst = 0.0
    for m in vals:
        worst = max(worst, float(np.max(np.abs(m @ m.conj().T - eye))))
    return worst


def gauge_transformed_field(st: SpectralTripleData, pert, u: AlgebraSection):
    """Total-field gauge transform: omega + pert -> u(.)u* + u d(u*), minus omega."""
    conn = st.connection
    ustar = fiber_involution(u)
    out = []
    for mu in range(st.geometry.dim):
        total = conn.omega[mu] + pert[mu]
        transformed = fiber_product(fiber_product(u, total), ustar) + fiber_product(
            u, ustar.derivative(mu)
        )
        out.append((transformed - conn.omega[mu]).prune(1e-12))
    return out


def gauge_conjugation_op(st: SpectralTripleData, u: AlgebraSection) -> OperatorHandle:
    """U = u J u J^{-1}: the adjoint action v -> u v u* on the bundle factor."""
    lat = st.lattice
    left = lat.mult_plan(u, "left")
    right = lat.mult_plan(fiber_involution(u), "right")

    def apply(v):
        v2 = v.reshape(lat.bdim, lat.spinor_dim)
        return lat.apply_plan(left, lat.apply_plan(right, v2)).reshape(-1)

    return OperatorHandle(lat.hilbert_dim, apply=apply, hermitian=False, label="gauge_conj")


def gauge_transform(st: SpectralTripleData, pert, u: AlgebraSection, probes: int = 4, rng=None):
    """Transform the gauge field by a unitary section and verify covariance.

    Returns (transformed field, covariance residual): the residual is
    || U D_A U* v - D_{A^u} v || over probes supported on the base lattice,
    with all operators applied on an enlarged lattice so compression cannot
    leak.  Non-unitary u is rejected.
    """
    rng = np.random.default_rng(3) if rng is None else rng
    res = unitarity_residual(u)
    if res > 1e-10:
        raise ValueError(f"gauge section is not unitary (residual {res:.2e})")
    pert = _validate_pert(st, pert)
    new_pert = gauge_transformed_field(st, pert, u)

    # reach of U D_A U^{-1} on a base-lattice probe vs reach of D_{A^u}
    p_field = max(c.support + 1 for c in pert + list(st.connection.omega))
    p_new = max((c.support + 1 for c in new_pert), default=0)
    extra = max(2 * (u.support + 1) + p_field, p_new) + 1
    big = st.enlarged(extra)
    DA_big = fluctuated_dirac(big, [c for c in pert])
    DAu_big = fluctuated_dirac(big, new_pert)
    U = gauge_conjugation_op(big, u)
    Uinv = gauge_conjugation_op(big, fiber_involution(u))

    worst = 0.0
    for _ in range(probes):
        v = st.random_vector(rng).reshape(st.lattice.bdim, -1)
        v_big = st.lattice.embed(v, big.lattice).reshape(-1)
        lhs = U(DA_big(Uinv(v_big)))
        rhs = DAu_big(v_big)
        worst = max(worst, np.linalg.norm(lhs - rhs))
    return new_pert, worst


@dataclass
class FieldStrength:
    """Curvature components of the total connection nabla + pert."""

    twist: object
    geometry: object
    components: dict  # (mu, nu) with mu < nu -> AlgebraSection
    source: list = field(default_factory=list)

    def f(self, mu: int, nu: int) -> AlgebraSection:
        if mu == nu:
            return AlgebraSection.zero(self.twist, self.geometry)
        if mu < nu:
            return self.components[(mu, nu)]
        return -1.0 * self.components[(nu, mu)]

    def antihermiticity_residual(self) -> float:
        return max(
            (0.5 * (c + c.star())).coeff_norm() for c in self.components.values()
        )

    def trace_residual(self) -> float:
        return max(c.trace_poly().max_abs_coeff() for c in self.components.values())

    def bianchi_residual(self, points) -> float:
        """Sampled defect of d F + [A, F] totally antisymmetrised (d=4 only)."""
        d = self.geometry.dim
        if d < 3:
            return 0.0
        worst = 0.0
        for lam in range(d):
            for mu in range(lam + 1, d):
                for nu in range(mu + 1, d):
                    total = None
                    for (l, m, n) in ((lam, mu, nu), (mu, nu, lam), (nu, lam, mu)):
                        term = self.f(m, n).derivative(l) + commutator(self.source[l], self.f(m, n))
                        total = term if total is None else total + term
                    worst = max(worst, float(np.max(np.abs(total.sample(points)))))
        return worst


def curvature(conn: BundleConnection, pert=None) -> FieldStrength:
    """F_munu = d_mu A_nu - d_nu A_mu + [A_mu, A_nu] for A = omega + pert."""
    d = conn.geometry.dim
    if pert is None:
        pert = [AlgebraSection.zero(conn.twist, conn.geometry)] * d
    total = [conn.omega[mu] + pert[mu] for mu in range(d)]
    comps = {}
    for mu in range(d):
        for nu in range(mu + 1, d):
            f = total[nu].derivative(mu) - total[mu].derivative(nu) + commutator(
                total[mu], total[nu]
            )
            comps[(mu, nu)] = f.trim()
    return FieldStrength(conn.twist, conn.geometry, comps, source=total)


def plaquette_curvature(total_field, x, mu: int, nu: int, h: float) -> np.ndarray:
    """Finite holonomy oracle: log of the small square Wilson loop over h^2.

    Agrees with the curvature component F_munu(x) up to O(h) (O(h^2) on the
    symmetrised error after Richardson in tests).
    """
    from scipy.linalg import logm

    def link(point, axis, sign):
        a = total_field[axis].sample(np.atleast_2d(point))[0]
        return expm(sign * h * a)

    e_mu = np.zeros(len(x))
    e_nu = np.zeros(len(x))
    e_mu[mu], e_nu[nu] = h, h
    w = (
        link(x, mu, +1)
        @ link(x + e_mu, nu, +1)
        @ link(x + e_nu, mu, -1)
        @ link(x, nu, -1)
    )
    return logm(w) / h**2


def yang_mills_functional(F: FieldStrength) -> dict:
    """Integrated field strength, single-counted over mu < nu.

    Uses the unnormalised fiber trace tr (not tr/N).  With anti-Hermitian
    storage tr F^2 <= 0; both that value and the positive norm convention are
    returned: value_norm = -value_trF2 = sum_{mu<nu} integral ||F_munu||^2.
    """
    tr_f2 = 0.0
    for c in F.components.values():
        dens = fiber_product(c, c).trace_poly()
        tr_f2 += F.twist.N * float(dens.integral().real)
    return {
        "value_trF2": tr_f2,
        "value_norm": -tr_f2,
        "trace_convention": "unnormalized fiber trace, single-counted mu < nu",
    }


def random_gauge_field(st: SpectralTripleData, window: int, rng, scale: float = 0.4):
    """Random anti-Hermitian traceless 1-form on the triple's twist."""
    return [
        scale * random_section(st.twist, st.geometry, window, rng, hermitian=False, traceless=True)
        for _ in range(st.geometry.dim)
    ]


def abelian_sigma3_field(st: SpectralTripleData, amplitude: float, wave_axis: int = 0, comp_axis: int = 1):
    """Abelian-embedded field i*amp*diag(1,-1)*sin(x_wave) in one component.

    Only valid on flux-0 twists with N = 2 (the constant diagonal matrix is
    not twisted-equivariant otherwise).
    """
    if st.twist.plane_flux != 0 or st.twist.N != 2:
        raise ValueError("abelian sigma_3 embedding needs N=2 at flux 0")
    sigma3 = np.diag([1.0, -1.0])
    terms = {}
    plus = [0] * st.geometry.dim
    plus[wave_axis] = 1
    terms[tuple(plus)] = 0.5 * amplitude * sigma3  # i*sin = (e^{ix} - e^{-ix})/2
    terms[tuple(-p for p in plus)] = -0.5 * amplitude * sigma3
    wave = AlgebraSection.from_matrix_poly(st.twist, st.geometry, terms)
    out = [AlgebraSection.zero(st.twist, st.geometry) for _ in range(st.geometry.dim)]
    out[comp_axis] = wave
    return out

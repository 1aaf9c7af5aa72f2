"""Twisted matrix-algebra bundles over flat tori and their section algebra.

A twist sector is realised by clock/shift boundary matrices Omega_mu acting
in the adjoint: sections are matrix-valued trigonometric polynomials with
s(x + L_mu e_mu) = Omega_mu s(x) Omega_mu^{-1}.  The monomial basis
T_(a,b) = Q^a P^b diagonalises all Ad(Omega_mu) simultaneously, so each
sector (a,b) carries fractional momentum offsets forced by equivariance and
all fiber operations are exact at coefficient level:

* products:    T_s T_t = phase * T_(s+t), integer mode carries absorb
               offset wrap-around;
* involution:  T_s^dagger = phase * T_(-s), modes reflect with a carry.

Coefficients of one section live on a symmetric integer window [-W, W]^d
shared by all sectors; operations enlarge the window as needed so that
results stay exact (projections happen only when operators are compressed
onto a Hilbert-space lattice).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from .torus import TorusGeometry, TrigPoly, _pad_window

_EINSUM_AXES = "abcd"


def clock_matrix(N: int) -> np.ndarray:
    return np.diag(np.exp(2j * np.pi * np.arange(N) / N))


def shift_matrix(N: int) -> np.ndarray:
    return np.roll(np.eye(N, dtype=complex), 1, axis=0)


def _round_root_of_unity(z: complex, N: int):
    """Snap a near-unimodular number to the nearest N-th root of unity."""
    if abs(abs(z) - 1.0) > 1e-8:
        raise ValueError(f"value {z} is not unimodular")
    j = int(np.round(np.angle(z) * N / (2.0 * np.pi))) % N
    exact = np.exp(2j * np.pi * j / N)
    if abs(z - exact) > 1e-8:
        raise ValueError(f"value {z} is not an {N}-th root of unity")
    return j, exact


class TwistData:
    """Flux sector of a locally trivial M_N(C)-algebra bundle over T^d.

    The commutation invariant Omega_mu Omega_nu =
    exp(2 pi i n_munu / N) Omega_nu Omega_mu holds exactly; sector tables
    (product sector, exact phase, integer mode carry) are derived from the
    matrices and snapped to exact roots of unity.
    """

    def __init__(self, N: int, flux: np.ndarray, dim: int):
        if N < 1:
            raise ValueError(f"N={N} must be >= 1")
        flux = np.asarray(flux, dtype=int)
        if flux.shape != (dim, dim) or np.any(flux != -flux.T):
            raise ValueError("flux must be an antisymmetric integer d x d matrix")
        nontrivial = {(mu, nu) for mu in range(dim) for nu in range(dim) if flux[mu, nu] % N}
        if not nontrivial <= {(0, 1), (1, 0)}:
            raise ValueError("only a twist in the (1,2) plane is supported")
        self.N = int(N)
        self.dim = int(dim)
        self.flux = flux
        self.plane_flux = int(flux[0, 1]) % N if dim >= 2 else 0

        eye = np.eye(N, dtype=complex)
        omegas = [eye] * dim
        if self.plane_flux != 0:
            omegas[0] = clock_matrix(N)
            omegas[1] = np.linalg.matrix_power(shift_matrix(N), self.plane_flux)
        self.omegas = tuple(omegas)

        Q, P = clock_matrix(N), shift_matrix(N)
        self.sectors = [(a, b) for a in range(N) for b in range(N)]
        self.n_sectors = N * N
        self.sector_mats = np.stack(
            [
                np.linalg.matrix_power(Q, a) @ np.linalg.matrix_power(P, b)
                for a, b in self.sectors
            ]
        )
        self._sector_index = {s: i for i, s in enumerate(self.sectors)}
        self._build_tables()

    def _build_tables(self):
        N, ns, d = self.N, self.n_sectors, self.dim
        mats = self.sector_mats

        # offsets from the equivariance constraint: Ad(Omega_mu) eigenphase
        offsets = np.zeros((ns, d))
        for i in range(ns):
            for mu in range(d):
                conj = self.omegas[mu] @ mats[i] @ self.omegas[mu].conj().T
                lam = np.trace(mats[i].conj().T @ conj) / N
                j, exact = _round_root_of_unity(lam, N)
                if np.max(np.abs(conj - exact * mats[i])) > 1e-12:
                    raise ValueError("sector is not an Ad eigenvector of the twist")
                offsets[i, mu] = j / N
        self.offsets = offsets

        self.mul_sector = np.zeros((ns, ns), dtype=int)
        self.mul_phase = np.zeros((ns, ns), dtype=complex)
        self.mul_carry = np.zeros((ns, ns, d), dtype=int)
        for i, (a, b) in enumerate(self.sectors):
            for j, (a2, b2) in enumerate(self.sectors):
                k = self._sector_index[((a + a2) % N, (b + b2) % N)]
                lam = np.trace(mats[k].conj().T @ (mats[i] @ mats[j])) / N
                _, exact = _round_root_of_unity(lam, N)
                if np.max(np.abs(mats[i] @ mats[j] - exact * mats[k])) > 1e-12:
                    raise ValueError("sector product is not monomial")
                self.mul_sector[i, j] = k
                self.mul_phase[i, j] = exact
                carry = offsets[i] + offsets[j] - offsets[k]
                self.mul_carry[i, j] = np.rint(carry).astype(int)

        self.star_sector = np.zeros(ns, dtype=int)
        self.star_phase = np.zeros(ns, dtype=complex)
        self.star_carry = np.zeros((ns, d), dtype=int)
        for i, (a, b) in enumerate(self.sectors):
            k = self._sector_index[((-a) % N, (-b) % N)]
            lam = np.trace(mats[k].conj().T @ mats[i].conj().T) / N
            _, exact = _round_root_of_unity(lam, N)
            self.star_sector[i] = k
            self.star_phase[i] = exact
            self.star_carry[i] = -np.rint(offsets[i] + offsets[k]).astype(int)

    def commutation_residual(self) -> float:
        """Max defect of Omega_mu Omega_nu = exp(2 pi i n_munu/N) Omega_nu Omega_mu."""
        worst = 0.0
        for mu in range(self.dim):
            for nu in range(self.dim):
                phase = np.exp(2j * np.pi * self.flux[mu, nu] / self.N)
                lhs = self.omegas[mu] @ self.omegas[nu]
                rhs = phase * self.omegas[nu] @ self.omegas[mu]
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst

    def __eq__(self, other):
        return (
            isinstance(other, TwistData)
            and self.N == other.N
            and self.dim == other.dim
            and np.array_equal(self.flux % self.N, other.flux % other.N)
        )


def build_twist(N: int, flux, dim: int = 2) -> TwistData:
    """Clock/shift twist data for an integer flux (scalar n_12 or a matrix)."""
    if np.isscalar(flux):
        mat = np.zeros((dim, dim), dtype=int)
        if dim >= 2:
            mat[0, 1], mat[1, 0] = int(flux), -int(flux)
    else:
        mat = np.asarray(flux, dtype=int)
        dim = mat.shape[0]
    return TwistData(N, mat, dim)


class AlgebraSection:
    """Twisted-equivariant M_N(C)-valued trigonometric polynomial.

    coeffs has shape (N^2, 2W+1, ..., 2W+1): sector index first, then the
    mode box with index n + W per axis.
    """

    def __init__(self, twist: TwistData, geometry: TorusGeometry, coeffs: np.ndarray):
        if geometry.dim != twist.dim:
            raise ValueError("geometry and twist dimensions differ")
        coeffs = np.asarray(coeffs, dtype=complex)
        if (
            coeffs.ndim != geometry.dim + 1
            or coeffs.shape[0] != twist.n_sectors
            or len(set(coeffs.shape[1:])) != 1
            or coeffs.shape[1] % 2 != 1
        ):
            raise ValueError(f"bad coefficient shape {coeffs.shape}")
        self.twist = twist
        self.geometry = geometry
        self.window = coeffs.shape[1] // 2
        self.coeffs = coeffs

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, twist, geometry, window=0):
        shape = (twist.n_sectors,) + (2 * window + 1,) * geometry.dim
        return cls(twist, geometry, np.zeros(shape, dtype=complex))

    @classmethod
    def unit(cls, twist, geometry):
        out = cls.zero(twist, geometry)
        out.coeffs[(0,) + (0,) * geometry.dim] = 1.0
        return out

    @classmethod
    def monomial(cls, twist, geometry, sector, mode, value=1.0):
        """value * T_sector * exp(i 2 pi (mode + offset) . x / L)."""
        window = max((abs(int(m)) for m in mode), default=0)
        out = cls.zero(twist, geometry, window)
        s = sector if np.isscalar(sector) else twist._sector_index[tuple(sector)]
        out.coeffs[(s,) + tuple(int(m) + window for m in mode)] = value
        return out

    @classmethod
    def from_matrix_poly(cls, twist, geometry, terms):
        """Build from {mode tuple: N x N matrix}; flux-0 friendly entry point.

        The matrix at each mode is expanded over the monomial basis using
        orthonormality under the normalised trace.
        """
        window = max((max(abs(int(c)) for c in mode) for mode in terms), default=0)
        out = cls.zero(twist, geometry, window)
        mats = twist.sector_mats
        for mode, mat in terms.items():
            mat = np.asarray(mat, dtype=complex)
            comps = np.einsum("spq,pq->s", mats.conj(), mat) / twist.N
            idx = tuple(int(m) + window for m in mode)
            out.coeffs[(slice(None),) + idx] += comps
        return out

    def copy(self):
        return AlgebraSection(self.twist, self.geometry, self.coeffs.copy())

    # -- window bookkeeping -------------------------------------------
    def pad(self, window: int) -> "AlgebraSection":
        if window < self.window:
            raise ValueError("pad target smaller than current window")
        pad = window - self.window
        if pad == 0:
            return self
        spec = [(0, 0)] + [(pad, pad)] * self.geometry.dim
        return AlgebraSection(self.twist, self.geometry, np.pad(self.coeffs, spec))

    def project(self, window: int) -> "AlgebraSection":
        """Drop coefficients outside [-window, window]^d."""
        if window >= self.window:
            return self.pad(window)
        cut = self.window - window
        sl = (slice(None),) + (slice(cut, -cut),) * self.geometry.dim
        return AlgebraSection(self.twist, self.geometry, self.coeffs[sl].copy())

    @property
    def support(self) -> int:
        nz = np.argwhere(self.coeffs != 0)
        if nz.size == 0:
            return 0
        return int(np.max(np.abs(nz[:, 1:] - self.window)))

    def trim(self) -> "AlgebraSection":
        return self.project(self.support)

    def prune(self, rel_threshold: float = 1e-13) -> "AlgebraSection":
        """Zero coefficients below rel_threshold * max |coeff|, then trim.

        Used to collapse the window of power-series results whose far tail
        is numerically negligible.
        """
        out = self.copy()
        cut = rel_threshold * np.max(np.abs(out.coeffs)) if out.coeffs.size else 0.0
        out.coeffs[np.abs(out.coeffs) < cut] = 0.0
        return out.trim()

    # -- linear structure ----------------------------------------------
    def _check_compatible(self, other):
        if self.twist != other.twist or self.geometry != other.geometry:
            raise ValueError("incompatible twists")

    def __add__(self, other):
        self._check_compatible(other)
        w = max(self.window, other.window)
        a, b = self.pad(w), other.pad(w)
        return AlgebraSection(self.twist, self.geometry, a.coeffs + b.coeffs)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, scalar):
        return AlgebraSection(self.twist, self.geometry, scalar * self.coeffs)

    def __neg__(self):
        return (-1.0) * self

    # -- fiber operations ----------------------------------------------
    def __mul__(self, other):
        if not isinstance(other, AlgebraSection):
            return self.__rmul__(other)
        return fiber_product(self, other)

    def star(self) -> "AlgebraSection":
        return fiber_involution(self)

    def derivative(self, mu: int) -> "AlgebraSection":
        """Coefficient-exact partial derivative along axis mu."""
        n = np.arange(-self.window, self.window + 1)
        shape = [1] * (self.geometry.dim + 1)
        shape[1 + mu] = len(n)
        base = n.reshape(shape) + self.twist.offsets[:, mu].reshape(
            [-1] + [1] * self.geometry.dim
        )
        factor = 2j * np.pi / self.geometry.lengths[mu] * base
        return AlgebraSection(self.twist, self.geometry, self.coeffs * factor)

    def trace_poly(self) -> TrigPoly:
        """Normalised fiber trace tau(s(x)) as a scalar trigonometric polynomial."""
        return TrigPoly(self.geometry, self.coeffs[0].copy())

    def traceless_part(self) -> "AlgebraSection":
        out = self.copy()
        out.coeffs[0] = 0.0
        return out

    def hermitian_part(self) -> "AlgebraSection":
        return 0.5 * (self + self.star())

    def antihermitian_part(self) -> "AlgebraSection":
        return 0.5 * (self - self.star())

    def coeff_norm(self) -> float:
        """l2 coefficient norm; equals the L2 norm under the normalised measure."""
        return float(np.linalg.norm(self.coeffs))

    # -- evaluation ------------------------------------------------------
    def sample(self, points: np.ndarray) -> np.ndarray:
        """Values s(x), shape (npoints, N, N)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.geometry.dim
        n = np.arange(-self.window, self.window + 1)
        out = np.zeros((points.shape[0], self.twist.N, self.twist.N), dtype=complex)
        spec = ",".join(f"{_EINSUM_AXES[mu]}p" for mu in range(d))
        for s in range(self.twist.n_sectors):
            phases = [
                np.exp(
                    2j
                    * np.pi
                    / self.geometry.lengths[mu]
                    * np.outer(n + self.twist.offsets[s, mu], points[:, mu])
                )
                for mu in range(d)
            ]
            scal = np.einsum(f"{_EINSUM_AXES[:d]},{spec}->p", self.coeffs[s], *phases)
            out += scal[:, None, None] * self.twist.sector_mats[s]
        return out

    def equivariance_residual(self, rng=None, samples: int = 12) -> float:
        """Max defect of s(x + L_mu e_mu) = Omega_mu s(x) Omega_mu^{-1}."""
        rng = np.random.default_rng(0) if rng is None else rng
        pts = rng.uniform(0, 1, size=(samples, self.geometry.dim)) * np.asarray(
            self.geometry.lengths
        )
        base = self.sample(pts)
        worst = 0.0
        for mu in range(self.geometry.dim):
            shifted_pts = pts.copy()
            shifted_pts[:, mu] += self.geometry.lengths[mu]
            shifted = self.sample(shifted_pts)
            om = self.twist.omegas[mu]
            expected = np.einsum("ij,pjk,lk->pil", om, base, np.conj(om))
            worst = max(worst, float(np.max(np.abs(shifted - expected))))
        return worst


def fiber_product(s: AlgebraSection, t: AlgebraSection) -> AlgebraSection:
    """Pointwise product st at coefficient level (sector convolution)."""
    s._check_compatible(t)
    tw, d = s.twist, s.geometry.dim
    w_out = s.window + t.window + 1
    out = AlgebraSection.zero(tw, s.geometry, w_out)
    size = 2 * (s.window + t.window) + 1
    for i in range(tw.n_sectors):
        if not np.any(s.coeffs[i]):
            continue
        for j in range(tw.n_sectors):
            if not np.any(t.coeffs[j]):
                continue
            k = tw.mul_sector[i, j]
            conv = fftconvolve(s.coeffs[i], t.coeffs[j])
            carry = tw.mul_carry[i, j]
            lo = [1 + int(c) for c in carry]  # position of mode -(ws+wt) + carry
            sl = tuple(slice(l, l + size) for l in lo)
            out.coeffs[k][sl] += tw.mul_phase[i, j] * conv
    return out


def fiber_involution(s: AlgebraSection) -> AlgebraSection:
    """Pointwise conjugate transpose s(x)^dagger at coefficient level."""
    tw, d = s.twist, s.geometry.dim
    w_out = s.window + 1
    out = AlgebraSection.zero(tw, s.geometry, w_out)
    size = 2 * s.window + 1
    rev = np.conj(s.coeffs[:, ...][(slice(None),) + (slice(None, None, -1),) * d])
    for i in range(tw.n_sectors):
        k = tw.star_sector[i]
        # reflected modes run over -n + carry for n in [-w, w]
        lo = [1 + int(c) for c in tw.star_carry[i]]
        sl = tuple(slice(l, l + size) for l in lo)
        out.coeffs[k][sl] += tw.star_phase[i] * rev[i]
    return out


def hs_pairing(s: AlgebraSection, t: AlgebraSection) -> TrigPoly:
    """C-infinity-valued pairing (s,t)_B(x) = tau(s(x)^dagger t(x)).

    tau is the normalised matrix trace tr/N, so (1,1)_B = 1.
    """
    return fiber_product(fiber_involution(s), t).trace_poly()


def random_section(
    twist: TwistData,
    geometry: TorusGeometry,
    window: int,
    rng,
    hermitian: bool | None = None,
    traceless: bool = False,
    unit_norm: bool = True,
) -> AlgebraSection:
    shape = (twist.n_sectors,) + (2 * window + 1,) * geometry.dim
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    out = AlgebraSection(twist, geometry, coeffs)
    # (anti-)Hermitian parts need the involution-enlarged window: projecting
    # back would drop one member of a mode pair and break the symmetry.
    if hermitian is True:
        out = out.hermitian_part().trim()
    elif hermitian is False:
        out = out.antihermitian_part().trim()
    if traceless:
        out = out.traceless_part()
    if unit_norm and out.coeff_norm() > 0:
        out = (1.0 / out.coeff_norm()) * out
    return out


def section_basis(twist: TwistData, geometry: TorusGeometry, cutoff: int):
    """Ordered coefficient basis of the truncated section algebra.

    Returns N^2 * (2K+1)^d monomial sections ordered (sector, mode)
    lexicographically; each satisfies twisted equivariance by construction
    (re-verifiable by sampling) and carries its sector's momentum offsets.
    """
    modes = list(np.ndindex(*(2 * cutoff + 1,) * geometry.dim))
    basis = []
    for s in range(twist.n_sectors):
        for idx in modes:
            mode = tuple(i - cutoff for i in idx)
            basis.append(AlgebraSection.monomial(twist, geometry, s, mode))
    return basis


def commutator(x: AlgebraSection, y: AlgebraSection) -> AlgebraSection:
    return fiber_product(x, y) - fiber_product(y, x)


class BundleConnection:
    """Hermitian *-algebra connection nabla = d + ad(omega).

    omega_mu are su(N)-valued (anti-Hermitian, traceless) twisted-equivariant
    sections; the action on sections is d_mu s + [omega_mu, s], which makes
    the Leibniz rule and star compatibility automatic and is verified
    numerically at construction.
    """

    def __init__(self, twist: TwistData, geometry: TorusGeometry, omega, tol: float = 1e-10):
        omega = tuple(omega)
        if len(omega) != geometry.dim:
            raise ValueError(f"need {geometry.dim} connection components")
        for om in omega:
            if om.twist != twist:
                raise ValueError("incompatible twists")
            anti = 0.5 * (om + om.star())
            if anti.coeff_norm() > tol:
                raise ValueError(
                    f"connection component is not anti-Hermitian (defect {anti.coeff_norm():.2e})"
                )
            if om.trace_poly().max_abs_coeff() > tol:
                raise ValueError("connection component is not traceless")
        self.twist = twist
        self.geometry = geometry
        self.omega = omega

    def deriv(self, s: AlgebraSection, mu: int) -> AlgebraSection:
        """nabla_mu s = d_mu s + [omega_mu, s], exact at coefficient level."""
        out = s.derivative(mu)
        if np.any(self.omega[mu].coeffs):
            out = out + commutator(self.omega[mu], s)
        return out

    def is_flat_trivial(self) -> bool:
        return all(not np.any(om.coeffs) for om in self.omega)

    def leibniz_residual(self, s, t) -> float:
        lhs = self.deriv(fiber_product(s, t), 0)
        rhs = fiber_product(s, self.deriv(t, 0)) + fiber_product(self.deriv(s, 0), t)
        return (lhs - rhs).coeff_norm()

    def star_residual(self, s) -> float:
        worst = 0.0
        for mu in range(self.geometry.dim):
            worst = max(
                worst,
                (fiber_involution(self.deriv(s, mu)) - self.deriv(fiber_involution(s), mu)).coeff_norm(),
            )
        return worst

    def hermitian_pairing_residual(self, s, t) -> float:
        """Defect of d(s,t)_B = (nabla s, t)_B + (s, nabla t)_B."""
        worst = 0.0
        for mu in range(self.geometry.dim):
            lhs = hs_pairing(s, t).derivative(mu)
            rhs = hs_pairing(self.deriv(s, mu), t) + hs_pairing(s, self.deriv(t, mu))
            worst = max(worst, (lhs - rhs).max_abs_coeff())
        return worst


def zero_connection(twist: TwistData, geometry: TorusGeometry) -> BundleConnection:
    zero = AlgebraSection.zero(twist, geometry)
    return BundleConnection(twist, geometry, [zero] * geometry.dim)


def build_connection(twist: TwistData, geometry: TorusGeometry, omega) -> BundleConnection:
    """Validate components and verify the connection invariants numerically.

    Raises on non-anti-Hermitian or non-traceless components; Leibniz, star
    compatibility and Hermiticity of the pairing are spot-checked on seeded
    random sections and must hold to 1e-12 relative.
    """
    conn = BundleConnection(twist, geometry, omega)
    rng = np.random.default_rng(1234)
    s = random_section(twist, geometry, 1, rng)
    t = random_section(twist, geometry, 1, rng)
    scale = max(1.0, max(om.coeff_norm() for om in conn.omega))
    checks = {
        "leibniz": conn.leibniz_residual(s, t) / scale,
        "star": conn.star_residual(s) / scale,
        "pairing": conn.hermitian_pairing_residual(s, t) / scale,
        "unit_annihilated": max(
            conn.deriv(AlgebraSection.unit(twist, geometry), mu).coeff_norm()
            for mu in range(geometry.dim)
        ),
    }
    bad = {k: v for k, v in checks.items() if v > 1e-12}
    if bad:
        raise ValueError(f"connection invariants violated: {bad}")
    return conn


def random_connection(
    twist: TwistData, geometry: TorusGeometry, window: int, rng, scale: float = 0.5
) -> BundleConnection:
    """Random su(N)-valued connection with coefficient support <= window."""
    omega = []
    for _ in range(geometry.dim):
        om = random_section(twist, geometry, window, rng, hermitian=False, traceless=True)
        omega.append(scale * om)
    return BundleConnection(twist, geometry, omega)

"""Assembly and verification of the twisted real even spectral triple.

Hilbert space: truncated L^2 sections of (matrix bundle) x (spinors).
Coefficients are indexed by (sector, mode, spinor); the coefficient at
(s, n, alpha) represents T_s e_alpha exp(i 2 pi (n + phi(s) + delta) x / L),
so the momentum offset combines the sector offset phi(s) with the spin
structure delta.

Per sector and axis the integer labels n satisfy |n + phi + delta| <= K + 1/2
(ties included).  This makes every sector's momentum set close exactly under
k -> -k jointly with its conjugate sector, so the real structure J is an
exact basis bijection (axis reversal per sector block, with the involution
phase and charge conjugation of the spinor factor).

Operator conventions: D = sum_mu gamma^mu (k_mu - i ad(omega_mu)) compressed
to the lattice; the global phase is fixed so the flux-0, omega=0 spectrum is
+-|k|.  Compressions of left/right multiplication operators are exact when
applied to vectors whose support stays K_extra away from the boundary, which
is how the enlarged-lattice residuals below are computed.
"""

from __future__ import annotations

import numpy as np

from .bundle import AlgebraSection, BundleConnection, TwistData, fiber_involution
from .clifford import CliffordModule
from .operators import AntilinearHandle, OperatorHandle, operator_norm
from .torus import ModeLattice, TorusGeometry


class SectorLattice:
    """Mode bookkeeping for the sector-resolved truncated Hilbert space."""

    def __init__(
        self,
        twist: TwistData,
        geometry: TorusGeometry,
        clifford: CliffordModule,
        cutoff: int,
        spin_offsets,
    ):
        if geometry.dim != twist.dim or clifford.dim != geometry.dim:
            raise ValueError("twist, geometry and Clifford dimensions must agree")
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        spin_offsets = tuple(float(o) for o in spin_offsets)
        if any(o not in (0.0, 0.5) for o in spin_offsets):
            raise ValueError("spin offsets must be 0 or 1/2 per axis")
        self.twist = twist
        self.geometry = geometry
        self.clifford = clifford
        self.cutoff = int(cutoff)
        self.spin_offsets = spin_offsets

        d, ns = geometry.dim, twist.n_sectors
        self.c_total = twist.offsets + np.asarray(spin_offsets)[None, :]
        radius = self.cutoff + 0.5
        eps = 1e-9
        self.ranges = []
        for s in range(ns):
            axes = []
            for mu in range(d):
                c = self.c_total[s, mu]
                lo = int(np.ceil(-radius - c - eps))
                hi = int(np.floor(radius - c + eps))
                axes.append((lo, hi))
            self.ranges.append(tuple(axes))
        self.counts = [tuple(hi - lo + 1 for lo, hi in axes) for axes in self.ranges]
        self.block_sizes = [int(np.prod(c)) for c in self.counts]
        starts = np.concatenate([[0], np.cumsum(self.block_sizes)])
        self.block_starts = starts[:-1]
        self.bdim = int(starts[-1])
        self.spinor_dim = clifford.spinor_dim
        self.hilbert_dim = self.bdim * self.spinor_dim

        # flat momentum table (bdim, d), sector blocks concatenated in order
        kflat = np.empty((self.bdim, d))
        scale = 2.0 * np.pi / np.asarray(geometry.lengths)
        for s in range(ns):
            axes = [
                np.arange(lo, hi + 1) + self.c_total[s, mu]
                for mu, (lo, hi) in enumerate(self.ranges[s])
            ]
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.stack([m.ravel() for m in mesh], axis=-1) * scale
            kflat[self.block_starts[s] : self.block_starts[s] + self.block_sizes[s]] = grid
        kflat.setflags(write=False)
        self.kflat = kflat

        # conjugate-sector ranges must be exact reflections
        for s in range(ns):
            t = twist.star_sector[s]
            for mu in range(d):
                lo_s, hi_s = self.ranges[s][mu]
                q = int(round(self.c_total[s, mu] + self.c_total[t, mu]))
                assert self.ranges[t][mu] == (-hi_s - q, -lo_s - q)

    # -- vector layout -------------------------------------------------
    def block(self, v2d: np.ndarray, s: int) -> np.ndarray:
        start, size = self.block_starts[s], self.block_sizes[s]
        return v2d[start : start + size].reshape(self.counts[s] + v2d.shape[1:])

    def zeros(self) -> np.ndarray:
        return np.zeros((self.bdim, self.spinor_dim), dtype=complex)

    def basis_state(self, sector, mode, spinor) -> np.ndarray:
        v = self.zeros()
        axes = self.ranges[sector]
        idx = 0
        for (lo, hi), n in zip(axes, mode):
            idx = idx * (hi - lo + 1) + (int(n) - lo)
        v[self.block_starts[sector] + idx, spinor] = 1.0
        return v

    # -- multiplication plans -------------------------------------------
    def mult_plan(self, section: AlgebraSection, side: str = "left"):
        """Slice plan of the compressed left/right multiplication operator."""
        if section.twist != self.twist:
            raise ValueError("incompatible twists")
        tw, d = self.twist, self.geometry.dim
        entries = []
        for i in range(tw.n_sectors):
            block = section.coeffs[i]
            for idx in np.argwhere(block != 0):
                m = idx - section.window
                coeff = block[tuple(idx)]
                for j in range(tw.n_sectors):
                    if side == "left":
                        k, phase = tw.mul_sector[i, j], tw.mul_phase[i, j]
                        shift = m + tw.mul_carry[i, j]
                    else:
                        k, phase = tw.mul_sector[j, i], tw.mul_phase[j, i]
                        shift = m + tw.mul_carry[j, i]
                    src, dst = [], []
                    ok = True
                    for mu in range(d):
                        lo_j, hi_j = self.ranges[j][mu]
                        lo_k, hi_k = self.ranges[k][mu]
                        t = int(shift[mu])
                        a, b = max(lo_j, lo_k - t), min(hi_j, hi_k - t)
                        if a > b:
                            ok = False
                            break
                        src.append(slice(a - lo_j, b - lo_j + 1))
                        dst.append(slice(a + t - lo_k, b + t - lo_k + 1))
                    if ok:
                        entries.append((j, int(k), coeff * phase, tuple(src), tuple(dst)))
        return entries

    def apply_plan(self, plan, v2d: np.ndarray, out=None) -> np.ndarray:
        if out is None:
            out = np.zeros_like(v2d)
        for j, k, coeff, src, dst in plan:
            self.block(out, k)[dst] += coeff * self.block(v2d, j)[src]
        return out

    @staticmethod
    def adjoint_plan(plan):
        return [(k, j, np.conj(c), dst, src) for j, k, c, src, dst in plan]

    def commutator_plans(self, section: AlgebraSection):
        """(left, right) plans; ad(section) = left - right."""
        return self.mult_plan(section, "left"), self.mult_plan(section, "right")

    # -- embeddings ------------------------------------------------------
    def embed(self, v2d: np.ndarray, big: "SectorLattice") -> np.ndarray:
        out = big.zeros()
        self._copy_blocks(v2d, self, out, big)
        return out

    def project(self, v2d: np.ndarray, small: "SectorLattice") -> np.ndarray:
        out = small.zeros()
        self._copy_blocks(v2d, self, out, small, into_small=True)
        return out

    @staticmethod
    def _copy_blocks(v_src, lat_src, v_dst, lat_dst, into_small=False):
        ns = lat_src.twist.n_sectors
        for s in range(ns):
            sl_src, sl_dst = [], []
            for (lo_a, hi_a), (lo_b, hi_b) in zip(lat_src.ranges[s], lat_dst.ranges[s]):
                lo, hi = max(lo_a, lo_b), min(hi_a, hi_b)
                sl_src.append(slice(lo - lo_a, hi - lo_a + 1))
                sl_dst.append(slice(lo - lo_b, hi - lo_b + 1))
            lat_dst.block(v_dst, s)[tuple(sl_dst)] = lat_src.block(v_src, s)[tuple(sl_src)]


class SpectralTripleData:
    """Assembled triple: Dirac, real structure, grading, algebra actions."""

    def __init__(self, connection, lattice: SectorLattice):
        self.connection = connection
        self.lattice = lattice
        self.twist = lattice.twist
        self.geometry = lattice.geometry
        self.clifford = lattice.clifford
        self.hilbert_dim = lattice.hilbert_dim
        lat, cm = lattice, lattice.clifford
        gammas = [np.ascontiguousarray(g) for g in cm.gammas]
        d = lat.geometry.dim

        ad_plans = []
        for mu in range(d):
            om = connection.omega[mu]
            if np.any(om.coeffs):
                ad_plans.append(lat.commutator_plans(om))
            else:
                ad_plans.append(None)

        def dirac_apply(v):
            v2 = v.reshape(lat.bdim, lat.spinor_dim)
            out = np.zeros_like(v2)
            for mu in range(d):
                w = lat.kflat[:, mu : mu + 1] * v2
                if ad_plans[mu] is not None:
                    left, right = ad_plans[mu]
                    tmp = lat.apply_plan(left, v2)
                    lat.apply_plan(right, -v2, out=tmp)
                    w += -1j * tmp
                out += w @ gammas[mu].T
            return out.reshape(-1)

        self.dirac = OperatorHandle(
            lat.hilbert_dim, apply=dirac_apply, hermitian=True, label="dirac"
        )

        star_phase = lat.twist.star_phase
        star_sector = lat.twist.star_sector
        C = cm.conj_matrix
        rev = (slice(None, None, -1),) * d

        def j_apply(v):
            v2 = np.conj(v.reshape(lat.bdim, lat.spinor_dim))
            out = np.zeros_like(v2)
            for s in range(lat.twist.n_sectors):
                tgt = int(star_sector[s])
                lat.block(out, tgt)[...] = star_phase[s] * lat.block(v2, s)[rev]
            return (out.reshape(lat.bdim, lat.spinor_dim) @ C.T).reshape(-1)

        self.real_structure = AntilinearHandle(lat.hilbert_dim, j_apply, label="J")

        G = np.ascontiguousarray(cm.chirality)

        def grading_apply(v):
            return (v.reshape(lat.bdim, lat.spinor_dim) @ G.T).reshape(-1)

        self.grading = OperatorHandle(
            lat.hilbert_dim, apply=grading_apply, hermitian=True, label="grading"
        )

    def _mult_handle(self, section, side, label):
        lat = self.lattice
        plan = lat.mult_plan(section, side)

        def apply(v):
            v2 = v.reshape(lat.bdim, lat.spinor_dim)
            return lat.apply_plan(plan, v2).reshape(-1)

        adj = lat.adjoint_plan(plan)

        def apply_adj(v):
            v2 = v.reshape(lat.bdim, lat.spinor_dim)
            return lat.apply_plan(adj, v2).reshape(-1)

        handle = OperatorHandle(lat.hilbert_dim, apply=apply, hermitian=False, label=label)
        handle.apply_adjoint = apply_adj
        return handle

    def left_op(self, section: AlgebraSection) -> OperatorHandle:
        """Compressed left action of the algebra (a tensor 1)."""
        return self._mult_handle(section, "left", "left_mult")

    def right_op(self, section: AlgebraSection) -> OperatorHandle:
        """Compressed right action b0 = J b* J^{-1}."""
        return self._mult_handle(section, "right", "right_mult")

    def enlarged(self, extra: int) -> "SpectralTripleData":
        lat = self.lattice
        big = SectorLattice(
            lat.twist, lat.geometry, lat.clifford, lat.cutoff + extra, lat.spin_offsets
        )
        return SpectralTripleData(self.connection, big)

    def random_vector(self, rng) -> np.ndarray:
        v = rng.standard_normal(self.hilbert_dim) + 1j * rng.standard_normal(self.hilbert_dim)
        return v / np.linalg.norm(v)


def assemble_triple(
    twist: TwistData,
    connection: BundleConnection,
    geometry: TorusGeometry,
    cm: CliffordModule,
    cutoff: int,
    spin_offsets=(0.0,) * 4,
    check_probes: int = 4,
) -> SpectralTripleData:
    """Build the triple and hard-fail if the assembled Dirac is not Hermitian."""
    if connection.twist != twist:
        raise ValueError("connection built for a different twist")
    lattice = SectorLattice(twist, geometry, cm, cutoff, spin_offsets[: geometry.dim])
    st = SpectralTripleData(connection, lattice)
    res = st.dirac.hermiticity_residual(np.random.default_rng(0), probes=check_probes)
    if res > 1e-8:
        raise AssertionError(
            f"assembled Dirac operator violates Hermiticity (residual {res:.2e}); "
            "this indicates an assembly bug or invalid connection data"
        )
    return st


def spinor_mode_lattice(st: SpectralTripleData) -> ModeLattice:
    """Spinor-only lattice matching the triple's cutoff and spin structure."""
    return ModeLattice(st.geometry, st.lattice.cutoff, st.lattice.spin_offsets)


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------


def verify_signs(st: SpectralTripleData, rng=None, probes: int = 6) -> dict:
    """Residuals of the sign table on random probes.

    All identities hold as exact truncated-operator identities for valid
    triples; values are normalised per probe.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    eps, eps_p, eps_pp = st.clifford.ko_signs
    D, J, G = st.dirac, st.real_structure, st.grading
    out = {k: 0.0 for k in (
        "dirac_hermitian", "j_squared", "j_antiunitary", "j_commutes_dirac",
        "j_grading_sign", "grading_squared", "grading_anticommutes_dirac",
    )}
    out["dirac_hermitian"] = st.dirac.hermiticity_residual(rng, probes)
    out["j_antiunitary"] = J.antiunitarity_residual(rng, probes)
    for _ in range(probes):
        v = st.random_vector(rng)
        dv = D(v)
        scale = max(np.linalg.norm(dv), 1.0)
        out["j_squared"] = max(out["j_squared"], np.linalg.norm(J(J(v)) - eps * v))
        out["j_commutes_dirac"] = max(
            out["j_commutes_dirac"], np.linalg.norm(J(dv) - eps_p * D(J(v))) / scale
        )
        out["j_grading_sign"] = max(
            out["j_grading_sign"], np.linalg.norm(J(G(v)) - eps_pp * G(J(v)))
        )
        out["grading_squared"] = max(out["grading_squared"], np.linalg.norm(G(G(v)) - v))
        out["grading_anticommutes_dirac"] = max(
            out["grading_anticommutes_dirac"], np.linalg.norm(G(dv) + D(G(v))) / scale
        )
    return out


def _enlargement_for(st, sections):
    return int(sum(s.support + 1 for s in sections)) + max(
        (om.support + 1 for om in st.connection.omega), default=0
    )


def _pair_residual(st_small, st_big, apply_big, probes, rng):
    """Max ||apply(v)|| over unit probes supported on the small lattice."""
    worst = 0.0
    for _ in range(probes):
        v = st_small.random_vector(rng).reshape(st_small.lattice.bdim, -1)
        v_big = st_small.lattice.embed(v, st_big.lattice).reshape(-1)
        worst = max(worst, np.linalg.norm(apply_big(v_big)))
    return worst


def verify_order_zero(st: SpectralTripleData, samples: int = 4, rng=None, probes: int = 3) -> dict:
    """Residual of [a, J b* J^{-1}] = 0 over random section pairs.

    Reports both the raw compression residual and the enlarged-lattice
    residual (probes supported on the base lattice, operators applied on a
    lattice large enough that no truncation clipping can occur).
    """
    from .bundle import random_section

    rng = np.random.default_rng(1) if rng is None else rng
    raw = enlarged = 0.0
    for _ in range(samples):
        a = random_section(st.twist, st.geometry, 1, rng)
        b = random_section(st.twist, st.geometry, 1, rng)
        big = st.enlarged(_enlargement_for(st, [a, b]))
        for trip, track in ((st, "raw"), (big, "enl")):
            A, B0 = trip.left_op(a), trip.right_op(b)

            def comm(v, A=A, B0=B0):
                return A(B0(v)) - B0(A(v))

            if track == "raw":
                for _ in range(probes):
                    v = st.random_vector(rng)
                    raw = max(raw, np.linalg.norm(comm(v)))
            else:
                enlarged = max(enlarged, _pair_residual(st, big, comm, probes, rng))
    return {"check": "order_zero", "residual_raw": raw, "residual_enlarged": enlarged}


def verify_order_one(st: SpectralTripleData, samples: int = 4, rng=None, probes: int = 3) -> dict:
    """Residual of [[D, a], J b* J^{-1}] = 0 over random section pairs."""
    from .bundle import random_section

    rng = np.random.default_rng(2) if rng is None else rng
    raw = enlarged = 0.0
    for _ in range(samples):
        a = random_section(st.twist, st.geometry, 1, rng)
        b = random_section(st.twist, st.geometry, 1, rng)
        big = st.enlarged(_enlargement_for(st, [a, b]))
        for trip, track in ((st, "raw"), (big, "enl")):
            A, B0, D = trip.left_op(a), trip.right_op(b), trip.dirac

            def op(v, A=A, B0=B0, D=D):
                da = lambda w: D(A(w)) - A(D(w))
                return da(B0(v)) - B0(da(v))

            if track == "raw":
                for _ in range(probes):
                    v = st.random_vector(rng)
                    raw = max(raw, np.linalg.norm(op(v)))
            else:
                enlarged = max(enlarged, _pair_residual(st, big, op, probes, rng))
    return {"check": "order_one", "residual_raw": raw, "residual_enlarged": enlarged}


def _oracle_grid(st, supports) -> np.ndarray:
    """Sampling grid for sup-norm oracles; dense in d=2, Nyquist-bound in d=4."""
    p = int(sum(supports)) + 1
    per_axis = max(4 * p + 5, 64) if st.geometry.dim == 2 else max(2 * p + 3, 8)
    return st.geometry.grid(per_axis)


def clifford_symbol_sup(st: SpectralTripleData, a: AlgebraSection, points) -> float:
    """Grid sup of the pointwise norm of c(nabla a)(x) as a left multiplier."""
    grads = [st.connection.deriv(a, mu).sample(points) for mu in range(st.geometry.dim)]
    gammas = st.clifford.gammas
    worst = 0.0
    for p in range(points.shape[0]):
        sym = sum(np.kron(gammas[mu], grads[mu][p]) for mu in range(st.geometry.dim))
        worst = max(worst, float(np.linalg.norm(sym, ord=2)))
    return worst


def verify_bounded_commutators(
    st: SpectralTripleData, a: AlgebraSection, cutoffs=None
) -> dict:
    """Norms ||[D, a]|| across a cutoff sweep plus the symbol sup oracle.

    The sweep must stabilise (<= 1% drift beyond K = support + 2) and the
    stabilised value matches the grid sup norm of c(nabla a) within 2%.
    """
    lat = st.lattice
    if cutoffs is None:
        base = max(lat.cutoff, a.support + 2)
        cutoffs = (base, base + 2, base + 4)
    norms = []
    astar = fiber_involution(a)
    for K in cutoffs:
        trip = SpectralTripleData(
            st.connection,
            SectorLattice(lat.twist, lat.geometry, lat.clifford, K, lat.spin_offsets),
        )
        A, Astar, D = trip.left_op(a), trip.left_op(astar), trip.dirac

        def comm(v):
            return D(A(v)) - A(D(v))

        def comm_adj(v):
            return Astar(D(v)) - D(Astar(v))

        norms.append(operator_norm(comm, comm_adj, trip.hilbert_dim, trip.hilbert_dim))
    pts = _oracle_grid(st, [a.support] + [om.support for om in st.connection.omega])
    sup = clifford_symbol_sup(st, a, pts)
    return {"check": "bounded_commutators", "cutoffs": tuple(cutoffs), "norms": norms, "symbol_sup": sup}


class _TensorMap:
    """T_a: spinor fields psi -> a tensor psi in the triple's Hilbert space."""

    def __init__(self, st: SpectralTripleData, a: AlgebraSection):
        lat = st.lattice
        self.lat = lat
        self.spin_lattice = spinor_mode_lattice(st)
        self.dim_in = self.spin_lattice.n_modes * lat.spinor_dim
        self.dim_out = lat.hilbert_dim
        d = lat.geometry.dim
        entries = []
        for i in range(lat.twist.n_sectors):
            block = a.coeffs[i]
            for idx in np.argwhere(block != 0):
                m = idx - a.window
                coeff = block[tuple(idx)]
                src, dst = [], []
                ok = True
                for mu in range(d):
                    lo_v, hi_v = self.spin_lattice.ranges[mu]
                    lo_k, hi_k = lat.ranges[i][mu]
                    t = int(m[mu])
                    aa, bb = max(lo_v, lo_k - t), min(hi_v, hi_k - t)
                    if aa > bb:
                        ok = False
                        break
                    src.append(slice(aa - lo_v, bb - lo_v + 1))
                    dst.append(slice(aa + t - lo_k, bb + t - lo_k + 1))
                if ok:
                    entries.append((int(i), coeff, tuple(src), tuple(dst)))
        self.entries = entries

    def apply(self, psi):
        lat = self.lat
        grid = psi.reshape(self.spin_lattice.counts + (lat.spinor_dim,))
        out = lat.zeros()
        for sector, coeff, src, dst in self.entries:
            lat.block(out, sector)[dst] += coeff * grid[src]
        return out.reshape(-1)

    def apply_adjoint(self, v):
        lat = self.lat
        v2 = v.reshape(lat.bdim, lat.spinor_dim)
        out = np.zeros(self.spin_lattice.counts + (lat.spinor_dim,), dtype=complex)
        for sector, coeff, src, dst in self.entries:
            out[src] += np.conj(coeff) * lat.block(v2, sector)[dst]
        return out.reshape(-1)


def kasparov_bound_check(st: SpectralTripleData, a: AlgebraSection, cutoffs=None) -> dict:
    """Norms of D T_a - T_a Dslash and Dslash T_a* - T_a* D across cutoffs.

    Both sequences must stabilise; the first stabilises at the grid sup of
    the Clifford-contracted covariant gradient of a (as a map from spinors
    into the module, measured in the normalised fiber norm).
    """
    from .torus import build_free_dirac

    lat = st.lattice
    if cutoffs is None:
        base = max(lat.cutoff, a.support + 2)
        cutoffs = (base, base + 2, base + 4)
    norms_fwd, norms_rev = [], []
    for K in cutoffs:
        trip = SpectralTripleData(
            st.connection,
            SectorLattice(lat.twist, lat.geometry, lat.clifford, K, lat.spin_offsets),
        )
        tmap = _TensorMap(trip, a)
        Dfree = build_free_dirac(tmap.spin_lattice, trip.clifford)
        D = trip.dirac

        def fwd(psi):
            return D(tmap.apply(psi)) - tmap.apply(Dfree(psi))

        def fwd_adj(v):
            return tmap.apply_adjoint(D(v)) - Dfree(tmap.apply_adjoint(v))

        def rev(v):
            return Dfree(tmap.apply_adjoint(v)) - tmap.apply_adjoint(D(v))

        def rev_adj(psi):
            # (Dslash T_a* - T_a* D)^dagger = T_a Dslash - D T_a
            return tmap.apply(Dfree(psi)) - D(tmap.apply(psi))

        norms_fwd.append(operator_norm(fwd, fwd_adj, tmap.dim_out, tmap.dim_in))
        norms_rev.append(operator_norm(rev, rev_adj, tmap.dim_in, tmap.dim_out))
    pts = _oracle_grid(st, [a.support] + [om.support for om in st.connection.omega])
    grads = [st.connection.deriv(a, mu).sample(pts) for mu in range(st.geometry.dim)]
    gammas = st.clifford.gammas
    sup = 0.0
    N = st.twist.N
    for p in range(pts.shape[0]):
        mat = sum(
            np.kron(grads[mu][p].reshape(-1, 1), gammas[mu]) for mu in range(st.geometry.dim)
        )
        sup = max(sup, float(np.linalg.norm(mat, ord=2)) / np.sqrt(N))
    return {
        "check": "kasparov_bound",
        "cutoffs": tuple(cutoffs),
        "norms_forward": norms_fwd,
        "norms_reverse": norms_rev,
        "symbol_sup": sup,
    }


def eigenvalue_counting_exponent(eigenvalues: np.ndarray, d: int) -> float:
    """Power-law exponent fit of N(Lambda) ~ c Lambda^d on the bulk window."""
    lam = np.sort(np.abs(eigenvalues))
    lam_max = lam[-1]
    lo, hi = 0.2 * lam_max, 0.6 * lam_max
    grid = np.linspace(lo, hi, 12)
    counts = np.searchsorted(lam, grid)
    mask = counts > 0
    slope, _ = np.polyfit(np.log(grid[mask]), np.log(counts[mask]), 1)
    return float(slope)

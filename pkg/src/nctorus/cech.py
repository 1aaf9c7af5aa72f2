"""Cech model of the twisted bundle: covers, transitions, obstruction class.

The torus T^2 is covered by the standard 2x2 grid of overlapping boxes.  A
chart assigns to each point of a box the lift into that box's window in R^2;
sections restricted to a chart differ across charts by conjugation with the
constant clock/shift matrices, so transition functions are U(N)
representatives of PSU(N) elements, sampled on overlap grids.

On triple overlaps the product g_ij g_jk g_ki is central; rounding its phase
to an exact N-th root of unity gives a Z_N value per overlap component.
Summing the values of a fixed oriented triple over the four corner
components yields the lifting obstruction: 0 iff the transitions lift to an
SU(N) cocycle, and the 't Hooft flux n_12 mod N for twist-generated data.
"""

from __future__ import annotations

import numpy as np

from .bundle import AlgebraSection, TwistData, _round_root_of_unity
from .torus import TorusGeometry, TrigPoly


class TorusCover:
    """Standard 2x2 box cover of T^2 with relative margin per axis."""

    def __init__(self, geometry: TorusGeometry, margin: float = 0.1, samples_per_axis: int = 24):
        if geometry.dim != 2:
            raise ValueError("only the standard T^2 cover is supported")
        if not 0 < margin < 0.25:
            raise ValueError("margin must be a fraction in (0, 1/4)")
        self.geometry = geometry
        self.margin = margin
        self.boxes = [(0, 0), (1, 0), (0, 1), (1, 1)]
        self.samples_per_axis = samples_per_axis
        self._points = geometry.grid(samples_per_axis) + np.asarray(geometry.lengths) * (
            0.5 / samples_per_axis
        )

    def lift_shift(self, t: float, axis: int, half: int):
        """Integer r with t + r*L inside box-interval `half`, or None."""
        L = self.geometry.lengths[axis]
        m = self.margin * L
        lo = half * L / 2.0 - m
        width = L / 2.0 + 2.0 * m
        for r in (-1, 0, 1):
            if lo <= t + r * L <= lo + width:
                return r
        return None

    def membership(self, point, box):
        """Per-axis lift shifts placing `point` inside `box`, or None."""
        shifts = []
        for axis, half in enumerate(box):
            r = self.lift_shift(point[axis], axis, half)
            if r is None:
                return None
            shifts.append(r)
        return tuple(shifts)

    def overlap_points(self, box_a, box_b):
        """Sample points in both boxes with their lift shifts."""
        out = []
        for p in self._points:
            ra, rb = self.membership(p, box_a), self.membership(p, box_b)
            if ra is not None and rb is not None:
                out.append((p, ra, rb))
        return out

    def triple_points(self, box_a, box_b, box_c):
        out = []
        for p in self._points:
            shifts = [self.membership(p, b) for b in (box_a, box_b, box_c)]
            if all(s is not None for s in shifts):
                out.append((p, shifts))
        return out

    def corner_label(self, point):
        """Which of the four grid corners the point is nearest to (component tag)."""
        return tuple(
            int(np.rint(point[axis] / (self.geometry.lengths[axis] / 2.0))) % 2
            for axis in range(2)
        )

    def cos2_partition(self):
        """Smooth trigonometric partition of unity indexed by the boxes.

        Nominally associated with the boxes (each function peaks inside its
        box); exact partition-of-unity identities hold at coefficient level.
        """
        geom = self.geometry
        half, quarter = 0.5, 0.25

        def axis_pair(axis):
            # cos^2(pi x/L) = 1/2 + cos(2 pi x/L)/2 and its complement
            c = TrigPoly.from_terms(geom, {(0, 0): half})
            wave = TrigPoly.cosine(geom, axis, half)
            return c + wave, c - wave

        u = axis_pair(0)
        v = axis_pair(1)
        return {box: u[box[0]] * v[box[1]] for box in self.boxes}


class CechBundle:
    """Sampled PSU(N) transition data on a torus cover.

    transitions[(a, b)] is a list of (point, g) pairs with g a U(N)
    representative; cocycle_residual and the obstruction class are computed
    on construction.
    """

    def __init__(self, cover: TorusCover, N: int, transitions: dict):
        self.cover = cover
        self.N = int(N)
        self.transitions = transitions
        self._index = {}
        self.cocycle_residual = None
        self.obstruction = None
        self._analyse()

    @staticmethod
    def _point_key(point):
        return tuple(np.round(point, 9))

    def _transition_at(self, box_a, box_b, point):
        index = self._index.get((box_a, box_b))
        if index is None:
            index = {self._point_key(p): g for p, g in self.transitions[(box_a, box_b)]}
            self._index[(box_a, box_b)] = index
        try:
            return index[self._point_key(point)]
        except KeyError:
            raise KeyError(f"no transition sample at {point}") from None

    def _analyse(self):
        canonical = ((0, 0), (1, 0), (1, 1))
        per_corner = {}
        worst = 0.0
        boxes = self.cover.boxes
        triples = [
            (boxes[i], boxes[j], boxes[k])
            for i in range(4)
            for j in range(4)
            for k in range(4)
            if len({i, j, k}) == 3
        ]
        for tri in triples:
            a, b, c = tri
            for point, _ in self.cover.triple_points(a, b, c):
                prod = (
                    self._transition_at(a, b, point)
                    @ self._transition_at(b, c, point)
                    @ self._transition_at(c, a, point)
                )
                phase = np.trace(prod) / self.N
                j, exact = _round_root_of_unity(phase, self.N)
                worst = max(worst, float(np.max(np.abs(prod - exact * np.eye(self.N)))))
                if tri == canonical:
                    corner = self.cover.corner_label(point)
                    per_corner.setdefault(corner, set()).add(j)
        self.cocycle_residual = worst
        for corner, values in per_corner.items():
            if len(values) != 1:
                raise ValueError(
                    f"obstruction phase not locally constant on corner {corner}: {values}"
                )
        self.obstruction = sum(v.pop() for v in per_corner.values()) % self.N


def transitions_from_twist(twist: TwistData, cover: TorusCover) -> CechBundle:
    """Chart transitions of the clock/shift twist on the standard cover.

    Chart values of a section are its values at the box lift, so two charts
    differ by conjugation with Omega_1^dr1 Omega_2^dr2 where dr is the lift
    difference; the resulting transitions are exact constants per overlap
    component.
    """
    if twist.dim != 2:
        raise ValueError("Cech transitions are implemented for T^2 twists")
    om1, om2 = twist.omegas[0], twist.omegas[1]

    def rep(dr):
        m1 = np.linalg.matrix_power(om1, dr[0] % twist.N) if dr[0] >= 0 else np.linalg.matrix_power(om1.conj().T, (-dr[0]) % twist.N)
        m2 = np.linalg.matrix_power(om2, dr[1] % twist.N) if dr[1] >= 0 else np.linalg.matrix_power(om2.conj().T, (-dr[1]) % twist.N)
        return m1 @ m2

    transitions = {}
    for a in cover.boxes:
        for b in cover.boxes:
            if a == b:
                continue
            samples = []
            for point, ra, rb in cover.overlap_points(a, b):
                dr = (ra[0] - rb[0], ra[1] - rb[1])
                samples.append((point, rep(dr)))
            transitions[(a, b)] = samples
    return CechBundle(cover, twist.N, transitions)


def thooft_class(cb: CechBundle, residual_tol: float = 1e-8) -> int:
    """Z_N lifting obstruction of a PSU(N) cocycle.

    Requires the sampled cocycle to close up to the center within
    residual_tol; returns the total obstruction integer mod N (0 iff the
    transitions lift to an SU(N) cocycle).
    """
    if cb.cocycle_residual > residual_tol:
        raise ValueError(
            f"transitions are not a PSU(N) cocycle (residual {cb.cocycle_residual:.2e})"
        )
    return cb.obstruction


def patch_consistency_residual(cb: CechBundle, section: AlgebraSection) -> float:
    """Associated-bundle check: chart samples patch via Ad(g_ij).

    Chart representative over a box is the section evaluated at the box lift;
    the residual measures s_i(x) - g_ij s_j(x) g_ij^{-1} over sampled overlaps.
    """
    cover = cb.cover
    L = np.asarray(cover.geometry.lengths)
    worst = 0.0
    for (a, b), samples in cb.transitions.items():
        for point, g in samples:
            ra, rb = cover.membership(point, a), cover.membership(point, b)
            va = section.sample((point + np.asarray(ra) * L)[None, :])[0]
            vb = section.sample((point + np.asarray(rb) * L)[None, :])[0]
            worst = max(worst, float(np.max(np.abs(va - g @ vb @ g.conj().T))))
    return worst


class BlendedConnection:
    """Partition-of-unity blend of local connections, evaluated on samples.

    The blend acts as (nabla s)(x) = sum_i f_i(x) (nabla_i s)(x); Leibniz and
    star-compatibility residuals are exposed as sampled checks.
    """

    def __init__(self, cover: TorusCover, local_connections, partition, tol: float = 1e-10):
        boxes = list(partition.keys())
        if set(boxes) - set(cover.boxes):
            raise ValueError("partition keys must be cover boxes")
        pts = cover._points
        total = np.zeros(len(pts), dtype=complex)
        for f in partition.values():
            vals = f.sample(pts)
            if np.max(np.abs(vals.imag)) > tol or np.min(vals.real) < -tol:
                raise ValueError("partition functions must be real and nonnegative")
            total += vals
        if np.max(np.abs(total - 1.0)) > tol:
            raise ValueError(
                f"partition of unity violated (max deviation {np.max(np.abs(total - 1.0)):.2e})"
            )
        self.cover = cover
        self.local = dict(zip(boxes, [local_connections[b] for b in boxes])) if isinstance(
            local_connections, dict
        ) else dict(zip(boxes, local_connections))
        self.partition = partition

    def deriv_samples(self, s: AlgebraSection, mu: int, points) -> np.ndarray:
        out = None
        for box, f in self.partition.items():
            weights = f.sample(points).real
            local = self.local[box].deriv(s, mu).sample(points)
            term = weights[:, None, None] * local
            out = term if out is None else out + term
        return out

    def leibniz_residual(self, s, t, points) -> float:
        worst = 0.0
        for mu in range(2):
            lhs = self.deriv_samples(s * t, mu, points)
            rhs = np.einsum(
                "pij,pjk->pik", s.sample(points), self.deriv_samples(t, mu, points)
            ) + np.einsum(
                "pij,pjk->pik", self.deriv_samples(s, mu, points), t.sample(points)
            )
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst

    def star_residual(self, s, points) -> float:
        worst = 0.0
        for mu in range(2):
            lhs = self.deriv_samples(s.star(), mu, points)
            rhs = np.conj(np.swapaxes(self.deriv_samples(s, mu, points), 1, 2))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst


def cech_blend(cover, local_connections, partition) -> BlendedConnection:
    """Blend local hermitian *-algebra connections with a partition of unity."""
    return BlendedConnection(cover, local_connections, partition)

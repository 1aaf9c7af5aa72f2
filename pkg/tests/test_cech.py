import numpy as np
import pytest

from nctorus.bundle import (
    AlgebraSection,
    build_twist,
    random_connection,
    random_section,
    zero_connection,
)
from nctorus.cech import (
    CechBundle,
    TorusCover,
    cech_blend,
    patch_consistency_residual,
    thooft_class,
    transitions_from_twist,
)
from nctorus.torus import TrigPoly, square_torus

GEOM2 = square_torus(2)


def cover():
    return TorusCover(GEOM2, margin=0.1, samples_per_axis=16)


class TestCover:
    def test_every_point_is_covered(self):
        cov = cover()
        for p in GEOM2.grid(13):
            assert any(cov.membership(p, b) is not None for b in cov.boxes)

    def test_partition_of_unity_is_exact(self):
        cov = cover()
        part = cov.cos2_partition()
        total = None
        for f in part.values():
            total = f if total is None else total + f
        one = TrigPoly.constant(GEOM2)
        assert (total - one).max_abs_coeff() <= 1e-15

    def test_margin_validation(self):
        with pytest.raises(ValueError, match="margin"):
            TorusCover(GEOM2, margin=0.3)


class TestThooftClass:
    def test_trivial_transitions_class_zero(self):
        cov = cover()
        cb = transitions_from_twist(build_twist(2, 0), cov)
        assert cb.cocycle_residual <= 1e-12
        assert thooft_class(cb) == 0

    @pytest.mark.parametrize(
        "N,flux,expected", [(2, 0, 0), (2, 1, 1), (3, 1, 1), (3, 2, 2), (4, 3, 3)]
    )
    def test_twist_classes(self, N, flux, expected):
        cb = transitions_from_twist(build_twist(N, flux), cover())
        assert cb.cocycle_residual <= 1e-12
        assert thooft_class(cb) == expected

    def test_class_invariant_under_constant_coboundary(self):
        # g_ab -> h_a g_ab h_b^{-1} leaves the obstruction unchanged
        cov = cover()
        tw = build_twist(3, 2)
        base = transitions_from_twist(tw, cov)
        rng = np.random.default_rng(0)
        hs = {}
        for box in cov.boxes:
            m = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
            hs[box], _ = np.linalg.qr(m)
        new = {
            (a, b): [(p, hs[a] @ g @ hs[b].conj().T) for p, g in samples]
            for (a, b), samples in base.transitions.items()
        }
        cb = CechBundle(cov, 3, new)
        assert thooft_class(cb) == 2

    def test_non_cocycle_rejected(self):
        cov = cover()
        base = transitions_from_twist(build_twist(2, 1), cov)
        rng = np.random.default_rng(1)
        broken = {
            (a, b): [(p, g + 0.05 * rng.standard_normal((2, 2))) for p, g in samples]
            for (a, b), samples in base.transitions.items()
        }
        with pytest.raises(ValueError):
            thooft_class(CechBundle(cov, 2, broken))

    @pytest.mark.parametrize("N,flux", [(2, 1), (3, 2)])
    def test_round_trip_patch_consistency(self, N, flux):
        tw = build_twist(N, flux)
        cb = transitions_from_twist(tw, cover())
        sec = random_section(tw, GEOM2, 2, np.random.default_rng(3))
        assert patch_consistency_residual(cb, sec) <= 1e-10


class TestCechBlend:
    def test_single_chart_returns_local_connection(self):
        cov = cover()
        tw = build_twist(2, 1)
        conn = random_connection(tw, GEOM2, 1, np.random.default_rng(5))
        blend = cech_blend(cov, {(0, 0): conn}, {(0, 0): TrigPoly.constant(GEOM2)})
        s = random_section(tw, GEOM2, 1, np.random.default_rng(6))
        pts = GEOM2.grid(9)
        for mu in range(2):
            assert np.max(
                np.abs(blend.deriv_samples(s, mu, pts) - conn.deriv(s, mu).sample(pts))
            ) <= 1e-12

    def test_two_connection_blend_satisfies_leibniz_and_star(self):
        cov = cover()
        tw = build_twist(2, 0)
        part = cov.cos2_partition()
        conns = {
            (0, 0): zero_connection(tw, GEOM2),
            (1, 0): random_connection(tw, GEOM2, 1, np.random.default_rng(7)),
            (0, 1): random_connection(tw, GEOM2, 1, np.random.default_rng(8)),
            (1, 1): zero_connection(tw, GEOM2),
        }
        blend = cech_blend(cov, conns, part)
        rng = np.random.default_rng(9)
        s, t = random_section(tw, GEOM2, 1, rng), random_section(tw, GEOM2, 1, rng)
        pts = GEOM2.grid(11)
        assert blend.leibniz_residual(s, t, pts) <= 1e-10
        assert blend.star_residual(s, pts) <= 1e-10

    def test_partition_violation_rejected(self):
        cov = cover()
        tw = build_twist(2, 0)
        part = {box: 1.01 * f for box, f in cov.cos2_partition().items()}
        conns = {box: zero_connection(tw, GEOM2) for box in cov.boxes}
        with pytest.raises(ValueError, match="partition of unity"):
            cech_blend(cov, conns, part)

    def test_negative_partition_rejected(self):
        cov = cover()
        tw = build_twist(2, 0)
        one = TrigPoly.constant(GEOM2)
        part = {
            (0, 0): one + TrigPoly.cosine(GEOM2, 0, 2.0),
            (1, 1): -1.0 * TrigPoly.cosine(GEOM2, 0, 2.0),
        }
        conns = {(0, 0): zero_connection(tw, GEOM2), (1, 1): zero_connection(tw, GEOM2)}
        with pytest.raises(ValueError, match="nonnegative"):
            cech_blend(cov, conns, part)

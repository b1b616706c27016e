import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdshape.bounds import (
    NEG_INFINITY,
    SvBoundReport,
    capacity_extreme_bounds,
    dof_range,
    horn_r1_check,
    power_bounds_nd,
    product_bounds_nd,
    rank_deficient_T,
    sv_bounds_nd,
    sv_bounds_nd_report,
    sv_bounds_rank_deficient,
    tag,
)
from bdshape.cli import EX3_H_B, EX3_H_F
from bdshape.designs import power_extremal_nd
from bdshape.manifold import BlockUnitary
from bdshape.numerics import random_unitary
from bdshape.solvers import capacity

EX4_B = np.array([3.0, 2.0, 1.0])
EX4_F = np.array([5.0, 4.0, 0.0])


def cgauss(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def sv(m):
    return np.linalg.svd(m, compute_uv=False)


descending = st.lists(st.floats(0.0, 10.0), min_size=1, max_size=7).map(lambda v: sorted(v, reverse=True))


class TestDofRange:
    def test_reference_matrices(self):
        assert dof_range(EX3_H_B, EX3_H_F) == (0, 2)

    def test_full_rank_square(self):
        rng = np.random.default_rng(0)
        assert dof_range(cgauss(rng, 4, 4), cgauss(rng, 4, 4)) == (4, 4)

    def test_zero_forward_link(self):
        assert dof_range(np.eye(3), np.zeros((3, 3))) == (0, 0)


class TestRankDeficientT:
    def test_full_rank_forward_link_gives_zero(self):
        rng = np.random.default_rng(1)
        t = rank_deficient_T(cgauss(rng, 3, 3), cgauss(rng, 4, 3), "forward")
        assert np.allclose(t, 0.0, atol=1e-12)

    def test_zero_forward_link_gives_direct_singular_values(self):
        rng = np.random.default_rng(2)
        hd = cgauss(rng, 3, 4)
        assert np.allclose(rank_deficient_T(hd, np.zeros((5, 4)), "forward"), sv(hd))

    @pytest.mark.parametrize("which", ["forward", "backward"])
    def test_rank_one_link_interlaces(self, which):
        rng = np.random.default_rng(3)
        hd = cgauss(rng, 4, 4)
        h = np.outer(cgauss(rng, 6), cgauss(rng, 4)) if which == "forward" else np.outer(cgauss(rng, 4), cgauss(rng, 6))
        t = rank_deficient_T(hd, h, which)
        d = sv(hd)
        # Oracle: eigenvalues of the projected Gram matrix through an eigensolver.
        if which == "forward":
            v = h.conj().T / np.linalg.norm(h)
            q, _ = np.linalg.qr(v[:, :1])
            gram = hd @ (np.eye(4) - q @ q.conj().T) @ hd.conj().T
        else:
            q, _ = np.linalg.qr(h[:, :1])
            gram = hd.conj().T @ (np.eye(4) - q @ q.conj().T) @ hd
        eig = np.sort(np.linalg.eigvalsh(gram))[::-1]
        assert np.allclose(t ** 2, eig, atol=1e-10)
        for n in range(4):
            assert t[n] <= d[n] + 1e-10
            if n + 1 < 4:
                assert t[n] >= d[n + 1] - 1e-10

    def test_bad_side(self):
        with pytest.raises(ValueError):
            rank_deficient_T(np.eye(2), np.eye(2), "sideways")


class TestRankDeficientBounds:
    def test_rank_one_chain(self):
        t = np.array([4.0, 3.0, 2.0, 1.0])
        rep = sv_bounds_rank_deficient(t, 1, 4)
        assert list(rep.lower[:3]) == [4.0, 3.0, 2.0]
        assert not rep.valid_lower[3]
        assert not rep.valid_upper[0] and math.isinf(rep.upper[0])
        assert list(rep.upper[1:]) == [4.0, 3.0, 2.0]

    def test_full_rank_link_has_nothing(self):
        rep = sv_bounds_rank_deficient([1.0, 0.5, 0.2], 3, 3)
        assert not rep.valid_upper.any() and not rep.valid_lower.any()

    def test_monte_carlo_soundness_both_architectures(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            hd = cgauss(rng, 3, 3)
            h_f = np.outer(cgauss(rng, 6), cgauss(rng, 3))
            h_b = cgauss(rng, 3, 6)
            rep = sv_bounds_rank_deficient(rank_deficient_T(hd, h_f, "forward"), 1, 3)
            for _ in range(500):
                for theta in (random_unitary(6, rng), BlockUnitary.random(6, 1, rng).to_matrix()):
                    assert rep.violations(sv(hd + h_b @ theta @ h_f)) == []


class TestNegligibleDirectBounds:
    @pytest.mark.parametrize("n, expected", [(0, (8.0, 15.0)), (1, (4.0, 10.0)), (2, (0.0, 0.0))])
    def test_reference_values(self, n, expected):
        assert sv_bounds_nd(EX4_B, EX4_F, n) == expected

    def test_report_pivots(self):
        rep = sv_bounds_nd_report(EX4_B, EX4_F)
        assert rep.upper_pivots[0] == (0, 0)
        assert rep.lower_pivots[1] == (2, 1)

    def test_report_json_round_trip(self):
        rep = sv_bounds_rank_deficient([2.0, 1.0], 1, 2)
        back = SvBoundReport.from_dict(json.loads(json.dumps(rep.to_dict())))
        assert np.array_equal(back.upper, rep.upper) and back.kind == rep.kind
        assert "Infinity" not in json.dumps(rep.to_dict())

    @settings(max_examples=100, deadline=None)
    @given(descending, descending, st.floats(0.01, 100.0))
    def test_ordered_and_scale_covariant(self, b, f, c):
        n_s = max(len(b), len(f))
        for n in range(n_s):
            lo, hi = sv_bounds_nd(b, f, n)
            assert lo <= hi
            lo2, hi2 = sv_bounds_nd(np.array(b) * c, f, n)
            assert lo2 == pytest.approx(c * lo, rel=1e-12, abs=1e-300)
            assert hi2 == pytest.approx(c * hi, rel=1e-12, abs=1e-300)

    def test_monte_carlo_soundness(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            hb, hf = cgauss(rng, 3, 5), cgauss(rng, 5, 4)
            # Both vectors padded to N_S = 5 before bounding.
            rep = sv_bounds_nd_report(np.pad(sv(hb), (0, 2)), np.pad(sv(hf), (0, 1)))
            for _ in range(500):
                assert rep.violations(sv(hb @ random_unitary(5, rng) @ hf)) == []


class TestProductBounds:
    def test_first_mode_matches_singular_value_bound(self):
        assert product_bounds_nd(EX4_B, EX4_F, 1)[1] == sv_bounds_nd(EX4_B, EX4_F, 0)[1]

    def test_full_product_for_square_links(self):
        rng = np.random.default_rng(6)
        hb, hf = cgauss(rng, 4, 4), cgauss(rng, 4, 4)
        lo, hi = product_bounds_nd(sv(hb), sv(hf), 4)
        assert lo == pytest.approx(hi, rel=1e-12)
        assert np.prod(sv(hb @ random_unitary(4, rng) @ hf)) == pytest.approx(hi, rel=1e-10)

    def test_monte_carlo_soundness(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            hb, hf = cgauss(rng, 4, 6), cgauss(rng, 6, 4)
            b, f = sv(hb), sv(hf)
            for _ in range(500):
                s = np.zeros(6)
                s[:4] = sv(hb @ random_unitary(6, rng) @ hf)
                for k in range(1, 7):
                    lo, hi = product_bounds_nd(b, f, k, 6)
                    assert np.prod(s[:k]) <= hi * (1 + 1e-9)
                    assert np.prod(s[6 - k:]) >= lo * (1 - 1e-9)


class TestHorn:
    def test_random_shaped_channels_pass(self):
        rng = np.random.default_rng(8)
        hb, hf = cgauss(rng, 3, 5), cgauss(rng, 5, 3)
        for _ in range(500):
            assert horn_r1_check(sv(hb), sv(hf), sv(hb @ random_unitary(5, rng) @ hf)) == []

    def test_inflated_second_mode_is_flagged(self):
        b, f = np.array([3.0, 1.0]), np.array([2.0, 1.0])
        limit = max(b[0] * f[1], b[1] * f[0])
        bad = horn_r1_check(b, f, [4.0, limit * 1.5])
        assert {(v["i"], v["j"]) for v in bad} >= {(0, 1), (1, 0)}

    def test_diagonal_reference_outcome(self):
        assert horn_r1_check(EX4_B, EX4_F, [12.0, 5.0, 0.0]) == []


class TestPowerBounds:
    def test_reference_values(self):
        assert power_bounds_nd(EX4_B, EX4_F) == (89.0, 289.0)

    def test_attained_and_sound(self):
        rng = np.random.default_rng(9)
        hb, hf = cgauss(rng, 3, 6), cgauss(rng, 6, 4)
        lo, hi = power_bounds_nd(sv(hb), sv(hf), 6)
        best = np.linalg.norm(hb @ power_extremal_nd(hb, hf, True).to_matrix() @ hf) ** 2
        assert best == pytest.approx(hi, rel=1e-12)
        for _ in range(500):
            p = np.linalg.norm(hb @ random_unitary(6, rng) @ hf) ** 2
            assert lo * (1 - 1e-9) <= p <= hi * (1 + 1e-9)

    def test_scale_covariant(self):
        lo, hi = power_bounds_nd(EX4_B * 2, EX4_F)
        assert (lo, hi) == (4 * 89.0, 4 * 289.0)


class TestCapacityBounds:
    def test_low_snr_value(self):
        low, _ = capacity_extreme_bounds([1.0], [1.0], 0.01, 1)
        assert low * math.log(2) == pytest.approx(0.01, rel=1e-12)

    def test_rank_deficiency_gives_negative_infinity(self):
        cap = capacity_extreme_bounds(EX4_B, EX4_F, 10.0, 3)
        assert cap.high == -math.inf
        assert cap.to_dict()["high_snr_bits"] == NEG_INFINITY
        assert tag(math.inf) == "unbounded"

    def test_high_snr_against_waterfilled_capacity(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            hb, hf = cgauss(rng, 3, 5), cgauss(rng, 5, 3)
            h = hb @ power_extremal_nd(hb, hf, True).to_matrix() @ hf
            rho = 1e4
            _, high = capacity_extreme_bounds(sv(hb), sv(hf), rho, 3)
            assert capacity(h, rho, 1.0) <= high + 0.1

    def test_low_snr_bound_holds_for_any_scattering(self):
        rng = np.random.default_rng(11)
        hb, hf = cgauss(rng, 3, 5), cgauss(rng, 5, 3)
        low, _ = capacity_extreme_bounds(sv(hb), sv(hf), 1e-3, 3)
        for _ in range(200):
            assert capacity(hb @ random_unitary(5, rng) @ hf, 1e-3, 1.0) <= low * (1 + 1e-9)

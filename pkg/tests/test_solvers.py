import math

import numpy as np
import pytest

from bdshape.bounds import sv_bounds_nd
from bdshape.channel import ChannelSet, Scenario, assemble, sample_channels
from bdshape.designs import power_extremal_nd
from bdshape.manifold import BlockUnitary, OptimizerConfig, check_directional_derivatives
from bdshape.numerics import waterfill
from bdshape.solvers import (
    capacity,
    eigenmode_precoder,
    maximize_power_saa,
    maximize_rate_ao,
    maximize_rate_two_stage,
    pareto_frontier,
    pareto_objective,
    power_objective,
    rate_gradient,
    rate_objective,
    shaping_subgradient,
)

TIGHT = OptimizerConfig(rel_tolerance=1e-10)


def cgauss(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_set(rng, n_r, n_s, n_t, direct=True):
    hd = cgauss(rng, n_r, n_t) if direct else np.zeros((n_r, n_t), dtype=complex)
    return ChannelSet(hd, cgauss(rng, n_r, n_s), cgauss(rng, n_s, n_t))


def sv(m):
    return np.linalg.svd(m, compute_uv=False)


def closed_form_capacity_bits(ch, p, eta):
    """Water-filling over sigma_n(H_B)^2 sigma_n(H_F)^2, computed from scratch."""
    g = np.zeros(min(ch.n_r, ch.n_t))
    prods = sv(ch.h_b)[: g.size] * np.pad(sv(ch.h_f), (0, g.size))[: g.size]
    g[: prods.size] = prods ** 2
    alloc = waterfill(g, p, eta)
    return float(np.sum(np.log2(1 + alloc.levels * g / eta)))


class TestGradients:
    @pytest.mark.parametrize("group_size", [1, 2, 6])
    def test_power_gradient(self, group_size):
        rng = np.random.default_rng(group_size)
        ch = random_set(rng, 3, 6, 2)
        err = check_directional_derivatives(power_objective(ch), BlockUnitary.random(6, group_size, rng), rng)
        assert err < 1e-4

    @pytest.mark.parametrize("group_size", [1, 3, 6])
    def test_pareto_gradient(self, group_size):
        rng = np.random.default_rng(10 + group_size)
        ch = random_set(rng, 3, 6, 3, direct=False)
        obj = pareto_objective(ch, [0.6, 0.3, 0.1])
        assert check_directional_derivatives(obj, BlockUnitary.random(6, group_size, rng), rng) < 1e-4

    @pytest.mark.parametrize("group_size", [1, 2, 4])
    def test_rate_gradient(self, group_size):
        rng = np.random.default_rng(20 + group_size)
        ch = random_set(rng, 3, 4, 3)
        w = cgauss(rng, 3, 2)
        obj = rate_objective(ch, w @ w.conj().T, 0.7)
        assert check_directional_derivatives(obj, BlockUnitary.random(4, group_size, rng), rng) < 1e-4

    def test_subgradient_with_twice_the_singular_values(self):
        rng = np.random.default_rng(3)
        ch = random_set(rng, 3, 4, 3)
        theta = BlockUnitary.random(4, 2, rng)
        d = 2 * sv(assemble(ch, theta))
        for g in range(2):
            direct = power_objective(ch).euclid_grad(theta, g)
            assert np.allclose(shaping_subgradient(ch, theta, d, g), 2 * direct, atol=1e-12)

    def test_zero_covariance_gives_zero_gradient(self):
        rng = np.random.default_rng(4)
        ch = random_set(rng, 2, 4, 2)
        assert np.allclose(rate_gradient(ch, BlockUnitary.random(4, 2, rng), np.zeros((2, 2)), 1.0, 0), 0.0)

    def test_siso_rate_gradient_matches_scalar_calculus(self):
        rng = np.random.default_rng(5)
        ch = random_set(rng, 1, 4, 1)
        theta = BlockUnitary.random(4, 2, rng)
        q, eta = 2.0, 0.5
        h = assemble(ch, theta)[0, 0]
        for g in range(2):
            b = ch.h_b[0, 2 * g:2 * g + 2]
            f = ch.h_f[2 * g:2 * g + 2, 0]
            expected = (q / eta) / (1 + abs(h) ** 2 * q / eta) * h * np.outer(b.conj(), f.conj())
            assert np.allclose(rate_gradient(ch, theta, np.array([[q]]), eta, g), expected, atol=1e-12)


class TestEigenmodePrecoder:
    def test_identity_channel(self):
        w, alloc, rate = eigenmode_precoder(np.eye(2), 2.0, 1.0)
        assert np.allclose(np.abs(w), np.eye(2))
        assert rate == pytest.approx(2 * math.log(2))
        assert alloc.total == pytest.approx(2.0)

    def test_rank_one_channel_uses_one_stream(self):
        rng = np.random.default_rng(6)
        u, v = cgauss(rng, 3), cgauss(rng, 4)
        h = np.outer(u, v.conj())
        w, _, _ = eigenmode_precoder(h, 1.0, 1.0)
        assert w.shape[1] == 1
        direction = w[:, 0] / np.linalg.norm(w[:, 0])
        assert abs(np.vdot(direction, v / np.linalg.norm(v))) == pytest.approx(1.0)
        assert np.linalg.norm(w) ** 2 == pytest.approx(1.0)

    def test_beats_isotropic_input(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            h = cgauss(rng, 3, 4)
            p, eta = 5.0, 0.8
            _, _, rate = eigenmode_precoder(h, p, eta)
            iso = np.linalg.slogdet(np.eye(3) + h @ h.conj().T * (p / 4) / eta)[1]
            assert rate >= iso - 1e-12

    def test_capacity_cases(self):
        assert capacity(np.zeros((2, 2)), 1.0, 1.0) == 0.0
        assert capacity(np.eye(3), 3.0, 1.0) == pytest.approx(3.0)
        h = cgauss(np.random.default_rng(8), 3, 3)
        assert capacity(h, 2.0, 0.3) == pytest.approx(eigenmode_precoder(h, 2.0, 0.3)[2] / math.log(2), rel=1e-12)


class TestPowerSaa:
    def test_fully_connected_matches_closed_form(self):
        rng = np.random.default_rng(9)
        ch = random_set(rng, 4, 8, 4, direct=False)
        best = np.linalg.norm(assemble(ch, power_extremal_nd(ch.h_b, ch.h_f, True))) ** 2
        res = maximize_power_saa(ch, 8, OptimizerConfig(rel_tolerance=1e-14))
        assert res.value == pytest.approx(best, rel=1e-8)

    def test_scalar_update_is_phase_alignment(self):
        rng = np.random.default_rng(10)
        ch = random_set(rng, 2, 5, 3)
        res = maximize_power_saa(ch, 1, OptimizerConfig(max_outer_iters=1))
        phases = np.ones(5, dtype=complex)
        for n in range(5):
            h = ch.h_d + ch.h_b @ np.diag(phases) @ ch.h_f
            m = np.vdot(ch.h_b[:, n], h @ ch.h_f[n].conj())
            phases[n] = m / abs(m)
        assert np.allclose(res.theta.blocks[:, 0, 0], phases, atol=1e-12)

    def test_optimal_start_is_a_fixed_point(self):
        rng = np.random.default_rng(11)
        ch = random_set(rng, 3, 6, 3, direct=False)
        theta0 = power_extremal_nd(ch.h_b, ch.h_f, True)
        res = maximize_power_saa(ch, 6, OptimizerConfig(max_outer_iters=1), theta0=theta0)
        assert res.trace[1] == pytest.approx(res.trace[0], rel=1e-10)

    @pytest.mark.parametrize("group_size", [1, 2, 8])
    def test_trace_monotone_and_unitary(self, group_size):
        ch = sample_channels(Scenario(n_t=4, n_s=8, n_r=4, seed=group_size))
        res = maximize_power_saa(ch, group_size)
        assert np.all(np.diff(res.trace) >= -1e-9 * res.trace[-1])
        assert res.theta.unitarity_error() < 1e-9

    def test_rank_deficient_targets_are_flagged(self):
        rng = np.random.default_rng(12)
        ch = random_set(rng, 1, 4, 1)
        res = maximize_power_saa(ch, 4)
        assert res.flagged > 0
        assert res.theta.unitarity_error() < 1e-9


class TestRateAo:
    def test_no_reflection_gives_direct_link_capacity(self):
        rng = np.random.default_rng(13)
        ch = ChannelSet(cgauss(rng, 2, 2), np.zeros((2, 4)), cgauss(rng, 4, 2))
        res = maximize_rate_ao(ch, 2, 3.0, 1.0)
        assert res.rate == pytest.approx(capacity(ch.h_d, 3.0, 1.0), rel=1e-12)
        two = maximize_rate_two_stage(ch, 2, 3.0, 1.0)
        assert two.rate == pytest.approx(capacity(ch.h_d, 3.0, 1.0), rel=1e-12)

    def test_fully_connected_matches_closed_form(self):
        ch = sample_channels(Scenario(n_t=4, n_s=8, n_r=4, direct=False, seed=3))
        p, eta = 100.0, Scenario().noise
        res = maximize_rate_ao(ch, 8, p, eta, TIGHT)
        assert res.rate == pytest.approx(closed_form_capacity_bits(ch, p, eta), rel=1e-6)

    def test_two_stage_closed_form_matches_ao(self):
        ch = sample_channels(Scenario(n_t=4, n_s=8, n_r=4, direct=False, seed=4))
        p, eta = 100.0, Scenario().noise
        two = maximize_rate_two_stage(ch, 8, p, eta)
        ao = maximize_rate_ao(ch, 8, p, eta, TIGHT)
        assert ao.rate == pytest.approx(two.rate, rel=1e-6)

    def test_warm_start_from_two_stage(self):
        ch = sample_channels(Scenario(n_t=4, n_s=16, n_r=4, seed=5))
        p, eta = 100.0, Scenario().noise
        two = maximize_rate_two_stage(ch, 16, p, eta)
        ao = maximize_rate_ao(ch, 16, p, eta, theta0=two.theta)
        assert ao.rate >= two.rate - 1e-9
        assert np.all(np.diff(ao.trace) >= -1e-9)

    def test_precoder_exhausts_budget(self):
        ch = sample_channels(Scenario(n_t=4, n_s=8, n_r=4, seed=6))
        res = maximize_rate_ao(ch, 2, 10.0, Scenario().noise)
        assert np.linalg.norm(res.precoder) ** 2 == pytest.approx(10.0, rel=1e-9)
        assert res.to_dict()["rate"] == res.rate

    def test_two_stage_gap_statistic(self):
        p, eta = 100.0, Scenario().noise
        for seed in range(100):
            ch = sample_channels(Scenario(n_t=4, n_s=16, n_r=4, seed=1000 + seed))
            two = maximize_rate_two_stage(ch, 1, p, eta)
            ao = maximize_rate_ao(ch, 1, p, eta, theta0=two.theta)
            assert two.rate - 1e-9 <= ao.rate <= 1.15 * two.rate


class TestNesting:
    @pytest.mark.parametrize("small, large", [(1, 2), (2, 8), (1, 8)])
    def test_power_and_rate_nesting(self, small, large):
        ch = sample_channels(Scenario(n_t=4, n_s=8, n_r=4, seed=small * 10 + large))
        p, eta = 100.0, Scenario().noise
        lo = maximize_power_saa(ch, small)
        hi = maximize_power_saa(ch, large, theta0=lo.theta.regroup(large))
        assert hi.value >= lo.value - 1e-9 * lo.value
        r_lo = maximize_rate_ao(ch, small, p, eta)
        r_hi = maximize_rate_ao(ch, large, p, eta, theta0=r_lo.theta.regroup(large))
        assert r_hi.rate >= r_lo.rate - 1e-9


class TestPareto:
    def test_first_mode_weight_attains_bound(self):
        ch = sample_channels(Scenario(n_t=2, n_s=8, n_r=2, direct=False, seed=1))
        (pt,) = pareto_frontier(ch, [[1.0, 0.0]], 8, TIGHT)
        assert pt.achieved_sv[0] == pytest.approx(sv(ch.h_b)[0] * sv(ch.h_f)[0], rel=1e-6)

    def test_extreme_weights_reach_min_max_bars(self):
        ch = sample_channels(Scenario(n_t=2, n_s=8, n_r=2, direct=False, seed=2))
        b = np.pad(sv(ch.h_b), (0, 6))
        f = np.pad(sv(ch.h_f), (0, 6))
        pts = pareto_frontier(ch, [[1.0, 1e-6], [1e-6, 1.0]], 8, TIGHT)
        assert pts[0].achieved_sv[0] == pytest.approx(sv_bounds_nd(b, f, 0)[1], rel=1e-5)
        assert pts[1].achieved_sv[1] == pytest.approx(sv_bounds_nd(b, f, 1)[1], rel=1e-5)

    @pytest.mark.parametrize("group_size", [1, 4, 8])
    def test_never_exceeds_upper_bounds(self, group_size):
        ch = sample_channels(Scenario(n_t=2, n_s=8, n_r=2, direct=False, seed=group_size))
        b = np.pad(sv(ch.h_b), (0, 6))
        f = np.pad(sv(ch.h_f), (0, 6))
        angles = np.linspace(0, np.pi / 2, 9)
        for pt in pareto_frontier(ch, [[np.cos(a), np.sin(a)] for a in angles], group_size):
            for n in range(2):
                assert pt.achieved_sv[n] <= sv_bounds_nd(b, f, n)[1] * (1 + 1e-8)
            assert pt.theta.unitarity_error() < 1e-8

    def test_pizza_slice_region(self):
        ch = sample_channels(Scenario(n_t=2, n_s=32, n_r=2, direct=False, seed=0))
        angles = np.linspace(0, np.pi / 2, 33)
        pts = pareto_frontier(ch, [[np.cos(a), np.sin(a)] for a in angles], 32)
        s = np.array([pt.achieved_sv for pt in pts])
        assert np.all(s[:, 0] >= s[:, 1])
        top = s[np.argmax(s[:, 1])]
        assert top[0] == pytest.approx(top[1], rel=0.05)

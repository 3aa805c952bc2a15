import itertools
import math

import numpy as np
import pytest

from conftest import make_graph, uniform_params
from loopsieve.cycles import minimum_cycle_basis
from loopsieve.graph import EdgeKind
from loopsieve.model import (
    CycleCapError,
    CycleDistribution,
    CycleFactor,
    ModelParams,
    cycle_conditional,
    factors_from_basis,
    joint_log_density,
    log_cycle_likelihood,
    log_psi,
    mixture_std,
    truncated_gaussian_mass,
)
from loopsieve.so3 import exp_so3


class TestModelParams:
    def test_requires_separated_scales(self):
        with pytest.raises(ValueError):
            ModelParams(0.3, 0.03)
        with pytest.raises(ValueError):
            ModelParams(0.1, 0.1)

    def test_prior_lookup(self):
        p = ModelParams(0.03, 0.3, {5: 0.7})
        assert p.prior(5) == 0.7
        with pytest.raises(KeyError):
            p.prior(6)

    def test_prior_range_checked(self):
        with pytest.raises(ValueError):
            ModelParams(0.03, 0.3, {1: 1.2})


class TestTruncatedMass:
    def test_matches_quadrature(self):
        # independent oracle: dense trapezoid rule on the integrand
        for sigma in (0.01, 0.05, 0.2, 0.5, 1.0):
            t = np.linspace(0.0, math.pi, 200_001)
            reference = np.trapezoid(np.exp(-(t**2) / (2 * sigma**2)), t)
            assert abs(truncated_gaussian_mass(sigma) - reference) < 1e-9

    def test_increasing_in_sigma(self):
        values = [truncated_gaussian_mass(s) for s in (0.01, 0.1, 0.3, 1.0)]
        assert values == sorted(values)


class TestMixtureStd:
    def test_all_inlier_three_edges(self):
        f = CycleFactor(0, (0, 1, 2), 0, 0.1)
        p = ModelParams(0.03, 0.3)
        assert abs(mixture_std(f, 0, p) - math.sqrt(3) * 0.03) < 1e-12

    def test_one_outlier_with_fixed_edges(self):
        f = CycleFactor(0, (0,), 2, 0.1)
        p = ModelParams(0.03, 0.3)
        assert abs(mixture_std(f, 1, p) - math.sqrt(0.0918)) < 1e-12

    def test_strictly_increasing_in_s(self):
        f = CycleFactor(0, (0, 1, 2, 3), 1, 0.1)
        p = ModelParams(0.03, 0.3)
        stds = [mixture_std(f, s, p) for s in range(5)]
        assert all(a < b for a, b in zip(stds, stds[1:]))

    def test_s_out_of_range(self):
        f = CycleFactor(0, (0, 1), 0, 0.1)
        with pytest.raises(ValueError):
            mixture_std(f, 3, ModelParams(0.03, 0.3))


class TestLogCycleLikelihood:
    def test_zero_error_favors_all_inlier(self):
        p = ModelParams(0.03, 0.3)
        f = CycleFactor(0, (0, 1, 2), 0, 0.0)
        l0 = log_cycle_likelihood(f, 0, p)
        l3 = log_cycle_likelihood(f, 3, p)
        s0, s3 = mixture_std(f, 0, p), mixture_std(f, 3, p)
        expected_ratio = (s3**3 * truncated_gaussian_mass(s3)) / (
            s0**3 * truncated_gaussian_mass(s0)
        )
        assert l0 > l3
        assert abs((l0 - l3) - math.log(expected_ratio)) < 1e-12
        assert expected_ratio > 1.0

    def test_large_error_favors_outlier(self):
        # direct evaluation puts the crossover between 4 and 4.5 std(0) for
        # sigma_bar/sigma = 10; at 3 std(0) the all-inlier term still wins,
        # by 5 std(0) the one-outlier term dominates in every cycle shape
        p = ModelParams(0.03, 0.3)
        for members, n_fixed in [((0,), 0), ((0, 1, 2), 0), ((0, 1), 3)]:
            base = CycleFactor(0, members, n_fixed, 0.0)
            s0 = mixture_std(base, 0, p)
            at3 = CycleFactor(0, members, n_fixed, 3.0 * s0)
            at5 = CycleFactor(0, members, n_fixed, 5.0 * s0)
            assert log_cycle_likelihood(at3, 0, p) > log_cycle_likelihood(at3, 1, p)
            assert log_cycle_likelihood(at5, 1, p) > log_cycle_likelihood(at5, 0, p)

    def test_depends_only_on_count(self):
        # the likelihood takes s, not a configuration: equal-count masks in
        # the conditional get identical values
        p = uniform_params((0, 1, 2), prior=0.37)
        f = CycleFactor(0, (0, 1, 2), 1, 0.12)
        dist = cycle_conditional(f, p).values
        by_count = {}
        for mask in range(8):
            by_count.setdefault(bin(mask).count("1"), []).append(dist[mask])
        for values in by_count.values():
            assert max(values) - min(values) < 1e-12


class TestCycleConditional:
    def test_zero_error_single_member_prefers_inlier(self):
        p = uniform_params((0,))
        f = CycleFactor(0, (0,), 2, 0.0)
        dist = cycle_conditional(f, p)
        assert dist.values[0] > dist.values[1]

    def test_certain_priors_put_mass_on_zero_mask(self):
        p = uniform_params((0, 1), prior=1.0)
        f = CycleFactor(0, (0, 1), 0, 0.2)
        dist = cycle_conditional(f, p)
        assert dist.values[0] == pytest.approx(1.0)
        assert np.all(dist.values[1:] == 0.0)

    def test_matches_direct_enumeration(self, rng):
        # oracle: explicit product of prior and likelihood per mask
        for _ in range(10):
            k = int(rng.integers(1, 5))
            priors = {i: float(rng.uniform(0.05, 0.95)) for i in range(k)}
            p = ModelParams(0.03, 0.3, priors)
            f = CycleFactor(0, tuple(range(k)), int(rng.integers(0, 3)), float(rng.uniform(0, 1.5)))
            dist = cycle_conditional(f, p)
            raw = np.zeros(1 << k)
            for mask in range(1 << k):
                s = bin(mask).count("1")
                value = math.exp(log_cycle_likelihood(f, s, p))
                for j in range(k):
                    value *= (1 - priors[j]) if (mask >> j) & 1 else priors[j]
                raw[mask] = value
            assert np.allclose(dist.values, raw / raw.sum(), atol=1e-12)

    def test_permutation_equivariance(self):
        priors = {0: 0.2, 1: 0.6, 2: 0.9}
        p = ModelParams(0.03, 0.3, priors)
        f = CycleFactor(0, (0, 1, 2), 0, 0.4)
        g = CycleFactor(0, (2, 0, 1), 0, 0.4)
        d_f = cycle_conditional(f, p).values
        d_g = cycle_conditional(g, p).values
        # member j of g is member (j+2) % 3 of f: remap mask bits
        for mask in range(8):
            remapped = ((mask >> 1) & 0b11) | ((mask & 1) << 2)
            assert d_g[mask] == pytest.approx(d_f[remapped], abs=1e-12)

    def test_cap_enforced(self):
        f = CycleFactor(7, tuple(range(5)), 0, 0.1)
        with pytest.raises(CycleCapError, match="cycle 7"):
            cycle_conditional(f, uniform_params(range(5)), cap=4)

    def test_posterior_mass_on_all_inlier_decreases_with_z(self):
        p = uniform_params((0, 1))
        masses = []
        for z in np.linspace(0.0, 1.2, 13):
            f = CycleFactor(0, (0, 1), 2, float(z))
            masses.append(cycle_conditional(f, p).values[0])
        assert all(a >= b - 1e-12 for a, b in zip(masses, masses[1:]))

    def test_scale_invariance_of_distribution(self):
        # dropping any constant per-cycle factor cannot change the result,
        # since the distribution normalizes; psi is such a constant
        p = uniform_params((0, 1, 2))
        f = CycleFactor(0, (0, 1, 2), 1, 0.3)
        assert math.isfinite(log_psi(f, p))
        d = cycle_conditional(f, p)
        assert d.values.sum() == pytest.approx(1.0)


class TestCycleDistribution:
    def test_validates_shape_and_normalization(self):
        with pytest.raises(ValueError):
            CycleDistribution(np.array([0.5, 0.2]))
        with pytest.raises(ValueError):
            CycleDistribution(np.array([0.5, 0.5, 0.0]))

    def test_marginals(self):
        d = CycleDistribution(np.array([0.4, 0.3, 0.2, 0.1]))
        assert d.inlier_marginal(0) == pytest.approx(0.6)
        assert d.inlier_marginal(1) == pytest.approx(0.7)
        counts = d.outlier_count_marginals()
        assert counts == pytest.approx([0.4, 0.5, 0.1])


class TestJointLogDensity:
    def test_no_cycles_is_priors_only(self):
        g = make_graph(3, [(0, 0, 1), (1, 1, 2)])
        basis = minimum_cycle_basis(g)
        p = uniform_params((0, 1), prior=0.8)
        value = joint_log_density(g, basis, {0: 0, 1: 1}, p)
        assert value == pytest.approx(math.log(0.8) + math.log(0.2))

    def test_flip_changes_local_terms_only(self):
        r = exp_so3((0.05, 0.0, 0.0))
        g = make_graph(
            4,
            [(0, 0, 1, r), (1, 1, 2, r), (2, 0, 2, r), (3, 2, 3, r), (4, 3, 0, r)],
        )
        basis = minimum_cycle_basis(g)
        p = uniform_params(range(5), prior=0.6)
        x = {i: 0 for i in range(5)}
        base = joint_log_density(g, basis, x, p)
        factors = factors_from_basis(g, basis)
        flipped = {**x, 3: 1}
        delta = joint_log_density(g, basis, flipped, p) - base
        expected = math.log(0.4) - math.log(0.6)
        for f in factors:
            if 3 in f.lc_members:
                s_new = sum(flipped[e] for e in f.lc_members)
                s_old = sum(x[e] for e in f.lc_members)
                expected += log_cycle_likelihood(f, s_new, p) - log_cycle_likelihood(f, s_old, p)
        assert delta == pytest.approx(expected, abs=1e-12)

    def test_single_cycle_posterior_matches_conditional(self, rng):
        # brute-force enumeration oracle on a 1-cycle graph
        rots = [exp_so3(rng.normal(0, 0.1, 3)) for _ in range(3)]
        g = make_graph(3, [(0, 0, 1, rots[0]), (1, 1, 2, rots[1]), (2, 0, 2, rots[2])])
        basis = minimum_cycle_basis(g)
        p = ModelParams(0.03, 0.3, {0: 0.4, 1: 0.6, 2: 0.7})
        factor = factors_from_basis(g, basis)[0]
        weights = {}
        for assignment in itertools.product((0, 1), repeat=3):
            x = dict(zip((0, 1, 2), assignment))
            weights[assignment] = math.exp(joint_log_density(g, basis, x, p))
        total = sum(weights.values())
        marginal0 = sum(v for a, v in weights.items() if a[0] == 0) / total
        dist = cycle_conditional(factor, p)
        member_index = factor.lc_members.index(0)
        assert marginal0 == pytest.approx(dist.inlier_marginal(member_index), abs=1e-10)

    def test_missing_edge_rejected(self):
        g = make_graph(3, [(0, 0, 1), (1, 1, 2), (2, 0, 2)])
        basis = minimum_cycle_basis(g)
        with pytest.raises(ValueError, match="missing"):
            joint_log_density(g, basis, {0: 0, 1: 0}, uniform_params(range(3)))


class TestPsi:
    def test_matches_direct_sum(self):
        p = ModelParams(0.03, 0.3)
        f = CycleFactor(0, (0, 1, 2), 2, 0.25)
        direct = sum(
            math.comb(3, s) * math.exp(log_cycle_likelihood(f, s, p)) for s in range(4)
        )
        assert log_psi(f, p) == pytest.approx(math.log(direct), abs=1e-10)

import itertools

import numpy as np
import pytest

from nn_mmimo.constellations import (
    RateAllocation,
    all_rate_allocations,
    build_qam_udcg,
    sub_constellation_energies,
)
from nn_mmimo.mustm import Codebook, SignalMatrix, SystemProfile, gram
from nn_mmimo.optimizer import (
    gram_determinant_gap,
    kl_breakdown,
    kl_divergence,
    maximin_ratio_assignment,
    maximin_ratio_bruteforce,
    power_product_objective,
    solve_design,
    solve_design_bruteforce,
    worst_case_pair_bruteforce,
    worst_case_pair_closed_form,
)


def fitted(alloc, profile):
    basis = build_qam_udcg(alloc, 1.0)
    sol = solve_design(profile, basis)
    scaled = build_qam_udcg(alloc, sol.d_star)
    return sol, scaled, Codebook(scaled, sol.p_star, sol.pi_star, profile)


def sample_profile(rng, k, sigma2=None):
    caps = np.sort(rng.uniform(0.5, 4.0, size=k))
    gains = np.ones(k)
    s2 = sigma2 if sigma2 is not None else float(rng.uniform(0.05, 0.8))
    return SystemProfile(tuple(caps), tuple(gains), s2)


def mc_kl_estimate(r, r_tilde, n_samples, rng):
    """Sampling oracle: E_p[ln p(y)/q(y)] with y ~ CN(0, r), single antenna."""
    chol = np.linalg.cholesky(r)
    z = (
        rng.standard_normal((2, n_samples)) + 1j * rng.standard_normal((2, n_samples))
    ) / np.sqrt(2.0)
    y = chol @ z
    q_r = np.linalg.inv(r)
    q_t = np.linalg.inv(r_tilde)
    quad = np.einsum("in,ij,jn->n", y.conj(), q_t - q_r, y).real
    log_det = np.log(np.linalg.det(r_tilde).real) - np.log(np.linalg.det(r).real)
    return float(np.mean(quad) + log_det)


class TestKlDivergence:
    def test_identity_pair_is_zero(self):
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.25)
        _, _, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        assert kl_divergence(cb.entry(5), cb.entry(5), profile) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_over_random_pairs(self):
        rng = np.random.default_rng(21)
        profile = SystemProfile((1.0, 2.0, 2.5), (1.0, 1.0, 1.0), 0.3)
        _, _, cb = fitted(RateAllocation.uniform_qam(3, 1, 1), profile)
        for _ in range(60):
            i, j = rng.integers(0, cb.size, size=2)
            value = kl_divergence(cb.entry(int(i)), cb.entry(int(j)), profile)
            assert value >= -1e-12

    def test_zero_for_equal_grams(self):
        # row-swapped codewords share S^H S, hence the full Gram
        profile = SystemProfile((1.0, 1.0), (1.0, 1.0), 0.2)
        s = np.array([[1.0, 0.5 + 0.5j], [1.0, -1.0 + 1.0j]])
        x = SignalMatrix(s, s)
        x_swapped = SignalMatrix(s[::-1].copy(), s[::-1].copy())
        assert np.allclose(gram(x, profile), gram(x_swapped, profile))
        assert kl_divergence(x, x_swapped, profile) == pytest.approx(0.0, abs=1e-12)

    def test_asymmetry(self):
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.25)
        _, _, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        forward = kl_divergence(cb.entry(0), cb.entry(9), profile)
        backward = kl_divergence(cb.entry(9), cb.entry(0), profile)
        assert abs(forward - backward) > 1e-6

    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(22)
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.4)
        _, _, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        r = gram(cb.entry(3), profile)
        r_tilde = gram(cb.entry(12), profile)
        closed = kl_divergence(cb.entry(3), cb.entry(12), profile)
        estimate = mc_kl_estimate(r, r_tilde, 400_000, rng)
        assert estimate == pytest.approx(closed, rel=0.05)

    def test_m_antenna_scaling(self):
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.3)
        _, _, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        r = gram(cb.entry(2), profile)
        r_tilde = gram(cb.entry(7), profile)
        single = kl_divergence(cb.entry(2), cb.entry(7), profile)
        for m in (2, 5):
            big = np.kron(np.eye(m), r)
            big_t = np.kron(np.eye(m), r_tilde)
            ratio = np.linalg.solve(big_t, big)
            value = np.real(np.trace(ratio)) - np.linalg.slogdet(ratio)[1] - 2 * m
            assert value == pytest.approx(m * single, rel=1e-10)


class TestKlBreakdown:
    def test_identical_inputs_vanish(self):
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.25)
        _, scaled, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        out = kl_breakdown(cb.p, cb.symbols[4], cb.symbols[4], profile.noise_power)
        assert out.f1 == 0.0 and out.f2 == 0.0 and out.total == 0.0

    def test_sums_to_dense_value(self):
        rng = np.random.default_rng(23)
        for k, alloc in [(2, RateAllocation.uniform_qam(2, 1, 1)),
                         (3, RateAllocation.uniform_qam(3, 1, 1)),
                         (2, RateAllocation.of([2, 1], [1, 1]))]:
            profile = sample_profile(rng, k)
            _, _, cb = fitted(alloc, profile)
            for _ in range(30):
                i, j = rng.integers(0, cb.size, size=2)
                split = kl_breakdown(
                    cb.p, cb.symbols[int(i)], cb.symbols[int(j)], profile.noise_power
                )
                dense = kl_divergence(cb.entry(int(i)), cb.entry(int(j)), profile)
                assert split.total == pytest.approx(dense, abs=1e-10)
                assert split.f1 >= 0.0 and split.f2 >= 0.0
                assert split.total == pytest.approx(split.f1 + split.f2, abs=1e-10)

    def test_f1_zero_for_matched_determinants(self):
        # conjugate codewords keep both the energy sum and |sum| unchanged
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.3)
        _, _, cb = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        s = cb.symbols[6]
        s_conj = np.conj(s)
        out = kl_breakdown(cb.p, s, s_conj, profile.noise_power)
        assert out.f1 == pytest.approx(0.0, abs=1e-14)
        assert gram_determinant_gap(cb.p, s, s_conj, profile.noise_power) == pytest.approx(
            0.0, abs=1e-14
        )

    def test_f1_positive_when_determinants_differ(self):
        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.3)
        alloc = RateAllocation.of([2, 1], [0, 1])
        _, _, cb = fitted(alloc, profile)
        found = False
        for i, j in itertools.product(range(cb.size), repeat=2):
            gap = gram_determinant_gap(
                cb.p, cb.symbols[i], cb.symbols[j], profile.noise_power
            )
            split = kl_breakdown(
                cb.p, cb.symbols[i], cb.symbols[j], profile.noise_power
            )
            if abs(gap) > 1e-9:
                assert split.f1 > 0.0
                found = True
        assert found


class TestWorstCasePair:
    def test_k2_4qam_structure(self):
        profile = SystemProfile((1.0, 4.0), (1.0, 1.0), 0.3)
        sol, scaled, _ = fitted(RateAllocation.uniform_qam(2, 1, 1), profile)
        pair = worst_case_pair_closed_form(scaled, sol.p_star, profile.noise_power)
        d = sol.d_star
        assert np.sum(pair.s_tilde) == pytest.approx((0.5 + 0.5j) * d)
        assert np.sum(pair.s) == pytest.approx((0.5 - 0.5j) * d)
        assert abs(np.sum(pair.s) - np.sum(pair.s_tilde)) ** 2 == pytest.approx(d * d)
        split = kl_breakdown(sol.p_star, pair.s, pair.s_tilde, profile.noise_power)
        assert split.f1 == pytest.approx(0.0, abs=1e-12)
        assert split.f2 == pytest.approx(pair.value, rel=1e-12)

    def test_matches_bruteforce_on_sample_splits(self):
        # pure function of (decomposition, p, sigma2); no design needed
        rng = np.random.default_rng(31)
        for alloc in all_rate_allocations(5, 3)[::3]:
            u = build_qam_udcg(alloc, float(rng.uniform(0.5, 2.0)))
            p = rng.uniform(0.5, 2.0, size=alloc.n_users)
            sigma2 = float(rng.uniform(0.05, 0.5))
            closed = worst_case_pair_closed_form(u, p, sigma2)
            brute = worst_case_pair_bruteforce(u, p, sigma2)
            assert closed.value == pytest.approx(brute.value, abs=1e-10 * brute.value)

    def test_extreme_sum_closed_form(self):
        # the extreme-pattern sum for active last-user components:
        # [ (1+j)/2 + (2^(Ni_K - 1) - 1) 2^(sum Ni_l) + j (...) ] d
        for alloc in [
            RateAllocation.uniform_qam(2, 1, 1),
            RateAllocation.uniform_qam(3, 1, 1),
            RateAllocation.of([2, 2], [1, 1]),
            RateAllocation.of([1, 1], [2, 2]),
        ]:
            d = 0.5
            u = build_qam_udcg(alloc, d)
            pair = worst_case_pair_closed_form(u, np.ones(alloc.n_users), 0.1)
            ni_last = alloc.inphase_bits[-1]
            nq_last = alloc.quadrature_bits[-1]
            li = sum(alloc.inphase_bits[:-1])
            lq = sum(alloc.quadrature_bits[:-1])
            expected = (
                (1 + 1j) / 2
                + (2 ** (ni_last - 1) - 1) * 2**li
                + 1j * (2 ** (nq_last - 1) - 1) * 2**lq
            ) * d
            assert np.sum(pair.s_tilde) == pytest.approx(expected)

    def test_k1_neighbors(self):
        profile = SystemProfile((2.0,), (1.0,), 0.2)
        sol, scaled, _ = fitted(RateAllocation.of([2], [1]), profile)
        pair = worst_case_pair_closed_form(scaled, sol.p_star, profile.noise_power)
        gap = abs(np.sum(pair.s) - np.sum(pair.s_tilde))
        assert gap == pytest.approx(sol.d_star)
        brute = worst_case_pair_bruteforce(scaled, sol.p_star, profile.noise_power)
        assert pair.value == pytest.approx(brute.value, rel=1e-10)


class TestMaximinAssignment:
    def test_worked_example(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([2.0, 4.0, 9.0])
        perm = maximin_ratio_assignment(a, b)
        assert perm.tolist() == [0, 1, 2]
        identity_value = float(np.min(a / b))
        assert identity_value == pytest.approx(1 / 3)
        for candidate in itertools.permutations(range(3)):
            assert float(np.min(a / b[list(candidate)])) <= identity_value + 1e-12

    def test_equal_sequences(self):
        a = np.array([1.0, 2.0])
        assert float(np.min(a / a)) == 1.0
        assert maximin_ratio_assignment(a, a).tolist() == [0, 1]

    def test_identity_ties_bruteforce_random(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            k = int(rng.integers(2, 6))
            a = np.sort(rng.uniform(0.2, 5.0, size=k))
            b = np.sort(rng.uniform(0.2, 5.0, size=k))
            best, _ = maximin_ratio_bruteforce(a, b)
            assert float(np.min(a / b)) == pytest.approx(best, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            maximin_ratio_assignment([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            maximin_ratio_assignment([1.0, -2.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            maximin_ratio_assignment([2.0, 1.0], [1.0, 2.0])


class TestSolveDesign:
    def test_hand_example(self):
        profile = SystemProfile((1.0, 4.0), (1.0, 1.0), 0.25)
        basis = build_qam_udcg(RateAllocation.uniform_qam(2, 1, 1), 1.0)
        sol = solve_design(profile, basis)
        assert sol.d_star == pytest.approx(np.sqrt(2.0))
        assert sol.p_star == pytest.approx([1.0, 0.5])
        assert sol.pi_star.tolist() == [0, 1]
        assert sol.binding_users == (0,)

    def test_k1_power_met_with_equality(self):
        profile = SystemProfile((1.5,), (0.8,), 0.1)
        basis = build_qam_udcg(RateAllocation.uniform_qam(1, 1, 1), 1.0)
        sol = solve_design(profile, basis)
        cap = profile.effective_caps[0]
        e1 = sub_constellation_energies(basis)[0]
        assert sol.d_star == pytest.approx(cap / np.sqrt(e1))
        assert sol.p_star[0] * e1 * sol.d_star**2 == pytest.approx(cap)
        assert 1.0 / sol.p_star[0] == pytest.approx(cap)

    def test_rejects_decreasing_energies(self):
        from dataclasses import replace

        profile = SystemProfile((1.0, 2.0), (1.0, 1.0), 0.25)
        u = build_qam_udcg(RateAllocation.uniform_qam(2, 1, 1), 1.0)
        flipped = replace(
            u, sub_constellations=tuple(reversed(u.sub_constellations))
        )
        with pytest.raises(ValueError):
            solve_design(profile, flipped)

    def test_cauchy_schwarz_equality_at_optimum(self):
        rng = np.random.default_rng(51)
        for alloc in [
            RateAllocation.uniform_qam(2, 1, 1),
            RateAllocation.of([2, 1], [1, 2]),
            RateAllocation.uniform_qam(3, 1, 1),
        ]:
            profile = sample_profile(rng, alloc.n_users)
            basis = build_qam_udcg(alloc, 1.0)
            sol = solve_design(profile, basis)
            energies = sub_constellation_energies(basis)
            lhs = power_product_objective(
                sol.p_star, energies, profile.noise_power, sol.d_star
            )
            rhs = (np.sum(np.sqrt(energies)) + profile.noise_power / sol.d_star) ** 2
            assert lhs == pytest.approx(rhs, rel=1e-12)
            # any feasible perturbation does not go below the bound
            for _ in range(20):
                p = sol.p_star * rng.uniform(0.6, 1.0, size=alloc.n_users)
                assert (
                    power_product_objective(
                        p, energies, profile.noise_power, sol.d_star
                    )
                    >= rhs - 1e-12
                )

    def test_grid_oracle_never_beats_closed_form(self):
        rng = np.random.default_rng(61)
        for k in (2, 3):
            alloc = RateAllocation.uniform_qam(k, 1, 1)
            basis = build_qam_udcg(alloc, 1.0)
            for _ in range(3):
                profile = sample_profile(rng, k)
                sol = solve_design(profile, basis)
                oracle = solve_design_bruteforce(profile, basis, grid_points=21)
                assert oracle.value <= sol.worst_pair_value * (1 + 1e-6)
                assert oracle.value >= sol.worst_pair_value * 0.8

    def test_ties_reported(self):
        profile = SystemProfile((1.0, 1.0), (1.0, 1.0), 0.2)
        alloc = RateAllocation.of([1, 1], [1, 1])
        basis = build_qam_udcg(alloc, 1.0)
        # equal caps but unequal energies: single binding user
        sol = solve_design(profile, basis)
        assert sol.binding_users == (1,)
        # engineered tie: caps proportional to sqrt(energies)
        energies = sub_constellation_energies(basis)
        caps = np.sqrt(energies / energies[0])
        profile2 = SystemProfile(tuple(caps), (1.0, 1.0), 0.2)
        sol2 = solve_design(profile2, basis)
        assert sol2.binding_users == (0, 1)

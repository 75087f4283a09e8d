import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaypower.bayes import GaussianBelief, JointMoments, SensorNetwork, observation_moments
from relaypower.errors import InvalidInputError, NumericalError
from relaypower.relay import (
    Allocation,
    Budgets,
    ChannelLink,
    PhiCoefficients,
    RelayProblem,
    RelaySpec,
    effective_gain,
    phi_coefficients,
    phi_value,
    posterior_mse,
    psi_phi,
    total_noise_cov,
    trace_objective,
)
from relaypower.validation import random_problem

ONES = PhiCoefficients(1.0, 1.0, 1.0, 1.0)


def scalar_problem():
    mom = observation_moments(GaussianBelief([0.0], [[1.0]]), SensorNetwork([[1.0]], [[1.0]]))
    return RelayProblem.from_moments(mom, 1.0, 1.0)


class TestPhiCoefficients:
    def test_substitution(self):
        c = phi_coefficients(ChannelLink(2.0, 3.0), 2.0)
        assert (c.p, c.q, c.r, c.sigma) == (6.0, 4.0, 3.0, 1.0)

    def test_all_ones(self):
        c = phi_coefficients(ChannelLink(1.0, 1.0), 1.0)
        assert (c.p, c.q, c.r, c.sigma) == (1.0, 1.0, 1.0, 1.0)

    def test_relay_noise_enters_r(self):
        link = ChannelLink(1.0, 1.0, sigma_sr=2.0, sigma_rd=1.0)
        c = phi_coefficients(link, 1.0)
        assert c.r == 2.0
        # independent check: phi is H^2 / C at the channel, from the signal model
        spec = RelaySpec.from_links([link], [1.0])
        alloc = Allocation([0.7], [1.3])
        h2 = effective_gain(spec, alloc)[0, 0] ** 2
        noise = total_noise_cov(spec, alloc)[0, 0]
        assert phi_value(0.7, 1.3, c) == pytest.approx(h2 / noise, rel=1e-14)

    @pytest.mark.parametrize("bad", [dict(h_sr=0.0), dict(h_rd=-1.0), dict(sigma_sr=0.0)])
    def test_nonpositive_rejected(self, bad):
        kw = dict(h_sr=1.0, h_rd=1.0, sigma_sr=1.0, sigma_rd=1.0) | bad
        with pytest.raises(InvalidInputError):
            ChannelLink(**kw)

    def test_nonpositive_power_rejected(self):
        with pytest.raises(InvalidInputError):
            phi_coefficients(ChannelLink(1.0, 1.0), 0.0)


class TestPhiValue:
    def test_zero_alpha(self):
        assert phi_value(0.0, 3.7, ONES) == 0.0

    def test_all_ones(self):
        assert phi_value(1.0, 1.0, ONES) == pytest.approx(1 / 3)

    def test_substitution_example(self):
        c = PhiCoefficients(6.0, 4.0, 3.0, 1.0)
        assert phi_value(2.0, 1.0, c) == pytest.approx(1.0)
        spec = RelaySpec(2.0, 3.0, 1.0, 1.0, [2.0])
        alloc = Allocation([2.0], [1.0])
        assert effective_gain(spec, alloc)[0, 0] ** 2 / total_noise_cov(spec, alloc)[0, 0] == pytest.approx(1.0)

    def test_limits(self):
        c = PhiCoefficients(6.0, 4.0, 3.0, 1.0)
        assert phi_value(2.0, 1e12, c) == pytest.approx(6 * 2 / 3, rel=1e-9)
        assert phi_value(1e12, 2.0, c) == pytest.approx(6 * 2 / 4, rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1.01, 10))
    def test_increasing(self, a, b, f):
        c = PhiCoefficients(6.0, 4.0, 3.0, 1.0)
        v = phi_value(a, b, c)
        assert phi_value(a * f, b, c) > v
        assert phi_value(a, b * f, c) > v


def simulate_link(h_sr, h_rd, s_sr, s_rd, power, alpha, beta, k, rng):
    """Raw two-hop signal chain for zero-mean observations of the given power."""
    y = np.sqrt(power) * rng.standard_normal(k)
    z_relay = np.sqrt(h_sr * alpha) * y + np.sqrt(s_sr) * rng.standard_normal(k)
    scale = np.sqrt(h_rd * beta / (h_sr * power * alpha + s_sr))
    return y, scale * z_relay + np.sqrt(s_rd) * rng.standard_normal(k)


class TestEffectiveGainAndNoise:
    def test_zero_alpha(self):
        spec = RelaySpec(1.0, 1.0, 1.0, 1.0, [1.0, 1.0])
        np.testing.assert_array_equal(effective_gain(spec, Allocation([0, 0], [1, 1])), np.zeros((2, 2)))

    def test_unit_entry(self):
        spec = RelaySpec(1.0, 1.0, 1.0, 1.0, [1.0])
        assert effective_gain(spec, Allocation([1], [1]))[0, 0] == pytest.approx(np.sqrt(0.5))
        assert total_noise_cov(spec, Allocation([1], [1]))[0, 0] == pytest.approx(1.5)

    def test_silent_relay(self):
        spec = RelaySpec(1.0, 1.0, 1.0, [0.5, 2.0], [1.0, 3.0])
        np.testing.assert_allclose(total_noise_cov(spec, Allocation([1, 1], [0, 0])), np.diag([0.5, 2.0]))

    def test_gain_matches_regression(self):
        spec = RelaySpec([0.8, 3.0], [2.0, 0.4], [1.5, 0.7], [0.9, 1.2], [2.0, 0.5])
        alloc = Allocation([0.6, 2.5], [1.7, 0.3])
        gain = np.diag(effective_gain(spec, alloc))
        rng = np.random.default_rng(11)
        for j in range(2):
            y, z = simulate_link(spec.h_sr[j], spec.h_rd[j], spec.sigma_sr[j], spec.sigma_rd[j],
                                 spec.channel_powers[j], alloc.alpha[j], alloc.beta[j], 1_000_000, rng)
            slope = np.dot(y, z) / np.dot(y, y)
            assert slope == pytest.approx(gain[j], rel=0.01)

    def test_noise_matches_sample_variance(self):
        spec = RelaySpec([1.7], [0.6], [2.2], [0.8], [1.4])
        alloc = Allocation([0.9], [3.1])
        h = effective_gain(spec, alloc)[0, 0]
        y, z = simulate_link(1.7, 0.6, 2.2, 0.8, 1.4, 0.9, 3.1, 1_000_000, np.random.default_rng(12))
        w = z - h * y
        assert np.var(w) == pytest.approx(total_noise_cov(spec, alloc)[0, 0], rel=0.01)


class TestPsiPhi:
    def test_identity(self):
        cxy = np.array([[0.3, -1.2]])
        mom = JointMoments([0.0], [0.0, 0.0], [[2.0]], np.eye(2), cxy)
        psi, phi = psi_phi(mom)
        np.testing.assert_allclose(psi, cxy.T)
        np.testing.assert_allclose(phi, np.eye(2))

    def test_scalar(self):
        psi, phi = psi_phi(scalar_problem().moments)
        assert psi[0, 0] == pytest.approx(0.5)
        assert phi[0, 0] == pytest.approx(0.5)

    def test_two_by_two_adjugate(self):
        mom = observation_moments(GaussianBelief([1.0], [[1.0]]), SensorNetwork([[1.0], [2.0]], np.eye(2)))
        psi, phi = psi_phi(mom)
        (a, b), (c, d) = mom.cov_y
        inv = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
        np.testing.assert_allclose(phi, inv, atol=1e-12)
        np.testing.assert_allclose(psi, inv @ mom.cov_xy.T, atol=1e-12)

    def test_singular(self):
        mom = JointMoments([0.0], [0.0, 0.0], [[1.0]], np.ones((2, 2)), [[1.0, 1.0]])
        with pytest.raises(NumericalError):
            psi_phi(mom)


class TestPosteriorMse:
    def test_zero_allocation_gives_prior(self):
        prob = random_problem(np.random.default_rng(0), n=3, m=4)
        trace, cov = posterior_mse(prob.moments, prob.spec, Allocation(np.zeros(4), np.zeros(4)))
        assert trace == pytest.approx(np.trace(prob.moments.cov_x), rel=1e-12)
        np.testing.assert_allclose(cov, prob.moments.cov_x, atol=1e-12)

    def test_scalar_unit_phi(self):
        # C_Y = 2 and unit links: phi = t^2 / (3t + 1) = 1 at t = (3 + sqrt 13) / 2
        prob = scalar_problem()
        t = (3 + np.sqrt(13)) / 2
        alloc = Allocation([t], [t])
        assert prob.phi(alloc)[0] == pytest.approx(1.0)
        for form in ("phi", "direct"):
            trace, _ = posterior_mse(prob.moments, prob.spec, alloc, form)
            assert trace == pytest.approx(2 / 3, rel=1e-12)

    def test_infinite_snr_limit(self):
        prob = random_problem(np.random.default_rng(1), n=2, m=3)
        alloc = Allocation(np.full(3, 1e12), np.full(3, 1e12))
        trace, _ = posterior_mse(prob.moments, prob.spec, alloc)
        assert trace == pytest.approx(prob.residual_trace, rel=1e-6, abs=1e-9)

    def test_relay_power_limit_is_one_hop(self):
        prob = random_problem(np.random.default_rng(2), n=2, m=3, random_noise=True)
        alpha = np.array([0.3, 1.1, 2.0])
        trace, _ = posterior_mse(prob.moments, prob.spec, Allocation(alpha, np.full(3, 1e10)))
        psi, phi_mat = prob.psi_phi
        one_hop = prob.residual_trace + trace_objective(psi, phi_mat, prob.spec.h_sr * alpha / prob.spec.sigma_sr)
        assert trace == pytest.approx(one_hop, rel=1e-6)

    def test_unknown_form(self):
        prob = scalar_problem()
        with pytest.raises(InvalidInputError):
            posterior_mse(prob.moments, prob.spec, Allocation([1], [1]), "adjoint")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_forms_agree(self, seed):
        rng = np.random.default_rng(seed)
        prob = random_problem(rng, random_noise=True)
        m = prob.channel_count
        alloc = Allocation(10 ** rng.uniform(-2, 1, m), 10 ** rng.uniform(-2, 1, m))
        t1, c1 = posterior_mse(prob.moments, prob.spec, alloc, "phi")
        t2, c2 = posterior_mse(prob.moments, prob.spec, alloc, "direct")
        assert t1 == pytest.approx(t2, rel=1e-8)
        np.testing.assert_allclose(c1, c2, rtol=1e-8, atol=1e-8 * np.max(np.abs(c2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.booleans())
    def test_monotone_in_each_coordinate(self, seed, bump_alpha):
        rng = np.random.default_rng(seed)
        prob = random_problem(rng)
        m = prob.channel_count
        alpha, beta = 10 ** rng.uniform(-2, 1, m), 10 ** rng.uniform(-2, 1, m)
        j = int(rng.integers(m))
        base = prob.mse(Allocation(alpha, beta))
        if bump_alpha:
            alpha = alpha.copy()
            alpha[j] *= 1.5
        else:
            beta = beta.copy()
            beta[j] *= 1.5
        assert prob.mse(Allocation(alpha, beta)) <= base + 1e-12 * abs(base)


class TestAllocation:
    def test_read_only(self):
        a = Allocation([1.0, 2.0], [3.0, 4.0])
        with pytest.raises(ValueError):
            a.alpha[0] = 5.0

    def test_rejects_negative(self):
        with pytest.raises(InvalidInputError):
            Allocation([-1.0], [1.0])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            Allocation([1.0, 2.0], [1.0])

    def test_feasibility(self):
        a = Allocation([0.5, 0.25], [1.0, 1.0])
        assert a.sensor_power([1.0, 2.0]) == 1.0
        assert a.feasible(Budgets(1.0, 2.0), [1.0, 2.0])
        assert not a.feasible(Budgets(0.9, 2.0), [1.0, 2.0])

    def test_budgets_positive(self):
        with pytest.raises(InvalidInputError):
            Budgets(0.0, 1.0)


def test_spec_links_round_trip():
    links = [ChannelLink(1.0, 2.0, 0.5, 3.0), ChannelLink(4.0, 5.0)]
    spec = RelaySpec.from_links(links, [1.0, 2.0])
    assert spec.links == links
    assert spec.channel_count == 2


def test_problem_channel_count_mismatch():
    mom = observation_moments(GaussianBelief([0.0], [[1.0]]), SensorNetwork([[1.0]], [[1.0]]))
    with pytest.raises(InvalidInputError):
        RelayProblem(mom, RelaySpec(1.0, 1.0, 1.0, 1.0, [1.0, 1.0]))

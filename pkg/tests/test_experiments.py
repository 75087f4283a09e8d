import math

import numpy as np
import pytest

from relaypower import experiments as ex
from relaypower.errors import InvalidInputError, ScenarioError
from relaypower.relay import Allocation, posterior_mse
from relaypower.sca import uniform_allocation
from relaypower.relay import Budgets

from test_sca import make_problem


class TestChannelGain:
    def test_reference_value(self):
        expected = 1e7 * (0.125 / (4 * math.pi * 200)) ** 2
        assert ex.channel_gain(200, 0.125, 1e7) == pytest.approx(expected, rel=1e-15)
        assert ex.channel_gain(200, 0.125, 1e7) == pytest.approx(2.474e-2, rel=1e-3)

    def test_scaling(self):
        h = ex.channel_gain(150.0, 0.1, 1e6)
        assert ex.channel_gain(150.0, 0.1, 2e6) == pytest.approx(2 * h)
        assert ex.channel_gain(300.0, 0.1, 1e6) == pytest.approx(h / 4)

    def test_vectorised(self):
        np.testing.assert_allclose(ex.channel_gain(np.array([100.0, 200.0]), 0.1, 1.0),
                                   [ex.channel_gain(100.0, 0.1, 1.0), ex.channel_gain(200.0, 0.1, 1.0)])

    @pytest.mark.parametrize("args", [(0.0, 0.1, 1.0), (1.0, -0.1, 1.0), (1.0, 0.1, 0.0)])
    def test_nonpositive(self, args):
        with pytest.raises(InvalidInputError):
            ex.channel_gain(*args)


class TestConfig:
    def test_defaults(self):
        cfg = ex.ScenarioConfig()
        assert cfg.p_r == 5.0
        assert cfg.p_t_grid == tuple(round(0.1 * k, 1) for k in range(1, 11))
        assert cfg.scalar_gains[0] == 1.00 and cfg.scalar_gains[-1] == 2.0
        assert cfg.trials == 10_000

    def test_vector_defaults(self):
        cfg = ex.ScenarioConfig(kind="vector")
        assert cfg.prior_mean == (30.0, 30.0, 10.0)
        np.testing.assert_array_equal(cfg.prior.cov, np.diag([4.0, 4.0, 1.0]))

    def test_round_trip(self):
        cfg = ex.ScenarioConfig(kind="vector", trials=3, seed=9)
        assert ex.ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [dict(kind="planar"), dict(snr=-1.0), dict(p_t_grid=[0.2, 0.1]),
                                     dict(trials=0), dict(scalar_gains=[1.0, 2.0]),
                                     dict(one_hop_distance=100.0), dict(placement="grid")])
    def test_invalid(self, bad):
        with pytest.raises(InvalidInputError):
            ex.ScenarioConfig(**bad)

    def test_unknown_key(self):
        with pytest.raises(InvalidInputError, match="unknown"):
            ex.ScenarioConfig.from_dict({"snr_db": 70})


class TestScalarScenario:
    def test_gain_vector(self):
        prob = ex.build_scalar_scenario(ex.ScenarioConfig())
        g = prob.network.g[:, 0]
        assert g[0] == 1.00 and g[-1] == 2.0
        assert prob.channel_count == 10
        np.testing.assert_array_equal(prob.network.r_n, np.eye(10))
        np.testing.assert_array_equal(prob.spec.sigma_sr, 1.0)
        np.testing.assert_array_equal(prob.spec.sigma_rd, 1.0)

    def test_nominal_links(self):
        cfg = ex.ScenarioConfig()
        prob = ex.build_scalar_scenario(cfg)
        np.testing.assert_allclose(prob.spec.h_sr, ex.channel_gain(200.0, cfg.wavelength, cfg.snr))
        np.testing.assert_allclose(prob.direct_gain, ex.channel_gain(400.0, cfg.wavelength, cfg.snr))

    def test_wrong_kind(self):
        with pytest.raises(InvalidInputError):
            ex.build_scalar_scenario(ex.ScenarioConfig(kind="vector"))


class TestVectorScenario:
    def test_thirty_rows(self):
        cfg = ex.ScenarioConfig(kind="vector")
        prob = ex.build_problem(cfg, ex.trial_rng(cfg, 0))
        assert prob.network.g.shape == (30, 3)
        assert prob.channel_count == 30
        # the three rows of a sensor share its links
        h = prob.spec.h_sr.reshape(10, 3)
        np.testing.assert_array_equal(h, h[:, :1].repeat(3, axis=1))

    def test_rows_are_jacobians(self):
        cfg = ex.ScenarioConfig(kind="vector")
        placement = ex.place_sensors(np.random.default_rng(3), cfg)
        prob = ex.build_vector_scenario(cfg, placement)
        from relaypower.oracle import fd_jacobian
        m_x = np.array(cfg.prior_mean)
        for j, s in enumerate(placement.sensor_coords):
            np.testing.assert_allclose(prob.network.g[3 * j:3 * j + 3],
                                       fd_jacobian(lambda v: ex.measurement(v, s), m_x), atol=1e-6)

    def test_range_row(self):
        jac = ex.measurement_jacobian([5.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(jac[0], [1.0, 0.0, 0.0])

    def test_azimuth_uses_x_offset(self):
        # tan of the bearing: dy / dx
        assert ex.measurement([3.0, 4.0, 0.0], [1.0, 1.0, 0.0])[1] == pytest.approx(3.0 / 2.0)

    def test_singular_sensor(self):
        with pytest.raises(ScenarioError, match="sensor 4"):
            ex.measurement_jacobian([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 4)
        with pytest.raises(ScenarioError):
            ex.measurement_jacobian([1.0, 2.0, 3.0], [1.0, 0.0, 0.0])
        with pytest.raises(ScenarioError):
            ex.measurement_jacobian([1.0, 2.0, 3.0], [1.0, 2.0, 0.0])


class TestPlacement:
    def test_deterministic(self):
        cfg = ex.ScenarioConfig(kind="vector")
        p1 = ex.place_sensors(np.random.default_rng(5), cfg)
        p2 = ex.place_sensors(np.random.default_rng(5), cfg)
        np.testing.assert_array_equal(p1.sensor_coords, p2.sensor_coords)

    def test_permutation_keeps_distance_multiset(self):
        cfg = ex.ScenarioConfig(placement="permutation", seed=4)
        base = np.sort(ex.place_sensors(ex.trial_rng(cfg, 0), cfg).sensor_relay_distances)
        orders = set()
        for t in range(1, 6):
            p = ex.place_sensors(ex.trial_rng(cfg, t), cfg)
            np.testing.assert_allclose(np.sort(p.sensor_relay_distances), base)
            orders.add(tuple(np.argsort(p.sensor_relay_distances)))
        assert len(orders) > 1

    @pytest.mark.parametrize("kind", ["scalar", "vector"])
    def test_default_distances(self, kind):
        cfg = ex.ScenarioConfig(kind=kind)
        p = ex.place_sensors(np.random.default_rng(6), cfg)
        r = cfg.placement_radius
        assert np.all(np.abs(p.sensor_relay_distances - 200.0) <= r)
        assert np.all(np.abs(p.sensor_fc_distances - 400.0) <= r)
        assert p.relay_fc_distance == pytest.approx(200.0)
        site = np.array(cfg.prior_mean) if kind == "vector" else np.zeros(3)
        np.testing.assert_allclose(np.linalg.norm(p.sensor_coords - site, axis=1), r)

    def test_rejects_coincident_relay(self):
        with pytest.raises(InvalidInputError):
            ex.Placement(np.zeros((2, 3)), np.zeros(3), np.ones(3))


class TestSweep:
    def test_result_count(self):
        cfg = ex.ScenarioConfig(trials=1)
        res = ex.run_sweep(cfg)
        assert len(res.results) == 40
        assert len(res.curve.points) == 40

    def test_paired_dominance_and_monotone(self):
        cfg = ex.ScenarioConfig(trials=6, seed=3)
        res = ex.run_sweep(cfg)
        opt = res.matrix("two_hop_opt", cfg.p_t_grid)
        uni = res.matrix("two_hop_uniform", cfg.p_t_grid)
        assert np.all(opt <= uni)
        # a larger budget contains the smaller feasible set
        assert np.all(np.diff(opt, axis=1) <= 1e-9 * opt[:, 1:])

    def test_reproducible_and_worker_independent(self):
        cfg = ex.ScenarioConfig(trials=4, seed=11, kind="vector")
        a = ex.curve_csv(ex.run_sweep(cfg, ("two_hop_opt", "one_hop_uniform")).curve)
        b = ex.curve_csv(ex.run_sweep(cfg, ("two_hop_opt", "one_hop_uniform")).curve)
        c = ex.curve_csv(ex.run_sweep(cfg, ("two_hop_opt", "one_hop_uniform"), workers=2).curve)
        assert a == b == c

    def test_methods_share_realization(self):
        cfg = ex.ScenarioConfig(trials=1, p_t_grid=(0.5,))
        two = ex.run_trial(cfg, 0, ("two_hop_uniform",))[0].mse
        prob = ex.build_problem(cfg, ex.trial_rng(cfg, 0))
        assert two == prob.mse(uniform_allocation(prob.channel_powers, Budgets(0.5, 5.0)))

    def test_unknown_method(self):
        with pytest.raises(InvalidInputError):
            list(ex.iter_trials(ex.ScenarioConfig(trials=1), ("three_hop",)))

    def test_failed_trials_excluded(self):
        rs = [ex.TrialResult(0, 0.1, "two_hop_opt", 1.0, 3, True),
              ex.TrialResult(1, 0.1, "two_hop_opt", float("nan"), 0, False),
              ex.TrialResult(2, 0.1, "two_hop_opt", 3.0, 5, True)]
        curve = ex.aggregate(rs, (0.1,), ("two_hop_opt",))
        pt = curve.points[0]
        assert pt.mean_mse == 2.0 and pt.trials == 2
        assert pt.std_err == pytest.approx(1.0)
        assert pt.converged_fraction == pytest.approx(2 / 3)
        assert curve.excluded == {(0.1, "two_hop_opt"): [1]}

    def test_csv_format(self):
        curve = ex.aggregate([ex.TrialResult(0, 0.1, "one_hop_uniform", 0.25, 0, True)], (0.1,), ("one_hop_uniform",))
        assert ex.curve_csv(curve) == f"{ex.CSV_HEADER}\n0.1,one_hop_uniform,0.25,0.0,1,1.0\n"


class TestSimulation:
    def test_zero_allocation_gives_prior_trace(self):
        prob = make_problem([1.0, 1.5], 1.0, 1.0, c_x=2.0, m_x=0.5)
        mean, se = ex.simulate_realization(prob, Allocation([0, 0], [0, 0]), np.random.default_rng(0), 100_000)
        assert abs(mean - 2.0) <= 3 * se

    def test_scalar_unit_phi(self):
        prob = make_problem([1.0], 1.0, 1.0)
        t = (3 + math.sqrt(13)) / 2
        mean, se = ex.simulate_realization(prob, Allocation([t], [t]), np.random.default_rng(1), 200_000)
        assert abs(mean - 2 / 3) <= 3 * se

    def test_matches_analytic_without_network(self):
        prob = make_problem([1.2, 0.7, 1.9], [0.5, 2.0, 1.0], [1.0, 0.3, 4.0], m_x=1.0)
        bare = type(prob)(prob.moments, prob.spec)
        alloc = Allocation([0.2, 0.5, 0.1], [1.0, 2.0, 2.0])
        analytic, _ = posterior_mse(prob.moments, prob.spec, alloc)
        mean, se = ex.simulate_realization(bare, alloc, np.random.default_rng(2), 100_000)
        assert abs(mean - analytic) <= 3 * se

    def test_standard_error_scaling(self):
        prob = make_problem([1.0, 1.5], 1.0, 1.0)
        alloc = Allocation([0.3, 0.3], [2.0, 2.0])
        _, se1 = ex.simulate_realization(prob, alloc, np.random.default_rng(3), 10_000)
        _, se4 = ex.simulate_realization(prob, alloc, np.random.default_rng(4), 40_000)
        assert se1 / se4 == pytest.approx(2.0, rel=0.1)

    def test_bad_samples(self):
        prob = make_problem([1.0], 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            ex.simulate_realization(prob, Allocation([1.0], [1.0]), np.random.default_rng(0), 0)

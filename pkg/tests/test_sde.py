import numpy as np
import pytest

import mkvsim as mk
from mkvsim import (
    CoefficientSet,
    NoisePlan,
    TimeGrid,
    simulate_particle_system,
    simulate_truncated,
    solo_mkv_path,
    truncate_gaussian,
)
from mkvsim.sde import SimulationBlowupError


def brownian_coeffs(sigma=0.0, sigma0=0.0, drift=0.0):
    return CoefficientSet(
        1, 1,
        drift=lambda t, x, mu: drift,
        diffusion=lambda t, x, mu: sigma,
        common_diffusion=lambda t, mu: sigma0,
    )


class TestEulerScheme:
    def test_zero_coefficients_fixed_point(self):
        grid = TimeGrid(1.0, 25)
        plan = NoisePlan(1, 6, 25, 1)
        ens = simulate_particle_system(brownian_coeffs(), grid, 0.7, 6, plan, 0)
        assert np.all(ens.states == 0.7)

    def test_all_common_randomness_collapses_particles(self):
        # b=0, sigma=0, sigma0=1: every particle equals sqrt(h)*cumsum(Z0)
        grid = TimeGrid(1.0, 40)
        plan = NoisePlan(2, 3, 40, 1)
        ens = simulate_particle_system(brownian_coeffs(sigma0=1.0), grid, 0.0, 3, plan, 0)
        assert np.array_equal(ens.states[0], ens.states[1])
        assert np.array_equal(ens.states[1], ens.states[2])
        expected = np.concatenate([[0.0], np.cumsum(np.sqrt(grid.h) * plan.common_increments(0)[:, 0])])
        assert np.allclose(ens.states[0, :, 0], expected, rtol=0, atol=1e-15)

    def test_mean_reverting_drift_preserves_mean(self):
        # b = mean - x, no noise, heterogeneous start: empirical mean constant
        coeffs = CoefficientSet(
            1, 1,
            drift=lambda t, x, mu: mu.mean() - x,
            diffusion=lambda t, x, mu: 0.0,
            common_diffusion=lambda t, mu: 0.0,
        )
        grid = TimeGrid(1.0, 30)
        plan = NoisePlan(3, 4, 30, 1)
        init = np.array([-2.0, -1.0, 1.0, 2.0])
        ens = mk.simulate_with_increments(
            coeffs, grid, init,
            plan.idiosyncratic_block(0, 4), plan.common_increments(0))
        means = ens.states[:, :, 0].mean(axis=0)
        assert np.allclose(means, 0.0, atol=1e-14)

    def test_determinism_bit_identical(self):
        coeffs = mk.linear_meanfield()
        grid = TimeGrid(1.0, 16)
        plan = NoisePlan(11, 5, 16, 1)
        a = simulate_particle_system(coeffs, grid, 1.0, 5, plan, 2)
        b = simulate_particle_system(coeffs, grid, 1.0, 5, plan, 2)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.common_path, b.common_path)

    def test_coupling_two_systems_consume_identical_increments(self):
        grid = TimeGrid(1.0, 12)
        plan = NoisePlan(7, 4, 12, 1)
        a = simulate_particle_system(mk.linear_meanfield(), grid, 0.0, 4, plan, 1, debug=True)
        b = simulate_particle_system(mk.gbm(), grid, 1.0, 4, plan, 1, debug=True)
        assert a.debug_info["idio_digest"] == b.debug_info["idio_digest"]
        assert a.debug_info["common_digest"] == b.debug_info["common_digest"]

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_blowup_reports_step_and_particle(self):
        coeffs = CoefficientSet(
            1, 1,
            drift=lambda t, x, mu: np.where(np.arange(x.size) == 2, 1e308, 0.0) * x,
            diffusion=lambda t, x, mu: 0.0,
            common_diffusion=lambda t, mu: 0.0,
        )
        grid = TimeGrid(1.0, 5)
        plan = NoisePlan(0, 4, 5, 1)
        with pytest.raises(SimulationBlowupError) as err:
            simulate_particle_system(coeffs, grid, 1.0, 4, plan, 0)
        assert err.value.step == 2  # first step inflates, second overflows to inf
        assert err.value.particle == 2

    def test_plan_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            simulate_particle_system(brownian_coeffs(), TimeGrid(1.0, 10), 0.0, 2,
                                     NoisePlan(0, 2, 11, 1), 0)

    def test_matrix_mode_single_step_matches_manual_product(self, rng):
        d, q, n = 2, 3, 4
        sig = rng.standard_normal((d, q))
        sig0 = rng.standard_normal((d, q))
        bvec = rng.standard_normal(d)
        coeffs = CoefficientSet(
            d, q,
            drift=lambda t, x, mu: np.broadcast_to(bvec, x.shape),
            diffusion=lambda t, x, mu: np.broadcast_to(sig, (x.shape[0], d, q)),
            common_diffusion=lambda t, mu: sig0,
        )
        grid = TimeGrid(0.5, 1)
        plan = NoisePlan(5, n, 1, q)
        x0 = rng.standard_normal((n, d))
        ens = mk.simulate_with_increments(
            coeffs, grid, x0, plan.idiosyncratic_block(0, n), plan.common_increments(0))
        h = grid.h
        z = plan.idiosyncratic_block(0, n)[0]
        z0 = plan.common_increments(0)[0]
        for i in range(n):
            manual = x0[i] + h * bvec + np.sqrt(h) * (sig @ z[i]) + np.sqrt(h) * (sig0 @ z0)
            assert np.allclose(ens.states[i, 1], manual, rtol=1e-15)


class TestMeanConservation:
    def test_exchange_drift_mean_recursion_exact(self):
        # pairwise-difference drift: tracked mean equals the noise-only walk
        params = mk.CfsParams(a=3.0, n_banks=7, grid=TimeGrid(1.0, 50))
        plan = NoisePlan(13, 7, 50, 1)
        ens = mk.simulate_cfs(params, plan, 0)
        idio, common = params.constant_loadings
        h = params.grid.h
        z = plan.idiosyncratic_block(0, 7)[:, :, 0]
        z0 = plan.common_increments(0)[:, 0]
        walk = np.zeros(51)
        for m in range(50):
            walk[m + 1] = walk[m] + np.mean(np.sqrt(h) * idio * z[m] + np.sqrt(h) * common * z0[m])
        assert np.allclose(ens.mean_path[:, 0], walk, rtol=0, atol=1e-15)

    def test_tracked_mean_close_to_state_average(self):
        params = mk.CfsParams(a=10.0, n_banks=20, grid=TimeGrid(1.0, 100))
        plan = NoisePlan(17, 20, 100, 1)
        ens = mk.simulate_cfs(params, plan, 0)
        avg = ens.states[:, :, 0].mean(axis=0)
        assert np.max(np.abs(ens.mean_path[:, 0] - avg)) < 1e-12

    def test_cfs_mean_path_bit_identical_across_exchange_rate(self):
        grid = TimeGrid(1.0, 100)
        plan = NoisePlan(19, 10, 100, 1)
        paths = []
        for a in (1.0, 100.0):
            params = mk.CfsParams(a=a, n_banks=10, grid=grid)
            paths.append(mk.simulate_cfs(params, plan, 0).mean_path)
        assert np.array_equal(paths[0], paths[1])


class TestTruncation:
    def test_threshold_formula(self):
        assert truncate_gaussian(0.5, 0.01, 5.0) == 0.5
        assert truncate_gaussian(1.5, 0.01, 5.0) == 0.0
        assert truncate_gaussian(-1.0, 0.01, 5.0) == -1.0  # boundary included

    def test_rejects_nonpositive_lipschitz(self):
        with pytest.raises(ValueError):
            truncate_gaussian(1.0, 0.01, 0.0)
        with pytest.raises(ValueError):
            truncate_gaussian(1.0, 0.0, 1.0)

    def test_output_within_threshold(self, rng):
        z = rng.standard_normal(10000)
        h, lip = 1.0 / 64, 2.0
        c = 1.0 / (2.0 * np.sqrt(h) * lip)
        out = truncate_gaussian(z, h, lip)
        assert np.max(np.abs(out)) <= c

    def test_near_identity_when_threshold_large(self):
        # c >= 6 makes truncation a near-identity (P(|Z|>6) < 2e-9 per draw)
        coeffs = mk.linear_meanfield(kappa=0.4, sigma_scale=0.4, sigma0=0.2)
        grid = TimeGrid(1.0, 64)
        c = 1.0 / (2.0 * np.sqrt(grid.h) * coeffs.lip_x_diffusion)
        assert c >= 6.0
        plan = NoisePlan(23, 50, 64, 1)
        plain = simulate_particle_system(coeffs, grid, 0.0, 50, plan, 0)
        trunc = simulate_truncated(coeffs, grid, 0.0, 50, plan, 0)
        assert np.array_equal(plain.states, trunc.states)

    def test_truncated_increments_bounded(self):
        coeffs = mk.linear_meanfield(kappa=0.4, sigma_scale=2.0, sigma0=0.5)
        grid = TimeGrid(1.0, 64)
        plan = NoisePlan(29, 100, 64, 1)
        ens = simulate_truncated(coeffs, grid, 0.0, 100, plan, 0, debug=True)
        assert ens.debug_info["max_abs_truncated"] <= ens.debug_info["truncation_threshold"]
        assert ens.scheme == "truncated_euler"

    def test_constant_diffusion_rejected(self):
        # lip = 0 leaves the threshold undefined; plain Euler must be used
        coeffs = brownian_coeffs(sigma=1.0)
        with pytest.raises(ValueError):
            simulate_truncated(coeffs, TimeGrid(1.0, 16), 0.0, 4, NoisePlan(0, 4, 16, 1), 0)

    def test_multidimensional_rejected(self):
        coeffs = CoefficientSet(
            2, 2,
            drift=lambda t, x, mu: np.zeros_like(x),
            diffusion=lambda t, x, mu: np.zeros((x.shape[0], 2, 2)),
            common_diffusion=lambda t, mu: np.zeros((2, 2)),
            lip_x_diffusion=1.0,
        )
        with pytest.raises(ValueError):
            simulate_truncated(coeffs, TimeGrid(1.0, 16), 0.0, 4, NoisePlan(0, 4, 16, 2), 0)

    def test_large_step_rejected_with_drift_lipschitz(self):
        coeffs = mk.linear_meanfield(kappa=4.0, sigma_scale=1.0)
        # h = 1/4 >= 1/(2*4): rejected
        with pytest.raises(ValueError):
            simulate_truncated(coeffs, TimeGrid(1.0, 4), 0.0, 4, NoisePlan(0, 4, 4, 1), 0)
        # finer grid passes
        simulate_truncated(coeffs, TimeGrid(1.0, 16), 0.0, 4, NoisePlan(0, 4, 16, 1), 0)


class TestSoloPath:
    def test_measure_free_coefficients_independent_of_proxy(self):
        coeffs = mk.gbm(0.1, 0.2)
        grid = TimeGrid(1.0, 20)
        plan = NoisePlan(37, 64, 20, 1)
        p2, _ = solo_mkv_path(coeffs, grid, 1.0, plan, 0, proxy_n=2)
        p64, _ = solo_mkv_path(coeffs, grid, 1.0, plan, 0, proxy_n=64)
        assert np.array_equal(p2, p64)

    def test_reduces_to_gaussian_random_walk(self):
        coeffs = brownian_coeffs(sigma=1.0)
        grid = TimeGrid(1.0, 32)
        plan = NoisePlan(41, 8, 32, 1)
        path, _ = solo_mkv_path(coeffs, grid, 0.0, plan, 0, proxy_n=8)
        expected = np.concatenate([[0.0], np.cumsum(np.sqrt(grid.h) * plan.particle_increments(0, 0)[:, 0])])
        assert np.allclose(path[:, 0], expected, rtol=0, atol=1e-15)

    def test_proxy_bias_shrinks(self):
        # sup-distance to a reference proxy level falls with the proxy size
        grid = TimeGrid(1.0, 16)
        levels = (2, 64)
        ref = 2048
        gaps = {lvl: [] for lvl in levels}
        for seed in range(20):
            plan = NoisePlan(1000 + seed, ref, 16, 1)
            params = mk.CfsParams(a=1.0, n_banks=ref, grid=grid)
            coeffs = params.coefficients()
            ref_path, _ = solo_mkv_path(coeffs, grid, None, plan, 0, proxy_n=ref)
            for lvl in levels:
                path, _ = solo_mkv_path(coeffs, grid, None, plan, 0, proxy_n=lvl)
                gaps[lvl].append(np.max(np.abs(path - ref_path)))
        assert np.median(gaps[64]) < np.median(gaps[2])

    def test_requires_at_least_two_proxies(self):
        with pytest.raises(ValueError):
            solo_mkv_path(mk.gbm(), TimeGrid(1.0, 4), 1.0, NoisePlan(0, 4, 4, 1), 0, proxy_n=1)


class TestExport:
    def test_csv_round_trip_values(self, tmp_path):
        coeffs = mk.linear_meanfield()
        grid = TimeGrid(1.0, 6)
        plan = NoisePlan(3, 3, 6, 1)
        ens = simulate_particle_system(coeffs, grid, 0.5, 3, plan, 4)
        path = tmp_path / "ens.csv"
        mk.write_ensemble_csv(path, ens)
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        assert rows.shape == (3 * 7, 5)
        for row in rows:
            rep, particle, step, t, x = row
            assert rep == 4
            assert x == ens.states[int(particle), int(step), 0]  # repr round-trips

    def test_binary_round_trip(self, tmp_path):
        coeffs = mk.linear_meanfield()
        grid = TimeGrid(2.0, 5)
        plan = NoisePlan(8, 4, 5, 1)
        ensembles = [simulate_particle_system(coeffs, grid, 1.0, 4, plan, r) for r in (0, 1)]
        path = tmp_path / "ens.bin"
        mk.write_ensemble_binary(path, ensembles)
        back = mk.read_ensemble_binary(path)
        assert len(back) == 2
        for orig, loaded in zip(ensembles, back):
            assert np.array_equal(orig.states, loaded.states)
            assert np.array_equal(orig.common_path, loaded.common_path)
            assert loaded.grid.horizon == 2.0
            assert loaded.scheme == "euler"
            assert loaded.replication == orig.replication

    def test_binary_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ValueError):
            mk.read_ensemble_binary(path)

    def test_measure_handle_is_read_only(self):
        # a coefficient cannot mutate the cloud behind the measure handle
        def vandal_drift(t, x, mu):
            mu.samples[0] = 99.0
            return 0.0

        coeffs = CoefficientSet(1, 1, vandal_drift, lambda t, x, mu: 0.0,
                                lambda t, mu: 0.0)
        with pytest.raises(ValueError):
            simulate_particle_system(coeffs, TimeGrid(1.0, 2), 0.0, 3,
                                     NoisePlan(0, 3, 2, 1), 0)

    def test_measure_at_node(self):
        coeffs = mk.linear_meanfield()
        grid = TimeGrid(1.0, 6)
        plan = NoisePlan(3, 10, 6, 1)
        ens = simulate_particle_system(coeffs, grid, 0.5, 10, plan, 0)
        m = ens.measure_at(3)
        assert m.n == 10
        assert np.array_equal(m.samples, np.sort(ens.states[:, 3, 0]))

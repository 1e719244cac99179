import numpy as np
import pytest
from scipy.stats import norm

import mkvsim as mk
from mkvsim import (
    CoefficientSet,
    NoisePlan,
    ProbeFamily,
    SystemSpec,
    TimeGrid,
    block_matrix_order_check,
    check_conditional,
    check_cv_1d,
    check_icv_1d,
    functional_probe,
    matrix_partial_order,
)
from conftest import normal_stop_loss, normal_tvar
from mkvsim.order import default_tvar_levels


class TestCvCheck:
    def test_dirac_below_symmetric_pair(self):
        # delta_0 vs (delta_-1 + delta_+1)/2, balanced sample: Jensen
        mu = np.zeros(1000)
        nu = np.tile([-1.0, 1.0], 500)
        report = check_cv_1d(mu, nu, seed=1)
        assert report.verdict == "consistent"
        assert report.mean_gap == 0.0

    def test_identical_samples_zero_margins(self, rng):
        x = rng.standard_normal(500)
        report = check_cv_1d(x, x.copy(), paired=True, seed=2)
        assert report.verdict == "consistent"
        assert report.n_violations == 0
        assert all(p.margin == 0.0 for p in report.probes)

    def test_gaussian_scale_family_detected(self, rng):
        # analytic oracle first: TVaR of N(0, s) is s*phi(Phi^-1(p))/(1-p),
        # so the curve for s=2 dominates the one for s=1 at every level
        levels = default_tvar_levels()
        gap = np.array([normal_tvar(0, 2, p) - normal_tvar(0, 1, p) for p in levels])
        assert np.all(gap > 0)
        x = 2.0 * rng.standard_normal(100_000)
        y = rng.standard_normal(100_000)
        report = check_cv_1d(x, y, seed=3)
        assert report.verdict == "violated"
        # reversal shows up at the upper tail levels
        upper = [p for p in report.probes if p.probe in ("tvar@0.9", "tvar@0.95", "tvar@0.99")]
        assert all(p.violated for p in upper)
        assert check_cv_1d(y, x, seed=3).verdict == "consistent"

    def test_verdict_violated_iff_violations(self, rng):
        for seed in range(5):
            r = np.random.default_rng(seed)
            x = r.standard_normal(400)
            y = r.standard_normal(400) * r.uniform(0.5, 2.0)
            report = check_cv_1d(x, y, seed=seed)
            assert (report.verdict == "violated") == (report.n_violations > 0)

    def test_mean_shift_violates_cv(self, rng):
        x = rng.standard_normal(20_000)
        report = check_cv_1d(x, x + 0.5, paired=True, seed=4)
        assert report.verdict == "violated"
        assert any(p.probe == "mean_ge" and p.violated for p in report.probes)

    def test_mean_preserving_atom_split_consistent(self, rng):
        # splitting every atom x into x +- eps is a mean-preserving spread:
        # the split TVaR dominates pointwise, with no MC ambiguity
        x = rng.standard_normal(300)
        for eps in (1e-6, 0.1, 3.0):
            split = np.concatenate([x - eps, x + eps])
            doubled = np.concatenate([x, x])
            report = check_cv_1d(doubled, split, seed=5)
            assert report.verdict == "consistent"
            assert abs(report.mean_gap) < 1e-12

    def test_empty_samples_rejected(self):
        with pytest.raises(ValueError):
            check_cv_1d([], [1.0])

    def test_paired_requires_equal_counts(self, rng):
        with pytest.raises(ValueError):
            check_cv_1d(rng.standard_normal(5), rng.standard_normal(6), paired=True)

    def test_report_serialization(self, rng):
        import json
        x = rng.standard_normal(200)
        report = check_cv_1d(x, x + 0.0, paired=True, seed=6)
        doc = json.loads(report.to_json())
        assert doc["kind"] == "cv"
        assert doc["verdict"] == "consistent"
        assert len(doc["probes"]) == len(report.probes)
        assert {"probe", "stat_mu", "stat_nu", "stderr", "margin", "violated"} <= set(doc["probes"][0])
        text = report.to_text()
        assert "CONSISTENT" in text and "tvar@0.5" in text


class TestIcvCheck:
    def test_upward_shift_consistent(self, rng):
        x = rng.standard_normal(5000)
        report = check_icv_1d(x, x + 1.0, paired=True, seed=1)
        assert report.verdict == "consistent"

    def test_downward_shift_violated_at_low_strikes(self, rng):
        x = rng.standard_normal(5000)
        report = check_icv_1d(x + 1.0, x, paired=True, seed=1)
        assert report.verdict == "violated"
        lowest = min((p for p in report.probes), key=lambda p: float(p.probe.split("@")[1]))
        assert lowest.violated

    def test_gaussian_location_scale_ordered(self, rng):
        # verify the ordering analytically over the strike range first:
        # E(X-K)+ = sd*phi(d) + (m-K)*Phi(d), d = (m-K)/sd
        strikes = np.linspace(-6, 7, 41)
        analytic_gap = np.array([normal_stop_loss(0.5, 1.5, k) - normal_stop_loss(0.0, 1.0, k)
                                 for k in strikes])
        assert np.all(analytic_gap > 0)
        x = rng.standard_normal(100_000)
        y = 0.5 + 1.5 * rng.standard_normal(100_000)
        report = check_icv_1d(x, y, seed=2)
        assert report.verdict == "consistent"

    def test_translation_violation_scales_with_resolution(self, rng):
        # downward shifts beyond the statistical resolution are flagged;
        # paired sampling makes the resolution essentially zero
        x = rng.standard_normal(2000)
        assert check_icv_1d(x, x - 1e-6, paired=True, seed=3).verdict == "violated"
        assert check_icv_1d(x, x + 0.0, paired=True, seed=3).verdict == "consistent"

    def test_custom_probe_family(self, rng):
        probes = ProbeFamily(kind="custom_convex",
                             probes=[("square", lambda rows: rows**2, "p2")])
        x = rng.standard_normal(20_000)
        y = 2.0 * rng.standard_normal(20_000)
        report = check_icv_1d(x, y, probes=probes, seed=4)
        assert report.probes[0].probe == "square"
        assert report.verdict == "consistent"
        assert check_icv_1d(y, x, probes=probes, seed=4).verdict == "violated"

    def test_probe_family_validation(self):
        with pytest.raises(ValueError):
            ProbeFamily(kind="tvar_grid", levels=[0.0, 0.5])
        with pytest.raises(ValueError):
            ProbeFamily(kind="bogus")
        with pytest.raises(ValueError):
            ProbeFamily(kind="custom_convex")


def constant_vol_system(sigma):
    return SystemSpec(CoefficientSet(
        1, 1,
        drift=lambda t, x, mu: 0.0,
        diffusion=lambda t, x, mu: sigma,
        common_diffusion=lambda t, mu: 1.0,
    ))


class TestConditional:
    def test_identical_systems_zero_margins(self):
        grid = TimeGrid(1.0, 16)
        sys_x = constant_vol_system(1.0)
        sys_y = constant_vol_system(1.0)
        report = check_conditional(sys_x, sys_y, grid, n_common=8, n_particles=200,
                                   master_seed=5)
        assert report.verdict == "consistent"
        assert report.extras["n_violating_paths"] == 0
        for path_report in report.per_path:
            assert path_report.verdict == "consistent"
            assert all(p.margin == 0.0 for p in path_report.probes)

    def test_dominated_volatility_consistent_per_path(self):
        # conditionally on the common path, laws are N(B0_T, T) vs N(B0_T, 4T)
        grid = TimeGrid(1.0, 16)
        report = check_conditional(constant_vol_system(1.0), constant_vol_system(2.0),
                                   grid, n_common=16, n_particles=400, master_seed=6)
        assert report.verdict == "consistent"
        assert report.extras["n_violating_paths"] == 0

    def test_reversed_volatility_violated(self):
        grid = TimeGrid(1.0, 16)
        report = check_conditional(constant_vol_system(1.0), constant_vol_system(0.5),
                                   grid, n_common=16, n_particles=400, master_seed=6)
        assert report.verdict == "violated"
        assert report.extras["n_violating_paths"] > report.extras["false_positive_budget"]
        assert report.n_violations > 0

    def test_conditional_implies_pooled_unconditional(self):
        # pool the per-path terminal samples: the unconditional laws are
        # N(0, 2T) vs N(0, 5T), still convex-ordered
        grid = TimeGrid(1.0, 16)
        plan = NoisePlan(7, 400, 16, 1)
        xs, ys = [], []
        for rep in range(16):
            ens_x = mk.simulate_particle_system(constant_vol_system(1.0).coeffs, grid,
                                                None, 400, plan, rep)
            ens_y = mk.simulate_particle_system(constant_vol_system(2.0).coeffs, grid,
                                                None, 400, plan, rep)
            xs.append(ens_x.terminal_samples())
            ys.append(ens_y.terminal_samples())
        pooled = check_cv_1d(np.concatenate(xs), np.concatenate(ys), paired=True, seed=8)
        assert pooled.verdict == "consistent"

    def test_intermediate_nodes(self):
        grid = TimeGrid(1.0, 16)
        report = check_conditional(constant_vol_system(1.0), constant_vol_system(2.0),
                                   grid, n_common=4, n_particles=200, master_seed=9,
                                   nodes=[8, 16])
        assert report.verdict == "consistent"
        labels = {p.probe.split("|")[0] for p in report.per_path[0].probes}
        assert labels == {"t=0.5", "t=1"}

    def test_dimension_mismatch_rejected(self):
        grid = TimeGrid(1.0, 4)
        two_d = SystemSpec(CoefficientSet(
            2, 2,
            drift=lambda t, x, mu: np.zeros_like(x),
            diffusion=lambda t, x, mu: np.zeros((x.shape[0], 2, 2)),
            common_diffusion=lambda t, mu: np.zeros((2, 2)),
        ))
        with pytest.raises(ValueError):
            check_conditional(two_d, constant_vol_system(1.0), grid)


class TestFunctionalProbes:
    def test_zero_paths(self):
        grid = TimeGrid(1.0, 8)
        plan = NoisePlan(0, 5, 8, 1)
        ens = mk.simulate_particle_system(constant_vol_system(0.0).coeffs, grid, None,
                                          5, plan, 0)
        # common noise still moves the paths; kill it too
        coeffs = CoefficientSet(1, 1, lambda t, x, mu: 0.0, lambda t, x, mu: 0.0,
                                lambda t, mu: 0.0)
        ens = mk.simulate_particle_system(coeffs, grid, None, 5, plan, 0)
        mean, se = functional_probe(ens, "sup_norm")
        assert mean == 0.0 and se == 0.0

    def test_terminal_value_martingale(self):
        coeffs = CoefficientSet(1, 1, lambda t, x, mu: 0.0, lambda t, x, mu: 1.0,
                                lambda t, mu: 0.0)
        grid = TimeGrid(1.0, 64)
        plan = NoisePlan(21, 4000, 64, 1)
        ens = mk.simulate_particle_system(coeffs, grid, None, 4000, plan, 0)
        mean, se = functional_probe(ens, "terminal")
        assert abs(mean) <= 3.0 * se

    def test_brownian_running_max_reflection_principle(self):
        # E[max_{t<=T} W_t] = sqrt(2T/pi); discrete monitoring biases the
        # estimate low by ~0.58*sqrt(h), so the grid is fine enough to
        # keep that bias well under the MC error
        coeffs = CoefficientSet(1, 1, lambda t, x, mu: 0.0, lambda t, x, mu: 1.0,
                                lambda t, mu: 0.0)
        grid = TimeGrid(1.0, 8192)
        plan = NoisePlan(22, 500, 8192, 1)
        ens = mk.simulate_particle_system(coeffs, grid, None, 500, plan, 0)
        mean, se = functional_probe(ens, "running_max")
        assert abs(mean - np.sqrt(2.0 / np.pi)) <= 3.0 * se

    def test_custom_functional_matches_builtin(self):
        grid = TimeGrid(1.0, 32)
        plan = NoisePlan(23, 50, 32, 1)
        ens = mk.simulate_particle_system(constant_vol_system(1.0).coeffs, grid, None,
                                          50, plan, 0)
        mean_builtin, se_builtin = functional_probe(ens, "running_max")
        mean_custom, se_custom = functional_probe(
            ens, lambda path: float(np.max(path(path.grid.nodes))))
        assert mean_custom == pytest.approx(mean_builtin, rel=1e-14)
        assert se_custom == pytest.approx(se_builtin, rel=1e-14)

    def test_shortfall_against_dense_quadrature(self):
        grid = TimeGrid(1.0, 16)
        plan = NoisePlan(24, 10, 16, 1)
        ens = mk.simulate_particle_system(constant_vol_system(1.0).coeffs, grid, None,
                                          10, plan, 0)
        level = 0.4
        mean, _ = functional_probe(ens, "barrier_shortfall", level=level)
        ts = np.linspace(0.0, 1.0, 100001)
        dense = []
        for i in range(10):
            path = mk.interpolate_affine(ens.states[i, :, 0], grid)
            dense.append(np.trapezoid(np.maximum(level - path(ts), 0.0), ts))
        assert mean == pytest.approx(np.mean(dense), abs=1e-8)

    def test_nonfinite_functional_rejected(self):
        grid = TimeGrid(1.0, 4)
        plan = NoisePlan(25, 3, 4, 1)
        ens = mk.simulate_particle_system(constant_vol_system(1.0).coeffs, grid, None,
                                          3, plan, 0)
        with pytest.raises(ValueError):
            functional_probe(ens, lambda path: np.inf)


class TestMatrixOrder:
    def test_zero_below_anything(self, rng):
        for _ in range(10):
            b = rng.standard_normal((3, 2))
            assert matrix_partial_order(np.zeros((3, 2)), b)

    def test_scaled_identity(self):
        assert matrix_partial_order(np.eye(2), 2.0 * np.eye(2))
        assert not matrix_partial_order(2.0 * np.eye(2), np.eye(2))

    def test_incomparable_diagonals(self):
        # S = diag(-4, 4) has eigenvalues of both signs
        assert not matrix_partial_order(np.diag([2.0, 0.0]), np.diag([0.0, 2.0]))

    def test_reflexive(self, rng):
        for _ in range(20):
            a = rng.standard_normal((3, 3))
            assert matrix_partial_order(a, a)

    def test_transitive_on_random_chains(self, rng):
        for _ in range(50):
            d = int(rng.integers(1, 4))
            a = rng.standard_normal((d, d))
            w1 = rng.standard_normal((d, d)) * 0.5
            w2 = rng.standard_normal((d, d)) * 0.5
            b = np.linalg.cholesky(a @ a.T + w1 @ w1.T + 1e-12 * np.eye(d))
            c = np.linalg.cholesky(b @ b.T + w2 @ w2.T + 1e-12 * np.eye(d))
            assert matrix_partial_order(a, b)
            assert matrix_partial_order(b, c)
            assert matrix_partial_order(a, c)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matrix_partial_order(np.eye(2), np.eye(3))


class TestBlockMatrixOrder:
    def test_scalar_example(self):
        # N=1, d=1: S = (4+1) - (1+0.25) = 3.75 > 0
        assert block_matrix_order_check([[[1.0]]], [[[2.0]]], 0.5, 1.0)

    def test_all_zero_blocks(self):
        zero = [np.zeros((2, 2))] * 3
        assert block_matrix_order_check(zero, zero, 0.0, 0.0)

    def test_common_loading_precondition(self):
        with pytest.raises(ValueError):
            block_matrix_order_check([[[1.0]]], [[[2.0]]], 1.0, 0.5)

    def test_unordered_blocks_rejected_distinctly(self):
        with pytest.raises(ValueError, match="block 0"):
            block_matrix_order_check([[[2.0]]], [[[1.0]]], 0.0, 0.0)

    def test_random_ordered_instances(self, rng):
        # the assembled coupled-system matrices inherit the blockwise order
        hits = 0
        for _ in range(100):
            n = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            a_blocks, b_blocks = [], []
            for _ in range(n):
                a = rng.standard_normal((d, d))
                w = rng.standard_normal((d, d)) * rng.uniform(0.0, 1.0)
                b = np.linalg.cholesky(a @ a.T + w @ w.T + 1e-12 * np.eye(d))
                a_blocks.append(a)
                b_blocks.append(b)
            theta0 = rng.uniform(0.0, 2.0)
            sigma0 = rng.uniform(-theta0, theta0)
            hits += block_matrix_order_check(a_blocks, b_blocks, sigma0, theta0)
        assert hits == 100

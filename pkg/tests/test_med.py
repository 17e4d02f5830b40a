import math

import numpy as np
import pytest

from medbound.lattice import (
    LatticeSpec,
    ModelSpec,
    ti_chain_geometry,
    finite_geometry,
    total_hamiltonian,
)
from medbound.med import (
    ClusterVariables,
    SolverConfig,
    exponential_value_and_grad,
    finite_problem,
    free_energy_gradient,
    ground_energy_lower_bound,
    markov_free_energy,
    minimize_finite,
    minimize_ti,
    multi_patch_minimize,
    multi_patch_problem,
    solve,
    temperature_sweep,
    ti_problem,
)
from medbound.opalg import (
    DensityMatrix,
    SiteSpace,
    embed_mat,
    entropy_mat,
    ptrace_mat,
    trace_product,
)
from medbound.oracle import exact_free_energy, gibbs_state, ising_transfer_free_energy

LN2 = math.log(2.0)
HEIS = ModelSpec("heisenberg")
ISING = ModelSpec("classical_ising")

TIGHT = SolverConfig(tol_gradient=1e-7, tol_constraint=1e-8, max_inner=3000)


def ti_vars(problem, mat):
    key = problem.variables[0].key
    space = SiteSpace(problem.variables[0].labels, problem.variables[0].dims)
    return ClusterVariables(states={key: DensityMatrix(space, mat)},
                            constraints=problem.constraints)


def gibbs_chain_marginals(n, model, T, geo):
    h = total_hamiltonian(geo.terms, geo.sites)
    rho = gibbs_state(h, T)
    states = {}
    for k in geo.sites:
        labels = geo.cluster_labels(k)
        red = ptrace_mat(rho.mat, rho.space.dims, rho.space.axes(labels))
        states[k] = DensityMatrix(SiteSpace(labels), red)
    return rho, states


class TestMarkovFreeEnergy:
    def test_maximally_mixed_ti_cluster(self):
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        mixed = ti_vars(prob, np.eye(8) / 8)
        for t in (0.3, 1.0, 4.0):
            assert abs(markov_free_energy(mixed, prob, t) + t * LN2) <= 1e-12

    def test_t_zero_is_cluster_energy(self, rng):
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        from medbound.opalg import random_density
        rho = random_density(SiteSpace(prob.variables[0].labels), rng)
        v = ti_vars(prob, rho.mat)
        e = trace_product(rho.mat, prob.variables[0].ham)
        assert abs(markov_free_energy(v, prob, 0.0) - e) <= 1e-12

    def test_global_gibbs_cross_check(self):
        # shield-local value from cluster marginals equals E - T * sum of
        # conditional entropies computed directly from the global state
        t = 0.9
        geo = finite_geometry(LatticeSpec("chain", 6), HEIS, radius=2)
        prob = finite_problem(geo)
        rho, states = gibbs_chain_marginals(6, HEIS, t, geo)
        variables = ClusterVariables(states=states, constraints=prob.constraints)
        val = markov_free_energy(variables, prob, t)

        h = total_hamiltonian(geo.terms, geo.sites)
        e = trace_product(rho.mat, h)
        s_m = 0.0
        dims = rho.space.dims
        for k in geo.sites:
            cluster = geo.cluster_labels(k)
            shield = cluster[:-1]
            s_c = entropy_mat(ptrace_mat(rho.mat, dims, rho.space.axes(cluster)))
            s_sh = entropy_mat(ptrace_mat(rho.mat, dims, rho.space.axes(shield))) if shield else 0.0
            s_m += s_c - s_sh
        assert abs(val - (e - t * s_m)) <= 1e-10


class TestGradient:
    def test_finite_differences(self, rng):
        geo = ti_chain_geometry(HEIS, 1)
        prob = ti_problem(geo)
        d = prob.variables[0].dim
        key = prob.variables[0].key
        for _ in range(5):
            g = rng.standard_normal((d, d))
            g = 0.5 * (g + g.T)
            value, grads = exponential_value_and_grad({key: g}, prob, 0.8)
            direction = rng.standard_normal((d, d))
            direction = 0.5 * (direction + direction.T)
            eps = 1e-5
            fp, _ = exponential_value_and_grad({key: g + eps * direction}, prob, 0.8)
            fm, _ = exponential_value_and_grad({key: g - eps * direction}, prob, 0.8)
            numeric = (fp - fm) / (2 * eps)
            analytic = trace_product(grads[key], direction)
            assert abs(numeric - analytic) <= 1e-5 * max(1.0, abs(numeric))

    def test_vanishes_at_gibbs_single_cluster(self):
        # one cluster, no consistency constraints: the exact optimum is the
        # Gibbs state of the cluster Hamiltonian
        geo = ti_chain_geometry(HEIS, 1)
        t = 0.7
        from medbound.med import MedProblem, VarSpec
        var = VarSpec(key="c", labels=geo.labels, dims=geo.dims, ham=geo.ham,
                      shield_axes=())
        prob = MedProblem(variables=(var,), constraints=())
        _, grads = exponential_value_and_grad({"c": -geo.ham / t}, prob, t)
        assert np.max(np.abs(grads["c"])) <= 1e-10

    def test_t_zero_euclidean_gradient_is_hamiltonian(self, rng):
        prob = ti_problem(ti_chain_geometry(HEIS, 1))
        from medbound.opalg import random_density
        rho = random_density(SiteSpace(prob.variables[0].labels), rng)
        grads = free_energy_gradient(ti_vars(prob, rho.mat), prob, 0.0)
        key = prob.variables[0].key
        assert np.allclose(grads[key], prob.variables[0].ham)


class TestMinimizeTI:
    def test_classical_ising_exact(self):
        for t in (0.5, 1.0, 2.0):
            res = minimize_ti(ISING, 1, t, TIGHT)
            assert res.converged
            assert abs(res.f_per_site - ising_transfer_free_energy(1.0, 0.0, t)) <= 1e-6

    def test_heisenberg_high_temperature(self):
        # the mixed state is feasible, so F sits at most -T ln 2, and the
        # optimal correction is O(1/T)
        t = 500.0
        res = minimize_ti(HEIS, 2, t, TIGHT)
        assert res.converged
        assert res.f_per_site <= -t * LN2 + 1e-9
        assert abs(res.f_per_site + t * LN2) <= 1e-3
        assert abs(res.s_m_per_site - LN2) <= 1e-5

    def test_f_equals_e_minus_ts(self):
        res = minimize_ti(HEIS, 2, 1.0, TIGHT)
        assert abs(res.f_per_site - (res.e_per_site - 1.0 * res.s_m_per_site)) <= 1e-10

    def test_disconnected_shield_accepted(self):
        res = minimize_ti(HEIS, (-4, -1), 1.0, SolverConfig(max_inner=2000))
        assert res.converged
        # weaker than the contiguous 2-site shield at the same cluster size is
        # not guaranteed, but it must stay a bound below the exact chain value
        assert res.f_per_site <= -0.77

    def test_cluster_dim_guard(self):
        with pytest.raises(ValueError):
            minimize_ti(HEIS, 13, 1.0)


class TestMinimizeFinite:
    def test_two_sites_exact(self):
        geo = finite_geometry(LatticeSpec("chain", 2), HEIS, radius=1)
        for t in (0.5, 1.0):
            res = minimize_finite(geo, t, TIGHT)
            expected = -t * math.log(math.exp(0.75 / t) + 3 * math.exp(-0.25 / t)) / 2
            assert res.converged
            assert abs(res.f_per_site - expected) <= 1e-7

    def test_product_hamiltonian_exact(self):
        # no bonds: independent sites, the bound is the exact free energy
        model = ModelSpec("tfim", J=0.0, g=0.7)
        geo = finite_geometry(LatticeSpec("chain", 4), model, radius=1)
        t = 0.8
        res = minimize_finite(geo, t, TIGHT)
        h1 = -0.7 * np.array([[0.0, 1.0], [1.0, 0.0]])
        single = exact_free_energy(h1, t, n_sites=1)
        assert res.converged
        assert abs(res.f_per_site - single.f_total) <= 1e-7

    def test_lower_bound_on_ring(self):
        geo = finite_geometry(LatticeSpec("chain", 6, boundary="periodic"), HEIS, radius=2)
        h = total_hamiltonian(geo.terms, geo.sites)
        t = 1.0
        res = minimize_finite(geo, t, SolverConfig(tol_gradient=1e-5, max_inner=3000))
        exact = exact_free_energy(h, t)
        assert res.converged
        assert res.residual <= 1e-6
        assert res.f_per_site <= exact.f_per_site + 1e-6


class TestSweep:
    def test_classical_ising_grid(self):
        prob = ti_problem(ti_chain_geometry(ISING, 1))
        grid = [0.5, 1.0, 2.0, 4.0]
        sweep = temperature_sweep(prob, grid, TIGHT)
        for row in sweep.rows:
            assert row.converged
            assert abs(row.f_per_site - ising_transfer_free_energy(1.0, 0.0, row.T)) <= 1e-6

    def test_high_t_entropy(self):
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        sweep = temperature_sweep(prob, [30.0], TIGHT)
        assert abs(sweep.rows[0].s_m_per_site - LN2) <= 1e-3

    def test_rows_ascending_and_concave(self):
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        grid = [0.4, 0.7, 1.0, 1.5, 2.5]
        sweep = temperature_sweep(prob, grid, SolverConfig())
        ts = [r.T for r in sweep.rows]
        assert ts == sorted(ts)
        fs = [r.f_per_site for r in sweep.rows]
        slopes = np.diff(fs) / np.diff(ts)
        assert np.all(np.diff(slopes) <= 1e-6)

    def test_specific_heat_positive_midgrid(self):
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        sweep = temperature_sweep(prob, [0.6, 0.8, 1.0, 1.3], SolverConfig())
        mid = sweep.rows[1:-1]
        assert all(r.specific_heat > 0 for r in mid)
        assert math.isnan(sweep.rows[0].specific_heat)

    def test_bad_grid_rejected(self):
        prob = ti_problem(ti_chain_geometry(ISING, 1))
        with pytest.raises(ValueError):
            temperature_sweep(prob, [1.0, 0.5], SolverConfig())


class TestGroundEnergyBound:
    def test_single_system_bound_reaches_e0(self):
        # cluster = whole system: no relaxation, F(T) climbs to E0 as T drops;
        # the entropy never goes negative so the crossing is not bracketed
        geo = finite_geometry(LatticeSpec("chain", 2), HEIS, radius=1)
        prob = finite_problem(geo)
        res = ground_energy_lower_bound(prob, [0.1, 0.3, 0.6, 1.0], TIGHT)
        assert not res.bracketed
        assert "crossing not bracketed" in res.note
        assert res.bound <= -0.75 / 2 + 1e-9
        assert abs(res.bound + 0.75 / 2) <= 1e-3

    def test_ti_chain_crossing(self):
        # 3-site cluster bound against the 6-site ring oracle
        prob = ti_problem(ti_chain_geometry(HEIS, 2))
        cfg = SolverConfig(tol_gradient=1e-6, tol_constraint=1e-7, max_inner=4000)
        from medbound.lattice import build_lattice
        terms, sites = build_lattice(LatticeSpec("chain", 6, boundary="periodic"), HEIS)
        from medbound.oracle import ground_energy
        e0_site = ground_energy(total_hamiltonian(terms, sites)) / 6
        res = ground_energy_lower_bound(prob, [0.15, 0.25, 0.4, 0.7, 1.0], cfg)
        assert res.bracketed
        assert res.bound <= e0_site + 1e-6
        assert abs(res.bound - e0_site) <= 0.02


class TestMultiPatch:
    def test_identical_patches_match_single(self):
        geo = ti_chain_geometry(ISING, 1)
        single = solve(ti_problem(geo), 1.0, TIGHT)
        double = multi_patch_minimize(multi_patch_problem([geo, geo]), 1.0, TIGHT)
        assert double.converged
        assert abs(double.f_per_site - single.f_per_site) <= 1e-8

    def test_classical_ising_still_exact(self):
        geos = [ti_chain_geometry(ISING, 1), ti_chain_geometry(ISING, 2)]
        res = multi_patch_minimize(multi_patch_problem(geos), 1.0, TIGHT)
        assert res.converged
        assert abs(res.f_per_site - ising_transfer_free_energy(1.0, 0.0, 1.0)) <= 1e-6

    def test_dominates_both_single_patches(self):
        # short-range window plus a disconnected long-range shield
        t = 0.6
        cfg = SolverConfig(tol_gradient=1e-6, tol_constraint=1e-7, max_inner=3000)
        geo_a = ti_chain_geometry(HEIS, 2)
        geo_b = ti_chain_geometry(HEIS, (-4, -1))
        f_a = solve(ti_problem(geo_a), t, cfg).f_per_site
        f_b = solve(ti_problem(geo_b), t, cfg).f_per_site
        res = multi_patch_minimize(multi_patch_problem([geo_a, geo_b]), t, cfg)
        assert res.converged
        assert res.f_per_site >= max(f_a, f_b) - 1e-6


class TestInvariants:
    def test_inner_loop_monotone(self):
        cfg = SolverConfig(track_inner=True, max_inner=2000)
        res = minimize_ti(HEIS, 2, 1.0, cfg)
        for trace in res.meta["inner_trace"]:
            arr = np.asarray(trace)
            if len(arr) > 1:
                assert np.all(np.diff(arr) <= 1e-10 * np.maximum(1.0, np.abs(arr[:-1])))

    def test_shield_monotonicity(self):
        # enlarging the shield tightens (raises) the bound, never lowers it
        cfg = SolverConfig(tol_gradient=1e-7, tol_constraint=1e-8, max_inner=3000)
        f = [minimize_ti(HEIS, n, 1.0, cfg).f_per_site for n in (1, 2, 3)]
        assert f[0] <= f[1] + 1e-6
        assert f[1] <= f[2] + 1e-6
        f_ising = [minimize_ti(ISING, n, 1.0, cfg).f_per_site for n in (1, 2)]
        assert abs(f_ising[0] - f_ising[1]) <= 1e-6

    def test_convexity_spot_check(self, rng):
        geo = finite_geometry(LatticeSpec("chain", 4), HEIS, radius=1)
        prob = finite_problem(geo)
        t = 0.8
        _, states1 = gibbs_chain_marginals(4, HEIS, 0.6, geo)
        h_rand = total_hamiltonian(geo.terms, geo.sites)
        import medbound.oracle as oracle
        rho2 = oracle.gibbs_state(h_rand, 1.7)
        states2 = {}
        for k in geo.sites:
            labels = geo.cluster_labels(k)
            red = ptrace_mat(rho2.mat, rho2.space.dims, rho2.space.axes(labels))
            states2[k] = DensityMatrix(SiteSpace(labels), red)
        f1 = markov_free_energy(ClusterVariables(states1, prob.constraints), prob, t)
        f2 = markov_free_energy(ClusterVariables(states2, prob.constraints), prob, t)
        for lam in (0.25, 0.5, 0.75):
            mix = {k: DensityMatrix(states1[k].space,
                                    lam * states1[k].mat + (1 - lam) * states2[k].mat)
                   for k in states1}
            fmix = markov_free_energy(ClusterVariables(mix, prob.constraints), prob, t)
            assert fmix <= lam * f1 + (1 - lam) * f2 + 1e-10

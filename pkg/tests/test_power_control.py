import math

import numpy as np
import pytest

from cfunderlay import estimation, rates, topology
from cfunderlay import power_control as pc
from cfunderlay.montecarlo import synthetic_gains


def unit_gains(M=1, N=1, K=1, L=1):
    return topology.LinkGains(
        zeta_f=np.ones((M, K)), zeta_g=np.ones((N, L)),
        zeta_u=np.ones((N, K)), zeta_v=np.ones((M, L)))


def oma_problem(gains, Q=None, P_P=1.0, P_S=0.5, I_T=np.inf, epsilon=1e-4,
                **kwargs):
    M, K = gains.zeta_f.shape
    N, L = gains.zeta_g.shape
    if Q is None:
        Q = min(K, L)
    plan = estimation.assign_pilots_oma(K, L, Q, max(K, L))
    stats = estimation.ul_stats_oma(gains, plan, P_ul_pilot=1.0)
    clusters = topology.full_cooperation(M, N, K, L)
    return pc.MaxMinProblem(stats=stats, gains=gains, clusters=clusters,
                            P_P=P_P, P_S=P_S, I_T=I_T, epsilon=epsilon,
                            **kwargs)


def min_sinr(problem, alloc):
    gp = rates.sinr_primary_oma(problem.stats, problem.gains,
                                problem.clusters, alloc)
    gs = rates.sinr_secondary_oma(problem.stats, problem.gains,
                                  problem.clusters, alloc)
    return min(gp.min(), gs.min()), np.concatenate([gp, gs])


def test_uniform_allocation_inverts_served_power():
    stats, clusters = _single_link_stats()
    alloc = pc.uniform_allocation(stats, clusters, P_P=1.0, P_S=1.0)
    # rho = 1/2 at unit gain and pilot energy 1, so eta = 2
    assert alloc.eta_P[0, 0] == pytest.approx(2.0)
    load = clusters.delta_P * alloc.eta_P * stats.rho_f
    assert load.sum() == pytest.approx(1.0)


def _single_link_stats():
    gains = unit_gains()
    plan = estimation.assign_pilots_oma(1, 1, 0, 1)
    stats = estimation.ul_stats_oma(gains, plan, P_ul_pilot=1.0)
    return stats, topology.full_cooperation(1, 1, 1, 1)


def test_uniform_allocation_saturates_every_serving_ap():
    gains = synthetic_gains(4, 4, 3, 3, seed=1)
    plan = estimation.assign_pilots_oma(3, 3, 3, 3)
    stats = estimation.ul_stats_oma(gains, plan, P_ul_pilot=1.0)
    clusters = topology.cluster_aps(gains, M_P=3, N_S=3)
    alloc = pc.uniform_allocation(stats, clusters, P_P=1.0, P_S=1.0)
    load_P = np.sum(clusters.delta_P * alloc.eta_P * stats.rho_f, axis=1)
    serving = clusters.delta_P.any(axis=1)
    np.testing.assert_allclose(load_P[serving], 1.0, rtol=1e-12)
    assert np.all(load_P[~serving] == 0.0)


def test_problem_validation():
    gains = synthetic_gains(2, 2, 2, 2, seed=0)
    with pytest.raises(ValueError):
        oma_problem(gains, epsilon=0.0)
    with pytest.raises(ValueError):
        oma_problem(gains, lambda_bounds=(2.0, 1.0))
    with pytest.raises(ValueError):
        oma_problem(gains, weights=(1.0, 0.0))


def test_feasibility_oracle_brackets_the_truth():
    gains = synthetic_gains(4, 4, 2, 2, seed=2)
    problem = oma_problem(gains)
    assert feasible(problem, 1e-6)
    assert not feasible(problem, 1e9)


def feasible(problem, lam):
    return pc.feasibility_check(problem, lam).feasible


def test_witness_satisfies_constraints():
    gains = synthetic_gains(4, 4, 2, 2, seed=3)
    problem = oma_problem(gains, I_T=1.0)
    res = pc.feasibility_check(problem, 0.05)
    assert res.feasible
    alloc = rates.PowerAllocation(eta_P=res.beta_P**2, eta_S=res.beta_S**2,
                                  P_P=problem.P_P, P_S=problem.P_S)
    # per-AP budget within solver tolerance
    rates.check_power_constraint(problem.stats, problem.clusters, alloc,
                                 tol=1e-5)
    # interference threshold
    Z = rates.secondary_cci_Zk(problem.stats, problem.gains,
                               problem.clusters, alloc.eta_S)
    assert np.all(problem.P_S * Z <= problem.I_T * (1 + 1e-5))
    # target SINR met by the witness allocation
    worst, _ = min_sinr(problem, alloc)
    assert worst >= 0.05 * (1 - 1e-4)


def test_maxmin_improves_on_uniform_and_equalizes():
    gains = synthetic_gains(8, 8, 4, 4, seed=4)
    problem = oma_problem(gains, I_T=1.0)
    sol = pc.maxmin_bisection(problem)

    uniform = pc.uniform_allocation(problem.stats, problem.clusters,
                                    problem.P_P, problem.P_S)
    Z = rates.secondary_cci_Zk(problem.stats, problem.gains,
                               problem.clusters, uniform.eta_S)
    P_Sn = rates.cap_secondary_power(Z, problem.I_T, problem.P_S)
    capped = rates.PowerAllocation(eta_P=uniform.eta_P,
                                   eta_S=uniform.eta_S * (P_Sn / problem.P_S),
                                   P_P=problem.P_P, P_S=problem.P_S)
    worst_uniform, _ = min_sinr(problem, capped)
    worst_maxmin, gammas = min_sinr(problem, sol.allocation)
    assert worst_maxmin >= worst_uniform * (1 - 1e-12)
    assert worst_maxmin >= sol.lambda_star * (1 - 1e-4)

    user_rates = rates.rate_from_sinr(gammas, 196, 4)
    assert user_rates.max() - user_rates.min() <= 1e-2


def test_symmetric_instance_gets_symmetric_solution():
    gains = unit_gains(M=2, N=2, K=2, L=2)
    problem = oma_problem(gains, Q=0, P_S=1.0, epsilon=1e-5)
    sol = pc.maxmin_bisection(problem)
    eta = sol.allocation.eta_P
    assert np.allclose(eta, eta.mean(), rtol=1e-2)
    worst, gammas = min_sinr(problem, sol.allocation)
    assert np.allclose(gammas, worst, rtol=1e-3)


def test_bisection_iteration_contract():
    gains = synthetic_gains(4, 4, 2, 2, seed=6)
    problem = oma_problem(gains, epsilon=1e-3)
    sol = pc.maxmin_bisection(problem)
    lo, hi = sol.initial_bracket
    assert hi - lo > 0
    bound = max(0, math.ceil(math.log2((hi - lo) / problem.epsilon)))
    assert sol.iterations <= bound
    # feasibility is monotone along the trajectory
    feas = sorted(sol.history, key=lambda t: t[0])
    flags = [f for _, f in feas]
    assert flags == sorted(flags, reverse=True)


def test_explicit_bounds_are_respected():
    gains = synthetic_gains(4, 4, 2, 2, seed=7)
    problem = oma_problem(gains, epsilon=1e-3, lambda_bounds=(1e-6, 10.0))
    sol = pc.maxmin_bisection(problem)
    assert sol.initial_bracket[0] >= 1e-6
    assert sol.lambda_star <= 10.0


def test_interference_cap_binds_inside_the_program():
    gains = synthetic_gains(4, 4, 2, 2, seed=8)
    tight = oma_problem(gains, I_T=0.05, epsilon=1e-4)
    loose = oma_problem(gains, I_T=np.inf, epsilon=1e-4)
    sol_t = pc.maxmin_bisection(tight)
    sol_l = pc.maxmin_bisection(loose)
    Z = rates.secondary_cci_Zk(tight.stats, tight.gains, tight.clusters,
                               sol_t.allocation.eta_S)
    assert np.all(tight.P_S * Z <= 0.05 * (1 + 1e-4))
    assert sol_t.lambda_star <= sol_l.lambda_star * (1 + 1e-6)

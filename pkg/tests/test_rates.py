import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfunderlay import estimation, rates, topology
from cfunderlay.power_control import uniform_allocation, uniform_allocation_noma


def unit_gains(M=1, N=1, K=1, L=1):
    return topology.LinkGains(
        zeta_f=np.ones((M, K)), zeta_g=np.ones((N, L)),
        zeta_u=np.ones((N, K)), zeta_v=np.ones((M, L)))


def random_gains(rng, M, N, K, L, lo=0.2, hi=2.0):
    return topology.LinkGains(
        zeta_f=rng.uniform(lo, hi, (M, K)), zeta_g=rng.uniform(lo, hi, (N, L)),
        zeta_u=rng.uniform(lo, hi, (N, K)), zeta_v=rng.uniform(lo, hi, (M, L)))


def oma_setup(gains, Q, P_ul_pilot=1.0, tau_p=None):
    M, K = gains.zeta_f.shape
    N, L = gains.zeta_g.shape
    if tau_p is None:
        tau_p = max(K, L)
    plan = estimation.assign_pilots_oma(K, L, Q, tau_p)
    stats = estimation.ul_stats_oma(gains, plan, P_ul_pilot)
    clusters = topology.full_cooperation(M, N, K, L)
    return stats, clusters


def test_rate_prelog():
    rate = rates.rate_from_sinr(np.array([1.0]), tau_c=196, tau_overhead=10)
    assert rate[0] == pytest.approx(186.0 / 196.0)
    with pytest.raises(ValueError):
        rates.rate_from_sinr(np.array([1.0]), tau_c=196, tau_overhead=196)


def test_dl_pilot_rate_prelog():
    r = rates.rate_dlpilot_upperbound(np.array([1.0]), 196, 10, 10)
    assert r[0] == pytest.approx(176.0 / 196.0)
    with pytest.raises(ValueError):
        rates.rate_dlpilot_upperbound(np.array([1.0]), 20, 10, 10)


def test_single_link_primary_sinr_value():
    # rho = 1/2 (unshared, unit gain, pilot energy 1); eta = 1, P_P = 10:
    # num = 10 (1/2)^2, den = 10 * 1/2 + 1
    stats, clusters = oma_setup(unit_gains(), Q=0, tau_p=1)
    alloc = rates.PowerAllocation(eta_P=np.ones((1, 1)),
                                  eta_S=np.zeros((1, 1)), P_P=10.0, P_S=0.0)
    gamma = rates.sinr_primary_oma(stats, unit_gains(), clusters, alloc)
    assert gamma[0] == pytest.approx(2.5 / 6.0)


def test_power_constraint_rejects_overload():
    stats, clusters = oma_setup(unit_gains(), Q=0, tau_p=1)
    alloc = rates.PowerAllocation(eta_P=np.full((1, 1), 2.5),
                                  eta_S=np.zeros((1, 1)), P_P=1.0, P_S=0.0)
    with pytest.raises(ValueError):
        rates.sinr_primary_oma(stats, unit_gains(), clusters, alloc)


def test_secondary_cci_functional_value():
    # shared single link: rho_g = rho_u = 1/3, eta_S = 1:
    # Z = zeta_u rho_g + rho_u^2 = 1/3 + 1/9 = 4/9, cap = I_T / Z = 2.25
    stats, clusters = oma_setup(unit_gains(), Q=1, tau_p=1)
    Z = rates.secondary_cci_Zk(stats, unit_gains(), clusters, np.ones((1, 1)))
    assert Z[0] == pytest.approx(4.0 / 9.0)
    assert rates.cap_secondary_power(Z, 1.0, 10.0) == pytest.approx(2.25)


def test_cap_inactive_cases():
    assert rates.cap_secondary_power(np.zeros(3), 1.0, 0.7) == 0.7
    assert rates.cap_secondary_power(np.full(3, 2.0), np.inf, 0.7) == 0.7
    assert rates.cap_secondary_power(np.array([2.0, 4.0]), 1.0, 0.7) == 0.25


def test_coherent_cci_adds_across_aps():
    # two identical shared S-APs: the contamination amplitude doubles, so
    # the coherent part quadruples relative to one AP
    g1 = unit_gains(M=1, N=1)
    s1, c1 = oma_setup(g1, Q=1, tau_p=1)
    Z1 = rates.secondary_cci_Zk(s1, g1, c1, np.ones((1, 1)))
    g2 = unit_gains(M=1, N=2)
    s2, c2 = oma_setup(g2, Q=1, tau_p=1)
    Z2 = rates.secondary_cci_Zk(s2, g2, c2, np.ones((2, 1)))
    incoherent_1, coherent_1 = 1.0 / 3.0, 1.0 / 9.0
    assert Z1[0] == pytest.approx(incoherent_1 + coherent_1)
    assert Z2[0] == pytest.approx(2 * incoherent_1 + 4 * coherent_1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1.1, 4.0))
def test_cci_monotone_in_secondary_power(seed, scale):
    rng = np.random.default_rng(seed)
    gains = random_gains(rng, M=3, N=3, K=2, L=2)
    stats, clusters = oma_setup(gains, Q=2)
    eta = rng.uniform(0.01, 0.2, (3, 2))
    Z1 = rates.secondary_cci_Zk(stats, gains, clusters, eta)
    Z2 = rates.secondary_cci_Zk(stats, gains, clusters, scale * eta)
    assert np.all(Z2 >= Z1 - 1e-15)
    assert np.all(Z1 >= 0)


def test_more_interference_lowers_primary_sinr():
    rng = np.random.default_rng(3)
    gains = random_gains(rng, M=4, N=4, K=2, L=2)
    stats, clusters = oma_setup(gains, Q=2)
    base = uniform_allocation(stats, clusters, P_P=1.0, P_S=0.1)
    hot = rates.PowerAllocation(eta_P=base.eta_P, eta_S=base.eta_S,
                                P_P=1.0, P_S=0.5)
    g_base = rates.sinr_primary_oma(stats, gains, clusters, base)
    g_hot = rates.sinr_primary_oma(stats, gains, clusters, hot)
    assert np.all(g_hot < g_base)


def test_noma_single_user_clusters_reduce_to_oma():
    rng = np.random.default_rng(5)
    gains = random_gains(rng, M=3, N=3, K=2, L=2)
    stats, clusters = oma_setup(gains, Q=0)
    alloc_o = uniform_allocation(stats, clusters, P_P=1.0, P_S=0.5)
    gp_o = rates.sinr_primary_oma(stats, gains, clusters, alloc_o)
    gs_o = rates.sinr_secondary_oma(stats, gains, clusters, alloc_o)

    plan = estimation.assign_pilots_noma(A=2, B=2, Q=0, tau_p=2)
    nstats = estimation.ul_stats_noma(gains, 2, 2, plan, P_ul_pilot=1.0)
    alloc_n = uniform_allocation_noma(nstats, P_P=1.0, P_S=0.5)
    sic = rates.SicModel.perfect(2, 1, 2, 1)
    gp_n = rates.sinr_primary_noma(nstats, gains, alloc_n, sic)
    gs_n = rates.sinr_secondary_noma(nstats, gains, alloc_n, sic)
    np.testing.assert_allclose(gp_n.ravel(), gp_o, rtol=1e-10)
    np.testing.assert_allclose(gs_n.ravel(), gs_o, rtol=1e-10)


def noma_setup(seed=7, M=4, N=4, A=2, B=2, K=2, L=2, Q=2):
    rng = np.random.default_rng(seed)
    gains = random_gains(rng, M, N, A * K, B * L)
    plan = estimation.assign_pilots_noma(A, B, Q, max(A, B))
    prelim = estimation.ul_stats_noma(gains, A, B, plan, P_ul_pilot=1.0)
    perm_P = rates.order_noma_users(prelim.alpha_f)
    perm_S = rates.order_noma_users(prelim.alpha_g)
    gains = rates.apply_noma_order(gains, A, B, perm_P, perm_S)
    nstats = estimation.ul_stats_noma(gains, A, B, plan, P_ul_pilot=1.0)
    alloc = uniform_allocation_noma(nstats, P_P=1.0, P_S=0.5)
    return gains, nstats, alloc


def test_perfect_sic_dominates_imperfect():
    gains, nstats, alloc = noma_setup()
    perfect = rates.SicModel.perfect(2, 2, 2, 2)
    leaky = rates.SicModel.from_scalar(0.2, 2, 2, 2, 2)
    gp1 = rates.sinr_primary_noma(nstats, gains, alloc, perfect)
    gp2 = rates.sinr_primary_noma(nstats, gains, alloc, leaky)
    gs1 = rates.sinr_secondary_noma(nstats, gains, alloc, perfect)
    gs2 = rates.sinr_secondary_noma(nstats, gains, alloc, leaky)
    assert np.all(gp1 >= gp2)
    assert np.all(gs1 >= gs2)
    # the last user of each cluster subtracts nobody, so SIC quality
    # cannot change its own residual term; equality is fine there, but
    # somebody must strictly gain
    assert np.any(gp1 > gp2) and np.any(gs1 > gs2)


def test_sic_model_validation():
    with pytest.raises(ValueError):
        rates.SicModel.from_scalar(0.0, 1, 2, 1, 2)
    with pytest.raises(ValueError):
        rates.SicModel.from_scalar(1.2, 1, 2, 1, 2)
    sic = rates.SicModel.from_scalar(0.5, 1, 2, 1, 2)
    assert sic.sigma_e2_P[0, 0] == pytest.approx(3.0)


def test_noma_user_ordering_helpers():
    alpha = np.zeros((2, 2, 3))
    alpha[:, 0] = [[0.2, 0.5, 0.1], [0.2, 0.5, 0.1]]
    alpha[:, 1] = [[0.3, 0.1, 0.9], [0.3, 0.1, 0.9]]
    perm = rates.order_noma_users(alpha)
    np.testing.assert_array_equal(perm[0], [1, 0, 2])
    np.testing.assert_array_equal(perm[1], [2, 0, 1])
    back = rates.permute_cluster_users(
        rates.permute_cluster_users(alpha, perm), np.argsort(perm, axis=1))
    np.testing.assert_array_equal(back, alpha)


def test_power_ordering_validator():
    ok = np.zeros((2, 2, 3))
    ok[:] = [0.1, 0.2, 0.3]
    assert rates.validate_noma_power_ordering(ok) == []
    bad = np.zeros((2, 2, 3))
    bad[:] = [0.3, 0.2, 0.1]
    violations = rates.validate_noma_power_ordering(bad)
    assert (0, 0, 1) in violations


def test_noma_dlpilot_sinr_finite_and_positive():
    gains, nstats, alloc = noma_setup()
    dl = estimation.dl_stats_noma(nstats, gains, alloc.eta_P, alloc.eta_S,
                                  P_pd=2.0)
    gp, gs = rates.sinr_noma_dlpilot(dl, nstats, gains, alloc)
    assert gp.shape == (2, 2) and gs.shape == (2, 2)
    assert np.all(np.isfinite(gp)) and np.all(gp > 0)
    assert np.all(np.isfinite(gs)) and np.all(gs > 0)


def test_oma_dlpilot_sinr_against_manual_assembly():
    rng = np.random.default_rng(8)
    gains = random_gains(rng, M=3, N=3, K=2, L=2)
    stats, clusters = oma_setup(gains, Q=2)
    alloc = uniform_allocation(stats, clusters, P_P=2.0, P_S=0.5)
    dl = estimation.dl_stats_oma(stats, gains, clusters,
                                 alloc.eta_P, alloc.eta_S, P_pd=2.0)
    gamma = rates.sinr_primary_oma_dlpilot(dl, stats, gains, clusters, alloc)
    den = rates.dlpilot_denominator_primary(dl, stats, gains, clusters, alloc)
    num = alloc.P_P * (dl.mu_mean_P**2 + dl.v_Pkk - dl.kappa_P)
    np.testing.assert_allclose(gamma, num / den, rtol=1e-12)
    assert np.all(gamma > 0)

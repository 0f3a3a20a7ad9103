"""Acceptance gate: the nine checks the package must pass before shipping.

Each test covers one criterion at its stated tolerance and prints a single
[C#] PASS/FAIL line (visible with -s, and in the captured output on
failure). Monte Carlo checks run at 100000 trials. C1 carries the only
wall-clock budget (five minutes for the full identity sweep).
"""

import json
import math
import time

import numpy as np

from cfunderlay import cli, estimation, montecarlo, power_control, rates, topology
from cfunderlay.rates import PowerAllocation

TRIALS = 100_000
TAU_C = 196


def _line(tag: str, ok: bool, detail: str):
    print(f"[{tag}] {'PASS' if ok else 'FAIL'} {detail}")


# ---------------------------------------------------------------------------
# Shared instance builders (reports are deterministic, so they are cached
# where two criteria audit the same operating point)
# ---------------------------------------------------------------------------

def _oma_geometric(seed, M=8, N=8, K=2, L=2, P_P=1.0, P_S=0.5):
    cfg = topology.SystemConfig(M=M, N=N, K=K, L=L, seed=seed)
    gains = topology.compute_large_scale(topology.generate_topology(cfg), cfg)
    tau_p = max(K, L)
    plan = estimation.assign_pilots_oma(K, L, min(K, L), tau_p)
    stats = estimation.ul_stats_oma(gains, plan, 1.0)
    clusters = topology.full_cooperation(M, N, K, L)
    alloc = power_control.uniform_allocation(stats, clusters, P_P, P_S)
    return gains, stats, clusters, alloc, tau_p


def _noma_desk(seed, theta=0.7):
    gains = montecarlo.synthetic_gains(8, 8, 4, 4, seed=seed)
    plan = estimation.assign_pilots_noma(2, 2, 2, 2)
    nstats = estimation.ul_stats_noma(gains, 2, 2, plan, 1.0)
    alloc = power_control.uniform_allocation_noma(nstats, 1.0, 0.5)
    sic = rates.SicModel.from_scalar(theta, 2, 2, 2, 2)
    return gains, nstats, alloc, sic


def _oma_desk(seed=1):
    gains = montecarlo.synthetic_gains(8, 8, 4, 4, seed=seed)
    plan = estimation.assign_pilots_oma(4, 4, 4, 4)
    stats = estimation.ul_stats_oma(gains, plan, 1.0)
    clusters = topology.full_cooperation(8, 8, 4, 4)
    return gains, stats, clusters


_SINR_OMA: dict = {}
_SINR_NOMA: dict = {}


def _sinr_report_oma(seed):
    if seed not in _SINR_OMA:
        gains, stats, clusters, alloc, _ = _oma_geometric(seed)
        _SINR_OMA[seed] = montecarlo.empirical_sinr_oma(
            gains, stats, clusters, alloc, seed, TRIALS)
    return _SINR_OMA[seed]


def _sinr_report_noma(seed):
    if seed not in _SINR_NOMA:
        gains, nstats, alloc, sic = _noma_desk(seed)
        _SINR_NOMA[seed] = montecarlo.empirical_sinr_noma(
            gains, nstats, alloc, sic, seed, TRIALS)
    return _SINR_NOMA[seed]


def _all_sinrs(stats, gains, clusters, alloc):
    g_P = rates.sinr_primary_oma(stats, gains, clusters, alloc, 1.0)
    g_S = rates.sinr_secondary_oma(stats, gains, clusters, alloc, 1.0)
    return np.concatenate([g_P, g_S])


# ---------------------------------------------------------------------------
# C1: every statistical identity holds within max(2%, 4 sigma) at 1e5 trials
# ---------------------------------------------------------------------------

def test_c1_moment_identities_at_full_trials():
    t0 = time.monotonic()
    gains, stats, clusters, alloc, tau_p = _oma_geometric(1)
    reports = [
        montecarlo.empirical_ul_estimation(gains, stats, 1, TRIALS),
        _sinr_report_oma(1),
        montecarlo.empirical_Zk(gains, stats, clusters, alloc.eta_S, 1,
                                TRIALS),
    ]
    dl = estimation.dl_stats_oma(stats, gains, clusters, alloc.eta_P,
                                 alloc.eta_S, tau_p * 1.0)
    rep_dl, _ = montecarlo.empirical_dl_pilot(gains, stats, clusters, alloc,
                                              dl, TAU_C, tau_p, tau_p, 1,
                                              TRIALS)
    reports.append(rep_dl)

    ngains, nstats, nalloc, sic = _noma_desk(1)
    reports.append(montecarlo.empirical_noma(ngains, nstats, nalloc, sic, 1,
                                             TRIALS))
    reports.append(_sinr_report_noma(1))

    elapsed = time.monotonic() - t0
    bad = [(r.label, f.name) for r in reports for f in r.failures()]
    n_rows = sum(len(r.rows) for r in reports)
    ok = not bad and elapsed < 300.0
    _line("C1", ok, f"{n_rows} identities, {len(bad)} failures, "
          f"{elapsed:.0f}s of 300s budget")
    assert bad == []
    assert elapsed < 300.0


# ---------------------------------------------------------------------------
# C2: closed-form SINRs track the moment-assembled simulation within 2%
# on five distinct seeds
# ---------------------------------------------------------------------------

def test_c2_closed_form_sinr_tracks_simulation_on_five_seeds():
    worst, count = 0.0, 0
    for seed in (1, 2, 3, 4, 5):
        for rep in (_sinr_report_oma(seed), _sinr_report_noma(seed)):
            rows = [r for r in rep.rows
                    if r.name.startswith("assembled gamma")]
            assert rows
            count += len(rows)
            worst = max(worst, max(r.rel_deviation for r in rows))
    ok = worst <= 0.02
    _line("C2", ok, f"worst closed-form vs assembled SINR deviation "
          f"{worst:.4f} over {count} comparisons (tol 0.02)")
    assert worst <= 0.02


# ---------------------------------------------------------------------------
# C3: max-min power control equalizes rates (spread <= 1e-2 b/s/Hz) and
# never undercuts the capped-uniform baseline, ten seeds at M=N=32, K=L=10
# ---------------------------------------------------------------------------

def test_c3_maxmin_equalizes_and_never_undercuts_uniform():
    spreads, improved = [], []
    for seed in range(1, 11):
        gains, stats, clusters, uni, tau_p = _oma_geometric(
            seed, M=32, N=32, K=10, L=10)
        Z = rates.secondary_cci_Zk(stats, gains, clusters, uni.eta_S)
        P_Sn = rates.cap_secondary_power(Z, 1.0, 0.5)
        uni_c = PowerAllocation(uni.eta_P, uni.eta_S, 1.0, P_Sn)
        g_uni = _all_sinrs(stats, gains, clusters, uni_c)

        problem = power_control.MaxMinProblem(
            stats=stats, gains=gains, clusters=clusters,
            P_P=1.0, P_S=0.5, I_T=1.0, epsilon=1e-3 * float(g_uni.min()))
        sol = power_control.maxmin_bisection(problem)
        g_max = _all_sinrs(stats, gains, clusters, sol.allocation)
        r_max = rates.rate_from_sinr(g_max, TAU_C, tau_p)
        r_uni = rates.rate_from_sinr(g_uni, TAU_C, tau_p)
        spreads.append(float(r_max.max() - r_max.min()))
        improved.append(bool(r_max.min() >= r_uni.min()))
    ok = max(spreads) <= 1e-2 and all(improved)
    _line("C3", ok, f"10 seeds: max rate spread {max(spreads):.2e} "
          f"(tol 1e-2), baseline never undercut: {all(improved)}")
    assert max(spreads) <= 1e-2
    assert all(improved)


# ---------------------------------------------------------------------------
# C4: with the interference cap active, the measured CCI power at every
# primary user stays within 2% of the threshold at 1e5 trials
# ---------------------------------------------------------------------------

def test_c4_interference_cap_holds_in_simulation():
    gains, stats, clusters = _oma_desk()
    I_T = 0.1
    uni = power_control.uniform_allocation(stats, clusters, 1.0, 0.5)
    Z = rates.secondary_cci_Zk(stats, gains, clusters, uni.eta_S)
    P_Sn = rates.cap_secondary_power(Z, I_T, 0.5)
    assert P_Sn < 0.5  # cap is genuinely active on this instance
    rep = montecarlo.empirical_Zk(gains, stats, clusters, uni.eta_S, 1,
                                  TRIALS)
    measured_uni = P_Sn * np.array([r.empirical for r in rep.rows])

    problem = power_control.MaxMinProblem(
        stats=stats, gains=gains, clusters=clusters,
        P_P=1.0, P_S=0.5, I_T=I_T, epsilon=1e-4)
    sol = power_control.maxmin_bisection(problem)
    repw = montecarlo.empirical_Zk(gains, stats, clusters,
                                   sol.allocation.eta_S, 1, TRIALS)
    measured_wit = sol.allocation.P_S * np.array(
        [r.empirical for r in repw.rows])

    worst = float(max(measured_uni.max(), measured_wit.max()) / I_T)
    ok = worst <= 1.02
    _line("C4", ok, f"measured CCI/threshold: capped-uniform "
          f"{measured_uni.max() / I_T:.4f}, max-min witness "
          f"{measured_wit.max() / I_T:.4f} (tol 1.02)")
    assert np.all(measured_uni <= 1.02 * I_T)
    assert np.all(measured_wit <= 1.02 * I_T)


# ---------------------------------------------------------------------------
# C5: the secondary sum rate is nondecreasing in the interference threshold
# from -20 to 30 dB and reaches 99% of the uncapped rate at 30 dB
# ---------------------------------------------------------------------------

def test_c5_secondary_rate_monotone_in_cap_and_saturates():
    gains, stats, clusters = _oma_desk()
    uni = power_control.uniform_allocation(stats, clusters, 1.0, 0.5)
    Z = rates.secondary_cci_Zk(stats, gains, clusters, uni.eta_S)

    def sum_rate(P_S):
        alloc = PowerAllocation(uni.eta_P, uni.eta_S, 1.0, P_S)
        g_S = rates.sinr_secondary_oma(stats, gains, clusters, alloc, 1.0)
        return float(np.sum(rates.rate_from_sinr(g_S, TAU_C, 4)))

    grid_db = np.arange(-20.0, 31.0, 5.0)
    caps = [rates.cap_secondary_power(Z, 10 ** (db / 10), 0.5)
            for db in grid_db]
    sums = [sum_rate(c) for c in caps]
    uncapped = sum_rate(0.5)

    nondecreasing = all(b >= a - 1e-12 for a, b in zip(sums, sums[1:]))
    saturates = sums[-1] >= 0.99 * uncapped
    ok = nondecreasing and saturates and caps[0] < 0.5
    _line("C5", ok, f"secondary sum rate over -20..30 dB: nondecreasing "
          f"{nondecreasing}, rate(30 dB)/uncapped "
          f"{sums[-1] / uncapped:.4f} (tol 0.99)")
    assert caps[0] < 0.5  # cap binds at the low end, the sweep is informative
    assert nondecreasing
    assert saturates


# ---------------------------------------------------------------------------
# C6: the closed-form rate stays an upper bound on the sampled mean
# instantaneous rate on every grid instance (4-sigma one-sided allowance)
# ---------------------------------------------------------------------------

def test_c6_rate_bound_dominates_sampled_mean_rate():
    grid = (
        dict(seed=1, M=8, N=8, K=2, L=2, Q=2, synthetic=False),
        dict(seed=2, M=8, N=8, K=4, L=4, Q=2, synthetic=False),
        dict(seed=3, M=4, N=4, K=3, L=3, Q=1, synthetic=True),
    )
    margins, all_ok = [], True
    for inst in grid:
        if inst["synthetic"]:
            gains = montecarlo.synthetic_gains(inst["M"], inst["N"],
                                               inst["K"], inst["L"],
                                               seed=inst["seed"])
        else:
            sys_cfg = topology.SystemConfig(M=inst["M"], N=inst["N"],
                                            K=inst["K"], L=inst["L"],
                                            seed=inst["seed"])
            gains = topology.compute_large_scale(
                topology.generate_topology(sys_cfg), sys_cfg)
        tau = max(inst["K"], inst["L"])
        plan = estimation.assign_pilots_oma(inst["K"], inst["L"], inst["Q"],
                                            tau)
        stats = estimation.ul_stats_oma(gains, plan, 1.0)
        clusters = topology.full_cooperation(inst["M"], inst["N"],
                                             inst["K"], inst["L"])
        alloc = power_control.uniform_allocation(stats, clusters, 1.0, 0.5)
        dl = estimation.dl_stats_oma(stats, gains, clusters, alloc.eta_P,
                                     alloc.eta_S, tau * 1.0)
        _, jensen = montecarlo.empirical_dl_pilot(
            gains, stats, clusters, alloc, dl, TAU_C, tau, tau,
            inst["seed"], 50_000)
        margins.append(jensen.min_margin)
        all_ok = all_ok and jensen.passed
        if inst["synthetic"]:
            # At O(1) SINR the Jensen gap is material, not noise-bounded.
            all_ok = all_ok and jensen.min_margin > 0.0
    _line("C6", all_ok, f"bound margins per instance "
          f"{['%.2e' % m for m in margins]}, all within noise allowance: "
          f"{all_ok}")
    assert all_ok


# ---------------------------------------------------------------------------
# C7: better SIC never hurts (theta=1 dominates theta=0.2 elementwise), and
# orthogonal access wins the sum rate at equal total users
# ---------------------------------------------------------------------------

def test_c7_sic_quality_ordering_and_oma_noma_sum_rates():
    base = dict(cli.DEFAULTS)
    base.update(mode="noma", gains="synthetic", M=8, N=8,
                K=2, L=2, A=2, B=2, seed=1)
    perfect = cli.evaluate_point(dict(base, theta=1.0))
    partial = cli.evaluate_point(dict(base, theta=0.2))
    r1 = np.array([row["rate"] for row in perfect])
    r02 = np.array([row["rate"] for row in partial])
    dominates = bool(np.all(r1 >= r02 - 1e-12) and np.any(r1 > r02 + 1e-12))

    oma_cfg = dict(cli.DEFAULTS)
    oma_cfg.update(mode="oma", gains="synthetic", M=8, N=8, K=4, L=4, seed=1)
    oma_rows = cli.evaluate_point(oma_cfg)
    sum_oma = oma_rows[0]["sum_rate_primary"] + \
        oma_rows[0]["sum_rate_secondary"]
    sum_noma = partial[0]["sum_rate_primary"] + \
        partial[0]["sum_rate_secondary"]
    oma_wins = sum_oma > sum_noma

    ok = dominates and oma_wins
    _line("C7", ok, f"theta=1 dominates theta=0.2: {dominates}; sum rate "
          f"8-user orthogonal {sum_oma:.3f} > clustered {sum_noma:.3f}: "
          f"{oma_wins}")
    assert dominates
    assert oma_wins


# ---------------------------------------------------------------------------
# C8: the bisection meets its iteration budget, leaves a bracket no wider
# than epsilon, reports a monotone feasibility history, and returns a
# witness meeting the power, interference, and SINR constraints within 1e-6
# ---------------------------------------------------------------------------

def test_c8_bisection_contract_and_witness_feasibility():
    gains, stats, clusters = _oma_desk()
    problem = power_control.MaxMinProblem(
        stats=stats, gains=gains, clusters=clusters,
        P_P=1.0, P_S=0.5, I_T=1.0, epsilon=1e-4)
    sol = power_control.maxmin_bisection(problem)

    lo0, hi0 = sol.initial_bracket
    budget = max(0, math.ceil(math.log2((hi0 - lo0) / problem.epsilon)))
    within_budget = sol.iterations <= budget

    feas = [lam for lam, f in sol.history if f]
    infeas = [lam for lam, f in sol.history if not f]
    width = (min(infeas) - max(l for l in feas if l < min(infeas))
             if infeas and feas else 0.0)
    flags = [f for _, f in sorted(sol.history)]
    monotone = flags == sorted(flags, reverse=True)

    alloc = sol.allocation
    rates.check_power_constraint(stats, clusters, alloc, tol=1e-6)
    Z = rates.secondary_cci_Zk(stats, gains, clusters, alloc.eta_S)
    cap_ok = bool(np.all(alloc.P_S * Z <= problem.I_T * (1.0 + 1e-6)))
    g_min = float(_all_sinrs(stats, gains, clusters, alloc).min())
    sinr_ok = g_min >= sol.lambda_star * (1.0 - 1e-6)

    ok = (within_budget and width <= problem.epsilon * (1 + 1e-9)
          and monotone and cap_ok and sinr_ok)
    _line("C8", ok, f"{sol.iterations} iterations of {budget} budget, "
          f"bracket width {width:.2e} (eps {problem.epsilon:g}), monotone "
          f"history {monotone}, witness cap/SINR within 1e-6: "
          f"{cap_ok and sinr_ok}")
    assert within_budget
    assert width <= problem.epsilon * (1 + 1e-9)
    assert monotone
    assert cap_ok
    assert sinr_ok


# ---------------------------------------------------------------------------
# C9: the CLI reproduces byte-identical run and validate outputs for the
# same config and seed
# ---------------------------------------------------------------------------

def test_c9_cli_outputs_reproducible(tmp_path):
    run_cfg = tmp_path / "run.json"
    run_cfg.write_text(json.dumps(dict(M=8, N=8, K=2, L=2)))
    val_cfg = tmp_path / "val.json"
    val_cfg.write_text(json.dumps(dict(M=3, N=3, K=2, L=2,
                                       gains="synthetic", trials=40000)))
    outs = {name: str(tmp_path / name) for name in "abcd"}
    assert cli.main(["run", "--config", str(run_cfg), "--out",
                     outs["a"]]) == 0
    assert cli.main(["run", "--config", str(run_cfg), "--out",
                     outs["b"]]) == 0
    assert cli.main(["validate", "--config", str(val_cfg), "--out",
                     outs["c"]]) == 0
    assert cli.main(["validate", "--config", str(val_cfg), "--out",
                     outs["d"]]) == 0
    run_same = (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    val_same = (tmp_path / "c").read_bytes() == (tmp_path / "d").read_bytes()
    ok = run_same and val_same
    _line("C9", ok, f"byte-identical reruns: run {run_same}, "
          f"validate {val_same}")
    assert run_same
    assert val_same

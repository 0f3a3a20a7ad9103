"""Power allocation: uniform baseline and max-min fairness via bisection.

The max-min program maximizes a common SINR target lambda subject to the
per-AP power budgets (C3), the interference-temperature cap at every PU
(C4) and nonnegativity (C5). For fixed lambda every SINR constraint is a
second-order cone in the amplitude variables beta = sqrt(eta), so the
outer bisection only needs a feasibility oracle. The oracle minimizes a
common additive slack over all relaxed constraints; the target is
feasible iff the optimal slack is (numerically) nonpositive, and the
witness doubles as the returned allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from . import rates
from .estimation import NomaUlStats, UlEstimateStats
from .rates import PowerAllocation
from .topology import ClusterAssignment, LinkGains

FEAS_TOL = 1e-6
_BRACKET_CAP = 60


class SolverFailure(RuntimeError):
    """No conic backend produced a usable answer (distinct from infeasible)."""


@dataclass(frozen=True)
class MaxMinProblem:
    stats: UlEstimateStats
    gains: LinkGains
    clusters: ClusterAssignment
    P_P: float
    P_S: float
    I_T: float | np.ndarray = np.inf
    epsilon: float = 1e-3
    lambda_bounds: tuple[float, float] | None = None
    weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")
        if self.lambda_bounds is not None:
            lo, hi = self.lambda_bounds
            if not lo < hi:
                raise ValueError("lambda_bounds must be ordered")


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    beta_P: np.ndarray
    beta_S: np.ndarray
    max_violation: float


@dataclass(frozen=True)
class MaxMinSolution:
    allocation: PowerAllocation
    lambda_star: float
    iterations: int
    initial_bracket: tuple[float, float]
    history: list = field(default_factory=list)


def uniform_allocation(stats: UlEstimateStats, clusters: ClusterAssignment,
                       P_P: float = 1.0, P_S: float = 1.0) -> PowerAllocation:
    """One power coefficient per AP, spending the full budget:
    eta_m = 1 / sum over served users of rho, so sum delta eta rho = 1.
    APs serving nobody get a zero row.
    """
    def per_ap(delta, rho):
        tot = np.sum(delta * rho, axis=1)
        eta_ap = np.where(tot > 0, 1.0 / np.where(tot > 0, tot, 1.0), 0.0)
        return np.repeat(eta_ap[:, None], rho.shape[1], axis=1)

    return PowerAllocation(
        eta_P=per_ap(clusters.delta_P, stats.rho_f),
        eta_S=per_ap(clusters.delta_S, stats.rho_g),
        P_P=P_P, P_S=P_S,
    )


def uniform_allocation_noma(nstats: NomaUlStats, P_P: float = 1.0,
                            P_S: float = 1.0) -> PowerAllocation:
    """Per-AP uniform coefficients across all clustered beams."""
    def per_ap(alpha):
        tot = alpha.sum(axis=(1, 2))
        eta_ap = np.where(tot > 0, 1.0 / np.where(tot > 0, tot, 1.0), 0.0)
        return np.broadcast_to(eta_ap[:, None, None], alpha.shape).copy()

    return PowerAllocation(eta_P=per_ap(nstats.alpha_f),
                           eta_S=per_ap(nstats.alpha_g), P_P=P_P, P_S=P_S)


def _vec(expr):
    try:
        return cp.vec(expr, order="F")
    except TypeError:  # older cvxpy without the order parameter
        return cp.vec(expr)


class _FeasibilityOracle:
    """Compiled slack-minimization problem, re-solved per lambda.

    Variables are pre-scaled by the uniform-allocation amplitudes so the
    solver sees O(1) data even at realistic path-loss magnitudes; lambda
    enters only through a nonnegative parameter, so the compiled problem
    is reused across bisection iterations.
    """

    def __init__(self, problem: MaxMinProblem):
        st, gains, cl = problem.stats, problem.gains, problem.clusters
        M, K = st.rho_f.shape
        N, L = st.rho_g.shape
        dP, dS = cl.delta_P, cl.delta_S
        sqPP, sqPS = math.sqrt(problem.P_P), math.sqrt(problem.P_S)
        I_T = np.broadcast_to(np.asarray(problem.I_T, dtype=float), (K,))

        base = uniform_allocation(st, cl)
        self.scale_P = np.where(base.eta_P > 0, np.sqrt(base.eta_P), 1.0)
        self.scale_S = np.where(base.eta_S > 0, np.sqrt(base.eta_S), 1.0)

        x_P = cp.Variable((M, K), nonneg=True)
        x_S = cp.Variable((N, L), nonneg=True)
        s = cp.Variable()
        t = cp.Parameter(nonneg=True)  # 1/sqrt(lambda)
        exprs = []

        # SINR cones, both sides multiplied by sqrt(P) so the noise tail is 1
        for k in range(K):
            w_own = sqPP * dP * np.sqrt(st.rho_f * gains.zeta_f[:, [k]]) * self.scale_P
            w_cross = sqPS * dS * np.sqrt(st.rho_g * gains.zeta_u[:, [k]]) * self.scale_S
            parts = [_vec(cp.multiply(w_own, x_P)), _vec(cp.multiply(w_cross, x_S))]
            pk = st.pu_partner[k]
            if pk >= 0:
                # pilot-sharing means add in amplitude across S-APs
                w_coh = sqPS * dS[:, pk] * st.rho_u[:, k] * self.scale_S[:, pk]
                parts.append(cp.reshape(w_coh @ x_S[:, pk], (1,), order="F"))
            parts.append(np.ones(1))
            rhs_w = sqPP * dP[:, k] * st.rho_f[:, k] * self.scale_P[:, k]
            exprs.append(cp.norm(cp.hstack(parts)) - t * (rhs_w @ x_P[:, k]))

        for l in range(L):
            w_own = sqPS * dS * np.sqrt(st.rho_g * gains.zeta_g[:, [l]]) * self.scale_S
            w_cross = sqPP * dP * np.sqrt(st.rho_f * gains.zeta_v[:, [l]]) * self.scale_P
            parts = [_vec(cp.multiply(w_own, x_S)), _vec(cp.multiply(w_cross, x_P))]
            pl = st.su_partner[l]
            if pl >= 0:
                w_coh = sqPP * dP[:, pl] * st.rho_v[:, l] * self.scale_P[:, pl]
                parts.append(cp.reshape(w_coh @ x_P[:, pl], (1,), order="F"))
            parts.append(np.ones(1))
            rhs_w = sqPS * dS[:, l] * st.rho_g[:, l] * self.scale_S[:, l]
            exprs.append(cp.norm(cp.hstack(parts)) - t * (rhs_w @ x_S[:, l]))

        # C3: per-AP average power budgets
        for m in range(M):
            w = np.sqrt(dP[m] * st.rho_f[m]) * self.scale_P[m]
            exprs.append(cp.sum_squares(cp.multiply(w, x_P[m])) - 1.0)
        for n in range(N):
            w = np.sqrt(dS[n] * st.rho_g[n]) * self.scale_S[n]
            exprs.append(cp.sum_squares(cp.multiply(w, x_S[n])) - 1.0)

        # C4: interference temperature, quadratic in beta
        if problem.P_S > 0:
            for k in range(K):
                if not np.isfinite(I_T[k]):
                    continue
                c = math.sqrt(problem.P_S / I_T[k])
                wq = c * np.sqrt(dS * st.rho_g * gains.zeta_u[:, [k]]) * self.scale_S
                parts = [_vec(cp.multiply(wq, x_S))]
                pk = st.pu_partner[k]
                if pk >= 0:
                    w_coh = c * dS[:, pk] * st.rho_u[:, k] * self.scale_S[:, pk]
                    parts.append(cp.reshape(w_coh @ x_S[:, pk], (1,), order="F"))
                exprs.append(cp.sum_squares(cp.hstack(parts)) - 1.0)

        self._x_P, self._x_S, self._s, self._t = x_P, x_S, s, t
        self.prob = cp.Problem(cp.Minimize(s), [e <= s for e in exprs])

        # Min-power variant of the same feasible set: at the optimum every
        # SINR cone is tight, so the witness equalizes users at the target.
        self._slack = cp.Parameter()
        wpow_P = np.sqrt(dP * st.rho_f) * self.scale_P
        wpow_S = np.sqrt(dS * st.rho_g) * self.scale_S
        spent = (cp.sum_squares(cp.multiply(wpow_P, x_P))
                 + cp.sum_squares(cp.multiply(wpow_S, x_S)))
        self.prob_polish = cp.Problem(cp.Minimize(spent),
                                      [e <= self._slack for e in exprs])

        installed = set(cp.installed_solvers())
        self._solvers = [name for name in ("CLARABEL", "ECOS", "SCS")
                         if name in installed]
        if not self._solvers:
            raise SolverFailure("no conic solver available")

    def check(self, lam: float) -> FeasibilityResult:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self._t.value = 1.0 / math.sqrt(lam)
        solved = False
        for name in self._solvers:
            try:
                self.prob.solve(solver=name)
            except cp.error.SolverError:
                continue
            if self.prob.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) \
                    and self._s.value is not None:
                solved = True
                break
        if not solved:
            raise SolverFailure(f"feasibility subproblem failed at lambda={lam:g}")
        violation = float(self._s.value)
        beta_P = np.maximum(self._x_P.value, 0.0) * self.scale_P
        beta_S = np.maximum(self._x_S.value, 0.0) * self.scale_S
        return FeasibilityResult(feasible=violation <= FEAS_TOL,
                                 beta_P=beta_P, beta_S=beta_S,
                                 max_violation=violation)

    def polish(self, lam: float, slack: float) -> FeasibilityResult | None:
        """Minimum-power witness at a known-feasible lambda. The small slack
        keeps the set strictly feasible when the target sits exactly on the
        boundary. Returns None when no backend converges."""
        self._t.value = 1.0 / math.sqrt(lam)
        self._slack.value = max(slack, 0.0) + 1e-9
        for name in self._solvers:
            try:
                self.prob_polish.solve(solver=name)
            except cp.error.SolverError:
                continue
            if self.prob_polish.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) \
                    and self._x_P.value is not None:
                beta_P = np.maximum(self._x_P.value, 0.0) * self.scale_P
                beta_S = np.maximum(self._x_S.value, 0.0) * self.scale_S
                return FeasibilityResult(feasible=True, beta_P=beta_P,
                                         beta_S=beta_S,
                                         max_violation=float(self._slack.value))
        return None


def feasibility_check(problem: MaxMinProblem, lam: float) -> FeasibilityResult:
    """One-shot oracle call (builds the conic program; prefer the cached
    path inside maxmin_bisection for repeated queries)."""
    return _FeasibilityOracle(problem).check(lam)


def _coherence_bound(problem: MaxMinProblem) -> float:
    """Interference-free SINR upper bound: P (sum_m sqrt(rho))^2 per user."""
    st, cl = problem.stats, problem.clusters
    bound_P = problem.P_P * np.max(np.sum(cl.delta_P * np.sqrt(st.rho_f), axis=0) ** 2)
    bound_S = problem.P_S * np.max(np.sum(cl.delta_S * np.sqrt(st.rho_g), axis=0) ** 2)
    return max(bound_P, bound_S)


def _capped_uniform(problem: MaxMinProblem) -> PowerAllocation:
    """Uniform allocation with the interference cap folded into eta_S.

    The cap scales the whole secondary power, and the SINRs depend on
    P_S and eta_S only through their product, so scaling eta_S instead
    keeps the oracle's fixed P_S while representing the same operating
    point. The result is feasible for every lambda up to its min SINR.
    """
    base = uniform_allocation(problem.stats, problem.clusters,
                              problem.P_P, problem.P_S)
    eta_S = base.eta_S
    if problem.P_S > 0:
        Z = rates.secondary_cci_Zk(problem.stats, problem.gains,
                                   problem.clusters, eta_S)
        P_Sn = rates.cap_secondary_power(Z, problem.I_T, problem.P_S)
        if P_Sn < problem.P_S:
            eta_S = eta_S * (P_Sn / problem.P_S)
    return PowerAllocation(eta_P=base.eta_P, eta_S=eta_S,
                           P_P=problem.P_P, P_S=problem.P_S)


def _min_sinr(problem: MaxMinProblem, alloc: PowerAllocation) -> float:
    g_P = rates.sinr_primary_oma(problem.stats, problem.gains,
                                 problem.clusters, alloc)
    g_S = rates.sinr_secondary_oma(problem.stats, problem.gains,
                                   problem.clusters, alloc)
    return float(min(g_P.min(initial=np.inf), g_S.min(initial=np.inf)))


def maxmin_bisection(problem: MaxMinProblem) -> MaxMinSolution:
    """Algorithm: bisection on the common SINR target over the SOC oracle.

    The common target makes the solution independent of the (positive)
    priority weights. The bracket starts at the capped-uniform operating
    point, a certified feasible target, so the result never undercuts the
    uniform baseline. After the bracket collapses, a minimum-power resolve
    at the final feasible target tightens every SINR cone, equalizing the
    users at the common value; the best candidate by achieved min SINR is
    returned (ties prefer the equalized witness).
    """
    oracle = _FeasibilityOracle(problem)
    history: list[tuple[float, bool]] = []
    witness = None

    seed_alloc = _capped_uniform(problem)
    seed_lambda = _min_sinr(problem, seed_alloc)

    if problem.lambda_bounds is not None:
        lo, hi = problem.lambda_bounds
    else:
        lo, hi = 0.0, 2.0 * _coherence_bound(problem)
        if seed_lambda > 0:
            lo = seed_lambda
            history.append((lo, True))

    # bracket: hi must be infeasible
    for _ in range(_BRACKET_CAP):
        res = oracle.check(hi)
        history.append((hi, res.feasible))
        if not res.feasible:
            break
        witness, lo, hi = res, hi, 2.0 * hi
    else:
        raise RuntimeError("could not bracket an infeasible lambda by doubling")

    initial = (lo, hi)
    iterations = 0
    while hi - lo > problem.epsilon:
        mid = 0.5 * (lo + hi)
        res = oracle.check(mid)
        history.append((mid, res.feasible))
        iterations += 1
        if res.feasible:
            lo, witness = mid, res
        else:
            hi = mid

    if witness is None and (problem.lambda_bounds is not None
                            or seed_lambda <= 0):
        # every probe infeasible: certify a point near the bottom of the bracket
        probe = max(hi * 1e-9, np.finfo(float).tiny)
        res = oracle.check(probe)
        history.append((probe, res.feasible))
        if not res.feasible:
            raise RuntimeError("no feasible target found down to lambda ~ 0")
        witness, lo = res, probe

    def as_alloc(result):
        return PowerAllocation(eta_P=result.beta_P**2, eta_S=result.beta_S**2,
                               P_P=problem.P_P, P_S=problem.P_S)

    candidates: list[tuple[float, PowerAllocation]] = []
    if lo > 0:
        violation = witness.max_violation if witness is not None else 0.0
        polished = oracle.polish(lo, violation)
        if polished is not None:
            candidates.append((lo, as_alloc(polished)))
    if witness is not None:
        candidates.append((lo, as_alloc(witness)))
    if problem.lambda_bounds is None and seed_lambda > 0:
        candidates.append((seed_lambda, seed_alloc))
    if not candidates:
        raise RuntimeError("bisection produced no feasible witness")

    achieved = [_min_sinr(problem, alloc) for _, alloc in candidates]
    best = 0
    for idx in range(1, len(candidates)):
        if achieved[idx] > achieved[best]:
            best = idx
    nominal, alloc = candidates[best]
    return MaxMinSolution(allocation=alloc,
                          lambda_star=min(nominal, achieved[best]),
                          iterations=iterations, initial_bracket=initial,
                          history=history)

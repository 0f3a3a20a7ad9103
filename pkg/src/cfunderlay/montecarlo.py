"""Monte Carlo validation of every closed-form moment used by the rate engine.

Each report draws small-scale fading consistent with the large-scale
gains, replays the uplink training chain (pilot sharing included), and
compares empirical moments against their closed forms. Rows pass when
|closed - empirical| <= max(rel_tol * |closed|, 4 * stderr).

Estimator notes. Plain expectations use the sample mean with its exact
standard error. Squared means |E x|^2 are estimated as |mean|^2 - var/n
(debiased). The assembled-SINR rows rebuild the closed formulas from
per-link measured moments rather than aggregate signal powers: at
realistic path-loss scales the aggregate coherent means drown in noise,
while per-link second moments stay measurable at any scale, so the
assembly test keeps its 2 percent resolution everywhere. Within-cluster
coherent terms reuse one base block per (AP, cluster, user) because all
estimates in a cluster are scaled copies of the same received pilot.
Aggregate-vs-per-AP coherence is reported as a non-gating diagnostic.

All randomness derives from numpy Generators seeded by (stream, seed,
tag) tuples with a fixed chunk size, so every number is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rates
from .estimation import (DlPilotStatsOma, NomaUlStats, UlEstimateStats,
                         cluster_view)
from .rates import PowerAllocation, SicModel
from .topology import ClusterAssignment, LinkGains

CHUNK = 20_000
_STREAM_MC = 2
_STREAM_SYNTH = 3

_TAG_DRAW = 0
_TAG_UL = 1
_TAG_SINR = 2
_TAG_ZK = 3
_TAG_DL = 4
_TAG_NOMA_ID = 5
_TAG_NOMA_SINR = 6


@dataclass(frozen=True)
class MomentRow:
    name: str
    closed_form: float
    empirical: float
    stderr: float
    rel_tol: float = 0.02

    @property
    def deviation(self) -> float:
        return abs(self.empirical - self.closed_form)

    @property
    def rel_deviation(self) -> float:
        return self.deviation / max(abs(self.closed_form), 1e-300)

    @property
    def passed(self) -> bool:
        return self.deviation <= max(self.rel_tol * abs(self.closed_form),
                                     4.0 * self.stderr)


@dataclass
class MomentReport:
    label: str
    rows: list[MomentRow] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def add(self, name, closed_form, empirical, stderr, rel_tol=0.02):
        self.rows.append(MomentRow(name, float(closed_form), float(empirical),
                                   float(stderr), rel_tol))

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> list[MomentRow]:
        return [r for r in self.rows if not r.passed]

    def as_dicts(self) -> list[dict]:
        return [dict(report=self.label, identity=r.name,
                     closed_form=r.closed_form, empirical=r.empirical,
                     stderr=r.stderr, rel_deviation=r.rel_deviation,
                     passed=int(r.passed)) for r in self.rows]


@dataclass(frozen=True)
class JensenSummary:
    """Jensen-bound audit: upper bound vs sample-mean rate per user.

    The sample mean carries Monte Carlo noise, so the bound check allows a
    one-sided 4-sigma excursion; at low SINR the Jensen gap is quadratically
    small and the raw margin straddles zero within that noise.
    """

    r_ub_primary: np.ndarray
    mean_rate_primary: np.ndarray
    r_ub_secondary: np.ndarray
    mean_rate_secondary: np.ndarray
    stderr_primary: np.ndarray
    stderr_secondary: np.ndarray

    @property
    def max_violation(self) -> float:
        vp = np.max(self.mean_rate_primary - self.r_ub_primary)
        vs = np.max(self.mean_rate_secondary - self.r_ub_secondary)
        return float(max(vp, vs))

    @property
    def min_margin(self) -> float:
        return float(-self.max_violation)

    @property
    def passed(self) -> bool:
        ok_p = np.all(self.mean_rate_primary
                      <= self.r_ub_primary + 4.0 * self.stderr_primary)
        ok_s = np.all(self.mean_rate_secondary
                      <= self.r_ub_secondary + 4.0 * self.stderr_secondary)
        return bool(ok_p and ok_s)


def _chunks(trials: int, chunk: int = CHUNK):
    done = 0
    while done < trials:
        step = min(chunk, trials - done)
        yield step
        done += step


def _cn(rng: np.random.Generator, var, shape) -> np.ndarray:
    """Circularly-symmetric complex normals with per-entry variance var."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z * np.sqrt(np.broadcast_to(var, shape) / 2.0)


class _RealAcc:
    """Mean and standard error of a stream of real sample batches."""

    def __init__(self, shape=()):
        self.n = 0
        self.s = np.zeros(shape)
        self.s2 = np.zeros(shape)

    def add(self, batch: np.ndarray):
        self.n += batch.shape[0]
        self.s += batch.sum(axis=0)
        self.s2 += (batch**2).sum(axis=0)

    @property
    def mean(self):
        return self.s / self.n

    @property
    def stderr(self):
        var = np.maximum(self.s2 / self.n - self.mean**2, 0.0)
        return np.sqrt(var / self.n)


class _ComplexAcc:
    """Mean, variance and debiased |mean|^2 of complex sample batches."""

    def __init__(self, shape=()):
        self.n = 0
        self.s = np.zeros(shape, dtype=complex)
        self.a2 = np.zeros(shape)

    def add(self, batch: np.ndarray):
        self.n += batch.shape[0]
        self.s += batch.sum(axis=0)
        self.a2 += (np.abs(batch) ** 2).sum(axis=0)

    @property
    def mean(self):
        return self.s / self.n

    @property
    def var(self):
        return np.maximum(self.a2 / self.n - np.abs(self.mean) ** 2, 0.0)

    @property
    def mean_sq_debiased(self):
        """Nearly unbiased estimate of |E x|^2."""
        return np.abs(self.mean) ** 2 - self.var / self.n

    @property
    def mean_sq_stderr(self):
        return np.sqrt(2.0 * np.abs(self.mean) ** 2 * self.var / self.n)

    @property
    def mean_stderr(self):
        """Standard error of the complex mean (total, both components)."""
        return np.sqrt(self.var / self.n)


def synthetic_gains(M: int, N: int, K: int, L: int, seed: int,
                    low: float = 0.5, high: float = 2.0) -> LinkGains:
    """Order-one link gains for statistically powerful identity checks."""
    rng = np.random.default_rng([_STREAM_SYNTH, seed])
    return LinkGains(
        zeta_f=rng.uniform(low, high, (M, K)),
        zeta_g=rng.uniform(low, high, (N, L)),
        zeta_u=rng.uniform(low, high, (N, K)),
        zeta_v=rng.uniform(low, high, (M, L)),
    )


# ---------------------------------------------------------------------------
# Realization-level primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelRealization:
    """One vectorized batch of fading draws (leading axis = trials)."""

    f: np.ndarray
    g: np.ndarray
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class EstimationRealization:
    """Uplink estimates for a batch: y blocks, estimates, and errors."""

    f_hat: np.ndarray
    g_hat: np.ndarray
    eps_f: np.ndarray
    eps_g: np.ndarray
    y_P: np.ndarray
    y_S: np.ndarray


def _draw_channel_chunk(rng, gains: LinkGains, c: int,
                        clusters: tuple | None = None) -> ChannelRealization:
    zf, zg, zu, zv = gains.zeta_f, gains.zeta_g, gains.zeta_u, gains.zeta_v
    if clusters is not None:
        A, B = clusters
        zf = cluster_view(zf, A)
        zg = cluster_view(zg, B)
        zu = cluster_view(zu, A)
        zv = cluster_view(zv, B)
    return ChannelRealization(
        f=_cn(rng, zf, (c,) + zf.shape),
        g=_cn(rng, zg, (c,) + zg.shape),
        u=_cn(rng, zu, (c,) + zu.shape),
        v=_cn(rng, zv, (c,) + zv.shape),
    )


def draw_channels(gains: LinkGains, seed: int, trials: int,
                  clusters: tuple | None = None, chunk: int = CHUNK):
    """Deterministic stream of channel batches under the given seed."""
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_DRAW])
    for c in _chunks(trials, chunk):
        yield _draw_channel_chunk(rng, gains, c, clusters)


def simulate_ul_estimation(real: ChannelRealization, stats,
                           rng: np.random.Generator) -> EstimationRealization:
    """Replay uplink training on a channel batch.

    With per-user pilots (UlEstimateStats) the post-correlation block for
    PU k carries the partner SU's channel when the pilot is shared; with
    cluster pilots (NomaUlStats) every block is the in-cluster channel sum
    plus, for shared clusters, the partner cluster's sum.
    """
    sq = np.sqrt(stats.P_pilot)
    if isinstance(stats, NomaUlStats):
        c = real.f.shape[0]
        y_P = sq * real.f.sum(axis=3) + _cn(rng, 1.0, (c,) + real.f.shape[1:3])
        for a in np.where(stats.pc_shared)[0]:
            y_P[:, :, a] += sq * real.v[:, :, stats.pc_partner[a]].sum(axis=2)
        y_S = sq * real.g.sum(axis=3) + _cn(rng, 1.0, (c,) + real.g.shape[1:3])
        for b in np.where(stats.sc_shared)[0]:
            y_S[:, :, b] += sq * real.u[:, :, stats.sc_partner[b]].sum(axis=2)
        f_hat = stats.c_f * y_P[:, :, :, None]
        g_hat = stats.c_g * y_S[:, :, :, None]
    else:
        y_P = sq * real.f + _cn(rng, 1.0, real.f.shape)
        for k in np.where(stats.pu_shared)[0]:
            y_P[:, :, k] += sq * real.v[:, :, stats.pu_partner[k]]
        y_S = sq * real.g + _cn(rng, 1.0, real.g.shape)
        for l in np.where(stats.su_shared)[0]:
            y_S[:, :, l] += sq * real.u[:, :, stats.su_partner[l]]
        f_hat = stats.c_P * y_P
        g_hat = stats.c_S * y_S
    return EstimationRealization(f_hat=f_hat, g_hat=g_hat,
                                 eps_f=real.f - f_hat, eps_g=real.g - g_hat,
                                 y_P=y_P, y_S=y_S)


def _draw_symbols(rng, sic_theta: np.ndarray, c: int):
    """True symbols and their SIC-side estimates with correlation theta."""
    q_hat = _cn(rng, 1.0, (c,) + sic_theta.shape)
    err = _cn(rng, 1.0 - sic_theta**2, q_hat.shape)
    return sic_theta * q_hat + err, q_hat


# ---------------------------------------------------------------------------
# Orthogonal-access reports
# ---------------------------------------------------------------------------

def empirical_ul_estimation(gains: LinkGains, stats: UlEstimateStats,
                            seed: int, trials: int) -> MomentReport:
    """Estimation identities: E|f_hat|^2 = rho, error variance zeta - rho,
    and estimate/error orthogonality."""
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_UL])
    M, K = gains.zeta_f.shape
    N, L = gains.zeta_g.shape
    fhat2 = _RealAcc((M, K))
    ghat2 = _RealAcc((N, L))
    ferr2 = _RealAcc((M, K))
    gerr2 = _RealAcc((N, L))
    fortho = _ComplexAcc((K,))
    gortho = _ComplexAcc((L,))

    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c)
        est = simulate_ul_estimation(real, stats, rng)
        fhat2.add(np.abs(est.f_hat) ** 2)
        ghat2.add(np.abs(est.g_hat) ** 2)
        ferr2.add(np.abs(est.eps_f) ** 2)
        gerr2.add(np.abs(est.eps_g) ** 2)
        fortho.add(np.einsum("tmk,tmk->tk", est.f_hat, np.conj(est.eps_f)))
        gortho.add(np.einsum("tnl,tnl->tl", est.g_hat, np.conj(est.eps_g)))

    rep = MomentReport("ul_estimation")
    for m in range(M):
        for k in range(K):
            rep.add(f"E|f_hat[{m},{k}]|^2 = rho_f", stats.rho_f[m, k],
                    fhat2.mean[m, k], fhat2.stderr[m, k])
            rep.add(f"E|f_err[{m},{k}]|^2 = zeta-rho",
                    gains.zeta_f[m, k] - stats.rho_f[m, k],
                    ferr2.mean[m, k], ferr2.stderr[m, k])
    for n in range(N):
        for l in range(L):
            rep.add(f"E|g_hat[{n},{l}]|^2 = rho_g", stats.rho_g[n, l],
                    ghat2.mean[n, l], ghat2.stderr[n, l])
            rep.add(f"E|g_err[{n},{l}]|^2 = zeta-rho",
                    gains.zeta_g[n, l] - stats.rho_g[n, l],
                    gerr2.mean[n, l], gerr2.stderr[n, l])
    for k in range(K):
        rep.add(f"orthogonality f[{k}]", 0.0, abs(fortho.mean[k]),
                fortho.mean_stderr[k])
    for l in range(L):
        rep.add(f"orthogonality g[{l}]", 0.0, abs(gortho.mean[l]),
                gortho.mean_stderr[l])
    return rep


def empirical_sinr_oma(gains: LinkGains, stats: UlEstimateStats,
                       clusters: ClusterAssignment, alloc: PowerAllocation,
                       seed: int, trials: int,
                       noise_power: float = 1.0) -> MomentReport:
    """Per-term and assembled validation of the statistical-CSI SINRs.

    Direct rows measure each denominator group as the power of its
    aggregate signal. The assembled rows rebuild both SINR formulas from
    per-link measured moments (rho estimates), which keeps them sharp even
    when the aggregate coherent mean is noise-limited.
    """
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_SINR])
    M, K = gains.zeta_f.shape
    N, L = gains.zeta_g.shape
    dP, dS = clusters.delta_P, clusters.delta_S
    wP = dP * np.sqrt(alloc.eta_P)
    wS = dS * np.sqrt(alloc.eta_S)

    des_P = _ComplexAcc((K,))
    des_S = _ComplexAcc((L,))
    beams_P = _RealAcc((K, K))   # |beam i at user k|^2
    beams_S = _RealAcc((L, L))
    cci_P = _RealAcc((K,))
    cci_S = _RealAcc((L,))
    rho_f_hat = _RealAcc((M, K))
    rho_g_hat = _RealAcc((N, L))
    rho_u_hat = _ComplexAcc((N, K))
    rho_v_hat = _ComplexAcc((M, L))

    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c)
        est = simulate_ul_estimation(real, stats, rng)
        f, g, u, v = real.f, real.g, real.u, real.v
        f_hat, g_hat = est.f_hat, est.g_hat

        des_P.add(np.einsum("mk,tmk,tmk->tk", wP, f, np.conj(f_hat)))
        des_S.add(np.einsum("nl,tnl,tnl->tl", wS, g, np.conj(g_hat)))
        beams_P.add(np.abs(np.einsum("tmk,mi,tmi->tki", f, wP, np.conj(f_hat))) ** 2)
        beams_S.add(np.abs(np.einsum("tnl,nj,tnj->tlj", g, wS, np.conj(g_hat))) ** 2)
        cci_P.add(np.abs(np.einsum("tnk,nj,tnj->tk", u, wS, np.conj(g_hat))) ** 2)
        cci_S.add(np.abs(np.einsum("tml,mi,tmi->tl", v, wP, np.conj(f_hat))) ** 2)

        rho_f_hat.add(np.abs(f_hat) ** 2)
        rho_g_hat.add(np.abs(g_hat) ** 2)
        cross_u = np.zeros((c, N, K), dtype=complex)
        for k in np.where(stats.pu_shared)[0]:
            cross_u[:, :, k] = u[:, :, k] * np.conj(g_hat[:, :, stats.pu_partner[k]])
        rho_u_hat.add(cross_u)
        cross_v = np.zeros((c, M, L), dtype=complex)
        for l in np.where(stats.su_shared)[0]:
            cross_v[:, :, l] = v[:, :, l] * np.conj(f_hat[:, :, stats.su_partner[l]])
        rho_v_hat.add(cross_v)

    rep = MomentReport("oma_sinr")
    mean_P = np.sum(wP * stats.rho_f, axis=0)
    mean_S = np.sum(wS * stats.rho_g, axis=0)
    var_cf_P = np.einsum("mk,mk,mk->k", dP * alloc.eta_P, stats.rho_f, gains.zeta_f)
    var_cf_S = np.einsum("nl,nl,nl->l", dS * alloc.eta_S, stats.rho_g, gains.zeta_g)
    inter_cf_P = gains.zeta_f.T @ (dP * alloc.eta_P * stats.rho_f)  # [k, i]
    inter_cf_S = gains.zeta_g.T @ (dS * alloc.eta_S * stats.rho_g)
    cci_inc, cci_coh = rates._cci_terms(stats, gains, clusters, alloc.eta_S)
    cross_inc, cross_coh = rates._cross_terms_secondary(stats, gains, clusters,
                                                        alloc.eta_P)

    for k in range(K):
        rep.add(f"desired mean P[{k}]", mean_P[k], des_P.mean.real[k],
                des_P.mean_stderr[k])
        own_var = beams_P.mean[k, k] - des_P.mean_sq_debiased[k]
        rep.add(f"own-beam variance P[{k}]", var_cf_P[k], own_var,
                beams_P.stderr[k, k] + des_P.mean_sq_stderr[k])
        for i in range(K):
            if i != k:
                rep.add(f"inter-user power P[{k},{i}]", inter_cf_P[k, i],
                        beams_P.mean[k, i], beams_P.stderr[k, i])
        rep.add(f"cci power P[{k}]", cci_inc[k] + cci_coh[k],
                cci_P.mean[k], cci_P.stderr[k])
    for l in range(L):
        rep.add(f"desired mean S[{l}]", mean_S[l], des_S.mean.real[l],
                des_S.mean_stderr[l])
        own_var = beams_S.mean[l, l] - des_S.mean_sq_debiased[l]
        rep.add(f"own-beam variance S[{l}]", var_cf_S[l], own_var,
                beams_S.stderr[l, l] + des_S.mean_sq_stderr[l])
        for j in range(L):
            if j != l:
                rep.add(f"inter-user power S[{l},{j}]", inter_cf_S[l, j],
                        beams_S.mean[l, j], beams_S.stderr[l, j])
        rep.add(f"cci power S[{l}]", cross_inc[l] + cross_coh[l],
                cci_S.mean[l], cci_S.stderr[l])

    # assembled SINRs from per-link moments, strict 2 percent
    gamma_cf_P = rates.sinr_primary_oma(stats, gains, clusters, alloc, noise_power)
    gamma_cf_S = rates.sinr_secondary_oma(stats, gains, clusters, alloc, noise_power)
    rf, rg = rho_f_hat.mean, rho_g_hat.mean
    ru, rv = rho_u_hat.mean.real, rho_v_hat.mean.real
    num_P = alloc.P_P * np.sum(wP * rf, axis=0) ** 2
    bu_P = gains.zeta_f.T @ np.sum(dP * alloc.eta_P * rf, axis=1)
    z_inc = gains.zeta_u.T @ np.sum(dS * alloc.eta_S * rg, axis=1)
    z_coh = np.zeros(K)
    for k in np.where(stats.pu_shared)[0]:
        pk = stats.pu_partner[k]
        z_coh[k] = np.sum(dS[:, pk] * np.sqrt(alloc.eta_S[:, pk])
                          * ru[:, k]) ** 2
    gam_P = num_P / (alloc.P_P * bu_P + alloc.P_S * (z_inc + z_coh) + noise_power)
    num_S = alloc.P_S * np.sum(wS * rg, axis=0) ** 2
    bu_S = gains.zeta_g.T @ np.sum(dS * alloc.eta_S * rg, axis=1)
    x_inc = gains.zeta_v.T @ np.sum(dP * alloc.eta_P * rf, axis=1)
    x_coh = np.zeros(L)
    for l in np.where(stats.su_shared)[0]:
        pl = stats.su_partner[l]
        x_coh[l] = np.sum(dP[:, pl] * np.sqrt(alloc.eta_P[:, pl])
                          * rv[:, l]) ** 2
    gam_S = num_S / (alloc.P_S * bu_S + alloc.P_P * (x_inc + x_coh) + noise_power)
    for k in range(K):
        rep.add(f"assembled gamma P[{k}]", gamma_cf_P[k], gam_P[k], 0.0)
    for l in range(L):
        rep.add(f"assembled gamma S[{l}]", gamma_cf_S[l], gam_S[l], 0.0)
    return rep


def empirical_Zk(gains: LinkGains, stats: UlEstimateStats,
                 clusters: ClusterAssignment, eta_S: np.ndarray,
                 seed: int, trials: int) -> MomentReport:
    """Measured CCI power per unit P_S at every PU vs its closed form."""
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_ZK])
    K = gains.zeta_u.shape[1]
    wS = clusters.delta_S * np.sqrt(eta_S)
    acc = _RealAcc((K,))
    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c)
        est = simulate_ul_estimation(real, stats, rng)
        acc.add(np.abs(np.einsum("tnk,nj,tnj->tk", real.u, wS,
                                 np.conj(est.g_hat))) ** 2)
    Z_cf = rates.secondary_cci_Zk(stats, gains, clusters, eta_S)
    rep = MomentReport("cci_Zk")
    for k in range(K):
        rep.add(f"Z[{k}] per unit P_S", Z_cf[k], acc.mean[k], acc.stderr[k])
    return rep


def empirical_dl_pilot(gains: LinkGains, stats: UlEstimateStats,
                       clusters: ClusterAssignment, alloc: PowerAllocation,
                       dl: DlPilotStatsOma, tau_c: int, tau_p: int, tau_pd: int,
                       seed: int, trials: int, noise_power: float = 1.0):
    """Downlink-pilot identities plus the Jensen-bound audit.

    Rows: estimation error kappa, estimate power, cross beam powers, total
    contamination power, for both networks. Returns (MomentReport,
    JensenSummary) where the summary holds the per-user closed-form upper
    bound next to the sampled mean rate.
    """
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_DL])
    M, K = gains.zeta_f.shape
    N, L = gains.zeta_g.shape
    dP, dS = clusters.delta_P, clusters.delta_S
    wP = dP * np.sqrt(alloc.eta_P)
    wS = dS * np.sqrt(alloc.eta_S)
    p = dl.P_pd
    sq = np.sqrt(p)

    coef_P = sq * dl.v_Pkk / (p * (dl.v_Pkk + dl.u_Pkk) + 1.0)
    coef_S = sq * dl.v_Sll / (p * (dl.v_Sll + dl.u_Sll) + 1.0)
    den_P = rates.dlpilot_denominator_primary(dl, stats, gains, clusters, alloc,
                                              noise_power)
    den_S = rates.dlpilot_denominator_secondary(dl, stats, gains, clusters,
                                                alloc, noise_power)
    prelog = (tau_c - tau_p - tau_pd) / tau_c

    err_P = _RealAcc((K,))
    pow_P = _RealAcc((K,))
    beams_P = _RealAcc((K, K))
    lam_P = _RealAcc((K,))
    rate_P = _RealAcc((K,))
    err_S = _RealAcc((L,))
    pow_S = _RealAcc((L,))
    beams_S = _RealAcc((L, L))
    lam_S = _RealAcc((L,))
    rate_S = _RealAcc((L,))

    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c)
        est = simulate_ul_estimation(real, stats, rng)
        mu_P = np.einsum("tmk,mi,tmi->tki", real.f, wP, np.conj(est.f_hat))
        lam_tP = np.einsum("tnk,nj,tnj->tkj", real.u, wS, np.conj(est.g_hat))
        mu_S = np.einsum("tnl,nj,tnj->tlj", real.g, wS, np.conj(est.g_hat))
        lam_tS = np.einsum("tml,mi,tmi->tli", real.v, wP, np.conj(est.f_hat))
        noise_dp_P = _cn(rng, 1.0, (c, K))
        noise_dp_S = _cn(rng, 1.0, (c, L))

        own_P = np.einsum("tkk->tk", mu_P)
        contam_P = np.zeros((c, K), dtype=complex)
        for k in np.where(stats.pu_shared)[0]:
            contam_P[:, k] = lam_tP[:, k, stats.pu_partner[k]]
        y = sq * (own_P + contam_P) + noise_dp_P
        mu_hat = dl.mu_mean_P + coef_P * (y - sq * (dl.mu_mean_P
                                                    + dl.lambda_mean_P))
        err_P.add(np.abs(own_P - mu_hat) ** 2)
        pow_P.add(np.abs(mu_hat) ** 2)
        beams_P.add(np.abs(mu_P) ** 2)
        lam_P.add(np.sum(np.abs(lam_tP) ** 2, axis=2))
        rate_P.add(prelog * np.log2(1.0 + alloc.P_P * np.abs(mu_hat) ** 2 / den_P))

        own_S = np.einsum("tll->tl", mu_S)
        contam_S = np.zeros((c, L), dtype=complex)
        for l in np.where(stats.su_shared)[0]:
            contam_S[:, l] = lam_tS[:, l, stats.su_partner[l]]
        y = sq * (own_S + contam_S) + noise_dp_S
        mu_hat = dl.mu_mean_S + coef_S * (y - sq * (dl.mu_mean_S
                                                    + dl.lambda_mean_S))
        err_S.add(np.abs(own_S - mu_hat) ** 2)
        pow_S.add(np.abs(mu_hat) ** 2)
        beams_S.add(np.abs(mu_S) ** 2)
        lam_S.add(np.sum(np.abs(lam_tS) ** 2, axis=2))
        rate_S.add(prelog * np.log2(1.0 + alloc.P_S * np.abs(mu_hat) ** 2 / den_S))

    rep = MomentReport("dl_pilot")
    cci_inc, cci_coh = rates._cci_terms(stats, gains, clusters, alloc.eta_S)
    cross_inc, cross_coh = rates._cross_terms_secondary(stats, gains, clusters,
                                                        alloc.eta_P)
    for k in range(K):
        rep.add(f"kappa P[{k}]", dl.kappa_P[k], err_P.mean[k], err_P.stderr[k])
        rep.add(f"E|mu_hat P[{k}]|^2",
                dl.mu_mean_P[k] ** 2 + dl.v_Pkk[k] - dl.kappa_P[k],
                pow_P.mean[k], pow_P.stderr[k])
        for i in range(K):
            if i != k:
                rep.add(f"beam power P[{k},{i}]", dl.v_Pki[k, i],
                        beams_P.mean[k, i], beams_P.stderr[k, i])
        rep.add(f"contamination power P[{k}]", cci_inc[k] + cci_coh[k],
                lam_P.mean[k], lam_P.stderr[k])
    for l in range(L):
        rep.add(f"kappa S[{l}]", dl.kappa_S[l], err_S.mean[l], err_S.stderr[l])
        rep.add(f"E|mu_hat S[{l}]|^2",
                dl.mu_mean_S[l] ** 2 + dl.v_Sll[l] - dl.kappa_S[l],
                pow_S.mean[l], pow_S.stderr[l])
        for j in range(L):
            if j != l:
                rep.add(f"beam power S[{l},{j}]", dl.v_Slj[l, j],
                        beams_S.mean[l, j], beams_S.stderr[l, j])
        rep.add(f"contamination power S[{l}]", cross_inc[l] + cross_coh[l],
                lam_S.mean[l], lam_S.stderr[l])

    gamma_ub_P = rates.sinr_primary_oma_dlpilot(dl, stats, gains, clusters,
                                                alloc, noise_power)
    gamma_ub_S = rates.sinr_secondary_oma_dlpilot(dl, stats, gains, clusters,
                                                  alloc, noise_power)
    jensen = JensenSummary(
        r_ub_primary=rates.rate_dlpilot_upperbound(gamma_ub_P, tau_c, tau_p,
                                                   tau_pd),
        mean_rate_primary=rate_P.mean,
        r_ub_secondary=rates.rate_dlpilot_upperbound(gamma_ub_S, tau_c, tau_p,
                                                     tau_pd),
        mean_rate_secondary=rate_S.mean,
        stderr_primary=rate_P.stderr,
        stderr_secondary=rate_S.stderr,
    )
    return rep, jensen


# ---------------------------------------------------------------------------
# Cluster (NOMA) reports
# ---------------------------------------------------------------------------

def _noma_base_blocks(real: ChannelRealization, est: EstimationRealization,
                      nstats: NomaUlStats):
    """Base products channel * conj(pilot block) behind every within-cluster
    estimate; cross-network bases are zero for unshared clusters."""
    c = real.f.shape[0]
    N, A, K = real.u.shape[1:]
    M, B, L = real.v.shape[1:]
    base_f = real.f * np.conj(est.y_P)[:, :, :, None]
    base_g = real.g * np.conj(est.y_S)[:, :, :, None]
    base_u = np.zeros((c, N, A, K), dtype=complex)
    for a in np.where(nstats.pc_shared)[0]:
        base_u[:, :, a] = real.u[:, :, a] * np.conj(
            est.y_S[:, :, nstats.pc_partner[a]])[:, :, None]
    base_v = np.zeros((c, M, B, L), dtype=complex)
    for b in np.where(nstats.sc_shared)[0]:
        base_v[:, :, b] = real.v[:, :, b] * np.conj(
            est.y_P[:, :, nstats.sc_partner[b]])[:, :, None]
    return base_f, base_g, base_u, base_v


def _intra_coherent_hat(base_acc: _ComplexAcc, c_block: np.ndarray,
                        eta: np.ndarray):
    """Per-beam debiased coherent powers (sum_ap sqrt(eta) wbar)^2.

    Returns the power estimates [a, k, i] plus the aggregated complex
    means and their bias so callers can build error bars for masked
    sums. Beams of one cluster share a single base block, so per-beam
    errors are fully correlated and cannot be combined in quadrature.
    """
    W = np.sqrt(eta) * c_block                          # [m, a, i]
    s = np.einsum("mai,mak->aki", W, base_acc.mean)
    bias = np.einsum("mai,mak->aki", W**2, base_acc.var) / base_acc.n
    return np.abs(s) ** 2 - bias, s, bias


def _cross_coherent_hat(base_acc: _ComplexAcc, c_other: np.ndarray,
                        eta_other: np.ndarray, shared, partner):
    """coh_hat[a, k]: debiased squared aggregate of the pilot-sharing means
    of the partner cluster's beams, summed over beams, plus a conservative
    stderr that accounts for the shared base block across beams."""
    A, K = base_acc.mean.shape[1:]
    out = np.zeros((A, K))
    err = np.zeros((A, K))
    for a in np.where(shared)[0]:
        b = partner[a]
        W = np.sqrt(eta_other[:, b]) * c_other[:, b]    # [n, j]
        vn = base_acc.var[:, a] / base_acc.n            # [n, k]
        s = np.einsum("nj,nk->jk", W, base_acc.mean[:, a])
        bias = np.einsum("nj,nk->jk", W**2, vn)
        out[a] = np.sum(np.abs(s) ** 2 - bias, axis=0)
        g = np.einsum("nj,jk->nk", W, np.conj(s))
        err[a] = np.sqrt(4.0 * np.einsum("nk,nk->k", np.abs(g) ** 2, vn)
                         + 2.0 * np.sum(bias**2, axis=0))
    return out, err


def _assembled_noma_gammas(nstats: NomaUlStats, gains: LinkGains,
                           alloc: PowerAllocation, sic: SicModel,
                           alpha_f_hat, alpha_g_hat, base_f, base_g,
                           base_u, base_v, noise_power: float):
    """Rebuild both cluster SINR formulas from per-AP measured moments.

    Coherent groups aggregate the complex base-block means across APs
    before squaring, mirroring the closed forms exactly.
    """
    A = nstats.alpha_f.shape[1]
    B = nstats.alpha_g.shape[1]
    K = nstats.alpha_f.shape[2]
    L = nstats.alpha_g.shape[2]
    zf = cluster_view(gains.zeta_f, A)
    zg = cluster_view(gains.zeta_g, B)
    zu = cluster_view(gains.zeta_u, A)
    zv = cluster_view(gains.zeta_v, B)
    eta_P, eta_S = alloc.eta_P, alloc.eta_S

    lower = np.tril(np.ones((K, K)), -1)
    upper = np.triu(np.ones((K, K)), 1)
    lower_S = np.tril(np.ones((L, L)), -1)
    upper_S = np.triu(np.ones((L, L)), 1)

    coh_f, _, _ = _intra_coherent_hat(base_f, nstats.c_f, eta_P)
    coh_g, _, _ = _intra_coherent_hat(base_g, nstats.c_g, eta_S)
    coh_u, _ = _cross_coherent_hat(base_u, nstats.c_g, eta_S,
                                   nstats.pc_shared, nstats.pc_partner)
    coh_v, _ = _cross_coherent_hat(base_v, nstats.c_f, eta_P,
                                   nstats.sc_shared, nstats.sc_partner)

    num_P = alloc.P_P * np.einsum("mak,mak->ak", np.sqrt(eta_P), alpha_f_hat) ** 2
    bu_P = np.einsum("m,mak->ak",
                     np.einsum("mai,mai->m", eta_P, alpha_f_hat), zf)
    I1 = np.einsum("aki,ki->ak", coh_f, lower)
    I2 = 2.0 * np.einsum("aki,ai,ki->ak", coh_f, 1.0 - sic.theta_P, upper)
    cci = np.einsum("n,nak->ak",
                    np.einsum("nbj,nbj->n", eta_S, alpha_g_hat), zu)
    gam_P = num_P / (alloc.P_P * (bu_P + I1 + I2)
                     + alloc.P_S * (cci + coh_u) + noise_power)

    num_S = alloc.P_S * np.einsum("nbl,nbl->bl", np.sqrt(eta_S), alpha_g_hat) ** 2
    bu_S = np.einsum("n,nbl->bl",
                     np.einsum("nbj,nbj->n", eta_S, alpha_g_hat), zg)
    J1 = np.einsum("blj,lj->bl", coh_g, lower_S)
    J2 = 2.0 * np.einsum("blj,bj,lj->bl", coh_g, 1.0 - sic.theta_S, upper_S)
    cross = np.einsum("m,mbl->bl",
                      np.einsum("mai,mai->m", eta_P, alpha_f_hat), zv)
    gam_S = num_S / (alloc.P_S * (bu_S + J1 + J2)
                     + alloc.P_P * (cross + coh_v) + noise_power)
    return gam_P, gam_S


def empirical_noma(gains: LinkGains, nstats: NomaUlStats,
                   alloc: PowerAllocation, sic: SicModel, seed: int,
                   trials: int) -> MomentReport:
    """Cluster estimation and interference identities.

    alpha identities are direct expectations; within-cluster and
    shared-cluster coherent terms aggregate the complex base-block means
    across APs before squaring (debiased), matching how contaminated
    beams add in amplitude; SIC residual rows validate the 2(1 - theta)
    excess exactly per (AP, user) pair. Intended for order-one synthetic
    gains, where every row has real statistical power.
    """
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_NOMA_ID])
    M, A, K = nstats.alpha_f.shape
    N, B, L = nstats.alpha_g.shape
    zf = cluster_view(gains.zeta_f, A)
    zg = cluster_view(gains.zeta_g, B)
    zu = cluster_view(gains.zeta_u, A)
    zv = cluster_view(gains.zeta_v, B)
    eta_P, eta_S = alloc.eta_P, alloc.eta_S
    wbar_f = nstats.alpha_f[:, :, :, None] * zf[:, :, None, :] / zf[:, :, :, None]
    wbar_g = nstats.alpha_g[:, :, :, None] * zg[:, :, None, :] / zg[:, :, :, None]

    a2_f = _RealAcc((A, K))
    a2_g = _RealAcc((B, L))
    mean_f = _ComplexAcc((A, K))
    mean_g = _ComplexAcc((B, L))
    base_f = _ComplexAcc((M, A, K))
    base_g = _ComplexAcc((N, B, L))
    base_u = _ComplexAcc((N, A, K))
    base_v = _ComplexAcc((M, B, L))
    sic_res = _RealAcc((A, K))
    sic_res_perfect = _RealAcc((A, K))
    sic_res_S = _RealAcc((B, L))

    upper = np.triu(np.ones((K, K)), 1)
    upper_S = np.triu(np.ones((L, L)), 1)

    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c, clusters=(A, B))
        est = simulate_ul_estimation(real, nstats, rng)
        a2_f.add(np.einsum("tmak->tak", np.abs(est.f_hat) ** 2))
        a2_g.add(np.einsum("tnbl->tbl", np.abs(est.g_hat) ** 2))
        mean_f.add(np.einsum("tmak,tmak->tak", real.f, np.conj(est.f_hat)))
        mean_g.add(np.einsum("tnbl,tnbl->tbl", real.g, np.conj(est.g_hat)))
        bf, bg, bu, bv = _noma_base_blocks(real, est, nstats)
        base_f.add(bf)
        base_g.add(bg)
        base_u.add(bu)
        base_v.add(bv)

        q_P, qhat_P = _draw_symbols(rng, sic.theta_P, c)
        q_P1, qhat_P1 = _draw_symbols(rng, np.ones_like(sic.theta_P), c)
        q_S, qhat_S = _draw_symbols(rng, sic.theta_S, c)
        w_f = real.f[:, :, :, :, None] * np.conj(est.f_hat)[:, :, :, None, :]
        res = w_f * q_P[:, None, :, None, :] - wbar_f * qhat_P[:, None, :, None, :]
        sic_res.add(np.einsum("tmaki,mai,ki->tak", np.abs(res) ** 2, eta_P, upper))
        res = w_f * q_P1[:, None, :, None, :] - wbar_f * qhat_P1[:, None, :, None, :]
        sic_res_perfect.add(np.einsum("tmaki,mai,ki->tak", np.abs(res) ** 2,
                                      eta_P, upper))
        w_g = real.g[:, :, :, :, None] * np.conj(est.g_hat)[:, :, :, None, :]
        res = w_g * q_S[:, None, :, None, :] - wbar_g * qhat_S[:, None, :, None, :]
        sic_res_S.add(np.einsum("tnblj,nbj,lj->tbl", np.abs(res) ** 2,
                                eta_S, upper_S))

    rep = MomentReport("noma_identities")
    alpha_f_sum = nstats.alpha_f.sum(axis=0)
    alpha_g_sum = nstats.alpha_g.sum(axis=0)
    for a in range(A):
        for k in range(K):
            rep.add(f"sum_m E|f_hat[{a},{k}]|^2", alpha_f_sum[a, k],
                    a2_f.mean[a, k], a2_f.stderr[a, k], rel_tol=0.01)
            rep.add(f"sum_m E[f f_hat*][{a},{k}]", alpha_f_sum[a, k],
                    mean_f.mean.real[a, k], mean_f.mean_stderr[a, k],
                    rel_tol=0.01)
    for b in range(B):
        for l in range(L):
            rep.add(f"sum_n E|g_hat[{b},{l}]|^2", alpha_g_sum[b, l],
                    a2_g.mean[b, l], a2_g.stderr[b, l], rel_tol=0.01)
            rep.add(f"sum_n E[g g_hat*][{b},{l}]", alpha_g_sum[b, l],
                    mean_g.mean.real[b, l], mean_g.mean_stderr[b, l],
                    rel_tol=0.01)

    # coherent within-cluster term: beams add in amplitude across APs
    lower = np.tril(np.ones((K, K)), -1)
    coh_f, s_f, bias_f = _intra_coherent_hat(base_f, nstats.c_f, eta_P)
    i1_emp = np.einsum("aki,ki->ak", coh_f, lower)
    g = np.einsum("mai,aki,ki->mak", np.sqrt(eta_P) * nstats.c_f,
                  np.conj(s_f), lower)
    i1_se = np.sqrt(4.0 * np.einsum("mak,mak->ak", np.abs(g) ** 2,
                                    base_f.var / base_f.n)
                    + 2.0 * np.einsum("aki,ki->ak", bias_f**2, lower))
    i1_cf = np.einsum("aki,ki->ak",
                      np.einsum("mai,maki->aki", np.sqrt(eta_P), wbar_f) ** 2,
                      lower)
    for a in range(A):
        for k in range(1, K):
            rep.add(f"coherent intra term P[{a},{k}]", i1_cf[a, k],
                    i1_emp[a, k], i1_se[a, k])
    lower_S = np.tril(np.ones((L, L)), -1)
    coh_g, s_g, bias_g = _intra_coherent_hat(base_g, nstats.c_g, eta_S)
    i1S_emp = np.einsum("blj,lj->bl", coh_g, lower_S)
    g = np.einsum("nbj,blj,lj->nbl", np.sqrt(eta_S) * nstats.c_g,
                  np.conj(s_g), lower_S)
    i1S_se = np.sqrt(4.0 * np.einsum("nbl,nbl->bl", np.abs(g) ** 2,
                                     base_g.var / base_g.n)
                     + 2.0 * np.einsum("blj,lj->bl", bias_g**2, lower_S))
    i1S_cf = np.einsum("blj,lj->bl",
                       np.einsum("nbj,nblj->blj", np.sqrt(eta_S), wbar_g) ** 2,
                       lower_S)
    for b in range(B):
        for l in range(1, L):
            rep.add(f"coherent intra term S[{b},{l}]", i1S_cf[b, l],
                    i1S_emp[b, l], i1S_se[b, l])

    # coherent cross term through the shared pilot, per partner beam
    coh_u, coh_u_se = _cross_coherent_hat(base_u, nstats.c_g, eta_S,
                                          nstats.pc_shared, nstats.pc_partner)
    for a in np.where(nstats.pc_shared)[0]:
        b = nstats.pc_partner[a]
        w = np.sqrt(eta_S[:, b]) * nstats.alpha_g[:, b] / zg[:, b]
        cf = np.sum(np.einsum("nj,nk->jk", w, zu[:, a]) ** 2, axis=0)
        for k in range(K):
            rep.add(f"coherent cross term P[{a},{k}]", cf[k],
                    coh_u[a, k], coh_u_se[a, k])
    coh_v, coh_v_se = _cross_coherent_hat(base_v, nstats.c_f, eta_P,
                                          nstats.sc_shared, nstats.sc_partner)
    for b in np.where(nstats.sc_shared)[0]:
        a = nstats.sc_partner[b]
        w = np.sqrt(eta_P[:, a]) * nstats.alpha_f[:, a] / zf[:, a]
        cf = np.sum(np.einsum("mi,ml->il", w, zv[:, b]) ** 2, axis=0)
        for l in range(L):
            rep.add(f"coherent cross term S[{b},{l}]", cf[l],
                    coh_v[b, l], coh_v_se[b, l])

    # SIC residual power: variance part + 2(1 - theta) |mean|^2 per (m, i > k)
    var_part = np.einsum("mai,mak,ki->ak", eta_P * nstats.alpha_f, zf, upper)
    excess = 2.0 * np.einsum("mai,ai,maki,ki->ak", eta_P, 1.0 - sic.theta_P,
                             wbar_f**2, upper)
    for a in range(A):
        for k in range(K - 1):
            rep.add(f"sic residual P[{a},{k}] theta={sic.theta_P[a, 0]:g}",
                    var_part[a, k] + excess[a, k], sic_res.mean[a, k],
                    sic_res.stderr[a, k], rel_tol=0.03)
            rep.add(f"sic residual P[{a},{k}] theta=1",
                    var_part[a, k], sic_res_perfect.mean[a, k],
                    sic_res_perfect.stderr[a, k], rel_tol=0.03)
    var_part_S = np.einsum("nbj,nbl,lj->bl", eta_S * nstats.alpha_g, zg, upper_S)
    excess_S = 2.0 * np.einsum("nbj,bj,nblj,lj->bl", eta_S, 1.0 - sic.theta_S,
                               wbar_g**2, upper_S)
    for b in range(B):
        for l in range(L - 1):
            rep.add(f"sic residual S[{b},{l}] theta={sic.theta_S[b, 0]:g}",
                    var_part_S[b, l] + excess_S[b, l], sic_res_S.mean[b, l],
                    sic_res_S.stderr[b, l], rel_tol=0.03)

    # non-gating diagnostic: aggregate vs per-AP coherent power (i < k)
    agg = np.zeros((A, K))
    per_ap = np.zeros((A, K))
    for a in range(A):
        for k in range(1, K):
            w_mi = nstats.c_f[:, a, :k] * base_f.mean[:, a, k, None]  # [m, i]
            amp = np.sqrt(eta_P[:, a, :k]) * w_mi
            agg[a, k] = np.abs(amp.sum()) ** 2
            per_ap[a, k] = np.sum(eta_P[:, a, :k] * np.abs(w_mi) ** 2)
    rep.diagnostics["coherent_intra_aggregate_vs_per_ap"] = (agg, per_ap)
    return rep


def empirical_sinr_noma(gains: LinkGains, nstats: NomaUlStats,
                        alloc: PowerAllocation, sic: SicModel, seed: int,
                        trials: int, noise_power: float = 1.0) -> MomentReport:
    """Direct group powers, the CCI functional, and assembled cluster SINRs.

    Group rows measure each denominator block as the power of its
    aggregated signal with independent unit data symbols per beam; the
    symbols matter here because a cluster's estimates are scaled copies of
    one pilot block and would otherwise add coherently across beams too.
    Assembled rows rebuild both SINR formulas from per-AP measured
    moments, strict 2 percent at any scale.
    """
    rng = np.random.default_rng([_STREAM_MC, seed, _TAG_NOMA_SINR])
    M, A, K = nstats.alpha_f.shape
    N, B, L = nstats.alpha_g.shape
    zf = cluster_view(gains.zeta_f, A)
    zg = cluster_view(gains.zeta_g, B)
    eta_P, eta_S = alloc.eta_P, alloc.eta_S
    sqeP = np.sqrt(eta_P)
    sqeS = np.sqrt(eta_S)
    wbar_f = nstats.alpha_f[:, :, :, None] * zf[:, :, None, :] / zf[:, :, :, None]
    wbar_g = nstats.alpha_g[:, :, :, None] * zg[:, :, None, :] / zg[:, :, :, None]

    des_P = _ComplexAcc((A, K))
    intra_P = _RealAcc((A, K))
    sicp_P = _RealAcc((A, K))
    inter_P = _RealAcc((A, K))
    cci_P = _RealAcc((A, K))
    des_S = _ComplexAcc((B, L))
    intra_S = _RealAcc((B, L))
    sicp_S = _RealAcc((B, L))
    inter_S = _RealAcc((B, L))
    cci_S = _RealAcc((B, L))
    a_f = _RealAcc((M, A, K))
    a_g = _RealAcc((N, B, L))
    base_f = _ComplexAcc((M, A, K))
    base_g = _ComplexAcc((N, B, L))
    base_u = _ComplexAcc((N, A, K))
    base_v = _ComplexAcc((M, B, L))

    lower = np.tril(np.ones((K, K)), -1)
    upper = np.triu(np.ones((K, K)), 1)
    lower_S = np.tril(np.ones((L, L)), -1)
    upper_S = np.triu(np.ones((L, L)), 1)

    for c in _chunks(trials):
        real = _draw_channel_chunk(rng, gains, c, clusters=(A, B))
        est = simulate_ul_estimation(real, nstats, rng)
        q_P, qhat_P = _draw_symbols(rng, sic.theta_P, c)
        q_S, qhat_S = _draw_symbols(rng, sic.theta_S, c)
        f_hat, g_hat = est.f_hat, est.g_hat

        # within-cluster estimates are scaled copies of one pilot block,
        # so every beam sum carries independent unit data symbols
        des_P.add(np.einsum("mak,tmak,tmak->tak", sqeP, real.f, np.conj(f_hat)))
        w_f = real.f[:, :, :, :, None] * np.conj(f_hat)[:, :, :, None, :]
        intra_P.add(np.abs(np.einsum("tmaki,mai,tai,ki->tak",
                                     w_f, sqeP, q_P, lower)) ** 2)
        res = w_f * q_P[:, None, :, None, :] - wbar_f * qhat_P[:, None, :, None, :]
        sicp_P.add(np.abs(np.einsum("tmaki,mai,ki->tak", res, sqeP, upper)) ** 2)
        beams_all = np.einsum("mai,tmai,tai->tm", sqeP, np.conj(f_hat), q_P)
        beams_own = np.einsum("mai,tmai,tai->tma", sqeP, np.conj(f_hat), q_P)
        inter_P.add(np.abs(np.einsum("tmak,tm->tak", real.f, beams_all)
                           - np.einsum("tmak,tma->tak", real.f, beams_own)) ** 2)
        sbeams = np.einsum("nbj,tnbj,tbj->tn", sqeS, np.conj(g_hat), q_S)
        cci_P.add(np.abs(np.einsum("tnak,tn->tak", real.u, sbeams)) ** 2)

        des_S.add(np.einsum("nbl,tnbl,tnbl->tbl", sqeS, real.g, np.conj(g_hat)))
        w_g = real.g[:, :, :, :, None] * np.conj(g_hat)[:, :, :, None, :]
        intra_S.add(np.abs(np.einsum("tnblj,nbj,tbj,lj->tbl",
                                     w_g, sqeS, q_S, lower_S)) ** 2)
        res = w_g * q_S[:, None, :, None, :] - wbar_g * qhat_S[:, None, :, None, :]
        sicp_S.add(np.abs(np.einsum("tnblj,nbj,lj->tbl", res, sqeS, upper_S)) ** 2)
        sbeams_own = np.einsum("nbj,tnbj,tbj->tnb", sqeS, np.conj(g_hat), q_S)
        inter_S.add(np.abs(np.einsum("tnbl,tn->tbl", real.g, sbeams)
                           - np.einsum("tnbl,tnb->tbl", real.g, sbeams_own)) ** 2)
        cci_S.add(np.abs(np.einsum("tmbl,tm->tbl", real.v, beams_all)) ** 2)

        a_f.add(np.abs(f_hat) ** 2)
        a_g.add(np.abs(g_hat) ** 2)
        bf, bg, bu, bv = _noma_base_blocks(real, est, nstats)
        base_f.add(bf)
        base_g.add(bg)
        base_u.add(bu)
        base_v.add(bv)

    rep = MomentReport("noma_sinr")
    mean_cf_P = np.einsum("mak,mak->ak", sqeP, nstats.alpha_f)
    mean_cf_S = np.einsum("nbl,nbl->bl", sqeS, nstats.alpha_g)
    coh_beam_P = np.einsum("mai,maki->aki", sqeP, wbar_f) ** 2
    coh_beam_S = np.einsum("nbj,nblj->blj", sqeS, wbar_g) ** 2
    i1_cf = (np.einsum("mai,mak,ki->ak", eta_P * nstats.alpha_f, zf, lower)
             + np.einsum("aki,ki->ak", coh_beam_P, lower))
    i1S_cf = (np.einsum("nbj,nbl,lj->bl", eta_S * nstats.alpha_g, zg, lower_S)
              + np.einsum("blj,lj->bl", coh_beam_S, lower_S))
    sic_cf = (np.einsum("mai,mak,ki->ak", eta_P * nstats.alpha_f, zf, upper)
              + 2.0 * np.einsum("aki,ai,ki->ak", coh_beam_P,
                                1.0 - sic.theta_P, upper))
    sicS_cf = (np.einsum("nbj,nbl,lj->bl", eta_S * nstats.alpha_g, zg, upper_S)
               + 2.0 * np.einsum("blj,bj,lj->bl", coh_beam_S,
                                 1.0 - sic.theta_S, upper_S))
    per_ap_cluster = np.einsum("mai,mai->ma", eta_P, nstats.alpha_f)
    inter_cf = (np.einsum("m,mak->ak", per_ap_cluster.sum(axis=1), zf)
                - np.einsum("ma,mak->ak", per_ap_cluster, zf))
    per_sap_cluster = np.einsum("nbj,nbj->nb", eta_S, nstats.alpha_g)
    interS_cf = (np.einsum("n,nbl->bl", per_sap_cluster.sum(axis=1), zg)
                 - np.einsum("nb,nbl->bl", per_sap_cluster, zg))
    Z_cf = rates.secondary_cci_Zak(nstats, gains, eta_S)
    zv_view = cluster_view(gains.zeta_v, B)
    Zv_cf = (np.einsum("m,mbl->bl", per_ap_cluster.sum(axis=1), zv_view)
             + rates._coherent_cross_noma(eta_P, nstats.alpha_f, zf, zv_view,
                                          nstats.sc_shared, nstats.sc_partner))

    gamma_cf_P = rates.sinr_primary_noma(nstats, gains, alloc, sic, noise_power)
    gamma_cf_S = rates.sinr_secondary_noma(nstats, gains, alloc, sic, noise_power)
    gam_P, gam_S = _assembled_noma_gammas(
        nstats, gains, alloc, sic, a_f.mean, a_g.mean,
        base_f, base_g, base_u, base_v, noise_power)

    for a in range(A):
        for k in range(K):
            rep.add(f"desired mean P[{a},{k}]", mean_cf_P[a, k],
                    des_P.mean.real[a, k], des_P.mean_stderr[a, k])
            if k > 0:
                rep.add(f"intra power P[{a},{k}]", i1_cf[a, k],
                        intra_P.mean[a, k], intra_P.stderr[a, k])
            if k < K - 1:
                rep.add(f"sic residual power P[{a},{k}]", sic_cf[a, k],
                        sicp_P.mean[a, k], sicp_P.stderr[a, k], rel_tol=0.03)
            if A > 1:
                rep.add(f"inter-cluster power P[{a},{k}]", inter_cf[a, k],
                        inter_P.mean[a, k], inter_P.stderr[a, k])
            rep.add(f"cci power Z[{a},{k}]", Z_cf[a, k], cci_P.mean[a, k],
                    cci_P.stderr[a, k])
            rep.add(f"assembled gamma P[{a},{k}]", gamma_cf_P[a, k],
                    gam_P[a, k], 0.0)
    for b in range(B):
        for l in range(L):
            rep.add(f"desired mean S[{b},{l}]", mean_cf_S[b, l],
                    des_S.mean.real[b, l], des_S.mean_stderr[b, l])
            if l > 0:
                rep.add(f"intra power S[{b},{l}]", i1S_cf[b, l],
                        intra_S.mean[b, l], intra_S.stderr[b, l])
            if l < L - 1:
                rep.add(f"sic residual power S[{b},{l}]", sicS_cf[b, l],
                        sicp_S.mean[b, l], sicp_S.stderr[b, l], rel_tol=0.03)
            if B > 1:
                rep.add(f"inter-cluster power S[{b},{l}]", interS_cf[b, l],
                        inter_S.mean[b, l], inter_S.stderr[b, l])
            rep.add(f"cci power Zv[{b},{l}]", Zv_cf[b, l], cci_S.mean[b, l],
                    cci_S.stderr[b, l])
            rep.add(f"assembled gamma S[{b},{l}]", gamma_cf_S[b, l],
                    gam_S[b, l], 0.0)
    return rep

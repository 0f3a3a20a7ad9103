"""Pilot assignment and channel-estimate statistics.

Uplink training happens once per coherence interval: every AP forms an
MMSE estimate of its local channels from the received pilot block and
uses the conjugate as its downlink precoder. Because the two networks
share pilots pairwise (PU i with SU i for the first Q pairs), each
estimate may be contaminated by the cross-network channel on the same
pilot, and that contamination is what couples the two systems beyond
plain interference power.

All quantities here are deterministic functions of the large-scale
gains; the Monte Carlo module draws the matching small-scale
realizations and checks these moments empirically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import LinkGains


@dataclass(frozen=True)
class PilotPlan:
    """Pilot indices per user (or per NOMA cluster) and the sharing count Q.

    Index values above tau_p - 1 are bookkeeping labels for "orthogonal to
    everything"; only equality of labels matters downstream.
    """

    Q: int
    pu_pilot: np.ndarray
    su_pilot: np.ndarray
    tau_p: int


def assign_pilots_oma(K: int, L: int, Q: int, tau_p: int) -> PilotPlan:
    """Pairwise sharing: PU i and SU i share pilot i for i < Q.

    Remaining users get pilots orthogonal to everyone. Requires
    0 <= Q <= min(K, L) and tau_p >= max(K, L) so each network is
    internally orthogonal.
    """
    if not 0 <= Q <= min(K, L):
        raise ValueError(f"Q must be in [0, {min(K, L)}]")
    if tau_p < max(K, L):
        raise ValueError("tau_p too short for orthogonal pilots within a network")
    pu_pilot = np.arange(K)
    su_pilot = np.concatenate([np.arange(Q), K + np.arange(L - Q)])
    return PilotPlan(Q=Q, pu_pilot=pu_pilot, su_pilot=su_pilot, tau_p=tau_p)


def assign_pilots_noma(A: int, B: int, Q: int, tau_p: int) -> PilotPlan:
    """Cluster-level sharing: every user of a cluster trains on the cluster
    pilot, and primary cluster a shares it with secondary cluster a for a < Q.
    """
    if not 0 <= Q <= min(A, B):
        raise ValueError(f"Q must be in [0, {min(A, B)}]")
    if tau_p < max(A, B):
        raise ValueError("tau_p too short for orthogonal cluster pilots")
    pu_pilot = np.arange(A)
    su_pilot = np.concatenate([np.arange(Q), A + np.arange(B - Q)])
    return PilotPlan(Q=Q, pu_pilot=pu_pilot, su_pilot=su_pilot, tau_p=tau_p)


def _partners(pu_pilot: np.ndarray, su_pilot: np.ndarray):
    """For each PU the SU on the same pilot (-1 if none), and vice versa."""
    su_of_pilot = {int(p): l for l, p in enumerate(su_pilot)}
    pu_of_pilot = {int(p): k for k, p in enumerate(pu_pilot)}
    pu_partner = np.array([su_of_pilot.get(int(p), -1) for p in pu_pilot])
    su_partner = np.array([pu_of_pilot.get(int(p), -1) for p in su_pilot])
    return pu_partner, su_partner


@dataclass(frozen=True)
class UlEstimateStats:
    """MMSE estimation statistics for orthogonal-access training.

    c_P/c_S are the per-link MMSE scaling coefficients, rho_f/rho_g the
    mean-square estimates E[|fhat|^2] / E[|ghat|^2]. rho_u[n, k] is the
    mean-square of the secondary estimate's projection onto the S-AP n ->
    PU k channel (zero unless PU k shares its pilot), rho_v the mirror for
    P-AP -> SU links. The sharing masks and partner indices are carried
    along so downstream code never re-derives them from the plan.
    """

    c_P: np.ndarray
    c_S: np.ndarray
    rho_f: np.ndarray
    rho_g: np.ndarray
    rho_u: np.ndarray
    rho_v: np.ndarray
    pu_shared: np.ndarray
    su_shared: np.ndarray
    pu_partner: np.ndarray
    su_partner: np.ndarray
    P_pilot: float


def ul_stats_oma(gains: LinkGains, plan: PilotPlan, P_ul_pilot: float) -> UlEstimateStats:
    """Closed-form uplink estimation statistics under pairwise pilot sharing.

    With pilot energy P_p = tau_p * P_ul_pilot,

        c_P[m, k]   = sqrt(P_p) zeta_f / (P_p (zeta_f + shared_k zeta_v[m, partner]) + 1)
        rho_f[m, k] = sqrt(P_p) c_P zeta_f

    and mirrored for the secondary network. rho_u/rho_v are built already
    gated: entries of unshared users are exactly zero.
    """
    Pp = plan.tau_p * P_ul_pilot
    K = gains.zeta_f.shape[1]
    L = gains.zeta_g.shape[1]
    pu_partner, su_partner = _partners(plan.pu_pilot, plan.su_pilot)
    pu_shared = pu_partner >= 0
    su_shared = su_partner >= 0

    # interfering gain on each user's pilot (zero when unshared)
    cross_P = np.zeros_like(gains.zeta_f)
    if pu_shared.any():
        cols = np.where(pu_shared)[0]
        cross_P[:, cols] = gains.zeta_v[:, pu_partner[cols]]
    cross_S = np.zeros_like(gains.zeta_g)
    if su_shared.any():
        cols = np.where(su_shared)[0]
        cross_S[:, cols] = gains.zeta_u[:, su_partner[cols]]

    c_P = np.sqrt(Pp) * gains.zeta_f / (Pp * (gains.zeta_f + cross_P) + 1.0)
    c_S = np.sqrt(Pp) * gains.zeta_g / (Pp * (gains.zeta_g + cross_S) + 1.0)
    rho_f = np.sqrt(Pp) * c_P * gains.zeta_f
    rho_g = np.sqrt(Pp) * c_S * gains.zeta_g

    # projections of the other network's estimates onto the cross channels
    rho_u = np.zeros_like(gains.zeta_u)  # [N, K]
    if pu_shared.any():
        cols = np.where(pu_shared)[0]
        rho_u[:, cols] = np.sqrt(Pp) * c_S[:, pu_partner[cols]] * gains.zeta_u[:, cols]
    rho_v = np.zeros_like(gains.zeta_v)  # [M, L]
    if su_shared.any():
        cols = np.where(su_shared)[0]
        rho_v[:, cols] = np.sqrt(Pp) * c_P[:, su_partner[cols]] * gains.zeta_v[:, cols]

    return UlEstimateStats(
        c_P=c_P, c_S=c_S, rho_f=rho_f, rho_g=rho_g, rho_u=rho_u, rho_v=rho_v,
        pu_shared=pu_shared, su_shared=su_shared,
        pu_partner=pu_partner, su_partner=su_partner, P_pilot=Pp,
    )


def cluster_view(zeta: np.ndarray, clusters: int) -> np.ndarray:
    """Reshape a [num_aps, total_users] gain matrix to [num_aps, clusters, per].

    Users are assumed cluster-contiguous: user (a, k) sits at flat column
    a * per + k.
    """
    num_aps, total = zeta.shape
    if total % clusters:
        raise ValueError("user count not divisible by cluster count")
    return zeta.reshape(num_aps, clusters, total // clusters)


@dataclass(frozen=True)
class NomaUlStats:
    """Cluster-pilot estimation statistics.

    alpha_f[m, a, k] is both E[|fhat_mak|^2] and E[f_mak fhat_mak^*]: with
    one pilot per cluster every user's estimate is the same received block
    scaled by c_f[m, a, k], so estimates within a cluster are parallel.
    """

    alpha_f: np.ndarray  # [M, A, K]
    alpha_g: np.ndarray  # [N, B, L]
    c_f: np.ndarray      # [M, A, K]
    c_g: np.ndarray      # [N, B, L]
    pc_shared: np.ndarray  # [A] bool
    sc_shared: np.ndarray  # [B] bool
    pc_partner: np.ndarray
    sc_partner: np.ndarray
    P_pilot: float


def ul_stats_noma(gains: LinkGains, A: int, B: int, plan: PilotPlan,
                  P_ul_pilot: float) -> NomaUlStats:
    """Closed-form estimation statistics with one shared pilot per cluster.

    alpha_f[m, a, k] = P_p zeta_f^2 / (P_p (sum_i zeta_f[m, a, i]
                        + shared_a * sum_j zeta_v[m, a, j]) + 1)
    """
    Pp = plan.tau_p * P_ul_pilot
    zf = cluster_view(gains.zeta_f, A)
    # zeta_v columns are secondary users, zeta_u columns primary users
    zv = cluster_view(gains.zeta_v, B) if gains.zeta_v.shape[1] % B == 0 else None
    zu = cluster_view(gains.zeta_u, A) if gains.zeta_u.shape[1] % A == 0 else None
    zg = cluster_view(gains.zeta_g, B)
    pc_partner, sc_partner = _partners(plan.pu_pilot, plan.su_pilot)
    pc_shared = pc_partner >= 0
    sc_shared = sc_partner >= 0
    if pc_shared.any() and zv is None:
        raise ValueError("zeta_v not partitionable into secondary clusters")
    if sc_shared.any() and zu is None:
        raise ValueError("zeta_u not partitionable into primary clusters")

    den_P = Pp * zf.sum(axis=2)  # [M, A]
    if zv is not None:
        cross = np.zeros_like(den_P)
        cols = np.where(pc_shared)[0]
        cross[:, cols] = Pp * zv.sum(axis=2)[:, pc_partner[cols]]
        den_P = den_P + cross
    den_P = den_P + 1.0

    den_S = Pp * zg.sum(axis=2)  # [N, B]
    if zu is not None:
        cross = np.zeros_like(den_S)
        cols = np.where(sc_shared)[0]
        cross[:, cols] = Pp * zu.sum(axis=2)[:, sc_partner[cols]]
        den_S = den_S + cross
    den_S = den_S + 1.0

    c_f = np.sqrt(Pp) * zf / den_P[:, :, None]
    c_g = np.sqrt(Pp) * zg / den_S[:, :, None]
    return NomaUlStats(
        alpha_f=np.sqrt(Pp) * c_f * zf,
        alpha_g=np.sqrt(Pp) * c_g * zg,
        c_f=c_f, c_g=c_g,
        pc_shared=pc_shared, sc_shared=sc_shared,
        pc_partner=pc_partner, sc_partner=sc_partner, P_pilot=Pp,
    )


# ---------------------------------------------------------------------------
# Downlink pilot statistics (orthogonal access)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DlPilotStatsOma:
    """Moments needed for per-realization decoding of the effective channel.

    For PU k the effective desired channel is mu_kk = sum_m delta sqrt(eta)
    f_mk fhat_mk^*; v_Pkk is its variance, u_Pkk the variance of the
    contaminating secondary beam on the same downlink pilot, kappa_P the
    MMSE error of estimating mu_kk from the pilot observation, and
    v_Pki[k, i] the mean power of beam i seen at user k. Mirrors with the
    roles of the networks swapped carry the _S suffix. mu_mean/lambda_mean
    are the deterministic means the estimator needs.
    """

    v_Pkk: np.ndarray
    u_Pkk: np.ndarray
    kappa_P: np.ndarray
    v_Pki: np.ndarray
    v_Sll: np.ndarray
    u_Sll: np.ndarray
    kappa_S: np.ndarray
    v_Slj: np.ndarray
    mu_mean_P: np.ndarray
    lambda_mean_P: np.ndarray
    mu_mean_S: np.ndarray
    lambda_mean_S: np.ndarray
    P_pd: float


def _mmse_error(v: np.ndarray, u: np.ndarray, p: float) -> np.ndarray:
    """Residual variance after LMMSE estimation of the desired effective
    channel from one downlink pilot of energy p, with own-channel variance v
    and same-pilot contamination variance u.
    """
    num = (1.0 + p * u) ** 2 * v + (p * v) ** 2 * u + p * v**2
    return num / (p * (v + u) + 1.0) ** 2


def dl_stats_oma(stats: UlEstimateStats, gains: LinkGains, clusters,
                 eta_P: np.ndarray, eta_S: np.ndarray, P_pd: float) -> DlPilotStatsOma:
    """Downlink-pilot decoding statistics for both networks.

    P_pd is the downlink pilot energy tau_pd * P_d. All quantities are
    exact moments of the effective channels under the allocation
    (eta_P, eta_S); in particular u_Pkk is the exact variance of the
    contaminating term (the cross-AP covariances cancel).
    """
    dP = clusters.delta_P
    dS = clusters.delta_S
    wP = dP * eta_P
    wS = dS * eta_S

    v_Pkk = np.einsum("mk,mk,mk->k", wP, gains.zeta_f, stats.rho_f)
    v_Sll = np.einsum("nl,nl,nl->l", wS, gains.zeta_g, stats.rho_g)

    K = gains.zeta_f.shape[1]
    L = gains.zeta_g.shape[1]
    u_Pkk = np.zeros(K)
    lam_mean_P = np.zeros(K)
    for k in np.where(stats.pu_shared)[0]:
        pk = stats.pu_partner[k]
        u_Pkk[k] = np.sum(wS[:, pk] * gains.zeta_u[:, k] * stats.rho_g[:, pk])
        lam_mean_P[k] = np.sum(dS[:, pk] * np.sqrt(eta_S[:, pk]) * stats.rho_u[:, k])
    u_Sll = np.zeros(L)
    lam_mean_S = np.zeros(L)
    for l in np.where(stats.su_shared)[0]:
        pl = stats.su_partner[l]
        u_Sll[l] = np.sum(wP[:, pl] * gains.zeta_v[:, l] * stats.rho_f[:, pl])
        lam_mean_S[l] = np.sum(dP[:, pl] * np.sqrt(eta_P[:, pl]) * stats.rho_v[:, l])

    # v_Pki[k, i]: power of the primary beam toward user i observed at user k
    v_Pki = gains.zeta_f.T @ (wP * stats.rho_f)
    v_Slj = gains.zeta_g.T @ (wS * stats.rho_g)

    return DlPilotStatsOma(
        v_Pkk=v_Pkk, u_Pkk=u_Pkk,
        kappa_P=_mmse_error(v_Pkk, u_Pkk, P_pd), v_Pki=v_Pki,
        v_Sll=v_Sll, u_Sll=u_Sll,
        kappa_S=_mmse_error(v_Sll, u_Sll, P_pd), v_Slj=v_Slj,
        mu_mean_P=np.sum(dP * np.sqrt(eta_P) * stats.rho_f, axis=0),
        lambda_mean_P=lam_mean_P,
        mu_mean_S=np.sum(dS * np.sqrt(eta_S) * stats.rho_g, axis=0),
        lambda_mean_S=lam_mean_S,
        P_pd=P_pd,
    )


# ---------------------------------------------------------------------------
# Downlink pilot statistics (NOMA clusters)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DlPilotStatsNoma:
    """Cluster-pilot decoding statistics.

    theta[a, k, i] is the mean of user (a, k)'s observation of own-cluster
    beam i, psi[a, k, j] the mean of the shared secondary cluster's beam j
    seen at the same user, varrho_mu/varrho_lambda the matching mean-square
    powers, Omega the LMMSE weights and Phi_mu[a, k, i] = E[|estimate of
    beam i's observation|^2]. Secondary mirrors carry the _S suffix with
    [B, L, ...] shapes.
    """

    theta: np.ndarray          # [A, K, K]
    psi: np.ndarray            # [A, K, L]
    Omega: np.ndarray          # [A, K, K]
    varrho_mu: np.ndarray      # [A, K, K] own-cluster beams
    varrho_lambda: np.ndarray  # [A, K, B, L]
    Phi_mu: np.ndarray         # [A, K, K]
    theta_S: np.ndarray
    psi_S: np.ndarray
    Omega_S: np.ndarray
    varrho_mu_S: np.ndarray
    varrho_lambda_S: np.ndarray
    Phi_mu_S: np.ndarray
    P_pd: float


def _dl_noma_one_side(alpha_own, z_own, eta_own, alpha_other, z_cross,
                      z_other, eta_other, shared, partner, P_pd,
                      coherent_cross: bool):
    """Shared worker for the primary view (and, with arguments swapped, the
    secondary view) of the cluster downlink pilot statistics.

    alpha_own/z_own/eta_own: [Ma, A, K] statistics of the observed network's
    beams; alpha_other/z_other/eta_other: [Na, B, L] of the other network;
    z_cross: [Na, A, K] other-network AP -> observed-user gains.
    """
    Ma, A, K = alpha_own.shape
    Na, B, L = alpha_other.shape
    sq_eta_own = np.sqrt(eta_own)
    sq_eta_other = np.sqrt(eta_other)

    # theta[a, k, i] = sum_m sqrt(eta_mai) alpha_mak zeta_mai / zeta_mak
    ratio = z_own[:, :, None, :] / z_own[:, :, :, None]      # [m, a, k, i] = z_mai/z_mak
    theta = np.einsum("mai,mak,maki->aki",
                      sq_eta_own, alpha_own, ratio)

    # psi[a, k, j]: mean of shared secondary beam j at user (a, k)
    psi = np.zeros((A, K, L))
    for a in np.where(shared)[0]:
        b = partner[a]
        # sum_n sqrt(eta_nbj) alpha_nbj z_cross[n, a, k] / z_nbj
        psi[a] = np.einsum("nj,nk->kj",
                           sq_eta_other[:, b] * alpha_other[:, b] / z_other[:, b],
                           z_cross[:, a])

    # varrho_mu[a, k, i] = sum_m eta_mai alpha_mai (zeta_mak + alpha_mak)
    varrho_mu = np.einsum("mai,mai,mak->aki",
                          eta_own, alpha_own, z_own + alpha_own)

    # varrho_lambda[a, k, b, j] = sum_n eta_nbj zeta_cross_nak alpha_nbj
    varrho_lambda = np.einsum("nbj,nbj,nak->akbj",
                              eta_other, alpha_other, z_cross)
    if coherent_cross:
        # optional per-AP coherent excess on the shared own-partner cluster
        for a in np.where(shared)[0]:
            b = partner[a]
            term = np.einsum(
                "nj,nkj->kj",
                eta_other[:, b],
                (alpha_other[:, b, None, :] * z_cross[:, a, :, None]
                 / z_other[:, b, None, :]) ** 2,
            )
            varrho_lambda[a, :, b, :] += term

    # LMMSE weights: only the own-partner cluster rides the downlink pilot
    lam_pilot = np.zeros((A, K, L))
    psi_pilot = psi
    for a in np.where(shared)[0]:
        lam_pilot[a] = varrho_lambda[a, :, partner[a], :]
    centered_mu = varrho_mu - theta**2
    centered_lam = lam_pilot - psi_pilot**2
    den = P_pd * (centered_mu.sum(axis=2) + centered_lam.sum(axis=2)) + 1.0
    Omega = np.sqrt(P_pd) * centered_mu / den[:, :, None]

    total_power = P_pd * (varrho_mu.sum(axis=2) + lam_pilot.sum(axis=2)) + 1.0
    mean_sq = P_pd * (theta.sum(axis=2) + psi_pilot.sum(axis=2)) ** 2
    Phi_mu = theta**2 + Omega**2 * (total_power - mean_sq)[:, :, None]
    return theta, psi, Omega, varrho_mu, varrho_lambda, Phi_mu


def dl_stats_noma(nstats: NomaUlStats, gains: LinkGains, eta_P: np.ndarray,
                  eta_S: np.ndarray, P_pd: float,
                  coherent_cross: bool = False) -> DlPilotStatsNoma:
    """Downlink cluster-pilot statistics for both networks.

    eta_P: [M, A, K], eta_S: [N, B, L]. With coherent_cross the shared
    cluster's cross power includes the per-AP coherent excess of the
    parallel-estimate structure; the default keeps the plain incoherent
    sum.
    """
    A = nstats.alpha_f.shape[1]
    B = nstats.alpha_g.shape[1]
    zf = cluster_view(gains.zeta_f, A)
    zg = cluster_view(gains.zeta_g, B)
    zu = cluster_view(gains.zeta_u, A)  # [N, A, K]
    zv = cluster_view(gains.zeta_v, B)  # [M, B, L]

    theta, psi, Omega, vmu, vlam, Phi = _dl_noma_one_side(
        nstats.alpha_f, zf, eta_P, nstats.alpha_g, zu, zg, eta_S,
        nstats.pc_shared, nstats.pc_partner, P_pd, coherent_cross)
    theta_S, psi_S, Omega_S, vmu_S, vlam_S, Phi_S = _dl_noma_one_side(
        nstats.alpha_g, zg, eta_S, nstats.alpha_f, zv, zf, eta_P,
        nstats.sc_shared, nstats.sc_partner, P_pd, coherent_cross)

    return DlPilotStatsNoma(
        theta=theta, psi=psi, Omega=Omega, varrho_mu=vmu,
        varrho_lambda=vlam, Phi_mu=Phi,
        theta_S=theta_S, psi_S=psi_S, Omega_S=Omega_S, varrho_mu_S=vmu_S,
        varrho_lambda_S=vlam_S, Phi_mu_S=Phi_S, P_pd=P_pd,
    )

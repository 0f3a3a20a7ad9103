"""Closed-form achievable SINRs and rates for both access modes.

Downlink model: every AP transmits the conjugate of its local channel
estimates, scaled by per-beam power coefficients eta (so beam powers are
P_P * eta_P and P_S * eta_S). Users either decode with long-term
statistics (statistical CSI) or with a per-realization estimate of the
effective channel obtained from a downlink pilot. Noise is normalized,
so all powers are in units of the receiver noise floor.

Expressions are deterministic in the large-scale statistics; the
montecarlo module verifies each term empirically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import (DlPilotStatsNoma, DlPilotStatsOma, NomaUlStats,
                         UlEstimateStats, cluster_view)
from .topology import ClusterAssignment, LinkGains


@dataclass(frozen=True)
class PowerAllocation:
    """Per-beam power coefficients plus the network power budgets.

    eta_P is [M, K] in orthogonal access and [M, A, K] for clusters;
    likewise eta_S. P_S should already reflect any interference cap.
    """

    eta_P: np.ndarray
    eta_S: np.ndarray
    P_P: float
    P_S: float


@dataclass(frozen=True)
class SicModel:
    """Quality of successive interference cancellation.

    theta_P[a, i] is the correlation between user (a, i)'s true symbol and
    the estimate a stronger user subtracts; theta = 1 is perfect SIC. The
    equivalent residual-error variance is sigma_e2 = 1/theta^2 - 1.
    """

    theta_P: np.ndarray
    theta_S: np.ndarray

    def __post_init__(self):
        for th in (self.theta_P, self.theta_S):
            if np.any(th <= 0) or np.any(th > 1):
                raise ValueError("SIC correlation must lie in (0, 1]")

    @property
    def sigma_e2_P(self):
        return 1.0 / self.theta_P**2 - 1.0

    @property
    def sigma_e2_S(self):
        return 1.0 / self.theta_S**2 - 1.0

    @classmethod
    def from_scalar(cls, theta: float, A: int, K: int, B: int, L: int) -> "SicModel":
        return cls(theta_P=np.full((A, K), float(theta)),
                   theta_S=np.full((B, L), float(theta)))

    @classmethod
    def perfect(cls, A: int, K: int, B: int, L: int) -> "SicModel":
        return cls.from_scalar(1.0, A, K, B, L)


@dataclass(frozen=True)
class RateReport:
    """Per-user SINRs and rates for one evaluated operating point."""

    regime: str
    gamma_primary: np.ndarray
    gamma_secondary: np.ndarray
    rate_primary: np.ndarray
    rate_secondary: np.ndarray

    @property
    def sum_primary(self) -> float:
        return float(np.sum(self.rate_primary))

    @property
    def sum_secondary(self) -> float:
        return float(np.sum(self.rate_secondary))


def sum_rates(report: RateReport) -> tuple[float, float]:
    return report.sum_primary, report.sum_secondary


def rate_from_sinr(gamma: np.ndarray, tau_c: int, tau_overhead: int) -> np.ndarray:
    """Payload rate in bits/s/Hz given the pilot overhead."""
    if not 0 <= tau_overhead < tau_c:
        raise ValueError("overhead must leave payload symbols")
    return (tau_c - tau_overhead) / tau_c * np.log2(1.0 + gamma)


def check_power_constraint(stats: UlEstimateStats, clusters: ClusterAssignment,
                           alloc: PowerAllocation, tol: float = 2e-6):
    """Reject allocations that exceed any AP's unit average-power budget."""
    load_P = np.sum(clusters.delta_P * alloc.eta_P * stats.rho_f, axis=1)
    load_S = np.sum(clusters.delta_S * alloc.eta_S * stats.rho_g, axis=1)
    worst = max(load_P.max(initial=0.0), load_S.max(initial=0.0))
    if worst > 1.0 + tol:
        raise ValueError(f"per-AP power constraint violated by {worst - 1.0:.3e}")


def _cci_terms(stats: UlEstimateStats, gains: LinkGains,
               clusters: ClusterAssignment, eta_S: np.ndarray):
    """Average secondary interference power at each PU, split into the
    incoherent beam sum and the pilot-sharing coherent excess. Both are per
    unit of P_S.

    The excess is the squared sum of the per-AP means: the estimate of the
    partner's channel carries a component proportional to the PU's own
    channel at every S-AP, and by reciprocity these add in amplitude.
    """
    beam = np.sum(clusters.delta_S * eta_S * stats.rho_g, axis=1)  # [N]
    incoherent = gains.zeta_u.T @ beam
    K = gains.zeta_u.shape[1]
    coherent = np.zeros(K)
    for k in np.where(stats.pu_shared)[0]:
        pk = stats.pu_partner[k]
        coherent[k] = np.sum(clusters.delta_S[:, pk]
                             * np.sqrt(eta_S[:, pk])
                             * stats.rho_u[:, k]) ** 2
    return incoherent, coherent


def _cross_terms_secondary(stats: UlEstimateStats, gains: LinkGains,
                           clusters: ClusterAssignment, eta_P: np.ndarray):
    """Mirror of _cci_terms: primary interference power at each SU."""
    beam = np.sum(clusters.delta_P * eta_P * stats.rho_f, axis=1)  # [M]
    incoherent = gains.zeta_v.T @ beam
    L = gains.zeta_v.shape[1]
    coherent = np.zeros(L)
    for l in np.where(stats.su_shared)[0]:
        pl = stats.su_partner[l]
        coherent[l] = np.sum(clusters.delta_P[:, pl]
                             * np.sqrt(eta_P[:, pl])
                             * stats.rho_v[:, l]) ** 2
    return incoherent, coherent


def secondary_cci_Zk(stats: UlEstimateStats, gains: LinkGains,
                     clusters: ClusterAssignment, eta_S: np.ndarray) -> np.ndarray:
    """Deterministic CCI power at each PU per unit of secondary power."""
    incoherent, coherent = _cci_terms(stats, gains, clusters, eta_S)
    return incoherent + coherent


def cap_secondary_power(Z: np.ndarray, I_T, P_S: float) -> float:
    """Largest uniform secondary power meeting every interference threshold.

    Z entries of zero impose no cap. I_T may be scalar or per-PU.
    """
    Z = np.asarray(Z, dtype=float)
    I_T = np.broadcast_to(np.asarray(I_T, dtype=float), Z.shape)
    with np.errstate(divide="ignore"):
        ratios = np.where(Z > 0, I_T / np.where(Z > 0, Z, 1.0), np.inf)
    return float(min(P_S, ratios.min(initial=np.inf)))


def sinr_primary_oma(stats: UlEstimateStats, gains: LinkGains,
                     clusters: ClusterAssignment, alloc: PowerAllocation,
                     noise_power: float = 1.0) -> np.ndarray:
    """Statistical-CSI SINR of every PU under conjugate precoding.

    Numerator: coherent beamforming gain P_P (sum_m delta sqrt(eta) rho_f)^2.
    Denominator: beamforming-uncertainty plus inter-user power
    P_P sum_{m,i} delta eta rho_f[m, i] zeta_f[m, k], the secondary CCI
    (incoherent plus pilot-sharing coherent part) and noise.
    """
    check_power_constraint(stats, clusters, alloc)
    dP = clusters.delta_P
    num = alloc.P_P * np.sum(dP * np.sqrt(alloc.eta_P) * stats.rho_f, axis=0) ** 2
    beam = np.sum(dP * alloc.eta_P * stats.rho_f, axis=1)  # [M]
    bu = gains.zeta_f.T @ beam
    cci_inc, cci_coh = _cci_terms(stats, gains, clusters, alloc.eta_S)
    den = alloc.P_P * bu + alloc.P_S * (cci_inc + cci_coh) + noise_power
    return num / den


def sinr_secondary_oma(stats: UlEstimateStats, gains: LinkGains,
                       clusters: ClusterAssignment, alloc: PowerAllocation,
                       noise_power: float = 1.0) -> np.ndarray:
    """Statistical-CSI SINR of every SU; exact mirror of the PU expression."""
    check_power_constraint(stats, clusters, alloc)
    dS = clusters.delta_S
    num = alloc.P_S * np.sum(dS * np.sqrt(alloc.eta_S) * stats.rho_g, axis=0) ** 2
    beam = np.sum(dS * alloc.eta_S * stats.rho_g, axis=1)  # [N]
    bu = gains.zeta_g.T @ beam
    cross_inc, cross_coh = _cross_terms_secondary(stats, gains, clusters, alloc.eta_P)
    den = alloc.P_S * bu + alloc.P_P * (cross_inc + cross_coh) + noise_power
    return num / den


# ---------------------------------------------------------------------------
# Downlink-pilot decoding (orthogonal access)
# ---------------------------------------------------------------------------

def dlpilot_denominator_primary(dl: DlPilotStatsOma, stats: UlEstimateStats,
                                gains: LinkGains, clusters: ClusterAssignment,
                                alloc: PowerAllocation,
                                noise_power: float = 1.0) -> np.ndarray:
    """Deterministic part of the per-realization PU SINR: residual channel
    uncertainty kappa, inter-user beam powers, secondary CCI and noise.
    """
    K = dl.v_Pkk.shape[0]
    inter = dl.v_Pki.sum(axis=1) - np.diag(dl.v_Pki)
    cci_inc, cci_coh = _cci_terms(stats, gains, clusters, alloc.eta_S)
    return (alloc.P_P * (inter + dl.kappa_P)
            + alloc.P_S * (cci_inc + cci_coh) + noise_power)


def dlpilot_denominator_secondary(dl: DlPilotStatsOma, stats: UlEstimateStats,
                                  gains: LinkGains, clusters: ClusterAssignment,
                                  alloc: PowerAllocation,
                                  noise_power: float = 1.0) -> np.ndarray:
    inter = dl.v_Slj.sum(axis=1) - np.diag(dl.v_Slj)
    cross_inc, cross_coh = _cross_terms_secondary(stats, gains, clusters, alloc.eta_P)
    return (alloc.P_S * (inter + dl.kappa_S)
            + alloc.P_P * (cross_inc + cross_coh) + noise_power)


def sinr_primary_oma_dlpilot(dl: DlPilotStatsOma, stats: UlEstimateStats,
                             gains: LinkGains, clusters: ClusterAssignment,
                             alloc: PowerAllocation,
                             noise_power: float = 1.0) -> np.ndarray:
    """Expected per-realization SINR E[gamma] of every PU.

    The numerator is P_P E[|muhat_kk|^2] = P_P ((E mu)^2 + v - kappa); the
    denominator is deterministic, so E[gamma] feeds the Jensen upper bound
    on the ergodic rate.
    """
    num = alloc.P_P * (dl.mu_mean_P**2 + dl.v_Pkk - dl.kappa_P)
    return num / dlpilot_denominator_primary(dl, stats, gains, clusters, alloc,
                                             noise_power)


def sinr_secondary_oma_dlpilot(dl: DlPilotStatsOma, stats: UlEstimateStats,
                               gains: LinkGains, clusters: ClusterAssignment,
                               alloc: PowerAllocation,
                               noise_power: float = 1.0) -> np.ndarray:
    num = alloc.P_S * (dl.mu_mean_S**2 + dl.v_Sll - dl.kappa_S)
    return num / dlpilot_denominator_secondary(dl, stats, gains, clusters, alloc,
                                               noise_power)


def rate_dlpilot_upperbound(expected_gamma: np.ndarray, tau_c: int,
                            tau_p: int, tau_pd: int) -> np.ndarray:
    """Jensen bound on the ergodic rate with both pilot overheads removed."""
    payload = tau_c - tau_p - tau_pd
    if payload <= 0:
        raise ValueError("no payload symbols left after pilots")
    return payload / tau_c * np.log2(1.0 + expected_gamma)


# ---------------------------------------------------------------------------
# Cluster (NOMA) access
# ---------------------------------------------------------------------------

def order_noma_users(alpha: np.ndarray) -> np.ndarray:
    """Decoding order per cluster: strongest aggregate estimate first.

    Returns perm[a] such that alpha[:, a, perm[a]] is nonincreasing in the
    user axis; ties keep the lower original index.
    """
    return np.argsort(-alpha.sum(axis=0), axis=1, kind="stable")


def permute_cluster_users(arr: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Apply a per-cluster user permutation to the trailing axis of a
    [.., A, K] array."""
    return np.take_along_axis(arr, np.broadcast_to(perm, arr.shape[:-2] + perm.shape), axis=-1)


def apply_noma_order(gains: LinkGains, A: int, B: int, perm_P: np.ndarray,
                     perm_S: np.ndarray) -> LinkGains:
    """Permute users inside each cluster of the flat gain matrices."""
    def permute_flat(zeta, clusters, perm):
        view = cluster_view(zeta, clusters)
        out = permute_cluster_users(view, perm)
        return out.reshape(zeta.shape)

    return LinkGains(
        zeta_f=permute_flat(gains.zeta_f, A, perm_P),
        zeta_g=permute_flat(gains.zeta_g, B, perm_S),
        zeta_u=permute_flat(gains.zeta_u, A, perm_P),
        zeta_v=permute_flat(gains.zeta_v, B, perm_S),
    )


def validate_noma_power_ordering(eta: np.ndarray, tol: float = 1e-9) -> list:
    """Check the power-domain ordering: within every cluster the stronger
    user (lower index) must not get more power than the next one at any AP.

    Returns a list of (cluster, user, user + 1) violations; empty means valid.
    """
    bad = np.any(eta[..., :-1] > eta[..., 1:] + tol, axis=0)
    return [(int(a), int(k), int(k) + 1) for a, k in zip(*np.nonzero(bad))]


def _intra_cluster_coherent(alpha: np.ndarray, z: np.ndarray, eta: np.ndarray):
    """coh[a, k, i] = (sum_m sqrt(eta_mai) alpha_mak z_mai / z_mak)^2.

    alpha_mak z_mai / z_mak is the mean of user k's observation of
    own-cluster beam i at AP m (symmetric in k and i); the means add in
    amplitude across APs, so the beam's average power carries the squared
    aggregate on top of the per-AP variances.
    """
    mean = alpha[:, :, :, None] * z[:, :, None, :] / z[:, :, :, None]
    return np.einsum("mai,maki->aki", np.sqrt(eta), mean) ** 2


def _coherent_cross_noma(eta_other, alpha_other, z_other, z_cross, shared, partner):
    """Pilot-sharing coherent cross power at user (a, k): for each beam of
    the partner cluster, the squared sum over APs of the nonzero means."""
    A, K = z_cross.shape[1], z_cross.shape[2]
    out = np.zeros((A, K))
    for a in np.where(shared)[0]:
        b = partner[a]
        w = np.sqrt(eta_other[:, b]) * alpha_other[:, b] / z_other[:, b]  # [n, j]
        out[a] = np.sum(np.einsum("nj,nk->jk", w, z_cross[:, a]) ** 2, axis=0)
    return out


def sinr_primary_noma(nstats: NomaUlStats, gains: LinkGains, alloc: PowerAllocation,
                      sic: SicModel, noise_power: float = 1.0) -> np.ndarray:
    """Statistical-CSI SINR of PU (a, k) with SIC of weaker users.

    Users are assumed already in decoding order (see order_noma_users).
    Interference: all beams' incoherent power, the coherent power of
    not-yet-decoded own-cluster users (i < k), twice the (1 - theta)
    residual of imperfectly cancelled users (i > k), plus secondary CCI
    with its pilot-sharing coherent part.
    """
    A, K = nstats.alpha_f.shape[1:]
    zf = cluster_view(gains.zeta_f, A)
    zu = cluster_view(gains.zeta_u, A)
    eta_P, eta_S = alloc.eta_P, alloc.eta_S

    num = alloc.P_P * np.einsum("mak,mak->ak", np.sqrt(eta_P), nstats.alpha_f) ** 2

    per_ap = np.einsum("mai,mai->m", eta_P, nstats.alpha_f)
    bu = np.einsum("m,mak->ak", per_ap, zf)

    coh_beam = _intra_cluster_coherent(nstats.alpha_f, zf, eta_P)
    lower = np.tril(np.ones((K, K)), -1)
    upper = np.triu(np.ones((K, K)), 1)
    I1 = np.einsum("aki,ki->ak", coh_beam, lower)
    I2 = 2.0 * np.einsum("aki,ai,ki->ak", coh_beam, 1.0 - sic.theta_P, upper)

    per_sap = np.einsum("nbj,nbj->n", eta_S, nstats.alpha_g)
    cci = np.einsum("n,nak->ak", per_sap, zu)
    coh = _coherent_cross_noma(eta_S, nstats.alpha_g,
                               cluster_view(gains.zeta_g, nstats.alpha_g.shape[1]),
                               zu, nstats.pc_shared, nstats.pc_partner)

    den = alloc.P_P * (bu + I1 + I2) + alloc.P_S * (cci + coh) + noise_power
    return num / den


def sinr_secondary_noma(nstats: NomaUlStats, gains: LinkGains, alloc: PowerAllocation,
                        sic: SicModel, noise_power: float = 1.0) -> np.ndarray:
    """Mirror of sinr_primary_noma for SU (b, l)."""
    B, L = nstats.alpha_g.shape[1:]
    zg = cluster_view(gains.zeta_g, B)
    zv = cluster_view(gains.zeta_v, B)
    eta_P, eta_S = alloc.eta_P, alloc.eta_S

    num = alloc.P_S * np.einsum("nbl,nbl->bl", np.sqrt(eta_S), nstats.alpha_g) ** 2

    per_sap = np.einsum("nbj,nbj->n", eta_S, nstats.alpha_g)
    bu = np.einsum("n,nbl->bl", per_sap, zg)

    coh_beam = _intra_cluster_coherent(nstats.alpha_g, zg, eta_S)
    lower = np.tril(np.ones((L, L)), -1)
    upper = np.triu(np.ones((L, L)), 1)
    I1 = np.einsum("blj,lj->bl", coh_beam, lower)
    I2 = 2.0 * np.einsum("blj,bj,lj->bl", coh_beam, 1.0 - sic.theta_S, upper)

    per_ap = np.einsum("mai,mai->m", eta_P, nstats.alpha_f)
    cross = np.einsum("m,mbl->bl", per_ap, zv)
    coh = _coherent_cross_noma(eta_P, nstats.alpha_f,
                               cluster_view(gains.zeta_f, nstats.alpha_f.shape[1]),
                               zv, nstats.sc_shared, nstats.sc_partner)

    den = alloc.P_S * (bu + I1 + I2) + alloc.P_P * (cross + coh) + noise_power
    return num / den


def secondary_cci_Zak(nstats: NomaUlStats, gains: LinkGains,
                      eta_S: np.ndarray) -> np.ndarray:
    """Per-PU deterministic CCI power (per unit P_S) in cluster mode."""
    A = nstats.alpha_f.shape[1]
    zu = cluster_view(gains.zeta_u, A)
    per_sap = np.einsum("nbj,nbj->n", eta_S, nstats.alpha_g)
    incoherent = np.einsum("n,nak->ak", per_sap, zu)
    coh = _coherent_cross_noma(eta_S, nstats.alpha_g,
                               cluster_view(gains.zeta_g, nstats.alpha_g.shape[1]),
                               zu, nstats.pc_shared, nstats.pc_partner)
    return incoherent + coh


def sinr_noma_dlpilot(dl: DlPilotStatsNoma, nstats: NomaUlStats, gains: LinkGains,
                      alloc: PowerAllocation,
                      noise_power: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Expected per-realization SINRs with cluster downlink pilots.

    Interference bookkeeping: inter-cluster beams incoherently, an
    error-propagation term (K - 1 - k) Phi for the not-yet-decoded stack,
    the own-cluster residual sum_i (varrho - Phi), and the full secondary
    cross power. Returns (gamma_P [A, K], gamma_S [B, L]).
    """
    A, K = nstats.alpha_f.shape[1:]
    B, L = nstats.alpha_g.shape[1:]
    zf = cluster_view(gains.zeta_f, A)
    zg = cluster_view(gains.zeta_g, B)

    per_ap_cluster = np.einsum("mai,mai->ma", alloc.eta_P, nstats.alpha_f)
    inter_P = (np.einsum("m,mak->ak", per_ap_cluster.sum(axis=1), zf)
               - np.einsum("ma,mak->ak", per_ap_cluster, zf))
    own_phi = np.einsum("akk->ak", dl.Phi_mu)
    err_prop = (K - 1 - np.arange(K))[None, :] * own_phi
    resid = dl.varrho_mu.sum(axis=2) - dl.Phi_mu.sum(axis=2)
    cci = dl.varrho_lambda.sum(axis=(2, 3))
    den_P = (alloc.P_P * (inter_P + err_prop + resid)
             + alloc.P_S * cci + noise_power)
    gamma_P = alloc.P_P * own_phi / den_P

    per_sap_cluster = np.einsum("nbj,nbj->nb", alloc.eta_S, nstats.alpha_g)
    inter_S = (np.einsum("n,nbl->bl", per_sap_cluster.sum(axis=1), zg)
               - np.einsum("nb,nbl->bl", per_sap_cluster, zg))
    own_phi_S = np.einsum("bll->bl", dl.Phi_mu_S)
    err_prop_S = (L - 1 - np.arange(L))[None, :] * own_phi_S
    resid_S = dl.varrho_mu_S.sum(axis=2) - dl.Phi_mu_S.sum(axis=2)
    cross = dl.varrho_lambda_S.sum(axis=(2, 3))
    den_S = (alloc.P_S * (inter_S + err_prop_S + resid_S)
             + alloc.P_P * cross + noise_power)
    gamma_S = alloc.P_S * own_phi_S / den_S

    return gamma_P, gamma_S

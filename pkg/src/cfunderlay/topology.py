"""Network geometry, large-scale fading and AP-user clustering.

Two co-located networks share the same square service area: M primary
access points (P-APs) serving K primary users (PUs), and N secondary
access points (S-APs) serving L secondary users (SUs) in underlay mode.
Everything downstream consumes the four large-scale gain matrices built
here (direct links plus the two cross-network interference links).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Fixed sub-stream labels so the geometry and shadowing draws are
# decoupled from any Monte Carlo consumption of the same master seed.
_STREAM_GEOMETRY = 0
_STREAM_SHADOWING = 1


@dataclass(frozen=True)
class SystemConfig:
    """Static system parameters. Powers are linear (watts), noise-normalized."""

    M: int
    N: int
    K: int
    L: int
    area_side: float = 800.0
    d0: float = 1.0
    nu: float = 2.4
    shadow_std_db: float = 8.0
    noise_power: float = 1.0
    tau_c: int = 196
    tau_p: int | None = None
    tau_pd: int | None = None
    P_ul_pilot: float = 1.0
    P_P: float = 1.0
    P_S: float = 0.5
    P_d: float = 1.0
    seed: int = 1

    def __post_init__(self):
        # tau_p / tau_pd default to one pilot per user of the larger group
        if self.tau_p is None:
            object.__setattr__(self, "tau_p", max(self.K, self.L))
        if self.tau_pd is None:
            object.__setattr__(self, "tau_pd", max(self.K, self.L))

    def validate(self):
        """Raise ValueError on inconsistent parameter combinations."""
        for name in ("M", "N", "K", "L"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.area_side <= 0 or self.d0 <= 0:
            raise ValueError("area_side and d0 must be positive")
        if self.nu < 0 or self.shadow_std_db < 0:
            raise ValueError("nu and shadow_std_db must be nonnegative")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        for name in ("P_ul_pilot", "P_P", "P_S", "P_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau_c < 1 or self.tau_p < 1 or self.tau_pd < 0:
            raise ValueError("coherence/pilot lengths out of range")
        if self.tau_p + self.tau_pd >= self.tau_c:
            raise ValueError("tau_p + tau_pd must leave room for payload symbols")
        return self


@dataclass(frozen=True)
class NetworkGeometry:
    """2-D positions of all nodes, plus the square side for later edits."""

    pap_positions: np.ndarray  # [M, 2]
    sap_positions: np.ndarray  # [N, 2]
    pu_positions: np.ndarray   # [K, 2]
    su_positions: np.ndarray   # [L, 2]
    area_side: float


@dataclass(frozen=True)
class LinkGains:
    """Large-scale gains of the four link families.

    zeta_f : [M, K] P-AP -> PU (primary direct)
    zeta_g : [N, L] S-AP -> SU (secondary direct)
    zeta_u : [N, K] S-AP -> PU (secondary interference into primary)
    zeta_v : [M, L] P-AP -> SU (primary interference into secondary)
    """

    zeta_f: np.ndarray
    zeta_g: np.ndarray
    zeta_u: np.ndarray
    zeta_v: np.ndarray


@dataclass(frozen=True)
class ClusterAssignment:
    """0/1 service masks: delta_P [M, K], delta_S [N, L]."""

    delta_P: np.ndarray
    delta_S: np.ndarray


def generate_topology(cfg: SystemConfig) -> NetworkGeometry:
    """Drop APs and users uniformly at random over the square area.

    The draw order (P-APs, S-APs, PUs, SUs) is fixed so a given seed
    always yields the same layout.
    """
    rng = np.random.default_rng([_STREAM_GEOMETRY, cfg.seed])
    side = cfg.area_side
    return NetworkGeometry(
        pap_positions=rng.uniform(0.0, side, size=(cfg.M, 2)),
        sap_positions=rng.uniform(0.0, side, size=(cfg.N, 2)),
        pu_positions=rng.uniform(0.0, side, size=(cfg.K, 2)),
        su_positions=rng.uniform(0.0, side, size=(cfg.L, 2)),
        area_side=side,
    )


def colocate(geo: NetworkGeometry) -> NetworkGeometry:
    """Move every AP (both networks) to the area center; users stay put.

    Useful as a co-located massive MIMO reference deployment.
    """
    center = np.full(2, geo.area_side / 2.0)
    return replace(
        geo,
        pap_positions=np.tile(center, (geo.pap_positions.shape[0], 1)),
        sap_positions=np.tile(center, (geo.sap_positions.shape[0], 1)),
    )


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def compute_large_scale(geo: NetworkGeometry, cfg: SystemConfig) -> LinkGains:
    """Path loss with log-normal shadowing for all four link families.

    gain = (d0/d)^nu * 10^(phi/10), phi ~ N(0, shadow_std_db^2), with the
    distance clamped below at the reference d0 so the model never
    amplifies. Shadowing draws are seeded independently of geometry and
    consumed in the fixed order f, g, u, v.
    """
    rng = np.random.default_rng([_STREAM_SHADOWING, cfg.seed])

    def gain(tx_pos, rx_pos):
        d = np.maximum(_pairwise_distances(tx_pos, rx_pos), cfg.d0)
        pl = (cfg.d0 / d) ** cfg.nu
        shadow_db = cfg.shadow_std_db * rng.standard_normal(d.shape)
        return pl * 10.0 ** (shadow_db / 10.0)

    return LinkGains(
        zeta_f=gain(geo.pap_positions, geo.pu_positions),
        zeta_g=gain(geo.sap_positions, geo.su_positions),
        zeta_u=gain(geo.sap_positions, geo.pu_positions),
        zeta_v=gain(geo.pap_positions, geo.su_positions),
    )


def cluster_aps(gains: LinkGains, M_P: int, N_S: int) -> ClusterAssignment:
    """Assign each user the strongest M_P (resp. N_S) APs of its own network.

    Selection is by large-scale gain, ties broken toward the lower AP
    index. M_P = M and N_S = N recover full cooperation (all-ones masks).
    """
    M, _ = gains.zeta_f.shape
    N, _ = gains.zeta_g.shape
    if not 1 <= M_P <= M:
        raise ValueError(f"M_P must be in [1, {M}]")
    if not 1 <= N_S <= N:
        raise ValueError(f"N_S must be in [1, {N}]")

    def topk_mask(zeta, count):
        order = np.argsort(-zeta, axis=0, kind="stable")
        mask = np.zeros_like(zeta)
        np.put_along_axis(mask, order[:count], 1.0, axis=0)
        return mask

    return ClusterAssignment(
        delta_P=topk_mask(gains.zeta_f, M_P),
        delta_S=topk_mask(gains.zeta_g, N_S),
    )


def full_cooperation(M: int, N: int, K: int, L: int) -> ClusterAssignment:
    """All APs serve all users of their own network."""
    return ClusterAssignment(delta_P=np.ones((M, K)), delta_S=np.ones((N, L)))

"""Underlay spectrum sharing on a cell-free massive MIMO downlink.

Two AP networks share one band: a primary group of M access points
serving K users and a secondary group of N access points serving L
users, both with conjugate beamforming from locally estimated uplink
channels. The package evaluates closed-form achievable rates under
statistical and downlink-pilot CSI for orthogonal and cluster
(non-orthogonal) access, caps the secondary power to an interference
threshold at the primary users, solves max-min fair power control, and
validates every closed form against Monte Carlo moments.
"""

from .topology import (
    SystemConfig,
    NetworkGeometry,
    LinkGains,
    ClusterAssignment,
    generate_topology,
    colocate,
    compute_large_scale,
    cluster_aps,
    full_cooperation,
)
from .estimation import (
    PilotPlan,
    assign_pilots_oma,
    assign_pilots_noma,
    UlEstimateStats,
    ul_stats_oma,
    NomaUlStats,
    ul_stats_noma,
    cluster_view,
    DlPilotStatsOma,
    dl_stats_oma,
    DlPilotStatsNoma,
    dl_stats_noma,
)
from .rates import (
    PowerAllocation,
    SicModel,
    RateReport,
    sum_rates,
    rate_from_sinr,
    check_power_constraint,
    secondary_cci_Zk,
    secondary_cci_Zak,
    cap_secondary_power,
    sinr_primary_oma,
    sinr_secondary_oma,
    sinr_primary_oma_dlpilot,
    sinr_secondary_oma_dlpilot,
    rate_dlpilot_upperbound,
    order_noma_users,
    apply_noma_order,
    validate_noma_power_ordering,
    sinr_primary_noma,
    sinr_secondary_noma,
    sinr_noma_dlpilot,
)
from .power_control import (
    MaxMinProblem,
    MaxMinSolution,
    FeasibilityResult,
    SolverFailure,
    uniform_allocation,
    uniform_allocation_noma,
    feasibility_check,
    maxmin_bisection,
)
from .montecarlo import (
    MomentRow,
    MomentReport,
    JensenSummary,
    synthetic_gains,
    draw_channels,
    empirical_ul_estimation,
    empirical_sinr_oma,
    empirical_Zk,
    empirical_dl_pilot,
    empirical_noma,
    empirical_sinr_noma,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

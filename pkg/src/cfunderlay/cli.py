"""Batch front end: evaluate operating points, sweep a parameter, or
validate the closed forms against Monte Carlo moments.

All randomness derives from the single top-level seed, so rerunning a
command with the same config and seed reproduces the output byte for
byte. Sweep points reuse that seed: a sweep isolates the swept
parameter, not the noise in the draw.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import estimation, montecarlo, power_control, rates, topology
from .rates import PowerAllocation, SicModel

DEFAULTS = {
    "mode": "oma",              # oma | noma
    "csi": "statistical",       # statistical | dlpilot
    "allocation": "uniform",    # uniform | maxmin (orthogonal access only)
    "M": 8,
    "N": 8,
    "K": 2,                     # per cluster in noma mode
    "L": 2,
    "A": 2,                     # cluster counts, noma mode only
    "B": 2,
    "Q": None,                  # shared pilots; None = min of the group sizes
    "area_side": 800.0,
    "d0": 1.0,
    "nu": 2.4,
    "shadow_std_db": 8.0,
    "noise_power": 1.0,
    "tau_c": 196,
    "tau_p": None,              # None = one pilot per user of the larger group
    "tau_pd": None,
    "P_P_dbw": 0.0,
    "P_S_dbw": None,            # None = half the primary budget
    "P_ul_pilot_dbw": None,     # None = P_P_dbw
    "P_d_dbw": None,            # None = P_P_dbw
    "I_T_db": 0.0,              # None = uncapped
    "theta": 1.0,               # SIC correlation, noma mode
    "gains": "geometric",       # geometric | synthetic
    "sweep": None,              # P_P_dbw | I_T_db | K | L | M | N
    "sweep_values": None,
    "trials": 100000,
    "seed": 1,
    "out": None,                # None = stdout
    "format": "csv",            # csv | json
    "epsilon": 1e-3,
    "workers": 1,
}

_CHOICES = {
    "mode": ("oma", "noma"),
    "csi": ("statistical", "dlpilot"),
    "allocation": ("uniform", "maxmin"),
    "gains": ("geometric", "synthetic"),
    "format": ("csv", "json"),
}
_SWEEP_AXES = ("P_P_dbw", "I_T_db", "K", "L", "M", "N")
_INT_KEYS = ("M", "N", "K", "L", "A", "B", "tau_c", "trials", "seed", "workers")

COLUMNS = ("sweep_var", "sweep_value", "regime", "user", "gamma", "rate",
           "sum_rate_primary", "sum_rate_secondary", "P_Sn", "lambda_star")
VALIDATE_COLUMNS = ("report", "identity", "closed_form", "empirical",
                    "stderr", "rel_deviation", "passed")


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Merge a flat JSON config over the defaults. Unknown keys error."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config must be a flat JSON object")
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
    return cfg


def check_config(cfg: dict) -> dict:
    for key, allowed in _CHOICES.items():
        if cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, "
                              f"got {cfg[key]!r}")
    for key in _INT_KEYS:
        value = cfg[key]
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if cfg["mode"] == "noma" and cfg["allocation"] == "maxmin":
        raise ConfigError("max-min allocation is implemented for "
                          "orthogonal access only")
    if cfg["sweep"] is not None:
        if cfg["sweep"] not in _SWEEP_AXES:
            raise ConfigError(f"sweep must be one of {_SWEEP_AXES}")
        values = cfg["sweep_values"]
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep_values must be a non-empty list")
        if cfg["sweep"] in ("K", "L", "M", "N"):
            if any(not isinstance(v, int) or isinstance(v, bool) or v < 1
                   for v in values):
                raise ConfigError("count sweeps need positive integer values")
        elif any(not isinstance(v, (int, float)) or isinstance(v, bool)
                 for v in values):
            raise ConfigError("sweep_values must be numbers")
    if not (isinstance(cfg["epsilon"], float) and cfg["epsilon"] > 0):
        raise ConfigError("epsilon must be a positive float")
    if not (isinstance(cfg["theta"], (int, float)) and 0 < cfg["theta"] <= 1):
        raise ConfigError("theta must lie in (0, 1]")
    return cfg


def _watts(dbw: float | None, default: float) -> float:
    if dbw is None:
        return default
    return 10.0 ** (dbw / 10.0)


def _resolved_powers(cfg: dict) -> dict:
    P_P = 10.0 ** (cfg["P_P_dbw"] / 10.0)
    return {
        "P_P": P_P,
        "P_S": _watts(cfg["P_S_dbw"], P_P / 2.0),
        "P_ul_pilot": _watts(cfg["P_ul_pilot_dbw"], P_P),
        "P_d": _watts(cfg["P_d_dbw"], P_P),
        "I_T": (math.inf if cfg["I_T_db"] is None
                else 10.0 ** (cfg["I_T_db"] / 10.0)),
    }


def _build_gains(cfg: dict, K_tot: int, L_tot: int):
    sys_cfg = topology.SystemConfig(
        M=cfg["M"], N=cfg["N"], K=K_tot, L=L_tot,
        area_side=cfg["area_side"], d0=cfg["d0"], nu=cfg["nu"],
        shadow_std_db=cfg["shadow_std_db"], noise_power=cfg["noise_power"],
        seed=cfg["seed"],
    ).validate()
    if cfg["gains"] == "synthetic":
        return montecarlo.synthetic_gains(cfg["M"], cfg["N"], K_tot, L_tot,
                                          cfg["seed"])
    geo = topology.generate_topology(sys_cfg)
    return topology.compute_large_scale(geo, sys_cfg)


def _pilot_lengths(cfg: dict, group_p: int, group_s: int) -> tuple[int, int]:
    tau_p = cfg["tau_p"]
    if tau_p is None:
        tau_p = max(group_p, group_s)
    tau_pd = cfg["tau_pd"]
    if tau_pd is None:
        tau_pd = max(group_p, group_s)
    if tau_p + tau_pd >= cfg["tau_c"]:
        raise ConfigError("tau_p + tau_pd must leave room for payload symbols")
    return tau_p, tau_pd


def _oma_point(cfg: dict, pw: dict):
    """Gains, pilots, statistics, allocation, and cap for one oma point."""
    K, L = cfg["K"], cfg["L"]
    gains = _build_gains(cfg, K, L)
    tau_p, tau_pd = _pilot_lengths(cfg, K, L)
    Q = min(K, L) if cfg["Q"] is None else cfg["Q"]
    plan = estimation.assign_pilots_oma(K, L, Q, tau_p)
    stats = estimation.ul_stats_oma(gains, plan, pw["P_ul_pilot"])
    clusters = topology.full_cooperation(cfg["M"], cfg["N"], K, L)

    lambda_star = None
    if cfg["allocation"] == "maxmin":
        problem = power_control.MaxMinProblem(
            stats=stats, gains=gains, clusters=clusters,
            P_P=pw["P_P"], P_S=pw["P_S"], I_T=pw["I_T"],
            epsilon=cfg["epsilon"])
        solution = power_control.maxmin_bisection(problem)
        alloc = solution.allocation
        lambda_star = solution.lambda_star
    else:
        alloc = power_control.uniform_allocation(stats, clusters,
                                                 pw["P_P"], pw["P_S"])

    Z = rates.secondary_cci_Zk(stats, gains, clusters, alloc.eta_S)
    P_Sn = rates.cap_secondary_power(Z, pw["I_T"], pw["P_S"])
    alloc = PowerAllocation(eta_P=alloc.eta_P, eta_S=alloc.eta_S,
                            P_P=pw["P_P"], P_S=P_Sn)
    return gains, stats, clusters, alloc, tau_p, tau_pd, P_Sn, lambda_star


def _noma_point(cfg: dict, pw: dict):
    """Same pipeline with cluster pilots; users are reordered so index 0
    of each cluster is the strongest."""
    A, B, K, L = cfg["A"], cfg["B"], cfg["K"], cfg["L"]
    gains = _build_gains(cfg, A * K, B * L)
    tau_p, tau_pd = _pilot_lengths(cfg, A, B)
    Q = min(A, B) if cfg["Q"] is None else cfg["Q"]
    plan = estimation.assign_pilots_noma(A, B, Q, tau_p)

    prelim = estimation.ul_stats_noma(gains, A, B, plan, pw["P_ul_pilot"])
    perm_P = rates.order_noma_users(prelim.alpha_f)
    perm_S = rates.order_noma_users(prelim.alpha_g)
    gains = rates.apply_noma_order(gains, A, B, perm_P, perm_S)
    nstats = estimation.ul_stats_noma(gains, A, B, plan, pw["P_ul_pilot"])

    alloc = power_control.uniform_allocation_noma(nstats, pw["P_P"], pw["P_S"])
    rates.validate_noma_power_ordering(alloc.eta_P)
    rates.validate_noma_power_ordering(alloc.eta_S)

    Zak = rates.secondary_cci_Zak(nstats, gains, alloc.eta_S)
    P_Sn = rates.cap_secondary_power(Zak, pw["I_T"], pw["P_S"])
    alloc = PowerAllocation(eta_P=alloc.eta_P, eta_S=alloc.eta_S,
                            P_P=pw["P_P"], P_S=P_Sn)
    sic = SicModel.from_scalar(cfg["theta"], A, K, B, L)
    return gains, nstats, alloc, sic, tau_p, tau_pd, P_Sn


def evaluate_point(cfg: dict) -> list[dict]:
    """Rows for one operating point: per-user SINR and rate plus the
    point-level aggregates repeated on every row."""
    check_config(cfg)
    pw = _resolved_powers(cfg)
    noise = cfg["noise_power"]

    if cfg["mode"] == "oma":
        (gains, stats, clusters, alloc,
         tau_p, tau_pd, P_Sn, lambda_star) = _oma_point(cfg, pw)
        if cfg["csi"] == "statistical":
            gamma_P = rates.sinr_primary_oma(stats, gains, clusters, alloc,
                                             noise)
            gamma_S = rates.sinr_secondary_oma(stats, gains, clusters, alloc,
                                               noise)
            rate_P = rates.rate_from_sinr(gamma_P, cfg["tau_c"], tau_p)
            rate_S = rates.rate_from_sinr(gamma_S, cfg["tau_c"], tau_p)
        else:
            dl = estimation.dl_stats_oma(stats, gains, clusters, alloc.eta_P,
                                         alloc.eta_S, tau_pd * pw["P_d"])
            gamma_P = rates.sinr_primary_oma_dlpilot(dl, stats, gains,
                                                     clusters, alloc, noise)
            gamma_S = rates.sinr_secondary_oma_dlpilot(dl, stats, gains,
                                                       clusters, alloc, noise)
            rate_P = rates.rate_dlpilot_upperbound(gamma_P, cfg["tau_c"],
                                                   tau_p, tau_pd)
            rate_S = rates.rate_dlpilot_upperbound(gamma_S, cfg["tau_c"],
                                                   tau_p, tau_pd)
    else:
        gains, nstats, alloc, sic, tau_p, tau_pd, P_Sn = _noma_point(cfg, pw)
        lambda_star = None
        if cfg["csi"] == "statistical":
            gamma_P = rates.sinr_primary_noma(nstats, gains, alloc, sic, noise)
            gamma_S = rates.sinr_secondary_noma(nstats, gains, alloc, sic,
                                                noise)
            rate_P = rates.rate_from_sinr(gamma_P, cfg["tau_c"], tau_p)
            rate_S = rates.rate_from_sinr(gamma_S, cfg["tau_c"], tau_p)
        else:
            dl = estimation.dl_stats_noma(nstats, gains, alloc.eta_P,
                                          alloc.eta_S, tau_pd * pw["P_d"])
            gamma_P, gamma_S = rates.sinr_noma_dlpilot(dl, nstats, gains,
                                                       alloc, noise)
            rate_P = rates.rate_dlpilot_upperbound(gamma_P, cfg["tau_c"],
                                                   tau_p, tau_pd)
            rate_S = rates.rate_dlpilot_upperbound(gamma_S, cfg["tau_c"],
                                                   tau_p, tau_pd)

    sum_P = float(np.sum(rate_P))
    sum_S = float(np.sum(rate_S))
    rows = []
    for regime, gamma, rate in (("P", gamma_P, rate_P),
                                ("S", gamma_S, rate_S)):
        flat_g = np.ravel(gamma)
        flat_r = np.ravel(rate)
        for user in range(flat_g.size):
            rows.append({
                "sweep_var": cfg.get("_sweep_var", ""),
                "sweep_value": cfg.get("_sweep_value"),
                "regime": regime,
                "user": user,
                "gamma": float(flat_g[user]),
                "rate": float(flat_r[user]),
                "sum_rate_primary": sum_P,
                "sum_rate_secondary": sum_S,
                "P_Sn": P_Sn,
                "lambda_star": lambda_star,
            })
    return rows


def validate_point(cfg: dict) -> list[dict]:
    """Monte Carlo moment rows for the base operating point."""
    check_config(cfg)
    pw = _resolved_powers(cfg)
    noise = cfg["noise_power"]
    seed, trials = cfg["seed"], cfg["trials"]
    rows: list[dict] = []

    if cfg["mode"] == "oma":
        (gains, stats, clusters, alloc,
         tau_p, tau_pd, _, _) = _oma_point(cfg, pw)
        rows += montecarlo.empirical_ul_estimation(gains, stats, seed,
                                                   trials).as_dicts()
        rows += montecarlo.empirical_sinr_oma(gains, stats, clusters, alloc,
                                              seed, trials, noise).as_dicts()
        rows += montecarlo.empirical_Zk(gains, stats, clusters, alloc.eta_S,
                                        seed, trials).as_dicts()
        dl = estimation.dl_stats_oma(stats, gains, clusters, alloc.eta_P,
                                     alloc.eta_S, tau_pd * pw["P_d"])
        report, jensen = montecarlo.empirical_dl_pilot(
            gains, stats, clusters, alloc, dl, cfg["tau_c"], tau_p, tau_pd,
            seed, trials, noise)
        rows += report.as_dicts()
        for regime, r_ub, mean_rate, se in (
                ("P", jensen.r_ub_primary, jensen.mean_rate_primary,
                 jensen.stderr_primary),
                ("S", jensen.r_ub_secondary, jensen.mean_rate_secondary,
                 jensen.stderr_secondary)):
            for user in range(r_ub.size):
                margin = float(r_ub[user] - mean_rate[user])
                rows.append({
                    "report": "jensen",
                    "identity": f"R_ub >= mean rate {regime}[{user}]",
                    "closed_form": float(r_ub[user]),
                    "empirical": float(mean_rate[user]),
                    "stderr": float(se[user]),
                    "rel_deviation": margin,
                    "passed": int(margin >= -4.0 * se[user]),
                })
    else:
        gains, nstats, alloc, sic, _, _, _ = _noma_point(cfg, pw)
        rows += montecarlo.empirical_noma(gains, nstats, alloc, sic, seed,
                                          trials).as_dicts()
        rows += montecarlo.empirical_sinr_noma(gains, nstats, alloc, sic,
                                               seed, trials, noise).as_dicts()
    return rows


def _sweep_configs(cfg: dict) -> list[dict]:
    axis, values = cfg["sweep"], cfg["sweep_values"]
    points = []
    for value in values:
        point = dict(cfg)
        point[axis] = value
        point["_sweep_var"] = axis
        point["_sweep_value"] = float(value)
        points.append(point)
    return points


def run_rows(cfg: dict) -> list[dict]:
    if cfg["sweep"] is None:
        return evaluate_point(cfg)
    points = _sweep_configs(cfg)
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            chunks = list(pool.map(evaluate_point, points))
    else:
        chunks = [evaluate_point(point) for point in points]
    return [row for chunk in chunks for row in chunk]


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.9g" % value
    return str(value)


def render(rows: list[dict], columns: tuple, fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt_cell(row[c]) for c in columns])
        return buf.getvalue()
    payload = [
        {c: (float("%.9g" % v) if isinstance(v, float) else v)
         for c, v in ((c, row[c]) for c in columns)}
        for row in rows
    ]
    return json.dumps(payload, indent=2) + "\n"


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfunderlay",
        description="Underlay spectrum sharing on cell-free massive MIMO: "
                    "evaluate, sweep, and validate downlink rates.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "evaluate the configured operating point"),
                       ("sweep", "evaluate along the configured sweep axis"),
                       ("validate", "check closed forms against Monte Carlo")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", default=None,
                         help="flat JSON config file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the top-level seed")
        cmd.add_argument("--trials", type=int, default=None,
                         help="override the Monte Carlo trial count")
        cmd.add_argument("--out", default=None,
                         help="output path (default stdout)")
        cmd.add_argument("--format", choices=("csv", "json"), default=None,
                         help="output format")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for key in ("seed", "trials", "out", "format"):
            value = getattr(args, key)
            if value is not None:
                cfg[key] = value
        check_config(cfg)
        if args.command == "sweep" and cfg["sweep"] is None:
            raise ConfigError("sweep command needs a sweep axis in the config")

        if args.command == "validate":
            rows = validate_point(cfg)
            _emit(render(rows, VALIDATE_COLUMNS, cfg["format"]), cfg["out"])
            return 0 if all(row["passed"] for row in rows) else 1
        rows = run_rows(cfg)
        _emit(render(rows, COLUMNS, cfg["format"]), cfg["out"])
        return 0
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

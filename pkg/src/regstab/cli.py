"""Command-line front end: config ingestion, pipeline dispatch, and
bit-exact report/trajectory serialisation.

Subcommands: certify | bridge | synthesize | simulate | euler |
regularize | sweep.  Exit codes: 0 all checks passed, 2 check failures
(reports are still written), 1 usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys as _sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bridge as bridge_mod
from . import nhi
from .certify import (CandidateMRF, RateFunction, certify_decrease,
                      compact_radius_table, fit_distance_rate, fit_rate_gamma)
from .core import ControlSystem, SamplingRun, make_partition
from .euler import check_euler_cost, check_euler_stability, euler_limit
from .feedback import synthesize_feedback
from .regularize import (build_semiconcave_mrf, check_halved_decrease,
                         load_mrf_grid, save_mrf_grid)
from .simulate import (check_cost_bound, check_interval_decrease,
                       check_rR_stability, check_time_bound, fit_KL_beta,
                       sampling_trajectory, stable_entry_time)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULT_TOLERANCES = {
    "h_ode": 0.01,
    "d_tol": 1e-6,
    "tol_euler": 1e-3,
    "eps_safe": 0.05,
    "eta": 0.1,
}

_DEFAULT_BUDGETS = {
    "bridge": 4096,
    "certify": 360,
    "probe": 64,
}


@dataclass
class RunConfig:
    """Declarative description of one toolkit run."""

    system: dict
    mrf: str
    p0: float
    partition: dict
    horizon: float
    radii: dict | None = None
    region: dict | None = None
    initial_state: list | None = None
    initial_states: list | None = None
    tolerances: dict = field(default_factory=lambda: dict(_DEFAULT_TOLERANCES))
    budgets: dict = field(default_factory=lambda: dict(_DEFAULT_BUDGETS))
    output: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not isinstance(self.system, dict) or "id" not in self.system:
            raise ConfigError("config needs system.id")
        if self.p0 < 0:
            raise ConfigError("p0 must be nonnegative")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        for key, val in self.tolerances.items():
            if not (isinstance(val, (int, float)) and val > 0):
                raise ConfigError(f"tolerance {key} must be positive")
        if self.radii is not None:
            r, R = self.radii.get("r"), self.radii.get("R")
            if r is None or R is None or not (0 < r < R):
                raise ConfigError("radii need 0 < r < R")
        if self.region is not None:
            if not (0 < self.region.get("w_lo", 0) < self.region.get("w_hi", 0)):
                raise ConfigError("region needs 0 < w_lo < w_hi")
        if "diam" in self.partition and self.partition["diam"] <= 0:
            raise ConfigError("partition diameter must be positive")

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "mrf": self.mrf,
            "p0": self.p0,
            "partition": self.partition,
            "horizon": self.horizon,
            "radii": self.radii,
            "region": self.region,
            "initial_state": self.initial_state,
            "initial_states": self.initial_states,
            "tolerances": self.tolerances,
            "budgets": self.budgets,
            "output": self.output,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        tol = dict(_DEFAULT_TOLERANCES)
        tol.update(d.get("tolerances") or {})
        budgets = dict(_DEFAULT_BUDGETS)
        budgets.update(d.get("budgets") or {})
        cfg = RunConfig(
            system=d["system"],
            mrf=d["mrf"],
            p0=float(d["p0"]),
            partition=d.get("partition") or {},
            horizon=float(d.get("horizon", 10.0)),
            radii=d.get("radii"),
            region=d.get("region"),
            initial_state=d.get("initial_state"),
            initial_states=d.get("initial_states"),
            tolerances=tol,
            budgets=budgets,
            output=d.get("output") or {},
        )
        cfg.validate()
        return cfg

    @staticmethod
    def load(path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return RunConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

def build_system(cfg: RunConfig) -> ControlSystem:
    sid = cfg.system["id"]
    params = cfg.system.get("params") or {}
    if sid == "nhi":
        return nhi.make_nhi_system(
            lagrangian_mode=params.get("lagrangian_mode", "constant"),
            M_l=params.get("M_l", 1.0),
            C=params.get("C", 1.0),
            p0=cfg.p0,
        )
    raise ConfigError(f"unknown system id: {sid!r}")


def build_mrf(cfg: RunConfig, sys_: ControlSystem) -> CandidateMRF:
    mid = cfg.mrf
    if mid == "w1":
        return nhi.make_w1_mrf()
    if mid == "w2":
        return nhi.make_w2_mrf()
    if mid.startswith("regularized:") or mid.startswith("table:"):
        path = mid.split(":", 1)[1]
        try:
            return load_mrf_grid(path)
        except OSError as exc:
            raise ConfigError(f"cannot load candidate grid {path}: {exc}") from exc
    raise ConfigError(f"unknown mrf id: {mid!r}")


def effective_weight(cfg: RunConfig, mrf: CandidateMRF) -> tuple[float, list]:
    """Cost weight actually used by the closed loop.

    Merely Lipschitz candidates are run at half the configured weight;
    their guarantee chain only supports the halved bound.
    """
    notes = []
    if mrf.regularity == "lipschitz":
        notes.append("lipschitz candidate: running at effective weight p0/2")
        return cfg.p0 / 2.0, notes
    return cfg.p0, notes


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

def format_float(v: float) -> str:
    """Shortest round-trip decimal (no trailing '.0' on integral values)."""
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def emit_trajectory_csv(run: SamplingRun, path) -> None:
    """Write one row per recorded sub-step with the fixed column schema
    t, x0..x{n-1}, u0..u{m-1}, cost, dist, W."""
    n = run.states.shape[1]
    m = run.controls.shape[1]
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
              + ["cost", "dist", "W"])
    lines = [",".join(header)]
    for k in range(run.t.size):
        row = ([format_float(run.t[k])]
               + [format_float(v) for v in run.states[k]]
               + [format_float(v) for v in run.controls[k]]
               + [format_float(run.cost[k]), format_float(run.dist[k]),
                  format_float(run.w[k])])
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    return obj


REPORT_KEYS = ["stable", "r", "R", "delta", "bar_T_r", "cost_at_bar_T",
               "bound_W_over_p0", "time_bound_BtU", "kl_violation_max",
               "margins", "skipped_nonsmooth", "accepted_euler", "notes"]


def emit_report_json(checks: dict, path) -> str:
    """Write the fixed-schema report; non-finite numbers become strings."""
    report = {k: checks.get(k) for k in REPORT_KEYS}
    if report.get("margins") is None:
        report["margins"] = {"min": "nan", "mean": "nan"}
    if report.get("notes") is None:
        report["notes"] = []
    extra = {k: v for k, v in checks.items() if k not in REPORT_KEYS}
    if extra:
        report["extra"] = extra
    text = json.dumps(_sanitize(report), indent=2) + "\n"
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Pipeline assembly
# ---------------------------------------------------------------------------

@dataclass
class Toolchain:
    sys: ControlSystem
    declared: CandidateMRF
    mrf: CandidateMRF
    p0_eff: float
    rate: RateFunction
    tables: bridge_mod.BridgeTables
    N_table: object
    feedback: object
    notes: list


def _working_candidate(cfg: RunConfig, sys_: ControlSystem,
                       declared: CandidateMRF, region: dict,
                       notes: list) -> CandidateMRF:
    """The candidate actually driving the feedback.

    Semiconcave candidates are used as declared.  Merely Lipschitz ones
    are first certified against the target distance at the full weight
    and then regularised; the surrogate sits below the declared candidate
    on the working band, so the halved-weight cost bound transfers.
    """
    if declared.regularity != "lipschitz":
        return declared
    b_cert = cfg.budgets.get("certify", 360)
    distance_rate = fit_distance_rate(sys_, declared, cfg.p0, region,
                                      budget=b_cert,
                                      eta=cfg.tolerances["eta"])
    n_max = int(cfg.system.get("params", {}).get("n_max", 5))
    if declared.fast_regularizer is not None:
        working = declared.fast_regularizer(sys_, cfg.p0, distance_rate,
                                            n_max=n_max)
    else:
        working, _, _ = build_semiconcave_mrf(sys_, declared, cfg.p0,
                                              n_max=n_max,
                                              distance_rate=distance_rate)
    notes.append("feedback driven by the regularized candidate")
    return working


def assemble_toolchain(cfg: RunConfig, need_tables: bool = True) -> Toolchain:
    """Build system, candidates, rate, tables, radius table and feedback."""
    sys_ = build_system(cfg)
    declared = build_mrf(cfg, sys_)
    p0_eff, notes = effective_weight(cfg, declared)
    eps_safe = cfg.tolerances["eps_safe"]
    eta = cfg.tolerances["eta"]
    b_bridge = cfg.budgets.get("bridge", 4096)
    b_cert = cfg.budgets.get("certify", 360)

    if cfg.radii is not None:
        r, R = float(cfg.radii["r"]), float(cfg.radii["R"])
        pre_tables = bridge_mod.build_bridge_tables(
            declared, sys_.target, np.geomspace(r / 8.0, 3.0 * R, 17),
            budget=b_bridge, eps_safe=eps_safe)
        region = {"w_lo": pre_tables.level_inside_ball(r) / 8.0,
                  "w_hi": 2.2 * pre_tables.level_covering_ball(R)}
    elif cfg.region is not None:
        region = cfg.region
    else:
        raise ConfigError("this command needs a region or radii")

    mrf = _working_candidate(cfg, sys_, declared, region, notes)

    tables = None
    if need_tables:
        if cfg.radii is None:
            raise ConfigError("this command needs radii r < R")
        if mrf is declared:
            tables = pre_tables
        else:
            tables = bridge_mod.build_bridge_tables(
                mrf, sys_.target, np.geomspace(r / 8.0, 3.0 * R, 17),
                budget=b_bridge, eps_safe=eps_safe)
            region = {"w_lo": tables.level_inside_ball(r) / 8.0,
                      "w_hi": 2.2 * tables.level_covering_ball(R)}

    rate = fit_rate_gamma(sys_, mrf, p0_eff, region, budget=b_cert, eta=eta)
    levels = np.geomspace(region["w_lo"], region["w_hi"], 9)
    N_table = compact_radius_table(sys_, mrf, p0_eff, rate, levels,
                                   budget=max(16, b_cert // 8))
    fb = synthesize_feedback(sys_, mrf, p0_eff, N_table)
    return Toolchain(sys=sys_, declared=declared, mrf=mrf, p0_eff=p0_eff,
                     rate=rate, tables=tables, N_table=N_table, feedback=fb,
                     notes=notes)


def _empty_report() -> dict:
    return {k: None for k in REPORT_KEYS} | {"notes": []}


def run_simulation(cfg: RunConfig, z, seed: int | None = None,
                   chain: Toolchain | None = None) -> tuple[dict, SamplingRun]:
    """One full closed-loop run with every per-run check; returns the
    report payload and the run record."""
    chain = chain or assemble_toolchain(cfg)
    sys_, mrf = chain.sys, chain.mrf
    r, R = float(cfg.radii["r"]), float(cfg.radii["R"])
    tol = cfg.tolerances
    notes = list(chain.notes)

    if "diam" in cfg.partition:
        delta = float(cfg.partition["diam"])
        notes.append("sampling diameter taken from config, not scheduled")
    else:
        delta = bridge_mod.schedule_delta(
            sys_, mrf, chain.feedback, chain.p0_eff, chain.tables, r, R,
            chain.rate, probe_budget=cfg.budgets.get("probe", 64),
            h_ode=tol["h_ode"])
        notes.append("delta empirically certified by probe runs")

    part = make_partition(delta, mode=cfg.partition.get("mode", "uniform"),
                          seed=seed if seed is not None
                          else cfg.partition.get("seed", 0))
    run = sampling_trajectory(sys_, chain.feedback, part, np.asarray(z, float),
                              cfg.horizon, r_query=r, h_ode=tol["h_ode"],
                              d_tol=tol["d_tol"], mrf=mrf)

    mu = chain.tables.level_inside_ball(r)
    envelope = fit_KL_beta([run], "comparison_ode", tables=chain.tables,
                           rate=chain.rate)
    stable_ok, excess = check_rR_stability(run, envelope, r, R)
    t_bar = stable_entry_time(run, r)
    settled = math.isfinite(t_bar)

    dec_ok, margins = check_interval_decrease(run, mrf, chain.p0_eff,
                                              chain.rate, w_stop=mu / 4.0)
    checks = _empty_report()
    checks.update({
        "stable": bool(stable_ok and settled),
        "r": r, "R": R, "delta": delta,
        "bar_T_r": t_bar,
        "kl_violation_max": excess,
        "margins": {"min": float(np.min(margins)) if margins.size else 0.0,
                    "mean": float(np.mean(margins)) if margins.size else 0.0},
        "skipped_nonsmooth": 0,
        "accepted_euler": None,
        "notes": notes,
    })
    declared_bound = chain.declared.w(run.z) / chain.p0_eff
    checks["bound_W_over_p0"] = declared_bound
    ok = stable_ok and settled and dec_ok

    if settled:
        if t_bar == 0.0:
            checks["cost_at_bar_T"] = 0.0
            notes.append("vacuous cost bound")
            cost_ok = True
        else:
            cost_ok, _ = check_cost_bound(run, mrf, chain.p0_eff, r)
            cost = run.cost_at(t_bar)
            checks["cost_at_bar_T"] = cost
            cost_ok = cost_ok and cost <= declared_bound + 1e-6
        ok = ok and cost_ok
    else:
        checks["cost_at_bar_T"] = math.inf
        notes.append("no finite stable-entry time within the horizon")

    if run.dist[0] > r:
        time_ok, bound = check_time_bound(run, mrf, chain.rate, r, mu)
        checks["time_bound_BtU"] = bound
        ok = ok and time_ok
    else:
        checks["time_bound_BtU"] = math.inf
        notes.append("started inside the r-ball; settling bound vacuous")
    if getattr(chain.feedback, "clamp_hits", 0):
        notes.append(f"radius table clamped {chain.feedback.clamp_hits} times")
    checks["_ok"] = bool(ok)
    return checks, run


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _write_outputs(cfg: RunConfig, args, checks: dict,
                   run: SamplingRun | None, suffix: str = "") -> None:
    out = args.out or cfg.output.get("out")
    rep = args.report or cfg.output.get("report")
    if out and run is not None:
        path = Path(out)
        if suffix:
            path = path.with_name(path.stem + suffix + path.suffix)
        emit_trajectory_csv(run, path)
    if rep:
        path = Path(rep)
        if suffix:
            path = path.with_name(path.stem + suffix + path.suffix)
        emit_report_json({k: v for k, v in checks.items()
                          if not k.startswith("_")}, path)


def cmd_simulate(cfg: RunConfig, args) -> int:
    checks, run = run_simulation(cfg, cfg.initial_state, seed=args.seed)
    _write_outputs(cfg, args, checks, run)
    return 0 if checks["_ok"] else 2


def cmd_sweep(cfg: RunConfig, args) -> int:
    if not cfg.initial_states:
        raise ConfigError("sweep needs initial_states")
    chain = assemble_toolchain(cfg)
    threads = args.threads or int(os.environ.get("REGSTAB_THREADS", "1"))

    def one(idx_z):
        idx, z = idx_z
        return idx, run_simulation(cfg, z, seed=args.seed, chain=chain)

    items = list(enumerate(cfg.initial_states))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    results.sort(key=lambda t: t[0])

    all_ok = True
    mins = []
    for idx, (checks, run) in results:
        _write_outputs(cfg, args, checks, run, suffix=f"_{idx:03d}")
        all_ok &= checks["_ok"]
        mins.append(checks["margins"]["min"])
    summary = _empty_report()
    summary.update({
        "stable": all_ok,
        "r": cfg.radii["r"], "R": cfg.radii["R"],
        "margins": {"min": min(mins), "mean": float(np.mean(mins))},
        "notes": [f"sweep over {len(items)} initial states"],
    })
    rep = args.report or cfg.output.get("report")
    if rep:
        emit_report_json(summary, rep)
    return 0 if all_ok else 2


def cmd_certify(cfg: RunConfig, args) -> int:
    sys_ = build_system(cfg)
    mrf = build_mrf(cfg, sys_)
    p0_eff, notes = effective_weight(cfg, mrf)
    if cfg.region is None:
        raise ConfigError("certify needs a region")
    b = cfg.budgets.get("certify", 360)
    rate = fit_rate_gamma(sys_, mrf, p0_eff, cfg.region, budget=b,
                          eta=cfg.tolerances["eta"])
    report = certify_decrease(sys_, mrf, p0_eff, cfg.region, rate, budget=b)
    checks = _empty_report()
    checks.update({
        "stable": report.certified,
        "margins": {"min": report.min_margin, "mean": report.mean_margin},
        "skipped_nonsmooth": report.skipped_nonsmooth,
        "notes": notes + report.notes
        + [f"violations: {len(report.violations)}"],
    })
    rep = args.report or cfg.output.get("report")
    if rep:
        emit_report_json(checks, rep)
    return 0 if report.certified else 2


def cmd_bridge(cfg: RunConfig, args) -> int:
    sys_ = build_system(cfg)
    mrf = build_mrf(cfg, sys_)
    if cfg.radii is None:
        raise ConfigError("bridge needs radii")
    r, R = float(cfg.radii["r"]), float(cfg.radii["R"])
    nodes = np.geomspace(r / 8.0, 3.0 * R, 17)
    tables = bridge_mod.build_bridge_tables(
        mrf, sys_.target, nodes, budget=cfg.budgets.get("bridge", 4096),
        eps_safe=cfg.tolerances["eps_safe"])
    out = args.out or cfg.output.get("out")
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(json.dumps(_sanitize(tables.to_dict()), indent=2) + "\n")
    return 0


def cmd_synthesize(cfg: RunConfig, args) -> int:
    chain = assemble_toolchain(cfg, need_tables=cfg.radii is not None)
    region = cfg.region
    if region is None:
        r, R = float(cfg.radii["r"]), float(cfg.radii["R"])
        mu = chain.tables.level_inside_ball(r)
        region = {"w_lo": mu / 4.0, "w_hi": chain.tables.level_covering_ball(R)}
    report = certify_decrease(chain.sys, chain.mrf, chain.p0_eff, region,
                              chain.rate, N_table=chain.N_table,
                              budget=cfg.budgets.get("certify", 360))
    checks = _empty_report()
    checks.update({
        "stable": report.certified,
        "margins": {"min": report.min_margin, "mean": report.mean_margin},
        "skipped_nonsmooth": report.skipped_nonsmooth,
        "notes": chain.notes + ["feedback synthesized"],
    })
    out = args.out or cfg.output.get("out")
    if out and hasattr(chain.N_table, "to_dict"):
        with open(out, "w", newline="\n") as fh:
            fh.write(json.dumps(_sanitize(chain.N_table.to_dict()), indent=2)
                     + "\n")
    rep = args.report or cfg.output.get("report")
    if rep:
        emit_report_json(checks, rep)
    return 0 if report.certified else 2


def cmd_euler(cfg: RunConfig, args) -> int:
    chain = assemble_toolchain(cfg, need_tables=cfg.radii is not None)
    seq = cfg.partition.get("sequence")
    if not seq:
        raise ConfigError("euler needs partition.sequence")
    el = euler_limit(chain.sys, chain.feedback, cfg.initial_state, seq,
                     cfg.horizon, cfg.tolerances["tol_euler"],
                     h_ode=cfg.tolerances["h_ode"], mrf=chain.mrf,
                     partition_mode=cfg.partition.get("mode", "uniform"),
                     seed=args.seed if args.seed is not None
                     else cfg.partition.get("seed", 0))
    checks = _empty_report()
    ok = el.accepted
    notes = list(chain.notes) + el.notes
    if el.accepted and chain.tables is not None:
        envelope = fit_KL_beta(el.runs, "comparison_ode", tables=chain.tables,
                               rate=chain.rate)
        st_ok, excess = check_euler_stability(el, chain.sys, envelope)
        cost_ok, _ = check_euler_cost(el, chain.mrf, chain.p0_eff)
        checks["kl_violation_max"] = excess
        checks["cost_at_bar_T"] = float(np.max(el.cost))
        checks["bound_W_over_p0"] = chain.declared.w(el.z) / chain.p0_eff
        ok = ok and st_ok and cost_ok
    gap_tail = {str(w): el.cauchy_gaps[w][-1] for w in el.windows}
    notes.append(f"final refinement gaps: {gap_tail}")
    checks.update({
        "stable": bool(ok),
        "accepted_euler": el.accepted,
        "notes": notes,
    })
    rep = args.report or cfg.output.get("report")
    if rep:
        emit_report_json(checks, rep)
    return 0 if ok else 2


def cmd_regularize(cfg: RunConfig, args) -> int:
    sys_ = build_system(cfg)
    mrf = build_mrf(cfg, sys_)
    if cfg.region is None:
        raise ConfigError("regularize needs a region")
    b = cfg.budgets.get("certify", 360)
    distance_rate = fit_distance_rate(sys_, mrf, cfg.p0, cfg.region, budget=b)
    wbar, levels, _ = build_semiconcave_mrf(
        sys_, mrf, cfg.p0, n_max=int(cfg.system.get("params", {}).get("n_max", 4)),
        distance_rate=distance_rate)
    report = check_halved_decrease(sys_, wbar, cfg.p0, cfg.region,
                                   distance_rate,
                                   budget=max(32, b // 4))
    out = args.out or cfg.output.get("out")
    if out:
        hint = float(mrf.proper_hint(cfg.region["w_hi"]))
        save_mrf_grid(wbar, -hint * np.ones(mrf.dim), hint * np.ones(mrf.dim),
                      [17] * mrf.dim, out)
    checks = _empty_report()
    checks.update({
        "stable": report.certified,
        "margins": {"min": report.min_margin, "mean": report.mean_margin},
        "skipped_nonsmooth": report.skipped_nonsmooth,
        "notes": [f"levels built: {[lev.n for lev in levels]}"] + report.notes,
    })
    rep = args.report or cfg.output.get("report")
    if rep:
        emit_report_json(checks, rep)
    return 0 if report.certified else 2


_COMMANDS = {
    "certify": cmd_certify,
    "bridge": cmd_bridge,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "euler": cmd_euler,
    "regularize": cmd_regularize,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regstab",
        description="Feedback synthesis and certification toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--out", default=None, help="trajectory/table output")
    parser.add_argument("--report", default=None, help="JSON report output")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    return parser


def run_command(argv) -> int:
    """Dispatch one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = RunConfig.load(args.config)
        code = _COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    if args.verbose:
        print(f"{args.command}: exit {code}")
    return code


def main() -> None:
    raise SystemExit(run_command(_sys.argv[1:]))


if __name__ == "__main__":
    main()

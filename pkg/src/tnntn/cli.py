"""Command-line driver: ``run``, ``validate`` and ``summarize``.

Exit codes: 0 success (flagged runs still exit 0 with a warning record),
1 nothing to summarize or missing artifacts, 2 invalid configuration,
3 I/O failure.  Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .channel import build_channel_state
from .config import CampaignConfig, load_config, parse_seeds
from .orchestrator import POLICY_KINDS, Policy, pooled_table, run_policy
from .scenario import ConfigError, build_topology

log = logging.getLogger(__name__)

REPORT_FILES = ("report.json", "per_ue.csv", "rate_cdf.csv", "rsrp_cdf.csv", "trajectory.csv")
TRAJECTORY_COLUMNS = ("stage", "round", "t", "slt", "epsilon", "epsilon_dual", "sat_fraction",
                      "dual_value", "mean_p", "mean_p_macro", "mean_p_sat")
TABLE_HEADER = ("policy", "p5_rate_bps", "mean_rate_bps", "median_rate_bps", "p95_rate_bps",
                "coverage_ratio", "n_ues", "n_seeds", "mean_power_w")


def policy_dirname(name: str) -> str:
    return name.replace(":", "_eps")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def cdf_rows(values):
    """Sorted unique x with the fraction of samples <= x; last fraction is 1.0."""
    v = np.asarray(values, dtype=float)
    xs, counts = np.unique(v, return_counts=True)
    cum = np.cumsum(counts)
    frac = cum / len(v)
    frac[-1] = 1.0
    return list(zip(xs.tolist(), frac.tolist()))


def write_cdf(path, values, label: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, "cdf"])
        for x, f in cdf_rows(values):
            w.writerow([repr(x), repr(f)])


def write_trajectory(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in TRAJECTORY_COLUMNS])


def write_report(report, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(report.to_json())
    report.write_per_ue_csv(directory / "per_ue.csv")
    write_cdf(directory / "rate_cdf.csv", report.rate_bps, "rate_bps")
    write_cdf(directory / "rsrp_cdf.csv", report.rsrp_dbm, "rsrp_dbm")
    write_trajectory(directory / "trajectory.csv", report.trajectory)


def write_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in rows:
            w.writerow([r["policy"], repr(r["p5_rate"]), repr(r["mean_rate"]), repr(r["median_rate"]),
                        repr(r["p95_rate"]), repr(r["coverage_ratio"]), r.get("n_ues", ""),
                        r.get("n_seeds", 1), repr(r.get("mean_power_w", float("nan")))])


def run_seed(cfg: CampaignConfig, seed: int):
    """All policies of one seed on one shared snapshot."""
    topo = build_topology(cfg.scenario, seed,
                          max_power_dbm=(cfg.radio.tn_max_power_per_re_dbm,
                                         cfg.radio.ntn_max_power_per_re_dbm),
                          gain_dbi=(cfg.channel.tn_antenna_gain_dbi, cfg.channel.ntn_antenna_gain_dbi))
    channel = build_channel_state(topo, cfg.channel, seed)
    return [run_policy(topo, channel, cfg.radio, pol, cfg.solver, seed=seed) for pol in cfg.policies]


def _run_seed_star(args):
    return run_seed(*args)


def run_campaign(cfg: CampaignConfig, out_dir: Path, threads: int = 1) -> dict:
    """Run every (seed, policy) pair and write the artifacts under ``out_dir``."""
    jobs = [(cfg, s) for s in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_seed_star, jobs))
    else:
        results = [run_seed(*j) for j in jobs]

    out_dir.mkdir(parents=True, exist_ok=True)
    all_reports, flagged = [], []
    for seed, reports in zip(cfg.seeds, results):
        seed_dir = out_dir / f"seed_{seed:03d}"
        for rep in reports:
            write_report(rep, seed_dir / policy_dirname(rep.policy))
            if rep.warnings:
                flagged.append(dict(seed=seed, policy=rep.policy, warnings=rep.warnings))
        write_table(seed_dir / "table.csv", pooled_table(reports))
        all_reports.extend(reports)

    table = pooled_table(all_reports)
    write_table(out_dir / "table.csv", table)
    agg = out_dir / "aggregate"
    for name in dict.fromkeys(r.policy for r in all_reports):
        rs = [r for r in all_reports if r.policy == name]
        d = agg / policy_dirname(name)
        d.mkdir(parents=True, exist_ok=True)
        write_cdf(d / "rate_cdf.csv", np.concatenate([r.rate_bps for r in rs]), "rate_bps")
        write_cdf(d / "rsrp_cdf.csv", np.concatenate([r.rsrp_dbm for r in rs]), "rsrp_dbm")
    (out_dir / "warnings.json").write_text(json.dumps(flagged, indent=2, sort_keys=True) + "\n")
    return dict(table=table, flagged=flagged, reports=all_reports)


def _policy_order(name: str):
    kind = name.split(":")[0]
    rank = POLICY_KINDS.index(kind) if kind in POLICY_KINDS else len(POLICY_KINDS)
    return rank, name


def summarize(out_dir, stream=None) -> int:
    """Print pooled p5/mean/median/p95 (Mbit/s) and coverage per policy."""
    stream = stream or sys.stdout
    out_dir = Path(out_dir)
    found = sorted(out_dir.rglob("report.json")) if out_dir.is_dir() else []
    found = [p for p in found if "aggregate" not in p.parts]
    if not found:
        print("no reports found", file=sys.stderr)
        return 1
    missing = []
    pooled: dict = {}
    for rj in found:
        d = rj.parent
        missing += [str(d / f) for f in REPORT_FILES if not (d / f).is_file()]
        if not (d / "per_ue.csv").is_file():
            continue
        name = json.loads(rj.read_text())["policy"]
        with open(d / "per_ue.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        entry = pooled.setdefault(name, [[], []])
        entry[0] += [float(r["rate_bps"]) for r in rows]
        entry[1] += [int(r["covered"]) for r in rows]
    for m in missing:
        print(f"missing: {m}", file=sys.stderr)

    names = sorted(pooled, key=_policy_order)
    stats = {}
    for n in names:
        r = np.asarray(pooled[n][0])
        p5, med, p95 = np.percentile(r, [5, 50, 95])
        stats[n] = (p5, float(np.mean(r)), med, p95, float(np.mean(pooled[n][1])))
    ref = "baseline_tn_only" if "baseline_tn_only" in stats else names[0]
    head = f"{'policy':<30} {'p5':>10} {'mean':>10} {'median':>10} {'p95':>10} {'coverage':>9}"
    if len(names) > 1:
        head += f" {'mean vs ' + ref:>30}"
    print("rates in Mbit/s", file=stream)
    print(head, file=stream)
    for n in names:
        p5, mean, med, p95, cov = stats[n]
        line = f"{n:<30} {p5/1e6:>10.3f} {mean/1e6:>10.3f} {med/1e6:>10.3f} {p95/1e6:>10.3f} {cov:>9.4f}"
        if len(names) > 1:
            base = stats[ref][1]
            delta = (mean - base) / base * 100.0 if base > 0 else float("nan")
            line += f" {delta:>+29.1f}%"
        print(line, file=stream)
    return 1 if missing else 0


def _error(kind: str, message: str, path: str | None = None) -> None:
    rec = {"error": kind, "message": message}
    if path is not None:
        rec["path"] = path
    print(json.dumps(rec), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tnntn", description="Joint TN/NTN association, "
                                 "bandwidth split and power control campaigns")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a campaign")
    run.add_argument("--config", required=True, help="config file or preset name")
    run.add_argument("--policy", action="append", help="policy override (repeatable)")
    run.add_argument("--seeds", help="N (0..N-1), a-b, or a,b,c")
    run.add_argument("--out", help="output directory")
    run.add_argument("--threads", type=int, help="worker processes over seeds")
    run.add_argument("--validate-only", action="store_true")
    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", required=True)
    summ = sub.add_parser("summarize", help="print the comparison table of a campaign")
    summ.add_argument("out_dir", nargs="?", help="campaign output directory")
    summ.add_argument("--out", dest="out_flag")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _load(args) -> CampaignConfig:
    cfg = load_config(args.config)
    if getattr(args, "policy", None):
        cfg.policies = [Policy.parse(p) for p in args.policy]
    if getattr(args, "seeds", None):
        cfg.seeds = parse_seeds(args.seeds)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg.threads = args.threads
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "summarize":
            target = args.out_dir or args.out_flag or CampaignConfig().resolve_output_dir()
            return summarize(target)
        cfg = _load(args)
        if args.command == "validate" or args.validate_only:
            print(f"ok: {len(cfg.policies)} policies, {len(cfg.seeds)} seeds")
            return 0
        out = cfg.resolve_output_dir(args.out)
        res = run_campaign(cfg, out, cfg.threads)
        for f in res["flagged"]:
            print(json.dumps(dict(warning="flagged run", **f)), file=sys.stderr)
        print(f"wrote {len(res['reports'])} reports to {out}")
        return 0
    except ConfigError as exc:
        _error("config", str(exc), exc.path)
        return 2
    except OSError as exc:
        _error("io", str(exc), getattr(exc, "filename", None) and str(exc.filename))
        return 3


if __name__ == "__main__":
    sys.exit(main())

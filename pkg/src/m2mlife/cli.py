"""Command-line batch runner: ``m2mlife run|compare|sweep``.

Every CSV starts with ``#`` comment lines (tool version, config hash, seed,
command) followed by a header row. Plots are SVG files rebuilt from those
CSVs by the ``plot_*`` functions, so they can be regenerated offline.

Exit codes: 0 success, 1 usage, 2 invalid configuration, 3 runtime failure.
"""

import argparse
import csv
import itertools
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .sim import SCHEMES, ConfigError, SimConfig, paired_ratio, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
METRICS = ("sil", "lil", "ail", "slil", "jain", "variance", "ee", "se",
           "drained_fraction", "violations")
SWEEPS = {"snr_target": "snr_target_db", "payload": "payload", "load": "node_count"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# csv i/o ---------------------------------------------------------------------

def _meta(cfg: SimConfig, command: str) -> List[str]:
    return [f"m2mlife {__version__}", f"config_hash {config_hash(cfg)}",
            f"seed {cfg.seed}", f"command {command}"]


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence],
              meta: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# plots ---------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "m2mlife"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def plot_histogram(lifetimes_csv: Path, out: Path, bins: int) -> None:
    """Empirical density of individual drain times, one curve per scheme."""
    plt = _pyplot()
    rows = read_csv(lifetimes_csv)
    fig, ax = plt.subplots(figsize=(6, 4))
    schemes = sorted({int(r["scheme"]) for r in rows})
    data = {s: np.array([float(r["drain_time"]) for r in rows if int(r["scheme"]) == s])
            for s in schemes}
    edges = np.histogram_bin_edges(np.concatenate(list(data.values())), bins=bins)
    for s in schemes:
        ax.hist(data[s], bins=edges, density=True, histtype="step", label=f"scheme {s}")
    ax.set_xlabel("drain time (s)")
    ax.set_ylabel("density")
    ax.legend()
    _save(fig, out)
    plt.close(fig)


def plot_bars(compare_csv: Path, out: Path) -> None:
    """Network lifetime under each definition, grouped by scheme."""
    plt = _pyplot()
    rows = read_csv(compare_csv)
    defs = ("sil", "ail", "lil")
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, d in enumerate(defs):
        ax.bar(x + (j - 1) * 0.27, [float(r[f"{d}_mean"]) for r in rows], 0.27,
               yerr=[float(r[f"{d}_ci95"]) for r in rows], label=d.upper())
    ax.set_xticks(x, [f"scheme {r['scheme']}" for r in rows])
    ax.set_ylabel("lifetime (s)")
    ax.legend()
    _save(fig, out)
    plt.close(fig)


def plot_fairness(compare_csv: Path, out: Path) -> None:
    """Jain index and drain-time variance per scheme."""
    plt = _pyplot()
    rows = read_csv(compare_csv)
    labels = [r["scheme"] for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.5))
    a.bar(labels, [float(r["jain_mean"]) for r in rows])
    a.set_ylabel("Jain index")
    b.bar(labels, [float(r["variance_mean"]) for r in rows])
    b.set_ylabel("drain-time variance (s$^2$)")
    for ax in (a, b):
        ax.set_xlabel("scheme")
    fig.tight_layout()
    _save(fig, out)
    plt.close(fig)


def plot_sweep(sweep_csv: Path, out_dir: Path) -> List[Path]:
    """One line plot per metric against the swept value."""
    plt = _pyplot()
    rows = read_csv(sweep_csv)
    param = rows[0]["parameter"]
    schemes = sorted({int(r["scheme"]) for r in rows})
    written = []
    for metric in ("sil", "ee", "se"):
        fig, ax = plt.subplots(figsize=(6, 4))
        for s in schemes:
            sel = [r for r in rows if int(r["scheme"]) == s]
            ax.errorbar([float(r["value"]) for r in sel], [float(r[f"{metric}_mean"]) for r in sel],
                        yerr=[float(r[f"{metric}_ci95"]) for r in sel], marker="o",
                        label=f"scheme {s}")
        ax.set_xlabel(param)
        ax.set_ylabel(metric.upper())
        ax.legend()
        path = out_dir / f"sweep_{metric}.svg"
        _save(fig, path)
        plt.close(fig)
        written.append(path)
    return written


# commands ---------------------------------------------------------------------

def _summary_row(res) -> List[float]:
    s = res.summary()
    return [v for m in METRICS for v in (s[m]["mean"], s[m]["ci95"])]


_SUMMARY_HEADER = [f"{m}_{k}" for m in METRICS for k in ("mean", "ci95")]


def _lifetime_rows(scheme: int, res):
    for rep, rpt in enumerate(res.reports):
        for node, (t, d) in enumerate(zip(rpt.drain_time, rpt.drained)):
            yield [scheme, rep, node, float(t), int(bool(d))]


_LIFETIME_HEADER = ["scheme", "replication", "node", "drain_time", "drained"]


def cmd_run(cfg: SimConfig, out: Path, replications: int, command: str, workers=None) -> int:
    res = run_experiment(cfg, replications, workers=workers, keep_reports=True)
    meta = _meta(cfg, command)
    write_csv(out / "report.csv", ["scheme", "replications", *_SUMMARY_HEADER],
              [[cfg.scheme, replications, *_summary_row(res)]], meta)
    write_csv(out / "lifetimes.csv", _LIFETIME_HEADER, _lifetime_rows(cfg.scheme, res), meta)
    return EXIT_OK


def cmd_compare(cfg: SimConfig, schemes: Sequence[int], out: Path, replications: int,
                bins: int, command: str, workers=None) -> int:
    if len(schemes) < 2:
        raise UsageError("compare needs at least two schemes")
    results = {s: run_experiment(cfg.replace(scheme=s), replications, workers=workers,
                                 keep_reports=True) for s in schemes}
    pairs = list(itertools.combinations(schemes, 2))
    ratio_header, ratio_vals = [], []
    for a, b in pairs:
        for m in ("sil", "lil"):
            r, lo, hi = paired_ratio(results[a].values(m), results[b].values(m))
            ratio_header += [f"{m}_{a}/{m}_{b}", f"{m}_{a}/{m}_{b}_low", f"{m}_{a}/{m}_{b}_high"]
            ratio_vals += [r, lo, hi]
    rows = []
    for s in schemes:
        digest = results[s].reports[0].arrival_digest
        rows.append([s, replications, *_summary_row(results[s]), digest, *ratio_vals])
    meta = _meta(cfg, command)
    write_csv(out / "compare.csv",
              ["scheme", "replications", *_SUMMARY_HEADER, "arrival_digest", *ratio_header],
              rows, meta)
    write_csv(out / "lifetimes.csv", _LIFETIME_HEADER,
              itertools.chain.from_iterable(_lifetime_rows(s, results[s]) for s in schemes), meta)
    plot_histogram(out / "lifetimes.csv", out / "lifetime_pdf.svg", bins)
    plot_bars(out / "compare.csv", out / "lifetime_bars.svg")
    plot_fairness(out / "compare.csv", out / "fairness.svg")
    return EXIT_OK


def cmd_sweep(cfg: SimConfig, parameter: str, values: Sequence[float], schemes: Sequence[int],
              out: Path, replications: int, command: str, workers=None) -> int:
    if parameter not in SWEEPS:
        raise UsageError(f"parameter must be one of {sorted(SWEEPS)}")
    if len(values) < 2:
        raise UsageError("sweep needs at least two values")
    field = SWEEPS[parameter]
    rows = []
    for v in values:
        val = int(v) if field == "node_count" else float(v)
        for s in schemes:
            res = run_experiment(cfg.replace(scheme=s, **{field: val}), replications,
                                 workers=workers)
            rows.append([parameter, v, s, replications, *_summary_row(res)])
    write_csv(out / "sweep.csv", ["parameter", "value", "scheme", "replications",
                                  *_SUMMARY_HEADER], rows, _meta(cfg, command))
    plot_sweep(out / "sweep.csv", out)
    return EXIT_OK


# argument handling -------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="m2mlife", description="Lifetime-aware machine uplink scheduling experiments.")
    p.add_argument("--version", action="version", version=f"m2mlife {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, hlp in (("run", "one scheme, aggregated over replications"),
                      ("compare", "several schemes on shared seeds"),
                      ("sweep", "vary one parameter across schemes")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", type=Path, help="INI file (default: bundled reference table)")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--nodes", type=int, help="number of nodes")
        sp.add_argument("--replications", type=int, default=20)
        sp.add_argument("--workers", type=int, help="parallel processes (default: all CPUs)")
        if name == "run":
            sp.add_argument("--scheme", type=int, help="scheme id 1-6")
        else:
            sp.add_argument("--scheme", type=_int_list, help="comma-separated scheme ids")
        if name == "sweep":
            sp.add_argument("--param", required=True, choices=sorted(SWEEPS))
            sp.add_argument("--values", required=True, type=_float_list)
    return p


def _audit_command(argv: Sequence[str]) -> str:
    """Invocation for the CSV header, without the output location so that
    reruns into another directory stay byte-identical."""
    kept, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a == "--out":
            skip = True
        elif not a.startswith("--out="):
            kept.append(a)
    return " ".join(["m2mlife", *kept])


def _check_schemes(schemes: Sequence[int]) -> None:
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise UsageError(f"unknown scheme id(s) {bad}; choose from {sorted(SCHEMES)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.replications < 1:
            raise UsageError("--replications must be at least 1")
        schemes = args.scheme if isinstance(args.scheme, list) else (
            [args.scheme] if args.scheme is not None else [])
        _check_schemes(schemes)
    except UsageError as exc:
        msg = str(exc)
        if not msg.startswith("usage:"):
            msg = f"{parser.format_usage()}m2mlife: error: {msg}"
        print(msg, file=sys.stderr)
        return EXIT_USAGE
    command = _audit_command(argv)
    try:
        overrides = {"seed": args.seed, "node_count": args.nodes}
        if args.command == "run":
            overrides["scheme"] = args.scheme
        cfg, bins = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"m2mlife: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return cmd_run(cfg, args.out, args.replications, command, args.workers)
        if args.command == "compare":
            return cmd_compare(cfg, schemes or sorted(SCHEMES), args.out, args.replications,
                               bins, command, args.workers)
        return cmd_sweep(cfg, args.param, args.values, schemes or [cfg.scheme], args.out,
                         args.replications, command, args.workers)
    except UsageError as exc:
        print(f"{parser.format_usage()}m2mlife: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"m2mlife: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"m2mlife: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

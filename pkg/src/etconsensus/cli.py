"""Command-line front end.

    etconsensus run --scenario paper_fig2 --out runs/fig2
    etconsensus run --scenario my.yaml --sweep alpha=1,5,10 beta=1,10 --jobs 4
    etconsensus generate --n 6 --seed 3 --connectivity spanning-tree -o rand.yaml
    etconsensus list
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import DEFAULT_CONSENSUS_TOL, DISSIPATION_TOL, lyapunov_W, nonincreasing, summarize
from .errors import ConsensusError, GraphStructureError, NumericError, UnsupportedDepthError
from .graph import condense
from .scenario_file import ScenarioFile, bundled_names, dump_scenario, generate_random, resolve_scenario
from .sim import min_inter_event, run

log = logging.getLogger("etconsensus")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory(record, path: Path) -> None:
    n, p = record.scenario.n, record.scenario.p
    header = ["t"] + [f"x_{i + 1}_{l + 1}" for i in range(n) for l in range(p)]
    rows = [(t, 0, x) for t, x in zip(record.sample_times, record.sample_x)]
    rows += [(t, 1, x) for t, x in zip(record.event_times, record.event_x)]
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, _, x in rows:
            w.writerow([_fmt(t)] + [_fmt(v) for v in np.ravel(x)])


def write_events(record, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "k", "t"])
        for i, times in enumerate(record.events):
            for k, t in enumerate(times, start=1):
                w.writerow([i + 1, k, _fmt(t)])


def write_lyapunov(series, path: Path) -> None:
    cols = series.columns()
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(cols[k] for k in names)):
            w.writerow([_fmt(v) for v in row])


def execute(sf: ScenarioFile, out_dir: Path, emit_lyapunov: bool = True, max_events: int = 10**6, **overrides) -> dict:
    """Run one scenario and write every artifact into ``out_dir``."""
    scenario = sf.to_scenario(**overrides)
    record = run(scenario, max_events_per_agent=max_events)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory(record, out_dir / "trajectory.csv")
    write_events(record, out_dir / "events.csv")

    eps = sf.tolerances.get("consensus", DEFAULT_CONSENSUS_TOL)
    diss_tol = sf.tolerances.get("dissipation", DISSIPATION_TOL)
    warnings_out = []
    try:
        dec = condense(scenario.graph)
    except GraphStructureError as exc:
        dec = None
        warnings_out.append(f"no consensus analysis: {exc}")
    if dec is not None:
        summary = summarize(record, dec, eps)
    else:
        summary = {
            "name": scenario.name,
            "event_counts": record.event_counts,
            "min_inter_event": min_inter_event(record),
            "verdict": None,
        }
    summary["scenario_hash"] = sf.digest()

    if emit_lyapunov and dec is not None:
        try:
            series = lyapunov_W(dec, scenario.outputs, record, scenario)
        except UnsupportedDepthError as exc:
            warnings_out.append(str(exc))
        else:
            write_lyapunov(series, out_dir / "lyapunov.csv")
            if series.W is not None:
                ok, worst, idx = nonincreasing(series.W, diss_tol)
                summary["lyapunov"] = {"series": "W", "nonincreasing": ok, "worst_step_increase": worst}
            else:
                start = series.T1_index
                if start is None:
                    ok, worst = None, None
                else:
                    ok, worst, idx = nonincreasing(series.Wr, diss_tol, start)
                summary["lyapunov"] = {
                    "series": "Wr",
                    "T1": series.T1,
                    "nonincreasing_after_T1": ok,
                    "worst_step_increase": worst,
                    "constants": series.constants,
                }
            if ok is False:
                warnings_out.append(f"Lyapunov series rose by {worst:.3e} in one step (tolerance {diss_tol:.1e})")
    summary["warnings"] = warnings_out
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _parse_sweep(tokens) -> dict:
    grid = {}
    for tok in tokens:
        key, _, values = tok.partition("=")
        if key not in ("alpha", "beta") or not values:
            raise argparse.ArgumentTypeError(f"sweep entries look like alpha=1,2,5 (got {tok!r})")
        grid[key] = [float(v) for v in values.split(",") if v]
    return grid


def _sweep_one(args):
    sf, out_dir, alpha, beta, emit, max_events, overrides = args
    params = {k: v for k, v in (("alpha", alpha), ("beta", beta)) if v is not None}
    summary = execute(sf, out_dir, emit, max_events, **params, **overrides)
    gaps = [g for g in summary["min_inter_event"] if g is not None]
    counts = summary["event_counts"]
    return {
        "alpha": "file" if alpha is None else alpha,
        "beta": "file" if beta is None else beta,
        "total_events": int(sum(counts)),
        "max_events_per_agent": int(max(counts)),
        "min_inter_event": min(gaps) if gaps else None,
        "mean_inter_event": _mean_gap(out_dir / "events.csv"),
        "achieved": (summary.get("verdict") or {}).get("achieved"),
    }


def _mean_gap(events_csv: Path):
    per_agent = {}
    with open(events_csv) as fh:
        for row in csv.DictReader(fh):
            per_agent.setdefault(row["agent"], []).append(float(row["t"]))
    gaps = [b - a for ts in per_agent.values() for a, b in zip(ts, ts[1:])]
    return float(np.mean(gaps)) if gaps else None


def run_sweep(sf, out_root: Path, grid, emit, max_events, jobs, overrides) -> list[dict]:
    alphas = grid.get("alpha") or [None]
    betas = grid.get("beta") or [None]
    tasks = []
    for a, b in itertools.product(alphas, betas):
        label = f"alpha={'file' if a is None else _fmt(a)}_beta={'file' if b is None else _fmt(b)}"
        tasks.append((sf, out_root / "sweep" / label, a, b, emit, max_events, overrides))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def cmd_run(args) -> int:
    sf = resolve_scenario(args.scenario)
    overrides = {}
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.stride is not None:
        overrides["stride"] = args.stride
    if args.threshold_floor is not None:
        overrides["threshold_floor"] = args.threshold_floor
    out = Path(args.out or sf.out or Path("runs") / (sf.name or Path(args.scenario).stem))
    if args.sweep:
        rows = run_sweep(sf, out, _parse_sweep(args.sweep), args.emit_lyapunov, args.max_events, args.jobs, overrides)
        print(f"sweep: {len(rows)} runs -> {out / 'sweep.csv'}")
        return EXIT_OK
    summary = execute(sf, out, args.emit_lyapunov, args.max_events, **overrides)
    v = summary.get("verdict")
    if v is not None:
        value = ", ".join(f"{c:.6g}" for c in v["consensus_value"])
        print(
            f"{summary['name'] or args.scenario}: achieved={v['achieved']} consensus_value=[{value}] "
            f"terminal_spread={v['terminal_spread']:.3e} events={summary['event_counts']}"
        )
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    sf = generate_random(args.n, args.p, args.seed, args.connectivity, output=args.output, horizon=args.horizon)
    text = dump_scenario(sf)
    if args.o:
        Path(args.o).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etconsensus", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate a scenario file or bundled scenario")
    pr.add_argument("--scenario", required=True, help="YAML path or bundled name (see 'list')")
    pr.add_argument("--horizon", type=float)
    pr.add_argument("--stride", type=float)
    pr.add_argument("--threshold-floor", type=float)
    pr.add_argument("--out", help="output directory")
    pr.add_argument("--sweep", nargs="+", metavar="KEY=LIST", help="alpha=<list> beta=<list>")
    pr.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    pr.add_argument("--emit-lyapunov", action=argparse.BooleanOptionalAction, default=True)
    pr.add_argument("--max-events", type=int, default=10**6, help="per-agent event budget")
    pr.set_defaults(func=cmd_run)

    pg = sub.add_parser("generate", help="write a random scenario file")
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--p", type=int, default=1)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--connectivity", choices=["strong", "spanning-tree"], default="strong")
    pg.add_argument("--output", default="saturation(1.0)", help="output tag")
    pg.add_argument("--horizon", type=float, default=20.0)
    pg.add_argument("-o", help="destination file (stdout if omitted)")
    pg.set_defaults(func=cmd_generate)

    pl = sub.add_parser("list", help="list bundled scenarios")
    pl.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConsensusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

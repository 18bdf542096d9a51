"""Command line entry point: ``toruskit run | batch | classify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dynamics import PhaseState
from .pipeline import (
    PipelineConfig,
    TorusReport,
    batch_run,
    classify_trajectory,
    fmt_float,
    run_pipeline,
    _trajectory,
    write_batch_outputs,
)


def _x0(values, config: PipelineConfig):
    if values is None:
        return None
    n = config.map.n if config.map is not None else len(values) // 2
    if len(values) != 2 * n:
        raise SystemExit(f"--x0 needs {2 * n} numbers")
    return PhaseState.from_vector(values)


def _summary_line(rep: TorusReport) -> str:
    om = " ".join(fmt_float(v) for v in rep.omega) if rep.omega else "-"
    return (f"class={rep.classification} p={rep.p} R_RRE={fmt_float(rep.R_RRE)} N={rep.N} omega=[{om}] "
            f"K={rep.K} R_h={fmt_float(rep.R_h)} R_KAM={fmt_float(rep.R_KAM)} M_delta={rep.M_delta}"
            + (f" failure={rep.stage_failure}" if rep.stage_failure else ""))


def cmd_run(args) -> int:
    config = PipelineConfig.from_json(args.config)
    rep = run_pipeline(config, _x0(args.x0, config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(rep.to_dict(), fh, indent=1)
    print(_summary_line(rep))
    return 0 if rep.stage_failure is None else 1


def cmd_classify(args) -> int:
    config = PipelineConfig.from_json(args.config)
    rep = TorusReport()
    series = _trajectory(config, _x0(args.x0, config))
    classify_trajectory(series, config, rep)
    print("J,T,N,R_RRE,R_WBA")
    for J, T, N, rr, rw in rep.rre_history:
        print(f"{J},{T},{N},{fmt_float(rr)},{fmt_float(rw)}")
    print(f"class={rep.classification}")
    return 0


def cmd_batch(args) -> int:
    config = PipelineConfig.from_json(args.config)
    config.seed = args.seed
    if args.workers:
        config.workers = args.workers

    def progress(i, rep):
        if args.verbose:
            print(f"[{i}] {_summary_line(rep)}", file=sys.stderr, flush=True)

    reports, summary = batch_run(config, args.n, progress)
    out = write_batch_outputs(reports, summary, config, args.out)
    if not args.no_plots:
        from .plotting import render_batch_figures

        render_batch_figures(reports, config.classify_tol, out)
    print(json.dumps({k: v for k, v in summary.items() if k != "M_delta"}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="toruskit", description="Invariant tori from a single trajectory.")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full pipeline on one trajectory")
    r.add_argument("--config", required=True)
    r.add_argument("--x0", type=float, nargs="+", help="initial state q_1..q_n p_1..p_n")
    r.add_argument("--out", default=".")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("classify", help="walk the (J, T) ladder only")
    c.add_argument("--config", required=True)
    c.add_argument("--x0", type=float, nargs="+")
    c.set_defaults(func=cmd_classify)

    b = sub.add_parser("batch", help="random standard-map initial conditions")
    b.add_argument("--config", required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--workers", type=int, default=0)
    b.add_argument("--no-plots", action="store_true", help="write CSV/JSON only")
    b.add_argument("-v", "--verbose", action="store_true")
    b.set_defaults(func=cmd_batch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

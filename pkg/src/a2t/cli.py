"""Command line entry point: ``a2t <verb> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError


def _build_expert(args) -> int:
    from .experts import build_from_file
    rec = build_from_file(args.spec, args.store)
    split = " ".join(f"{k}={v:.3f}" for k, v in sorted(rec.split.items()))
    print(f"built {rec.name} ({rec.spec.kind}, {rec.mode}) score={rec.score:.4f} {split}".rstrip())
    print(f"saved to {Path(args.store) / rec.name}")
    return 0


def _run(args) -> int:
    from .harness import load_experiment, run_experiment
    cfg = load_experiment(args.config)
    if args.output:
        cfg.output = Path(args.output)
    out = run_experiment(cfg)
    print(f"{cfg.name}: results in {out}")
    return 0


def _suite(args) -> int:
    from .harness import run_suite, suite_paths
    paths = suite_paths(args.directory)
    summary = Path(args.summary) if args.summary else Path(args.directory) / "suite_summary.csv"
    res = run_suite(paths, summary)
    for r in res.rows:
        line = f"{r['experiment']:<28} {r['status']:<7}"
        if r["status"] == "ok":
            line += f" final={r['final_score']:.4f} to_threshold={r['to_threshold']:.1f}"
            if r["ratio_to_scratch"] == r["ratio_to_scratch"]:
                line += f" ratio={r['ratio_to_scratch']:.3f}"
        else:
            line += f" {r['error']}"
        print(line)
    print(f"summary: {summary} ({len(res.rows)} experiments, {len(res.failed)} failed)")
    return 0 if res.ok else 1


def _plot(args) -> int:
    from .harness import plot_results
    for p in plot_results(args.results):
        print(p)
    return 0


def _verify(args) -> int:
    from .verify import run_checks
    return 0 if run_checks(quick=not args.full) else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a2t", description="Attend, adapt and transfer experiments.")
    sub = p.add_subparsers(dest="verb", required=True)

    b = sub.add_parser("build-expert", help="train or derive an expert from a spec file")
    b.add_argument("spec", help="expert spec .cfg")
    b.add_argument("--store", default="experts", help="expert store directory (default: ./experts)")
    b.set_defaults(func=_build_expert)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config", help="experiment .cfg")
    r.add_argument("--output", help="override the output directory")
    r.set_defaults(func=_run)

    s = sub.add_parser("suite", help="run every .cfg in a directory")
    s.add_argument("directory")
    s.add_argument("--summary", help="summary CSV path (default: <dir>/suite_summary.csv)")
    s.set_defaults(func=_suite)

    pl = sub.add_parser("plot", help="redraw SVG plots from a results directory")
    pl.add_argument("results")
    pl.set_defaults(func=_plot)

    v = sub.add_parser("verify", help="run the invariant checks")
    v.add_argument("--full", action="store_true", help="more randomized instances")
    v.set_defaults(func=_verify)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``wsnloc simulate | traversal | scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .deployment import RangingModel
from .errors import WsnlocError
from .geometry import CANONICAL_SCENARIOS, build_scenario, ideal_partition_stats
from .harness import (
    TRAVERSAL_DIAMETERS,
    TRAVERSAL_NODES,
    ExperimentConfig,
    run_batch,
    simulate_trial,
    traversal_table,
    write_traversal,
)
from .render import LAYERS, render_svg


def _layers(text: str) -> list[str]:
    layers = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in layers if s not in LAYERS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown layer(s) {bad}; choose from {', '.join(LAYERS)}")
    return layers


def _floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def _ints(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wsnloc", description="Topology-partitioning localization simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a seeded batch of trials and write report.csv / report.json")
    s.add_argument("--scenario", required=True, help="bundled name, circular:<diameter>, or a scenario JSON file")
    s.add_argument("--unknown", type=int, required=True, help="number of unknown nodes")
    s.add_argument("--anchors", type=int, required=True, help="number of anchor nodes")
    s.add_argument("--range", dest="L", type=float, default=15.0, help="radio range in metres (default 15)")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--seed", type=int, default=0, help="base seed; trial seeds are derived from it")
    s.add_argument("--no-partition", action="store_true", help="localize the network as a single area")
    s.add_argument("--ranging", type=RangingModel.parse, default=RangingModel(), help="exact or gauss:SIGMA")
    s.add_argument("--min-side", type=int, default=12, help="smallest area a split may create")
    s.add_argument("--svg", type=_layers, default=[], help=f"comma list of layers for trial 0 ({','.join(LAYERS)})")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", type=Path, required=True, help="output directory")

    t = sub.add_parser("traversal", help="blocked-pair statistics for a central circle of varying size")
    t.add_argument("--diameters", type=_floats, default=list(TRAVERSAL_DIAMETERS))
    t.add_argument("--nodes", type=_ints, default=list(TRAVERSAL_NODES))
    t.add_argument("--trials", type=int, default=50)
    t.add_argument("--deep", action="store_true", help="500 trials per cell (slow)")
    t.add_argument("--range", dest="L", type=float, default=15.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", type=Path, required=True, help="output CSV path")

    c = sub.add_parser("scenarios", help="list bundled scenarios with their ideal partition figures")
    c.add_argument("--range", dest="L", type=float, default=15.0)
    return p


def _simulate(args) -> int:
    config = ExperimentConfig(
        scenario=args.scenario,
        n_unknown=args.unknown,
        n_anchor=args.anchors,
        L=args.L,
        trials=args.trials,
        base_seed=args.seed,
        ranging=args.ranging,
        no_partition=args.no_partition,
        out_dir=args.out,
        min_side=args.min_side,
    )
    report = run_batch(config, workers=args.workers)
    agg = report.aggregates
    print(
        f"{config.scenario}: {config.trials} trials, n={config.n_unknown + config.n_anchor} "
        f"pairs={agg['n_pairs']['mean']:.2f} z={agg['z']['mean']:.2f} ACD={report.acd:.4f} "
        f"MLE={agg['mle_m']['mean']:.4g} m inaccurate={agg['inaccurate']['mean']:.2f}"
    )
    if args.svg:
        art = simulate_trial(config, 0)
        for layer in args.svg:
            path = render_svg(
                art.network, layer, args.out / f"trial0_{layer}.svg",
                labels=art.partition, ts=art.ts, estimates=art.result.global_estimate,
            )
            print(f"wrote {path}")
        if "occurrence" in args.svg and art.ts is None:
            print("note: occurrence layer is flat with --no-partition", file=sys.stderr)
    print(f"wrote {args.out / 'report.csv'} and {args.out / 'report.json'}")
    return 0


def _traversal(args) -> int:
    trials = 500 if args.deep else args.trials
    rows = traversal_table(args.diameters, args.nodes, trials, args.seed, args.L)
    for r in rows:
        print(
            f"d={r['diameter_m']:g} m n={r['n_nodes']}: {r['mean_traversing_pairs']:.3f} pairs, "
            f"ratio {100 * r['traversal_ratio']:.4f}%"
        )
    print(f"wrote {write_traversal(rows, args.out)}")
    return 0


def _scenarios(args) -> int:
    print(f"{'scenario':32} {'corners':>8} {'seg nodes':>10} {'pairs':>10} {'subnets':>10}")
    for name in CANONICAL_SCENARIOS:
        st = ideal_partition_stats(build_scenario(name), args.L)
        corners = "inf" if st.convex_corners is None else str(st.convex_corners)
        fmt = lambda s: ",".join(map(str, sorted(s)))  # noqa: E731
        print(f"{name:32} {corners:>8} {st.ideal_seg_nodes:>10.2f} {fmt(st.ideal_pairs):>10} {fmt(st.ideal_subnets):>10}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"simulate": _simulate, "traversal": _traversal, "scenarios": _scenarios}[args.command](args)
    except (WsnlocError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

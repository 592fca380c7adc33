import argparse
import logging
import sys

from . import bench


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hybridviz", description="in situ / in transit / hybrid analysis runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--mode", choices=bench.MODES)
    run.add_argument("--out", default=".")
    run.add_argument("--receiver", choices=("subprocess", "inprocess"))

    cmp_ = sub.add_parser("compare", help="gain of report B over report A")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")

    tab = sub.add_parser("table", help="per-stage table of several reports")
    tab.add_argument("reports", nargs="+")

    recv = sub.add_parser("receive", help="visualization-side replay process")
    recv.add_argument("--config", required=True)
    recv.add_argument("--mode", choices=bench.MODES, default="hybrid")
    recv.add_argument("--out", default=".")
    recv.add_argument("--endpoint", default="127.0.0.1:0")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            report = bench.run_experiment(args.config, args.mode, args.out, args.receiver)
            print(bench.format_report(report))
        elif args.command == "compare":
            a, b = bench.load_report(args.report_a), bench.load_report(args.report_b)
            print(bench.fmt_gain(bench.compare_runs(a, b)))
        elif args.command == "table":
            print(bench.emit_table([bench.load_report(p) for p in args.reports]))
        elif args.command == "receive":
            bench.receive_main(args.config, args.mode, args.out, args.endpoint)
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0

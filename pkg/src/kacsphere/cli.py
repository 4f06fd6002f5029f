"""Command-line interface: ``kacsphere run|rates|list-densities|plot``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from kacsphere import rates
from kacsphere.densities import list_densities
from kacsphere.errors import KacSphereError
from kacsphere.harness import ConfigError, StudyConfig, emit_plot_data, format_slopes, load_result, run_study


def _cmd_run(args) -> int:
    try:
        cfg = StudyConfig.load(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.output_dir:
        cfg = StudyConfig.from_dict({**cfg.to_dict(), "output_dir": args.output_dir})
    result = run_study(cfg, workers=args.workers)
    print(f"wrote {result.csv_path} and {result.json_path}")
    print(format_slopes(result.slopes))
    for r in result.violations:
        print(f"VIOLATION {r.metric} N={r.N}: estimate {r.estimate.value:.6g} +- {r.estimate.error:.3g} "
              f"vs bound {r.bound:.6g}", file=sys.stderr)
    for e in result.errors:
        print(f"ERROR {e['metric']} N={e['N']}: {e['error']}", file=sys.stderr)
    return result.exit_code


def _fmt(x) -> str:
    if x is None:
        return "-"
    return f"{x:.10g}"


def _cmd_rates(args) -> int:
    k, delta, r, p = args.k, args.delta, args.r, args.p
    table = []

    def add(label, fn):
        try:
            table.append((label, _fmt(fn())))
        except (KacSphereError, ValueError) as exc:
            table.append((label, f"n/a ({exc})"))

    add("l1 eta", lambda: rates.l1_eta(k, delta, r))
    add("l1 q*", lambda: rates.l1_qstar(k, delta, r))
    add("l1 eta (numeric max)", lambda: rates.l1_eta_numeric(k, delta, r)[0])
    add("N_0 = (2k)^(1+delta/2)", lambda: rates.n_min(k, delta))
    add("w2 exponent", lambda: rates.w2_prediction(p).exponent)
    add("w2 log factor", lambda: rates.w2_prediction(p).log_factor)
    if args.wr is not None:
        add(f"wr b (r={args.wr:g})", lambda: rates.wr_b(p, args.wr))
        add(f"wr exponent (r={args.wr:g})", lambda: rates.wr_prediction(p, args.wr).exponent)
    add("entropic eta sup (k=p)", lambda: rates.entropic_rate(p).exponent)
    add("entropic companion exponent", lambda: rates.entropic_rate(p).extra["companion_exponent"])
    add("conditioned exponent (r=min(2,p-4))", lambda: rates.conditioned_rate(min(2.0, p - 4.0)).exponent)
    add("C(k, q*)", lambda: rates.c_kq(k, rates.l1_qstar(k, delta, r)))
    width = max(len(t[0]) for t in table)
    print(f"k={k} delta={delta:g} r={r:g} p={p:g}")
    for label, val in table:
        print(f"{label:<{width}}  {val}")
    return 0


def _cmd_list(args) -> int:
    for name, model, desc in list_densities():
        sup = "inf" if math.isinf(model.moment_sup) else f"{model.moment_sup:g}"
        print(f"{name:<10} moments<{sup:<4} differentiable={str(model.differentiable).lower():<5} {desc}")
    return 0


def _cmd_plot(args) -> int:
    data = load_result(args.result)
    out = Path(args.output) if args.output else Path(args.result).with_suffix(f".{_slug(args.metric)}.dat")
    try:
        path = emit_plot_data(data, args.metric, out)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def _slug(metric: str) -> str:
    return "".join(c if c.isalnum() or c in "_-" else "_" for c in metric).strip("_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kacsphere", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a study from a JSON config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="process count (default: $KACSPHERE_WORKERS or 1)")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("rates", help="print predicted exponents and constants")
    p.add_argument("--k", type=int, default=1, help="marginal order")
    p.add_argument("--delta", type=float, default=2.0, help="moment surplus in (0, 2]")
    p.add_argument("--r", type=float, default=0.0, help="almost-Lipschitz exponent")
    p.add_argument("--p", type=float, default=6.0, help="number of finite moments")
    p.add_argument("--wr", type=float, default=None, help="Wasserstein order r in (2, p)")
    p.set_defaults(func=_cmd_rates)

    p = sub.add_parser("list-densities", help="list the density catalog")
    p.set_defaults(func=_cmd_list)

    p = sub.add_parser("plot", help="write plot-ready data for one metric of a result")
    p.add_argument("result")
    p.add_argument("--metric", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``rfsplit {plan,sweep,baseline,reliability,rf}``.

Exit codes: 0 success, 1 invalid input, 2 no feasible partition.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources

from .cost import ClusterSpec, load_cluster, modnn_baseline_time
from .model import ModelError, NetworkModel, load_model, rf_forward, rf_prefixes, vgg16
from .optimize import (InfeasiblePlanError, dpfp, evaluate_plan, speedup_ratio,
                       sweep_cluster_size)
from .partition import FusedPlan, InsufficientNeighborError, idle_es, output_rows
from .reliability import (DEFAULT_SEED, ChannelModel, load_channel, reliability_analytic,
                          reliability_monte_carlo, rate_fluctuation)

BOLD_THRESHOLD = 0.99999


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # bad flags are validation errors (exit 1); 2 is reserved for infeasible plans
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _data_path(name: str):
    return resources.files("rfsplit.data").joinpath(name)


def _model(args) -> NetworkModel:
    return load_model(args.model) if args.model else vgg16()


def _cluster(args) -> ClusterSpec:
    if args.cluster:
        return load_cluster(args.cluster)
    return ClusterSpec.from_dict(json.loads(_data_path("cluster_rtx2080ti.json").read_text()))


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _take(cluster: ClusterSpec, k: int) -> ClusterSpec:
    if not 1 <= k <= len(cluster):
        raise UsageError(f"cluster has only {len(cluster)} ESs")
    return cluster.take(k)


def _kw(args) -> dict:
    return {"strict": args.strict_paper_mode, "concurrent": args.concurrent}


def _emit(rows: list[dict], fmt: str, out, notes: list[str] = ()):
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        out.write(buf.getvalue())
    elif fmt == "json":
        json.dump({"rows": rows, "notes": list(notes)}, out, indent=2)
        out.write("\n")
    else:
        for line in notes:
            out.write(line + "\n")
        cols = list(rows[0])
        cells = [[_cell(r[c]) for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        out.write("  ".join(c.rjust(w) for c, w in zip(cols, widths)) + "\n")
        for row in cells:
            out.write("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _ms(seconds: float) -> float:
    return round(seconds * 1e3, 3)


def _parse_blocks(text: str) -> FusedPlan:
    blocks = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        blocks.append((int(lo), int(hi or lo)))
    return FusedPlan(tuple(blocks))


def cmd_plan(args, out):
    model, cluster = _model(args), _cluster(args)
    k = args.num_es or len(cluster)
    if args.blocks:
        result = evaluate_plan(model, _take(cluster, k), _parse_blocks(args.blocks), **_kw(args))
    else:
        result = dpfp(model, _take(cluster, k), **_kw(args))
    t_pre = dpfp(model, cluster.take(1), **_kw(args)).total
    rho = speedup_ratio(result.total, t_pre)
    csv_like = args.format != "table"
    rows = []
    for m, b in enumerate(result.report.blocks, 1):
        layers = "dense" if b.layers is None else f"{b.layers[0]}-{b.layers[1]}"
        rows.append({"block": m, "layers": layers,
                     "t_cmp": b.t_cmp if csv_like else _ms(b.t_cmp),
                     "t_com": b.t_com if csv_like else _ms(b.t_com),
                     "t_inf": b.t_inf if csv_like else _ms(b.t_inf),
                     "bytes": b.bytes})
    rep = result.report
    rows.append({"block": "total", "layers": str(result.plan).replace(" ", ";"),
                 "t_cmp": rep.t_cmp if csv_like else _ms(rep.t_cmp),
                 "t_com": rep.t_com if csv_like else _ms(rep.t_com),
                 "t_inf": rep.t_inf if csv_like else _ms(rep.t_inf),
                 "bytes": rep.bytes})
    notes = [f"model {model.name or '?'}  K={k}  link {cluster.link_rate / 1e9:g} Gbps",
             f"plan {result.plan}",
             f"T_pre {_ms(t_pre)} ms  T_inf {_ms(result.total)} ms  rho {rho:.4f}",
             "times in ms" if not csv_like else "times in s"]
    ratios = cluster.take(k).ratios()
    idle = sorted({e for _, b in result.plan
                   for e in idle_es(output_rows(model.out_size(b), ratios), ratios)})
    if idle:
        notes.append(f"ES {idle} receive no rows in some block")
    _emit(rows, args.format, out, notes)


def cmd_sweep(args, out):
    model, cluster = _model(args), _cluster(args)
    k_max = args.max_es or len(cluster)
    if not 1 <= k_max <= len(cluster):
        raise UsageError(f"cluster has only {len(cluster)} ESs")
    rates = [r * 1e9 for r in _float_list(args.rates)] if args.rates else [cluster.link_rate]
    rows = []
    for rate in rates:
        sweep = sweep_cluster_size(model, cluster.with_rate(rate), k_max, **_kw(args))
        for r in sweep.results:
            rows.append({"rate_gbps": rate / 1e9, "K": r.num_es,
                         "T_cmp": r.report.t_cmp, "T_com": r.report.t_com,
                         "T_inf": r.total, "rho": r.rho,
                         "blocks": len(r.plan), "bytes": r.report.bytes,
                         "best": int(r.num_es == sweep.best_k)})
    _emit(rows, args.format, out, [f"model {model.name or '?'}  times in s"])


def cmd_baseline(args, out):
    model, cluster = _model(args), _cluster(args)
    sub = _take(cluster, args.num_es or len(cluster))
    ours = dpfp(model, sub, **_kw(args)).report
    base = modnn_baseline_time(model, sub, redistribute=args.redistribute)
    rows = []
    for name, rep in (("dpfp", ours), ("modnn", base)):
        rows.append({"method": name, "T_cmp": rep.t_cmp, "T_com": rep.t_com, "T_inf": rep.t_inf,
                     "bytes": rep.bytes})
    com_red = 1 - ours.t_com / base.t_com if base.t_com > 0 else 0.0
    byte_red = 1 - ours.bytes / base.bytes if base.bytes > 0 else 0.0
    notes = [f"K={len(sub)}  link {sub.link_rate / 1e9:g} Gbps  times in s",
             f"modnn gathered {base.gathered_bytes} bytes ({base.note})",
             f"communication time reduction {100 * com_red:.1f}%",
             f"exchanged bytes reduction {100 * byte_red:.1f}%"]
    _emit(rows, args.format, out, notes)


def _grid(args, doc) -> list[tuple[float, float]]:
    if args.grid:
        cells = []
        for cell in args.grid.split(","):
            rate, delta = cell.split(":")
            cells.append((float(rate), float(delta)))
        return cells
    if "grid" in doc:
        return [(float(r), float(d)) for r, d in doc["grid"]]
    return [(float(doc["mean_rate_mbps"]), float(doc.get("delta_ms", 0)))]


def cmd_reliability(args, out):
    model, cluster = _model(args), _cluster(args)
    path = args.channel or _data_path("channel_grid.json")
    default_bits = model.input_size ** 2 * model.input_channels * model.element_bytes * 8
    base, doc = load_channel(path, default_bits)
    ks = _int_list(args.num_es_list) if args.num_es_list else [args.num_es or 1]
    rows = []
    for k in ks:
        t_inf = dpfp(model, _take(cluster, k), **_kw(args)).total
        for rate, delta in _grid(args, doc):
            ch = ChannelModel(rate * 1e6, delta / 1e3, base.task_bits, base.deadline, base.fps)
            analytic = reliability_analytic(ch, t_inf)
            mc = reliability_monte_carlo(ch, t_inf, args.samples, args.seed)
            rows.append({"K": k, "rate_mbps": rate, "delta_ms": delta, "mu_ms": ch.mu * 1e3,
                         "phi_mbps": rate_fluctuation(ch) / 1e6, "t_inf_ms": t_inf * 1e3,
                         "analytic": analytic, "monte_carlo": mc,
                         "high": int(analytic >= BOLD_THRESHOLD)})
    notes = [f"deadline {base.deadline * 1e3:g} ms  task {base.task_bits:g} bits  "
             f"samples {args.samples}  seed {args.seed}"]
    _emit(rows, args.format, out, notes)


def cmd_rf(args, out):
    model = _model(args)
    a = args.start if args.start is not None else 1
    b = args.end if args.end is not None else model.num_spatial
    try:
        whole = rf_forward(model, a, b)
        prefixes = rf_prefixes(model, a, b)
    except ValueError as err:
        raise UsageError(str(err)) from None
    rows = []
    for i, t in enumerate(prefixes, a):
        rows.append({"range": f"{a}-{i}", "kind": model.layer(i).kind, "OF": t.size,
                     "jump": t.jump, "field": t.field, "center": str(t.center)})
    rows.append({"range": f"{a}-{b}", "kind": "range", "OF": whole.size, "jump": whole.jump,
                 "field": whole.field, "center": str(whole.center)})
    _emit(rows, args.format, out)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", help="model JSON (default: bundled VGG-16)")
    common.add_argument("--cluster", help="cluster JSON (default: 10x RTX 2080TI at 100 Gbps)")
    common.add_argument("--format", choices=("table", "csv", "json"), default="table")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--strict-paper-mode", action="store_true",
                        help="bill halo exchanges with the literal max(OE-IS,0)+1 row count")
    common.add_argument("--concurrent", action="store_true",
                        help="charge only the largest pairwise transfer per block")

    parser = _Parser(prog="rfsplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="optimal fused-block plan")
    p.add_argument("--num-es", type=int)
    p.add_argument("--blocks",
                   help="evaluate this partition instead of optimising, e.g. 1-5,6,7-18")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sweep", parents=[common], help="sweep cluster size and link rate")
    p.add_argument("--max-es", type=int)
    p.add_argument("--rates", help="comma-separated link rates in Gbps")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", parents=[common], help="compare with per-layer merging")
    p.add_argument("--num-es", type=int)
    p.add_argument("--redistribute", action="store_true",
                   help="also count the primary re-sending sub-inputs after each layer")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("reliability", parents=[common], help="deadline reliability grid")
    p.add_argument("--channel", help="channel JSON (default: bundled 3-rate grid)")
    p.add_argument("--num-es", type=int)
    p.add_argument("--num-es-list", help="comma-separated cluster sizes, one row group each")
    p.add_argument("--grid", help="cells as RATE_MBPS:DELTA_MS,...")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("rf", parents=[common], help="receptive-field trace")
    p.add_argument("--from", dest="start", type=int)
    p.add_argument("--to", dest="end", type=int)
    p.set_defaults(func=cmd_rf)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        args.func(args, out)
    except (InsufficientNeighborError, InfeasiblePlanError) as err:
        print(f"rfsplit: infeasible: {err}", file=sys.stderr)
        return 2
    except (ModelError, UsageError, ValueError, KeyError, OSError) as err:
        print(f"rfsplit: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

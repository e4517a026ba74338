"""Command-line front end.

Exit codes: 0 success, 1 property or threshold failure, 2 usage error,
3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import bench, grad, metrics, pnm, segnet, verify
from .attention import AttentionDims
from .errors import DataError, DegenerateError, FormatError, ParameterError, ShapeError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def cmd_verify(args) -> int:
    results = verify.run_suites(args.seed, args.instances, guard=not args.no_guard)
    for res in results:
        print(res.line())
        for note in res.notes:
            print(f"  {note}")
    ok = all(r.ok for r in results)
    print(f"{sum(r.ok for r in results)}/{len(results)} suites passed (seed {args.seed})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    config = bench.RunConfig(
        seed=args.seed,
        sizes=args.sizes,
        d_k=args.dk,
        d_v=args.dv,
        repeats=args.repeats,
        out=None,
        softmax_max_n=args.softmax_max_n,
        methods=args.methods,
    )
    # fail on an unwritable path before spending minutes timing
    with open(args.out, "w", encoding="utf-8"):
        pass

    def progress(rec):
        print(f"{rec.method:>8} n={rec.n:<8} {rec.wall_ns / 1e6:10.3f} ms  aux={rec.peak_aux_floats}", flush=True)

    result = bench.run_bench(config, progress)
    Path(args.out).write_text(result.to_csv(), encoding="utf-8")
    for method, slope in result.slopes.items():
        print(f"slope {method}: {slope:.3f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dims = AttentionDims(n=args.n, c=args.c, d_k=args.dk, d_v=args.dv)
    ok = True
    for op in grad.GRADCHECK_OPS:
        report = grad.gradcheck(op, dims, seed=args.seed, threshold=args.threshold)
        print(report)
        ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_init_weights(args) -> int:
    spec = segnet.NetworkSpec(
        in_channels=args.in_channels,
        stage_widths=args.widths,
        stage_depths=args.depths,
        num_classes=args.classes,
        attention_dk_ratio=args.dk_ratio,
    )
    weights = segnet.build_network(spec, seed=args.seed, gamma=args.gamma)
    segnet.save_weights(weights, args.out)
    print(f"wrote {args.out}: {segnet.param_count(weights)} parameters, checksum {weights.checksum()[:16]}")
    return EXIT_OK


def cmd_forward(args) -> int:
    weights = segnet.load_weights(args.weights)
    image = pnm.read_pgm(args.image)
    labels = segnet.predict_labels(weights, image)
    pnm.write_pgm(labels, args.out)
    print(f"wrote {args.out} ({image.h}x{image.w}, {weights.spec.num_classes} classes)")
    return EXIT_OK


def metric_rows(cm: metrics.ConfusionMatrix, variance_method: str = "delta") -> list[tuple[str, float]]:
    rows = [("OA", metrics.overall_accuracy(cm))]
    rows += [(f"F1[{c}]", float(f)) for c, f in enumerate(metrics.per_class_f1(cm))]
    rows += [("mean F1", metrics.mean_f1(cm)), ("mIoU", metrics.miou(cm))]
    report = metrics.kappa_report(cm, variance_method)
    rows += [("kappa", report.kappa), ("kappa variance", report.variance)]
    return rows


def cmd_metrics(args) -> int:
    pred = pnm.read_labels(args.pred)
    truth = pnm.read_labels(args.truth)
    cm = metrics.confusion(pred, truth, args.k, ignore_label=args.ignore_label)
    rows = metric_rows(cm, args.variance)
    for name, value in rows:
        print(f"{name:<16}{value:.6f}" if name != "kappa variance" else f"{name:<16}{value:.6e}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerows((name, repr(value)) for name, value in rows)
    return EXIT_OK


def cmd_ztest(args) -> int:
    z = metrics.z_test(args.k1, args.v1, args.k2, args.v2)
    verdict = "significant" if metrics.significant(z) else "not significant"
    print(f"z = {z:.4f}  |z| = {abs(z):.4f}  ({verdict} at 95%)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maresu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the attention property suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--no-guard", action="store_true", help="drop the LAM denominator clamp (fault injection)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time softmax vs LAM and write a CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=_int_list, default=list(bench.DEFAULT_SIZES))
    p.add_argument("--dk", type=int, default=64)
    p.add_argument("--dv", type=int, default=64)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--softmax-max-n", type=int, default=16384)
    p.add_argument("--methods", nargs="+", default=["softmax", "lam"], choices=sorted(bench.METHODS))
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--c", type=int, default=4)
    p.add_argument("--dk", type=int, default=4)
    p.add_argument("--dv", type=int, default=4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("init-weights", help="write seeded toy network weights")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in-channels", type=int, default=3)
    p.add_argument("--widths", type=_int_list, default=[8, 16, 32, 64])
    p.add_argument("--depths", type=_int_list, default=list(segnet.RESNET18_DEPTHS))
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--dk-ratio", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.0)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("forward", help="segment a PGM/PPM image, write a P5 label map")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("metrics", help="accuracy metrics from two P5 label maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("-k", "--classes", dest="k", type=int, required=True)
    p.add_argument("--ignore-label", type=int, default=None)
    p.add_argument("--variance", choices=["delta", "simple"], default="delta")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("ztest", help="kappa z-test for two classifiers")
    for name in ("k1", "v1", "k2", "v2"):
        p.add_argument(name, type=float)
    p.set_defaults(func=cmd_ztest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"maresu {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, DataError, DegenerateError, ShapeError) as exc:
        print(f"maresu {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

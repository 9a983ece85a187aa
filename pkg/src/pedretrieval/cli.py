"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 bad input data, 4 internal
invariant violation.  ``--config FILE`` takes a JSON object whose keys are
subcommand names mapping to ``{option: value}`` defaults, e.g.
``{"build-index": {"theta": 4.0, "pca_dim": 32}}``; flags on the command
line win.  The log level comes from ``PEDRETRIEVAL_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .errors import DataFormatError, InvariantViolation
from .evaluation import DEFAULT_RANKS, evaluate
from .geometry import part_boxes
from .pca import pca_fit_lenient, reconstruction_error
from .retrieval import DEFAULT_TOP_GROUPS, retrieve_batch
from .synthetic import SyntheticSpec, gen_synthetic
from .tdc import PCA_SOURCES, build_index

log = logging.getLogger("pedretrieval")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _ranks(text: str) -> list[int]:
    try:
        ranks = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}") from None
    if not ranks or ranks[0] < 1:
        raise argparse.ArgumentTypeError("ranks must be positive integers")
    return ranks


def _write_report(prefix: str, report, cmc_max_rank: int) -> None:
    base = Path(prefix)
    with io.atomic_write(base.with_name(base.name + ".txt"), "w") as fh:
        fh.write(report.to_text())
    with io.atomic_write(base.with_name(base.name + ".kv"), "w") as fh:
        fh.write(report.to_keyvalue())
    with io.atomic_write(base.with_name(base.name + "_cmc.csv"), "w") as fh:
        fh.write(report.cmc_csv(cmc_max_rank))


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        args.identities, args.samples_per_identity, args.dim, args.within_std, args.between_std, args.seed
    )
    gallery, queries = gen_synthetic(spec)
    io.write_gallery(args.gallery, gallery)
    io.write_queries(args.queries, queries)
    print(f"wrote {len(gallery)} gallery samples to {args.gallery} and {len(queries)} queries to {args.queries}")
    return EXIT_OK


def cmd_build_index(args) -> int:
    gallery = io.read_gallery(args.gallery)
    k = args.pca_dim or gallery.dim
    t0 = time.perf_counter()
    index = build_index(gallery, args.theta, k, args.pca_source)
    elapsed = time.perf_counter() - t0
    index.check(gallery)
    io.save_index(args.out, index)
    sizes = index.group_sizes()
    print(
        f"{len(index)} groups from {len(gallery)} samples (theta={args.theta:g}, k={k}); "
        f"group size mean {sizes.mean():.2f} max {sizes.max()}; built in {elapsed:.2f}s -> {args.out}"
    )
    return EXIT_OK


def cmd_pca_fit(args) -> int:
    gallery = io.read_gallery(args.gallery)
    if args.source == "groups":
        if args.theta is None:
            raise DataFormatError("--theta is required when fitting on group descriptors")
        index = build_index(gallery, args.theta, args.k, "groups")
        model, data = index.pca, index.group_descriptors_full
    else:
        data = gallery.descriptors
        model = pca_fit_lenient(data, args.k)
    err = reconstruction_error(model, data)
    with io.atomic_write(args.out) as fh:
        np.savez(fh, mean=model.mean, components=model.components, eigenvalues=model.eigenvalues, rank=model.rank)
    total = float(np.trace(np.cov(data, rowvar=False))) if len(data) > 1 else 0.0
    kept = float(model.eigenvalues.sum())
    ratio = kept / total if total > 0 else 1.0
    print(f"k={model.output_dim} rank={model.rank} explained_variance={ratio:.4f} reconstruction_mse={err:.6g}")
    if model.rank_deficient:
        print(f"warning: rank deficient ({model.rank} positive eigenvalues < k={model.output_dim})")
    return EXIT_OK


def cmd_query(args) -> int:
    gallery = io.read_gallery(args.gallery)
    queries = io.read_queries(args.queries)
    index = None if args.brute_force else io.load_index(args.index, gallery)
    results = retrieve_batch(queries, index, gallery, args.topk_groups, args.workers)
    ids = [q.query_id for q in queries]
    if args.out:
        io.write_results(args.out, ids, results)
    else:
        for qid, r in zip(ids, results):
            print(io.format_results_line(qid, r))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    gallery = io.read_gallery(args.gallery)
    queries = io.read_queries(args.queries)
    index = None if args.brute_force else io.load_index(args.index, gallery)
    report = evaluate(queries, index, gallery, args.topk_groups, args.ranks, args.workers)
    if args.report:
        _write_report(args.report, report, args.cmc_max_rank)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_part_boxes(args) -> int:
    rows = io.read_keypoints(args.keypoints)
    out = [(image_id, part_boxes(kp, args.alpha)) for image_id, kp in rows]
    if args.out:
        io.write_part_boxes(args.out, out)
    else:
        for image_id, pb in out:
            print(image_id, pb.head.as_tuple(), pb.upper_body.as_tuple(), pb.lower_body.as_tuple())
    return EXIT_OK


def cmd_bench(args) -> int:
    """Brute force against coarse-to-fine, one row per threshold."""
    gallery = io.read_gallery(args.gallery)
    queries = io.read_queries(args.queries)
    if args.index:
        built = [(io.load_index(args.index, gallery), 0.0)]
    elif args.theta:
        built = []
        for theta in args.theta:
            t0 = time.perf_counter()
            index = build_index(gallery, theta, args.pca_dim or gallery.dim, args.pca_source)
            built.append((index, time.perf_counter() - t0))
    else:
        raise DataFormatError("bench needs --theta or a prebuilt --index")

    brute = evaluate(queries, None, gallery, ranks=args.ranks, workers=args.workers)
    r1 = min(args.ranks)
    header = f"{'theta':>10} {'groups':>8} {'dim':>5} {'mAP':>8} {'rank-' + str(r1):>8} {'ms/query':>10} {'speedup':>8} {'build_s':>8}"
    lines = [
        f"gallery {len(gallery)} x {gallery.dim}, {len(queries)} queries, K={args.topk_groups}",
        header,
        f"{'brute':>10} {len(gallery):>8} {gallery.dim:>5} {brute.mAP:>8.4f} {brute.cmc[r1]:>8.4f} "
        f"{brute.timing_ms['total']:>10.4f} {1.0:>8.2f} {0.0:>8.3f}",
    ]
    kv = {
        "gallery_size": len(gallery),
        "queries": len(queries),
        "top_groups": args.topk_groups,
        "brute.mAP": repr(brute.mAP),
        "brute.time_ms": repr(brute.timing_ms["total"]),
    }
    csv_rows = ["theta,groups,dim,mAP,rank1,ms_per_query,speedup,build_s"]
    csv_rows.append(f"brute,{len(gallery)},{gallery.dim},{brute.mAP!r},{brute.cmc[r1]!r},{brute.timing_ms['total']!r},1.0,0.0")
    for i, (index, build_s) in enumerate(built):
        fast = evaluate(queries, index, gallery, args.topk_groups, args.ranks, args.workers)
        ms = fast.timing_ms["total"]
        speedup = brute.timing_ms["total"] / ms if ms > 0 else float("inf")
        lines.append(
            f"{index.theta:>10g} {len(index):>8} {index.reduced_dim:>5} {fast.mAP:>8.4f} {fast.cmc[r1]:>8.4f} "
            f"{ms:>10.4f} {speedup:>8.2f} {build_s:>8.3f}"
        )
        csv_rows.append(
            f"{index.theta!r},{len(index)},{index.reduced_dim},{fast.mAP!r},{fast.cmc[r1]!r},{ms!r},{speedup!r},{build_s!r}"
        )
        kv.update({
            f"c2f.{i}.theta": repr(index.theta),
            f"c2f.{i}.groups": len(index),
            f"c2f.{i}.k": index.reduced_dim,
            f"c2f.{i}.mAP": repr(fast.mAP),
            f"c2f.{i}.mAP_delta": repr(fast.mAP - brute.mAP),
            f"c2f.{i}.time_ms": repr(ms),
            f"c2f.{i}.speedup": repr(speedup),
            f"c2f.{i}.build_s": repr(build_s),
        })
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.report:
        base = Path(args.report)
        with io.atomic_write(base.with_name(base.name + ".txt"), "w") as fh:
            fh.write(text)
        with io.atomic_write(base.with_name(base.name + ".kv"), "w") as fh:
            fh.write("".join(f"{k}={v}\n" for k, v in kv.items()))
        with io.atomic_write(base.with_name(base.name + "_sweep.csv"), "w") as fh:
            fh.write("\n".join(csv_rows) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pedretrieval", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file of per-command option defaults")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a Gaussian-cluster gallery and query batch")
    g.add_argument("--identities", type=int, default=200)
    g.add_argument("--samples-per-identity", type=int, default=10)
    g.add_argument("--dim", type=int, default=128)
    g.add_argument("--within-std", type=float, default=0.1)
    g.add_argument("--between-std", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gallery", required=True)
    g.add_argument("--queries", required=True)
    g.set_defaults(func=cmd_gen_synthetic)

    b = sub.add_parser("build-index", help="cluster a gallery and write the grouped index")
    b.add_argument("gallery")
    b.add_argument("--theta", type=float, help="dissimilarity threshold (feature-scale dependent, no default)")
    b.add_argument("--pca-dim", type=int, help="reduced dimension for coarse search (default: full dim)")
    b.add_argument("--pca-source", choices=PCA_SOURCES, default="groups")
    b.add_argument("--out", required=True, help="index directory")
    b.set_defaults(func=cmd_build_index, needs_theta=True)

    f = sub.add_parser("pca-fit", help="fit PCA and report explained variance")
    f.add_argument("gallery")
    f.add_argument("--k", type=int, required=True)
    f.add_argument("--source", choices=PCA_SOURCES, default="gallery")
    f.add_argument("--theta", type=float, help="needed with --source groups")
    f.add_argument("--out", required=True, help="output .npz")
    f.set_defaults(func=cmd_pca_fit)

    for name, func, helptext in (
        ("query", cmd_query, "retrieve rank lists for a query batch"),
        ("evaluate", cmd_evaluate, "compute mAP / CMC for a labelled query batch"),
    ):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("index", nargs="?", help="index directory (omit with --brute-force)")
        q.add_argument("--gallery", required=True)
        q.add_argument("--queries", required=True)
        q.add_argument("--topk-groups", type=int, default=DEFAULT_TOP_GROUPS)
        q.add_argument("--brute-force", action="store_true", help="rank the whole gallery instead")
        q.add_argument("--workers", type=int, default=1)
        if name == "query":
            q.add_argument("--out", help="results file (default: stdout)")
        else:
            q.add_argument("--report", help="output prefix for .txt, .kv and _cmc.csv")
            q.add_argument("--ranks", type=_ranks, default=list(DEFAULT_RANKS))
            q.add_argument("--cmc-max-rank", type=int, default=50)
        q.set_defaults(func=func, needs_index=True)

    k = sub.add_parser("part-boxes", help="derive head / upper / lower body boxes from a keypoint CSV")
    k.add_argument("keypoints")
    k.add_argument("--alpha", type=float, help="overlap margin in pixels (default: 15 scaled by H/512)")
    k.add_argument("--out", help="boxes CSV (default: stdout)")
    k.set_defaults(func=cmd_part_boxes)

    c = sub.add_parser("bench", help="compare brute force with coarse-to-fine retrieval")
    c.add_argument("--gallery", required=True)
    c.add_argument("--queries", required=True)
    c.add_argument("--index", help="prebuilt index directory")
    c.add_argument("--theta", type=float, nargs="+", help="one or more thresholds to sweep")
    c.add_argument("--pca-dim", type=int)
    c.add_argument("--pca-source", choices=PCA_SOURCES, default="groups")
    c.add_argument("--topk-groups", type=int, default=DEFAULT_TOP_GROUPS)
    c.add_argument("--ranks", type=_ranks, default=list(DEFAULT_RANKS))
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--report", help="output prefix for .txt and .kv")
    c.set_defaults(func=cmd_bench)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config must be a JSON object keyed by subcommand")
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, defaults in cfg.items():
        if name not in subparsers.choices or not isinstance(defaults, dict):
            parser.error(f"config: unknown subcommand section {name!r}")
        sp = subparsers.choices[name]
        dests = {a.dest for a in sp._actions}
        for key in defaults:
            if key.replace("-", "_") not in dests:
                parser.error(f"config: unknown option {key!r} for {name}")
        sp.set_defaults(**{key.replace("-", "_"): v for key, v in defaults.items()})
        # options satisfied from the config no longer need to be on the command line
        for a in sp._actions:
            if a.dest in {key.replace("-", "_") for key in defaults}:
                a.required = False


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PEDRETRIEVAL_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    if getattr(args, "needs_theta", False) and args.theta is None:
        parser.error("--theta is required (it depends on the feature scale; e.g. 0.0015 for unit-scale CNN features)")
    if getattr(args, "needs_index", False) and not args.brute_force and not args.index:
        parser.error("an index directory is required unless --brute-force is given")
    thetas = getattr(args, "theta", None)
    for v in thetas if isinstance(thetas, list) else [thetas]:
        if v is not None and not v >= 0:
            parser.error("--theta must be non-negative")
    for name in ("topk_groups", "pca_dim", "k", "workers", "cmc_max_rank"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name.replace('_', '-')} must be a positive integer")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"error: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Exit status is 0 on success, 1 for bad input (files, flags, configs) and 2 for
numerical failures.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from viewclust import clustering, distill, fileio, segeval
from viewclust.config import RunConfig, format_geometry, load_config, load_geometry
from viewclust.errors import EmptyClusteringError, InputError, NumericalError, ShapeError
from viewclust.features import make_view_pair
from viewclust.synth import synth

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def fmt(x) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _attention(path, n):
    if path is None:
        return None, None
    a = fileio.read_features(path).astype(np.float64)
    if a.size != 2 * n:
        raise ShapeError(f"attention file holds {a.size} weights, expected {2 * n}")
    a = a.ravel()
    return a[:n], a[n:]


def _geometry(args):
    if (args.geom_a is None) != (args.geom_b is None):
        raise InputError("--geom-a and --geom-b must be given together")
    if args.geom_a is None:
        return None, None
    return load_geometry(args.geom_a), load_geometry(args.geom_b)


def _view_pair(fa, fb, args):
    z1 = fileio.read_features(fa).astype(np.float64)
    z2 = fileio.read_features(fb).astype(np.float64)
    if z1.shape[0] != z2.shape[0]:
        raise ShapeError(f"views have {z1.shape[0]} and {z2.shape[0]} tokens")
    a1, a2 = _attention(args.attention, z1.shape[0])
    g1, g2 = _geometry(args)
    return make_view_pair(z1, z2, a1, a2, g1, g2, args.image_size)


def cmd_cluster(args):
    cfg = _config(args).clustering()
    if args.head:
        if args.features_a or args.features_b:
            raise InputError("use either --features-a/--features-b or --head, not both")
        pairs = [_view_pair(fa, fb, args) for fa, fb in args.head]
        res = clustering.multi_head_run(pairs, cfg)
        traces = [(h, k, d) for h, tr in enumerate(res.dc_traces) for k, d in tr]
        summary = [f"heads {len(pairs)}", f"clusters {res.n_clusters}"]
        summary += [f"head {h} k_selected {r.k_selected} pruned {r.pruned}" for h, r in enumerate(res.heads)]
    else:
        if not (args.features_a and args.features_b):
            raise InputError("cluster needs --features-a and --features-b (or --head groups)")
        vp = _view_pair(args.features_a, args.features_b, args)
        try:
            res = clustering.run(vp, cfg)
        except EmptyClusteringError as err:
            print(f"warning: {err}; keeping the unpruned k=2 assignment", file=sys.stderr)
            res = err.fallback
        traces = [(0, k, d) for k, d in res.dc_trace]
        summary = [f"k_selected {res.k_selected}", f"clusters {res.n_clusters}", f"pruned {res.pruned}"]
    if args.out_assignments:
        fileio.write_features(args.out_assignments, res.q_joint)
    if args.out_trace:
        lines = "".join(f"{h} {k} {fmt(d)}\n" for h, k, d in traces)
        fileio.atomic_write(args.out_trace, lines.encode())
    print("\n".join(summary))
    for h, k, d in traces:
        print(f"dc {h} {k} {fmt(d)}")


def _projection(path):
    wb = fileio.read_features(path).astype(np.float64)
    if wb.shape[1] < 2:
        raise ShapeError("projection file needs at least one weight column plus the bias column")
    return wb[:, :-1], wb[:, -1]


def cmd_loss(args):
    cfg = _config(args)
    z1 = fileio.read_features(args.features_a).astype(np.float64)
    z2 = fileio.read_features(args.features_b).astype(np.float64)
    q = fileio.read_features(args.assignments).astype(np.float64)
    n = z1.shape[0]
    if z2.shape[0] != n or q.shape[0] != 2 * n:
        raise ShapeError(f"token counts disagree: views {n}/{z2.shape[0]}, assignments {q.shape[0]}")
    w, b = _projection(args.proj_weights)
    head = distill.ProjectionParams(w, b, cfg.tau_t)
    dense, glob, total = distill.distillation_losses(
        z1, z2, q[:n], q[n:], head, cfg.tau_t, cfg.tau_s, cfg.alpha
    )
    if not all(map(math.isfinite, (dense, glob, total))):
        raise NumericalError("loss is not finite")
    print(f"dense {fmt(dense)}")
    print(f"global {fmt(glob)}")
    print(f"total {fmt(total)}")


def _grid_labels(mask, n_tokens):
    """Mask labels per token; larger masks are sampled nearest-neighbour at patch centres."""
    if mask.size == n_tokens:
        return mask.ravel().astype(np.int64)
    g = math.isqrt(n_tokens)
    if g * g != n_tokens:
        raise ShapeError(f"cannot align a {mask.shape} mask with {n_tokens} tokens")
    h, w = mask.shape
    rows = ((np.arange(g) + 0.5) * h / g).astype(np.int64)
    cols = ((np.arange(g) + 0.5) * w / g).astype(np.int64)
    return mask[np.ix_(rows, cols)].ravel().astype(np.int64)


def load_dataset(directory):
    """``(features, labels)`` for every ``*.feat`` with a same-stem ``*.mask``, sorted by stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"dataset directory {directory} does not exist")
    items = []
    for feat in sorted(directory.glob("*.feat")):
        mask = feat.with_suffix(".mask")
        if not mask.exists():
            continue
        z = fileio.read_features(feat).astype(np.float64)
        items.append((feat.stem, z, _grid_labels(fileio.read_mask(mask), z.shape[0])))
    if not items:
        raise InputError(f"no *.feat / *.mask pairs in {directory}")
    return items


def cmd_eval_seg(args):
    items = load_dataset(args.dataset_dir)
    labels = np.concatenate([y for _, _, y in items])
    if labels.max() >= args.classes:
        raise InputError(f"mask label {labels.max()} outside {args.classes} classes")
    if args.assignments:
        q = fileio.read_features(args.assignments)
        if q.shape[0] != labels.size:
            raise ShapeError(f"assignments cover {q.shape[0]} tokens, dataset has {labels.size}")
        pred = np.argmax(q, axis=1)
        per_class, mean = segeval.match_clusters(pred, labels, q.shape[1], args.classes)
    else:
        rep = segeval.unsupervised_report(
            [(z, y) for _, z, y in items], args.classes, range(args.seeds), max_workers=args.workers
        )
        per_class, mean = rep.per_class, rep.miou
    for c, iou in enumerate(per_class):
        print(f"class {c} {fmt(iou)}")
    print(f"mean {fmt(mean)}")


def cmd_synth(args):
    scene = synth(args.blobs, args.sep, args.sigma, args.n, args.d, args.seed, args.overlap)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = scene.geom1.grid_n
    fileio.write_features(out / "view_a.feat", scene.z1)
    fileio.write_features(out / "view_b.feat", scene.z2)
    fileio.write_mask(out / "view_a.mask", scene.labels1.reshape(g, g))
    fileio.write_mask(out / "view_b.mask", scene.labels2.reshape(g, g))
    attn = np.concatenate([scene.attn1, scene.attn2])[:, None]
    fileio.write_features(out / "attention.feat", attn)
    fileio.atomic_write(out / "geom_a.txt", format_geometry(scene.geom1).encode())
    fileio.atomic_write(out / "geom_b.txt", format_geometry(scene.geom2).encode())
    print(f"wrote {args.n} tokens per view, {args.blobs} blobs, to {out}")


def build_parser():
    p = _Parser(prog="viewclust", description="Cross-view online clustering toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cluster", help="cluster the joint tokens of two views")
    c.add_argument("--features-a")
    c.add_argument("--features-b")
    c.add_argument("--head", nargs=2, action="append", metavar=("FEAT_A", "FEAT_B"),
                   help="per-head feature files; repeat for multi-head clustering")
    c.add_argument("--attention", help="CROCFEAT file with 2N attention weights")
    c.add_argument("--geom-a")
    c.add_argument("--geom-b")
    c.add_argument("--image-size", nargs=2, type=float, metavar=("W", "H"))
    c.add_argument("--config")
    c.add_argument("--out-assignments")
    c.add_argument("--out-trace")
    c.set_defaults(func=cmd_cluster)

    lo = sub.add_parser("loss", help="dense, global and total distillation losses")
    lo.add_argument("--features-a", required=True)
    lo.add_argument("--features-b", required=True)
    lo.add_argument("--assignments", required=True)
    lo.add_argument("--proj-weights", required=True, help="L x (d+1) CROCFEAT, bias in the last column")
    lo.add_argument("--config")
    lo.set_defaults(func=cmd_loss)

    e = sub.add_parser("eval-seg", help="K-Means + Hungarian mIoU over a dataset directory")
    e.add_argument("--dataset-dir", required=True)
    e.add_argument("--classes", type=int, required=True)
    e.add_argument("--seeds", type=int, default=len(segeval.DEFAULT_SEEDS),
                   help="number of K-Means seeds (0..S-1)")
    e.add_argument("--assignments", help="score these cluster assignments instead of K-Means")
    e.add_argument("--workers", type=int, default=None)
    e.set_defaults(func=cmd_eval_seg)

    s = sub.add_parser("synth", help="write a synthetic two-view scene")
    s.add_argument("--blobs", type=int, default=2)
    s.add_argument("--sep", type=float, default=20.0)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--d", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--overlap", type=float, default=0.5)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "classes", 1) < 1 or getattr(args, "seeds", 1) < 1:
        print("viewclust: error: --classes and --seeds must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        args.func(args)
    except NumericalError as err:
        print(f"viewclust: numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as err:
        print(f"viewclust: input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.flush()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

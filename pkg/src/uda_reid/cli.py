"""Command-line entry point: data synthesis, staged training, clustering,
re-ranking, evaluation, ensembling, and the gradient checker.

Conventions
-----------
Machine-readable results are printed to standard output as a single JSON
object; progress and diagnostics go to standard error.  Exit codes: 0 on
success, 1 on usage errors, 2 on data or format errors, 3 on numerical
failures (training divergence, gradient-check tolerance breach).

``--threads N`` caps BLAS/OpenMP parallelism.  The cap must be in place
before numpy first loads, so this module imports only the standard library
at module scope and scans argv for the flag before touching the rest of
the package.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

__all__ = ["main", "run"]

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting, and keeps human text off stdout."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")

    def print_help(self, file=None):
        super().print_help(file or sys.stderr)


def _apply_thread_cap(argv) -> None:
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        return
    try:
        n = int(threads)
    except ValueError:
        return  # argparse reports the malformed value later
    if n >= 1 and "numpy" not in sys.modules:
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def _note(text: str) -> None:
    sys.stderr.write(text + "\n")


# ---------------------------------------------------------------------------
# Shared flag groups
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, metavar="N",
                   help="cap BLAS/OpenMP worker threads (default: all cores)")


_TRAIN_FLAGS = [
    ("--epochs", int), ("--iters-per-epoch", int), ("--p-classes", int),
    ("--k-per", int), ("--lr", float), ("--weight-decay", float),
    ("--lambda-soft", float), ("--lambda-moco", float), ("--alpha", float),
    ("--tau", float), ("--queue-capacity", int), ("--k", int),
    ("--eps", float), ("--min-pts", int), ("--seed", int),
    ("--margin", float), ("--scale", float), ("--encoder-dim", int),
    ("--lr-schedule", str), ("--lr-gamma", float),
]


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="key=value config file; flags override its values")
    for flag, typ in _TRAIN_FLAGS:
        p.add_argument(flag, type=typ, default=None)
    p.add_argument("--loss-mode", choices=["plain_ce", "arcface", "cosface"],
                   default=None)
    p.add_argument("--joint-source", choices=["true", "false"], default=None)
    p.add_argument("--lr-milestones", default=None,
                   help="comma-separated epoch indices for the step schedule")
    p.add_argument("--log", metavar="FILE", default=None,
                   help="write per-epoch records as JSON lines")
    p.add_argument("--val", metavar="FILE", default=None,
                   help="labeled dataset evaluated after each epoch")


def _stage_config(args):
    from .pipeline import LossMode, StageConfig, load_stage_config

    cfg = load_stage_config(args.config) if args.config else StageConfig()
    updates = {}
    for flag, _ in _TRAIN_FLAGS:
        name = flag.lstrip("-").replace("-", "_")
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    if args.loss_mode is not None:
        updates["loss_mode"] = LossMode(args.loss_mode)
    if args.joint_source is not None:
        updates["joint_source"] = args.joint_source == "true"
    if args.lr_milestones is not None:
        updates["lr_milestones"] = tuple(
            int(v) for v in str(args.lr_milestones).split(","))
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def _load_dataset(path):
    from .datamodel import load_features

    return load_features(path).validate()


def _val_split(args):
    if args.val is None:
        return None
    from .retrieval import split_query_gallery

    return split_query_gallery(_load_dataset(args.val))


def _write_log(args, log) -> None:
    if args.log is not None:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write(log.to_jsonl())


def _train_summary(log, out_path) -> dict:
    payload = {
        "stage": log.stage,
        "seed": log.seed,
        "epochs": len(log.records),
        "skipped_epochs": log.skipped_epochs,
        "params": str(out_path),
    }
    if log.final_val_map is not None:
        payload["final_val_map"] = round(log.final_val_map, 6)
    return payload


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> dict:
    from .datamodel import (SynthConfig, generate_synthetic, parse_kv,
                            save_features, synth_config_from_kv)

    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = synth_config_from_kv(parse_kv(fh.read()))
    else:
        cfg = SynthConfig()
    updates = {}
    for name in ("num_ids_source", "num_ids_target", "samples_per_id",
                 "raw_dim", "cameras", "seed"):
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    for name in ("cluster_spread", "translation_fidelity", "shift_strength",
                 "shift_offset"):
        value = getattr(args, name)
        if value is not None:
            updates[name] = value
    cfg = replace(cfg, **updates)
    cfg.validate()

    os.makedirs(args.out, exist_ok=True)
    source, target, translated = generate_synthetic(cfg)
    paths = {}
    for ds in (source, target, translated):
        path = os.path.join(args.out, f"{ds.name}.bin")
        save_features(path, ds)
        paths[ds.name] = {"path": path, "rows": ds.n, "dim": ds.d}
        _note(f"wrote {path} ({ds.n} rows)")
    return {"command": "synth", "seed": cfg.seed, "datasets": paths}


def _cmd_pretrain(args) -> dict:
    from .encoder import save_params
    from .pipeline import stage_pretrain

    cfg = _stage_config(args)
    train = _load_dataset(args.data)
    params, log = stage_pretrain(train, cfg, val_split=_val_split(args))
    save_params(args.out, params)
    _write_log(args, log)
    _note(f"pretrained {cfg.epochs} epochs on {args.data} -> {args.out}")
    return {"command": "pretrain", **_train_summary(log, args.out)}


def _cmd_baseline(args) -> dict:
    from .encoder import load_params, save_params
    from .pipeline import stage_baseline

    cfg = _stage_config(args)
    pretrained = load_params(args.params)
    target = _load_dataset(args.data)
    params, log = stage_baseline(pretrained, target, cfg,
                                 val_split=_val_split(args))
    save_params(args.out, params)
    _write_log(args, log)
    _note(f"self-trained {cfg.epochs} epochs on {args.data} -> {args.out}")
    return {"command": "baseline", **_train_summary(log, args.out)}


def _cmd_mmtplus(args) -> dict:
    from .encoder import load_params, save_params
    from .pipeline import stage_mmt_plus

    cfg = _stage_config(args)
    pretrained = load_params(args.params)
    pretrained2 = load_params(args.params2) if args.params2 else None
    source = _load_dataset(args.source)
    target = _load_dataset(args.target)
    state, log = stage_mmt_plus(pretrained, source, target, cfg,
                                val_split=_val_split(args),
                                pretrained2=pretrained2)
    save_params(args.out, state.export(args.export))
    _write_log(args, log)
    _note(f"mean-teacher training done; exported {args.export} -> {args.out}")
    return {"command": "mmtplus", "export": args.export,
            **_train_summary(log, args.out)}


def _cmd_cluster(args) -> dict:
    from .datamodel import save_features
    from .encoder import load_params
    from .pseudolabel import relabel_epoch

    params = load_params(args.params)
    ds = _load_dataset(args.data)
    labeling = relabel_epoch(ds, params, k=args.k, eps=args.eps,
                             min_pts=args.min_pts, blend=args.blend)
    out = args.out if args.out else args.data
    save_features(out, ds)
    verb = "copied to" if args.out else "rewrote pseudo labels in"
    _note(f"{verb} {out}: {labeling.num_clusters} clusters, "
          f"{labeling.num_outliers} outliers")
    return {"command": "cluster", "data": str(out),
            "num_clusters": labeling.num_clusters,
            "num_outliers": labeling.num_outliers}


def _encoded_split(args):
    """Query/gallery features for retrieval: encoder outputs when --params
    is given (L2-normalized), stored features otherwise."""
    import numpy as np

    from .retrieval import QueryGallerySplit

    query = _load_dataset(args.query)
    gallery = _load_dataset(args.gallery)
    split = QueryGallerySplit(query=query, gallery=gallery)
    split.validate()
    if args.params:
        from .encoder import encode_dataset, load_params
        from .numerics import l2_normalize_rows

        params = load_params(args.params)
        q = l2_normalize_rows(encode_dataset(params, query), "query feature")
        g = l2_normalize_rows(encode_dataset(params, gallery), "gallery feature")
    else:
        q = np.asarray(query.features, dtype=np.float64)
        g = np.asarray(gallery.features, dtype=np.float64)
    return split, q, g


def _cmd_rerank(args) -> dict:
    import numpy as np

    from .retrieval import rerank

    _, q, g = _encoded_split(args)
    dist = rerank(q, g, k1=args.k1, k2=args.k2, lam=args.lam)
    np.save(args.out, dist)
    _note(f"wrote {dist.shape[0]}x{dist.shape[1]} distance matrix to {args.out}")
    return {"command": "rerank", "out": str(args.out),
            "shape": list(dist.shape), "k1": args.k1, "k2": args.k2,
            "lam": args.lam}


def _cmd_evaluate(args) -> dict:
    import numpy as np

    from .numerics import cdist
    from .retrieval import camera_adjust, evaluate, rerank

    split, q, g = _encoded_split(args)
    if args.rerank:
        dist = rerank(q, g, k1=args.k1, k2=args.k2, lam=args.lam)
    else:
        dist = cdist(q, g)
    if args.cam_weight is not None:
        cams = max(int(split.query.cameras.max()),
                   int(split.gallery.cameras.max())) + 1
        eye = np.eye(cams)
        dist = camera_adjust(dist, eye[split.query.cameras],
                             eye[split.gallery.cameras], weight=args.cam_weight)
    report = evaluate(dist, split.query.identities, split.query.cameras,
                      split.gallery.identities, split.gallery.cameras,
                      top_limit=args.top)
    _note(f"evaluated {split.query.n} queries against {split.gallery.n} "
          f"gallery rows")
    return {"command": "evaluate", "rerank": bool(args.rerank),
            **report.to_dict()}


def _cmd_ensemble(args) -> dict:
    from .datamodel import save_features
    from .encoder import encode_dataset, load_params
    from .retrieval import ensemble_features

    ds = _load_dataset(args.data)
    parts = [encode_dataset(load_params(p), ds) for p in args.params]
    combined = ensemble_features(parts)
    out_ds = ds.subset(range(ds.n))
    out_ds.features = combined.astype("float32")
    save_features(args.out, out_ds)
    _note(f"ensembled {len(parts)} encoders -> {args.out} "
          f"({combined.shape[0]}x{combined.shape[1]})")
    return {"command": "ensemble", "out": str(args.out),
            "encoders": len(parts), "dim": int(combined.shape[1])}


def _cmd_gradcheck(args) -> dict:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(trials=args.trials, seed=args.seed)
    worst = max(results.values())
    for name in sorted(results):
        _note(f"{name}: max relative error {results[name]:.3e}")
    payload = {"command": "gradcheck", "trials": args.trials,
               "tolerance": args.tol, "worst": worst,
               "kernels": {k: v for k, v in sorted(results.items())},
               "passed": bool(worst < args.tol)}
    return payload


# ---------------------------------------------------------------------------
# Parser assembly and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="uda-reid", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    from . import __version__

    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--config", metavar="FILE")
    for flag in ("--num-ids-source", "--num-ids-target", "--samples-per-id",
                 "--raw-dim", "--cameras", "--seed"):
        p.add_argument(flag, type=int, default=None)
    for flag in ("--cluster-spread", "--translation-fidelity",
                 "--shift-strength", "--shift-offset"):
        p.add_argument(flag, type=float, default=None)
    _add_common(p)
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("pretrain", help="supervised training on labeled features")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_pretrain)

    p = sub.add_parser("baseline",
                       help="clustering-based self-training from a pretrained encoder")
    p.add_argument("--params", required=True, metavar="FILE")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("mmtplus",
                       help="mutual mean-teacher training with joint-domain batches")
    p.add_argument("--params", required=True, metavar="FILE",
                   help="pretrained encoder (student 1 init)")
    p.add_argument("--params2", metavar="FILE",
                   help="optional separate init for student 2")
    p.add_argument("--source", required=True, metavar="FILE")
    p.add_argument("--target", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--export", choices=["teacher1", "teacher2"],
                   default="teacher1")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(handler=_cmd_mmtplus)

    p = sub.add_parser("cluster",
                       help="rewrite a dataset's pseudo-label column in place "
                            "(use --out to write a copy instead)")
    p.add_argument("--params", required=True, metavar="FILE")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--out", metavar="FILE",
                   help="write the relabeled copy here and leave --data untouched")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--eps", type=float, default=0.6)
    p.add_argument("--min-pts", type=int, default=4)
    p.add_argument("--blend", type=float, default=None,
                   help="cluster on blend*euclidean + (1-blend)*jaccard")
    _add_common(p)
    p.set_defaults(handler=_cmd_cluster)

    p = sub.add_parser("rerank",
                       help="write re-ranked query/gallery distances as .npy")
    p.add_argument("--query", required=True, metavar="FILE")
    p.add_argument("--gallery", required=True, metavar="FILE")
    p.add_argument("--params", metavar="FILE",
                   help="encode with this encoder first (else stored features)")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--k1", type=int, default=30)
    p.add_argument("--k2", type=int, default=6)
    p.add_argument("--lam", type=float, default=0.3)
    _add_common(p)
    p.set_defaults(handler=_cmd_rerank)

    p = sub.add_parser("evaluate", help="mAP/CMC under the retrieval protocol")
    p.add_argument("--query", required=True, metavar="FILE")
    p.add_argument("--gallery", required=True, metavar="FILE")
    p.add_argument("--params", metavar="FILE")
    p.add_argument("--rerank", action="store_true")
    p.add_argument("--k1", type=int, default=30)
    p.add_argument("--k2", type=int, default=6)
    p.add_argument("--lam", type=float, default=0.3)
    p.add_argument("--cam-weight", type=float, nargs="?", const=0.1,
                   default=None, metavar="W",
                   help="subtract W * camera-feature distance (default W .1)")
    p.add_argument("--top", type=int, default=100)
    _add_common(p)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("ensemble",
                       help="concatenate normalized encodings from several encoders")
    p.add_argument("--data", required=True, metavar="FILE")
    p.add_argument("--params", required=True, action="append", metavar="FILE",
                   help="repeat for each encoder")
    p.add_argument("--out", required=True, metavar="FILE")
    _add_common(p)
    p.set_defaults(handler=_cmd_ensemble)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every loss kernel")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    _add_common(p)
    p.set_defaults(handler=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    try:
        parser = _build_parser()
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return 1
        payload = args.handler(args)
    except _UsageError as exc:
        _note(str(exc))
        _note("run with --help for usage")
        return 1
    except SystemExit as exc:  # argparse --help/--version
        return int(exc.code or 0)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _note(f"error: {exc}")
        return 2
    except ValueError as exc:  # format, config, mining, degenerate structure
        _note(f"error: {exc}")
        return 2
    except RuntimeError as exc:  # divergence guard
        _note(f"error: {exc}")
        return 3

    if payload.get("command") == "gradcheck" and not payload.get("passed"):
        _emit(payload)
        return 3
    _emit(payload)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

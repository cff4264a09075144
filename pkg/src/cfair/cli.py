"""Command-line pipeline: ``cfair synth | centroids | targets | train | eval | check-alignment``.

Every subcommand writes ``run.json`` (a run manifest) next to its outputs.
Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
"""

import argparse
import csv
import dataclasses
import io
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

from cfair import __version__
from cfair._io import atomic_write_json, atomic_write_text
from cfair.centroids import estimate_centroids, load_centroids, pseudo_blocks, save_centroids
from cfair.cftrain import TrainConfig, TrainingTables, compute_weights, full_loss, train
from cfair.curves import curve_csv, fairness_report
from cfair.dataset import DatasetError, load_dataset
from cfair.fairmodule import NumericalError, forward, init_from_pretrained, load_checkpoint, save_checkpoint
from cfair.synth import SynthConfig, parse_groups, write_synth
from cfair.transform import alignment_report, build_target_table, load_target_table, save_target_table

log = logging.getLogger("cfair")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _groups(text):
    try:
        return parse_groups(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if dataclasses.is_dataclass(v):
        return dataclasses.asdict(v)
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


def _manifest(out, args, started, **extra):
    cfg = {k: _jsonable(v) for k, v in vars(args).items() if k != "func"}
    body = {
        "subcommand": args.command,
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wallclock_seconds": time.perf_counter() - started,
    }
    body.update(extra)
    atomic_write_json(Path(out) / "run.json", body)


def cmd_synth(args, started):
    cfg = SynthConfig(args.dim, args.groups, args.seed)
    ds = write_synth(cfg, args.out)
    print(f"wrote {ds.n} images, {ds.k} identities, {ds.num_attributes} groups to {args.out}")
    _manifest(args.out, args, started, outputs=["manifest.json", "embeddings.bin", "synth.json"])


def cmd_centroids(args, started):
    ds = load_dataset(args.data)
    cs = estimate_centroids(ds)
    save_centroids(cs, args.out, ds.attribute_names)
    print(f"wrote {cs.k} centroids to {args.out}")
    _manifest(args.out, args, started, outputs=["centroids.bin", "centroids.json"])


def cmd_targets(args, started):
    ds = load_dataset(args.data)
    cs = load_centroids(args.centroids)
    cs.check_matches(ds)
    r = ds.attribute_id(args.reference)
    blocks = pseudo_blocks(ds, cs)
    table = build_target_table(ds, cs, r, blocks)
    weights = compute_weights(ds, cs, blocks)
    save_target_table(table, args.out, ds.attribute_names, weights)
    print(f"wrote {len(table)} target records (reference {args.reference}) to {args.out}")
    _manifest(args.out, args, started, outputs=["targets.bin", "targets.json", "weights.bin"])


def cmd_train(args, started):
    ds = load_dataset(args.data)
    cs = load_centroids(args.centroids)
    cs.check_matches(ds)
    table = load_target_table(args.targets, ds, cs)
    weights = compute_weights(ds, cs, table.blocks)
    tables = TrainingTables.build(ds, table, weights)
    cfg = TrainConfig(args.batch, args.lr, args.epochs, table.reference, args.seed)
    out = Path(args.out)
    initial = full_loss(init_from_pretrained(cs), tables)
    result = train(
        ds, cs, tables, cfg,
        checkpoint_dir=out / "checkpoints" if args.checkpoint_every else None,
        checkpoint_every=args.checkpoint_every,
        on_epoch=lambda rec: log.info("epoch %d loss %.6g", rec.epoch, rec.mean_loss),
    )
    final = full_loss(result.params, tables)
    if not math.isfinite(final):
        raise NumericalError("non-finite final loss")
    save_checkpoint(result.params, out, cfg.epochs, final,
                    extra={"reference_attribute": ds.attribute_names[table.reference]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "mean_loss", "wallclock_seconds"])
    for rec in result.log:
        w.writerow([rec.epoch, repr(rec.mean_loss), f"{rec.wallclock_seconds:.3f}"])
    atomic_write_text(out / "train_log.csv", buf.getvalue())
    print(f"initial loss {initial:.6g}, final loss {final:.6g}")
    _manifest(out, args, started, initial_loss=initial, final_loss=final,
              outputs=["checkpoint.bin", "checkpoint.json", "train_log.csv"])


def cmd_eval(args, started):
    ds = load_dataset(args.data)
    if args.checkpoint is not None:
        params, _ = load_checkpoint(args.checkpoint)
        if params.d != ds.d:
            raise DatasetError(f"checkpoint has d={params.d}, dataset has d={ds.d}")
        ds = ds.with_embeddings(forward(params, ds.embeddings))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = fairness_report(ds, args.alphas)
    for msg in rep.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    out = Path(args.out)
    body = rep.to_json(ds.attribute_names)
    body["embeddings"] = "raw" if args.checkpoint is None else "fairness-module"
    atomic_write_json(out / "report.json", body)
    for a, c in rep.group_far.items():
        atomic_write_text(out / "curves" / f"{ds.attribute_names[a]}_far.csv", curve_csv(c))
    for a, c in rep.group_frr.items():
        atomic_write_text(out / "curves" / f"{ds.attribute_names[a]}_frr.csv", curve_csv(c))
    for e in body["levels"]:
        bfar = "undefined" if e["bfar"] is None else f"{e['bfar']:.4f}"
        bfrr = "undefined" if e["bfrr"] is None else f"{e['bfrr']:.4f}"
        print(f"alpha={e['alpha']:g} roc={e['roc']:.4f} bfar={bfar} bfrr={bfrr}")
    _manifest(out, args, started, outputs=["report.json", "curves/"])


def cmd_check_alignment(args, started):
    ds = load_dataset(args.data)
    cs = load_centroids(args.centroids)
    cs.check_matches(ds)
    r = ds.attribute_id(args.reference)
    rows = alignment_report(ds, cs, r)
    ok = True
    for row in rows:
        name = ds.attribute_names[row["attribute"]]
        status = "PASS" if row["pass"] else "FAIL"
        ok &= row["pass"]
        print(
            f"{name}: genuine gap {row['genuine_gap']:.6g} <= {row['genuine_bound']:.6g}, "
            f"impostor gap {row['impostor_gap']:.6g} <= {row['impostor_bound']:.6g}  {status}"
        )
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfair", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cfair {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic biased dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--groups", type=_groups, default=_groups("A:50:10:0.3,B:50:10:0.8"),
                   help="name:ids:imgs:sigma[,...]")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("centroids", help="estimate identity centroids")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_centroids)

    s = sub.add_parser("targets", help="build regression targets and pair weights")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--centroids", required=True, type=Path)
    s.add_argument("--reference", required=True, help="attribute name of the reference group")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_targets)

    s = sub.add_parser("train", help="train the fairness module")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--centroids", required=True, type=Path)
    s.add_argument("--targets", required=True, type=Path)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch", type=int, default=4096)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N epochs")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="fairness report from real pair scores")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--checkpoint", type=Path, default=None)
    s.add_argument("--alphas", type=_float_list, default=[1e-1, 1e-2])
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("check-alignment", help="verify the quantile alignment bound per group")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--centroids", required=True, type=Path)
    s.add_argument("--reference", required=True)
    s.set_defaults(func=cmd_check_alignment)
    return p


def _limit_threads():
    value = os.environ.get("CF_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"CF_THREADS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"CF_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        limiter = _limit_threads()
        try:
            code = args.func(args, started)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"cfair: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError) as exc:
        print(f"cfair: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DatasetError, ValueError, KeyError, OSError) as exc:
        print(f"cfair: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())

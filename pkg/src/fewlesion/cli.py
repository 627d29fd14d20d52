"""Command-line entry point: gen-data, train, eval, gradcam, gradcheck.

Exit codes: 0 success, 1 validation error, 2 runtime abort.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import evaluation, fusion, gradcam, gradcheck_suite
from .config import ConfigError, RunConfig
from .data import export_dataset, generate_dataset, load_directory_dataset, netpbm, write_spec
from .tensor_core.checkpoint import CheckpointError

log = logging.getLogger("fewlesion")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg: RunConfig, data_dir) -> list:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} not found")
    samples = load_directory_dataset(data_dir)
    side = cfg.fusion.side
    wrong = [s.sample_id for s in samples if s.image.shape[:2] != (side, side)]
    if wrong:
        raise ValueError(f"{len(wrong)} images are not {side}x{side} (first: {wrong[0]}); set side= to match")
    return samples


# -- commands -----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    spec = cfg.synthetic_spec()
    samples = generate_dataset(spec)
    export_dataset(samples, out)
    write_spec(spec, out / "spec.txt")
    cfg.write(out)
    print(f"wrote {len(samples)} samples ({spec.n_classes} classes) to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, data_dir, out: Path) -> int:
    split = cfg.split()
    samples = _load_data(cfg, data_dir)
    cfg.write(out)

    def progress(rec: fusion.TrainRecord) -> None:
        if rec.task == cfg.fusion.tasks_per_epoch:
            log.info("epoch %d done, last task L_total=%.4f", rec.epoch, rec.total_loss)

    seg, enc, trainlog = fusion.prepare_and_train(samples, split, cfg.fusion, checkpoint_dir=out / "checkpoints",
                                                  progress=progress)
    _atomic_write(out / "trainlog.csv", trainlog.to_csv())
    fusion.save_checkpoint(out / "model.pfv1", seg, enc)
    print(f"final epoch mean episode accuracy {trainlog.epoch_accuracy(cfg.fusion.epochs):.4f}; "
          f"model saved to {out / 'model.pfv1'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, data_dir, checkpoint, out: Path) -> int:
    split = cfg.split()
    seg, enc = fusion.load_checkpoint(checkpoint, cfg.fusion)
    samples = _load_data(cfg, data_dir)
    cfg.write(out)
    mode = "fused" if cfg.eval_fusion else "plain"
    for n in cfg.shot_list():
        report = evaluation.evaluate(
            seg, enc, samples, split, k=cfg.fusion.k, n=n, q=cfg.fusion.q, metric=cfg.fusion.metric,
            episodes=cfg.episodes, seed=cfg.eval_seed, use_fusion=cfg.eval_fusion,
        )
        path = out / f"eval_k{cfg.fusion.k}_n{n}_{cfg.fusion.metric}_{mode}_T{cfg.episodes}.csv"
        _atomic_write(path, report.to_csv())
        print(f"k={cfg.fusion.k} n={n} accuracy={100 * report.mean:.2f}% "
              + " ".join(f"+-{100 * m:.2f}%@{lv}" for lv, m in report.margins.items()))
    return EXIT_OK


def _support_for(samples, target_sample, classes, per_class):
    groups = []
    for c in classes:
        pool = sorted((s for s in samples if s.label == c and s.sample_id != target_sample.sample_id),
                      key=lambda s: s.sample_id)
        if len(pool) < per_class:
            raise ValueError(f"class {c} has {len(pool)} samples, need {per_class} for Grad-CAM prototypes")
        groups.append(pool[:per_class])
    return groups


def cmd_gradcam(cfg: RunConfig, data_dir, checkpoint, sample_ids: list[str], out: Path) -> int:
    split = cfg.split()
    seg, enc = fusion.load_checkpoint(checkpoint, cfg.fusion)
    samples = _load_data(cfg, data_dir)
    by_id = {s.sample_id: s for s in samples}
    unknown = [i for i in sample_ids if i not in by_id]
    if unknown:
        raise ValueError(f"unknown sample ids: {', '.join(unknown)}")
    cfg.write(out)
    metric = cfg.fusion.metric
    rows = []
    for sid in sample_ids:
        sample = by_id[sid]
        side = "seen" if sample.label in split.seen else "unseen"
        classes = split.side(side)
        if sample.label not in classes:
            raise ValueError(f"sample {sid} has class {sample.label}, which is in neither split")
        support = _support_for(samples, sample, classes, cfg.gradcam_support)
        target = classes.index(sample.label)
        row = [sid, sample.label]
        for fused in (True, False):
            protos = gradcam.sample_prototypes(seg, enc, support, use_fusion=fused)
            smap = gradcam.gradcam(seg, enc, sample, target, protos, use_fusion=fused, metric=metric)
            gradcam.export_heatmap(smap, out / f"{sid}_{'fused' if fused else 'plain'}_{metric}.pgm")
            row.append(repr(smap.in_mask_fraction))
        rows.append(row)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "label", "fused_in_mask", "plain_in_mask"])
    writer.writerows(rows)
    _atomic_write(out / "overlap.csv", buf.getvalue())
    print(f"wrote {2 * len(rows)} heatmaps and overlap.csv to {out}")
    return EXIT_OK


def cmd_gradcheck(out: Path | None) -> int:
    report = gradcheck_suite.run_suite()
    text = "\n".join(report.lines()) + "\n"
    print(text, end="")
    if out is not None:
        _atomic_write(out / "gradcheck.txt", text)
    return EXIT_OK if report.passed else EXIT_INVALID


# -- argument handling -------------------------------------------------------------

FLAG_KEYS = ("mode", "lam", "metric", "seed", "epochs", "episodes", "shots")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewlesion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_out=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        for key in FLAG_KEYS:
            p.add_argument(f"--{key}", dest=f"flag_{key}", metavar=key.upper(), help=f"shorthand for --set {key}=...")
        p.add_argument("--out", required=need_out, help="output directory")

    common(sub.add_parser("gen-data", help="write a synthetic dataset directory"))
    p = sub.add_parser("train", help="pretrain the segmenter and run fused episodic training")
    common(p)
    p.add_argument("--data", required=True)
    p = sub.add_parser("eval", help="evaluate a checkpoint on unseen-class episodes")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("gradcam", help="fused and plain Grad-CAM maps for chosen samples")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True, help="comma-separated sample ids")
    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--out", help="also write the report here")
    return parser


def _resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    for key in FLAG_KEYS:
        value = getattr(args, f"flag_{key}", None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return cfgmod.load(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(_out_dir(args.out) if args.out else None)
        cfg = _resolve(args)
        out = _out_dir(args.out)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, args.data, out)
        if args.command == "eval":
            return cmd_eval(cfg, args.data, args.checkpoint, out)
        ids = [s.strip() for s in args.samples.split(",") if s.strip()]
        return cmd_gradcam(cfg, args.data, args.checkpoint, ids, out)
    except fusion.TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, CheckpointError, netpbm.NetpbmError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())

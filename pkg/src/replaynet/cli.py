"""``replaynet`` command line: generate | train | evaluate | analyze.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure during training.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, read_checkpoint, load_into, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import IngestError, IngestReport, corpus_stats, ingest, load_corpus, returning_probability, write_checkins
from .evaluation import EvaluationError, evaluate, model_bandwidth_reports
from .model import VARIANTS, InputError, Trainer, build_model
from .numerics import DeterminismError, TrainingError
from .synthetic import SpecError, SyntheticSpec, generate_synthetic

log = logging.getLogger("replaynet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="check-in corpus (CSV)")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--cell", choices=["vanilla", "lstm", "gru"])
    p.add_argument("--time-scale", choices=["day", "weekday_weekend", "week"])
    p.add_argument("--time-granularity", choices=["hour", "minute"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="replaynet", description="Next-POI prediction with smoothed timestamp embeddings.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic check-in corpus")
    g.add_argument("--spec", required=True, help="JSON generator spec")
    g.add_argument("--out", required=True, help="corpus path to write")
    g.add_argument("--seed", type=int, help="overrides the seed in the generator file")

    t = sub.add_parser("train", help="train a model, writing checkpoints and a loss log")
    _add_run_flags(t)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("evaluate", help="score the test split with a checkpoint")
    _add_run_flags(e)
    e.add_argument("--checkpoint", required=True)

    a = sub.add_parser("analyze", help="returning-probability histogram and corpus statistics")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--bin-width", type=float, default=1.0, help="lag bin width in hours")
    a.add_argument("--max-lag", type=float, default=168.0, help="largest lag in hours")
    return ap


def _overrides(args) -> dict:
    return {
        "seed": args.seed, "data": args.data, "out": args.out, "epochs": args.epochs,
        "variant": args.variant, "model.cell": args.cell,
        "time.scale": args.time_scale, "time.granularity": args.time_granularity,
    }


def _model_meta(cfg: RunConfig) -> dict:
    """Config entries that define the model and its training stream."""
    flat = cfg.to_flat()
    for k in ("out", "epochs", "save_every"):
        flat.pop(k)
    return flat


def _load_split(cfg: RunConfig):
    if not cfg.data:
        raise UsageError("no corpus given (--data or the 'data' config key)")
    report = IngestReport()
    try:
        corpus = load_corpus(cfg.data, cfg.train_fraction, report)
    except FileNotFoundError:
        raise DataError(f"{cfg.data}: no such file") from None
    except IngestError as exc:
        raise DataError(str(exc)) from None
    if report.rejected_coordinates or report.duplicates:
        log.warning("%s: skipped %d out-of-range and %d duplicate row(s)", cfg.data, report.rejected_coordinates, report.duplicates)
    if corpus.user_count == 0:
        raise DataError(f"{cfg.data}: no user has enough check-ins to train on")
    return corpus


def _build(cfg: RunConfig, corpus):
    return build_model(cfg.model_config(corpus.poi_count, corpus.user_count), cfg.seed)


def _write_loss_log(path: Path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "steps", "users"])
        for row in losses:
            w.writerow([row[0], repr(row[1]), row[2], row[3]])


def cmd_generate(args) -> int:
    try:
        spec = SyntheticSpec.from_json(args.spec)
        if args.seed is not None:
            spec = SyntheticSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    except FileNotFoundError:
        raise UsageError(f"{args.spec}: no such file") from None
    except SpecError as exc:
        raise UsageError(f"invalid generator spec: {exc}") from None
    except TypeError as exc:
        raise UsageError(f"invalid generator spec: {exc}") from None
    checkins = generate_synthetic(spec)
    if not checkins:
        log.warning("generator produced no check-ins (user_count=%d); writing an empty corpus", spec.user_count)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_checkins(out, checkins)
    stats = corpus_stats(checkins)
    stats_path = out.with_name(out.stem + ".stats.csv")
    stats.to_csv(stats_path)
    for name, value in stats.rows():
        print(f"{name}: {value}")
    log.info("wrote %s and %s", out, stats_path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    corpus = _load_split(cfg)
    model = _build(cfg, corpus)
    trainer = Trainer(model, cfg.optim, cfg.seed)
    losses = []
    if args.resume:
        seed, meta, tensors = read_checkpoint(args.resume)
        if seed != cfg.seed:
            raise UsageError(f"checkpoint seed {seed} differs from run seed {cfg.seed}")
        load_into(model.params, tensors)
        trainer.epoch, trainer.step = int(meta["epoch"]), int(meta["step"])
        losses = [tuple(r) for r in meta.get("losses", [])]
    out = Path(cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")
    seqs = corpus.sequences()

    def save(path):
        meta = {"epoch": trainer.epoch, "step": trainer.step, "losses": [list(r) for r in losses],
                "config": _model_meta(cfg), "poi_count": corpus.poi_count, "user_count": corpus.user_count}
        save_checkpoint(path, model.params, cfg.seed, meta)

    try:
        while trainer.epoch < cfg.epochs:
            st = trainer.train_epoch(seqs)
            losses.append((st.epoch, st.mean_loss, st.steps, st.users))
            log.info("epoch %d mean loss %.6f", st.epoch, st.mean_loss)
            if cfg.save_every and st.epoch % cfg.save_every == 0:
                save(out / "checkpoints" / f"epoch_{st.epoch:04d}.ckpt")
    finally:
        _write_loss_log(out / "loss.csv", losses)
    save(out / "checkpoint.ckpt")
    log.info("wrote %s", out / "checkpoint.ckpt")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    seed, meta, tensors = read_checkpoint(args.checkpoint)
    base = dict(meta.get("config", {}))
    base["seed"] = seed
    if args.config:
        base.update(load_config(args.config, {"seed": seed}).to_flat())
    cfg = load_config(None, {**base, **{k: v for k, v in _overrides(args).items() if v is not None}})
    corpus = _load_split(cfg)
    model = _build(cfg, corpus)
    load_into(model.params, tensors)
    report = evaluate(model, corpus.sequences())
    out = Path(cfg.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    report.write_metrics(out / "metrics.csv")
    report.write_per_timestamp(out / "per_timestamp.csv")
    if model.bandwidths():
        for tag, rep in model_bandwidth_reports(model).items():
            rep.write_csv(out / ("bandwidths.csv" if tag in ("", "hour") else f"bandwidths_{tag}.csv"))
    else:
        log.info("variant %s has no learnt bandwidths; bandwidths.csv not written", cfg.variant)
    print(f"acc@1 {report.acc[1]:.4f}  acc@5 {report.acc[5]:.4f}  acc@10 {report.acc[10]:.4f}  "
          f"mrr {report.mrr:.4f}  predictions {report.prediction_count}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        checkins = ingest(args.data)
    except FileNotFoundError:
        raise DataError(f"{args.data}: no such file") from None
    except IngestError as exc:
        raise DataError(str(exc)) from None
    if not checkins:
        raise DataError(f"{args.data}: corpus is empty, nothing to analyze")
    if args.bin_width <= 0 or args.max_lag < 0:
        raise UsageError("--bin-width must be positive and --max-lag non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    returning_probability(checkins, args.bin_width, args.max_lag).to_csv(out / "returning.csv")
    corpus_stats(checkins).to_csv(out / "stats.csv")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, CheckpointError) as exc:
        print(f"replaynet {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InputError, EvaluationError) as exc:
        print(f"replaynet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, DeterminismError) as exc:
        print(f"replaynet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

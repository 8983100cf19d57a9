"""Batch command-line front door: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 malformed input file, 3 numerical
failure. Failures print one ``eegcast: error code=<n> kind=<kind> detail=<...>``
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import eeg_io, evalalarm, net, spectral, tokenizer, train
from .config import ConfigError, PipelineConfig, load_config
from .eeg_io import FormatError

log = logging.getLogger("eegcast")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- io helpers

def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(out: Path, name: str, data) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode) as fh:
        fh.write(data)
    return path


def _load_recording(path) -> eeg_io.Recording:
    raw = _read_bytes(path)
    if raw.startswith(eeg_io.RAW_MAGIC.encode()):
        return eeg_io.read_eegraw(raw)
    return eeg_io.read_edf(raw)


def _load_annotations(path):
    try:
        text = _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: annotation CSV is not UTF-8") from None
    return eeg_io.read_annotations_csv(text)


def _load_checkpoint(path) -> net.Checkpoint:
    return net.load_checkpoint(_read_bytes(path))


def _echo_config(out: Path, cfg: PipelineConfig) -> None:
    _write(out, "config.effective.txt", cfg.to_text())


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg: PipelineConfig) -> int:
    rec, ann = eeg_io.synth_patient(
        cfg["seed"], cfg["synth.duration_s"], cfg["synth.channels"], cfg["fs"], cfg["synth.n_seizures"])
    out = Path(args.out)
    if args.format == "edf":
        _write(out, "recording.edf", eeg_io.write_edf(rec))
    else:
        _write(out, "recording.eegraw", eeg_io.write_eegraw(rec))
    _write(out, "annotations.csv", eeg_io.write_annotations_csv(ann))
    _echo_config(out, cfg)
    return 0


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    rec = _load_recording(args.input)
    if rec.fs != cfg["fs"]:
        rec = eeg_io.resample(rec, cfg["fs"])
    clean, bands = spectral.apply_preprocessing(rec, cfg["welch_seg_s"], cfg["welch_overlap"])
    out = Path(args.out)
    _write(out, "clean.eegraw", eeg_io.write_eegraw(clean))
    _write(out, "bands.csv", spectral.bands_to_csv(bands))
    _echo_config(out, cfg)
    return 0


def cmd_bands(args, cfg: PipelineConfig) -> int:
    rec = _load_recording(args.input)
    bands = spectral.detect_noise_bands(spectral.welch_psd(rec, cfg["welch_seg_s"], cfg["welch_overlap"]))
    sys.stdout.write(spectral.bands_to_csv(bands))
    return 0


def cmd_tokenize(args, cfg: PipelineConfig) -> int:
    recs = [_load_recording(p) for p in args.input]
    if len({r.n_channels for r in recs}) != 1:
        raise UsageError("all sessions passed to tokenize must have the same channel count")
    samples = np.concatenate([r.samples for r in recs], axis=1)
    joined = eeg_io.Recording(samples, recs[0].fs, recs[0].channel_names)
    state = tokenizer.fit(joined, cfg["tokenizer.k"], cfg["tokenizer.levels"])
    out = Path(args.out)
    _write(out, "tokens.tok", tokenizer.write_tok(tokenizer.tokenize_recording(joined, state)))
    _echo_config(out, cfg)
    return 0


def cmd_pretrain(args, cfg: PipelineConfig) -> int:
    stream = tokenizer.read_tok(_read_bytes(args.tokens))
    result = train.pretrain(stream, cfg.model_config(), cfg.pretrain_run())
    out = Path(args.out)
    _write(out, "pretrain.ckpt", net.save_checkpoint(result.checkpoint))
    _write(out, "pretrain_curve.csv", train.pretrain_curve_csv(result.curve))
    _echo_config(out, cfg)
    return 0


def _labeled_windows(rec, annotations, cfg, overlap):
    wins = eeg_io.segment_recording(rec, cfg["segment_s"], overlap)
    return eeg_io.label_segments(wins, annotations, cfg["horizon_s"])


def cmd_finetune(args, cfg: PipelineConfig) -> int:
    ckpt = _load_checkpoint(args.checkpoint)
    rec = _load_recording(args.input)
    annotations = _load_annotations(args.annotations)
    segments = _labeled_windows(rec, annotations, cfg, cfg["train_overlap"])
    result = train.finetune(segments, ckpt, cfg.finetune_run())
    out = Path(args.out)
    _write(out, "finetune.ckpt", net.save_checkpoint(result.checkpoint))
    _write(out, "finetune_curve.csv", train.finetune_curve_csv(result.curve))
    metrics = {
        "best_step": result.best_step,
        "class_weights": list(result.weights),
        "n_train": int(len(result.split.train)),
        "n_val": int(len(result.split.val)),
        "n_purged": int(len(result.split.purged)),
        "train": result.train_metrics,
        "val": result.val_metrics,
    }
    _write(out, "finetune_metrics.json", json.dumps(metrics, indent=2) + "\n")
    _echo_config(out, cfg)
    return 0


def cmd_predict(args, cfg: PipelineConfig) -> int:
    if not args.checkpoint:
        raise UsageError("predict requires --checkpoint")
    ckpt = _load_checkpoint(args.checkpoint)
    if ckpt.classifier is None:
        raise FormatError(f"{args.checkpoint}: checkpoint has no classifier head (run finetune first)")
    rec = _load_recording(args.input)
    tl = evalalarm.infer_timeline(rec, ckpt, cfg["infer_overlap"], cfg["threshold"], cfg["segment_s"])
    out = Path(args.out)
    _write(out, "timeline.csv", evalalarm.timeline_csv(tl))
    _echo_config(out, cfg)
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    try:
        tl = evalalarm.parse_timeline_csv(_read_bytes(args.timeline).decode("ascii"), cfg["threshold"])
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise FormatError(f"{args.timeline}: {exc}") from None
    onsets = eeg_io.merged_onsets(_load_annotations(args.annotations))
    if args.duration is not None:
        duration = args.duration
    elif args.input:
        duration = _load_recording(args.input).duration_s
    else:
        raise UsageError("evaluate needs --input or --duration for the false-alarm rate")
    report = evalalarm.match_events(tl, onsets, duration, cfg["horizon_s"])
    extra = {"patient": args.patient}
    if args.metrics:
        try:
            m = json.loads(_read_bytes(args.metrics))
            extra["train_acc"] = m["train"]["acc"]
            extra["val"] = m["val"]
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{args.metrics}: bad fine-tune metrics file ({exc})") from None
    out = Path(args.out)
    _write(out, "report.json", evalalarm.report_json(report, extra))
    _echo_config(out, cfg)
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    rows = []
    for path in args.reports:
        try:
            d = json.loads(_read_bytes(path))
            val = d.get("val", {})
            rows.append(evalalarm.table_row(
                d.get("patient") or Path(path).parent.name,
                d.get("train_acc"), val.get("acc"), val.get("prec"), val.get("rec"), val.get("f1"),
                d["far_per_h"], d["mean_delay_s"], d["sensitivity_pct"],
            ))
        except (ValueError, KeyError, AttributeError) as exc:
            raise FormatError(f"{path}: bad report file ({exc})") from None
    out = Path(args.out)
    _write(out, "table.csv", evalalarm.table_csv(rows))
    _echo_config(out, cfg)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="seed for every stochastic stage")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="eegcast", description="Patient-specific EEG seizure forecasting pipeline.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic patient")
    p.add_argument("--format", choices=("edf", "eegraw"), default="edf")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="adaptive notch filtering")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("bands", parents=[common], help="print detected noise bands as CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("tokenize", parents=[common], help="fit tokenizer and write tokens")
    p.add_argument("--input", required=True, nargs="+")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("pretrain", parents=[common], help="self-supervised pretraining")
    p.add_argument("--tokens", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="supervised fine-tuning")
    p.add_argument("--input", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", parents=[common], help="sliding-window alarm timeline")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="event-based evaluation")
    p.add_argument("--timeline", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--input")
    p.add_argument("--duration", type=float)
    p.add_argument("--metrics", help="finetune_metrics.json to fold into the report")
    p.add_argument("--patient", default="patient")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="aggregate per-patient reports")
    p.add_argument("--reports", required=True, nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(code: int, kind: str, detail: str) -> int:
    detail = " ".join(str(detail).split())
    print(f"eegcast: error code={code} kind={kind} detail={detail}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        cfg = load_config(args.config, args.set, args.seed)
        return args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(1, "usage", exc)
    except ConfigError as exc:
        return _fail(1, "config", exc)
    except (FormatError, net.CheckpointError) as exc:
        return _fail(2, "malformed_input", exc)
    except net.NumericalError as exc:
        return _fail(3, "numerical", exc)
    except ValueError as exc:
        return _fail(2, "invalid_input", exc)


if __name__ == "__main__":
    sys.exit(main())

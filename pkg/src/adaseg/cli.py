"""Command-line interface.

Subcommands: generate (synthetic corpus), train, eval, render. Exit
codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Config files are flat UTF-8 "key = value" lines; blank lines and
#-comments are ignored.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import data as dataio
from .data import SynthConfig, generate_synthetic, load_dataset, save_corpus
from .errors import DataError, NumericalError
from .model import ModelConfig, StageConfig, load_checkpoint, save_checkpoint
from .render import render_timeline_ascii, render_timeline_svg
from .harness import MODES, TrainConfig, evaluate, train

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def parse_config_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"config file {path} is not UTF-8: {exc}") from exc
    out: dict[str, str] = {}
    for i, line in enumerate(text.splitlines()):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}: line {i}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(raw: dict[str, str], spec: dict[str, type]) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in spec:
            raise DataError(f"unknown config key {key!r}; known: {sorted(spec)}")
        kind = spec[key]
        try:
            if kind is bool:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            elif kind is tuple:
                out[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                out[key] = kind(value)
        except ValueError as exc:
            raise DataError(f"config key {key!r}: cannot parse {value!r} ({exc})") from exc
    return out


_SYNTH_SPEC = {f.name: (int if f.type == "int" else float) for f in fields(SynthConfig)}

_TRAIN_SPEC = {
    "mode": str, "epochs": int, "learning_rate": float, "alpha": float, "mu": float,
    "beta_l": float, "beta_g": float, "grl": float, "labeled_fraction": float,
    "seed": int, "target_reload": int, "differentiable_attention": bool,
    # model structure
    "num_stages": int, "da_stages": tuple, "segment_count": int,
    "layers": int, "filters": int, "kernel": int,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="adaseg", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cross-domain corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--config", default=None, help="key = value generator settings")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--source-split", default="source")
    p.add_argument("--target-split", default="target")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--labeled-fraction", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log", default=None, help="write per-step JSON lines here")
    p.add_argument("--config", default=None, help="key = value training settings")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--report", required=True, help="metrics JSON output path")
    p.add_argument("--predictions", default=None, help="directory for predicted label files")

    p = sub.add_parser("render", help="render label tracks to an SVG timeline")
    p.add_argument("--gt", required=True, help="ground-truth label file")
    p.add_argument("--pred", required=True, nargs="+", help="prediction label files")
    p.add_argument("--out", required=True, help="output .svg path")
    p.add_argument("--ascii", action="store_true", help="also print an ASCII rendering")
    return parser


def _cmd_generate(args) -> int:
    overrides = _coerce(parse_config_file(args.config), _SYNTH_SPEC) if args.config else {}
    try:
        config = SynthConfig(**overrides)
    except ValueError as exc:
        raise DataError(f"bad generator config: {exc}") from exc
    source, target = generate_synthetic(config, args.seed)
    save_corpus(args.out, source, target)
    total = len(source.videos) + len(target.videos)
    print(f"wrote {total} videos ({len(source.videos)} source, {len(target.videos)} target) "
          f"to {args.out}")
    return 0


def _train_config(overrides: dict, num_classes: int, input_dim: int, args) -> TrainConfig:
    stage_keys = {"layers", "filters", "kernel"}
    model_keys = {"num_stages", "da_stages", "segment_count"}
    stage = StageConfig(num_classes=num_classes,
                        **{k: v for k, v in overrides.items() if k in stage_keys})
    model = ModelConfig(input_dim=input_dim, stage=stage,
                        **{k: v for k, v in overrides.items() if k in model_keys})
    train_kwargs = {k: v for k, v in overrides.items()
                    if k not in stage_keys | model_keys}
    # explicit CLI flags win over the config file
    if args.mode is not None:
        train_kwargs["mode"] = args.mode
    if args.labeled_fraction is not None:
        train_kwargs["labeled_fraction"] = args.labeled_fraction
    if args.epochs is not None:
        train_kwargs["epochs"] = args.epochs
    if args.seed is not None:
        train_kwargs["seed"] = args.seed
    try:
        return TrainConfig(model=model, **train_kwargs)
    except ValueError as exc:
        raise DataError(f"bad training config: {exc}") from exc


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    source = ds.split_videos(args.source_split)
    target = ds.split_videos(args.target_split)
    if not source:
        raise DataError(f"split {args.source_split!r} is empty")
    if not target:
        raise DataError(f"split {args.target_split!r} is empty")
    overrides = _coerce(parse_config_file(args.config), _TRAIN_SPEC) if args.config else {}
    config = _train_config(overrides, ds.num_classes, ds.feature_dim, args)

    def report(epoch, summary):
        if not args.quiet:
            terms = " ".join(f"{k}={v:.4f}" for k, v in summary.items())
            print(f"epoch {epoch}/{config.epochs} {terms}")

    model, log = train(source, target, config, epoch_callback=report)
    save_checkpoint(model, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for rec in log:
                fh.write(json.dumps(rec) + "\n")
    if not args.quiet:
        print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    videos = ds.split_videos(args.split)
    if not videos:
        raise DataError(f"split {args.split!r} is empty")
    model = load_checkpoint(args.model)
    if model.config.input_dim != ds.feature_dim:
        raise DataError(f"model expects {model.config.input_dim}-dim features, "
                        f"corpus has {ds.feature_dim}")
    report, predictions = evaluate(model, videos)
    Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if args.predictions:
        out = Path(args.predictions)
        out.mkdir(parents=True, exist_ok=True)
        for vid, pred in predictions.items():
            dataio.write_labels(out / f"{vid}.txt", pred, ds.class_names)
    print(json.dumps(report.to_json_dict()))
    return 0


def _cmd_render(args) -> int:
    paths = [Path(args.gt)] + [Path(p) for p in args.pred]
    raw_tracks = []
    for path in paths:
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        except UnicodeDecodeError as exc:
            raise DataError(f"{path} is not UTF-8: {exc}") from exc
        names = [line.strip() for line in text.splitlines()]
        if not names:
            raise DataError(f"{path}: empty label file")
        raw_tracks.append((path.stem, names))
    lengths = {len(names) for _, names in raw_tracks}
    if len(lengths) != 1:
        raise DataError(f"tracks disagree on length: {sorted(lengths)}")
    class_names = sorted({n for _, names in raw_tracks for n in names})
    name_to_id = {n: i for i, n in enumerate(class_names)}
    tracks = [(name, [name_to_id[n] for n in names]) for name, names in raw_tracks]
    Path(args.out).write_text(render_timeline_svg(tracks, class_names) + "\n",
                              encoding="utf-8")
    if args.ascii:
        print(render_timeline_ascii(tracks))
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {"generate": _cmd_generate, "train": _cmd_train,
             "eval": _cmd_eval, "render": _cmd_render}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())

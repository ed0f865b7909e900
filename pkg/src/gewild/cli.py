"""Command line entry point.

Subcommands: ingest (decode video to frames via an external decoder), audio /
video (feature caching), synth (dataset generation), train, predict, eval,
agree, gradcheck. Exit codes: 0 success, 1 runtime error (single-line
`gewild: <ErrorClass>: message` on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import dataclasses
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import CLASS_NAMES
from .data import build_mixed_dataset, load_manifest
from .errors import ConfigError, DataError, GewildError
from .evaluate import (
    EvalReport,
    load_predictions,
    predict,
    prediction_agreement,
    save_predictions,
)
from .model import GroupEmotionModel, ModelConfig
from .synth import (
    DEFAULT_COUNTS,
    FPS,
    generate_dataset,
    load_background_assets,
    load_face_assets,
)
from .train import (
    DiskFeatureProvider,
    TrainConfig,
    load_checkpoint,
    load_train_config,
    train,
)


def _single_line(text: str) -> str:
    return " ; ".join(part for part in text.splitlines() if part.strip())


def _counts(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated counts")
    try:
        a, b, c = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-integer count in {text!r}") from None
    return a, b, c


def _branches(text: str) -> tuple[bool, bool]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [n for n in names if n not in ("video", "audio")]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"branches must be a comma list drawn from video,audio (got {text!r})"
        )
    return "video" in names, "audio" in names


def _split_records(records, split: str):
    if split == "all":
        return list(records)
    return [r for r in records if r.split == split]


# ---------------------------------------------------------------- subcommands


def _cmd_ingest(args) -> int:
    video = Path(args.video)
    if not video.is_file():
        raise DataError(f"video file not found: {video}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cmd = [
        args.decoder, "-loglevel", "error", "-i", str(video),
        "-vf", f"fps={args.fps}", "-start_number", "0",
        str(out / "frame_%05d.png"),
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError:
        raise DataError(f"decoder {args.decoder!r} not found on PATH") from None
    if proc.returncode != 0:
        raise DataError(
            f"decoder exited {proc.returncode}: {_single_line(proc.stderr)[-200:]}"
        )
    n = len(sorted(out.glob("frame_*.png")))
    print(f"wrote {n} frames to {out}")
    return 0


def _cmd_features(args, use_video: bool, use_audio: bool) -> int:
    records = load_manifest(args.manifest, check_paths=not args.no_check_paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provider = DiskFeatureProvider(
        args.frames, use_video=use_video, use_audio=use_audio, cache_dir=out
    )
    for rec in records:
        provider.features(rec)
    kind = "frames" if use_video else "mel"
    print(f"cached {kind} for {len(records)} clips ({args.frames} frames) under {out}")
    return 0


def _cmd_synth(args) -> int:
    faces = load_face_assets(args.faces)
    backgrounds = load_background_assets(args.backgrounds)
    pool = load_manifest(args.pool, check_paths=not args.no_check_paths)
    records = generate_dataset(
        faces, backgrounds, pool, args.out,
        counts=args.counts, seed=args.seed, fps=args.fps,
        render=not args.plan_only,
    )
    tally = {name: 0 for name in CLASS_NAMES}
    for rec in records:
        tally[CLASS_NAMES[rec.label]] += 1
    per_class = " ".join(f"{k}={v}" for k, v in tally.items())
    mode = "planned" if args.plan_only else "rendered"
    print(f"{mode} {len(records)} clips ({per_class})")
    print(f"manifest: {Path(args.out) / 'manifest.tsv'}")
    return 0


def _cmd_train(args) -> int:
    base = load_train_config(args.config) if args.config else TrainConfig()
    overrides: dict = {"checkpoint_dir": args.out}
    for flag, field in (
        ("lr", "lr"), ("epochs", "epochs"), ("batch_size", "batch_size"),
        ("freeze_epochs", "freeze_epochs"), ("seed", "seed"),
        ("frames", "n_frames"), ("prefetch", "prefetch"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    if args.branches is not None:
        overrides["use_video"], overrides["use_audio"] = args.branches
    cfg = dataclasses.replace(base, **overrides)

    records = load_manifest(args.manifest, check_paths=not args.no_check_paths)
    train_records = _split_records(records, "train")
    val_records = _split_records(records, "val")
    if args.synth_manifest:
        pool = load_manifest(
            args.synth_manifest, check_paths=not args.no_check_paths
        )
        train_records = build_mixed_dataset(
            train_records, pool, args.ratio, seed=cfg.seed
        )

    preset = ModelConfig.paper_scale if args.scale == "paper" else ModelConfig.tiny
    model_cfg = preset(
        n_frames=cfg.n_frames, use_video=cfg.use_video, use_audio=cfg.use_audio
    )
    model = GroupEmotionModel(model_cfg, seed=cfg.seed)
    provider = DiskFeatureProvider(
        cfg.n_frames, use_video=cfg.use_video, use_audio=cfg.use_audio,
        cache_dir=args.features,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(
        model, train_records, val_records, cfg, provider,
        log_path=out / "metrics.tsv", resume_from=args.resume,
        stop_at_accuracy=args.stop_at_accuracy,
    )
    print(
        f"trained {len(train_records)} clips, best epoch {result.best_epoch} "
        f"(selected accuracy {result.best_val_accuracy:.4f})"
    )
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint}")
    if result.last_checkpoint:
        print(f"last checkpoint: {result.last_checkpoint}")
    print(f"metrics log: {out / 'metrics.tsv'}")
    return 0


def _cmd_predict(args) -> int:
    meta = load_checkpoint(args.checkpoint)
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    if args.frames is not None and args.frames != model_cfg.n_frames:
        raise ConfigError(
            f"checkpoint was trained with {model_cfg.n_frames} frames, "
            f"requested {args.frames}"
        )
    if args.branches is not None:
        want_video, want_audio = args.branches
        if (want_video, want_audio) != (model_cfg.use_video, model_cfg.use_audio):
            raise ConfigError(
                "checkpoint branches do not match request: checkpoint has "
                f"video={model_cfg.use_video} audio={model_cfg.use_audio}"
            )
    model = GroupEmotionModel(model_cfg, seed=0)
    load_checkpoint(args.checkpoint, model=model)
    records = _split_records(
        load_manifest(args.manifest, check_paths=not args.no_check_paths),
        args.split,
    )
    if not records:
        raise DataError(f"no records in split {args.split!r}")
    provider = DiskFeatureProvider(
        model_cfg.n_frames, use_video=model_cfg.use_video,
        use_audio=model_cfg.use_audio, cache_dir=args.features,
    )
    tag = args.tag if args.tag is not None else Path(args.checkpoint).stem
    pred = predict(model, records, provider, batch_size=args.batch_size, tag=tag)
    save_predictions(args.out, pred)
    print(f"wrote {len(pred)} predictions to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred = load_predictions(args.pred)
    truth = _split_records(
        load_manifest(args.truth, check_paths=False), args.split
    )
    report = EvalReport.from_predictions(pred, truth)
    print(f"accuracy\t{report.accuracy:.6f}")
    for i, name in enumerate(CLASS_NAMES):
        row = "\t".join(str(int(v)) for v in report.confusion[i])
        print(f"confusion\t{name}\t{row}")
    for i, name in enumerate(CLASS_NAMES):
        print(
            f"class\t{name}\tprecision\t{report.precision[i]:.6f}"
            f"\trecall\t{report.recall[i]:.6f}"
        )
    if args.emit_csv:
        lines = ["truth," + ",".join(CLASS_NAMES)]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(
                name + "," + ",".join(str(int(v)) for v in report.confusion[i])
            )
        Path(args.emit_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"csv: {args.emit_csv}")
    return 0


def _cmd_agree(args) -> int:
    a = load_predictions(args.a)
    b = load_predictions(args.b)
    print(f"agreement\t{prediction_agreement(a, b):.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .nn import (
        conv2d, cross_entropy, gelu, grad_check, layer_norm, matmul,
        maxpool2d, model_grad_check, relu, softmax, Tensor,
    )

    rng = np.random.default_rng(args.seed)
    away = lambda shape: rng.normal(size=shape) + 0.2 * np.sign(
        rng.normal(size=shape)
    )
    labels = np.array([0, 2, 1])
    checks = [
        ("matmul", lambda a, b: matmul(a, b),
         [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        ("conv2d", lambda x, w: conv2d(x, w, stride=1, padding=1),
         [rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))]),
        ("maxpool2d", lambda x: maxpool2d(x, 2, 2),
         [rng.normal(size=(2, 3, 6, 6))]),
        ("relu", lambda x: relu(x), [away((4, 7))]),
        ("gelu", lambda x: gelu(x), [rng.normal(size=(4, 7))]),
        ("softmax", lambda x: softmax(x), [rng.normal(size=(3, 7))]),
        ("layer_norm", lambda x, g, b: layer_norm(x, g, b),
         [rng.normal(size=(4, 10)), 1.0 + 0.1 * rng.normal(size=10),
          0.1 * rng.normal(size=10)]),
        ("cross_entropy", lambda x: cross_entropy(x, labels),
         [rng.normal(size=(3, 5))]),
    ]
    failed = 0
    for name, fn, inputs in checks:
        report = grad_check(fn, inputs, name=name)
        print(report)
        failed += 0 if report.passed else 1

    if args.full:
        rng = np.random.default_rng([args.seed, 0xE2E])
        cfg = ModelConfig.tiny(n_frames=2)
        model = GroupEmotionModel(cfg, seed=args.seed)
        model.to_dtype(np.float64)
        frames = Tensor(rng.normal(size=(1, 2, 3, 224, 224)), dtype=np.float64)
        mels = Tensor(rng.normal(size=(1, 2, 128, 251)), dtype=np.float64)
        y = np.array([1])

        def loss_fn():
            return cross_entropy(model.forward(frames, mels), y)

        report = model_grad_check(
            loss_fn, list(model.named_parameters()), sample=2, eps=1e-6,
            name="end-to-end", sample_seed=args.seed,
        )
        print(report)
        failed += 0 if report.passed else 1

    if failed:
        print(f"gradcheck: {failed} check(s) failed", file=sys.stderr)
        return 1
    return 0


# --------------------------------------------------------------------- parser


def _add_manifest_flags(sub) -> None:
    sub.add_argument("--manifest", required=True, help="dataset manifest TSV")
    sub.add_argument(
        "--no-check-paths", action="store_true",
        help="skip existence checks on manifest paths",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gewild",
        description="group emotion in the wild: preprocessing, training, eval",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="decode a video file to frame images")
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=int, default=FPS)
    p.add_argument("--decoder", default="ffmpeg")
    p.set_defaults(fn=_cmd_ingest)

    for name, help_text in (
        ("audio", "cache log-mel features per clip"),
        ("video", "cache sampled frame tensors per clip"),
    ):
        p = subs.add_parser(name, help=help_text)
        _add_manifest_flags(p)
        p.add_argument("--frames", type=int, default=5,
                       help="windows/frames per clip (paper settings: 5 or 75)")
        p.add_argument("--out", required=True)
        p.set_defaults(fn=lambda a, v=(name == "video"): _cmd_features(a, v, not v))

    p = subs.add_parser("synth", help="generate a synthetic clip dataset")
    p.add_argument("--faces", required=True, help="faces/<class>/*.png")
    p.add_argument("--backgrounds", required=True)
    p.add_argument("--pool", required=True, help="audio pool manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", type=_counts, default=DEFAULT_COUNTS,
                   help="positive,neutral,negative clip counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=int, default=FPS)
    p.add_argument("--plan-only", action="store_true",
                   help="write manifest and specs without rendering frames")
    p.add_argument("--no-check-paths", action="store_true")
    p.set_defaults(fn=_cmd_synth)

    p = subs.add_parser("train", help="train the fusion model")
    _add_manifest_flags(p)
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--synth-manifest", help="synthetic pool manifest to mix in")
    p.add_argument("--ratio", type=float, default=0.3,
                   help="synthetic share of the mixed training set")
    p.add_argument("--frames", type=int)
    p.add_argument("--branches", type=_branches,
                   help="comma list drawn from video,audio")
    p.add_argument("--scale", choices=("tiny", "paper"), default="tiny")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--freeze-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--prefetch", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stop-at-accuracy", type=float)
    p.set_defaults(fn=_cmd_train)

    p = subs.add_parser("predict", help="write a prediction TSV for a split")
    p.add_argument("--checkpoint", required=True)
    _add_manifest_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--frames", type=int, help="assert checkpoint frame count")
    p.add_argument("--branches", type=_branches,
                   help="assert checkpoint branches")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--tag", help="version tag stored in the prediction set")
    p.set_defaults(fn=_cmd_predict)

    p = subs.add_parser("eval", help="accuracy + confusion against a manifest")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True, help="ground-truth manifest TSV")
    p.add_argument("--split", default="all",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--emit-csv", help="also write the confusion matrix as CSV")
    p.set_defaults(fn=_cmd_eval)

    p = subs.add_parser("agree", help="prediction agreement between two runs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=_cmd_agree)

    p = subs.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true",
                   help="also check a tiny end-to-end model")
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (GewildError, OSError) as exc:
        print(
            f"gewild: {type(exc).__name__}: {_single_line(str(exc))}",
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

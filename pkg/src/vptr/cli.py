"""Command-line surface: data generation, two-stage training, prediction,
evaluation, FLOPs reporting, benchmarking, and frame import.

Every command writes its artifacts under a single output directory together
with a ``run_manifest.json`` recording the exact invocation. ``VPTR_RUN_DIR``
provides the default output root when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from . import models as M
from .autoencoder import FrameAutoencoder, reconstruction_mse, train_autoencoder
from .config import (
    ModelConfig,
    RunConfig,
    config_hash,
    config_to_text,
    desk_model_config,
    load_run_config,
    paper_model_config,
)
from .core import ValueRange
from .data import SyntheticDatasetSpec, gen_moving_shapes
from .errors import VptrError
from .flops import flops_estimate, write_report_csv
from .frames_io import read_frame, write_frame
from .metrics import evaluate_predictions, write_curves_csv
from .models import build_model, predict, train_stage2
from .tensorfile import load_tensor, save_tensor

DATA_MANIFEST = "manifest.json"


class UsageError(VptrError):
    """Bad flag combination detected after argument parsing."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _resolve_out(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("VPTR_RUN_DIR")
    if not root:
        raise UsageError("no --out given and VPTR_RUN_DIR is not set")
    return Path(root) / command


def _write_run_manifest(out_dir: Path, command: str, args_ns) -> None:
    manifest = {
        "command": command,
        "args": {k: (str(v) if isinstance(v, Path) else v)
                 for k, v in vars(args_ns).items() if k != "func"},
    }
    (out_dir / "run_manifest.json").write_text(_canonical_json(manifest))


def _set_threads(n: int) -> None:
    if n > 0:
        torch.set_num_threads(n)


def _load_config(path: str) -> RunConfig:
    return load_run_config(path)


def _dataset_spec(cfg: RunConfig) -> SyntheticDatasetSpec:
    d = cfg.data
    total = d.train_clips + d.val_clips + d.test_clips
    return SyntheticDatasetSpec(
        seed=d.seed,
        num_clips=total,
        clip_length=d.clip_length,
        canvas=d.canvas,
        shapes_per_clip=d.shapes_per_clip,
        side_min=d.side_min,
        side_max=d.side_max,
        speed_min=d.speed_min,
        speed_max=d.speed_max,
        value_range=ValueRange(d.value_range),
    ).validate()


def _load_split(data_dir: Path, split: str) -> tuple[torch.Tensor, ValueRange]:
    manifest_path = data_dir / DATA_MANIFEST
    if not manifest_path.exists():
        raise VptrError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    value_range = ValueRange(manifest["value_range"])
    path = data_dir / f"{split}.vtn"
    if not path.exists():
        raise VptrError(f"missing dataset split file {path}")
    return load_tensor(path), value_range


def cmd_gen_data(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise VptrError(f"spec file not found: {spec_path}")
    cfg = _load_config(spec_path)
    spec = _dataset_spec(cfg)
    out_dir = _resolve_out(args, "dataset")
    out_dir.mkdir(parents=True, exist_ok=True)

    d = cfg.data
    bounds = {
        "train": range(0, d.train_clips),
        "val": range(d.train_clips, d.train_clips + d.val_clips),
        "test": range(d.train_clips + d.val_clips, spec.num_clips),
    }
    files = {}
    for split, indices in bounds.items():
        batch = gen_moving_shapes(spec, indices).validate()
        path = out_dir / f"{split}.vtn"
        save_tensor(path, batch.data)
        files[split] = {"file": path.name, "clips": len(indices)}
        print(f"wrote {path} {tuple(batch.data.shape)}")
    manifest = {
        "spec": {**asdict(spec), "value_range": spec.value_range.value,
                 "kinds": list(spec.kinds)},
        "splits": {k: [v["clips"], v["file"]] for k, v in files.items()},
        "value_range": spec.value_range.value,
        "config_hash": config_hash(cfg),
    }
    (out_dir / DATA_MANIFEST).write_text(_canonical_json(manifest))
    _write_run_manifest(out_dir, "gen-data", args)
    return 0


def cmd_train_ae(args) -> int:
    cfg = _load_config(args.config)
    data_dir = Path(args.data)
    train_clips, value_range = _load_split(data_dir, "train")
    val_clips, _ = _load_split(data_dir, "val")
    out_dir = _resolve_out(args, "ae")
    out_dir.mkdir(parents=True, exist_ok=True)

    def log(row):
        print(f"[train-ae] epoch {row['epoch']}: loss {row['train_loss']:.3f} "
              f"val_mse {row['val_mse']:.5f}")

    model, history = train_autoencoder(train_clips, val_clips, cfg.autoencoder,
                                       value_range, log=log)
    meta = {
        "kind": "autoencoder",
        "d_model": cfg.autoencoder.d_model,
        "channels": int(train_clips.shape[2]),
        "value_range": value_range.value,
        "config_hash": config_hash(cfg),
    }
    ckpt.save_checkpoint(out_dir, model, meta)
    _write_history_csv(out_dir / "loss_history.csv", history)
    (out_dir / "config.ini").write_text(config_to_text(cfg))
    _write_run_manifest(out_dir, "train-ae", args)
    final_mse = history[-1]["val_mse"]
    print(f"final val MSE {final_mse:.6f} (target {cfg.autoencoder.target_mse})")
    return 0


def _write_history_csv(path: Path, history: list[dict]) -> None:
    if not history:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def _load_autoencoder(ae_dir: Path) -> tuple[FrameAutoencoder, dict, str]:
    state, meta = ckpt.load_checkpoint(ae_dir)
    if meta.get("kind") != "autoencoder":
        raise VptrError(f"{ae_dir} is not an autoencoder checkpoint")
    model = FrameAutoencoder(
        channels=meta["channels"], d_model=meta["d_model"],
        value_range=ValueRange(meta["value_range"]),
    )
    model.load_state_dict(state)
    model.eval()
    return model, meta, ckpt.checkpoint_hash(ae_dir)


def cmd_train_vptr(args) -> int:
    cfg = _load_config(args.config)
    ae_dir = Path(args.ae_ckpt)
    autoencoder, ae_meta, ae_hash = _load_autoencoder(ae_dir)
    if ae_meta.get("config_hash") != config_hash(cfg) and not args.allow_config_mismatch:
        raise VptrError(
            "config hash mismatch between this run config and the stage-one "
            "checkpoint (pass --allow-config-mismatch to override)"
        )
    data_dir = Path(args.data)
    train_clips, _ = _load_split(data_dir, "train")
    out_dir = _resolve_out(args, f"vptr-{args.variant}")
    out_dir.mkdir(parents=True, exist_ok=True)

    model_cfg = cfg.model_config(variant=args.variant)
    model = build_model(model_cfg)

    def log(row):
        print(f"[train-{args.variant}] epoch {row['epoch']}: loss {row['train_loss']:.3f}")

    history = train_stage2(model, autoencoder, train_clips, model_cfg, cfg.train, log=log)
    if ckpt.checkpoint_hash(ae_dir) != ae_hash:
        raise VptrError("stage-one checkpoint changed during stage-two training")
    meta = {
        "kind": "predictor",
        "variant": model_cfg.variant,
        "model_config": asdict(model_cfg),
        "ae_checkpoint": ae_hash,
        "config_hash": config_hash(cfg),
    }
    ckpt.save_checkpoint(out_dir, model, meta)
    _write_history_csv(out_dir / "loss_history.csv", history)
    (out_dir / "config.ini").write_text(config_to_text(cfg))
    _write_run_manifest(out_dir, "train-vptr", args)
    return 0


def _load_predictor(ckpt_dir: Path, ae_dir: Path):
    state, meta = ckpt.load_checkpoint(ckpt_dir)
    if meta.get("kind") != "predictor":
        raise VptrError(f"{ckpt_dir} is not a predictor checkpoint")
    autoencoder, _, ae_hash = _load_autoencoder(ae_dir)
    if meta.get("ae_checkpoint") != ae_hash:
        raise VptrError(
            "stage-one checkpoint hash mismatch: this predictor was trained "
            "against a different autoencoder"
        )
    known = {f.name for f in fields(ModelConfig)}
    cfg_dict = {k: v for k, v in meta["model_config"].items() if k in known}
    model_cfg = ModelConfig(**cfg_dict).validate()
    model = build_model(model_cfg)
    model.load_state_dict(state)
    model.eval()
    return model, model_cfg, autoencoder


def _check_mode(mode: str, variant: str) -> None:
    if mode == "block" and variant != "nar":
        raise UsageError(f"--mode block requires a nar model, got {variant}")
    if mode in ("rip", "ril") and variant not in ("far", "par"):
        raise UsageError(f"--mode {mode} requires a far or par model, got {variant}")


def cmd_predict(args) -> int:
    model, model_cfg, autoencoder = _load_predictor(Path(args.ckpt), Path(args.ae_ckpt))
    if args.variant and args.variant != model_cfg.variant:
        raise UsageError(
            f"--variant {args.variant} does not match checkpoint variant {model_cfg.variant}"
        )
    _check_mode(args.mode, model_cfg.variant)
    clips, value_range = _load_split(Path(args.data), args.split)
    n = min(args.clips, clips.shape[0]) if args.clips else clips.shape[0]
    past = clips[:n, :model_cfg.past_frames]
    out_dir = _resolve_out(args, "predict")
    out_dir.mkdir(parents=True, exist_ok=True)

    preds = predict(model, autoencoder, past, args.steps, args.mode)
    save_tensor(out_dir / "predictions.vtn", preds)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(exist_ok=True)
    for i in range(preds.shape[0]):
        for t in range(preds.shape[1]):
            name = f"clip{i:04d}_step{t + 1:02d}.{args.format}"
            write_frame(frames_dir / name, preds[i, t], value_range, args.format)
    _write_run_manifest(out_dir, "predict", args)
    print(f"wrote {preds.shape[0]}x{preds.shape[1]} predicted frames to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    model, model_cfg, autoencoder = _load_predictor(Path(args.ckpt), Path(args.ae_ckpt))
    mode = args.mode or ("block" if model_cfg.variant == "nar" else "rip")
    _check_mode(mode, model_cfg.variant)
    clips, value_range = _load_split(Path(args.data), args.split)
    n = min(args.clips, clips.shape[0]) if args.clips else clips.shape[0]
    L, N = model_cfg.past_frames, model_cfg.future_frames
    steps = args.steps or N
    if clips.shape[1] < L + steps:
        raise VptrError(
            f"clips of length {clips.shape[1]} too short for L={L} plus {steps} future steps"
        )
    out_dir = _resolve_out(args, "eval")
    out_dir.mkdir(parents=True, exist_ok=True)

    past = clips[:n, :L]
    truth = clips[:n, L:L + steps]
    preds = predict(model, autoencoder, past, steps, mode)
    report = evaluate_predictions(truth, preds, peak=value_range.peak)
    write_curves_csv(report, out_dir / "metrics.csv")
    summary = {
        "variant": model_cfg.variant,
        "mode": mode,
        "clips": int(n),
        "steps": int(steps),
        "mean_mse": report.mean_mse,
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
    }
    (out_dir / "summary.json").write_text(_canonical_json(summary))
    _write_run_manifest(out_dir, "eval", args)
    print(f"mean psnr {report.mean_psnr:.2f} dB, mean ssim {report.mean_ssim:.4f} "
          f"over {n} clips x {steps} steps")
    return 0


def _profile_config(args, variant: str) -> ModelConfig:
    if args.config:
        return _load_config(args.config).model_config(variant=variant)
    if args.profile == "paper":
        return paper_model_config(variant)
    return desk_model_config(variant)


def cmd_flops(args) -> int:
    out_dir = _resolve_out(args, "flops")
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = [args.variant] if args.variant else ["far", "par", "nar"]
    totals = {}
    for variant in variants:
        report = flops_estimate(_profile_config(args, variant))
        write_report_csv(report, out_dir / f"flops_{variant}.csv")
        totals[variant] = report.total_flops
        print(f"{variant}: total {report.total_flops:,} FLOPs "
              f"(attention {report.attention_flops:,})")
    if len(totals) == 3:
        order = sorted(totals, key=totals.get, reverse=True)
        print("ordering:", " > ".join(order))
    _write_run_manifest(out_dir, "flops", args)
    return 0


def cmd_bench(args) -> int:
    out_dir = _resolve_out(args, "bench")
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)
    rows = []
    for variant in ("far", "par", "nar"):
        cfg = _profile_config(args, variant)
        model = build_model(cfg)
        model.eval()
        codec = M.IdentityCodec() if args.identity_codec else None
        if codec is None:
            autoencoder = FrameAutoencoder(channels=1, d_model=cfg.d_model)
            autoencoder.eval()
        else:
            autoencoder = codec
        if isinstance(autoencoder, M.IdentityCodec):
            past = torch.rand(args.batch, cfg.past_frames, cfg.d_model,
                              cfg.feat_size, cfg.feat_size)
        else:
            past = torch.rand(args.batch, cfg.past_frames, 1, 64, 64)
        row = M.benchmark_inference(model, autoencoder, past, cfg.future_frames,
                                    repeats=args.repeats, warmup=args.warmup)
        rows.append(row)
        print(f"{variant}: {row['mean_s'] * 1e3:.2f} ms +- {row['std_s'] * 1e3:.2f} ms "
              f"({row['mode']}, batch {row['batch']})")
    with open(out_dir / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    order = sorted(rows, key=lambda r: r["mean_s"])
    print("fastest to slowest:", " < ".join(r["variant"] for r in order))
    _write_run_manifest(out_dir, "bench", args)
    return 0


def cmd_import(args) -> int:
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise VptrError(f"frame directory not found: {frames_dir}")
    value_range = ValueRange(args.value_range)
    paths = sorted(p for p in frames_dir.iterdir()
                   if p.suffix.lower() in (".pgm", ".png"))
    if not paths:
        raise VptrError(f"no .pgm/.png frames in {frames_dir}")
    if len(paths) % args.clip_length != 0:
        raise VptrError(
            f"{len(paths)} frames do not divide into clips of length {args.clip_length}"
        )
    frames = torch.stack([read_frame(p, value_range) for p in paths])
    t = args.clip_length
    clips = frames.reshape(len(paths) // t, t, *frames.shape[1:])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tensor(out, clips)
    print(f"wrote {out} {tuple(clips.shape)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vptr",
        description="Video future-frame prediction with factorized "
                    "spatiotemporal transformers.",
    )
    parser.add_argument("--threads", type=int, default=0,
                        help="force torch thread count (0 = library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset splits")
    p.add_argument("--spec", required=True, help="run config file with a [data] section")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-ae", help="stage one: train the frame autoencoder")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", help="checkpoint output directory")
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("train-vptr", help="stage two: train a predictor variant")
    p.add_argument("--variant", required=True, choices=("far", "par", "nar"))
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ae-ckpt", required=True, help="stage-one checkpoint directory")
    p.add_argument("--allow-config-mismatch", action="store_true")
    p.add_argument("--out", help="checkpoint output directory")
    p.set_defaults(func=cmd_train_vptr)

    p = sub.add_parser("predict", help="roll out future frames from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ae-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--mode", required=True, choices=("rip", "ril", "block"))
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--clips", type=int, default=0, help="limit clips (0 = all)")
    p.add_argument("--variant", choices=("far", "par", "nar"),
                   help="assert the checkpoint variant")
    p.add_argument("--format", default="pgm", choices=("pgm", "png"))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ae-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--mode", choices=("rip", "ril", "block"))
    p.add_argument("--steps", type=int, default=0, help="future steps (0 = model default)")
    p.add_argument("--clips", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic FLOPs report (no weights needed)")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    p.add_argument("--config", help="run config overriding the profile")
    p.add_argument("--variant", choices=("far", "par", "nar"))
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="wall-clock inference benchmark")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    p.add_argument("--config")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--identity-codec", action="store_true",
                   help="bench the predictor alone, without the frame codec")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("import", help="convert a directory of frames to a tensor file")
    p.add_argument("--frames", required=True)
    p.add_argument("--clip-length", type=int, required=True)
    p.add_argument("--value-range", default="unit", choices=("unit", "signed"))
    p.add_argument("--out", required=True, help="output .vtn path")
    p.set_defaults(func=cmd_import)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except VptrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

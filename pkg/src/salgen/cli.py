"""Command-line entry point: train, eval, infer, uncertainty, synth,
analyze-contrast, selftest.

A JSON config file is the single source of truth; repeated --set key=value
flags override it (dotted keys reach nested sections, e.g. model.image_size).
Every run writes a run manifest (command, config hash, seed, code version) and
the effective merged config next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import data as D
from . import inference as I
from . import metrics as M
from . import tensor as T
from .nets import ModelConfig, SaliencyModel
from .selftest import run_selftest
from .trainer import TrainConfig, Trainer


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(payload: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        target = payload
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ValueError(f"--set key {key!r} descends into a non-section")
        target[parts[-1]] = _parse_value(raw)
    return payload


def _load_config(path, overrides) -> dict:
    payload = {}
    if path:
        with open(path) as fh:
            payload = json.load(fh)
    return _apply_overrides(payload, overrides or [])


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _write_run_files(out_dir: str, command: str, payload: dict, seed) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    manifest = {"command": command, "config_hash": _config_hash(payload),
                "seed": seed, "version": __version__}
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _add_common(parser, need_out=True, need_data=False, need_checkpoint=False):
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--precision", choices=("f32", "f64"), default=None)
    if need_out:
        parser.add_argument("--out", required=True, help="output directory")
    if need_data:
        parser.add_argument("--data", required=True, help="dataset manifest path")
    if need_checkpoint:
        parser.add_argument("--checkpoint", required=True, help="checkpoint file")


def _train_config(args) -> tuple[TrainConfig, dict]:
    payload = _load_config(args.config, args.overrides)
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.precision is not None:
        payload["precision"] = args.precision
    cfg = TrainConfig.from_dict(payload)
    return cfg, cfg.to_dict()


def cmd_train(args) -> int:
    cfg, payload = _train_config(args)
    dataset = D.load_dataset(args.data)
    _write_run_files(args.out, "train", payload, cfg.seed)
    trainer = Trainer(dataset, cfg, out_dir=args.out)
    if args.init_checkpoint:
        trainer.model.load(args.init_checkpoint)
    result = trainer.run()
    print(f"trained {cfg.head}/{cfg.regime} for {len(result.records)} steps; "
          f"checkpoint: {result.checkpoint_path}")
    return 0


def _rebuild_model(args, payload) -> tuple[SaliencyModel, dict]:
    train_payload = dict(payload.get("train_config") or payload)
    cfg = TrainConfig.from_dict(train_payload)
    T.set_precision(args.precision or cfg.precision)
    model_fields = dict(cfg.to_dict()["model"])
    model_fields["with_depth_head"] = cfg.regime == "rgbd_full"
    model_fields["early_fusion"] = cfg.regime == "rgbd_full"
    model = SaliencyModel(ModelConfig(**model_fields), seed=cfg.seed)
    model.load(args.checkpoint)
    return model, cfg.to_dict()


def _eval_options(args, cfg_dict) -> tuple[int, int]:
    extra = _apply_overrides({}, args.overrides)
    default_n = 1 if cfg_dict["head"] == "deterministic" else 10
    n_samples = int(extra.pop("n_samples", default_n))
    seed = args.seed if args.seed is not None else 0
    unknown = sorted(extra)
    if unknown:
        raise ValueError(f"unknown eval options: {unknown}")
    return n_samples, seed


def cmd_eval(args) -> int:
    payload = _load_config(args.config, [])
    model, cfg_dict = _rebuild_model(args, payload)
    n_samples, seed = _eval_options(args, cfg_dict)
    dataset = D.load_dataset(args.data)
    report = M.evaluate_dataset(model, dataset, n_samples=n_samples, seed=seed)
    _write_run_files(args.out, "eval", {"train_config": cfg_dict,
                                        "n_samples": n_samples, "seed": seed}, seed)
    path = os.path.join(args.out, "metrics.jsonl")
    report.to_jsonl(path)
    print(f"evaluated {report.count} images (skipped {len(report.skipped)}); "
          f"MAE {report.mean('mae'):.4f} F {report.mean('f_beta'):.4f} "
          f"E {report.mean('e_xi'):.4f} S {report.mean('s_alpha'):.4f}")
    print(f"report: {path}")
    return 0


def _predictions(model, dataset, n_samples, seed):
    for index, sample in enumerate(dataset):
        rng = np.random.Generator(np.random.Philox(key=(int(seed) << 32) ^ index))
        mean_map = M.mean_prediction(model, sample, n_samples, rng)
        yield sample, mean_map


def cmd_infer(args) -> int:
    payload = _load_config(args.config, [])
    model, cfg_dict = _rebuild_model(args, payload)
    n_samples, seed = _eval_options(args, cfg_dict)
    dataset = D.load_dataset(args.data)
    _write_run_files(args.out, "infer", {"train_config": cfg_dict,
                                         "n_samples": n_samples, "seed": seed}, seed)
    for sample, mean_map in _predictions(model, dataset, n_samples, seed):
        D.save_gray(os.path.join(args.out, f"{sample.id}_saliency.png"), mean_map)
    print(f"wrote {len(dataset)} saliency maps to {args.out}")
    return 0


def cmd_uncertainty(args) -> int:
    payload = _load_config(args.config, [])
    model, cfg_dict = _rebuild_model(args, payload)
    extra = _apply_overrides({}, args.overrides)
    n_samples = int(extra.pop("n_samples", 10))
    if extra:
        raise ValueError(f"unknown uncertainty options: {sorted(extra)}")
    seed = args.seed if args.seed is not None else 0
    dataset = D.load_dataset(args.data)
    _write_run_files(args.out, "uncertainty", {"train_config": cfg_dict,
                                               "n_samples": n_samples, "seed": seed}, seed)
    for sample, mean_map in _predictions(model, dataset, n_samples, seed):
        entropy = I.entropy_of_mean(mean_map)
        D.save_gray(os.path.join(args.out, f"{sample.id}_mean.png"), mean_map)
        D.save_gray(os.path.join(args.out, f"{sample.id}_entropy.png"),
                    entropy / np.log(2.0))
    print(f"wrote mean and entropy maps for {len(dataset)} images to {args.out}")
    return 0


def cmd_synth(args) -> int:
    payload = _load_config(args.config, args.overrides)
    options = {"count": 16, "size": 64, "contrast_level": 1.0,
               "with_depth": False, "with_scribble": False}
    unknown = sorted(set(payload) - set(options))
    if unknown:
        raise ValueError(f"unknown synth options: {unknown}")
    options.update(payload)
    seed = args.seed if args.seed is not None else 0
    _write_run_files(args.out, "synth", {**options, "seed": seed}, seed)
    samples = D.synth_generate(seed=seed, **options)
    manifest = D.save_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples; manifest: {manifest}")
    return 0


def cmd_analyze_contrast(args) -> int:
    payload = _load_config(args.config, args.overrides)
    modality = payload.pop("modality", "rgb")
    if payload:
        raise ValueError(f"unknown analyze-contrast options: {sorted(payload)}")
    dataset = D.load_dataset(args.data)
    seed = args.seed if args.seed is not None else 0
    _write_run_files(args.out, "analyze-contrast", {"modality": modality}, seed)
    modalities = ["rgb", "depth"] if modality == "both" else [modality]
    path = os.path.join(args.out, "contrast.jsonl")
    with open(path, "w") as fh:
        summary = {"summary": True}
        for mod in modalities:
            report = D.dataset_contrast_report(dataset, mod)
            for rec in report["per_image"]:
                fh.write(json.dumps({"modality": mod, **rec}, sort_keys=True) + "\n")
            summary[f"mean_{mod}"] = report["mean"]
        if set(modalities) == {"rgb", "depth"}:
            summary["rgb_minus_depth"] = summary["mean_rgb"] - summary["mean_depth"]
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    print(f"contrast report: {path}")
    for key, value in summary.items():
        if key != "summary":
            print(f"  {key}: {value:.4f}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="salgen",
                                     description="desk-scale generative saliency detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_common(p, need_data=True)
    p.add_argument("--init-checkpoint", default=None,
                   help="initialize weights from a checkpoint (resume)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="compute the metric report for a checkpoint")
    _add_common(p, need_data=True, need_checkpoint=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="write saliency PNGs for a dataset")
    _add_common(p, need_data=True, need_checkpoint=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("uncertainty", help="write mean and entropy PNGs")
    _add_common(p, need_data=True, need_checkpoint=True)
    p.set_defaults(fn=cmd_uncertainty)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("analyze-contrast", help="foreground/background chi-squared report")
    _add_common(p, need_data=True)
    p.set_defaults(fn=cmd_analyze_contrast)

    p = sub.add_parser("selftest", help="run gradient and oracle checks")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

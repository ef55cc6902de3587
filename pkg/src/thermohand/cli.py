"""``thermohand`` command line: synth, train, eval, predict, ablate, inspect.

Exit codes: 0 success, 1 runtime error, 2 usage error (bad flags, specs or
configs).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

logger = logging.getLogger("thermohand")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SEED_ENV = "THERMOHAND_SEED"


class UsageError(Exception):
    pass


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}")


def resolve_seed(flag: Optional[int], default: Optional[int] = None) -> Optional[int]:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")
    return default


def load_run_config(path: Optional[str], seed: Optional[int] = None, epochs: Optional[int] = None):
    from .config import RunConfig

    try:
        cfg = RunConfig.load(path) if path else RunConfig()
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}")
    seed = resolve_seed(seed)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if epochs is not None:
        changes["epochs"] = epochs
    if changes:
        try:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, **changes))
        except ValueError as exc:
            raise UsageError(str(exc))
    return cfg


def cmd_synth(args) -> int:
    from .domain import GestureVocabulary
    from .synth import GeneratorSpec, generate_dataset

    data = _read_json(args.spec, "spec")
    vocab_path = data.pop("vocabulary", None) if isinstance(data, dict) else None
    try:
        spec = GeneratorSpec.from_dict(data)
        seed = resolve_seed(args.seed)
        if seed is not None:
            spec = replace(spec, seed=seed)
        vocab = GestureVocabulary.load(vocab_path) if vocab_path else GestureVocabulary.default()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid spec: {exc}")
    manifest = generate_dataset(spec, args.out, vocab)
    print(json.dumps(manifest["counts"], indent=2))
    return EXIT_OK


def _split_train_val(samples):
    """Hold out the highest-numbered training user for validation when there are several."""
    users = sorted({s.meta["user"] for s in samples})
    if len(users) < 2:
        return samples, []
    held = users[-1]
    return [s for s in samples if s.meta["user"] != held], [s for s in samples if s.meta["user"] == held]


def cmd_train(args) -> int:
    from .dataset import load_dataset, read_manifest
    from .training import train

    cfg = load_run_config(args.config, args.seed, args.epochs)
    data_dir = args.data or cfg.paths.data
    out_dir = args.out or cfg.paths.out
    if not data_dir or not out_dir:
        raise UsageError("--data and --out are required (or set paths in the config)")
    read_manifest(data_dir)
    samples, vocab = load_dataset(data_dir, split="train")
    if not samples:
        raise RuntimeError(f"{data_dir} has no training samples")
    tr, val = _split_train_val(samples)
    out = Path(out_dir)
    created = not out.exists()
    try:
        _, report = train(tr, val, vocab, cfg.network, cfg.optimizer, cfg.loss, out, cfg.heatmap)
        cfg.save(out / "run_config.json")
    except BaseException:
        if created and out.exists():
            shutil.rmtree(out)
        raise
    last = report.history[-1]
    print(f"trained {len(report.history)} epochs; final loss {last.total:.6f}; "
          f"best epoch {report.best_epoch}; checkpoints in {out}")
    return EXIT_OK


def _checkpoint_configs(sidecar: dict):
    from .heatmap import HeatmapConfig

    hm = sidecar.get("heatmap")
    return HeatmapConfig(**hm) if hm else HeatmapConfig()


def cmd_eval(args) -> int:
    from .dataset import load_dataset
    from .evaluation import MatchConfig, compute_metrics
    from .heatmap import DecodeConfig
    from .inference import predict_annotations
    from .network import load_checkpoint

    if not args.checkpoint or not args.data:
        raise UsageError("--checkpoint and --data are required")
    model, vocab, sidecar = load_checkpoint(args.checkpoint)
    cfg = load_run_config(args.config) if args.config else None
    samples, _ = load_dataset(args.data, split=args.split)
    if not samples:
        raise RuntimeError(f"no samples in split {args.split!r}")
    hm = _checkpoint_configs(sidecar)
    dec = cfg.decode if cfg else DecodeConfig()
    match = cfg.match if cfg else MatchConfig()
    preds = predict_annotations(model, np.stack([s.image for s in samples]), vocab, hm, dec)
    report = compute_metrics(preds, [s.annotation for s in samples], match)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    report.write(out)
    for task, m in report.tasks.items():
        print(f"{task:<11} recall {m['recall']:6.2f}  precision {m['precision']:6.2f}  accuracy {m['accuracy']:6.2f}")
    return EXIT_OK


def _input_images(path: Path) -> List[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".tif", ".tiff"))
        if not files:
            raise UsageError(f"no PNG/TIFF images in {path}")
        return files
    if not path.is_file():
        raise UsageError(f"input not found: {path}")
    return [path]


def _load_input(path: Path) -> np.ndarray:
    from .dataset import read_mask_png

    img = read_mask_png(path)
    if img.shape != (100, 100):
        raise UsageError(f"{path}: expected a 100x100 hand image, got {img.shape}")
    return img


def cmd_predict(args) -> int:
    from .dataset import write_annotation
    from .heatmap import dump_pngs
    from .inference import annotations_from_outputs, predict_outputs
    from .network import load_checkpoint

    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    files = _input_images(Path(args.input))
    model, vocab, sidecar = load_checkpoint(args.checkpoint)
    cfg = load_run_config(args.config) if args.config else None
    hm = _checkpoint_configs(sidecar)
    images = np.stack([_load_input(p) for p in files])
    outputs = predict_outputs(model, images)
    kwargs = {"decode_cfg": cfg.decode} if cfg else {}
    preds = annotations_from_outputs(outputs, vocab, hm, **kwargs)
    out = Path(args.out) if args.out else Path(args.input if Path(args.input).is_dir() else Path(args.input).parent) / "predictions"
    out.mkdir(parents=True, exist_ok=True)
    for path, pred, stack in zip(files, preds, outputs["heatmaps"]):
        write_annotation(out / f"{path.stem}.json", pred)
        if args.dump_heatmaps:
            dump_pngs(stack, out / "heatmaps", path.stem)
    print(f"wrote {len(preds)} predictions to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .dataset import load_dataset
    from .evaluation import run_ablation

    cfg = load_run_config(args.config, args.seed, args.epochs)
    data_dir = args.data or cfg.paths.data
    out_dir = args.out or cfg.paths.out
    if not data_dir or not out_dir:
        raise UsageError("--data and --out are required (or set paths in the config)")
    train_samples, vocab = load_dataset(data_dir, split="train")
    test_samples, _ = load_dataset(data_dir, split="test")
    if not train_samples or not test_samples:
        raise RuntimeError("ablation needs both train and test samples")
    result = run_ablation(train_samples, test_samples, vocab, cfg.network, cfg.optimizer, cfg.loss,
                          out_dir, cfg.match, cfg.heatmap, cfg.decode,
                          baseline_threshold=cfg.decode.baseline_threshold or 0.5)
    print(Path(out_dir, "ablation.csv").read_text(), end="")
    print(f"fingertip accuracy gap (all - each): {result['fingertip_accuracy_gap']:+.2f} points")
    return EXIT_OK


def overlay(image: np.ndarray, annotation) -> np.ndarray:
    """RGB rendering of a mask with fingertips (red) and wrists (blue) marked."""
    rgb = np.repeat((np.asarray(image) * 160).astype(np.uint8)[..., None], 3, axis=2)
    h, w = image.shape

    def mark(p, color):
        x, y = int(round(p.x)), int(round(p.y))
        rgb[max(y - 1, 0):min(y + 2, h), max(x - 1, 0):min(x + 2, w)] = color

    for p in annotation.keypoints.fingertips:
        if p is not None:
            mark(p, (255, 0, 0))
    for p in annotation.keypoints.wrists:
        mark(p, (0, 0, 255))
    return rgb


def cmd_inspect(args) -> int:
    from PIL import Image

    from .heatmap import dump_pngs
    from .inference import annotations_from_outputs, predict_outputs
    from .network import load_checkpoint

    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"sample not found: {path}")
    image = _load_input(path)
    model, vocab, sidecar = load_checkpoint(args.checkpoint)
    outputs = predict_outputs(model, image[None])
    pred = annotations_from_outputs(outputs, vocab, _checkpoint_configs(sidecar))[0]
    out = Path(args.out) if args.out else path.parent / "inspect"
    dump_pngs(outputs["heatmaps"][0], out, path.stem)
    Image.fromarray(overlay(image, pred)).resize((400, 400), Image.NEAREST).save(out / f"{path.stem}_overlay.png")
    print(json.dumps(pred.to_json(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermohand", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (per-epoch losses)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic silhouette dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, help="overrides the spec seed")
    p.set_defaults(func=cmd_synth)

    for name, func, help_ in (("train", cmd_train, "train the multi-task network"),
                              ("ablate", cmd_ablate, "each-branch vs all-branch ablation")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="run config JSON (network, optimizer, loss, ...)")
        p.add_argument("--data", help="dataset directory with manifest.json")
        p.add_argument("--out", help="run directory")
        p.add_argument("--seed", type=int, help="default: $THERMOHAND_SEED, then the config")
        p.add_argument("--epochs", type=int)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="default: <checkpoint dir>/eval")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="annotate a 100x100 image or a directory of them")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--dump-heatmaps", action="store_true", help="also write 6 channel PNGs per image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="heatmap channels and keypoint overlay for one sample")
    p.add_argument("input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"thermohand {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001  (reported, mapped to the runtime exit code)
        if args.verbose:
            logger.exception("command failed")
        print(f"thermohand {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Joint-loss optimization, checkpointing and the single-branch ablation variants."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .domain import GestureVocabulary, Sample
from .heatmap import HeatmapConfig, encode
from .network import ModelOutputs, MultiTaskHandNet, NetworkConfig, build, save_checkpoint

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
BRANCHES = ("gesture", "handedness", "keypoints")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.77
    beta: float = 0.15
    gamma: float = 0.08

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha + self.beta + self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")

    @classmethod
    def single_branch(cls, branch: str, base: "LossWeights" = None) -> "LossWeights":
        base = base or cls()
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        return cls(alpha=base.alpha if branch == "keypoints" else 0.0,
                   beta=base.beta if branch == "gesture" else 0.0,
                   gamma=base.gamma if branch == "handedness" else 0.0)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.001
    weight_decay: float = 1e-3
    momentum: float = 0.95
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    # re-estimate batch-norm statistics over the training set after each epoch
    recalibrate_batchnorm: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def combine(components: Dict[str, torch.Tensor], w: LossWeights) -> torch.Tensor:
    # zero-weighted terms are left out of the graph so their heads get no
    # gradient at all (and therefore no weight decay either)
    terms = [(w.alpha, components["keypoints"]), (w.beta, components["gesture"]),
             (w.gamma, components["handedness"])]
    live = [c * t for c, t in terms if c != 0]
    if not live:
        return torch.zeros_like(components["keypoints"])
    total = live[0]
    for t in live[1:]:
        total = total + t
    return total


def joint_loss(pred: ModelOutputs, target: Dict[str, torch.Tensor],
               w: LossWeights = LossWeights()) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Weighted sum of heatmap MSE, gesture cross-entropy and handedness BCE.

    ``target`` holds ``gesture`` (class indices 0-9), ``handedness`` (0/1
    floats) and ``heatmaps`` (N, 6, 50, 50). Probabilities are clamped to
    ``[1e-7, 1 - 1e-7]`` inside both cross-entropies; this is done in log
    space so gradients stay finite.
    """
    heatmaps = torch.sigmoid(pred.heatmap_logits)
    if heatmaps.shape != target["heatmaps"].shape:
        raise ValueError(f"heatmap shape {tuple(heatmaps.shape)} != target {tuple(target['heatmaps'].shape)}")
    if pred.gesture_logits.shape[0] != target["gesture"].shape[0]:
        raise ValueError("gesture batch size mismatch")
    hand_logit = pred.handedness_logit.reshape(-1)
    if hand_logit.shape != target["handedness"].reshape(-1).shape:
        raise ValueError("handedness batch size mismatch")
    for name, t in (("gesture", pred.gesture_logits), ("handedness", hand_logit)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite {name} predictions")

    lo, hi = math.log(PROB_EPS), math.log1p(-PROB_EPS)
    log_p = torch.log_softmax(pred.gesture_logits, dim=1)
    log_p_true = log_p.gather(1, target["gesture"].long().reshape(-1, 1)).squeeze(1)
    l_gesture = -log_p_true.clamp(lo, hi).mean()

    y = target["handedness"].reshape(-1).to(hand_logit.dtype)
    log_pos = F.logsigmoid(hand_logit).clamp(lo, hi)
    log_neg = F.logsigmoid(-hand_logit).clamp(lo, hi)
    l_hand = -(y * log_pos + (1 - y) * log_neg).mean()

    l_kp = F.mse_loss(heatmaps, target["heatmaps"].to(heatmaps.dtype))
    components = {"keypoints": l_kp, "gesture": l_gesture, "handedness": l_hand}
    return combine(components, w), components


def encode_targets(samples: Sequence[Sample], vocab: GestureVocabulary,
                   cfg: HeatmapConfig = HeatmapConfig(), dtype=torch.float32) -> Dict[str, torch.Tensor]:
    return {
        "image": torch.as_tensor(np.stack([s.image for s in samples])[:, None], dtype=dtype),
        "gesture": torch.as_tensor([s.gesture - 1 for s in samples], dtype=torch.long),
        "handedness": torch.as_tensor([int(s.handedness) for s in samples], dtype=dtype),
        "heatmaps": torch.as_tensor(
            np.stack([encode(s.keypoints, vocab.mask(s.gesture), cfg) for s in samples]), dtype=dtype),
    }


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.use_deterministic_algorithms(True, warn_only=True)
    return torch.Generator().manual_seed(seed)


def make_optimizer(model: torch.nn.Module, cfg: OptimizerConfig) -> torch.optim.SGD:
    # coupled weight decay: L2 term added to the gradient
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


@dataclass
class EpochRecord:
    epoch: int
    keypoints: float
    gesture: float
    handedness: float
    total: float
    val_keypoints: float = float("nan")
    val_gesture: float = float("nan")
    val_handedness: float = float("nan")
    val_total: float = float("nan")
    val_gesture_acc: float = float("nan")
    val_handedness_acc: float = float("nan")
    seconds: float = 0.0


@dataclass
class TrainReport:
    history: List[EpochRecord] = field(default_factory=list)
    best_checkpoint: Optional[Path] = None
    final_checkpoint: Optional[Path] = None
    best_epoch: Optional[int] = None


HISTORY_FIELDS = [f.name for f in EpochRecord.__dataclass_fields__.values()]


@torch.no_grad()
def evaluate_loss(model: MultiTaskHandNet, data: Dict[str, torch.Tensor], w: LossWeights,
                  batch_size: int = 64) -> Dict[str, float]:
    model.eval()
    n = data["image"].shape[0]
    sums = {"keypoints": 0.0, "gesture": 0.0, "handedness": 0.0}
    correct_g = correct_h = 0
    for start in range(0, n, batch_size):
        batch = {k: v[start:start + batch_size] for k, v in data.items()}
        out = model(batch["image"])
        _, comps = joint_loss(out, batch, w)
        m = batch["image"].shape[0]
        for k in sums:
            sums[k] += float(comps[k]) * m
        correct_g += int((out.gesture_logits.argmax(1) == batch["gesture"]).sum())
        correct_h += int(((out.handedness_logit.reshape(-1) >= 0).to(batch["handedness"].dtype)
                          == batch["handedness"]).sum())
    means = {k: v / n for k, v in sums.items()}
    means["total"] = float(combine({k: torch.tensor(v, dtype=torch.float64) for k, v in means.items()}, w))
    means["gesture_acc"] = 100.0 * correct_g / n
    means["handedness_acc"] = 100.0 * correct_h / n
    return means


@torch.no_grad()
def recalibrate_batchnorm(model: torch.nn.Module, images: torch.Tensor, batch_size: int = 64) -> None:
    """Replace the running batch-norm statistics with exact averages over ``images``.

    The exponential running averages lag behind weights that are still moving
    quickly, which makes evaluation-mode outputs noisy early in training.
    """
    norms = [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not norms:
        return
    saved = [m.momentum for m in norms]
    for m in norms:
        m.reset_running_stats()
        m.momentum = None  # cumulative average
    was_training = model.training
    model.train()
    for i, j in batch_bounds(images.shape[0], batch_size):
        model(images[i:j])
    for m, mom in zip(norms, saved):
        m.momentum = mom
    model.train(was_training)


def batch_bounds(n: int, batch_size: int) -> List[Tuple[int, int]]:
    """Minibatch index ranges; a trailing single-sample batch is folded into the previous one
    because batch norm cannot normalize a batch of one."""
    bounds = [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2:] = [(bounds[-2][0], n)]
    return bounds


def train(train_samples: Sequence[Sample], val_samples: Sequence[Sample], vocab: GestureVocabulary,
          net_cfg: NetworkConfig = NetworkConfig(), opt_cfg: OptimizerConfig = OptimizerConfig(),
          weights: LossWeights = LossWeights(), out_dir=None,
          heatmap_cfg: HeatmapConfig = HeatmapConfig(),
          model: Optional[MultiTaskHandNet] = None) -> Tuple[MultiTaskHandNet, TrainReport]:
    """Minibatch SGD on the joint loss.

    With ``out_dir`` set, writes ``config.json``, ``history.csv``,
    ``best.ckpt`` (lowest validation total loss) and ``final.ckpt``.
    """
    if len(train_samples) == 0:
        raise TrainingError("training set is empty")
    if len(train_samples) == 1:
        raise TrainingError("need at least two training samples for batch normalization")
    gen = seed_everything(opt_cfg.seed)
    model = model if model is not None else build(net_cfg)
    optimizer = make_optimizer(model, opt_cfg)
    train_data = encode_targets(train_samples, vocab, heatmap_cfg)
    val_data = encode_targets(val_samples, vocab, heatmap_cfg) if len(val_samples) else None

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps({
            "network": net_cfg.to_dict(), "optimizer": asdict(opt_cfg), "loss": asdict(weights),
            "heatmap": asdict(heatmap_cfg), "vocabulary": vocab.to_dict(),
            "n_train": len(train_samples), "n_val": len(val_samples),
        }, indent=2, sort_keys=True) + "\n")
    extra = {"loss_weights": asdict(weights), "heatmap": asdict(heatmap_cfg)}

    report = TrainReport()
    best = math.inf
    n = len(train_samples)
    for epoch in range(1, opt_cfg.epochs + 1):
        start = time.perf_counter()
        model.train()
        perm = torch.randperm(n, generator=gen)
        sums = {"keypoints": 0.0, "gesture": 0.0, "handedness": 0.0}
        for i, j in batch_bounds(n, opt_cfg.batch_size):
            idx = perm[i:j]
            batch = {k: v[idx] for k, v in train_data.items()}
            out = model(batch["image"])
            total, comps = joint_loss(out, batch, weights)
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // opt_cfg.batch_size}: "
                                    + ", ".join(f"{k}={float(v)}" for k, v in comps.items()))
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            m = len(idx)
            for k, v in comps.items():
                sums[k] += v.item() * m
        means = {k: v / n for k, v in sums.items()}
        # logged total is recomposed in double so it matches the components exactly
        means["total"] = float(combine({k: torch.tensor(v, dtype=torch.float64) for k, v in means.items()},
                                       weights))
        if opt_cfg.recalibrate_batchnorm:
            recalibrate_batchnorm(model, train_data["image"])
        rec = EpochRecord(epoch, means["keypoints"], means["gesture"], means["handedness"], means["total"])
        if val_data is not None:
            v = evaluate_loss(model, val_data, weights)
            rec.val_keypoints, rec.val_gesture, rec.val_handedness = v["keypoints"], v["gesture"], v["handedness"]
            rec.val_total, rec.val_gesture_acc, rec.val_handedness_acc = v["total"], v["gesture_acc"], v["handedness_acc"]
        rec.seconds = time.perf_counter() - start
        report.history.append(rec)
        logger.info("epoch %d: loss %.5f (kp %.5f, g %.4f, h %.4f) val %.5f acc g %.1f h %.1f [%.1fs]",
                    epoch, rec.total, rec.keypoints, rec.gesture, rec.handedness, rec.val_total,
                    rec.val_gesture_acc, rec.val_handedness_acc, rec.seconds)
        score = rec.val_total if val_data is not None else rec.total
        if out_dir is not None:
            if score < best:
                report.best_checkpoint = save_checkpoint(model, out_dir / "best.ckpt", vocab,
                                                         {**extra, "epoch": epoch})
            write_history(out_dir / "history.csv", report.history)
        if score < best:
            best, report.best_epoch = score, epoch
    if out_dir is not None:
        report.final_checkpoint = save_checkpoint(model, out_dir / "final.ckpt", vocab,
                                                  {**extra, "epoch": opt_cfg.epochs})
    model.eval()
    return model, report


def write_history(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for rec in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(rec).items()})


def single_branch_variant(branch: str, train_samples, val_samples, vocab, net_cfg=NetworkConfig(),
                          opt_cfg=OptimizerConfig(), weights: LossWeights = LossWeights(), out_dir=None,
                          heatmap_cfg: HeatmapConfig = HeatmapConfig()):
    """Train with the two other loss terms zero-weighted; all heads are still built."""
    return train(train_samples, val_samples, vocab, net_cfg, opt_cfg,
                 LossWeights.single_branch(branch, weights), out_dir, heatmap_cfg)


def loss_weight_grid(step: float = 0.1) -> List[LossWeights]:
    """Points of the probability simplex on a regular grid, excluding zero weights."""
    k = int(round(1 / step))
    out = []
    for i, j in itertools.product(range(1, k), repeat=2):
        if i + j < k:
            out.append(LossWeights(round(i * step, 10), round(j * step, 10), round((k - i - j) * step, 10)))
    return out


def grid_search(train_samples, val_samples, vocab, net_cfg=NetworkConfig(), opt_cfg=OptimizerConfig(),
                grid: Optional[Sequence[LossWeights]] = None,
                score_fn=None) -> List[Tuple[LossWeights, float]]:
    """Train once per weight triple and score on the validation split (higher is better).

    ``score_fn(model)`` defaults to the negative validation MSE plus mean
    classification accuracy on the validation set.
    """

    grid = list(grid) if grid is not None else loss_weight_grid()
    val_data = encode_targets(val_samples, vocab)
    results = []
    for w in grid:
        model, _ = train(train_samples, val_samples, vocab, net_cfg, opt_cfg, w)
        if score_fn is not None:
            score = float(score_fn(model))
        else:
            v = evaluate_loss(model, val_data, LossWeights())
            score = (v["gesture_acc"] + v["handedness_acc"]) / 200.0 - v["keypoints"]
        results.append((w, score))
    return sorted(results, key=lambda r: -r[1])

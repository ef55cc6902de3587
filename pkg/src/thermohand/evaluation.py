"""Per-task recall/precision/accuracy and the each-branch vs all-branch ablation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from .domain import FINGERS, N_FINGERS, Annotation, KeypointSet

TASKS = ("gesture", "fingertips", "wrists", "handedness")
METRICS = ("recall", "precision", "accuracy")


@dataclass(frozen=True)
class MatchConfig:
    radius: float = 5.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclass
class PointCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __iadd__(self, other: "PointCounts") -> "PointCounts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn
        return self

    def rates(self) -> Dict[str, float]:
        def pct(num, den):
            return 100.0 * num / den if den else 100.0

        return {
            "recall": pct(self.tp, self.tp + self.fn),
            "precision": pct(self.tp, self.tp + self.fp),
            "accuracy": pct(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn),
        }


def match_keypoints(pred: KeypointSet, truth: KeypointSet,
                    cfg: MatchConfig = MatchConfig()) -> Dict[str, PointCounts]:
    """Slot-wise fingertip counts and unordered wrist-pair counts.

    A visible fingertip farther than the radius from its truth counts once as
    a false positive and once as a false negative.
    """
    tips = PointCounts()
    for p, t in zip(pred.fingertips, truth.fingertips):
        if p is None and t is None:
            tips.tn += 1
        elif p is None:
            tips.fn += 1
        elif t is None:
            tips.fp += 1
        elif p.distance(t) <= cfg.radius:
            tips.tp += 1
        else:
            tips.fp += 1
            tips.fn += 1
    (p0, p1), (t0, t1) = pred.wrists, truth.wrists
    straight = (p0.distance(t0), p1.distance(t1))
    swapped = (p0.distance(t1), p1.distance(t0))
    dists = straight if sum(straight) <= sum(swapped) else swapped
    wrists = PointCounts()
    for d in dists:
        if d <= cfg.radius:
            wrists.tp += 1
        else:
            wrists.fp += 1
            wrists.fn += 1
    return {"fingertips": tips, "wrists": wrists}


@dataclass
class MetricsReport:
    tasks: Dict[str, Dict[str, float]]
    per_gesture_accuracy: List[float]
    confusion: List[List[int]]
    counts: Dict[str, Dict[str, int]]
    n_samples: int

    def to_json(self) -> dict:
        return asdict(self)

    def write(self, out_dir, prefix: str = "metrics") -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{prefix}.json", out_dir / f"{prefix}.csv", out_dir / "confusion.csv"]
        paths[0].write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task", *METRICS])
            for task in TASKS:
                w.writerow([task, *(f"{self.tasks[task][m]:.4f}" for m in METRICS)])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["truth\\pred", *(f"G{i}" for i in range(1, 11))])
            for i, row in enumerate(self.confusion, start=1):
                w.writerow([f"G{i}", *row])
        return paths


def _classification(truth: Sequence[int], pred: Sequence[int]) -> Dict[str, float]:
    p, r, _, _ = precision_recall_fscore_support(truth, pred, average="macro", zero_division=0)
    return {"recall": 100.0 * r, "precision": 100.0 * p, "accuracy": 100.0 * accuracy_score(truth, pred)}


def compute_metrics(predictions: Sequence[Annotation], truths: Sequence[Annotation],
                    cfg: MatchConfig = MatchConfig()) -> MetricsReport:
    if len(predictions) == 0:
        raise ValueError("no predictions to evaluate")
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions for {len(truths)} samples")
    g_true = [int(t.gesture) for t in truths]
    g_pred = [int(p.gesture) for p in predictions]
    h_true = [int(t.handedness) for t in truths]
    h_pred = [int(p.handedness) for p in predictions]
    tips, wrists = PointCounts(), PointCounts()
    for p, t in zip(predictions, truths):
        c = match_keypoints(p.keypoints, t.keypoints, cfg)
        tips += c["fingertips"]
        wrists += c["wrists"]
    cm = confusion_matrix(g_true, g_pred, labels=list(range(1, 11)))
    per_gesture = [100.0 * cm[i, i] / cm[i].sum() if cm[i].sum() else float("nan") for i in range(10)]
    return MetricsReport(
        tasks={
            "gesture": _classification(g_true, g_pred),
            "fingertips": tips.rates(),
            "wrists": wrists.rates(),
            "handedness": _classification(h_true, h_pred),
        },
        per_gesture_accuracy=per_gesture,
        confusion=cm.tolist(),
        counts={"fingertips": asdict(tips), "wrists": asdict(wrists)},
        n_samples=len(truths),
    )


ABLATION_ROWS = ("each branch", "all branch")


def ablation_table(each: Dict[str, Dict[str, float]], full: Dict[str, Dict[str, float]]) -> List[dict]:
    rows = []
    for name, tasks in zip(ABLATION_ROWS, (each, full)):
        row = {"row": name}
        for task in TASKS:
            for m in METRICS:
                row[f"{task}_{m}"] = tasks[task][m]
        rows.append(row)
    return rows


def write_ablation_csv(path, rows: List[dict]) -> None:
    fields = ["row", *(f"{t}_{m}" for t in TASKS for m in METRICS)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})


def run_ablation(train_samples, test_samples, vocab, net_cfg=None, opt_cfg=None, weights=None,
                 out_dir=None, match_cfg: MatchConfig = MatchConfig(), heatmap_cfg=None,
                 decode_cfg=None, baseline_threshold: float = 0.5) -> dict:
    """Train one model per branch plus the joint model under the same seed and budget.

    The keypoints-only model has no trained gesture or handedness head to
    lean on, so its fingertips are read with the fixed-threshold decoder and
    no misorder correction.
    """
    from .heatmap import DecodeConfig, HeatmapConfig
    from .inference import predict_annotations
    from .network import NetworkConfig
    from .training import LossWeights, OptimizerConfig, single_branch_variant, train

    net_cfg = net_cfg or NetworkConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    weights = weights or LossWeights()
    heatmap_cfg = heatmap_cfg or HeatmapConfig()
    decode_cfg = decode_cfg or DecodeConfig()
    out_dir = Path(out_dir) if out_dir is not None else None
    truths = [s.annotation for s in test_samples]
    images = np.stack([s.image for s in test_samples])

    def run_dir(name):
        return None if out_dir is None else out_dir / name

    reports = {}
    for branch in ("gesture", "handedness", "keypoints"):
        model, _ = single_branch_variant(branch, train_samples, test_samples, vocab, net_cfg, opt_cfg,
                                         weights, run_dir(f"{branch}_only"), heatmap_cfg)
        threshold = baseline_threshold if branch == "keypoints" else None
        preds = predict_annotations(model, images, vocab, heatmap_cfg, decode_cfg,
                                    fingertip_threshold=threshold)
        reports[branch] = compute_metrics(preds, truths, match_cfg)
    model, _ = train(train_samples, test_samples, vocab, net_cfg, opt_cfg, weights, run_dir("all"),
                     heatmap_cfg)
    full = compute_metrics(predict_annotations(model, images, vocab, heatmap_cfg, decode_cfg), truths,
                           match_cfg)
    each = {
        "gesture": reports["gesture"].tasks["gesture"],
        "fingertips": reports["keypoints"].tasks["fingertips"],
        "wrists": reports["keypoints"].tasks["wrists"],
        "handedness": reports["handedness"].tasks["handedness"],
    }
    rows = ablation_table(each, full.tasks)
    gap = full.tasks["fingertips"]["accuracy"] - each["fingertips"]["accuracy"]
    result = {"rows": rows, "fingertip_accuracy_gap": gap,
              "reports": {**{f"{k}_only": v.to_json() for k, v in reports.items()}, "all": full.to_json()}}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(out_dir / "ablation.csv", rows)
        (out_dir / "ablation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result

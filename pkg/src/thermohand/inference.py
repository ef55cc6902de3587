"""Batch inference from images to refined annotations."""
from __future__ import annotations

from typing import List, Optional

import numpy as np
import torch

from .domain import N_FINGERS, Annotation, GestureVocabulary, KeypointSet, Point2
from .heatmap import (DecodeConfig, HeatmapConfig, decode_fingertips_threshold, decode_wrists,
                      to_input_coords)
from .network import MultiTaskHandNet
from .refine import predict_labels, refine


@torch.no_grad()
def predict_outputs(model: MultiTaskHandNet, images, batch_size: int = 64) -> dict:
    """Run the network in inference mode; returns float64 numpy probabilities."""
    model.eval()
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[:, None]
    dtype = next(model.parameters()).dtype
    outs = {"gesture_probs": [], "handedness_prob": [], "heatmaps": []}
    for start in range(0, len(images), batch_size):
        out = model(torch.as_tensor(images[start:start + batch_size], dtype=dtype))
        outs["gesture_probs"].append(out.gesture_probs.double().numpy())
        outs["handedness_prob"].append(out.handedness_prob.reshape(-1).double().numpy())
        outs["heatmaps"].append(out.heatmaps.double().numpy())
    return {k: np.concatenate(v) for k, v in outs.items()}


def annotations_from_outputs(outputs: dict, vocab: GestureVocabulary,
                             heatmap_cfg: HeatmapConfig = HeatmapConfig(),
                             decode_cfg: DecodeConfig = DecodeConfig(),
                             fingertip_threshold: Optional[float] = None) -> List[Annotation]:
    """Decode raw network outputs.

    With ``fingertip_threshold`` set, fingertips come from the fixed-threshold
    baseline decoder and are not misorder-corrected.
    """
    preds = []
    for probs, hand_p, stack in zip(outputs["gesture_probs"], outputs["handedness_prob"],
                                    outputs["heatmaps"]):
        if fingertip_threshold is None:
            gesture, hand, kp = refine(stack, probs, float(hand_p), vocab, heatmap_cfg, decode_cfg)
        else:
            gesture, hand = predict_labels(probs, float(hand_p))
            tips: List[Optional[Point2]] = [None] * N_FINGERS
            for f, pt, _ in decode_fingertips_threshold(stack, fingertip_threshold):
                tips[f] = to_input_coords(pt, heatmap_cfg)
            w0, w1 = decode_wrists(stack, decode_cfg)
            kp = KeypointSet(tuple(tips), (to_input_coords(w0, heatmap_cfg), to_input_coords(w1, heatmap_cfg)))
        preds.append(Annotation(gesture, hand, kp))
    return preds


def predict_annotations(model: MultiTaskHandNet, images, vocab: GestureVocabulary,
                        heatmap_cfg: HeatmapConfig = HeatmapConfig(),
                        decode_cfg: DecodeConfig = DecodeConfig(),
                        fingertip_threshold: Optional[float] = None) -> List[Annotation]:
    return annotations_from_outputs(predict_outputs(model, images), vocab, heatmap_cfg, decode_cfg,
                                    fingertip_threshold)

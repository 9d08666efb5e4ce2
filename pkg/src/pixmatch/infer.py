"""Mask propagation: split the previous mask into per-class indicator maps,
warp every indicator with the predicted offsets, and take the per-pixel argmax
over classes. Sequences run causally from a first-frame ground-truth mask with
no parameter updates.

Masks travel at full frame resolution: the quarter-resolution offset field is
nearest-upsampled and rescaled to full-resolution pixel units before the warp.
(Propagating the integer masks at quarter scale instead would freeze them: the
per-frame argmax re-quantization discards any step below half a cell, and at
quarter scale ordinary motions of a few pixels per frame live entirely below
that threshold.)
"""

from __future__ import annotations

import time

import numpy as np

from .deform import warp
from .model import ModelParams, embed_pair, frames_to_tensor, match_offsets
from .tensor import Tensor


def split_classes(mask: np.ndarray, classes) -> np.ndarray:
    """Stack of exact indicator maps, one per class, in `classes` order.

    At every pixel exactly one indicator is 1, so they sum to one everywhere.
    """
    mask = np.asarray(mask)
    classes = list(classes)
    present = np.unique(mask)
    stray = [int(v) for v in present if v not in classes]
    if stray:
        raise ValueError(f"mask contains values {stray} outside the class set {sorted(classes)}")
    return np.stack([(mask == c).astype(np.float32) for c in classes])


def mask_to_quarter(mask: np.ndarray) -> np.ndarray:
    """Full-resolution class map -> H/4 map by sampling each 4x4 block center."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if h % 4 or w % 4:
        raise ValueError(f"mask size {h}x{w} not divisible by 4")
    return np.ascontiguousarray(mask[2::4, 2::4])


def mask_from_quarter(mask_q: np.ndarray) -> np.ndarray:
    """Nearest-neighbor x4 upsampling back to full resolution."""
    return np.repeat(np.repeat(mask_q, 4, axis=0), 4, axis=1)


def offsets_to_full(offsets: np.ndarray) -> np.ndarray:
    """Quarter-grid offset field -> full-resolution field in full pixels.

    Nearest upsampling of the field itself plus the x4 unit change (one
    quarter cell is four pixels).
    """
    offsets = np.asarray(offsets, dtype=np.float32)
    up = np.repeat(np.repeat(offsets, 4, axis=-2), 4, axis=-1)
    return 4.0 * up


def predict_offsets(params: ModelParams, prev_frame, frame) -> np.ndarray:
    """Quarter-grid offset field between two uint8 frames, eval-mode statistics."""
    ref = frames_to_tensor([prev_frame])
    tar = frames_to_tensor([frame])
    return match_offsets(params, embed_pair(params, ref, tar, training=False), training=False).data


def propagate_mask(params: ModelParams, prev_frame, frame, prev_mask: np.ndarray,
                   classes, offsets: np.ndarray | None = None) -> np.ndarray:
    """One propagation step: S_t = argmax_c warp(indicator_c, offsets).

    ``prev_mask`` is the previous full-resolution mask. ``offsets`` substitutes
    the matching network's quarter-grid prediction when given (oracle studies).
    Ties go to the smallest class index, so fully out-of-view pixels fall back
    to the first class (background).
    """
    classes = sorted(int(c) for c in classes)
    h, w = prev_frame.shape[:2]
    hq, wq = h // 4, w // 4
    if prev_mask.shape != (h, w):
        raise ValueError(f"propagate_mask: mask at {prev_mask.shape}, expected {(h, w)}")
    if offsets is None:
        offsets = predict_offsets(params, prev_frame, frame)
    offsets = np.asarray(offsets, dtype=np.float32).reshape(1, 2, hq, wq)

    indicators = split_classes(prev_mask, classes)[None]  # (1, C, H, W)
    full = offsets_to_full(offsets)
    scores = warp(Tensor(indicators), Tensor(full)).data[0]
    winner = scores.argmax(axis=0)  # argmax takes the first maximum: smallest class wins ties
    return np.asarray(classes, dtype=np.uint8)[winner]


def run_sequence(params: ModelParams, frames, first_mask: np.ndarray,
                 offsets_provider=None, refine=None, timings: list | None = None):
    """Propagate a first-frame mask through a whole sequence.

    Returns one full-resolution mask per frame; the first is the given mask
    passed through. Strictly causal (each step reads frames t-1 and t only)
    and performs no parameter updates. ``offsets_provider(t)`` may inject
    quarter-grid offsets per step; ``refine`` is an optional post-hook on the
    propagated mask (the default pipeline applies none).
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError("run_sequence: need at least 2 frames")
    first_mask = np.asarray(first_mask)
    if first_mask.shape != frames[0].shape[:2]:
        raise ValueError(f"run_sequence: first mask {first_mask.shape} does not match "
                         f"frame size {frames[0].shape[:2]}")
    classes = sorted(set(np.unique(first_mask).tolist()) | {0})

    mask = first_mask.copy()
    outputs = [first_mask.copy()]
    for t in range(1, len(frames)):
        injected = offsets_provider(t) if offsets_provider is not None else None
        t0 = time.perf_counter()
        mask = propagate_mask(params, frames[t - 1], frames[t], mask, classes,
                              offsets=injected)
        if refine is not None:
            mask = refine(mask, frames[t])
        if timings is not None:
            timings.append(time.perf_counter() - t0)
        outputs.append(mask)
    return outputs

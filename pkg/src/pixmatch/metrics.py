"""Evaluation: region similarity J (intersection over union), contour
accuracy F (boundary F-measure under a pixel tolerance), report aggregation,
and the two embedding-analysis tools (receptive-field cosine similarity and
PCA projection of feature maps).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .deform import Tensor, bilinear_read


def jaccard(pred: np.ndarray, gt: np.ndarray, cls: int) -> float:
    """|pred_c AND gt_c| / |pred_c OR gt_c|; 1.0 when both sets are empty."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"jaccard: shape mismatch {pred.shape} vs {gt.shape}")
    p = pred == cls
    g = gt == cls
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def default_boundary_tol(shape) -> int:
    """DAVIS-style tolerance: ceil(0.008 * image diagonal)."""
    h, w = shape
    return int(math.ceil(0.008 * math.hypot(h, w)))


def _boundary(binary: np.ndarray) -> np.ndarray:
    """4-connected boundary: mask pixels with a background 4-neighbor, the
    canvas border counting as background."""
    padded = np.pad(binary, 1, constant_values=False)
    interior = (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return binary & ~interior


def _dilate_disk(binary: np.ndarray, radius: int) -> np.ndarray:
    """Exact Euclidean-disk dilation by unioning integer shifts."""
    if radius <= 0:
        return binary
    h, w = binary.shape
    out = np.zeros_like(binary)
    r2 = radius * radius
    for dy in range(-min(radius, h - 1), min(radius, h - 1) + 1):
        for dx in range(-min(radius, w - 1), min(radius, w - 1) + 1):
            if dy * dy + dx * dx > r2:
                continue
            ys = slice(max(0, dy), min(h, h + dy))
            yd = slice(max(0, -dy), min(h, h - dy))
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            out[yd, xd] |= binary[ys, xs]
    return out


def boundary_f(pred: np.ndarray, gt: np.ndarray, cls: int, tol: int | None = None) -> float:
    """Boundary F-measure: harmonic mean of boundary precision and recall,
    a boundary pixel counting as matched when some counterpart boundary pixel
    lies within Euclidean distance ``tol``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"boundary_f: shape mismatch {pred.shape} vs {gt.shape}")
    if tol is None:
        tol = default_boundary_tol(pred.shape)
    if tol < 0:
        raise ValueError("boundary_f: tol must be >= 0")
    pb = _boundary(pred == cls)
    gb = _boundary(gt == cls)
    np_b, ng_b = int(pb.sum()), int(gb.sum())
    if np_b == 0 and ng_b == 0:
        return 1.0
    if np_b == 0 or ng_b == 0:
        return 0.0
    precision = float((pb & _dilate_disk(gb, tol)).sum() / np_b)
    recall = float((gb & _dilate_disk(pb, tol)).sum() / ng_b)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class ObjectScore:
    sequence: str
    cls: int
    j: float
    f: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    sequence_means: dict = field(default_factory=dict)  # name -> (J, F)
    attribute_means: dict | None = None  # attr -> (J, F)

    @property
    def j_mean(self) -> float:
        return float(np.mean([jf[0] for jf in self.sequence_means.values()])) if self.sequence_means else 0.0

    @property
    def f_mean(self) -> float:
        return float(np.mean([jf[1] for jf in self.sequence_means.values()])) if self.sequence_means else 0.0


def evaluate_sequence(pred_masks, gt_masks, classes=None, tol: int | None = None,
                      name: str = "seq") -> list:
    """Per-object mean J and F over frames 1..T-1 (the given first frame is
    excluded from scoring). Object classes default to the nonzero classes of
    the first ground-truth mask."""
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"evaluate: {len(pred_masks)} predictions vs {len(gt_masks)} ground-truth masks")
    if len(pred_masks) < 2:
        raise ValueError("evaluate: need at least 2 frames")
    if classes is None:
        classes = [int(c) for c in np.unique(gt_masks[0]) if c != 0]
    rows = []
    for c in classes:
        js = [jaccard(p, g, c) for p, g in zip(pred_masks[1:], gt_masks[1:])]
        fs = [boundary_f(p, g, c, tol) for p, g in zip(pred_masks[1:], gt_masks[1:])]
        rows.append(ObjectScore(sequence=name, cls=int(c), j=float(np.mean(js)), f=float(np.mean(fs))))
    return rows


def build_report(rows, attributes: dict | None = None) -> EvalReport:
    """Aggregate object rows: per-sequence mean over objects, global mean over
    sequences, optional group-by over a sequence->attributes table."""
    report = EvalReport(rows=list(rows))
    by_seq = {}
    for r in report.rows:
        by_seq.setdefault(r.sequence, []).append(r)
    for name, rs in by_seq.items():
        report.sequence_means[name] = (float(np.mean([r.j for r in rs])),
                                       float(np.mean([r.f for r in rs])))
    if attributes is not None:
        attr_map = {}
        for name, (j, f) in report.sequence_means.items():
            for attr in attributes.get(name, []):
                attr_map.setdefault(attr, []).append((j, f))
        report.attribute_means = {
            a: (float(np.mean([j for j, _ in v])), float(np.mean([f for _, f in v])))
            for a, v in sorted(attr_map.items())
        }
    return report


def rf_cosine_similarity(features, target, samples) -> float:
    """Mean cosine similarity between the feature vector at ``target`` (an
    integer pixel) and bilinearly-read vectors at the fractional ``samples``.

    Zero-norm vectors contribute 0 and are flagged with a warning.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError("rf_cosine_similarity: features must be (C, H, W)")
    samples = list(samples)
    if not samples:
        raise ValueError("rf_cosine_similarity: need at least one sample location")
    ty, tx = int(target[0]), int(target[1])
    v0 = f[:, ty, tx].astype(np.float64)
    n0 = np.linalg.norm(v0)
    vs = bilinear_read(f, samples)  # (S, C)
    norms = np.linalg.norm(vs, axis=1)
    bad = int((norms == 0).sum()) + (1 if n0 == 0 else 0)
    if bad:
        warnings.warn(f"rf_cosine_similarity: {bad} zero-norm feature vector(s) contribute 0")
    if n0 == 0:
        return 0.0
    safe = np.where(norms == 0, 1.0, norms)
    cos = (vs @ v0) / (safe * n0)
    cos = np.where(norms == 0, 0.0, cos)
    return float(cos.mean())


def pca_project(features, k: int = 3, rescale: bool = False):
    """Project per-pixel feature vectors onto the top-k principal directions.

    features: (C, H, W). Centers the H*W vectors, eigendecomposes the CxC
    covariance, fixes each eigenvector's sign so its largest-magnitude entry
    is positive, and returns (projection (k,H,W), eigenvalues descending).
    With ``rescale`` the projection is mapped to [0,1] per channel for image
    export.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError("pca_project: features must be (C, H, W)")
    c, h, w = f.shape
    if k > c:
        raise ValueError(f"pca_project: k={k} exceeds {c} channels")
    if h * w < k:
        raise ValueError("pca_project: fewer pixels than components")
    x = f.reshape(c, h * w).astype(np.float64)
    xc = x - x.mean(axis=1, keepdims=True)
    cov = (xc @ xc.T) / max(1, h * w - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = evals[order]
    evecs = evecs[:, order]
    for i in range(k):
        j = int(np.argmax(np.abs(evecs[:, i])))
        if evecs[j, i] < 0:
            evecs[:, i] = -evecs[:, i]
    proj = (evecs.T @ xc).reshape(k, h, w)
    if rescale:
        lo = proj.min(axis=(1, 2), keepdims=True)
        hi = proj.max(axis=(1, 2), keepdims=True)
        rng = hi - lo
        proj = np.where(rng > 0, (proj - lo) / np.where(rng > 0, rng, 1.0), 0.5)
    return proj, evals

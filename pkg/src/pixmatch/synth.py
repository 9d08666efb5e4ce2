"""Deterministic synthetic video generator: textured shapes translating and
rescaling over a static background, with exact masks and ground-truth flows.

Positions evolve continuously but are rounded to integer pixels before
rasterization, so masks stay crisp class-index maps; the flow channel keeps
the true (fractional) per-frame displacement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BACKGROUNDS = ("flat", "noise", "gradient")


@dataclass
class ObjectSpec:
    shape: str = "rect"  # "rect" | "disk"
    size: float = 16.0  # bounding-box side in pixels
    position: tuple = (0.0, 0.0)  # (y, x) of the bounding-box top-left corner
    velocity: tuple = (0.0, 0.0)  # (vy, vx) pixels per frame
    scale_rate: float = 1.0  # per-frame multiplicative size change
    color: tuple | None = None  # base RGB in [0,1]; None draws a seeded color
    z: int | None = None  # stacking order; defaults to list position
    texture: str = "cells"  # "cells" | "flat"
    texture_cell: int = 8  # texture patch size in pixels (>= 8 survives 1/4 scale)


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    n_frames: int = 10
    seed: int = 0
    background: str = "noise"
    background_cell: int = 8
    objects: list = field(default_factory=list)
    jitter: float = 0.0  # camera-shake amplitude, integer pixel shifts
    frame_noise: float = 0.0  # per-frame additive noise std (breaks color constancy)


@dataclass
class VideoSequence:
    """Ordered RGB frames with optional per-frame masks and ground-truth flows.

    frames: list of (H,W,3) uint8. masks: list of (H,W) uint8 class maps
    (0 = background, object i gets class i+1). flows: list of (2,H,W) float32,
    flow[t] holding the (dy,dx) displacement of each pixel's content from
    frame t-1 to t (zeros at t=0 and on the background).
    """

    name: str
    frames: list
    masks: list | None = None
    flows: list | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def size(self):
        return self.frames[0].shape[:2]


def _background_image(spec: SceneSpec, rng) -> np.ndarray:
    h, w = spec.height, spec.width
    if spec.background == "flat":
        color = rng.uniform(0.15, 0.5, 3)
        return np.broadcast_to(color, (h, w, 3)).astype(np.float32).copy()
    if spec.background == "gradient":
        a, b = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        ramp = np.linspace(0, 1, w, dtype=np.float32)[None, :, None]
        return (a * (1 - ramp) + b * ramp).astype(np.float32) * np.ones((h, 1, 1), np.float32)
    if spec.background == "noise":
        c = spec.background_cell
        cells = rng.uniform(0.05, 0.42, ((h + c - 1) // c, (w + c - 1) // c, 3)).astype(np.float32)
        return np.repeat(np.repeat(cells, c, axis=0), c, axis=1)[:h, :w]
    raise ValueError(f"unknown background mode {spec.background!r}")


def _object_texture(obj: ObjectSpec, rng) -> np.ndarray:
    """Color patch grid in object-local coordinates, fixed for the sequence.

    Object palettes sit above the background palette so shapes stay
    distinguishable; matching needs contrast to be well-posed.
    """
    base = np.asarray(obj.color if obj.color is not None else rng.uniform(0.6, 0.95, 3), np.float32)
    n_cells = max(1, int(round(obj.size / obj.texture_cell)))
    if obj.texture == "flat":
        return np.broadcast_to(base, (1, 1, 3)).astype(np.float32).copy()
    jitters = rng.uniform(-0.3, 0.3, (n_cells, n_cells, 3)).astype(np.float32)
    return np.clip(base + jitters, 0.25, 1.0)


def _footprint(obj: ObjectSpec, top: int, left: int, size: int, h: int, w: int):
    """Boolean mask plus local coordinates of the object's visible pixels."""
    y0, y1 = max(top, 0), min(top + size, h)
    x0, x1 = max(left, 0), min(left + size, w)
    if y0 >= y1 or x0 >= x1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    ly, lx = yy - top, xx - left
    if obj.shape == "disk":
        c = (size - 1) / 2.0
        inside = (ly - c) ** 2 + (lx - c) ** 2 <= (size / 2.0) ** 2
    elif obj.shape == "rect":
        inside = np.ones_like(ly, dtype=bool)
    else:
        raise ValueError(f"unknown object shape {obj.shape!r}")
    return yy[inside], xx[inside], ly[inside], lx[inside]


def gen_sequence(spec: SceneSpec, name: str = "seq") -> VideoSequence:
    """Render a sequence with masks and flows; identical specs render
    bit-identical sequences."""
    if spec.n_frames < 2:
        raise ValueError("gen_sequence: need at least 2 frames")
    h, w = spec.height, spec.width
    for obj in spec.objects:
        if not (0 <= obj.position[0] < h and 0 <= obj.position[1] < w):
            raise ValueError(f"object initial position {obj.position} outside {h}x{w} canvas")

    rng = np.random.default_rng(spec.seed)
    bg = _background_image(spec, rng)
    textures = [_object_texture(o, rng) for o in spec.objects]
    order = sorted(range(len(spec.objects)),
                   key=lambda i: (spec.objects[i].z if spec.objects[i].z is not None else i, i))
    jit = np.zeros((spec.n_frames, 2))
    if spec.jitter > 0:
        jit[1:] = np.round(rng.uniform(-spec.jitter, spec.jitter, (spec.n_frames - 1, 2)))

    frames, masks, flows = [], [], []
    positions = []  # per frame: list of (top, left, size) ints per object
    for t in range(spec.n_frames):
        canvas = np.roll(bg, (int(jit[t, 0]), int(jit[t, 1])), axis=(0, 1)).copy()
        mask = np.zeros((h, w), np.uint8)
        flow = np.zeros((2, h, w), np.float32)
        frame_pos = []
        for i, obj in zip(order, (spec.objects[i] for i in order)):
            cy = obj.position[0] + t * obj.velocity[0] + jit[t, 0]
            cx = obj.position[1] + t * obj.velocity[1] + jit[t, 1]
            size_t = obj.size * (obj.scale_rate ** t)
            top, left, size = int(round(cy)), int(round(cx)), max(1, int(round(size_t)))
            frame_pos.append((top, left, size))
            fp = _footprint(obj, top, left, size, h, w)
            if fp is None:
                log.info("object %d left the canvas at frame %d of %s", i, t, name)
                continue
            yy, xx, ly, lx = fp
            tex = textures[i]
            ty = np.minimum((ly * tex.shape[0]) // size, tex.shape[0] - 1)
            tx = np.minimum((lx * tex.shape[1]) // size, tex.shape[1] - 1)
            canvas[yy, xx] = tex[ty, tx]
            mask[yy, xx] = i + 1
            if t > 0:
                # true fractional displacement: translation plus scale expansion
                prev_cy = obj.position[0] + (t - 1) * obj.velocity[0] + jit[t - 1, 0]
                prev_cx = obj.position[1] + (t - 1) * obj.velocity[1] + jit[t - 1, 1]
                ratio = obj.scale_rate
                dy = yy - (prev_cy + (yy - cy) / ratio)
                dx = xx - (prev_cx + (xx - cx) / ratio)
                flow[0, yy, xx] = dy
                flow[1, yy, xx] = dx
        if spec.frame_noise > 0:
            canvas = np.clip(canvas + rng.normal(0, spec.frame_noise, canvas.shape), 0, 1).astype(np.float32)
        frames.append(np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8))
        masks.append(mask)
        flows.append(flow)
        positions.append(frame_pos)

    # positions were appended in z-order; re-index to spec order
    remap = np.argsort(order, kind="stable")
    positions = [[fp[j] for j in remap] for fp in positions]
    return VideoSequence(name=name, frames=frames, masks=masks, flows=flows,
                         info={"positions": positions, "spec": spec})


def make_random_scene(seed: int, size: int = 64, n_frames: int = 10, max_speed: float = 2.0,
                      n_objects: int | None = None, background: str = "noise",
                      min_size: int = 18, max_size: int = 30, texture_cell: int = 8,
                      background_cell: int = 8) -> SceneSpec:
    """A randomized but fully seeded scene, the workhorse for datasets."""
    rng = np.random.default_rng(seed)
    count = n_objects if n_objects is not None else int(rng.integers(1, 3))
    margin = 2.0
    objects = []
    for _ in range(count):
        osize = float(rng.integers(min_size, max_size + 1))
        vel = rng.uniform(-max_speed, max_speed, 2)
        pos = []
        for axis in range(2):
            travel = vel[axis] * (n_frames - 1)
            lo = margin + max(0.0, -travel)
            hi = size - osize - margin - max(0.0, travel)
            if hi <= lo:  # not enough room at this speed, slow the object down
                room = max(0.0, (size - osize - 2 * margin) / 2.0)
                vel[axis] = np.sign(vel[axis]) * min(abs(vel[axis]), room / max(1, n_frames - 1))
                travel = vel[axis] * (n_frames - 1)
                lo = margin + max(0.0, -travel)
                hi = max(lo + 1e-6, size - osize - margin - max(0.0, travel))
            pos.append(float(rng.uniform(lo, hi)))
        objects.append(ObjectSpec(
            shape="rect" if rng.random() < 0.5 else "disk",
            size=osize, position=tuple(pos), velocity=tuple(vel.tolist()),
            texture_cell=texture_cell,
        ))
    return SceneSpec(height=size, width=size, n_frames=n_frames, seed=seed,
                     background=background, background_cell=background_cell,
                     objects=objects)

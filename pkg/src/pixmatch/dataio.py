"""File formats: PNG frame/mask codecs, the dataset directory layout, plain
key=value config files, and the binary checkpoint format.

Dataset layout, one folder per sequence under a root:

    <root>/<sequence>/frames/00000.png   RGB, 8-bit
    <root>/<sequence>/masks/00001.png    single channel, pixel value = class id
    <root>/<sequence>/flows/00001.npy    optional float32 (2,H,W) flow
    <root>/attributes.txt                optional "<sequence> attr attr ..." lines

Frame indices are contiguous from 0; masks either cover every frame or only
frame 0 (the semi-supervised input). Checkpoints are little-endian binary:
magic "RPMC", u32 version, a length-prefixed UTF-8 key=value config block,
then a tensor table (length-prefixed name, u8 rank, u32 dims, float32 data).
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CheckpointError, ConfigError, DatasetError
from .model import ModelConfig, ModelParams, build_model
from .synth import VideoSequence

CHECKPOINT_MAGIC = b"RPMC"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# images

def save_frame(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise ValueError("save_frame: expected (H,W,3) uint8")
    Image.fromarray(frame, mode="RGB").save(path, format="PNG")


def load_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != np.uint8:
        raise ValueError("save_mask: expected (H,W) uint8 class indices")
    Image.fromarray(mask, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im)


# ---------------------------------------------------------------------------
# dataset layout

_INDEXED = re.compile(r"^(\d{5})\.(png|npy)$")


def _indexed_files(folder: Path, suffix: str) -> list:
    found = {}
    for p in folder.iterdir():
        m = _INDEXED.match(p.name)
        if m and p.suffix == f".{suffix}":
            found[int(m.group(1))] = p
    paths = [found[i] for i in sorted(found)]
    if sorted(found) != list(range(len(found))):
        raise DatasetError(f"{folder}: indices not contiguous from 0")
    return paths


def write_sequence(root, video: VideoSequence, with_flows: bool = True) -> Path:
    seq_dir = Path(root) / video.name
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        save_frame(seq_dir / "frames" / f"{i:05d}.png", frame)
    if video.masks is not None:
        (seq_dir / "masks").mkdir(exist_ok=True)
        for i, mask in enumerate(video.masks):
            save_mask(seq_dir / "masks" / f"{i:05d}.png", mask)
    if with_flows and video.flows is not None:
        (seq_dir / "flows").mkdir(exist_ok=True)
        for i, flow in enumerate(video.flows):
            np.save(seq_dir / "flows" / f"{i:05d}.npy", flow.astype(np.float32))
    return seq_dir


def read_sequence(seq_dir) -> VideoSequence:
    seq_dir = Path(seq_dir)
    frames_dir = seq_dir / "frames"
    if not frames_dir.is_dir():
        raise DatasetError(f"{seq_dir}: no frames/ directory")
    frames = [load_frame(p) for p in _indexed_files(frames_dir, "png")]
    if not frames:
        raise DatasetError(f"{seq_dir}: no frames found")
    masks = None
    masks_dir = seq_dir / "masks"
    if masks_dir.is_dir():
        paths = _indexed_files(masks_dir, "png")
        if len(paths) not in (0, 1, len(frames)):
            raise DatasetError(f"{seq_dir}: {len(paths)} masks for {len(frames)} frames "
                               "(want all frames or just frame 0)")
        masks = [load_mask(p) for p in paths] or None
    flows = None
    flows_dir = seq_dir / "flows"
    if flows_dir.is_dir():
        paths = _indexed_files(flows_dir, "npy")
        flows = [np.load(p) for p in paths] or None
    return VideoSequence(name=seq_dir.name, frames=frames, masks=masks, flows=flows)


def read_dataset(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    seqs = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "frames").is_dir():
            seqs.append(read_sequence(child))
    if not seqs:
        raise DatasetError(f"{root}: no sequences found")
    return seqs


def read_attributes(path) -> dict:
    """Parse "<sequence> attr attr ..." lines into a name -> [attrs] table."""
    table = {}
    for i, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DatasetError(f"{path}:{i}: expected '<sequence> attr ...'")
        table[parts[0]] = parts[1:]
    return table


# ---------------------------------------------------------------------------
# config files

def parse_config_text(text: str, source: str = "<config>") -> dict:
    """key=value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{i}: expected key=value, got {raw.strip()!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if not key:
            raise ConfigError(f"{source}:{i}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{i}: duplicate key {key!r}")
        out[key] = val
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text(), source=str(path))


def format_config(d: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in d.items())


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    version: int = CHECKPOINT_VERSION
    config: dict = field(default_factory=dict)  # model config echo + meta.* entries
    tensors: dict = field(default_factory=dict)  # name -> float32 ndarray, insertion-ordered

    def model_config(self) -> ModelConfig:
        plain = {k: v for k, v in self.config.items() if "." not in k}
        return ModelConfig.from_dict(plain)


def checkpoint_from_params(params: ModelParams, optimizer_state=None, meta: dict | None = None) -> Checkpoint:
    config = params.config.to_dict()
    for k, v in (meta or {}).items():
        config[f"meta.{k}"] = str(v)
    ckpt = Checkpoint(config=config)
    for name, t, _ in params.named_params():
        ckpt.tensors[name] = t.data.astype(np.float32, copy=True)
    for name, buf in params.named_buffers():
        ckpt.tensors[name] = buf.astype(np.float32, copy=True)
    if optimizer_state is not None and optimizer_state.velocities:
        for (name, _, _), v in zip(params.named_params(), optimizer_state.velocities):
            ckpt.tensors[f"opt.{name}"] = v.astype(np.float32, copy=True)
    return ckpt


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    blob = format_config(ckpt.config).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        if arr.ndim:
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _take(buf: io.BytesIO, n: int, path, what: str) -> bytes:
    b = buf.read(n)
    if len(b) != n:
        raise CheckpointError(f"{path}: truncated while reading {what}")
    return b


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    buf = io.BytesIO(raw)
    magic = _take(buf, 4, path, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint file")
    (version,) = struct.unpack("<I", _take(buf, 4, path, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = struct.unpack("<I", _take(buf, 4, path, "config length"))
    config = parse_config_text(_take(buf, clen, path, "config block").decode("utf-8"),
                               source=f"{path}[config]")
    (count,) = struct.unpack("<I", _take(buf, 4, path, "tensor count"))
    ckpt = Checkpoint(version=version, config=config)
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _take(buf, 4, path, "tensor name length"))
        name = _take(buf, nlen, path, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", _take(buf, 1, path, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", _take(buf, 4 * rank, path, f"dims of {name!r}")) if rank else ()
        n_items = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(_take(buf, 4 * n_items, path, f"data of {name!r}"), dtype="<f4")
        ckpt.tensors[name] = data.reshape(dims).copy()
    if buf.read(1):
        raise CheckpointError(f"{path}: trailing bytes after tensor table")
    return ckpt


def params_from_checkpoint(ckpt: Checkpoint, config: ModelConfig | None = None) -> ModelParams:
    """Instantiate model parameters from a checkpoint, validating every tensor
    name and shape against the given (or echoed) config. The first offending
    tensor is named in the error."""
    if config is None:
        config = ckpt.model_config()
    params = build_model(config)
    expected = {name: t for name, t, _ in params.named_params()}
    buffers = dict(params.named_buffers())
    for name in expected:
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r} required by "
                                  f"variant {config.variant!r}")
    for name, arr in ckpt.tensors.items():
        if name.startswith("opt."):
            if name[4:] not in expected:
                raise CheckpointError(f"checkpoint has optimizer state {name!r} for an unknown parameter")
            continue
        if name in expected:
            if expected[name].data.shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for tensor {name!r}: checkpoint has {arr.shape}, "
                    f"config {config.variant!r} expects {expected[name].data.shape}")
            expected[name].data = arr.astype(np.float32, copy=True)
        elif name in buffers:
            if buffers[name].shape != arr.shape:
                raise CheckpointError(f"shape mismatch for buffer {name!r}")
            buffers[name][...] = arr
        else:
            raise CheckpointError(f"checkpoint has unknown tensor {name!r} for variant {config.variant!r}")
    return params

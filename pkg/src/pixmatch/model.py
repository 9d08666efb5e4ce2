"""Model assembly: the frame-embedding network, the offset-predicting
matching network (with its standard-conv and dilated-conv ablation variants),
and the end-to-end training forward pass.

The embedding network maps an RGB frame to a quarter-resolution feature map:
two conv blocks each downsampling by 2 (stride-1 conv + 2x2 mean pool, which
keeps conv2d's exact-output-size contract intact on even inputs), further conv
blocks at 1/4 scale, an up-convolution block (stride 1 at this scale), and a
1x1 projection to ``d_emb`` channels. Downsampling stops at 1/4: the sub-cell
phase the matcher needs to resolve pixel-level motion does not survive deeper
pooling at desk scale. The matching network reads
the channel-concatenated embeddings of two frames and emits a 2-channel
per-pixel offset field; a fixed-weight warp then samples the reference frame
(or, at inference, the per-class mask indicators) at those offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import hashlib

import numpy as np

from .deform import deform_conv2d, kernel_taps, warp
from .errors import ConfigError
from .layers import RunningStats, avg_pool2, batch_norm, conv2d, conv_transpose2d, downsample_quarter
from .tensor import Tensor, concat_channels, relu

VARIANTS = ("deform", "conv1", "conv3", "conv5", "dilation3", "dilation6", "dilation9")

_ENCODER_CHANNELS = (16, 32, 32)  # stride-2 stages; extra blocks repeat the last width


@dataclass
class ModelConfig:
    height: int = 64
    width: int = 64
    d_emb: int = 32
    variant: str = "deform"
    n_blocks: int = 4
    init_std: float = 0.01
    offset_init_std: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.height % 4 or self.width % 4:
            raise ConfigError(f"resolution {self.height}x{self.width} must be divisible by 4")
        if self.n_blocks < 4:
            raise ConfigError("n_blocks must be >= 4 (two downsampling stages, a 1/4-scale stage, "
                              "one up-convolution)")
        if self.d_emb < 4 or self.d_emb % 2:
            raise ConfigError("d_emb must be an even number >= 4")
        if self.init_std < 0 or self.offset_init_std < 0:
            raise ConfigError("init std must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        casts = {f.name: f.type for f in fields(cls)}
        for key, val in d.items():
            if key not in casts:
                raise ConfigError(f"unknown model config key {key!r}")
            fld = next(f for f in fields(cls) if f.name == key)
            py = type(fld.default)
            try:
                kwargs[key] = val if py is str else py(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class ConvBlock:
    w: Tensor
    b: Tensor | None  # transposed blocks carry no bias, BN beta follows anyway
    gamma: Tensor
    beta: Tensor
    stats: RunningStats
    pool: bool = False  # 2x2 mean pool after the activation
    transposed: bool = False


@dataclass
class MatchLayer:
    kind: str  # "deform" | "conv"
    w: Tensor
    b: Tensor | None = None
    off_w: Tensor | None = None
    off_b: Tensor | None = None
    gamma: Tensor | None = None
    beta: Tensor | None = None
    stats: RunningStats | None = None
    dilation: int = 1


@dataclass
class ModelParams:
    """All trainable tensors plus normalization buffers, in a fixed order.

    The final warp stage has no parameters by design: it samples with constant
    unit weights driven by the offsets the last matching layer produces.
    """

    config: ModelConfig
    blocks: list = field(default_factory=list)
    head_w: Tensor | None = None
    head_b: Tensor | None = None
    match_layers: list = field(default_factory=list)

    def named_params(self):
        """Yield (name, tensor, weight_decay_applies) in checkpoint order."""
        for i, blk in enumerate(self.blocks):
            p = f"embed.block{i}"
            yield f"{p}.conv.w", blk.w, True
            if blk.b is not None:
                yield f"{p}.conv.b", blk.b, False
            yield f"{p}.bn.gamma", blk.gamma, False
            yield f"{p}.bn.beta", blk.beta, False
        yield "embed.head.w", self.head_w, True
        yield "embed.head.b", self.head_b, False
        for i, lay in enumerate(self.match_layers):
            p = f"match.layer{i}"
            yield f"{p}.w", lay.w, True
            if lay.b is not None:
                yield f"{p}.b", lay.b, False
            if lay.off_w is not None:
                yield f"{p}.offset.w", lay.off_w, True
                yield f"{p}.offset.b", lay.off_b, False
            if lay.gamma is not None:
                yield f"{p}.bn.gamma", lay.gamma, False
                yield f"{p}.bn.beta", lay.beta, False

    def named_buffers(self):
        for i, blk in enumerate(self.blocks):
            yield f"embed.block{i}.bn.mean", blk.stats.mean
            yield f"embed.block{i}.bn.var", blk.stats.var
        for i, lay in enumerate(self.match_layers):
            if lay.stats is not None:
                yield f"match.layer{i}.bn.mean", lay.stats.mean
                yield f"match.layer{i}.bn.var", lay.stats.var

    def tensors(self):
        return [t for _, t, _ in self.named_params()]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t, _ in self.named_params():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        for name, buf in self.named_buffers():
            h.update(name.encode())
            h.update(np.ascontiguousarray(buf).tobytes())
        return h.hexdigest()


def _match_channel_chain(d_emb: int, n_layers: int) -> list:
    chain = [2 * d_emb]
    for i in range(1, n_layers):
        chain.append(max(2, (2 * d_emb) >> i))
    chain.append(2)
    return chain


def build_model(config: ModelConfig) -> ModelParams:
    """Instantiate all parameters from a seeded Gaussian.

    Offset convolutions default to the same init std as everything else; an
    exactly-zero offset init would pin every sampling point to the integer
    grid, where the bilinear kink convention yields zero offset gradients.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)

    def gauss(shape, std):
        return Tensor((rng.standard_normal(shape) * std).astype(np.float32), requires_grad=True)

    def zeros(n):
        return Tensor(np.zeros(n, np.float32), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n, np.float32), requires_grad=True)

    params = ModelParams(config=config)

    widths = list(_ENCODER_CHANNELS) + [_ENCODER_CHANNELS[-1]] * (config.n_blocks - 4)
    cin = 3
    for i, cout in enumerate(widths):
        params.blocks.append(ConvBlock(
            w=gauss((cout, cin, 3, 3), config.init_std), b=zeros(cout),
            gamma=ones(cout), beta=zeros(cout), stats=RunningStats(cout),
            pool=i < 2,
        ))
        cin = cout
    up = _ENCODER_CHANNELS[-1]
    params.blocks.append(ConvBlock(
        w=gauss((cin, up, 3, 3), config.init_std), b=None,
        gamma=ones(up), beta=zeros(up), stats=RunningStats(up),
        transposed=True,
    ))
    params.head_w = gauss((config.d_emb, up, 1, 1), config.init_std)
    params.head_b = zeros(config.d_emb)

    variant = config.variant
    if variant == "deform":
        chain = _match_channel_chain(config.d_emb, 3)
        n_off = 2 * kernel_taps(3, 3).shape[0]
        for i in range(3):
            last = i == 2
            params.match_layers.append(MatchLayer(
                kind="deform",
                w=gauss((chain[i + 1], chain[i], 3, 3), config.init_std),
                off_w=gauss((n_off, chain[i], 3, 3), config.offset_init_std),
                off_b=zeros(n_off),
                gamma=None if last else ones(chain[i + 1]),
                beta=None if last else zeros(chain[i + 1]),
                stats=None if last else RunningStats(chain[i + 1]),
            ))
    else:
        if variant.startswith("conv"):
            n_layers, dilation = int(variant[4:]), 1
        else:
            n_layers, dilation = 3, int(variant[8:])
        chain = _match_channel_chain(config.d_emb, n_layers)
        for i in range(n_layers):
            last = i == n_layers - 1
            params.match_layers.append(MatchLayer(
                kind="conv",
                w=gauss((chain[i + 1], chain[i], 3, 3), config.init_std),
                b=zeros(chain[i + 1]),
                gamma=None if last else ones(chain[i + 1]),
                beta=None if last else zeros(chain[i + 1]),
                stats=None if last else RunningStats(chain[i + 1]),
                dilation=dilation,
            ))
    return params


def frames_to_tensor(frames) -> Tensor:
    """Stack uint8 HxWx3 frames into a float32 (N,3,H,W) tensor in [0,1]."""
    arr = np.stack([np.asarray(f) for f in frames]) if isinstance(frames, (list, tuple)) else np.asarray(frames)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"frames_to_tensor: expected (N,H,W,3) uint8 frames, got {arr.shape}")
    return Tensor(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)).astype(np.float32) / 255.0)


def embed(params: ModelParams, x: Tensor, training: bool = False) -> Tensor:
    """RGB (N,3,H,W) -> embedding (N,d_emb,H/4,W/4)."""
    if x.shape[1] != 3:
        raise ValueError(f"embed: expected 3 input channels, got {x.shape[1]}")
    f = x
    for blk in params.blocks:
        if blk.transposed:
            f = conv_transpose2d(f, blk.w, stride=1)
        else:
            f = conv2d(f, blk.w, blk.b, stride=1, padding=1)
        f = relu(batch_norm(f, blk.gamma, blk.beta, blk.stats, training))
        if blk.pool:
            f = avg_pool2(f)
    return conv2d(f, params.head_w, params.head_b, stride=1, padding=0)


def embed_pair(params: ModelParams, ref: Tensor, tar: Tensor, training: bool = False) -> Tensor:
    """Concatenated embeddings, reference first: (N, 2*d_emb, H/4, W/4)."""
    if ref.shape != tar.shape:
        raise ValueError(f"embed_pair: frame shapes differ, {tuple(ref.shape)} vs {tuple(tar.shape)}")
    return concat_channels([embed(params, ref, training), embed(params, tar, training)])


def match_internals(params: ModelParams, g: Tensor, training: bool = False):
    """Run the matching layers, returning (final_offsets, per-layer records).

    Each record is (layer_input, layer_offsets_or_None); the analysis tools
    use them to recover actual sampling locations.
    """
    if g.shape[1] != 2 * params.config.d_emb:
        raise ValueError(f"match: expected {2 * params.config.d_emb} channels, got {g.shape[1]}")
    f = g
    records = []
    for lay in params.match_layers:
        if lay.kind == "deform":
            off = conv2d(f, lay.off_w, lay.off_b, stride=1, padding=1)
            records.append((f, off))
            f = deform_conv2d(f, lay.w, off, stride=1, padding=1)
        else:
            records.append((f, None))
            f = conv2d(f, lay.w, lay.b, stride=1, padding=lay.dilation, dilation=lay.dilation)
        if lay.gamma is not None:
            f = relu(batch_norm(f, lay.gamma, lay.beta, lay.stats, training))
    return f, records


def match_offsets(params: ModelParams, g: Tensor, training: bool = False) -> Tensor:
    """Concatenated embeddings -> 2-channel per-pixel offset field."""
    f, _ = match_internals(params, g, training)
    return f


def forward_train(params: ModelParams, ref: Tensor, tar: Tensor,
                  offsets_override: Tensor | None = None):
    """Predict the quarter-resolution target frame by warping the reference.

    Returns (prediction, offsets). The prediction lives at (N,3,H/4,W/4); the
    loss target is the quarter-downsampled target frame. ``offsets_override``
    substitutes the matching output (used by tests and oracle studies).
    """
    if offsets_override is None:
        offsets = match_offsets(params, embed_pair(params, ref, tar, training=True), training=True)
    else:
        offsets = offsets_override
    ref_q = downsample_quarter(ref)
    return warp(ref_q, offsets), offsets


def layer_sampling_locations(record, pixel, dilation: int = 1):
    """Sampling locations (y, x) one matching layer reads for one output pixel.

    ``record`` is an entry from :func:`match_internals`; deform layers add
    their predicted per-tap offsets to the 3x3 grid, conv layers use the fixed
    (possibly dilated) grid.
    """
    _, off = record
    taps = kernel_taps(3, 3).astype(np.float64)
    y, x = pixel
    if off is None:
        pts = taps * dilation + np.array([y, x], dtype=np.float64)
    else:
        o = off.data[0, :, y, x].reshape(-1, 2)
        pts = taps + o + np.array([y, x], dtype=np.float64)
    return [tuple(p) for p in pts]

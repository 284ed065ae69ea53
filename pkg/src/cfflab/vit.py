"""Tiny pre-norm Vision Transformer with per-layer contrastive read-outs.

Every block feeds the next one a detached copy of its output, so a loss
attached to layer ``l`` can only ever reach the parameters of block ``l``
(plus the patch embedding when ``l == 0``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "EncoderConfig",
    "EmbedParams",
    "LayerParams",
    "Encoder",
    "init_encoder",
    "patch_embed",
    "encoder_block_forward",
    "pooled_representation",
    "forward_all_layers",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = b"CFFLAB-CKPT-v1\n"


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 8
    patch_size: int = 4
    channels: int = 3
    embed_dim: int = 16
    num_heads: int = 2
    num_layers: int = 2
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if min(self.embed_dim, self.num_heads, self.num_layers, self.channels) < 1:
            raise ValueError("dimensions must be positive")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")

    @property
    def num_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    @classmethod
    def full_scale(cls) -> EncoderConfig:
        """32x32 inputs, 4x4 patches, d=128, 4 heads, 8 layers."""
        return cls(image_size=32, patch_size=4, channels=3, embed_dim=128, num_heads=4, num_layers=8)


class _ParamSet:
    names: tuple[str, ...] = ()

    def tensors(self) -> list[Tensor]:
        return [getattr(self, n) for n in self.names]

    def named(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in self.names}


class EmbedParams(_ParamSet):
    names = ("proj_w", "proj_b", "pos")

    def __init__(self, proj_w, proj_b, pos):
        self.proj_w, self.proj_b, self.pos = proj_w, proj_b, pos


class LayerParams(_ParamSet):
    names = ("ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
             "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")

    def __init__(self, **tensors):
        for n in self.names:
            setattr(self, n, tensors[n])


@dataclass
class Encoder:
    config: EncoderConfig
    embed: EmbedParams
    layers: list[LayerParams]

    def layer_param_sets(self) -> list[list[Tensor]]:
        """Trainable tensors grouped by the loss that owns them.

        The patch embedding is only reachable from the layer-0 loss, so it
        is trained together with block 0.
        """
        groups = [list(layer.tensors()) for layer in self.layers]
        groups[0] = self.embed.tensors() + groups[0]
        return groups

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"embed.{k}": v for k, v in self.embed.named().items()}
        for i, layer in enumerate(self.layers):
            out.update({f"layers.{i}.{k}": v for k, v in layer.named().items()})
        return out

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, t in self.named_parameters().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.values, dtype="<f8").tobytes())
        return h.hexdigest()


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_encoder(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> Encoder:
    d, h = config.embed_dim, config.hidden_dim

    def param(values):
        return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)

    embed = EmbedParams(
        proj_w=param(_trunc_normal(rng, (config.patch_dim, d))),
        proj_b=param(np.zeros(d)),
        pos=param(_trunc_normal(rng, (config.num_tokens, d))),
    )
    layers = []
    for _ in range(config.num_layers):
        layers.append(LayerParams(
            ln1_g=param(np.ones(d)), ln1_b=param(np.zeros(d)),
            wq=param(_trunc_normal(rng, (d, d))), bq=param(np.zeros(d)),
            wk=param(_trunc_normal(rng, (d, d))), bk=param(np.zeros(d)),
            wv=param(_trunc_normal(rng, (d, d))), bv=param(np.zeros(d)),
            wo=param(_trunc_normal(rng, (d, d))), bo=param(np.zeros(d)),
            ln2_g=param(np.ones(d)), ln2_b=param(np.zeros(d)),
            w1=param(_trunc_normal(rng, (d, h))), b1=param(np.zeros(h)),
            w2=param(_trunc_normal(rng, (h, d))), b2=param(np.zeros(d)),
        ))
    return Encoder(config, embed, layers)


def _patchify(images: np.ndarray, patch: int) -> np.ndarray:
    b, c, s, _ = images.shape
    g = s // patch
    x = images.reshape(b, c, g, patch, g, patch)
    # (B, gy, gx, C, py, px): row-major patch order, channel-major within a patch
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, g * g, c * patch * patch)


def patch_embed(images, embed: EmbedParams, config: EncoderConfig) -> Tensor:
    """Split into non-overlapping patches, project linearly, add positions."""
    values = images.values if isinstance(images, Tensor) else np.asarray(images)
    expected = (config.channels, config.image_size, config.image_size)
    if values.ndim != 4 or values.shape[1:] != expected:
        raise ValueError(f"expected images of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), "
                         f"got {values.shape}")
    patches = Tensor(_patchify(values, config.patch_size).astype(embed.proj_w.dtype, copy=False))
    tokens = ad.matmul(patches, embed.proj_w) + embed.proj_b
    return tokens + embed.pos


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def encoder_block_forward(tokens: Tensor, layer: LayerParams, num_heads: int) -> Tensor:
    """Pre-norm MHSA + residual, then pre-norm GELU MLP + residual."""
    if tokens.ndim != 3:
        raise ValueError(f"tokens must be (B, T, d), got {tokens.shape}")
    d = tokens.shape[-1]
    if layer.wq.shape != (d, d):
        raise ValueError(f"token width {d} does not match layer width {layer.wq.shape[0]}")
    dh = d // num_heads

    x = ad.layer_norm(tokens, layer.ln1_g, layer.ln1_b)
    q = _split_heads(ad.matmul(x, layer.wq) + layer.bq, num_heads)
    k = _split_heads(ad.matmul(x, layer.wk) + layer.bk, num_heads)
    v = _split_heads(ad.matmul(x, layer.wv) + layer.bv, num_heads)
    scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(dh))
    attn = ad.matmul(ad.softmax_rows(scores), v)
    tokens = tokens + (ad.matmul(_merge_heads(attn), layer.wo) + layer.bo)

    x = ad.layer_norm(tokens, layer.ln2_g, layer.ln2_b)
    hidden = ad.gelu(ad.matmul(x, layer.w1) + layer.b1)
    return tokens + (ad.matmul(hidden, layer.w2) + layer.b2)


def pooled_representation(tokens: Tensor) -> Tensor:
    """Mean over tokens followed by row-wise l2 normalization."""
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ValueError(f"tokens must be (B, T>=1, d), got {tokens.shape}")
    return ad.l2_normalize_rows(ad.mean(tokens, axis=1))


def forward_all_layers(views, encoder: Encoder, block_gradients: bool = True) -> list[tuple[Tensor, Tensor]]:
    """Run every block, returning ``(tokens_l, z_l)`` per layer.

    With ``block_gradients`` (the default and the only setting used in
    training) each block sees a stop-gradient copy of its predecessor.
    """
    images = views.views if hasattr(views, "views") else views
    cfg = encoder.config
    h = patch_embed(images, encoder.embed, cfg)
    outputs = []
    for i, layer in enumerate(encoder.layers):
        if i > 0 and block_gradients:
            h = ad.stop_gradient(h)
        h = encoder_block_forward(h, layer, cfg.num_heads)
        outputs.append((h, pooled_representation(h)))
    return outputs


def save_checkpoint(encoder: Encoder, path) -> None:
    """Write ``MAGIC | u64 header length | JSON header | little-endian f8 payload``."""
    params = encoder.named_parameters()
    header = {
        "config": asdict(encoder.config),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for v in params.values():
            f.write(np.ascontiguousarray(v.values, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path, dtype=np.float64) -> Encoder:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a cfflab checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    config = EncoderConfig(**header["config"])
    arrays = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"]))
        if pos + 8 * n > len(data):
            raise ValueError(f"{path}: truncated payload at byte {pos}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(entry["shape"])
        arrays[entry["name"]] = Tensor(arr.astype(dtype), requires_grad=True)
        pos += 8 * n
    embed = EmbedParams(**{k: arrays[f"embed.{k}"] for k in EmbedParams.names})
    layers = [LayerParams(**{k: arrays[f"layers.{i}.{k}"] for k in LayerParams.names})
              for i in range(config.num_layers)]
    return Encoder(config, embed, layers)

"""Visual extractor: image -> patch features X of shape (N, d_h).

A small ViT-style patch transformer plays the role of the backbone; its output
(width ``d_b``) is mapped to ``d_h`` by a linear layer followed by LayerNorm.
Precomputed ``N x d_h`` feature files bypass the network entirely.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor
from .tensorio import TensorFileError, load_tensor, read_header


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxWxC with C in (1, 3), got shape {img.shape}")
    if img.shape[2] == 3:
        img = img.mean(axis=2, keepdims=True)
    return img


def patchify(img, patch_size: int) -> np.ndarray:
    """Split an H x W x C image into raster-ordered flattened patches (N, p*p*C)."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    H, W, C = img.shape
    if H % patch_size or W % patch_size:
        raise ValueError(f"image {H}x{W} not divisible by patch size {patch_size}")
    gh, gw = H // patch_size, W // patch_size
    patches = img.reshape(gh, patch_size, gw, patch_size, C).transpose(0, 2, 1, 3, 4)
    return patches.reshape(gh * gw, patch_size * patch_size * C)


def patchify_tensor(img: Tensor, patch_size: int) -> Tensor:
    """Differentiable patchify for (H, W, C) tensors (used for pixel-gradient checks)."""
    H, W, C = img.shape
    if H % patch_size or W % patch_size:
        raise ValueError(f"image {H}x{W} not divisible by patch size {patch_size}")
    gh, gw = H // patch_size, W // patch_size
    x = T.reshape(img, (gh, patch_size, gw, patch_size, C))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (gh * gw, patch_size * patch_size * C))


class EncoderLayer(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, 4 * d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ffn(self.norm2(x))


class VisualEncoder(Module):
    def __init__(self, image_size: int = 64, patch_size: int = 16, channels: int = 1,
                 d_b: int = 64, d_h: int = 64, n_layers: int = 2, n_heads: int = 4,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        if image_size % patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        self.patch_size = patch_size
        self.channels = channels
        self.n_patches = (image_size // patch_size) ** 2
        self.patch_dim = patch_size * patch_size * channels
        self.patch_embed = Linear(self.patch_dim, d_b, rng)
        self.pos_embed = T.parameter(rng.normal(0.0, 0.02, size=(self.n_patches, d_b)))
        self.layers = [EncoderLayer(d_b, n_heads, rng) for _ in range(n_layers)]
        self.final_norm = LayerNorm(d_b)
        self.proj = Linear(d_b, d_h, rng)  # W^enc, b^enc
        self.out_norm = LayerNorm(d_h)

    def encode(self, patches) -> Tensor:
        """(B, N, patch_dim) or (N, patch_dim) patches -> visual features of width d_h."""
        patches = T.as_tensor(patches)
        if patches.shape[-1] != self.patch_dim:
            raise ValueError(f"patch width {patches.shape[-1]} != configured {self.patch_dim}")
        if patches.shape[-2] != self.n_patches:
            raise ValueError(f"patch count {patches.shape[-2]} != configured {self.n_patches}")
        x = self.patch_embed(patches) + self.pos_embed
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        for layer in self.layers:
            x = layer(x)
        x = self.out_norm(self.proj(self.final_norm(x)))
        return T.reshape(x, x.shape[1:]) if squeeze else x

    __call__ = encode

    def encode_image(self, img) -> Tensor:
        return self.encode(patchify(to_grayscale(img), self.patch_size))


def load_precomputed(path, d_h: int) -> np.ndarray:
    """Load an N x d_h feature file verbatim."""
    _, shape = read_header(path)
    if len(shape) != 2:
        raise TensorFileError(f"{path}: expected a 2-D feature tensor, got dims {shape}")
    if shape[1] != d_h:
        raise TensorFileError(f"{path}: feature width {shape[1]} != d_h={d_h}")
    return load_tensor(path)


def load_visual(path, d_h: int) -> tuple[str, np.ndarray]:
    """Load either an image (3-D header) or precomputed features (2-D header)."""
    _, shape = read_header(path)
    if len(shape) == 3:
        return "image", to_grayscale(load_tensor(path))
    if len(shape) == 2:
        return "features", load_precomputed(path, d_h)
    raise TensorFileError(f"{path}: unsupported tensor rank {len(shape)}")

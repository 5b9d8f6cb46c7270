"""Generators, spectrally normalised discriminators, and the matching image encoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .memory import MemoryBlock
from .nn import Conv3x3, Linear, Module, zeros_param
from .text import ConditioningAugmentation

SN_EPS = 1e-12


def _normalize(x: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return fallback if n < SN_EPS else x / n


def power_iteration(w2d: np.ndarray, u: np.ndarray, n_iter: int = 1):
    """Persistent power iteration on ``w2d`` (out × rest). Returns ``(u, v, sigma)``."""
    v = np.zeros(w2d.shape[1], dtype=w2d.dtype)
    for _ in range(n_iter):
        v = _normalize(w2d.T @ u, v)
        u = _normalize(w2d @ v, u)
    sigma = float(u @ w2d @ v)
    return u, v, sigma


def spectral_normalize(weight: Tensor, u: np.ndarray, n_iter: int = 1, update: bool = True):
    """Divide ``weight`` by its top singular value estimated from ``u``.

    The weight is viewed as ``shape[0] × rest``. With ``update`` the estimate
    advances by ``n_iter`` power steps; otherwise the stored ``u`` is used
    as-is (one matvec to recover ``v``). Gradients flow through sigma with
    ``u`` and ``v`` held constant. Returns ``(normalized, u, sigma)``.
    """
    w2d = weight.data.reshape(weight.shape[0], -1)
    if update:
        u, v, _ = power_iteration(w2d, u, n_iter)
    else:
        v = _normalize(w2d.T @ u, np.zeros(w2d.shape[1], dtype=w2d.dtype))
    uv = Tensor(np.outer(u, v).reshape(weight.shape), dtype=weight.dtype)
    sigma = ad.sum(weight * uv)
    if abs(sigma.item()) < SN_EPS:
        sigma = Tensor(SN_EPS, dtype=weight.dtype)
    return weight / sigma, u, sigma.item()


class SpectralNormMixin:
    """Keeps the persistent left singular vector ``u`` as a buffer."""

    def _init_u(self, rng):
        n = self.weight.shape[0]
        self.register_buffer("u", _normalize(rng.normal(size=n), None).astype(self.weight.dtype))

    def power_step(self):
        w2d = self.weight.data.reshape(self.weight.shape[0], -1)
        u, _, _ = power_iteration(w2d, self._buffers["u"], 1)
        self._buffers["u"] = u.astype(self.weight.dtype)

    def normalized_weight(self) -> Tensor:
        return spectral_normalize(self.weight, self._buffers["u"], update=False)[0]


class SNConv3x3(SpectralNormMixin, Conv3x3):
    def __init__(self, rng, c_in: int, c_out: int, stride: int = 1):
        super().__init__(rng, c_in, c_out, stride)
        self._init_u(rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv3x3(x, self.normalized_weight(), self.bias, stride=self.stride)


class SNLinear(SpectralNormMixin, Linear):
    def __init__(self, rng, n_in: int, n_out: int):
        super().__init__(rng, n_in, n_out)
        self._init_u(rng)

    def forward(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.normalized_weight()) + self.bias


def to_pixels(maps: Tensor) -> Tensor:
    """B×C×H×W feature maps → B×(H·W)×C pixel rows."""
    B, C, H, W = maps.shape
    return ad.transpose(ad.reshape(maps, (B, C, H * W)), (0, 2, 1))


def to_maps(pixels: Tensor, height: int, width: int) -> Tensor:
    B, N, C = pixels.shape
    if N != height * width:
        raise DimensionError(f"{N} pixels cannot form {height}×{width}")
    return ad.reshape(ad.transpose(pixels, (0, 2, 1)), (B, C, height, width))


class UpBlock(Module):
    """Nearest-neighbour ×2 upsampling, 3×3 conv, ReLU."""

    def __init__(self, rng, c_in: int, c_out: int):
        super().__init__()
        self.conv = Conv3x3(rng, c_in, c_out)

    def forward(self, x: Tensor) -> Tensor:
        return ad.relu(self.conv(ad.nearest_upsample(x)))


class ResBlock(Module):
    def __init__(self, rng, channels: int):
        super().__init__()
        self.conv1 = Conv3x3(rng, channels, channels)
        self.conv2 = Conv3x3(rng, channels, channels)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(ad.relu(self.conv1(x)))


class ImageHead(Module):
    """3×3 conv to RGB followed by tanh."""

    def __init__(self, rng, channels: int):
        super().__init__()
        self.conv = Conv3x3(rng, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ad.tanh(self.conv(x))


class InitialGenerator(Module):
    def __init__(self, rng, z_dim: int, code_dim: int, feat_dim: int, base_res: int = 16, width: int = 32):
        super().__init__()
        n_up = int(np.log2(base_res // 4))
        if 4 * 2 ** n_up != base_res:
            raise ValueError(f"base resolution must be 4·2^k, got {base_res}")
        self.width = width
        self.fc = Linear(rng, z_dim + code_dim, width * 16)
        chans = [width] * n_up + [feat_dim]
        self.ups = [UpBlock(rng, chans[i], chans[i + 1]) for i in range(n_up)]
        self.head = ImageHead(rng, feat_dim)

    def forward(self, z: Tensor, code: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns ``(image B×3×H×W, feature maps B×N_r×H×W)``."""
        h = ad.relu(self.fc(ad.concat([z, code], axis=-1)))
        h = ad.reshape(h, (h.shape[0], self.width, 4, 4))
        for up in self.ups:
            h = up(h)
        return self.head(h), h


class RefineStage(Module):
    """Memory block, residual blocks, ×2 upsampling block, image head."""

    def __init__(self, rng, word_dim: int, feat_dim: int, mem_dim: int, n_res: int = 2,
                 key_value: bool = True, write_gate: bool = True, response_gate: bool = True,
                 memory: Optional[MemoryBlock] = None):
        super().__init__()
        self.memory = memory or MemoryBlock(rng, word_dim, feat_dim, mem_dim,
                                            key_value, write_gate, response_gate)
        self.res = [ResBlock(rng, feat_dim) for _ in range(n_res)]
        self.up = UpBlock(rng, feat_dim, feat_dim)
        self.head = ImageHead(rng, feat_dim)

    def residual(self, maps: Tensor) -> Tensor:
        for block in self.res:
            maps = block(maps)
        return maps

    def forward(self, prev_maps: Tensor, words: Tensor):
        """Returns ``(image, feature maps at 2× resolution, memory info)``."""
        _, _, H, W = prev_maps.shape
        fused, info = self.memory(to_pixels(prev_maps), words)
        h = self.residual(to_maps(fused, H, W))
        info["pre_upsample"] = h
        h = self.up(h)
        return self.head(h), h, info


@dataclass
class GeneratorOutput:
    images: List[Tensor]
    features: List[Tensor]
    infos: List[dict]
    code: Tensor
    mu: Tensor
    logvar: Tensor


class Generator(Module):
    """Conditioning augmentation, initial stage, and ``n_stages − 1`` refinement stages."""

    def __init__(self, rng, z_dim: int = 16, code_dim: int = 16, word_dim: int = 32, feat_dim: int = 16,
                 mem_dim: int = 32, base_res: int = 16, n_stages: int = 3, g_width: int = 32,
                 n_res: int = 2, key_value: bool = True, write_gate: bool = True,
                 response_gate: bool = True, share_memory: bool = False):
        super().__init__()
        self.ca = ConditioningAugmentation(rng, word_dim, code_dim)
        self.initial = InitialGenerator(rng, z_dim, code_dim, feat_dim, base_res, g_width)
        self.stages = []
        shared = None
        for _ in range(n_stages - 1):
            stage = RefineStage(rng, word_dim, feat_dim, mem_dim, n_res, key_value, write_gate,
                                response_gate, memory=shared)
            if share_memory:
                shared = stage.memory
            self.stages.append(stage)

    def forward(self, z, sentence, words, noise=None, train: bool = True) -> GeneratorOutput:
        code, mu, logvar = self.ca(sentence, noise, train)
        image, maps = self.initial(ad.as_tensor(z), code)
        images, feats, infos = [image], [maps], []
        for stage in self.stages:
            image, maps, info = stage(maps, words)
            images.append(image)
            feats.append(maps)
            infos.append(info)
        return GeneratorOutput(images, feats, infos, code, mu, logvar)


class Discriminator(Module):
    """Stride-2 SN conv stack down to 4×4, an unconditional logit and a sentence-conditioned logit."""

    def __init__(self, rng, resolution: int, cond_dim: int, width: int = 16, max_width: int = 32):
        super().__init__()
        n_down = int(np.log2(resolution // 4))
        if 4 * 2 ** n_down != resolution or n_down < 1:
            raise ValueError(f"discriminator resolution must be 4·2^k (k ≥ 1), got {resolution}")
        self.resolution = resolution
        chans = [3] + [min(width * 2 ** i, max_width) for i in range(n_down)]
        self.downs = [SNConv3x3(rng, chans[i], chans[i + 1], stride=2) for i in range(n_down)]
        c = chans[-1]
        self.uncond = SNLinear(rng, c * 16, 1)
        self.joint = SNConv3x3(rng, c + cond_dim, c)
        self.cond = SNLinear(rng, c * 16, 1)

    def sn_layers(self):
        return [*self.downs, self.uncond, self.joint, self.cond]

    def power_step(self):
        """One power iteration for every spectrally normalised weight."""
        for layer in self.sn_layers():
            layer.power_step()

    def features(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-3:] != (3, self.resolution, self.resolution):
            raise DimensionError(f"expected 3×{self.resolution}×{self.resolution} images, got {x.shape}")
        h = x if x.ndim == 4 else ad.reshape(x, (1,) + x.shape)
        for conv in self.downs:
            h = ad.leaky_relu(conv(h), 0.2)
        return h

    def logits(self, h: Tensor, cond) -> Tuple[Tensor, Tensor]:
        B, C = h.shape[0], h.shape[1]
        cond = ad.as_tensor(cond)
        cond = cond if cond.ndim == 2 else ad.reshape(cond, (1, -1))
        u = ad.reshape(self.uncond(ad.reshape(h, (B, C * 16))), (B,))
        c_map = ad.broadcast_to(ad.reshape(cond, (B, cond.shape[1], 1, 1)), (B, cond.shape[1], 4, 4))
        j = ad.leaky_relu(self.joint(ad.concat([h, c_map], axis=1)), 0.2)
        c = ad.reshape(self.cond(ad.reshape(j, (B, C * 16))), (B,))
        return u, c

    def forward(self, x, cond, update: bool = False) -> Tuple[Tensor, Tensor]:
        """Returns ``(unconditional logits, conditional logits)``, one per image.

        ``update`` first advances every spectral-norm estimate by one power
        step (training); evaluation uses the stored estimates.
        """
        if update:
            self.power_step()
        return self.logits(self.features(x), cond)


class ImageEncoder(Module):
    """Global image embedding for the matching loss and retrieval."""

    def __init__(self, rng, embed_dim: int, width: int = 16, in_res: int = 16):
        super().__init__()
        self.in_res = in_res
        self.conv1 = Conv3x3(rng, 3, width, stride=2)
        self.conv2 = Conv3x3(rng, width, 2 * width, stride=2)
        self.proj = Linear(rng, 2 * width, embed_dim)

    def forward(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        while x.shape[-1] > self.in_res:
            x = ad.avg_pool2x2(x)
        h = ad.leaky_relu(self.conv1(x), 0.2)
        h = ad.leaky_relu(self.conv2(h), 0.2)
        return self.proj(ad.mean(h, axis=(2, 3)))

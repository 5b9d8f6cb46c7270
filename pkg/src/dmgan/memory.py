"""Dynamic key-value memory for image refinement.

Shapes (a leading batch axis B is optional everywhere):

* words ``W``: T×N_w, one row per caption token
* image features ``R``: N×N_r, one row per pixel
* slots ``m``: T×N_m, one per word
* addressing ``alpha``: T×N, column j is a distribution over slots

All 1×1 convolutions are :class:`~dmgan.nn.Linear` maps applied per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Linear, Module


@dataclass
class MemorySlots:
    slots: Tensor
    write_gates: Optional[Tensor] = None  # T (or B×T) values in (0, 1); None for naive writing


def _batched(x: Tensor):
    x = ad.as_tensor(x)
    return (x, False) if x.ndim == 3 else (ad.reshape(x, (1,) + x.shape), True)


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return ad.reshape(x, x.shape[1:]) if squeeze else x


def write_naive(words: Tensor, embed: Linear) -> MemorySlots:
    """m_i = M(w_i)."""
    return MemorySlots(embed(words))


def global_image_feature(features: Tensor) -> Tensor:
    """Mean over pixels, keeping a singleton pixel axis."""
    return ad.mean(features, axis=-2, keepdims=True)


def write_gated(words: Tensor, features: Tensor, word_gate: Linear, image_gate: Linear,
                word_embed: Linear, image_embed: Linear) -> MemorySlots:
    """Blend each word with the global image feature through a scalar gate per word.

    gate_i = sigmoid(A·w_i + B·mean_j r_j)
    m_i = M_w(w_i)·gate_i + M_r(mean_j r_j)·(1 − gate_i)
    """
    words = ad.as_tensor(words)
    r_bar = global_image_feature(features)              # (B,)1×N_r
    gate = ad.sigmoid(word_gate(words) + image_gate(r_bar))  # (B,)T×1
    slots = word_embed(words) * gate + image_embed(r_bar) * (1.0 - gate)
    return MemorySlots(slots, ad.reshape(gate, gate.shape[:-1]))


def address_logits(mem: MemorySlots, features: Tensor, key: Linear) -> Tensor:
    keys, squeeze = _batched(key(mem.slots))             # B×T×N_r
    feats, _ = _batched(features)                        # B×N×N_r
    if keys.shape[0] != feats.shape[0] or keys.shape[2] != feats.shape[2]:
        raise DimensionError(f"keys {keys.shape} incompatible with features {feats.shape}")
    return _unbatch(ad.matmul(keys, ad.transpose(feats, (0, 2, 1))), squeeze)


def key_address(mem: MemorySlots, features: Tensor, key: Linear) -> Tensor:
    """alpha[i, j] = softmax over slots i of <phi_K(m_i), r_j>, per pixel j."""
    return ad.softmax(address_logits(mem, features, key), axis=-2)


def value_read(mem: MemorySlots, alpha: Tensor, value: Linear) -> Tensor:
    """o_j = sum_i alpha[i, j] · phi_V(m_i); returns N×N_r."""
    values, squeeze = _batched(value(mem.slots))
    a, _ = _batched(alpha)
    if a.shape[1] != values.shape[1]:
        raise DimensionError(f"alpha {alpha.shape} has {a.shape[1]} slots, memory has {values.shape[1]}")
    return _unbatch(ad.matmul(ad.transpose(a, (0, 2, 1)), values), squeeze)


def respond_naive(memory_out: Tensor, features: Tensor) -> Tensor:
    """[o_j, r_j] along the channel axis."""
    memory_out, features = ad.as_tensor(memory_out), ad.as_tensor(features)
    if memory_out.shape[:-1] != features.shape[:-1]:
        raise DimensionError(f"pixel count mismatch: {memory_out.shape} vs {features.shape}")
    return ad.concat([memory_out, features], axis=-1)


def response_gate(memory_out: Tensor, features: Tensor, gate: Linear) -> Tensor:
    return ad.sigmoid(gate(respond_naive(memory_out, features)))


def respond_gated(memory_out: Tensor, features: Tensor, gate: Linear) -> Tensor:
    """r_new_j = o_j·g_j + r_j·(1 − g_j), g_j = sigmoid(W·[o_j, r_j] + b)."""
    g = response_gate(memory_out, features, gate)
    return memory_out * g + features * (1.0 - g)


def _ranking(scores: np.ndarray, k: int) -> List[tuple]:
    order = np.argsort(-scores, kind="stable")[:k]
    return [(int(i), float(scores[i])) for i in order]


def top_k_words(alpha, write_gates, k: int = 5) -> Dict[str, List[tuple]]:
    """Rank word indices by write gate and by pixel-averaged addressing weight.

    Both rankings are descending with ties going to the lower index. Returns
    ``{"write_gate_topk": [(idx, score)...], "addressing_topk": [...]}``; the
    write-gate list is empty when the memory was written without gates.
    """
    alpha = np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha, dtype=np.float64)
    T = alpha.shape[0]
    if not 1 <= k <= T:
        raise ad.ContractError(f"k={k} must be in [1, {T}]")
    out = {"write_gate_topk": [], "addressing_topk": _ranking(alpha.mean(axis=1), k)}
    if write_gates is not None:
        gates = np.asarray(write_gates.data if isinstance(write_gates, Tensor) else write_gates,
                           dtype=np.float64).reshape(-1)
        out["write_gate_topk"] = _ranking(gates, k)
    return out


def rankings_to_json(rankings: Dict[str, List[tuple]], tokens: Sequence[str]) -> Dict[str, list]:
    """Replace word indices with the caption's tokens."""
    return {key: [[tokens[i], score] for i, score in items] for key, items in rankings.items()}


class MemoryBlock(Module):
    """Write → address → read → respond, with the ablation switches.

    ``key_value``: separate key and value maps (otherwise one shared map, the
    attention-style baseline). ``write_gate``: gated writing. ``response_gate``:
    gated response (otherwise concatenation fused back to N_r channels by a
    1×1 map so the downstream blocks are identical across variants).
    """

    def __init__(self, rng, word_dim: int, feat_dim: int, mem_dim: int,
                 key_value: bool = True, write_gate: bool = True, response_gate: bool = True):
        super().__init__()
        self.key_value, self.use_write_gate, self.use_response_gate = key_value, write_gate, response_gate
        self.word_embed = Linear(rng, word_dim, mem_dim)
        if write_gate:
            self.word_gate = Linear(rng, word_dim, 1)
            self.image_gate = Linear(rng, feat_dim, 1, bias=False)
            self.image_embed = Linear(rng, feat_dim, mem_dim)
        self.key = Linear(rng, mem_dim, feat_dim)
        self.value = Linear(rng, mem_dim, feat_dim) if key_value else None
        if response_gate:
            self.gate = Linear(rng, 2 * feat_dim, 1)
        else:
            self.fuse = Linear(rng, 2 * feat_dim, feat_dim)

    def write(self, words: Tensor, features: Tensor) -> MemorySlots:
        if self.use_write_gate:
            return write_gated(words, features, self.word_gate, self.image_gate,
                               self.word_embed, self.image_embed)
        return write_naive(words, self.word_embed)

    def forward(self, features: Tensor, words: Tensor):
        """Returns ``(new_features, info)`` where info holds ``alpha`` and ``write_gates``."""
        mem = self.write(words, features)
        alpha = key_address(mem, features, self.key)
        out = value_read(mem, alpha, self.value if self.key_value else self.key)
        if self.use_response_gate:
            new = respond_gated(out, features, self.gate)
        else:
            new = self.fuse(respond_naive(out, features))
        return new, {"alpha": alpha, "write_gates": mem.write_gates, "memory_out": out}

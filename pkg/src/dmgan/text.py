"""Caption encoding: vocabulary, bidirectional GRU encoder, conditioning augmentation."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .nn import Linear, Module, normal_param, weight_param, zeros_param

PAD = "<pad>"


class VocabularyError(KeyError):
    pass


class Vocabulary:
    """Token ↔ id map. Id 0 is always the padding token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: List[str] = [PAD]
        self.token_to_id = {PAD: 0}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    def __len__(self):
        return len(self.id_to_token)

    def encode(self, caption: str) -> List[int]:
        ids = []
        for tok in caption.lower().split():
            if tok not in self.token_to_id:
                raise VocabularyError(f"unknown token {tok!r}")
            ids.append(self.token_to_id[tok])
        return ids

    def decode(self, ids: Sequence[int]) -> List[str]:
        try:
            return [self.id_to_token[i] for i in ids]
        except IndexError as exc:
            raise VocabularyError(f"unknown token id in {list(ids)}") from exc

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != PAD:
            raise VocabularyError(f"{path}: first line must be {PAD!r}")
        return cls(lines[1:])


class GRUCell(Module):
    def __init__(self, rng, n_in: int, n_hidden: int):
        super().__init__()
        self.hidden = n_hidden
        self.w_x = weight_param(rng, (n_in, 3 * n_hidden), n_in)
        self.w_h = weight_param(rng, (n_hidden, 3 * n_hidden), n_hidden)
        self.b = zeros_param((3 * n_hidden,))

    def forward(self, x_proj: Tensor, h: Tensor) -> Tensor:
        """``x_proj`` is the precomputed ``x @ w_x + b`` for this time step."""
        H = self.hidden
        hp = ad.matmul(h, self.w_h)
        z = ad.sigmoid(x_proj[:, :H] + hp[:, :H])
        r = ad.sigmoid(x_proj[:, H:2 * H] + hp[:, H:2 * H])
        n = ad.tanh(x_proj[:, 2 * H:] + r * hp[:, 2 * H:])
        return n + z * (h - n)


class TextEncoder(Module):
    """Word embedding followed by a bidirectional GRU.

    Word feature i is the concatenation of both directions' hidden states at
    token i; the sentence feature concatenates the final state of each
    direction. Output width is ``word_dim`` (half per direction).
    """

    def __init__(self, rng, vocab_size: int, word_dim: int = 32, embed_dim: int = 16, max_len: int = 8):
        super().__init__()
        if word_dim % 2:
            raise ValueError("word_dim must be even (two directions)")
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.embedding = normal_param(rng, (vocab_size, embed_dim), std=1.0)
        self.fwd = GRUCell(rng, embed_dim, word_dim // 2)
        self.bwd = GRUCell(rng, embed_dim, word_dim // 2)

    def _check(self, ids: np.ndarray):
        if ids.ndim != 2 or not 1 <= ids.shape[1] <= self.max_len:
            raise ContractError(f"token count must be in [1, {self.max_len}], got shape {ids.shape}")
        if np.any(ids <= 0) or np.any(ids >= self.vocab_size):
            raise VocabularyError(f"token ids outside [1, {self.vocab_size}): {ids.tolist()}")

    def forward(self, ids) -> Tuple[Tensor, Tensor]:
        """``ids`` is B×T (no padding). Returns words B×T×N_w and sentence B×N_w."""
        ids = np.asarray(ids, dtype=np.int64)
        self._check(ids)
        B, T = ids.shape
        emb = ad.getitem(self.embedding, ids)
        outputs = []
        for cell, order in ((self.fwd, range(T)), (self.bwd, range(T - 1, -1, -1))):
            proj = ad.matmul(emb, cell.w_x) + cell.b
            h = Tensor(np.zeros((B, cell.hidden)))
            states = [None] * T
            for t in order:
                h = cell(proj[:, t, :], h)
                states[t] = h
            outputs.append((states, h))
        (f_states, f_last), (b_states, b_last) = outputs
        words = ad.concat([ad.stack(f_states, axis=1), ad.stack(b_states, axis=1)], axis=2)
        sentence = ad.concat([f_last, b_last], axis=1)
        return words, sentence

    def encode(self, tokens: Sequence[int]) -> Tuple[Tensor, Tensor]:
        """Single caption. Padding ids are dropped so memory only sees real tokens."""
        ids = [int(t) for t in tokens if t != 0]
        words, sentence = self.forward(np.array([ids], dtype=np.int64).reshape(1, -1))
        return words[0], sentence[0]


class ConditioningAugmentation(Module):
    """Two linear heads giving the mean and log-variance of the sentence code."""

    def __init__(self, rng, word_dim: int, code_dim: int):
        super().__init__()
        self.code_dim = code_dim
        self.mu_head = Linear(rng, word_dim, code_dim)
        self.logvar_head = Linear(rng, word_dim, code_dim)

    def forward(self, sentence: Tensor, noise=None, train: bool = True):
        """Returns ``(code, mu, logvar)``. In eval mode, or with no noise, the code is mu."""
        mu = self.mu_head(sentence)
        logvar = self.logvar_head(sentence)
        return condition_augment(mu, logvar, noise, train), mu, logvar


def condition_augment(mu: Tensor, logvar: Tensor, noise=None, train: bool = True) -> Tensor:
    if not train or noise is None:
        return mu
    noise = ad.as_tensor(noise)
    if noise.shape != mu.shape:
        raise ad.DimensionError(f"noise {noise.shape} must match mu {mu.shape}")
    return mu + ad.exp(logvar * 0.5) * noise


def ca_kl_loss(mu, logvar) -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over the code and averaged over any batch axis."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ad.DimensionError(f"mu {mu.shape} vs logvar {logvar.shape}")
    per = (mu * mu + ad.exp(logvar) - logvar - 1.0) * 0.5
    total = ad.sum(per, axis=-1)
    return ad.mean(total) if total.ndim else total

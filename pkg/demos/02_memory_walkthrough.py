"""
One memory read, step by step
=============================

A caption of T words becomes T memory slots. Each image pixel then picks the
slots it needs with a softmax over slots, reads a weighted value, and blends
the result back into its feature.
"""
import numpy as np

from dmgan import autodiff as ad
from dmgan.autodiff import Tensor
from dmgan.memory import MemoryBlock, top_k_words
from dmgan.nn import make_rng

rng = make_rng(0)
T, N, word_dim, feat_dim, mem_dim = 6, 16, 8, 4, 6
words = Tensor(rng.normal(size=(T, word_dim)).astype(np.float32))
features = Tensor(rng.normal(size=(N, feat_dim)).astype(np.float32))   # a 4×4 map, flattened

block = MemoryBlock(rng, word_dim, feat_dim, mem_dim)
with ad.no_grad():
    new, info = block(features, words)

alpha = info["alpha"].data
print("addressing weights, slots × pixels:", alpha.shape)
print("each pixel's weights sum to one:", np.allclose(alpha.sum(axis=0), 1.0))
print("write gates per word:", np.round(info["write_gates"].data, 3))
print("response keeps the feature shape:", new.shape)

# which words would an inspector highlight?
print(top_k_words(alpha, info["write_gates"], k=3))

# the plain variant: shared key/value map, naive write, concat + fuse
plain = MemoryBlock(make_rng(0), word_dim, feat_dim, mem_dim,
                    key_value=False, write_gate=False, response_gate=False)
with ad.no_grad():
    out, info = plain(features, words)
print("plain variant has no write gates:", info["write_gates"] is None, out.shape)

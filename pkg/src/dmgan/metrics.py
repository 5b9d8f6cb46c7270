"""Inception Score, Fréchet distance and R-precision over a pluggable extractor."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .nn import Conv3x3, Linear, Module

PROB_EPS = 1e-12
SYM_TOL = 1e-8
EIG_TOL = 1e-10
FEATURE_MAGIC = b"DMF1"

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "DM-GAN metric report",
    "type": "object",
    "required": ["is_mean", "is_std", "fid", "rp_mean", "rp_std"],
    "properties": {
        "is_mean": {"type": "number", "minimum": 1.0},
        "is_std": {"type": "number", "minimum": 0.0},
        "fid": {"type": "number"},
        "rp_mean": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "rp_std": {"type": "number", "minimum": 0.0},
    },
}


class NumericalError(ArithmeticError):
    pass


# -- Inception Score -------------------------------------------------------

def inception_score(probs, splits: int = 10) -> Tuple[float, float]:
    """exp(E_x KL(p(y|x) || p(y))) per split, then mean and std over splits."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < splits:
        raise ContractError(f"need an M×C matrix with M ≥ {splits}, got {probs.shape}")
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        if np.all(part == part[0]):
            marginal = part[:1]  # exact marginal; rounding in the mean must not leak into the score
        logp = np.log(np.maximum(part, PROB_EPS))
        logm = np.log(np.maximum(marginal, PROB_EPS))
        kl = (part * (logp - logm)).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def format_score(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


# -- Fréchet distance ------------------------------------------------------

@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray


def gaussian_stats(features) -> GaussianStats:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ContractError(f"need at least 2 feature rows, got shape {feats.shape}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (feats.shape[0] - 1)
    return GaussianStats(mu, (sigma + sigma.T) / 2)


def _psd_sqrt(mat: np.ndarray, what: str) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    if w.min() < -EIG_TOL:
        raise NumericalError(f"{what} has eigenvalue {w.min():.3e} < -{EIG_TOL}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((s1 s2)^½) as Tr((s1^½ s2 s1^½)^½), which stays symmetric."""
    root1 = _psd_sqrt(s1, "covariance")
    inner = root1 @ s2 @ root1
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    if w.min() < -EIG_TOL:
        raise NumericalError(f"sqrtm argument has eigenvalue {w.min():.3e} < -{EIG_TOL}")
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid(real: GaussianStats, fake: GaussianStats) -> float:
    mu1, mu2 = np.atleast_1d(real.mu), np.atleast_1d(fake.mu)
    s1, s2 = np.atleast_2d(real.sigma), np.atleast_2d(fake.sigma)
    if mu1.shape != mu2.shape or s1.shape != s2.shape:
        raise ContractError(f"dimension mismatch: {mu1.shape} vs {mu2.shape}")
    for s in (s1, s2):
        if np.max(np.abs(s - s.T)) > SYM_TOL:
            raise ContractError("covariance is not symmetric")
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * _trace_sqrt_product(s1, s2))


def fid_from_features(real_feats, fake_feats) -> float:
    return fid(gaussian_stats(real_feats), gaussian_stats(fake_feats))


# -- R-precision -----------------------------------------------------------

def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def r_precision(image_embs, caption_embs, pool_embs, query_labels=None, pool_labels=None,
                r: int = 1, n_candidates: int = 100, folds: int = 10, seed: int = 0) -> Tuple[float, float]:
    """Caption retrieval from generated images.

    Each query ranks its ``r`` true captions (``caption_embs`` is M×D for
    r=1, else M×r×D) against ``n_candidates − r`` mismatches drawn without
    replacement from ``pool_embs``. With labels, a pool entry is a mismatch
    only if its label differs from the query's. Candidates are shuffled and
    ranked by cosine similarity, descending; ties go to the lower shuffled
    position. Scores are averaged per fold; returns (mean, std) over folds.
    """
    img = _unit_rows(np.asarray(image_embs, dtype=np.float64))
    true = np.asarray(caption_embs, dtype=np.float64)
    true = _unit_rows(true.reshape(true.shape[0], r, -1))
    pool = _unit_rows(np.asarray(pool_embs, dtype=np.float64))
    n_wrong = n_candidates - r
    rng = np.random.Generator(np.random.PCG64(seed))
    scores = np.empty(img.shape[0])
    for i in range(img.shape[0]):
        eligible = np.arange(pool.shape[0])
        if query_labels is not None:
            eligible = eligible[np.asarray(pool_labels) != query_labels[i]]
        if eligible.size < n_wrong:
            raise ContractError(f"mismatch pool has {eligible.size} entries, need {n_wrong}")
        wrong = pool[rng.choice(eligible, size=n_wrong, replace=False)]
        cands = np.concatenate([true[i], wrong])
        relevant = np.zeros(n_candidates, dtype=bool)
        relevant[:r] = True
        perm = rng.permutation(n_candidates)
        cands, relevant = cands[perm], relevant[perm]
        top = np.argsort(-(cands @ img[i]), kind="stable")[:r]
        scores[i] = relevant[top].sum() / r
    per_fold = [chunk.mean() for chunk in np.array_split(scores, folds)]
    return float(np.mean(per_fold)), float(np.std(per_fold))


def fold_sizes(m: int, folds: int = 10):
    return [len(c) for c in np.array_split(np.arange(m), folds)]


# -- feature files and reports -----------------------------------------------

def write_features(path, feats) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ContractError("features must be M×D")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *feats.shape))
        fh.write(feats.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a DMF1 feature file")
    m, d = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != 4 * m * d:
        raise ValueError(f"{path}: expected {m}×{d} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(m, d).copy()


def metric_report(is_mean, is_std, fid_value, rp_mean, rp_std) -> dict:
    return {"is_mean": float(is_mean), "is_std": float(is_std), "fid": float(fid_value),
            "rp_mean": float(rp_mean), "rp_std": float(rp_std)}


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def write_report(path, report: dict) -> None:
    validate_report(report)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- extractors -------------------------------------------------------------

class FeatureExtractor:
    """image batch → (class probabilities M×C, features M×D)."""

    def __call__(self, images) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class ClassifierExtractor(Module, FeatureExtractor):
    """Small CNN classifier; its penultimate activations are the features."""

    def __init__(self, rng, n_classes: int, feat_dim: int = 64, width: int = 16, in_res: int = 16):
        Module.__init__(self)
        self.in_res = in_res
        self.conv1 = Conv3x3(rng, 3, width)
        self.conv2 = Conv3x3(rng, width, 2 * width, stride=2)
        self.conv3 = Conv3x3(rng, 2 * width, 2 * width, stride=2)
        flat = 2 * width * (in_res // 4) ** 2
        self.fc = Linear(rng, flat, feat_dim)
        self.out = Linear(rng, feat_dim, n_classes)

    def logits_and_features(self, images) -> Tuple[Tensor, Tensor]:
        x = ad.as_tensor(images)
        while x.shape[-1] > self.in_res:
            x = ad.avg_pool2x2(x)
        h = ad.leaky_relu(self.conv1(x), 0.2)
        h = ad.leaky_relu(self.conv2(h), 0.2)
        h = ad.leaky_relu(self.conv3(h), 0.2)
        feats = ad.leaky_relu(self.fc(ad.reshape(h, (h.shape[0], -1))), 0.2)
        return self.out(feats), feats

    def __call__(self, images, batch: int = 200):
        probs, feats = [], []
        with ad.no_grad():
            for start in range(0, len(images), batch):
                logits, f = self.logits_and_features(np.asarray(images[start:start + batch]))
                probs.append(ad.softmax(logits, axis=1).data.astype(np.float64))
                feats.append(f.data.astype(np.float64))
        return np.concatenate(probs), np.concatenate(feats)


class FileFeatures(FeatureExtractor):
    """Precomputed features (e.g. from an external Inception network) read from DMF1 files."""

    def __init__(self, feature_path, prob_path: Optional[str] = None):
        self.features = read_features(feature_path)
        self.probs = read_features(prob_path).astype(np.float64) if prob_path else None

    def __call__(self, images=None):
        return self.probs, self.features.astype(np.float64)

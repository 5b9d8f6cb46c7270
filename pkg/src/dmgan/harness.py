"""Training, evaluation, ablation and memory inspection on the synthetic shapes data."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import ContractError, Tensor
from .config import ABLATION_LADDER, TrainConfig
from .data import N_CLASSES, ShapesDataset, build_vocabulary, downsample, gen_dataset
from .memory import rankings_to_json, top_k_words
from .metrics import (ClassifierExtractor, fid_from_features, inception_score, metric_report,
                      r_precision, write_report)
from .networks import Discriminator, Generator, ImageEncoder
from .nn import Module, init_scheme, make_rng
from .objectives import (LossReport, discriminator_from_logits,
                         generator_adv_from_logits, match_loss, total_generator_loss)
from .optim import Adam, AdamConfig, DivergenceError
from .text import TextEncoder, ca_kl_loss

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.dmgk"
ARCH_KEYS = ("word_dim", "feat_dim", "mem_dim", "z_dim", "code_dim", "embed_dim", "g_width",
             "d_width", "enc_width", "max_len", "base_res", "n_stages", "n_res", "memory",
             "write_gate", "response_gate", "share_memory", "data_seed")
TEST_OFFSET = 10_000_000  # test samples come from a disjoint index range of the same seed


class MissingExtractorError(FileNotFoundError):
    pass


# -- models -------------------------------------------------------------------

@dataclass
class Models:
    text_encoder: TextEncoder
    image_encoder: ImageEncoder
    generator: Generator
    discriminators: List[Discriminator]

    def named_modules(self) -> Dict[str, Module]:
        out = {"text": self.text_encoder, "image": self.image_encoder, "gen": self.generator}
        out.update({f"disc{i}": d for i, d in enumerate(self.discriminators)})
        return out


def build_models(cfg: TrainConfig) -> Models:
    rng = make_rng([cfg.seed, 0])
    vocab_size = len(build_vocabulary())
    with init_scheme(cfg.init):
        text = TextEncoder(rng, vocab_size, cfg.word_dim, cfg.embed_dim, cfg.max_len)
        image = ImageEncoder(rng, cfg.word_dim, cfg.enc_width)
        gen = Generator(rng, cfg.z_dim, cfg.code_dim, cfg.word_dim, cfg.feat_dim, cfg.mem_dim,
                        cfg.base_res, cfg.n_stages, cfg.g_width, cfg.n_res, cfg.memory,
                        cfg.write_gate, cfg.response_gate, cfg.share_memory)
    # spectral norm rescales every discriminator weight, so its init scale is moot
    discs = [Discriminator(rng, cfg.base_res * 2 ** i, cfg.word_dim, cfg.d_width)
             for i in range(cfg.n_stages)]
    return Models(text, image, gen, discs)


def _module_entries(prefix: str, module: Module) -> Dict[str, np.ndarray]:
    out = {f"{prefix}.{n}": p.data for n, p in module.named_parameters()}
    out.update({f"{prefix}.buf.{n}": b for n, b in module.named_buffers()})
    return out


def _load_module(prefix: str, module: Module, entries: Dict[str, np.ndarray]):
    for n, p in module.named_parameters():
        key = f"{prefix}.{n}"
        if key not in entries or entries[key].shape != p.shape:
            raise ckpt.CheckpointError(f"checkpoint entry {key} missing or misshaped")
        p.data = entries[key].astype(p.data.dtype).copy()
    for n, b in list(module.named_buffers()):
        module.set_buffer(n, entries[f"{prefix}.buf.{n}"].astype(b.dtype).copy())


def arch_from_entries(entries: Dict[str, np.ndarray]) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for key in ARCH_KEYS:
        v = float(entries[f"arch.{key}"][0])
        kwargs[key] = bool(v) if types[key] in ("bool", bool) else int(v)
    return TrainConfig(**kwargs)


def load_models(path) -> tuple:
    """Rebuild models from a checkpoint; returns ``(models, architecture config)``."""
    entries = ckpt.load(path)
    cfg = arch_from_entries(entries)
    models = build_models(cfg)
    for prefix, module in models.named_modules().items():
        _load_module(prefix, module, entries)
    return models, cfg


# -- training ------------------------------------------------------------------

class Trainer:
    """One G/D/encoder update per batch, fully determined by (config, dataset, step)."""

    def __init__(self, cfg: TrainConfig, data: ShapesDataset, out_dir=None, resume: bool = True):
        if data.images.shape[-1] != cfg.final_res:
            raise ContractError(f"dataset resolution {data.images.shape[-1]} != final stage {cfg.final_res}")
        self.cfg = cfg
        self.data = data
        self.models = build_models(cfg)
        acfg = AdamConfig(cfg.lr, cfg.beta1, cfg.beta2)
        m = self.models
        self.opt_gen = Adam(list(m.generator.named_parameters()), acfg)
        self.opt_disc = [Adam(list(d.named_parameters()), acfg) for d in m.discriminators]
        self.opt_enc = Adam(list(m.text_encoder.named_parameters("text."))
                            + list(m.image_encoder.named_parameters("image.")), acfg)
        self.step_count = 0
        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if resume and (self.out_dir / CHECKPOINT_NAME).exists():
                self.load_state(ckpt.load(self.out_dir / CHECKPOINT_NAME))

    # state --------------------------------------------------------------
    def state(self) -> Dict[str, np.ndarray]:
        cfg = self.cfg
        entries = {f"arch.{k}": np.array([float(getattr(cfg, k))], dtype=np.float32) for k in ARCH_KEYS}
        for prefix, module in self.models.named_modules().items():
            entries.update(_module_entries(prefix, module))
        entries.update(self.opt_gen.state("opt.gen"))
        for i, opt in enumerate(self.opt_disc):
            entries.update(opt.state(f"opt.disc{i}"))
        entries.update(self.opt_enc.state("opt.enc"))
        entries["train.step"] = np.array([self.step_count], dtype=np.float32)
        return entries

    def load_state(self, entries: Dict[str, np.ndarray]):
        for prefix, module in self.models.named_modules().items():
            _load_module(prefix, module, entries)
        self.opt_gen.load_state("opt.gen", entries)
        for i, opt in enumerate(self.opt_disc):
            opt.load_state(f"opt.disc{i}", entries)
        self.opt_enc.load_state("opt.enc", entries)
        self.step_count = int(entries["train.step"][0])

    def save(self, path=None):
        path = path or self.out_dir / CHECKPOINT_NAME
        ckpt.save(path, self.state())
        return path

    # batches --------------------------------------------------------------
    def batch_indices(self, step: int) -> np.ndarray:
        cfg = self.cfg
        epoch, pos = divmod(step, cfg.steps_per_epoch)
        order = make_rng([cfg.seed, 1, epoch]).permutation(len(self.data))
        start = pos * cfg.batch_size
        idx = order[start:start + cfg.batch_size]
        if len(idx) < 2:  # the matching loss needs negatives; borrow from the epoch start
            idx = np.concatenate([idx, order[:2 - len(idx)]])
        return idx

    def step(self) -> LossReport:
        cfg, m = self.cfg, self.models
        s = self.step_count
        idx = self.batch_indices(s)
        real = self.data.images[idx]
        tokens = self.data.tokens[idx]
        B = len(idx)
        rng = make_rng([cfg.seed, 2, s])
        z = Tensor(rng.standard_normal((B, cfg.z_dim)))
        noise = Tensor(rng.standard_normal((B, cfg.code_dim)))

        # text/image encoders on real pairs
        _, sent_enc = m.text_encoder(tokens)
        enc_loss = match_loss(m.image_encoder(real), sent_enc, cfg.gamma)
        if not cfg.freeze_encoder:
            self.opt_enc.zero_grad()
            enc_loss.backward()
            self.opt_enc.step()

        with ad.no_grad():
            words, sent = m.text_encoder(tokens)
        out = m.generator(z, sent, words, noise, train=True)

        d_losses = []
        for i, disc in enumerate(m.discriminators):
            disc.power_step()
            real_i = downsample(real, disc.resolution)
            both = ad.concat([Tensor(real_i), out.images[i].detach()], axis=0)
            cond = ad.concat([sent, sent], axis=0)
            u, c = disc(both, cond)
            wrong = None
            if cfg.mismatch_term:
                wrong = disc(Tensor(real_i), ad.as_tensor(np.roll(sent.data, 1, axis=0)))[1]
            loss = discriminator_from_logits(u[:B], u[B:], c[:B], c[B:], wrong)
            self.opt_disc[i].zero_grad()
            loss.backward()
            self.opt_disc[i].step()
            d_losses.append(loss.item())

        adv = [generator_adv_from_logits(*disc(out.images[i], sent))
               for i, disc in enumerate(m.discriminators)]
        ca = ca_kl_loss(out.mu, out.logvar)
        match = match_loss(m.image_encoder(out.images[-1]), sent, cfg.gamma)
        total = total_generator_loss(adv, ca, match, cfg.lambda_ca, cfg.lambda_match)
        self.opt_gen.zero_grad()
        total.backward()
        self.opt_gen.step()

        report = LossReport(step=s, g_adv=[a.item() for a in adv], d_loss=d_losses,
                            ca_loss=ca.item(), match_loss=match.item(), total=total.item(),
                            encoder_match_loss=enc_loss.item())
        values = report.g_adv + report.d_loss + [report.total, report.encoder_match_loss]
        if not np.all(np.isfinite(values)):
            raise DivergenceError(f"non-finite loss at step {s}: {report.to_json()}")
        self.step_count += 1
        return report

    def run(self, steps: Optional[int] = None, log_path=None) -> List[LossReport]:
        """Train until ``steps`` (default: the config's total) and checkpoint along the way."""
        target = self.cfg.total_steps if steps is None else steps
        log_path = log_path or (self.out_dir / "train_log.jsonl" if self.out_dir else None)
        reports = []
        fh = open(log_path, "a", encoding="utf-8") if log_path else None
        try:
            while self.step_count < target:
                report = self.step()
                reports.append(report)
                if fh:
                    fh.write(report.to_json() + "\n")
                if self.out_dir and self.step_count % self.cfg.checkpoint_every == 0:
                    fh and fh.flush()
                    self.save()
        finally:
            if fh:
                fh.close()
        if self.out_dir:
            self.save()
        return reports


def train(cfg: TrainConfig, data: Optional[ShapesDataset] = None, out_dir=None) -> Trainer:
    data = data if data is not None else gen_dataset(cfg.data_seed, cfg.train_count, cfg.final_res)
    trainer = Trainer(cfg, data, out_dir)
    trainer.run()
    return trainer


# -- extractor -------------------------------------------------------------------

def train_extractor(seed: int = 7, count: int = 2400, resolution: int = 64, steps: int = 1200,
                    batch: int = 32, lr: float = 2e-3, min_accuracy: float = 0.95,
                    path=None) -> ClassifierExtractor:
    """Fit the metric classifier on fresh shapes; raises if held-out accuracy < ``min_accuracy``."""
    rng = make_rng([seed, 0])
    ex = ClassifierExtractor(rng, N_CLASSES, in_res=32)
    data = gen_dataset(seed, count, resolution)
    held = gen_dataset(seed, 960, resolution, start=TEST_OFFSET)
    opt = Adam(list(ex.named_parameters()), AdamConfig(lr=lr, beta1=0.9, beta2=0.999))
    onehot = np.eye(N_CLASSES, dtype=np.float32)
    for s in range(steps):
        idx = make_rng([seed, 1, s]).choice(count, size=batch, replace=False)
        logits, _ = ex.logits_and_features(data.images[idx])
        loss = ad.mean(ad.sum(ad.log_softmax(logits, axis=1) * onehot[data.class_ids[idx]], axis=1)) * -1.0
        opt.zero_grad()
        loss.backward()
        opt.step()
    probs, _ = ex(held.images)
    acc = float((probs.argmax(axis=1) == held.class_ids).mean())
    log.info("extractor held-out accuracy %.4f", acc)
    if acc < min_accuracy:
        raise RuntimeError(f"extractor accuracy {acc:.3f} below {min_accuracy}")
    ex.accuracy = acc
    if path:
        entries = {f"ex.{n}": p.data for n, p in ex.named_parameters()}
        entries["ex.accuracy"] = np.array([acc], dtype=np.float32)
        ckpt.save(path, entries)
    return ex


def load_extractor(path) -> ClassifierExtractor:
    if not path or not Path(path).exists():
        raise MissingExtractorError(
            f"no metric extractor at {path!r}; train one first with "
            f"`dmgan train-extractor --out {path or 'extractor.dmgk'}`")
    entries = ckpt.load(path)
    ex = ClassifierExtractor(make_rng([0, 0]), N_CLASSES, in_res=32)
    for n, p in ex.named_parameters():
        p.data = entries[f"ex.{n}"].copy()
    ex.accuracy = float(entries["ex.accuracy"][0])
    return ex


# -- evaluation --------------------------------------------------------------------

def test_dataset(cfg: TrainConfig, count: int) -> ShapesDataset:
    return gen_dataset(cfg.data_seed, count, cfg.final_res, start=TEST_OFFSET)


def generate(models: Models, tokens: np.ndarray, seed: int = 0, batch: int = 50):
    """Final-stage images for each caption, CA in eval mode."""
    gen_cfg_z = models.generator.initial.fc.weight.shape[0] - models.generator.ca.code_dim
    rng = make_rng([seed, 3])
    images, sentences = [], []
    with ad.no_grad():
        for start in range(0, len(tokens), batch):
            tok = tokens[start:start + batch]
            words, sent = models.text_encoder(tok)
            z = Tensor(rng.standard_normal((len(tok), gen_cfg_z)))
            out = models.generator(z, sent, words, train=False)
            images.append(out.images[-1].data)
            sentences.append(sent.data)
    return np.concatenate(images), np.concatenate(sentences)


def evaluate(models: Models, test: ShapesDataset, extractor, n_samples: int = 2000,
             seed: int = 0, report_path=None, grid_path=None) -> dict:
    """IS and FID through ``extractor``; R-precision through the matching encoders."""
    test = test.subset(np.arange(min(n_samples, len(test))))
    fake, sentences = generate(models, test.tokens, seed)
    probs, fake_feats = extractor(fake)
    _, real_feats = extractor(test.images)
    is_mean, is_std = inception_score(probs, splits=10)
    fid_value = fid_from_features(real_feats, fake_feats)
    with ad.no_grad():
        img_emb = np.concatenate([models.image_encoder(fake[i:i + 200]).data
                                  for i in range(0, len(fake), 200)])
    rp_mean, rp_std = r_precision(img_emb, sentences, sentences, query_labels=test.class_ids,
                                  pool_labels=test.class_ids, seed=seed)
    report = metric_report(is_mean, is_std, fid_value, rp_mean, rp_std)
    if report_path:
        write_report(report_path, report)
    if grid_path:
        save_grid(grid_path, [list(fake[:8])])
    return report


def evaluate_real(test: ShapesDataset, extractor) -> float:
    """FID of the real test images against themselves (sanity floor)."""
    _, feats = extractor(test.images)
    return fid_from_features(feats, feats)


# -- ablation ------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    fid: float
    init_fid: float
    is_mean: float
    rp_mean: float
    fids: List[float]
    init_fids: List[float]
    n_params: int


def ablation_run(cfg: TrainConfig, extractor, seeds: Sequence[int] = (0, 1, 2),
                 n_eval: int = 500, out_dir=None) -> List[AblationRow]:
    """Train and evaluate every ladder variant on identical data and seeds."""
    data = gen_dataset(cfg.data_seed, cfg.train_count, cfg.final_res)
    test = test_dataset(cfg, n_eval)
    rows = []
    for name in ABLATION_LADDER:
        fids, init_fids, iss, rps = [], [], [], []
        n_params = 0
        for seed in seeds:
            vcfg = cfg.variant(name)
            vcfg.seed = seed
            init = evaluate(build_models(vcfg), test, extractor, n_eval, seed=seed)
            t0 = time.time()
            run_dir = Path(out_dir) / f"{name}_seed{seed}" if out_dir else None
            trainer = Trainer(vcfg, data, run_dir, resume=False)
            trainer.run()
            rep = evaluate(trainer.models, test, extractor, n_eval, seed=seed)
            log.info("%s seed %d: fid %.3f (init %.3f) in %.0fs", name, seed, rep["fid"],
                     init["fid"], time.time() - t0)
            fids.append(rep["fid"])
            init_fids.append(init["fid"])
            iss.append(rep["is_mean"])
            rps.append(rep["rp_mean"])
            n_params = trainer.models.generator.num_parameters()
        rows.append(AblationRow(name, float(np.median(fids)), float(np.median(init_fids)),
                                float(np.median(iss)), float(np.median(rps)), fids, init_fids, n_params))
    if out_dir:
        Path(out_dir, "ablation.json").write_text(json.dumps([asdict(r) for r in rows], indent=2))
        Path(out_dir, "ablation.md").write_text(format_ablation(rows))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    lines = ["| Architecture | IS | FID (median) | R-precision | FID at init |",
             "|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r.variant} | {r.is_mean:.2f} | {r.fid:.3f} | {r.rp_mean:.3f} | {r.init_fid:.3f} |")
    return "\n".join(lines) + "\n"


# -- inspection -----------------------------------------------------------------------

def inspect_memory(models: Models, caption: str, k: int = 5, seed: int = 0, max_len: int = 8):
    """Per refinement stage, the top-k words by write gate and by addressing weight."""
    vocab = build_vocabulary()
    ids = vocab.encode(caption)
    if len(ids) > max_len:
        raise ContractError(f"caption has {len(ids)} tokens, limit is {max_len}")
    tokens = np.array([ids], dtype=np.int64)
    rng = make_rng([seed, 4])
    z_dim = models.generator.initial.fc.weight.shape[0] - models.generator.ca.code_dim
    with ad.no_grad():
        words, sent = models.text_encoder(tokens)
        out = models.generator(Tensor(rng.standard_normal((1, z_dim))), sent, words, train=False)
    words_txt = vocab.decode(ids)
    stages, raw = [], []
    for i, info in enumerate(out.infos, start=1):
        gates = info["write_gates"]
        ranking = top_k_words(info["alpha"].data[0], None if gates is None else gates.data[0], k)
        raw.append(ranking)
        entry = {"stage": i}
        entry.update(rankings_to_json(ranking, words_txt))
        stages.append(entry)
    result = {"caption": caption, "tokens": words_txt, "k": k, "stages": stages}
    return result, [im.data[0] for im in out.images], raw


# -- images -----------------------------------------------------------------------------

def save_grid(path, rows: Sequence[Sequence[np.ndarray]], cell: int = 64):
    """Write a PNG grid; each cell is a 3×H×W image in [-1, 1], upscaled to ``cell``."""
    from PIL import Image

    n_rows, n_cols = len(rows), max(len(r) for r in rows)
    canvas = np.zeros((n_rows * cell, n_cols * cell, 3), dtype=np.uint8)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            rep = cell // img.shape[-1]
            px = np.clip((img.transpose(1, 2, 0) + 1) * 127.5, 0, 255).round().astype(np.uint8)
            px = px.repeat(rep, axis=0).repeat(rep, axis=1)
            canvas[i * cell:i * cell + px.shape[0], j * cell:j * cell + px.shape[1]] = px
    Image.fromarray(canvas).save(path)

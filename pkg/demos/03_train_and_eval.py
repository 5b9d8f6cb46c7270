"""
A short training run and its metrics
====================================

Trains the full model for a handful of steps on the synthetic shapes and
reports IS, FID and R-precision. A real run uses ``dmgan train`` with the
default config (one epoch, 480 steps); this one stops early so it finishes in
about a minute.

Needs a metric extractor. Set DMGAN_EXTRACTOR or run
``dmgan train-extractor --out extractor.dmgk`` first.
"""
import os
import sys

from dmgan import harness as H
from dmgan.config import TrainConfig
from dmgan.data import gen_dataset

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 60
out = "runs/demo_train"

cfg = TrainConfig(max_steps=STEPS, checkpoint_every=20)
data = gen_dataset(cfg.data_seed, cfg.train_count, cfg.final_res)
trainer = H.Trainer(cfg, data, out, resume=False)
for rec in trainer.run()[-3:]:
    print(rec.to_json())

extractor = H.load_extractor(os.environ.get("DMGAN_EXTRACTOR", "extractor.dmgk"))
test = H.test_dataset(cfg, 500)
report = H.evaluate(trainer.models, test, extractor, 500, grid_path=f"{out}/samples.png")
print(report)
print("real-vs-real FID floor:", H.evaluate_real(test, extractor))

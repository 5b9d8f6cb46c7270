"""
The four-row ablation
=====================

baseline  : one shared key/value map, naive write, concat + fuse
+M        : separate key and value maps
+M+WG     : plus the gated write
+M+WG+RG  : plus the gated response

All variants see the same data order and seeds. ``--full`` runs the real
budget (3 seeds, 480 steps each, 500 eval samples; roughly half an hour on
one core). Without it, 40 steps and one seed, just to see the table.
"""
import os
import sys

from dmgan import harness as H
from dmgan.config import TrainConfig

full = "--full" in sys.argv
extractor = H.load_extractor(os.environ.get("DMGAN_EXTRACTOR", "extractor.dmgk"))
cfg = TrainConfig() if full else TrainConfig(max_steps=40)
rows = H.ablation_run(cfg, extractor, seeds=(0, 1, 2) if full else (0,),
                      n_eval=500 if full else 200, out_dir="runs/ablation")
print(H.format_ablation(rows))
for r in rows:
    print(r.variant, "per-seed FID", [round(f) for f in r.fids], "generator params", r.n_params)

"""
Which words did the memory use?
===============================

Loads a checkpoint (the one from 03_train_and_eval.py by default) and prints,
for each refinement stage, the five words with the largest write gate and the
five with the largest mean addressing weight.
"""
import sys

from dmgan import harness as H

ckpt = sys.argv[1] if len(sys.argv) > 1 else "runs/demo_train/" + H.CHECKPOINT_NAME
models, cfg = H.load_models(ckpt)

for caption in ("a red circle on a black background", "a blue cross on a white background"):
    result, images, _ = H.inspect_memory(models, caption, k=5, max_len=cfg.max_len)
    print(caption)
    for stage in result["stages"]:
        for key in ("write_gate_topk", "addressing_topk"):
            print(f"  stage {stage['stage']} {key:16s}", " ".join(f"{w}:{s:.3f}" for w, s in stage[key]))
    H.save_grid(f"runs/inspect_{caption.split()[2]}.png", [images])

"""
Training regimes end to end
===========================

Generates a small corpus, pretrains the speech core, then fine-tunes the
joint model both ways: co-training (both sub-networks updated) and the
frozen-speech regime (speech weights untouched, gesture trained with MSE
plus a 0.05-weighted adversarial loss).  Finishes by synthesizing an
utterance from each checkpoint and writing WAV/CSV/BVH outputs.

Takes a couple of minutes on CPU.

Run:  python3 demos/demo_train_and_synthesize.py
"""

import tempfile
from pathlib import Path

import numpy as np

from isg.config import DataConfig, SyntheticConfig
from isg.corpus import generate_synthetic_corpus, prepare_corpus
from isg.synth import synthesize_utterance, write_outputs
from isg.training.checkpoint import load_checkpoint
from isg.training.plan import StageSpec, TrainPlan, save_plan, validate_plan
from isg.training.trainer import run_plan

work = Path(tempfile.mkdtemp(prefix="isg_train_"))
print(f"working under {work}")

manifest = generate_synthetic_corpus(11, 16, SyntheticConfig(), work / "corpus")
prepared = prepare_corpus(manifest, DataConfig(), work / "prepared.jsonl")
print(f"corpus: {len(manifest.entries)} recordings -> "
      f"{len(prepared.entries)} augmented utterances")

plan = TrainPlan(stages=[
    StageSpec(name="pretrain", regime="speech_only",
              corpus=str(work / "prepared.jsonl"), iterations=120,
              batch_size=8, learning_rate=2e-3, eval_interval=40),
    StageSpec(name="ct", regime="isg_ct",
              corpus=str(work / "prepared.jsonl"), iterations=60,
              batch_size=8, learning_rate=1e-3, eval_interval=30,
              checkpoint_in="previous"),
    StageSpec(name="st", regime="isg_st",
              corpus=str(work / "prepared.jsonl"), iterations=60,
              batch_size=8, learning_rate=1e-3, eval_interval=30,
              checkpoint_in="previous"),
])
save_plan(plan, work / "plan.json")
print(f"plan violations: {validate_plan(plan) or 'none'}")

results = run_plan(plan, work / "run")
for r in results:
    last = r.metrics[-1]
    keys = [k for k in ("tts_loss", "gesture_mse", "val_speech_mse",
                        "d_loss") if k in last]
    print(f"stage {r.stage.name:9s}: " +
          "  ".join(f"{k}={last[k]:.4f}" for k in keys))

# the frozen-speech stage must leave the speech core byte-identical
pre, _ = load_checkpoint(results[1].checkpoint_path)   # after co-training
post, _ = load_checkpoint(results[2].checkpoint_path)  # after frozen stage
same = all(pre[k].tobytes() == post[k].tobytes()
           for k in pre if k.startswith("speech_core."))
print(f"\nfrozen-speech stage left the speech core byte-identical: {same}")

for name, ckpt in (("tacotron2-isg-ct", results[1].checkpoint_path),
                   ("tacotron2-isg-st", results[2].checkpoint_path)):
    result = synthesize_utterance(name, ckpt, "bah dee goh", seed=0,
                                  vocoder_iters=8)
    files = write_outputs(result, work / "synth", name)
    motion_ok = np.all(np.isfinite(result.motion.values))
    print(f"{name}: {result.duration_s:.2f}s, motion finite={motion_ok}, "
          f"files={sorted(files['files'].values())}")
print(f"\noutputs under {work / 'synth'}")

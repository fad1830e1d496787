"""Integrated speech and gesture synthesis at desk scale.

Trainable text-to-(speech, motion) models sharing one corpus pipeline:

* an autoregressive seq2seq speech core with a gesture sub-network driven
  by its attention-recurrence states (co-trained or frozen+adversarial),
* a joint normalizing-flow model over concatenated mel+motion frames,
* a sequential speech-then-gesture pipeline baseline,

plus feature extraction, training orchestration, and a benchmark harness.
"""

__version__ = "0.1.0"

from isg.tokens import BREATH_TOKEN, Tokenizer

__all__ = ["BREATH_TOKEN", "Tokenizer", "__version__"]

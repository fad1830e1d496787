from isg.models.speech_core import (
    AttentionStateSequence,
    SpeechCore,
    SpeechOutput,
    encode_text,
    synthesize_speech,
    tts_loss,
)
from isg.models.gesture import (
    GestureDecoder,
    generate_gesture,
    gesture_loss,
    select_attention_frames,
    teacher_forcing_probability,
)
from isg.models.adversarial import SequenceDiscriminator, gan_losses
from isg.models.glow_isg import GlowISG, mas_align, nll_loss
from isg.models.pipeline import AudioGestureFlow, PipelineSynthesizer

__all__ = [
    "AttentionStateSequence",
    "AudioGestureFlow",
    "GestureDecoder",
    "GlowISG",
    "PipelineSynthesizer",
    "SequenceDiscriminator",
    "SpeechCore",
    "SpeechOutput",
    "encode_text",
    "gan_losses",
    "generate_gesture",
    "gesture_loss",
    "mas_align",
    "nll_loss",
    "select_attention_frames",
    "synthesize_speech",
    "teacher_forcing_probability",
    "tts_loss",
]

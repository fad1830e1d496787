from isg.features.mel import (
    MelSpectrogram,
    griffin_lim,
    load_mel,
    mel_filterbank,
    mel_frequencies,
    mel_spectrogram,
    save_mel,
)
from isg.features.motion import (
    MotionSequence,
    audio_energy_envelope,
    gaussian_smooth,
    load_motion_csv,
    resample_motion,
    save_motion_csv,
)
from isg.features.rotations import expmap_to_rotation, rotation_to_expmap
from isg.features.skeleton import (
    Skeleton,
    forward_kinematics,
    parse_bvh,
    toy_skeleton,
    write_bvh,
)

__all__ = [
    "MelSpectrogram",
    "MotionSequence",
    "Skeleton",
    "audio_energy_envelope",
    "expmap_to_rotation",
    "forward_kinematics",
    "gaussian_smooth",
    "griffin_lim",
    "load_mel",
    "load_motion_csv",
    "mel_filterbank",
    "mel_frequencies",
    "mel_spectrogram",
    "parse_bvh",
    "resample_motion",
    "rotation_to_expmap",
    "save_mel",
    "save_motion_csv",
    "toy_skeleton",
    "write_bvh",
]

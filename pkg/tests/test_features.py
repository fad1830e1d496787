"""Feature extraction: mel spectrograms, Griffin-Lim, rotations, motion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isg.config import AudioConfig, flow_audio_config
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
from isg.features.rotations import (
    RotationError,
    expmap_to_rotation,
    rotation_to_expmap,
)


class TestMelSpectrogram:
    def test_silence_hits_log_floor_with_exact_frame_count(self):
        cfg = AudioConfig()
        mel = mel_spectrogram(np.zeros(22050), cfg)
        assert mel.n_frames == 87  # ceil(22050/256)
        assert np.allclose(mel.values, np.log(cfg.log_floor))

    def test_frame_count_is_ceil_len_over_hop(self):
        cfg = AudioConfig()
        for n in (22050, 25600, 1000, 257):
            mel = mel_spectrogram(np.random.default_rng(0).normal(size=n) * 0.1,
                                  cfg)
            assert mel.n_frames == int(np.ceil(n / cfg.hop_length))

    def test_pure_tone_at_bin_center_dominates_that_bin(self):
        cfg = AudioConfig()
        edges = mel_frequencies(cfg.n_mels, cfg.fmin, cfg.fmax)
        target_bin = 20
        freq = edges[target_bin + 1]  # center frequency of bin 20
        t = np.arange(22050) / cfg.sample_rate
        mel = mel_spectrogram(0.5 * np.sin(2 * np.pi * freq * t), cfg)
        # interior frames only: the outermost frames are half padding
        argmax = np.argmax(mel.values[1:-1], axis=1)
        assert np.all(argmax == target_bin)

    def test_fps_hop_sample_rate_relation_exact(self):
        for cfg in (AudioConfig(), flow_audio_config()):
            cfg.validate()
            assert cfg.fps * cfg.hop_length == cfg.sample_rate
        assert flow_audio_config().fps == 60.0

    def test_filterbank_shape_and_nonnegativity(self):
        fb = mel_filterbank(22050, 1024, 80, 0.0, 8000.0)
        assert fb.shape == (80, 513)
        assert fb.min() >= 0.0

    def test_empty_waveform_rejected(self):
        with pytest.raises(ValueError):
            mel_spectrogram(np.zeros(0), AudioConfig())

    def test_save_load_round_trip(self, tmp_path):
        cfg = AudioConfig()
        mel = mel_spectrogram(np.random.default_rng(1).normal(size=5000) * 0.2,
                              cfg)
        save_mel(mel, tmp_path / "x.mel.f32")
        back = load_mel(tmp_path / "x.mel.f32")
        assert np.array_equal(back.values, mel.values)
        assert back.fps == mel.fps and back.sample_rate == mel.sample_rate


class TestGriffinLim:
    def test_tone_reconstruction_recovers_dominant_frequency(self):
        cfg = AudioConfig()
        edges = mel_frequencies(cfg.n_mels, cfg.fmin, cfg.fmax)
        freq = edges[26]
        t = np.arange(22050) / cfg.sample_rate
        mel = mel_spectrogram(0.5 * np.sin(2 * np.pi * freq * t), cfg)
        wave = griffin_lim(mel, n_iters=32, config=cfg, seed=0)
        spectrum = np.abs(np.fft.rfft(wave))
        peak = np.fft.rfftfreq(len(wave), 1 / cfg.sample_rate)[np.argmax(spectrum)]
        bin_width = cfg.sample_rate / cfg.n_fft
        assert abs(peak - freq) <= bin_width

    def test_zero_frames_gives_empty_waveform(self):
        mel = MelSpectrogram(values=np.zeros((0, 80), dtype=np.float32),
                             fps=86.1328125, sample_rate=22050)
        assert len(griffin_lim(mel, n_iters=4)) == 0

    def test_reconstruction_error_non_increasing_in_iterations(self):
        cfg = AudioConfig()
        rng = np.random.default_rng(3)
        wave = rng.normal(size=8192) * 0.1
        mel = mel_spectrogram(wave, cfg)
        errs = []
        for n_iters in (1, 2, 4, 8, 16):
            rec = griffin_lim(mel, n_iters=n_iters, config=cfg, seed=0)
            mel_rec = mel_spectrogram(rec, cfg)
            T = min(mel_rec.n_frames, mel.n_frames)
            errs.append(np.abs(mel_rec.values[:T] - mel.values[:T]).mean())
        for a, b in zip(errs, errs[1:]):
            assert b <= a * (1 + 1e-6) + 1e-9

    def test_deterministic_given_seed(self):
        cfg = AudioConfig()
        mel = mel_spectrogram(np.random.default_rng(4).normal(size=4096) * 0.1,
                              cfg)
        a = griffin_lim(mel, n_iters=4, config=cfg, seed=7)
        b = griffin_lim(mel, n_iters=4, config=cfg, seed=7)
        assert np.array_equal(a, b)


class TestRotations:
    def test_identity_maps_to_zero_vector(self):
        assert np.allclose(rotation_to_expmap(np.eye(3)), 0.0)

    def test_quarter_turn_about_z(self):
        c, s = np.cos(np.pi / 2), np.sin(np.pi / 2)
        R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        v = rotation_to_expmap(R)
        assert np.allclose(v, [0, 0, np.pi / 2], atol=1e-12)

    def test_round_trip_on_1000_random_rotations(self, rng):
        axes = rng.normal(size=(1000, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = rng.uniform(0, np.pi, size=(1000, 1))
        R = expmap_to_rotation(axes * angles)
        back = expmap_to_rotation(rotation_to_expmap(R))
        assert np.abs(R - back).max() < 1e-6

    def test_angles_canonicalized_to_at_most_pi(self, rng):
        axes = rng.normal(size=(200, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = rng.uniform(0, 2 * np.pi, size=(200, 1))
        v = rotation_to_expmap(expmap_to_rotation(axes * angles))
        assert np.linalg.norm(v, axis=1).max() <= np.pi + 1e-9

    def test_near_pi_rotations_round_trip(self):
        for axis in (np.array([1.0, 0, 0]), np.array([0.6, -0.8, 0.0]),
                     np.array([0.36, 0.48, 0.8])):
            for angle in (np.pi, np.pi - 1e-8, np.pi - 1e-5):
                R = expmap_to_rotation(axis * angle)
                back = expmap_to_rotation(rotation_to_expmap(R))
                assert np.abs(R - back).max() < 1e-6

    def test_non_orthonormal_input_rejected(self):
        bad = np.eye(3) * 1.5
        with pytest.raises(RotationError):
            rotation_to_expmap(bad)

    def test_reflection_rejected(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(RotationError):
            rotation_to_expmap(R)


class TestResample:
    def test_identity_at_equal_rates(self, rng):
        m = MotionSequence(rng.normal(size=(30, 4)), 60.0)
        out = resample_motion(m, 60.0)
        assert np.array_equal(out.values, m.values)

    def test_two_frames_upsampled_hits_midpoint(self):
        m = MotionSequence(np.array([[0.0], [1.0]]), 10.0)
        out = resample_motion(m, 20.0)
        assert np.allclose(out.values.ravel(), [0.0, 0.5, 1.0])
        assert out.fps == 20.0

    def test_round_trip_on_linear_ramp_is_exact(self):
        ramp = np.linspace(0.0, 1.0, 61)[:, None]
        m = MotionSequence(ramp, 60.0)
        back = resample_motion(resample_motion(m, 20.0), 60.0)
        assert back.n_frames == 61
        assert np.allclose(back.values, ramp, atol=1e-12)

    def test_duration_preserved_within_one_output_frame(self, rng):
        for n in (5, 6, 50, 121):
            m = MotionSequence(rng.normal(size=(n, 3)), 60.0)
            out = resample_motion(m, 20.0)
            assert abs(out.duration_s - m.duration_s) <= 1 / 20.0 + 1e-12

    def test_single_frame_carries_over(self):
        m = MotionSequence(np.array([[2.5, -1.0]]), 10.0)
        out = resample_motion(m, 20.0)
        assert out.n_frames == 1
        assert np.allclose(out.values, m.values)


class TestGaussianSmooth:
    def test_constant_sequence_unchanged(self):
        m = MotionSequence(np.full((20, 3), 1.7), 20.0)
        out = gaussian_smooth(m, window=3, sigma=1.0)
        assert np.allclose(out.values, 1.7)

    def test_impulse_response_matches_kernel(self):
        m = MotionSequence(np.array([[0.0], [1.0], [0.0]]), 20.0)
        out = gaussian_smooth(m, window=3, sigma=1.0)
        assert np.allclose(out.values.ravel(), [0.274, 0.452, 0.274],
                           atol=1e-3)

    def test_length_preserved_at_stride_1(self, rng):
        m = MotionSequence(rng.normal(size=(100, 5)), 20.0)
        out = gaussian_smooth(m, window=3, sigma=1.0)
        assert out.n_frames == 100

    def test_even_window_rejected(self, rng):
        m = MotionSequence(rng.normal(size=(10, 2)), 20.0)
        with pytest.raises(ValueError):
            gaussian_smooth(m, window=4)

    def test_mean_preserved_for_interior_supported_signal(self, rng):
        values = np.zeros((50, 2))
        values[10:40] = rng.normal(size=(30, 2))
        m = MotionSequence(values, 20.0)
        out = gaussian_smooth(m, window=3, sigma=1.0)
        assert np.allclose(out.values.mean(axis=0), values.mean(axis=0),
                           atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_total_variation_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        m = MotionSequence(rng.normal(size=(rng.integers(3, 40), 2)), 20.0)
        out = gaussian_smooth(m, window=3, sigma=1.0)
        tv_in = np.abs(np.diff(m.values, axis=0)).sum(axis=0)
        tv_out = np.abs(np.diff(out.values, axis=0)).sum(axis=0)
        assert np.all(tv_out <= tv_in + 1e-12)


class TestMotionCsv:
    def test_round_trip_with_joint_names(self, tmp_path, rng):
        names = ("Hips", "Spine")
        m = MotionSequence(rng.normal(size=(12, 6)), 60.0, names)
        save_motion_csv(m, tmp_path / "m.csv")
        back = load_motion_csv(tmp_path / "m.csv", 60.0)
        assert back.joint_names == names
        assert np.allclose(back.values, m.values, atol=1e-7)


class TestEnvelope:
    def test_silence_has_zero_energy(self):
        env = audio_energy_envelope(np.zeros(22050), 22050, 60.0)
        assert np.allclose(env, 0.0)

    def test_louder_segment_has_higher_envelope(self):
        sr = 22050
        y = np.concatenate([0.05 * np.ones(sr), 0.8 * np.ones(sr)])
        env = audio_energy_envelope(y, sr, 20.0)
        assert env[5] < env[35]

import numpy as np
import pytest

from howlsim import (
    AudioBuffer,
    ConfigurationError,
    ExperimentSpec,
    sample_scenes,
    synthesize_speech,
)
from howlsim.audio_io import read_wav, write_wav

FS = 16000.0


def test_speech_shape_and_level(rng):
    x = synthesize_speech(1.5, FS, rng)
    assert x.size == int(1.5 * FS)
    assert np.isfinite(x).all()
    assert np.sqrt(np.mean(x**2)) == pytest.approx(1.0, rel=1e-6)


def test_noise_profile_is_flatter(rng):
    voiced = synthesize_speech(2.0, FS, rng, profile="speech")
    noise = synthesize_speech(2.0, FS, np.random.default_rng(5), profile="noise")
    def flatness(x):
        spec = np.abs(np.fft.rfft(x)) + 1e-12
        return np.exp(np.mean(np.log(spec))) / np.mean(spec)
    assert flatness(noise) > flatness(voiced)


def test_sample_scenes_deterministic():
    spec = ExperimentSpec(scenes=3, seed=11, duration_s=0.8, rir_length_s=0.1,
                          rt60_range=(0.02, 0.05))
    a = sample_scenes(spec)
    b = sample_scenes(spec)
    for sa, sb in zip(a, b):
        assert sa.seed == sb.seed
        assert np.array_equal(sa.target.samples, sb.target.samples)
        assert np.array_equal(sa.rir_loud.taps, sb.rir_loud.taps)
        assert sa.gain == sb.gain and sa.delay_s == sb.delay_s


def test_sampled_parameters_respect_ranges():
    spec = ExperimentSpec(scenes=6, seed=2, duration_s=0.8, rir_length_s=0.2,
                          gain_range=(1.0, 3.0), delay_range=(0.15, 0.25),
                          rt60_range=(0.05, 0.25))
    for scene in sample_scenes(spec):
        assert 1.0 <= scene.gain <= 3.0
        assert 0.15 <= scene.delay_s <= 0.25
        assert 0.05 <= scene.rt60 <= 0.25
        assert scene.rir_near is not None and scene.rir_loud is not None


def test_pinned_gain_overrides_range():
    spec = ExperimentSpec(scenes=3, seed=2, gain=2.5, duration_s=0.8,
                          rir_length_s=0.1, rt60_range=(0.02, 0.05))
    assert all(s.gain == 2.5 for s in sample_scenes(spec))


def test_inverted_range_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentSpec(gain_range=(3.0, 1.0))


def test_wav_directory_speech(tmp_path, rng):
    wav = AudioBuffer(0.4 * np.sin(2 * np.pi * 220 * np.arange(FS) / FS), FS)
    write_wav(tmp_path / "utt.wav", wav)
    spec = ExperimentSpec(scenes=1, seed=0, duration_s=0.5, rir_length_s=0.1,
                          rt60_range=(0.02, 0.05), speech=str(tmp_path))
    scene = sample_scenes(spec)[0]
    assert len(scene.target) == int(0.5 * FS)


def test_wav_directory_rate_mismatch(tmp_path):
    from scipy.io import wavfile

    wavfile.write(tmp_path / "bad.wav", 8000, np.zeros(4000, dtype=np.int16))
    spec = ExperimentSpec(scenes=1, seed=0, duration_s=0.5, rir_length_s=0.1,
                          rt60_range=(0.02, 0.05), speech=str(tmp_path))
    with pytest.raises(ConfigurationError):
        sample_scenes(spec)


def test_wav_round_trip(tmp_path, rng):
    buf = AudioBuffer(np.clip(rng.standard_normal(1000) * 0.1, -0.9, 0.9), FS)
    write_wav(tmp_path / "x.wav", buf)
    back = read_wav(tmp_path / "x.wav")
    assert back.sample_rate == FS
    assert np.abs(back.samples - buf.samples).max() < 1e-4  # 16-bit quantization

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from howlsim import (
    AudioBuffer,
    ConfigurationError,
    DelayLine,
    EmptyInputError,
    FrameConfig,
    Rir,
    ShapeMismatchError,
    StreamingAnalyzer,
    StreamingSynthesizer,
    convolve,
    istft,
    stft,
)

FS = 16000.0


def direct_dft_frame(segment, window, n_bins):
    """Independent oracle: explicit DFT summation of one windowed frame."""
    n = segment.size
    out = np.zeros(n_bins, dtype=complex)
    for k in range(n_bins):
        out[k] = np.sum(window * segment * np.exp(-2j * np.pi * k * np.arange(n) / n))
    return out


def test_audiobuffer_validation():
    with pytest.raises(ValueError):
        AudioBuffer(np.array([0.0, np.nan]), FS)
    with pytest.raises(ConfigurationError):
        AudioBuffer(np.zeros(4), 0.0)
    with pytest.raises(ShapeMismatchError):
        AudioBuffer(np.zeros((2, 2)), FS)
    buf = AudioBuffer(np.zeros(160), FS)
    assert len(buf) == 160 and buf.duration == pytest.approx(0.01)


def test_frame_config_defaults_and_cola():
    cfg = FrameConfig()
    assert cfg.frame_len == 128 and cfg.hop == 64 and cfg.n_bins == 65
    prod = cfg.window * cfg.window
    cola = prod[:64] + prod[64:]
    assert np.ptp(cola) < 1e-9
    assert abs(cfg.cola_gain - 1.0) < 1e-12


def test_frame_config_rejects_bad_overlap():
    with pytest.raises(ConfigurationError):
        FrameConfig(frame_len=128, hop=32, fft_size=128)
    with pytest.raises(ConfigurationError):
        FrameConfig(frame_len=128, hop=64, fft_size=256)
    with pytest.raises(ConfigurationError):
        # a full Hann pair (window product sin^4) is not COLA at 50%
        FrameConfig(window=np.sin(np.pi * np.arange(128) / 128) ** 2)
    # non-unit but constant overlap-add gains are allowed and normalized out
    rect = FrameConfig(window=np.ones(128))
    assert rect.cola_gain == pytest.approx(2.0)


def test_stft_zero_signal():
    cfg = FrameConfig()
    frames = stft(np.zeros(1000), cfg)
    assert frames.shape == (14, 65)
    assert np.all(frames == 0)


def test_stft_too_short():
    cfg = FrameConfig()
    with pytest.raises(EmptyInputError):
        stft(np.zeros(100), cfg)


def test_stft_sinusoid_dominant_bin():
    cfg = FrameConfig()
    k0 = 10
    f = k0 * FS / cfg.fft_size
    t = np.arange(4 * cfg.frame_len) / FS
    x = np.sin(2 * np.pi * f * t)
    frames = stft(x, cfg)
    mags = np.abs(frames[2])
    assert np.argmax(mags) == k0
    # the sqrt-Hann main lobe leaks into the two neighbours
    assert mags[k0] ** 2 > 0.7 * np.sum(mags**2)
    assert np.sum(mags[k0 - 1 : k0 + 2] ** 2) > 0.99 * np.sum(mags**2)


def test_stft_matches_direct_dft(rng):
    cfg = FrameConfig()
    x = rng.standard_normal(cfg.frame_len * 3)
    frames = stft(x, cfg)
    for m in range(frames.shape[0]):
        seg = x[m * cfg.hop : m * cfg.hop + cfg.frame_len]
        oracle = direct_dft_frame(seg, cfg.window, cfg.n_bins)
        assert np.abs(frames[m] - oracle).max() < 1e-10


def test_roundtrip_interior(rng):
    cfg = FrameConfig()
    x = rng.standard_normal(int(FS))
    y = istft(stft(x, cfg), cfg)
    lo, hi = cfg.frame_len, y.size - cfg.frame_len
    assert np.abs(y[lo:hi] - x[lo:hi]).max() < 1e-6


@given(n=st.integers(300, 2000), seed=st.integers(0, 99))
def test_roundtrip_property(n, seed):
    cfg = FrameConfig()
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x, cfg), cfg)
    lo, hi = cfg.frame_len, y.size - cfg.frame_len
    if hi > lo:
        assert np.abs(y[lo:hi] - x[lo:hi]).max() < 1e-6


def test_istft_empty_and_shape_checks():
    cfg = FrameConfig()
    assert istft(np.zeros((0, 65)), cfg).size == 0
    assert istft(np.zeros((0, 65)), cfg, length=10).shape == (10,)
    with pytest.raises(ShapeMismatchError):
        istft(np.zeros((2, 64)), cfg)


def test_istft_single_frame_hand_expansion(rng):
    # one frame synthesizes window * irfft(bins) / cola, by direct expansion
    cfg = FrameConfig()
    bins_ = rng.standard_normal(65) + 1j * rng.standard_normal(65)
    bins_[0] = bins_[0].real
    bins_[-1] = bins_[-1].real
    out = istft(bins_[None, :], cfg)
    expected = cfg.window * np.fft.irfft(bins_, n=cfg.fft_size) / cfg.cola_gain
    assert np.abs(out - expected).max() < 1e-12


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_stft_linearity(a, b, seed):
    cfg = FrameConfig()
    r = np.random.default_rng(seed)
    x = r.standard_normal(cfg.frame_len * 2)
    y = r.standard_normal(cfg.frame_len * 2)
    lhs = stft(a * x + b * y, cfg)
    rhs = a * stft(x, cfg) + b * stft(y, cfg)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_parseval_per_frame(rng):
    cfg = FrameConfig()
    x = rng.standard_normal(cfg.frame_len)
    frame = stft(x, cfg)[0]
    time_energy = np.sum((cfg.window * x) ** 2)
    weights = np.full(cfg.n_bins, 2.0)
    weights[0] = weights[-1] = 1.0
    freq_energy = np.sum(weights * np.abs(frame) ** 2) / cfg.fft_size
    assert abs(time_energy - freq_energy) / time_energy < 1e-6


def test_streaming_analyzer_matches_prepadded_batch(rng):
    cfg = FrameConfig()
    x = rng.standard_normal(cfg.hop * 12)
    analyzer = StreamingAnalyzer(cfg)
    streamed = np.array(
        [analyzer.push(x[m * cfg.hop : (m + 1) * cfg.hop]) for m in range(12)]
    )
    batch = stft(np.concatenate([np.zeros(cfg.hop), x]), cfg)
    assert np.abs(streamed - batch).max() < 1e-12


def test_streaming_synthesizer_matches_batch(rng):
    cfg = FrameConfig()
    frames = rng.standard_normal((8, 65)) + 1j * rng.standard_normal((8, 65))
    frames[:, 0] = frames[:, 0].real
    frames[:, -1] = frames[:, -1].real
    synth = StreamingSynthesizer(cfg)
    hops = [synth.push(f) for f in frames]
    batch = istft(frames, cfg)
    streamed = np.concatenate(hops)
    assert np.abs(streamed - batch[: streamed.size]).max() < 1e-12


def test_convolve_impulse_reproduces_kernel():
    sig = AudioBuffer([1.0, 0.0, 0.0, 0.0], FS)
    rir = Rir([1.0, 0.5], FS)
    out = convolve(sig, rir)
    assert np.allclose(out.samples, [1.0, 0.5, 0.0, 0.0])


def test_convolve_identity(rng):
    x = AudioBuffer(rng.standard_normal(64), FS)
    out = convolve(x, Rir([1.0], FS))
    assert np.abs(out.samples - x.samples).max() < 1e-15


def test_convolve_matches_direct_sum(rng):
    x = rng.standard_normal(32)
    h = rng.standard_normal(8)
    out = convolve(AudioBuffer(x, FS), Rir(h, FS))
    oracle = np.zeros(32)
    for n in range(32):
        for k in range(8):
            if 0 <= n - k < 32:
                oracle[n] += h[k] * x[n - k]
    assert np.abs(out.samples - oracle).max() < 1e-10


def test_convolve_time_invariance(rng):
    x = rng.standard_normal(64)
    h = rng.standard_normal(6)
    shifted = np.zeros(64)
    shifted[5:] = x[:-5]
    y = convolve(AudioBuffer(x, FS), Rir(h, FS)).samples
    y_shifted = convolve(AudioBuffer(shifted, FS), Rir(h, FS)).samples
    assert np.abs(y_shifted[5:] - y[:-5]).max() < 1e-12


def test_convolve_rate_mismatch():
    with pytest.raises(ConfigurationError):
        convolve(AudioBuffer(np.zeros(8), FS), Rir([1.0], 8000.0))
    with pytest.raises(EmptyInputError):
        convolve(AudioBuffer(np.zeros(8), FS), Rir(np.zeros(0), FS))


def test_delay_line_zero_delay(rng):
    line = DelayLine(0)
    x = rng.standard_normal(16)
    assert np.array_equal(line.process(x), x)


def test_delay_line_shift():
    line = DelayLine(3)
    assert np.allclose(line.process([1.0, 2.0, 3.0, 4.0]), [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(line.process([5.0, 6.0]), [2.0, 3.0])


def test_delay_line_mid_range_system_delay():
    # 0.2 s at 16 kHz: an impulse must land exactly 3200 samples later
    d = round(0.2 * FS)
    line = DelayLine(d)
    x = np.zeros(4 * d)
    x[0] = 1.0
    out = np.concatenate([line.process(chunk) for chunk in x.reshape(4, d)])
    assert out[d] == 1.0
    assert np.count_nonzero(out) == 1


@given(delay=st.integers(0, 50), chunk=st.integers(1, 33), seed=st.integers(0, 999))
def test_delay_line_chunking_invariance(delay, chunk, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(200)
    line = DelayLine(delay)
    parts = [line.process(x[i : i + chunk]) for i in range(0, 200, chunk)]
    out = np.concatenate(parts)
    expected = np.concatenate([np.zeros(delay), x])[:200]
    assert np.abs(out - expected).max() == 0.0

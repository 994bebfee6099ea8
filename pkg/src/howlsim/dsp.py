"""STFT analysis/synthesis, convolution, and delay-line primitives.

Conventions used across the package:

* signals are 1-D float64 arrays at a fixed sample rate;
* frame m of a batch spectrogram covers samples [m*hop, m*hop + frame_len);
* spectra are one-sided: a frame is a complex vector of fft_size // 2 + 1
  bins, and a spectrogram is an array of shape (n_frames, n_bins);
* the DC and Nyquist bins of any frame that is about to be synthesized must
  have zero imaginary part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .errors import ConfigurationError, EmptyInputError, ShapeMismatchError


def sqrt_hann_window(length: int) -> np.ndarray:
    """Periodic square-root Hann window.

    Identical analysis/synthesis copies of this window satisfy unit
    constant-overlap-add at 50% overlap (sin^2 + cos^2 = 1).
    """
    return np.sin(np.pi * np.arange(length) / length)


@dataclass(eq=False)
class AudioBuffer:
    """Time-domain signal plus its sample rate.

    Samples are validated to be finite on construction so a corrupted signal
    is an error, never silent garbage flowing downstream.
    """

    samples: np.ndarray
    sample_rate: float = 16000.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeMismatchError("expected a 1-D sample array")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if self.samples.size and not np.isfinite(self.samples).all():
            raise ValueError("signal contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(eq=False)
class FrameConfig:
    """Framing parameters: 8 ms frames, 4 ms hop at 16 kHz by default.

    The hop is pinned to frame_len / 2 (50% overlap) and fft_size to
    frame_len; the window pair is checked for constant overlap-add at
    construction time.
    """

    frame_len: int = 128
    hop: int = 64
    fft_size: int = 128
    window: np.ndarray | None = None

    def __post_init__(self):
        if self.frame_len <= 0 or self.hop <= 0:
            raise ConfigurationError("frame_len and hop must be positive")
        if self.frame_len != 2 * self.hop:
            raise ConfigurationError("50% overlap required: frame_len == 2 * hop")
        if self.fft_size != self.frame_len:
            raise ConfigurationError("fft_size must equal frame_len")
        if self.window is None:
            self.window = sqrt_hann_window(self.frame_len)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (self.frame_len,):
            raise ShapeMismatchError("window length must equal frame_len")
        prod = self.window * self.window  # analysis * synthesis product
        cola = prod[: self.hop] + prod[self.hop :]
        if np.ptp(cola) > 1e-9:
            raise ConfigurationError("window pair violates constant overlap-add")
        self.cola_gain = float(cola.mean())

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def for_sample_rate(cls, sample_rate: float, frame_ms: float = 8.0, hop_ms: float = 4.0):
        frame_len = int(round(sample_rate * frame_ms / 1000.0))
        hop = int(round(sample_rate * hop_ms / 1000.0))
        return cls(frame_len=frame_len, hop=hop, fft_size=frame_len)


def _samples_of(signal) -> np.ndarray:
    return np.asarray(getattr(signal, "samples", signal), dtype=np.float64)


def stft(signal, cfg: FrameConfig) -> np.ndarray:
    """One-sided windowed STFT; returns an (n_frames, n_bins) complex array.

    Frame m covers samples [m*hop, m*hop + frame_len); a trailing partial
    frame is dropped.
    """
    x = _samples_of(signal)
    if x.size < cfg.frame_len:
        raise EmptyInputError(
            f"need at least {cfg.frame_len} samples for one frame, got {x.size}"
        )
    frames = sliding_window_view(x, cfg.frame_len)[:: cfg.hop]
    return np.fft.rfft(frames * cfg.window, n=cfg.fft_size, axis=1)


def istft(frames, cfg: FrameConfig, length: int | None = None) -> np.ndarray:
    """Overlap-add synthesis of a spectrogram back to a time signal.

    Interior samples (at least one frame away from either edge) reconstruct
    the analyzed signal exactly up to floating-point error; edge samples are
    attenuated because they lack an overlap partner.
    """
    frames = np.asarray(frames)
    if frames.size == 0:
        return np.zeros(0 if length is None else length)
    frames = np.atleast_2d(frames)
    if frames.shape[1] != cfg.n_bins:
        raise ShapeMismatchError(
            f"expected {cfg.n_bins} bins per frame, got {frames.shape[1]}"
        )
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.frame_len)
    chunks = np.fft.irfft(frames, n=cfg.fft_size, axis=1) * cfg.window
    for m in range(n_frames):
        out[m * cfg.hop : m * cfg.hop + cfg.frame_len] += chunks[m]
    out /= cfg.cola_gain
    if length is not None:
        if length <= out.size:
            out = out[:length]
        else:
            out = np.pad(out, (0, length - out.size))
    return out


class StreamingAnalyzer:
    """Sliding analysis window fed one hop at a time.

    The first frame sees zero history, so frame m of the stream equals frame
    m of the batch STFT of the zero-prepadded (by one hop) signal.
    """

    def __init__(self, cfg: FrameConfig):
        self.cfg = cfg
        self._buf = np.zeros(cfg.frame_len)

    def push(self, hop_samples) -> np.ndarray:
        x = np.asarray(hop_samples, dtype=np.float64)
        if x.shape != (self.cfg.hop,):
            raise ShapeMismatchError(f"expected a hop of {self.cfg.hop} samples")
        self._buf[: -self.cfg.hop] = self._buf[self.cfg.hop :]
        self._buf[-self.cfg.hop :] = x
        return np.fft.rfft(self._buf * self.cfg.window, n=self.cfg.fft_size)

    def reset(self):
        self._buf[:] = 0.0


class StreamingSynthesizer:
    """Overlap-add synthesis emitting exactly one hop per pushed frame.

    The emitted hop trails the pushed frame by frame_len - hop samples: the
    hop returned for frame m covers the time span [(m-1)*hop, m*hop), which
    is complete once frames m-1 and m have both contributed.  The overlap
    tail is carried as explicit state.
    """

    def __init__(self, cfg: FrameConfig):
        self.cfg = cfg
        self._ola = np.zeros(cfg.frame_len)

    def push(self, frame_bins) -> np.ndarray:
        bins_ = np.asarray(frame_bins)
        if bins_.shape != (self.cfg.n_bins,):
            raise ShapeMismatchError(f"expected {self.cfg.n_bins} bins")
        self._ola += np.fft.irfft(bins_, n=self.cfg.fft_size) * self.cfg.window
        out = self._ola[: self.cfg.hop] / self.cfg.cola_gain
        out = out.copy()
        self._ola[: -self.cfg.hop] = self._ola[self.cfg.hop :]
        self._ola[-self.cfg.hop :] = 0.0
        return out

    def reset(self):
        self._ola[:] = 0.0


def convolve(signal: AudioBuffer, rir) -> AudioBuffer:
    """Causal playback-path convolution, truncated to the input length.

    output[n] = sum_k h[k] * signal[n - k] for n < len(signal).
    """
    taps = np.asarray(rir.taps, dtype=np.float64)
    if taps.size == 0:
        raise EmptyInputError("impulse response has no taps")
    if float(rir.sample_rate) != float(signal.sample_rate):
        raise ConfigurationError(
            f"sample-rate mismatch: signal {signal.sample_rate} Hz vs "
            f"impulse response {rir.sample_rate} Hz"
        )
    x = signal.samples
    y = fftconvolve(x, taps)[: x.size]
    return AudioBuffer(y, signal.sample_rate)


class DelayLine:
    """Pure sample delay: output[n] = input[n - delay], zeros before the stream."""

    def __init__(self, delay: int):
        if delay < 0:
            raise ConfigurationError("delay must be >= 0 samples")
        self.delay = int(delay)
        self._hist = np.zeros(self.delay)

    def process(self, samples) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        if self.delay == 0:
            return x.copy()
        buf = np.concatenate([self._hist, x])
        self._hist = buf[x.size :]
        return buf[: x.size]

    def reset(self):
        self._hist = np.zeros(self.delay)

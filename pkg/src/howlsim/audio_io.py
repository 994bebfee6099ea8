"""WAV interchange: 16-bit PCM mono on disk, float64 in memory."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .dsp import AudioBuffer
from .errors import ConfigurationError


def write_wav(path, buf: AudioBuffer):
    """Write as 16-bit PCM, clipping to [-1, 1)."""
    x = np.clip(buf.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(x * 32768.0).astype(np.int16)
    wavfile.write(path, int(buf.sample_rate), pcm)


def read_wav(path) -> AudioBuffer:
    """Read a mono (or first-channel) WAV; integer formats are rescaled to [-1, 1)."""
    rate, data = wavfile.read(path)
    if data.ndim == 2:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise ConfigurationError(f"unsupported WAV sample format {data.dtype}")
    return AudioBuffer(x, float(rate))

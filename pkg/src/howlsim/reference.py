"""Brute-force per-sample reference simulator.

Re-implements the closed loop with none of the frame-engine machinery: the
playback path is a direct ring-buffer dot product evaluated sample by
sample, spectra come from explicit DFT summation matrices instead of FFTs,
and overlap-add is written out per frame.  Used to cross-check the frame
engine's buffering and timing; hybrid mode (the adaptive canceller) is out
of its scope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import AudioBuffer
from .errors import ConfigurationError
from .loop import HaltInfo, LoopConfig, LoopMode, prepare_scene_signals
from .suppressor import MaskModel, SuppressorKind, suppress


@dataclass(eq=False)
class ReferenceResult:
    estimated: AudioBuffer
    microphone: AudioBuffer
    loudspeaker: AudioBuffer
    target: AudioBuffer
    halt: HaltInfo | None
    frames_emitted: int


def _dft_matrices(cfg):
    n = cfg.fft_size
    bins_ = cfg.n_bins
    k = np.arange(bins_)
    t = np.arange(n)
    forward = np.exp(-2j * np.pi * np.outer(k, t) / n)
    weights = np.full(bins_, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0  # n is even: the last bin is Nyquist
    inverse = (weights[None, :] * np.exp(2j * np.pi * np.outer(t, k) / n)) / n
    return forward, inverse


def run_reference_loop(target: AudioBuffer, rir_pair, cfg: LoopConfig,
                       suppressor: SuppressorKind = SuppressorKind.PASSTHROUGH,
                       model: MaskModel | None = None) -> ReferenceResult:
    if cfg.mode is LoopMode.HYBRID:
        raise ConfigurationError("the per-sample reference covers non-hybrid modes only")
    s, taps, _ = prepare_scene_signals(target, rir_pair, cfg)
    fr = cfg.framing
    hop, flen = fr.hop, fr.frame_len
    fs = target.sample_rate
    delay = cfg.delay_samples(fs)
    forward, inverse = _dft_matrices(fr)
    window = fr.window

    n_frames = s.size // hop
    if cfg.max_frames is not None:
        n_frames = min(n_frames, cfg.max_frames)
    total = n_frames * hop
    s = s[:total]

    k_taps = taps.size
    ring = np.zeros(max(k_taps, 1))
    lag = np.arange(k_taps)

    y = np.zeros(total)
    x = np.zeros(total)
    content = np.zeros(total + hop)  # index == content time; zeros past the front
    ana_mic = np.zeros(flen)
    ana_tgt = np.zeros(flen)
    ana_spk = np.zeros(flen)
    prev_spk_frame = np.zeros(fr.n_bins, dtype=np.complex128)
    ola = np.zeros(flen)
    run = 0
    halt = None
    frames_done = 0

    def process_frame(m, mic_seg, tgt_seg):
        nonlocal prev_spk_frame
        ana_mic[:hop] = ana_mic[hop:]
        ana_mic[hop:] = mic_seg
        ana_tgt[:hop] = ana_tgt[hop:]
        ana_tgt[hop:] = tgt_seg
        mic_frame = forward @ (window * ana_mic)
        tgt_frame = forward @ (window * ana_tgt)
        if cfg.mode is LoopMode.NO_AHS:
            est_frame = mic_frame.copy()
        else:
            est_frame = suppress(
                suppressor, mic_frame, prev_spk_frame,
                target_frame=tgt_frame if suppressor is SuppressorKind.ORACLE_MASK else None,
                model=model, oracle_cap=cfg.oracle_cap,
            )
        ola[:] += window * np.real(inverse @ est_frame)
        emitted = ola[:hop] / fr.cola_gain
        out = emitted.copy()
        ola[:-hop] = ola[hop:]
        ola[-hop:] = 0.0
        if m >= 1:
            content[(m - 1) * hop : m * hop] = out

    for n in range(total):
        m = n // hop
        src = content[n - delay] if n >= delay else 0.0
        if cfg.mode is LoopMode.TEACHER_FORCED:
            src = s[n - delay] if n >= delay else 0.0
        xn = cfg.gain * src
        if cfg.clip_loudspeaker:
            xn = float(np.clip(xn, -1.0, 1.0))
        x[n] = xn
        if k_taps:
            ring[n % k_taps] = xn
            if n >= k_taps - 1:
                playback = float(np.dot(taps, ring[(n - lag) % k_taps]))
            else:
                playback = float(np.dot(taps[: n + 1], ring[(n - lag[: n + 1]) % k_taps]))
        else:
            playback = 0.0
        yn = s[n] + playback
        if not np.isfinite(yn) or abs(yn) > cfg.overflow_limit:
            halt = HaltInfo(m, n, "overflow")
            break
        y[n] = yn
        if cfg.detector.enabled:
            if abs(yn) > cfg.detector.amplitude_threshold:
                run += 1
                if run >= cfg.detector.consecutive_samples:
                    halt = HaltInfo(m, n, "howling")
                    break
            else:
                run = 0
        if (n + 1) % hop == 0:
            ana_spk[:hop] = ana_spk[hop:]
            ana_spk[hop:] = x[n + 1 - hop : n + 1]
            spk_frame = forward @ (window * ana_spk)
            process_frame(m, y[n + 1 - hop : n + 1], s[n + 1 - hop : n + 1])
            prev_spk_frame = spk_frame
            frames_done = m + 1

    if halt is None:
        process_frame(frames_done, np.zeros(hop), np.zeros(hop))  # tail flush
        emitted_hops = frames_done
    else:
        emitted_hops = max(halt.frame_index - 1, 0)
        frames_done = halt.frame_index
    length = emitted_hops * hop
    return ReferenceResult(
        estimated=AudioBuffer(content[:length].copy(), fs),
        microphone=AudioBuffer(y[:length].copy(), fs),
        loudspeaker=AudioBuffer(x[:length].copy(), fs),
        target=AudioBuffer(s[:length].copy(), fs),
        halt=halt,
        frames_emitted=frames_done,
    )

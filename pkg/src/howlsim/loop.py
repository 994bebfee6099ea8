"""Closed-loop streaming engine: microphone formation, suppression, delayed
amplification, playback convolution, reference routing, howling detection.

Timing layout (hop h, frame length 2h).  At step m the engine:

1. materializes the loudspeaker hop x[mh:(m+1)h) = G * shat[n - D] from
   already-emitted estimate samples (the system delay D >= 2h supplies the
   causality, absorbing the one-hop synthesis latency);
2. adds the playback tail of x through the coupling path to the target
   speech hop, giving the microphone hop y[mh:(m+1)h);
3. scans the new hop for howling and overflow;
4. analyzes frame m (the last two hops of y), routes the reference frame
   for the configured mode, and runs the suppressor;
5. overlap-adds one completed hop of the estimate, shat[(m-1)h:mh).

The emitted estimate stream is content-aligned with the target speech: a
perfect suppressor reproduces the near-end speech sample for sample, and
x[n] = G * shat[n - D] holds exactly with zero history before the stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .dsp import (
    AudioBuffer,
    DelayLine,
    FrameConfig,
    StreamingAnalyzer,
    StreamingSynthesizer,
    convolve,
)
from .errors import ConfigurationError, EmptyInputError
from .kalman import FrequencyDomainKalman, KalmanConfig
from .rir import Rir
from .suppressor import MaskModel, SuppressorKind, suppress


class LoopMode(Enum):
    NO_AHS = "no-ahs"
    NN_ONLY = "nn-only"
    HYBRID = "hybrid"
    TEACHER_FORCED = "teacher-forced"


@dataclass
class HowlingDetectorConfig:
    """Run-length amplitude test on the microphone stream."""

    amplitude_threshold: float = 0.99
    consecutive_samples: int = 100
    enabled: bool = True

    def __post_init__(self):
        if self.amplitude_threshold <= 0:
            raise ConfigurationError("amplitude_threshold must be positive")
        if self.consecutive_samples < 1:
            raise ConfigurationError("consecutive_samples must be >= 1")


class HowlingDetector:
    """Counts consecutive above-threshold samples, persisting across hops."""

    def __init__(self, cfg: HowlingDetectorConfig | None = None):
        self.cfg = cfg or HowlingDetectorConfig()
        self.run = 0

    def scan(self, samples) -> int | None:
        """Returns the in-chunk index of the sample completing the required
        run, or None.  The carried run length is updated either way."""
        if not self.cfg.enabled:
            return None
        x = np.abs(np.asarray(samples, dtype=np.float64))
        n = x.size
        if n == 0:
            return None
        above = x > self.cfg.amplitude_threshold
        idx = np.arange(n)
        last_false = np.maximum.accumulate(np.where(above, -(1 + self.run), idx))
        runs = np.where(above, idx - last_false, 0)
        hits = np.flatnonzero(runs >= self.cfg.consecutive_samples)
        self.run = int(runs[-1])
        return int(hits[0]) if hits.size else None

    def reset(self):
        self.run = 0


def detect_howling(samples, detector: HowlingDetector):
    """Functional wrapper around HowlingDetector.scan."""
    index = detector.scan(samples)
    return index is not None, index, detector


@dataclass
class LoopConfig:
    """Closed-loop session parameters."""

    gain: float = 2.0
    delay_s: float = 0.2
    mode: LoopMode = LoopMode.NO_AHS
    detector: HowlingDetectorConfig = field(default_factory=HowlingDetectorConfig)
    framing: FrameConfig = field(default_factory=FrameConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    max_frames: int | None = None
    speech_rms: float | None = 0.05  # near-end level at the mic; None keeps input scale
    normalize_coupling: bool = True  # scale the coupling path to unit peak gain
    clip_loudspeaker: bool = False  # optional amplifier saturation at +-1
    overflow_limit: float = 1e9  # |mic| beyond this is an overflow halt
    oracle_cap: float | None = None  # magnitude cap of the in-loop oracle mask

    def __post_init__(self):
        if not 0.0 <= self.gain <= 10.0:
            raise ConfigurationError("gain must lie in [0, 10]")
        if self.delay_s <= 0:
            raise ConfigurationError("delay_s must be positive")
        if self.overflow_limit <= 0:
            raise ConfigurationError("overflow_limit must be positive")

    def delay_samples(self, sample_rate: float) -> int:
        d = int(round(self.delay_s * sample_rate))
        if d < self.framing.frame_len:
            raise ConfigurationError(
                f"system delay of {d} samples is below one frame "
                f"({self.framing.frame_len}); the loop needs a frame of causality"
            )
        return d


@dataclass
class HaltInfo:
    frame_index: int
    sample_index: int  # index in the untrimmed microphone stream
    reason: str  # "howling" or "overflow"


@dataclass(eq=False)
class SessionResult:
    """Everything a closed-loop run produced, trimmed to the emitted prefix."""

    estimated: AudioBuffer
    microphone: AudioBuffer
    loudspeaker: AudioBuffer
    target: AudioBuffer
    halt: HaltInfo | None
    frames_emitted: int
    gain: float
    delay_s: float
    mode: LoopMode
    suppressor: SuppressorKind
    rir_applied: Rir | None = None
    traces: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def halted(self) -> bool:
        return self.halt is not None


_VALID_WIRING = {
    LoopMode.NO_AHS: {SuppressorKind.PASSTHROUGH},
    LoopMode.NN_ONLY: {SuppressorKind.PASSTHROUGH, SuppressorKind.ORACLE_MASK,
                       SuppressorKind.TRAINED_MASK},
    LoopMode.TEACHER_FORCED: {SuppressorKind.PASSTHROUGH, SuppressorKind.ORACLE_MASK,
                              SuppressorKind.TRAINED_MASK},
    LoopMode.HYBRID: {SuppressorKind.PASSTHROUGH, SuppressorKind.KALMAN_ONLY,
                      SuppressorKind.ORACLE_MASK, SuppressorKind.TRAINED_MASK},
}


def prepare_scene_signals(target: AudioBuffer, rir_pair, cfg: LoopConfig):
    """Scene construction: near-end speech at the mic plus the applied path.

    The target is convolved with the near-end response (when given) and
    normalized to cfg.speech_rms; the loudspeaker response is scaled to unit
    peak frequency-domain gain so the amplifier gain maps directly onto the
    loop-gain margin.  Returns (near_end_speech, coupling_taps, info).
    """
    near, loud = rir_pair
    info = {}
    if near is not None:
        s = convolve(target, near).samples
    else:
        s = target.samples.astype(np.float64).copy()
    if cfg.speech_rms is not None:
        rms = float(np.sqrt(np.mean(s**2))) if s.size else 0.0
        scale = cfg.speech_rms / rms if rms > 0 else 1.0
        s = s * scale
        info["speech_scale"] = scale

    if loud is None:
        taps = np.zeros(1)
    else:
        if float(loud.sample_rate) != float(target.sample_rate):
            raise ConfigurationError("coupling path sample rate differs from the target")
        taps = np.asarray(loud.taps, dtype=np.float64).copy()
    if cfg.normalize_coupling and taps.size:
        n_fft = 1 << max(12, int(np.ceil(np.log2(max(taps.size, 2)))))
        peak = float(np.abs(np.fft.rfft(taps, n=n_fft)).max())
        if peak > 0:
            taps = taps / peak
            info["coupling_scale"] = 1.0 / peak
    return s, taps, info


class LoopSession:
    """Single-owner state machine driving one closed-loop run."""

    def __init__(self, cfg: LoopConfig, coupling_taps, sample_rate: float,
                 suppressor: SuppressorKind = SuppressorKind.PASSTHROUGH,
                 model: MaskModel | None = None, record_traces: bool = False):
        if suppressor not in _VALID_WIRING[cfg.mode]:
            raise ConfigurationError(
                f"suppressor {suppressor.value!r} is not valid in mode {cfg.mode.value!r}"
            )
        if suppressor is SuppressorKind.TRAINED_MASK and model is None:
            raise ConfigurationError("trained suppression needs a mask model")
        self.cfg = cfg
        self.kind = suppressor
        self.model = model
        self.sample_rate = float(sample_rate)
        self.record_traces = record_traces

        fr = cfg.framing
        self.hop = fr.hop
        self.delay = cfg.delay_samples(sample_rate)

        taps = np.asarray(coupling_taps, dtype=np.float64)
        if taps.size < 2:  # lfilter wants at least one state sample
            taps = np.concatenate([taps, np.zeros(2 - taps.size)])
        self._taps = taps
        self._zi = np.zeros(taps.size - 1)

        if cfg.mode is LoopMode.TEACHER_FORCED:
            self._delay_line = DelayLine(self.delay)
        else:
            self._delay_line = DelayLine(self.delay - fr.frame_len)
        self._last_emitted = np.zeros(self.hop)

        self._an_mic = StreamingAnalyzer(fr)
        self._an_spk = StreamingAnalyzer(fr)
        self._an_tgt = StreamingAnalyzer(fr)
        self._synth = StreamingSynthesizer(fr)
        self._prev_spk_frame = np.zeros(fr.n_bins, dtype=np.complex128)

        self.kalman = None
        self._an_err = None
        if cfg.mode is LoopMode.HYBRID:
            self.kalman = FrequencyDomainKalman(fr, cfg.kalman)
            self._an_err = StreamingAnalyzer(fr)

        self.detector = HowlingDetector(cfg.detector)
        self.frame_index = 0
        self.halt: HaltInfo | None = None
        self._mic_hops: list[np.ndarray] = []
        self._spk_hops: list[np.ndarray] = []
        self._tgt_hops: list[np.ndarray] = []
        self._est_hops: list[np.ndarray] = []
        self._traces: dict[str, list] = {
            "mic": [], "reference": [], "estimated": [], "target": [],
            "playback_estimate": [],
        }

    @property
    def halted(self) -> bool:
        return self.halt is not None

    def _halt(self, reason: str, sample_index: int):
        self.halt = HaltInfo(self.frame_index, sample_index, reason)

    def _suppress_frame(self, mic_frame, ref_frame, tgt_frame):
        if self.cfg.mode is LoopMode.NO_AHS:
            return mic_frame.copy()
        return suppress(
            self.kind, mic_frame, ref_frame,
            target_frame=tgt_frame if self.kind is SuppressorKind.ORACLE_MASK else None,
            model=self.model, oracle_cap=self.cfg.oracle_cap,
        )

    def step(self, target_hop) -> np.ndarray | None:
        """Advance one hop; returns the emitted estimate hop (None while the
        stream has produced no completed content yet, or on halt)."""
        if self.halted:
            raise RuntimeError("session already halted; no further frames")
        s_hop = np.asarray(target_hop, dtype=np.float64)
        if s_hop.shape != (self.hop,):
            raise ConfigurationError(f"expected a target hop of {self.hop} samples")
        m = self.frame_index

        if self.cfg.mode is LoopMode.TEACHER_FORCED:
            x_hop = self.cfg.gain * self._delay_line.process(s_hop)
        else:
            x_hop = self.cfg.gain * self._delay_line.process(self._last_emitted)
        if self.cfg.clip_loudspeaker:
            np.clip(x_hop, -1.0, 1.0, out=x_hop)

        playback, self._zi = lfilter(self._taps, [1.0], x_hop, zi=self._zi)
        y_hop = s_hop + playback

        finite = np.isfinite(y_hop).all()
        if not finite or np.abs(y_hop).max() > self.cfg.overflow_limit:
            bad = (
                np.flatnonzero(~np.isfinite(y_hop))[0]
                if not finite
                else np.flatnonzero(np.abs(y_hop) > self.cfg.overflow_limit)[0]
            )
            self._halt("overflow", m * self.hop + int(bad))
            return None
        hit = self.detector.scan(y_hop)
        if hit is not None:
            self._halt("howling", m * self.hop + hit)
            return None

        mic_frame = self._an_mic.push(y_hop)
        spk_frame = self._an_spk.push(x_hop)
        tgt_frame = self._an_tgt.push(s_hop)

        if self.cfg.mode is LoopMode.HYBRID:
            d_hat_hop, e_hop = self.kalman.step(y_hop, x_hop)
            ref_frame = self._an_err.push(e_hop)
        elif self.cfg.mode is LoopMode.NO_AHS:
            ref_frame = np.zeros_like(mic_frame)
        else:  # nn-only and teacher-forced use the previous loudspeaker frame
            ref_frame = self._prev_spk_frame

        est_frame = self._suppress_frame(mic_frame, ref_frame, tgt_frame)
        emitted = self._synth.push(est_frame)
        if m >= 1 and not np.isfinite(emitted).all():
            self._halt("overflow", m * self.hop)
            return None

        if self.record_traces:
            self._traces["mic"].append(mic_frame)
            self._traces["reference"].append(ref_frame)
            self._traces["estimated"].append(est_frame)
            self._traces["target"].append(tgt_frame)
            if self.cfg.mode is LoopMode.HYBRID:
                self._traces["playback_estimate"].append(mic_frame - ref_frame)

        self._mic_hops.append(y_hop)
        self._spk_hops.append(x_hop)
        self._tgt_hops.append(s_hop)
        self._prev_spk_frame = spk_frame
        self.frame_index = m + 1
        if m >= 1:
            self._est_hops.append(emitted)
            self._last_emitted = emitted
            return emitted
        return None

    def flush(self) -> np.ndarray | None:
        """Complete the final estimate hop with a zero-padded analysis frame.

        Only valid on a session that ran to the end of its target; a halted
        session keeps its emitted prefix untouched.
        """
        if self.halted or self.frame_index == 0:
            return None
        zeros = np.zeros(self.hop)
        mic_frame = self._an_mic.push(zeros)
        tgt_frame = self._an_tgt.push(zeros)
        if self.cfg.mode is LoopMode.HYBRID:
            ref_frame = self._an_err.push(zeros)
        elif self.cfg.mode is LoopMode.NO_AHS:
            ref_frame = np.zeros_like(mic_frame)
        else:
            ref_frame = self._prev_spk_frame
        est_frame = self._suppress_frame(mic_frame, ref_frame, tgt_frame)
        emitted = self._synth.push(est_frame)
        if not np.isfinite(emitted).all():
            self._halt("overflow", self.frame_index * self.hop)
            return None
        self._est_hops.append(emitted)
        return emitted

    def _stack_traces(self):
        if not self.record_traces:
            return None
        n_bins = self.cfg.framing.n_bins
        out = {}
        for key, rows in self._traces.items():
            if key == "playback_estimate" and self.cfg.mode is not LoopMode.HYBRID:
                continue
            out[key] = (
                np.array(rows) if rows else np.zeros((0, n_bins), dtype=np.complex128)
            )
        return out

    def result(self, rir_applied: Rir | None = None, meta: dict | None = None) -> SessionResult:
        """Assemble trimmed, mutually consistent session buffers."""
        n_hops = len(self._est_hops)
        length = n_hops * self.hop

        def cat(hops, n):
            return (
                np.concatenate(hops[:n]) if n > 0 else np.zeros(0)
            )

        return SessionResult(
            estimated=AudioBuffer(cat(self._est_hops, n_hops), self.sample_rate),
            microphone=AudioBuffer(cat(self._mic_hops, n_hops), self.sample_rate),
            loudspeaker=AudioBuffer(cat(self._spk_hops, n_hops), self.sample_rate),
            target=AudioBuffer(cat(self._tgt_hops, n_hops), self.sample_rate),
            halt=self.halt,
            frames_emitted=self.frame_index,
            gain=self.cfg.gain,
            delay_s=self.cfg.delay_s,
            mode=self.cfg.mode,
            suppressor=self.kind,
            rir_applied=rir_applied,
            traces=self._stack_traces(),
            meta=dict(meta or {}, length_samples=length),
        )


def run_closed_loop(target: AudioBuffer, rir_pair, cfg: LoopConfig,
                    suppressor: SuppressorKind = SuppressorKind.PASSTHROUGH,
                    model: MaskModel | None = None, record_traces: bool = False,
                    meta: dict | None = None) -> SessionResult:
    """Drive a full closed-loop session over the target utterance.

    rir_pair is (near_end_rir, loudspeaker_rir); either may be None (the
    target is then used at the mic directly / the coupling path is zero).
    Deterministic: identical inputs give identical results.
    """
    s, taps, info = prepare_scene_signals(target, rir_pair, cfg)
    hop = cfg.framing.hop
    n_frames = s.size // hop
    if cfg.max_frames is not None:
        n_frames = min(n_frames, cfg.max_frames)
    if n_frames * hop < cfg.framing.frame_len:
        raise EmptyInputError("target shorter than one frame")

    session = LoopSession(cfg, taps, target.sample_rate, suppressor, model,
                          record_traces=record_traces)
    for m in range(n_frames):
        session.step(s[m * hop : (m + 1) * hop])
        if session.halted:
            break
    if not session.halted:
        session.flush()

    applied = Rir(taps, target.sample_rate) if np.any(taps) else None
    merged = dict(meta or {})
    merged.update(info)
    return session.result(rir_applied=applied, meta=merged)

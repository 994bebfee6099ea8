"""Scene sampling and the built-in synthetic speech generator.

A scene bundles everything one closed-loop run needs: an utterance, a room
impulse-response pair, an amplifier gain, and a system delay, all drawn
deterministically from a single experiment seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer
from .errors import ConfigurationError
from .loop import (
    HowlingDetectorConfig,
    LoopConfig,
    LoopMode,
    SessionResult,
    run_closed_loop,
)
from .rir import Rir, RoomSpec, generate_rir_pair
from .suppressor import MaskModel, SuppressorKind


@dataclass
class ExperimentSpec:
    """Reproducible description of a batch of scenes."""

    mode: LoopMode = LoopMode.NO_AHS
    suppressor: SuppressorKind = SuppressorKind.PASSTHROUGH
    scenes: int = 5
    gain: float | None = None  # pin the gain; None samples gain_range
    gain_range: tuple[float, float] = (1.0, 3.0)
    delay_range: tuple[float, float] = (0.15, 0.25)
    rt60_range: tuple[float, float] = (0.0, 0.6)
    room_range: tuple[float, float] = (3.0, 8.0)  # per-dimension meters
    duration_s: float = 3.0
    rir_length_s: float = 0.4
    sample_rate: float = 16000.0
    speech: str = "synthetic"  # "synthetic", "noise", or a WAV directory
    seed: int = 0
    hd: bool = True
    jobs: int = 1

    def __post_init__(self):
        for name, rng_ in (("gain_range", self.gain_range),
                           ("delay_range", self.delay_range),
                           ("rt60_range", self.rt60_range),
                           ("room_range", self.room_range)):
            lo, hi = rng_
            if lo > hi:
                raise ConfigurationError(f"{name} is inverted: {rng_}")
        if self.scenes < 0:
            raise ConfigurationError("scene count must be >= 0")
        if self.duration_s <= 0:
            raise ConfigurationError("duration must be positive")


@dataclass(eq=False)
class Scene:
    index: int
    seed: int
    target: AudioBuffer
    rir_near: Rir | None
    rir_loud: Rir | None
    gain: float
    delay_s: float
    rt60: float
    room: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def synthesize_speech(duration_s: float, sample_rate: float,
                      rng: np.random.Generator, profile: str = "speech") -> np.ndarray:
    """Self-contained test utterance, unit RMS.

    "speech": amplitude-modulated harmonic segments (drifting pitch, two
    formant bumps) alternating with noise bursts and near-silent gaps.
    "noise": amplitude-modulated white noise only, for spectrally flat
    material.  A low broadband floor keeps every bin weakly excited.
    """
    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg_len = min(int(rng.uniform(0.15, 0.35) * sample_rate), n - pos)
        if seg_len < 32:
            break
        t = np.arange(seg_len) / sample_rate
        if profile == "noise":
            kind = "noise"
        else:
            kind = rng.choice(["voiced", "noise", "pause"], p=[0.6, 0.25, 0.15])
        if kind == "voiced":
            f0 = rng.uniform(90.0, 220.0)
            drift = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(2.0, 6.0) * t)
            phase0 = 2.0 * np.pi * np.cumsum(f0 * drift) / sample_rate
            formants = rng.uniform([300.0, 1200.0], [900.0, 2600.0])
            seg = np.zeros(seg_len)
            k = 1
            while k * f0 < 4000.0:
                fk = k * f0
                boost = 1.0 + 2.0 * np.exp(-((fk - formants[0]) / 250.0) ** 2)
                boost += 1.5 * np.exp(-((fk - formants[1]) / 400.0) ** 2)
                seg += (boost / k**0.8) * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
                k += 1
            am = 1.0 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(2.0, 8.0) * t)
            seg *= am
        elif kind == "noise":
            seg = rng.standard_normal(seg_len)
            seg *= 0.8 + 0.4 * np.sin(2.0 * np.pi * rng.uniform(1.0, 6.0) * t)
        else:
            seg = np.zeros(seg_len)
        ramp = min(int(0.02 * sample_rate), seg_len // 2)
        if ramp > 0:
            env = np.ones(seg_len)
            env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
            env[-ramp:] = env[:ramp][::-1]
            seg *= env
        peak = np.abs(seg).max()
        if peak > 0:
            seg = seg / peak * rng.uniform(0.6, 1.0)
        out[pos : pos + seg_len] = seg
        pos += seg_len
    out += 1e-3 * rng.standard_normal(n)  # broadband floor
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _load_wav_utterance(directory: str, rng: np.random.Generator,
                        spec: ExperimentSpec) -> np.ndarray:
    from .audio_io import read_wav

    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise ConfigurationError(f"no WAV files found in {directory}")
    path = files[int(rng.integers(len(files)))]
    buf = read_wav(path)
    if float(buf.sample_rate) != float(spec.sample_rate):
        raise ConfigurationError(
            f"{path}: sample rate {buf.sample_rate} Hz does not match {spec.sample_rate} Hz"
        )
    want = int(round(spec.duration_s * spec.sample_rate))
    x = buf.samples
    if x.size < want:
        reps = int(np.ceil(want / max(x.size, 1)))
        x = np.tile(x, reps)
    start = int(rng.integers(max(x.size - want, 0) + 1))
    return x[start : start + want]


def sample_scene(spec: ExperimentSpec, index: int, seed_seq: np.random.SeedSequence) -> Scene:
    rng = np.random.default_rng(seed_seq)
    scene_seed = int(seed_seq.generate_state(1)[0])

    if spec.speech in ("synthetic", "noise"):
        samples = synthesize_speech(spec.duration_s, spec.sample_rate, rng,
                                    profile="speech" if spec.speech == "synthetic" else "noise")
    else:
        samples = _load_wav_utterance(spec.speech, rng, spec)
    target = AudioBuffer(samples, spec.sample_rate)

    dims = rng.uniform(spec.room_range[0], spec.room_range[1], size=3)
    margin = 0.5

    def random_pos():
        return rng.uniform(margin, dims - margin)

    mic = random_pos()
    near = random_pos()
    while np.linalg.norm(near - mic) < 0.5:
        near = random_pos()
    loud = random_pos()
    while np.linalg.norm(loud - mic) < 0.8:
        loud = random_pos()

    rt60 = float(rng.uniform(*spec.rt60_range))
    gain = float(spec.gain) if spec.gain is not None else float(rng.uniform(*spec.gain_range))
    delay_s = float(rng.uniform(*spec.delay_range))

    room = RoomSpec(
        dimensions=dims,
        rt60=rt60,
        source_pos=loud,
        mic_pos=mic,
        sample_rate=spec.sample_rate,
        rir_length=int(round(spec.rir_length_s * spec.sample_rate)),
    )
    rir_near, rir_loud = generate_rir_pair(room, near, seed=scene_seed)
    return Scene(
        index=index,
        seed=scene_seed,
        target=target,
        rir_near=rir_near,
        rir_loud=rir_loud,
        gain=gain,
        delay_s=delay_s,
        rt60=rt60,
        room=dims,
        meta={
            "mic_pos": mic.tolist(),
            "near_pos": near.tolist(),
            "loud_pos": loud.tolist(),
        },
    )


def sample_scenes(spec: ExperimentSpec) -> list[Scene]:
    """Deterministic scene batch: one spawned seed stream per scene."""
    seqs = np.random.SeedSequence(spec.seed).spawn(spec.scenes)
    return [sample_scene(spec, i, seqs[i]) for i in range(spec.scenes)]


def loop_config_for(spec: ExperimentSpec, scene: Scene, **overrides) -> LoopConfig:
    cfg = LoopConfig(
        gain=scene.gain,
        delay_s=scene.delay_s,
        mode=spec.mode,
        detector=HowlingDetectorConfig(enabled=spec.hd),
    )
    return replace(cfg, **overrides) if overrides else cfg


def simulate_scene(scene: Scene, cfg: LoopConfig,
                   suppressor: SuppressorKind = SuppressorKind.PASSTHROUGH,
                   model: MaskModel | None = None,
                   record_traces: bool = False) -> SessionResult:
    meta = {
        "seed": scene.seed,
        "scene": scene.index,
        "rt60": scene.rt60,
    }
    meta.update(scene.meta)
    return run_closed_loop(
        scene.target,
        (scene.rir_near, scene.rir_loud),
        cfg,
        suppressor=suppressor,
        model=model,
        record_traces=record_traces,
        meta=meta,
    )

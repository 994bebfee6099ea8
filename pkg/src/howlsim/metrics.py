"""Evaluation: scale-invariant SDR and howling-occurrence statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeMismatchError

SDR_CLAMP_DB = 60.0


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, clamped to +-60.

    The reference is scaled by the optimal projection coefficient
    alpha = <est, ref> / ||ref||^2 before the distortion is measured, so the
    metric ignores any positive rescaling of either signal.
    """
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if est.shape != ref.shape:
        raise ShapeMismatchError(f"length mismatch: {est.size} vs {ref.size}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ConfigurationError("reference signal has zero energy")
    if float(np.dot(est, est)) == 0.0:
        return -SDR_CLAMP_DB
    alpha = float(np.dot(est, ref)) / ref_energy
    projected = alpha * ref
    distortion = float(np.dot(projected - est, projected - est))
    signal = float(np.dot(projected, projected))
    if distortion == 0.0:
        return SDR_CLAMP_DB
    if signal == 0.0:
        return -SDR_CLAMP_DB
    value = 10.0 * np.log10(signal / distortion)
    return float(np.clip(value, -SDR_CLAMP_DB, SDR_CLAMP_DB))


@dataclass
class SceneScore:
    index: int
    gain: float
    sdr_db: float | None  # None when the scene was excluded
    halted: bool
    halt_reason: str | None
    emitted_samples: int
    seed: int | None = None


@dataclass
class GainSummary:
    gain: float
    n_scenes: int
    n_excluded: int
    sdr_mean_db: float
    sdr_std_db: float
    howling_rate: float


@dataclass
class EvalReport:
    scores: list[SceneScore] = field(default_factory=list)
    per_gain: dict[float, GainSummary] = field(default_factory=dict)

    @property
    def howling_rate(self) -> float:
        if not self.scores:
            return 0.0
        return sum(s.halted for s in self.scores) / len(self.scores)

    @property
    def mean_sdr_db(self) -> float:
        vals = [s.sdr_db for s in self.scores if s.sdr_db is not None]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate(results, references=None) -> EvalReport:
    """Score a batch of closed-loop sessions against their clean targets.

    Halted scenes are scored on the emitted prefix against the same-length
    reference prefix; scenes with no usable prefix are excluded from the
    mean and counted.  Scenes are grouped by amplifier gain.
    """
    results = list(results)
    if references is None:
        references = [r.target for r in results]
    references = list(references)
    if len(references) != len(results):
        raise ShapeMismatchError("one reference per scene is required")

    scores = []
    for i, (res, ref) in enumerate(zip(results, references)):
        est = res.estimated.samples
        ref_samples = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
        if ref_samples.size < est.size:
            raise ShapeMismatchError(f"scene {i}: reference shorter than the estimate")
        ref_prefix = ref_samples[: est.size]
        sdr = None
        if est.size > 0 and float(np.dot(ref_prefix, ref_prefix)) > 0.0:
            sdr = si_sdr(est, ref_prefix)
        scores.append(
            SceneScore(
                index=i,
                gain=float(res.gain),
                sdr_db=sdr,
                halted=res.halted,
                halt_reason=res.halt.reason if res.halted else None,
                emitted_samples=est.size,
                seed=res.meta.get("seed"),
            )
        )

    return summarize_scores(scores)


def summarize_scores(scores) -> EvalReport:
    """Group per-scene scores by amplifier gain into a report."""
    scores = list(scores)
    per_gain = {}
    for gain in sorted({round(s.gain, 6) for s in scores}):
        group = [s for s in scores if round(s.gain, 6) == gain]
        vals = [s.sdr_db for s in group if s.sdr_db is not None]
        per_gain[gain] = GainSummary(
            gain=gain,
            n_scenes=len(group),
            n_excluded=len(group) - len(vals),
            sdr_mean_db=float(np.mean(vals)) if vals else float("nan"),
            sdr_std_db=float(np.std(vals)) if vals else float("nan"),
            howling_rate=sum(s.halted for s in group) / len(group),
        )
    return EvalReport(scores=scores, per_gain=per_gain)


def write_scene_csv(report: EvalReport, path, header: dict | None = None):
    """One row per scene, preceded by self-describing comment headers."""
    with open(path, "w", newline="") as fh:
        for key, value in sorted((header or {}).items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["scene", "seed", "gain", "sdr_db", "halted", "halt_reason", "emitted_samples"]
        )
        for s in report.scores:
            writer.writerow(
                [
                    s.index,
                    "" if s.seed is None else s.seed,
                    f"{s.gain:.10g}",
                    "" if s.sdr_db is None else f"{s.sdr_db:.10g}",
                    int(s.halted),
                    s.halt_reason or "",
                    s.emitted_samples,
                ]
            )


def write_summary_csv(summaries, path, header: dict | None = None):
    """Method-comparison layout: one row per (method, gain) pair.

    summaries is an iterable of (method_name, EvalReport).
    """
    with open(path, "w", newline="") as fh:
        for key, value in sorted((header or {}).items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "gain", "n_scenes", "n_excluded",
             "sdr_mean_db", "sdr_std_db", "howling_rate"]
        )
        for method, report in summaries:
            for gain in sorted(report.per_gain):
                g = report.per_gain[gain]
                writer.writerow(
                    [
                        method,
                        f"{g.gain:.10g}",
                        g.n_scenes,
                        g.n_excluded,
                        f"{g.sdr_mean_db:.10g}",
                        f"{g.sdr_std_db:.10g}",
                        f"{g.howling_rate:.10g}",
                    ]
                )

"""Recursive on-the-fly training of the mask model.

Each epoch re-simulates every scene through the closed loop with the
current parameters, so the model always trains on the signals its own
output creates.  Scenes that trip the howling detector (or the overflow
guard) contribute loss only over the frames emitted before the halt.
Parameters move once per epoch by plain gradient descent on the spectral
mean-absolute-error loss, with recorded inputs treated as constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TrainingImpossibleError
from .loop import LoopConfig
from .scenes import Scene, simulate_scene
from .suppressor import MaskModel, SuppressorKind, clip_gradient, grad_mae_frozen, mae_loss


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    scenes_used: int
    howling_halts: int
    overflow_halts: int


@dataclass
class TrainingResult:
    model: MaskModel
    history: list[EpochStats] = field(default_factory=list)
    converged: bool = True
    message: str = ""

    @property
    def losses(self) -> list[float]:
        return [h.mean_loss for h in self.history]


def train_recursive(model: MaskModel, scenes: list[Scene], loop_cfg: LoopConfig,
                    epochs: int, step_size: float = 1e-2,
                    grad_clip: float = 10.0) -> TrainingResult:
    """Iterated self-generated-data fitting of the mask model.

    Per epoch: simulate every scene closed-loop with the current model,
    average the per-scene losses and frozen-input gradients, then take one
    clipped gradient step.  Returns the final model plus the loss history;
    converged is False when the final epoch did not improve on the first.
    """
    if not scenes:
        raise TrainingImpossibleError("no training scenes")
    model = model.copy()
    history: list[EpochStats] = []

    for epoch in range(epochs):
        losses = []
        g_mic = np.zeros_like(model.mic_gain)
        g_ref = np.zeros_like(model.ref_gain)
        howl = 0
        overflow = 0
        for scene in scenes:
            cfg = replace(loop_cfg, gain=scene.gain, delay_s=scene.delay_s)
            result = simulate_scene(
                scene, cfg, suppressor=SuppressorKind.TRAINED_MASK,
                model=model, record_traces=True,
            )
            if result.halted:
                if result.halt.reason == "howling":
                    howl += 1
                else:
                    overflow += 1
            traces = result.traces
            if traces["estimated"].shape[0] == 0:
                continue
            losses.append(mae_loss(traces["estimated"], traces["target"]))
            gm, gr = grad_mae_frozen(
                model, traces["mic"], traces["reference"], traces["target"]
            )
            g_mic += gm
            g_ref += gr
        if not losses:
            raise TrainingImpossibleError(
                f"epoch {epoch}: every scene halted before its first frame"
            )
        history.append(
            EpochStats(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                scenes_used=len(losses),
                howling_halts=howl,
                overflow_halts=overflow,
            )
        )
        if step_size != 0.0:
            g_mic /= len(losses)
            g_ref /= len(losses)
            g_mic, g_ref = clip_gradient(g_mic, g_ref, grad_clip)
            update_mic = model.mic_gain - step_size * g_mic
            update_ref = model.ref_gain - step_size * g_ref
            if np.isfinite(update_mic).all() and np.isfinite(update_ref).all():
                model = MaskModel(update_mic, update_ref, model.features)
            # non-finite updates are rejected; parameters stay put

    converged = True
    message = ""
    if history and history[-1].mean_loss > history[0].mean_loss:
        converged = False
        message = (
            f"final epoch loss {history[-1].mean_loss:.6g} exceeds "
            f"first epoch loss {history[0].mean_loss:.6g}"
        )
    return TrainingResult(model=model, history=history, converged=converged, message=message)


def write_loss_history_csv(result: TrainingResult, path, header: dict | None = None):
    with open(path, "w", newline="") as fh:
        for key, value in sorted((header or {}).items()):
            fh.write(f"# {key}={value}\n")
        fh.write(f"# converged={int(result.converged)}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "mean_loss", "scenes_used", "howling_halts", "overflow_halts"]
        )
        for h in result.history:
            writer.writerow(
                [h.epoch, f"{h.mean_loss:.10g}", h.scenes_used,
                 h.howling_halts, h.overflow_halts]
            )

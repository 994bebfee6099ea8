"""Suppression core: complex-ratio masks, the trainable per-bin mask model,
and the spectral mean-absolute-error loss with its frozen-input gradient.

A suppressor maps a microphone frame Y and a reference frame R to an
estimate of the clean-speech frame.  All suppressors here are frame-local
and deterministic; the trainable model is a per-bin affine form

    S_hat[k] = M[k] * Y[k] + N[k] * R[k]

with two complex gains per bin (4 real parameters per bin).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, EmptyInputError, ShapeMismatchError

DEFAULT_MASK_CAP = 5.0
MASK_FLOOR = 1e-8

# layout of the per-frame observation a model conditions on
INPUT_FEATURES = ("mic_magnitude", "reference_magnitude", "mic_real", "mic_imag")


class SuppressorKind(Enum):
    PASSTHROUGH = "passthrough"
    KALMAN_ONLY = "kalman-only"
    ORACLE_MASK = "oracle"
    TRAINED_MASK = "trained"


def _sanitize(frame: np.ndarray) -> np.ndarray:
    """Force real DC and Nyquist bins so the frame synthesizes to a real hop."""
    out = np.asarray(frame, dtype=np.complex128).copy()
    out[0] = out[0].real
    out[-1] = out[-1].real
    return out


@dataclass(eq=False)
class MaskModel:
    """Trainable per-bin affine mask: two complex gains per frequency bin."""

    mic_gain: np.ndarray  # M, complex per bin
    ref_gain: np.ndarray  # N, complex per bin
    features: tuple = INPUT_FEATURES

    def __post_init__(self):
        self.mic_gain = np.asarray(self.mic_gain, dtype=np.complex128)
        self.ref_gain = np.asarray(self.ref_gain, dtype=np.complex128)
        if self.mic_gain.shape != self.ref_gain.shape or self.mic_gain.ndim != 1:
            raise ShapeMismatchError("gain arrays must be 1-D and equally sized")
        if not (np.isfinite(self.mic_gain).all() and np.isfinite(self.ref_gain).all()):
            raise ValueError("mask parameters must be finite")

    @property
    def n_bins(self) -> int:
        return self.mic_gain.size

    @property
    def n_parameters(self) -> int:
        return 4 * self.n_bins

    @classmethod
    def identity(cls, n_bins: int) -> "MaskModel":
        """Passes the microphone frame through unchanged (M=1, N=0)."""
        return cls(np.ones(n_bins, dtype=np.complex128), np.zeros(n_bins, dtype=np.complex128))

    @classmethod
    def reference_passthrough(cls, n_bins: int) -> "MaskModel":
        """Passes the reference frame through unchanged (M=0, N=1)."""
        return cls(np.zeros(n_bins, dtype=np.complex128), np.ones(n_bins, dtype=np.complex128))

    @classmethod
    def randomized(cls, n_bins: int, rng: np.random.Generator, scale: float = 0.3) -> "MaskModel":
        """Identity perturbed by complex noise; useful as a training start."""
        def noise():
            return scale * (rng.standard_normal(n_bins) + 1j * rng.standard_normal(n_bins))

        return cls(1.0 + noise(), noise())

    def copy(self) -> "MaskModel":
        return MaskModel(self.mic_gain.copy(), self.ref_gain.copy(), self.features)

    def apply(self, mic_frame, ref_frame) -> np.ndarray:
        y = np.asarray(mic_frame)
        r = np.asarray(ref_frame)
        if y.shape != self.mic_gain.shape or r.shape != self.ref_gain.shape:
            raise ShapeMismatchError("frame bin count does not match the model")
        return _sanitize(self.mic_gain * y + self.ref_gain * r)

    def apply_batch(self, mic_frames, ref_frames) -> np.ndarray:
        return self.mic_gain[None, :] * mic_frames + self.ref_gain[None, :] * ref_frames

    def save(self, path, meta: dict | None = None):
        with open(path, "w", newline="") as fh:
            fh.write(f"# mask-model v1 bins={self.n_bins}\n")
            fh.write(f"# features={','.join(self.features)}\n")
            for key, value in sorted((meta or {}).items()):
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh)
            writer.writerow(["bin", "mic_gain_re", "mic_gain_im", "ref_gain_re", "ref_gain_im"])
            for k in range(self.n_bins):
                writer.writerow(
                    [
                        k,
                        f"{self.mic_gain[k].real:.17g}",
                        f"{self.mic_gain[k].imag:.17g}",
                        f"{self.ref_gain[k].real:.17g}",
                        f"{self.ref_gain[k].imag:.17g}",
                    ]
                )

    @classmethod
    def load(cls, path) -> "MaskModel":
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("# mask-model v1"):
                raise ConfigurationError(f"{path} is not a mask-model file")
            n_bins = int(header.split("bins=")[1])
            rows = []
            for line in fh:
                if line.startswith("#"):
                    continue
                rows.append(line.strip())
        reader = csv.reader(rows)
        next(reader)  # column names
        mic = np.zeros(n_bins, dtype=np.complex128)
        ref = np.zeros(n_bins, dtype=np.complex128)
        count = 0
        for row in reader:
            k = int(row[0])
            mic[k] = float(row[1]) + 1j * float(row[2])
            ref[k] = float(row[3]) + 1j * float(row[4])
            count += 1
        if count != n_bins:
            raise ConfigurationError(f"{path}: expected {n_bins} rows, found {count}")
        return cls(mic, ref)


def oracle_mask(target_frame, mic_frame, cap: float | None = DEFAULT_MASK_CAP,
                floor: float = MASK_FLOOR) -> np.ndarray:
    """Ideal complex ratio mask target / mic, per bin.

    Bins where |mic| < floor get gain 0; magnitudes above cap are clamped
    (phase preserved).  cap=None disables clamping.
    """
    s = np.asarray(target_frame, dtype=np.complex128)
    y = np.asarray(mic_frame, dtype=np.complex128)
    if s.shape != y.shape:
        raise ShapeMismatchError("frame bin counts differ")
    usable = np.abs(y) >= floor
    gains = np.zeros_like(y)
    np.divide(s, y, out=gains, where=usable)
    if cap is not None:
        mag = np.abs(gains)
        over = mag > cap
        if np.any(over):
            gains[over] *= cap / mag[over]
    return gains


def apply_mask(mask, mic_frame) -> np.ndarray:
    """Bin-wise complex product; DC and Nyquist are forced back to real."""
    g = np.asarray(mask, dtype=np.complex128)
    y = np.asarray(mic_frame, dtype=np.complex128)
    if g.shape != y.shape:
        raise ShapeMismatchError("mask and frame bin counts differ")
    return _sanitize(g * y)


def suppress(kind: SuppressorKind, mic_frame, ref_frame, target_frame=None,
             model: MaskModel | None = None,
             oracle_cap: float | None = DEFAULT_MASK_CAP) -> np.ndarray:
    """Frame-local suppression dispatch.

    passthrough  -> the microphone frame unchanged
    kalman-only  -> the reference frame (the playback-cancelled residual)
    oracle       -> oracle complex-ratio mask applied to the mic frame
    trained      -> the affine mask model applied to (mic, reference)
    """
    y = np.asarray(mic_frame, dtype=np.complex128)
    if kind is SuppressorKind.PASSTHROUGH:
        return y.copy()
    if kind is SuppressorKind.KALMAN_ONLY:
        r = np.asarray(ref_frame, dtype=np.complex128)
        if r.shape != y.shape:
            raise ShapeMismatchError("reference bin count differs from mic frame")
        return r.copy()
    if kind is SuppressorKind.ORACLE_MASK:
        if target_frame is None:
            raise ConfigurationError("oracle suppression needs the clean-speech frame")
        return apply_mask(oracle_mask(target_frame, y, cap=oracle_cap), y)
    if kind is SuppressorKind.TRAINED_MASK:
        if model is None:
            raise ConfigurationError("trained suppression needs a mask model")
        return model.apply(y, ref_frame)
    raise ConfigurationError(f"unknown suppressor kind {kind!r}")


def mae_loss(est_frames, target_frames) -> float:
    """Mean absolute error of the real plus the imaginary spectrograms."""
    est = np.asarray(est_frames, dtype=np.complex128)
    tgt = np.asarray(target_frames, dtype=np.complex128)
    if est.shape != tgt.shape:
        raise ShapeMismatchError(f"shape mismatch {est.shape} vs {tgt.shape}")
    if est.size == 0:
        raise EmptyInputError("loss of an empty frame sequence is undefined")
    diff = est - tgt
    return float(np.mean(np.abs(diff.real)) + np.mean(np.abs(diff.imag)))


def grad_mae_frozen(model: MaskModel, mic_frames, ref_frames, target_frames
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Analytic subgradient of mae_loss through the affine mask model.

    The recorded (mic, reference) frames are treated as constants.  Each
    returned complex array packs (d/d gain_re) + 1j * (d/d gain_im) per bin;
    the subgradient of |.| at 0 is taken as 0.
    """
    y = np.atleast_2d(np.asarray(mic_frames, dtype=np.complex128))
    r = np.atleast_2d(np.asarray(ref_frames, dtype=np.complex128))
    s = np.atleast_2d(np.asarray(target_frames, dtype=np.complex128))
    if not (y.shape == r.shape == s.shape):
        raise ShapeMismatchError("frame sequences disagree in shape")
    if y.size == 0:
        raise EmptyInputError("gradient of an empty frame sequence is undefined")
    res = model.apply_batch(y, r) - s
    comb = np.sign(res.real) + 1j * np.sign(res.imag)
    scale = 1.0 / res.size  # 1 / (n_frames * n_bins), matching mae_loss means
    g_mic = scale * np.sum(comb * np.conj(y), axis=0)
    g_ref = scale * np.sum(comb * np.conj(r), axis=0)
    return g_mic, g_ref


def clip_gradient(g_mic: np.ndarray, g_ref: np.ndarray, max_norm: float
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Scale the stacked gradient down to max_norm (L2 over all real parts)."""
    norm = float(np.sqrt(
        np.sum(np.abs(g_mic) ** 2) + np.sum(np.abs(g_ref) ** 2)
    ))
    if norm <= max_norm or norm == 0.0:
        return g_mic, g_ref
    factor = max_norm / norm
    return g_mic * factor, g_ref * factor

"""Partitioned-block frequency-domain adaptive Kalman filter.

Estimates the loudspeaker-to-microphone coupling with per-bin complex
weights over P partitions and subtracts the predicted playback from the
microphone stream, one hop at a time:

    D_hat = sum_p weights[p] * X[p]        (bin-wise, newest partition first)
    e     = y - d_hat                      (time domain, sample exact)

Each partition holds the spectrum of the most recent two hops of the
loudspeaker stream (rectangular window, overlap-save), so partition p
models path lags [p*hop, (p+1)*hop) and the stacked inverse transforms of
the weights form an explicit impulse-response estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import FrameConfig
from .errors import ConfigurationError, ShapeMismatchError


@dataclass
class KalmanConfig:
    """Tuning constants; the defaults are standard for this filter family."""

    partitions: int = 16
    transition: float = 0.999  # forgetting factor A in (0, 1]
    initial_covariance: float = 10.0
    obs_noise_smoothing: float = 0.99
    process_noise_smoothing: float = 0.5
    eps: float = 1e-20

    def __post_init__(self):
        if not 0.0 < self.transition <= 1.0:
            raise ConfigurationError("transition must be in (0, 1]")
        if self.partitions < 1:
            raise ConfigurationError("need at least one partition")


class FrequencyDomainKalman:
    """Streaming playback canceller; one instance per session, single owner."""

    def __init__(self, cfg: FrameConfig | None = None, kcfg: KalmanConfig | None = None):
        self.cfg = cfg or FrameConfig()
        self.kcfg = kcfg or KalmanConfig()
        bins_ = self.cfg.n_bins
        p = self.kcfg.partitions
        self.weights = np.zeros((p, bins_), dtype=np.complex128)
        self.error_cov = np.full((p, bins_), self.kcfg.initial_covariance)
        self.process_noise = np.zeros((p, bins_))
        self.obs_noise = np.zeros(bins_)
        self.ref_history = np.zeros((p, bins_), dtype=np.complex128)  # newest first
        self._x_buf = np.zeros(self.cfg.frame_len)
        self.frames_seen = 0
        self.divergence_resets = 0

    @property
    def modeled_taps(self) -> int:
        return self.kcfg.partitions * self.cfg.hop

    def step(self, mic_hop, loudspeaker_hop) -> tuple[np.ndarray, np.ndarray]:
        """Consume one hop of microphone and loudspeaker samples.

        Returns (playback_estimate_hop, error_hop) with
        error_hop == mic_hop - playback_estimate_hop sample-exact.  The
        loudspeaker hop is the newest one available when the microphone hop
        was formed.  Non-finite input is rejected and leaves the state
        unchanged.
        """
        hop = self.cfg.hop
        y = np.asarray(mic_hop, dtype=np.float64)
        x = np.asarray(loudspeaker_hop, dtype=np.float64)
        if y.shape != (hop,) or x.shape != (hop,):
            raise ShapeMismatchError(f"expected hops of {hop} samples")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            return np.zeros(hop), y.copy()
        if not np.isfinite(self.weights).all():  # externally corrupted state
            self._reset_after_divergence()
            return np.zeros(hop), y.copy()

        a = self.kcfg.transition
        a2 = a * a

        self._x_buf[:hop] = self._x_buf[hop:]
        self._x_buf[hop:] = x
        x_frame = np.fft.rfft(self._x_buf)
        self.ref_history[1:] = self.ref_history[:-1]
        self.ref_history[0] = x_frame

        pred = np.sum(self.weights * self.ref_history, axis=0)
        d_hat = np.fft.irfft(pred, n=self.cfg.fft_size)[hop:]
        e = y - d_hat
        e_frame = np.fft.rfft(np.concatenate([np.zeros(hop), e]))

        # predict: grow covariance by the forgetting factor plus process noise
        q = (1.0 - a2) * np.abs(self.weights) ** 2
        ps = self.kcfg.process_noise_smoothing
        self.process_noise = ps * self.process_noise + (1.0 - ps) * q
        cov = a2 * self.error_cov + self.process_noise

        ref_power = np.abs(self.ref_history) ** 2
        denom = np.sum(cov * ref_power, axis=0) + self.obs_noise + self.kcfg.eps
        mu = cov / denom
        delta = mu * np.conj(self.ref_history) * e_frame

        # overlap-save constraint: each partition kernel lives in its first hop
        kernels = np.fft.irfft(delta, n=self.cfg.fft_size, axis=1)
        kernels[:, hop:] = 0.0
        delta = np.fft.rfft(kernels, n=self.cfg.fft_size, axis=1)

        self.weights = a * (self.weights + delta)
        self.error_cov = cov * (1.0 - 0.5 * mu * ref_power)
        self.obs_noise = (
            self.kcfg.obs_noise_smoothing * self.obs_noise
            + (1.0 - self.kcfg.obs_noise_smoothing) * np.abs(e_frame) ** 2
        )
        self.frames_seen += 1

        if not np.isfinite(self.weights).all():
            self._reset_after_divergence()
            return np.zeros(hop), y.copy()
        return d_hat, e

    def _reset_after_divergence(self):
        self.weights[:] = 0.0
        self.error_cov[:] = self.kcfg.initial_covariance
        self.process_noise[:] = 0.0
        self.obs_noise[:] = 0.0
        self.divergence_resets += 1

    def estimated_impulse_response(self) -> np.ndarray:
        """Time-domain path estimate: partition p covers taps [p*hop, (p+1)*hop)."""
        kernels = np.fft.irfft(self.weights, n=self.cfg.fft_size, axis=1)
        return kernels[:, : self.cfg.hop].reshape(-1)

    def misalignment(self, true_rir) -> float:
        """Normalized path error 10*log10(||h_hat - h||^2 / ||h||^2) in dB.

        The true response is truncated or zero-padded to the modeled length.
        A perfect match is reported at the -80 dB floor.
        """
        taps = np.asarray(getattr(true_rir, "taps", true_rir), dtype=np.float64)
        h = np.zeros(self.modeled_taps)
        h[: min(taps.size, h.size)] = taps[: h.size]
        energy = np.dot(h, h)
        if energy <= 0:
            raise ConfigurationError("true impulse response has zero energy")
        err = self.estimated_impulse_response() - h
        ratio = np.dot(err, err) / energy
        return float(10.0 * np.log10(max(ratio, 1e-8)))

    def export_weights_csv(self, path):
        """Debug snapshot: per-bin weight magnitudes, one row per partition."""
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# kalman-weights v1 partitions={self.kcfg.partitions} "
                f"bins={self.cfg.n_bins} frames_seen={self.frames_seen}\n"
            )
            writer = csv.writer(fh)
            writer.writerow(["partition"] + [f"bin_{k}" for k in range(self.cfg.n_bins)])
            for p in range(self.kcfg.partitions):
                writer.writerow(
                    [p] + [f"{abs(w):.8g}" for w in self.weights[p]]
                )

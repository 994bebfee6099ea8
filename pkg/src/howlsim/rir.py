"""Image-method room impulse responses and reverberation-time validation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyInputError

SPEED_OF_SOUND = 340.0


@dataclass(eq=False)
class RoomSpec:
    """Rectangular room geometry for a single source/microphone pair."""

    dimensions: np.ndarray  # (Lx, Ly, Lz) meters
    rt60: float  # seconds
    source_pos: np.ndarray  # meters
    mic_pos: np.ndarray  # meters
    sample_rate: float = 16000.0
    rir_length: int | None = None  # taps; defaults to 0.5 s
    speed_of_sound: float = SPEED_OF_SOUND
    position_jitter: float = 0.0  # meters of random image displacement

    def __post_init__(self):
        self.dimensions = np.asarray(self.dimensions, dtype=np.float64)
        self.source_pos = np.asarray(self.source_pos, dtype=np.float64)
        self.mic_pos = np.asarray(self.mic_pos, dtype=np.float64)
        for name, arr in (
            ("dimensions", self.dimensions),
            ("source_pos", self.source_pos),
            ("mic_pos", self.mic_pos),
        ):
            if arr.shape != (3,):
                raise ConfigurationError(f"{name} must have 3 components")
        if np.any(self.dimensions <= 0):
            raise ConfigurationError("room dimensions must be positive")
        for name, pos in (("source_pos", self.source_pos), ("mic_pos", self.mic_pos)):
            if np.any(pos <= 0) or np.any(pos >= self.dimensions):
                raise ConfigurationError(f"{name} must lie strictly inside the room")
        if self.rt60 < 0:
            raise ConfigurationError("rt60 must be >= 0")
        if self.rt60 > 0.6:
            warnings.warn(f"rt60 {self.rt60:.2f} s is outside the matched 0..0.6 s range")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if self.rir_length is None:
            self.rir_length = int(round(0.5 * self.sample_rate))
        if self.rir_length < 1:
            raise ConfigurationError("rir_length must be >= 1 tap")


@dataclass(eq=False)
class Rir:
    """Room impulse response taps with geometry metadata."""

    taps: np.ndarray
    sample_rate: float
    direct_path_delay: int = 0  # samples
    truncated: bool = False

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1:
            raise ConfigurationError("taps must be a 1-D array")
        if self.taps.size and not np.isfinite(self.taps).all():
            raise ValueError("impulse response contains non-finite taps")

    @property
    def energy(self) -> float:
        return float(np.dot(self.taps, self.taps))


def reflection_coefficient(spec: RoomSpec) -> float:
    """Frequency-independent wall reflection coefficient from Eyring's formula."""
    if spec.rt60 <= 0:
        return 0.0
    lx, ly, lz = spec.dimensions
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    # Eyring: rt60 = 0.161 V / (-S ln(1 - alpha)); beta = sqrt(1 - alpha)
    return float(np.exp(-0.0805 * volume / (surface * spec.rt60)))


def generate_rir(spec: RoomSpec, seed: int = 0) -> Rir:
    """Allen-Berkeley image-method impulse response.

    Deterministic for a fixed (spec, seed); the seed only matters when
    spec.position_jitter > 0 (randomized-image variant).  Sub-sample delays
    are rounded to the nearest tap.

    The wall reflection coefficient is seeded from Eyring's formula and then
    calibrated against the Schroeder decay of the generated response: purely
    specular image sums decay slower than the diffuse-field prediction (late
    energy rides the low-bounce axial directions), so one or two corrective
    regenerations are needed for the measured RT60 to track the request.
    """
    beta = reflection_coefficient(spec)
    rir = _image_sum(spec, beta, seed)
    if spec.rt60 >= 0.08:
        target = spec.rt60
        for _ in range(3):
            _, measured = schroeder_decay(rir)
            if measured <= 0 or abs(measured - target) <= 0.05 * target:
                break
            beta = float(np.exp(np.log(max(beta, 1e-12)) * measured / target))
            beta = min(beta, 0.999)
            rir = _image_sum(spec, beta, seed)

    truncated = spec.rt60 > 1.25 * spec.rir_length / spec.sample_rate
    if truncated:
        warnings.warn(
            f"rt60 {spec.rt60:.2f} s exceeds the {spec.rir_length / spec.sample_rate:.2f} s "
            "tap budget; late reflections are truncated"
        )
    rir.truncated = truncated
    if rir.energy <= 0:
        raise ConfigurationError("generated impulse response has zero energy")
    return rir


def _image_sum(spec: RoomSpec, beta: float, seed: int) -> Rir:
    fs = spec.sample_rate
    c = spec.speed_of_sound
    length = spec.rir_length
    dims = spec.dimensions
    src = spec.source_pos
    mic = spec.mic_pos

    max_dist = (length + 0.5) / fs * c
    orders = np.ceil(max_dist / (2.0 * dims)).astype(int)
    rng = np.random.default_rng(seed)

    taps = np.zeros(length)
    rx = np.arange(-orders[0], orders[0] + 1)
    ry = np.arange(-orders[1], orders[1] + 1)
    rz = np.arange(-orders[2], orders[2] + 1)
    grid = np.stack(np.meshgrid(rx, ry, rz, indexing="ij"), axis=-1).reshape(-1, 3)

    for p in ((0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1),
              (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)):
        p_arr = np.asarray(p, dtype=np.float64)
        # mirror parity applies to the whole shifted source so that the
        # (|r+p|, |r|) wall-bounce exponents pair with the right positions
        image = (1.0 - 2.0 * p_arr) * (src + 2.0 * grid * dims)
        if spec.position_jitter > 0:
            image = image + spec.position_jitter * rng.uniform(-1.0, 1.0, image.shape)
        diff = image - mic
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        n_refl = np.abs(grid + p_arr).sum(axis=1) + np.abs(grid).sum(axis=1)
        amp = np.where(dist > 1e-9, beta ** n_refl / (4.0 * np.pi * np.maximum(dist, 1e-9)), 0.0)
        idx = np.rint(dist / c * fs).astype(np.int64)
        keep = (idx >= 0) & (idx < length) & (amp != 0.0)
        np.add.at(taps, idx[keep], amp[keep])

    direct = int(np.rint(np.linalg.norm(src - mic) / c * fs))
    return Rir(taps, fs, direct_path_delay=direct)


def generate_rir_pair(spec: RoomSpec, near_end_pos, seed: int = 0) -> tuple[Rir, Rir]:
    """Impulse responses for the near-end talker and the loudspeaker.

    Both share the room and absorption; only the source position differs.
    spec.source_pos is the loudspeaker; near_end_pos is the talker.
    Returns (near_end_rir, loudspeaker_rir).
    """
    near_end_pos = np.asarray(near_end_pos, dtype=np.float64)
    near_spec = RoomSpec(
        dimensions=spec.dimensions,
        rt60=spec.rt60,
        source_pos=near_end_pos,
        mic_pos=spec.mic_pos,
        sample_rate=spec.sample_rate,
        rir_length=spec.rir_length,
        speed_of_sound=spec.speed_of_sound,
        position_jitter=spec.position_jitter,
    )
    return generate_rir(near_spec, seed), generate_rir(spec, seed)


def schroeder_decay(rir: Rir) -> tuple[np.ndarray, float]:
    """Backward-integrated energy decay curve (dB) and an RT60 estimate.

    The estimate comes from a linear fit of the -5..-25 dB span extrapolated
    to -60 dB.  Degenerate responses (effectively a single tap) return 0.
    """
    energy = np.asarray(rir.taps, dtype=np.float64) ** 2
    total = energy.sum()
    if total <= 0:
        raise EmptyInputError("impulse response has zero energy")
    tail = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(np.maximum(tail / total, 1e-300))

    t5 = np.argmax(edc_db <= -5.0)
    t25 = np.argmax(edc_db <= -25.0)
    if edc_db[t5] > -5.0 or edc_db[t25] > -25.0 or t25 - t5 < 2:
        return edc_db, 0.0
    times = np.arange(t5, t25 + 1) / rir.sample_rate
    slope, _ = np.polyfit(times, edc_db[t5 : t25 + 1], 1)
    if slope >= 0:
        return edc_db, 0.0
    return edc_db, float(-60.0 / slope)


def save_rir_wav(rir: Rir, path):
    """Write taps as a mono float32 WAV for reuse across runs."""
    from scipy.io import wavfile

    wavfile.write(path, int(rir.sample_rate), rir.taps.astype(np.float32))


def save_rir_csv(rir: Rir, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# rir v1 sample_rate={rir.sample_rate:g} "
                 f"direct_path_delay={rir.direct_path_delay}\n")
        writer = csv.writer(fh)
        writer.writerow(["tap_index", "value"])
        for i, v in enumerate(rir.taps):
            writer.writerow([i, f"{v:.17g}"])


def load_rir_csv(path) -> Rir:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# rir v1"):
            raise ConfigurationError(f"{path} is not a tap-list file")
        meta = dict(part.split("=") for part in header.split()[3:])
        reader = csv.reader(fh)
        next(reader)  # column names
        taps = np.array([float(row[1]) for row in reader])
    return Rir(
        taps,
        float(meta["sample_rate"]),
        direct_path_delay=int(meta["direct_path_delay"]),
    )

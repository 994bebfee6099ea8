"""Closed-loop acoustic howling simulation and suppression laboratory."""

__version__ = "0.1.0"

from .dsp import (
    AudioBuffer,
    DelayLine,
    FrameConfig,
    StreamingAnalyzer,
    StreamingSynthesizer,
    convolve,
    istft,
    sqrt_hann_window,
    stft,
)
from .errors import (
    ConfigurationError,
    EmptyInputError,
    ShapeMismatchError,
    TrainingImpossibleError,
)
from .kalman import FrequencyDomainKalman, KalmanConfig
from .loop import (
    HaltInfo,
    HowlingDetector,
    HowlingDetectorConfig,
    LoopConfig,
    LoopMode,
    LoopSession,
    SessionResult,
    detect_howling,
    prepare_scene_signals,
    run_closed_loop,
)
from .metrics import EvalReport, evaluate, si_sdr, write_scene_csv, write_summary_csv
from .reference import ReferenceResult, run_reference_loop
from .rir import (
    Rir,
    RoomSpec,
    generate_rir,
    generate_rir_pair,
    load_rir_csv,
    save_rir_csv,
    save_rir_wav,
    schroeder_decay,
)
from .scenes import (
    ExperimentSpec,
    Scene,
    loop_config_for,
    sample_scenes,
    simulate_scene,
    synthesize_speech,
)
from .suppressor import (
    DEFAULT_MASK_CAP,
    INPUT_FEATURES,
    MaskModel,
    SuppressorKind,
    apply_mask,
    grad_mae_frozen,
    mae_loss,
    oracle_mask,
    suppress,
)
from .training import EpochStats, TrainingResult, train_recursive, write_loss_history_csv

__all__ = [name for name in dir() if not name.startswith("_")]

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from howlsim import AudioBuffer, RoomSpec, generate_rir_pair, synthesize_speech

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

FS = 16000.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_rir_pair():
    """One fixed room pair shared by loop-level tests."""
    room = RoomSpec(
        dimensions=[5.0, 4.0, 3.0],
        rt60=0.25,
        source_pos=[1.5, 2.0, 1.2],
        mic_pos=[3.5, 2.5, 1.5],
        sample_rate=FS,
        rir_length=3200,
    )
    return generate_rir_pair(room, [4.0, 1.5, 1.6], seed=2)


@pytest.fixture(scope="session")
def speech_2s():
    rng = np.random.default_rng(77)
    return AudioBuffer(synthesize_speech(2.0, FS, rng), FS)

import numpy as np
import pytest

from src.correlator import InterferencePair
from src.pulse import PulseModel
from src.spdc import SpdcSource


@pytest.fixture
def pulse() -> PulseModel:
    return PulseModel(delta_t=100.0, center_wavelength=390.0)


@pytest.fixture
def pair(pulse) -> InterferencePair:
    return InterferencePair(pulse=pulse, a=1.0, b=0.7)


@pytest.fixture
def balanced_pair(pulse) -> InterferencePair:
    return InterferencePair(pulse=pulse)


@pytest.fixture
def source() -> SpdcSource:
    return SpdcSource(gain=0.2, efficiency=0.3, num_modes=6, rep_rate=8e7)


@pytest.fixture
def delays(pulse) -> np.ndarray:
    return np.linspace(-6.0, 6.0, 120) * pulse.delta_t

"""
SPDC 多光子干涉相关测量工具
"""

from src.pulse import PulseModel, sample_field, field_spectrum
from src.correlator import InterferencePair, CorrelationTrace, gamma_factor, gn_numeric
from src.spdc import SpdcSource, simulate_scan
from src.analysis import fit_g1, fit_g2, predict_g3, spectrum_from_g1

__version__ = "1.0.0"

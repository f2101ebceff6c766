"""Skin-conductance deconvolution and ECG R-peak / IBI features."""
from painprof.signalcore.ecg import IBI_FEATURE_NAMES, IbiSeries, detect_r_peaks, ibi_features, ibi_window_features
from painprof.signalcore.eda import (
    SC_FEATURE_NAMES, DeconvConfig, IrfParams, ScDecomposition, convolve_driver, deconvolve_sc,
    sc_window_features,
)

PHYSIO_FEATURE_NAMES = SC_FEATURE_NAMES + IBI_FEATURE_NAMES

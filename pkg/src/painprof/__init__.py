"""Multimodal pain-intensity estimation with subject profiles.

Stages: ``signalcore`` (skin conductance and ECG), ``facefeat`` (facial
geometry and action units), ``dataset`` (recordings, windows, synthetic
cohorts), ``profiler`` (descriptors and spectral clustering), ``mtnn``
(multi-task network), ``metrics`` and ``cli``.
"""

__version__ = "0.1.0"

"""Single-channel EEG sleep staging: EDF ingest, preprocessing, features, a from-scratch CNN, metrics and live streaming."""

from ._kernels import backend, set_backend, use_backend

__version__ = "0.1.0"

__all__ = ["__version__", "backend", "set_backend", "use_backend"]

"""Hyperbolic-uncertainty anomaly detection for time series.

Windows are reconstructed by an adversarially trained LSTM encoder/decoder;
inputs and reconstructions are embedded in the Poincare ball, where their
distance is the reconstruction error and the embedding radius gives an
uncertainty that scales the anomaly score.
"""
from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

"""facet: recover enrolled faces from a black-box similarity oracle.

Trains an eigenface basis as a bias-free linear autoencoder, then reconstructs
an enrolled identity by zeroth-order best-of-batch ascent in coefficient
space, querying only (image, id) -> similarity scores.  Includes local
synthetic embedders, an HTTP scoring service making the black-box boundary
literal, a multi-start policy, and an evaluation harness.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]

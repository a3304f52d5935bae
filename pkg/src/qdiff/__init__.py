"""Anomalous-diffusion analysis of time series built on q-Gaussian statistics.

The package covers the full pipeline: price-return ingestion, kernel
density estimation per time lag, detection of the central-bump regime and
its boundary curve, self-similar scaling collapse onto a q-Gaussian, and
the nonlinear diffusion equation (porous-media / fast-diffusion family)
that governs the collapsed densities, including its state-dependent
diffusion coefficient.
"""

from qdiff.qgauss import (
    QParams,
    ScalingLaw,
    c_q,
    q_exponential,
    qgauss_pdf,
    qgauss_sample,
    rescale_exponent,
    selfsim_pdf,
)

__version__ = "0.1.0"

__all__ = [
    "QParams",
    "ScalingLaw",
    "c_q",
    "q_exponential",
    "qgauss_pdf",
    "qgauss_sample",
    "rescale_exponent",
    "selfsim_pdf",
    "__version__",
]

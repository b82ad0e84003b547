"""Continuous spatial-angular super-resolution for diffusion MRI volumes.

Low-resolution diffusion-weighted images go in; spherical harmonic
coefficient fields queryable at any in-plane coordinate come out, with
Fourier-domain consistency on the sampled directions enforced inside
the network. Everything runs on numpy float64.
"""

from .core import (
    CoordGrid,
    GradientTable,
    SliceTriple,
    Volume4D,
    extract_slice_triples,
    make_coord_grid,
    normalize_b0,
)
from .errors import (
    ConfigurationError,
    DataError,
    FormatError,
    NumericalError,
    SasrError,
)
from .model import DecoderConfig, ExtractorConfig, ModelConfig, SuperResolver
from .sampling import QSubset, data_fidelity, downsample_x, select_subset, zero_fill
from .train import TrainConfig, TrainRecord, train_loop

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CoordGrid",
    "DataError",
    "DecoderConfig",
    "ExtractorConfig",
    "FormatError",
    "GradientTable",
    "ModelConfig",
    "NumericalError",
    "QSubset",
    "SasrError",
    "SliceTriple",
    "SuperResolver",
    "TrainConfig",
    "TrainRecord",
    "Volume4D",
    "data_fidelity",
    "downsample_x",
    "extract_slice_triples",
    "make_coord_grid",
    "normalize_b0",
    "select_subset",
    "train_loop",
    "zero_fill",
]

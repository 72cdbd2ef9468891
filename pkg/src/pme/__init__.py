"""Parametric model embedding: design-space reduction with analytical backmapping."""

from .dataset import (
    ElementMeasures,
    FilterReport,
    Mode,
    RawSample,
    SnapshotSet,
    assemble,
    iqr_filter,
    load_snapshots,
    sobol_sample,
    write_snapshots,
)
from .embedding import (
    EmbeddingConfig,
    EmbeddingModel,
    backmap,
    bounds,
    build_gw,
    fit,
    load_model,
    normalized_components,
    participation,
    project_sample,
    save_model,
    truncate,
    variance_convergence,
)
from .errors import NumericalError, PMEError, ValidationError
from .gpca import Spectrum, project, solve_snapshot
from .surrogate import SyntheticCase

__version__ = "0.1.0"

"""Mixtures of bilinear factor analyzers for matrix-valued data.

Clustering and semi-supervised classification of datasets whose observations
are matrices, with simultaneous low-rank reduction of both matrix dimensions,
fitted by a three-stage alternating ECM algorithm and selected by BIC.
"""

__version__ = "0.1.0"

from .aecm import (
    FitConfig,
    FitResult,
    aitken_decision,
    fit_multi_start,
    fit_once,
    observed_log_lik,
    random_init,
    stage1_update,
    stage2_update,
    stage3_update,
)
from .dataio import (
    DataSet3D,
    SyntheticSpec,
    generate,
    mask_labels,
    read_idx_images,
    read_t3,
    sim_spec,
    write_heatmap_pgm,
    write_t3,
)
from .errors import (
    DegeneracyError,
    EmptyComponentError,
    FitError,
    FormatError,
    InputError,
    MvbfaError,
)
from .matnorm import (
    VARIANCE_FLOOR,
    MatNormParams,
    StructuredScale,
    log_density,
    mahalanobis_trace,
    sample,
)
from .metrics import ari, confusion, mat_one_norm, match_components, mcr
from .model import (
    ComponentParams,
    LatentMoments,
    MixtureParams,
    component_log_density,
    latent_moments,
    map_classify,
    responsibilities,
)
from .modelfile import read_model, write_model
from .selection import (
    GridResult,
    GridSpec,
    SelectionRecord,
    bic,
    count_params,
    grid_search,
    selection_table,
)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Mixtures of factor analyzers: EM in the covariance form, constrained SGD
in the precision form, sampling, outlier scoring and file I/O."""

from .dataio import Dataset, load_csv, load_idx, load_model, save_model, synth_generate
from .em import EmConfig, FitReport, e_step, fit_em, kmeans_init, m_step, ppca_closed_form
from .errors import (
    DegeneratePointError,
    IndefiniteMatrixError,
    MfaError,
    ModelFileError,
    ParseError,
    SingularMatrixError,
)
from .model import (
    MfaComponent,
    MfaModel,
    PrecisionComponent,
    PrecisionModel,
    component_loglik,
    precision_loglik,
    precision_to_generative,
    responsibilities,
    sample,
    score_samples,
    to_covariance_model,
    total_loglik,
)
from .scoring import ScoreSet, roc_auc
from .sgd import SgdConfig, apply_constraints, batch_grad, fit_sgd

__version__ = "0.1.0"

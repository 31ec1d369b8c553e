"""Mixture-of-factor-analyzers models in covariance and precision form.

Covariance form: component k has ``Sigma_k = L_k L_k^T + diag(psi_k)``.
Precision form: component k has ``P_k = diag(e_k) - G_k G_k^T`` with
``e_k = s_k**2`` (``s_k`` stored as ``sqrt_prec``).  Both share one mixture
code path: component log-densities never include ``log(weight)``; the
weights are added only when computing responsibilities and totals.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .errors import DegeneratePointError, IndefiniteMatrixError
from .linalg import logsumexp, lowrank_inverse_action, lowrank_logdet, sym_eig_small

PSI_FLOOR = 1e-6
PSI_MODES = ("free", "tied", "isotropic")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class MfaComponent:
    weight: float
    mean: np.ndarray
    loading: np.ndarray
    noise: np.ndarray


@dataclass
class PrecisionComponent:
    weight: float
    mean: np.ndarray
    sqrt_prec: np.ndarray
    prec_loading: np.ndarray

    @property
    def prec_diag(self):
        return self.sqrt_prec ** 2


class MfaModel:
    """K factor analyzers stored as stacked arrays.

    Parameters
    ----------
    weights : (K,) mixture weights, summing to one
    means : (K, D)
    loadings : (K, D, M)
    noise : (K, D) diagonal noise variances
    psi_mode : "free", "tied" or "isotropic"
    """

    def __init__(self, weights, means, loadings, noise, psi_mode="free"):
        self.weights = np.array(weights, dtype=np.float64)
        self.means = np.array(means, dtype=np.float64)
        self.loadings = np.array(loadings, dtype=np.float64)
        self.noise = np.array(noise, dtype=np.float64)
        if psi_mode not in PSI_MODES:
            raise ValueError(f"psi_mode must be one of {PSI_MODES}, got {psi_mode!r}")
        self.psi_mode = psi_mode
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.noise.shape != (k, d):
            raise ValueError("inconsistent weight/mean/noise shapes")
        if self.loadings.ndim != 3 or self.loadings.shape[:2] != (k, d):
            raise ValueError(f"loadings must have shape ({k}, {d}, M)")

    @property
    def dims(self):
        return self.loadings.shape

    def component(self, k):
        return MfaComponent(self.weights[k], self.means[k], self.loadings[k], self.noise[k])

    @property
    def components(self):
        return [self.component(k) for k in range(len(self.weights))]

    @classmethod
    def from_components(cls, components, psi_mode="free"):
        return cls(
            [c.weight for c in components],
            [c.mean for c in components],
            [c.loading for c in components],
            [c.noise for c in components],
            psi_mode,
        )

    def copy(self):
        return MfaModel(self.weights, self.means, self.loadings, self.noise, self.psi_mode)

    def check(self, weight_tol=1e-12):
        """Raise ValueError if a model invariant is violated."""
        if not np.all(np.isfinite(self.loadings)) or not np.all(np.isfinite(self.means)):
            raise ValueError("non-finite means or loadings")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > weight_tol:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, expected 1")
        if np.any(~(self.noise >= PSI_FLOOR)):
            raise ValueError(f"noise variances must be >= {PSI_FLOOR}")
        if self.psi_mode == "tied" and np.any(self.noise != self.noise[0]):
            raise ValueError("tied model has differing noise vectors")
        if self.psi_mode == "isotropic" and np.any(self.noise != self.noise[:, :1]):
            raise ValueError("isotropic model has non-constant noise diagonal")

    def __repr__(self):
        k, d, m = self.dims
        return f"MfaModel(K={k}, D={d}, M={m}, psi_mode={self.psi_mode!r})"


class PrecisionModel:
    """K components in precision form.

    Parameters
    ----------
    weights : (K,)
    means : (K, D)
    sqrt_prec : (K, D), the diagonal precision is ``sqrt_prec**2``
    prec_loading : (K, D, M)
    m_min, d_max : eigenvalue floor for ``M_k`` and ceiling on the diagonal
        precision, kept with the model so they survive a save/load cycle
    """

    def __init__(self, weights, means, sqrt_prec, prec_loading, m_min=1e-4, d_max=20.0):
        self.weights = np.array(weights, dtype=np.float64)
        self.means = np.array(means, dtype=np.float64)
        self.sqrt_prec = np.array(sqrt_prec, dtype=np.float64)
        self.prec_loading = np.array(prec_loading, dtype=np.float64)
        self.m_min = float(m_min)
        self.d_max = float(d_max)
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.sqrt_prec.shape != (k, d):
            raise ValueError("inconsistent weight/mean/precision shapes")
        if self.prec_loading.ndim != 3 or self.prec_loading.shape[:2] != (k, d):
            raise ValueError(f"prec_loading must have shape ({k}, {d}, M)")

    @property
    def dims(self):
        return self.prec_loading.shape

    @property
    def prec_diag(self):
        return self.sqrt_prec ** 2

    def component(self, k):
        return PrecisionComponent(self.weights[k], self.means[k], self.sqrt_prec[k],
                                  self.prec_loading[k])

    @property
    def components(self):
        return [self.component(k) for k in range(len(self.weights))]

    def copy(self):
        return PrecisionModel(self.weights, self.means, self.sqrt_prec, self.prec_loading,
                              self.m_min, self.d_max)

    def check(self, weight_tol=1e-12):
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > weight_tol:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, expected 1")
        if not np.all(np.isfinite(self.prec_loading)) or not np.all(np.isfinite(self.means)):
            raise ValueError("non-finite means or loadings")
        if np.any(~(self.prec_diag > 0)):
            raise ValueError("diagonal precisions must be positive")
        for k in range(len(self.weights)):
            w = sym_eig_small(m_matrix(self.prec_diag[k], self.prec_loading[k])).eigenvalues
            if w.size and w[-1] <= 0:
                raise ValueError(f"M matrix of component {k} is not positive definite")

    def __repr__(self):
        k, d, m = self.dims
        return f"PrecisionModel(K={k}, D={d}, M={m})"


def m_matrix(prec_diag, prec_loading):
    """``I - G^T diag(e)^{-1} G``, symmetrized to kill rounding asymmetry."""
    g = np.asarray(prec_loading, dtype=np.float64)
    inner = g.T @ (g / np.asarray(prec_diag)[:, None])
    m = np.eye(g.shape[1]) - inner
    return 0.5 * (m + m.T)


def component_loglik(comp, x):
    """Gaussian log-density of one covariance-form component.

    ``x`` may be one point (D,) or a batch (N, D).  The mixture weight is
    not included.
    """
    x = np.asarray(x, dtype=np.float64)
    xc = x - comp.mean
    d = xc.shape[-1]
    logdet = lowrank_logdet(comp.loading, comp.noise)
    solved, _ = lowrank_inverse_action(comp.loading, comp.noise, xc.T)
    maha = np.sum(xc.T * solved, axis=0)
    return -0.5 * (d * LOG_2PI + logdet + maha)


def _precision_logdet(e, g):
    w = sym_eig_small(m_matrix(e, g)).eigenvalues
    if w.size and not w[-1] > 0:
        raise IndefiniteMatrixError(f"M matrix has eigenvalue {w[-1]:.6g} <= 0")
    return float(np.sum(np.log(w)) + np.sum(np.log(e)))


def precision_loglik(comp, x):
    """Gaussian log-density of one precision-form component (no D x D matrices)."""
    x = np.asarray(x, dtype=np.float64)
    e = comp.sqrt_prec ** 2
    xc = x - comp.mean
    d = xc.shape[-1]
    logdet_p = _precision_logdet(e, comp.prec_loading)
    proj = xc @ comp.prec_loading
    quad = np.sum(e * xc * xc, axis=-1) - np.sum(proj * proj, axis=-1)
    return -0.5 * (d * LOG_2PI - logdet_p + quad)


def component_logliks(model, x):
    """N x K matrix of per-component log-densities (weights excluded)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check_dim(model, x)
    if isinstance(model, PrecisionModel):
        fn = precision_loglik
    else:
        fn = component_loglik
    out = np.empty((x.shape[0], len(model.weights)))
    for k, comp in enumerate(model.components):
        out[:, k] = fn(comp, x)
    return out


def log_joint(model, x):
    """N x K matrix of ``log(weight_k) + log p_k(x_n)``."""
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return component_logliks(model, x) + log_w


def _check_dim(model, x):
    d = model.dims[1]
    if x.shape[1] != d:
        raise ValueError(f"data has {x.shape[1]} features, model expects {d}")


def normalize_log(logp):
    """Row-normalize a log-joint matrix, returning (responsibilities, row totals)."""
    totals = logsumexp(logp, axis=1)
    if np.any(~np.isfinite(totals)):
        bad = int(np.flatnonzero(~np.isfinite(totals))[0])
        raise DegeneratePointError(f"data point {bad} has zero density under every component")
    return np.exp(logp - totals[:, None]), totals


def responsibilities(model, x):
    """Posterior component probabilities, computed in log space."""
    return normalize_log(log_joint(model, x))[0]


def score_samples(model, x):
    """Per-sample mixture log-likelihood ``log sum_k w_k p_k(x_n)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        return np.zeros(0)
    return normalize_log(log_joint(model, x))[1]


def total_loglik(model, x):
    return float(np.sum(score_samples(model, x)))


def precision_to_generative(comp):
    """Recover (noise, loading) of the generative model from a precision component.

    With ``M = V diag(w) V^T``, the loading is ``E^{-1} G V diag(w)^{-1/2}``;
    any further rotation of the latent space leaves the covariance unchanged
    and is dropped.  When ``M`` is already diagonal ``V`` is a signed
    permutation.
    """
    e = comp.sqrt_prec ** 2
    g = np.asarray(comp.prec_loading, dtype=np.float64)
    w, v = sym_eig_small(m_matrix(e, g))
    if w.size and not w[-1] > 0:
        raise IndefiniteMatrixError(f"M matrix has eigenvalue {w[-1]:.6g} <= 0")
    noise = np.maximum(1.0 / e, PSI_FLOOR)
    loading = (g / e[:, None]) @ v / np.sqrt(w)
    return noise, loading


def to_covariance_model(model):
    """Convert a PrecisionModel into the equivalent MfaModel (free noise)."""
    if isinstance(model, MfaModel):
        return model
    noise, loadings = zip(*(precision_to_generative(c) for c in model.components))
    return MfaModel(model.weights, model.means, np.array(loadings), np.array(noise))


def sample(model, n, seed, component=None):
    """Draw ``n`` points from the mixture.

    Returns ``(x, labels)``.  If ``component`` is given every point comes
    from that component instead of a weight-driven draw.
    """
    model = to_covariance_model(model)
    k, d, m = model.dims
    if n < 0:
        raise ValueError("n must be non-negative")
    rs = _rng.make_rng(seed)
    if component is None:
        labels = _rng.categorical(rs, model.weights, n)
    else:
        if not 0 <= component < k:
            raise ValueError(f"component {component} out of range for K={k}")
        labels = np.full(n, component, dtype=np.int64)
    z = _rng.standard_normal(rs, (n, m))
    eps = _rng.standard_normal(rs, (n, d))
    x = (model.means[labels]
         + np.einsum("ndm,nm->nd", model.loadings[labels], z)
         + eps * np.sqrt(model.noise[labels]))
    return x, labels.astype(np.int64)


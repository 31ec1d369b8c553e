"""Constrained mini-batch SGD for precision-form MFA, from random init.

Training runs in two phases: first only the means move, then every
parameter is updated with per-parameter gradient weights.  After each step
the constraint pass clips the diagonal precisions, rotates each loading
matrix so that ``M_k = I - G_k^T E_k^{-1} G_k`` is diagonal, and shrinks
loading columns whose ``M_k`` eigenvalue fell below ``m_min``.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .em import FitReport
from .errors import IndefiniteMatrixError, MfaError
from .linalg import JACOBI_TOL, _offdiag_norm, sym_eig_small
from .model import LOG_2PI, PrecisionModel, m_matrix, normalize_log, total_loglik

log = logging.getLogger(__name__)

PREC_FLOOR = 1e-6


@dataclass
class SgdConfig:
    epochs_phase1: int = 15
    epochs_phase2: int = 50
    batch_size: int = 100
    learning_rate: float = 0.01
    # gradient weights for (means, diagonal precisions, loadings)
    grad_weights: tuple = (1.0, 0.1, 0.1)
    d_max: float = 20.0
    m_min: float = 1e-4
    m_init: float = 1e-4
    centroid_init_range: tuple = (-0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("batch size must be positive and epoch counts non-negative")
        if not self.learning_rate > 0 or not self.d_max > 0:
            raise ValueError("learning_rate and d_max must be positive")
        if not 0 < self.m_min < 1 or not 0 < self.m_init < 1:
            raise ValueError("m_min and m_init must lie in (0, 1)")
        if any(w < 0 for w in self.grad_weights):
            raise ValueError("gradient weights must be non-negative")


@dataclass
class GradientSet:
    """Gradients of the summed mini-batch log-likelihood (ascent direction)."""

    d_mean: np.ndarray
    d_sqrt_prec: np.ndarray
    d_prec_loading: np.ndarray
    d_logit: np.ndarray


def softmax(logits):
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def _m_inverse_and_logdet(e, g):
    k, _, m = g.shape
    inv = np.empty((k, m, m))
    logdet = np.empty(k)
    for j in range(k):
        w, v = sym_eig_small(m_matrix(e[j], g[j]))
        if w.size and not w[-1] > 0:
            raise IndefiniteMatrixError(
                f"M matrix of component {j} has eigenvalue {w[-1]:.6g}; run apply_constraints")
        inv[j] = (v / w) @ v.T
        logdet[j] = np.sum(np.log(w))
    return inv, logdet


def batch_grad(model, batch):
    """Analytic gradients of ``sum_n log sum_k pi_k p_k(x_n)`` on a batch.

    Weights are parameterized as ``softmax(logits)``; the diagonal
    precision as ``sqrt_prec**2``.  Returns ``(GradientSet, batch_loglik)``.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    k, d, m = model.dims
    s = model.sqrt_prec
    e = s * s
    g = model.prec_loading
    m_inv, logdet_m = _m_inverse_and_logdet(e, g)

    xc = x[:, None, :] - model.means[None, :, :]           # (B, K, D)
    proj = np.einsum("bkd,kdm->bkm", xc, g)                # G^T x~
    quad = np.einsum("kd,bkd->bk", e, xc * xc) - np.sum(proj * proj, axis=2)
    logdet_p = logdet_m + np.sum(np.log(e), axis=1)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    ll = -0.5 * (d * LOG_2PI - logdet_p[None, :] + quad) + log_w
    resp, row_ll = normalize_log(ll)
    nk = resp.sum(axis=0)

    # d/dmu: P x~ = E x~ - G G^T x~
    px = e[None] * xc - np.einsum("kdm,bkm->bkd", g, proj)
    d_mean = np.einsum("bk,bkd->kd", resp, px)

    # d/dE_j: 0.5 * (G M^-1 G^T)_jj / E_j^2 + 0.5 / E_j - 0.5 * x~_j^2
    gmg = np.einsum("kdm,kmn,kdn->kd", g, m_inv, g)
    d_e = 0.5 * nk[:, None] * (gmg / (e * e) + 1.0 / e) \
        - 0.5 * np.einsum("bk,bkd->kd", resp, xc * xc)
    d_sqrt = 2.0 * s * d_e

    # d/dG: -E^-1 G M^-1 + x~ (G^T x~)^T
    d_g = -nk[:, None, None] * np.einsum("kdm,kmn->kdn", g / e[:, :, None], m_inv) \
        + np.einsum("bk,bkd,bkm->kdm", resp, xc, proj)

    d_logit = nk - x.shape[0] * model.weights
    grads = GradientSet(d_mean, d_sqrt, d_g, d_logit)
    return grads, float(row_ll.sum())


def apply_constraints(model, m_min, d_max):
    """Project a precision model back onto the feasible set.

    Clips ``sqrt_prec**2`` into ``[PREC_FLOOR, d_max]``, rotates every loading
    matrix by the eigenvectors of its ``M_k`` (skipped when ``M_k`` is
    already diagonal) and rescales each loading column whose ``M_k``
    eigenvalue is below ``m_min`` so that the eigenvalue becomes exactly
    ``m_min``.  Returns a new model.
    """
    out = model.copy()
    s = out.sqrt_prec
    e = s * s
    bad = (e > d_max) | (e < PREC_FLOOR) | (s < 0)
    if np.any(bad):
        s[bad] = np.sqrt(np.clip(e[bad], PREC_FLOOR, d_max))
        # sqrt(d_max)**2 can round above d_max
        over = s * s > d_max
        s[over] = np.nextafter(s[over], 0.0)
    e = s * s
    g = out.prec_loading
    k, _, m = g.shape
    for j in range(k):
        mj = m_matrix(e[j], g[j])
        if _offdiag_norm(mj) > JACOBI_TOL * max(1.0, float(np.linalg.norm(mj))):
            w, v = sym_eig_small(mj)
            g[j] = g[j] @ v
        else:
            w = np.diag(mj).copy()
        low = w < m_min
        if np.any(low):
            # column i contributes 1 - w_i to M_ii; rescale it to 1 - m_min
            g[j][:, low] *= np.sqrt((1.0 - m_min) / (1.0 - w[low]))
            # second pass from the fresh column norms removes rounding left
            # over when 1 - w was large
            inner = np.sum(g[j][:, low] ** 2 / e[j][:, None], axis=0)
            g[j][:, low] *= np.sqrt((1.0 - m_min) / inner)
    return out


def init_precision_model(x_dim, k, m, config):
    """Random initial model: uniform centroids, ``E_k = d_max I`` and
    orthogonal loading columns giving ``M_k = (1 - m_init) I``."""
    rs = _rng.make_rng(config.seed)
    lo, hi = config.centroid_init_range
    means = lo + (hi - lo) * rs.random((k, x_dim))
    sqrt_prec = np.full((k, x_dim), np.sqrt(config.d_max))
    loadings = np.empty((k, x_dim, m))
    scale = np.sqrt(config.m_init * config.d_max)
    for j in range(k):
        q, _ = np.linalg.qr(_rng.standard_normal(rs, (x_dim, m)))
        loadings[j] = q * scale
    model = PrecisionModel(np.full(k, 1.0 / k), means, sqrt_prec, loadings,
                           config.m_min, config.d_max)
    return apply_constraints(model, config.m_min, config.d_max)


def fit_sgd(x, k, m, config=None, callback=None, init=None):
    """Train a PrecisionModel by constrained SGD.

    Mini-batches are reshuffled every epoch.  Each step moves parameters by
    ``learning_rate * weight * gradient / batch_rows``; in the first
    ``epochs_phase1`` epochs only the means move.  ``callback(step, model)``
    is invoked after every constraint pass.  The report's trace holds the
    full-data log-likelihood after each epoch.
    """
    config = config or SgdConfig()
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 0 <= m < d:
        raise MfaError(f"latent dimension {m} must be in [0, {d})")
    if n == 0:
        raise MfaError("no training data")
    start = time.perf_counter()
    model = init if init is not None else init_precision_model(d, k, m, config)
    logits = np.log(model.weights)
    logits -= logits.max()
    rs = _rng.make_rng(config.seed + 7919)
    lr = config.learning_rate
    w_mean, w_prec, w_load = config.grad_weights

    report = FitReport()
    step = 0
    for epoch in range(config.epochs_phase1 + config.epochs_phase2):
        phase2 = epoch >= config.epochs_phase1
        order = rs.permutation(n)
        batch_ll = []
        for lo in range(0, n, config.batch_size):
            batch = x[order[lo:lo + config.batch_size]]
            grads, bll = batch_grad(model, batch)
            batch_ll.append(bll / len(batch))
            step_size = lr / len(batch)
            model.means += step_size * w_mean * grads.d_mean
            if phase2:
                model.sqrt_prec += step_size * w_prec * grads.d_sqrt_prec
                model.prec_loading += step_size * w_load * grads.d_prec_loading
                logits += step_size * grads.d_logit
                model.weights = softmax(logits)
            model = apply_constraints(model, config.m_min, config.d_max)
            step += 1
            if callback is not None:
                callback(step, model)
        report.batch_loglik.append(float(np.mean(batch_ll)))
        ll = total_loglik(model, x)
        report.loglik_trace.append(ll)
        report.iterations_run = epoch + 1
        log.debug("epoch %d (phase %d) loglik %.6f", epoch, 2 if phase2 else 1, ll)

    report.final_loglik = report.loglik_trace[-1] if report.loglik_trace else total_loglik(model, x)
    report.wall_time = time.perf_counter() - start
    return model, report

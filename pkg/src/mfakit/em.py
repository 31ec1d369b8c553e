"""Batch EM for mixtures of factor analyzers (covariance form)."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import MfaError, SingularMatrixError
from .linalg import lowrank_inverse_action, solve_small
from .model import PSI_FLOOR, PSI_MODES, MfaModel, log_joint, normalize_log

log = logging.getLogger(__name__)

SINGULAR_RIDGE = 1e-10


@dataclass
class EmConfig:
    max_iters: int = 200
    rel_tol: float = 1e-6
    psi_mode: str = "free"
    kmeans_iters: int = 100
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.psi_mode not in PSI_MODES:
            raise ValueError(f"psi_mode must be one of {PSI_MODES}")


@dataclass
class FitReport:
    loglik_trace: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    wall_time: float = 0.0
    final_loglik: float = float("nan")
    regularized_steps: int = 0
    # SGD only: mean per-row batch log-likelihood of each epoch
    batch_loglik: list = field(default_factory=list)


@dataclass
class EStepStats:
    """Responsibility-weighted sufficient statistics, one entry per component.

    Shapes: resp_sum (K,), latent_mean (K, N, M) holding <s_k> for every
    point, latent_second (K, M, M) = sum_i g_ik <s s^T>_i, cross (K, D, M) =
    sum_i g_ik (x_i - mu_k) <s_k>_i^T, and the plain weighted sums used by
    the mean update.  ``model`` is the model the statistics were
    computed under; the M-step needs its loadings.
    """

    resp_sum: np.ndarray
    latent_mean: np.ndarray
    latent_second: np.ndarray
    cross: np.ndarray
    sum_x: np.ndarray
    sum_s: np.ndarray
    beta: np.ndarray
    model: MfaModel


def kmeans_init(x, k, iters, seed, restarts=1):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(centers, assignments)`` of the lowest-distortion run among
    ``restarts`` independent seedings.  A cluster that empties out is
    re-seeded at the point farthest from its current center.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n < k:
        raise MfaError(f"need at least K={k} points, got {n}")
    rs = _rng.make_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        centers, assign = _kmeans_once(x, k, iters, rs)
        dist = float(np.sum((x - centers[assign]) ** 2))
        if best is None or dist < best[0]:
            best = (dist, centers, assign)
    return best[1], best[2]


def _kmeans_once(x, k, iters, rs):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rs.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(_rng.categorical(rs, d2, 1)[0])
        else:
            idx = int(rs.integers(n))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))

    assign = None
    for _ in range(max(iters, 1)):
        dist = _sq_dists(x, centers)
        new_assign = np.argmin(dist, axis=1)
        own = dist[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            movable = counts[new_assign] > 1
            far = int(np.argmax(np.where(movable, own, -1.0)))
            counts[new_assign[far]] -= 1
            counts[j] = 1
            new_assign[far] = j
            own[far] = 0.0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centers[j] = x[assign == j].mean(axis=0)
    return centers, assign


def _sq_dists(x, centers):
    d = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T
         + np.sum(centers * centers, axis=1)[None, :])
    return np.maximum(d, 0.0)


def ppca_closed_form(x_cluster, m):
    """Maximum-likelihood probabilistic PCA of one cluster.

    Returns ``(mean, loading, iso_var)`` with ``iso_var`` the mean of the
    D - m smallest eigenvalues of the (biased) sample covariance, floored at
    ``PSI_FLOOR``.
    """
    x = np.asarray(x_cluster, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise MfaError(f"PPCA needs at least 2 points, got {n}")
    if not 0 <= m < d:
        raise MfaError(f"latent dimension {m} must be in [0, {d})")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    sigma2 = max(float(np.mean(evals[m:])), PSI_FLOOR)
    scale = np.sqrt(np.maximum(evals[:m] - sigma2, 0.0))
    return mean, evecs[:, :m] * scale, sigma2


def init_model(x, k, m, config):
    """K-means clusters, each summarized by a closed-form PPCA fit."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    centers, assign = kmeans_init(x, k, config.kmeans_iters, config.seed,
                                  config.kmeans_restarts)
    rs = _rng.make_rng(config.seed + 1)
    global_fit = None
    weights = np.empty(k)
    loadings = np.empty((k, d, m))
    noise = np.empty((k, d))
    means = centers.copy()
    for j in range(k):
        members = x[assign == j]
        weights[j] = max(len(members), 1)
        try:
            mu, lam, s2 = ppca_closed_form(members, m)
        except MfaError:
            if global_fit is None:
                global_fit = ppca_closed_form(x, m)
            _, lam, s2 = global_fit
            mu = centers[j] + np.sqrt(s2) * 1e-2 * _rng.standard_normal(rs, (d,))
            log.info("cluster %d has %d points, using global PPCA", j, len(members))
        means[j] = mu
        loadings[j] = lam
        noise[j] = s2
    weights /= weights.sum()
    model = MfaModel(weights, means, loadings, noise, config.psi_mode)
    if config.psi_mode == "tied":
        model.noise[:] = weights @ model.noise
    return model


def e_step(model, x):
    """Responsibilities, sufficient statistics and the data log-likelihood."""
    x = np.asarray(x, dtype=np.float64)
    k, d, m = model.dims
    n = x.shape[0]
    resp, row_ll = normalize_log(log_joint(model, x))

    stats = EStepStats(
        resp_sum=resp.sum(axis=0),
        latent_mean=np.empty((k, n, m)),
        latent_second=np.empty((k, m, m)),
        cross=np.empty((k, d, m)),
        sum_x=resp.T @ x,
        sum_s=np.empty((k, m)),
        beta=np.empty((k, m, d)),
        model=model,
    )
    for j in range(k):
        lam = model.loadings[j]
        xc = x - model.means[j]
        _, beta = lowrank_inverse_action(lam, model.noise[j], np.zeros(d))
        s = xc @ beta.T
        g = resp[:, j]
        gs = s * g[:, None]
        stats.beta[j] = beta
        stats.latent_mean[j] = s
        stats.latent_second[j] = stats.resp_sum[j] * (np.eye(m) - beta @ lam) + s.T @ gs
        stats.cross[j] = xc.T @ gs
        stats.sum_s[j] = gs.sum(axis=0)
    return resp, stats, float(row_ll.sum())


def _m_step(x, resp, stats, psi_mode, psi_floor=PSI_FLOOR):
    old = stats.model
    n, d = x.shape
    k, _, m = old.dims
    means = old.means.copy()
    loadings = old.loadings.copy()
    raw_noise = old.noise.copy()
    regularized = False
    # weighted sums are rebuilt from resp so any responsibility matrix works
    resp = np.asarray(resp, dtype=np.float64)
    resp_sum = resp.sum(axis=0)
    for j in range(k):
        nk = resp_sum[j]
        if nk <= 1e-300:
            continue
        g = resp[:, j]
        lam_old = old.loadings[j]
        s = stats.latent_mean[j]
        gs = s * g[:, None]
        mu = (g @ x - lam_old @ gs.sum(axis=0)) / nk
        xc = x - mu
        cross = xc.T @ gs
        second = nk * (np.eye(m) - stats.beta[j] @ lam_old) + s.T @ gs
        if m:
            try:
                lam = solve_small(second.T, cross.T).T
            except SingularMatrixError:
                lam = solve_small(second.T + SINGULAR_RIDGE * np.eye(m), cross.T).T
                regularized = True
        else:
            lam = lam_old
        sq = g @ (xc * xc)
        explained = np.sum(lam * cross, axis=1)
        means[j] = mu
        loadings[j] = lam
        raw_noise[j] = (sq - explained) / nk
    weights = resp_sum / resp_sum.sum()
    if psi_mode == "tied":
        raw_noise[:] = (resp_sum @ raw_noise) / resp_sum.sum()
    elif psi_mode == "isotropic":
        raw_noise[:] = raw_noise.mean(axis=1, keepdims=True)
    noise = raw_noise if psi_floor is None else np.maximum(raw_noise, psi_floor)
    return MfaModel(weights, means, loadings, noise, psi_mode), regularized


def m_step(x, resp, stats, psi_mode, psi_floor=PSI_FLOOR):
    """Closed-form parameter updates from E-step statistics.

    Order: mean with the old loading, loading with the new mean, noise with
    both new values, then the weights.  Tied and isotropic constraints are
    applied to the raw noise estimate before flooring at ``psi_floor``.
    Components with zero total responsibility keep their old parameters.
    ``psi_floor=None`` disables the floor (for diagnosing instability only).
    """
    new, regularized = _m_step(np.asarray(x, dtype=np.float64), resp, stats, psi_mode,
                               psi_floor)
    if regularized:
        log.warning("singular latent second moment, added %.0e ridge", SINGULAR_RIDGE)
    return new


def fit_em(x, k, m, config=None, init=None):
    """Fit an MfaModel by EM.

    Each iteration runs an E-step, records the log-likelihood of the current
    model and, unless the relative change since the previous iteration is
    below ``config.rel_tol``, an M-step.  On convergence the returned model
    is the one whose log-likelihood was recorded last; when ``max_iters`` is
    exhausted it is the output of the final M-step.
    """
    config = config or EmConfig()
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < k:
        raise MfaError(f"need at least K={k} points, got {n}")
    if not 0 <= m < d:
        raise MfaError(f"latent dimension {m} must be in [0, {d})")
    start = time.perf_counter()
    report = FitReport()
    model = init if init is not None else init_model(x, k, m, config)

    prev = None
    for it in range(config.max_iters):
        resp, stats, ll = e_step(model, x)
        report.loglik_trace.append(ll)
        report.iterations_run = it + 1
        if prev is not None and abs(ll - prev) <= config.rel_tol * abs(prev):
            report.converged = True
            break
        prev = ll
        model, regularized = _m_step(x, resp, stats, config.psi_mode)
        report.regularized_steps += int(regularized)
        log.debug("iter %d loglik %.6f", it, ll)

    if report.converged:
        report.final_loglik = report.loglik_trace[-1]
    else:
        report.final_loglik = float(normalize_log(log_joint(model, x))[1].sum())
    report.wall_time = time.perf_counter() - start
    return model, report

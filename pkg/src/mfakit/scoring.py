"""Outlier scores and ROC AUC."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .model import score_samples

__all__ = ["ScoreSet", "roc_auc", "score_samples"]


@dataclass
class ScoreSet:
    inlier_scores: np.ndarray
    outlier_scores: np.ndarray


def roc_auc(inlier_scores, outlier_scores=None):
    """Probability that a random inlier scores above a random outlier.

    Ties count one half.  Accepts either two score sequences or a single
    :class:`ScoreSet`.  Uses the Mann-Whitney rank-sum form, which equals
    the trapezoidal area under the ROC curve.
    """
    if isinstance(inlier_scores, ScoreSet):
        inlier_scores, outlier_scores = inlier_scores.inlier_scores, inlier_scores.outlier_scores
    pos = np.asarray(inlier_scores, dtype=np.float64).ravel()
    neg = np.asarray(outlier_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs at least one inlier and one outlier score")
    if np.any(np.isnan(pos)) or np.any(np.isnan(neg)):
        raise ValueError("scores contain NaN")
    ranks = rankdata(np.concatenate([pos, neg]))
    n_pos, n_neg = pos.size, neg.size
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))

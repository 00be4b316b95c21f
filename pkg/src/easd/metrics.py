"""Detection metrics: accuracy, ROC AUC, equal error rate, embedding similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, ShapeError
from .nn import cosine_similarity


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels).reshape(-1).astype(int)
        if self.scores.shape != self.labels.shape:
            raise ShapeError(f"{len(self.scores)} scores but {len(self.labels)} labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    def require_both_classes(self):
        if not (self.labels == 1).any() or not (self.labels == 0).any():
            raise DataError("need at least one positive and one negative example")
        return self.scores[self.labels == 1], self.scores[self.labels == 0]


def accuracy(decisions, truths) -> float:
    """Percentage of decisions equal to the truth."""
    if len(decisions) != len(truths):
        raise ShapeError(f"{len(decisions)} decisions but {len(truths)} truths")
    if not decisions:
        raise DataError("accuracy of an empty decision list")
    return 100.0 * sum(d == t for d, t in zip(decisions, truths)) / len(truths)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg), ties counting one half."""
    s = ScoredSet(scores, labels)
    pos, neg = s.require_both_classes()
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[:len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def far_frr(scores, labels, threshold):
    """Rates when accepting ``score >= threshold`` as a match."""
    s = ScoredSet(scores, labels)
    pos, neg = s.require_both_classes()
    return float(np.mean(neg >= threshold)), float(np.mean(pos < threshold))


def eer_with_threshold(scores, labels):
    """Equal error rate and the swept threshold closest to the crossing.

    Thresholds are the unique scores plus +inf (accept nothing).  FAR falls
    and FRR rises along the sweep; the EER is read off the straight line
    joining the two thresholds that bracket the sign change of FAR - FRR.
    """
    s = ScoredSet(scores, labels)
    pos, neg = s.require_both_classes()
    thresholds = np.append(np.unique(s.scores), np.inf)
    far = 1.0 - np.searchsorted(np.sort(neg), thresholds, side="left") / len(neg)
    frr = np.searchsorted(np.sort(pos), thresholds, side="left") / len(pos)
    diff = far - frr
    i = int(np.flatnonzero(diff <= 0)[0])
    if diff[i] == 0 or i == 0:
        return float(far[i]), float(thresholds[i])
    d0, d1 = diff[i - 1], diff[i]
    frac = d0 / (d0 - d1)
    rate = far[i - 1] + frac * (far[i] - far[i - 1])
    nearest = i if abs(d1) < abs(d0) else i - 1
    return float(rate), float(thresholds[nearest])


def eer(scores, labels) -> float:
    return eer_with_threshold(scores, labels)[0]


def embedding_similarity_matrix(embeddings):
    """Pairwise cosine similarities of ``(id, vector)`` items; returns ``(ids, matrix)``."""
    ids = [i for i, _ in embeddings]
    vecs = [np.asarray(v, dtype=np.float64) for _, v in embeddings]
    if len({v.shape for v in vecs}) != 1:
        raise ShapeError("embeddings have inconsistent dimensions")
    mat = np.stack(vecs)
    a, b = np.broadcast_arrays(mat[:, None, :], mat[None, :, :])
    sim = np.atleast_2d(cosine_similarity(a, b))
    nonzero = np.linalg.norm(mat, axis=1) > 0
    sim[np.diag_indices_from(sim)] = np.where(nonzero, 1.0, 0.0)
    return ids, sim

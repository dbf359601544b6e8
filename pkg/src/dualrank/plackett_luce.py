"""Plackett-Luce distribution over rankings: log-probabilities, sampling, gradients.

Rankings here are 0-based index arrays, best first, which is the natural
form for numpy indexing. Convert with ``+ 1`` before handing a ranking to
the reward functions.
"""

from __future__ import annotations

import numpy as np


def _remaining_lse(ordered_scores: np.ndarray) -> np.ndarray:
    # lse[t] = logsumexp(ordered_scores[t:])
    return np.logaddexp.accumulate(ordered_scores[::-1])[::-1]


def pl_logprob(scores, ranking) -> float:
    """log P(ranking) under sequential softmax without replacement."""
    s = np.asarray(scores, dtype=np.float64)[np.asarray(ranking)]
    return float(np.sum(s - _remaining_lse(s)))


def pl_sample(scores, rng: np.random.Generator | int | None = None) -> tuple[np.ndarray, float]:
    """Draw one ranking with the Gumbel-max trick; returns (ranking, logprob)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    s = np.asarray(scores, dtype=np.float64)
    ranking = np.argsort(-(s + rng.gumbel(size=s.shape)), kind="stable")
    return ranking, pl_logprob(s, ranking)


def pl_grad_logprob(scores, ranking) -> np.ndarray:
    """Gradient of ``pl_logprob`` with respect to the scores.

    At step t the chosen item gains 1 and every item still available loses
    its softmax weight among the remaining items.
    """
    s = np.asarray(scores, dtype=np.float64)
    ranking = np.asarray(ranking)
    ordered = s[ranking]
    lse = _remaining_lse(ordered)
    k = len(ranking)
    # probs[t, u] = softmax weight at step t of the item placed at position u >= t
    upper = np.triu(np.ones((k, k), dtype=bool))
    probs = np.exp(np.where(upper, ordered[None, :] - lse[:, None], -np.inf))
    grad_ordered = 1.0 - probs.sum(axis=0)
    grad = np.empty(k)
    grad[ranking] = grad_ordered
    return grad


def pl_grad_weights(weights, features, ranking) -> np.ndarray:
    """Gradient of log P(ranking) for linear scores ``features @ weights``."""
    features = np.asarray(features, dtype=np.float64)
    scores = features @ np.asarray(weights, dtype=np.float64)
    return features.T @ pl_grad_logprob(scores, ranking)

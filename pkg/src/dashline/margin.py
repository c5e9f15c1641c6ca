"""Score vectors, argmax prediction, and margin-loss arithmetic.

These are the primitives shared by attackers (who minimize the margin of a
reference label) and defenders (who remap the predicted-label margin).
Scores are raw reals; no softmax is applied anywhere.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_score_vector",
    "predicted_label",
    "margin_loss",
    "margin_loss_predicted",
]


class InvalidLabelError(ValueError):
    """Reference label index out of range for the score vector."""


def as_score_vector(scores) -> np.ndarray:
    """Validate and return scores as a 1-D float array of length >= 2."""
    s = np.asarray(scores, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("score vector must be 1-D with at least 2 classes")
    if not np.all(np.isfinite(s)):
        raise ValueError("score vector entries must be finite")
    return s


def predicted_label(s) -> int:
    """Index of the maximum score; ties break to the lowest class index."""
    s = as_score_vector(s)
    return int(np.argmax(s))


def margin_loss(s, y: int) -> float:
    """Margin of class y: its score minus the best score among other classes.

    Negative margin means the model no longer favors y (attack success).
    """
    s = as_score_vector(s)
    if not 0 <= y < s.size:
        raise InvalidLabelError(f"label {y} out of range for {s.size} classes")
    others = np.delete(s, y)
    return float(s[y] - others.max())


def margin_loss_predicted(s) -> float:
    """Margin of the predicted label: top score minus runner-up (always >= 0)."""
    s = as_score_vector(s)
    return margin_loss(s, predicted_label(s))

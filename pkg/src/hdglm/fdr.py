"""Benjamini-Hochberg step-up procedure."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError

__all__ = ["benjamini_hochberg"]


def benjamini_hochberg(p_values, q: float):
    """Step-up false discovery rate control at level ``q``.

    Finds the largest ``k`` with ``p_(k) <= k q / m`` and rejects the ``k``
    smallest p-values.  Ties are ordered by original index.

    Returns
    -------
    rejected : ndarray of bool
    adjusted : ndarray of float
        Step-up adjusted p-values, ``min_{j >= rank} m p_(j) / j`` capped at 1.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError("need at least one p-value")
    if not 0 < q < 1:
        raise ValidationError(f"FDR level q must lie in (0, 1), got {q}")
    bad = ~((p >= 0) & (p <= 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"p-value at index {i} is {p[i]!r}, outside [0, 1]")

    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    below = np.flatnonzero(ranked <= ranks * q / m)
    k = int(below[-1]) + 1 if below.size else 0

    rejected = np.zeros(m, dtype=bool)
    rejected[order[:k]] = True

    scaled = ranked * m / ranks
    adj_sorted = np.minimum.accumulate(scaled[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return rejected, adjusted

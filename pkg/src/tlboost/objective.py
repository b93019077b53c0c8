"""Binary logloss objective and the second-order tree statistics built on it.

Everything here works on plain floats or numpy arrays. Leaf weights and split
gains are functions of per-node gradient/hessian sums ``G`` and ``H`` only,
which is what lets the revise layer recompute them from a new domain's data.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

PROB_EPS = 1e-15


class GradHessPair(NamedTuple):
    """Per-sample first and second derivatives of logloss w.r.t. the margin."""

    g: np.ndarray
    h: np.ndarray


def margin_to_prob(margin):
    """Standard sigmoid, clipped to stay ``PROB_EPS`` away from 0 and 1."""
    margin = np.asarray(margin, dtype=np.float64)
    prob = np.empty_like(margin)
    pos = margin >= 0
    # split by sign so exp never overflows
    prob[pos] = 1.0 / (1.0 + np.exp(-margin[pos]))
    ez = np.exp(margin[~pos])
    prob[~pos] = ez / (1.0 + ez)
    prob = np.clip(prob, PROB_EPS, 1.0 - PROB_EPS)
    return prob if prob.ndim else float(prob)


def logloss(y, p):
    """Elementwise ``-y ln p - (1 - y) ln(1 - p)``.

    Raises
    ------
    ValueError
        If any probability lies outside the open interval (0, 1).
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probability must lie in the open interval (0, 1)")
    out = -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    return out if out.ndim else float(out)


def mean_logloss(y, margin) -> float:
    return float(np.mean(logloss(y, margin_to_prob(margin))))


def grad_hess(y, margin) -> GradHessPair:
    p = np.asarray(margin_to_prob(margin), dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return GradHessPair(p - y, p * (1.0 - p))


def leaf_weight(G: float, H: float, l2_reg: float) -> float:
    """Optimal leaf value ``-G / (H + l2_reg)``."""
    denom = H + l2_reg
    if not denom > 0.0:
        raise ValueError(f"H + l2_reg must be positive, got {denom!r}")
    return -G / denom


def node_score(G: float, H: float, l2_reg: float) -> float:
    """Leaf weight of a node's statistics, 0 for an empty node with no regularisation."""
    if H + l2_reg <= 0.0:
        return 0.0
    return leaf_weight(G, H, l2_reg)


def node_objective(G: float, H: float, l2_reg: float, leaf_penalty: float) -> float:
    """Regularised objective of one leaf holding sums (G, H): ``-G^2/(2(H+l2)) + penalty``."""
    return -0.5 * G * G / (H + l2_reg) + leaf_penalty


def split_gain(left, right, l2_reg: float, leaf_penalty: float) -> float:
    """Objective decrease from splitting one leaf into ``left`` and ``right``.

    ``left`` and ``right`` are ``(G, H)`` pairs (extra trailing items such as a
    sample count are ignored).
    """
    GL, HL = left[0], left[1]
    GR, HR = right[0], right[1]
    if not (HL + l2_reg > 0.0 and HR + l2_reg > 0.0):
        raise ValueError("degenerate split: child H + l2_reg must be positive")
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + l2_reg) + GR * GR / (HR + l2_reg)
                  - G * G / (H + l2_reg)) - leaf_penalty

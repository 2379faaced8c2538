"""Candidate-segment enumeration over the clip grid.

All (start, end) clip pairs with start <= end form the proposal set; slots
are kept in row-major grid order so argmax tie-breaking is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intervals import CLIPS, Interval


def enumerate_spans(n_clips):
    """Upper-triangle (start, end) clip pairs, 1-based, row-major order."""
    starts, ends = [], []
    for s in range(1, n_clips + 1):
        for e in range(s, n_clips + 1):
            starts.append(s)
            ends.append(e)
    starts = np.asarray(starts, dtype=np.intp)
    ends = np.asarray(ends, dtype=np.intp)
    grid_index = (starts - 1) * n_clips + (ends - 1)
    return starts, ends, grid_index


def span_iou_to_extent(starts, ends, lo, hi):
    """IoU of integer clip spans against a continuous clip extent [lo, hi]."""
    s_lo = starts.astype(np.float64) - 1.0
    e_hi = ends.astype(np.float64)
    inter = np.maximum(0.0, np.minimum(e_hi, hi) - np.maximum(s_lo, lo))
    union = (e_hi - s_lo) + (hi - lo) - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)


@dataclass
class ProposalMap:
    """The flattened valid half of the start-end grid plus per-slot data."""

    n_clips: int
    starts: np.ndarray            # (K,) 1-based clip index
    ends: np.ndarray              # (K,)
    grid_index: np.ndarray        # (K,) row-major slot in the n x n grid
    valid: np.ndarray             # (K,) bool, proposals within real clips
    alpha: np.ndarray = None      # (K,) IoU to ground truth
    scores: np.ndarray = None     # (K,) predicted alignment probabilities

    @classmethod
    def build(cls, n_clips, n_valid_clips=None, gt_extent=None):
        starts, ends, grid_index = enumerate_spans(n_clips)
        if n_valid_clips is None:
            n_valid_clips = n_clips
        valid = ends <= n_valid_clips
        alpha = None
        if gt_extent is not None:
            alpha = span_iou_to_extent(starts, ends, *gt_extent)
        return cls(n_clips, starts, ends, grid_index, valid, alpha)

    @property
    def size(self):
        return self.starts.shape[0]

    def interval(self, k):
        return Interval(int(self.starts[k]), int(self.ends[k]), CLIPS)


def select_pseudo_boundary(pmap, tau):
    """Highest-scoring proposal whose overlap with the label passes `tau`.

    Returns None when no valid proposal qualifies (the caller falls back to
    the manual boundary).  Ties break toward the smallest row-major slot.
    """
    if pmap.alpha is None or pmap.scores is None:
        raise ValueError("proposal map needs alpha and scores")
    feasible = pmap.valid & (pmap.alpha >= tau)
    if not feasible.any():
        return None
    masked = np.where(feasible, pmap.scores, -np.inf)
    k = int(np.argmax(masked))
    return pmap.interval(k)


def select_top_proposal(pmap):
    """Unconstrained argmax over valid proposals (used at inference time)."""
    if pmap.scores is None:
        raise ValueError("proposal map needs scores")
    masked = np.where(pmap.valid, pmap.scores, -np.inf)
    k = int(np.argmax(masked))
    return pmap.interval(k)

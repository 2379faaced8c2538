"""Training objectives: span alignment, endpoint candidate-set likelihood,
and foreground highlighting, combined by fixed weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ops, tensor as tz
from .tensor import AutodiffError, Tensor

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    bound: float = 1.0
    align: float = 1.0
    highlight: float = 5.0

    def __post_init__(self):
        if min(self.bound, self.align, self.highlight) < 0:
            raise ValueError("loss weights must be nonnegative")


def alignment_targets(alpha, upper=0.7, lower=0.3):
    """Soft alignment labels from proposal/label overlaps.

    Overlaps at or above `upper` count as positives, below `lower` as
    negatives, and the overlap itself is the target in between; the mapping
    is monotone in alpha.
    """
    if not 0.0 <= lower < upper <= 1.0:
        raise ValueError(f"need 0 <= lower < upper <= 1, got {lower}, {upper}")
    alpha = np.asarray(alpha)
    return np.where(alpha >= upper, 1.0, np.where(alpha < lower, 0.0, alpha))


def loss_align(p_align, alpha, valid, upper=0.7, lower=0.3):
    """Mean binary cross-entropy of span scores against soft overlap labels."""
    y = alignment_targets(alpha, upper, lower)
    return ops.bce_mean(p_align, y, valid)


def _range_mass(p, sets, frame_mask):
    b, t = p.shape
    seg = np.zeros((b, t), dtype=p.data.dtype)
    for i, (lo, hi) in enumerate(sets):
        seg[i, lo - 1:hi] = 1.0
    seg *= frame_mask
    mass = tz.reduce_sum(tz.mul(p, Tensor(seg)), axis=1)
    if (mass.data < MASS_FLOOR).any():
        log.warning("candidate endpoint mass underflow; clamping at %g", MASS_FLOOR)
    return tz.clamp(mass, lo=MASS_FLOOR)


def loss_bound(p_start, p_end, start_sets, end_sets, frame_mask):
    """Negative log of the probability mass inside each candidate endpoint set.

    start_sets / end_sets are per-sample inclusive 1-based frame ranges; a
    singleton range reduces this to one-hot cross-entropy on that frame.
    """
    term_s = tz.log(_range_mass(p_start, start_sets, frame_mask))
    term_e = tz.log(_range_mass(p_end, end_sets, frame_mask))
    return tz.reduce_mean(term_s + term_e) * -1.0


def loss_bound_soft(p_start, p_end, q_start, q_end):
    """Cross-entropy against soft target distributions (kernel supervision)."""
    eps = MASS_FLOOR
    ce_s = tz.reduce_sum(tz.mul(Tensor(np.asarray(q_start, dtype=p_start.data.dtype)),
                                tz.log(tz.clamp(p_start, lo=eps))), axis=1)
    ce_e = tz.reduce_sum(tz.mul(Tensor(np.asarray(q_end, dtype=p_end.data.dtype)),
                                tz.log(tz.clamp(p_end, lo=eps))), axis=1)
    return tz.reduce_mean(ce_s + ce_e) * -1.0


def highlight_labels(span, extension, n_frames, total_frames):
    """Foreground indicator of a frame span symmetrically extended by
    `extension` x (span length), clamped to the valid frames."""
    lo, hi = span
    ext = extension * (hi - lo + 1)
    lo2 = max(1, int(np.floor(lo - ext)))
    hi2 = min(n_frames, int(np.ceil(hi + ext)))
    y = np.zeros(total_frames, dtype=np.float32)
    y[lo2 - 1:hi2] = 1.0
    return y


def loss_highlight(highlight, spans, frame_mask, n_frames, extension=0.1):
    """Mean BCE between per-frame foreground scores and the extended span."""
    b, t = highlight.shape
    y = np.zeros((b, t), dtype=highlight.data.dtype)
    for i, span in enumerate(spans):
        y[i] = highlight_labels(span, extension, int(n_frames[i]), t)
    return ops.bce_mean(highlight, y, frame_mask)


def total_loss(bound, align, high, weights):
    """Weighted sum of the three objectives."""
    for name, part in (("bound", bound), ("align", align), ("highlight", high)):
        if not np.isfinite(part.data).all():
            raise AutodiffError(f"non-finite {name} loss")
    return bound * weights.bound + align * weights.align + high * weights.highlight

"""Boundary supervision strategies.

``fixed`` keeps the annotated single-frame endpoints; ``extend`` widens them
symmetrically by a fraction of the moment length; ``kernel`` replaces them
with normalised gaussian soft targets; ``elastic`` combines the label with
the pseudo boundary mined from the alignment branch under the reliability
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intervals import FRAMES, Interval, build_elastic
from .proposals import select_pseudo_boundary

VARIANTS = ("fixed", "extend", "kernel", "elastic")


@dataclass(frozen=True)
class SupervisionStrategy:
    variant: str = "elastic"
    extend_fraction: float = 0.2      # of moment length, for `extend`
    kernel_width: float = 0.1         # gaussian std as fraction of moment length

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown supervision variant {self.variant!r}")
        if self.extend_fraction < 0 or self.kernel_width <= 0:
            raise ValueError("strategy parameters must be positive")


@dataclass
class BoundTargets:
    """Per-sample endpoint supervision for the bounding branch."""

    start_range: tuple = None      # inclusive 1-based frame range
    end_range: tuple = None
    soft_start: np.ndarray = None  # alternative soft target distribution
    soft_end: np.ndarray = None
    highlight_span: tuple = None   # frame span the foreground labels derive from
    pseudo: Interval = None        # selected pseudo boundary, for diagnostics

    @property
    def is_soft(self):
        return self.soft_start is not None


def _gaussian_target(center, sigma, n_frames):
    t = np.arange(1, n_frames + 1, dtype=np.float64)
    q = np.exp(-0.5 * ((t - center) / sigma) ** 2)
    q /= q.sum()
    return q


def make_supervision(strategy, manual, pmap=None, tau=None, grid=None, n_frames=None):
    """Build bounding-branch targets for one sample.

    `manual` is the annotated boundary in pooled-frame units.  The elastic
    variant needs the sample's proposal map (with overlaps and current
    alignment scores), the threshold, and the grid for clip-to-frame
    conversion; when no proposal passes the threshold it falls back to the
    manual boundary (singleton ranges).
    """
    if manual.unit != FRAMES:
        raise ValueError("manual boundary must be in frame units")
    s, e = int(manual.start), int(manual.end)
    if n_frames is None:
        n_frames = e
    if strategy.variant == "fixed":
        return BoundTargets(start_range=(s, s), end_range=(e, e), highlight_span=(s, e))
    if strategy.variant == "extend":
        r = int(round(strategy.extend_fraction * (e - s + 1)))
        s_rng = (max(1, s - r), min(n_frames, s + r))
        e_rng = (max(1, e - r), min(n_frames, e + r))
        return BoundTargets(start_range=s_rng, end_range=e_rng,
                            highlight_span=(s_rng[0], e_rng[1]))
    if strategy.variant == "kernel":
        sigma = max(strategy.kernel_width * (e - s + 1), 0.5)
        return BoundTargets(soft_start=_gaussian_target(s, sigma, n_frames),
                            soft_end=_gaussian_target(e, sigma, n_frames),
                            highlight_span=(s, e))
    # elastic
    pseudo_clips = select_pseudo_boundary(pmap, tau)
    pseudo = None
    if pseudo_clips is not None:
        fs, fe = grid.clips_to_frames(int(pseudo_clips.start), int(pseudo_clips.end))
        pseudo = Interval(fs, fe, FRAMES)
    eb = build_elastic(manual, pseudo)
    return BoundTargets(start_range=eb.start_range, end_range=eb.end_range,
                        highlight_span=(eb.start_range[0], eb.end_range[1]),
                        pseudo=pseudo)

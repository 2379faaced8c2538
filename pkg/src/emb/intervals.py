"""Temporal interval algebra, elastic boundaries, reliability-threshold
schedules, and the two inference modes (single boundary vs candidate ranges).

Unit convention: intervals tagged ``seconds`` are continuous [start, end];
integer-unit intervals (``frames`` or ``clips``, 1-based inclusive indices)
occupy the half-open continuous extent [start - 1, end], so a single frame
has length 1 and adjacent single frames do not overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SECONDS = "seconds"
FRAMES = "frames"
CLIPS = "clips"
_INTEGER_UNITS = (FRAMES, CLIPS)


class UnitMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    unit: str = SECONDS

    def __post_init__(self):
        if self.unit in _INTEGER_UNITS:
            if self.start != int(self.start) or self.end != int(self.end):
                raise ValueError(f"{self.unit} interval needs integer endpoints")
            if self.start < 1:
                raise ValueError("integer-unit intervals are 1-based")
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} > end {self.end}")

    def extent(self):
        """Continuous (lo, hi) span of the interval."""
        if self.unit in _INTEGER_UNITS:
            return (float(self.start) - 1.0, float(self.end))
        return (float(self.start), float(self.end))

    @property
    def length(self):
        lo, hi = self.extent()
        return hi - lo


def temporal_iou(a, b):
    """Intersection-over-union of two intervals with matching units."""
    if a.unit != b.unit:
        raise UnitMismatchError(f"cannot compare {a.unit} with {b.unit}")
    alo, ahi = a.extent()
    blo, bhi = b.extent()
    inter = max(0.0, min(ahi, bhi) - max(alo, blo))
    union = (ahi - alo) + (bhi - blo) - inter
    if union <= 0.0:
        return 1.0 if (alo, ahi) == (blo, bhi) else 0.0
    return inter / union


@dataclass(frozen=True)
class ElasticBoundary:
    """Candidate start-index range and end-index range (inclusive)."""

    start_range: tuple
    end_range: tuple
    unit: str = FRAMES

    def __post_init__(self):
        (slo, shi), (elo, ehi) = self.start_range, self.end_range
        if slo > shi or elo > ehi:
            raise ValueError("elastic ranges must be ordered")
        if slo > ehi:
            raise ValueError("start range lies entirely after end range")

    def is_singleton(self):
        return self.start_range[0] == self.start_range[1] and \
            self.end_range[0] == self.end_range[1]

    def span(self):
        """The (min start, max end) interval enclosing all candidates."""
        return Interval(self.start_range[0], self.end_range[1], self.unit)

    def enumerate_pairs(self):
        """All candidate (start, end) combinations with start <= end."""
        out = []
        for s in range(int(self.start_range[0]), int(self.start_range[1]) + 1):
            for e in range(int(self.end_range[0]), int(self.end_range[1]) + 1):
                if s <= e:
                    out.append((s, e))
        return out


def build_elastic(manual, pseudo=None):
    """Combine the manual boundary with a pseudo boundary into endpoint ranges.

    The start range spans [min, max] of the two start indices, likewise for
    ends; with no pseudo boundary the ranges degenerate to the manual
    endpoints (the fallback used while the reliability threshold rejects
    every proposal).
    """
    if pseudo is None:
        return ElasticBoundary((manual.start, manual.start),
                               (manual.end, manual.end), manual.unit)
    if pseudo.unit != manual.unit:
        raise UnitMismatchError(f"cannot combine {manual.unit} with {pseudo.unit}")
    s_rng = (min(pseudo.start, manual.start), max(pseudo.start, manual.start))
    e_rng = (min(pseudo.end, manual.end), max(pseudo.end, manual.end))
    return ElasticBoundary(s_rng, e_rng, manual.unit)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Evolution of the reliability threshold across training epochs."""

    scheme: str = "sigmoid"       # constant | linear | sigmoid
    start: float = 1.0
    end: float = 0.5
    midpoint: float = 0.5         # as a fraction of total epochs
    steepness: float = 12.0

    def __post_init__(self):
        if self.scheme not in ("constant", "linear", "sigmoid"):
            raise ValueError(f"unknown threshold scheme {self.scheme!r}")


def threshold_at(schedule, epoch, total_epochs):
    """Threshold value for a given epoch; monotone nonincreasing in epoch."""
    if not 0 <= epoch <= max(total_epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    if schedule.scheme == "constant" or total_epochs <= 0:
        return schedule.end
    frac = epoch / total_epochs
    if schedule.scheme == "linear":
        return schedule.start - (schedule.start - schedule.end) * frac
    z = schedule.steepness * (frac - schedule.midpoint)
    return schedule.end + (schedule.start - schedule.end) / (1.0 + np.exp(z))


def infer_det(p_start, p_end):
    """Most likely valid (start, end) frame pair.

    Maximises p_start[i] * p_end[j] over the upper triangle i <= j, which
    coincides with the independent argmaxes whenever those are ordered.
    Ties break toward the smallest flat index.
    """
    p_s = np.asarray(p_start, dtype=np.float64)
    p_e = np.asarray(p_end, dtype=np.float64)
    t = p_s.shape[0]
    joint = np.outer(p_s, p_e)
    joint[np.tril_indices(t, k=-1)] = -1.0
    flat = int(np.argmax(joint))
    i, j = divmod(flat, t)
    return Interval(i + 1, j + 1, FRAMES)


def infer_ela(det, proposal):
    """Elastic boundary from the single prediction and the top proposal.

    Applies the same min/max combination rule used to build training ranges,
    so the single predicted pair is always among the candidates.
    """
    return build_elastic(det, proposal)

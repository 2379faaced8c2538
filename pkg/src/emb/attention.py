"""Attention encoders for the two visual branches and the query.

Covers the generic target/reference attention layer and its multi-head
variant, cosine positional embeddings, content-guided frame features
(preceding/subsequent max-pooled context) and boundary-guided segment
features (start/end frame lookups), plus the interaction block that chains
guided fusion, self-attention and cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops, tensor as tz
from .layers import LayerNorm, Linear, collect_params
from .tensor import AutodiffError, Tensor


@dataclass
class SequenceFeatures:
    """A batch of variable-length sequences: (B, N, D) features + validity mask."""

    features: Tensor          # (B, N, D)
    mask: np.ndarray          # (B, N) bool, True where real content
    kind: str = "generic"     # video-frames | query-words | video-segments

    @property
    def length(self):
        return self.features.shape[1]

    @property
    def dim(self):
        return self.features.shape[2]

    def with_features(self, feats):
        return replace(self, features=feats)


def positional_table(max_len, dim, dtype=np.float32):
    """Fixed sinusoidal embeddings: sin on even channels, cos on odd."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    chan = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (chan // 2) / dim)
    table = np.where(chan % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def add_positional(seq, table):
    """Add position encodings to unmasked positions only."""
    n = seq.length
    pe = table[None, :n, :] * seq.mask[:, :, None]
    return seq.with_features(seq.features + Tensor(pe.astype(np.dtype(seq.features.dtype))))


class AttentionEncoder:
    """Single-head target/reference attention with a residual connection.

    The correlation matrix is fc(X_t) fc(X_r)^T / sqrt(D); each target element
    is then augmented with the softmax-weighted value projection of the
    reference.  Zeroing the value projection makes this an identity map.
    """

    def __init__(self, dim, rng, dtype=np.float32):
        self.dim = dim
        self.fc_t = Linear(dim, dim, rng, dtype=dtype)
        self.fc_r = Linear(dim, dim, rng, dtype=dtype)
        self.fc_v = Linear(dim, dim, rng, dtype=dtype)

    def matrix(self, target, reference):
        """Pairwise correlation scores, (B, L_target, L_reference)."""
        if target.dim != reference.dim:
            raise AutodiffError("attention: mismatched feature widths")
        qt = self.fc_t(target.features)
        kr = self.fc_r(reference.features)
        return tz.matmul(qt, tz.transpose(kr, (0, 2, 1))) * (1.0 / np.sqrt(self.dim))

    def __call__(self, target, reference):
        if not reference.mask.any(axis=1).all():
            raise AutodiffError("attention: reference with no attendable positions")
        att = ops.masked_softmax(self.matrix(target, reference),
                                 reference.mask[:, None, :], axis=-1)
        mixed = tz.matmul(att, self.fc_v(reference.features))
        return target.with_features(target.features + mixed)

    def params(self):
        return collect_params([("fc_t", self.fc_t), ("fc_r", self.fc_r), ("fc_v", self.fc_v)])


class MultiHeadAttention:
    """Multi-head variant followed by layer normalisation and dropout."""

    def __init__(self, dim, heads, rng, dropout=0.2, layer_norm=True, dtype=np.float32):
        if dim % heads != 0:
            raise AutodiffError(f"attention width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.dropout = dropout
        self.fc_t = Linear(dim, dim, rng, dtype=dtype)
        self.fc_r = Linear(dim, dim, rng, dtype=dtype)
        self.fc_v = Linear(dim, dim, rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype) if layer_norm else None

    def _split(self, x, length):
        b = x.shape[0]
        return tz.transpose(tz.reshape(x, (b, length, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, target, reference, training=False, rng=None):
        if not reference.mask.any(axis=1).all():
            raise AutodiffError("attention: reference with no attendable positions")
        lt, lr = target.length, reference.length
        q = self._split(self.fc_t(target.features), lt)
        k = self._split(self.fc_r(reference.features), lr)
        v = self._split(self.fc_v(reference.features), lr)
        mixed = ops.attention_mix(q, k, v, reference.mask[:, None, None, :],
                                  1.0 / np.sqrt(self.head_dim))  # (B, H, Lt, dh)
        b = target.features.shape[0]
        mixed = tz.reshape(tz.transpose(mixed, (0, 2, 1, 3)), (b, lt, self.dim))
        out = target.features + mixed
        if self.norm is not None:
            out = self.norm(out)
        out = ops.dropout(out, self.dropout, rng, training)
        return target.with_features(out)

    def params(self):
        named = [("fc_t", self.fc_t), ("fc_r", self.fc_r), ("fc_v", self.fc_v)]
        if self.norm is not None:
            named.append(("norm", self.norm))
        return collect_params(named)


class GuidedFusion:
    """1x1 convolution mixing a feature map with two guidance maps.

    The three maps are stacked as channels over a (positions x features)
    plane, so the fusion is a learned per-position mix that preserves both
    ordering and frame causality.
    """

    def __init__(self, rng, dtype=np.float32):
        from .layers import Conv2d
        self.conv = Conv2d(3, 1, 1, rng, dtype=dtype)

    def __call__(self, base, guide_a, guide_b):
        b, n, d = base.shape
        stack = tz.concat([tz.reshape(t, (b, 1, n, d)) for t in (base, guide_a, guide_b)], axis=1)
        return tz.reshape(self.conv(stack), (b, n, d))

    def params(self):
        return collect_params([("conv", self.conv)])


def content_guided(frames, fusion):
    """Enrich each frame with max-pooled preceding and subsequent content.

    preceding[t] covers frames 1..t and subsequent[t] covers t..T, so the
    two maps stay causal/anti-causal; masked frames are ignored.
    """
    if not frames.mask.any():
        raise AutodiffError("content_guided: empty sequence")
    pre = ops.masked_cummax(frames.features, frames.mask)
    sub = ops.masked_cummax(frames.features, frames.mask, reverse=True)
    fused = fusion(frames.features, pre, sub)
    return frames.with_features(fused), pre, sub


def boundary_guided(segments, clips, starts, ends, fusion):
    """Enrich segment features with the clip features at their endpoints."""
    n = clips.length
    starts = np.asarray(starts)
    ends = np.asarray(ends)
    if (starts < 0).any() or (ends >= n).any() or (starts > ends).any():
        raise AutodiffError("boundary_guided: endpoint index out of range")
    v_sta = ops.gather_columns(clips.features, starts)
    v_end = ops.gather_columns(clips.features, ends)
    fused = fusion(segments.features, v_sta, v_end)
    return segments.with_features(fused), v_sta, v_end


class InteractionBlock:
    """One encoder block: guided fusion -> self-attention -> cross-attention.

    The query is self-encoded first, then both modalities attend to each
    other.  With ``guided=False`` the fusion step is skipped and the block
    reduces to plain attention (same output shapes).
    """

    def __init__(self, dim, heads, rng, dropout=0.2, guided=True, dtype=np.float32):
        self.guided = guided
        self.query_self = MultiHeadAttention(dim, heads, rng, dropout, dtype=dtype)
        self.visual_self = MultiHeadAttention(dim, heads, rng, dropout, dtype=dtype)
        self.visual_cross = MultiHeadAttention(dim, heads, rng, dropout, dtype=dtype)
        self.query_cross = MultiHeadAttention(dim, heads, rng, dropout, dtype=dtype)
        self.fusion = GuidedFusion(rng, dtype=dtype) if guided else None

    def __call__(self, visual, query, guide_fn=None, training=False, rng=None):
        q1 = self.query_self(query, query, training, rng)
        if self.guided and guide_fn is not None:
            visual = guide_fn(visual, self.fusion)
        v1 = self.visual_self(visual, visual, training, rng)
        v2 = self.visual_cross(v1, q1, training, rng)
        q2 = self.query_cross(q1, v1, training, rng)
        return v2, q2

    def params(self):
        named = [("query_self", self.query_self), ("visual_self", self.visual_self),
                 ("visual_cross", self.visual_cross), ("query_cross", self.query_cross)]
        if self.fusion is not None:
            named.append(("fusion", self.fusion))
        return collect_params(named)

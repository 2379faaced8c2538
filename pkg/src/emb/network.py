"""The two-branch localisation network.

A shared stem projects video frames and query words to a common width and
adds cosine positional embeddings.  The bounding branch encodes frames with
content-guided attention, fuses them with the query and predicts per-frame
endpoint probabilities plus a foreground highlight score.  The alignment
branch pools frames into clips, enumerates all clip spans as candidate
segments, encodes them with boundary-guided attention and scores each
span's agreement with the query on the 2-D start/end grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops, tensor as tz
from .attention import (InteractionBlock, SequenceFeatures, add_positional,
                        boundary_guided, content_guided, positional_table)
from .data import clip_index_matrix
from .layers import Conv1d, Conv2d, Linear, StackedLSTM, collect_params
from .proposals import enumerate_spans
from .tensor import Tensor


@dataclass
class NetworkConfig:
    video_dim: int
    query_dim: int
    dim: int = 128
    heads: int = 8
    dropout: float = 0.2
    max_frames: int = 128
    n_clips: int = 16
    encoder_blocks: int = 1
    highlight_kernel: int = 1
    align_kernel: int = 3
    lstm_depth: int = 2
    guided_attention: bool = True
    seed: int = 0


@dataclass
class Batch:
    """Padded, mask-annotated tensors for a list of instances."""

    features: np.ndarray        # (B, T, Dv)
    frame_mask: np.ndarray      # (B, T) bool
    query: np.ndarray           # (B, L, Dq)
    query_mask: np.ndarray      # (B, L) bool
    clip_idx: np.ndarray        # (B, N, J) frame indices for clip pooling
    clip_mask: np.ndarray       # (B, N) bool
    prop_valid: np.ndarray      # (B, K) bool
    n_frames: np.ndarray        # (B,)
    instances: list = field(default_factory=list)

    @property
    def size(self):
        return self.features.shape[0]


def make_batch(instances, n_clips):
    """Pad a list of instances to shared shapes and derive all masks."""
    b = len(instances)
    t = max(inst.n_frames for inst in instances)
    l = max(inst.n_words for inst in instances)
    dv = instances[0].features.shape[1]
    dq = instances[0].query.shape[1]
    feats = np.zeros((b, t, dv), dtype=np.float32)
    fmask = np.zeros((b, t), dtype=bool)
    query = np.zeros((b, l, dq), dtype=np.float32)
    qmask = np.zeros((b, l), dtype=bool)
    rows = []
    cmask = np.zeros((b, n_clips), dtype=bool)
    nf = np.zeros(b, dtype=np.intp)
    for i, inst in enumerate(instances):
        n, m = inst.n_frames, inst.n_words
        feats[i, :n] = inst.features
        fmask[i, :n] = True
        query[i, :m] = inst.query
        qmask[i, :m] = True
        idx, cm = clip_index_matrix(t, n, n_clips)
        rows.append(idx)
        cmask[i] = cm
        nf[i] = n
    j = max(r.shape[1] for r in rows)
    clip_idx = np.zeros((b, n_clips, j), dtype=np.intp)
    for i, r in enumerate(rows):
        clip_idx[i, :, :r.shape[1]] = r
        if r.shape[1] < j:
            clip_idx[i, :, r.shape[1]:] = r[:, :1]
    _, ends, _ = enumerate_spans(n_clips)
    n_valid_clips = cmask.sum(axis=1)
    prop_valid = ends[None, :] <= n_valid_clips[:, None]
    return Batch(feats, fmask, query, qmask, clip_idx, cmask, prop_valid, nf, list(instances))


@dataclass
class NetworkOutput:
    p_start: Tensor             # (B, T)
    p_end: Tensor               # (B, T)
    highlight: Tensor           # (B, T)
    p_align: Tensor             # (B, K)
    frame_mask: np.ndarray
    prop_valid: np.ndarray


class ContextQueryFusion:
    """Bidirectional context/query attention producing fused per-frame features."""

    def __init__(self, dim, rng, dtype=np.float32):
        self.dim = dim
        self.fc_v = Linear(dim, dim, rng, dtype=dtype)
        self.fc_q = Linear(dim, dim, rng, dtype=dtype)
        self.out = Linear(4 * dim, dim, rng, dtype=dtype)

    def __call__(self, visual, query):
        f, q = visual.features, query.features
        corr = tz.matmul(self.fc_v(f), tz.transpose(self.fc_q(q), (0, 2, 1)))
        corr = corr * (1.0 / np.sqrt(self.dim))
        row = ops.masked_softmax(corr, query.mask[:, None, :], axis=-1)
        col = ops.masked_softmax(corr, visual.mask[:, :, None], axis=1)
        v2q = tz.matmul(row, q)
        q2v = tz.matmul(tz.matmul(row, tz.transpose(col, (0, 2, 1))), f)
        cat = tz.concat([f, v2q, tz.mul(f, v2q), tz.mul(f, q2v)], axis=2)
        return self.out(cat)

    def params(self):
        return collect_params([("fc_v", self.fc_v), ("fc_q", self.fc_q), ("out", self.out)])


class EndpointHead:
    """Highlight-rescaled fused features -> stacked LSTMs -> endpoint softmaxes."""

    def __init__(self, dim, rng, highlight_kernel=1, lstm_depth=2, dtype=np.float32):
        self.word_score = Linear(dim, 1, rng, bias=False, dtype=dtype)
        self.highlight_conv = Conv1d(2 * dim, 1, highlight_kernel, rng, dtype=dtype)
        self.highlight_kernel = highlight_kernel
        self.lstm = StackedLSTM(dim, dim, lstm_depth, rng, dtype=dtype)
        self.start_head = Linear(dim, 1, rng, dtype=dtype)
        self.end_head = Linear(dim, 1, rng, dtype=dtype)

    def __call__(self, fused, frame_mask, query):
        b, t, d = fused.shape
        word_logits = tz.reshape(self.word_score(query.features), (b, -1))
        word_attn = ops.masked_softmax(word_logits, query.mask, axis=-1)
        sentence = tz.matmul(tz.reshape(word_attn, (b, 1, -1)), query.features)
        ones = Tensor(np.ones((b, t, 1), dtype=fused.data.dtype))
        tiled = tz.matmul(ones, sentence)
        cat = tz.transpose(tz.concat([fused, tiled], axis=2), (0, 2, 1))
        if self.highlight_kernel > 1:
            # zero padded frames so the kernel never reads junk across the edge
            cat = tz.mul(cat, Tensor(frame_mask[:, None, :].astype(cat.data.dtype)))
        highlight = tz.sigmoid(tz.reshape(self.highlight_conv(cat), (b, t)))
        scaled = tz.mul(fused, tz.reshape(highlight, (b, t, 1)))
        hidden = self.lstm(scaled)
        s_logits = tz.reshape(self.start_head(hidden), (b, t))
        e_logits = tz.reshape(self.end_head(hidden), (b, t))
        p_start = ops.masked_softmax(s_logits, frame_mask, axis=-1)
        p_end = ops.masked_softmax(e_logits, frame_mask, axis=-1)
        return p_start, p_end, highlight

    def params(self):
        return collect_params([
            ("word_score", self.word_score), ("highlight_conv", self.highlight_conv),
            ("lstm", self.lstm), ("start_head", self.start_head), ("end_head", self.end_head),
        ])


class AlignmentHead:
    """Scores every clip span by a 2-D convolution over the start/end grid."""

    def __init__(self, dim, n_clips, rng, kernel=3, dtype=np.float32):
        self.n_clips = n_clips
        self.conv = Conv2d(dim, 1, kernel, rng, dtype=dtype)

    def __call__(self, fused, prop_valid, grid_index):
        b, k, d = fused.shape
        n = self.n_clips
        # invalid slots are zero-filled before the convolution
        masked = tz.mul(fused, Tensor(prop_valid[:, :, None].astype(fused.data.dtype)))
        grid = ops.scatter_columns(masked, grid_index, n * n)
        grid = tz.transpose(tz.reshape(grid, (b, n, n, d)), (0, 3, 1, 2))
        scores = tz.reshape(self.conv(grid), (b, n * n))
        return tz.sigmoid(tz.take(scores, grid_index, axis=1))

    def params(self):
        return collect_params([("conv", self.conv)])


class LocalizerNetwork:
    """Both branches plus the shared stem; parameters are seed-determined."""

    def __init__(self, config, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)
        d = config.dim
        self.proj_video = Linear(config.video_dim, d, rng, dtype=dtype)
        self.proj_query = Linear(config.query_dim, d, rng, dtype=dtype)
        self.pos_table = positional_table(max(config.max_frames, 512), d, dtype)
        self.bound_blocks = [
            InteractionBlock(d, config.heads, rng, config.dropout,
                             guided=config.guided_attention, dtype=dtype)
            for _ in range(config.encoder_blocks)]
        self.bound_fusion = ContextQueryFusion(d, rng, dtype=dtype)
        self.endpoints = EndpointHead(d, rng, config.highlight_kernel,
                                      config.lstm_depth, dtype=dtype)
        self.align_blocks = [
            InteractionBlock(d, config.heads, rng, config.dropout,
                             guided=config.guided_attention, dtype=dtype)
            for _ in range(config.encoder_blocks)]
        self.align_fusion = ContextQueryFusion(d, rng, dtype=dtype)
        self.align_head = AlignmentHead(d, config.n_clips, rng,
                                        config.align_kernel, dtype=dtype)
        starts, ends, grid_index = enumerate_spans(config.n_clips)
        self.prop_starts = starts
        self.prop_ends = ends
        self.prop_grid_index = grid_index
        self._named = self._collect()
        for name, p in self._named:
            p.name = name

    def _collect(self):
        children = [("proj_video", self.proj_video), ("proj_query", self.proj_query)]
        for i, blk in enumerate(self.bound_blocks):
            children.append((f"bound.block{i}", blk))
        children += [("bound.fusion", self.bound_fusion), ("bound.endpoints", self.endpoints)]
        for i, blk in enumerate(self.align_blocks):
            children.append((f"align.block{i}", blk))
        children += [("align.fusion", self.align_fusion), ("align.head", self.align_head)]
        return collect_params(children)

    def named_parameters(self):
        return list(self._named)

    def parameters(self):
        return [p for _, p in self._named]

    def state_dict(self):
        return {name: p.data.copy() for name, p in self._named}

    def load_state_dict(self, state):
        missing = [n for n, _ in self._named if n not in state]
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing[:3]}...")
        for name, p in self._named:
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def forward(self, batch, training=False, rng=None):
        cfg = self.config
        frames = SequenceFeatures(
            self.proj_video(Tensor(batch.features.astype(self.dtype, copy=False))),
            batch.frame_mask, "video-frames")
        words = SequenceFeatures(
            self.proj_query(Tensor(batch.query.astype(self.dtype, copy=False))),
            batch.query_mask, "query-words")
        frames = add_positional(frames, self.pos_table)
        words = add_positional(words, self.pos_table)

        # bounding branch
        vb, qb = frames, words
        for blk in self.bound_blocks:
            vb, qb = blk(vb, qb, guide_fn=lambda seq, fus: content_guided(seq, fus)[0],
                         training=training, rng=rng)
        fused_frames = self.bound_fusion(vb, qb)
        p_start, p_end, highlight = self.endpoints(fused_frames, batch.frame_mask, qb)

        # alignment branch
        clip_feats = ops.indexed_max(frames.features, batch.clip_idx)
        clip_feats = tz.mul(clip_feats, Tensor(batch.clip_mask[:, :, None].astype(self.dtype)))
        clips = SequenceFeatures(clip_feats, batch.clip_mask, "video-frames")
        props = ops.span_max(clip_feats, self.prop_starts - 1, self.prop_ends - 1)
        va = SequenceFeatures(props, batch.prop_valid, "video-segments")
        qa = words
        starts0, ends0 = self.prop_starts - 1, self.prop_ends - 1
        for blk in self.align_blocks:
            va, qa = blk(
                va, qa,
                guide_fn=lambda seq, fus: boundary_guided(seq, clips, starts0, ends0, fus)[0],
                training=training, rng=rng)
        fused_props = self.align_fusion(va, qa)
        p_align = self.align_head(fused_props, batch.prop_valid, self.prop_grid_index)

        return NetworkOutput(p_start, p_end, highlight, p_align,
                             batch.frame_mask, batch.prop_valid)

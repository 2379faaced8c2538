"""Dataset I/O, unit conversion grids, and per-sample model inputs.

File formats (all little-endian):
  annotations/{split}.jsonl  one JSON object per line:
                             {video_id, duration, start, end, query, split}
  features/{id}.embf         magic "EMBF", u32 version, u32 feature dim,
                             u32 raw frame count, f32 frame rate, then
                             row-major float32 features (dim x frames)
  vocab.embv                 magic "EMBV", u32 version, u32 token count,
                             u32 dim, then per token: u16 name length,
                             UTF-8 name, dim float32s
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"EMBF"
VOCAB_MAGIC = b"EMBV"
FORMAT_VERSION = 1


class ValidationError(ValueError):
    pass


# --- annotation records ---

@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    duration: float
    start: float
    end: float
    query: str
    split: str = "train"

    def __post_init__(self):
        if not self.video_id:
            raise ValidationError("empty video id")
        if not (0.0 <= self.start < self.end <= self.duration):
            raise ValidationError(
                f"moment [{self.start}, {self.end}] outside (0, {self.duration}]")
        if not self.query.strip():
            raise ValidationError("empty query")

    @property
    def tokens(self):
        return self.query.lower().split()


def load_annotations(path):
    """Parse a JSON-lines annotation file; errors carry the line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(AnnotationRecord(
                    video_id=str(obj["video_id"]),
                    duration=float(obj["duration"]),
                    start=float(obj["start"]),
                    end=float(obj["end"]),
                    query=str(obj["query"]),
                    split=str(obj.get("split", "train")),
                ))
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_annotations(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "video_id": r.video_id, "duration": r.duration, "start": r.start,
                "end": r.end, "query": r.query, "split": r.split,
            }, sort_keys=True) + "\n")


# --- binary feature / vocabulary files ---

def write_features(path, features, fps):
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise ValidationError("features must be a (dim, frames) matrix")
    dim, frames = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIIf", FORMAT_VERSION, dim, frames, float(fps)))
        fh.write(feats.tobytes())


def read_features(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}")
        version, dim, frames, fps = struct.unpack("<IIIf", fh.read(16))
        if version != FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        buf = fh.read(4 * dim * frames)
        feats = np.frombuffer(buf, dtype="<f4").reshape(dim, frames).copy()
    if not np.all(np.isfinite(feats)):
        raise ValidationError(f"{path}: non-finite feature values")
    return feats, fps


def _hash_fallback(token, dim):
    # unknown tokens get a deterministic pseudo-random direction
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    seed = int.from_bytes(digest, "little")
    gen = np.random.default_rng(seed)
    return gen.uniform(-0.5, 0.5, size=dim).astype(np.float32) / np.sqrt(dim)


class QueryEmbedder:
    """Token -> vector table with a hashing fallback for unknown tokens."""

    def __init__(self, table, dim):
        self.table = dict(table)
        self.dim = int(dim)

    def vector(self, token):
        vec = self.table.get(token)
        if vec is None:
            vec = _hash_fallback(token, self.dim)
        return vec

    def embed(self, tokens):
        if not tokens:
            raise ValidationError("empty token sequence")
        return np.stack([self.vector(t) for t in tokens]).astype(np.float32)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(VOCAB_MAGIC)
            fh.write(struct.pack("<III", FORMAT_VERSION, len(self.table), self.dim))
            for token in sorted(self.table):
                raw = token.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(np.ascontiguousarray(self.table[token], dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != VOCAB_MAGIC:
                raise ValidationError(f"{path}: bad magic")
            version, count, dim = struct.unpack("<III", fh.read(12))
            if version != FORMAT_VERSION:
                raise ValidationError(f"{path}: unsupported version {version}")
            table = {}
            for _ in range(count):
                (nlen,) = struct.unpack("<H", fh.read(2))
                token = fh.read(nlen).decode("utf-8")
                vec = np.frombuffer(fh.read(4 * dim), dtype="<f4").copy()
                table[token] = vec
        return cls(table, dim)


class FeatureStore:
    """Resolves video ids to raw feature matrices, disk-backed or in-memory."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._mem = {}

    def put(self, video_id, features, fps):
        self._mem[video_id] = (np.asarray(features, dtype=np.float32), float(fps))

    def get(self, video_id):
        if video_id in self._mem:
            return self._mem[video_id]
        if self.root is None:
            raise ValidationError(f"unknown video id {video_id!r}")
        path = self.root / f"{video_id}.embf"
        if not path.exists():
            raise ValidationError(f"missing feature file {path}")
        feats, fps = read_features(path)
        return feats, fps

    def save_all(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for vid, (feats, fps) in self._mem.items():
            write_features(root / f"{vid}.embf", feats, fps)


# --- temporal grids and unit conversions ---

def downsample_video(features, max_frames):
    """Max-pool raw frames into at most `max_frames` contiguous bins.

    features: (dim, raw_frames).  Returns the pooled (dim, frames) matrix and
    the raw-frame bin edges used (length frames + 1), which stay invertible
    for reporting in seconds.
    """
    dim, t_raw = features.shape
    if t_raw < 1:
        raise ValidationError("empty video")
    if t_raw <= max_frames:
        edges = np.arange(t_raw + 1)
        return np.asarray(features, dtype=np.float32), edges
    edges = np.round(np.linspace(0, t_raw, max_frames + 1)).astype(int)
    pooled = np.empty((dim, max_frames), dtype=np.float32)
    for i in range(max_frames):
        pooled[:, i] = features[:, edges[i]:edges[i + 1]].max(axis=1)
    return pooled, edges


@dataclass(frozen=True)
class TimeGrid:
    """Per-video mapping between seconds, pooled frames and clips."""

    fps: float
    t_raw: int
    edges: np.ndarray          # raw-frame boundaries of pooled frames
    n_clips: int

    @property
    def n_frames(self):
        return len(self.edges) - 1

    @property
    def duration(self):
        return self.t_raw / self.fps

    @property
    def clip_bin(self):
        # frames per clip over the unmasked prefix, so appended padding
        # can never change the clip structure
        return max(1, math.ceil(self.n_frames / self.n_clips))

    @property
    def n_valid_clips(self):
        return min(self.n_clips, math.ceil(self.n_frames / self.clip_bin))

    # seconds <-> pooled frames
    def _frame_coord(self, seconds):
        """Continuous pooled-frame coordinate in [0, n_frames] of a time point."""
        raw = np.clip(seconds * self.fps, 0.0, float(self.t_raw))
        t = int(np.searchsorted(self.edges, raw, side="right")) - 1
        t = min(max(t, 0), self.n_frames - 1)
        width = self.edges[t + 1] - self.edges[t]
        return t + (raw - self.edges[t]) / width

    def seconds_to_frames(self, start_s, end_s):
        """Snap a moment in seconds to the nearest pooled-frame interval."""
        cs = self._frame_coord(start_s)
        ce = self._frame_coord(end_s)
        s = int(np.clip(round(cs) + 1, 1, self.n_frames))
        e = int(np.clip(round(ce), 1, self.n_frames))
        if e < s:
            s = e = int(np.clip(round((cs + ce) / 2.0) + 1, 1, self.n_frames))
        return s, e

    def frames_to_seconds(self, s, e):
        """Continuous seconds extent of a 1-based inclusive frame interval."""
        return float(self.edges[s - 1]) / self.fps, float(self.edges[e]) / self.fps

    # pooled frames <-> clips
    def frames_to_clip_extent(self, s, e):
        """Continuous clip-axis extent of a frame interval."""
        b = self.clip_bin
        return (s - 1) / b, e / b

    def frame_to_clip(self, t):
        return min((t - 1) // self.clip_bin + 1, self.n_valid_clips)

    def clips_to_frames(self, cs, ce):
        """1-based frame interval covered by a 1-based clip interval."""
        b = self.clip_bin
        return (cs - 1) * b + 1, min(ce * b, self.n_frames)

    def clips_to_seconds(self, cs, ce):
        fs, fe = self.clips_to_frames(cs, ce)
        return self.frames_to_seconds(fs, fe)


def frames_to_clips(frames, n_valid_frames, n_clips):
    """Max-pool frame features into clips, ignoring masked (padded) frames.

    frames: (T, D) with the first `n_valid_frames` rows real.  Returns
    (clips (n_clips, D), clip_mask (n_clips,), frames_per_clip); fully padded
    clips are masked and zeroed.
    """
    t, d = frames.shape
    if not 1 <= n_valid_frames <= t:
        raise ValidationError("n_valid_frames out of range")
    b = max(1, math.ceil(n_valid_frames / n_clips))
    clips = np.zeros((n_clips, d), dtype=frames.dtype)
    mask = np.zeros(n_clips, dtype=bool)
    for c in range(n_clips):
        lo, hi = c * b, min((c + 1) * b, n_valid_frames)
        if lo < hi:
            clips[c] = frames[lo:hi].max(axis=0)
            mask[c] = True
    return clips, mask, b


def clip_index_matrix(n_frames, n_valid_frames, n_clips):
    """Per-clip frame index rows for vectorised pooling.

    Returns (idx (n_clips, width), clip_mask (n_clips,)); rows of masked
    clips point at frame 0 and must be ignored via the mask.  Rows of short
    clips repeat their first frame, which max-pooling absorbs.
    """
    b = max(1, math.ceil(n_valid_frames / n_clips))
    idx = np.zeros((n_clips, b), dtype=np.intp)
    mask = np.zeros(n_clips, dtype=bool)
    for c in range(n_clips):
        lo, hi = c * b, min((c + 1) * b, n_valid_frames)
        if lo < hi:
            row = np.arange(lo, hi)
            idx[c, :hi - lo] = row
            idx[c, hi - lo:] = lo
            mask[c] = True
    return idx, mask


# --- per-sample model inputs ---

@dataclass
class VideoInstance:
    """Everything the network needs for one video/query pair."""

    video_id: str
    features: np.ndarray        # (n_frames, video_dim) pooled, unpadded
    query: np.ndarray           # (n_words, query_dim)
    grid: TimeGrid
    gt_seconds: tuple = None    # annotated moment, for supervision/eval
    gt_frames: tuple = None     # the same moment snapped to pooled frames
    tokens: tuple = ()

    @property
    def n_frames(self):
        return self.features.shape[0]

    @property
    def n_words(self):
        return self.query.shape[0]


def build_instance(record, store, embedder, max_frames, n_clips):
    raw, fps = store.get(record.video_id)
    pooled, edges = downsample_video(raw, max_frames)
    grid = TimeGrid(fps=fps, t_raw=raw.shape[1], edges=edges, n_clips=n_clips)
    gt_frames = grid.seconds_to_frames(record.start, record.end)
    return VideoInstance(
        video_id=record.video_id,
        features=np.ascontiguousarray(pooled.T, dtype=np.float32),
        query=embedder.embed(record.tokens),
        grid=grid,
        gt_seconds=(record.start, record.end),
        gt_frames=gt_frames,
        tokens=tuple(record.tokens),
    )


def validate_instances(instances, video_dim=None, query_dim=None):
    """Input-validation helper shared by the estimator and the trainer."""
    if not instances:
        raise ValidationError("no samples given")
    for i, inst in enumerate(instances):
        if inst.n_frames < 1:
            raise ValidationError(f"sample {i}: empty video")
        if inst.n_words < 1:
            raise ValidationError(f"sample {i}: empty query")
        if not np.all(np.isfinite(inst.features)):
            raise ValidationError(f"sample {i}: non-finite video features")
        if not np.all(np.isfinite(inst.query)):
            raise ValidationError(f"sample {i}: non-finite query features")
        if video_dim is not None and inst.features.shape[1] != video_dim:
            raise ValidationError(f"sample {i}: video dim {inst.features.shape[1]} != {video_dim}")
        if query_dim is not None and inst.query.shape[1] != query_dim:
            raise ValidationError(f"sample {i}: query dim {inst.query.shape[1]} != {query_dim}")
        if inst.gt_frames is not None:
            s, e = inst.gt_frames
            if not 1 <= s <= e <= inst.n_frames:
                raise ValidationError(f"sample {i}: boundary {inst.gt_frames} outside video")
    return instances

"""Synthetic video/query corpus with a controllable annotator-noise model.

Each sample embeds one activity archetype's feature signature over a true
(clean) interval of an otherwise noisy feature timeline.  The stored
annotation is the clean boundary perturbed per endpoint by zero-mean jitter
proportional to the moment length; the clean boundary is kept separately so
models can be scored against uncorrupted ground truth.  Moments are placed
with enough margin that jitter never needs clamping, keeping the configured
offset statistics exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (AnnotationRecord, FeatureStore, QueryEmbedder, ValidationError,
                   save_annotations)

ARCHETYPES = (
    ("open_door", ("person opens the door", "someone opens a door slowly",
                   "a person is opening the door")),
    ("close_window", ("person closes the window", "someone shuts a window")),
    ("pour_water", ("person pours water into a glass", "someone is pouring water")),
    ("pet_dog", ("person pets the dog", "someone strokes a small dog")),
    ("wave_hands", ("person waves both hands", "someone is waving at the camera")),
    ("stack_boxes", ("person stacks boxes on a table", "someone piles up boxes")),
    ("fold_clothes", ("person folds the clothes", "someone is folding laundry")),
    ("kick_ball", ("person kicks the ball", "someone kicks a ball across the room")),
    ("light_candle", ("person lights a candle", "someone is lighting candles")),
    ("tie_shoes", ("person ties their shoes", "someone ties a shoe lace")),
)


@dataclass(frozen=True)
class SyntheticConfig:
    n_archetypes: int = 8
    video_dim: int = 32
    query_dim: int = 32
    fps: float = 1.0
    min_frames: int = 48
    max_frames: int = 64
    moment_min_frac: float = 0.2
    moment_max_frac: float = 0.45
    jitter: float = 0.3              # endpoint offset amplitude x moment length
    jitter_asymmetry: float = 0.0    # start amp x(1+a), end amp x(1-a)
    signature_strength: float = 3.0
    background_noise: float = 1.0
    feature_noise: float = 0.5
    max_pairwise_cosine: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_archetypes <= len(ARCHETYPES):
            raise ValidationError(f"n_archetypes must be in [1, {len(ARCHETYPES)}]")
        if not 0 < self.moment_min_frac <= self.moment_max_frac < 1:
            raise ValidationError("moment fractions must satisfy 0 < min <= max < 1")
        amp_s, amp_e = self.jitter_amplitudes
        if self.moment_max_frac * (1.0 + 2.0 * max(amp_s, amp_e)) >= 1.0:
            raise ValidationError("infeasible config: jittered moment can exceed the video")
        if amp_s + amp_e >= 1.0:
            raise ValidationError("infeasible config: jitter can invert the boundary")

    @property
    def jitter_amplitudes(self):
        return (self.jitter * (1.0 + self.jitter_asymmetry),
                self.jitter * (1.0 - self.jitter_asymmetry))

    def expected_abs_offset_fraction(self):
        """E|offset| / moment length per endpoint (uniform jitter)."""
        amp_s, amp_e = self.jitter_amplitudes
        return amp_s / 2.0, amp_e / 2.0


@dataclass
class SyntheticCorpus:
    records: list
    store: FeatureStore
    embedder: QueryEmbedder
    clean: dict                     # video_id -> (clean start, clean end) seconds
    archetype_of: dict = field(default_factory=dict)

    def split(self, name):
        return [r for r in self.records if r.split == name]


def _signatures(rng, n, dim, max_cos, tries=1000):
    sigs = []
    for _ in range(tries):
        if len(sigs) == n:
            break
        v = rng.normal(size=dim)
        v /= np.linalg.norm(v)
        if all(abs(float(v @ s)) <= max_cos for s in sigs):
            sigs.append(v)
    if len(sigs) < n:
        raise ValidationError("could not draw sufficiently separated signatures")
    return np.stack(sigs)


def _vocab(rng, archetypes, dim):
    tokens = sorted({tok for _, templates in archetypes
                     for tpl in templates for tok in tpl.lower().split()})
    table = {t: (rng.normal(size=dim) / np.sqrt(dim)).astype(np.float32) for t in tokens}
    return QueryEmbedder(table, dim)


def generate(config, n_train, n_test=0, n_val=0):
    """Build a corpus of (n_train, n_val, n_test) samples from one seed."""
    rng = np.random.default_rng(config.seed)
    archetypes = ARCHETYPES[:config.n_archetypes]
    sigs = _signatures(rng, config.n_archetypes, config.video_dim,
                       config.max_pairwise_cosine)
    embedder = _vocab(rng, archetypes, config.query_dim)
    store = FeatureStore()
    records, clean, arch_of = [], {}, {}
    amp_s, amp_e = config.jitter_amplitudes

    def emit(split, count, offset):
        for i in range(count):
            vid = f"synth{config.seed}-{split}-{i + offset:05d}"
            t_raw = int(rng.integers(config.min_frames, config.max_frames + 1))
            duration = t_raw / config.fps
            a = int(rng.integers(config.n_archetypes))
            length = duration * rng.uniform(config.moment_min_frac, config.moment_max_frac)
            margin_s = amp_s * length
            margin_e = amp_e * length
            start_clean = rng.uniform(margin_s, duration - length - margin_e)
            end_clean = start_clean + length
            # timeline: background noise, signature inside the clean moment
            feats = rng.normal(0.0, config.background_noise,
                               size=(config.video_dim, t_raw)).astype(np.float32)
            centers = (np.arange(t_raw) + 0.5) / config.fps
            inside = (centers >= start_clean) & (centers <= end_clean)
            feats[:, inside] += (config.signature_strength * sigs[a][:, None]
                                 + rng.normal(0.0, config.feature_noise,
                                              size=(config.video_dim, int(inside.sum())))
                                 ).astype(np.float32)
            start_ann = start_clean + rng.uniform(-amp_s, amp_s) * length
            end_ann = end_clean + rng.uniform(-amp_e, amp_e) * length
            template = archetypes[a][1][int(rng.integers(len(archetypes[a][1])))]
            store.put(vid, feats, config.fps)
            records.append(AnnotationRecord(vid, duration, float(start_ann),
                                            float(end_ann), template, split))
            clean[vid] = (float(start_clean), float(end_clean))
            arch_of[vid] = archetypes[a][0]

    emit("train", n_train, 0)
    emit("val", n_val, 0)
    emit("test", n_test, 0)
    return SyntheticCorpus(records, store, embedder, clean, arch_of)


def write_corpus(corpus, root):
    """Materialise a corpus in the on-disk layout the CLI consumes."""
    root = Path(root)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        recs = corpus.split(split)
        if recs:
            save_annotations(root / "annotations" / f"{split}.jsonl", recs)
    corpus.store.save_all(root / "features")
    corpus.embedder.save(root / "vocab.embv")
    with open(root / "clean.json", "w", encoding="utf-8") as fh:
        json.dump({k: list(v) for k, v in sorted(corpus.clean.items())}, fh,
                  indent=2, sort_keys=True)


def load_corpus(root):
    """Read a corpus directory back into memory (clean table optional)."""
    from .data import load_annotations
    root = Path(root)
    records = []
    for split in ("train", "val", "test"):
        path = root / "annotations" / f"{split}.jsonl"
        if path.exists():
            records.extend(load_annotations(path))
    if not records:
        raise ValidationError(f"no annotation files under {root / 'annotations'}")
    store = FeatureStore(root / "features")
    embedder = QueryEmbedder.load(root / "vocab.embv")
    clean_path = root / "clean.json"
    clean = {}
    if clean_path.exists():
        with open(clean_path, "r", encoding="utf-8") as fh:
            clean = {k: tuple(v) for k, v in json.load(fh).items()}
    return SyntheticCorpus(records, store, embedder, clean)

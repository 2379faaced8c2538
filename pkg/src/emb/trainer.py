"""Training loop and batched inference.

One optimisation step per batch: forward both branches, mine per-sample
supervision targets (strategy-dependent), combine the three losses, clip the
global gradient norm and take an Adam step at the epoch's decayed rate.  The
reliability threshold for pseudo-boundary selection follows its schedule
across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses, tensor as tz
from .data import validate_instances
from .intervals import (FRAMES, ElasticBoundary, Interval, ThresholdSchedule,
                        infer_det, infer_ela, threshold_at)
from .network import make_batch
from .optim import Adam, clip_global_norm, linear_lr_scale
from .proposals import ProposalMap, select_top_proposal
from .supervision import SupervisionStrategy, make_supervision
from .tensor import AutodiffError


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 5e-4
    grad_clip: float = 1.0
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    iou_upper: float = 0.7
    iou_lower: float = 0.3
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    strategy: SupervisionStrategy = field(default_factory=SupervisionStrategy)
    highlight_extension: float = 0.1
    lr_decay: bool = True
    seed: int = 0


@dataclass
class SampleContext:
    """Static supervision context derived once per training sample."""

    manual: Interval               # annotated boundary, pooled frames
    alpha: np.ndarray              # proposal overlaps with the label
    n_valid_clips: int


class Trainer:
    def __init__(self, network, instances, config):
        self.network = network
        self.config = config
        self.instances = validate_instances(
            list(instances), network.config.video_dim, network.config.query_dim)
        n_clips = network.config.n_clips
        self.contexts = []
        for inst in self.instances:
            if inst.gt_frames is None:
                raise ValueError(f"{inst.video_id}: training needs an annotated boundary")
            extent = inst.grid.frames_to_clip_extent(*inst.gt_frames)
            pmap = ProposalMap.build(n_clips, inst.grid.n_valid_clips, extent)
            self.contexts.append(SampleContext(
                Interval(*inst.gt_frames, FRAMES), pmap.alpha, inst.grid.n_valid_clips))

    def _targets(self, ids, out, tau):
        cfg = self.config
        n_clips = self.network.config.n_clips
        targets = []
        for row, idx in enumerate(ids):
            inst, ctx = self.instances[idx], self.contexts[idx]
            pmap = None
            if cfg.strategy.variant == "elastic":
                pmap = ProposalMap.build(n_clips, ctx.n_valid_clips)
                pmap.alpha = ctx.alpha
                pmap.scores = out.p_align.data[row]
            targets.append(make_supervision(
                cfg.strategy, ctx.manual, pmap, tau, inst.grid, inst.n_frames))
        return targets

    def _losses(self, ids, batch, out, targets):
        cfg = self.config
        if targets[0].is_soft:
            t = batch.features.shape[1]
            qs = np.zeros((len(ids), t), dtype=np.float32)
            qe = np.zeros((len(ids), t), dtype=np.float32)
            for row, tgt in enumerate(targets):
                qs[row, :tgt.soft_start.shape[0]] = tgt.soft_start
                qe[row, :tgt.soft_end.shape[0]] = tgt.soft_end
            lb = losses.loss_bound_soft(out.p_start, out.p_end, qs, qe)
        else:
            lb = losses.loss_bound(out.p_start, out.p_end,
                                   [t.start_range for t in targets],
                                   [t.end_range for t in targets], batch.frame_mask)
        alpha = np.stack([self.contexts[i].alpha for i in ids])
        la = losses.loss_align(out.p_align, alpha, batch.prop_valid,
                               cfg.iou_upper, cfg.iou_lower)
        lh = losses.loss_highlight(out.highlight, [t.highlight_span for t in targets],
                                   batch.frame_mask, batch.n_frames,
                                   cfg.highlight_extension)
        return lb, la, lh

    def train(self, target_hook=None):
        """Run the configured number of epochs; returns per-epoch loss history.

        `target_hook(epoch, batch_index, sample_ids, targets)` is called per
        step when given (used to audit the mined supervision).
        """
        cfg = self.config
        net = self.network
        shuffle_rng = np.random.default_rng(cfg.seed)
        dropout_rng = np.random.default_rng(cfg.seed + 1)
        adam = Adam(net.parameters(), lr=cfg.learning_rate)
        history = []
        n = len(self.instances)
        for epoch in range(cfg.epochs):
            tau = threshold_at(cfg.schedule, epoch, cfg.epochs)
            lr_scale = linear_lr_scale(epoch, cfg.epochs) if cfg.lr_decay else 1.0
            order = shuffle_rng.permutation(n)
            sums = np.zeros(4, dtype=np.float64)
            n_batches = 0
            for lo in range(0, n, cfg.batch_size):
                ids = order[lo:lo + cfg.batch_size].tolist()
                batch = make_batch([self.instances[i] for i in ids], net.config.n_clips)
                out = net.forward(batch, training=True, rng=dropout_rng)
                targets = self._targets(ids, out, tau)
                if target_hook is not None:
                    target_hook(epoch, n_batches, ids, targets)
                lb, la, lh = self._losses(ids, batch, out, targets)
                total = losses.total_loss(lb, la, lh, cfg.weights)
                if not np.isfinite(total.data).all():
                    raise AutodiffError(
                        f"non-finite loss at epoch {epoch}, batch {n_batches}")
                adam.zero_grad()
                total.backward()
                clip_global_norm(net.parameters(), cfg.grad_clip)
                adam.step(lr_scale)
                sums += (total.item(), lb.item(), la.item(), lh.item())
                n_batches += 1
            mean = sums / max(n_batches, 1)
            history.append({
                "epoch": epoch, "loss": mean[0], "bound": mean[1],
                "align": mean[2], "highlight": mean[3],
                "tau": float(tau), "lr_scale": float(lr_scale),
            })
        return history


@dataclass
class PredictionRecord:
    video_id: str
    det: Interval                 # single boundary, pooled frames
    elastic: ElasticBoundary      # candidate ranges, pooled frames
    det_seconds: tuple
    grid: object
    n_frames: int


def predict(network, instances, batch_size=64):
    """Batched inference producing both the single and the elastic boundary."""
    instances = validate_instances(
        list(instances), network.config.video_dim, network.config.query_dim)
    n_clips = network.config.n_clips
    out_records = []
    with tz.no_grad():
        for lo in range(0, len(instances), batch_size):
            chunk = instances[lo:lo + batch_size]
            batch = make_batch(chunk, n_clips)
            out = network.forward(batch, training=False)
            for row, inst in enumerate(chunk):
                nf = inst.n_frames
                p_s = out.p_start.data[row, :nf].astype(np.float64)
                p_e = out.p_end.data[row, :nf].astype(np.float64)
                det = infer_det(p_s, p_e)
                pmap = ProposalMap.build(n_clips, inst.grid.n_valid_clips)
                pmap.scores = out.p_align.data[row]
                top = select_top_proposal(pmap)
                fs, fe = inst.grid.clips_to_frames(int(top.start), int(top.end))
                elastic = infer_ela(det, Interval(fs, fe, FRAMES))
                out_records.append(PredictionRecord(
                    inst.video_id, det, elastic,
                    inst.grid.frames_to_seconds(int(det.start), int(det.end)),
                    inst.grid, nf))
    return out_records

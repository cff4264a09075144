"""The weighted centroid-regression loss and the training loop of the fairness module.

Pair weights: impostor ``1 / (|I_a| * FAR_a[s])`` and genuine
``1 / (|G_a| * FRR_a[s])``, zero for cross-attribute pairs.  The impostor level
is taken inclusively (share of impostor scores >= s) so the top impostor of
every group gets weight exactly 1 instead of a zero denominator.  The genuine
FRR level already counts s itself.  Both reduce to ``1 / count``, where the
count uses the pair's own rank (ties broken by position, as in the target
table), so the extreme pair of every group has weight exactly 1 even when
scores tie.

Loss: ``L_FAR + L_FRR``, each a weighted sum of squared errors between the
module pseudo-scores and the fixed targets, divided by the total weight of
its kind over *all* pairs.  A batch contributes the exact partial sum of the
global objective over its sampled images.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from cfair import kernels, rng
from cfair.centroids import CentroidSet, PseudoBlock
from cfair.dataset import EmbeddingDataset, GroupIndex, build_group_index
from cfair.fairmodule import (
    AdamState,
    ModuleParams,
    NumericalError,
    adam_step,
    forward_batch,
    init_from_pretrained,
    mlp_backward,
    save_checkpoint,
)
from cfair.transform import TargetTable

__all__ = [
    "WeightTable",
    "TrainConfig",
    "TrainingTables",
    "EpochRecord",
    "TrainResult",
    "compute_weights",
    "batch_loss_grad",
    "full_loss",
    "sample_epoch",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class WeightTable:
    """Per-group pair weights (shape of each pseudo-score block) and the two normalizers."""

    blocks: List[PseudoBlock]
    weights: List[np.ndarray]
    z_far: float
    z_frr: float

    def normalized(self) -> List[np.ndarray]:
        """Weights divided by the normalizer of their kind."""
        out = []
        for b, w in zip(self.blocks, self.weights):
            wn = w / self.z_far
            if b.images.size:
                rows = np.arange(b.images.size)
                wn[rows, b.genuine_col] = w[rows, b.genuine_col] / self.z_frr
            out.append(wn)
        return out

    def record_weights(self, table: TargetTable) -> np.ndarray:
        return table.flatten(self.weights)


def _ordinal_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties ordered by position (the same ranks the target table uses)."""
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[np.argsort(scores, kind="stable")] = np.arange(1, scores.size + 1)
    return ranks


def compute_weights(ds: EmbeddingDataset, cs: CentroidSet, blocks: Optional[List[PseudoBlock]] = None) -> WeightTable:
    if blocks is None:
        from cfair.centroids import pseudo_blocks

        blocks = pseudo_blocks(ds, cs)
    weights, far_parts, frr_parts = [], [], []
    for b in blocks:
        w = np.zeros(b.scores.shape)
        if b.images.size:
            if b.n_impostor == 0:
                raise ValueError(f"attribute {b.attribute} has no impostor pseudo-pairs")
            mask = b.genuine_mask
            w[mask] = 1.0 / _ordinal_ranks(b.scores[mask])
            imp_rank = _ordinal_ranks(b.scores[~mask])
            w[~mask] = 1.0 / (imp_rank.size - imp_rank + 1)
            far_parts.append(w[~mask])
            frr_parts.append(w[mask])
        weights.append(w)
    if not far_parts:
        raise ValueError("no group has pseudo-pairs")
    z_far = math.fsum(np.concatenate(far_parts))
    z_frr = math.fsum(np.concatenate(frr_parts))
    return WeightTable(blocks, weights, z_far, z_frr)


@dataclass
class TrainConfig:
    batch_size: int = 4096
    learning_rate: float = 1e-3
    epochs: int = 20
    reference: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive and finite")


@dataclass
class TrainingTables:
    """Everything the loss needs, precomputed once from the pre-trained model."""

    targets: TargetTable
    weights: WeightTable
    xn: np.ndarray = field(repr=False)
    gi: GroupIndex = field(repr=False)
    wn: List[np.ndarray] = field(repr=False)
    img_attr: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, ds: EmbeddingDataset, targets: TargetTable, weights: WeightTable) -> "TrainingTables":
        return cls(targets, weights, ds.normalized(), build_group_index(ds), weights.normalized(),
                   ds.attribute_of_image)

    @property
    def reference(self) -> int:
        return self.targets.reference


def batch_loss_grad(p: ModuleParams, batch, tables: TrainingTables):
    """Loss over all same-attribute pairs of the sampled images, and its gradient.

    Repeated images count once per occurrence.  Returns ``(loss, grads)`` with
    ``grads`` shaped like ``p``.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    gi = tables.gi
    xn = tables.xn[batch]
    g, h = forward_batch(p, xn)
    dg = np.zeros_like(g)
    dmu = np.zeros_like(p.centroids)
    img_attr = tables.img_attr[batch]
    loss = 0.0
    for a in range(gi.num_attributes):
        sel = np.flatnonzero(img_attr == a)
        if sel.size == 0:
            continue
        rows = gi.row_in_group[batch[sel]]
        ids = gi.identities[a]
        la, dga, dma = kernels.pair_loss_grad(
            g[sel], p.centroids[ids], tables.targets.targets[a][rows], tables.wn[a][rows]
        )
        loss += la
        dg[sel] = dga
        dmu[ids] += dma
    dw1, db1, dw2, db2 = mlp_backward(p, xn, h, dg)
    return loss, ModuleParams(dw1, db1, dw2, db2, dmu)


def full_loss(p: ModuleParams, tables: TrainingTables) -> float:
    """``L_CF`` over every image (the batch loss with the whole dataset as batch)."""
    n = tables.xn.shape[0]
    return batch_loss_grad(p, np.arange(n), tables)[0]


def sample_epoch(gi: GroupIndex, seed: int, epoch_index: int) -> np.ndarray:
    """N image indices drawn with replacement, P(i) proportional to 1/|images(a_i)|.

    Every nonempty group receives the same total mass.  The draw depends only on
    ``(seed, epoch_index)``.
    """
    n = int(sum(imgs.size for imgs in gi.images))
    prob = np.zeros(n)
    for imgs in gi.images:
        if imgs.size:
            prob[imgs] = 1.0 / imgs.size
    cdf = np.cumsum(prob)
    u = rng.uniforms(seed, rng.SAMPLER_STREAM_BASE + int(epoch_index), n)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, n - 1)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    wallclock_seconds: float


@dataclass
class TrainResult:
    params: ModuleParams
    log: List[EpochRecord]
    state: AdamState = field(repr=False)


def train(
    ds: EmbeddingDataset,
    cs: CentroidSet,
    tables: TrainingTables,
    cfg: TrainConfig,
    *,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Adam on the weighted centroid-regression loss, starting from the identity module.

    Each epoch draws N images (group-balanced, with replacement) and walks them in
    ``ceil(N / batch_size)`` consecutive batches.
    """
    if cfg.reference is not None and cfg.reference != tables.reference:
        raise ValueError(
            f"targets were built for reference {tables.reference}, config asks for {cfg.reference}"
        )
    params = init_from_pretrained(cs)
    state = AdamState.zeros(params)
    n = ds.n
    steps = -(-n // cfg.batch_size)
    history: List[EpochRecord] = []
    t0 = time.perf_counter()
    step = 0
    for epoch in range(cfg.epochs):
        order = sample_epoch(tables.gi, cfg.seed, epoch)
        losses = []
        for b in range(steps):
            batch = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, grads = batch_loss_grad(params, batch, tables)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {step} (epoch {epoch}, batch {b})")
            try:
                params, state = adam_step(params, state, grads, cfg.learning_rate)
            except NumericalError as exc:
                raise NumericalError(f"{exc} at step {step} (epoch {epoch}, batch {b})") from None
            losses.append(loss)
            step += 1
        rec = EpochRecord(epoch + 1, math.fsum(losses) / len(losses), time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d mean batch loss %.6g", rec.epoch, rec.mean_loss)
        if on_epoch is not None:
            on_epoch(rec)
        if checkpoint_dir is not None and checkpoint_every and rec.epoch % checkpoint_every == 0:
            save_checkpoint(params, f"{checkpoint_dir}/epoch_{rec.epoch:03d}", rec.epoch, rec.mean_loss)
    return TrainResult(params, history, state)

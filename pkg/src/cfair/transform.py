"""Quantile matching of group pseudo-scores onto a reference group.

A genuine pseudo-score s of group a is sent to the score of the reference group
r sitting at the same FRR level: ``FRR_r^{-1}(FRR_a(s))``.  An impostor score is
sent through the FAR curves: ``FAR_r^{-1}(FAR_a(s))`` with ``FAR^{-1}(x) =
TRR^{-1}(1 - x)``.  Both reduce to the same integer rank formula on sorted
scores, which is what is evaluated here so that no float rounding can move a
rank::

    c = #{s' <= s in group a},   j = ceil(c * m_r / m_a),   T(s) = j-th smallest of group r

The target table ranks tied pseudo-scores by pair position (image, identity)
so that each pair has its own c.  For distinct scores nothing changes; with
ties the transformed step curve still sits within 1/m_a of the reference curve
in sup norm, which a per-value map cannot guarantee.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from cfair._io import atomic_write_bytes, atomic_write_json, crc32, read_json
from cfair.centroids import CentroidSet, PseudoBlock, pseudo_blocks
from cfair.curves import FAR, FRR, StepCurve
from cfair.dataset import DatasetError, EmbeddingDataset, build_group_index

__all__ = [
    "GENUINE",
    "IMPOSTOR",
    "TargetTable",
    "t_frr",
    "t_far",
    "transform_scores",
    "transform_ordinal",
    "build_target_table",
    "check_alignment",
    "alignment_report",
    "RECORD_DTYPE",
    "save_target_table",
    "load_target_table",
]

GENUINE = 1
IMPOSTOR = 0

RECORD_DTYPE = np.dtype(
    [
        ("image", "<u4"),
        ("identity", "<u4"),
        ("kind", "u1"),
        ("source", "<f8"),
        ("target", "<f8"),
        ("level", "<f8"),
    ]
)


def transform_scores(scores, sorted_a: np.ndarray, sorted_r: np.ndarray) -> np.ndarray:
    """Rank-matching map from the sorted population ``sorted_a`` onto ``sorted_r``.

    Every entry of ``scores`` must be an observed value of ``sorted_a``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    m_a, m_r = sorted_a.size, sorted_r.size
    c = np.searchsorted(sorted_a, scores, side="right").astype(np.int64)
    if np.any(c == 0):
        raise ValueError("transform is only defined for observed scores of the source group")
    j = -((-c * m_r) // m_a)
    return sorted_r[j - 1]


def transform_ordinal(scores, sorted_r: np.ndarray):
    """Rank matching of a whole population, ties broken by position.

    The c-th smallest entry of ``scores`` (ties ordered by their position in
    ``scores``) is sent to the ``ceil(c * m_r / m_a)``-th smallest score of the
    reference.  On distinct scores this is exactly :func:`transform_scores`.
    With tied scores a per-value map would move the whole tie at once and the
    transformed curve could miss the reference by more than 1/m_a; giving each
    pair its own rank keeps the bound for any input.

    Returns the targets (in the order of ``scores``) and the ranks c.
    """
    scores = np.asarray(scores, dtype=np.float64)
    m_a, m_r = scores.size, sorted_r.size
    ranks = np.empty(m_a, dtype=np.int64)
    ranks[np.argsort(scores, kind="stable")] = np.arange(1, m_a + 1)
    j = -((-ranks * m_r) // m_a)
    return sorted_r[j - 1], ranks


def t_frr(s, curve_a: StepCurve, curve_r: StepCurve):
    """Genuine transform ``FRR_r^{-1}(FRR_a(s))``."""
    out = transform_scores(s, curve_a.scores, curve_r.scores)
    return float(out) if np.ndim(out) == 0 else out


def t_far(s, curve_a: StepCurve, curve_r: StepCurve):
    """Impostor transform ``FAR_r^{-1}(FAR_a(s))``.

    ``FAR_a(s) = #{s' > s}/m_a`` lies in [0, 1) for observed s and the inverse
    goes through ``TRR_r = 1 - FAR_r``, so the rank formula is the same as for FRR.
    """
    out = transform_scores(s, curve_a.scores, curve_r.scores)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class TargetTable:
    """Fixed regression targets for every same-attribute pseudo-pair.

    ``targets[a]`` and ``levels[a]`` have the shape of ``blocks[a].scores``.
    ``levels`` holds the level fed to the reference quantile: ``c / m_a`` for
    genuine pairs and ``1 - c / m_a`` for impostors, with c the pair's rank in its
    population.  On distinct scores these are ``FRR_a(s)`` and ``FAR_a(s)``.
    """

    reference: int
    blocks: List[PseudoBlock]
    targets: List[np.ndarray]
    levels: List[np.ndarray]

    def __post_init__(self):
        for arr in self.targets + self.levels:
            arr.setflags(write=False)

    def __len__(self) -> int:
        return sum(b.scores.size for b in self.blocks)

    def counts(self) -> Dict[int, Dict[str, int]]:
        return {
            b.attribute: {"genuine": b.n_genuine, "impostor": b.n_impostor}
            for b in self.blocks
            if b.images.size
        }

    def record_order(self) -> np.ndarray:
        """Permutation sorting the concatenated raveled blocks by (image, identity)."""
        live = [b for b in self.blocks if b.images.size]
        if not live:
            return np.empty(0, dtype=np.int64)
        img = np.concatenate([np.repeat(b.images, b.identities.size) for b in live])
        ident = np.concatenate([np.tile(b.identities, b.images.size) for b in live])
        return np.lexsort((ident, img))

    def flatten(self, per_block) -> np.ndarray:
        """Ravel one array per block into record order."""
        parts = [arr.ravel() for b, arr in zip(self.blocks, per_block) if b.images.size]
        if not parts:
            return np.empty(0)
        return np.concatenate(parts)[self.record_order()]

    def records(self) -> np.ndarray:
        """Flat records sorted by (image, identity)."""
        parts = []
        for b, tgt, lvl in zip(self.blocks, self.targets, self.levels):
            if b.images.size == 0:
                continue
            n_a, k_a = b.scores.shape
            rec = np.empty(n_a * k_a, dtype=RECORD_DTYPE)
            rec["image"] = np.repeat(b.images, k_a)
            rec["identity"] = np.tile(b.identities, n_a)
            rec["kind"] = np.where(b.genuine_mask.ravel(), GENUINE, IMPOSTOR)
            rec["source"] = b.scores.ravel()
            rec["target"] = tgt.ravel()
            rec["level"] = lvl.ravel()
            parts.append(rec)
        if not parts:
            return np.empty(0, dtype=RECORD_DTYPE)
        return np.concatenate(parts)[self.record_order()]


def _group_curves(b: PseudoBlock):
    gen = StepCurve(b.genuine_scores(), FRR)
    if b.n_impostor == 0:
        raise ValueError(f"attribute {b.attribute} has fewer than 2 identities: no impostor pseudo-pairs")
    imp = StepCurve(b.impostor_scores(), FAR)
    return gen, imp


def build_target_table(
    ds: EmbeddingDataset, cs: CentroidSet, reference: int, blocks: Optional[List[PseudoBlock]] = None
) -> TargetTable:
    """Targets ``T_{a->r}`` for all same-attribute pseudo-pairs of the pre-trained model."""
    if not 0 <= reference < ds.num_attributes:
        raise ValueError(f"reference attribute {reference} outside [0, {ds.num_attributes})")
    blocks = blocks if blocks is not None else pseudo_blocks(ds, cs)
    ref = blocks[reference]
    if ref.images.size == 0:
        raise ValueError(f"reference attribute {reference} has no images")
    gen_r, imp_r = _group_curves(ref)
    targets, levels = [], []
    for b in blocks:
        if b.images.size == 0:
            targets.append(np.empty(b.scores.shape))
            levels.append(np.empty(b.scores.shape))
            continue
        gen_a, imp_a = _group_curves(b)
        mask = b.genuine_mask
        tgt = np.empty_like(b.scores)
        lvl = np.empty_like(b.scores)
        tgt[mask], ranks = transform_ordinal(b.scores[mask], gen_r.scores)
        lvl[mask] = ranks / ranks.size
        tgt[~mask], ranks = transform_ordinal(b.scores[~mask], imp_r.scores)
        lvl[~mask] = (ranks.size - ranks) / ranks.size
        targets.append(tgt)
        levels.append(lvl)
    return TargetTable(reference, blocks, targets, levels)


def check_alignment(transformed_scores_a, curve_r: StepCurve, kind: str) -> float:
    """Sup-norm gap between the curve of the transformed scores and ``curve_r``.

    ``kind`` is 'genuine' (FRR curves) or 'impostor' (FAR curves).  Both are
    right-continuous step functions that agree left of every jump, so the sup is
    attained on the union of their jump points.
    """
    orient = {"genuine": FRR, "impostor": FAR}[kind]
    c_a = StepCurve(transformed_scores_a, orient)
    c_r = StepCurve(curve_r.scores, orient)
    jumps = np.union1d(c_a.jumps(), c_r.jumps())
    return float(np.max(np.abs(c_a(jumps) - c_r(jumps))))


def alignment_report(ds: EmbeddingDataset, cs: CentroidSet, reference: int) -> List[dict]:
    """Per-group alignment gaps after transformation, with their guaranteed bounds."""
    table = build_target_table(ds, cs, reference)
    ref = table.blocks[reference]
    gen_r, imp_r = _group_curves(ref)
    out = []
    for b, tgt in zip(table.blocks, table.targets):
        if b.images.size == 0:
            continue
        mask = b.genuine_mask
        gap_g = check_alignment(tgt[mask], gen_r, "genuine")
        gap_i = check_alignment(tgt[~mask], imp_r, "impostor")
        bound_g, bound_i = 1.0 / b.n_genuine, 1.0 / b.n_impostor
        out.append(
            {
                "attribute": b.attribute,
                "genuine_gap": gap_g,
                "genuine_bound": bound_g,
                "impostor_gap": gap_i,
                "impostor_bound": bound_i,
                "pass": bool(gap_g <= bound_g and gap_i <= bound_i),
            }
        )
    return out


def save_target_table(table: TargetTable, path, attribute_names, weights=None) -> None:
    """Write ``targets.bin`` + ``targets.json`` (and ``weights.bin`` if given) into ``path``.

    ``weights`` is a :class:`cfair.cftrain.WeightTable`; its per-record weights
    are stored in the same order as the target records.
    """
    path = Path(path)
    rec = table.records()
    data = rec.tobytes()
    header = {
        "reference_attribute": attribute_names[table.reference],
        "reference_id": table.reference,
        "n_records": int(rec.size),
        "record_format": [[name, RECORD_DTYPE[name].str] for name in RECORD_DTYPE.names],
        "kind_codes": {"genuine": GENUINE, "impostor": IMPOSTOR},
        "counts": {attribute_names[a]: c for a, c in table.counts().items()},
        "checksum": crc32(data),
    }
    if weights is not None:
        wdata = weights.record_weights(table).astype("<f8").tobytes()
        header["weights"] = {"z_far": weights.z_far, "z_frr": weights.z_frr, "checksum": crc32(wdata)}
        atomic_write_bytes(path / "weights.bin", wdata)
    atomic_write_bytes(path / "targets.bin", data)
    atomic_write_json(path / "targets.json", header)


def read_target_records(path):
    """Raw records and header of a target table directory."""
    path = Path(path)
    try:
        header = read_json(path / "targets.json")
        data = (path / "targets.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {exc.filename}") from None
    if len(data) != header["n_records"] * RECORD_DTYPE.itemsize:
        raise DatasetError("targets.bin: size does not match targets.json")
    if crc32(data) != header["checksum"]:
        raise DatasetError("targets.bin: checksum mismatch")
    return np.frombuffer(data, dtype=RECORD_DTYPE), header


def load_target_table(path, ds: EmbeddingDataset, cs: CentroidSet) -> TargetTable:
    """Rebuild a :class:`TargetTable` from disk, checking it covers every pseudo-pair."""
    rec, header = read_target_records(path)
    reference = int(header["reference_id"])
    blocks = pseudo_blocks(ds, cs)
    expected = sum(b.scores.size for b in blocks)
    if rec.size != expected:
        raise DatasetError(f"target table has {rec.size} records, dataset needs {expected}")
    gi = build_group_index(ds)
    targets, levels = [], []
    for b in blocks:
        targets.append(np.full(b.scores.shape, np.nan))
        levels.append(np.full(b.scores.shape, np.nan))
    img = rec["image"].astype(np.int64)
    ident = rec["identity"].astype(np.int64)
    a_img = ds.attribute_of_image[img]
    if np.any(ds.attribute_of_identity[ident] != a_img):
        raise DatasetError("target table contains cross-attribute pairs")
    rows = gi.row_in_group[img]
    cols = gi.pos_in_group[ident]
    for a, b in enumerate(blocks):
        sel = a_img == a
        targets[a][rows[sel], cols[sel]] = rec["target"][sel]
        levels[a][rows[sel], cols[sel]] = rec["level"][sel]
        if np.isnan(targets[a]).any():
            raise DatasetError(f"target table is missing pairs of attribute {a}")
    return TargetTable(reference, blocks, targets, levels)

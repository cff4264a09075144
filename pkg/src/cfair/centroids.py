"""Identity centroids of a frozen encoder and the image-centroid pseudo-scores.

A centroid is the plain mean of the L2-normalized embeddings of one identity
(it is not renormalized).  Pseudo-pairs are only ever formed between an image
and the centroids of identities sharing its attribute; they are kept as dense
``images(a) x identities(a)`` blocks rather than explicit pair lists.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from cfair import kernels
from cfair._io import atomic_write_bytes, atomic_write_json, crc32, matrix_bytes, read_json, read_matrix
from cfair.curves import StepCurve, cosine_score
from cfair.dataset import DatasetError, EmbeddingDataset, GroupIndex, build_group_index

__all__ = [
    "CentroidSet",
    "PseudoBlock",
    "estimate_centroids",
    "pseudo_score",
    "pseudo_blocks",
    "pseudo_metric_curves",
    "save_centroids",
    "load_centroids",
]


@dataclass
class CentroidSet:
    centroids: np.ndarray  # (K, d)
    attribute_of_identity: np.ndarray  # (K,)
    counts: np.ndarray  # (K,) images per identity

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def check_matches(self, ds: EmbeddingDataset) -> None:
        if self.centroids.shape != (ds.k, ds.d):
            raise DatasetError(
                f"centroids have shape {self.centroids.shape}, dataset needs ({ds.k}, {ds.d})"
            )
        if not np.array_equal(self.attribute_of_identity, ds.attribute_of_identity):
            raise DatasetError("centroid attributes do not match the dataset")


def estimate_centroids(ds: EmbeddingDataset) -> CentroidSet:
    """Mean of the normalized embeddings of each identity."""
    un = ds.normalized()
    order = np.argsort(ds.identity_of, kind="stable")
    counts = np.bincount(ds.identity_of, minlength=ds.k)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    sums = np.add.reduceat(un[order], starts, axis=0)
    cent = sums / counts[:, None]
    zero = ~np.any(cent != 0.0, axis=1)
    if zero.any():
        k = int(np.flatnonzero(zero)[0])
        raise DatasetError(f"identity {k}: normalized embeddings sum to the zero vector")
    return CentroidSet(cent, ds.attribute_of_identity.copy(), counts)


def pseudo_score(ds: EmbeddingDataset, cs: CentroidSet, i: int, k: int) -> float:
    """Cosine between the embedding of image ``i`` and centroid ``k``."""
    return cosine_score(ds.embeddings[i], cs.centroids[k])


@dataclass
class PseudoBlock:
    """Pseudo-scores of every same-attribute image-centroid pair of one group.

    ``scores[r, c]`` pairs image ``images[r]`` with identity ``identities[c]``;
    the genuine pair of row r sits in column ``genuine_col[r]``.
    """

    attribute: int
    images: np.ndarray
    identities: np.ndarray
    scores: np.ndarray
    genuine_col: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.scores.shape

    @property
    def n_genuine(self) -> int:
        return self.images.size

    @property
    def n_impostor(self) -> int:
        return self.images.size * (self.identities.size - 1)

    @property
    def genuine_mask(self) -> np.ndarray:
        mask = np.zeros(self.scores.shape, dtype=bool)
        mask[np.arange(self.images.size), self.genuine_col] = True
        return mask

    def genuine_scores(self) -> np.ndarray:
        return self.scores[np.arange(self.images.size), self.genuine_col]

    def impostor_scores(self) -> np.ndarray:
        return self.scores[~self.genuine_mask]


def _block(un, cent, ds, gi: GroupIndex, a: int) -> PseudoBlock:
    imgs, ids = gi.images[a], gi.identities[a]
    # same kernel as the training loss, so an untrained module reproduces these bits
    scores = kernels.pair_cosines(un[imgs], cent[ids])
    return PseudoBlock(a, imgs, ids, scores, gi.pos_in_group[ds.identity_of[imgs]])


def pseudo_blocks(ds: EmbeddingDataset, cs: CentroidSet, gi: Optional[GroupIndex] = None) -> List[PseudoBlock]:
    """One :class:`PseudoBlock` per attribute (empty blocks for empty groups)."""
    cs.check_matches(ds)
    gi = gi or build_group_index(ds)
    un = ds.normalized()
    return [_block(un, cs.centroids, ds, gi, a) for a in range(ds.num_attributes)]


def pseudo_metric_curves(ds: EmbeddingDataset, cs: CentroidSet, a: int, *, require_impostors=True):
    """``(FAR_a, FRR_a)`` pseudo-metric curves of attribute ``a``.

    A group with a single identity has no impostor pseudo-pairs: this raises
    unless ``require_impostors`` is False, in which case FAR is returned as None.
    """
    gi = build_group_index(ds)
    if gi.images[a].size == 0:
        raise ValueError(f"attribute {a} has no images")
    block = _block(ds.normalized(), cs.centroids, ds, gi, a)
    frr = StepCurve.frr(block.genuine_scores())
    if block.n_impostor == 0:
        if require_impostors:
            raise ValueError(f"attribute {a} has fewer than 2 identities: no impostor pseudo-pairs")
        return None, frr
    return StepCurve.far(block.impostor_scores()), frr


def save_centroids(cs: CentroidSet, path, attribute_names=None) -> None:
    """Write ``centroids.bin`` (float64) and ``centroids.json`` into directory ``path``."""
    path = Path(path)
    data = matrix_bytes(cs.centroids, "<f8")
    header = {
        "k": cs.k,
        "d": cs.d,
        "dtype": "<f8",
        "checksum": crc32(data),
        "centroids": [
            {"row": k, "identity": k, "attribute": int(cs.attribute_of_identity[k]),
             "count": int(cs.counts[k])}
            for k in range(cs.k)
        ],
    }
    if attribute_names is not None:
        header["attribute_names"] = list(attribute_names)
    atomic_write_bytes(path / "centroids.bin", data)
    atomic_write_json(path / "centroids.json", header)


def load_centroids(path) -> CentroidSet:
    path = Path(path)
    try:
        header = read_json(path / "centroids.json")
        mat = read_matrix(path / "centroids.bin", header["k"], header["d"],
                          header.get("dtype", "<f8"), header.get("checksum"))
    except FileNotFoundError as exc:
        raise DatasetError(f"missing file: {exc.filename}") from None
    except (KeyError, ValueError) as exc:
        raise DatasetError(f"centroid file: {exc}") from None
    k = header["k"]
    attr = np.empty(k, dtype=np.int64)
    counts = np.empty(k, dtype=np.int64)
    order = np.empty(k, dtype=np.int64)
    for entry in header["centroids"]:
        row = int(entry["row"])
        attr[row] = int(entry["attribute"])
        counts[row] = int(entry["count"])
        order[row] = int(entry["identity"])
    cent = np.empty_like(mat)
    cent[order] = mat
    return CentroidSet(cent, attr[np.argsort(order)], counts[np.argsort(order)])

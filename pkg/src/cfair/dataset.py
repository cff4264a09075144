"""Embedding datasets: validation, on-disk format and attribute grouping.

A dataset directory holds ``embeddings.bin`` (raw row-major little-endian
float32, N*d values) and ``manifest.json``::

    {"n": N, "d": d, "k": K,
     "identities": [{"id": 0, "attribute": 0, "name": "..."}, ...],
     "images": [{"row": 0, "identity": 0}, ...],
     "attribute_names": ["A", "B"],
     "checksum": <CRC32 of embeddings.bin>}

As a fallback, ``embeddings.csv`` with rows ``identity_name,attribute_name,v1,...,vd``
is accepted.  Attributes belong to identities; an image inherits the attribute
of its identity.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from cfair._io import atomic_write_bytes, atomic_write_json, crc32, matrix_bytes, read_json, read_matrix

__all__ = [
    "DatasetError",
    "EmbeddingDataset",
    "GroupIndex",
    "build_group_index",
    "load_dataset",
    "save_dataset",
]

MANIFEST = "manifest.json"
EMBEDDINGS_BIN = "embeddings.bin"
EMBEDDINGS_CSV = "embeddings.csv"


class DatasetError(ValueError):
    """Raised when a dataset violates its invariants or cannot be read."""


@dataclass
class EmbeddingDataset:
    """N embeddings with identity labels and per-identity attributes.

    Parameters
    ----------
    embeddings : array (N, d)
        Encoder outputs.  Stored as float64.
    identity_of : int array (N,)
        Identity id of every image, in ``[0, K)``.
    attribute_of_identity : int array (K,)
        Attribute id of every identity, in ``[0, A)``.
    attribute_names : list of str
        One name per attribute id.
    identity_names : list of str, optional
        One name per identity id; defaults to ``"id<k>"``.
    """

    embeddings: np.ndarray
    identity_of: np.ndarray
    attribute_of_identity: np.ndarray
    attribute_names: List[str]
    identity_names: Optional[List[str]] = None

    def __post_init__(self):
        self.embeddings = np.array(self.embeddings, dtype=np.float64, copy=True)
        self.identity_of = np.array(self.identity_of, dtype=np.int64, copy=True).reshape(-1)
        self.attribute_of_identity = np.array(
            self.attribute_of_identity, dtype=np.int64, copy=True
        ).reshape(-1)
        self.attribute_names = [str(a) for a in self.attribute_names]
        if self.identity_names is None:
            self.identity_names = [f"id{k}" for k in range(len(self.attribute_of_identity))]
        else:
            self.identity_names = [str(s) for s in self.identity_names]
        self.validate()

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]

    @property
    def k(self) -> int:
        return self.attribute_of_identity.shape[0]

    @property
    def num_attributes(self) -> int:
        return len(self.attribute_names)

    @property
    def attribute_of_image(self) -> np.ndarray:
        return self.attribute_of_identity[self.identity_of]

    def attribute_id(self, name: str) -> int:
        try:
            return self.attribute_names.index(name)
        except ValueError:
            raise DatasetError(
                f"unknown attribute {name!r}; known attributes: {', '.join(self.attribute_names)}"
            ) from None

    def validate(self) -> None:
        emb = self.embeddings
        if emb.ndim != 2 or emb.shape[0] == 0 or emb.shape[1] == 0:
            raise DatasetError(f"embeddings must be a non-empty N x d matrix, got shape {emb.shape}")
        if self.identity_of.shape[0] != emb.shape[0]:
            raise DatasetError(
                f"{emb.shape[0]} embedding rows but {self.identity_of.shape[0]} identity labels"
            )
        if len(self.attribute_names) < 1:
            raise DatasetError("at least one attribute is required (A >= 1)")
        if len(self.identity_names) != self.k:
            raise DatasetError(f"{len(self.identity_names)} identity names for {self.k} identities")
        bad = ~np.isfinite(emb)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise DatasetError(f"non-finite value at row {row}, column {col}")
        zero = ~np.any(emb != 0.0, axis=1)
        if zero.any():
            raise DatasetError(f"row {int(np.flatnonzero(zero)[0])} is the zero vector")
        out = (self.identity_of < 0) | (self.identity_of >= self.k)
        if out.any():
            i = int(np.flatnonzero(out)[0])
            raise DatasetError(f"row {i}: identity {int(self.identity_of[i])} outside [0, {self.k})")
        counts = np.bincount(self.identity_of, minlength=self.k)
        if (counts == 0).any():
            raise DatasetError(f"identity {int(np.flatnonzero(counts == 0)[0])} unreferenced")
        attr = self.attribute_of_identity
        out = (attr < 0) | (attr >= self.num_attributes)
        if out.any():
            k = int(np.flatnonzero(out)[0])
            raise DatasetError(
                f"identity {k}: attribute {int(attr[k])} outside [0, {self.num_attributes})"
            )

    def with_embeddings(self, embeddings: np.ndarray) -> "EmbeddingDataset":
        """Same labels, new embedding matrix (e.g. the output of a trained module)."""
        return EmbeddingDataset(
            embeddings,
            self.identity_of,
            self.attribute_of_identity,
            list(self.attribute_names),
            list(self.identity_names),
        )

    def normalized(self) -> np.ndarray:
        return self.embeddings / np.linalg.norm(self.embeddings, axis=1, keepdims=True)


@dataclass
class GroupIndex:
    """Images and identities per attribute.

    ``images[a]`` and ``identities[a]`` are sorted index arrays.  ``row_in_group[i]``
    is the position of image i inside ``images[a_{y_i}]`` and ``pos_in_group[k]``
    the position of identity k inside ``identities[a_k]``.
    """

    images: List[np.ndarray]
    identities: List[np.ndarray]
    counts: np.ndarray
    row_in_group: np.ndarray = field(repr=False)
    pos_in_group: np.ndarray = field(repr=False)

    @property
    def num_attributes(self) -> int:
        return len(self.images)


def build_group_index(ds: EmbeddingDataset) -> GroupIndex:
    img_attr = ds.attribute_of_image
    images, identities = [], []
    row_in_group = np.empty(ds.n, dtype=np.int64)
    pos_in_group = np.empty(ds.k, dtype=np.int64)
    for a in range(ds.num_attributes):
        imgs = np.flatnonzero(img_attr == a)
        ids = np.flatnonzero(ds.attribute_of_identity == a)
        row_in_group[imgs] = np.arange(imgs.size)
        pos_in_group[ids] = np.arange(ids.size)
        images.append(imgs)
        identities.append(ids)
    counts = np.bincount(ds.identity_of, minlength=ds.k)
    return GroupIndex(images, identities, counts, row_in_group, pos_in_group)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------


def _float32_exact(emb: np.ndarray) -> bool:
    return bool(np.array_equal(emb.astype(np.float32).astype(np.float64), emb))


def save_dataset(ds: EmbeddingDataset, path) -> None:
    """Write ``ds`` as a dataset directory.

    Embeddings are stored as float32 (the interchange precision).  Matrices that
    are not exactly representable in float32 are written as float64 and flagged
    with ``"dtype": "<f8"`` so that loading reproduces them bit-exactly.
    """
    ds.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dtype = "<f4" if _float32_exact(ds.embeddings) else "<f8"
    data = matrix_bytes(ds.embeddings, dtype)
    manifest = {
        "n": ds.n,
        "d": ds.d,
        "k": ds.k,
        "dtype": dtype,
        "identities": [
            {"id": k, "attribute": int(ds.attribute_of_identity[k]), "name": ds.identity_names[k]}
            for k in range(ds.k)
        ],
        "images": [{"row": i, "identity": int(ds.identity_of[i])} for i in range(ds.n)],
        "attribute_names": list(ds.attribute_names),
        "checksum": crc32(data),
    }
    atomic_write_bytes(path / EMBEDDINGS_BIN, data)
    atomic_write_json(path / MANIFEST, manifest)


def load_dataset(path) -> EmbeddingDataset:
    """Load and validate a dataset directory (binary format or CSV fallback)."""
    path = Path(path)
    if path.is_file() and path.suffix == ".csv":
        return _load_csv(path)
    if not path.is_dir():
        raise DatasetError(f"missing dataset directory: {path}")
    if (path / MANIFEST).exists():
        return _load_binary(path)
    if (path / EMBEDDINGS_CSV).exists():
        return _load_csv(path / EMBEDDINGS_CSV)
    raise DatasetError(f"missing file: {path / MANIFEST} (and no {EMBEDDINGS_CSV} fallback)")


def _require(manifest, key, where="manifest.json"):
    if key not in manifest:
        raise DatasetError(f"{where}: missing field {key!r}")
    return manifest[key]


def _load_binary(path: Path) -> EmbeddingDataset:
    try:
        manifest = read_json(path / MANIFEST)
    except ValueError as exc:
        raise DatasetError(f"manifest.json: invalid JSON ({exc})") from None
    n = int(_require(manifest, "n"))
    d = int(_require(manifest, "d"))
    k = int(_require(manifest, "k"))
    names = list(_require(manifest, "attribute_names"))
    identities = _require(manifest, "identities")
    images = _require(manifest, "images")
    dtype = manifest.get("dtype", "<f4")
    if dtype not in ("<f4", "<f8"):
        raise DatasetError(f"manifest.json: unsupported dtype {dtype!r}")

    attribute_of_identity = np.full(k, -1, dtype=np.int64)
    identity_names: List[Optional[str]] = [None] * k
    for j, entry in enumerate(identities):
        kid = int(entry["id"])
        if not 0 <= kid < k:
            raise DatasetError(f"manifest.json: identities[{j}]: id {kid} outside [0, {k})")
        attr = entry["attribute"]
        if isinstance(attr, str):
            if attr not in names:
                raise DatasetError(f"manifest.json: identities[{j}]: unknown attribute {attr!r}")
            attr = names.index(attr)
        attr = int(attr)
        if attribute_of_identity[kid] not in (-1, attr):
            raise DatasetError(f"manifest.json: identity {kid} has conflicting attributes")
        attribute_of_identity[kid] = attr
        identity_names[kid] = str(entry.get("name", f"id{kid}"))

    if len(images) != n:
        raise DatasetError(f"manifest.json: n={n} but {len(images)} image entries")
    identity_of = np.full(n, -1, dtype=np.int64)
    for j, entry in enumerate(images):
        row = int(entry["row"])
        if not 0 <= row < n:
            raise DatasetError(f"manifest.json: images[{j}]: row {row} outside [0, {n})")
        if identity_of[row] != -1:
            raise DatasetError(f"manifest.json: images[{j}]: row {row} listed twice")
        kid = int(entry["identity"])
        if not 0 <= kid < k:
            raise DatasetError(f"manifest.json: images[{j}]: identity {kid} outside [0, {k})")
        if attribute_of_identity[kid] == -1:
            raise DatasetError(f"manifest.json: row {row}: identity {kid} referenced without attribute")
        identity_of[row] = kid
    missing = np.flatnonzero(attribute_of_identity == -1)
    if missing.size:
        raise DatasetError(f"manifest.json: identity {int(missing[0])} has no attribute entry")

    if not (path / EMBEDDINGS_BIN).exists():
        raise DatasetError(f"missing file: {path / EMBEDDINGS_BIN}")
    try:
        emb = read_matrix(path / EMBEDDINGS_BIN, n, d, dtype, manifest.get("checksum"))
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    return EmbeddingDataset(emb, identity_of, attribute_of_identity, names, identity_names)


def _load_csv(path: Path) -> EmbeddingDataset:
    rows: List[Sequence[str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if rec and any(c.strip() for c in rec):
                rows.append(rec)
    if rows:
        try:
            float(rows[0][2])
        except (ValueError, IndexError):
            rows = rows[1:]  # header line
    if not rows:
        raise DatasetError(f"{path.name}: no data rows")
    d = len(rows[0]) - 2
    if d < 1:
        raise DatasetError(f"{path.name}: row 0 has no embedding values")

    identity_ids: dict = {}
    attribute_ids: dict = {}
    attr_of_identity: List[int] = []
    identity_of = np.empty(len(rows), dtype=np.int64)
    emb = np.empty((len(rows), d), dtype=np.float64)
    for i, rec in enumerate(rows):
        if len(rec) != d + 2:
            raise DatasetError(f"{path.name}: row {i}: expected {d + 2} columns, found {len(rec)}")
        ident, attr = rec[0].strip(), rec[1].strip()
        try:
            emb[i] = [float(v) for v in rec[2:]]
        except ValueError as exc:
            raise DatasetError(f"{path.name}: row {i}: {exc}") from None
        aid = attribute_ids.setdefault(attr, len(attribute_ids))
        if ident not in identity_ids:
            identity_ids[ident] = len(identity_ids)
            attr_of_identity.append(aid)
        kid = identity_ids[ident]
        if attr_of_identity[kid] != aid:
            raise DatasetError(
                f"{path.name}: row {i}: identity {ident!r} has conflicting attributes"
            )
        identity_of[i] = kid
    return EmbeddingDataset(
        emb, identity_of, attr_of_identity, list(attribute_ids), list(identity_ids)
    )

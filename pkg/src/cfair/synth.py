"""Synthetic biased embedding datasets.

Each identity gets a direction drawn uniformly on the unit sphere (a
normalized standard Gaussian vector).  Each of its images is
``normalize(direction + sigma_a * z)`` with ``z`` standard Gaussian, so groups
with a larger ``sigma_a`` are less concentrated around their identities and
end up with worse verification curves.

All Gaussians come from one sequential stream (``rng.SYNTH_STREAM``): for
every group in order, first all identity directions, then all image noise.
Embeddings are rounded to float32 so that a dataset written to disk reads back
bit-identically.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from cfair import rng
from cfair._io import atomic_write_json
from cfair.dataset import EmbeddingDataset, save_dataset

__all__ = ["GroupSpec", "SynthConfig", "generate", "write_synth", "parse_groups"]


@dataclass(frozen=True)
class GroupSpec:
    name: str
    identities: int
    images_per_identity: int
    sigma: float


@dataclass
class SynthConfig:
    d: int
    groups: List[GroupSpec]
    seed: int = 0

    def __post_init__(self):
        self.groups = [g if isinstance(g, GroupSpec) else GroupSpec(*g) for g in self.groups]
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.groups:
            raise ValueError("at least one group is required")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate group names in {names}")
        for g in self.groups:
            if g.identities < 2:
                raise ValueError(f"group {g.name!r} needs at least 2 identities, got {g.identities}")
            if g.images_per_identity < 1:
                raise ValueError(f"group {g.name!r} needs at least 1 image per identity")
            if not (math.isfinite(g.sigma) and g.sigma >= 0):
                raise ValueError(f"group {g.name!r}: sigma must be finite and >= 0, got {g.sigma}")

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "seed": self.seed,
            "groups": [
                {"name": g.name, "identities": g.identities,
                 "images_per_identity": g.images_per_identity, "sigma": g.sigma}
                for g in self.groups
            ],
            "generator": "philox4x64-10, key (seed, 0), box-muller",
        }


def parse_groups(text: str) -> List[GroupSpec]:
    """Parse ``name:ids:imgs:sigma[,name:ids:imgs:sigma...]``."""
    out = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 4 or not parts[0]:
            raise ValueError(f"bad group spec {item!r}, expected name:ids:imgs:sigma")
        try:
            out.append(GroupSpec(parts[0], int(parts[1]), int(parts[2]), float(parts[3])))
        except ValueError:
            raise ValueError(f"bad group spec {item!r}, expected name:ids:imgs:sigma") from None
    return out


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate(cfg: SynthConfig) -> EmbeddingDataset:
    d = cfg.d
    total = sum(g.identities * (d + g.images_per_identity * d) for g in cfg.groups)
    z = rng.gaussians(cfg.seed, rng.SYNTH_STREAM, total)
    pos = 0

    def take(rows: int) -> np.ndarray:
        nonlocal pos
        block = z[pos:pos + rows * d].reshape(rows, d)
        pos += rows * d
        return block

    emb_parts, id_parts, attr_of_id, names = [], [], [], []
    k0 = 0
    for a, g in enumerate(cfg.groups):
        dirs = _normalize_rows(take(g.identities))
        noise = take(g.identities * g.images_per_identity)
        ids = np.repeat(np.arange(g.identities), g.images_per_identity)
        emb_parts.append(_normalize_rows(dirs[ids] + g.sigma * noise))
        id_parts.append(ids + k0)
        attr_of_id.extend([a] * g.identities)
        names.extend(f"{g.name}_{j:03d}" for j in range(g.identities))
        k0 += g.identities
    emb = np.concatenate(emb_parts).astype(np.float32).astype(np.float64)
    return EmbeddingDataset(
        embeddings=emb,
        identity_of=np.concatenate(id_parts),
        attribute_of_identity=np.asarray(attr_of_id, dtype=np.int64),
        attribute_names=[g.name for g in cfg.groups],
        identity_names=names,
    )


def write_synth(cfg: SynthConfig, path) -> EmbeddingDataset:
    """Generate, save in the dataset format and record the config in ``synth.json``."""
    ds = generate(cfg)
    path = Path(path)
    save_dataset(ds, path)
    atomic_write_json(path / "synth.json", cfg.to_json())
    return ds

"""Empirical verification metrics over cosine scores.

FRR-type curves count scores at or below a threshold, FAR-type curves count
scores strictly above it.  Both are step functions stored as sorted score
arrays and queried by binary search, so every level is an exact multiple of
1/m.  Generalized inverses follow ``inf{t : cdf(t) >= alpha}``; a FAR-type
curve is inverted through its complementary cdf ``1 - FAR``.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from cfair import kernels
from cfair.dataset import EmbeddingDataset, build_group_index

__all__ = [
    "FRR",
    "FAR",
    "ScoreSet",
    "StepCurve",
    "UndefinedMetricError",
    "BiasMetrics",
    "cosine_score",
    "enumerate_pair_scores",
    "curve_eval",
    "frr_inverse",
    "far_inverse",
    "roc_point",
    "bias_metrics",
    "curve_csv",
    "fairness_report",
]

FRR = "frr"
FAR = "far"


class UndefinedMetricError(ArithmeticError):
    """A fairness ratio whose geometric mean is zero."""


def cosine_score(u, v) -> float:
    """Cosine similarity of two nonzero vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return min(1.0, max(-1.0, float(np.dot(u, v)) / (nu * nv)))


@dataclass
class ScoreSet:
    """Sorted scores of one pair population (``kind`` is 'genuine' or 'impostor')."""

    values: np.ndarray
    kind: str
    attribute: Optional[int] = None

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=np.float64).reshape(-1), kind="stable")
        if self.values.size and (self.values[0] < -1.0 or self.values[-1] > 1.0):
            raise ValueError("scores must lie in [-1, 1]")

    def __len__(self):
        return self.values.size


class StepCurve:
    """Empirical FRR-type (``#{s <= t}/m``) or FAR-type (``#{s > t}/m``) curve."""

    def __init__(self, scores, orientation: str):
        if orientation not in (FRR, FAR):
            raise ValueError(f"orientation must be {FRR!r} or {FAR!r}")
        if isinstance(scores, ScoreSet):
            scores = scores.values
        self.scores = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1), kind="stable")
        if self.scores.size == 0:
            raise ValueError("a step curve needs at least one score")
        self.orientation = orientation

    @classmethod
    def frr(cls, scores):
        return cls(scores, FRR)

    @classmethod
    def far(cls, scores):
        return cls(scores, FAR)

    @property
    def m(self) -> int:
        return self.scores.size

    def count_le(self, t):
        return np.searchsorted(self.scores, t, side="right")

    def count_ge(self, t):
        return self.m - np.searchsorted(self.scores, t, side="left")

    def __call__(self, t):
        below = self.count_le(t)
        if self.orientation == FRR:
            return below / self.m
        return (self.m - below) / self.m

    def inclusive_level(self, s):
        """Share of scores >= s for FAR-type curves (the left limit at s); FRR level otherwise."""
        if self.orientation == FRR:
            return self(s)
        return self.count_ge(s) / self.m

    def jumps(self) -> np.ndarray:
        return np.unique(self.scores)

    def __repr__(self):
        return f"StepCurve({self.orientation}, m={self.m})"


def curve_eval(c: StepCurve, t):
    """Level of ``c`` at threshold(s) ``t``; exact count / m."""
    out = c(t)
    return float(out) if np.ndim(out) == 0 else out


def _smallest_rank(alpha: float, m: int) -> int:
    """Smallest j in 1..m with j/m >= alpha (alpha in (0, 1])."""
    j = max(1, min(m, math.ceil(alpha * m)))
    while j > 1 and (j - 1) / m >= alpha:
        j -= 1
    while j < m and j / m < alpha:
        j += 1
    return j


def frr_inverse(c: StepCurve, alpha: float) -> float:
    """``inf{t : FRR(t) >= alpha}``, i.e. the ceil(alpha*m)-th smallest score."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return float(c.scores[_smallest_rank(alpha, c.m) - 1])


def far_inverse(c: StepCurve, alpha: float) -> float:
    """``TRR^{-1}(1 - alpha)`` where ``TRR = 1 - FAR`` is the impostor cdf."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return float(c.scores[_smallest_rank(1.0 - alpha, c.m) - 1])


def roc_point(genuine: StepCurve, impostor: StepCurve, alpha: float) -> float:
    """FRR at the threshold where the impostor curve reaches FAR level ``alpha``."""
    return float(genuine.count_le(far_inverse(impostor, alpha)) / genuine.m)


def enumerate_pair_scores(ds: EmbeddingDataset, scope=None):
    """All image-pair cosine scores, split into genuine and impostor sets.

    ``scope`` is None for the whole population, or an attribute id: then only
    pairs whose two images both carry that attribute are kept.
    """
    if scope is None:
        rows = np.arange(ds.n)
    else:
        rows = np.flatnonzero(ds.attribute_of_image == int(scope))
        if rows.size == 0:
            raise ValueError(f"attribute {scope} has no images")
    U = ds.embeddings[rows]
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    gen, imp = kernels.pair_scores(U, ds.identity_of[rows])
    return ScoreSet(gen, "genuine", scope), ScoreSet(imp, "impostor", scope)


@dataclass
class BiasMetrics:
    alpha: float
    threshold: float
    far: Dict[int, float]
    frr: Dict[int, float]
    bfar: float
    bfrr: float

    def __iter__(self):
        yield self.bfar
        yield self.bfrr


def _bias_ratio(values: Mapping, what: str, alpha: float) -> float:
    if not values:
        raise UndefinedMetricError(f"{what} metric undefined at level {alpha}: no group has pairs")
    for a, v in values.items():
        if v <= 0.0:
            raise UndefinedMetricError(f"{what} metric undefined at level {alpha} for group {a}")
    arr = np.array(list(values.values()), dtype=np.float64)
    if arr.max() == arr.min():
        return 1.0
    logs = np.log(arr)
    return max(1.0, math.exp(float(logs.max()) - math.fsum(logs) / logs.size))


def bias_metrics(
    per_group_far: Mapping[int, StepCurve],
    per_group_frr: Mapping[int, StepCurve],
    global_impostor: StepCurve,
    alpha: float,
) -> BiasMetrics:
    """BFAR and BFRR: worst group rate over the geometric mean of group rates.

    The threshold is set on the global impostor population at FAR level ``alpha``.
    """
    t = far_inverse(global_impostor, alpha)
    far = {a: float(c(t)) for a, c in per_group_far.items()}
    frr = {a: float(c(t)) for a, c in per_group_frr.items()}
    return BiasMetrics(alpha, t, far, frr, _bias_ratio(far, "FAR", alpha), _bias_ratio(frr, "FRR", alpha))


def curve_csv(c: StepCurve) -> str:
    """CSV text (threshold, level) with one row per distinct score."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "level"])
    jumps = c.jumps()
    levels = c(jumps)
    for t, lv in zip(jumps.tolist(), levels.tolist()):
        w.writerow([repr(t), repr(lv)])
    return buf.getvalue()


@dataclass
class FairnessReport:
    """Everything the evaluation step emits for one embedding matrix."""

    entries: list
    warnings: list
    group_far: Dict[int, StepCurve] = field(repr=False)
    group_frr: Dict[int, StepCurve] = field(repr=False)
    n_impostor: int = 0
    n_genuine: int = 0

    def to_json(self, attribute_names: Sequence[str]) -> dict:
        out = []
        for e in self.entries:
            item = {
                "alpha": e["alpha"],
                "threshold": e["threshold"],
                "per_group": {
                    attribute_names[a]: {"far": e["far"][a], "frr": e["frr"][a]} for a in e["far"]
                },
                "bfar": e["bfar"],
                "bfrr": e["bfrr"],
                "roc": e["roc"],
            }
            out.append(item)
        return {
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "levels": out,
            "warnings": list(self.warnings),
        }


def fairness_report(ds: EmbeddingDataset, alphas: Sequence[float]) -> FairnessReport:
    """ROC, BFAR and BFRR at each FAR level, from real image-pair scores of ``ds``.

    Groups whose pairs are missing (fewer than two images, or a single identity)
    are left out of the bias ratios.  A zero group rate makes that ratio
    undefined; it is reported as ``None`` with a warning.
    """
    gen, imp = enumerate_pair_scores(ds)
    if len(gen) == 0 or len(imp) == 0:
        raise ValueError("evaluation needs at least one genuine and one impostor pair")
    g_curve, i_curve = StepCurve.frr(gen), StepCurve.far(imp)
    gi = build_group_index(ds)
    group_far, group_frr = {}, {}
    notes = []
    for a in range(ds.num_attributes):
        if gi.images[a].size < 2:
            notes.append(f"group {ds.attribute_names[a]} has fewer than two images; skipped")
            continue
        ga, ia = enumerate_pair_scores(ds, a)
        if len(ga) and len(ia):
            group_frr[a] = StepCurve.frr(ga)
            group_far[a] = StepCurve.far(ia)
        else:
            notes.append(f"group {ds.attribute_names[a]} lacks genuine or impostor pairs; skipped")
    entries = []
    for alpha in alphas:
        if alpha < 1.0 / len(imp):
            msg = (
                f"alpha={alpha:g} is below the resolution 1/|I| = {1.0 / len(imp):.3g} "
                f"of {len(imp)} impostor pairs"
            )
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            notes.append(msg)
        t = far_inverse(i_curve, alpha)
        far = {a: float(c(t)) for a, c in group_far.items()}
        frr = {a: float(c(t)) for a, c in group_frr.items()}
        entry = {"alpha": alpha, "threshold": t, "far": far, "frr": frr,
                 "roc": float(g_curve(t))}
        for key, vals, what in (("bfar", far, "FAR"), ("bfrr", frr, "FRR")):
            try:
                entry[key] = _bias_ratio(vals, what, alpha)
            except UndefinedMetricError as exc:
                entry[key] = None
                notes.append(str(exc))
        entries.append(entry)
    return FairnessReport(entries, notes, group_far, group_frr, len(imp), len(gen))

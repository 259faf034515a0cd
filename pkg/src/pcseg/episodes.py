"""Class splits, N-way K-shot episode construction, and mIoU.

A class split divides the label universe into disjoint train/test halves
by position in the sorted class list. Episode generation draws target
classes, support shots, and one query scene from a pool of clouds, caps
every cloud to a point budget, and builds binary masks plus the query
ground truth (target class n -> label n, everything else -> 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud
from .sampling import cap_points


class PoolExhaustedError(RuntimeError):
    """Raised when the pool cannot supply enough eligible clouds for a class."""


@dataclass(frozen=True)
class ClassSplit:
    """Disjoint train/test class id sets."""

    train_classes: tuple[int, ...]
    test_classes: tuple[int, ...]

    def __post_init__(self):
        if not self.train_classes or not self.test_classes:
            raise ValueError("both split halves must be nonempty")
        if set(self.train_classes) & set(self.test_classes):
            raise ValueError("train and test classes must be disjoint")

    def classes_for(self, phase: str) -> tuple[int, ...]:
        if phase == "train":
            return self.train_classes
        if phase == "test":
            return self.test_classes
        raise ValueError(f"phase must be 'train' or 'test', got {phase!r}")


def make_split(all_classes, fold: int) -> ClassSplit:
    """Split sorted classes by position: fold 0 tests even positions, fold 1 odd."""
    classes = sorted(set(int(c) for c in all_classes))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes to split, got {len(classes)}")
    if fold not in (0, 1):
        raise ValueError(f"fold must be 0 or 1, got {fold}")
    test = tuple(classes[fold::2])
    train = tuple(c for c in classes if c not in test)
    return ClassSplit(train_classes=train, test_classes=test)


@dataclass
class Episode:
    """One N-way K-shot task.

    `support[n][k]` is the (cloud, mask) pair for shot k of way n;
    `query_gt` holds 0 for background and n for the n-th target class.
    `support_indices` / `query_index` record which pool entries were used.
    """

    support: list[list[tuple[PointCloud, np.ndarray]]]
    query: PointCloud
    query_gt: np.ndarray
    target_classes: tuple[int, ...]
    support_indices: list[list[int]] = field(default_factory=list)
    query_index: int = -1

    @property
    def n_way(self) -> int:
        return len(self.target_classes)


@dataclass(frozen=True)
class EpisodeDescriptor:
    """Manifest entry: everything needed to regenerate one episode."""

    seed: int
    target_classes: tuple[int, ...]
    support_sources: tuple[str, ...]
    query_source: str


def _eligible(capped: list[PointCloud], class_id: int, min_fg_points: int) -> list[int]:
    return [i for i, c in enumerate(capped) if int((c.labels == class_id).sum()) >= min_fg_points]


def generate_episode(
    pool,
    split: ClassSplit,
    phase: str,
    n_way: int,
    k_shot: int,
    min_fg_points: int,
    m_cap: int,
    rng_seed: int,
) -> Episode:
    """Build one episode from `pool`, deterministically from `rng_seed`.

    Every pool entry is first capped to `m_cap` points; eligibility
    (at least `min_fg_points` points of a class) is judged on the capped
    clouds so the episode masks are guaranteed to satisfy it. Support and
    query entries are distinct within the episode.
    """
    pool = list(pool)
    if n_way < 1 or k_shot < 1:
        raise ValueError("n_way and k_shot must be >= 1")
    rng = np.random.default_rng(rng_seed)
    cap_seeds = rng.integers(0, 2**63 - 1, size=len(pool))
    capped = [cap_points(c, m_cap, int(s)) for c, s in zip(pool, cap_seeds)]

    classes = split.classes_for(phase)
    if n_way > len(classes):
        raise ValueError(f"n_way {n_way} exceeds the {len(classes)} classes of phase {phase!r}")
    targets = tuple(int(c) for c in rng.choice(sorted(classes), size=n_way, replace=False))

    used: set[int] = set()
    support: list[list[tuple[PointCloud, np.ndarray]]] = []
    support_indices: list[list[int]] = []
    for class_id in targets:
        avail = [i for i in _eligible(capped, class_id, min_fg_points) if i not in used]
        if len(avail) < k_shot:
            raise PoolExhaustedError(
                f"class {class_id}: need {k_shot} support clouds with >= {min_fg_points} "
                f"foreground points, pool offers {len(avail)}"
            )
        picked = [int(i) for i in rng.choice(avail, size=k_shot, replace=False)]
        used.update(picked)
        support.append([(capped[i], capped[i].labels == class_id) for i in picked])
        support_indices.append(picked)

    query_avail = sorted(
        {i for c in targets for i in _eligible(capped, c, min_fg_points)} - used
    )
    if not query_avail:
        raise PoolExhaustedError(
            f"classes {targets}: no unused cloud with >= {min_fg_points} foreground points left for the query"
        )
    query_index = int(rng.choice(query_avail))
    query = capped[query_index]

    query_gt = np.zeros(len(query), dtype=np.int64)
    for n, class_id in enumerate(targets, start=1):
        query_gt[query.labels == class_id] = n

    return Episode(
        support=support,
        query=query,
        query_gt=query_gt,
        target_classes=targets,
        support_indices=support_indices,
        query_index=query_index,
    )


def miou(pred, gt, n_way: int) -> tuple[np.ndarray, float]:
    """Per-foreground-class IoU (TP / (TP + FP + FN)) and their mean.

    Classes absent from both pred and gt get NaN and are excluded from
    the mean; the mean itself is NaN only if every class is excluded.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    ious = np.full(n_way, np.nan)
    for c in range(1, n_way + 1):
        tp = int(((pred == c) & (gt == c)).sum())
        fp = int(((pred == c) & (gt != c)).sum())
        fn = int(((pred != c) & (gt == c)).sum())
        if tp + fp + fn > 0:
            ious[c - 1] = tp / (tp + fp + fn)
    present = ious[~np.isnan(ious)]
    mean = float(present.mean()) if present.size else math.nan
    return ious, mean


def confusion_counts(pred, gt, class_of_way) -> dict[int, tuple[int, int, int]]:
    """(TP, FP, FN) per target class id, for associative pooling across episodes."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    out = {}
    for n, class_id in enumerate(class_of_way, start=1):
        tp = int(((pred == n) & (gt == n)).sum())
        fp = int(((pred == n) & (gt != n)).sum())
        fn = int(((pred != n) & (gt == n)).sum())
        out[int(class_id)] = (tp, fp, fn)
    return out

"""Mixed-batch construction for ERM, Mixup, Mixup* and SelectMix, plus the composite loss.

Every strategy produces a :class:`MixedBatch`; the training target of row i
is ``lam_i * e(label_a_i) + (1 - lam_i) * e(label_b_i)``. Unmixed rows carry
``lam = 1`` and identical labels, which makes them exactly plain ERM rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crossval import ClassIndex, MismatchSet, OofPredictions
from .datasets import Dataset
from .errors import ShapeError, SpecError
from .netcore import soft_cross_entropy

STRATEGIES = ("erm", "mixup", "mixup_star", "selectmix")
POOLS = ("reliable_pred_class", "any_pred_class", "noisy_class")


@dataclass(frozen=True)
class MixStrategy:
    kind: str = "selectmix"
    alpha: float = 1.0
    partner_pool: str = "reliable_pred_class"

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise SpecError(f"unknown strategy {self.kind!r}")
        if not self.alpha > 0:
            raise SpecError(f"alpha must be positive, got {self.alpha}")
        if self.partner_pool not in POOLS:
            raise SpecError(f"unknown partner pool {self.partner_pool!r}")

    @property
    def needs_oof(self) -> bool:
        return self.kind in ("mixup_star", "selectmix")


@dataclass(frozen=True)
class MixedBatch:
    inputs: np.ndarray
    lam: np.ndarray
    label_a: np.ndarray
    label_b: np.ndarray
    mixed_flag: np.ndarray

    def __len__(self):
        return len(self.lam)

    def soft_targets(self, num_classes: int) -> np.ndarray:
        n = len(self)
        t = np.zeros((n, num_classes))
        rows = np.arange(n)
        t[rows, self.label_a] += self.lam
        t[rows, self.label_b] += 1.0 - self.lam
        return t


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise SpecError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def _pool_for(i, cls, pools):
    """First pool (in order) that still has a member other than ``i``."""
    for pool in pools:
        members = pool[cls]
        pos = int(np.searchsorted(members, i))
        contains = pos < len(members) and members[pos] == i
        if len(members) - contains > 0:
            return members, pos if contains else -1
    return None, -1


def draw_partners(indices, classes, cls_idx: ClassIndex, pool: str, rng: np.random.Generator) -> np.ndarray:
    """Vectorised partner draw; ``-1`` where no partner exists.

    ``classes[k]`` is the class whose pool serves ``indices[k]`` (the
    predicted class, or the noisy class for ``noisy_class``). The reliable
    pool falls back to the full class index when it has no other member.
    One uniform variate is consumed per requested index.
    """
    indices = np.asarray(indices, dtype=np.int64)
    u = rng.random(len(indices))
    if pool == "any_pred_class":
        pools = (cls_idx.full,)
    else:
        pools = (cls_idx.reliable, cls_idx.full)
    out = np.full(len(indices), -1, dtype=np.int64)
    for k, (i, c) in enumerate(zip(indices, classes)):
        members, skip = _pool_for(i, int(c), pools)
        if members is None:
            continue
        size = len(members) - (skip >= 0)
        pick = min(int(u[k] * size), size - 1)
        if 0 <= skip <= pick:
            pick += 1
        out[k] = members[pick]
    return out


def select_partner(i: int, cls_idx: ClassIndex, oof: OofPredictions, pool: str,
                   rng: np.random.Generator, noisy_label: int | None = None) -> int | None:
    """Partner for mismatched sample ``i``, or ``None`` when its pool is empty."""
    if pool == "noisy_class":
        if noisy_label is None:
            raise SpecError("noisy_class pool needs the sample's noisy label")
        cls = noisy_label
    else:
        cls = int(oof.pred_labels[i])
    j = draw_partners([i], [cls], cls_idx, pool, rng)[0]
    return None if j < 0 else int(j)


def _unmixed(x, labels):
    n = len(labels)
    return MixedBatch(x.copy(), np.ones(n), labels.copy(), labels.copy(), np.zeros(n, dtype=bool))


def _mixup(x, labels, alpha, rng):
    n = len(labels)
    perm = rng.permutation(n)
    lam = rng.beta(alpha, alpha, size=n)
    mixed = lam[:, None] * x + (1.0 - lam[:, None]) * x[perm]
    return MixedBatch(mixed, lam, labels.copy(), labels[perm], np.ones(n, dtype=bool))


def build_mixed_batch(
    batch,
    ds: Dataset,
    oof: OofPredictions | None,
    m: MismatchSet | None,
    cls_idx: ClassIndex | None,
    strat: MixStrategy,
    rng: np.random.Generator,
) -> MixedBatch:
    """Inputs and label endpoints for one minibatch under ``strat``.

    ``erm`` ignores ``oof``, ``m`` and ``cls_idx`` entirely. ``mixup`` pairs
    each row with a row of a seeded permutation of the same batch. ``mixup_star``
    does the same on the out-of-fold predicted labels. ``selectmix`` leaves
    rows outside the mismatch set untouched and mixes each mismatched row with
    a partner from its pool, target ``lam * noisy + (1 - lam) * pred``.
    """
    batch = np.asarray(batch, dtype=np.int64)
    x = ds.features[batch]
    noisy = ds.noisy_labels[batch]
    if strat.kind == "erm":
        return _unmixed(x, noisy)
    if strat.kind == "mixup":
        return _mixup(x, noisy, strat.alpha, rng)
    if oof is None:
        raise SpecError(f"strategy {strat.kind} needs out-of-fold predictions")
    pred = oof.pred_labels[batch]
    if strat.kind == "mixup_star":
        return _mixup(x, pred, strat.alpha, rng)

    if m is None or cls_idx is None:
        raise SpecError("selectmix needs the mismatch set and class index")
    out = _unmixed(x, noisy)
    rows = np.flatnonzero(m.mask[batch])
    if len(rows) == 0:
        return out
    classes = noisy[rows] if strat.partner_pool == "noisy_class" else pred[rows]
    partners = draw_partners(batch[rows], classes, cls_idx, strat.partner_pool, rng)
    have = partners >= 0
    rows, partners = rows[have], partners[have]
    if len(rows) == 0:
        return out
    lam = rng.beta(strat.alpha, strat.alpha, size=len(rows))
    out.inputs[rows] = lam[:, None] * x[rows] + (1.0 - lam[:, None]) * ds.features[partners]
    out.lam[rows] = lam
    out.label_b[rows] = pred[rows]
    out.mixed_flag[rows] = True
    return out


def composite_loss(p, mb: MixedBatch) -> float:
    """Batch mean of ``lam * CE(p, e_a) + (1 - lam) * CE(p, e_b)``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != len(mb):
        raise ShapeError(f"probabilities {p.shape} not aligned with a batch of {len(mb)}")
    c = p.shape[1]
    ce_a = soft_cross_entropy(p, np.eye(c)[mb.label_a])
    ce_b = soft_cross_entropy(p, np.eye(c)[mb.label_b])
    return float(np.mean(mb.lam * ce_a + (1.0 - mb.lam) * ce_b))

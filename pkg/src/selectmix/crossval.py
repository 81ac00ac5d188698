"""K-fold out-of-fold prediction, mismatch set and class-wise index."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .datasets import Dataset
from .errors import FoldError, FormatError, PlanError, ShapeError
from .netcore import NetworkSpec, SgdHyper, fit_hard_labels, forward

# Incremented once per fold model trained; lets callers verify a pipeline
# never entered cross-validation.
fold_trainings = 0


@dataclass(frozen=True)
class KFoldPlan:
    fold_of: np.ndarray
    k: int

    def __post_init__(self):
        sizes = np.bincount(self.fold_of, minlength=self.k)
        if len(sizes) != self.k or (sizes == 0).any():
            raise PlanError("every fold must be nonempty and indices must lie in 0..K-1")

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_of, minlength=self.k).tolist()


@dataclass(frozen=True)
class OofPredictions:
    probs: np.ndarray
    pred_labels: np.ndarray
    confidence: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> OofPredictions:
        probs = np.asarray(probs, dtype=np.float64)
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        pred = probs.argmax(axis=1)
        return cls(probs, pred, probs[np.arange(len(probs)), pred])

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self):
        return len(self.pred_labels)


@dataclass(frozen=True)
class MismatchSet:
    indices: np.ndarray
    n: int
    rho: float = field(init=False)

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "rho", len(idx) / self.n)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.indices] = True
        return m

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class ClassIndex:
    full: list[np.ndarray]
    reliable: list[np.ndarray]

    @property
    def num_classes(self) -> int:
        return len(self.full)


def make_folds(n: int, k: int, seed: int) -> KFoldPlan:
    """Seeded permutation cut into K contiguous chunks, larger chunks first."""
    if k < 2 or k > n:
        raise PlanError(f"need 2 <= K <= n, got K={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        fold_of[perm[start:start + size]] = f
        start += size
    return KFoldPlan(fold_of, k)


def _worker_count(k: int, workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("SELECTMIX_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(k, workers))


def _fit_fold(ds, spec, hyper, epochs, batch_size, plan, seed, fold):
    global fold_trainings
    fold_trainings += 1
    held_out = plan.fold_of == fold
    train_idx = np.flatnonzero(~held_out)
    state = fit_hard_labels(
        spec, ds.features[train_idx], ds.noisy_labels[train_idx], hyper, epochs, batch_size,
        init_rng=streams.stream(seed, streams.FOLD, fold, 0),
        shuffle_rng=lambda epoch: streams.stream(seed, streams.FOLD, fold, 1, epoch),
    )
    probs = forward(state, ds.features[held_out])
    if not np.isfinite(probs).all():
        raise FloatingPointError("non-finite predictions")
    return np.flatnonzero(held_out), probs


def oof_predict(
    ds: Dataset,
    spec: NetworkSpec,
    hyper: SgdHyper,
    epochs: int,
    batch_size: int,
    plan: KFoldPlan,
    seed: int,
    workers: int | None = None,
) -> OofPredictions:
    """Train one model per fold on the other folds' noisy labels and predict the held-out fold.

    Fold ``k`` draws its randomness from streams keyed by ``(seed, k)``, so the
    result does not depend on ``workers`` or scheduling order.
    """
    if len(plan.fold_of) != len(ds):
        raise ShapeError(f"plan covers {len(plan.fold_of)} samples, dataset has {len(ds)}")
    if spec.num_classes != ds.num_classes:
        raise ShapeError("network output width differs from the class count")
    probs = np.empty((len(ds), ds.num_classes))

    def run(fold):
        try:
            return _fit_fold(ds, spec, hyper, epochs, batch_size, plan, seed, fold)
        except Exception as exc:  # noqa: BLE001 - re-raised with the fold attached
            raise FoldError(fold, exc) from exc

    n_workers = _worker_count(plan.k, workers)
    if n_workers == 1:
        results = [run(f) for f in range(plan.k)]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(run, range(plan.k)))
    for idx, p in results:
        probs[idx] = p
    return OofPredictions.from_probs(probs)


def mismatch_set(ds: Dataset, oof: OofPredictions) -> MismatchSet:
    if len(oof) != len(ds):
        raise ShapeError(f"{len(oof)} predictions for {len(ds)} samples")
    return MismatchSet(np.flatnonzero(ds.noisy_labels != oof.pred_labels), len(ds))


def class_index(oof: OofPredictions, m: MismatchSet) -> ClassIndex:
    if m.n != len(oof):
        raise ShapeError("mismatch set and predictions are not aligned")
    mask = m.mask
    full, reliable = [], []
    for c in range(oof.num_classes):
        members = np.flatnonzero(oof.pred_labels == c)
        full.append(members)
        reliable.append(members[~mask[members]])
    return ClassIndex(full, reliable)


# ------------------------------------------------------------------ serialization

def write_oof_csv(oof: OofPredictions, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["index", "pred_label", "confidence"] + [f"prob_{c}" for c in range(oof.num_classes)])
        for i in range(len(oof)):
            w.writerow([i, int(oof.pred_labels[i]), repr(float(oof.confidence[i]))]
                       + [repr(float(v)) for v in oof.probs[i]])


def read_oof_csv(path) -> OofPredictions:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header = rows[0]
    c = len(header) - 3
    if header != ["index", "pred_label", "confidence"] + [f"prob_{k}" for k in range(c)]:
        raise FormatError("header", f"unexpected columns {header}")
    probs = np.array([[float(v) for v in r[3:]] for r in rows[1:]])
    oof = OofPredictions.from_probs(probs)
    stored = np.array([int(r[1]) for r in rows[1:]])
    if not np.array_equal(stored, oof.pred_labels):
        raise FormatError("pred_label", "stored labels disagree with the argmax of the stored probabilities")
    return oof


def write_mismatch(m: MismatchSet, path) -> None:
    with open(path, "w") as f:
        f.writelines(f"{i}\n" for i in m.indices)


def read_mismatch(path, n: int) -> MismatchSet:
    with open(path) as f:
        return MismatchSet(np.array([int(line) for line in f if line.strip()], dtype=np.int64), n)

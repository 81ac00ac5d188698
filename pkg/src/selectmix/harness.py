"""End-to-end experiments: data, noise, out-of-fold selection, mixed training, evaluation."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import crossval
from . import rng as streams
from .crossval import ClassIndex, MismatchSet, OofPredictions
from .datasets import Dataset, NoiseSpec, gaussian_spec, gen_gaussian, inject_noise, load_idx
from .errors import EvaluationError, SpecError, StageError
from .mixing import MixStrategy, build_mixed_batch
from .netcore import NetworkSpec, NetworkState, SgdHyper, forward, init_network, lr_at, train_step
from .theory import RiskReport, estimate_risks

RESULTS_HEADER = ("strategy", "noise_kind", "noise_rate", "alpha", "seed",
                  "best_acc", "last10_avg", "rho", "wall_time_s")
DEFAULT_DATA_DIR = Path(__file__).resolve().parents[2] / "data" / "mnist"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def default_milestones(epochs: int) -> tuple[int, ...]:
    """LR drops at 1/2 and 3/4 of the budget (100 and 150 of 200, 15 and 23 of 30)."""
    return tuple(sorted({math.floor(epochs * f + 0.5) for f in (0.5, 0.75)}))


def scale_milestones(milestones, from_epochs: int, to_epochs: int) -> tuple[int, ...]:
    scaled = sorted({math.floor(m * to_epochs / from_epochs + 0.5) for m in milestones})
    return tuple(m for m in scaled if m > 0)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    strategy: MixStrategy = field(default_factory=MixStrategy)
    net: NetworkSpec | None = None
    sgd: SgdHyper | None = None
    epochs: int = 30
    batch_size: int = 128
    kfold: int = 5
    train_subset: int | None = 10_000
    test_split: int = 2_000
    seed: int = 0
    oof_epochs: int | None = None
    hidden: tuple[int, ...] = (128,)
    synthetic: dict | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise SpecError("epochs must be at least 1")
        if self.batch_size < 1:
            raise SpecError("batch_size must be positive")
        if self.test_split < 1:
            raise SpecError("test_split must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def resolved_sgd(self) -> SgdHyper:
        return self.sgd if self.sgd is not None else SgdHyper(milestones=default_milestones(self.epochs))

    @property
    def resolved_oof_epochs(self) -> int:
        return self.oof_epochs if self.oof_epochs is not None else max(1, self.epochs // 2)

    def network_for(self, ds: Dataset) -> NetworkSpec:
        sgd = self.resolved_sgd
        if self.net is None:
            return NetworkSpec((ds.dim, *self.hidden, ds.num_classes), weight_decay=sgd.weight_decay)
        if self.net.layer_widths[0] != ds.dim or self.net.num_classes != ds.num_classes:
            raise SpecError(f"network widths {self.net.layer_widths} do not fit data "
                            f"with {ds.dim} features and {ds.num_classes} classes")
        return self.net

    def oof_sgd(self) -> SgdHyper:
        sgd = self.resolved_sgd
        return replace(sgd, milestones=scale_milestones(sgd.milestones, self.epochs, self.resolved_oof_epochs))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.noise.pair_map is not None:
            d["noise"]["pair_map"] = {str(k): v for k, v in self.noise.pair_map.items()}
        for key in ("hidden",):
            d[key] = list(d[key])
        if d["net"] is not None:
            d["net"]["layer_widths"] = list(d["net"]["layer_widths"])
        if d["sgd"] is not None:
            d["sgd"]["milestones"] = list(d["sgd"]["milestones"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if isinstance(kw.get("noise"), dict):
            kw["noise"] = NoiseSpec(**kw["noise"])
        if isinstance(kw.get("strategy"), dict):
            kw["strategy"] = MixStrategy(**kw["strategy"])
        if isinstance(kw.get("net"), dict):
            kw["net"] = NetworkSpec(**kw["net"])
        if isinstance(kw.get("sgd"), dict):
            kw["sgd"] = SgdHyper(**kw["sgd"])
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ExperimentReport:
    per_epoch_test_acc: list[float]
    best_acc: float
    last10_avg: float
    rho: float | None
    wall_time: float
    config: dict
    config_hash: str

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = asdict(self)
        if not include_wall_time:
            del d["wall_time"]
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), indent=2, sort_keys=True)

    def csv_row(self, seed_label=None) -> list[str]:
        strat = self.config["strategy"]
        noise = self.config["noise"]
        return [
            strat["kind"], noise["kind"], _fmt_g(noise["rate"]), _fmt_g(strat["alpha"]),
            str(self.config["seed"] if seed_label is None else seed_label),
            f"{self.best_acc:.6f}", f"{self.last10_avg:.6f}",
            "" if self.rho is None else f"{self.rho:.6f}", f"{self.wall_time:.3f}",
        ]


@dataclass(frozen=True)
class Selection:
    oof: OofPredictions
    mismatch: MismatchSet
    cls_idx: ClassIndex


def _fmt_g(x) -> str:
    return format(float(x), "g")


def _find(directory: Path, name: str) -> Path:
    for cand in (directory / name, directory / f"{name}.gz"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def data_dir(source: str) -> Path:
    if source == "mnist":
        return Path(os.environ.get("SELECTMIX_DATA", DEFAULT_DATA_DIR))
    return Path(source)


def load_clean_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Clean train and test sets for ``cfg.dataset``."""
    if cfg.dataset == "gaussian":
        opts = dict(cfg.synthetic or {})
        spec = gaussian_spec(**opts)
        train = gen_gaussian(spec, streams.derive_seed(cfg.seed, streams.DATA))
        per_class = max(1, cfg.test_split // spec.num_classes)
        test_spec = replace(spec, per_class_count=per_class)
        test = gen_gaussian(test_spec, streams.derive_seed(cfg.seed, streams.TEST_DATA))
    else:
        directory = data_dir(cfg.dataset)
        train = load_idx(*(_find(directory, f) for f in MNIST_FILES["train"]), limit=cfg.train_subset)
        test = load_idx(*(_find(directory, f) for f in MNIST_FILES["test"]), limit=cfg.test_split,
                        num_classes=train.num_classes)
    if cfg.train_subset is not None and len(train) > cfg.train_subset:
        train = train.subset(np.arange(cfg.train_subset))
    return train, test


def prepare_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Clean data with noise injected into the training split only."""
    with _stage("load"):
        train, test = load_clean_data(cfg)
    with _stage("inject_noise"):
        train = inject_noise(train, cfg.noise, streams.derive_seed(cfg.seed, streams.NOISE))
    return train, test


def compute_selection(cfg: ExperimentConfig, train: Dataset, workers: int | None = None) -> Selection:
    with _stage("make_folds"):
        plan = crossval.make_folds(len(train), cfg.kfold, streams.derive_seed(cfg.seed, streams.PLAN))
    with _stage("oof_predict"):
        oof = crossval.oof_predict(train, cfg.network_for(train), cfg.oof_sgd(), cfg.resolved_oof_epochs,
                                   cfg.batch_size, plan, cfg.seed, workers=workers)
    with _stage("select"):
        m = crossval.mismatch_set(train, oof)
        return Selection(oof, m, crossval.class_index(oof, m))


def evaluate(model: NetworkState, test: Dataset) -> float:
    """Accuracy of the argmax prediction against clean labels."""
    if len(test) == 0:
        raise EvaluationError("empty test set")
    if test.clean_labels is None:
        raise EvaluationError("test set has no clean labels")
    pred = forward(model, test.features).argmax(axis=1)
    return float(np.mean(pred == test.clean_labels))


def summarize(series) -> tuple[float, float]:
    """(best, mean of the final min(10, len) entries)."""
    s = [float(v) for v in series]
    if not s:
        raise EvaluationError("empty accuracy series")
    tail = s[-10:]
    return max(s), sum(tail) / len(tail)


def train_model(
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset | None,
    selection: Selection | None = None,
    on_epoch: Callable[[int, NetworkState], None] | None = None,
) -> tuple[NetworkState, list[float]]:
    """The main epoch loop. Returns the final state and per-epoch test accuracy."""
    strat = cfg.strategy
    if strat.needs_oof and selection is None:
        raise SpecError(f"strategy {strat.kind} needs a Selection")
    if cfg.batch_size > len(train):
        raise SpecError(f"batch_size {cfg.batch_size} exceeds the {len(train)} training samples")
    oof = m = ci = None
    if strat.kind != "erm" and selection is not None:
        oof, m, ci = selection.oof, selection.mismatch, selection.cls_idx
    sgd = cfg.resolved_sgd
    net = cfg.network_for(train)
    state = init_network(net, streams.stream(cfg.seed, streams.INIT))
    n, c = len(train), train.num_classes
    accs = []
    for epoch in range(cfg.epochs):
        lr = lr_at(sgd, epoch)
        order = streams.stream(cfg.seed, streams.SHUFFLE, epoch).permutation(n)
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            mix_rng = streams.stream(cfg.seed, streams.MIX, epoch, step)
            mb = build_mixed_batch(idx, train, oof, m, ci, strat, mix_rng)
            state = train_step(state, mb.inputs, mb.soft_targets(c), sgd, lr)
        if test is not None:
            accs.append(evaluate(state, test))
        if on_epoch is not None:
            on_epoch(epoch, state)
    return state, accs


class _stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_experiment(
    cfg: ExperimentConfig,
    data: tuple[Dataset, Dataset] | None = None,
    selection: Selection | None = None,
    on_epoch: Callable[[int, NetworkState], None] | None = None,
    return_model: bool = False,
):
    """Noise, selection (for mixup_star and selectmix), training and evaluation.

    ``data`` and ``selection`` may be passed in to reuse work across runs
    that share them (e.g. an alpha sweep at a fixed seed).
    """
    t0 = time.perf_counter()
    train, test = data if data is not None else prepare_data(cfg)
    if cfg.strategy.needs_oof and selection is None:
        selection = compute_selection(cfg, train)
    with _stage("train"):
        state, accs = train_model(cfg, train, test, selection, on_epoch)
    best, last10 = summarize(accs)
    rho = selection.mismatch.rho if (selection is not None and cfg.strategy.needs_oof) else None
    report = ExperimentReport(accs, best, last10, rho, time.perf_counter() - t0, cfg.to_dict(), cfg.digest())
    return (report, state) if return_model else report


def theory_check(cfg: ExperimentConfig, num_draws: int = 100_000) -> RiskReport:
    """Train under ``cfg`` and compare the Mixup and SelectMix risks of the final model."""
    train, test = prepare_data(cfg)
    selection = compute_selection(cfg, train)
    with _stage("train"):
        state, _ = train_model(cfg, train, None, selection)
    with _stage("estimate_risks"):
        return estimate_risks(state, train, selection.oof, selection.mismatch, selection.cls_idx,
                              cfg.strategy.alpha, num_draws, cfg.seed)


# ------------------------------------------------------------------------ sweeps

@dataclass
class SweepResult:
    cells: list[tuple[float, int, ExperimentReport]]
    errors: list[tuple[float, int, str]]

    def mean_last10(self, alpha: float) -> float:
        vals = [r.last10_avg for a, _, r in self.cells if a == alpha]
        return float(np.mean(vals))

    def to_csv(self) -> str:
        return results_csv(self.cells)


def results_csv(cells, aggregates: bool = True) -> str:
    """One row per (alpha, seed) cell, then ``mean`` and ``std`` rows per alpha."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    by_alpha: dict[float, list[ExperimentReport]] = {}
    for alpha, _, report in cells:
        w.writerow(report.csv_row())
        by_alpha.setdefault(alpha, []).append(report)
    for alpha, reports in (by_alpha.items() if aggregates else ()):
        first = reports[0]
        for label, agg in (("mean", np.mean), ("std", np.std)):
            rhos = [r.rho for r in reports if r.rho is not None]
            summary = ExperimentReport(
                [], float(agg([r.best_acc for r in reports])), float(agg([r.last10_avg for r in reports])),
                float(agg(rhos)) if rhos else None, float(agg([r.wall_time for r in reports])),
                first.config, first.config_hash)
            w.writerow(summary.csv_row(seed_label=label))
    return buf.getvalue()


def sweep_alpha(base: ExperimentConfig, alphas, seeds, workers: int | None = None) -> SweepResult:
    """Every (alpha, seed) cell of ``base``.

    Data and out-of-fold selection depend on the seed but not on alpha, so
    they are computed once per seed. A failing cell is recorded in
    ``errors`` and the remaining cells still run.
    """
    alphas, seeds = list(alphas), list(seeds)
    if not alphas or not seeds:
        raise SpecError("alphas and seeds must be nonempty")
    cells, errors = [], []
    shared: dict[int, tuple] = {}
    for seed in seeds:
        for alpha in alphas:
            cfg = replace(base, seed=seed, strategy=replace(base.strategy, alpha=alpha))
            try:
                if seed not in shared:
                    data = prepare_data(cfg)
                    sel = compute_selection(cfg, data[0], workers) if cfg.strategy.needs_oof else None
                    shared[seed] = (data, sel)
                data, sel = shared[seed]
                cells.append((alpha, seed, run_experiment(cfg, data=data, selection=sel)))
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                errors.append((alpha, seed, f"{type(exc).__name__}: {exc}"))
    return SweepResult(cells, errors)

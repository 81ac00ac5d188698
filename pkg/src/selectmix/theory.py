"""Monte-Carlo checks of the Mixup / SelectMix risk comparison.

Only directly measurable quantities are estimated: the two mixing risks,
the mismatch rate, the reliability margin and the bound built from them.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as streams
from .crossval import ClassIndex, MismatchSet, OofPredictions
from .datasets import Dataset
from .errors import EstimationError, SpecError
from .mixing import draw_partners
from .netcore import PROB_FLOOR, NetworkState, forward, soft_cross_entropy

SE_TOLERANCE = 3.0
MIN_DRAWS = 10_000
REPORT_FIELDS = ("alpha", "kappa_idn", "kappa_cdn", "rho", "delta", "r_mix", "r_mix_se",
                 "r_sel", "r_sel_se", "gap_bound", "holds")


@dataclass(frozen=True)
class KappaPair:
    kappa_idn: float
    kappa_cdn: float
    alpha: float


@dataclass(frozen=True)
class RiskReport:
    alpha: float
    kappa_idn: float
    kappa_cdn: float
    rho: float
    delta: float
    r_mix: float
    r_mix_se: float
    r_sel: float
    r_sel_se: float
    gap_bound: float
    holds: bool

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps({k: d[k] for k in REPORT_FIELDS}, indent=2)


def kappa(alpha: float) -> KappaPair:
    """Beta(a, a) moments: E[l^2 + (1-l)^2] = (a+1)/(2a+1), 2E[l(1-l)] = a/(2a+1)."""
    if not alpha > 0:
        raise SpecError(f"alpha must be positive, got {alpha}")
    cdn = alpha / (2.0 * alpha + 1.0)
    return KappaPair(kappa_idn=1.0 - cdn, kappa_cdn=cdn, alpha=alpha)


def kappa_monte_carlo(alpha: float, draws: int, seed: int) -> tuple[KappaPair, float]:
    """Sample estimate of both coefficients and the standard error of ``kappa_cdn``."""
    lam = np.random.default_rng(seed).beta(alpha, alpha, size=draws)
    cdn_terms = 2.0 * lam * (1.0 - lam)
    idn = float(np.mean(lam ** 2 + (1.0 - lam) ** 2))
    se = float(cdn_terms.std(ddof=1) / np.sqrt(draws))
    return KappaPair(kappa_idn=idn, kappa_cdn=float(cdn_terms.mean()), alpha=alpha), se


def linearity_residual(p, y1, y2, alpha: float) -> float:
    """|CE(p, a y1 + (1-a) y2) - a CE(p, y1) - (1-a) CE(p, y2)|."""
    p, y1, y2 = (np.asarray(v, dtype=np.float64) for v in (p, y1, y2))
    mixed = soft_cross_entropy(p, alpha * y1 + (1.0 - alpha) * y2)
    split = alpha * soft_cross_entropy(p, y1) + (1.0 - alpha) * soft_cross_entropy(p, y2)
    return abs(mixed - split)


def delta_from_probs(probs: np.ndarray, clean_labels: np.ndarray, reliable: np.ndarray) -> float:
    if not reliable.any():
        raise EstimationError("the reliable set is empty")
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    # a common shift cancels in the difference; it makes a constant predictor give exactly 0
    logp = logp - logp[0, 0]
    clean_ll = logp[np.arange(len(logp)), clean_labels][reliable].mean()
    uniform_ll = logp.mean(axis=1).mean()
    return float(clean_ll - uniform_ll)


def estimate_delta(model: NetworkState, ds: Dataset, m: MismatchSet) -> float:
    """Reliable-set clean log-likelihood minus the all-sample uniform-average log-likelihood."""
    if ds.clean_labels is None:
        raise EstimationError("the reliability margin is defined against clean labels")
    return delta_from_probs(forward(model, ds.features), ds.clean_labels, ~m.mask)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    # averaging offsets from the first draw keeps a constant sample exact
    ref = values[0]
    return float(ref + np.mean(values - ref)), float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _pair_loss(lam, logp_a, logp_b):
    """-(lam * logp_a + (1 - lam) * logp_b), written so equal endpoints give exactly -logp_b."""
    return -(logp_b + lam * (logp_a - logp_b))


def _batched_forward(model, x, chunk=8192):
    return np.concatenate([forward(model, x[s:s + chunk]) for s in range(0, len(x), chunk)])


def mixup_risk_samples(model, ds, alpha, num_draws, rng) -> np.ndarray:
    """Per-draw losses of random-pair Mixup with noisy labels on both sides."""
    n = len(ds)
    i = rng.integers(0, n, size=num_draws)
    j = rng.integers(0, n, size=num_draws)
    lam = rng.beta(alpha, alpha, size=num_draws)
    x = lam[:, None] * ds.features[i] + (1.0 - lam[:, None]) * ds.features[j]
    p = _batched_forward(model, x)
    logp = np.log(np.maximum(p, PROB_FLOOR))
    rows = np.arange(num_draws)
    return _pair_loss(lam, logp[rows, ds.noisy_labels[i]], logp[rows, ds.noisy_labels[j]])


def selectmix_risk_samples(model, ds, oof, m, cls_idx, alpha, num_draws, rng) -> np.ndarray:
    """Per-draw losses of SelectMix: reliable samples unmixed, mismatches mixed with a partner."""
    n = len(ds)
    i = rng.integers(0, n, size=num_draws)
    lam = np.ones(num_draws)
    partner = i.copy()
    mism = np.flatnonzero(m.mask[i])
    if len(mism):
        drawn = draw_partners(i[mism], oof.pred_labels[i[mism]], cls_idx, "reliable_pred_class", rng)
        ok = drawn >= 0
        mism, drawn = mism[ok], drawn[ok]
        partner[mism] = drawn
        lam[mism] = rng.beta(alpha, alpha, size=len(mism))
    label_b = ds.noisy_labels[i].copy()
    label_b[mism] = oof.pred_labels[i[mism]]
    x = lam[:, None] * ds.features[i] + (1.0 - lam[:, None]) * ds.features[partner]
    p = _batched_forward(model, x)
    logp = np.log(np.maximum(p, PROB_FLOOR))
    rows = np.arange(num_draws)
    return _pair_loss(lam, logp[rows, ds.noisy_labels[i]], logp[rows, label_b])


def estimate_risks(
    model: NetworkState,
    ds: Dataset,
    oof: OofPredictions,
    m: MismatchSet,
    cls_idx: ClassIndex,
    alpha: float,
    num_draws: int,
    seed: int,
) -> RiskReport:
    """Monte-Carlo estimates of both risks and the verdict on
    ``r_sel <= r_mix - kappa_cdn * delta * rho`` with a one-sided slack of
    three combined standard errors."""
    if ds.clean_labels is None:
        raise EstimationError("risk estimation needs clean labels")
    if num_draws < MIN_DRAWS:
        raise EstimationError(f"need at least {MIN_DRAWS} draws, got {num_draws}")
    k = kappa(alpha)
    r_mix, se_mix = _mean_se(mixup_risk_samples(
        model, ds, alpha, num_draws, streams.stream(seed, streams.RISK_MIX)))
    r_sel, se_sel = _mean_se(selectmix_risk_samples(
        model, ds, oof, m, cls_idx, alpha, num_draws, streams.stream(seed, streams.RISK_SEL)))
    delta = estimate_delta(model, ds, m)
    gap = k.kappa_cdn * delta * m.rho
    slack = SE_TOLERANCE * float(np.hypot(se_mix, se_sel))
    return RiskReport(
        alpha=alpha, kappa_idn=k.kappa_idn, kappa_cdn=k.kappa_cdn, rho=m.rho, delta=delta,
        r_mix=r_mix, r_mix_se=se_mix, r_sel=r_sel, r_sel_se=se_sel, gap_bound=gap,
        holds=bool(r_sel <= r_mix - gap + slack),
    )

"""Split a shifted dataset into in-support and out-of-support parts.

A domain classifier scores how "shifted" each input looks.  After temperature
scaling, its posterior gives the density ratio

    p_ref(x) / p_shift(x) = p(ref | x) / p(shift | x) * p(shift) / p(ref)

and shifted examples with a ratio below a threshold (0.2 by default) are
called out-of-support.  Scores are cross-fitted so no example is scored by a
classifier that saw it.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .logreg import GDConfig, LabeledDataset, gradient_descent
from .numeric_core import clopper_pearson
from .shiftgen import derive_seed

__all__ = [
    "DomainClassifier",
    "TemperatureScale",
    "RatioEstimate",
    "SplitResult",
    "CalibrationBin",
    "quadratic_features",
    "train_domain_classifier",
    "fit_temperature",
    "estimate_ratios",
    "split_shifted",
    "threshold_sweep",
    "calibration_curve",
    "split_to_csv",
    "curve_to_csv",
]

ALPHA_FLOOR = 1e-6
ALPHA_CAP = 1e6

DOMAIN_CFG = GDConfig(grad_tol=1e-8, max_steps=200_000)


def quadratic_features(x) -> np.ndarray:
    """Raw coordinates followed by their squares."""
    x = np.asarray(x, dtype=float)
    return np.hstack([x, x * x])


@dataclass
class DomainClassifier:
    """Linear logistic scorer over ``[phi(x), 1]``; positive logit means "shifted"."""

    weights: np.ndarray
    feature_map: Optional[Callable] = None
    fold: int = -1
    steps: int = 0
    separable: bool = False

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = x if self.feature_map is None else self.feature_map(x)
        return np.hstack([z, np.ones((z.shape[0], 1))])

    def logits(self, x) -> np.ndarray:
        return self.design(x) @ self.weights


@dataclass(frozen=True)
class TemperatureScale:
    alpha: float
    floored: bool = False  # optimum at or below ALPHA_FLOOR: scores carry no usable signal
    capped: bool = False  # calibration data perfectly separated by the scores

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("temperature alpha must be positive")


@dataclass
class RatioEstimate:
    ratio: np.ndarray
    p_shift_post: np.ndarray
    p_ref_post: np.ndarray
    prior_ref: float
    prior_shift: float


@dataclass
class SplitResult:
    in_support: np.ndarray
    out_of_support: np.ndarray
    threshold: float
    ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fold: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    separable_folds: tuple = ()
    alphas: tuple = ()
    calibration_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    calibration_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _pool(reference: LabeledDataset, shifted: LabeledDataset):
    if reference.dim != shifted.dim:
        raise ValueError(f"reference has dimension {reference.dim}, shifted has {shifted.dim}")
    if reference.n == 0 or shifted.n == 0:
        raise ValueError("both reference and shifted data must be non-empty")
    x = np.vstack([reference.features, shifted.features])
    y = np.concatenate([-np.ones(reference.n, dtype=int), np.ones(shifted.n, dtype=int)])
    return x, y


def train_domain_classifier(reference: LabeledDataset, shifted: LabeledDataset, cfg: GDConfig = DOMAIN_CFG,
                            feature_map: Optional[Callable] = None, fold: int = -1) -> DomainClassifier:
    """Logistic regression (with intercept) of shifted (+1) versus reference (-1).

    Separable pools have no finite optimum; training then stops at the first
    separating iterate and ``separable`` is set.
    """
    x, y = _pool(reference, shifted)
    clf = DomainClassifier(np.zeros(0), feature_map, fold)
    z = clf.design(x)
    tr = gradient_descent(np.zeros(z.shape[1]), LabeledDataset(z, y), cfg)
    clf.weights = tr.weights
    clf.steps = tr.steps
    if tr.reason == "diverged":
        clf.separable = True
        warnings.warn("reference and shifted pools are linearly separable; domain classifier stopped early",
                      RuntimeWarning, stacklevel=2)
    return clf


def _temp_derivs(alpha, s):
    # s = logit * label; loss(alpha) = sum log(1 + exp(-alpha s))
    sig = expit(-alpha * s)
    return float(-(s * sig).sum()), float((s * s * sig * (1.0 - sig)).sum())


def fit_temperature(logits, labels, tol: float = 1e-10, max_iter: int = 200) -> TemperatureScale:
    """Positive alpha minimizing sum log(1 + exp(-alpha * logit * label)).

    Safeguarded Newton inside a bracket that always contains the minimizer.
    Uninformative scores give ``alpha = 1e-6`` (``floored``); scores that
    separate the labels give ``alpha = 1e6`` (``capped``).  Both warn.
    """
    f = np.asarray(logits, dtype=float)
    y = np.asarray(labels)
    if f.shape != y.shape or f.ndim != 1:
        raise ValueError("logits and labels must be 1-D with equal length")
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 or +1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("temperature fitting needs both labels present")
    s = f * y

    g_lo, _ = _temp_derivs(ALPHA_FLOOR, s)
    if g_lo >= 0.0:
        warnings.warn("scores carry no signal about the labels; temperature floored at 1e-6",
                      RuntimeWarning, stacklevel=2)
        return TemperatureScale(ALPHA_FLOOR, floored=True)
    # every margin non-negative: loss falls all the way to infinity, but exp underflow
    # would zero the derivative long before the cap, so catch this case up front
    if np.all(s >= 0.0):
        warnings.warn("scores separate the calibration labels; temperature capped at 1e6",
                      RuntimeWarning, stacklevel=2)
        return TemperatureScale(ALPHA_CAP, capped=True)
    lo, hi = ALPHA_FLOOR, 1.0
    while _temp_derivs(hi, s)[0] < 0.0:
        lo = hi
        hi *= 2.0
        if hi > ALPHA_CAP:
            warnings.warn("scores separate the calibration labels; temperature capped at 1e6",
                          RuntimeWarning, stacklevel=2)
            return TemperatureScale(ALPHA_CAP, capped=True)

    a = min(max(1.0, lo), hi)
    for _ in range(max_iter):
        g, h = _temp_derivs(a, s)
        if abs(g) <= tol:
            break
        if g < 0:
            lo = a
        else:
            hi = a
        step = a - g / h if h > 0 else math.nan
        a = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
    return TemperatureScale(float(a))


def estimate_ratios(classifier: DomainClassifier, scale: TemperatureScale, shifted: LabeledDataset,
                    priors) -> RatioEstimate:
    """Density ratios p_ref/p_shift for ``shifted`` from calibrated posteriors.

    ``priors = (p_ref, p_shift)``: the reference and shifted shares of the pool
    the classifier was trained on.
    """
    prior_ref, prior_shift = (float(p) for p in priors)
    if prior_ref <= 0 or prior_shift <= 0:
        raise ValueError("priors must be positive")
    z = scale.alpha * classifier.logits(shifted.features)
    q_shift = expit(z)
    q_ref = expit(-z)
    with np.errstate(divide="ignore"):
        ratio = (q_ref / q_shift) * (prior_shift / prior_ref)
    return RatioEstimate(ratio, q_shift, q_ref, prior_ref, prior_shift)


def _fold_job(args):
    f, reference, shifted, folds_of, calib_frac, cfg, feature_map, seed = args
    held = np.flatnonzero(folds_of == f)
    train_sh = np.flatnonzero(folds_of != f)
    assert not np.intersect1d(held, train_sh).size  # cross-fit hygiene
    rng = np.random.default_rng(derive_seed(seed, 1, f))
    cal_ref = rng.random(reference.n) < calib_frac
    cal_sh = rng.random(train_sh.size) < calib_frac
    ref_fit, sh_fit = reference.subset(np.flatnonzero(~cal_ref)), shifted.subset(train_sh[~cal_sh])
    ref_cal, sh_cal = reference.subset(np.flatnonzero(cal_ref)), shifted.subset(train_sh[cal_sh])
    if min(ref_fit.n, sh_fit.n, ref_cal.n, sh_cal.n) == 0:
        raise ValueError(f"fold {f}: too few examples for a training/calibration split")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        clf = train_domain_classifier(ref_fit, sh_fit, cfg, feature_map, fold=f)
        xc, yc = _pool(ref_cal, sh_cal)
        scale = fit_temperature(clf.logits(xc), yc)
    priors = (ref_fit.n / (ref_fit.n + sh_fit.n), sh_fit.n / (ref_fit.n + sh_fit.n))
    est = estimate_ratios(clf, scale, shifted.subset(held), priors)
    cal_p = expit(scale.alpha * clf.logits(xc))
    return f, held, est.ratio, clf.separable, scale.alpha, cal_p, yc


def split_shifted(shifted: LabeledDataset, reference: LabeledDataset, folds: int = 10, threshold: float = 0.2,
                  cfg: GDConfig = DOMAIN_CFG, seed: int = 0, calib_frac: float = 0.1,
                  feature_map: Optional[Callable] = None, map_fn: Callable = map) -> SplitResult:
    """Cross-fitted density-ratio split of ``shifted``.

    Shifted examples are dealt into ``folds`` folds at random; each fold is
    scored by a classifier trained on the other folds plus all reference data,
    with ``calib_frac`` of that training pool held out to fit the temperature.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if shifted.n < folds:
        raise ValueError(f"{folds} folds need at least {folds} shifted examples, got {shifted.n}")
    if not 0.0 < calib_frac < 1.0:
        raise ValueError("calib_frac must lie in (0, 1)")
    rng = np.random.default_rng(derive_seed(seed, 0))
    folds_of = np.empty(shifted.n, dtype=int)
    folds_of[rng.permutation(shifted.n)] = np.arange(shifted.n) % folds
    jobs = [(f, reference, shifted, folds_of, calib_frac, cfg, feature_map, seed) for f in range(folds)]
    ratio = np.empty(shifted.n)
    sep, alphas, cal_p, cal_y = [], [], [], []
    for f, held, r, separable, alpha, p, yc in map_fn(_fold_job, jobs):
        ratio[held] = r
        if separable:
            sep.append(f)
        alphas.append(alpha)
        cal_p.append(p)
        cal_y.append(yc)
    if sep:
        warnings.warn(f"domain classifier separated the pools in folds {sep}", RuntimeWarning, stacklevel=2)
    out = ratio < threshold
    return SplitResult(np.flatnonzero(~out), np.flatnonzero(out), float(threshold), ratio, folds_of,
                       tuple(sep), tuple(alphas), np.concatenate(cal_p), np.concatenate(cal_y))


def threshold_sweep(ratio, thresholds) -> list:
    """``(threshold, out-of-support count)`` for each threshold."""
    r = np.asarray(ratio, dtype=float)
    return [(float(t), int(np.sum(r < t))) for t in thresholds]


@dataclass(frozen=True)
class CalibrationBin:
    bin: int
    mean_pred: float
    rate: float
    lo: float
    hi: float
    count: int


def calibration_curve(probabilities, labels, bins: int = 100, level: float = 0.95) -> list:
    """Reliability curve over quantile bins with Clopper-Pearson intervals.

    Bins hold equal numbers of predictions, except that equal predictions are
    never split: each value goes to the bin of its first occurrence in sorted
    order, so bins whose edges coincide merge.
    """
    if bins < 2:
        raise ValueError("need at least two bins")
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities and labels must be non-empty 1-D arrays of equal length")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    pos = y == 1
    sp = np.sort(p, kind="stable")
    rank = np.searchsorted(sp, p, side="left")
    raw = rank * bins // p.size
    _, b = np.unique(raw, return_inverse=True)
    out = []
    for j in range(b.max() + 1):
        m = b == j
        k, n = int(pos[m].sum()), int(m.sum())
        lo, hi = clopper_pearson(k, n, level)
        out.append(CalibrationBin(j, float(p[m].mean()), k / n, lo, hi, n))
    return out


def split_to_csv(result: SplitResult, path=None) -> str:
    """``index,ratio,split`` rows, split being ``in`` or ``out``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "ratio", "split"])
    out = set(int(i) for i in result.out_of_support)
    for i, r in enumerate(result.ratio):
        w.writerow([i, format(float(r), ".17g"), "out" if i in out else "in"])
    return _emit(buf.getvalue(), path)


def curve_to_csv(curve, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "mean_pred", "rate", "lo", "hi"])
    for c in curve:
        w.writerow([c.bin] + [format(v, ".17g") for v in (c.mean_pred, c.rate, c.lo, c.hi)])
    return _emit(buf.getvalue(), path)


def _emit(text, path):
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text

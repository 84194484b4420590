"""Effective robustness and related evaluation metrics.

Models trained from scratch trace out a line when reference and shifted
accuracies are both probit-transformed.  A model's effective robustness (ER) is
its shifted accuracy minus the accuracy that line predicts at its reference
accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .logreg import GDConfig, LabeledDataset, NoMinimumError, accuracy, gradient_descent
from .numeric_core import normal_cdf, probit
from .shiftgen import derive_seed

__all__ = [
    "AccuracyPoint",
    "ProbitFit",
    "DegenerateFitError",
    "clamp_for",
    "probit_fit",
    "effective_robustness",
    "mean_effective_robustness",
    "er_confidence_interval",
    "worst_group_accuracy",
    "difficulty",
    "difficulty_weights",
    "difficulty_reweighted_accuracy",
    "CorrectedSet",
    "corrected_examples",
    "overlap_report",
    "sweep_checkpoints",
    "baseline_sweep",
]


class DegenerateFitError(ValueError):
    """The probit line is not identifiable from the given points."""


@dataclass(frozen=True)
class AccuracyPoint:
    acc_ref: float
    acc_shift: float
    tag: str = ""

    def __post_init__(self):
        for name in ("acc_ref", "acc_shift"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} is not a probability")


@dataclass(frozen=True)
class ProbitFit:
    a: float
    b: float
    r_squared: float
    n_points: int
    clamp: float

    def predict(self, acc_ref):
        """Predicted shifted accuracy at (clamped) reference accuracy ``acc_ref``."""
        p = np.clip(np.asarray(acc_ref, dtype=float), self.clamp, 1.0 - self.clamp)
        return normal_cdf(self.a * probit(p) + self.b)


def clamp_for(n_test: int) -> float:
    """Half-count continuity correction 1 / (2 n_test)."""
    if n_test < 1:
        raise ValueError("n_test must be positive")
    return 1.0 / (2.0 * n_test)


def _probit_clamped(values, clamp):
    return probit(np.clip(np.asarray(values, dtype=float), clamp, 1.0 - clamp))


def probit_fit(points: Sequence[AccuracyPoint], clamp: float = 1e-4) -> ProbitFit:
    """Least-squares line of probit(acc_shift) on probit(acc_ref).

    Accuracies are clamped into ``[clamp, 1 - clamp]`` first.  ``r_squared`` is
    the coefficient of determination in probit space.
    """
    if not 0.0 < clamp < 0.5:
        raise ValueError("clamp must lie in (0, 0.5)")
    if len(points) < 2:
        raise DegenerateFitError("need at least two accuracy points")
    u = _probit_clamped([p.acc_ref for p in points], clamp)
    v = _probit_clamped([p.acc_shift for p in points], clamp)
    du = u - u.mean()
    sxx = float(du @ du)
    if sxx <= 1e-24 * max(1.0, float(u @ u)):
        raise DegenerateFitError("all reference accuracies coincide after clamping")
    dv = v - v.mean()
    a = float(du @ dv) / sxx
    b = float(v.mean() - a * u.mean())
    resid = v - (a * u + b)
    syy = float(dv @ dv)
    r2 = 1.0 if syy == 0.0 else 1.0 - float(resid @ resid) / syy
    return ProbitFit(a, b, min(max(r2, 0.0), 1.0), len(points), clamp)


def effective_robustness(fit: ProbitFit, point: AccuracyPoint) -> float:
    return float(point.acc_shift - fit.predict(point.acc_ref))


def mean_effective_robustness(fit: ProbitFit, points: Sequence[AccuracyPoint]) -> float:
    if not points:
        return float("nan")
    return float(np.mean([effective_robustness(fit, p) for p in points]))


def er_confidence_interval(fit: ProbitFit, eval_points: Sequence[AccuracyPoint], trials: int = 1000,
                           level: float = 0.95, seed: int = 0):
    """Percentile-bootstrap interval for the mean ER of ``eval_points``.

    Models are resampled with replacement; the fit stays fixed.
    """
    if trials < 100:
        raise ValueError("use at least 100 bootstrap trials")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if not eval_points:
        raise ValueError("no evaluation points")
    er = np.array([effective_robustness(fit, p) for p in eval_points])
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(er), size=(trials, len(er)))
    means = er[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def worst_group_accuracy(correct, groups):
    """``(accuracy, tag)`` of the worst group; ties go to the lowest tag."""
    correct = np.asarray(correct, dtype=bool)
    groups = np.asarray(groups)
    if correct.shape != groups.shape or correct.ndim != 1:
        raise ValueError("correct and groups must be 1-D with equal length")
    if correct.size == 0:
        raise ValueError("no examples")
    best = None
    for g in np.unique(groups):
        acc = float(correct[groups == g].mean())
        if best is None or acc < best[0]:
            best = (acc, g.item())
    return best


def difficulty(per_model_correct) -> np.ndarray:
    """Fraction of models that get each example wrong (models x examples input)."""
    m = np.asarray(per_model_correct, dtype=bool)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("expected a non-empty models x examples matrix")
    return 1.0 - m.mean(axis=0)


def _bin_of(d, bins):
    return np.minimum((np.asarray(d) * bins).astype(int), bins - 1)


def difficulty_weights(d_out, d_in, bins: int = 10) -> np.ndarray:
    """Per-example weights p_in(bin)/p_out(bin) over equal-width bins on [0, 1], summing to 1."""
    if bins < 2:
        raise ValueError("need at least two bins")
    d_out, d_in = np.asarray(d_out, dtype=float), np.asarray(d_in, dtype=float)
    if d_out.size == 0 or d_in.size == 0:
        raise ValueError("both splits need examples")
    b_out, b_in = _bin_of(d_out, bins), _bin_of(d_in, bins)
    p_out = np.bincount(b_out, minlength=bins) / d_out.size
    p_in = np.bincount(b_in, minlength=bins) / d_in.size
    w = p_in[b_out] / p_out[b_out]
    total = w.sum()
    if total <= 0.0:
        raise ValueError("difficulty distributions do not overlap; reweighting is undefined")
    return w / total


def difficulty_reweighted_accuracy(per_model_correct_out, per_model_correct_in, eval_correct_out,
                                   bins: int = 10) -> float:
    """Out-of-support accuracy reweighted to the in-support difficulty profile."""
    w = difficulty_weights(difficulty(per_model_correct_out), difficulty(per_model_correct_in), bins)
    c = np.asarray(eval_correct_out, dtype=float)
    if c.shape != w.shape:
        raise ValueError("eval_correct_out must have one entry per out-of-support example")
    return float(w @ c)


@dataclass
class CorrectedSet:
    indices: np.ndarray
    baseline_rate: np.ndarray
    intervention_rate: np.ndarray

    def __len__(self):
        return len(self.indices)

    def as_set(self) -> set:
        return set(int(i) for i in self.indices)


def corrected_examples(baseline_correct, intervention_correct, threshold: float = 0.5) -> CorrectedSet:
    """Examples usually wrong under the baseline and usually right under the intervention."""
    b = np.asarray(baseline_correct, dtype=bool)
    v = np.asarray(intervention_correct, dtype=bool)
    if b.ndim != 2 or v.ndim != 2 or b.shape[1] != v.shape[1]:
        raise ValueError("expected trials x examples matrices over the same examples")
    br, vr = b.mean(axis=0), v.mean(axis=0)
    idx = np.flatnonzero((br < threshold) & (vr >= threshold))
    return CorrectedSet(idx, br, vr)


def overlap_report(sets: Mapping[str, CorrectedSet], combined: Optional[str] = None) -> dict:
    """Set sizes, pairwise intersections and coverage of ``combined`` over the others' union."""
    if len(sets) < 2:
        raise ValueError("need at least two sets")
    names = sorted(sets)
    members = {k: sets[k].as_set() for k in names}
    out = {
        "sizes": {k: len(members[k]) for k in names},
        "intersections": {f"{a}&{b}": len(members[a] & members[b])
                          for i, a in enumerate(names) for b in names[i + 1:]},
    }
    if combined is not None:
        if combined not in members:
            raise KeyError(combined)
        union = set().union(*(members[k] for k in names if k != combined))
        out["combined"] = combined
        out["union_size"] = len(union)
        out["coverage"] = len(members[combined] & union) / len(union) if union else float("nan")
    return out


def sweep_checkpoints(max_steps: int) -> list:
    """Step 0, powers of two below ``max_steps``, and ``max_steps`` itself."""
    ck = [0]
    p = 1
    while p < max_steps:
        ck.append(p)
        p *= 2
    ck.append(int(max_steps))
    return ck


@dataclass(frozen=True)
class _SweepTask:
    fraction: float
    trial: int
    seed: int


def _sweep_one(task: _SweepTask, train, ref_test, shift_test, cfg, init_scale):
    rng = np.random.default_rng(task.seed)
    m = max(1, int(round(task.fraction * train.n)))
    idx = np.sort(rng.choice(train.n, size=m, replace=False))
    w0 = rng.normal(0.0, init_scale, size=train.dim)
    steps = int(math.ceil(cfg.max_steps / task.fraction))
    run_cfg = GDConfig(cfg.step_size, steps, cfg.grad_tol, cfg.divergence_norm)
    tr = gradient_descent(w0, train.subset(idx), run_cfg, checkpoints=sweep_checkpoints(steps))
    if tr.reason == "diverged":
        raise NoMinimumError(f"baseline run (fraction {task.fraction}, trial {task.trial}) diverged")
    pts = []
    # checkpoints past the stopping step all hold the final iterate; record it once
    for step in sorted(c for c in tr.checkpoints if c <= tr.steps):
        w = tr.checkpoints[step]
        pts.append(AccuracyPoint(accuracy(w, ref_test), accuracy(w, shift_test),
                                 f"f={task.fraction:g}/t={task.trial}/s={step}"))
    if tr.steps not in tr.checkpoints:
        pts.append(AccuracyPoint(accuracy(tr.weights, ref_test), accuracy(tr.weights, shift_test),
                                 f"f={task.fraction:g}/t={task.trial}/s={tr.steps}"))
    return pts


def baseline_sweep(train: LabeledDataset, ref_test: LabeledDataset, shift_test: LabeledDataset,
                   fractions: Sequence[float], trials: int, cfg: GDConfig = GDConfig(grad_tol=1e-6, max_steps=20_000),
                   seed: int = 0, init_scale: float = 1.0,
                   map_fn: Callable = map) -> list:
    """Accuracy points of from-scratch models trained on random subsets.

    Each (fraction, trial) run draws its subset and a N(0, init_scale^2) random
    initialization from a seed derived from ``(seed, fraction index, trial)``,
    trains for up to ``cfg.max_steps / fraction`` steps and records a point at
    each checkpoint of :func:`sweep_checkpoints`.  ``map_fn`` may be a pool's
    ordered map; the output order is (fraction, trial, step) either way.
    """
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"subset fraction {f!r} is outside (0, 1]")
    tasks = [_SweepTask(float(f), t, derive_seed(seed, i, t))
             for i, f in enumerate(fractions) for t in range(trials)]
    if not tasks:
        return []
    results = list(map_fn(_SweepRunner(train, ref_test, shift_test, cfg, init_scale), tasks))
    return [p for pts in results for p in pts]


@dataclass
class _SweepRunner:
    # picklable callable so the sweep can go through a process pool
    train: LabeledDataset
    ref_test: LabeledDataset
    shift_test: LabeledDataset
    cfg: GDConfig
    init_scale: float

    def __call__(self, task):
        return _sweep_one(task, self.train, self.ref_test, self.shift_test, self.cfg, self.init_scale)

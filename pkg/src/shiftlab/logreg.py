"""Unregularized logistic regression trained by full-batch gradient descent.

Labels are +/-1 and the model has no intercept (append a constant feature if
one is wanted).  Gradient descent only ever moves the weights inside the span
of the training inputs, so the component of the initialization orthogonal to
that span survives training untouched.  :func:`theorem1_decompose` measures
exactly that.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .numeric_core import Subspace, operator_norm, orthonormalize, project, project_complement

__all__ = [
    "LabeledDataset",
    "GDConfig",
    "GDTrace",
    "NoMinimumError",
    "margins",
    "logistic_loss",
    "loss_gradient",
    "loss_hessian",
    "gradient_descent",
    "data_subspace",
    "reference_minimizer",
    "theorem1_decompose",
    "Decomposition",
    "per_example_correct",
    "accuracy",
]


class NoMinimumError(RuntimeError):
    """The logistic loss has no minimizer (the data is linearly separable)."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with +/-1 labels and optional integer group/domain tags."""

    features: np.ndarray
    labels: np.ndarray
    group: Optional[np.ndarray] = None
    domain: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        if y.shape != (x.shape[0],):
            raise ValueError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be -1 or +1")
        y = y.astype(np.int64)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        for name in ("group", "domain"):
            tags = getattr(self, name)
            if tags is not None:
                tags = np.asarray(tags, dtype=np.int64)
                if tags.shape != (x.shape[0],):
                    raise ValueError(f"{name} must have one tag per example")
                object.__setattr__(self, name, tags)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.features[idx],
            self.labels[idx],
            None if self.group is None else self.group[idx],
            None if self.domain is None else self.domain[idx],
        )

    def with_features(self, features) -> "LabeledDataset":
        return replace(self, features=np.asarray(features, dtype=float))


@dataclass(frozen=True)
class GDConfig:
    """Gradient-descent settings; ``step_size="auto"`` means 4 / ||X||_op^2."""

    step_size: float | str = "auto"
    max_steps: int = 500_000
    grad_tol: float = 1e-9
    divergence_norm: float = 1e6

    def __post_init__(self):
        if self.step_size != "auto" and not (isinstance(self.step_size, (int, float)) and self.step_size > 0):
            raise ValueError("step_size must be 'auto' or a positive number")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


@dataclass
class GDTrace:
    losses: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    weights: np.ndarray | None = None
    reason: str = ""  # converged | step-limit | diverged
    step_size: float = float("nan")
    checkpoints: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return max(len(self.losses) - 1, 0)


def _check(w, data: LabeledDataset) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.dim,):
        raise ValueError(f"weight vector has shape {w.shape}, features have dimension {data.dim}")
    return w


def margins(w, data: LabeledDataset) -> np.ndarray:
    """Per-example y * w^T x."""
    w = _check(w, data)
    return (data.features @ w) * data.labels


def _weights(sample_weight, n):
    if sample_weight is None:
        return None
    sw = np.asarray(sample_weight, dtype=float)
    if sw.shape != (n,) or np.any(sw < 0):
        raise ValueError("sample_weight must be non-negative with one entry per example")
    return sw


def logistic_loss(w, data: LabeledDataset, sample_weight=None) -> float:
    """Sum over examples of log(1 + exp(-y w^T x)), evaluated stably."""
    m = margins(w, data)
    per = np.log1p(np.exp(-np.abs(m))) + np.maximum(0.0, -m)
    sw = _weights(sample_weight, data.n)
    return float(per.sum() if sw is None else sw @ per)


def _sigmoid_neg(m):
    # 1 / (1 + exp(m)) without overflow
    out = np.empty_like(m)
    pos = m >= 0
    e = np.exp(-m[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(m[~pos]))
    return out


def loss_gradient(w, data: LabeledDataset, sample_weight=None) -> np.ndarray:
    """-sum x y / (1 + exp(y w^T x)); always a combination of the feature rows."""
    m = margins(w, data)
    coef = -data.labels * _sigmoid_neg(m)
    sw = _weights(sample_weight, data.n)
    if sw is not None:
        coef = coef * sw
    return data.features.T @ coef


def loss_hessian(w, data: LabeledDataset, sample_weight=None) -> np.ndarray:
    """X^T D(w) X with D_ii = 1 / (2 + e^{-m_i} + e^{m_i})."""
    m = margins(w, data)
    a = np.abs(m)
    e = np.exp(-a)
    diag = e / (1.0 + e) ** 2  # same value, no overflow for large |m|
    sw = _weights(sample_weight, data.n)
    if sw is not None:
        diag = diag * sw
    x = data.features
    h = x.T @ (diag[:, None] * x)
    return 0.5 * (h + h.T)


def _separates(m, nonzero) -> bool:
    # every informative example strictly on the right side => no minimizer
    return bool(nonzero.any() and np.all(m[nonzero] > 0))


def gradient_descent(w_init, data: LabeledDataset, cfg: GDConfig = GDConfig(), *,
                     sample_weight=None, callback: Callable[[int, np.ndarray], None] | None = None,
                     checkpoints=None) -> GDTrace:
    """Run w <- w - eta * grad L(w) from ``w_init``.

    Stops when ||grad|| <= cfg.grad_tol ("converged"), after cfg.max_steps
    ("step-limit"), or when the iterate proves the loss has no minimizer
    ("diverged"): ||w|| beyond cfg.divergence_norm, a loss below 1e-12 with a
    nonzero gradient, or an iterate that classifies every example with a
    strictly positive margin.

    ``callback(t, w)`` is called for every iterate including t = 0.  If
    ``checkpoints`` (sorted step counts) is given, copies of the iterates at
    those steps are stored in ``trace.checkpoints``.
    """
    w = _check(w_init, data).copy()
    sw = _weights(sample_weight, data.n)
    x = data.features
    if cfg.step_size == "auto":
        xs = x if sw is None else x * np.sqrt(sw)[:, None]
        op = operator_norm(xs) if x.size else 0.0
        eta = 4.0 / op**2 if op > 0 else 1.0
    else:
        eta = float(cfg.step_size)

    nonzero = np.any(x != 0, axis=1)
    trace = GDTrace(step_size=eta)
    wanted = sorted(set(int(c) for c in checkpoints)) if checkpoints is not None else []
    ci = 0

    t = 0
    while True:
        m = (x @ w) * data.labels
        per = np.log1p(np.exp(-np.abs(m))) + np.maximum(0.0, -m)
        coef = -data.labels * _sigmoid_neg(m)
        if sw is not None:
            per = per * sw
            coef = coef * sw
        loss = float(per.sum())
        g = x.T @ coef
        gn = float(np.linalg.norm(g))
        trace.losses.append(loss)
        trace.grad_norms.append(gn)
        if callback is not None:
            callback(t, w)
        while ci < len(wanted) and wanted[ci] <= t:
            if wanted[ci] == t:
                trace.checkpoints[t] = w.copy()
            ci += 1
        if gn <= cfg.grad_tol:
            trace.reason = "converged"
            break
        if (np.linalg.norm(w) > cfg.divergence_norm or (loss < 1e-12 and gn > 0)
                or _separates(m, nonzero)):
            trace.reason = "diverged"
            break
        if t >= cfg.max_steps:
            trace.reason = "step-limit"
            break
        w = w - eta * g
        t += 1
    # checkpoints past the stopping step resolve to the final iterate
    for c in wanted[ci:]:
        trace.checkpoints[c] = w.copy()
    trace.weights = w
    return trace


def data_subspace(data: LabeledDataset, rank_tol: float = 1e-10) -> Subspace:
    """Orthonormal basis for the span of the feature rows."""
    return orthonormalize(data.features, rank_tol=rank_tol, ambient_dim=data.dim)


def reference_minimizer(data: LabeledDataset, cfg: GDConfig = GDConfig(), *, sample_weight=None) -> np.ndarray:
    """The unique minimizer lying in the span of the inputs (GD from zero)."""
    tr = gradient_descent(np.zeros(data.dim), data, cfg, sample_weight=sample_weight)
    if tr.reason == "diverged":
        raise NoMinimumError("logistic loss has no minimizer on this data (separable)")
    if tr.reason != "converged":
        warnings.warn(f"reference_minimizer stopped at step limit with |grad|={tr.grad_norms[-1]:.3g}",
                      RuntimeWarning, stacklevel=2)
    return tr.weights


@dataclass
class Decomposition:
    w_hat: np.ndarray
    in_part: np.ndarray
    orth_part: np.ndarray
    residual: float
    in_residual: float
    orth_residual: float
    w_star: np.ndarray
    max_orth_drift: float  # largest per-step deviation of the orthogonal component
    trace: GDTrace


def theorem1_decompose(w_init, data: LabeledDataset, cfg: GDConfig = GDConfig(),
                       subspace: Subspace | None = None) -> Decomposition:
    """Train from ``w_init`` and split the result along the span of the inputs.

    ``residual = ||P w_hat - w*|| + ||P_perp w_hat - P_perp w_init||`` where w*
    is :func:`reference_minimizer`.  The orthogonal component is also checked at
    every gradient step (``max_orth_drift``).
    """
    w_init = _check(w_init, data)
    s = data_subspace(data) if subspace is None else subspace
    w_star = reference_minimizer(data, cfg)
    orth0 = project_complement(w_init, s)
    drift = [0.0]

    def watch(_t, w):
        d = float(np.linalg.norm(project_complement(w, s) - orth0))
        if d > drift[0]:
            drift[0] = d

    tr = gradient_descent(w_init, data, cfg, callback=watch)
    if tr.reason == "diverged":
        raise NoMinimumError("logistic loss has no minimizer on this data (separable)")
    w_hat = tr.weights
    in_part = project(w_hat, s)
    orth_part = w_hat - in_part
    r_in = float(np.linalg.norm(in_part - w_star))
    r_orth = float(np.linalg.norm(orth_part - orth0))
    return Decomposition(w_hat, in_part, orth_part, r_in + r_orth, r_in, r_orth,
                         w_star, drift[0], tr)


def per_example_correct(w, data: LabeledDataset) -> np.ndarray:
    """sign(w^T x) == y, with a zero score counted as wrong."""
    return margins(w, data) > 0


def accuracy(w, data: LabeledDataset) -> float:
    if data.n == 0:
        return float("nan")
    return float(np.mean(per_example_correct(w, data)))

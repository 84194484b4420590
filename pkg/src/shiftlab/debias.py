"""De-biasing interventions for linear models.

* Group-balanced last-layer retraining (DFR): refit a scale and an intercept
  over the frozen score of a trained model, on validation data weighted so
  every group has the same total weight.
* Balancing: re-draw the spurious coordinate at random so it carries no label
  information (an oracle that removes the shortcut from the training set).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .logreg import GDConfig, LabeledDataset, NoMinimumError, gradient_descent
from .shiftgen import GeneratorSpec, ShiftSpec, tint_groups, rng_for

__all__ = [
    "GroupWeighting",
    "group_equal_weights",
    "DFRModel",
    "dfr_retrain",
    "balance_training_data",
]


@dataclass(frozen=True)
class GroupWeighting:
    weights: np.ndarray
    groups: tuple  # sorted group tags

    def group_totals(self, tags) -> dict:
        tags = np.asarray(tags)
        return {g: float(self.weights[tags == g].sum()) for g in self.groups}


def group_equal_weights(groups, expected_groups: Optional[Sequence[int]] = None) -> GroupWeighting:
    """Weight n / (G * n_g) for each member of group g, so every group totals n / G.

    ``expected_groups`` lists groups that must be present; a missing one is an
    error rather than silently dropping out of the average.
    """
    tags = np.asarray(groups)
    if tags.ndim != 1 or tags.size == 0:
        raise ValueError("groups must be a non-empty 1-D array")
    present, counts = np.unique(tags, return_counts=True)
    if expected_groups is not None:
        missing = sorted(set(int(g) for g in expected_groups) - set(present.tolist()))
        if missing:
            raise ValueError(f"groups {missing} have no members")
        extra = sorted(set(present.tolist()) - set(int(g) for g in expected_groups))
        if extra:
            raise ValueError(f"unexpected group tags {extra}")
    n, G = tags.size, present.size
    per = {g: n / (G * c) for g, c in zip(present.tolist(), counts.tolist())}
    w = np.array([per[g] for g in tags.tolist()])
    return GroupWeighting(w, tuple(present.tolist()))


@dataclass
class DFRModel:
    """Last layer ``coef . [phi(x), 1]`` over a frozen representation ``phi``.

    For the scale-and-intercept form ``phi(x) = w_base . x`` and
    ``coef = (scale, intercept)``.
    """

    coef: np.ndarray
    base: Optional[np.ndarray] = None
    feature_map: Optional[Callable] = None

    @property
    def scale(self) -> float:
        return float(self.coef[0])

    @property
    def intercept(self) -> float:
        return float(self.coef[-1])

    def representation(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.feature_map is not None:
            z = np.asarray(self.feature_map(x), dtype=float)
            return z if z.ndim == 2 else z[:, None]
        return (x @ self.base)[:, None]

    def scores(self, x) -> np.ndarray:
        z = self.representation(x)
        return z @ self.coef[:-1] + self.coef[-1]

    def per_example_correct(self, data: LabeledDataset) -> np.ndarray:
        return self.scores(data.features) * data.labels > 0

    def accuracy(self, data: LabeledDataset) -> float:
        return float(np.mean(self.per_example_correct(data)))

    def effective_weights(self):
        """``(scale * w_base, intercept)`` for the scale-and-intercept form."""
        if self.base is None:
            raise ValueError("only defined for the scale-and-intercept form")
        return self.scale * self.base, self.intercept


DFR_CFG = GDConfig(grad_tol=1e-9, max_steps=500_000)


def dfr_retrain(base_model, validation: LabeledDataset, cfg: GDConfig = DFR_CFG,
                feature_map: Optional[Callable] = None, weighting: Optional[GroupWeighting] = None) -> DFRModel:
    """Refit the last layer on group-equal-weighted validation data.

    With ``feature_map=None`` the frozen representation is the base score
    ``w_base . x`` and only a scale and intercept are learned; the base
    direction is untouched.  A ``feature_map`` returning an (n, k) matrix of
    frozen features retrains a full k-vector plus intercept instead.
    Minimizes sum_i weight_i * log(1 + exp(-y_i * score_i)) by gradient descent
    from zero.
    """
    if validation.group is None:
        raise ValueError("validation data needs group tags")
    if weighting is None:
        weighting = group_equal_weights(validation.group)
    if weighting.weights.shape != (validation.n,):
        raise ValueError("weighting does not match the validation set")
    base = None if base_model is None else np.asarray(base_model, dtype=float)
    if feature_map is None and (base is None or base.shape != (validation.dim,)):
        raise ValueError("base model must be a weight vector over the validation features")
    model = DFRModel(np.zeros(0), base, feature_map)
    z = model.representation(validation.features)
    design = np.hstack([z, np.ones((validation.n, 1))])
    tr = gradient_descent(np.zeros(design.shape[1]), LabeledDataset(design, validation.labels), cfg,
                          sample_weight=weighting.weights)
    if tr.reason == "diverged":
        raise NoMinimumError("weighted last-layer loss has no minimizer (frozen scores separate the data)")
    model.coef = tr.weights
    return model


def balance_training_data(data: LabeledDataset, shift: ShiftSpec, gen: GeneratorSpec, seed: int = 0) -> LabeledDataset:
    """Copy of ``data`` with the spurious coordinate re-drawn from U[-1, 1].

    All other coordinates are copied bit for bit.  Tint-agreement group tags
    are recomputed for the new values.
    """
    if shift.kind == "spurious":
        tc = shift.resolved_dims(gen)[0]
    elif shift.kind == "combined":
        tc = gen.tint_coord
    else:
        raise ValueError(f"no spurious coordinate to balance for shift kind {shift.kind!r}")
    if data.dim != gen.ambient_dim:
        raise ValueError("data does not match the generator's dimension")
    rng = rng_for(seed, 13)
    x = data.features.copy()
    x[:, tc] = rng.uniform(-1.0, 1.0, size=data.n)
    groups = None if data.group is None else tint_groups(x, data.labels, tc)
    return LabeledDataset(x, data.labels, groups, data.domain)

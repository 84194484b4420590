"""Seeded generators for reference/shifted dataset pairs.

Feature layout for a generator with ambient dimension ``d`` and reference
subspace dimension ``k`` (``s = signal_dims``)::

    [0, s)        class signal: y * core_signal + N(0, noise_sigma^2)
    s .. k-3      noise coordinates, N(0, noise_sigma^2)
    k-2           constant 1 (intercept feature)
    k-1           "tint" coordinate: class-specific +/-1 or uniform on [-1, 1]
    [k, d)        zero in every reference sample

The group-imbalance kind repurposes coordinate ``s`` as a group indicator
(0 for group 0, about ``group_scale`` for group 1).

Shifts are feature-space stand-ins for image transforms: a tint is a convex mix
on designated coordinates and a flip is a reflection that swaps in-subspace
coordinates with their mirror images ``d-1-j`` outside the subspace.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .logreg import LabeledDataset, data_subspace
from .numeric_core import project_complement

__all__ = [
    "GeneratorSpec",
    "ShiftSpec",
    "KINDS",
    "derive_seed",
    "rng_for",
    "generate_pair",
    "generate_splits",
    "apply_shift",
    "flip_matrix",
    "tint_groups",
    "pretraining_data",
    "subspace_instance",
    "build_counterfactual_dataset",
    "support_check",
    "SupportReport",
    "dataset_to_csv",
    "dataset_from_csv",
    "spec_to_json",
    "spec_from_json",
]

KINDS = ("spurious", "label_shift", "unseen_transform", "flip", "combined", "group_imbalance")
IN_SUPPORT = ("spurious", "label_shift", "group_imbalance")

REFERENCE, SHIFTED = 0, 1


def derive_seed(base: int, *keys: int) -> int:
    """64-bit child seed: ``SeedSequence(base, spawn_key=keys).generate_state(1, uint64)[0]``."""
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_for(base: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *keys))


@dataclass(frozen=True)
class GeneratorSpec:
    ambient_dim: int = 16
    subspace_dim: int = 8
    classes: int = 2
    core_signal: float = 1.0
    noise_sigma: float = 1.0
    n_train: int = 2000
    n_test: int = 4000
    seed: int = 0
    signal_dims: int = 2

    def __post_init__(self):
        if not 0 < self.subspace_dim < self.ambient_dim:
            raise ValueError("need 0 < subspace_dim < ambient_dim")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.classes != 2:
            raise ValueError("only binary generators are supported")
        if self.signal_dims < 1 or self.signal_dims + 2 > self.subspace_dim:
            raise ValueError("need 1 <= signal_dims <= subspace_dim - 2")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("sample counts must be non-negative")

    @property
    def signal_coords(self) -> tuple:
        return tuple(range(self.signal_dims))

    @property
    def bias_coord(self) -> int:
        return self.subspace_dim - 2

    @property
    def tint_coord(self) -> int:
        return self.subspace_dim - 1

    @property
    def group_coord(self) -> int:
        return self.signal_dims

    def mirror(self, j: int) -> int:
        return self.ambient_dim - 1 - j


@dataclass(frozen=True)
class ShiftSpec:
    kind: str = "spurious"
    p_spurious: float = 0.5
    p_minority: float = 0.2
    transform_dims: Optional[tuple] = None
    offset: float = 10.0
    mix_weight: float = 0.25
    group_rates: tuple = (0.24, 0.02)
    group_mix: float = 0.5  # share of group 1 in the biased population
    group_scale: float = 1.0  # value of the group indicator for group 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shift kind {self.kind!r}; expected one of {KINDS}")
        for name in ("p_spurious", "p_minority", "mix_weight", "group_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.group_scale > 0:
            raise ValueError("group_scale must be positive")
        if len(self.group_rates) != 2 or not all(0.0 <= r <= 1.0 for r in self.group_rates):
            raise ValueError("group_rates must be two probabilities")
        if self.transform_dims is not None:
            object.__setattr__(self, "transform_dims", tuple(int(t) for t in self.transform_dims))
        object.__setattr__(self, "group_rates", tuple(float(r) for r in self.group_rates))

    @property
    def in_support(self) -> bool:
        return self.kind in IN_SUPPORT

    def resolved_dims(self, gen: GeneratorSpec) -> tuple:
        """Transform coordinates for this kind, validated against ``gen``."""
        d, k = gen.ambient_dim, gen.subspace_dim
        dims = self.transform_dims
        if dims is None:
            if self.kind in ("unseen_transform", "combined"):
                dims = tuple(range(k, min(k + 4, d)))
            elif self.kind == "flip":
                dims = (d - 1,)
            elif self.kind == "spurious":
                dims = (gen.tint_coord,)
            else:
                dims = ()
        if len(set(dims)) != len(dims) or any(not 0 <= t < d for t in dims):
            raise ValueError(f"transform_dims {dims} are not distinct coordinates of R^{d}")
        if self.kind in ("unseen_transform", "combined", "flip"):
            if any(t < k for t in dims):
                raise ValueError(f"{self.kind} transform_dims must lie outside the reference subspace (>= {k})")
            if self.kind == "flip" and any(gen.mirror(t) >= k for t in dims):
                raise ValueError("flip transform_dims must mirror onto coordinates inside the reference subspace")
            if not dims:
                raise ValueError(f"{self.kind} needs at least one transform coordinate")
        elif self.kind == "spurious":
            if len(dims) != 1 or dims[0] >= k:
                raise ValueError("spurious transform_dims must be a single in-subspace coordinate")
        elif dims:
            raise ValueError(f"{self.kind} takes no transform_dims")
        return dims


def _content(gen: GeneratorSpec, y, rng, tint_coord=None, p_spurious=0.0):
    """Reference-distribution inputs for labels ``y`` (zero outside the subspace)."""
    n = len(y)
    d, k = gen.ambient_dim, gen.subspace_dim
    x = np.zeros((n, d))
    x[:, :k] = rng.normal(0.0, gen.noise_sigma, size=(n, k))
    x[:, list(gen.signal_coords)] += gen.core_signal * y[:, None]
    x[:, gen.bias_coord] = 1.0
    tc = gen.tint_coord if tint_coord is None else tint_coord
    random_tint = rng.uniform(-1.0, 1.0, size=n)
    class_tint = rng.random(n) < p_spurious
    x[:, tc] = np.where(class_tint, y.astype(float), random_tint)
    return x, class_tint


def _labels(rng, n, p_pos):
    return np.where(rng.random(n) < p_pos, 1, -1)


def tint_groups(x, y, tc):
    # 2*(y == +1) + (tint sign agrees with label)
    agree = np.sign(x[:, tc]) == y
    return 2 * (y > 0).astype(int) + agree.astype(int)


def _offsets(gen, shift, n, rng):
    dims = list(shift.resolved_dims(gen))
    u = rng.standard_normal((n, len(dims)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return dims, shift.offset * u


def flip_matrix(gen: GeneratorSpec, shift: ShiftSpec) -> np.ndarray:
    """Symmetric orthogonal reflection swapping each transform coordinate with its mirror."""
    r = np.eye(gen.ambient_dim)
    for t in shift.resolved_dims(gen):
        j = gen.mirror(t)
        r[[t, j]] = r[[j, t]]
    return r


def _sample(gen: GeneratorSpec, shift: ShiftSpec, n: int, rng, shifted: bool) -> LabeledDataset:
    kind = shift.kind
    dims = shift.resolved_dims(gen)
    if kind == "group_imbalance":
        if shifted:
            # evaluation population: the four (group, class) cells equally sized
            cell = rng.integers(0, 4, size=n)
            g, y = cell // 2, np.where(cell % 2 == 1, 1, -1)
        else:
            g = (rng.random(n) < shift.group_mix).astype(int)
            rates = np.asarray(shift.group_rates)[g]
            y = np.where(rng.random(n) < rates, 1, -1)
        x, _ = _content(gen, y, rng)
        gc = gen.group_coord
        x[:, gc] = np.where(g == 1, shift.group_scale + rng.normal(0.0, 0.1 * gen.noise_sigma, size=n), 0.0)
        return LabeledDataset(x, y, group=g, domain=np.full(n, int(shifted)))

    if kind == "label_shift":
        p_pos = shift.p_minority if not shifted else 1.0 - shift.p_minority
        y = _labels(rng, n, p_pos)
        x, _ = _content(gen, y, rng)
        return LabeledDataset(x, y, group=(y > 0).astype(int), domain=np.full(n, int(shifted)))

    y = _labels(rng, n, 0.5)
    if kind == "spurious":
        tc = dims[0]
        x, _ = _content(gen, y, rng, tint_coord=tc, p_spurious=0.0 if shifted else shift.p_spurious)
        return LabeledDataset(x, y, group=tint_groups(x, y, tc), domain=np.full(n, int(shifted)))

    if kind == "combined":
        tc = gen.tint_coord
        x, _ = _content(gen, y, rng, p_spurious=0.0 if shifted else shift.p_spurious)
        if shifted:
            cols, c = _offsets(gen, shift, n, rng)
            x[:, cols] = (1.0 - shift.mix_weight) * x[:, cols] + shift.mix_weight * c
        return LabeledDataset(x, y, group=tint_groups(x, y, tc), domain=np.full(n, int(shifted)))

    x, _ = _content(gen, y, rng)
    data = LabeledDataset(x, y, group=tint_groups(x, y, gen.tint_coord), domain=np.full(n, int(shifted)))
    if shifted:
        data = apply_shift(data, gen, shift, rng)
    return data


def apply_shift(data: LabeledDataset, gen: GeneratorSpec, shift: ShiftSpec, rng=None) -> LabeledDataset:
    """Apply an out-of-support input transform to existing samples.

    ``flip`` is deterministic; ``unseen_transform`` draws one random offset per
    example from ``rng``.  Labels and tags are kept; domain is set to shifted.
    """
    if shift.kind == "flip":
        x = data.features @ flip_matrix(gen, shift)
    elif shift.kind == "unseen_transform":
        if rng is None:
            raise ValueError("unseen_transform needs an rng for the per-example offsets")
        x = data.features.copy()
        cols, c = _offsets(gen, shift, data.n, rng)
        x[:, cols] = (1.0 - shift.mix_weight) * x[:, cols] + shift.mix_weight * c
    else:
        raise ValueError(f"apply_shift handles flip and unseen_transform, not {shift.kind!r}")
    return LabeledDataset(x, data.labels, data.group, np.full(data.n, SHIFTED))


def generate_pair(gen: GeneratorSpec, shift: ShiftSpec):
    """``(reference, shifted)`` with ``gen.n_train`` and ``gen.n_test`` samples."""
    shift.resolved_dims(gen)
    ref = _sample(gen, shift, gen.n_train, rng_for(gen.seed, 0), shifted=False)
    sh = _sample(gen, shift, gen.n_test, rng_for(gen.seed, 1), shifted=True)
    return ref, sh


def generate_splits(gen: GeneratorSpec, shift: ShiftSpec) -> dict:
    """Training set plus held-out reference and shifted test sets."""
    ref, sh = generate_pair(gen, shift)
    ref_test = _sample(gen, shift, gen.n_test, rng_for(gen.seed, 2), shifted=False)
    return {"train": ref, "ref_test": ref_test, "shift_test": sh}


def pretraining_data(gen: GeneratorSpec, n: int, seed: int, nuisance_sigma: float = 1.0) -> LabeledDataset:
    """Auxiliary task spanning all of R^d.

    Balanced classes, no tint/label association, half of the
    samples reflected end-to-end (x -> x[::-1]) so the mirror coordinates carry
    label signal, and label-free noise on the coordinates a sample leaves empty.
    """
    rng = rng_for(seed, 7)
    y = _labels(rng, n, 0.5)
    x, _ = _content(gen, y, rng)
    flipped = rng.random(n) < 0.5
    x[flipped] = x[flipped, ::-1]
    empty = x == 0.0
    x[empty] = rng.normal(0.0, nuisance_sigma, size=int(empty.sum()))
    return LabeledDataset(x, y)


def subspace_instance(n: int = 200, d: int = 10, k: int = 4, label_noise: float = 0.1, seed: int = 0):
    """``(data, basis)``: n points spread over a random k-dim subspace of R^d.

    Labels follow a fixed linear rule in subspace coordinates; a
    ``label_noise`` share of them is flipped, which (for enough points) makes
    the data non-separable.  With ``label_noise=0`` the data is separable.
    """
    if not 0 < k <= d:
        raise ValueError("need 0 < k <= d")
    if not 0.0 <= label_noise <= 1.0:
        raise ValueError("label_noise must lie in [0, 1]")
    rng = rng_for(seed, 21)
    basis = np.linalg.qr(rng.standard_normal((d, k)))[0].T
    z = rng.standard_normal((n, k))
    rule = rng.standard_normal(k)
    y = np.where(z @ rule > 0, 1, -1)
    y[rng.random(n) < label_noise] *= -1
    return LabeledDataset(z @ basis, y), basis


def build_counterfactual_dataset(source: LabeledDataset, n: int, restrict_group: Optional[int] = None,
                                 seed: int = 0, class_coords: Sequence[int] = (0,),
                                 class_shift: Optional[float] = None) -> LabeledDataset:
    """Pick n/2 source examples and pair each with its class-flipped copy.

    The copy moves each class-defining coordinate by ``-2 * y * class_shift``
    (mirror of the class mean, individual noise kept) and takes the opposite
    label; every other coordinate and tag is copied unchanged.
    ``class_shift`` defaults to half the gap between class means in ``source``.
    """
    if n <= 0 or n % 2:
        raise ValueError("n must be a positive even count")
    pool = np.arange(source.n)
    if restrict_group is not None:
        if source.group is None:
            raise ValueError("restrict_group needs a source with group tags")
        pool = pool[source.group == restrict_group]
    half = n // 2
    if len(pool) < half:
        raise ValueError(f"need {half} source examples, only {len(pool)} available")
    coords = list(class_coords)
    if class_shift is None:
        pos, neg = source.labels == 1, source.labels == -1
        if not pos.any() or not neg.any():
            raise ValueError("cannot infer class_shift from a single-class source")
        gap = source.features[pos][:, coords].mean(axis=0) - source.features[neg][:, coords].mean(axis=0)
        shift = gap / 2.0
    else:
        shift = np.full(len(coords), float(class_shift))

    rng = rng_for(seed, 11)
    pick = np.sort(rng.choice(pool, size=half, replace=False))
    orig = source.subset(pick)
    x_cf = orig.features.copy()
    x_cf[:, coords] -= 2.0 * orig.labels[:, None] * shift[None, :]
    order = np.stack([np.arange(half), np.arange(half) + half], axis=1).ravel()  # pairs adjacent
    x = np.concatenate([orig.features, x_cf])[order]
    y = np.concatenate([orig.labels, -orig.labels])[order]
    grp = None if orig.group is None else np.concatenate([orig.group, orig.group])[order]
    dom = None if orig.domain is None else np.concatenate([orig.domain, orig.domain])[order]
    return LabeledDataset(x, y, grp, dom)


@dataclass
class SupportReport:
    max_complement_norm: float
    mean_complement_norm: float
    reference_rank: int
    in_support: bool
    tol: float

    def to_dict(self):
        return asdict(self)


def support_check(reference: LabeledDataset, shifted: LabeledDataset, subspace_tol: float = 1e-10) -> SupportReport:
    """How far shifted inputs stick out of the span of the reference inputs."""
    if reference.dim != shifted.dim:
        raise ValueError("reference and shifted data live in different dimensions")
    s = data_subspace(reference)
    norms = np.linalg.norm(project_complement(shifted.features, s), axis=1) if shifted.n else np.zeros(0)
    mx = float(norms.max()) if norms.size else 0.0
    mean = float(norms.mean()) if norms.size else 0.0
    return SupportReport(mx, mean, s.dim, mx <= subspace_tol, subspace_tol)


def dataset_to_csv(data: LabeledDataset, path=None) -> str:
    """CSV with header ``f0..f{d-1},label,group,domain`` (empty tag cells when absent)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{j}" for j in range(data.dim)] + ["label", "group", "domain"])
    for i in range(data.n):
        row = [format(v, ".17g") for v in data.features[i]]
        row.append(str(int(data.labels[i])))
        row.append("" if data.group is None else str(int(data.group[i])))
        row.append("" if data.domain is None else str(int(data.domain[i])))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def dataset_from_csv(path_or_text) -> LabeledDataset:
    if "\n" in str(path_or_text):
        rows = list(csv.reader(io.StringIO(path_or_text)))
    else:
        with open(path_or_text, newline="") as fh:
            rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = header.index("label")
    x = np.array([[float(v) for v in r[:d]] for r in body]).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=int)

    def tags(col):
        vals = [r[col] for r in body]
        if not vals or all(v == "" for v in vals):
            return None
        return np.array([int(v) for v in vals])

    return LabeledDataset(x, y, tags(d + 1), tags(d + 2))


def spec_to_json(spec) -> str:
    return json.dumps({"type": type(spec).__name__, **asdict(spec)}, sort_keys=True)


def spec_from_json(text: str):
    data = json.loads(text)
    cls = {"GeneratorSpec": GeneratorSpec, "ShiftSpec": ShiftSpec}[data.pop("type")]
    if cls is ShiftSpec:
        if data.get("transform_dims") is not None:
            data["transform_dims"] = tuple(data["transform_dims"])
        data["group_rates"] = tuple(data["group_rates"])
    return cls(**data)

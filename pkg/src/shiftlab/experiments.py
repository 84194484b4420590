"""Experiment recipes behind the command-line interface.

Each ``cmd_*`` function takes a resolved :class:`ExperimentConfig`, an output
directory and a ``map_fn`` (builtin ``map`` or a pool's ordered map), computes
everything in memory and only then writes its files.  Per-trial seeds are
``derive_seed(seed, arm_id, trial)`` so results do not depend on the order in
which trials run.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .debias import balance_training_data, dfr_retrain
from .logreg import (GDConfig, LabeledDataset, NoMinimumError, accuracy, gradient_descent,
                     per_example_correct, theorem1_decompose)
from .numeric_core import Subspace, project
from .robustness import (AccuracyPoint, DegenerateFitError, baseline_sweep, clamp_for, corrected_examples,
                         effective_robustness, er_confidence_interval, overlap_report, probit_fit,
                         worst_group_accuracy)
from .shiftgen import (GeneratorSpec, ShiftSpec, build_counterfactual_dataset, dataset_to_csv, derive_seed,
                       generate_pair, generate_splits, pretraining_data, subspace_instance, support_check)
from .splitter import (calibration_curve, curve_to_csv, quadratic_features, split_shifted, split_to_csv,
                       threshold_sweep)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "dump_json",
    "COMMANDS",
]

# arm ids for seed derivation
ARM_BASELINE, ARM_PRETRAIN, ARM_INTERVENTION, ARM_SWEEP, ARM_THEOREM, ARM_SPLIT, ARM_CURATE = range(1, 8)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TheoremSection:
    n: int = 200
    d: int = 10
    k: int = 4
    label_noise: float = 0.1
    inits: int = 10
    init: str = "random"  # random | zero | inside
    tolerance: float = 1e-4
    drift_tolerance: float = 1e-10


@dataclass(frozen=True)
class SweepSection:
    fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    trials: int = 3
    init_scale: float = 1.0


@dataclass(frozen=True)
class ERSection:
    trials: int = 20
    pretrain_n: int = 4000
    bootstrap: int = 1000
    level: float = 0.95


@dataclass(frozen=True)
class SplitSection:
    folds: int = 10
    threshold: float = 0.2
    calib_frac: float = 0.1
    bins: int = 100
    level: float = 0.95
    features: str = "quadratic"  # raw | quadratic; raw linear scores miss symmetric off-subspace offsets
    thresholds: tuple = (0.05, 0.1, 0.2, 0.5, 1.0)
    per_split_er: bool = False


@dataclass(frozen=True)
class CombineSection:
    trials: int = 100
    intervention: str = "balance"  # balance | dfr | none
    threshold: float = 0.5
    pretrain_n: int = 4000


@dataclass(frozen=True)
class CurateSection:
    n: int = 64
    trials: int = 20
    restrict_group: int = 0
    scratch_sizes: tuple = (64, 128, 256, 512, 1024)
    pretrain_n: int = 4000


SECTIONS = {
    "theorem": TheoremSection,
    "sweep": SweepSection,
    "er": ERSection,
    "split": SplitSection,
    "combine": CombineSection,
    "curate": CurateSection,
}

DEFAULT_SHIFT = {
    "combine": {"kind": "combined", "p_spurious": 0.8},
    "curate": {"kind": "group_imbalance"},
}

DEFAULT_GD = {
    "theorem-check": {"grad_tol": 1e-9, "max_steps": 500_000},
}
FAST_GD = {"grad_tol": 1e-6, "max_steps": 20_000}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int
    run_id: str
    generator: GeneratorSpec
    shift: ShiftSpec
    gd: GDConfig
    theorem: TheoremSection = TheoremSection()
    sweep: SweepSection = SweepSection()
    er: ERSection = ERSection()
    split: SplitSection = SplitSection()
    combine: CombineSection = CombineSection()
    curate: CurateSection = CurateSection()

    def to_dict(self) -> dict:
        out = {"command": self.command, "seed": self.seed, "run_id": self.run_id}
        for name in ("generator", "shift", "gd") + tuple(SECTIONS):
            out[name] = _plain(dataclasses.asdict(getattr(self, name)))
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, raw, where, skip=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in raw:
            v = raw[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def load_config(command: str, raw: Optional[dict] = None, seed: Optional[int] = None) -> ExperimentConfig:
    """Resolve a JSON-style dict into an :class:`ExperimentConfig`.

    Unknown keys anywhere are errors.  ``seed`` (from the command line) wins
    over the config's own ``seed``; the generator always uses the resolved seed.
    """
    raw = dict(raw or {})
    top = {"seed", "run_id", "generator", "shift", "gd"} | set(SECTIONS)
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    base_seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(base_seed, int) or isinstance(base_seed, bool) or not 0 <= base_seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    gen_raw = dict(raw.get("generator") or {})
    gen = _build(GeneratorSpec, gen_raw, "generator", skip=("seed",))
    gen = dataclasses.replace(gen, seed=base_seed)
    shift_raw = {**DEFAULT_SHIFT.get(command, {}), **(raw.get("shift") or {})}
    shift = _build(ShiftSpec, shift_raw, "shift")
    try:
        shift.resolved_dims(gen)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gd_raw = {**DEFAULT_GD.get(command, FAST_GD), **(raw.get("gd") or {})}
    gd = _build(GDConfig, gd_raw, "gd")
    sections = {name: _build(cls, raw.get(name), name) for name, cls in SECTIONS.items()}
    run_id = raw.get("run_id", command)
    if not isinstance(run_id, str) or not run_id:
        raise ConfigError("run_id must be a non-empty string")
    cfg = ExperimentConfig(command, int(base_seed), run_id, gen, shift, gd, **sections)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    t = cfg.theorem
    if t.init not in ("random", "zero", "inside"):
        raise ConfigError("theorem.init must be random, zero or inside")
    if t.inits < 1 or t.n < 1 or not 0 < t.k <= t.d:
        raise ConfigError("theorem needs inits >= 1, n >= 1 and 0 < k <= d")
    if any(not 0 < f <= 1 for f in cfg.sweep.fractions):
        raise ConfigError("sweep.fractions must lie in (0, 1]")
    if cfg.sweep.trials < 0 or cfg.er.trials < 0 or cfg.combine.trials < 0 or cfg.curate.trials < 1:
        raise ConfigError("trial counts must be non-negative (curate needs at least one)")
    if cfg.split.features not in ("raw", "quadratic"):
        raise ConfigError("split.features must be raw or quadratic")
    if cfg.combine.intervention not in ("balance", "dfr", "none"):
        raise ConfigError("combine.intervention must be balance, dfr or none")
    if cfg.command == "combine" and cfg.shift.kind not in ("combined", "spurious"):
        raise ConfigError("combine needs a spurious or combined shift")
    if cfg.command == "curate":
        if cfg.shift.kind != "group_imbalance":
            raise ConfigError("curate needs the group_imbalance shift")
        if cfg.curate.n <= 0 or cfg.curate.n % 2 or any(s <= 0 or s % 2 for s in cfg.curate.scratch_sizes):
            raise ConfigError("curated dataset sizes must be positive and even")


# ---------------------------------------------------------------- output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _json_value(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_json_value(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _json_value(obj.tolist(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(obj, indent: int = 2) -> str:
    """Deterministic JSON: keys in insertion order, floats to 17 significant digits, NaN as null."""
    return _json_value(obj, indent, 0) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


@dataclass
class Outcome:
    """Files to write plus the process exit status."""

    files: dict = field(default_factory=dict)
    exit_code: int = 0

    def write(self, out_dir: str, run_id: Optional[str] = None):
        """Write every file into ``out_dir``.

        A directory already holding the report of a different run id is
        refused, so each run id owns its output paths.
        """
        prev = os.path.join(out_dir, "report.json")
        if run_id is not None and os.path.exists(prev):
            with open(prev) as fh:
                try:
                    owner = json.load(fh).get("run_id")
                except ValueError:
                    owner = None
            if owner != run_id:
                raise ConfigError(f"{out_dir} holds output of run {owner!r}, not {run_id!r}")
        os.makedirs(out_dir, exist_ok=True)
        for name in sorted(self.files):
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                fh.write(self.files[name])


def _report(cfg: ExperimentConfig, status: str, **results) -> str:
    return dump_json({"command": cfg.command, "run_id": cfg.run_id, "seed": cfg.seed, "status": status,
                      "config": cfg.to_dict(), **results})


def _points_rows(points, kind):
    return [(kind, p.tag, p.acc_ref, p.acc_shift) for p in points]


def _fit_dict(fit):
    return {"a": fit.a, "b": fit.b, "r_squared": fit.r_squared, "n_points": fit.n_points, "clamp": fit.clamp}


def _fit_curve(fit, points, samples: int = 101):
    lo = min(p.acc_ref for p in points)
    hi = max(p.acc_ref for p in points)
    grid = np.linspace(lo, hi, samples)
    return _csv(["acc_ref", "acc_shift_fit"], [(float(g), float(fit.predict(g))) for g in grid])


# ---------------------------------------------------------------- theorem-check


def _theorem_job(args):
    i, w0, data, basis, gd = args
    dec = theorem1_decompose(w0, data, gd, Subspace(data.dim, basis))
    return {"init": i, "residual": dec.residual, "in_residual": dec.in_residual,
            "orth_residual": dec.orth_residual, "max_orth_drift": dec.max_orth_drift,
            "steps": dec.trace.steps, "reason": dec.trace.reason,
            "final_grad_norm": dec.trace.grad_norms[-1]}


def cmd_theorem_check(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    t = cfg.theorem
    data, basis = subspace_instance(t.n, t.d, t.k, t.label_noise, cfg.seed)
    s = Subspace(t.d, basis)
    inits = []
    for i in range(t.inits):
        rng = np.random.default_rng(derive_seed(cfg.seed, ARM_THEOREM, i))
        if t.init == "zero":
            w0 = np.zeros(t.d)
        else:
            w0 = rng.standard_normal(t.d)
            if t.init == "inside":
                w0 = project(w0, s)
            w0 /= np.linalg.norm(w0)
        inits.append((i, w0, data, basis, cfg.gd))
    try:
        rows = list(map_fn(_theorem_job, inits))
    except NoMinimumError as exc:
        return Outcome({"report.json": _report(cfg, "no-minimum", message=str(exc), runs=[])}, 2)
    worst = max(r["residual"] for r in rows)
    drift = max(r["max_orth_drift"] for r in rows)
    ok = worst <= t.tolerance and drift <= t.drift_tolerance and all(r["reason"] == "converged" for r in rows)
    rep = _report(cfg, "pass" if ok else "fail", max_residual=worst, max_orth_drift=drift,
                  tolerance=t.tolerance, drift_tolerance=t.drift_tolerance, runs=rows)
    return Outcome({"report.json": rep}, 0 if ok else 1)


# ---------------------------------------------------------------- gen


def cmd_gen(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    sp = generate_splits(cfg.generator, cfg.shift)
    sup = support_check(sp["train"], sp["shift_test"])
    files = {
        "reference.csv": dataset_to_csv(sp["train"]),
        "ref_test.csv": dataset_to_csv(sp["ref_test"]),
        "shifted.csv": dataset_to_csv(sp["shift_test"]),
    }
    files["report.json"] = _report(cfg, "ok", support=sup.to_dict(),
                                   sizes={k: v.n for k, v in sp.items()})
    return Outcome(files)


# ---------------------------------------------------------------- sweep / er


def _baseline(cfg, sp, map_fn, shift_test=None):
    sw = cfg.sweep
    return baseline_sweep(sp["train"], sp["ref_test"], sp["shift_test"] if shift_test is None else shift_test,
                          sw.fractions, sw.trials, cfg.gd, derive_seed(cfg.seed, ARM_SWEEP), sw.init_scale,
                          map_fn=map_fn)


def _pretrained_weights(gen, n, seed, gd):
    pre = pretraining_data(gen, n, seed)
    tr = gradient_descent(np.zeros(gen.ambient_dim), pre, gd)
    if tr.reason == "diverged":
        raise NoMinimumError("pre-training task is separable")
    return tr.weights


def _finetune(w_init, data, gd, allow_interpolation=False):
    """Fine-tune to convergence.

    Separable data has no minimizer; with ``allow_interpolation`` training then
    stops at the first iterate that fits every example (the orthogonal
    component is still exactly the initialization's) instead of raising.
    """
    tr = gradient_descent(w_init, data, gd)
    if tr.reason == "diverged":
        if allow_interpolation:
            return tr.weights, True
        raise NoMinimumError("fine-tuning data is separable")
    return (tr.weights, False) if allow_interpolation else tr.weights


def _er_job(args):
    t, cfg, train, evals = args
    wp = _pretrained_weights(cfg.generator, cfg.er.pretrain_n, derive_seed(cfg.seed, ARM_PRETRAIN, t), cfg.gd)
    w = _finetune(wp, train, cfg.gd)
    return [(accuracy(w, r), accuracy(w, s)) for r, s in evals]


def cmd_sweep(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    sp = generate_splits(cfg.generator, cfg.shift)
    try:
        pts = _baseline(cfg, sp, map_fn)
        fit = probit_fit(pts, clamp_for(cfg.generator.n_test)) if pts else None
    except NoMinimumError as exc:
        return Outcome({"report.json": _report(cfg, "no-minimum", message=str(exc))}, 2)
    except DegenerateFitError as exc:
        files = {"points.csv": _csv(["kind", "tag", "acc_ref", "acc_shift"], _points_rows(pts, "baseline"))}
        files["report.json"] = _report(cfg, "degenerate-fit", message=str(exc))
        return Outcome(files, 3)
    files = {"points.csv": _csv(["kind", "tag", "acc_ref", "acc_shift"], _points_rows(pts, "baseline"))}
    if fit is not None:
        files["fit_curve.csv"] = _fit_curve(fit, pts)
    files["report.json"] = _report(cfg, "ok", n_points=len(pts), fit=None if fit is None else _fit_dict(fit))
    return Outcome(files)


def cmd_er(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    header = ["kind", "tag", "acc_ref", "acc_shift"]
    if cfg.er.trials == 0:
        return Outcome({"er.csv": _csv(["trial", "acc_ref", "acc_shift", "er"], []),
                        "report.json": _report(cfg, "ok", trials=[], mean_er=None)})
    sp = generate_splits(cfg.generator, cfg.shift)
    try:
        pts = _baseline(cfg, sp, map_fn)
        fit = probit_fit(pts, clamp_for(cfg.generator.n_test))
        jobs = [(t, cfg, sp["train"], [(sp["ref_test"], sp["shift_test"])]) for t in range(cfg.er.trials)]
        accs = [r[0] for r in map_fn(_er_job, jobs)]
    except NoMinimumError as exc:
        return Outcome({"report.json": _report(cfg, "no-minimum", message=str(exc))}, 2)
    except DegenerateFitError as exc:
        files = {"points.csv": _csv(header, _points_rows(pts, "baseline"))}
        files["report.json"] = _report(cfg, "degenerate-fit", message=str(exc))
        return Outcome(files, 3)
    models = [AccuracyPoint(a, s, f"pretrained/t={t}") for t, (a, s) in enumerate(accs)]
    ers = [effective_robustness(fit, m) for m in models]
    ci = er_confidence_interval(fit, models, cfg.er.bootstrap, cfg.er.level,
                                derive_seed(cfg.seed, ARM_PRETRAIN)) if cfg.er.bootstrap >= 100 else None
    files = {
        "points.csv": _csv(header, _points_rows(pts, "baseline") + _points_rows(models, "pretrained")),
        "er.csv": _csv(["trial", "acc_ref", "acc_shift", "er"],
                       [(t, m.acc_ref, m.acc_shift, e) for t, (m, e) in enumerate(zip(models, ers))]),
        "fit_curve.csv": _fit_curve(fit, pts + models),
    }
    files["report.json"] = _report(
        cfg, "ok", fit=_fit_dict(fit), mean_er=float(np.mean(ers)),
        er_interval=None if ci is None else list(ci),
        interval_method="percentile bootstrap over pre-trained trials (fit held fixed)",
        in_support=cfg.shift.in_support, trials=[{"trial": t, "er": e} for t, e in enumerate(ers)])
    return Outcome(files)


# ---------------------------------------------------------------- split


def cmd_split(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    sc = cfg.split
    sp = generate_splits(cfg.generator, cfg.shift)
    ref, sh = sp["train"], sp["shift_test"]
    fmap = quadratic_features if sc.features == "quadratic" else None
    try:
        res = split_shifted(sh, ref, sc.folds, sc.threshold, seed=derive_seed(cfg.seed, ARM_SPLIT),
                            calib_frac=sc.calib_frac, feature_map=fmap, map_fn=map_fn)
    except ValueError as exc:
        return Outcome({"report.json": _report(cfg, "error", message=str(exc))}, 1)
    curve = calibration_curve(res.calibration_probs, res.calibration_labels, sc.bins, sc.level)
    files = {"split.csv": split_to_csv(res), "calibration.csv": curve_to_csv(curve)}
    results = {
        "n_shifted": sh.n,
        "in_support": int(res.in_support.size),
        "out_of_support": int(res.out_of_support.size),
        "in_support_fraction": res.in_support.size / sh.n,
        "threshold": res.threshold,
        "threshold_sweep": [{"threshold": t, "out_of_support": c} for t, c in threshold_sweep(res.ratio, sc.thresholds)],
        "separable_folds": list(res.separable_folds),
        "temperatures": list(res.alphas),
        "calibration_note": "curve built from each fold's held-out calibration pool (10% of its training pool by default)",
    }
    status, code = "ok", 0
    if sc.per_split_er:
        try:
            results["per_split_er"] = _per_split_er(cfg, sp, res, map_fn)
        except NoMinimumError as exc:
            status, code = "no-minimum", 2
            results["message"] = str(exc)
        except DegenerateFitError as exc:
            status, code = "degenerate-fit", 3
            results["message"] = str(exc)
    files["report.json"] = _report(cfg, status, **results)
    return Outcome(files, code)


def _per_split_er(cfg, sp, res, map_fn):
    out = {}
    parts = {"in": res.in_support, "out": res.out_of_support}
    evals = [(sp["ref_test"], sp["shift_test"].subset(idx)) for idx in parts.values() if idx.size]
    names = [k for k, idx in parts.items() if idx.size]
    jobs = [(t, cfg, sp["train"], evals) for t in range(cfg.er.trials)]
    accs = list(map_fn(_er_job, jobs))
    for j, name in enumerate(names):
        pts = _baseline(cfg, sp, map_fn, shift_test=evals[j][1])
        fit = probit_fit(pts, clamp_for(evals[j][1].n))
        models = [AccuracyPoint(*a[j]) for a in accs]
        ers = [effective_robustness(fit, m) for m in models]
        out[name] = {"n": evals[j][1].n, "fit": _fit_dict(fit),
                     "mean_er": float(np.mean(ers)) if ers else None}
    return out


# ---------------------------------------------------------------- combine

ARMS = ("baseline", "pretrain", "intervention", "pretrain+intervention")


def _combine_job(args):
    t, cfg, sp = args
    gd, gen, shift = cfg.gd, cfg.generator, cfg.shift
    train, ref_test, shift_test = sp["train"], sp["ref_test"], sp["shift_test"]
    w0 = np.random.default_rng(derive_seed(cfg.seed, ARM_BASELINE, t)).normal(0.0, cfg.sweep.init_scale,
                                                                             gen.ambient_dim)
    wp = _pretrained_weights(gen, cfg.combine.pretrain_n, derive_seed(cfg.seed, ARM_PRETRAIN, t), gd)
    kind = cfg.combine.intervention
    out = {}
    w_base = _finetune(w0, train, gd)
    w_pre = _finetune(wp, train, gd)
    out["baseline"] = _linear_eval(w_base, ref_test, shift_test)
    out["pretrain"] = _linear_eval(w_pre, ref_test, shift_test)
    if kind == "balance":
        bal = balance_training_data(train, shift, gen, derive_seed(cfg.seed, ARM_INTERVENTION, t))
        out["intervention"] = _linear_eval(_finetune(w0, bal, gd), ref_test, shift_test)
        out["pretrain+intervention"] = _linear_eval(_finetune(wp, bal, gd), ref_test, shift_test)
    elif kind == "dfr":
        val = sp["validation"]
        for arm, w in (("intervention", w_base), ("pretrain+intervention", w_pre)):
            m = dfr_retrain(w, val, gd)
            out[arm] = (m.accuracy(ref_test), m.accuracy(shift_test), m.per_example_correct(shift_test))
    else:
        out["intervention"] = out["baseline"]
        out["pretrain+intervention"] = out["pretrain"]
    return out


def _linear_eval(w, ref_test, shift_test):
    return accuracy(w, ref_test), accuracy(w, shift_test), per_example_correct(w, shift_test)


def cmd_combine(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    cc = cfg.combine
    sp = generate_splits(cfg.generator, cfg.shift)
    if cc.intervention == "dfr":
        # held-out reference-distribution sample with group tags for the last-layer refit
        vgen = dataclasses.replace(cfg.generator, seed=derive_seed(cfg.generator.seed, ARM_INTERVENTION),
                                   n_train=cfg.generator.n_test, n_test=1)
        sp["validation"] = generate_pair(vgen, cfg.shift)[0]
    try:
        pts = _baseline(cfg, sp, map_fn)
        fit = probit_fit(pts, clamp_for(cfg.generator.n_test))
        runs = list(map_fn(_combine_job, [(t, cfg, sp) for t in range(cc.trials)]))
    except NoMinimumError as exc:
        return Outcome({"report.json": _report(cfg, "no-minimum", message=str(exc))}, 2)
    except DegenerateFitError as exc:
        return Outcome({"report.json": _report(cfg, "degenerate-fit", message=str(exc))}, 3)
    rows, wins = [], {a: 0 for a in ARMS}
    for t, run in enumerate(runs):
        accs = {a: run[a][1] for a in ARMS}
        best = max(accs.values())
        leaders = [a for a in ARMS if accs[a] == best]
        if len(leaders) == 1:
            wins[leaders[0]] += 1
        for a in ARMS:
            pt = AccuracyPoint(run[a][0], run[a][1])
            rows.append((t, a, pt.acc_ref, pt.acc_shift, effective_robustness(fit, pt)))
    summary = {}
    for a in ARMS:
        ers = [r[4] for r in rows if r[1] == a]
        summary[a] = {"mean_acc_shift": float(np.mean([r[3] for r in rows if r[1] == a])) if ers else None,
                      "mean_er": float(np.mean(ers)) if ers else None, "sole_best_runs": wins[a]}
    files = {"arms.csv": _csv(["trial", "arm", "acc_ref", "acc_shift", "er"], rows),
             "points.csv": _csv(["kind", "tag", "acc_ref", "acc_shift"], _points_rows(pts, "baseline"))}
    results = {"fit": _fit_dict(fit), "arms": summary, "trials": cc.trials}
    if cc.trials:
        base = np.array([r["baseline"][2] for r in runs])
        sets = {a: corrected_examples(base, np.array([r[a][2] for r in runs]), cc.threshold) for a in ARMS[1:]}
        results["corrected"] = {a: len(s) for a, s in sets.items()}
        results["overlap"] = overlap_report(sets, combined="pretrain+intervention")
        files["corrected.csv"] = _csv(["arm", "index"], [(a, int(i)) for a in ARMS[1:] for i in sets[a].indices])
    files["report.json"] = _report(cfg, "ok", **results)
    return Outcome(files)


# ---------------------------------------------------------------- curate


def _group_eval(w, test):
    c = per_example_correct(w, test)
    cells = 2 * test.group + (test.labels > 0)
    wga, worst = worst_group_accuracy(c, cells)

    def balanced(g):
        m = test.group == g
        return float(np.mean([c[m & (test.labels == y)].mean() for y in (-1, 1)]))

    return {"accuracy": float(c.mean()), "worst_group_accuracy": wga, "worst_cell": int(worst),
            "balanced_acc_group0": balanced(0), "balanced_acc_group1": balanced(1)}


def _curate_job(args):
    arm, n, t, cfg, train, test = args
    gen, gd, cc = cfg.generator, cfg.gd, cfg.curate
    if arm.startswith("pretrained"):
        w0 = _pretrained_weights(gen, cc.pretrain_n, derive_seed(cfg.seed, ARM_PRETRAIN, t), gd)
    else:
        w0 = np.random.default_rng(derive_seed(cfg.seed, ARM_BASELINE, t)).normal(
            0.0, cfg.sweep.init_scale, gen.ambient_dim)
    if arm.endswith("curated"):
        data = build_counterfactual_dataset(train, n, cc.restrict_group, derive_seed(cfg.seed, ARM_CURATE, n, t),
                                            class_coords=gen.signal_coords)
    else:
        data = train
    w, interpolated = _finetune(w0, data, gd, allow_interpolation=True)
    return {**_group_eval(w, test), "interpolated": interpolated}


def cmd_curate(cfg: ExperimentConfig, map_fn: Callable = map) -> Outcome:
    cc = cfg.curate
    sp = generate_splits(cfg.generator, cfg.shift)
    train, test = sp["train"], sp["shift_test"]
    jobs = []
    for t in range(cc.trials):
        jobs.append(("scratch/full", train.n, t, cfg, train, test))
        jobs.append(("pretrained/full", train.n, t, cfg, train, test))
        jobs.append(("pretrained/curated", cc.n, t, cfg, train, test))
        for n in cc.scratch_sizes:
            jobs.append(("scratch/curated", n, t, cfg, train, test))
    try:
        res = list(map_fn(_curate_job, jobs))
    except NoMinimumError as exc:
        return Outcome({"report.json": _report(cfg, "no-minimum", message=str(exc))}, 2)
    keys = ["accuracy", "worst_group_accuracy", "balanced_acc_group0", "balanced_acc_group1"]
    rows = [(j[0], j[1], j[2]) + tuple(r[k] for k in keys) + (r["worst_cell"], int(r["interpolated"]))
            for j, r in zip(jobs, res)]
    table = {}
    for (arm, n, *_), r in zip(jobs, res):
        table.setdefault((arm, n), []).append(r)
    summary = [{"arm": arm, "n": n, **{k: float(np.mean([r[k] for r in rs])) for k in keys},
                "interpolated_runs": sum(r["interpolated"] for r in rs)}
               for (arm, n), rs in table.items()]
    by = {(s["arm"], s["n"]): s for s in summary}
    pre_cur = by[("pretrained/curated", cc.n)]
    pre_full = by[("pretrained/full", train.n)]
    reach = [s["n"] for s in summary if s["arm"] == "scratch/curated" and s["accuracy"] >= pre_cur["accuracy"]]
    needed = min(reach) if reach else None
    curated = build_counterfactual_dataset(train, cc.n, cc.restrict_group, derive_seed(cfg.seed, ARM_CURATE, cc.n, 0),
                                           class_coords=cfg.generator.signal_coords)
    results = {
        "summary": summary,
        "wga_gain_curated_vs_full": pre_cur["worst_group_accuracy"] - pre_full["worst_group_accuracy"],
        "scratch_examples_to_match": needed,
        "scratch_examples_ratio": None if needed is None else needed / cc.n,
        "scratch_sizes_tried": list(cc.scratch_sizes),
        "curated_max_abs_correlation": max_nonclass_correlation(curated, cfg.generator.signal_coords),
    }
    files = {"arms.csv": _csv(["arm", "n", "trial"] + keys + ["worst_cell", "interpolated"], rows),
             "report.json": _report(cfg, "ok", **results)}
    return Outcome(files)


def max_nonclass_correlation(data: LabeledDataset, class_coords) -> float:
    """Largest |corr(coordinate, label)| over non-constant coordinates outside ``class_coords``."""
    y = data.labels.astype(float)
    best = 0.0
    for j in range(data.dim):
        if j in class_coords:
            continue
        x = data.features[:, j]
        if np.ptp(x) == 0.0:
            continue
        best = max(best, abs(float(np.corrcoef(x, y)[0, 1])))
    return best


COMMANDS = {
    "theorem-check": cmd_theorem_check,
    "gen": cmd_gen,
    "sweep": cmd_sweep,
    "er": cmd_er,
    "split": cmd_split,
    "combine": cmd_combine,
    "curate": cmd_curate,
}

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shiftlab.logreg import LabeledDataset, accuracy
from shiftlab.shiftgen import (GeneratorSpec, ShiftSpec, apply_shift, build_counterfactual_dataset, dataset_from_csv,
                               dataset_to_csv, derive_seed, flip_matrix, generate_pair, generate_splits,
                               pretraining_data, spec_from_json, spec_to_json, support_check)

BIG = GeneratorSpec(n_train=10_000, n_test=10_000, seed=3)


# ---------------------------------------------------------------- specs

def test_generator_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec(ambient_dim=8, subspace_dim=8)
    with pytest.raises(ValueError):
        GeneratorSpec(noise_sigma=0.0)


@pytest.mark.parametrize("kw", [dict(kind="rotate"), dict(p_spurious=1.5), dict(p_minority=-0.1),
                                dict(group_rates=(0.2,)), dict(group_scale=0.0)])
def test_shift_spec_validation(kw):
    with pytest.raises(ValueError):
        ShiftSpec(**kw)


@pytest.mark.parametrize("shift", [ShiftSpec("unseen_transform", transform_dims=(2,)),
                                   ShiftSpec("flip", transform_dims=(3,)),
                                   ShiftSpec("spurious", transform_dims=(12,)),
                                   ShiftSpec("label_shift", transform_dims=(1,))])
def test_invalid_transform_dims(shift):
    with pytest.raises(ValueError):
        generate_pair(GeneratorSpec(n_train=10, n_test=10), shift)


def test_reference_zero_outside_subspace():
    gen = GeneratorSpec(n_train=300, n_test=10)
    for kind in ("spurious", "label_shift", "unseen_transform", "flip", "combined", "group_imbalance"):
        ref, _ = generate_pair(gen, ShiftSpec(kind))
        assert np.all(ref.features[:, gen.subspace_dim:] == 0.0)


# ---------------------------------------------------------------- shift contracts

def test_spurious_rate_half():
    gen = GeneratorSpec(n_train=10_000, n_test=100, seed=1)
    ref, sh = generate_pair(gen, ShiftSpec("spurious", p_spurious=0.5))
    tint = ref.features[:, gen.tint_coord]
    class_specific = np.mean(tint == ref.labels)
    # a random tint in U[-1, 1] hits +-1 with probability zero
    assert abs(class_specific - 0.5) <= 0.03
    assert np.mean(sh.features[:, gen.tint_coord] == sh.labels) == 0.0


def test_label_shift_minority_mass():
    ref, sh = generate_pair(BIG, ShiftSpec("label_shift", p_minority=0.2))
    assert abs(np.mean(ref.labels == 1) - 0.2) <= 0.02
    assert abs(np.mean(sh.labels == 1) - 0.8) <= 0.02


def test_label_shift_class_conditionals_match():
    ref, sh = generate_pair(BIG, ShiftSpec("label_shift", p_minority=0.2))
    k = BIG.subspace_dim
    for c in (-1, 1):
        a, b = ref.features[ref.labels == c, :k], sh.features[sh.labels == c, :k]
        sd = np.sqrt(a.var(axis=0) / len(a) + b.var(axis=0) / len(b))
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 4 * sd + 1e-12)


def test_flip_accuracy_identity():
    # shifted inputs are x R with R a symmetric reflection, so w scores x R exactly as R w scores x
    gen = GeneratorSpec(n_train=500, n_test=500, seed=4)
    shift = ShiftSpec("flip")
    ref, _ = generate_pair(gen, shift)
    sh = apply_shift(ref, gen, shift)
    r = flip_matrix(gen, shift)
    assert np.array_equal(r, r.T) and np.array_equal(r @ r, np.eye(gen.ambient_dim))
    rng = np.random.default_rng(0)
    for _ in range(10):
        w = rng.standard_normal(gen.ambient_dim)
        assert accuracy(w, sh) == accuracy(r @ w, ref)


def test_unseen_transform_support_norm():
    gen = GeneratorSpec(n_train=400, n_test=400, seed=2)
    shift = ShiftSpec("unseen_transform", offset=1.0)
    ref, sh = generate_pair(gen, shift)
    rep = support_check(ref, sh)
    assert rep.max_complement_norm >= shift.mix_weight * shift.offset * (1 - 1e-9)
    assert not rep.in_support


def test_flip_support_norm_positive():
    ref, sh = generate_pair(GeneratorSpec(n_train=400, n_test=400), ShiftSpec("flip"))
    assert support_check(ref, sh).max_complement_norm > 0


@pytest.mark.parametrize("shift", [ShiftSpec("spurious"), ShiftSpec("label_shift"), ShiftSpec("group_imbalance")])
def test_in_support_kinds_inside_subspace(shift):
    ref, sh = generate_pair(GeneratorSpec(n_train=500, n_test=500), shift)
    rep = support_check(ref, sh)
    assert rep.max_complement_norm <= 1e-10 and rep.in_support


def test_combined_is_tinted_then_offset():
    gen = GeneratorSpec(n_train=5000, n_test=500)
    ref, sh = generate_pair(gen, ShiftSpec("combined", p_spurious=0.8))
    assert abs(np.mean(ref.features[:, gen.tint_coord] == ref.labels) - 0.8) <= 0.02
    assert np.mean(sh.features[:, gen.tint_coord] == sh.labels) == 0.0
    assert not support_check(ref, sh).in_support


def test_group_imbalance_rates():
    gen = GeneratorSpec(n_train=20_000, n_test=4000, seed=5)
    ref, sh = generate_pair(gen, ShiftSpec("group_imbalance"))
    for g, rate in ((0, 0.24), (1, 0.02)):
        assert abs(np.mean(ref.labels[ref.group == g] == 1) - rate) <= 0.015
    # evaluation population: all four (group, class) cells about equal
    cells = np.bincount(2 * sh.group + (sh.labels == 1), minlength=4) / sh.n
    assert np.all(np.abs(cells - 0.25) <= 0.03)


@pytest.mark.parametrize("p", [0.2, 0.35, 0.5, 0.65, 0.8, 0.9])
def test_bias_sweep_p_spurious(p):
    generate_pair(GeneratorSpec(n_train=50, n_test=50), ShiftSpec("spurious", p_spurious=p))


@pytest.mark.parametrize("p", [0.05, 0.1, 0.2, 0.3])
def test_bias_sweep_p_minority(p):
    generate_pair(GeneratorSpec(n_train=50, n_test=50), ShiftSpec("label_shift", p_minority=p))


# ---------------------------------------------------------------- determinism and seeds

@pytest.mark.parametrize("kind", ["spurious", "unseen_transform", "combined", "group_imbalance"])
def test_determinism(kind):
    gen = GeneratorSpec(n_train=200, n_test=200, seed=17)
    a = generate_splits(gen, ShiftSpec(kind))
    b = generate_splits(gen, ShiftSpec(kind))
    for key in a:
        assert dataset_to_csv(a[key]) == dataset_to_csv(b[key])


def test_seed_changes_data():
    a, _ = generate_pair(GeneratorSpec(n_train=50, n_test=5, seed=1), ShiftSpec())
    b, _ = generate_pair(GeneratorSpec(n_train=50, n_test=5, seed=2), ShiftSpec())
    assert not np.array_equal(a.features, b.features)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 1000), max_size=3))
def test_derive_seed_is_u64_and_stable(base, keys):
    s = derive_seed(base, *keys)
    assert 0 <= s < 2**64 and s == derive_seed(base, *keys)


def test_derive_seed_separates_keys():
    seeds = {derive_seed(0, a, t) for a in range(8) for t in range(50)}
    assert len(seeds) == 400


def test_pretraining_data_spans_space():
    gen = GeneratorSpec()
    data = pretraining_data(gen, 500, seed=0)
    assert np.linalg.matrix_rank(data.features) == gen.ambient_dim


# ---------------------------------------------------------------- counterfactual builder

def test_counterfactual_single_pair():
    src = LabeledDataset(np.array([[1.0, 0.3, -2.0]]), [1])
    cf = build_counterfactual_dataset(src, 2, class_shift=1.0)
    assert cf.n == 2 and cf.labels.tolist() == [1, -1]
    diff = cf.features[0] != cf.features[1]
    assert diff.tolist() == [True, False, False]


def test_counterfactual_64_group0():
    gen = GeneratorSpec(n_train=2000, n_test=10, seed=0)
    ref, _ = generate_pair(gen, ShiftSpec("group_imbalance"))
    cf = build_counterfactual_dataset(ref, 64, restrict_group=0, class_coords=gen.signal_coords)
    assert cf.n == 64
    assert np.all(cf.group == 0)
    assert np.sum(cf.labels == 1) == 32 and np.sum(cf.labels == -1) == 32


def test_counterfactual_spurious_correlation_zero():
    gen = GeneratorSpec(n_train=3000, n_test=10, seed=0)
    ref, _ = generate_pair(gen, ShiftSpec("spurious", p_spurious=0.9))
    cf = build_counterfactual_dataset(ref, 200, class_coords=gen.signal_coords)
    r = np.corrcoef(cf.features[:, gen.tint_coord], cf.labels)[0, 1]
    assert abs(r) <= 1e-12


@pytest.mark.parametrize("n", [0, 3, -2])
def test_counterfactual_bad_n(n):
    src = LabeledDataset(np.ones((4, 2)), [1, -1, 1, -1])
    with pytest.raises(ValueError):
        build_counterfactual_dataset(src, n, class_shift=1.0)


def test_counterfactual_insufficient_source():
    src = LabeledDataset(np.ones((4, 2)), [1, -1, 1, -1], group=[0, 1, 1, 1])
    with pytest.raises(ValueError):
        build_counterfactual_dataset(src, 4, restrict_group=0, class_shift=1.0)


# ---------------------------------------------------------------- serialization

def test_csv_round_trip(tmp_path):
    ref, _ = generate_pair(GeneratorSpec(n_train=30, n_test=5), ShiftSpec("spurious"))
    path = tmp_path / "d.csv"
    text = dataset_to_csv(ref, path)
    assert text.splitlines()[0] == ",".join([f"f{j}" for j in range(16)] + ["label", "group", "domain"])
    back = dataset_from_csv(path)
    assert np.array_equal(back.features, ref.features)
    assert np.array_equal(back.labels, ref.labels)
    assert np.array_equal(back.group, ref.group)


def test_csv_round_trip_without_tags():
    data = LabeledDataset(np.array([[0.1, 1 / 3]]), [-1])
    back = dataset_from_csv(dataset_to_csv(data))
    assert back.group is None and back.domain is None
    assert back.features[0, 1] == 1 / 3


@pytest.mark.parametrize("spec", [GeneratorSpec(seed=5), ShiftSpec("combined", transform_dims=(9, 10)),
                                  ShiftSpec("group_imbalance", group_rates=(0.3, 0.1))])
def test_spec_json_round_trip(spec):
    assert spec_from_json(spec_to_json(spec)) == spec

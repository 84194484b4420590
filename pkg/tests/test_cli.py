import filecmp
import json
import os

import pytest

from shiftlab.cli import main
from shiftlab.experiments import COMMANDS, ConfigError, load_config

SMALL_GEN = {"n_train": 400, "n_test": 800}
SMALL = {
    "theorem-check": {"theorem": {"inits": 3}},
    "gen": {"generator": {"n_train": 50, "n_test": 50}},
    "sweep": {"generator": SMALL_GEN, "sweep": {"trials": 2}},
    "er": {"generator": SMALL_GEN, "sweep": {"trials": 2}, "er": {"trials": 3, "pretrain_n": 500, "bootstrap": 200}},
    "split": {"generator": SMALL_GEN, "split": {"folds": 4}},
    "combine": {"generator": {"n_train": 1000, "n_test": 800}, "sweep": {"trials": 1}, "combine": {"trials": 3, "pretrain_n": 500}},
    "curate": {"generator": SMALL_GEN, "sweep": {"trials": 1},
               "curate": {"trials": 2, "pretrain_n": 500, "scratch_sizes": [64, 128]}},
}


def cli(tmp_path, command, config=None, *extra, name="out"):
    args = [command, "--out", str(tmp_path / name)]
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    return main(args + list(extra)), tmp_path / name


def report(out):
    return json.loads((out / "report.json").read_text())


# ---------------------------------------------------------------- exit codes


def test_theorem_check_default(tmp_path):
    code, out = cli(tmp_path, "theorem-check")
    rep = report(out)
    assert code == 0 and rep["status"] == "pass"
    assert rep["max_residual"] <= 1e-4 and rep["max_orth_drift"] <= 1e-10
    assert len(rep["runs"]) == 10


def test_theorem_check_separable_exit_2(tmp_path):
    code, out = cli(tmp_path, "theorem-check", {"theorem": {"label_noise": 0.0, "inits": 2}})
    assert code == 2 and report(out)["status"] == "no-minimum"


def test_theorem_check_zero_init(tmp_path):
    code, out = cli(tmp_path, "theorem-check", {"theorem": {"init": "zero", "inits": 2}})
    assert code == 0
    # zero up to the rounding of projecting a nonzero w_hat onto the subspace
    assert all(r["orth_residual"] <= 1e-12 for r in report(out)["runs"])


def test_sweep_degenerate_fit_exit_3(tmp_path):
    # a single fraction and trial with no GD steps leaves one accuracy point: no line to fit
    cfg = {"generator": SMALL_GEN, "sweep": {"fractions": [1.0], "trials": 1}, "gd": {"max_steps": 0}}
    code, out = cli(tmp_path, "sweep", cfg)
    assert code == 3 and report(out)["status"] == "degenerate-fit"


@pytest.mark.parametrize("command, config", [
    ("sweep", {"bogus": 1}),
    ("sweep", {"sweep": {"fractions": [0.5], "typo": 2}}),
    ("sweep", {"sweep": {"fractions": [1.5]}}),
    ("theorem-check", {"theorem": {"init": "ones"}}),
    ("curate", {"curate": {"n": 0}}),
    ("curate", {"curate": {"n": 63}}),
    ("combine", {"shift": {"kind": "flip"}}),
    ("split", {"split": {"features": "cubic"}}),
    ("gen", {"seed": -1}),
    ("gen", {"run_id": ""}),
])
def test_config_errors_exit_1(tmp_path, command, config):
    code, out = cli(tmp_path, command, config)
    assert code == 1 and not out.exists()


def test_usage_errors_exit_1(tmp_path, capsys):
    for argv in (["gen"], ["gen", "--out", str(tmp_path), "--workers", "0"],
                 ["gen", "--out", str(tmp_path), "--seed", "-3"], ["nope"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1


def test_missing_config_file_exit_1(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "o"), "--config", str(tmp_path / "absent.json")]) == 1


def test_load_config_rejects_unknown_generator_seed():
    # the generator seed always comes from the resolved base seed
    with pytest.raises(ConfigError):
        load_config("gen", {"generator": {"seed": 3}})


# ---------------------------------------------------------------- command outputs


def test_gen_outputs(tmp_path):
    code, out = cli(tmp_path, "gen", SMALL["gen"])
    assert code == 0
    assert sorted(os.listdir(out)) == ["ref_test.csv", "reference.csv", "report.json", "shifted.csv"]
    rep = report(out)
    assert rep["sizes"]["train"] == 50 and rep["support"]["in_support"]
    header = (out / "reference.csv").read_text().splitlines()[0]
    assert header.endswith("label,group,domain")


def test_er_zero_trials(tmp_path):
    code, out = cli(tmp_path, "er", {"er": {"trials": 0}})
    rep = report(out)
    assert code == 0 and rep["trials"] == [] and rep["mean_er"] is None
    assert (out / "er.csv").read_text().strip() == "trial,acc_ref,acc_shift,er"


def test_er_small(tmp_path):
    code, out = cli(tmp_path, "er", SMALL["er"])
    rep = report(out)
    assert code == 0 and len(rep["trials"]) == 3
    lo, hi = rep["er_interval"]
    assert lo <= rep["mean_er"] <= hi
    assert len((out / "er.csv").read_text().splitlines()) == 4


def test_split_identical_distribution(tmp_path):
    cfg = {**SMALL["split"], "shift": {"kind": "label_shift", "p_minority": 0.5}}
    code, out = cli(tmp_path, "split", cfg)
    assert code == 0 and report(out)["in_support_fraction"] >= 0.95


def test_split_disjoint(tmp_path):
    cfg = {**SMALL["split"], "shift": {"kind": "unseen_transform"}}
    code, out = cli(tmp_path, "split", cfg)
    assert code == 0 and report(out)["in_support_fraction"] <= 0.05


def test_split_threshold_sweep_monotone(tmp_path):
    cfg = {**SMALL["split"], "shift": {"kind": "combined"}, "split": {"folds": 4, "thresholds": [0.01, 0.1, 0.5, 2, 10]}}
    code, out = cli(tmp_path, "split", cfg)
    counts = [r["out_of_support"] for r in report(out)["threshold_sweep"]]
    assert code == 0 and counts == sorted(counts)
    assert [r["threshold"] for r in report(out)["threshold_sweep"]] == [0.01, 0.1, 0.5, 2, 10]


def test_split_files(tmp_path):
    code, out = cli(tmp_path, "split", SMALL["split"])
    rep = report(out)
    lines = (out / "split.csv").read_text().splitlines()
    assert lines[0] == "index,ratio,split" and len(lines) == rep["n_shifted"] + 1
    assert rep["in_support"] + rep["out_of_support"] == rep["n_shifted"]
    assert len(rep["temperatures"]) == 4


def test_combine_identity_intervention(tmp_path):
    cfg = {**SMALL["combine"], "combine": {"trials": 3, "pretrain_n": 500, "intervention": "none"}}
    code, out = cli(tmp_path, "combine", cfg)
    rep = report(out)
    assert code == 0 and rep["corrected"]["intervention"] == 0
    rows = (out / "corrected.csv").read_text().splitlines()[1:]
    assert not any(r.startswith("intervention,") for r in rows)


@pytest.mark.parametrize("intervention", ["balance", "dfr"])
def test_combine_arms(tmp_path, intervention):
    cfg = {**SMALL["combine"], "combine": {"trials": 2, "pretrain_n": 500, "intervention": intervention}}
    code, out = cli(tmp_path, "combine", cfg)
    rep = report(out)
    assert code == 0
    assert set(rep["arms"]) == {"baseline", "pretrain", "intervention", "pretrain+intervention"}
    assert len((out / "arms.csv").read_text().splitlines()) == 1 + 2 * 4


def test_curate_small(tmp_path):
    code, out = cli(tmp_path, "curate", SMALL["curate"])
    rep = report(out)
    assert code == 0
    arms = {(s["arm"], s["n"]) for s in rep["summary"]}
    assert ("pretrained/curated", 64) in arms and ("scratch/curated", 128) in arms
    assert rep["curated_max_abs_correlation"] <= 1e-12
    header = (out / "arms.csv").read_text().splitlines()[0]
    assert "balanced_acc_group0,balanced_acc_group1" in header


# ---------------------------------------------------------------- reports and seeds


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_report_embeds_config_and_seed(tmp_path, command):
    code, out = cli(tmp_path, command, {**SMALL[command], "seed": 11})
    rep = report(out)
    assert code == 0 and rep["seed"] == 11 and rep["command"] == command
    assert rep["config"] == load_config(command, {**SMALL[command], "seed": 11}).to_dict()


def test_cli_seed_overrides_config(tmp_path):
    _, a = cli(tmp_path, "gen", {**SMALL["gen"], "seed": 5}, "--seed", "9", name="a")
    _, b = cli(tmp_path, "gen", {**SMALL["gen"], "seed": 9}, name="b")
    assert report(a)["seed"] == 9
    assert (a / "shifted.csv").read_text() == (b / "shifted.csv").read_text()


def test_hex_seed_accepted(tmp_path):
    _, a = cli(tmp_path, "gen", SMALL["gen"], "--seed", "0xff", name="a")
    assert report(a)["seed"] == 255


def test_different_seeds_differ(tmp_path):
    _, a = cli(tmp_path, "gen", SMALL["gen"], "--seed", "1", name="a")
    _, b = cli(tmp_path, "gen", SMALL["gen"], "--seed", "2", name="b")
    assert (a / "reference.csv").read_text() != (b / "reference.csv").read_text()


def test_run_id_owns_output_dir(tmp_path):
    code, out = cli(tmp_path, "gen", {**SMALL["gen"], "run_id": "first"})
    assert code == 0
    # the same run id may overwrite its own output
    assert cli(tmp_path, "gen", {**SMALL["gen"], "run_id": "first"})[0] == 0
    before = (out / "report.json").read_text()
    assert cli(tmp_path, "gen", {**SMALL["gen"], "run_id": "second"})[0] == 1
    assert (out / "report.json").read_text() == before


@pytest.mark.parametrize("command", ["theorem-check", "sweep", "er", "split", "combine", "curate"])
def test_workers_do_not_change_output(tmp_path, command):
    _, a = cli(tmp_path, command, SMALL[command], "--workers", "1", name="a")
    _, b = cli(tmp_path, command, SMALL[command], "--workers", "4", name="b")
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b))
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []


@pytest.mark.xfail(strict=False, reason="on the seeded instance from-scratch training matches at 2x the curated size")
def test_curate_scratch_needs_four_times(tmp_path):
    code, out = cli(tmp_path, "curate")
    ratio = report(out)["scratch_examples_ratio"]
    assert code == 0 and (ratio is None or ratio >= 4)

import math

import pytest

from nnfoc.errors import ConfigError, HPOFailed, TrainingDiverged
from nnfoc.hpo import Dim, HPOSpace, expected_improvement, hpo_search, read_trial_log, tinyfc_space


def quadratic(cfg):
    x = cfg["x"]
    return (x - 0.3) ** 2 + 1e-3, {"x": x}


@pytest.mark.parametrize("strategy", ["gp", "random"])
def test_finds_quadratic_minimum(strategy):
    space = HPOSpace((Dim("x", -2.0, 2.0),), budget=20, seed=1)
    res = hpo_search(space, quadratic, strategy)
    assert abs(res.best_config["x"] - 0.3) <= 0.05 * 4.0  # within 5% of the range
    assert res.best_model == {"x": res.best_config["x"]}
    assert len(res.trials) == 20


def test_gp_beats_its_own_random_start():
    space = HPOSpace((Dim("x", -2.0, 2.0),), budget=15, seed=3, n_initial=5)
    res = hpo_search(space, quadratic, "gp")
    initial = min(t.val_mse for t in res.trials[:5])
    assert res.best_val_mse <= initial
    assert res.best_val_mse < 1e-3 + 0.01


def test_minimum_budget():
    res = hpo_search(HPOSpace((Dim("x", 0.0, 1.0),), budget=2), quadratic, "gp")
    assert len(res.trials) == 2
    with pytest.raises(ConfigError):
        HPOSpace((Dim("x", 0.0, 1.0),), budget=1)


def test_all_diverged():
    def boom(cfg):
        raise TrainingDiverged(0)

    with pytest.raises(HPOFailed) as ei:
        hpo_search(HPOSpace((Dim("x", 0.0, 1.0),), budget=3), boom)
    assert len(ei.value.trials) == 3 and all(t.status == "diverged" for t in ei.value.trials)


def test_non_finite_trials_are_logged_and_skipped():
    calls = iter([math.nan, 0.5, math.inf, 0.2])

    def fn(cfg):
        return next(calls), None

    res = hpo_search(HPOSpace((Dim("x", 0.0, 1.0),), budget=4, seed=0), fn, "random")
    assert [t.status for t in res.trials] == ["diverged", "ok", "diverged", "ok"]
    assert res.best_val_mse == 0.2


def test_log_is_reproducible(tmp_path):
    space = tinyfc_space(budget=8, seed=5)
    fn = lambda c: ((c["width_scale"] - 1) ** 2 + math.log10(c["learning_rate"] / 1e-3) ** 2 + c["batch_size"] / 1e4, None)
    hpo_search(space, fn, "gp", tmp_path / "a.jsonl")
    hpo_search(space, fn, "gp", tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    rows = read_trial_log(tmp_path / "a.jsonl")
    assert [r["trial"] for r in rows] == list(range(8))
    assert {"config", "u", "val_mse", "status", "strategy"} <= set(rows[0])


def test_dim_decoding():
    assert Dim("a", 1.0, 3.0).decode(0.5) == 2.0
    assert Dim("lr", 1e-4, 1e-2, "log").decode(0.5) == pytest.approx(1e-3)
    assert Dim("n", 2, 10, "int").decode(0.5) == 6
    assert Dim("bs", 64, 1024, "log2int").decode(0.0) == 64
    assert Dim("bs", 64, 1024, "log2int").decode(1.0) == 1024
    assert Dim("bs", 64, 1024, "log2int").decode(0.5) == 256
    assert Dim("a", 1.0, 3.0).decode(7.0) == 3.0


@pytest.mark.parametrize("args", [("a", 1.0, 1.0), ("a", 0.0, 1.0, "log"), ("a", 0.0, 1.0, "cubic")])
def test_dim_validation(args):
    with pytest.raises(ConfigError):
        Dim(*args)


def test_expected_improvement_properties():
    assert expected_improvement(0.0, 1e-20, 1.0) == pytest.approx(1.0)
    assert expected_improvement(2.0, 1e-20, 1.0) == pytest.approx(0.0)
    assert expected_improvement(1.0, 1.0, 1.0) > expected_improvement(1.0, 0.5, 1.0)


def test_unknown_strategy():
    with pytest.raises(ConfigError):
        hpo_search(HPOSpace((Dim("x", 0.0, 1.0),), budget=2), quadratic, "grid")

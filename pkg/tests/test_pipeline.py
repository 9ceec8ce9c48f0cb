import json

import pytest

from conftest import short_profile
from nnfoc.config import SEED_KEYS, ExperimentConfig
from nnfoc.errors import StageFailed
from nnfoc.ground_truth import GTMethod
from nnfoc.pipeline import load_model, run_experiment


def small_config(tmp_path, **kw):
    p1 = tmp_path / "p1.json"
    p1.write_text(json.dumps(short_profile().to_json()))
    d = {
        "seeds": {k: 2 for k in SEED_KEYS},
        "profiles": {c: {"kind": "file", "file": str(p1)} for c in ("case1", "case2")},
        "train": {"epochs": 2},
        "hpo": {"budget": 2, "epochs": 1, "subsample": 3000},
        "prune": {"calibration_size": 2000},
        "quantize_calibration": 2000,
    }
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def test_failed_stage_is_reported(tmp_path):
    cfg = small_config(tmp_path)
    cfg.ground_truth["case1"] = GTMethod("threshold", band=1e-9)
    with pytest.raises(StageFailed) as ei:
        run_experiment(cfg, tmp_path / "out", hpo=False)
    assert ei.value.stage == "gen-gt"
    status = json.loads((tmp_path / "out" / "status.json").read_text())
    assert status["completed"] == ["simulate"] and status["failed"] == "gen-gt"
    assert "NoSteadyIntervals" in status["error"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("bundle")
    cfg = small_config(tmp)
    doc = run_experiment(cfg, tmp / "out")
    return tmp / "out", doc


def test_bundle_layout(bundle):
    out, doc = bundle
    for rel in ("config.json", "metrics.json", "costs.json", "report.md", "status.json",
                "traces/case1_pi.csv", "datasets/case2.csv", "plots/case1_speed.svg",
                "models/hpo_case1_trials.jsonl"):
        assert (out / rel).is_file(), rel
    status = json.loads((out / "status.json").read_text())
    assert status["failed"] is None and "report" in status["completed"]
    assert json.loads((out / "metrics.json").read_text()) == json.loads(json.dumps(doc))


def test_bundle_models_load(bundle):
    out, _ = bundle
    for case in ("case1", "case2"):
        for name in ("tinyfc", "hpo", "pruned", "quantized_pruned"):
            m = load_model(out / "models" / f"{case}_{name}.json")
            assert m.param_count > 0


def test_report_mentions_every_variant(bundle):
    out, doc = bundle
    text = (out / "report.md").read_text()
    for variant in doc["loop_metrics"]["case1"]:
        assert variant in text

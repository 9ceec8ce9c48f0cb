"""End-to-end experiment: PI runs, ground truth, training, compression,
closed-loop re-evaluation and cost estimates, written to one directory.

Layout of a bundle::

    config.json            resolved configuration
    traces/                PI-only and augmented runs (CSV, every n-th step)
    datasets/              ground-truth datasets (CSV, every step)
    models/                float and int8 models (JSON), HPO trial log
    metrics.json           loop metrics, test MSE, pruning summary
    costs.json             MACC / memory (and latency if enabled)
    report.md              comparison tables
    plots/                 SVG figures
    status.json            completed stages, or the failing stage
"""

from __future__ import annotations

import contextlib
import json
import math
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .control import LoopConfig, SimTrace, run_closed_loop
from .cost import bench_latency, cost_report, render_table
from .dataset import Dataset
from .errors import StageFailed
from .ground_truth import make_ground_truth
from .hpo import hpo_search, tinyfc_space
from .metrics import LoopMetrics, compute_metrics, relative_change
from .plots import plot_comparison, plot_trace
from .profiles import ReferenceProfile, profile_from_spec
from .prune import PruneConfig, pca_prune, prune_report
from .quantize import QuantizedModel, forward_int8, quantize_int8
from .tinyfc import (
    REFERENCE_WIDTHS,
    TinyFCModel,
    TrainConfig,
    build_tinyfc,
    fine_tune,
    split_dataset,
    split_history,
    train,
)

CASES = ("case1", "case2")
VARIANTS = ("TinyFC", "HPO", "Pruned", "Quantized Pruned")


def load_model(path):
    """Float or int8 model, told apart by the file's ``format`` field."""
    d = json.loads(Path(path).read_text())
    if d.get("format") == "int8-per-tensor":
        return QuantizedModel.from_json(d)
    return TinyFCModel.from_json(d)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), sort_keys=True))


def write_trace(trace: SimTrace, path, stride: int = 1) -> None:
    trace.to_csv(path, stride)


def profile_for(cfg: ExperimentConfig, case: str) -> ReferenceProfile:
    spec = cfg.profiles[case]
    return profile_from_spec(spec.kind, cfg.seeds[f"profile_{case}"], spec.file)


def calibration_rows(ds: Dataset, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = min(size, len(ds))
    return ds.X[np.sort(rng.choice(len(ds), n, replace=False))]


def normalized_test_mse(model, test: Dataset) -> float:
    if isinstance(model, QuantizedModel):
        pred = forward_int8(model, test.X) / model.target_scale
    else:
        pred = model.predict_normalized(test.X)
    d = pred - test.y / model.target_scale
    return float(np.mean(d * d))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


class _Stages:
    def __init__(self, out: Path):
        self.out = out
        self.done: list = []
        self.seconds: dict = {}  # wall time per stage; kept out of metrics.json

    @contextlib.contextmanager
    def __call__(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as e:
            dump_json({"completed": self.done, "failed": name, "error": f"{type(e).__name__}: {e}",
                       "seconds": self.seconds}, self.out / "status.json")
            raise StageFailed(name, e) from e
        self.seconds[name] = time.perf_counter() - t0
        self.done.append(name)


def _hpo_train_fn(ds: Dataset, cfg: ExperimentConfig, case: str):
    rng = np.random.default_rng(cfg.seeds["hpo"])
    n = min(cfg.hpo.subsample, len(ds))
    sub = ds.subset(np.sort(rng.choice(len(ds), n, replace=False)))

    def fn(hp: dict):
        widths = [max(1, int(round(w * hp["width_scale"]))) for w in REFERENCE_WIDTHS]
        model = build_tinyfc(widths, seed=cfg.seeds["model_init"])
        tc = TrainConfig(
            epochs=cfg.hpo.epochs,
            batch_size=int(hp["batch_size"]),
            learning_rate=float(hp["learning_rate"]),
            seed=cfg.seeds["train"],
            split=cfg.train.split,
            input_noise=cfg.train.input_noise,
        )
        trained, hist = train(model, sub, tc)
        epochs, _ = split_history(hist)
        return min(h["val_mse"] for h in epochs), trained

    return fn


def run_experiment(cfg: ExperimentConfig, out_dir, hpo: Optional[bool] = None) -> dict:
    """Run every stage; returns the metrics document also written to metrics.json."""
    out = Path(out_dir)
    for sub in ("traces", "datasets", "models", "plots"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    dump_json(cfg.to_dict(), out / "config.json")
    stage = _Stages(out)
    plant = cfg.plant
    loop = cfg.loop_config()
    stride = cfg.output.trace_stride
    do_hpo = cfg.hpo.enabled if hpo is None else hpo

    profiles, pi, gts, data = {}, {}, {}, {}
    with stage("simulate"):
        for case in CASES:
            profiles[case] = profile_for(cfg, case)
            pi[case] = run_closed_loop(profiles[case], loop, plant)
            write_trace(pi[case], out / "traces" / f"{case}_pi.csv", stride)

    with stage("gen-gt"):
        for case in CASES:
            gts[case] = make_ground_truth(pi[case], cfg.ground_truth[case])
            data[case] = gts[case].dataset()
            data[case].to_csv(out / "datasets" / f"{case}.csv")

    models: dict = {case: {} for case in CASES}
    histories = {}
    tc = cfg.train_config()
    with stage("train"):
        if cfg.initial_model is not None:
            base = TinyFCModel.load(cfg.initial_model)
        else:
            base = build_tinyfc(seed=cfg.seeds["model_init"])
        m1, h1 = train(base, data["case1"], tc)
        models["case1"]["TinyFC"] = m1
        histories["case1"] = h1

    with stage("finetune"):
        ft_tc = tc if cfg.finetune.epochs is None else TrainConfig(**{**asdict(tc), "epochs": cfg.finetune.epochs})
        m2, h2 = fine_tune(m1, data["case2"], ft_tc, lr_factor=cfg.finetune.lr_factor)
        models["case2"]["TinyFC"] = m2
        histories["case2"] = h2

    hpo_summary = {}
    if do_hpo:
        with stage("hpo"):
            for case in CASES:
                space = tinyfc_space(cfg.hpo.budget, cfg.seeds["hpo"])
                res = hpo_search(space, _hpo_train_fn(data[case], cfg, case), cfg.hpo.strategy,
                                 log_path=out / "models" / f"hpo_{case}_trials.jsonl")
                models[case]["HPO"] = res.best_model
                hpo_summary[case] = {"best_config": res.best_config, "best_val_mse": res.best_val_mse,
                                     "params": res.best_model.param_count}

    prune_summary = {}
    calib = {}
    with stage("prune"):
        for case in CASES:
            seed = cfg.seeds["calibration"]
            calib[case] = calibration_rows(data[case], cfg.prune.calibration_size, seed)
            pruned = pca_prune(models[case]["TinyFC"], calib[case], cfg.prune)
            models[case]["Pruned"] = pruned
            prune_summary[case] = asdict(prune_report(models[case]["TinyFC"], pruned, calib[case]))

    with stage("quantize"):
        for case in CASES:
            qcal = calibration_rows(data[case], cfg.quantize_calibration, cfg.seeds["calibration"] + 1)
            models[case]["Quantized Pruned"] = quantize_int8(models[case]["Pruned"], qcal)

    for case in CASES:
        for name, m in models[case].items():
            save_model(m, out / "models" / f"{case}_{name.lower().replace(' ', '_')}.json")
        dump_json(histories.get(case, []), out / "models" / f"{case}_history.json")

    loop_metrics: dict = {}
    test_mse: dict = {}
    aug_traces: dict = {case: {} for case in CASES}
    with stage("evaluate"):
        for case in CASES:
            loop_metrics[case] = {"PI": compute_metrics(pi[case]).to_dict()}
            _, _, test = split_dataset(data[case], tc.split, tc.seed)
            test_mse[case] = {}
            for name, m in models[case].items():
                tr = run_closed_loop(profiles[case], loop.with_augmentor(m), plant)
                aug_traces[case][name] = tr
                write_trace(tr, out / "traces" / f"{case}_{name.lower().replace(' ', '_')}.csv", stride)
                met = compute_metrics(tr).to_dict()
                base = loop_metrics[case]["PI"]
                met["change"] = {k: relative_change(met[k], base[k]) for k in ("max_deviation", "avg_deviation", "max_overshoot")}
                loop_metrics[case][name] = met
                test_mse[case][name] = {"params": m.arch.param_count, "test_mse": normalized_test_mse(m, test)}

    costs = {}
    with stage("cost"):
        kinds = {"TinyFC": "float", "HPO": "hpo", "Pruned": "pruned", "Quantized Pruned": "int8"}
        for case in CASES:
            reports = []
            for name, m in models[case].items():
                lat = bench_latency(m, cfg.output.bench_runs) if cfg.output.bench_runs >= 100 else None
                reports.append(cost_report(name, m, kinds[name], lat))
            costs[case] = reports
        dump_json({c: [r.to_dict() for r in rs] for c, rs in costs.items()}, out / "costs.json")

    doc = {
        "version": __version__,
        "loop_metrics": loop_metrics,
        "test_mse": test_mse,
        "pruning": prune_summary,
        "hpo": hpo_summary,
        "gt_intervals": {case: len(gts[case].intervals) for case in CASES},
        "dataset_rows": {case: len(data[case]) for case in CASES},
    }
    with stage("report"):
        dump_json(doc, out / "metrics.json")
        (out / "report.md").write_text(render_report(doc, costs))
        win = (0.0, min(cfg.output.plot_window, profiles["case1"].duration))
        for case in CASES:
            plot_trace(pi[case], out / "plots" / f"{case}_pi_gt.svg", adjusted=gts[case].x_adj,
                       adjusted_label="iq ground truth", title=f"{case} PI", window=win)
            if "TinyFC" in aug_traces[case]:
                plot_trace(aug_traces[case]["TinyFC"], out / "plots" / f"{case}_tinyfc.svg",
                           title=f"{case} PI + TinyFC", window=win)
            plot_comparison({"PI": pi[case], **aug_traces[case]}, out / "plots" / f"{case}_speed.svg",
                            title=f"{case} speed", window=win)
    dump_json({"completed": stage.done, "failed": None, "seconds": stage.seconds}, out / "status.json")
    return doc


def _pct(v) -> str:
    return "n/a" if v is None else f"{100 * v:+.1f}"


def _num(v, fmt="{:.4f}") -> str:
    return "undefined" if v is None else fmt.format(v)


def render_report(doc: dict, costs: dict) -> str:
    lines = ["# Experiment report", ""]
    lines += ["## Model size and test MSE (normalized target, %)", "",
              "| Case | Model | Params | MSE (%) |", "|---|---|---|---|"]
    for case, rows in doc["test_mse"].items():
        for name, r in rows.items():
            lines.append(f"| {case} | {name} | {r['params']} | {100 * r['test_mse']:.3f} |")
    lines += ["", "## Closed-loop metrics (per-unit speed)", "",
              "| Case | Controller | Max deviation | Avg deviation | Max overshoot |", "|---|---|---|---|---|"]
    for case, rows in doc["loop_metrics"].items():
        for name, m in rows.items():
            label = "PI" if name == "PI" else f"PI + {name}"
            lines.append(f"| {case} | {label} | {_num(m['max_deviation'])} | {_num(m['avg_deviation'])} | "
                         f"{_num(m['max_overshoot'])} |")
            if "change" in m:
                c = m["change"]
                lines.append(f"| | % change | {_pct(c['max_deviation'])} | {_pct(c['avg_deviation'])} | "
                             f"{_pct(c['max_overshoot'])} |")
    if doc.get("pruning"):
        lines += ["", "## Pruning", ""]
        for case, p in doc["pruning"].items():
            lines.append(f"- {case}: {p['params_before']} -> {p['params_after']} params, "
                         f"max output change {p['max_output_change']:.4g} A on calibration inputs")
    lines += ["", "## Deployment cost", ""]
    for case, reports in costs.items():
        lines += [f"### {case}", "", "```", render_table(reports).rstrip(), "```", ""]
    return "\n".join(lines) + "\n"

"""Command-line harness (``nnfoc``).

Each subcommand runs one stage on files; ``run`` executes the whole
experiment. Exit codes: 0 success, 1 other package error, 2 bad
configuration or input, 3 simulation divergence, 4 training divergence
or HPO failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import SEED_KEYS, ExperimentConfig, default_config, load_config
from .control import SimTrace, run_closed_loop
from .cost import bench_latency, cost_report, render_table
from .dataset import Dataset
from .errors import (
    ConfigError,
    DomainError,
    HPOFailed,
    NNFocError,
    SimulationDiverged,
    StageFailed,
    TrainingDiverged,
)
from .ground_truth import GTMethod, make_ground_truth
from .hpo import hpo_search, tinyfc_space
from .metrics import compute_metrics
from .pipeline import (
    _hpo_train_fn,
    calibration_rows,
    dump_json,
    load_model,
    profile_for,
    run_experiment,
    save_model,
)
from .plots import plot_trace
from .profiles import profile_from_spec
from .prune import PruneConfig, pca_prune, prune_report
from .quantize import QuantizedModel, quantize_int8
from .tinyfc import TinyFCModel, TrainConfig, build_tinyfc, fine_tune, train

KIND_BY_NAME = {"float": "float", "hpo": "hpo", "pruned": "pruned", "int8": "int8"}


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config(0)
    if args.seed is not None:
        cfg = replace(cfg, seeds={k: args.seed for k in SEED_KEYS})
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _profile(args, cfg):
    if args.profile_file:
        return profile_from_spec("file", path=args.profile_file)
    return profile_for(cfg, args.profile)


def _float_model(path) -> TinyFCModel:
    m = load_model(path)
    if not isinstance(m, TinyFCModel):
        raise ConfigError(f"{path} is not a float model")
    return m


def cmd_simulate(args, cfg):
    out = _out(args)
    loop = cfg.loop_config()
    if args.model:
        loop = loop.with_augmentor(load_model(args.model))
    trace = run_closed_loop(_profile(args, cfg), loop, cfg.plant)
    trace.to_csv(out / "trace.csv", args.stride)
    metrics = compute_metrics(trace)
    (out / "metrics.json").write_text(metrics.to_json())
    if args.plot:
        plot_trace(trace, out / "trace.svg", window=(0.0, min(cfg.output.plot_window, len(trace) * trace.sample_time)))
    print(metrics.to_json())


def cmd_gen_gt(args, cfg):
    out = _out(args)
    if args.trace:
        trace = SimTrace.from_csv(args.trace)
        method = cfg.ground_truth["case1"]
    else:
        trace = run_closed_loop(_profile(args, cfg), cfg.loop_config(), cfg.plant)
        method = cfg.ground_truth.get(args.profile, cfg.ground_truth["case1"])
    overrides = {k: getattr(args, k) for k in ("kind", "band", "tau", "factor", "c_scope") if getattr(args, k) is not None}
    method = GTMethod(**{**asdict(method), **overrides})
    gt = make_ground_truth(trace, method)
    ds = gt.dataset()
    ds.to_csv(out / "dataset.csv")
    print(json.dumps({"rows": len(ds), "intervals": len(gt.intervals), "method": asdict(method)}, sort_keys=True))


def _train_cfg(args, cfg) -> TrainConfig:
    tc = cfg.train_config()
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    return tc


def cmd_train(args, cfg):
    out = _out(args)
    ds = Dataset.from_csv(args.dataset)
    base = _float_model(args.init) if args.init else build_tinyfc(seed=cfg.seeds["model_init"])
    model, hist = train(base, ds, _train_cfg(args, cfg))
    save_model(model, out / "model.json")
    dump_json(hist, out / "history.json")
    print(json.dumps(hist[-1], sort_keys=True))


def cmd_finetune(args, cfg):
    out = _out(args)
    ds = Dataset.from_csv(args.dataset)
    lr_factor = args.lr_factor if args.lr_factor is not None else cfg.finetune.lr_factor
    model, hist = fine_tune(_float_model(args.model), ds, _train_cfg(args, cfg), lr_factor=lr_factor)
    save_model(model, out / "model.json")
    dump_json(hist, out / "history.json")
    print(json.dumps(hist[-1], sort_keys=True))


def cmd_hpo(args, cfg):
    out = _out(args)
    ds = Dataset.from_csv(args.dataset)
    budget = args.budget or cfg.hpo.budget
    strategy = args.strategy or cfg.hpo.strategy
    res = hpo_search(tinyfc_space(budget, cfg.seeds["hpo"]), _hpo_train_fn(ds, cfg, "cli"), strategy,
                     log_path=out / "trials.jsonl")
    save_model(res.best_model, out / "model.json")
    print(json.dumps({"best_config": res.best_config, "best_val_mse": res.best_val_mse,
                      "params": res.best_model.param_count}, sort_keys=True))


def cmd_prune(args, cfg):
    out = _out(args)
    model = _float_model(args.model)
    ds = Dataset.from_csv(args.dataset)
    pc = PruneConfig(args.threshold if args.threshold is not None else cfg.prune.energy_threshold,
                     cfg.prune.calibration_size)
    X = calibration_rows(ds, pc.calibration_size, cfg.seeds["calibration"])
    pruned = pca_prune(model, X, pc)
    save_model(pruned, out / "model.json")
    rep = asdict(prune_report(model, pruned, X))
    dump_json(rep, out / "prune_report.json")
    print(json.dumps(rep, sort_keys=True))


def cmd_quantize(args, cfg):
    out = _out(args)
    model = _float_model(args.model)
    ds = Dataset.from_csv(args.dataset)
    X = calibration_rows(ds, cfg.quantize_calibration, cfg.seeds["calibration"] + 1)
    q = quantize_int8(model, X)
    save_model(q, out / "model.json")
    print(json.dumps({"params": q.arch.param_count, "format": "int8-per-tensor"}))


def cmd_evaluate(args, cfg):
    out = _out(args)
    prof = _profile(args, cfg)
    loop = cfg.loop_config()
    pi = run_closed_loop(prof, loop, cfg.plant)
    doc = {"PI": compute_metrics(pi).to_dict()}
    if args.model:
        aug = run_closed_loop(prof, loop.with_augmentor(load_model(args.model)), cfg.plant)
        doc["augmented"] = compute_metrics(aug).to_dict()
        aug.to_csv(out / "trace_augmented.csv", cfg.output.trace_stride)
    pi.to_csv(out / "trace_pi.csv", cfg.output.trace_stride)
    dump_json(doc, out / "metrics.json")
    print(json.dumps(doc, sort_keys=True))


def cmd_bench(args, cfg):
    out = _out(args)
    model = load_model(args.model)
    kind = args.kind or ("int8" if isinstance(model, QuantizedModel) else "float")
    lat = bench_latency(model, args.runs) if args.runs else None
    rep = cost_report(Path(args.model).stem, model, kind, lat)
    (out / "cost.json").write_text(rep.to_json())
    print(render_table([rep]), end="")


def cmd_report(args, cfg):
    doc = json.loads((Path(args.bundle) / "metrics.json").read_text())
    text = (Path(args.bundle) / "report.md").read_text()
    print(text, end="")
    return doc


def cmd_run(args, cfg):
    out = _out(args)
    hpo = False if args.no_hpo else None
    run_experiment(cfg, out, hpo=hpo)
    print((out / "report.md").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnfoc", description="NN-augmented FOC experiments")
    p.add_argument("--config", help="TOML or JSON experiment config (default: built-in defaults)")
    p.add_argument("--seed", type=int, help="set every seed to this value")
    p.add_argument("--out", default="out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    def profile_args(sp):
        sp.add_argument("--profile", choices=("case1", "case2"), default="case1")
        sp.add_argument("--profile-file", help="reference profile JSON (overrides --profile)")

    sp = sub.add_parser("simulate", help="closed-loop run, optionally with an augmentor")
    profile_args(sp)
    sp.add_argument("--model", help="float or int8 model JSON")
    sp.add_argument("--stride", type=int, default=1, help="write every n-th step")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("gen-gt", help="ground-truth dataset from a PI trace")
    profile_args(sp)
    sp.add_argument("--trace", help="full-rate trace CSV (otherwise simulate the profile)")
    sp.add_argument("--kind", choices=("threshold", "rectify"))
    sp.add_argument("--band", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--factor", type=float)
    sp.add_argument("--c-scope", dest="c_scope", choices=("interval", "segment"))
    sp.set_defaults(fn=cmd_gen_gt)

    sp = sub.add_parser("train", help="train TinyFC on a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--init", help="start from this model instead of a fresh one")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("finetune", help="fine-tune a model on another dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr-factor", dest="lr_factor", type=float)
    sp.set_defaults(fn=cmd_finetune)

    sp = sub.add_parser("hpo", help="hyperparameter search")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--strategy", choices=("gp", "random"))
    sp.set_defaults(fn=cmd_hpo)

    sp = sub.add_parser("prune", help="PCA projection pruning")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True, help="calibration inputs are drawn from this dataset")
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(fn=cmd_prune)

    sp = sub.add_parser("quantize", help="post-training int8 quantization")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.set_defaults(fn=cmd_quantize)

    sp = sub.add_parser("evaluate", help="PI vs augmented loop metrics")
    profile_args(sp)
    sp.add_argument("--model")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("bench", help="MACC, memory and host latency of a model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--kind", choices=tuple(KIND_BY_NAME))
    sp.add_argument("--runs", type=int, default=1000, help="latency runs (0 skips timing)")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("report", help="print the report of an experiment bundle")
    sp.add_argument("bundle")
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("run", help="full experiment into --out")
    sp.add_argument("--no-hpo", action="store_true")
    sp.set_defaults(fn=cmd_run)
    return p


def _exit_code(e: BaseException) -> int:
    if isinstance(e, StageFailed):
        return _exit_code(e.cause)
    if isinstance(e, (ConfigError, DomainError, FileNotFoundError)):
        return 2
    if isinstance(e, SimulationDiverged):
        return 3
    if isinstance(e, (TrainingDiverged, HPOFailed)):
        return 4
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        args.fn(args, cfg)
    except (NNFocError, FileNotFoundError) as e:
        print(f"nnfoc {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return _exit_code(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())

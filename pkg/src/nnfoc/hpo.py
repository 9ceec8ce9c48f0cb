"""Surrogate-guided hyperparameter search.

Points live in the unit box; each dimension maps to a hyperparameter on a
linear, log or log2-integer scale. The default ``gp`` strategy evaluates a
few random points, then repeatedly fits a Gaussian-process regressor to
log(validation MSE) and evaluates the candidate maximizing expected
improvement among a seeded random pool. ``random`` evaluates uniform
random points only.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, HPOFailed, NNFocError

SCALES = ("linear", "log", "int", "log2int")


@dataclass(frozen=True)
class Dim:
    name: str
    low: float
    high: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if not self.low < self.high:
            raise ConfigError(f"empty range for {self.name}: [{self.low}, {self.high}]")
        if self.scale in ("log", "log2int") and self.low <= 0:
            raise ConfigError(f"{self.name}: log scale needs a positive range")

    def decode(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "linear":
            return self.low + u * (self.high - self.low)
        if self.scale == "log":
            return math.exp(math.log(self.low) + u * (math.log(self.high) - math.log(self.low)))
        if self.scale == "int":
            return int(round(self.low + u * (self.high - self.low)))
        e = math.log2(self.low) + u * (math.log2(self.high) - math.log2(self.low))
        return int(2 ** round(e))


@dataclass
class HPOSpace:
    dims: tuple
    budget: int = 30
    seed: int = 0
    n_initial: int = 5
    pool_size: int = 2048

    def __post_init__(self):
        self.dims = tuple(self.dims)
        if not self.dims:
            raise ConfigError("search space has no dimensions")
        if self.budget < 2:
            raise ConfigError("budget must be >= 2")

    def decode(self, u) -> dict:
        return {d.name: d.decode(v) for d, v in zip(self.dims, u)}


def tinyfc_space(budget: int = 30, seed: int = 0) -> HPOSpace:
    """Width multiplier for the reference branch widths (at most 1, the
    deployment budget), learning rate, batch size."""
    return HPOSpace(
        (
            Dim("width_scale", 0.3, 1.0),
            Dim("learning_rate", 1e-4, 1e-2, "log"),
            Dim("batch_size", 64, 1024, "log2int"),
        ),
        budget=budget,
        seed=seed,
    )


@dataclass
class Trial:
    index: int
    strategy: str
    u: list
    config: dict
    val_mse: Optional[float]
    status: str  # ok | diverged

    def to_json(self) -> str:
        return json.dumps(
            {
                "trial": self.index,
                "strategy": self.strategy,
                "u": self.u,
                "config": self.config,
                "val_mse": self.val_mse,
                "status": self.status,
            },
            sort_keys=True,
        )


@dataclass
class HPOResult:
    best_config: dict
    best_model: object
    best_val_mse: float
    trials: list = field(default_factory=list)

    def log_lines(self) -> str:
        return "".join(t.to_json() + "\n" for t in self.trials)


def expected_improvement(mu, sigma, best):
    """EI for minimization."""
    sigma = np.maximum(sigma, 1e-12)
    z = (best - mu) / sigma
    return (best - mu) * norm.cdf(z) + sigma * norm.pdf(z)


def _gp_propose(U: np.ndarray, y: np.ndarray, rng: np.random.Generator, space: HPOSpace) -> np.ndarray:
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * Matern(
        length_scale=np.full(U.shape[1], 0.3), length_scale_bounds=(1e-2, 10.0), nu=2.5
    ) + WhiteKernel(1e-4, (1e-8, 1e-1))
    gp = GaussianProcessRegressor(kernel, normalize_y=True, n_restarts_optimizer=2, random_state=space.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gp.fit(U, y)
    pool = rng.random((space.pool_size, U.shape[1]))
    mu, sd = gp.predict(pool, return_std=True)
    ei = expected_improvement(mu, sd, float(np.min(y)))
    return pool[int(np.argmax(ei))]


def hpo_search(
    space: HPOSpace,
    train_fn: Callable[[dict], tuple],
    strategy: str = "gp",
    log_path=None,
) -> HPOResult:
    """``train_fn(config) -> (val_mse, model)``; trials that raise a package
    error or return a non-finite MSE are logged as diverged."""
    if strategy not in ("gp", "random"):
        raise ConfigError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(space.seed)
    trials, U, Y = [], [], []
    best = (math.inf, None, None)
    log = open(log_path, "w") if log_path is not None else None
    try:
        for i in range(space.budget):
            if strategy == "gp" and i >= min(space.n_initial, space.budget - 1) and len(Y) >= 2:
                yv = np.array(Y)
                u = _gp_propose(np.array(U), yv, rng, space)
            else:
                u = rng.random(len(space.dims))
            cfg = space.decode(u)
            try:
                val, model = train_fn(cfg)
                val = float(val)
                ok = math.isfinite(val)
            except (NNFocError, FloatingPointError):
                val, model, ok = None, None, False
            trial = Trial(i, strategy, [float(v) for v in u], cfg, val if ok else None, "ok" if ok else "diverged")
            trials.append(trial)
            if log is not None:
                log.write(trial.to_json() + "\n")
                log.flush()
            if ok:
                U.append(u)
                Y.append(math.log(max(val, 1e-300)))
                if val < best[0]:
                    best = (val, cfg, model)
            elif Y:
                # keep the surrogate informed that this region is bad
                U.append(u)
                Y.append(max(Y))
    finally:
        if log is not None:
            log.close()
    if best[1] is None:
        raise HPOFailed("every trial diverged", trials)
    return HPOResult(best[1], best[2], best[0], trials)


def read_trial_log(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]

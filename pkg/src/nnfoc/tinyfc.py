"""TinyFC: a two-branch residual fully-connected corrector.

Inputs are ``(omega_ref, omega_meas, iq_pi)``; the output is a quadrature
current correction in amps.  Each branch is a stack of FC layers; a layer
may add the output of an earlier layer of the same branch after its
activation (identity residual).  The branch outputs are concatenated and
merged by one FC layer with tanh, so the normalized output lies in [-1, 1];
``target_scale`` maps it back to amps.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .dataset import Dataset
from .errors import ConfigError, DomainError, StateError, TrainingDiverged

ARCH_VERSION = "tinyfc-2x5-r2/1"
REFERENCE_WIDTHS = (10, 16, 16, 10, 6)
# (layer, source) pairs, 0-based within a branch
REFERENCE_RESIDUALS = ((2, 1), (3, 0))
INPUT_FEATURES = ("omega_ref", "omega_meas", "iq_pi")


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "relu"
    residual_from: Optional[int] = None

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ConfigError(f"layer widths must be >= 1: {self}")
        if self.activation not in kernels.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.in_width * self.out_width + self.out_width


@dataclass(frozen=True)
class Architecture:
    branches: tuple
    merge: Optional[LayerSpec]
    input_width: int = 3

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))
        if not self.branches or any(len(b) == 0 for b in self.branches):
            raise ConfigError("every branch needs at least one layer")
        for bi, branch in enumerate(self.branches):
            width = self.input_width
            for li, layer in enumerate(branch):
                if layer.in_width != width:
                    raise ConfigError(f"branch {bi} layer {li}: in_width {layer.in_width} != {width}")
                width = layer.out_width
                r = layer.residual_from
                if r is not None:
                    if not 0 <= r < li:
                        raise ConfigError(f"branch {bi} layer {li}: residual source {r} is not an earlier layer")
                    if branch[r].out_width != layer.out_width:
                        raise ConfigError(
                            f"branch {bi} layer {li}: residual source width {branch[r].out_width} "
                            f"!= out_width {layer.out_width}"
                        )
        concat = sum(b[-1].out_width for b in self.branches)
        if self.merge is None:
            if len(self.branches) != 1 or self.branches[0][-1].out_width != 1:
                raise ConfigError("without a merge layer the network needs one branch ending in width 1")
        elif self.merge.in_width != concat or self.merge.out_width != 1:
            raise ConfigError(f"merge must map {concat} -> 1, got {self.merge.in_width} -> {self.merge.out_width}")

    @property
    def param_count(self) -> int:
        n = sum(l.n_params for b in self.branches for l in b)
        return n + (self.merge.n_params if self.merge else 0)

    def layers(self):
        """All layers in execution order: branch by branch, merge last."""
        for b in self.branches:
            yield from b
        if self.merge is not None:
            yield self.merge

    def to_json(self) -> dict:
        return {
            "input_width": self.input_width,
            "branches": [[asdict(l) for l in b] for b in self.branches],
            "merge": asdict(self.merge) if self.merge else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Architecture":
        branches = [[LayerSpec(**l) for l in b] for b in d["branches"]]
        merge = LayerSpec(**d["merge"]) if d.get("merge") else None
        return cls(tuple(branches), merge, d.get("input_width", 3))


def tinyfc_architecture(hidden_widths=None, residuals=REFERENCE_RESIDUALS, n_branches: int = 2) -> Architecture:
    """Two branches of FC layers with identity residuals, merged by tanh.

    ``hidden_widths`` is one list shared by both branches or one list per
    branch; the default is the pinned reference widths (~1,460 params).
    """
    if hidden_widths is None:
        hidden_widths = REFERENCE_WIDTHS
    if len(hidden_widths) and isinstance(hidden_widths[0], (list, tuple)):
        per_branch = [list(w) for w in hidden_widths]
    else:
        per_branch = [list(hidden_widths)] * n_branches
    res = dict(residuals)
    branches = []
    for widths in per_branch:
        layers, prev = [], 3
        for i, w in enumerate(widths):
            layers.append(LayerSpec(prev, int(w), "relu", res.get(i)))
            prev = int(w)
        branches.append(layers)
    concat = sum(b[-1].out_width for b in branches)
    return Architecture(tuple(branches), LayerSpec(concat, 1, "tanh"))


def _init_layer(rng: np.random.Generator, spec: LayerSpec):
    if spec.activation == "relu":
        bound = math.sqrt(6.0 / spec.in_width)
    else:
        bound = math.sqrt(6.0 / (spec.in_width + spec.out_width))
    W = rng.uniform(-bound, bound, size=(spec.out_width, spec.in_width))
    return W, np.zeros(spec.out_width)


class TinyFCModel:
    def __init__(self, arch: Architecture, params: Sequence, input_mean=None, input_std=None, target_scale=None):
        self.arch = arch
        # flat list of (W, b) in Architecture.layers() order
        self.params = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in params]
        specs = list(arch.layers())
        if len(specs) != len(self.params):
            raise ConfigError("parameter list does not match the architecture")
        for spec, (W, b) in zip(specs, self.params):
            if W.shape != (spec.out_width, spec.in_width) or b.shape != (spec.out_width,):
                raise ConfigError(f"weight shape {W.shape} does not match {spec}")
        self.input_mean = None if input_mean is None else np.asarray(input_mean, dtype=np.float64)
        self.input_std = None if input_std is None else np.asarray(input_std, dtype=np.float64)
        self.target_scale = None if target_scale is None else float(target_scale)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, arch: Architecture, seed: int = 0) -> "TinyFCModel":
        rng = np.random.default_rng(seed)
        return cls(arch, [_init_layer(rng, s) for s in arch.layers()])

    def copy(self) -> "TinyFCModel":
        return copy.deepcopy(self)

    @property
    def param_count(self) -> int:
        return int(sum(W.size + b.size for W, b in self.params))

    @property
    def is_fitted(self) -> bool:
        return self.input_mean is not None and self.input_std is not None and self.target_scale is not None

    def fit_normalization(self, X: np.ndarray, y: np.ndarray) -> None:
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        self.input_mean = X.mean(axis=0)
        self.input_std = np.where(std > 1e-12, std, 1.0)
        scale = float(np.max(np.abs(y))) if len(y) else 0.0
        self.target_scale = scale if scale > 0 else 1.0

    def set_identity_normalization(self) -> None:
        w = self.arch.input_width
        self.input_mean = np.zeros(w)
        self.input_std = np.ones(w)
        self.target_scale = 1.0

    def _layer_groups(self):
        """Yield (branch index or None for merge, [(spec, W, b), ...])."""
        it = iter(self.params)
        for bi, branch in enumerate(self.arch.branches):
            yield bi, [(spec, *next(it)) for spec in branch]
        if self.arch.merge is not None:
            yield None, [(self.arch.merge, *next(it))]

    # -- inference ----------------------------------------------------------

    def normalize_inputs(self, X) -> np.ndarray:
        if not self.is_fitted:
            raise StateError("input normalization has not been fitted")
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise DomainError("non-finite network input")
        return (X - self.input_mean) / self.input_std

    def _forward(self, Xn: np.ndarray, keep: bool = False):
        """Batch forward on normalized inputs (N, in). Returns (out, cache)."""
        cache = []
        outs = []
        for bi, layers in self._layer_groups():
            if bi is None:
                break
            h = Xn
            hs = []
            for spec, W, b in layers:
                z = h @ W.T + b
                a = _apply(z, spec.activation)
                out = a + hs[spec.residual_from] if spec.residual_from is not None else a
                if keep:
                    cache.append((h, z))
                hs.append(out)
                h = out
            outs.append(h)
        if self.arch.merge is None:
            return outs[0][:, 0], cache
        W, b = self.params[-1]
        m_in = np.concatenate(outs, axis=1)
        z = m_in @ W.T + b
        if keep:
            cache.append((m_in, z))
        return _apply(z, self.arch.merge.activation)[:, 0], cache

    def predict_normalized(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        Xn = self.normalize_inputs(np.atleast_2d(X))
        out, _ = self._forward(Xn)
        return out[0] if single else out

    def forward(self, X):
        """Correction in amps for one input row ``(3,)`` or a batch ``(N, 3)``."""
        return self.predict_normalized(X) * self.target_scale

    __call__ = forward

    def hidden_activations(self, X) -> list:
        """Post-residual outputs of every branch layer, in layer order."""
        Xn = self.normalize_inputs(np.atleast_2d(X))
        acts = []
        for bi, layers in self._layer_groups():
            if bi is None:
                break
            h, hs = Xn, []
            for spec, W, b in layers:
                a = _apply(h @ W.T + b, spec.activation)
                h = a + hs[spec.residual_from] if spec.residual_from is not None else a
                hs.append(h)
            acts.extend(hs)
        return acts

    # -- gradients ----------------------------------------------------------

    def loss_and_grads(self, Xn: np.ndarray, yn: np.ndarray):
        """MSE on normalized targets and its gradient w.r.t. every (W, b)."""
        out, cache = self._forward(Xn, keep=True)
        n = len(yn)
        err = out - yn
        loss = float(np.mean(err * err))
        grads = [None] * len(self.params)
        d_out = (2.0 / n) * err[:, None]

        branch_grads = []
        if self.arch.merge is not None:
            m_in, z = cache[-1]
            dz = d_out * _dact(z, self.arch.merge.activation)
            W, _ = self.params[-1]
            grads[-1] = (dz.T @ m_in, dz.sum(axis=0))
            d_concat = dz @ W
            col = 0
            for branch in self.arch.branches:
                w = branch[-1].out_width
                branch_grads.append(d_concat[:, col : col + w])
                col += w
        else:
            branch_grads.append(d_out)

        idx = 0
        for bi, branch in enumerate(self.arch.branches):
            nl = len(branch)
            dh = [None] * nl
            dh[-1] = branch_grads[bi]
            for li in range(nl - 1, -1, -1):
                spec = branch[li]
                h_in, z = cache[idx + li]
                W, _ = self.params[idx + li]
                g = dh[li]
                if spec.residual_from is not None:
                    r = spec.residual_from
                    dh[r] = g if dh[r] is None else dh[r] + g
                dz = g * _dact(z, spec.activation)
                grads[idx + li] = (dz.T @ h_in, dz.sum(axis=0))
                if li > 0:
                    d_in = dz @ W
                    dh[li - 1] = d_in if dh[li - 1] is None else dh[li - 1] + d_in
            idx += nl
        return loss, grads

    # -- lowering & IO --------------------------------------------------------

    def program(self) -> kernels.Program:
        if not self.is_fitted:
            raise StateError("input normalization has not been fitted")
        pb = kernels.ProgramBuilder()
        w_in = self.arch.input_width
        x_off = pb.alloc(w_in)
        pb.emit(kernels.OP_NORM, w_in, pb.const(self.input_mean), pb.const(self.input_std))
        finals = []
        it = iter(self.params)
        branch_layers = [[(spec, *next(it)) for spec in branch] for branch in self.arch.branches]
        # branch outputs must be contiguous for the merge; reserve them first
        for layers in branch_layers:
            finals.append(pb.alloc(layers[-1][0].out_width))
        for bi, layers in enumerate(branch_layers):
            offs = []
            src, src_w = x_off, w_in
            for li, (spec, W, b) in enumerate(layers):
                out = finals[bi] if li == len(layers) - 1 else pb.alloc(spec.out_width)
                res = offs[spec.residual_from] if spec.residual_from is not None else -1
                pb.emit(
                    kernels.OP_DENSE, 1, src, src_w, out, spec.out_width,
                    pb.const(W), pb.const(b), kernels.ACTIVATIONS[spec.activation], res,
                )
                offs.append(out)
                src, src_w = out, spec.out_width
        if self.arch.merge is None:
            pb.emit(kernels.OP_OUT, finals[0])
        else:
            W, b = self.params[-1]
            spec = self.arch.merge
            out = pb.alloc(1)
            pb.emit(
                kernels.OP_DENSE, 1, finals[0], spec.in_width, out, 1,
                pb.const(W), pb.const(b), kernels.ACTIVATIONS[spec.activation], -1,
            )
            pb.emit(kernels.OP_OUT, out)
        return pb.build(1)

    def to_json(self) -> dict:
        return {
            "arch_version": ARCH_VERSION,
            "layer_specs": self.arch.to_json(),
            "weights": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.params],
            "input_norm": None
            if self.input_mean is None
            else {"mean": self.input_mean.tolist(), "std": self.input_std.tolist()},
            "target_scale": self.target_scale,
            "param_count": self.param_count,
        }

    @classmethod
    def from_json(cls, d: dict) -> "TinyFCModel":
        arch = Architecture.from_json(d["layer_specs"])
        params = [(np.array(p["W"], dtype=np.float64).reshape(-1, s.in_width), np.array(p["b"], dtype=np.float64))
                  for p, s in zip(d["weights"], arch.layers())]
        norm = d.get("input_norm")
        m = cls(arch, params, norm and norm["mean"], norm and norm["std"], d.get("target_scale"))
        if d.get("param_count") not in (None, m.param_count):
            raise ConfigError("param_count in model file does not match its weights")
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TinyFCModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _apply(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _dact(z, act):
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def build_tinyfc(hidden_widths=None, seed: int = 0, residuals=REFERENCE_RESIDUALS) -> TinyFCModel:
    return TinyFCModel.build(tinyfc_architecture(hidden_widths, residuals), seed)


class ZeroAugmentor:
    """An augmentor whose correction is identically zero."""

    target_scale = 1.0

    def program(self) -> kernels.Program:
        pb = kernels.ProgramBuilder()
        out = pb.alloc(1)
        pb.emit(kernels.OP_DENSE, 1, 0, 1, out, 1, pb.const([0.0]), pb.const([0.0]), kernels.ACT_IDENTITY, -1)
        pb.emit(kernels.OP_OUT, out)
        return pb.build(1)

    def forward(self, X):
        X = np.asarray(X)
        return 0.0 if X.ndim == 1 else np.zeros(len(X))


# ---------------------------------------------------------------------------
# datasets and training


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    split: tuple = (0.8, 0.1, 0.1)
    fit_normalization: bool = True
    # per-feature std of Gaussian jitter added to normalized training inputs
    input_noise: Optional[tuple] = None

    def __post_init__(self):
        if self.input_noise is not None:
            self.input_noise = tuple(float(v) for v in self.input_noise)
            if any(v < 0 for v in self.input_noise):
                raise ConfigError("input_noise entries must be >= 0")
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or any(r < 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {self.split}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")


def split_dataset(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle rows with ``seed`` and cut floor(r0*n) / floor(r1*n) / remainder."""
    n = len(dataset)
    if n < 10:
        raise DomainError(f"dataset too small to split ({n} rows, need >= 10)")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"invalid split ratios {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratios[0] * n))
    n_val = int(math.floor(ratios[1] * n))
    tr, va, te = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def mse(gt, pred) -> float:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise DomainError(f"length mismatch: {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        raise DomainError("mse of empty sequences")
    d = gt - pred
    return float(np.mean(d * d))


def normalized_mse(model: TinyFCModel, data: Dataset, batch: int = 65536) -> float:
    """MSE between normalized targets and the network's [-1, 1] output."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(data), batch):
        pred = model.predict_normalized(data.X[i : i + batch])
        d = pred - data.y[i : i + batch] / model.target_scale
        total += float(np.sum(d * d))
    return total / len(data)


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
            for j, (p, g) in enumerate(((W, gW), (b, gb))):
                m, v = self.m[i][j], self.v[i][j]
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for (W, b), (gW, gb) in zip(params, grads):
            W -= self.lr * gW
            b -= self.lr * gb


def _run_training(model: TinyFCModel, train_set: Dataset, val_set: Dataset, cfg: TrainConfig):
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(model.params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(model.params, cfg.learning_rate)
    Xn = model.normalize_inputs(train_set.X)
    yn = train_set.y / model.target_scale
    noise = None if not cfg.input_noise or not any(cfg.input_noise) else np.asarray(cfg.input_noise)
    history = []
    best_val, best_params = math.inf, None
    n = len(yn)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            xb = Xn[idx]
            if noise is not None:
                xb = xb + rng.standard_normal(xb.shape) * noise
            loss, grads = model.loss_and_grads(xb, yn[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            opt.step(model.params, grads)
        train_mse = normalized_mse(model, train_set)
        val_mse = normalized_mse(model, val_set) if len(val_set) else train_mse
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise TrainingDiverged(epoch)
        improved = val_mse < best_val
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "best": improved})
        if improved:
            best_val = val_mse
            best_params = [(W.copy(), b.copy()) for W, b in model.params]
    model.params = best_params
    return model, history


def train(model: TinyFCModel, dataset: Dataset, cfg: TrainConfig = TrainConfig()):
    """Minimize normalized-target MSE; returns the best-validation model and the per-epoch history.

    The input model is not modified.
    """
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    model = model.copy()
    train_set, val_set, test_set = split_dataset(dataset, cfg.split, cfg.seed)
    if cfg.fit_normalization or not model.is_fitted:
        model.fit_normalization(train_set.X, train_set.y)
    model, history = _run_training(model, train_set, val_set, cfg)
    if len(test_set):
        history.append({"epoch": "test", "test_mse": normalized_mse(model, test_set)})
    return model, history


def fine_tune(model: TinyFCModel, dataset: Dataset, cfg: Optional[TrainConfig] = None, lr_factor: float = 0.1):
    """Continue training from ``model``'s weights with a reduced learning rate.

    Normalization constants are kept, since the weights are tied to them.
    """
    if not model.is_fitted:
        raise StateError("fine_tune needs a trained model")
    cfg = cfg or TrainConfig()
    cfg = TrainConfig(**{**asdict(cfg), "learning_rate": cfg.learning_rate * lr_factor, "fit_normalization": False})
    return train(model, dataset, cfg)


def split_history(history):
    """Separate per-epoch rows from the trailing test row."""
    epochs = [h for h in history if h["epoch"] != "test"]
    test = [h for h in history if h["epoch"] == "test"]
    return epochs, (test[0]["test_mse"] if test else None)

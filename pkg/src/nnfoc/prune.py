"""PCA projection pruning.

For every hidden layer the post-residual activations are collected on a
calibration set and standardized. The eigenvalues of their covariance give
``k``, the number of principal components needed to retain
``energy_threshold`` of the variance; this bounds the subset size from
below. Neurons are ranked by column-pivoted QR and the smallest prefix
whose span retains the threshold is kept. Consumers are refit by least
squares so the pruned network reproduces the original pre-activations.

Layers joined by an identity residual add share neuron indices, so they
are pruned as one group with a common kept set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, DomainError
from .tinyfc import Architecture, LayerSpec, TinyFCModel


@dataclass(frozen=True)
class PruneConfig:
    energy_threshold: float = 0.95
    calibration_size: int = 4096

    def __post_init__(self):
        if not 0.0 < self.energy_threshold <= 1.0:
            raise ConfigError(f"energy_threshold must lie in (0, 1], got {self.energy_threshold}")
        if self.calibration_size < 1:
            raise ConfigError("calibration_size must be >= 1")


def components_for_energy(eigvals: np.ndarray, threshold: float) -> int:
    """Smallest k whose leading eigenvalues hold ``threshold`` of the total."""
    ev = np.clip(np.sort(np.asarray(eigvals, dtype=np.float64))[::-1], 0.0, None)
    total = ev.sum()
    if total <= 0:
        return 0
    frac = np.cumsum(ev) / total
    # tolerance so that threshold=1.0 is reachable despite round-off
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)


def _groups(branch) -> list:
    """Index sets of layers tied together by residual adds (union-find)."""
    parent = list(range(len(branch)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for li, spec in enumerate(branch):
        if spec.residual_from is not None:
            parent[find(li)] = find(spec.residual_from)
    groups = {}
    for li in range(len(branch)):
        groups.setdefault(find(li), []).append(li)
    return list(groups.values())


def _branch_activations(model: TinyFCModel, Xn: np.ndarray) -> list:
    acts = []
    for bi, layers in model._layer_groups():
        if bi is None:
            break
        h, hs = Xn, []
        for spec, W, b in layers:
            z = h @ W.T + b
            a = np.maximum(z, 0.0) if spec.activation == "relu" else (np.tanh(z) if spec.activation == "tanh" else z)
            h = a + hs[spec.residual_from] if spec.residual_from is not None else a
            hs.append(h)
        acts.append(hs)
    return acts


def select_neurons(acts_list: list, threshold: float) -> np.ndarray:
    """Kept neuron indices for a group of equally wide activation matrices.

    The eigenvalues give a lower bound ``k`` on the subset size (no ``m < k``
    neurons can hold the energy the top ``k`` components hold). Neurons are
    ranked by column-pivoted QR of the stacked standardized activations and
    the shortest prefix whose span retains ``threshold`` of the variance is
    kept.
    """
    n = acts_list[0].shape[1]
    if threshold >= 1.0:
        return np.arange(n)
    stds = [a.std(axis=0) for a in acts_list]
    varying = np.flatnonzero(np.any(np.stack(stds) > 1e-12, axis=0))
    if len(varying) == 0:
        # every neuron is constant: one survivor carries the group through
        return np.array([0])
    k = 1
    zs = []
    for a, s in zip(acts_list, stds):
        cols = a[:, varying]
        sv = s[varying]
        z = np.where(sv > 1e-12, (cols - cols.mean(axis=0)) / np.where(sv > 1e-12, sv, 1.0), 0.0)
        ev = np.linalg.eigvalsh(z.T @ z / max(len(z) - 1, 1))
        k = max(k, components_for_energy(ev, threshold))
        zs.append(z)
    Z = np.vstack(zs)
    _, R, piv = scipy.linalg.qr(Z, pivoting=True, mode="economic")
    total = float(np.sum(R * R))
    # residual energy left after projecting onto the first m pivots
    tail = np.array([np.sum(R[m:] ** 2) for m in range(len(varying) + 1)])
    m = k
    while m < len(varying) and 1.0 - tail[m] / total < threshold - 1e-12:
        m += 1
    return np.sort(varying[piv[:m]])


def _apply(spec: LayerSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "tanh":
        return np.tanh(z)
    return z


def _refit(inputs: np.ndarray, target: np.ndarray):
    """Affine (W, b) with inputs @ W.T + b ~= target in least squares."""
    design = np.column_stack([inputs, np.ones(len(inputs))])
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef[:-1].T.copy(), coef[-1].copy()


def pca_prune(model: TinyFCModel, calibration_inputs, cfg: PruneConfig = PruneConfig()) -> TinyFCModel:
    """Remove neurons layer by layer, refitting every consumer.

    Kept neurons are chosen on the original network's activations. Each
    consumer (the next layer, or the merge) is then refit by least squares
    so that its pre-activations on the pruned network's inputs match the
    original pre-activations, which folds the removed neurons' contribution
    into the remaining weights and keeps errors from compounding.
    """
    X = np.atleast_2d(np.asarray(calibration_inputs, dtype=np.float64))
    widest = max(l.out_width for l in model.arch.layers())
    if len(X) < 10 * widest:
        raise DomainError(f"calibration set of {len(X)} rows is smaller than 10x the widest layer ({widest})")
    if cfg.energy_threshold >= 1.0:
        return model.copy()
    Xn = model.normalize_inputs(X)
    acts = _branch_activations(model, Xn)

    keeps = []
    for bi, branch in enumerate(model.arch.branches):
        keep_b = [None] * len(branch)
        for group in _groups(branch):
            kept = select_neurons([acts[bi][li] for li in group], cfg.energy_threshold)
            for li in group:
                keep_b[li] = kept
        keeps.append(keep_b)

    new_params, new_branches, finals = [], [], []
    idx = 0
    for bi, branch in enumerate(model.arch.branches):
        layers, hs = [], []
        h_orig, h_new = Xn, Xn
        for li, spec in enumerate(branch):
            W, b = model.params[idx + li]
            kept = keeps[bi][li]
            target = h_orig @ W[kept].T + b[kept]
            Wn, bn = _refit(h_new, target)
            h = _apply(spec, h_new @ Wn.T + bn)
            if spec.residual_from is not None:
                h = h + hs[spec.residual_from]
            hs.append(h)
            layers.append(LayerSpec(Wn.shape[1], len(kept), spec.activation, spec.residual_from))
            new_params.append((Wn, bn))
            h_orig, h_new = acts[bi][li], h
        new_branches.append(layers)
        finals.append((h_orig, h_new))
        idx += len(branch)

    merge = None
    if model.arch.merge is not None:
        W, b = model.params[-1]
        target = np.hstack([f[0] for f in finals]) @ W.T + b
        Wm, bm = _refit(np.hstack([f[1] for f in finals]), target)
        merge = LayerSpec(Wm.shape[1], 1, model.arch.merge.activation)
        new_params.append((Wm, bm))

    arch = Architecture(tuple(new_branches), merge, model.arch.input_width)
    return TinyFCModel(arch, new_params, model.input_mean, model.input_std, model.target_scale)


@dataclass(frozen=True)
class PruneReport:
    params_before: int
    params_after: int
    widths_before: tuple
    widths_after: tuple
    max_output_change: float  # amps, on the calibration set
    mean_output_change: float

    @property
    def reduction(self) -> float:
        return 1.0 - self.params_after / self.params_before


def prune_report(original: TinyFCModel, pruned: TinyFCModel, calibration_inputs) -> PruneReport:
    X = np.atleast_2d(np.asarray(calibration_inputs, dtype=np.float64))
    d = np.abs(original.forward(X) - pruned.forward(X))
    widths = lambda m: tuple(tuple(l.out_width for l in b) for b in m.arch.branches)
    return PruneReport(
        original.param_count, pruned.param_count, widths(original), widths(pruned), float(d.max()), float(d.mean())
    )

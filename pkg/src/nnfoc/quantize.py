"""Post-training int8 quantization and integer inference.

Weights: symmetric per-tensor, ``scale = max|w| / 127`` (an all-zero tensor
gets scale 1), codes ``rint(w / scale)``. Biases: int32 codes at the
accumulator scale ``s_in * s_w``. Activations: asymmetric int8, range
calibrated by min/max over a calibration set (widened to contain 0).

Layer evaluation::

    acc = b_q + sum(w_q * (q_in - zp_in))            # int32
    a   = clamp(rint(acc * s_in * s_w / s_a) + zp_a)  # int8
    relu: a = max(a, zp_a)
    residual: out = clamp(rint((a - zp_a) * s_a/s_o + (r - zp_r) * s_r/s_o) + zp_o)

The tanh merge dequantizes its accumulator and applies tanh in float. All
rounding is round-half-even (``np.rint``).

Accumulator bound: ``|w_q| <= 127`` and ``|q - zp| <= 255``, so one layer
of fan-in ``n`` accumulates at most ``127 * 255 * n`` plus the bias code;
bias codes are checked to fit in ``2**30`` at quantization time, hence any
fan-in below 33,000 cannot overflow a signed 32-bit accumulator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DomainError
from .tinyfc import ARCH_VERSION, Architecture, TinyFCModel

BIAS_LIMIT = 2**30
MAX_FAN_IN = 33000


def quantize_weights(w) -> tuple:
    """Symmetric per-tensor int8 codes and scale."""
    w = np.asarray(w, dtype=np.float64)
    m = float(np.max(np.abs(w))) if w.size else 0.0
    scale = m / 127.0 if m > 0 else 1.0
    q = np.clip(np.rint(w / scale), -127, 127).astype(np.int8)
    return q, scale


def dequantize(q, scale: float, zero_point: int = 0) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) - zero_point) * scale


def activation_qparams(lo: float, hi: float) -> tuple:
    """Asymmetric int8 (scale, zero_point) covering [lo, hi] and 0."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    scale = (hi - lo) / 255.0
    if not scale > 0:
        return 1.0, 0
    zp = int(np.clip(np.rint(-128.0 - lo / scale), -128, 127))
    return scale, zp


def quantize_activation(x, scale: float, zp: int) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) / scale) + zp, -128, 127).astype(np.int64)


@dataclass
class QLayer:
    activation: str
    residual_from: Optional[int]
    w_q: np.ndarray  # int8 (out, in)
    w_scale: float
    b_q: np.ndarray  # int32 (out,)
    in_scale: float
    in_zp: int
    act_scale: float  # scale/zp after the activation (before any residual add)
    act_zp: int
    out_scale: float  # after the residual add (== act for plain layers)
    out_zp: int
    act_range: tuple = (0.0, 0.0)
    out_range: tuple = (0.0, 0.0)

    def to_json(self) -> dict:
        return {
            "activation": self.activation,
            "residual_from": self.residual_from,
            "w_q": self.w_q.astype(int).tolist(),
            "w_scale": self.w_scale,
            "b_q": self.b_q.astype(int).tolist(),
            "in_scale": self.in_scale,
            "in_zp": self.in_zp,
            "act_scale": self.act_scale,
            "act_zp": self.act_zp,
            "out_scale": self.out_scale,
            "out_zp": self.out_zp,
            "act_range": list(self.act_range),
            "out_range": list(self.out_range),
        }

    @classmethod
    def from_json(cls, d: dict) -> "QLayer":
        d = dict(d)
        d["w_q"] = np.array(d["w_q"], dtype=np.int8).reshape(len(d["b_q"]), -1)
        d["b_q"] = np.array(d["b_q"], dtype=np.int32)
        d["act_range"] = tuple(d["act_range"])
        d["out_range"] = tuple(d["out_range"])
        return cls(**d)


@dataclass
class QuantizedModel:
    arch: Architecture
    input_mean: np.ndarray
    input_std: np.ndarray
    input_scale: float
    input_zp: int
    input_range: tuple
    layers: list  # QLayer in Architecture.layers() order
    target_scale: float
    float_param_count: int
    float_weights: list = field(default_factory=list, repr=False)  # kept for error bounds

    @property
    def param_count(self) -> int:
        return int(sum(l.w_q.size + l.b_q.size for l in self.layers))

    def _grouped(self):
        it = iter(self.layers)
        groups = [[next(it) for _ in b] for b in self.arch.branches]
        merge = next(it) if self.arch.merge is not None else None
        return groups, merge

    def forward(self, X):
        out = forward_int8(self, X)
        return out

    def program(self) -> kernels.Program:
        return lower_int8(self)

    def to_json(self) -> dict:
        return {
            "arch_version": ARCH_VERSION,
            "format": "int8-per-tensor",
            "layer_specs": self.arch.to_json(),
            "input": {
                "mean": self.input_mean.tolist(),
                "std": self.input_std.tolist(),
                "scale": self.input_scale,
                "zero_point": self.input_zp,
                "range": list(self.input_range),
            },
            "layers": [l.to_json() for l in self.layers],
            "target_scale": self.target_scale,
            "param_count": self.float_param_count,
        }

    @classmethod
    def from_json(cls, d: dict) -> "QuantizedModel":
        inp = d["input"]
        return cls(
            Architecture.from_json(d["layer_specs"]),
            np.array(inp["mean"], dtype=np.float64),
            np.array(inp["std"], dtype=np.float64),
            inp["scale"],
            inp["zero_point"],
            tuple(inp["range"]),
            [QLayer.from_json(l) for l in d["layers"]],
            d["target_scale"],
            d["param_count"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "QuantizedModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _float_trace(model: TinyFCModel, Xn: np.ndarray):
    """Per-branch lists of (post-activation, post-residual) float values, and merge pre-activation."""
    branches = []
    for bi, layers in model._layer_groups():
        if bi is None:
            break
        h, hs, rec = Xn, [], []
        for spec, W, b in layers:
            z = h @ W.T + b
            a = np.maximum(z, 0.0) if spec.activation == "relu" else (np.tanh(z) if spec.activation == "tanh" else z)
            h = a + hs[spec.residual_from] if spec.residual_from is not None else a
            hs.append(h)
            rec.append((a, h))
        branches.append(rec)
    return branches


def _range(v) -> tuple:
    return (float(np.min(v)), float(np.max(v)))


def quantize_int8(model: TinyFCModel, calibration_inputs) -> "QuantizedModel":
    X = np.atleast_2d(np.asarray(calibration_inputs, dtype=np.float64))
    if len(X) == 0:
        raise DomainError("empty calibration set")
    widest_in = max(l.in_width for l in model.arch.layers())
    if widest_in > MAX_FAN_IN:
        raise ConfigError(f"fan-in {widest_in} could overflow the 32-bit accumulator")
    Xn = model.normalize_inputs(X)
    rec = _float_trace(model, Xn)
    in_range = _range(Xn)
    in_s, in_zp = activation_qparams(*in_range)

    # branch outputs are concatenated, so they share one set of qparams
    concat_range = (
        min(_range(r[-1][1])[0] for r in rec),
        max(_range(r[-1][1])[1] for r in rec),
    )
    concat_s, concat_zp = activation_qparams(*concat_range)

    layers = []
    it = iter(model.params)
    for bi, branch in enumerate(model.arch.branches):
        prev_s, prev_zp = in_s, in_zp
        for li, spec in enumerate(branch):
            W, b = next(it)
            a_rng = _range(rec[bi][li][0])
            o_rng = _range(rec[bi][li][1])
            last = li == len(branch) - 1
            if spec.residual_from is None:
                a_s, a_zp = (concat_s, concat_zp) if last else activation_qparams(*a_rng)
                o_s, o_zp = a_s, a_zp
                if last:
                    o_rng = a_rng = concat_range
            else:
                a_s, a_zp = activation_qparams(*a_rng)
                o_s, o_zp = (concat_s, concat_zp) if last else activation_qparams(*o_rng)
                if last:
                    o_rng = concat_range
            layers.append(_qlayer(spec, W, b, prev_s, prev_zp, a_s, a_zp, o_s, o_zp, a_rng, o_rng))
            prev_s, prev_zp = o_s, o_zp
    if model.arch.merge is not None:
        W, b = next(it)
        spec = model.arch.merge
        layers.append(_qlayer(spec, W, b, concat_s, concat_zp, 1.0, 0, 1.0, 0, (0.0, 0.0), (0.0, 0.0)))

    return QuantizedModel(
        model.arch,
        model.input_mean.copy(),
        model.input_std.copy(),
        in_s,
        in_zp,
        in_range,
        layers,
        model.target_scale,
        model.param_count,
        [(W.copy(), b.copy()) for W, b in model.params],
    )


def _qlayer(spec, W, b, in_s, in_zp, a_s, a_zp, o_s, o_zp, a_rng, o_rng) -> QLayer:
    w_q, w_s = quantize_weights(W)
    b_q = np.rint(np.asarray(b) / (in_s * w_s))
    if np.any(np.abs(b_q) > BIAS_LIMIT):
        raise ConfigError("bias code exceeds the int32 headroom; the layer's input range is degenerate")
    return QLayer(
        spec.activation, spec.residual_from, w_q, w_s, b_q.astype(np.int32),
        in_s, in_zp, a_s, a_zp, o_s, o_zp, a_rng, o_rng,
    )


def _requant(acc, mult, zp):
    return np.clip(np.rint(acc * mult) + zp, -128, 127).astype(np.int64)


def _qdense(q_in, layer: QLayer):
    """int32 accumulate: b_q + sum(w_q * (q_in - zp_in))."""
    x = (q_in - layer.in_zp).astype(np.int32)
    return x @ layer.w_q.T.astype(np.int32) + layer.b_q.astype(np.int32)


def forward_int8(qmodel: QuantizedModel, X, return_bound: bool = False):
    """Integer inference. Returns amps; with ``return_bound`` also a per-row
    upper bound on ``|int8 - float|`` (amps) from interval propagation."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not np.all(np.isfinite(X)):
        raise DomainError("non-finite network input")
    Xn = (X - qmodel.input_mean) / qmodel.input_std
    q0 = quantize_activation(Xn, qmodel.input_scale, qmodel.input_zp)
    d0 = dequantize(q0, qmodel.input_scale, qmodel.input_zp)
    eps0 = np.abs(d0 - Xn)
    groups, merge = qmodel._grouped()
    fw = iter(qmodel.float_weights) if qmodel.float_weights else None

    outs, bounds = [], []
    for layers in groups:
        q, eps = q0, eps0
        qs, es = [], []
        for L in layers:
            acc = _qdense(q, L)
            a = _requant(acc, L.in_scale * L.w_scale / L.act_scale, L.act_zp)
            if L.activation == "relu":
                a = np.maximum(a, L.act_zp)
            if fw is not None:
                eps = _dense_bound(next(fw), L, q, eps, acc, a)
            if L.residual_from is not None:
                r, r_eps = qs[L.residual_from], es[L.residual_from]
                src = layers[L.residual_from]
                v = (a - L.act_zp) * (L.act_scale / L.out_scale) + (r - src.out_zp) * (src.out_scale / L.out_scale)
                o = np.clip(np.rint(v) + L.out_zp, -128, 127).astype(np.int64)
                if fw is not None:
                    exact = (a - L.act_zp) * L.act_scale + (r - src.out_zp) * src.out_scale
                    eps = eps + r_eps + np.abs(dequantize(o, L.out_scale, L.out_zp) - exact)
                a = o
            qs.append(a)
            es.append(eps)
            q = a
        outs.append(q)
        bounds.append(eps)

    if merge is None:
        L = groups[0][-1]
        y = dequantize(outs[0][:, 0], L.out_scale, L.out_zp)
        bound = bounds[0][:, 0]
    else:
        q = np.concatenate(outs, axis=1)
        acc = _qdense(q, merge)
        z = acc[:, 0] * (merge.in_scale * merge.w_scale)
        y = np.array([math.tanh(v) for v in z]) if merge.activation == "tanh" else z
        if fw is not None:
            e = _dense_bound(next(fw), merge, q, np.concatenate(bounds, axis=1), acc, None)[:, 0]
            bound = np.minimum(e, 2.0) if merge.activation == "tanh" else e
    y = y * qmodel.target_scale
    if not return_bound:
        return y[0] if single else y
    if fw is None:
        raise ConfigError("error bounds need the float weights kept at quantization time")
    bound = bound * qmodel.target_scale + 1e-9 * max(1.0, qmodel.target_scale)
    return (y[0], bound[0]) if single else (y, bound)


def _dense_bound(float_wb, L: QLayer, q_in, eps_in, acc, a_out):
    """Bound on |float activation - dequantized int8 activation| after a layer.

    With h the float input, h' = deq(q_in), |h - h'| <= eps_in; W' and b'
    the dequantized weights; z' = W'h' + b' exactly equals acc * s_in * s_w:
        |Wh + b - z'| <= |W'| eps + |W - W'| (|h'| + eps) + |b - b'|
    Requantization adds the exact rounding/clamping error of this row;
    relu and tanh are 1-Lipschitz.
    """
    W, b = float_wb
    Wd = L.w_q.astype(np.float64) * L.w_scale
    bd = L.b_q.astype(np.float64) * (L.in_scale * L.w_scale)
    h = dequantize(q_in, L.in_scale, L.in_zp)
    e = eps_in @ np.abs(Wd).T + (np.abs(h) + eps_in) @ np.abs(W - Wd).T + np.abs(b - bd)
    if a_out is None:
        return e
    z = acc * (L.in_scale * L.w_scale)
    if L.activation == "relu":
        f = np.maximum(z, 0.0)
    elif L.activation == "tanh":
        f = np.tanh(z)
    else:
        f = z
    return e + np.abs(dequantize(a_out, L.act_scale, L.act_zp) - f)


def lower_int8(qm: QuantizedModel) -> kernels.Program:
    pb = kernels.ProgramBuilder()
    w_in = qm.arch.input_width
    x_off = pb.alloc(w_in)
    pb.emit(kernels.OP_QIN, w_in, pb.const(qm.input_mean), pb.const(qm.input_std), pb.const([qm.input_scale]), qm.input_zp)
    groups, merge = qm._grouped()
    finals = [pb.alloc(layers[-1].w_q.shape[0]) for layers in groups]
    for bi, layers in enumerate(groups):
        offs, src, src_w = [], x_off, w_in
        for li, L in enumerate(layers):
            out_w = L.w_q.shape[0]
            out = finals[bi] if li == len(layers) - 1 else pb.alloc(out_w)
            if L.residual_from is not None:
                r = layers[L.residual_from]
                res, res_zp = offs[L.residual_from], r.out_zp
                ra = pb.const([L.act_scale / L.out_scale])
                rr = pb.const([r.out_scale / L.out_scale])
            else:
                res, res_zp, ra, rr = -1, 0, 0, 0
            pb.emit(
                kernels.OP_QDENSE, 1, src, src_w, L.in_zp, out, out_w,
                pb.qconst(L.w_q), pb.qconst(L.b_q), kernels.ACTIVATIONS[L.activation],
                pb.const([L.in_scale * L.w_scale / L.act_scale]), L.act_zp,
                res, res_zp, ra, rr, L.out_zp,
            )
            offs.append(out)
            src, src_w = out, out_w
    if merge is None or merge.activation != "tanh":
        raise ConfigError("int8 lowering needs a tanh merge layer")
    out = pb.alloc(1)
    pb.emit(
        kernels.OP_QDENSE, 1, finals[0], merge.w_q.shape[1], merge.in_zp, out, 1,
        pb.qconst(merge.w_q), pb.qconst(merge.b_q), kernels.ACTIVATIONS[merge.activation],
        pb.const([merge.in_scale * merge.w_scale]), 0, -1, 0, 0, 0, 0,
    )
    pb.emit(kernels.OP_QOUT, out)
    return pb.build(2)

"""Flat "programs" for single-sample network inference inside numba.

A program is three arrays: ``ints`` (op stream), ``floats`` (weights,
biases, normalization and requantization constants) and ``qints`` (int8
weight codes and int32 bias codes).  ``mode`` is 1 for float inference and
2 for int8 inference.  All activations live in one scratch vector.

Float op records (ints stream):
    OP_NORM    in_w, mean_off, std_off
    OP_DENSE   n_src, (src_off, src_w)*n_src, out_off, out_w, w_off, b_off, act, res_off
    OP_OUT     off

Int8 op records:
    OP_QIN     in_w, mean_off, std_off, scale_off, zp
    OP_QDENSE  n_src, (src_off, src_w)*n_src, in_zp, out_off, out_w, w_off, b_off,
               act, mult_off, a_zp, res_off, res_zp, ra_off, rr_off, o_zp
    OP_QOUT    off      (value already dequantized into fscratch)

In OP_QDENSE a tanh activation dequantizes the accumulator (``mult`` is
then the accumulator scale) and leaves a float in the float scratch.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numba
import numpy as np

OP_NORM, OP_DENSE, OP_OUT, OP_QIN, OP_QDENSE, OP_QOUT = 0, 1, 2, 3, 4, 5
ACT_IDENTITY, ACT_RELU, ACT_TANH = 0, 1, 2
ACTIVATIONS = {"identity": ACT_IDENTITY, "relu": ACT_RELU, "tanh": ACT_TANH}
SCRATCH = 512


class Program(NamedTuple):
    ints: np.ndarray
    floats: np.ndarray
    qints: np.ndarray
    mode: int


EMPTY_PROGRAM = Program(
    np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int32), 0
)


@numba.njit(cache=True)
def _act(v, act):
    if act == 1:
        return v if v > 0.0 else 0.0
    if act == 2:
        return math.tanh(v)
    return v


@numba.njit(cache=True)
def _clamp8(v):
    if v > 127:
        return 127
    if v < -128:
        return -128
    return v


@numba.njit(cache=True)
def run_program(inp, ints, floats, qints, mode):
    s = np.zeros(512)
    q = np.zeros(512, dtype=np.int64)
    pc = 0
    n = ints.shape[0]
    result = 0.0
    while pc < n:
        op = ints[pc]
        if op == 0:
            w = ints[pc + 1]
            mo = ints[pc + 2]
            so = ints[pc + 3]
            for i in range(w):
                s[i] = (inp[i] - floats[mo + i]) / floats[so + i]
            pc += 4
        elif op == 1:
            nsrc = ints[pc + 1]
            base = pc + 2 + 2 * nsrc
            out_off = ints[base]
            out_w = ints[base + 1]
            w_off = ints[base + 2]
            b_off = ints[base + 3]
            act = ints[base + 4]
            res = ints[base + 5]
            in_w = 0
            for j in range(nsrc):
                in_w += ints[pc + 3 + 2 * j]
            for r in range(out_w):
                acc = 0.0
                col = 0
                for j in range(nsrc):
                    so = ints[pc + 2 + 2 * j]
                    sw = ints[pc + 3 + 2 * j]
                    for c in range(sw):
                        acc += floats[w_off + r * in_w + col] * s[so + c]
                        col += 1
                v = _act(acc + floats[b_off + r], act)
                if res >= 0:
                    v += s[res + r]
                s[out_off + r] = v
            pc = base + 6
        elif op == 2:
            result = s[ints[pc + 1]]
            pc += 2
        elif op == 3:
            w = ints[pc + 1]
            mo = ints[pc + 2]
            so = ints[pc + 3]
            sc = floats[ints[pc + 4]]
            zp = ints[pc + 5]
            for i in range(w):
                xn = (inp[i] - floats[mo + i]) / floats[so + i]
                q[i] = _clamp8(np.int64(np.rint(xn / sc)) + zp)
            pc += 6
        elif op == 4:
            nsrc = ints[pc + 1]
            base = pc + 2 + 2 * nsrc
            in_zp = ints[base]
            out_off = ints[base + 1]
            out_w = ints[base + 2]
            w_off = ints[base + 3]
            b_off = ints[base + 4]
            act = ints[base + 5]
            mult = floats[ints[base + 6]]
            a_zp = ints[base + 7]
            res = ints[base + 8]
            res_zp = ints[base + 9]
            ra = floats[ints[base + 10]] if res >= 0 else 0.0
            rr = floats[ints[base + 11]] if res >= 0 else 0.0
            o_zp = ints[base + 12]
            in_w = 0
            for j in range(nsrc):
                in_w += ints[pc + 3 + 2 * j]
            for r in range(out_w):
                acc = np.int64(qints[b_off + r])
                col = 0
                for j in range(nsrc):
                    so = ints[pc + 2 + 2 * j]
                    sw = ints[pc + 3 + 2 * j]
                    for c in range(sw):
                        acc += np.int64(qints[w_off + r * in_w + col]) * (q[so + c] - in_zp)
                        col += 1
                if act == 2:
                    s[out_off + r] = math.tanh(acc * mult)
                    continue
                a = _clamp8(np.int64(np.rint(acc * mult)) + a_zp)
                if act == 1 and a < a_zp:
                    a = a_zp
                if res >= 0:
                    v = (a - a_zp) * ra + (q[res + r] - res_zp) * rr
                    a = _clamp8(np.int64(np.rint(v)) + o_zp)
                q[out_off + r] = a
            pc = base + 13
        elif op == 5:
            result = s[ints[pc + 1]]
            pc += 2
        else:
            return np.nan
    return result


def run_program_batch(prog: Program, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _run_batch(X, prog.ints, prog.floats, prog.qints, prog.mode)


@numba.njit(cache=True)
def _run_batch(X, ints, floats, qints, mode):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = run_program(X[i], ints, floats, qints, mode)
    return out


class ProgramBuilder:
    """Accumulates op records and constants, hands out scratch offsets."""

    def __init__(self):
        self.ints: list = []
        self.floats: list = []
        self.qints: list = []
        self.cursor = 0

    def alloc(self, width: int) -> int:
        off = self.cursor
        self.cursor += width
        if self.cursor > SCRATCH:
            raise ValueError("network too wide for the inference scratch buffer")
        return off

    def const(self, values) -> int:
        off = len(self.floats)
        self.floats.extend(float(v) for v in np.ravel(values))
        return off

    def qconst(self, values) -> int:
        off = len(self.qints)
        self.qints.extend(int(v) for v in np.ravel(values))
        return off

    def emit(self, *fields) -> None:
        self.ints.extend(int(f) for f in fields)

    def build(self, mode: int) -> Program:
        return Program(
            np.array(self.ints, dtype=np.int64),
            np.array(self.floats, dtype=np.float64),
            np.array(self.qints, dtype=np.int32),
            mode,
        )

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nnfoc.cost import (
    bench_latency,
    cost_report,
    count_macc,
    estimate_memory,
    memory_detail,
    peak_activation_elements,
    render_table,
)
from nnfoc.prune import PruneConfig, pca_prune
from nnfoc.quantize import quantize_int8
from nnfoc.tinyfc import Architecture, LayerSpec, TinyFCModel, build_tinyfc


def counted_forward(model, x):
    """Naive forward that tallies multiply-accumulates, residual adds and activations."""
    ops = 0
    finals = []
    it = iter(model.params)
    for branch in model.arch.branches:
        h, hist = list(x), []
        for spec in branch:
            W, b = next(it)
            z = []
            for o in range(len(b)):
                acc = b[o]
                for i in range(len(h)):
                    acc += W[o][i] * h[i]
                    ops += 1
                z.append(acc)
            if spec.activation != "identity":
                z = [max(v, 0.0) if spec.activation == "relu" else np.tanh(v) for v in z]
                ops += len(z)
            if spec.residual_from is not None:
                z = [u + v for u, v in zip(z, hist[spec.residual_from])]
                ops += len(z)
            hist.append(z)
            h = z
        finals.extend(h)
    if model.arch.merge is not None:
        W, b = next(it)
        ops += len(finals) + (model.arch.merge.activation != "identity")
    return ops


@settings(max_examples=100)
@given(st.lists(st.integers(1, 12), min_size=5, max_size=5), st.booleans(), st.integers(0, 10**6))
def test_macc_matches_operation_count(widths, with_res, seed):
    res = ((2, 1), (3, 0)) if with_res else ()
    if with_res:
        widths[2], widths[3] = widths[1], widths[0]
    m = build_tinyfc(widths, residuals=res, seed=seed)
    assert count_macc(m) == counted_forward(m, [0.1, 0.2, 0.3])


def test_reference_macc():
    m = build_tinyfc()
    assert 1400 <= count_macc(m) <= 1900
    assert count_macc(m) == 1513


def test_reference_memory():
    m = build_tinyfc()
    m.set_identity_normalization()
    w, a = estimate_memory(m)
    assert w == 4 * 1461 == 5844
    q = quantize_int8(m, np.random.default_rng(0).normal(size=(500, 3)))
    wq, aq = estimate_memory(q)
    assert wq == 1461
    assert aq * 4 == a
    assert memory_detail(q)["header_bytes"] > 0


def test_two_layer_activation_peak():
    arch = Architecture(((LayerSpec(3, 4), LayerSpec(4, 1, "identity")),), None)
    # input (3) and first hidden (4) are live together while layer one runs
    assert peak_activation_elements(arch) == 7


def test_pruned_model_is_cheaper():
    m = build_tinyfc(seed=0)
    rng = np.random.default_rng(0)
    m.fit_normalization(rng.normal(size=(500, 3)), rng.normal(size=500))
    p = pca_prune(m, rng.normal(size=(4096, 3)), PruneConfig(0.9))
    assert count_macc(p) < count_macc(m)
    assert estimate_memory(p)[0] < estimate_memory(m)[0]


def fitted_model(**kw):
    m = build_tinyfc(**kw)
    m.set_identity_normalization()
    return m


def test_latency_stats_are_ordered():
    s = bench_latency(fitted_model(), n_runs=100)
    assert 0 < s.min_ns <= s.median_ns <= s.p99_ns
    assert s.n_runs == 100 and s.macc == 1513 and s.ns_per_macc > 0


def test_bigger_model_is_slower_by_majority():
    small = fitted_model(hidden_widths=[2, 2, 2, 2, 2])
    big = fitted_model(hidden_widths=[40, 60, 60, 40, 30])
    wins = sum(
        bench_latency(small, n_runs=100).median_ns < bench_latency(big, n_runs=100).median_ns for _ in range(5)
    )
    assert wins >= 3


def test_too_few_runs():
    with pytest.raises(ValueError):
        bench_latency(fitted_model(), n_runs=99)


def test_report_and_table():
    m = fitted_model()
    r = cost_report("TinyFC", m, "float", bench_latency(m, n_runs=100))
    assert r.macc == 1513 and r.weight_bytes == 5844 and r.latency["n_runs"] == 100
    table = render_table([r, cost_report("x", m, "custom")])
    assert "TinyFC" in table and "n/a" in table and "not modeled" in table

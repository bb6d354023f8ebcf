"""Timing benchmarks: model forward+backward scaling and the core backends."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import backends
from .model import Mesh, ModelConfig, build_graph, init_params


@dataclass
class ScalingRow:
    n: int
    d: int
    seconds: float


def _time_once(graph):
    t0 = time.perf_counter()
    ad.forward_eval(graph.loss)
    ad.backward(graph.loss)
    return time.perf_counter() - t0


def time_forward_backward(n, d, repeats=3, d_k=8, layers=3, seed=0):
    """Minimum over ``repeats`` of one forward+backward pass for a single sample."""
    rng = np.random.default_rng(seed)
    mesh = Mesh("radial", (np.arange(1, n + 1) / n)[:, None], 1.0 / n, 1.0 / d)
    # explicit N x N attention: the cost being measured
    cfg = ModelConfig(layers=layers, d=d, d_k=d_k, head_hidden=(16, 16), attn_init_scale=0.1,
                      attention_form="explicit")
    params = init_params(cfg, mesh, seed)
    graph = build_graph(cfg, mesh, 1, params)
    graph.load(params, rng.standard_normal((1, n, d)), rng.standard_normal((1, 1, d)))
    _time_once(graph)  # warm-up
    return min(_time_once(graph) for _ in range(repeats))


def fit_exponent(xs, ts):
    """Slope of ``log t`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ts, float)), 1)[0])


def scaling_benchmark(n_list=(256, 512, 1024, 2048), d_list=(16, 32, 64, 128), repeats=3,
                      n_fixed_d=32, d_fixed_n=512):
    """Times along N (at fixed d) and along d (at fixed N).

    Returns ``(rows, summary)``; the summary holds the fitted exponents and
    the time ratios of consecutive doublings.
    """
    if not n_list or not d_list:
        raise ValueError("N and d lists must be nonempty")
    rows = [ScalingRow(n, n_fixed_d, time_forward_backward(n, n_fixed_d, repeats)) for n in n_list]
    rows_d = [ScalingRow(d_fixed_n, d, time_forward_backward(d_fixed_n, d, repeats)) for d in d_list]
    tn = [r.seconds for r in rows]
    td = [r.seconds for r in rows_d]
    summary = {
        "n_exponent": fit_exponent(n_list, tn) if len(n_list) > 1 else float("nan"),
        "d_exponent": fit_exponent(d_list, td) if len(d_list) > 1 else float("nan"),
        "n_ratios": [tn[i + 1] / tn[i] for i in range(len(tn) - 1)],
        "d_ratios": [td[i + 1] / td[i] for i in range(len(td) - 1)],
    }
    return rows + rows_d, summary


def core_benchmark(n_points=64, repeats=3):
    """Seconds per call of the radial operator quadrature for each backend."""
    xs = np.linspace(-np.pi - 11.0, np.pi + 11.0, n_points)
    out = {}
    for name, mod in backends().items():
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            mod.radial_operator(0, 5.0, 11.0, 0, 1.0, xs, 1e-8, 2000)
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def write_scaling_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("N,d,seconds\n")
        for r in rows:
            fh.write(f"{r.n},{r.d},{r.seconds:.6e}\n")

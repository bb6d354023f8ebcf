"""Executable theory checks with quantified margins.

Each suite returns an :class:`OracleResult` whose ``value`` is compared with
``threshold``; ``margin`` is positive when the property holds.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import darcy
from .estimation import (build_gram, build_rho, gram_split, kernel_error, regularized_estimate,
                         riemann_loss, select_lambda, single_pair_context, weighted_norm)
from .model import (Mesh, ModelConfig, NaoParameters, NaoVariant, build_graph, continuous_forward,
                    discretize_parameters, init_params, lemma1_reference_kernel, run_forward)
from .radial import (InputFunctionSpec, RadialKernelSpec, SampleGrid, TokenPair, assemble_dataset,
                     build_tokens, eval_kernel)
from .training import loss


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    threshold: float
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def margin(self):
        return self.details.get("margin", float("nan"))

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- gradients

@_timed
def gradient_check(n_coords=20, seed=0, step=1e-5, tol=1e-5):
    """Autodiff against central differences on the full training loss.

    Relative error per coordinate is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|)``;
    coordinates whose gradient is below ``1e-6`` of the largest sampled one
    are measured against that floor instead (their difference is roundoff).
    """
    rng = np.random.default_rng(seed)
    grid = SampleGrid(0.5)
    mesh = Mesh.radial(grid)
    data = assemble_dataset([RadialKernelSpec("sine", 2), RadialKernelSpec("sine", 6)],
                            [InputFunctionSpec("cos", 1), InputFunctionSpec("sin", 2)], grid, 12)
    cfg = ModelConfig(layers=3, d=12, d_k=4, attn_init_scale=0.5)
    params = init_params(cfg, mesh, seed)
    params.values["wf"] = np.array([0.3])
    graph = build_graph(cfg, mesh, len(data.samples), params)
    _, grads = loss(data.samples, params, mesh, graph)
    names = sorted(params.values)
    sizes = np.array([params.values[n].size for n in names])
    picks = rng.choice(sizes.sum(), size=n_coords, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    ad_vals, fd_vals, where = [], [], []
    for p in picks:
        k = int(np.searchsorted(offsets, p, side="right") - 1)
        name, flat = names[k], int(p - offsets[k])
        arr = params.values[name]
        idx = np.unravel_index(flat, arr.shape)
        h = step * max(1.0, abs(arr[idx]))
        orig = arr[idx]
        arr[idx] = orig + h
        lp, _ = loss(data.samples, params, mesh, graph, with_grad=False)
        arr[idx] = orig - h
        lm, _ = loss(data.samples, params, mesh, graph, with_grad=False)
        arr[idx] = orig
        ad_vals.append(float(grads[name][idx]))
        fd_vals.append((lp - lm) / (2 * h))
        where.append(f"{name}{list(idx)}")
    ad_vals, fd_vals = np.array(ad_vals), np.array(fd_vals)
    floor = 1e-6 * max(np.abs(ad_vals).max(), np.abs(fd_vals).max(), 1e-300)
    rel = np.abs(ad_vals - fd_vals) / np.maximum(np.maximum(np.abs(ad_vals), np.abs(fd_vals)), floor)
    worst = float(rel.max())
    return OracleResult("gradients", worst < tol, worst, tol,
                        f"max rel. error {worst:.2e} over {n_coords} coordinates (< {tol:g})",
                        {"margin": tol - worst, "coords": where, "autodiff": ad_vals,
                         "finite_difference": fd_vals, "relative": rel})


# ---------------------------------------------------------------- Riemann equivalence

def _random_general_instance(rng, n_max=64, d_max=16):
    n = int(rng.integers(8, n_max + 1))
    d = int(rng.integers(4, d_max + 1))
    layers = int(rng.integers(2, 4))
    coords = np.sort(rng.uniform(0, 1, n))
    mesh = Mesh.general(coords, 1.0 / n)
    cfg = ModelConfig(layers=layers, d=d, d_k=int(rng.integers(2, 6)), head_hidden=(8, 8),
                      variant=NaoVariant())
    params = init_params(cfg, mesh, int(rng.integers(2 ** 31)))
    tokens = TokenPair(rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (n, d)))
    return mesh, params, tokens


@_timed
def riemann_equivalence(n_instances=10, seed=0, tol=1e-10):
    """Discrete attention with rescaled weights against the Riemann-sum continuum form.

    For each random instance the continuous-mixer graph, the independent
    block-wise integral form and the discrete-mixer graph (with weights
    produced by :func:`discretize_parameters`) must agree.
    """
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for _ in range(n_instances):
        mesh, params, tokens = _random_general_instance(rng)
        K_int, p_int = continuous_forward(tokens, params, mesh)
        K_c, p_c = run_forward(params, mesh, [tokens])
        K_d, p_d = run_forward(discretize_parameters(params, mesh), mesh, [tokens])
        scale = max(np.abs(K_int).max(), 1e-300)
        pscale = max(np.abs(p_int).max(), 1e-300)
        disc = max(np.abs(K_c[0] - K_int).max() / scale, np.abs(K_d[0] - K_int).max() / scale,
                   np.abs(p_c[0] - p_int).max() / pscale, np.abs(p_d[0] - p_int).max() / pscale)
        rows.append((mesh.n, params.config.d, params.config.layers, disc))
        worst = max(worst, disc)
    return OracleResult("riemann-equivalence", worst < tol, worst, tol,
                        f"max relative discrepancy {worst:.2e} over {n_instances} instances (< {tol:g})",
                        {"margin": tol - worst, "instances": rows})


# ---------------------------------------------------------------- two-layer continuum limit

_BASIS = [lambda x: np.ones_like(x), lambda x: np.cos(np.pi * x), lambda x: np.sin(2 * np.pi * x)]


def _limit_level(N, d, head_values, wf):
    """Two-layer linear radial NAO built from fixed continuum functions.

    Rows r_k = k/N on (0, 1], columns at midpoints of [0, 1].  The layer
    interaction matrices discretize smooth weight functions
    ``W_l(x, y) = sum_i a_li phi_i(x) psi_i(y)`` with the ``dx^2`` factor of
    the double integral.
    """
    r = np.arange(1, N + 1) / N
    x = (np.arange(d) + 0.5) / d
    dx = 1.0 / d
    g = np.sin(2 * np.pi * x[None, :] + 3 * r[:, None]) + r[:, None] * np.cos(np.pi * x[None, :])
    f = np.cos(2 * np.pi * x)[None, :]
    d_k = len(_BASIS)
    vals = {}
    for l, (a, shift) in enumerate(((0.4, 0.0), (0.7, 0.25)), start=1):
        Phi = np.column_stack([b(x) for b in _BASIS]) * a
        Psi = np.column_stack([b(x + shift) for b in _BASIS])
        vals[f"wq{l}"] = Phi * dx * d_k ** 0.25
        vals[f"wk{l}"] = Psi * dx * d_k ** 0.25
    vals.update(head_values)
    vals["wf"] = np.array([wf])
    cfg = ModelConfig(layers=2, d=d, d_k=d_k, head_hidden=(8, 8))
    mesh = Mesh("radial", r[:, None], 1.0 / N, dx)
    params = NaoParameters(cfg, "radial", vals)
    tokens = TokenPair(g, f)
    return r, lemma1_reference_kernel(tokens, params, mesh), run_forward(params, mesh, [tokens])[0][0, 0]


@_timed
def lemma1_limit(d0=16, n0=16, steps=3, seed=0):
    """Successive kernel differences under (d, N) -> (2d, 2N) refinement decrease.

    Differences are measured on the coarsest row grid (rows are nested).
    The graph kernel is also compared with the loop-based reference.
    """
    cfg = ModelConfig(layers=2, d=4, d_k=3, head_hidden=(8, 8))
    heads = {k: v for k, v in init_params(cfg, Mesh("radial", np.zeros((4, 1)), 1.0, 1.0),
                                          seed).values.items() if k.startswith("head")}
    kernels, agree = [], 0.0
    for s in range(steps + 1):
        m = 2 ** s
        r, K_ref, K_graph = _limit_level(n0 * m, d0 * m, heads, 0.5)
        agree = max(agree, float(np.abs(K_ref - K_graph).max() / np.abs(K_ref).max()))
        kernels.append(K_ref[m - 1::m])          # values at the coarse rows k/n0
    deltas = [float(np.abs(kernels[i + 1] - kernels[i]).max()) for i in range(steps)]
    monotone = all(deltas[i + 1] < deltas[i] for i in range(steps - 1))
    ratio = min(deltas[i] / deltas[i + 1] for i in range(steps - 1))
    passed = monotone and agree < 1e-10
    return OracleResult("lemma1-limit", passed, ratio, 1.0,
                        "successive differences " + ", ".join(f"{v:.3e}" for v in deltas)
                        + f" (min contraction {ratio:.2f}, graph/reference gap {agree:.1e})",
                        {"margin": ratio - 1.0, "deltas": deltas, "graph_gap": agree})


# ---------------------------------------------------------------- identifiability

def identifiability_setup(dx=0.5, d=4):
    grid = SampleGrid(dx)
    spec = RadialKernelSpec("sine", 3)
    cols = np.arange(0, grid.n_cols, grid.n_cols // d)[:d]
    s = build_tokens(spec, InputFunctionSpec("cos", 1), grid, cols)
    return grid, spec, [s]


@_timed
def identifiability(dx=0.5, d=4, null_tol=1e-10, range_tol=1e-6, size=0.1):
    """Loss is blind to null-space perturbations of the Gram operator and
    sensitive to every in-range one (of L2(rho) norm ``size``)."""
    grid, spec, samples = identifiability_setup(dx, d)
    K = eval_kernel(spec, grid.r)
    rho, _ = build_rho(samples, grid.dx, grid.dr)
    G = build_gram(samples, grid.dx)
    V_range, V_null, _ = gram_split(G)
    base = riemann_loss(K, samples, grid.dx, grid.dr)

    def change(v):
        nv = weighted_norm(v, rho, grid.dr)
        dv = v * (size / nv) if nv > 0 else v * size
        return max(abs(riemann_loss(K + sgn * dv, samples, grid.dx, grid.dr) - base) for sgn in (1, -1))

    null_changes = [change(V_null[:, i]) for i in range(V_null.shape[1])]
    range_changes = [change(V_range[:, i]) for i in range(V_range.shape[1])]
    worst_null = max(null_changes) if null_changes else 0.0
    least_range = min(range_changes) if range_changes else 0.0
    passed = worst_null < null_tol and least_range > range_tol and V_range.shape[1] < grid.n_rows
    return OracleResult("identifiability", passed, worst_null, null_tol,
                        f"null-space loss change {worst_null:.1e} (< {null_tol:g}), smallest in-range "
                        f"change {least_range:.1e} (> {range_tol:g}), rank {V_range.shape[1]}/{grid.n_rows}",
                        {"margin": min(null_tol - worst_null, least_range - range_tol),
                         "null": null_changes, "range": range_changes})


# ---------------------------------------------------------------- regularized recovery

def recovery_case(dx=0.5, kernel="sine:1", u="cos:1"):
    """Single pair on every column with ``f`` consistent with the Riemann sum."""
    grid = SampleGrid(dx)
    spec = RadialKernelSpec.parse(kernel)
    K = eval_kernel(spec, grid.r)
    tp = build_tokens(spec, InputFunctionSpec.parse(u), grid, np.arange(grid.n_cols),
                      f_values=np.zeros(grid.n_cols))
    tp.f = (K @ tp.u * grid.dr).reshape(1, -1)
    return grid, K, tp


@_timed
def regularized_recovery(dx=0.5, tol=0.05, kernel="sine:1", u="cos:1"):
    """Noiseless inversion with the Gram-operator regularizer and L-curve lambda."""
    grid, K_true, tp = recovery_case(dx, kernel, u)
    ctx = single_pair_context(tp, grid.dx, grid.dr, "gram")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sel = select_lambda(ctx)
    K_hat = regularized_estimate(ctx, sel.lam)
    rho, _ = build_rho([tp], grid.dx, grid.dr)
    err = kernel_error(K_hat, K_true, rho, grid.dr)
    return OracleResult("regularized-recovery", err < tol, err, tol,
                        f"L2(rho) kernel error {err:.2e} at lambda {sel.lam:.2e} "
                        f"(index {sel.index}{', fallback' if sel.fallback else ''}) (< {tol:g})",
                        {"margin": tol - err, "lambda": sel.lam, "fallback": sel.fallback,
                         "warnings": [str(w.message) for w in caught]})


# ---------------------------------------------------------------- Darcy

@_timed
def darcy_convergence(sizes=(21, 41, 81), seeds=range(10), ring=2, min_order=1.8,
                      max_order=2.2, min_match=0.8):
    """Manufactured-solution order and row-sum microstructure recovery."""
    errs, order = darcy.convergence_order(sizes)
    accs = []
    for seed in seeds:
        micro = darcy.generate_microstructure(seed)
        rec = darcy.recover_microstructure(darcy.stiffness_inverse_kernel(micro))
        accs.append(darcy.recovery_accuracy(rec, micro, ring))
    mean_acc = float(np.mean(accs))
    passed = min_order <= order <= max_order and mean_acc >= min_match
    return OracleResult("darcy-convergence", passed, order, 2.0,
                        f"order {order:.3f} in [{min_order}, {max_order}], mean recovery "
                        f"{mean_acc:.3f} over {len(accs)} microstructures (>= {min_match})",
                        {"margin": min(order - min_order, max_order - order, mean_acc - min_match),
                         "errors": errs, "accuracy": accs})


SUITES = {
    "gradients": gradient_check,
    "riemann-equivalence": riemann_equivalence,
    "lemma1-limit": lemma1_limit,
    "identifiability": identifiability,
    "regularized-recovery": regularized_recovery,
    "darcy-convergence": darcy_convergence,
}


def run_suite(name):
    if name not in SUITES:
        raise KeyError(f"unknown oracle suite {name!r}")
    return SUITES[name]()

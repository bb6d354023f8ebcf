import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naolab.errors import DimensionError, NumericError, SolverError
from naolab.estimation import (SinglePairContext, build_gram, build_rho, gram_split, kernel_error,
                               lambda_grid, neumann_partial_sum, operator_error, regularized_estimate,
                               riemann_loss, select_lambda, single_pair_context, system_residual)
from naolab.radial import (InputFunctionSpec, RadialKernelSpec, SampleGrid, assemble_dataset,
                           build_tokens, default_functions, eval_kernel)

GRID = SampleGrid(0.25)


@pytest.fixture(scope="module")
def dataset():
    return assemble_dataset([RadialKernelSpec("sine", 1), RadialKernelSpec("sine", 3)],
                            default_functions(), GRID, 20)


def test_rho_normalised_and_nonnegative(dataset):
    rho, Z = build_rho(dataset.samples, GRID.dx, GRID.dr)
    assert Z > 0 and np.all(rho >= 0)
    assert np.sum(rho) * GRID.dr == pytest.approx(1.0, abs=1e-12)


def test_rho_uniform_for_constant_features():
    u = np.full((40, 5), 2.5)
    rho, _ = build_rho([u], 0.1, 0.25)
    assert np.allclose(rho, 1.0 / (40 * 0.25), rtol=1e-13)


def test_rho_invariant_to_duplication(dataset):
    a, _ = build_rho(dataset.samples, GRID.dx, GRID.dr)
    b, _ = build_rho(dataset.samples * 2, GRID.dx, GRID.dr)
    assert np.allclose(a, b, rtol=1e-13)


def test_rho_degenerate():
    with pytest.raises(NumericError):
        build_rho([np.zeros((4, 3))], 0.1, 0.1)


def test_gram_symmetric_psd(dataset):
    G = build_gram(dataset.samples, GRID.dx)
    assert np.array_equal(G, G.T)
    assert np.all(np.diag(G) >= 0)
    w = np.linalg.eigvalsh(G)
    assert w.min() >= -1e-10 * w.max()


def test_single_pair_gram_is_proportional(dataset):
    s = dataset.samples[0]
    G = build_gram([s], GRID.dx)
    ctx = single_pair_context(s, GRID.dx, GRID.dr)
    ratio = ctx.G_u[G != 0] / G[G != 0]
    assert np.allclose(ratio, ratio[0], rtol=1e-10)


def _well_conditioned_pair():
    grid = SampleGrid(0.1, delta=3.0)
    spec = RadialKernelSpec("sine", 1)
    tp = build_tokens(spec, InputFunctionSpec("cos", 1), grid, np.arange(grid.n_cols))
    return grid, spec, tp


def test_large_lambda_shrinks_estimate():
    grid, _, tp = _well_conditioned_pair()
    ctx = single_pair_context(tp, grid.dx, grid.dr, "identity")
    s = np.linalg.norm(ctx.G_u, 2)
    norms = [np.linalg.norm(regularized_estimate(ctx, lam * s)) for lam in (1e8, 1e10, 1e12)]
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-9 * np.linalg.norm(ctx.K_uf) / s * 1e3


def test_solver_residual_small():
    grid, _, tp = _well_conditioned_pair()
    for reg in ("identity", "gram"):
        ctx = single_pair_context(tp, grid.dx, grid.dr, reg)
        lam = 1e-6 * np.linalg.norm(ctx.W @ ctx.G_u, 2)
        K = regularized_estimate(ctx, lam)
        assert system_residual(ctx, K, lam) <= 1e-8


def test_regularizer_shape_checked():
    grid, _, tp = _well_conditioned_pair()
    with pytest.raises(DimensionError):
        single_pair_context(tp, grid.dx, grid.dr, np.eye(3))
    ctx = single_pair_context(tp, grid.dx, grid.dr)
    with pytest.raises(ValueError):
        regularized_estimate(ctx, 0.0)
    with pytest.raises(ValueError):
        single_pair_context(tp, grid.dx, grid.dr, "tikhonov")


def test_singular_system_reports_condition():
    ctx = SinglePairContext(np.diag([-1.0, 1.0, 1.0]), np.ones(3), np.eye(3))
    with pytest.raises(SolverError) as info:
        regularized_estimate(ctx, 1.0)
    assert info.value.condition is not None


def test_neumann_series_approaches_direct_solve():
    grid, _, tp = _well_conditioned_pair()
    ctx = single_pair_context(tp, grid.dx, grid.dr, "gram")
    s2 = np.linalg.norm(ctx.G_u, 2) ** 2
    lam = 2.0 * s2
    direct = regularized_estimate(ctx, lam)
    errs = [np.linalg.norm(neumann_partial_sum(ctx, lam, m) - direct) for m in (1, 4, 16, 64)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-10 * np.linalg.norm(direct)


def test_lambda_selection_single_candidate():
    grid, _, tp = _well_conditioned_pair()
    ctx = single_pair_context(tp, grid.dx, grid.dr)
    assert select_lambda(ctx, [0.5]).lam == 0.5


def test_lambda_selection_noiseless_picks_small_end():
    grid, _, tp = _well_conditioned_pair()
    ctx = single_pair_context(tp, grid.dx, grid.dr, "identity")
    # exact solution in the range of G_u, data generated without noise
    K = ctx.G_u @ np.sin(np.arange(ctx.G_u.shape[0]) / 5.0)
    ctx.K_uf = ctx.G_u @ K
    ctx.ff = float(K @ ctx.G_u @ K)
    cands = lambda_grid(ctx)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sel = select_lambda(ctx, cands)
    assert sel.index < len(cands) // 2


def test_lambda_selection_pure_noise_picks_large_end():
    grid, _, tp = _well_conditioned_pair()
    rng = np.random.default_rng(0)
    ctx = single_pair_context(tp, grid.dx, grid.dr, "identity")
    # f orthogonal to every predicted output U^T K: K_uf = U f = 0
    U = tp.u
    f = rng.standard_normal(U.shape[1])
    Q, _ = np.linalg.qr(U.T)
    f = f - Q @ (Q.T @ f)
    ctx.K_uf = U @ f * grid.dx * grid.dr
    ctx.ff = float(f @ f * grid.dx)
    cands = lambda_grid(ctx)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sel = select_lambda(ctx, cands)
    assert sel.index >= len(cands) // 2


def test_operator_error_examples():
    f = np.array([[1.0, -2.0, 3.0]])
    assert operator_error(f, f) == 0.0
    assert operator_error(np.zeros_like(f), f) == pytest.approx(1.0)
    assert operator_error(2 * f, f) == pytest.approx(1.0)
    with pytest.raises(NumericError):
        operator_error(f, np.zeros_like(f))
    with pytest.raises(DimensionError):
        operator_error([np.zeros(2)], [np.ones(3)])


def test_kernel_error_examples():
    rho = np.array([0.0, 1.0, 2.0, 1.0])
    K = np.array([5.0, 1.0, -1.0, 2.0])
    assert kernel_error(K, K, rho, 0.5) == 0.0
    assert kernel_error(np.zeros(4), K, rho, 0.5) == pytest.approx(1.0)
    other = K.copy()
    other[0] = -100.0
    assert kernel_error(other, K, rho, 0.5) == 0.0
    with pytest.raises(NumericError):
        kernel_error(K, np.array([1.0, 0, 0, 0]), rho, 0.5)


@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 1000))
def test_kernel_error_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0, 1, 10)
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    assert kernel_error(c * a, c * b, rho, 0.1) == pytest.approx(kernel_error(a, b, rho, 0.1), rel=1e-10)


def test_null_space_is_invisible_to_loss():
    dataset = assemble_dataset([RadialKernelSpec("sine", 1)], default_functions(), GRID, 4,
                               samples_per_partition=1)
    G = build_gram(dataset.samples, GRID.dx)
    _, null, _ = gram_split(G)
    assert null.shape[1] > 0
    K = eval_kernel(dataset.kernels[0], GRID.r)
    task = dataset.task_samples(0)
    base = riemann_loss(K, task, GRID.dx, GRID.dr)
    for j in range(min(5, null.shape[1])):
        assert abs(riemann_loss(K + null[:, j], task, GRID.dx, GRID.dr) - base) < 1e-10


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_gram_quadratic_form_matches_loss(seed):
    grid = SampleGrid(0.5)
    ds = assemble_dataset([RadialKernelSpec("sine", 2)], default_functions(), grid, 10)
    K = np.random.default_rng(seed).standard_normal(grid.n_rows)
    ctx = single_pair_context(ds.samples, grid.dx, grid.dr)
    direct = riemann_loss(K, ds.samples, grid.dx, grid.dr)
    quad = K @ ctx.G_u @ K - 2 * K @ ctx.K_uf + ctx.ff
    assert quad == pytest.approx(direct, rel=1e-9, abs=1e-12)

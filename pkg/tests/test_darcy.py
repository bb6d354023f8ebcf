import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naolab import darcy
from naolab.errors import ConfigurationError, DimensionError, NumericError

N = 11


def test_microstructure_deterministic_and_two_phase():
    a = darcy.generate_microstructure(4, N)
    b = darcy.generate_microstructure(4, N)
    assert np.array_equal(a.values, b.values)
    assert set(np.unique(a.values)) <= {darcy.HIGH, darcy.LOW}


def test_threshold_at_minus_infinity_is_uniform_high():
    m = darcy.generate_microstructure(0, N, threshold=-np.inf)
    assert np.all(m.values == darcy.HIGH)


def test_source_field_deterministic():
    a = darcy.sample_source_grf(3, n=N).values
    assert np.array_equal(a, darcy.sample_source_grf(3, n=N).values)
    assert a.shape == (N, N)


def test_grf_monte_carlo_moments():
    draws = darcy.sample_grf(0, 0.2, n=7, size=10_000, variance=2.0)
    node = draws[:, 3, 3]
    se = node.std(ddof=1) / np.sqrt(node.size)
    assert abs(node.mean()) < 4 * se
    var = node.var(ddof=1)
    # the standard error of a Gaussian sample variance is var * sqrt(2 / (n - 1))
    assert abs(var - 2.0) < 4 * 2.0 * np.sqrt(2.0 / (node.size - 1))


def test_grf_rejects_bad_length_scale():
    with pytest.raises(ConfigurationError):
        darcy.sample_grf(0, 0.0, n=5)


def test_zero_source_gives_zero_pressure():
    b = darcy.generate_microstructure(1, N)
    assert np.all(darcy.darcy_solve(b, np.zeros((N, N))).values == 0.0)


def test_manufactured_convergence_order():
    errs, order = darcy.convergence_order((21, 41, 81))
    assert errs[0] > errs[1] > errs[2]
    assert 1.8 <= order <= 2.2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_positive_source_gives_positive_pressure(seed):
    b = darcy.generate_microstructure(seed, N)
    g = np.abs(darcy.sample_grf(seed + 1, 0.2, N)) + 0.1
    p = darcy.darcy_solve(b, g).values
    assert np.all(p[1:-1, 1:-1] > 0)
    assert np.all(p[0] == 0) and np.all(p[:, -1] == 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_solver_is_linear(seed, c):
    b = darcy.generate_microstructure(seed, N)
    g1 = darcy.sample_grf(seed + 1, 0.2, N)
    g2 = darcy.sample_grf(seed + 2, 0.2, N)
    lhs = darcy.darcy_solve(b, g1 + c * g2).values
    rhs = darcy.darcy_solve(b, g1).values + c * darcy.darcy_solve(b, g2).values
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9 * max(1.0, np.abs(rhs).max()))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_stiffness_is_spd(seed):
    A = darcy.stiffness_matrix(darcy.generate_microstructure(seed, N)).toarray()
    assert np.allclose(A, A.T, rtol=0, atol=1e-12)
    np.linalg.cholesky(A)


def test_inverse_kernel_properties():
    b = darcy.generate_microstructure(7, N)
    A = darcy.stiffness_matrix(b).toarray()
    K = darcy.stiffness_inverse_kernel(b)
    assert np.allclose(A @ K.matrix, np.eye(A.shape[0]), rtol=0, atol=1e-8)
    assert np.allclose(K.matrix, K.matrix.T, rtol=0, atol=1e-10)
    g = darcy.sample_grf(8, 0.2, N)
    p = darcy.darcy_solve(b, g).interior
    assert np.allclose(K.matrix @ g[1:-1, 1:-1].ravel() * K.h ** 2, p, rtol=0, atol=1e-8)


def test_nonpositive_conductivity_rejected():
    with pytest.raises(ConfigurationError):
        darcy.fd_matrix(np.zeros((5, 5)))
    with pytest.raises(DimensionError):
        darcy.fd_matrix(np.ones((4, 5)))


def test_token_residual_against_inverse_kernel():
    b = darcy.generate_microstructure(2, N)
    sources = darcy.source_bank(12, 5, n=N)
    samples = darcy.linear_task_samples(b, sources, 4)
    assert len(samples) == 3
    K = darcy.stiffness_inverse_kernel(b).matrix
    h2 = (1.0 / (N - 1)) ** 2
    for s in samples:
        assert np.allclose(K @ s.u * h2, s.f, rtol=0, atol=1e-9 * np.abs(s.f).max())


def test_permutation_augmentation():
    b = darcy.generate_microstructure(2, N)
    samples = darcy.linear_task_samples(b, darcy.source_bank(8, 5, n=N), 4)
    same = darcy.permute_augment(samples, 1, 0, include_identity=True)
    assert all(np.array_equal(a.u, c.u) and np.array_equal(a.f, c.f) for a, c in zip(samples, same))
    aug = darcy.permute_augment(samples, 3, 11)
    assert len(aug) == 3 * len(samples)
    for k, a in enumerate(aug):
        src = samples[k // 3]
        assert sorted(a.columns.tolist()) == sorted(src.columns.tolist())
        order = np.argsort(a.columns)
        assert np.array_equal(a.u[:, order], src.u[:, np.argsort(src.columns)])
    again = darcy.permute_augment(samples, 3, 11)
    assert all(np.array_equal(a.u, c.u) for a, c in zip(aug, again))
    with pytest.raises(ConfigurationError):
        darcy.permute_augment(samples, 0, 0)


def test_recovery_from_exact_kernel():
    accs = []
    for seed in range(5):
        micro = darcy.generate_microstructure(seed)
        rec = darcy.recover_microstructure(darcy.stiffness_inverse_kernel(micro))
        accs.append(darcy.recovery_accuracy(rec, micro, ring=2))
    assert np.mean(accs) >= 0.8


def test_recovery_degenerate_threshold():
    with pytest.raises(NumericError):
        darcy.recover_microstructure(np.eye(9) * 2.0, normalize=False)


def test_recovery_label_swap_inverts_classes():
    # negating the row-sum signal and the threshold flips every node
    K = darcy.stiffness_inverse_kernel(darcy.generate_microstructure(3)).matrix
    t = 0.15
    rec = darcy.recover_microstructure(K, threshold=t)
    flipped = darcy.recover_microstructure(-K, threshold=-t)
    assert np.all(flipped == np.where(rec == darcy.HIGH, darcy.LOW, darcy.HIGH))
    assert 0 < np.mean(rec == darcy.HIGH) < 1


def test_recovery_shape_errors():
    with pytest.raises(DimensionError):
        darcy.recover_microstructure(np.ones((3, 4)))
    with pytest.raises(DimensionError):
        darcy.recover_microstructure(np.ones((5, 5)))


def test_nonlinear_tokens_shapes():
    micros = [darcy.generate_microstructure(s, N) for s in range(6)]
    src = darcy.sample_source_grf(0, n=N)
    out = darcy.nonlinear_task_samples(micros, src, 3)
    assert len(out) == 2 and out[0].u.shape == ((N - 2) ** 2, 3)
    with pytest.raises(ConfigurationError):
        darcy.nonlinear_task_samples(micros, src, 7)

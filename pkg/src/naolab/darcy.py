"""Two-phase Darcy flow data: microstructures, sources, solver and kernels.

The unit square carries an ``n x n`` node grid (``h = 1/(n-1)``), pressure is
zero on the boundary, and the interior unknowns are ordered row-major.  The
stiffness matrix is the 5-point finite-difference operator multiplied by the
cell area ``h^2``, so that ``p = A^-1 (h^2 g)`` and ``A^-1`` is the discrete
Green's kernel with quadrature weight ``h^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DimensionError, NumericError, SolverError
from .radial import TokenPair

HIGH, LOW = 12.0, 3.0
GRID_N = 21


@dataclass(frozen=True)
class Microstructure:
    values: np.ndarray   # n x n, every entry HIGH or LOW
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionError(f"microstructure must be square, got {v.shape}")

    @property
    def n(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class DarcyField:
    values: np.ndarray   # n x n nodal values
    kind: str = "source"  # "source" or "pressure"

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def interior(self):
        return self.values[1:-1, 1:-1].reshape(-1)


@dataclass(frozen=True)
class StiffnessKernel:
    matrix: np.ndarray   # M x M, M = (n-2)^2 interior nodes
    n: int
    ordering: str = "row-major interior"

    @property
    def h(self):
        return 1.0 / (self.n - 1)


def grid_coords(n=GRID_N):
    """Node coordinates ``(X, Y)`` with ``X[i, j] = x_j`` and ``Y[i, j] = y_i``."""
    t = np.linspace(0.0, 1.0, n)
    return np.meshgrid(t, t)


def interior_coords(n=GRID_N):
    X, Y = grid_coords(n)
    return np.column_stack([X[1:-1, 1:-1].ravel(), Y[1:-1, 1:-1].ravel()])


# ---------------------------------------------------------------- random fields

def se_covariance(points, length_scale, variance=1.0):
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return variance * np.exp(-0.5 * d2 / length_scale ** 2)


_CHOL_CACHE = {}


def _grf_factor(n, length_scale, variance, jitter):
    key = (n, float(length_scale), float(variance), float(jitter))
    if key not in _CHOL_CACHE:
        X, Y = grid_coords(n)
        C = se_covariance(np.column_stack([X.ravel(), Y.ravel()]), length_scale, variance)
        C[np.diag_indices_from(C)] += jitter
        try:
            _CHOL_CACHE[key] = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"covariance not positive definite after jitter {jitter:g} "
                f"(length scale {length_scale:g}, n={n})") from exc
    return _CHOL_CACHE[key]


def sample_grf(seed, length_scale=0.2, n=GRID_N, variance=1.0, jitter=1e-10, size=None):
    """Zero-mean squared-exponential Gaussian random field on the node grid.

    ``size=None`` returns one ``n x n`` array, otherwise ``(size, n, n)``.
    """
    if not length_scale > 0:
        raise ConfigurationError(f"length_scale must be positive, got {length_scale}")
    Lc = _grf_factor(n, length_scale, variance, jitter)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n * n,) if size is None else (size, n * n))
    field = z @ Lc.T
    return field.reshape((n, n) if size is None else (size, n, n))


def sample_source_grf(seed, length_scale=0.2, n=GRID_N, variance=1.0, jitter=1e-10):
    return DarcyField(sample_grf(seed, length_scale, n, variance, jitter), "source")


def generate_microstructure(seed, n=GRID_N, length_scale=0.2, threshold=0.0):
    """Thresholded smooth random field: above ``threshold`` -> 12, else 3."""
    field = sample_grf(seed, length_scale, n)
    return Microstructure(np.where(field > threshold, HIGH, LOW), seed)


# ---------------------------------------------------------------- solver

def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def fd_matrix(b):
    """5-point operator ``-div(b grad .)`` on interior nodes, divided by nothing.

    Returns the sparse ``M x M`` matrix of the finite-difference equations
    (units 1/h^2).  Face conductivities are harmonic means of the two nodes.
    """
    b = np.asarray(b.values if isinstance(b, Microstructure) else b, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise DimensionError(f"conductivity must be a square grid, got {b.shape}")
    if not np.all(b > 0):
        raise ConfigurationError("conductivity must be positive")
    n = b.shape[0]
    h = 1.0 / (n - 1)
    m = n - 2
    idx = -np.ones((n, n), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange(m * m).reshape(m, m)
    rows, cols, vals = [], [], []
    I, J = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    centre = idx[I, J]
    diag = np.zeros(m * m)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        face = _harmonic(b[I, J], b[I + di, J + dj]) / h ** 2
        diag += face
        nb = idx[I + di, J + dj]
        inside = nb >= 0
        rows.append(centre[inside])
        cols.append(nb[inside])
        vals.append(-face[inside])
    rows.append(centre)
    cols.append(centre)
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m * m, m * m))


def stiffness_matrix(b):
    """Finite-difference matrix times the cell area ``h^2`` (dense-free, sparse)."""
    n = (b.values if isinstance(b, Microstructure) else np.asarray(b)).shape[0]
    return fd_matrix(b) * (1.0 / (n - 1)) ** 2


def _embed(interior, n):
    out = np.zeros((n, n))
    out[1:-1, 1:-1] = interior.reshape(n - 2, n - 2)
    return out


def darcy_solve(b, g, rtol=1e-10):
    """Pressure with ``p = 0`` on the boundary; ``g`` is a field or n x n array."""
    gv = np.asarray(g.values if isinstance(g, DarcyField) else g, dtype=float)
    A = fd_matrix(b)
    n = gv.shape[0]
    if A.shape[0] != (n - 2) ** 2:
        raise DimensionError(f"source grid {gv.shape} does not match the conductivity grid")
    rhs = gv[1:-1, 1:-1].ravel()
    try:
        p = spla.spsolve(A.tocsc(), rhs)
    except RuntimeError as exc:
        raise SolverError("singular Darcy system") from exc
    if not np.all(np.isfinite(p)):
        raise SolverError("singular Darcy system")
    res = np.linalg.norm(A @ p - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if np.linalg.norm(rhs) > 0 and res > rtol * scale:
        raise SolverError(f"relative residual {res / scale:.2e} above {rtol:g}")
    return DarcyField(_embed(p, n), "pressure")


def stiffness_inverse_kernel(b):
    """Dense inverse of the stiffness matrix (the ground-truth g -> p kernel)."""
    A = stiffness_matrix(b).toarray()
    n = (b.values if isinstance(b, Microstructure) else np.asarray(b)).shape[0]
    try:
        c, low = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError("stiffness matrix is not positive definite") from exc
    K = scipy.linalg.cho_solve((c, low), np.eye(A.shape[0]))
    return StiffnessKernel(0.5 * (K + K.T), n)


def manufactured_error(n):
    """Max-norm error for ``b = 1``, ``p* = sin(pi x) sin(pi y)``."""
    X, Y = grid_coords(n)
    exact = np.sin(np.pi * X) * np.sin(np.pi * Y)
    g = 2.0 * np.pi ** 2 * exact
    p = darcy_solve(np.ones((n, n)), g).values
    return float(np.max(np.abs(p - exact)))


def convergence_order(sizes=(21, 41, 81)):
    """Errors and the least-squares order ``log err`` vs ``log h``."""
    hs = np.array([1.0 / (n - 1) for n in sizes])
    errs = np.array([manufactured_error(n) for n in sizes])
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    return errs, order


# ---------------------------------------------------------------- tokens

def source_bank(n_sources, seed, length_scale=0.2, n=GRID_N):
    """``n_sources`` GRF sources from one seed, shape ``(n_sources, n, n)``."""
    return sample_grf(seed, length_scale, n, size=n_sources)


def linear_task_samples(micro, sources, d, task_id=0):
    """g -> p token pairs: columns are sources, rows are interior nodes.

    ``sources`` has shape ``(S, n, n)``; ``S // d`` samples of width ``d``
    are emitted in order.
    """
    if len(sources) < d:
        raise ConfigurationError(f"need at least d={d} sources, got {len(sources)}")
    A = stiffness_matrix(micro)
    h2 = micro.values.shape[0] - 1
    h2 = 1.0 / h2 ** 2
    G = np.stack([s[1:-1, 1:-1].ravel() for s in sources], axis=1)     # M x S
    lu = spla.splu(A.tocsc())
    P = lu.solve(G * h2)
    out = []
    for k in range(len(sources) // d):
        cols = np.arange(k * d, (k + 1) * d)
        out.append(TokenPair(G[:, cols].copy(), P[:, cols].copy(), task_id, k, cols))
    return out


def nonlinear_task_samples(micros, source, d, task_id=0):
    """b -> p token pairs with the source held fixed (no closed-form kernel)."""
    if len(micros) < d:
        raise ConfigurationError(f"need at least d={d} microstructures, got {len(micros)}")
    B = np.stack([m.values[1:-1, 1:-1].ravel() for m in micros], axis=1)
    P = np.stack([darcy_solve(m, source).interior for m in micros], axis=1)
    out = []
    for k in range(len(micros) // d):
        cols = np.arange(k * d, (k + 1) * d)
        out.append(TokenPair(B[:, cols].copy(), P[:, cols].copy(), task_id, k, cols))
    return out


def permute_augment(samples, n_perm, seed, include_identity=False):
    """``n_perm`` column permutations of every sample, deterministic per seed.

    With ``include_identity`` the first permutation of each sample is the
    identity.
    """
    if n_perm < 1:
        raise ConfigurationError(f"n_perm must be >= 1, got {n_perm}")
    rng = np.random.default_rng(seed)
    out = []
    for s in samples:
        d = s.u.shape[1]
        for k in range(n_perm):
            perm = np.arange(d) if (include_identity and k == 0) else rng.permutation(d)
            out.append(TokenPair(s.u[:, perm], s.f[:, perm], s.task_id, s.function_id,
                                 np.asarray(s.columns)[perm]))
    return out


# ---------------------------------------------------------------- recovery

def otsu_threshold(values):
    from skimage.filters import threshold_otsu
    return float(threshold_otsu(np.asarray(values, dtype=float)))


def recover_microstructure(kernel, threshold=None, normalize=True):
    """Two-phase image on the interior nodes from kernel row sums.

    Row sums of the inverse stiffness are large where conductivity is low.
    With ``normalize`` they are divided by the row sums of the unit-conductivity
    kernel, which removes the geometric decay towards the boundary.  The
    threshold defaults to Otsu's; rows above it are labelled 3, below 12.
    """
    K = kernel.matrix if isinstance(kernel, StiffnessKernel) else np.asarray(kernel, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"kernel must be square, got {K.shape}")
    m = int(round(np.sqrt(K.shape[0])))
    if m * m != K.shape[0]:
        raise DimensionError(f"kernel size {K.shape[0]} is not a square grid")
    s = K.sum(axis=1)
    if normalize:
        s = s / stiffness_inverse_kernel(np.ones((m + 2, m + 2))).matrix.sum(axis=1)
    if np.ptp(s) <= 1e-12 * max(np.max(np.abs(s)), 1e-300):
        raise NumericError("constant row sums: the threshold is degenerate")
    t = otsu_threshold(s) if threshold is None else float(threshold)
    return np.where(s > t, LOW, HIGH).reshape(m, m)


def recovery_accuracy(recovered, micro, ring=2):
    """Fraction of interior nodes matching ``micro``, ignoring a boundary ring.

    Nodes within ``ring`` cells of the boundary are excluded.
    """
    truth = micro.values[1:-1, 1:-1]
    sl = slice(ring, truth.shape[0] - ring)
    return float(np.mean(recovered[sl, sl] == truth[sl, sl]))


def export_grid_csv(path, grid):
    np.savetxt(path, np.asarray(grid, dtype=float), delimiter=",", fmt="%.10g")

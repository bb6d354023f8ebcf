"""Identifiability objects, the regularized kernel estimator and error metrics.

Everything is a Riemann-sum discretization on the uniform r-grid of the
tokens: with ``U`` the N x d g-feature token and ``f`` the 1 x d output token
of a sample, the prediction is ``K @ U * dr`` and the loss is
``sum_j (K @ U[:, j] dr - f_j)^2 dx``.  Expanding that quadratic gives the
single-pair Gram ``G_u = U U^T dx dr^2`` and vector ``K_uf = U f dx dr``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DimensionError, NumericError, SolverError


@dataclass
class EstimationContext:
    r: np.ndarray
    rho: np.ndarray
    G: np.ndarray
    Gbar: np.ndarray
    Z: float
    dr: float

    @property
    def support(self):
        return self.rho > 0


@dataclass
class SinglePairContext:
    G_u: np.ndarray
    K_uf: np.ndarray
    W: np.ndarray
    dr: float = 1.0
    ff: float | None = None  # sum f^2 dx, enables the data-space misfit
    meta: dict = field(default_factory=dict)


def _tokens(samples):
    us = [np.asarray(s.u if hasattr(s, "u") else s, dtype=float) for s in samples]
    if not us:
        raise NumericError("empty dataset")
    return us


def build_rho(samples, dx, dr):
    """Density of the empirical measure on the r-grid and its normaliser Z.

    ``rho'(r_k)`` is proportional to ``sum_samples sum_j |g(r_k, x_j)| dx``.
    """
    us = _tokens(samples)
    mass = sum(np.abs(u).sum(axis=1) for u in us) * dx
    Z = float(mass.sum() * dr)
    if not Z > 0:
        raise NumericError("all g-features vanish; the empirical measure is degenerate")
    return mass / Z, Z


def build_gram(samples, dx, normalization=None):
    """Gram function ``G(r_k, r_l)`` on the grid.

    ``normalization`` defaults to (number of tasks) x (token size), the
    prefactor of the definition; tokens without a task id count as one task.
    """
    us = _tokens(samples)
    if normalization is None:
        tasks = {getattr(s, "task_id", 0) for s in samples}
        normalization = len(tasks) * us[0].shape[1]
    G = sum(u @ u.T for u in us) * (dx / normalization)
    return 0.5 * (G + G.T)


def reproducing_kernel(G, rho):
    """``Gbar(r, s) = G(r, s) / (rho'(r) rho'(s))`` on the support of rho', 0 elsewhere."""
    rho = np.asarray(rho, dtype=float)
    inv = np.zeros_like(rho)
    pos = rho > 0
    inv[pos] = 1.0 / rho[pos]
    return G * inv[:, None] * inv[None, :]


def estimation_context(samples, r, dx, dr):
    rho, Z = build_rho(samples, dx, dr)
    G = build_gram(samples, dx)
    return EstimationContext(np.asarray(r, dtype=float), rho, G, reproducing_kernel(G, rho), Z, dr)


def single_pair_context(sample, dx, dr, regularizer="gram"):
    """Normal-equation objects for one token pair (or a list pooled together)."""
    samples = sample if isinstance(sample, (list, tuple)) else [sample]
    G = sum(np.asarray(s.u) @ np.asarray(s.u).T for s in samples) * (dx * dr * dr)
    G = 0.5 * (G + G.T)
    b = sum(np.asarray(s.u) @ np.asarray(s.f).reshape(-1) for s in samples) * (dx * dr)
    ff = float(sum(np.sum(np.asarray(s.f) ** 2) for s in samples) * dx)
    named = isinstance(regularizer, str)
    if named and regularizer == "gram":
        W = G.copy()
    elif named and regularizer == "identity":
        W = np.eye(G.shape[0])
    elif named:
        raise ValueError(f"unknown regularizer {regularizer!r} (use 'gram', 'identity' or a matrix)")
    else:
        W = np.asarray(regularizer, dtype=float)
        if W.shape != G.shape:
            raise DimensionError(f"regularizer shape {W.shape} differs from Gram shape {G.shape}")
    label = regularizer if named else "custom"
    return SinglePairContext(G, b, W, dr, ff, {"regularizer": label})


def _system(ctx, lam):
    """``(W G_u + lam I) K = W K_uf``; W acts as the reproducing kernel of the penalty."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    n = ctx.G_u.shape[0]
    if ctx.W.shape != (n, n) or ctx.K_uf.shape != (n,):
        raise DimensionError(
            f"inconsistent shapes: G_u {ctx.G_u.shape}, W {ctx.W.shape}, K_uf {ctx.K_uf.shape}")
    A = ctx.W @ ctx.G_u + lam * np.eye(n)
    b = ctx.W @ ctx.K_uf
    return A, b


def regularized_estimate(ctx, lam):
    """Tikhonov estimate in the RKHS whose reproducing kernel is ``W``.

    Minimises ``K^T G_u K - 2 K^T K_uf + lam |K|^2_W`` with
    ``|K|^2_W = K^T W^+ K``; for ``W = I`` this is ``(G_u + lam I)^{-1} K_uf``
    and for ``W = G_u`` it is ``(G_u^2 + lam I)^{-1} G_u K_uf``.
    """
    A, b = _system(ctx, lam)
    symmetric = np.allclose(A, A.T, rtol=0, atol=1e-13 * max(np.abs(A).max(), 1e-300))
    try:
        if symmetric:
            c, low = linalg.cho_factor(0.5 * (A + A.T))
            K = linalg.cho_solve((c, low), b)
        else:
            K = linalg.solve(A, b)
    except (linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(A)
        raise SolverError(f"regularized system is singular (condition {cond:.3e})", cond) from exc
    if not np.all(np.isfinite(K)):
        cond = np.linalg.cond(A)
        raise SolverError(f"regularized solve produced non-finite values (condition {cond:.3e})", cond)
    return K


def system_residual(ctx, K, lam):
    """Relative residual of the solved linear system."""
    A, b = _system(ctx, lam)
    return float(np.linalg.norm(A @ K - b) / max(np.linalg.norm(b), 1e-300))


def neumann_partial_sum(ctx, lam, m):
    """``sum_{k=0}^m (-1)^k lam^{-k} G^{2k} lam^{-1} G K_uf`` (the W = G_u series)."""
    G = ctx.G_u
    term = (G @ ctx.K_uf) / lam
    total = term.copy()
    G2 = G @ G
    for _ in range(m):
        term = -(G2 @ term) / lam
        total = total + term
    return total


def lambda_grid(ctx, n=25, lo=1e-12, hi=1e2):
    """Log-spaced candidates scaled by the spectral norm of ``W G_u``."""
    scale = np.linalg.norm(ctx.W @ ctx.G_u, 2)
    if not scale > 0:
        scale = 1.0
    return scale * np.logspace(np.log10(lo), np.log10(hi), n)


@dataclass
class LambdaSelection:
    lam: float
    index: int
    residuals: np.ndarray
    norms: np.ndarray
    curvature: np.ndarray
    fallback: bool = False


def misfit(ctx, K):
    """Data misfit ``sqrt(sum_j (K U dr - f)^2 dx)`` when ``ff`` is known,
    otherwise the normal-equation residual ``|G_u K - K_uf|``."""
    if ctx.ff is None:
        return float(np.linalg.norm(ctx.G_u @ K - ctx.K_uf))
    sq = K @ ctx.G_u @ K - 2.0 * K @ ctx.K_uf + ctx.ff
    return float(np.sqrt(max(sq, 0.0)))


def l_curve(ctx, grid):
    res, nrm = [], []
    for lam in grid:
        K = regularized_estimate(ctx, lam)
        res.append(misfit(ctx, K))
        nrm.append(np.linalg.norm(K))
    return np.array(res), np.array(nrm)


def _curvature(a, b, t):
    da, db = np.gradient(a, t), np.gradient(b, t)
    dda, ddb = np.gradient(da, t), np.gradient(db, t)
    denom = (da * da + db * db) ** 1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = (da * ddb - dda * db) / denom
    kappa[~np.isfinite(kappa)] = 0.0
    return kappa


def select_lambda(ctx, grid=None, flat_tol=1e-6, dominance=0.5, min_speed=0.05):
    """L-curve corner: maximum signed curvature of (log residual, log norm) in log lambda.

    Ties go to the larger lambda.  Only the lower half of the log-residual
    range is searched (the over-smoothed branch has spurious bends), points
    where the curve is nearly stationary in log lambda are skipped, and the
    corner must be convex and dominate that part of the curve (curvature at
    least ``dominance`` times the largest absolute curvature there).
    Otherwise the curve is degenerate (as for noiseless data, whose solution
    norm never blows up, or for a flat residual) and the largest lambda whose
    residual stays within twice the minimum residual is returned with
    ``fallback`` set.
    """
    grid = lambda_grid(ctx) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("candidate grid must be nonempty and positive")
    res, nrm = l_curve(ctx, grid)
    if grid.size == 1:
        return LambdaSelection(float(grid[0]), 0, res, nrm, np.zeros(1))
    tiny = np.finfo(float).tiny
    degenerate = (np.all(nrm <= tiny) or res.max() <= (1 + flat_tol) * res.min() or grid.size < 3)
    kappa = np.zeros(grid.size)
    if not degenerate:
        a = np.log(np.maximum(res, tiny))
        b = np.log(np.maximum(nrm, tiny))
        t = np.log(grid)
        kappa = _curvature(a, b, t)
        speed = np.hypot(np.gradient(a, t), np.gradient(b, t))
        # stationary stretches give meaningless curvature
        lower = (a <= 0.5 * (a.min() + a.max())) & (speed >= min_speed * speed.max())
        lower[[0, -1]] = False
        cand = np.where(lower, kappa, 0.0)
        best = cand.max()
        if not lower.any() or best <= 0 or best < dominance * np.abs(cand).max():
            degenerate = True
        else:
            # deterministic tie-break toward larger lambda
            idx = int(np.flatnonzero(lower & (kappa >= best * (1 - 1e-12)))[-1])
            return LambdaSelection(float(grid[idx]), idx, res, nrm, kappa)
    ok = np.flatnonzero(res <= 2.0 * res.min() + tiny)
    idx = int(ok[-1])
    warnings.warn("degenerate L-curve; using residual-plateau fallback", RuntimeWarning, stacklevel=2)
    return LambdaSelection(float(grid[idx]), idx, res, nrm, kappa, fallback=True)


# ---------------------------------------------------------------- metrics

def operator_error(pred, truth, dx=1.0):
    """Mean over samples of the relative L2 error ``|f_hat - f| / |f|``.

    ``pred``/``truth`` are sequences of arrays (one per sample) or 2-D
    arrays with one sample per row.
    """
    pred = [np.asarray(p, dtype=float).ravel() for p in pred]
    truth = [np.asarray(t, dtype=float).ravel() for t in truth]
    if len(pred) != len(truth) or not pred:
        raise DimensionError(f"{len(pred)} predictions for {len(truth)} targets")
    errs = []
    for p, t in zip(pred, truth):
        if p.shape != t.shape:
            raise DimensionError(f"prediction shape {p.shape} differs from target shape {t.shape}")
        den = np.sqrt(np.sum(t * t) * dx)
        if den == 0:
            raise NumericError("target has zero L2 norm")
        errs.append(np.sqrt(np.sum((p - t) ** 2) * dx) / den)
    return float(np.mean(errs))


def weighted_norm(h, rho, dr):
    return float(np.sqrt(np.sum(np.asarray(h) ** 2 * rho) * dr))


def kernel_error(K_hat, K_true, rho, dr):
    """Relative L2(rho) kernel error with ``|h|^2 = sum h_k^2 rho'_k dr``."""
    K_hat = np.asarray(K_hat, dtype=float).ravel()
    K_true = np.asarray(K_true, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if not (K_hat.shape == K_true.shape == rho.shape):
        raise DimensionError(f"shapes differ: {K_hat.shape}, {K_true.shape}, {rho.shape}")
    den = weighted_norm(K_true, rho, dr)
    if den == 0:
        raise NumericError("true kernel has zero L2(rho) norm")
    return weighted_norm(K_hat - K_true, rho, dr) / den


def frobenius_error(K_hat, K_true):
    """Relative Frobenius error for kernels on an N x N grid."""
    K_hat, K_true = np.asarray(K_hat, float), np.asarray(K_true, float)
    if K_hat.shape != K_true.shape:
        raise DimensionError(f"shapes differ: {K_hat.shape} vs {K_true.shape}")
    den = np.linalg.norm(K_true)
    if den == 0:
        raise NumericError("true kernel is zero")
    return float(np.linalg.norm(K_hat - K_true) / den)


# ---------------------------------------------------------------- identifiability

def riemann_loss(K, samples, dx, dr):
    """``sum_samples sum_j (K U dr - f)^2 dx`` for a fixed kernel vector."""
    K = np.asarray(K, dtype=float)
    return float(sum(np.sum((K @ s.u * dr - np.asarray(s.f).reshape(-1)) ** 2) * dx for s in samples))


def gram_split(G, rel_tol=1e-10):
    """Eigenvectors of G split into range and null-space bases (columns)."""
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    thresh = rel_tol * max(w.max(), 0.0)
    return V[:, w > thresh], V[:, w <= thresh], w


def export_kernel_csv(path, r, rho, K_true, K_hat):
    arr = np.column_stack([r, rho, K_true, K_hat])
    np.savetxt(path, arr, delimiter=",", header="r,rho,K_true,K_hat", comments="", fmt="%.17g")

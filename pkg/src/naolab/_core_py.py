"""Pure-Python implementation of the hot kernels.

Mirrors ``_core.pyx`` function for function; ``naolab.core`` picks whichever
is available at import time.
"""

import math

import numpy as np

from .quadrature import adaptive_gk

SINE, COSINE, POLYNOMIAL, GAUSSIAN, OOD1 = range(5)
U_COS, U_SIN = 0, 1


def _legendre(n, t):
    p_prev, p = np.ones_like(t), t
    if n == 0:
        return p_prev
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * t * p - k * p_prev) / (k + 1)
    return p


def kernel_values(family, eta, support, r):
    """Closed-form radial kernel on an array of radii; zero outside [0, support]."""
    r = np.asarray(r, dtype=float)
    if family == SINE:
        val = np.exp(-eta * r) * np.sin(6.0 * r)
    elif family == COSINE:
        val = (10.0 - r) / 20.0 * np.cos(eta * r) * (10.0 - r)
    elif family == POLYNOMIAL:
        val = np.exp(-0.1 * r) * _legendre(int(eta), (r - 10.0) / 10.0)
    elif family == GAUSSIAN:
        val = np.exp(-0.5 * r * r) / math.sqrt(2.0 * math.pi)
    elif family == OOD1:
        val = r * (11.0 - r) * np.exp(-5.0 * r) * np.sin(6.0 * r)
    else:
        raise ValueError(f"unknown family code {family}")
    return np.where((r >= 0.0) & (r <= support), val, 0.0)


def input_values(kind, freq, x):
    x = np.asarray(x, dtype=float)
    base = np.cos(freq * x) if kind == U_COS else np.sin(freq * x)
    return np.where(np.abs(x) <= math.pi, base, 0.0)


def g_values(kind, freq, r, x):
    """Second difference u(x+r) + u(x-r) - 2u(x), broadcasting r against x."""
    return (input_values(kind, freq, x + r) + input_values(kind, freq, x - r)
            - 2.0 * input_values(kind, freq, x))


def g_tokens(kind, freq, r_grid, x_cols):
    """Token matrix with entry [k, j] = g[u](r_k, x_j)."""
    r = np.asarray(r_grid, dtype=float)[:, None]
    x = np.asarray(x_cols, dtype=float)[None, :]
    return g_values(kind, freq, r, x)


def breakpoints(x, support):
    pi = math.pi
    cands = (pi - x, -pi - x, x - pi, x + pi)
    return sorted({c for c in cands if 0.0 < c < support})


def radial_operator(family, eta, support, kind, freq, xs, tol=1e-8, limit=2000):
    """f(x) = int_0^support K(r) g[u](r, x) dr for each x; returns (values, errors)."""
    xs = np.asarray(xs, dtype=float)
    vals = np.empty(xs.shape)
    errs = np.empty(xs.shape)
    for i, x in enumerate(xs):
        def integrand(r, x=x):
            return kernel_values(family, eta, support, r) * g_values(kind, freq, r, x)
        vals[i], errs[i] = adaptive_gk(integrand, 0.0, support, tol=tol,
                                       points=breakpoints(x, support), limit=limit)
    return vals, errs

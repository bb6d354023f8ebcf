# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: closed-form radial kernels, g-feature tokens and the
adaptive Gauss-Kronrod operator evaluation.  Same contract as ``_core_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sin, cos, fabs, sqrt, pow, M_PI
from libc.stdlib cimport malloc, free

from .errors import QuadratureError

cnp.import_array()

SINE, COSINE, POLYNOMIAL, GAUSSIAN, OOD1 = range(5)
U_COS, U_SIN = 0, 1

cdef double EPMACH = np.finfo(float).eps
cdef double UFLOW = np.finfo(float).tiny

cdef double XGK[8]
cdef double WGK[8]
cdef double WG[4]
XGK[:] = [0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
          0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
          0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
          0.207784955007898467600689403773245, 0.0]
WGK[:] = [0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
          0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
          0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
          0.204432940075298892414161999234649, 0.209482141084727828012999174891714]
WG[:] = [0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
         0.381830050505118944950369775488975, 0.417959183673469387755102040816327]


cdef inline double legendre(int n, double t) nogil:
    cdef double p0 = 1.0, p1 = t, p2
    cdef int k
    if n == 0:
        return 1.0
    for k in range(1, n):
        p2 = ((2 * k + 1) * t * p1 - k * p0) / (k + 1)
        p0 = p1
        p1 = p2
    return p1


cdef inline double kernel_at(int family, double eta, double support, double r) nogil:
    if r < 0.0 or r > support:
        return 0.0
    if family == 0:
        return exp(-eta * r) * sin(6.0 * r)
    if family == 1:
        return (10.0 - r) / 20.0 * cos(eta * r) * (10.0 - r)
    if family == 2:
        return exp(-0.1 * r) * legendre(<int>eta, (r - 10.0) / 10.0)
    if family == 3:
        return exp(-0.5 * r * r) / sqrt(2.0 * M_PI)
    return r * (11.0 - r) * exp(-5.0 * r) * sin(6.0 * r)


cdef inline double u_at(int kind, double freq, double x) nogil:
    if fabs(x) > M_PI:
        return 0.0
    if kind == 0:
        return cos(freq * x)
    return sin(freq * x)


cdef inline double g_at(int kind, double freq, double r, double x) nogil:
    return u_at(kind, freq, x + r) + u_at(kind, freq, x - r) - 2.0 * u_at(kind, freq, x)


cdef inline double integrand(int family, double eta, double support, int kind,
                             double freq, double x, double r) nogil:
    return kernel_at(family, eta, support, r) * g_at(kind, freq, r, x)


cdef void gk15(int family, double eta, double support, int kind, double freq,
               double x, double a, double b, double* res, double* err,
               double* rabs) nogil:
    cdef double half = 0.5 * (b - a)
    cdef double centre = 0.5 * (a + b)
    cdef double fc = integrand(family, eta, support, kind, freq, x, centre)
    cdef double resg = fc * WG[3]
    cdef double resk = fc * WGK[7]
    cdef double resabs = fabs(resk)
    cdef double fv1[7]
    cdef double fv2[7]
    cdef double dx, f1, f2, reskh, resasc, e
    cdef int j
    for j in range(7):
        dx = half * XGK[j]
        f1 = integrand(family, eta, support, kind, freq, x, centre - dx)
        f2 = integrand(family, eta, support, kind, freq, x, centre + dx)
        fv1[j] = f1
        fv2[j] = f2
        resk += WGK[j] * (f1 + f2)
        resabs += WGK[j] * (fabs(f1) + fabs(f2))
        if j % 2 == 1:
            resg += WG[j // 2] * (f1 + f2)
    reskh = 0.5 * resk
    resasc = WGK[7] * fabs(fc - reskh)
    for j in range(7):
        resasc += WGK[j] * (fabs(fv1[j] - reskh) + fabs(fv2[j] - reskh))
    resabs *= fabs(half)
    resasc *= fabs(half)
    e = fabs((resk - resg) * half)
    if resasc != 0.0 and e != 0.0:
        e = resasc * min(1.0, pow(200.0 * e / resasc, 1.5))
    if resabs > UFLOW / (50.0 * EPMACH):
        e = max(EPMACH * 50.0 * resabs, e)
    res[0] = resk * half
    err[0] = e
    rabs[0] = resabs


cdef int integrate_one(int family, double eta, double support, int kind,
                       double freq, double x, double tol, int limit,
                       double* lo, double* hi, double* val, double* er,
                       double* ra, double* out_val, double* out_err) nogil:
    """Returns 0 on success, 1 when the panel budget is exhausted."""
    cdef double pts[6]
    cdef double cands[4]
    cdef int npts = 0, i, j, n, best
    cdef double c, t, total = 0.0, toterr = 0.0, absmass = 0.0, mid
    cdef double r1, e1, a1, r2, e2, a2, emax
    cands[0] = M_PI - x
    cands[1] = -M_PI - x
    cands[2] = x - M_PI
    cands[3] = x + M_PI
    pts[npts] = 0.0
    npts += 1
    for i in range(4):
        c = cands[i]
        if c > 0.0 and c < support:
            pts[npts] = c
            npts += 1
    pts[npts] = support
    npts += 1
    # insertion sort, then drop duplicates
    for i in range(1, npts):
        t = pts[i]
        j = i - 1
        while j >= 0 and pts[j] > t:
            pts[j + 1] = pts[j]
            j -= 1
        pts[j + 1] = t
    n = 0
    for i in range(npts - 1):
        if pts[i + 1] > pts[i]:
            lo[n] = pts[i]
            hi[n] = pts[i + 1]
            gk15(family, eta, support, kind, freq, x, lo[n], hi[n], &val[n], &er[n], &ra[n])
            total += val[n]
            toterr += er[n]
            absmass += ra[n]
            n += 1
    # below 100 eps of the absolute mass the per-panel roundoff floor dominates
    while toterr > max(tol * fabs(total), 100.0 * EPMACH * absmass):
        if n >= limit:
            out_val[0] = total
            out_err[0] = toterr
            return 1
        best = 0
        emax = er[0]
        for i in range(1, n):
            if er[i] > emax or (er[i] == emax and lo[i] < lo[best]):
                emax = er[i]
                best = i
        mid = 0.5 * (lo[best] + hi[best])
        gk15(family, eta, support, kind, freq, x, lo[best], mid, &r1, &e1, &a1)
        gk15(family, eta, support, kind, freq, x, mid, hi[best], &r2, &e2, &a2)
        total += r1 + r2 - val[best]
        toterr += e1 + e2 - er[best]
        absmass += a1 + a2 - ra[best]
        lo[n] = mid
        hi[n] = hi[best]
        val[n] = r2
        er[n] = e2
        ra[n] = a2
        hi[best] = mid
        val[best] = r1
        er[best] = e1
        ra[best] = a1
        n += 1
    out_val[0] = total
    out_err[0] = toterr
    return 0


def kernel_values(int family, double eta, double support, r):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rr = np.ascontiguousarray(r, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(rr.shape[0])
    cdef Py_ssize_t i
    for i in range(rr.shape[0]):
        out[i] = kernel_at(family, eta, support, rr[i])
    return out.reshape(np.shape(r))


def input_values(int kind, double freq, x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xx = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(xx.shape[0])
    cdef Py_ssize_t i
    for i in range(xx.shape[0]):
        out[i] = u_at(kind, freq, xx[i])
    return out.reshape(np.shape(x))


def g_tokens(int kind, double freq, r_grid, x_cols):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] r = np.ascontiguousarray(r_grid, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.ascontiguousarray(x_cols, dtype=np.float64)
    cdef Py_ssize_t nr = r.shape[0], nx = x.shape[0], k, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((nr, nx))
    cdef double[:, ::1] ov = out
    with nogil:
        for k in range(nr):
            for j in range(nx):
                ov[k, j] = g_at(kind, freq, r[k], x[j])
    return out


def radial_operator(int family, double eta, double support, int kind, double freq,
                    xs, double tol=1e-8, int limit=2000):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xv = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    cdef Py_ssize_t n = xv.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] vals = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] errs = np.empty(n)
    cdef double* lo = <double*>malloc(limit * sizeof(double) + 8 * sizeof(double))
    cdef double* hi = <double*>malloc(limit * sizeof(double) + 8 * sizeof(double))
    cdef double* val = <double*>malloc(limit * sizeof(double) + 8 * sizeof(double))
    cdef double* er = <double*>malloc(limit * sizeof(double) + 8 * sizeof(double))
    cdef double* ra = <double*>malloc(limit * sizeof(double) + 8 * sizeof(double))
    cdef int status = 0
    cdef Py_ssize_t failed = -1
    cdef double v, e
    try:
        with nogil:
            for i in range(n):
                status = integrate_one(family, eta, support, kind, freq, xv[i], tol, limit,
                                       lo, hi, val, er, ra, &v, &e)
                vals[i] = v
                errs[i] = e
                if status != 0:
                    failed = i
                    break
    finally:
        free(lo)
        free(hi)
        free(val)
        free(er)
        free(ra)
    if failed >= 0:
        raise QuadratureError(
            f"no convergence within {limit} panels at x={xv[failed]}: "
            f"estimate {vals[failed]:.6e}, error {errs[failed]:.3e}",
            estimate=vals[failed], error=errs[failed])
    return vals.reshape(np.shape(xs)), errs.reshape(np.shape(xs))

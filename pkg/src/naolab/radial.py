"""Radial nonlocal-diffusion datasets.

The operator is ``f(x) = int_0^delta K(r) g[u](r, x) dr`` with the
second-difference feature ``g[u](r, x) = u(x + r) + u(x - r) - 2 u(x)``.
Ground truth ``f`` comes from adaptive Gauss-Kronrod quadrature; models see
the Riemann-sum discretization on a uniform r-grid.

Grids are nested under refinement: ``r_k = k dr`` (k = 1..N) and
``x_j = -(pi + delta) + j dx``, so halving the resolution keeps every other
row and column.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import core
from .errors import ConfigurationError, DimensionError, SpecificationError

FAMILY_CODES = {"sine": 0, "cosine": 1, "polynomial": 2, "gaussian": 3, "ood1": 4}
FAMILY_INDICES = {
    "sine": range(1, 9),
    "cosine": range(0, 7),
    "polynomial": range(1, 8),
    "gaussian": range(0, 1),
    "ood1": range(0, 1),
}
FAMILY_SUPPORT = {"sine": 11.0, "cosine": 10.0, "polynomial": 10.0, "gaussian": 11.0, "ood1": 11.0}
KIND_CODES = {"cos": 0, "sin": 1}
SINE_TRAIN = (1, 2, 3, 4, 6, 7, 8)
SINE_TEST = 5


@dataclass(frozen=True)
class RadialKernelSpec:
    family: str
    eta: int = 0

    def __post_init__(self):
        if self.family not in FAMILY_CODES:
            raise SpecificationError(f"unknown kernel family {self.family!r}")
        if self.eta not in FAMILY_INDICES[self.family]:
            raise SpecificationError(
                f"index {self.eta} not available for family {self.family!r}")

    @property
    def support(self):
        return FAMILY_SUPPORT[self.family]

    @property
    def label(self):
        return f"{self.family}:{self.eta}"

    @classmethod
    def parse(cls, text):
        """``"sine:5"`` or ``"gaussian"``."""
        name, _, idx = text.strip().partition(":")
        return cls(name, int(idx) if idx else 0)


@dataclass(frozen=True)
class InputFunctionSpec:
    """``cos(k x)`` or ``sin(k x)`` restricted to [-pi, pi]."""

    kind: str
    freq: int

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise SpecificationError(f"unknown input function kind {self.kind!r}")
        if self.freq <= 0:
            raise SpecificationError(f"frequency must be positive, got {self.freq}")

    @property
    def label(self):
        return f"{self.kind}:{self.freq}"

    @classmethod
    def parse(cls, text):
        kind, _, k = text.strip().partition(":")
        return cls(kind, int(k))


def default_functions():
    return [InputFunctionSpec("cos", 1), InputFunctionSpec("sin", 2)]


def single_task_functions():
    """cos(kx) for k = 1..7 and sin(kx) for k = 8..14, frequency equal to the label."""
    return ([InputFunctionSpec("cos", k) for k in range(1, 8)]
            + [InputFunctionSpec("sin", k) for k in range(8, 15)])


def eval_kernel(spec, r):
    """Closed-form kernel value(s); zero outside [0, support]."""
    r = np.asarray(r, dtype=float)
    return core.kernel_values(FAMILY_CODES[spec.family], float(spec.eta), spec.support, r)


def eval_input(u, x):
    return core.input_values(KIND_CODES[u.kind], float(u.freq), np.asarray(x, dtype=float))


def g_feature(u, r, x):
    """Second difference ``u(x+r) + u(x-r) - 2u(x)`` (broadcasting)."""
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    return eval_input(u, x + r) + eval_input(u, x - r) - 2.0 * eval_input(u, x)


def apply_operator(spec, u, x, tol=1e-8, limit=2000):
    """Ground-truth ``int_0^support K(r) g[u](r, x) dr`` by adaptive quadrature.

    Accepts a scalar or an array of positions.  Raises ``QuadratureError``
    if the subdivision budget runs out.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals, _ = core.radial_operator(FAMILY_CODES[spec.family], float(spec.eta), spec.support,
                                   KIND_CODES[u.kind], float(u.freq), xs, tol, limit)
    return vals if np.ndim(x) else float(vals[0])


@dataclass(frozen=True)
class SampleGrid:
    """Uniform r- and x-meshes sharing the spacing ``dx``."""

    dx: float
    delta: float = 11.0

    def __post_init__(self):
        if self.dx <= 0 or self.delta <= 0:
            raise ConfigurationError("grid spacing and delta must be positive")

    @property
    def dr(self):
        return self.dx

    @property
    def n_rows(self):
        return int(round(self.delta / self.dx))

    @property
    def r(self):
        return self.dx * np.arange(1, self.n_rows + 1)

    @property
    def half_width(self):
        return math.pi + self.delta

    @property
    def n_cols(self):
        return int(math.floor(2.0 * self.half_width / self.dx + 1e-9)) + 1

    @property
    def x(self):
        return -self.half_width + self.dx * np.arange(self.n_cols)

    def coarsen(self, factor=2):
        return SampleGrid(self.dx * factor, self.delta)


@dataclass
class TokenPair:
    """One sample: ``u`` is N x d (g-features), ``f`` is n_f x d."""

    u: np.ndarray
    f: np.ndarray
    task_id: int = 0
    function_id: int = 0
    columns: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def d(self):
        return self.u.shape[1]


def build_tokens(spec, u, grid, columns, tol=1e-8, f_values=None):
    """Tokens for the given x-column indices of ``grid``.

    ``f_values`` (ground truth on every grid column) may be passed to avoid
    recomputing the quadrature.
    """
    columns = np.asarray(columns, dtype=np.int64)
    if columns.ndim != 1:
        raise DimensionError(f"columns must be 1-D, got shape {columns.shape}")
    if columns.size and (columns.min() < 0 or columns.max() >= grid.n_cols):
        raise IndexError(f"column index out of range [0, {grid.n_cols})")
    xs = grid.x[columns]
    utok = core.g_tokens(KIND_CODES[u.kind], float(u.freq), grid.r, xs)
    if f_values is None:
        ftok = apply_operator(spec, u, xs, tol=tol) if xs.size else np.zeros(0)
    else:
        ftok = np.asarray(f_values)[columns]
    return TokenPair(utok, np.asarray(ftok, dtype=float).reshape(1, -1), columns=columns)


def column_blocks(n_cols, d, layout="strided"):
    """Non-overlapping index blocks of size ``d``; ``floor(n_cols / d)`` of them.

    ``contiguous`` blocks are consecutive runs.  ``strided`` blocks interleave
    so that every block spans the whole window and column ``j`` sits at the
    same spatial position (up to one cell) in every block and at every
    resolution.
    """
    if d < 1 or d > n_cols:
        raise ConfigurationError(f"token size d={d} must lie in [1, {n_cols}]")
    n_blocks = n_cols // d
    j = np.arange(d)
    if layout == "contiguous":
        return [b * d + j for b in range(n_blocks)]
    if layout == "strided":
        base = np.floor(j * (n_cols / d) + 1e-9).astype(np.int64)
        return [base + b for b in range(n_blocks)]
    raise ConfigurationError(f"unknown block layout {layout!r}")


@dataclass
class RadialDataset:
    grid: SampleGrid
    kernels: list
    functions: list
    samples: list
    d: int
    layout: str = "strided"

    domain = "radial"

    def task_samples(self, task_id):
        return [s for s in self.samples if s.task_id == task_id]

    def truth(self, task_id):
        return eval_kernel(self.kernels[task_id], self.grid.r)

    @property
    def n_tasks(self):
        return len(self.kernels)


def operator_values(spec, u, grid, tol=1e-8):
    """Ground truth f on every column of the grid."""
    return apply_operator(spec, u, grid.x, tol=tol)


def assemble_dataset(kernels, functions, grid, d, samples_per_partition=None, seed=None,
                     layout="strided", tol=1e-8):
    """Partition the x-columns into blocks of ``d`` and emit one sample per
    (kernel, function, block).

    ``samples_per_partition`` caps the number of blocks used per function.
    With a ``seed`` the sample order inside each task is shuffled
    reproducibly; without one it is (function, block) order.
    """
    kernels = list(kernels)
    functions = list(functions)
    if not kernels or not functions:
        raise ConfigurationError("need at least one kernel and one input function")
    if d > grid.n_cols:
        raise ConfigurationError(f"token size d={d} exceeds the {grid.n_cols} available columns")
    blocks = column_blocks(grid.n_cols, d, layout)
    if samples_per_partition is not None:
        blocks = blocks[:samples_per_partition]
    rng = np.random.default_rng(seed) if seed is not None else None
    samples = []
    for t, spec in enumerate(kernels):
        task = []
        for i, u in enumerate(functions):
            fvals = operator_values(spec, u, grid, tol=tol)
            for cols in blocks:
                tp = build_tokens(spec, u, grid, cols, f_values=fvals)
                tp.task_id, tp.function_id = t, i
                task.append(tp)
        if rng is not None:
            task = [task[k] for k in rng.permutation(len(task))]
        samples.extend(task)
    return RadialDataset(grid, kernels, functions, samples, d, layout)


# ---------------------------------------------------------------- file formats

DATA_MAGIC = b"NAODATA1"
DOMAIN_TAGS = {"radial": 0, "darcy": 1}


def write_dataset(path, samples, domain, dx, dr, delta, task_labels=(), function_labels=()):
    """Binary container: header, label tables, then per-sample token blocks."""
    if not samples:
        raise ConfigurationError("refusing to write an empty dataset")
    n, d = samples[0].u.shape
    nf = samples[0].f.shape[0]
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(struct.pack("<I3d4I", DOMAIN_TAGS[domain], dx, dr, delta, n, d, nf, len(samples)))
        for table in (task_labels, function_labels):
            fh.write(struct.pack("<I", len(table)))
            for label in table:
                raw = label.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)) + raw)
        for s in samples:
            if s.u.shape != (n, d) or s.f.shape != (nf, d):
                raise DimensionError(
                    f"sample shapes {s.u.shape}/{s.f.shape} differ from {(n, d)}/{(nf, d)}")
            fh.write(struct.pack("<2I", s.task_id, s.function_id))
            fh.write(np.asarray(s.columns, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(s.u, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.f, dtype="<f8").tobytes())


def read_dataset(path):
    """Returns ``(header dict, samples)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != DATA_MAGIC:
        raise ConfigurationError(f"{path}: not a NAODATA1 file")
    tag, dx, dr, delta, n, d, nf, count = struct.unpack_from("<I3d4I", data, 8)
    pos = 8 + struct.calcsize("<I3d4I")
    tables = []
    for _ in range(2):
        (m,) = struct.unpack_from("<I", data, pos)
        pos += 4
        labels = []
        for _ in range(m):
            (k,) = struct.unpack_from("<I", data, pos)
            labels.append(data[pos + 4:pos + 4 + k].decode("utf-8"))
            pos += 4 + k
        tables.append(labels)
    domain = {v: k for k, v in DOMAIN_TAGS.items()}[tag]
    samples = []
    for _ in range(count):
        task_id, function_id = struct.unpack_from("<2I", data, pos)
        pos += 8
        cols = np.frombuffer(data, "<u4", d, pos).astype(np.int64)
        pos += 4 * d
        u = np.frombuffer(data, "<f8", n * d, pos).reshape(n, d).copy()
        pos += 8 * n * d
        f = np.frombuffer(data, "<f8", nf * d, pos).reshape(nf, d).copy()
        pos += 8 * nf * d
        samples.append(TokenPair(u, f, task_id, function_id, cols))
    header = {"domain": domain, "dx": dx, "dr": dr, "delta": delta, "n_rows": n, "d": d,
              "n_f_rows": nf, "n_samples": count, "tasks": tables[0], "functions": tables[1]}
    return header, samples


def export_csv(path, samples, r_grid=None):
    """Long format: one line per (sample, token row, column)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "task", "function", "block", "row", "r", "column", "value"])
        for i, s in enumerate(samples):
            for k in range(s.u.shape[0]):
                r = "" if r_grid is None else repr(float(r_grid[k]))
                for j in range(s.d):
                    w.writerow([i, s.task_id, s.function_id, "u", k, r, int(s.columns[j]),
                                repr(float(s.u[k, j]))])
            for k in range(s.f.shape[0]):
                for j in range(s.d):
                    w.writerow([i, s.task_id, s.function_id, "f", k, "", int(s.columns[j]),
                                repr(float(s.f[k, j]))])

"""Loss, Adam training loop, evaluation and cross-resolution testing."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, NumericError
from .estimation import build_rho, frobenius_error, kernel_error, operator_error
from .model import Mesh, build_graph, run_forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 1e-3
    decay: float = 0.5
    decay_every: float = 0.25      # fraction of the epoch budget
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    plateau_tol: float = 1e-7
    plateau_window: int = 100
    holdout: bool = True           # last sample per task drives plateau detection
    weight_decay: float = 0.0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_every: int = 50


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    stopped: str = "budget"
    best_epoch: int = -1

    def rows(self):
        for i, e in enumerate(self.epochs):
            yield {"epoch": e, "train_loss": self.train_loss[i], "val_loss": self.val_loss[i],
                   "lr": self.lr[i], "seconds": self.seconds[i]}


class _GraphCache:
    def __init__(self, config, mesh, params):
        self.config, self.mesh, self.params = config, mesh, params
        self.graphs = {}

    def get(self, batch):
        if batch not in self.graphs:
            self.graphs[batch] = build_graph(self.config, self.mesh, batch, self.params)
        return self.graphs[batch]


def _stack(samples, mesh):
    U = np.stack([s.u for s in samples])
    F = np.stack([np.asarray(s.f).reshape(mesh.n_f, -1) for s in samples])
    return U, F


def loss(samples, params, mesh, graph=None, with_grad=True):
    """Mean over samples of ``sum_x |f_hat - f|^2 dx``.

    Returns ``(value, grads)`` with ``grads`` keyed by parameter name (None
    when ``with_grad`` is false).
    """
    if not samples:
        raise ConfigurationError("loss needs a nonempty batch")
    U, F = _stack(samples, mesh)
    g = graph or build_graph(params.config, mesh, len(samples), params)
    g.load(params, U, F)
    value = float(ad.forward_eval(g.loss)[0])
    if not with_grad:
        return value, None
    raw = ad.backward(g.loss)
    return value, {name: raw[leaf] for name, leaf in g.leaves.items()}


def split_holdout(samples):
    """Last sample of each task is held out (tasks with one sample keep it)."""
    by_task = {}
    for s in samples:
        by_task.setdefault(s.task_id, []).append(s)
    train, val = [], []
    for task in by_task.values():
        if len(task) > 1:
            train.extend(task[:-1])
            val.append(task[-1])
        else:
            train.extend(task)
    return train, val


def _lr_at(tc, epoch):
    if tc.decay_every <= 0 or tc.epochs <= 0:
        return tc.lr
    step = max(1, int(round(tc.decay_every * tc.epochs)))
    return tc.lr * tc.decay ** (epoch // step)


def train(params, mesh, samples, tc=TrainConfig(), callback=None):
    """Adam on the Riemann-sum loss; returns ``(best params, history)``.

    Deterministic for a fixed ``tc.seed``.  A non-finite loss aborts with
    ``NumericError`` naming the last checkpoint written (if any).
    """
    params = params.copy()
    if tc.epochs <= 0:
        return params, TrainingHistory(stopped="budget")
    train_set, val_set = split_holdout(samples) if tc.holdout else (list(samples), [])
    if not train_set:
        raise ConfigurationError("no training samples")
    rng = np.random.default_rng(tc.seed)
    bs = tc.batch_size or len(train_set)
    cache = _GraphCache(params.config, mesh, params)
    state = ad.AdamState(lr=tc.lr, weight_decay=tc.weight_decay)
    hist = TrainingHistory()
    best_val, best = math.inf, params.copy()
    last_ckpt = None
    monitor = []
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        state.lr = _lr_at(tc, epoch)
        order = rng.permutation(len(train_set)) if bs < len(train_set) else np.arange(len(train_set))
        pre = params.copy() if not val_set else None
        total, count = 0.0, 0
        for start in range(0, len(order), bs):
            batch = [train_set[i] for i in order[start:start + bs]]
            try:
                value, grads = loss(batch, params, mesh, cache.get(len(batch)))
            except NumericError as exc:
                raise NumericError(f"non-finite loss at epoch {epoch}; last checkpoint: {last_ckpt}") from exc
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}; last checkpoint: {last_ckpt}")
            params.values, state = ad.adam_step(params.values, grads, state)
            total += value * len(batch)
            count += len(batch)
        train_loss = total / count
        if val_set:
            val_loss, _ = loss(val_set, params, mesh, cache.get(len(val_set)), with_grad=False)
        else:
            val_loss = train_loss
        hist.epochs.append(epoch)
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.lr.append(state.lr)
        hist.seconds.append(time.perf_counter() - t0)
        # without a held-out set the monitored loss belongs to the pre-step parameters
        if val_loss < best_val:
            best_val, hist.best_epoch = val_loss, epoch
            best = pre if pre is not None else params.copy()
        if tc.checkpoint_every and tc.checkpoint_dir and (epoch + 1) % tc.checkpoint_every == 0:
            last_ckpt = os.path.join(tc.checkpoint_dir, "last.ckpt")
            ad.save_checkpoint(last_ckpt, params.values)
        if tc.log_every and epoch % tc.log_every == 0:
            log.info("epoch %d loss %.6e val %.6e lr %.2e", epoch, train_loss, val_loss, state.lr)
        if callback is not None:
            callback(epoch, params, hist)
        monitor.append(val_loss)
        w = tc.plateau_window
        if w and len(monitor) > w:
            old = monitor[-w - 1]
            if abs(old - val_loss) <= tc.plateau_tol * max(abs(old), 1e-300):
                hist.stopped = "plateau"
                break
    return best, hist


# ---------------------------------------------------------------- evaluation

@dataclass
class TaskMetrics:
    label: str
    operator_error: float
    kernel_error: float | None
    kernels: np.ndarray
    truth: np.ndarray | None
    rho: np.ndarray | None


def evaluate(params, mesh, samples, truth=None, rho=None, label="test"):
    """Operator and kernel errors on one test task.

    ``truth`` is the true kernel on the mesh (None: kernel error is
    unavailable).  ``rho`` defaults to the empirical density of the task's
    own tokens (radial meshes); general meshes use the relative Frobenius
    error.
    """
    samples = list(samples)
    K, pred = run_forward(params, mesh, samples)
    op = operator_error([p.reshape(-1) for p in pred],
                        [np.asarray(s.f).reshape(-1) for s in samples], mesh.x_weight)
    kernels = K[:, 0] if mesh.kind == "radial" else K
    kerr = None
    if truth is not None:
        if mesh.kind == "radial":
            if rho is None:
                rho, _ = build_rho(samples, mesh.x_weight, mesh.weight)
            kerr = float(np.mean([kernel_error(k, truth, rho, mesh.weight) for k in kernels]))
        else:
            kerr = float(np.mean([frobenius_error(k, truth) for k in kernels]))
    return TaskMetrics(label, op, kerr, kernels, truth, rho)


def cross_resolution_eval(params, task_builder, grids, label="test"):
    """Evaluate a continuous-mixer radial model on several resolutions.

    ``task_builder(grid)`` returns ``(samples, truth kernel on grid.r)``.
    """
    if params.config.variant.mixer != "continuous":
        raise ConfigurationError("cross-resolution evaluation needs a continuous-mixer model; "
                                 "dense discrete heads are tied to one mesh")
    out = []
    for grid in grids:
        samples, truth = task_builder(grid)
        out.append(evaluate(params, Mesh.radial(grid), samples, truth, label=f"{label}@dx={grid.dx:g}"))
    return out


RESULT_COLUMNS = ["setting", "model_variant", "d", "d_k", "n_params",
                  "operator_err_ID", "operator_err_OOD1", "operator_err_OOD2",
                  "kernel_err_ID", "kernel_err_OOD1", "kernel_err_OOD2"]


def _fmt(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_results(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in RESULT_COLUMNS})


def write_history(path, hist):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"],
                           lineterminator="\n")
        w.writeheader()
        for row in hist.rows():
            w.writerow({"epoch": row["epoch"], "train_loss": repr(row["train_loss"]),
                        "val_loss": repr(row["val_loss"]), "lr": repr(row["lr"])})

"""Experiment pipeline: data generation, training and evaluation on disk."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import darcy
from .estimation import export_kernel_csv
from .model import Mesh, ModelConfig, NaoParameters, VARIANTS, init_params, param_count
from .radial import (InputFunctionSpec, RadialKernelSpec, SampleGrid, assemble_dataset,
                     default_functions, eval_kernel, read_dataset, write_dataset)
from .training import (RESULT_COLUMNS, cross_resolution_eval, evaluate, train, write_history,
                       write_results)

log = logging.getLogger(__name__)

TEST_SETS = ("ID", "OOD1", "OOD2")


@dataclass
class TaskData:
    """Samples of one evaluation task with its truth on the mesh."""

    label: str
    samples: list
    truth: np.ndarray | None


@dataclass
class ExperimentData:
    mesh: Mesh
    train: list
    tests: dict           # test-set name -> TaskData
    meta: dict


# ---------------------------------------------------------------- data

def _functions(recipe):
    if recipe.functions:
        return [InputFunctionSpec.parse(t) for t in recipe.functions]
    return default_functions()


def radial_task(label, grid, recipe):
    spec = RadialKernelSpec.parse(label)
    ds = assemble_dataset([spec], _functions(recipe), grid, recipe.d,
                          recipe.samples_per_partition, layout=recipe.layout, tol=recipe.tol)
    return TaskData(spec.label, ds.samples, eval_kernel(spec, grid.r))


def build_radial(cfg):
    rec = cfg.data
    grid = SampleGrid(rec.dx, rec.delta)
    kernels = [RadialKernelSpec.parse(t) for t in rec.train]
    ds = assemble_dataset(kernels, _functions(rec), grid, rec.d, rec.samples_per_partition,
                          seed=cfg.seed, layout=rec.layout, tol=rec.tol)
    tests = {}
    for name, label in zip(TEST_SETS, (rec.test_id, rec.test_ood1, rec.test_ood2)):
        if label:
            tests[name] = radial_task(label, grid, rec)
    meta = {"domain": "radial", "dx": grid.dx, "dr": grid.dr, "delta": grid.delta,
            "train_labels": [k.label for k in kernels],
            "function_labels": [u.label for u in _functions(rec)]}
    return ExperimentData(Mesh.radial(grid), ds.samples, tests, meta)


def build_darcy(cfg):
    rec = cfg.darcy
    n = rec.n
    h2 = (1.0 / (n - 1)) ** 2
    mesh = Mesh.general(darcy.interior_coords(n), h2)
    total = rec.n_micro + rec.n_test_micro
    micros = [darcy.generate_microstructure(rec.micro_seed * 100003 + i, n, rec.length_scale)
              for i in range(total)]
    sources = darcy.source_bank(rec.n_sources, rec.source_seed, rec.length_scale, n)
    train_samples = []
    for t in range(rec.n_micro):
        task = darcy.linear_task_samples(micros[t], sources, rec.d, task_id=t)
        train_samples.extend(darcy.permute_augment(task, rec.n_perm, cfg.seed + t,
                                                   include_identity=True))
    tests = {}
    for k in range(rec.n_test_micro):
        m = micros[rec.n_micro + k]
        samples = darcy.linear_task_samples(m, sources, rec.d, task_id=rec.n_micro + k)
        name = "ID" if k == 0 else f"ID{k}"
        tests[name] = TaskData(f"micro{rec.n_micro + k}", samples,
                               darcy.stiffness_inverse_kernel(m).matrix)
    meta = {"domain": "darcy", "dx": h2, "dr": h2, "delta": 1.0, "n": n,
            "train_labels": [f"micro{i}" for i in range(rec.n_micro)],
            "function_labels": [f"grf{j}" for j in range(rec.n_sources)],
            "micro_values": [m.values.tolist() for m in micros]}
    return ExperimentData(mesh, train_samples, tests, meta)


def build_data(cfg):
    return build_darcy(cfg) if cfg.data.domain == "darcy" else build_radial(cfg)


def save_data(data, out):
    """Training and test datasets as NAODATA1 files under ``out``."""
    os.makedirs(out, exist_ok=True)
    m = data.meta
    paths = [os.path.join(out, "train.naodata")]
    write_dataset(paths[0], data.train, m["domain"], m["dx"], m["dr"], m["delta"],
                  m["train_labels"], m["function_labels"])
    for name, task in data.tests.items():
        p = os.path.join(out, f"test_{name}.naodata")
        write_dataset(p, task.samples, m["domain"], m["dx"], m["dr"], m["delta"],
                      [task.label], m["function_labels"])
        if task.truth is not None:
            np.save(os.path.join(out, f"truth_{name}.npy"), task.truth)
        paths.append(p)
    return paths


def load_data(cfg, directory):
    """Read datasets written by :func:`save_data` (mesh rebuilt from ``cfg``)."""
    header, train_samples = read_dataset(os.path.join(directory, "train.naodata"))
    if header["domain"] == "radial":
        mesh = Mesh.radial(SampleGrid(header["dx"], header["delta"]))
    else:
        mesh = Mesh.general(darcy.interior_coords(cfg.darcy.n), header["dx"])
    tests = {}
    for name in TEST_SETS + tuple(f"ID{k}" for k in range(1, cfg.darcy.n_test_micro)):
        p = os.path.join(directory, f"test_{name}.naodata")
        if os.path.exists(p):
            h, samples = read_dataset(p)
            tp = os.path.join(directory, f"truth_{name}.npy")
            truth = np.load(tp) if os.path.exists(tp) else None
            tests[name] = TaskData(h["tasks"][0] if h["tasks"] else name, samples, truth)
    return ExperimentData(mesh, train_samples, tests, dict(header))


# ---------------------------------------------------------------- models

def save_model(path, params):
    ad.save_checkpoint(path, params.values)
    cfg = params.config
    info = {"variant": [k for k, v in VARIANTS.items() if v == cfg.variant][0],
            "layers": cfg.layers, "d": cfg.d, "d_k": cfg.d_k, "head_hidden": list(cfg.head_hidden),
            "head_slope": cfg.head_slope, "init_seed": cfg.init_seed,
            "attn_init_scale": cfg.attn_init_scale, "mesh_kind": params.mesh_kind}
    with open(path + ".model.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)


def load_model(path):
    with open(path + ".model.json") as fh:
        info = json.load(fh)
    cfg = ModelConfig(layers=info["layers"], d=info["d"], d_k=info["d_k"],
                      variant=VARIANTS[info["variant"]], head_hidden=tuple(info["head_hidden"]),
                      head_slope=info["head_slope"], init_seed=info["init_seed"],
                      attn_init_scale=info["attn_init_scale"])
    return NaoParameters(cfg, info["mesh_kind"], ad.load_checkpoint(path))


def train_variants(cfg, data, out, checkpoint_dir=None):
    """Train every configured variant; returns ``{variant: (params, history)}``."""
    os.makedirs(out, exist_ok=True)
    results = {}
    for variant in cfg.variants:
        mcfg = cfg.model_for(variant)
        params = init_params(mcfg, data.mesh, cfg.seed)
        tc = cfg.train
        if checkpoint_dir:
            tc = replace(tc, checkpoint_dir=checkpoint_dir)
        log.info("training %s (%d parameters) on %d samples", variant, param_count(params),
                 len(data.train))
        best, hist = train(params, data.mesh, data.train, tc)
        save_model(os.path.join(out, f"{variant}.ckpt"), best)
        write_history(os.path.join(out, f"history_{variant}.csv"), hist)
        results[variant] = (best, hist)
    return results


# ---------------------------------------------------------------- evaluation

def evaluate_models(cfg, data, models, out):
    """Results table, kernel CSVs and (radial) cross-resolution metrics."""
    os.makedirs(out, exist_ok=True)
    rows, written = [], []
    for variant, params in models.items():
        row = {"setting": cfg.setting, "model_variant": variant, "d": params.config.d,
               "d_k": params.config.d_k, "n_params": param_count(params)}
        for name in TEST_SETS:
            task = data.tests.get(name)
            if task is None:
                continue
            m = evaluate(params, data.mesh, task.samples, task.truth, label=task.label)
            row[f"operator_err_{name}"] = m.operator_error
            row[f"kernel_err_{name}"] = m.kernel_error
            if data.mesh.kind == "radial" and task.truth is not None:
                p = os.path.join(out, f"kernel_{variant}_{name}.csv")
                export_kernel_csv(p, data.mesh.coords[:, 0] * cfg.data.delta, m.rho, task.truth,
                                  np.mean(m.kernels, axis=0))
                written.append(p)
            elif task.truth is not None:
                p = os.path.join(out, f"microstructure_{variant}_{name}.csv")
                try:
                    img = darcy.recover_microstructure(np.mean(m.kernels, axis=0))
                    darcy.export_grid_csv(p, img)
                    written.append(p)
                except Exception as exc:  # recovery is a diagnostic, not a result
                    log.warning("microstructure recovery failed for %s: %s", variant, exc)
        rows.append(row)
    p = os.path.join(out, "results.csv")
    write_results(p, rows)
    written.insert(0, p)
    if data.mesh.kind == "radial" and cfg.data.eval_dx and data.tests.get("ID"):
        p = os.path.join(out, "crossres.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_variant", "dx", "operator_err", "kernel_err"])
            label = data.tests["ID"].label
            for variant, params in models.items():
                if params.config.variant.mixer != "continuous":
                    continue
                grids = [SampleGrid(dx, cfg.data.delta) for dx in cfg.data.eval_dx]
                for grid, m in zip(grids, cross_resolution_eval(
                        params, lambda g: _task_at(label, g, cfg.data), grids, label)):
                    w.writerow([variant, f"{grid.dx:g}", f"{m.operator_error:.6f}",
                                f"{m.kernel_error:.6f}"])
        written.append(p)
    return rows, written


def _task_at(label, grid, recipe):
    t = radial_task(label, grid, recipe)
    return t.samples, t.truth


def write_meta(path, cfg, command, extra=None):
    """Sidecar ``<path>.meta.json`` with the config hash and seed."""
    meta = {"artifact": os.path.basename(path), "config_sha256": cfg.digest, "seed": cfg.seed,
            "command": command, "experiment": cfg.name}
    if extra:
        meta.update(extra)
    with open(path + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def markdown_table(rows):
    """Results rows (dicts of strings) as a Markdown table."""
    head = "| " + " | ".join(RESULT_COLUMNS) + " |"
    sep = "|" + "---|" * len(RESULT_COLUMNS)
    body = ["| " + " | ".join(str(r.get(c, "NA")) for c in RESULT_COLUMNS) + " |" for r in rows]
    return "\n".join([head, sep, *body]) + "\n"

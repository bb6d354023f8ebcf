"""Experiment configuration files.

Files are INI-style: ``[section]`` headers followed by ``key = value`` lines,
``#`` comments.  Parsing is delegated to :mod:`configparser`; a small index
of key positions lets validation errors name the offending line.

Schema (every key optional unless marked)::

    [experiment]  name (required), setting, seed
    [data]        domain (radial|darcy), dx, delta, d, layout, train (list of
                  kernel labels), test_id, test_ood1, test_ood2, functions,
                  samples_per_partition, eval_dx (list), tol
    [darcy]       n, n_micro, n_test_micro, n_sources, length_scale, n_perm, d,
                  micro_seed, source_seed
    [model]       variants (list), layers, d_k, attn_init_scale, head_hidden (list)
    [train]       epochs, lr, decay, decay_every, batch_size, holdout,
                  plateau_tol, plateau_window, weight_decay, checkpoint_every
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, replace

from .errors import ConfigurationError, SpecificationError
from .model import VARIANTS, ModelConfig
from .radial import InputFunctionSpec, RadialKernelSpec, SINE_TEST, SINE_TRAIN
from .training import TrainConfig

_SECTIONS = {
    "experiment": {"name": str, "setting": str, "seed": int},
    "data": {"domain": str, "dx": float, "delta": float, "d": int, "layout": str,
             "train": "list", "test_id": str, "test_ood1": str, "test_ood2": str,
             "functions": "list", "samples_per_partition": int, "eval_dx": "floats",
             "tol": float},
    "darcy": {"n": int, "n_micro": int, "n_test_micro": int, "n_sources": int,
              "length_scale": float, "n_perm": int, "d": int, "micro_seed": int,
              "source_seed": int},
    "model": {"variants": "list", "layers": int, "d_k": int, "attn_init_scale": float,
              "head_hidden": "ints"},
    "train": {"epochs": int, "lr": float, "decay": float, "decay_every": float,
              "batch_size": int, "holdout": bool, "plateau_tol": float,
              "plateau_window": int, "weight_decay": float, "checkpoint_every": int},
}


@dataclass(frozen=True)
class DataRecipe:
    domain: str = "radial"
    dx: float = 0.025
    delta: float = 11.0
    d: int = 302
    layout: str = "strided"
    train: tuple = tuple(f"sine:{e}" for e in SINE_TRAIN)
    test_id: str | None = f"sine:{SINE_TEST}"
    test_ood1: str | None = "ood1:0"
    test_ood2: str | None = "gaussian:0"
    functions: tuple | None = None
    samples_per_partition: int | None = None
    eval_dx: tuple = ()
    tol: float = 1e-8


@dataclass(frozen=True)
class DarcyRecipe:
    n: int = 21
    n_micro: int = 20
    n_test_micro: int = 2
    n_sources: int = 100
    length_scale: float = 0.2
    n_perm: int = 1
    d: int = 50
    micro_seed: int = 0
    source_seed: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    setting: str = ""
    seed: int = 0
    data: DataRecipe = field(default_factory=DataRecipe)
    darcy: DarcyRecipe = field(default_factory=DarcyRecipe)
    variants: tuple = ("nao",)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    source_text: str = ""

    @property
    def digest(self):
        """SHA-256 of the configuration text (identifies artifacts)."""
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    def model_for(self, variant):
        return replace(self.model, variant=VARIANTS[variant], init_seed=self.seed)


def _line_index(text):
    """``(section, key) -> line number`` and ``section -> header line``."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index.setdefault((section, None), no)
        elif section and line and not line.startswith(("#", ";")):
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            index[(section, key)] = no
    return index


def _convert(kind, raw):
    if kind is str:
        return raw
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    items = [t.strip() for t in raw.split(",") if t.strip()]
    if kind == "list":
        return tuple(items)
    if kind == "floats":
        return tuple(float(t) for t in items)
    return tuple(int(t) for t in items)


def parse_config(text, path="<config>"):
    """Parse and validate configuration text into an :class:`ExperimentConfig`."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=path)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigurationError(f"{path}: malformed line", line=line) from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc.message}", line=getattr(exc, "lineno", None)) from exc
    index = _line_index(text)
    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in _SECTIONS:
            raise ConfigurationError(f"{path}: unknown section [{section}]",
                                     line=index.get((sec, None)))
        for key, raw in parser.items(section):
            line = index.get((sec, key))
            if key not in _SECTIONS[sec]:
                raise ConfigurationError(f"{path}: unknown key '{key}' in [{sec}]", line=line)
            try:
                values[(sec, key)] = _convert(_SECTIONS[sec][key], raw.strip())
            except ValueError as exc:
                raise ConfigurationError(f"{path}: bad value for {sec}.{key}: {exc}", line=line) from exc

    def pick(sec):
        return {k: v for (s, k), v in values.items() if s == sec}

    def fail(msg, sec, key):
        raise ConfigurationError(f"{path}: {msg}", line=index.get((sec, key)))

    exp = pick("experiment")
    if "name" not in exp:
        raise ConfigurationError(f"{path}: [experiment] needs a 'name'",
                                 line=index.get(("experiment", None)))
    data = pick("data")
    for key in ("test_id", "test_ood1", "test_ood2"):
        if key in data and data[key].lower() in ("", "none"):
            data[key] = None
    recipe = DataRecipe(**data)
    if recipe.domain not in ("radial", "darcy"):
        fail(f"domain must be radial or darcy, got {recipe.domain!r}", "data", "domain")
    if recipe.layout not in ("strided", "contiguous"):
        fail(f"layout must be strided or contiguous, got {recipe.layout!r}", "data", "layout")
    for key in ("dx", "delta", "tol"):
        if not getattr(recipe, key) > 0:
            fail(f"{key} must be positive", "data", key)
    if recipe.d < 1:
        fail("d must be positive", "data", "d")
    if recipe.domain == "radial":
        for key in ("train", "test_id", "test_ood1", "test_ood2"):
            labels = getattr(recipe, key)
            for label in ([labels] if isinstance(labels, str) else labels or ()):
                try:
                    RadialKernelSpec.parse(label)
                except (SpecificationError, ValueError) as exc:
                    fail(f"bad kernel label {label!r}: {exc}", "data", key)
        for label in recipe.functions or ():
            try:
                InputFunctionSpec.parse(label)
            except (SpecificationError, ValueError) as exc:
                fail(f"bad function label {label!r}: {exc}", "data", "functions")
        if not recipe.train:
            fail("at least one training kernel is needed", "data", "train")
    darcy = DarcyRecipe(**pick("darcy"))
    for key in ("n", "n_micro", "n_sources", "n_perm", "d"):
        if getattr(darcy, key) < 1:
            fail(f"{key} must be positive", "darcy", key)
    if darcy.n_sources < darcy.d:
        fail("n_sources must be at least d", "darcy", "n_sources")
    if not darcy.length_scale > 0:
        fail("length_scale must be positive", "darcy", "length_scale")

    model = pick("model")
    variants = model.pop("variants", ("nao",))
    for v in variants:
        if v not in VARIANTS:
            fail(f"unknown variant {v!r} (choose from {', '.join(VARIANTS)})", "model", "variants")
    d = darcy.d if recipe.domain == "darcy" else recipe.d
    try:
        mcfg = ModelConfig(d=d, **model)
    except ConfigurationError as exc:
        key = "layers" if "layers" in str(exc) else "d_k"
        fail(str(exc), "model", key)
    tr = pick("train")
    try:
        tcfg = TrainConfig(**tr)
    except TypeError as exc:
        fail(str(exc), "train", None)
    if tcfg.epochs < 0:
        fail("epochs must be >= 0", "train", "epochs")
    if not tcfg.lr > 0:
        fail("lr must be positive", "train", "lr")
    if tcfg.batch_size is not None and tcfg.batch_size < 1:
        fail("batch_size must be positive", "train", "batch_size")
    tcfg = replace(tcfg, seed=exp.get("seed", 0))
    return ExperimentConfig(name=exp["name"], setting=exp.get("setting", exp["name"]),
                            seed=exp.get("seed", 0), data=recipe, darcy=darcy,
                            variants=tuple(variants), model=mcfg, train=tcfg,
                            source_text=text)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def with_seed(cfg, seed):
    """Copy of ``cfg`` with every seed replaced (the CLI ``--seed`` override)."""
    return replace(cfg, seed=seed, train=replace(cfg.train, seed=seed),
                   model=replace(cfg.model, init_seed=seed),
                   source_text=cfg.source_text + f"\n# seed override {seed}\n")

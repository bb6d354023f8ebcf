"""Nonlocal attention operator: stacked linear attention and the kernel map.

Tokens stack the g-feature rows ``U`` (N x d) on top of the output rows
``F`` (n_f x d); columns index the d sample points.  Layers ``1..L-1`` update

    X <- sigma(X Wq Wk^T X^T / sqrt(d_k)) (D X) + X

where ``D`` holds the row quadrature weights for the continuous mixer and is
the identity for the discrete mixer.  Layer ``L`` forms the kernel from the
final ``U``/``F`` blocks through the head ``W^{P,u}``, ``W^{P,f}``.

Two geometries are supported.  ``radial``: a single F row, the kernel is a
function of r evaluated on the N-point r-grid and the continuous head is an
MLP ``r -> scalar`` plus a scalar ``w_f``.  ``general``: F lives on the same
mesh as U (N rows), the kernel is an N x N grid and the continuous heads are
MLPs on point pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError

MIXERS = ("continuous", "discrete")
ACTIVATIONS = ("linear", "softmax")
INPUTS = ("u_and_f", "u_only")


@dataclass(frozen=True)
class NaoVariant:
    mixer: str = "continuous"
    activation: str = "linear"
    inputs: str = "u_and_f"

    def __post_init__(self):
        for value, allowed, axis in ((self.mixer, MIXERS, "mixer"),
                                     (self.activation, ACTIVATIONS, "activation"),
                                     (self.inputs, INPUTS, "inputs")):
            if value not in allowed:
                raise ConfigurationError(f"variant.{axis} must be one of {allowed}, got {value!r}")

    @property
    def uses_f(self):
        return self.inputs == "u_and_f"


VARIANTS = {
    "nao": NaoVariant(),
    "discrete_nao": NaoVariant(mixer="discrete"),
    "softmax_nao": NaoVariant(activation="softmax"),
    "nao_u": NaoVariant(inputs="u_only"),
}


@dataclass(frozen=True)
class Mesh:
    """Row geometry of the tokens.

    ``coords`` (N x p) feed the head MLPs, ``weight`` is the quadrature
    weight of a U row, ``x_weight`` the weight of a column sample (used by
    the loss).  Radial meshes carry one unweighted F row; general meshes
    carry N F rows with the U-row weight.
    """

    kind: str
    coords: np.ndarray
    weight: float
    x_weight: float

    @classmethod
    def radial(cls, grid):
        return cls("radial", (grid.r / grid.delta)[:, None], grid.dr, grid.dx)

    @classmethod
    def general(cls, coords, weight):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        return cls("general", coords, float(weight), float(weight))

    @property
    def n(self):
        return self.coords.shape[0]

    @property
    def n_f(self):
        return 1 if self.kind == "radial" else self.n

    @property
    def f_weight(self):
        return 1.0 if self.kind == "radial" else self.weight

    def row_weights(self, uses_f):
        w = np.full(self.n, self.weight)
        if uses_f:
            w = np.concatenate([w, np.full(self.n_f, self.f_weight)])
        return w[:, None]


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 3
    d: int = 302
    d_k: int = 10
    variant: NaoVariant = field(default_factory=NaoVariant)
    head_hidden: tuple = (32, 64)
    head_slope: float = ad.LEAKY_SLOPE
    init_seed: int = 0
    attn_init_scale: float = 1.0
    # "factored" evaluates linear attention as Q (K^T X); "explicit" forms the N x N matrix
    attention_form: str = "factored"

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigurationError(f"layers must be >= 2, got {self.layers}")
        if self.d < 1 or self.d_k < 1:
            raise ConfigurationError("d and d_k must be positive")
        if self.attention_form not in ("factored", "explicit"):
            raise ConfigurationError(f"unknown attention form {self.attention_form!r}")


@dataclass
class NaoParameters:
    config: ModelConfig
    mesh_kind: str
    values: dict

    def copy(self):
        return NaoParameters(self.config, self.mesh_kind,
                             {k: v.copy() for k, v in self.values.items()})

    def __getitem__(self, name):
        return self.values[name]


# ---------------------------------------------------------------- parameters

def _head_layers(cfg, in_dim):
    dims = (in_dim, *cfg.head_hidden, 1)
    return list(zip(dims[:-1], dims[1:]))


def init_params(config, mesh, seed=None):
    """Uniform(+-scale/sqrt(d)) attention weights, fan-in scaled head MLPs, w_f = 0."""
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    cfg, vals = config, {}
    bound = cfg.attn_init_scale / math.sqrt(cfg.d)
    for l in range(1, cfg.layers + 1):
        vals[f"wq{l}"] = rng.uniform(-bound, bound, (cfg.d, cfg.d_k))
        vals[f"wk{l}"] = rng.uniform(-bound, bound, (cfg.d, cfg.d_k))
    n = mesh.n
    if cfg.variant.mixer == "continuous":
        in_dim = mesh.coords.shape[1] * (1 if mesh.kind == "radial" else 2)
        heads = ["u"] + (["f"] if cfg.variant.uses_f and mesh.kind == "general" else [])
        for h in heads:
            for i, (a, b) in enumerate(_head_layers(cfg, in_dim), start=1):
                lim = 1.0 / math.sqrt(a)
                vals[f"head{h}_w{i}"] = rng.uniform(-lim, lim, (a, b))
                vals[f"head{h}_b{i}"] = rng.uniform(-lim, lim, (b,))
        if cfg.variant.uses_f and mesh.kind == "radial":
            vals["wf"] = np.zeros(1)
    else:
        vals["wpu"] = rng.uniform(-1.0, 1.0, (n, n)) / n
        if cfg.variant.uses_f:
            vals["wpf"] = np.zeros((n, 1) if mesh.kind == "radial" else (n, n))
    return NaoParameters(cfg, mesh.kind, vals)


def param_count(params):
    return int(sum(v.size for v in params.values.values()))


def attention_names(cfg):
    return [f"w{t}{l}" for l in range(1, cfg.layers + 1) for t in "qk"]


# ---------------------------------------------------------------- numpy reference pieces

def activation_np(S, activation):
    if activation == "linear":
        return S
    z = S - S.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attn_layer_forward(X, wq, wk, activation="linear", row_weights=None):
    """One residual attention layer on an (M x d) token matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or wq.shape != wk.shape or wq.shape[0] != X.shape[1]:
        raise DimensionError(f"tokens {X.shape} incompatible with weights {wq.shape}/{wk.shape}")
    if not np.all(np.isfinite(X)):
        raise DimensionError("tokens must be finite")
    S = (X @ wq) @ (X @ wk).T / math.sqrt(wq.shape[1])
    A = activation_np(S, activation)
    Xw = X if row_weights is None else X * np.asarray(row_weights).reshape(-1, 1)
    return A @ Xw + X


def mlp_np(values, prefix, inputs, slope):
    h = inputs
    i = 1
    while f"{prefix}_w{i}" in values:
        h = h @ values[f"{prefix}_w{i}"] + values[f"{prefix}_b{i}"]
        if f"{prefix}_w{i + 1}" in values:
            h = np.where(h > 0, h, slope * h)
        i += 1
    return h


def pair_inputs(coords):
    """All (x, z) coordinate pairs, row-major over x then z."""
    n = coords.shape[0]
    return np.concatenate([np.repeat(coords, n, axis=0), np.tile(coords, (n, 1))], axis=1)


def head_values(params, mesh):
    """Continuous heads on the mesh: radial -> (N,) vector, general -> N x N grids."""
    v, s = params.values, params.config.head_slope
    if mesh.kind == "radial":
        return {"u": mlp_np(v, "headu", mesh.coords, s).reshape(-1)}
    out = {"u": mlp_np(v, "headu", pair_inputs(mesh.coords), s).reshape(mesh.n, mesh.n)}
    if "headf_w1" in v:
        out["f"] = mlp_np(v, "headf", pair_inputs(mesh.coords), s).reshape(mesh.n, mesh.n)
    return out


# ---------------------------------------------------------------- graph

def _mlp_graph(leaves, prefix, inputs, slope):
    h = inputs
    i = 1
    while f"{prefix}_w{i}" in leaves:
        h = ad.add(ad.matmul(h, leaves[f"{prefix}_w{i}"]), leaves[f"{prefix}_b{i}"])
        if f"{prefix}_w{i + 1}" in leaves:
            h = ad.leaky_relu(h, slope)
        i += 1
    return h


def _sigma(node, activation):
    return node if activation == "linear" else ad.row_softmax(node)


@dataclass
class ModelGraph:
    """A reusable computation graph for a fixed batch size."""

    config: ModelConfig
    mesh: Mesh
    batch: int
    leaves: dict
    U: ad.Node
    F: ad.Node
    target: ad.Node
    kernel: ad.Node
    pred: ad.Node
    loss: ad.Node

    def load(self, params, U, F, target=None):
        for name, leaf in self.leaves.items():
            ad.set_value(leaf, params.values[name])
        ad.set_value(self.U, U)
        ad.set_value(self.F, F)
        ad.set_value(self.target, F if target is None else target)


def build_graph(config, mesh, batch, params=None):
    """Graph computing kernel, prediction and loss for ``batch`` samples.

    Shapes: U (B, N, d), F (B, n_f, d); kernel (B, 1, N) radial or
    (B, N, N) general; prediction has the shape of F.
    """
    cfg, var = config, config.variant
    if params is None:
        params = init_params(cfg, mesh)
    leaves = {k: ad.leaf(v, name=k) for k, v in params.values.items()}
    n, nf, d = mesh.n, mesh.n_f, cfg.d
    U = ad.leaf(np.zeros((batch, n, d)), name="U", trainable=False)
    F = ad.leaf(np.zeros((batch, nf, d)), name="F", trainable=False)
    target = ad.leaf(np.zeros((batch, nf, d)), name="target", trainable=False)
    X = ad.concat([U, F], axis=1) if var.uses_f else U
    rw = ad.constant(mesh.row_weights(var.uses_f)) if var.mixer == "continuous" else None
    inv = 1.0 / math.sqrt(cfg.d_k)
    factored = var.activation == "linear" and cfg.attention_form == "factored"
    for l in range(1, cfg.layers):
        Q = ad.matmul(X, leaves[f"wq{l}"])
        Kx = ad.matmul(X, leaves[f"wk{l}"])
        Xw = ad.mul(X, rw) if rw is not None else X
        if factored:
            upd = ad.scale(ad.matmul(Q, ad.matmul(ad.transpose(Kx), Xw)), inv)
        else:
            upd = ad.matmul(_sigma(ad.scale(ad.matmul(Q, ad.transpose(Kx)), inv), var.activation), Xw)
        X = ad.add(upd, X)
    L = cfg.layers
    UL = ad.take(X, 1, 0, n) if var.uses_f else X
    KL = ad.transpose(ad.matmul(UL, leaves[f"wk{L}"]))                                  # (B, d_k, N)
    QU = ad.matmul(UL, leaves[f"wq{L}"])                                                # (B, N, d_k)
    FL = ad.take(X, 1, n, n + nf) if var.uses_f else None

    def attn(Qn):
        return _sigma(ad.scale(ad.matmul(Qn, KL), inv), var.activation)

    def mixed(left, Qn):
        """``left @ sigma(Qn K^T / sqrt(d_k))`` with the factored shortcut when linear."""
        if factored:
            return ad.scale(ad.matmul(ad.matmul(left, Qn), KL), inv)
        return ad.matmul(left, attn(Qn))

    w = mesh.weight
    if mesh.kind == "radial":
        if var.mixer == "continuous":
            hu = _mlp_graph(leaves, "headu", ad.constant(mesh.coords), cfg.head_slope)   # (N, 1)
            K = mixed(ad.transpose(ad.scale(hu, w)), QU)                                # (B, 1, N)
            if var.uses_f:
                K = ad.add(K, ad.mul(leaves["wf"], attn(ad.matmul(FL, leaves[f"wq{L}"]))))
        else:
            # diagonal readout K(r) = sum_z wpu[r, z] A(z, r)
            if factored:
                K = ad.scale(ad.sum(ad.mul(ad.transpose(ad.matmul(leaves["wpu"], QU)), KL),
                                    axis=1, keepdims=True), inv)
            else:
                K = ad.sum(ad.mul(ad.transpose(leaves["wpu"]), attn(QU)), axis=1, keepdims=True)
            if var.uses_f:
                K = ad.add(K, ad.mul(ad.transpose(leaves["wpf"]),
                                     attn(ad.matmul(FL, leaves[f"wq{L}"]))))
    else:
        QF = ad.matmul(FL, leaves[f"wq{L}"]) if var.uses_f else None
        if var.mixer == "continuous":
            pairs = ad.constant(pair_inputs(mesh.coords))
            Hu = ad.reshape(_mlp_graph(leaves, "headu", pairs, cfg.head_slope), (n, n))
            K = mixed(ad.scale(Hu, w), QU)
            if var.uses_f:
                Hf = ad.reshape(_mlp_graph(leaves, "headf", pairs, cfg.head_slope), (n, n))
                K = ad.add(K, mixed(ad.scale(Hf, mesh.f_weight), QF))
        else:
            K = mixed(leaves["wpu"], QU)
            if var.uses_f:
                K = ad.add(K, mixed(leaves["wpf"], QF))
    pred = ad.matmul(K, ad.scale(U, w))
    resid = ad.sub(pred, target)
    loss = ad.scale(ad.sum(ad.mul(resid, resid)), mesh.x_weight / batch)
    return ModelGraph(cfg, mesh, batch, leaves, U, F, target, K, pred, loss)


def _stack(samples, mesh):
    samples = samples if isinstance(samples, (list, tuple)) else [samples]
    U = np.stack([np.asarray(s.u, dtype=float) for s in samples])
    F = np.stack([np.asarray(s.f, dtype=float).reshape(mesh.n_f, -1) for s in samples])
    if U.shape[1] != mesh.n:
        raise DimensionError(f"token rows {U.shape[1]} differ from mesh size {mesh.n}")
    return U, F


def _check_tokens(params, U):
    if U.shape[2] != params.config.d:
        raise DimensionError(f"token width {U.shape[2]} differs from model d={params.config.d}")


def run_forward(params, mesh, samples):
    """Kernel and prediction arrays for a list of samples (one graph pass)."""
    U, F = _stack(samples, mesh)
    _check_tokens(params, U)
    g = build_graph(params.config, mesh, U.shape[0], params)
    g.load(params, U, F)
    ad.forward_eval(g.pred)
    return g.kernel.value, g.pred.value


def kernel_map_forward(tokens, params, mesh):
    """Kernel estimate for one sample: length-N vector (radial) or N x N grid."""
    K, _ = run_forward(params, mesh, [tokens])
    return K[0, 0] if mesh.kind == "radial" else K[0]


def predict(kernel, u_token, weight):
    """``f_hat = K u * weight`` (radial: ``sum_k K(r_k) u[k, j] dr``)."""
    kernel = np.asarray(kernel, dtype=float)
    u_token = np.asarray(u_token, dtype=float)
    n = kernel.shape[-1]
    if u_token.shape[0] != n:
        raise DimensionError(f"kernel grid of size {n} does not match {u_token.shape[0]} token rows")
    out = kernel @ u_token * weight
    return out.reshape(1, -1) if kernel.ndim == 1 else out


def scores_rank(params, layer):
    """Singular values of ``Wq Wk^T / sqrt(d_k)`` for one layer."""
    v = params.values
    M = v[f"wq{layer}"] @ v[f"wk{layer}"].T / math.sqrt(params.config.d_k)
    return np.linalg.svd(M, compute_uv=False)


# ---------------------------------------------------------------- integral-form references

def _integral_update(g, f, W, wg, wf):
    """One residual layer written block-wise as Riemann sums over the rows.

    ``g`` (N x d) and ``f`` (n_f x d) are the layer inputs, ``W`` the d x d
    interaction matrix; ``wg``/``wf`` are the row quadrature weights.
    """
    def mix(a, b):  # sum_gamma sum_{w,n} a[alpha,w] W[w,n] b[gamma,n] b[gamma,beta] * weight
        return np.einsum("aw,wn,gn,gb->ab", a, W, b, b, optimize=True)

    g_new = mix(g, g) * wg + g
    f_new = None
    if f is not None:
        g_new = g_new + np.einsum("aw,wn,gn,gb->ab", g, W, f, f, optimize=True) * wf
        f_new = (np.einsum("aw,wn,gn,gb->ab", f, W, g, g, optimize=True) * wg
                 + np.einsum("aw,wn,gn,gb->ab", f, W, f, f, optimize=True) * wf + f)
    return g_new, f_new


def continuous_forward(tokens, params, mesh):
    """Riemann-sum evaluation of the continuum operator (linear sigma only).

    Returns ``(kernel, prediction)``.  Written block-wise (g rows and f rows
    separately, interaction matrices formed explicitly) so that it is an
    independent check of the stacked-matrix graph.
    """
    cfg, var = params.config, params.config.variant
    if var.activation != "linear":
        raise ConfigurationError("the continuum form is defined for linear attention only")
    if var.mixer != "continuous":
        raise ConfigurationError("continuous_forward needs continuous-mixer parameters")
    v = params.values
    g0 = np.asarray(tokens.u, dtype=float)
    f0 = np.asarray(tokens.f, dtype=float).reshape(mesh.n_f, -1) if var.uses_f else None
    g, f = g0, f0
    for l in range(1, cfg.layers):
        W = v[f"wq{l}"] @ v[f"wk{l}"].T / math.sqrt(cfg.d_k)
        g, f = _integral_update(g, f, W, mesh.weight, mesh.f_weight)
    L = cfg.layers
    W = v[f"wq{L}"] @ v[f"wk{L}"].T / math.sqrt(cfg.d_k)
    Auu = np.einsum("zw,wn,bn->zb", g, W, g, optimize=True)
    heads = head_values(params, mesh)
    if mesh.kind == "radial":
        K = np.einsum("z,zb->b", heads["u"], Auu) * mesh.weight
        if var.uses_f:
            K = K + v["wf"][0] * np.einsum("zw,wn,bn->b", f, W, g, optimize=True)
        pred = (K @ g0 * mesh.weight)[None, :]
    else:
        K = heads["u"] @ Auu * mesh.weight
        if var.uses_f:
            K = K + heads["f"] @ np.einsum("zw,wn,bn->zb", f, W, g, optimize=True) * mesh.f_weight
        pred = K @ g0 * mesh.weight
    return K, pred


def discretize_parameters(params, mesh):
    """Discrete-mixer parameters reproducing a continuous model (general mesh).

    Residual-layer interaction matrices absorb the row weight (a factor h)
    and the dense heads absorb the head quadrature weight, so the discrete
    kernel, and hence the prediction, equals the continuous one.
    """
    if mesh.kind != "general":
        raise ConfigurationError("scalar rescaling needs equal U and F row weights (general mesh)")
    cfg = params.config
    h = mesh.weight
    vals = {}
    for l in range(1, cfg.layers + 1):
        vals[f"wq{l}"] = params.values[f"wq{l}"] * (h if l < cfg.layers else 1.0)
        vals[f"wk{l}"] = params.values[f"wk{l}"].copy()
    heads = head_values(params, mesh)
    vals["wpu"] = heads["u"] * h
    if cfg.variant.uses_f:
        vals["wpf"] = heads["f"] * h
    dcfg = replace(cfg, variant=replace(cfg.variant, mixer="discrete"))
    return NaoParameters(dcfg, mesh.kind, vals)


def lemma1_reference_kernel(tokens, params, mesh):
    """Two-layer radial kernel by nested Riemann sums.

    Evaluates the layer-1 integral update pointwise, then

        K(r) = sum_r' w_u(r') [sum_x sum_y g(r', x) W(x, y) g(r, y)] dr'
             + w_f sum_x sum_y f(x) W(x, y) g(r, y)

    with explicit loops over r and r'.  With a zero first-layer matrix this
    is the double-integral limit formula applied to the raw tokens.
    """
    cfg, var = params.config, params.config.variant
    if cfg.layers != 2:
        raise ConfigurationError(f"the two-layer reference needs layers=2, got {cfg.layers}")
    if var.activation != "linear" or mesh.kind != "radial":
        raise ConfigurationError("the two-layer reference is defined for linear radial models")
    v = params.values
    sq = math.sqrt(cfg.d_k)
    W1 = v["wq1"] @ v["wk1"].T / sq
    W2 = v["wq2"] @ v["wk2"].T / sq
    g = np.asarray(tokens.u, dtype=float)
    f = np.asarray(tokens.f, dtype=float).reshape(1, -1) if var.uses_f else np.zeros((0, g.shape[1]))
    n = g.shape[0]
    # layer 1, one output row at a time
    rows = np.vstack([g, f])
    wts = np.concatenate([np.full(n, mesh.weight), np.full(f.shape[0], 1.0)])
    proj = rows @ W1                     # row alpha against every column nu
    new = np.empty_like(rows)
    for a in range(rows.shape[0]):
        coef = (rows @ proj[a]) * wts    # sum_{w,n} X[a,w] W[w,n] X[gamma,n] * weight_gamma
        new[a] = coef @ rows + rows[a]
    g1, f1 = new[:n], new[n:]
    hu = mlp_np(v, "headu", mesh.coords, cfg.head_slope).reshape(-1)
    K = np.zeros(n)
    for k in range(n):
        inner = g1 @ (W2 @ g1[k])        # sum_x sum_y g1(r', x) W(x, y) g1(r_k, y) for all r'
        K[k] = np.sum(hu * inner) * mesh.weight
        if var.uses_f:
            K[k] += v["wf"][0] * float(f1[0] @ (W2 @ g1[k]))
    return K

"""From-scratch differentiable networks: MLP output map, RNN/GRU cells, Adam.

All forward passes have matching hand-written reverse-mode backward passes;
every gradient in the repository is checked against central finite
differences in the test suite.  Batched variants operate on (B, m) latent
matrices; the single-sample functions are thin wrappers.

Weight convention: matrices are (out, in); a batched linear layer computes
``Z @ W.T + b``.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError, NumericError


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # stable on both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# MLP


@dataclasses.dataclass
class MlpParams:
    """Layered (weight, bias) pairs; ReLU between layers, linear output.

    The default output map uses three hidden layers of 128 units.
    """

    layers: list

    @property
    def input_dim(self):
        return self.layers[0][0].shape[1]

    def copy(self):
        return MlpParams(layers=[(W.copy(), b.copy()) for W, b in self.layers])


def new_mlp(layer_sizes, rng, out_scale=0.1) -> MlpParams:
    """He-style uniform fan-in init; the output layer is scaled down.

    A small output layer keeps early open-loop rollouts near the decaying
    homogeneous dynamics, which keeps backpropagation through time stable;
    too small and the feedback path unfreezes slowly at small learning rates.
    """
    layers = []
    last = len(layer_sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        if i == last:
            bound = out_scale
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        layers.append((W, b))
    return MlpParams(layers=layers)


def default_output_mlp(input_dim, rng, hidden=(128, 128, 128)) -> MlpParams:
    return new_mlp((input_dim,) + tuple(hidden) + (1,), rng)


@dataclasses.dataclass
class MlpCache:
    params: MlpParams
    inputs: list  # layer inputs, one per layer
    preacts: list  # pre-activations of hidden layers


def mlp_forward_batch(params: MlpParams, Z):
    """Forward pass for a batch of latent vectors Z (B, m) -> (B,)."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != params.input_dim:
        raise InvalidArgumentError(
            f"expected input of shape (B, {params.input_dim}), got {Z.shape}"
        )
    inputs, preacts = [], []
    h = Z
    for i, (W, b) in enumerate(params.layers):
        inputs.append(h)
        a = h @ W.T + b
        if i < len(params.layers) - 1:
            preacts.append(a)
            h = relu(a)
        else:
            h = a
    return h[:, 0], MlpCache(params=params, inputs=inputs, preacts=preacts)


def mlp_forward(params: MlpParams, z):
    """Scalar output map h(z) for a single latent vector."""
    y, cache = mlp_forward_batch(params, np.asarray(z, dtype=np.float64)[None, :])
    return float(y[0]), cache


def mlp_backward_batch(params: MlpParams, cache: MlpCache, upstream):
    """Gradients of sum_b upstream[b] * y[b] w.r.t. parameters and inputs.

    Returns (grads, dZ) with ``grads`` a list of (dW, db) matching layers.
    """
    if cache.params is not params:
        raise InvalidStateError("backward called with a cache from different parameters")
    upstream = np.asarray(upstream, dtype=np.float64)
    d = upstream[:, None]
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[i]
        h_in = cache.inputs[i]
        dW = d.T @ h_in
        db = d.sum(axis=0)
        grads[i] = (dW, db)
        d = d @ W
        if i > 0:
            d = d * (cache.preacts[i - 1] > 0)
    return grads, d


def mlp_backward(params: MlpParams, cache: MlpCache, upstream):
    """Single-sample wrapper; returns (grads, dz)."""
    grads, dZ = mlp_backward_batch(params, cache, np.array([float(upstream)]))
    return grads, dZ[0]


def mlp_param_list(params: MlpParams):
    names, arrays = [], []
    for i, (W, b) in enumerate(params.layers):
        names.extend([f"h{i}.W", f"h{i}.b"])
        arrays.extend([W, b])
    return names, arrays


def mlp_from_list(arrays):
    return MlpParams(layers=[(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])


# ---------------------------------------------------------------------------
# Recurrent cells


@dataclasses.dataclass
class RnnParams:
    """z' = tanh(w1 @ z + w2 * y + b); w2 is the (m,) input column."""

    w1: np.ndarray
    w2: np.ndarray
    b: np.ndarray

    @property
    def m(self):
        return self.w1.shape[0]

    def copy(self):
        return RnnParams(self.w1.copy(), self.w2.copy(), self.b.copy())


@dataclasses.dataclass
class GruParams:
    """Gated recurrent unit with scalar input y.

    r = sigmoid(wr1*y + wr2 @ z + br)
    x = sigmoid(wx1*y + wx2 @ z + bx)
    n = tanh(wn1*y + r * (wn2 @ z + bn2) + bn1)
    z' = (1 - x) * n + x * z
    """

    wr1: np.ndarray
    wr2: np.ndarray
    br: np.ndarray
    wx1: np.ndarray
    wx2: np.ndarray
    bx: np.ndarray
    wn1: np.ndarray
    wn2: np.ndarray
    bn1: np.ndarray
    bn2: np.ndarray

    @property
    def m(self):
        return self.wr2.shape[0]

    def copy(self):
        return GruParams(*[getattr(self, f.name).copy() for f in dataclasses.fields(self)])


def new_rnn(m, rng) -> RnnParams:
    bound = 1.0 / np.sqrt(m)
    return RnnParams(
        w1=rng.uniform(-bound, bound, size=(m, m)),
        w2=rng.uniform(-bound, bound, size=m),
        b=np.zeros(m),
    )


def new_gru(m, rng) -> GruParams:
    bound = 1.0 / np.sqrt(m)
    mat = lambda: rng.uniform(-bound, bound, size=(m, m))
    vec = lambda: rng.uniform(-bound, bound, size=m)
    return GruParams(
        wr1=vec(), wr2=mat(), br=np.zeros(m),
        wx1=vec(), wx2=mat(), bx=np.zeros(m),
        wn1=vec(), wn2=mat(), bn1=np.zeros(m), bn2=np.zeros(m),
    )


def rnn_step_batch(params: RnnParams, Z, y):
    """One RNN update for Z (B, m) and scalar inputs y (B,)."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.shape[1] != params.m:
        raise InvalidArgumentError(f"expected latent dimension {params.m}, got {Z.shape[1]}")
    z_new = np.tanh(Z @ params.w1.T + y[:, None] * params.w2 + params.b)
    return z_new, (Z, y, z_new)


def rnn_step(params: RnnParams, z, y) -> np.ndarray:
    z_new, _ = rnn_step_batch(params, np.asarray(z, dtype=np.float64)[None, :], np.array([float(y)]))
    return z_new[0]


def rnn_backward_batch(params: RnnParams, cache, gZ_new):
    """Backward through one RNN step; returns (grads, dZ, dy)."""
    Z, y, z_new = cache
    da = gZ_new * (1.0 - z_new * z_new)
    grads = [da.T @ Z, da.T @ y, da.sum(axis=0)]  # w1, w2, b
    dZ = da @ params.w1
    dy = da @ params.w2
    return grads, dZ, dy


def gru_step_batch(params: GruParams, Z, y):
    """One GRU update for Z (B, m) and scalar inputs y (B,)."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.shape[1] != params.m:
        raise InvalidArgumentError(f"expected latent dimension {params.m}, got {Z.shape[1]}")
    yc = y[:, None]
    r = sigmoid(yc * params.wr1 + Z @ params.wr2.T + params.br)
    x = sigmoid(yc * params.wx1 + Z @ params.wx2.T + params.bx)
    inner = Z @ params.wn2.T + params.bn2
    n = np.tanh(yc * params.wn1 + r * inner + params.bn1)
    z_new = (1.0 - x) * n + x * Z
    return z_new, (Z, y, r, x, inner, n)


def gru_step(params: GruParams, z, y) -> np.ndarray:
    z_new, _ = gru_step_batch(params, np.asarray(z, dtype=np.float64)[None, :], np.array([float(y)]))
    return z_new[0]


def gru_backward_batch(params: GruParams, cache, gZ_new):
    """Backward through one GRU step; returns (grads, dZ, dy)."""
    Z, y, r, x, inner, n = cache
    dn = gZ_new * (1.0 - x)
    dx = gZ_new * (Z - n)
    dZ = gZ_new * x

    dan = dn * (1.0 - n * n)
    dwn1 = dan.T @ y
    dbn1 = dan.sum(axis=0)
    dr = dan * inner
    dinner = dan * r
    dwn2 = dinner.T @ Z
    dbn2 = dinner.sum(axis=0)
    dZ = dZ + dinner @ params.wn2
    dy = dan @ params.wn1

    dax = dx * x * (1.0 - x)
    dwx1 = dax.T @ y
    dbx = dax.sum(axis=0)
    dwx2 = dax.T @ Z
    dZ = dZ + dax @ params.wx2
    dy = dy + dax @ params.wx1

    dar = dr * r * (1.0 - r)
    dwr1 = dar.T @ y
    dbr = dar.sum(axis=0)
    dwr2 = dar.T @ Z
    dZ = dZ + dar @ params.wr2
    dy = dy + dar @ params.wr1

    grads = [dwr1, dwr2, dbr, dwx1, dwx2, dbx, dwn1, dwn2, dbn1, dbn2]
    return grads, dZ, dy


def rnn_param_list(params: RnnParams):
    return ["w1", "w2", "b"], [params.w1, params.w2, params.b]


def gru_param_list(params: GruParams):
    names = ["wr1", "wr2", "br", "wx1", "wx2", "bx", "wn1", "wn2", "bn1", "bn2"]
    return names, [getattr(params, n) for n in names]


# ---------------------------------------------------------------------------
# Adam


@dataclasses.dataclass
class AdamState:
    """Bias-corrected Adam moments for a flat list of parameter arrays."""

    m: list
    v: list
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(param_arrays, lr=1e-4) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in param_arrays],
        v=[np.zeros_like(p) for p in param_arrays],
        lr=lr,
    )


def adam_step(param_arrays, grad_arrays, state: AdamState, names=None):
    """One Adam update; returns (new_params, new_state)."""
    if len(param_arrays) != len(grad_arrays) or len(param_arrays) != len(state.m):
        raise InvalidArgumentError("parameter, gradient, and state lists must align")
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(param_arrays, grad_arrays)):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"index {i}"
            raise NumericError(f"non-finite gradient in parameter block {label}", detail=label)
        m = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - state.lr * update)
        new_m.append(m)
        new_v.append(v)
    new_state = dataclasses.replace(state, m=new_m, v=new_v, step=t)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Spectral norm


def spectral_norm(matrix, iters=100, tol=1e-13) -> float:
    """Largest singular value by power iteration on W.T @ W.

    Deterministic: starts from a fixed seeded direction.  ``iters`` bounds the
    iteration count; convergence usually needs far fewer.
    """
    if iters < 1:
        raise InvalidArgumentError("iters must be >= 1")
    W = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    rng = np.random.Generator(np.random.PCG64(0))
    u = rng.standard_normal(W.shape[1])
    u /= np.linalg.norm(u)
    sigma = 0.0
    for _ in range(iters):
        v = W @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
        u = W.T @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        u /= nu
        new_sigma = float(v @ (W @ u))
        if abs(new_sigma - sigma) <= tol * max(1.0, abs(new_sigma)):
            return new_sigma
        sigma = new_sigma
    return sigma

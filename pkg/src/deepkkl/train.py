"""Training of the KKL predictor and the RNN/GRU baselines.

The loss follows the three-phase prediction pipeline: latents are filtered
closed-loop with measured outputs for the first t samples, then rolled out
open-loop (feeding the model's own output back as input) for the next p, and
the squared output error is summed over the window.  Gradients are exact
reverse accumulation through both phases, including the block parameters of
the KKL transition matrix; the finite-difference tests in the suite are the
authority on their correctness.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import nets
from .data import Dataset, apply_scaler, invert_scaler
from .errors import InvalidArgumentError, NumericError
from .kkl import KklModel, discretize_partials, new_kkl_model, project_block_grads
from .nets import (
    GruParams,
    RnnParams,
    adam_init,
    adam_step,
    gru_backward_batch,
    gru_param_list,
    gru_step_batch,
    mlp_backward_batch,
    mlp_forward_batch,
    mlp_from_list,
    mlp_param_list,
    rnn_backward_batch,
    rnn_param_list,
    rnn_step_batch,
)
from .seeding import generator

MODEL_KINDS = ("kkl", "rnn", "gru")
LOSS_WINDOWS = ("full", "open_only")


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 800
    batch_size: int = 64
    lr: float = 1e-4
    t_train: int = 25
    p_train: int = 25
    seed: int = 0
    kind: str = "kkl"
    loss_window: str = "full"
    latent_dim: int | None = None  # default 2n + 2
    hidden: tuple = (128, 128, 128)
    out_scale: float = 0.1  # output-layer init scale
    decay_rate: float = 2.0  # initial block decay, sigma_i = -decay_rate
    clip: float | None = None  # max gradient norm per block, off by default

    def validate(self, length):
        if self.kind not in MODEL_KINDS:
            raise InvalidArgumentError(f"unknown model kind '{self.kind}'")
        if self.loss_window not in LOSS_WINDOWS:
            raise InvalidArgumentError(f"unknown loss window '{self.loss_window}'")
        if self.t_train < 1 or self.p_train < 1 or self.t_train + self.p_train > length:
            raise InvalidArgumentError("need 1 <= t and t + p <= trajectory length")
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidArgumentError("epochs, batch_size, lr must be positive")


@dataclasses.dataclass
class TrainHistory:
    train_loss: list
    val_mse: list
    seconds: list
    best_epoch: int


@dataclasses.dataclass
class BaselineModel:
    """Recurrent baseline: cell latent update plus the same output-map MLP."""

    kind: str
    cell: RnnParams | GruParams
    head: nets.MlpParams
    scaler: object
    dt: float

    @property
    def m(self):
        return self.cell.m

    def copy(self):
        return BaselineModel(self.kind, self.cell.copy(), self.head.copy(), self.scaler, self.dt)


def new_baseline(kind, m, dt, scaler, rng, hidden=(128, 128, 128)) -> BaselineModel:
    if kind == "rnn":
        cell = nets.new_rnn(m, rng)
    elif kind == "gru":
        cell = nets.new_gru(m, rng)
    else:
        raise InvalidArgumentError(f"unknown baseline kind '{kind}'")
    head = nets.default_output_mlp(m, rng, hidden=hidden)
    return BaselineModel(kind=kind, cell=cell, head=head, scaler=scaler, dt=float(dt))


# ---------------------------------------------------------------------------
# Parameter flattening (canonical order per kind)


def param_arrays(model):
    """(names, arrays) in the canonical optimizer order for any model kind."""
    if isinstance(model, KklModel):
        names, arrays = mlp_param_list(model.head)
        return ["p", "omega"] + names, [model.p, model.omega] + arrays
    if model.kind == "rnn":
        cnames, carrays = rnn_param_list(model.cell)
    else:
        cnames, carrays = gru_param_list(model.cell)
    hnames, harrays = mlp_param_list(model.head)
    return cnames + hnames, carrays + harrays


def replace_params(model, arrays):
    """Rebuild a model of the same kind from a flat array list."""
    if isinstance(model, KklModel):
        return KklModel(p=arrays[0], omega=arrays[1], head=mlp_from_list(arrays[2:]),
                        scaler=model.scaler, dt=model.dt)
    if model.kind == "rnn":
        cell = RnnParams(*arrays[:3])
        rest = arrays[3:]
    else:
        cell = GruParams(*arrays[:10])
        rest = arrays[10:]
    return BaselineModel(kind=model.kind, cell=cell, head=mlp_from_list(rest),
                         scaler=model.scaler, dt=model.dt)


# ---------------------------------------------------------------------------
# Loss and gradients through the two-phase pipeline


def _latent_dim(model):
    return model.m


def batch_loss_and_grads(model, Y, t, p, loss_window="full"):
    """Mean per-trajectory loss over a batch and its exact gradients.

    Y is (B, L) of scaled outputs with L >= t + p.  The per-trajectory loss
    sums squared output errors over s in [0, t+p) for the full window or
    s in [t, t+p) for open_only; the batch objective is the mean, so the
    learning rate is batch-size invariant.  Returns (loss, grads) with grads
    aligned with ``param_arrays``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    B, L = Y.shape
    if t + p > L:
        raise InvalidArgumentError(f"window t+p={t + p} exceeds trajectory length {L}")
    S = t + p
    m = _latent_dim(model)
    is_kkl = isinstance(model, KklModel)
    if is_kkl:
        partials = discretize_partials(model)
        a_d, b_d = partials["a_d"], partials["b_d"]
        step_fwd = lambda Z, u: (Z @ a_d.T + u[:, None] * b_d, (Z, u))
    elif model.kind == "rnn":
        step_fwd = lambda Z, u: rnn_step_batch(model.cell, Z, u)
    else:
        step_fwd = lambda Z, u: gru_step_batch(model.cell, Z, u)

    # forward
    Z = np.zeros((B, m))
    yhat = np.empty((B, S))
    head_caches = [None] * S
    step_caches = [None] * (S - 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(S):
            yh, head_caches[s] = mlp_forward_batch(model.head, Z)
            yhat[:, s] = yh
            if s < S - 1:
                u = Y[:, s] if s < t else yh
                Z, step_caches[s] = step_fwd(Z, u)

    err = yhat - Y[:, :S]
    lo = 0 if loss_window == "full" else t
    per_traj = np.sum(err[:, lo:S] ** 2, axis=1)
    loss = float(per_traj.mean())
    if not np.isfinite(loss):
        bad = int(np.argmax(~np.isfinite(per_traj)))
        raise NumericError(f"non-finite loss for trajectory {bad} in batch", detail=bad)

    # backward
    head_grads = [np.zeros_like(a) for a in mlp_param_list(model.head)[1]]
    if is_kkl:
        g_ad = np.zeros((m, m))
        g_bd = np.zeros(m)
    else:
        cell_list = rnn_param_list if model.kind == "rnn" else gru_param_list
        cell_grads = [np.zeros_like(a) for a in cell_list(model.cell)[1]]

    gZ = np.zeros((B, m))
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(S - 1, -1, -1):
            d_in = None
            if s < S - 1:
                if is_kkl:
                    Z_s, u_s = step_caches[s]
                    g_ad += gZ.T @ Z_s
                    g_bd += gZ.T @ u_s
                    d_in = gZ @ b_d
                    gZ = gZ @ a_d
                elif model.kind == "rnn":
                    grads_s, gZ, d_in = rnn_backward_batch(model.cell, step_caches[s], gZ)
                    for i, g in enumerate(grads_s):
                        cell_grads[i] += g
                else:
                    grads_s, gZ, d_in = gru_backward_batch(model.cell, step_caches[s], gZ)
                    for i, g in enumerate(grads_s):
                        cell_grads[i] += g
            else:
                gZ = np.zeros((B, m))
            upstream = np.zeros(B)
            if s >= lo:
                upstream += 2.0 * err[:, s] / B
            if d_in is not None and s >= t:
                upstream += d_in  # open-loop feedback path
            hg, dZ_head = mlp_backward_batch(model.head, head_caches[s], upstream)
            for i, (dW, db) in enumerate(hg):
                head_grads[2 * i] += dW
                head_grads[2 * i + 1] += db
            gZ = gZ + dZ_head

    if is_kkl:
        gp, gw = project_block_grads(model, partials, g_ad, g_bd)
        grads = [gp, gw] + head_grads
    else:
        grads = cell_grads + head_grads
    return loss, grads


def trajectory_loss(model, y_traj, t, p, loss_window="full"):
    """Loss and gradients for one scaled trajectory (thin batch wrapper)."""
    return batch_loss_and_grads(model, np.asarray(y_traj, dtype=np.float64)[None, :],
                                t, p, loss_window=loss_window)


# ---------------------------------------------------------------------------
# Inference shared by all model kinds


def predict_any(model, Y_prefix, horizon) -> np.ndarray:
    """Forecast ``horizon`` raw-unit outputs from raw-unit prefixes (B, t)."""
    if isinstance(model, KklModel):
        from .kkl import predict_batch

        return predict_batch(model, Y_prefix, horizon)
    Y_prefix = np.asarray(Y_prefix, dtype=np.float64)
    if horizon == 0:
        return np.zeros((Y_prefix.shape[0], 0))
    scaled = apply_scaler(model.scaler, Y_prefix)
    B, t = scaled.shape
    step = rnn_step_batch if model.kind == "rnn" else gru_step_batch
    Z = np.zeros((B, model.m))
    for s in range(t):
        Z, _ = step(model.cell, Z, scaled[:, s])
    out = np.empty((B, horizon))
    for k in range(horizon):
        yh, _ = mlp_forward_batch(model.head, Z)
        out[:, k] = yh
        if k < horizon - 1:
            Z, _ = step(model.cell, Z, yh)
    if not np.all(np.isfinite(out)):
        raise NumericError("baseline rollout produced non-finite values")
    return invert_scaler(model.scaler, out)


def validation_mse(model, dataset: Dataset, t, p, split="val") -> float:
    """Raw-unit forecast MSE at window (t, p) over one split."""
    Y = dataset.outputs(split)
    preds = predict_any(model, Y[:, :t], p)
    err = preds - Y[:, t:t + p]
    return float(np.mean(err ** 2))


# ---------------------------------------------------------------------------
# Training loops


def _clip_grads(grads, max_norm):
    if max_norm is None:
        return grads
    out = []
    for g in grads:
        norm = float(np.linalg.norm(g))
        out.append(g * (max_norm / norm) if norm > max_norm else g)
    return out


def train(model, dataset: Dataset, config: TrainConfig):
    """Optimise a model on the dataset; returns (best model, history).

    Shuffled mini-batches (seeded), Adam on the batch-mean loss, validation
    forecast MSE after every epoch, best-validation checkpoint returned.  A
    numeric failure aborts the loop and returns the last good checkpoint.
    """
    length = len(dataset.splits["train"][0].times)
    config.validate(length)
    Y_train = dataset.scaled_outputs("train")
    n_train = Y_train.shape[0]
    names, arrays = param_arrays(model)
    state = adam_init(arrays, lr=config.lr)
    shuffle_rng = generator(config.seed, "shuffle")

    history = TrainHistory(train_loss=[], val_mse=[], seconds=[], best_epoch=0)
    best_val = np.inf
    best_model = model.copy()
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = shuffle_rng.permutation(n_train)
        epoch_losses = []
        try:
            for lo in range(0, n_train, config.batch_size):
                batch = Y_train[order[lo:lo + config.batch_size]]
                loss, grads = batch_loss_and_grads(
                    model, batch, config.t_train, config.p_train, config.loss_window
                )
                grads = _clip_grads(grads, config.clip)
                _, arrays = param_arrays(model)
                arrays, state = adam_step(arrays, grads, state, names=names)
                model = replace_params(model, arrays)
                epoch_losses.append(loss)
        except NumericError:
            break
        if isinstance(model, KklModel):
            assert np.all(model.sigmas() < 0)  # guaranteed by the reparameterisation
        val = validation_mse(model, dataset, config.t_train, config.p_train)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_mse.append(val)
        history.seconds.append(time.perf_counter() - started)
        if val < best_val:
            best_val = val
            history.best_epoch = epoch
            best_model = model.copy()
    return best_model, history


def train_kkl(dataset: Dataset, config: TrainConfig):
    """Construct and train a fresh KKL model per the config.

    The rotation rates are initialised around the dominant frequency of the
    scaled training outputs, so the filter bank starts inside the signal band
    regardless of the system's time scale.
    """
    from .kkl import default_latent_dim, init_omegas_from_outputs

    rng = generator(config.seed, "model_init")
    m = config.latent_dim or default_latent_dim(dataset.system.n)
    Y_train = dataset.scaled_outputs("train")
    omega = init_omegas_from_outputs(Y_train, dataset.system.dt, m // 2)
    model = new_kkl_model(
        dataset.system.n, dataset.system.dt, dataset.scaler, rng,
        latent_dim=config.latent_dim, hidden=config.hidden, omega=omega,
        out_scale=config.out_scale, decay_rate=config.decay_rate,
    )
    return train(model, dataset, config)


def train_baseline(kind, dataset: Dataset, config: TrainConfig):
    """Train an RNN or GRU baseline under the identical protocol.

    The latent dimension defaults to the KKL latent dimension for parity.
    During the open-loop phase the baselines feed their own output estimate
    back as the input, mirroring the KKL rollout.
    """
    if kind not in ("rnn", "gru"):
        raise InvalidArgumentError(f"unknown baseline kind '{kind}'")
    from .kkl import default_latent_dim

    m = config.latent_dim or default_latent_dim(dataset.system.n)
    rng = generator(config.seed, "model_init")
    model = new_baseline(kind, m, dataset.system.dt, dataset.scaler, rng, hidden=config.hidden)
    return train(model, dataset, config)

"""KKL predictor core: Hurwitz latent contraction, filtering, rollout,
embedding-map quadrature, and contraction/Lipschitz constants.

The latent transition matrix A is parameterised by rotation-with-decay
blocks [[sigma, omega], [-omega, sigma]] with sigma = -exp(p), which keeps A
Hurwitz for every finite parameter value and makes exp(A t), the zero-order
hold discretisation, and the contraction constants available in closed form.
An odd latent dimension appends one scalar block (decay only).

Each 2x2 block is algebraically a complex multiplication: acting on
zeta = z1 + i*z2, the block multiplies by alpha = sigma - i*omega, exp(A t)
multiplies by exp(alpha t), and the hold integral is (exp(alpha dt) - 1) /
alpha.  All closed forms and their parameter derivatives below come from that
identification.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .data import Scaler, apply_scaler, invert_scaler
from .dynsys import SystemSpec, observe, rk4_step, vector_field
from .errors import InvalidArgumentError, NumericError, NumericOverflowError
from .nets import MlpParams, mlp_forward_batch, spectral_norm


@dataclasses.dataclass
class KklModel:
    """Latent contraction ``z' = A z + b y`` with a learned output map.

    ``p`` holds one decay parameter per block (sigma_i = -exp(p_i)); ``omega``
    holds rotation rates for the leading 2x2 blocks, so the latent dimension
    is ``len(p) + len(omega)``.  ``b`` is fixed to all ones.  ``head`` is the
    output map h(z); ``scaler``/``dt`` tie the model to its training data.
    """

    p: np.ndarray
    omega: np.ndarray
    head: MlpParams
    scaler: Scaler
    dt: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if len(self.p) < len(self.omega) or len(self.p) - len(self.omega) > 1:
            raise InvalidArgumentError(
                "need len(omega) paired blocks plus at most one scalar block"
            )
        if self.head.input_dim != self.m:
            raise InvalidArgumentError(
                f"output map expects input dimension {self.head.input_dim}, "
                f"latent dimension is {self.m}"
            )

    @property
    def m(self):
        return len(self.p) + len(self.omega)

    @property
    def has_scalar_block(self):
        return len(self.p) > len(self.omega)

    @property
    def b(self):
        return np.ones(self.m)

    def sigmas(self):
        return -np.exp(self.p)

    def copy(self):
        return KklModel(
            p=self.p.copy(), omega=self.omega.copy(), head=self.head.copy(),
            scaler=self.scaler, dt=self.dt,
        )


def default_latent_dim(state_dim) -> int:
    """Default latent dimension 2n + 2 (an even block count)."""
    return 2 * state_dim + 2


def init_omegas(n_pairs, dt) -> np.ndarray:
    """Log-spaced distinct rotation rates below the sampling Nyquist rate.

    Distinct eigenvalues with b = ones keep (A, b) controllable.
    """
    if n_pairs == 0:
        return np.zeros(0)
    hi = np.pi / (5.0 * dt)
    lo = np.pi / (25.0 * dt)
    return np.geomspace(lo, hi, n_pairs)


def init_omegas_from_outputs(Y, dt, n_pairs) -> np.ndarray:
    """Log-spaced rotation rates bracketing the training-output spectrum peak.

    The filter blocks are damped oscillators driven by the output; placing
    their rates around the dominant signal frequency makes the latent state
    informative after only a few samples.  Falls back to the dt-based grid
    when the spectrum peak is degenerate (constant or near-constant outputs).
    """
    if n_pairs == 0:
        return np.zeros(0)
    Y = np.asarray(Y, dtype=np.float64)
    power = np.abs(np.fft.rfft(Y - Y.mean(axis=1, keepdims=True), axis=1)) ** 2
    spectrum = power.mean(axis=0)
    if len(spectrum) < 3:
        return init_omegas(n_pairs, dt)
    k_peak = 1 + int(np.argmax(spectrum[1:]))
    if spectrum[k_peak] <= 0.0:
        return init_omegas(n_pairs, dt)
    omega_peak = 2.0 * np.pi * k_peak / (Y.shape[1] * dt)
    nyquist = np.pi / dt
    lo = omega_peak / 1.4
    hi = min(2.6 * omega_peak, nyquist)
    if not 0 < lo < hi:
        return init_omegas(n_pairs, dt)
    return np.geomspace(lo, hi, n_pairs)


def new_kkl_model(state_dim, dt, scaler, rng, latent_dim=None, hidden=(128, 128, 128),
                  omega=None, out_scale=0.1, decay_rate=2.0) -> KklModel:
    """Fresh model with log-spaced rotations and decay rates at ``decay_rate``."""
    from .nets import new_mlp

    m = default_latent_dim(state_dim) if latent_dim is None else int(latent_dim)
    if m < 1:
        raise InvalidArgumentError("latent dimension must be >= 1")
    if not decay_rate > 0:
        raise InvalidArgumentError("decay_rate must be positive")
    n_pairs, tail = divmod(m, 2)
    p = np.full(n_pairs + tail, np.log(decay_rate))
    if omega is None:
        omega = init_omegas(n_pairs, dt)
    elif len(omega) != n_pairs:
        raise InvalidArgumentError(f"need {n_pairs} rotation rates, got {len(omega)}")
    head = new_mlp((m,) + tuple(hidden) + (1,), rng, out_scale=out_scale)
    return KklModel(p=p, omega=np.asarray(omega, dtype=np.float64), head=head,
                    scaler=scaler, dt=float(dt))


def build_a(model: KklModel) -> np.ndarray:
    """Assemble the block-diagonal Hurwitz matrix A."""
    m = model.m
    sig = model.sigmas()
    A = np.zeros((m, m))
    for i, w in enumerate(model.omega):
        k = 2 * i
        A[k, k] = A[k + 1, k + 1] = sig[i]
        A[k, k + 1] = w
        A[k + 1, k] = -w
    if model.has_scalar_block:
        A[m - 1, m - 1] = sig[-1]
    return A


def matrix_exp(model: KklModel, t) -> np.ndarray:
    """Closed-form exp(A t): per block exp(sigma t) times a rotation."""
    m = model.m
    sig = model.sigmas()
    out = np.zeros((m, m))
    for i, w in enumerate(model.omega):
        k = 2 * i
        e = np.exp(sig[i] * t)
        c, s = np.cos(w * t), np.sin(w * t)
        out[k, k] = out[k + 1, k + 1] = e * c
        out[k, k + 1] = e * s
        out[k + 1, k] = -e * s
    if model.has_scalar_block:
        out[m - 1, m - 1] = np.exp(sig[-1] * t)
    return out


@dataclasses.dataclass(frozen=True)
class DiscretePair:
    """Zero-order-hold discretisation (A_d, b_d) of (A, b) at step dt."""

    a_d: np.ndarray
    b_d: np.ndarray


def _block_alphas(model):
    """Complex eigenvalues alpha = sigma - i*omega of the paired blocks."""
    sig = model.sigmas()
    n_pairs = len(model.omega)
    return sig[:n_pairs] - 1j * model.omega


def discretize(model: KklModel) -> DiscretePair:
    """Exact discretisation: A_d = exp(A dt), b_d = A^{-1}(A_d - I) b.

    Exact because the latent dynamics are linear in z and the driving output
    is held constant over each sampling period.
    """
    m, dt = model.m, model.dt
    a_d = np.zeros((m, m))
    b_d = np.zeros(m)
    alphas = _block_alphas(model)
    for i, alpha in enumerate(alphas):
        k = 2 * i
        ad = np.exp(alpha * dt)
        hold = (ad - 1.0) / alpha
        sb = hold * (1.0 + 1.0j)  # hold integral applied to b block (1, 1)
        a_d[k, k] = a_d[k + 1, k + 1] = ad.real
        a_d[k, k + 1] = -ad.imag
        a_d[k + 1, k] = ad.imag
        b_d[k] = sb.real
        b_d[k + 1] = sb.imag
    if model.has_scalar_block:
        s = model.sigmas()[-1]
        ad = np.exp(s * dt)
        a_d[m - 1, m - 1] = ad
        b_d[m - 1] = (ad - 1.0) / s
    return DiscretePair(a_d=a_d, b_d=b_d)


def discretize_partials(model: KklModel):
    """(A_d, b_d) plus their derivatives w.r.t. the block parameters.

    For each paired block, alpha = sigma - i*omega with d(alpha)/dp = sigma
    and d(alpha)/domega = -i; the hold integral S = (exp(alpha dt) - 1)/alpha
    has dS/dalpha = (dt exp(alpha dt) - S)/alpha.  Returns a dict consumed by
    the training backward pass.
    """
    m, dt = model.m, model.dt
    pair = discretize(model)
    sig = model.sigmas()
    alphas = _block_alphas(model)
    d = {"a_d": pair.a_d, "b_d": pair.b_d, "pairs": [], "tail": None}
    for i, alpha in enumerate(alphas):
        ad = np.exp(alpha * dt)
        S = (ad - 1.0) / alpha
        dad_dalpha = dt * ad
        dS_dalpha = (dt * ad - S) / alpha
        entry = {
            "dad_dp": dad_dalpha * sig[i],
            "dad_dw": dad_dalpha * (-1.0j),
            "dsb_dp": dS_dalpha * sig[i] * (1.0 + 1.0j),
            "dsb_dw": dS_dalpha * (-1.0j) * (1.0 + 1.0j),
        }
        d["pairs"].append(entry)
    if model.has_scalar_block:
        s = sig[-1]
        ad = np.exp(s * dt)
        S = (ad - 1.0) / s
        d["tail"] = {
            "dad_dp": dt * ad * s,
            "dbd_dp": ((dt * ad - S) / s) * s,
        }
    return d


def project_block_grads(model: KklModel, partials, g_ad, g_bd):
    """Chain dense (A_d, b_d) gradients onto the (p, omega) parameters.

    The A_d block is [[x, -y], [y, x]] with x + i y = exp(alpha dt); the b_d
    block stacks the real and imaginary parts of S * (1 + i).
    """
    gp = np.zeros_like(model.p)
    gw = np.zeros_like(model.omega)
    for i, entry in enumerate(partials["pairs"]):
        k = 2 * i
        gx = g_ad[k, k] + g_ad[k + 1, k + 1]
        gy = g_ad[k + 1, k] - g_ad[k, k + 1]
        gb = g_bd[k] + 1j * g_bd[k + 1]
        # real chain rule via complex parts: dL/dtheta = gx*Re + gy*Im + ...
        gp[i] = (
            gx * entry["dad_dp"].real + gy * entry["dad_dp"].imag
            + gb.real * entry["dsb_dp"].real + gb.imag * entry["dsb_dp"].imag
        )
        gw[i] = (
            gx * entry["dad_dw"].real + gy * entry["dad_dw"].imag
            + gb.real * entry["dsb_dw"].real + gb.imag * entry["dsb_dw"].imag
        )
    if partials["tail"] is not None:
        k = model.m - 1
        gp[-1] = g_ad[k, k] * partials["tail"]["dad_dp"] + g_bd[k] * partials["tail"]["dbd_dp"]
    return gp, gw


# ---------------------------------------------------------------------------
# Filtering, rollout, prediction


def closed_loop_filter(model: KklModel, y_seq, z0=None) -> np.ndarray:
    """Filter scaled outputs through z_{k+1} = A_d z_k + b_d y_k.

    Returns all latents z_0 .. z_t (t = len(y_seq)), starting from z0
    (default zero, which the prediction pipeline always uses).
    """
    y_seq = np.asarray(y_seq, dtype=np.float64)
    zs = filter_batch(model, y_seq[None, :], None if z0 is None else np.asarray(z0)[None, :])
    return zs[0]


def filter_batch(model: KklModel, Y, Z0=None) -> np.ndarray:
    """Batched filter: Y (B, t) -> latents (B, t+1, m)."""
    pair = discretize(model)
    B, t = Y.shape
    Z = np.zeros((B, model.m)) if Z0 is None else np.array(Z0, dtype=np.float64)
    out = np.empty((B, t + 1, model.m))
    out[:, 0] = Z
    for k in range(t):
        Z = Z @ pair.a_d.T + Y[:, k, None] * pair.b_d
        out[:, k + 1] = Z
    if not np.all(np.isfinite(out)):
        raise NumericError("closed-loop filter produced non-finite latents")
    return out


def open_loop_rollout(model: KklModel, z_t, horizon, unscale=False):
    """Autonomous rollout z_{k+1} = A_d z_k + b_d h(z_k) for ``horizon`` steps.

    Returns (latents (horizon+1, m), outputs (horizon+1,)): the first output
    is h(z_t) itself.  Outputs are in scaled units unless ``unscale``.
    """
    latents, outputs = rollout_batch(model, np.asarray(z_t, dtype=np.float64)[None, :], horizon)
    y = invert_scaler(model.scaler, outputs[0]) if unscale else outputs[0]
    return latents[0], y


def rollout_batch(model: KklModel, Z, horizon):
    """Batched rollout: Z (B, m) -> (latents (B, horizon+1, m), outputs (B, horizon+1))."""
    if horizon < 0:
        raise InvalidArgumentError("horizon must be >= 0")
    pair = discretize(model)
    B = Z.shape[0]
    latents = np.empty((B, horizon + 1, model.m))
    outputs = np.empty((B, horizon + 1))
    for k in range(horizon + 1):
        latents[:, k] = Z
        yhat, _ = mlp_forward_batch(model.head, Z)
        outputs[:, k] = yhat
        if k < horizon:
            Z = Z @ pair.a_d.T + yhat[:, None] * pair.b_d
    if not (np.all(np.isfinite(latents)) and np.all(np.isfinite(outputs))):
        raise NumericError("open-loop rollout produced non-finite values")
    return latents, outputs


def predict(model: KklModel, y_prefix, horizon) -> np.ndarray:
    """Forecast ``horizon`` future outputs from a raw-unit output prefix.

    Pipeline: scale the prefix, filter from z = 0, roll out open-loop, and
    unscale.  Forecast index s corresponds to sample t + s of the underlying
    trajectory (t = len(y_prefix)).
    """
    return predict_batch(model, np.asarray(y_prefix, dtype=np.float64)[None, :], horizon)[0]


def predict_batch(model: KklModel, Y_prefix, horizon) -> np.ndarray:
    """Batched ``predict``: Y_prefix (B, t) raw units -> (B, horizon) raw units."""
    Y_prefix = np.asarray(Y_prefix, dtype=np.float64)
    if Y_prefix.ndim != 2 or Y_prefix.shape[1] < 1:
        raise InvalidArgumentError("need a prefix of at least one sample per trajectory")
    if horizon == 0:
        return np.zeros((Y_prefix.shape[0], 0))
    scaled = apply_scaler(model.scaler, Y_prefix)
    z_t = filter_batch(model, scaled)[:, -1]
    _, outputs = rollout_batch(model, z_t, horizon - 1)
    return invert_scaler(model.scaler, outputs)


# ---------------------------------------------------------------------------
# Embedding map T and its defining equation


def _decay_horizon(model, tail_eps=1e-8):
    """Backward horizon T_max with exp(sigma_max * T_max) < tail_eps."""
    sigma_max = float(model.sigmas().max())
    return np.log(1.0 / tail_eps) / abs(sigma_max)


def t_map(spec: SystemSpec, model: KklModel, x, t_max=None, quad_step=None) -> np.ndarray:
    """Embedding T(x) = integral_{-inf}^0 exp(-A s) b h(X(x, s)) ds.

    Computed by integrating the plant backward in time with RK4 at
    ``quad_step`` (default: the spec's fine integration step) and applying the
    composite trapezoid rule over [-t_max, 0].  The truncated tail is bounded
    by sup|h| * |b| * exp(sigma_max t_max) / |sigma_max|, so the default
    ``t_max`` keeps it below 1e-8 * sup|h| * |b|.
    """
    x = np.asarray(x, dtype=np.float64)
    if t_max is None:
        t_max = _decay_horizon(model)
    if quad_step is None:
        quad_step = spec.dt / spec.oversample
    n_steps = max(1, int(round(t_max / quad_step)))
    t_max = n_steps * quad_step

    # backward flow: integrate the time-reversed field with positive steps
    reversed_field = lambda s: -vector_field(spec.name, s)
    states = np.empty((n_steps + 1, spec.n))
    states[0] = x
    cur = x
    for j in range(n_steps):
        try:
            cur = rk4_step(reversed_field, cur, quad_step)
        except NumericOverflowError as exc:
            raise NumericError(
                f"backward flow of '{spec.name}' blew up {j * quad_step:.3f} time units "
                f"into the past; usable t_max is {j * quad_step:.3f}"
            ) from exc
        if np.any(np.abs(cur) > 1e6):
            raise NumericError(
                f"backward flow of '{spec.name}' exceeded the overflow guard "
                f"{(j + 1) * quad_step:.3f} time units into the past; usable t_max is "
                f"{j * quad_step:.3f}"
            )
        states[j + 1] = cur

    # node j corresponds to s = -j*quad_step; weight columns are exp(A|s|) b
    taus = np.arange(n_steps + 1) * quad_step
    ys = observe(spec.name, states)
    W = _exp_a_times_b(model, taus)  # (n_steps + 1, m)
    integrand = W * ys[:, None]
    weights = np.full(n_steps + 1, quad_step)
    weights[0] = weights[-1] = 0.5 * quad_step
    return weights @ integrand


def _exp_a_times_b(model, taus):
    """Rows exp(A tau) b for an array of nonnegative times tau."""
    taus = np.asarray(taus, dtype=np.float64)
    out = np.empty((len(taus), model.m))
    sig = model.sigmas()
    for i, w in enumerate(model.omega):
        vals = np.exp((sig[i] - 1j * w) * taus) * (1.0 + 1.0j)
        out[:, 2 * i] = vals.real
        out[:, 2 * i + 1] = vals.imag
    if model.has_scalar_block:
        out[:, model.m - 1] = np.exp(sig[-1] * taus)
    return out


def t_map_pde_residual(spec: SystemSpec, model: KklModel, x, fd_step=1e-3,
                       t_max=None, quad_step=None) -> float:
    """Residual of the defining equation L_f T = A T + b h at x.

    The Lie derivative is approximated by a forward difference along a short
    RK4 flow of length ``fd_step``; the residual is the 2-norm of the gap.
    """
    x = np.asarray(x, dtype=np.float64)
    field = lambda s: vector_field(spec.name, s)
    x_fwd = rk4_step(field, x, fd_step)
    T0 = t_map(spec, model, x, t_max=t_max, quad_step=quad_step)
    T1 = t_map(spec, model, x_fwd, t_max=t_max, quad_step=quad_step)
    lie = (T1 - T0) / fd_step
    rhs = build_a(model) @ T0 + model.b * observe(spec.name, x)
    return float(np.linalg.norm(lie - rhs))


# ---------------------------------------------------------------------------
# Constants


def contraction_constants(model: KklModel):
    """(k, lambda) with |exp(A t)| <= k exp(-lambda t); exact here.

    The block parameterisation makes A normal, so k = 1 and lambda is the
    slowest decay rate min_i exp(p_i).
    """
    return 1.0, float(np.exp(model.p).min())


def lipschitz_constants(model: KklModel, iters=200):
    """(L1, L2): certified output-map and latent-dynamics Lipschitz bounds.

    L2 is the product of layer spectral norms of the output map (an upper
    bound; ReLU is 1-Lipschitz), and L1 = |A| + |b| L2 with |A| the largest
    block eigenvalue modulus.
    """
    l2 = 1.0
    for W, _ in model.head.layers:
        l2 *= spectral_norm(W, iters=iters)
    sig = model.sigmas()
    mods = [abs(sig[-1])] if model.has_scalar_block else []
    mods.extend(np.sqrt(sig[i] ** 2 + w ** 2) for i, w in enumerate(model.omega))
    a_norm = max(mods)
    l1 = float(a_norm + np.sqrt(model.m) * l2)
    return l1, float(l2)

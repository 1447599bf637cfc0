"""Metrics, error bounds, and experiment drivers.

Contains the forecast MSE protocol, the closed-form prediction error bounds
(initialization-error term, and the additional output-map approximation
term), an exact LTI certification of the initialization bound, the training
noise sweep, and the generalization heatmap over initial conditions.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import data as datamod
from .data import Dataset, Scaler
from .dynsys import SystemSpec, simulate_batch, training_box
from .errors import InvalidArgumentError, NumericOverflowError
from .kkl import KklModel, contraction_constants, filter_batch, lipschitz_constants
from .nets import MlpParams
from .train import TrainConfig, predict_any, train_kkl

LOG_MSE_FLOOR = 1e-12


def mse(predictions, truths) -> float:
    """Forecast mean squared error 1/(N p) sum over trajectories and steps."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape:
        raise InvalidArgumentError(
            f"prediction shape {predictions.shape} != truth shape {truths.shape}"
        )
    return float(np.mean((predictions - truths) ** 2))


def evaluate_table(models: dict, dataset: Dataset, t=5, p=95):
    """Test-set forecast MSE per named model, in raw output units.

    Each test trajectory contributes exactly p squared terms: the model sees
    samples [0, t) and is scored on samples [t, t+p).
    """
    Y = dataset.outputs("test")
    if t + p > Y.shape[1]:
        raise InvalidArgumentError(f"window t+p={t + p} exceeds trajectory length {Y.shape[1]}")
    rows = []
    for name, model in models.items():
        preds = predict_any(model, Y[:, :t], p)
        rows.append({"model": name, "system": dataset.system.name, "mse": mse(preds, Y[:, t:t + p])})
    return rows


# ---------------------------------------------------------------------------
# Prediction error bounds


def init_error_bound(k, lam, l1, l2, z0_norm, t, p) -> float:
    """Bound k L2 exp(-lambda t + L1 p) |z0| on the prediction error.

    The filtering phase contracts the unknown latent initialization at rate
    lambda for t time units; the open-loop phase can expand it at the
    latent-dynamics Lipschitz rate L1 for p time units; the output map adds
    the factor L2.  ``t`` and ``p`` are in time units.
    """
    if min(k, lam, l1, l2, z0_norm) < 0:
        raise InvalidArgumentError("bound constants must be nonnegative")
    exponent = -lam * t + l1 * p
    if exponent > 700.0:
        return math.inf if z0_norm > 0 else 0.0
    return k * l2 * math.exp(exponent) * z0_norm


def growth_rate(l2, b_p_norm_sq, lam) -> float:
    """Rate L3 = L2^2 |b|_P^2 / (2 lambda) of approximation-error growth.

    P is the Lyapunov matrix of the latent contraction; the block
    parameterisation is normal, so P = I and |b|_P^2 = m.
    """
    return l2 * l2 * b_p_norm_sq / (2.0 * lam)


def total_error_bound(k, lam, l1, l2, z0_norm, t, p, delta, l3) -> float:
    """Initialization bound plus delta (sqrt(exp(L3 p) - 1) + 1).

    ``delta`` is a uniform bound on the output-map approximation error.
    Saturates to the +inf sentinel instead of overflowing when L3 p is large.
    """
    if delta < 0 or l3 < 0:
        raise InvalidArgumentError("delta and l3 must be nonnegative")
    base = init_error_bound(k, lam, l1, l2, z0_norm, t, p)
    exponent = l3 * p
    if exponent > 700.0:
        return math.inf
    return base + delta * (math.sqrt(math.exp(exponent) - 1.0) + 1.0)


# ---------------------------------------------------------------------------
# Exact LTI certification of the initialization bound


@dataclasses.dataclass
class LtiCase:
    """Discrete LTI plant on which the KKL predictor is exact.

    The plant is the predictor's own generating model: a one-dimensional
    latent (scalar block, rate sigma) with an exactly linear output map
    y = gain * z.  The plant state equals the latent embedding, so the true
    latent initialization z0 is known and the output-map approximation error
    is exactly zero.
    """

    model: KklModel
    x0: float
    gain: float


def make_lti_case(sigma=-2.0, gain=3.0, dt=0.25, x0=0.8) -> LtiCase:
    if sigma >= 0:
        raise InvalidArgumentError("sigma must be negative")
    head = MlpParams(layers=[(np.array([[float(gain)]]), np.zeros(1))])
    model = KklModel(p=np.array([math.log(-sigma)]), omega=np.zeros(0), head=head,
                     scaler=Scaler(-1.0, 1.0), dt=float(dt))
    return LtiCase(model=model, x0=float(x0), gain=float(gain))


@dataclasses.dataclass
class BoundReport:
    k: float
    lam: float
    l1: float
    l2: float
    l3: float
    z0_norm: float
    delta: float
    t_steps: np.ndarray
    p_steps: np.ndarray
    bound_init: np.ndarray
    bound_total: np.ndarray
    empirical: np.ndarray
    certified: bool
    violations: list


def bound_certification(case: LtiCase | None = None, n_t=10, n_p=10) -> BoundReport:
    """Check the initialization bound cell-by-cell on the exact LTI case.

    For every cell of the grid t in [0, n_t), p in [1, n_p], filters the true
    outputs for t steps from a zero latent, rolls out p steps open-loop, and
    asserts that the measured output error is at most the bound (the bound is
    stated for horizons p > 0; at p = 0 it is attained with equality).  On
    this construction the filtering error is exactly the contraction of |z0|
    and the open-loop one-step gain is below exp(L1 dt), so every cell must
    certify; a violation names its cell in ``violations``.
    """
    from .kkl import discretize, rollout_batch

    case = case or make_lti_case()
    model, gain = case.model, case.gain
    dt = model.dt
    k, lam = contraction_constants(model)
    l1, l2 = lipschitz_constants(model)

    # autonomous truth: z*_{k+1} = (a_d + b_d gain) z*_k, y_k = gain z*_k
    pair_mat = discretize(model)
    a_cl = float(pair_mat.a_d[0, 0] + pair_mat.b_d[0] * gain)
    n_samples = n_t + n_p
    z_true = case.x0 * (a_cl ** np.arange(n_samples + 1))
    y_true = gain * z_true

    t_grid, p_grid = [], []
    bound_init_vals, empirical_vals = [], []
    violations = []
    for t in range(n_t):
        filtered = filter_batch(model, y_true[None, :t] if t else np.zeros((1, 0)))[:, -1]
        _, outputs = rollout_batch(model, filtered, n_p)
        for p in range(1, n_p + 1):
            emp = abs(float(outputs[0, p]) - float(y_true[t + p]))
            bound = init_error_bound(k, lam, l1, l2, abs(case.x0), t * dt, p * dt)
            t_grid.append(t)
            p_grid.append(p)
            bound_init_vals.append(bound)
            empirical_vals.append(emp)
            if emp > bound:
                violations.append((t, p, emp, bound))
    bound_init_arr = np.array(bound_init_vals)
    l3 = growth_rate(l2, float(model.m), lam)
    report = BoundReport(
        k=k, lam=lam, l1=l1, l2=l2, l3=l3,
        z0_norm=abs(case.x0), delta=0.0,
        t_steps=np.array(t_grid), p_steps=np.array(p_grid),
        bound_init=bound_init_arr,
        bound_total=bound_init_arr.copy(),  # delta = 0 on the exact case
        empirical=np.array(empirical_vals),
        certified=not violations,
        violations=violations,
    )
    return report


# ---------------------------------------------------------------------------
# Diagnostic bound report for learned models


def delta_proxy(model, dataset: Dataset, t) -> float:
    """Closed-loop reconstruction error proxy for the approximation gap.

    Maximum |h(z_s) - y_s| (scaled units) over validation prefixes s < t.
    The true uniform gap is a supremum over all of latent space and is not
    measurable for a learned model; this proxy is reported, never asserted.
    """
    from .nets import mlp_forward_batch

    Y = dataset.scaled_outputs("val")[:, :t]
    latents = filter_batch(model, Y)
    worst = 0.0
    for s in range(t):
        yh, _ = mlp_forward_batch(model.head, latents[:, s])
        worst = max(worst, float(np.abs(yh - Y[:, s]).max()))
    return worst


def z0_norm_estimate(model, dataset: Dataset, t) -> float:
    """Heuristic |z0| estimate: filtered-latent magnitude, contraction undone.

    The true latent initialization is unknowable for a learned model; this
    takes the largest filtered latent norm over validation prefixes and
    rescales by the inverse of the contraction factor k exp(-lambda t).
    Reported as an estimate only.
    """
    k, lam = contraction_constants(model)
    Y = dataset.scaled_outputs("val")[:, :t]
    z_t = filter_batch(model, Y)[:, -1]
    biggest = float(np.linalg.norm(z_t, axis=1).max())
    return biggest / (k * math.exp(-lam * t * model.dt))


def bound_report_for_model(model: KklModel, dataset: Dataset, t=5, p=95) -> BoundReport:
    """Diagnostic bound evaluation for a learned model (scaled units).

    Bounds for learned models use the delta proxy and the |z0| estimate, so
    they are reported, not asserted; only the exact LTI construction runs as
    a certification.
    """
    k, lam = contraction_constants(model)
    l1, l2 = lipschitz_constants(model)
    l3 = growth_rate(l2, float(model.m), lam)
    delta = delta_proxy(model, dataset, t)
    z0n = z0_norm_estimate(model, dataset, t)
    Y = dataset.scaled_outputs("test")
    preds_raw = predict_any(model, dataset.outputs("test")[:, :t], p)
    preds = datamod.apply_scaler(model.scaler, preds_raw)
    emp = np.abs(preds - Y[:, t:t + p]).max(axis=0)

    t_grid = np.full(p, t)
    p_grid = np.arange(1, p + 1)
    bound_init_vals = np.array(
        [init_error_bound(k, lam, l1, l2, z0n, t * model.dt, pp * model.dt) for pp in p_grid]
    )
    bound_total_vals = np.array(
        [total_error_bound(k, lam, l1, l2, z0n, t * model.dt, pp * model.dt, delta, l3)
         for pp in p_grid]
    )
    return BoundReport(
        k=k, lam=lam, l1=l1, l2=l2, l3=l3, z0_norm=z0n, delta=delta,
        t_steps=t_grid, p_steps=p_grid,
        bound_init=bound_init_vals, bound_total=bound_total_vals,
        empirical=emp, certified=True, violations=[],
    )


# ---------------------------------------------------------------------------
# Noise sweep


DEFAULT_SIGMA_GRID = (0.0, 0.001, 0.005, 0.01, 0.05, 0.1)


def noise_sweep(spec: SystemSpec, sigma_grid, seeds, config: TrainConfig,
                counts=(1000, 200, 200), length=100, t=5, p=95):
    """Train per (sigma, seed) with noisy training outputs; score on clean test.

    Noise corrupts the training split only, in scaled units.  Returns rows of
    {sigma, seed, mse}, one per (sigma, seed).
    """
    rows = []
    for seed in seeds:
        base = datamod.generate(spec, counts=counts, length=length, seed=seed)
        for idx, sigma in enumerate(sigma_grid):
            noisy = datamod.add_noise(base, sigma, seed=seed * 1000 + idx)
            cfg = dataclasses.replace(config, seed=seed)
            model, _ = train_kkl(noisy, cfg)
            rows.append({"sigma": float(sigma), "seed": int(seed),
                         "mse": evaluate_table({"kkl": model}, noisy, t=t, p=p)[0]["mse"]})
    return rows


def sweep_quartiles(rows):
    """Per-sigma (q1, median, q3) of the sweep MSEs."""
    out = {}
    for sigma in sorted({r["sigma"] for r in rows}):
        vals = np.array([r["mse"] for r in rows if r["sigma"] == sigma])
        out[sigma] = tuple(np.percentile(vals, [25, 50, 75]))
    return out


# ---------------------------------------------------------------------------
# Generalization heatmap


def make_heatmap_grid(box, cells=40, enlarge=2.0):
    """Cell-center lattice over the training box enlarged per axis.

    Returns (points (cells^2, 2), in_domain (cells^2,) bool) where in_domain
    marks points inside the original box.
    """
    (lo1, hi1), (lo2, hi2) = box
    c1, c2 = 0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2)
    h1, h2 = 0.5 * (hi1 - lo1) * enlarge, 0.5 * (hi2 - lo2) * enlarge
    xs = np.linspace(c1 - h1, c1 + h1, cells)
    ys = np.linspace(c2 - h2, c2 + h2, cells)
    points = np.array([(x, y) for x in xs for y in ys])
    in_domain = (
        (points[:, 0] >= lo1) & (points[:, 0] <= hi1)
        & (points[:, 1] >= lo2) & (points[:, 1] <= hi2)
    )
    return points, in_domain


def generalization_heatmap(model, spec: SystemSpec, points, t=5, p=95):
    """Per-initial-condition forecast log-MSE for 2-D state systems.

    Simulates the ground truth from each point, forecasts with the model, and
    reports log10 MSE floored at 1e-12.  Cells whose ground truth blows up
    are flagged with NaN and excluded from any median.  Returns rows of
    {x1, x2, log_mse, in_domain}; in_domain membership is against the spec's
    training box.
    """
    if spec.n != 2:
        raise InvalidArgumentError("heatmap requires a 2-D state system")
    box = training_box(spec)
    points = np.asarray(points, dtype=np.float64)
    rows = []
    for x0 in points:
        inside = bool(
            box[0][0] <= x0[0] <= box[0][1] and box[1][0] <= x0[1] <= box[1][1]
        )
        try:
            _, _, outputs = simulate_batch(spec, x0[None, :], t + p - 1)
        except NumericOverflowError:
            rows.append({"x1": float(x0[0]), "x2": float(x0[1]),
                         "log_mse": float("nan"), "in_domain": inside})
            continue
        preds = predict_any(model, outputs[:, :t], p)
        cell_mse = mse(preds, outputs[:, t:t + p])
        rows.append({"x1": float(x0[0]), "x2": float(x0[1]),
                     "log_mse": math.log10(max(cell_mse, LOG_MSE_FLOOR)),
                     "in_domain": inside})
    return rows


def heatmap_medians(rows):
    """(median inside box, median outside box) over finite cells."""
    inside = [r["log_mse"] for r in rows if r["in_domain"] and math.isfinite(r["log_mse"])]
    outside = [r["log_mse"] for r in rows if not r["in_domain"] and math.isfinite(r["log_mse"])]
    return float(np.median(inside)), float(np.median(outside))

"""Benchmark dynamical systems and a fixed-step RK4 integrator.

Four benchmark vector fields (Van der Pol, Lorenz, Lotka-Volterra, mean-field
flow model) plus two scalar test fields used by verification code.  All
operations are pure given (spec, x0, seed); trajectories may be produced in
parallel with no shared state.  Everything runs in double precision.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import InvalidArgumentError, NumericOverflowError

# abort integration when any state component passes this magnitude
OVERFLOW_LIMIT = 1.0e6


def _vanderpol(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, (1.0 - x1 * x1) * x2 - x1], axis=-1)


def _lorenz(x):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [10.0 * (x2 - x1), 24.0 * x1 - x2 - x1 * x3, x1 * x2 - (8.0 / 3.0) * x3],
        axis=-1,
    )


def _lotka_volterra(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x1 * (2.0 / 3.0 - 0.75 * x2), x2 * (x1 - 1.0)], axis=-1)


def _mean_field(x):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack(
        [
            0.1 * x1 - x2 - 0.1 * x1 * x3,
            x1 + 0.1 * x2 - 0.1 * x2 * x3,
            -10.0 * (x3 - x1 * x1 - x2 * x2),
        ],
        axis=-1,
    )


def _scalar_decay(x):
    return -x


def _scalar_growth(x):
    return x


# name -> (field, state dim, default sampling period, init-condition domain)
# domains: ("box", ((lo, hi), ...)) or ("polar", r_max) with x3 = x1^2 + x2^2
_SYSTEMS = {
    "vanderpol": (_vanderpol, 2, 0.25, ("box", ((-5.0, 5.0), (-5.0, 5.0)))),
    "lorenz": (_lorenz, 3, 0.02, ("box", ((-20.0, 20.0), (-1.0, 1.0), (-1.0, 1.0)))),
    "lotka_volterra": (_lotka_volterra, 2, 0.25, ("box", ((0.0, 2.0), (0.0, 2.0)))),
    "mean_field": (_mean_field, 3, 0.05, ("polar", 1.1)),
    # scalar fields for integrator and embedding verification, not benchmarks
    "scalar_decay": (_scalar_decay, 1, 0.25, ("box", ((-1.0, 1.0),))),
    "scalar_growth": (_scalar_growth, 1, 0.25, ("box", ((-1.0, 1.0),))),
}

BENCHMARKS = ("vanderpol", "lorenz", "lotka_volterra", "mean_field")


@dataclasses.dataclass(frozen=True)
class SystemSpec:
    """A benchmark ODE with its sampling setup.

    ``dt`` is the output sampling period; integration runs at ``dt/oversample``
    internally.  ``init_domain`` describes where initial conditions are drawn.
    """

    name: str
    n: int
    dt: float
    oversample: int = 10
    init_domain: tuple = ()

    def __post_init__(self):
        if self.name not in _SYSTEMS:
            raise InvalidArgumentError(f"unknown system '{self.name}'")
        if self.n != _SYSTEMS[self.name][1]:
            raise InvalidArgumentError(
                f"system '{self.name}' has state dimension {_SYSTEMS[self.name][1]}, got {self.n}"
            )
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if self.oversample < 1:
            raise InvalidArgumentError("oversample must be >= 1")


@dataclasses.dataclass
class Trajectory:
    """Sampled solution: times t_k = k*dt, states x_k, outputs y_k = h(x_k)."""

    x0: np.ndarray
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray


def make_system(name, dt=None, oversample=10) -> SystemSpec:
    """SystemSpec for a registered system with its default domain."""
    if name not in _SYSTEMS:
        raise InvalidArgumentError(f"unknown system '{name}'")
    _, n, default_dt, domain = _SYSTEMS[name]
    return SystemSpec(
        name=name,
        n=n,
        dt=default_dt if dt is None else float(dt),
        oversample=int(oversample),
        init_domain=domain,
    )


def vector_field(name, x) -> np.ndarray:
    """Evaluate dx/dt for the named system at x (shape (..., n))."""
    if name not in _SYSTEMS:
        raise InvalidArgumentError(f"unknown system '{name}'")
    field, n, _, _ = _SYSTEMS[name]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise InvalidArgumentError(
            f"system '{name}' expects state dimension {n}, got {x.shape[-1]}"
        )
    return field(x)


def observe(name, x):
    """Observation map y = h(x): the first state component."""
    x = np.asarray(x, dtype=np.float64)
    out = x[..., 0]
    return float(out) if out.ndim == 0 else out


def rk4_step(field, x, h) -> np.ndarray:
    """One classical 4-stage Runge-Kutta step of size h > 0.

    Parameters
    ----------
    field : callable
        Vector field f(x) -> dx/dt, broadcasting over leading axes.
    x : ndarray
        Current state.
    h : float
        Step size, must be positive; integrate a time-reversed field to go
        backward.

    Returns
    -------
    ndarray
        State after one step.
    """
    if not h > 0:
        raise InvalidArgumentError("rk4_step requires h > 0")
    x = np.asarray(x, dtype=np.float64)
    k1 = field(x)
    k2 = field(x + 0.5 * h * k1)
    k3 = field(x + 0.5 * h * k2)
    k4 = field(x + h * k3)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite state after RK4 step")
    return out


def _integrate_window(field, x, h, substeps):
    for _ in range(substeps):
        x = rk4_step(field, x, h)
    return x


def simulate(spec: SystemSpec, x0, steps: int) -> Trajectory:
    """Integrate ``steps`` sampling periods from x0, recording every sample.

    Internally takes ``spec.oversample`` RK4 substeps per sampling period, so
    the returned trajectory has ``steps + 1`` samples at times k*dt.  Raises
    NumericOverflowError (with the sampling step index) if the state leaves
    the overflow guard.
    """
    times, states, outputs = simulate_batch(spec, np.asarray(x0, dtype=np.float64)[None, :], steps)
    return Trajectory(
        x0=np.asarray(x0, dtype=np.float64),
        times=times,
        states=states[0],
        outputs=outputs[0],
    )


def simulate_batch(spec: SystemSpec, x0s, steps: int):
    """Vectorised ``simulate`` over a batch of initial conditions (B, n).

    Returns (times (steps+1,), states (B, steps+1, n), outputs (B, steps+1)).
    Bit-identical to per-trajectory simulation: the integrator arithmetic is
    elementwise across the batch.
    """
    field, n, _, _ = _SYSTEMS[spec.name]
    x = np.asarray(x0s, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != n:
        raise InvalidArgumentError(f"expected initial conditions of shape (B, {n})")
    h = spec.dt / spec.oversample
    states = np.empty((x.shape[0], steps + 1, n))
    states[:, 0] = x
    for k in range(steps):
        try:
            x = _integrate_window(field, x, h, spec.oversample)
        except NumericOverflowError as exc:
            raise NumericOverflowError(
                f"integration of '{spec.name}' blew up at sampling step {k + 1}",
                step_index=k + 1,
            ) from exc
        if np.any(np.abs(x) > OVERFLOW_LIMIT):
            raise NumericOverflowError(
                f"state magnitude exceeded {OVERFLOW_LIMIT:g} at sampling step {k + 1}",
                step_index=k + 1,
            )
        states[:, k + 1] = x
    times = np.arange(steps + 1, dtype=np.float64) * spec.dt
    return times, states, states[:, :, 0].copy()


def sample_initial(spec: SystemSpec, rng) -> np.ndarray:
    """Draw one initial condition uniformly from the spec's domain.

    ``rng`` is either an integer seed or a numpy Generator.  Boxes draw one
    uniform per axis in order; the polar domain draws r in [0, r_max] then
    theta in [0, 2*pi) and sets x3 = x1^2 + x2^2.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(int(rng)))
    kind = spec.init_domain[0]
    if kind == "box":
        bounds = spec.init_domain[1]
        return np.array([rng.uniform(lo, hi) for lo, hi in bounds])
    if kind == "polar":
        r_max = spec.init_domain[1]
        r = rng.uniform(0.0, r_max)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        x1 = r * np.cos(theta)
        x2 = r * np.sin(theta)
        return np.array([x1, x2, x1 * x1 + x2 * x2])
    raise InvalidArgumentError(f"unknown init domain kind '{kind}'")


def training_box(spec: SystemSpec):
    """Axis-aligned initial-condition box for 2-D box-domain systems."""
    if spec.init_domain[0] != "box" or spec.n != 2:
        raise InvalidArgumentError(
            f"system '{spec.name}' has no 2-D box initial-condition domain"
        )
    return spec.init_domain[1]

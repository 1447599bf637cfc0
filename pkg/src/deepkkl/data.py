"""Trajectory dataset generation, scaling, noise injection, and persistence.

Datasets hold raw-unit trajectories plus an affine output scaler fit on the
training split only.  The scaler maps [y_min, y_max] onto [-1, 1]; training
code works in scaled units and inverts for reporting.  Noise is injected in
scaled units (training split only), so a noise standard deviation is directly
comparable to the [-1, 1] measurement range.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import seeding
from .dynsys import SystemSpec, Trajectory, make_system, sample_initial, simulate_batch
from .errors import DegenerateScaleError, FileFormatError, InvalidArgumentError, SchemaMismatchError

SPLITS = ("train", "val", "test")


@dataclasses.dataclass(frozen=True)
class Scaler:
    """Affine map sending [y_min, y_max] -> [-1, 1]."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise DegenerateScaleError(
                f"cannot scale outputs with y_min={self.y_min!r}, y_max={self.y_max!r}"
            )


def fit_scaler(ys) -> Scaler:
    """Fit the output scaler on raw training outputs."""
    ys = np.asarray(ys, dtype=np.float64)
    return Scaler(y_min=float(ys.min()), y_max=float(ys.max()))


def apply_scaler(scaler: Scaler, y):
    """Scale raw outputs; endpoints map to exactly -1 and +1."""
    return ((np.asarray(y, dtype=np.float64) - scaler.y_min) / (scaler.y_max - scaler.y_min)) * 2.0 - 1.0


def invert_scaler(scaler: Scaler, y):
    """Inverse of ``apply_scaler``."""
    return (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * (scaler.y_max - scaler.y_min) + scaler.y_min


@dataclasses.dataclass
class Dataset:
    """Train/val/test trajectory splits with scaler and noise metadata.

    Immutable by convention after construction; operations return new values.
    """

    system: SystemSpec
    splits: dict
    scaler: Scaler
    noise_sigma: float = 0.0
    seed: int = 0

    def outputs(self, split) -> np.ndarray:
        """Stacked raw outputs of one split, shape (B, length)."""
        return np.stack([traj.outputs for traj in self.splits[split]])

    def scaled_outputs(self, split) -> np.ndarray:
        return apply_scaler(self.scaler, self.outputs(split))


def generate(spec: SystemSpec, counts=(1000, 200, 200), length=100, seed=0) -> Dataset:
    """Simulate a dataset of independent trajectories.

    ``counts`` gives (train, val, test) trajectory counts; each trajectory has
    ``length`` samples.  Initial conditions for the three splits come from
    disjoint RNG streams derived from ``seed``.  The scaler is fit on the
    training outputs only.
    """
    if any(c <= 0 for c in counts) or length < 2:
        raise InvalidArgumentError("counts must be positive and length >= 2")
    splits = {}
    for split, count in zip(SPLITS, counts):
        rng = seeding.generator(seed, f"data_{split}")
        x0s = np.stack([sample_initial(spec, rng) for _ in range(count)])
        times, states, outputs = simulate_batch(spec, x0s, length - 1)
        splits[split] = [
            Trajectory(x0=x0s[i].copy(), times=times, states=states[i], outputs=outputs[i])
            for i in range(count)
        ]
    train_outputs = np.stack([t.outputs for t in splits["train"]])
    scaler = fit_scaler(train_outputs)
    return Dataset(system=spec, splits=splits, scaler=scaler, noise_sigma=0.0, seed=int(seed))


def add_noise(dataset: Dataset, sigma, seed) -> Dataset:
    """Add zero-mean Gaussian measurement noise to the training outputs.

    ``sigma`` is the standard deviation in scaled units; val/test splits and
    all states stay untouched.  Returns a new dataset.
    """
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return dataclasses.replace(dataset, noise_sigma=0.0)
    # scaled-unit noise converted to raw units by the scaler's half-range
    half_range = 0.5 * (dataset.scaler.y_max - dataset.scaler.y_min)
    rng = seeding.generator(seed, "noise")
    noisy_train = []
    for traj in dataset.splits["train"]:
        eps = rng.standard_normal(traj.outputs.shape) * sigma * half_range
        noisy_train.append(
            Trajectory(x0=traj.x0, times=traj.times, states=traj.states, outputs=traj.outputs + eps)
        )
    splits = dict(dataset.splits)
    splits["train"] = noisy_train
    return dataclasses.replace(dataset, splits=splits, noise_sigma=float(sigma))


def _fmt(x):
    return repr(float(x))


def write_dataset(dataset: Dataset, path, include_states=True):
    """Write the dataset as CSV plus a ``.meta`` sidecar of key = value lines."""
    spec = dataset.system
    state_cols = [f"x{i + 1}" for i in range(spec.n)]
    header = "split,traj_id,step,t,y" + ("," + ",".join(state_cols) if include_states else "")
    lines = [header]
    for split in SPLITS:
        for traj_id, traj in enumerate(dataset.splits[split]):
            for k in range(len(traj.times)):
                row = [split, str(traj_id), str(k), _fmt(traj.times[k]), _fmt(traj.outputs[k])]
                if include_states:
                    row.extend(_fmt(v) for v in traj.states[k])
                lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    meta = {
        "system": spec.name,
        "n": spec.n,
        "dt": _fmt(spec.dt),
        "oversample": spec.oversample,
        "train": len(dataset.splits["train"]),
        "val": len(dataset.splits["val"]),
        "test": len(dataset.splits["test"]),
        "length": len(dataset.splits["train"][0].times),
        "seed": dataset.seed,
        "y_min": _fmt(dataset.scaler.y_min),
        "y_max": _fmt(dataset.scaler.y_max),
        "noise_sigma": _fmt(dataset.noise_sigma),
        "states_included": int(include_states),
    }
    with open(_meta_path(path), "w") as fh:
        for key, value in meta.items():
            fh.write(f"{key} = {value}\n")


def _meta_path(path):
    return str(path) + ".meta"


def read_meta(path):
    """Parse a ``key = value`` sidecar; errors carry line numbers."""
    meta = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FileFormatError(f"expected 'key = value', got {line!r}", line=lineno)
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def read_dataset(path) -> Dataset:
    """Read a dataset written by ``write_dataset``."""
    meta = read_meta(_meta_path(path))
    required = ("system", "dt", "oversample", "train", "val", "test", "length",
                "seed", "y_min", "y_max", "noise_sigma", "states_included")
    for key in required:
        if key not in meta:
            raise SchemaMismatchError(f"metadata is missing key '{key}'")
    spec = make_system(meta["system"], dt=float(meta["dt"]), oversample=int(meta["oversample"]))
    counts = {s: int(meta[s]) for s in SPLITS}
    length = int(meta["length"])
    with_states = bool(int(meta["states_included"]))

    state_cols = [f"x{i + 1}" for i in range(spec.n)]
    expected_header = "split,traj_id,step,t,y" + ("," + ",".join(state_cols) if with_states else "")
    columns = expected_header.split(",")
    rows = {split: {} for split in SPLITS}
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != expected_header:
            raise SchemaMismatchError(
                f"expected header {expected_header!r}, got {header!r}", line=1
            )
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(columns):
                missing = columns[len(parts)] if len(parts) < len(columns) else None
                what = f"missing column '{missing}'" if missing else "extra columns"
                raise FileFormatError(f"{what} in row with {len(parts)} fields", line=lineno)
            split = parts[0]
            if split not in SPLITS:
                raise FileFormatError(f"unknown split {split!r}", line=lineno)
            try:
                traj_id, step = int(parts[1]), int(parts[2])
                values = [float(v) for v in parts[3:]]
            except ValueError as exc:
                raise FileFormatError(f"bad numeric field: {exc}", line=lineno) from None
            rows[split].setdefault(traj_id, {})[step] = values

    splits = {}
    for split in SPLITS:
        trajs = []
        for traj_id in range(counts[split]):
            if traj_id not in rows[split] or len(rows[split][traj_id]) != length:
                raise FileFormatError(
                    f"split '{split}' trajectory {traj_id} is truncated "
                    f"({len(rows[split].get(traj_id, {}))} of {length} rows)"
                )
            recs = [rows[split][traj_id][k] for k in range(length)]
            times = np.array([r[0] for r in recs])
            outputs = np.array([r[1] for r in recs])
            if with_states:
                states = np.array([r[2:] for r in recs])
            else:
                states = np.full((length, spec.n), np.nan)
            trajs.append(Trajectory(x0=states[0].copy(), times=times, states=states, outputs=outputs))
        splits[split] = trajs
    scaler = Scaler(y_min=float(meta["y_min"]), y_max=float(meta["y_max"]))
    return Dataset(
        system=spec,
        splits=splits,
        scaler=scaler,
        noise_sigma=float(meta["noise_sigma"]),
        seed=int(meta["seed"]),
    )

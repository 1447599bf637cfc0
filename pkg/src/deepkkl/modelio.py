"""Model and checkpoint files: a line-oriented text format with named arrays.

Layout: `key = value` metadata lines followed by array sections.  An array
section starts with `array <name> <dim0> [<dim1>]`; a vector occupies one line
of values, a matrix one line per row (row-major).  Values use Python float
repr, which round-trips doubles exactly.  Checkpoints append optimizer moment
arrays and the step counter to the model schema.
"""

from __future__ import annotations

import numpy as np

from .data import Scaler
from .errors import FileFormatError, SchemaMismatchError
from .kkl import KklModel
from .nets import AdamState, GruParams, MlpParams, RnnParams
from .train import BaselineModel, param_arrays

FORMAT_VERSION = 1


def _fmt(x):
    return repr(float(x))


def _write_array(lines, name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        lines.append(f"array {name} {arr.shape[0]}")
        lines.append(" ".join(_fmt(v) for v in arr))
    elif arr.ndim == 2:
        lines.append(f"array {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(_fmt(v) for v in row))
    else:
        raise FileFormatError(f"array '{name}' has unsupported rank {arr.ndim}")


def _model_lines(model):
    kind = "kkl" if isinstance(model, KklModel) else model.kind
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"kind = {kind}",
        f"m = {model.m}",
        f"dt = {_fmt(model.dt)}",
        f"y_min = {_fmt(model.scaler.y_min)}",
        f"y_max = {_fmt(model.scaler.y_max)}",
        "layers = " + " ".join(
            str(d) for d in [model.head.input_dim] + [W.shape[0] for W, _ in model.head.layers]
        ),
    ]
    names, arrays = param_arrays(model)
    for name, arr in zip(names, arrays):
        _write_array(lines, name, arr)
    return lines


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write("\n".join(_model_lines(model)) + "\n")


def save_checkpoint(model, state: AdamState, path):
    """Model schema plus optimizer moments and step counter."""
    lines = _model_lines(model)
    lines.append(f"adam_step_count = {state.step}")
    lines.append(f"adam_lr = {_fmt(state.lr)}")
    names, _ = param_arrays(model)
    for name, arr in zip(names, state.m):
        _write_array(lines, f"adam.m.{name}", arr)
    for name, arr in zip(names, state.v):
        _write_array(lines, f"adam.v.{name}", arr)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, path):
        with open(path) as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    @property
    def lineno(self):
        return self.pos  # 1-based number of the last consumed line

    def next(self):
        if self.pos >= len(self.lines):
            raise FileFormatError("unexpected end of file", line=len(self.lines))
        self.pos += 1
        return self.lines[self.pos - 1]

    def peek(self):
        return None if self.pos >= len(self.lines) else self.lines[self.pos]

    def done(self):
        return self.pos >= len(self.lines)


def _parse_kv(reader, expect=None):
    line = reader.next()
    if "=" not in line:
        raise FileFormatError(f"expected 'key = value', got {line!r}", line=reader.lineno)
    key, _, value = line.partition("=")
    key, value = key.strip(), value.strip()
    if expect is not None and key != expect:
        raise SchemaMismatchError(f"expected key '{expect}', got '{key}'", line=reader.lineno)
    return key, value


def _parse_values(reader, count):
    line = reader.next()
    parts = line.split()
    if len(parts) != count:
        raise FileFormatError(
            f"expected {count} values, got {len(parts)}", line=reader.lineno
        )
    try:
        return np.array(parts, dtype=np.float64)
    except ValueError as exc:
        raise FileFormatError(f"bad numeric value: {exc}", line=reader.lineno) from None


def _parse_arrays(reader):
    arrays = {}
    order = []
    while not reader.done():
        line = reader.peek()
        if not line.startswith("array "):
            break
        reader.next()
        parts = line.split()
        if len(parts) not in (3, 4):
            raise FileFormatError(f"bad array header {line!r}", line=reader.lineno)
        name = parts[1]
        try:
            dims = [int(v) for v in parts[2:]]
        except ValueError:
            raise FileFormatError(f"bad array dimensions in {line!r}", line=reader.lineno) from None
        if len(dims) == 1:
            arrays[name] = _parse_values(reader, dims[0])
        else:
            rows = [_parse_values(reader, dims[1]) for _ in range(dims[0])]
            arrays[name] = np.stack(rows)
        order.append(name)
    return arrays, order


def _load(path):
    reader = _Reader(path)
    _, version = _parse_kv(reader, expect="format_version")
    if int(version) != FORMAT_VERSION:
        raise SchemaMismatchError(f"unsupported format version {version}", line=reader.lineno)
    _, kind = _parse_kv(reader, expect="kind")
    _, m = _parse_kv(reader, expect="m")
    _, dt = _parse_kv(reader, expect="dt")
    _, y_min = _parse_kv(reader, expect="y_min")
    _, y_max = _parse_kv(reader, expect="y_max")
    _, layers = _parse_kv(reader, expect="layers")
    meta = {
        "kind": kind,
        "m": int(m),
        "dt": float(dt),
        "scaler": Scaler(float(y_min), float(y_max)),
        "layers": [int(v) for v in layers.split()],
    }
    arrays, order = _parse_arrays(reader)
    extras = {}
    while not reader.done() and reader.peek().strip():
        key, value = _parse_kv(reader)
        extras[key] = value
        more, _ = _parse_arrays(reader)
        arrays.update(more)
    return meta, arrays, order, extras, reader


def _mlp_from_arrays(arrays, layer_dims, prefix=""):
    layers = []
    for i in range(len(layer_dims) - 1):
        w_name, b_name = f"{prefix}h{i}.W", f"{prefix}h{i}.b"
        if w_name not in arrays or b_name not in arrays:
            raise SchemaMismatchError(f"model file is missing array '{w_name}'")
        W, b = arrays[w_name], arrays[b_name]
        if W.shape != (layer_dims[i + 1], layer_dims[i]):
            raise SchemaMismatchError(
                f"array '{w_name}' has shape {W.shape}, expected "
                f"({layer_dims[i + 1]}, {layer_dims[i]})"
            )
        layers.append((W, b.reshape(-1)))
    return MlpParams(layers=layers)


def load_model(path):
    """Load a model file; returns a KklModel or BaselineModel."""
    meta, arrays, _, _, _ = _load(path)
    kind, m = meta["kind"], meta["m"]
    if meta["layers"][0] != m:
        raise SchemaMismatchError(
            f"model latent dimension {m} does not match output-map input {meta['layers'][0]}"
        )
    head = _mlp_from_arrays(arrays, meta["layers"])
    if kind == "kkl":
        if "p" not in arrays or "omega" not in arrays:
            raise SchemaMismatchError("kkl model file is missing block parameter arrays")
        return KklModel(p=arrays["p"], omega=arrays["omega"], head=head,
                        scaler=meta["scaler"], dt=meta["dt"])
    if kind == "rnn":
        cell = RnnParams(w1=arrays["w1"], w2=arrays["w2"], b=arrays["b"])
    elif kind == "gru":
        cell = GruParams(**{n: arrays[n] for n in
                            ("wr1", "wr2", "br", "wx1", "wx2", "bx", "wn1", "wn2", "bn1", "bn2")})
    else:
        raise SchemaMismatchError(f"unknown model kind '{kind}'")
    return BaselineModel(kind=kind, cell=cell, head=head, scaler=meta["scaler"], dt=meta["dt"])


def load_checkpoint(path):
    """Load a checkpoint; returns (model, AdamState)."""
    meta, arrays, _, extras, _ = _load(path)
    model = load_model(path)
    if "adam_step_count" not in extras:
        raise SchemaMismatchError("checkpoint file has no optimizer state")
    names, params = param_arrays(model)
    try:
        m = [arrays[f"adam.m.{n}"].reshape(p.shape) for n, p in zip(names, params)]
        v = [arrays[f"adam.v.{n}"].reshape(p.shape) for n, p in zip(names, params)]
    except KeyError as exc:
        raise SchemaMismatchError(f"checkpoint is missing optimizer array {exc}") from None
    state = AdamState(m=m, v=v, step=int(extras["adam_step_count"]),
                      lr=float(extras.get("adam_lr", 1e-4)))
    return model, state

"""Command-line interface.

Subcommands: gen-data, train, predict, eval, noise-sweep, heatmap,
bound-report, t-oracle-check.  Every command is deterministic given its flags
and seed.  Exit codes: 0 success, 1 certification/threshold failure, 2 usage
error, 3 numeric failure.

Configuration precedence: built-in defaults < config file (`key = value`
lines, keys matching flag names with dashes as underscores) < command-line
flags.  Unknown config keys are rejected.
"""

from __future__ import annotations

import argparse
import sys

from . import data as datamod
from . import evaluate as evalmod
from . import modelio
from .dynsys import BENCHMARKS, make_system
from .errors import DeepKklError, FileFormatError, InvalidArgumentError, NumericError
from .kkl import KklModel, new_kkl_model, t_map_pde_residual
from .seeding import generator
from .train import TrainConfig, train_baseline, train_kkl

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_config_file(path, known_keys):
    cfg = datamod.read_meta(path)
    for key in cfg:
        if key not in known_keys:
            raise InvalidArgumentError(f"unknown config key '{key}' in {path}")
    return cfg


def _apply_config(parser, subparsers, args_list):
    """Two-pass parse so file values sit between defaults and explicit flags."""
    pre, _ = parser.parse_known_args(args_list)
    if getattr(pre, "config", None):
        sub = subparsers[pre.command]
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
        file_values = _read_config_file(pre.config, {d.replace("_", "-") for d in actions})
        defaults = {}
        for key, raw in file_values.items():
            dest = key.replace("-", "_")
            action = actions[dest]
            if isinstance(action.const, bool) or isinstance(action, argparse._StoreTrueAction):
                defaults[dest] = raw.strip().lower() in ("1", "true", "yes")
            elif action.type is not None:
                defaults[dest] = action.type(raw)
            else:
                defaults[dest] = raw
        sub.set_defaults(**defaults)
    return parser.parse_args(args_list)


def _add_common(sub):
    sub.add_argument("--config", help="key = value config file; flags override it")
    sub.add_argument("--seed", type=int, default=1, help="root seed for all randomness")
    sub.add_argument("--threads", type=int, default=1,
                     help="cap on internal parallelism; 1 is the reproducibility reference mode")


def _check_threads(args):
    if args.threads < 1:
        raise InvalidArgumentError("--threads must be >= 1")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    spec = make_system(args.system, oversample=args.oversample)
    dataset = datamod.generate(
        spec, counts=(args.train, args.val, args.test), length=args.length, seed=args.seed
    )
    if args.noise_sigma > 0:
        dataset = datamod.add_noise(dataset, args.noise_sigma, seed=args.seed)
    datamod.write_dataset(dataset, args.out, include_states=not args.no_states)
    print(f"wrote {sum(len(v) for v in dataset.splits.values())} trajectories to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = datamod.read_dataset(args.data)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        t_train=args.t_train, p_train=args.p_train, seed=args.seed, kind=args.model,
        loss_window=args.loss_window, latent_dim=args.latent_dim,
        out_scale=args.out_scale, decay_rate=args.decay_rate,
    )
    if args.model == "kkl":
        model, history = train_kkl(dataset, config)
    else:
        model, history = train_baseline(args.model, dataset, config)
    modelio.save_model(model, args.out)
    if args.log:
        # wall time is not a function of the manifest, so the reference mode
        # (--threads 1) writes zeros to keep reruns byte-identical
        rows = [
            (e, _fmt(tl), _fmt(vm), _fmt(0.0 if args.threads == 1 else sec))
            for e, (tl, vm, sec) in enumerate(
                zip(history.train_loss, history.val_mse, history.seconds)
            )
        ]
        _write_csv(args.log, ["epoch", "train_loss", "val_mse", "seconds"], rows)
    best = history.val_mse[history.best_epoch] if history.val_mse else float("nan")
    print(f"trained {args.model} for {len(history.train_loss)} epochs; "
          f"best val MSE {best:.6g} at epoch {history.best_epoch}; saved {args.out}")
    return EXIT_OK


def _load_model_for_data(path, dataset):
    model = modelio.load_model(path)
    if abs(model.dt - dataset.system.dt) > 1e-12:
        raise InvalidArgumentError(
            f"model sampling period {model.dt} does not match dataset dt {dataset.system.dt}"
        )
    return model


def cmd_predict(args) -> int:
    dataset = datamod.read_dataset(args.data)
    model = _load_model_for_data(args.model, dataset)
    trajs = dataset.splits[args.split]
    if not 0 <= args.traj_id < len(trajs):
        raise InvalidArgumentError(
            f"trajectory id {args.traj_id} out of range for split '{args.split}' "
            f"({len(trajs)} trajectories)"
        )
    traj = trajs[args.traj_id]
    if args.t < 1 or args.t + args.p > len(traj.outputs):
        raise InvalidArgumentError(
            f"need 1 <= t and t + p <= {len(traj.outputs)}, got t={args.t} p={args.p}"
        )
    from .train import predict_any

    preds = predict_any(model, traj.outputs[None, : args.t], args.p)[0]
    rows = [
        (args.t + s, _fmt(traj.times[args.t + s]), _fmt(preds[s]), _fmt(traj.outputs[args.t + s]))
        for s in range(args.p)
    ]
    _write_csv(args.out, ["step", "t", "y_pred", "y_true"], rows)
    print(f"wrote {args.p}-step forecast to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = datamod.read_dataset(args.data)
    models = {}
    for path in args.models:
        model = _load_model_for_data(path, dataset)
        name = "kkl" if isinstance(model, KklModel) else model.kind
        models[f"{name}:{path}"] = model
    rows = evalmod.evaluate_table(models, dataset, t=args.t, p=args.p)
    _write_csv(args.out, ["model", "system", "mse"],
               [(r["model"], r["system"], _fmt(r["mse"])) for r in rows])
    for r in rows:
        print(f"{r['model']}\t{r['system']}\t{r['mse']:.6g}")
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    spec = make_system(args.system)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         t_train=args.t_train, p_train=args.p_train)
    rows = evalmod.noise_sweep(
        spec, sigmas, range(args.seeds), config,
        counts=(args.train, args.val, args.test), length=args.length, t=args.t, p=args.p,
    )
    _write_csv(args.out, ["sigma", "seed", "mse"],
               [(_fmt(r["sigma"]), r["seed"], _fmt(r["mse"])) for r in rows])
    for sigma, (q1, med, q3) in evalmod.sweep_quartiles(rows).items():
        print(f"sigma={sigma:g}: median {med:.6g} (q1 {q1:.6g}, q3 {q3:.6g})")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    dataset = datamod.read_dataset(args.data)
    model = _load_model_for_data(args.model, dataset)
    from .dynsys import training_box

    points, _ = evalmod.make_heatmap_grid(
        training_box(dataset.system), cells=args.cells, enlarge=args.enlarge
    )
    rows = evalmod.generalization_heatmap(model, dataset.system, points, t=args.t, p=args.p)
    _write_csv(args.out, ["x1", "x2", "log_mse", "in_domain"],
               [(_fmt(r["x1"]), _fmt(r["x2"]), _fmt(r["log_mse"]), int(r["in_domain"]))
                for r in rows])
    med_in, med_out = evalmod.heatmap_medians(rows)
    print(f"median log-MSE inside training box {med_in:.4g}, outside {med_out:.4g}")
    return EXIT_OK


def cmd_bound_report(args) -> int:
    if args.lti:
        case = evalmod.make_lti_case(sigma=args.sigma, gain=args.gain, dt=args.dt, x0=args.x0)
        report = evalmod.bound_certification(case, n_t=args.grid, n_p=args.grid)
    else:
        if not (args.model and args.data):
            raise InvalidArgumentError("bound-report needs either --lti or --model and --data")
        dataset = datamod.read_dataset(args.data)
        model = _load_model_for_data(args.model, dataset)
        if not isinstance(model, KklModel):
            raise InvalidArgumentError("bound reports are defined for kkl models only")
        report = evalmod.bound_report_for_model(model, dataset, t=args.t, p=args.p)
    rows = [
        (int(t), int(p), _fmt(bi), _fmt(bt), _fmt(emp))
        for t, p, bi, bt, emp in zip(report.t_steps, report.p_steps,
                                     report.bound_init, report.bound_total, report.empirical)
    ]
    _write_csv(args.out, ["t", "p", "bound_init", "bound_total", "empirical"], rows)
    print(f"constants: k={report.k:g} lambda={report.lam:g} L1={report.l1:g} "
          f"L2={report.l2:g} L3={report.l3:g} |z0|={report.z0_norm:g} delta={report.delta:g}")
    if args.lti:
        if report.certified:
            print(f"certified: empirical error within the bound on all {len(rows)} cells")
            return EXIT_OK
        for t, p, emp, bound in report.violations:
            print(f"VIOLATION at (t={t}, p={p}): empirical {emp:g} > bound {bound:g}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_t_oracle_check(args) -> int:
    spec = make_system(args.system)
    if args.model:
        model = modelio.load_model(args.model)
        if not isinstance(model, KklModel):
            raise InvalidArgumentError("t-oracle-check needs a kkl model")
    else:
        rng = generator(args.seed, "model_init")
        model = new_kkl_model(spec.n, spec.dt, datamod.Scaler(-1.0, 1.0), rng,
                              latent_dim=args.latent_dim)
    rng = generator(args.seed, "probe")
    rows = []
    worst = 0.0
    for i in range(args.samples):
        x = rng.uniform(-args.box, args.box, size=spec.n)
        resid = t_map_pde_residual(spec, model, x, fd_step=args.fd_step,
                                   quad_step=args.quad_step)
        worst = max(worst, resid)
        rows.append((i, *(_fmt(v) for v in x), _fmt(resid)))
    header = ["sample"] + [f"x{i + 1}" for i in range(spec.n)] + ["residual"]
    _write_csv(args.out, header, rows)
    print(f"worst embedding-equation residual over {args.samples} samples: {worst:.3e} "
          f"(threshold {args.threshold:g})")
    return EXIT_OK if worst < args.threshold else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# Parser


class _Subcommands:
    """Wraps add_subparsers so subparser objects stay addressable by name."""

    def __init__(self, parser):
        self._subs = parser.add_subparsers(dest="command", required=True)
        self.registry = {}

    def add_parser(self, name, **kwargs):
        sub = self._subs.add_parser(name, **kwargs)
        self.registry[name] = sub
        return sub


def build_parser():
    parser = argparse.ArgumentParser(
        prog="deepkkl",
        description="KKL-observer output predictors: data, training, forecasting, diagnostics",
    )
    subs = _Subcommands(parser)

    p = subs.add_parser("gen-data", help="simulate a trajectory dataset")
    _add_common(p)
    p.add_argument("--system", required=True, choices=BENCHMARKS)
    p.add_argument("--train", type=int, default=1000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--oversample", type=int, default=10)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--no-states", action="store_true", help="omit state columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train", help="train a predictor on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="kkl", choices=("kkl", "rnn", "gru"))
    p.add_argument("--epochs", type=int, default=800)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--t-train", type=int, default=25)
    p.add_argument("--p-train", type=int, default=25)
    p.add_argument("--latent-dim", type=int, default=None, help="default 2n + 2")
    p.add_argument("--loss-window", default="full", choices=("full", "open_only"))
    p.add_argument("--out-scale", type=float, default=0.1,
                   help="output-layer init scale")
    p.add_argument("--decay-rate", type=float, default=2.0,
                   help="initial block decay rate (sigma = -decay-rate)")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("predict", help="forecast one trajectory")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--traj-id", type=int, default=0)
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--p", type=int, default=95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("eval", help="test-set MSE table for one or more models")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, nargs="+")
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--p", type=int, default=95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("noise-sweep", help="train across noise levels, score clean test MSE")
    _add_common(p)
    p.add_argument("--system", required=True, choices=BENCHMARKS)
    p.add_argument("--sigmas", default="0,0.001,0.005,0.01,0.05,0.1")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per sigma")
    p.add_argument("--train", type=int, default=1000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--epochs", type=int, default=800)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--t-train", type=int, default=25)
    p.add_argument("--p-train", type=int, default=25)
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--p", type=int, default=95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_sweep)

    p = subs.add_parser("heatmap", help="forecast log-MSE over a grid of initial conditions")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--cells", type=int, default=40)
    p.add_argument("--enlarge", type=float, default=2.0)
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--p", type=int, default=95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = subs.add_parser("bound-report", help="prediction error bounds vs empirical error")
    _add_common(p)
    p.add_argument("--lti", action="store_true",
                   help="certify on the exact LTI construction (exit 1 on violation)")
    p.add_argument("--sigma", type=float, default=-2.0)
    p.add_argument("--gain", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=0.25)
    p.add_argument("--x0", type=float, default=0.8)
    p.add_argument("--grid", type=int, default=10)
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--p", type=int, default=95)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bound_report)

    p = subs.add_parser("t-oracle-check", help="embedding-equation residuals at sampled states")
    _add_common(p)
    p.add_argument("--system", required=True,
                   choices=BENCHMARKS + ("scalar_decay", "scalar_growth"))
    p.add_argument("--model", help="kkl model file; default: fresh seeded model")
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--box", type=float, default=0.5,
                   help="sample states uniformly from [-box, box]^n")
    p.add_argument("--fd-step", type=float, default=1e-3)
    p.add_argument("--quad-step", type=float, default=None)
    p.add_argument("--threshold", type=float, default=1e-2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_t_oracle_check)

    return parser, subs.registry


def main(argv=None) -> int:
    parser, registry = build_parser()
    try:
        try:
            args = _apply_config(parser, registry, list(sys.argv[1:] if argv is None else argv))
        except SystemExit as exc:
            return int(exc.code or 0)
        _check_threads(args)
        return args.func(args)
    except (InvalidArgumentError, FileFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DeepKklError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

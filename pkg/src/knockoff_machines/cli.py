"""Command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numerical failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .datagen import load_csv, write_csv
from .diagnostics import run_diagnostics, write_reports
from .errors import (
    BadParam,
    ConfigInvalid,
    CorruptFile,
    DataError,
    FormatVersionMismatch,
    KnockoffError,
    NonFinite,
    NonFiniteLoss,
    NotPositiveDefinite,
    ShapeMismatch,
)
from .experiment import ReplicateRow, SummaryRow, build_samplers, run_experiment, summarize, write_rows
from .machine import load_checkpoint, train
from .numerics import make_rng, substreams
from .samplers import build_sampler
from .selection import select

log = logging.getLogger("knockoff_machines")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _out_dir(args, cfg):
    out = Path(args.out or cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg):
    return cfg.seed if args.seed is None else args.seed


def _read_matrix(path):
    if not Path(path).is_file():
        raise CliError(f"data file not found: {path}", EXIT_DATA)
    return load_csv(path, has_header="auto")


def _training_data(args, cfg, seed):
    if args.data:
        return _read_matrix(args.data)[0]
    dist = cfg.distribution()
    return dist.sample(cfg.int("data", "n_train"), substreams(seed, 2)[0])


def _load_machine(path):
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}", EXIT_DATA)
    return load_checkpoint(path)


def cmd_train(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    X = _training_data(args, cfg, seed)
    tcfg = cfg.train_config(seed)
    machine = train(X, tcfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "machine.dkm"
    machine.save(ckpt)
    h = machine.history
    comment = f"{cfg.provenance()} train {tcfg.digest()}"
    with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        fh.write("iteration,train_loss,mmd,second_order,decorrelation,grad_sq_norm\n")
        for t in range(len(h.train_loss)):
            vals = (h.train_loss[t], h.mmd[t], h.second_order[t], h.decorrelation[t], h.grad_sq_norm[t])
            fh.write(f"{t + 1}," + ",".join(repr(float(v)) for v in vals) + "\n")
    with open(out / "holdout_history.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        fh.write("iteration,holdout_loss\n")
        for it, loss in zip(h.holdout_iter, h.holdout_loss):
            fh.write(f"{int(it)},{float(loss)!r}\n")
    print(f"checkpoint written to {ckpt}")


def cmd_sample(args, cfg):
    if not args.checkpoint or not args.data:
        raise CliError("sample needs --checkpoint and --data", EXIT_CONFIG)
    machine = _load_machine(args.checkpoint)
    X, names = _read_matrix(args.data)
    if X.shape[1] != machine.p:
        raise CliError(f"data has {X.shape[1]} columns but the machine expects {machine.p}", EXIT_CONFIG)
    Xk = machine.generate(X, make_rng(_seed(args, cfg)))
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    dest = Path(args.out) if args.out else Path(args.data).with_suffix(".knockoffs.csv")
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_csv(dest, Xk, [f"{n}_knockoff" for n in names], f"{cfg.provenance()} seed {_seed(args, cfg)}")
    print(f"knockoffs written to {dest}")


def _diagnostic_sampler(name, args, cfg, dist, X_train, seed):
    if name == "machine":
        if args.checkpoint:
            return _load_machine(args.checkpoint)
        return train(X_train, cfg.train_config(seed))
    return build_sampler(name, dist, X_train, None, cfg.float("experiment", "misspecified_rho"))


def cmd_diagnose(args, cfg):
    seed = _seed(args, cfg)
    out = _out_dir(args, cfg)
    dist = cfg.distribution()
    X_train = _training_data(args, cfg, seed)
    n = cfg.int("diagnostics", "n")
    reps = cfg.int("diagnostics", "replicates")
    names = [s.strip() for s in cfg.get("diagnostics", "samplers").split(",") if s.strip()]
    if args.data:
        X_all = X_train
        test = lambda rng: X_all[rng.choice(X_all.shape[0], size=min(2 * n, X_all.shape[0]), replace=False)]
    else:
        test = lambda rng: dist.sample(2 * n, rng)
    dest = out / "diagnostics.csv"
    streams = substreams(seed, len(names) + 2)[2:]
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        for i, name in enumerate(names):
            sampler = _diagnostic_sampler(name, args, cfg, dist, X_train, seed)
            reports = run_diagnostics(sampler, test, None, reps, streams[i], seed)
            write_reports(fh, reports, cfg.provenance() if i == 0 else None, {"sampler": name}, header=i == 0)
    print(f"diagnostics written to {dest}")


def cmd_select(args, cfg):
    if not args.data or not args.response:
        raise CliError("select needs --data and --response", EXIT_CONFIG)
    X, _ = _read_matrix(args.data)
    y, _ = _read_matrix(args.response)
    if y.shape[1] != 1 or y.shape[0] != X.shape[0]:
        raise CliError("response must be a single column with one row per observation", EXIT_DATA)
    seed = _seed(args, cfg)
    if args.knockoffs:
        Xk, _ = _read_matrix(args.knockoffs)
    elif args.checkpoint:
        Xk = _load_machine(args.checkpoint).generate(X, make_rng(seed))
    else:
        raise CliError("select needs --knockoffs or --checkpoint", EXIT_CONFIG)
    if Xk.shape != X.shape:
        raise CliError(f"knockoffs {Xk.shape} and features {X.shape} differ in shape", EXIT_CONFIG)
    res = select(
        X, Xk, y[:, 0], cfg.float("selection", "alpha"), cfg.float("selection", "q"),
        cfg.int("selection", "folds"), seed,
    )
    out = _out_dir(args, cfg)
    (out / "selection.json").write_text(res.to_json() + "\n", encoding="utf-8")
    (out / "selection.csv").write_text(f"# {cfg.provenance()}\n" + res.to_csv(), encoding="utf-8")
    print(json.dumps({"selected": res.to_dict()["selected"], "threshold": res.to_dict()["threshold"]}))


def cmd_experiment(args, cfg):
    seed = _seed(args, cfg)
    ecfg = cfg.experiment_config(seed)
    prebuilt = {"machine": _load_machine(args.checkpoint)} if args.checkpoint else None
    samplers = build_samplers(ecfg, prebuilt)
    rows = run_experiment(ecfg, samplers, args.threads or cfg.int("run", "threads"))
    out = _out_dir(args, cfg)
    comment = f"{cfg.provenance()} seed {seed}"
    write_rows(out / "replicates.csv", rows, ReplicateRow.FIELDS, comment)
    write_rows(out / "summary.csv", summarize(rows), SummaryRow.FIELDS, comment)
    print(f"results written to {out}")


def cmd_generate_data(args, cfg):
    seed = _seed(args, cfg)
    n = args.n or cfg.int("data", "n_train")
    X = cfg.distribution().sample(n, make_rng(seed))
    dest = Path(args.out) if args.out else Path(cfg.get("run", "out")) / "data.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_csv(dest, X, comment=f"{cfg.provenance()} seed {seed}")
    print(f"{n} rows written to {dest}")


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "diagnose": cmd_diagnose,
    "select": cmd_select,
    "experiment": cmd_experiment,
    "generate-data": cmd_generate_data,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="knockoff-machines", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train a machine and write a checkpoint plus loss curves",
        "sample": "generate knockoffs for a CSV of features",
        "diagnose": "goodness-of-fit diagnostics for one or more samplers",
        "select": "knockoff filter selection for features, knockoffs and a response",
        "experiment": "FDR and power over amplitudes and samplers",
        "generate-data": "draw a synthetic feature matrix",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--out", help="output directory (or file for sample/generate-data)")
        p.add_argument("--threads", type=int, help="worker threads for replicates")
        p.add_argument("--checkpoint", help="machine checkpoint path")
        p.add_argument("--data", help="feature matrix CSV")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "select":
            p.add_argument("--response", help="single-column response CSV")
            p.add_argument("--knockoffs", help="knockoff matrix CSV")
        if name == "generate-data":
            p.add_argument("-n", type=int, help="row count (default [data] n_train)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigInvalid, BadParam, ShapeMismatch) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CorruptFile, FormatVersionMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NonFinite, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KnockoffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

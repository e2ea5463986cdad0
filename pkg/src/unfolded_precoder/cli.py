"""Command line interface: ``ufpd gen-data | solve | train | eval | bench | replay``.

Every command writes ``<primary output>.config.json`` next to its main
output; ``ufpd replay`` re-runs a command from such a sidecar.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .bench import benchmark
from .core import SystemConfig, generate_channel
from .dataio import (ChannelDataset, atomic_write_text, read_dataset, read_json, sidecar_path,
                     write_dataset, write_history, write_json, write_trace, rows_to_csv,
                     TRACE_COLUMNS)
from .errors import DataFormatError, PrecoderError
from .oracle import oracle_solve
from .pgd import PgdParams, solve_pgd
from .training import SUPERVISED, UNSUPERVISED, TrainConfig, evaluate, train
from .unfolded import UnfoldedNetwork

log = logging.getLogger("ufpd")

THREADS_ENV = "UFPD_THREADS"
PRIMARY_OUTPUT = {
    "gen-data": ("out",),
    "solve": ("trace_out",),
    "train": ("model_out", "history_out"),
    "eval": ("out",),
    "bench": ("out",),
}
LOSS_NAMES = {"sup": SUPERVISED, "unsup": UNSUPERVISED,
              SUPERVISED: SUPERVISED, UNSUPERVISED: UNSUPERVISED}

class UsageError(PrecoderError):
    exit_code = 1

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")

def _number(text):
    """Float that also accepts fractions such as ``1/15``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc

def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1

def _add_system(p):
    p.add_argument("--sinr-db", type=float, default=10.0, help="per-user SINR target in dB")
    p.add_argument("--sigma", type=_number, default=1.0, help="noise standard deviation")
    p.add_argument("--alpha", type=_number, default=1.0, help="PA constant")

def _system(args, K, M):
    return SystemConfig.from_db(M=M, K=K, sinr_db=args.sinr_db, sigma_nu=args.sigma,
                                alpha=args.alpha)

def build_parser():
    parser = _Parser(prog="ufpd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a Rayleigh channel dataset")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--labels", action="store_true", help="embed oracle precoders")
    p.add_argument("--lambda", dest="lam", type=_number, default=1 / 15)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_system(p)

    p = sub.add_parser("solve", help="run PGD or the oracle on every channel of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--algo", choices=("pgd", "oracle"), default="pgd")
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--lambda", dest="lam", type=_number, default=1 / 15)
    p.add_argument("--eta", default="auto", help="auto (1/L_mp), exact (1/L per channel) or a value")
    p.add_argument("--trace-every", type=int, default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--trace-out", required=True)
    _add_system(p)

    p = sub.add_parser("train", help="train an unfolded network")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--loss", choices=sorted(LOSS_NAMES), default="unsup")
    p.add_argument("--layers", type=int, default=20)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=_number, default=1e-3)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--lambda-cost", type=_number, default=1 / 15)
    p.add_argument("--lambda-init", type=_number, default=1 / 15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--history-out", required=True)
    _add_system(p)

    p = sub.add_parser("eval", help="evaluate a trained network on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--per-layer", action="store_true",
                   help="also write per-layer means to <out>.layers.csv")
    p.add_argument("--lambda", dest="lam", type=_number, default=1 / 15)
    p.add_argument("--out", required=True)
    _add_system(p)

    p = sub.add_parser("bench", help="time unfolded inference against PGD")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pgd-iters", type=int, default=5000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--channels", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_system(p)

    p = sub.add_parser("replay", help="re-run a command from its config sidecar")
    p.add_argument("sidecar")
    p.add_argument("--out-dir", default=None,
                   help="write outputs here (same file names) instead of the recorded paths")
    return parser

def _parse_eta(text):
    if text == "auto":
        return "mp"
    if text == "exact":
        return "exact"
    return _number(text)

def _load(path, K=None, M=None):
    ds = read_dataset(path)
    if K is not None and (ds.K, ds.M) != (K, M):
        raise DataFormatError(f"{path}: dataset has K={ds.K}, M={ds.M}, expected K={K}, M={M}")
    return ds

def cmd_gen_data(args):
    cfg = _system(args, args.k, args.m)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    H = generate_channel(cfg, args.seed, n=args.n)
    labels = None
    if args.labels:
        labels = oracle_solve(H, cfg, args.lam, workers=args.workers or _default_threads())
    write_dataset(args.out, ChannelDataset(H, labels, args.seed))
    log.info("wrote %d channels to %s", args.n, args.out)

def cmd_solve(args):
    ds = _load(args.data)
    cfg = _system(args, ds.K, ds.M)
    run_id = f"{args.algo}-{Path(args.data).stem}"
    if args.algo == "pgd":
        params = PgdParams(lam=args.lam, eta=_parse_eta(args.eta), max_iters=args.iters,
                           trace_every=max(args.trace_every, 1))
        _, trace = solve_pgd(ds.channels, cfg, params)
        rows = trace.mean_rows()
    else:
        from .pgd import SolveTrace
        from .metrics import l21_norm
        from .core import zf_precoder

        W = oracle_solve(ds.channels, cfg, args.lam, workers=args.workers or _default_threads())
        trace = SolveTrace(lam=args.lam)
        trace.record(0, ds.channels, W, cfg, l21_norm(zf_precoder(ds.channels, cfg)))
        rows = trace.mean_rows()
    write_trace(args.trace_out, rows, run_id)

def cmd_train(args):
    tr = _load(args.train)
    va = _load(args.val, tr.K, tr.M)
    cfg = _system(args, tr.K, tr.M)
    tcfg = TrainConfig(loss_kind=LOSS_NAMES[args.loss], lambda_cost=args.lambda_cost,
                       batch_size=args.batch, learning_rate=args.lr, max_epochs=args.epochs,
                       patience=args.patience, seed=args.seed)
    net = UnfoldedNetwork.initial(tr.K, tr.M, args.layers, lam=args.lambda_init)
    best, history = train(net, tr, va, tcfg, cfg)
    best.save(args.model_out, extra={
        "train_config": tcfg.to_dict(),
        "system": cfg.to_dict(),
        "training": {"stopping_epoch": history.stopping_epoch,
                     "best_epoch": history.best_epoch,
                     "initial_val_loss": history.initial_val_loss},
    })
    write_history(args.history_out, history)

def cmd_eval(args):
    net = UnfoldedNetwork.load(args.model)
    ds = _load(args.data, net.K, net.M)
    cfg = _system(args, ds.K, ds.M)
    result = evaluate(net, ds.channels, cfg, lam=args.lam, per_layer=args.per_layer)
    report = {"model": str(args.model), "data": str(args.data), "channels": len(ds),
              "layers": net.num_layers, "metrics": result.summary()}
    if args.per_layer:
        rows = result.mean_rows()
        report["per_layer"] = rows
        rows = [dict(r, run_id=f"unfolded-{Path(args.data).stem}") for r in rows]
        atomic_write_text(str(args.out) + ".layers.csv", rows_to_csv(rows, TRACE_COLUMNS))
    write_json(args.out, report)

def cmd_bench(args):
    net = UnfoldedNetwork.load(args.model)
    ds = _load(args.data, net.K, net.M)
    cfg = _system(args, ds.K, ds.M)
    report = benchmark(net, ds.channels[:args.channels], cfg, pgd_iters=args.pgd_iters,
                       reps=args.reps)
    write_json(args.out, report)
    print(f"unfolded-{net.num_layers}: {report['unfolded_seconds_per_channel'] * 1e3:.3f} ms, "
          f"pgd-{args.pgd_iters}: {report['pgd_seconds_per_channel'] * 1e3:.3f} ms, "
          f"speedup {report['speedup']:.1f}x")

COMMANDS = {"gen-data": cmd_gen_data, "solve": cmd_solve, "train": cmd_train,
            "eval": cmd_eval, "bench": cmd_bench}

def _record(args):
    doc = {"command": args.command, "version": __version__,
           "args": {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}}
    primary = getattr(args, PRIMARY_OUTPUT[args.command][0])
    write_json(sidecar_path(primary), doc)

def _replay(args):
    doc = read_json(args.sidecar)
    command = doc.get("command")
    if command not in COMMANDS:
        raise DataFormatError(f"{args.sidecar}: unknown command {command!r}")
    recorded = argparse.Namespace(command=command, verbose=args.verbose, **doc["args"])
    if args.out_dir is not None:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        for key in PRIMARY_OUTPUT[command]:
            setattr(recorded, key, str(Path(args.out_dir) / Path(getattr(recorded, key)).name))
    return recorded

def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "replay":
            args = _replay(args)
        COMMANDS[args.command](args)
        _record(args)
    except PrecoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0

if __name__ == "__main__":
    sys.exit(main())

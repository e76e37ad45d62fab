"""Command-line interface.

Subcommands: generate, train, predict, verify, bench-mem.  All file outputs
go through atomic writes, so a failing run leaves no partial files behind;
every failure path exits nonzero with a one-line message on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import data as dio
from . import model as mdl
from .config import load_config
from .errors import ConfigError, ShapeError, TensorFileError, TrainingDiverged
from .training import SequenceData, train, write_metrics_csv
from .verify import check_memory, format_report, measure_peaks, run_verification, stages_for_depth

LEDGER_COLUMNS = ("coupling", "boundary", "state", "gate", "recompute", "other")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revcast",
                                     description="reversible video prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic sequence dataset")
    p.add_argument("--dataset", required=True, choices=("bouncing", "traffic"))
    p.add_argument("--out", required=True, help="output directory for .crvt sequences")
    p.add_argument("--seqs", type=int, default=32, help="number of sequences")
    p.add_argument("--frames", type=int, default=10, help="frames per sequence")
    p.add_argument("--size", type=int, default=16, help="frame height and width")
    p.add_argument("--seed", type=int, default=0, help="seed of the first sequence")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--data", default="", help="dataset directory (overrides config)")
    p.add_argument("--out", default="", help="output directory (overrides config)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="roll a trained model forward")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help=".crvt tensor of observed frames (T,H,W,C)")
    p.add_argument("--steps", type=int, default=1, help="frames to predict")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("verify", help="run the numerical audit suite")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--precision", choices=("f32", "f64"), default=None,
                   help="override the config's precision for the checks")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("bench-mem", help="stored-activation peaks by depth and mode")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--depths", default="4,8,16",
                   help="comma-separated total block counts")
    p.set_defaults(func=_cmd_bench_mem)
    return parser


def _cmd_generate(args) -> int:
    seqs = dio.gen_batch(args.dataset, args.seqs, args.size, args.frames, args.seed)
    paths = dio.save_sequences(args.out, seqs)
    print(f"wrote {len(paths)} {args.dataset} sequences of shape "
          f"{tuple(seqs.shape[1:])} to {args.out}")
    return 0


def _split_dataset(seqs: np.ndarray) -> SequenceData:
    n = seqs.shape[0]
    n_val = min(max(n // 10, 1), n - 1) if n > 1 else 0
    if n_val == 0:
        return SequenceData(train=seqs, val=seqs)
    return SequenceData(train=seqs[: n - n_val], val=seqs[n - n_val:])


def _cmd_train(args) -> int:
    run_cfg = load_config(args.config)
    data_dir = args.data or run_cfg.data_dir
    out_dir = args.out or run_cfg.out_dir
    if not data_dir:
        raise ConfigError("no dataset directory: pass --data or set data_dir in the config")
    if not out_dir:
        raise ConfigError("no output directory: pass --out or set out_dir in the config")
    seqs = dio.load_sequences(data_dir).astype(run_cfg.model.dtype)
    data = _split_dataset(seqs)
    params = mdl.init_model(run_cfg.model, run_cfg.seed, run_cfg.init)

    def log(row: dict) -> None:
        print(f"step {row['step']:>6d}  train {row['train_mse']:.6f}  "
              f"val {row['val_mse']:.6f}  baseline {row['baseline_mse']:.6f}  "
              f"peak {row['peak_activation_elems']}")

    trained, rows = train(params, data, run_cfg.model, run_cfg.schedule, log=log)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt")
    dio.save_checkpoint(ckpt, trained, run_cfg.model)
    write_metrics_csv(rows, os.path.join(out_dir, "metrics.csv"))
    final = rows[-1]
    print(f"done: val {final['val_mse']:.6f} vs baseline {final['baseline_mse']:.6f}; "
          f"checkpoint {ckpt}")
    return 0


def _cmd_predict(args) -> int:
    if args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    params, config = dio.load_checkpoint(args.ckpt)
    obs = dio.read_tensor(args.input)
    want = (config.height, config.width, config.channels)
    if obs.ndim != 4 or obs.shape[1:] != want:
        raise ShapeError(f"input tensor {obs.shape} is not (T,) + {want}")
    pred = mdl.rollout(obs.astype(config.dtype), args.steps, params, config)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "prediction.crvt")
    dio.write_tensor(out_path, pred)
    for i in range(pred.shape[0]):
        dio.write_pgm(os.path.join(args.out, f"pred-{i:03d}.pgm"), pred[i])
    print(f"wrote {args.steps} predicted frames to {out_path}")
    return 0


def _cmd_verify(args) -> int:
    run_cfg = load_config(args.config)
    results = run_verification(run_cfg, precision=args.precision)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def _cmd_bench_mem(args) -> int:
    run_cfg = load_config(args.config)
    try:
        depths = tuple(int(part) for part in args.depths.split(","))
    except ValueError:
        raise ConfigError(f"--depths must be comma-separated integers, got {args.depths!r}")
    if not depths or any(d < 1 for d in depths):
        raise ConfigError(f"--depths entries must be positive, got {args.depths!r}")
    header = f"{'depth':>5}  {'mode':<10}" + "".join(f"{c:>12}" for c in LEDGER_COLUMNS)
    print(header + f"{'total':>12}")
    for depth in depths:
        cfg = stages_for_depth(run_cfg.model, depth)
        for mode in ("stored", "reversible"):
            snap = measure_peaks(cfg, mode)
            cells = "".join(f"{snap['peak'].get(c, 0):>12}" for c in LEDGER_COLUMNS)
            print(f"{depth:>5}  {mode:<10}{cells}{snap['peak_total']:>12}")
    if set(depths) >= {4, 16}:
        claim = check_memory(run_cfg.model, depths=tuple(sorted(set(depths))))
        print(claim.line())
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, TensorFileError, TrainingDiverged) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

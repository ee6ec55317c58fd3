"""Command-line front end: dataset generation, training stages, evaluation."""

import argparse
import csv
import os
import sys

import numpy as np

from . import channel as channel_mod
from . import evaluation as eval_mod
from .config import ConfigError, desk_scale, load_config
from .checkpoint import load_checkpoint
from .modulation import ModOrderCombo, enumerate_combos
from .training import (MopLabelSet, RunDirectory, train_stage1, train_stage2,
                       train_stage3)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _env_default(name: str, fallback=None):
    return os.environ.get(f"AMPD_{name}", fallback)


def _load_cfg(args):
    if args.config:
        return load_config(args.config)
    return desk_scale()


def _split_channels(channels, manifest, split):
    splits = manifest.get("splits")
    if splits is None:
        return channels
    lo, hi = splits[split]
    return channels[lo:hi]


def cmd_gen_data(args) -> int:
    sys_cfg, train_cfg = _load_cfg(args)
    count = args.count
    if count is None:
        count = train_cfg.train_size + train_cfg.test_size + train_cfg.val_size
    total = train_cfg.train_size + train_cfg.test_size + train_cfg.val_size
    n_train = round(count * train_cfg.train_size / total)
    n_test = round(count * train_cfg.test_size / total)
    splits = {"train": [0, n_train],
              "test": [n_train, n_train + n_test],
              "val": [n_train + n_test, count]}
    channels = channel_mod.generate_channels(sys_cfg, count, args.seed)
    channel_mod.save_dataset(args.out, channels, sys_cfg, args.seed, splits)
    print(f"wrote {count} channels to {args.out} "
          f"(train/test/val = {n_train}/{n_test}/{count - n_train - n_test})")
    return EXIT_OK


def _load_slpd(run_dir: str, sys_cfg, stage: int):
    tx = load_checkpoint(os.path.join(run_dir, "checkpoints",
                                      f"stage{stage}_tx_final"), sys_cfg)
    dec = load_checkpoint(os.path.join(run_dir, "checkpoints",
                                       f"stage{stage}_dec_final"), sys_cfg)
    return tx, dec


def cmd_train(args) -> int:
    sys_cfg, train_cfg = _load_cfg(args)
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.deterministic:
        train_cfg.deterministic = True
    channels, manifest = channel_mod.load_dataset(args.data)
    train = _split_channels(channels, manifest, "train")
    val = _split_channels(channels, manifest, "val")
    run = RunDirectory(args.out)
    run.snapshot_config(sys_cfg, train_cfg)

    if args.stage == 1:
        train_stage1(sys_cfg, train_cfg, train, train_cfg.seed,
                     run_dir=run, val_channels=val)
    elif args.stage == 2:
        if not args.init:
            raise ConfigError("--stage 2 requires --init with a stage-1 run directory")
        tx, dec = _load_slpd(args.init, sys_cfg, stage=1)
        train_stage2(sys_cfg, train_cfg, train, (tx, dec), train_cfg.seed,
                     run_dir=run, val_channels=val)
    else:
        if not args.init:
            raise ConfigError("--stage 3 requires --init with a stage-2 run directory")
        labels_path = os.path.join(args.init, "mop_labels.npz")
        if not os.path.exists(labels_path):
            raise ConfigError(f"stage-2 label file missing: {labels_path}")
        labels = MopLabelSet.load(labels_path)
        _, report = train_stage3(sys_cfg, train_cfg, train, labels,
                                 train_cfg.seed, run_dir=run)
        print(f"stage 3 train accuracy: {report['train_accuracy']:.4f}")
    print(f"run artifacts in {args.out}")
    return EXIT_OK


def _parse_snr_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_eval(args) -> int:
    sys_cfg, train_cfg = _load_cfg(args)
    channels, manifest = channel_mod.load_dataset(args.data)
    chans = _split_channels(channels, manifest, args.split)
    if args.max_channels:
        chans = chans[: args.max_channels]
    os.makedirs(args.out, exist_ok=True)
    snrs = _parse_snr_list(args.snr)
    combos = enumerate_combos(sys_cfg.num_users, sys_cfg.max_order,
                              sys_cfg.rate_req)
    qpsk = ModOrderCombo((2,) * sys_cfg.num_users, -1)

    for system_name in args.system:
        if system_name == "zf":
            system = eval_mod.ZfSystem(sys_cfg)
        elif system_name == "ci-slp":
            system = eval_mod.CiSlpSystem(sys_cfg)
        elif system_name == "slpd-qpsk":
            if not args.run_stage1:
                raise ConfigError("--system slpd-qpsk requires --run-stage1")
            tx, dec = _load_slpd(args.run_stage1, sys_cfg, stage=1)
            system = eval_mod.LearnedSystem(tx, dec, sys_cfg)
        elif system_name == "ampd":
            if not (args.run_stage2 and args.run_stage3):
                raise ConfigError("--system ampd requires --run-stage2 and --run-stage3")
            tx, dec = _load_slpd(args.run_stage2, sys_cfg, stage=2)
            system = eval_mod.LearnedSystem(tx, dec, sys_cfg)
            mop = load_checkpoint(os.path.join(args.run_stage3, "checkpoints",
                                               "stage3_mop_final"),
                                  sys_cfg, num_combos=len(combos))
        else:
            raise ConfigError(f"unknown system {system_name!r}")

        if system_name == "ampd":
            rows = []
            for snr in snrs:
                report = eval_mod.evaluate_topk(mop, system, chans, args.topk,
                                                snr, args.trials_per_channel,
                                                args.seed)
                rows.append([snr, args.topk, f"{report.avg_ser:.8g}"])
            path = os.path.join(args.out, "ser_curve_ampd.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["snr_db", "topk", "avg_ser"])
                writer.writerows(rows)
        else:
            points = [eval_mod.monte_carlo_ser(system, chans, qpsk, snr,
                                               args.trials, args.seed)
                      for snr in snrs]
            eval_mod.write_ser_csv(
                os.path.join(args.out, f"ser_curve_{system_name}.csv"), points)
    print(f"reports in {args.out} (seed {args.seed})")
    return EXIT_OK


def cmd_enumerate_combos(args) -> int:
    combos = enumerate_combos(args.K, args.B, args.R)
    if not combos:
        print(f"infeasible: no tuple in {{1..{args.B}}}^{args.K} "
              f"reaches rate {args.R}", file=sys.stderr)
        return EXIT_CONFIG
    writer = csv.writer(sys.stdout)
    writer.writerow(["index"] + [f"M_{k + 1}" for k in range(args.K)])
    for combo in combos:
        writer.writerow([combo.index, *combo.orders])
    return EXIT_OK


def cmd_export_constellation(args) -> int:
    sys_cfg, _ = _load_cfg(args)
    channels, manifest = channel_mod.load_dataset(args.data)
    chan = _split_channels(channels, manifest, args.split)[args.channel_index]
    combos = enumerate_combos(sys_cfg.num_users, sys_cfg.max_order,
                              sys_cfg.rate_req)
    if args.combo_index is not None:
        combo = combos[args.combo_index]
    else:
        combo = ModOrderCombo((2,) * sys_cfg.num_users, -1)
    if args.system == "zf":
        system = eval_mod.ZfSystem(sys_cfg)
    elif args.system == "ci-slp":
        system = eval_mod.CiSlpSystem(sys_cfg)
    elif args.system in ("slpd-qpsk", "ampd"):
        stage = 1 if args.system == "slpd-qpsk" else 2
        if not args.run:
            raise ConfigError(f"--system {args.system} requires --run")
        tx, dec = _load_slpd(args.run, sys_cfg, stage=stage)
        system = eval_mod.LearnedSystem(tx, dec, sys_cfg)
    else:
        raise ConfigError(f"unknown system {args.system!r}")
    rows = eval_mod.export_constellation(system, chan, combo,
                                         args.num_symbols, args.seed)
    eval_mod.write_constellation_csv(args.out, rows)
    print(f"wrote {len(rows)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ampd",
        description="Multiuser downlink simulator with learned adaptive-order "
                    "symbol-level precoding and detection")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=True):
        p.add_argument("--config", default=_env_default("CONFIG"),
                       help="INI config file ([system]/[train]); desk preset if omitted")
        p.add_argument("--seed", type=int,
                       default=int(_env_default("SEED", 0)))
        if data:
            p.add_argument("--data", default=_env_default("DATA"),
                           required=_env_default("DATA") is None,
                           help="channel dataset (.npz)")

    p = sub.add_parser("gen-data", help="generate a channel dataset")
    add_common(p, data=False)
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training stage")
    add_common(p)
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--init", help="run directory of the prerequisite stage")
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="estimate SER curves")
    add_common(p)
    p.add_argument("--system", nargs="+", required=True,
                   choices=("ampd", "slpd-qpsk", "zf", "ci-slp"))
    p.add_argument("--snr", default="0,5,10,15,20")
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--trials-per-channel", type=int, default=2000)
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.add_argument("--max-channels", type=int, default=100)
    p.add_argument("--run-stage1")
    p.add_argument("--run-stage2")
    p.add_argument("--run-stage3")
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enumerate-combos",
                       help="print the canonical modulation-order combinations")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--R", type=int, required=True)
    p.set_defaults(func=cmd_enumerate_combos)

    p = sub.add_parser("export-constellation",
                       help="dump noise-free received samples to CSV")
    add_common(p)
    p.add_argument("--system", required=True,
                   choices=("ampd", "slpd-qpsk", "zf", "ci-slp"))
    p.add_argument("--run", help="run directory for learned systems")
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.add_argument("--channel-index", type=int, default=0)
    p.add_argument("--combo-index", type=int, default=None)
    p.add_argument("--num-symbols", type=int, default=500)
    p.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    p.set_defaults(func=cmd_export_constellation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

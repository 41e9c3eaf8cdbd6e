"""Command-line entry point: ``designgap {gen,train,eval,gaps,gradcheck,experiment}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
Every command that writes files writes them under ``--out-dir`` together with
``config.ini``, the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import gaps as G
from .checks import elbo_grad_suite
from .config import ConfigError, RunConfig, dump_config, load_config, override, with_seed
from .data import LoadError, SplitSpec, load_dataset, normalize_splits, save_dataset, split_dataset
from .evaluation import EvalReport, choice_metrics, feasibility_eval
from .experiment import calibrate, run_experiment, run_gap_stage, write_candidates
from .model import (CheckpointError, NumericalError, config_digest, load_checkpoint,
                    save_checkpoint, train, write_training_log)
from .synthetic import gen_synthetic_market, plant_gap

log = logging.getLogger("designgap")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here bad usage is a validation error (1)."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _ids(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=None, help="directory for all outputs")
    common.add_argument("--config", type=Path, default=None, help="INI run configuration")
    common.add_argument("-v", "--verbose", action="store_true")

    split = _Parser(add_help=False)
    split.add_argument("--manifest", type=Path, required=True)
    split.add_argument("--holdout-ids", type=_ids, default=(), metavar="ID,ID",
                       help="test-gap design ids held out of training")
    split.add_argument("--val-gap-ids", type=_ids, default=(), metavar="ID,ID",
                       help="validation-gap design ids held out of training")

    p = _Parser(prog="designgap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen", parents=[common], help="generate a synthetic market")

    t = sub.add_parser("train", parents=[common, split], help="train the choice model")
    t.add_argument("--epochs", type=int, default=None)

    e = sub.add_parser("eval", parents=[common, split], help="choice and feasibility evaluation")
    e.add_argument("--checkpoint", type=Path, required=True)

    g = sub.add_parser("gaps", parents=[common, split], help="rejection-sample design gaps")
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--gamma1", type=float, default=None)
    g.add_argument("--gamma2", type=float, default=None)
    g.add_argument("--gamma-s", type=float, default=None)
    g.add_argument("--n-candidates", type=int, default=None)
    g.add_argument("--baseline", choices=("uniform", "share"), default=None)

    gc = sub.add_parser("gradcheck", parents=[common], help="ELBO gradient check")
    gc.add_argument("--n-configs", type=int, default=10)

    x = sub.add_parser("experiment", parents=[common], help="three-stage induced-gap experiment")
    x.add_argument("--seeds", type=int, default=None, help="number of seeds, from --seed upward")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, model=override(cfg.model, epochs=args.epochs))
    if args.command == "gaps":
        cfg = replace(cfg, gaps=override(cfg.gaps, gamma1=args.gamma1, gamma2=args.gamma2,
                                         gamma_s=args.gamma_s, n_candidates=args.n_candidates,
                                         baseline=args.baseline))
    if args.command == "experiment":
        cfg = replace(cfg, experiment=override(cfg.experiment, n_seeds=args.seeds))
    return with_seed(cfg, args.seed)


def _out_dir(args, cfg: RunConfig) -> Optional[Path]:
    if args.out_dir is None:
        return None
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "config.ini").write_text(dump_config(cfg, args.seed))
    return args.out_dir


def _require_out(args, what: str) -> Path:
    if args.out_dir is None:
        raise UsageError(f"{args.command}: --out-dir is required to write {what}")
    return args.out_dir


def _splits(args, cfg: RunConfig):
    ds = load_dataset(args.manifest)
    spec = SplitSpec(seed=args.seed, val_gap_ids=args.val_gap_ids, test_gap_ids=args.holdout_ids)
    try:
        return normalize_splits(split_dataset(ds, spec))
    except KeyError as exc:
        raise LoadError(exc.args[0]) from None


def _load_model(args, splits):
    model = load_checkpoint(args.checkpoint)
    if not np.array_equal(np.sort(model.catalog_ids), np.sort(splits.held_in_ids)):
        raise LoadError("checkpoint catalog does not match the held-in designs; "
                        "pass the same --holdout-ids/--val-gap-ids used for training")
    return model


def cmd_gen(args, cfg: RunConfig) -> int:
    out = _require_out(args, "the market")
    _out_dir(args, cfg)
    ds, gt = gen_synthetic_market(cfg.market)
    spec = plant_gap(ds, gt, cfg.market)
    manifest = save_dataset(ds, out)
    (out / "gaps.txt").write_text(
        f"val_gap_ids = {','.join(map(str, spec.val_gap_ids))}\n"
        f"test_gap_ids = {','.join(map(str, spec.test_gap_ids))}\n"
        f"purchasers = {len(ds.purchasers(spec.held_out_ids))}\n")
    print(f"wrote {manifest}")
    print(f"suggested: --holdout-ids {','.join(map(str, spec.test_gap_ids))} "
          f"--val-gap-ids {','.join(map(str, spec.val_gap_ids))}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _require_out(args, "the checkpoint")
    _out_dir(args, cfg)
    splits, _ = _splits(args, cfg)
    model, history = train(splits, cfg.model)
    save_checkpoint(model, out / "checkpoint.bin")
    write_training_log(history, out / "training_log.csv")
    best = max(r.val_top1 for r in history) if history else float("nan")
    print(f"trained {len(history)} epochs; best validation top-1 {best:.4f}")
    print(f"wrote {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    splits, _ = _splits(args, cfg)
    model = _load_model(args, splits)
    chash = config_digest(dump_config(cfg, args.seed))
    choice = EvalReport("choice", {args.seed: choice_metrics(model, splits.test, splits.gap_test)},
                        chash)
    full, S = splits.full, cfg.experiment.feasibility_samples
    feas = {"nll_held_in_mean": feasibility_eval(
        model, full.designs[full.design_rows(splits.held_in_ids)], S, args.seed).mean}
    if splits.spec.test_gap_ids:
        feas["nll_held_out_mean"] = feasibility_eval(
            model, full.designs[full.design_rows(splits.spec.test_gap_ids)], S, args.seed).mean
    feasibility = EvalReport("feasibility", {args.seed: feas}, chash)
    for rep in (choice, feasibility):
        print("\n".join(rep.summary_lines()))
        if out is not None:
            rep.write_csv(out / f"report_{rep.stage}.csv")
    return EXIT_OK


def cmd_gaps(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    splits, _ = _splits(args, cfg)
    model = _load_model(args, splits)
    g = cfg.gaps
    if None in (g.gamma1, g.gamma2, g.gamma_s):
        th = calibrate(model, splits, cfg, args.seed)
    else:
        th = G.Thresholds(g.gamma1, g.gamma2, g.gamma_s, float("nan"))
    res = run_gap_stage(model, splits, cfg, args.seed, th)
    rep = EvalReport("gap", {args.seed: res.gap}, config_digest(dump_config(cfg, args.seed)))
    print(f"candidates: {res.sample.summary()}")
    print("\n".join(rep.summary_lines()))
    if out is not None:
        write_candidates(res.sample, model, out / "candidates.csv")
        res.histogram.write_csv(out / "rho2_histogram.csv")
        rep.write_csv(out / "report_gap.csv")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    _out_dir(args, cfg)
    ok = True
    for seed, K, rep in elbo_grad_suite(args.n_configs, args.seed):
        print(f"seed {seed} K={K}: {rep}")
        ok &= rep.passed
    print("gradcheck " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_experiment(args, cfg: RunConfig) -> int:
    out = _require_out(args, "the report bundle")
    seeds = list(range(args.seed, args.seed + cfg.experiment.n_seeds))
    run_experiment(cfg, seeds, out)
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gaps": cmd_gaps,
            "gradcheck": cmd_gradcheck, "experiment": cmd_experiment}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, LoadError, CheckpointError, G.UndefinedRho2, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

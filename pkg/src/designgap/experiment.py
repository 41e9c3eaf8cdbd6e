"""End-to-end induced-gap experiment on synthetic markets.

For each seed: generate a market, hold out its gap cluster, train, then run
the three validation stages (choice, feasibility, gap prediction). Stages run
in order; an exception in one stops the rest for that seed. A choice model
under the configured Top-1 floor only flags the report.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import gaps as G
from .config import RunConfig, dump_config, with_seed
from .data import Splits, normalize_designs, normalize_splits, save_dataset, split_dataset
from .evaluation import (EvalReport, Histogram, choice_metrics, feasibility_eval, gap_eval,
                         rho2_histogram)
from .model import ChoiceModel, config_digest, save_checkpoint, train, write_training_log
from .synthetic import gen_synthetic_market, plant_gap, support_probes

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


@dataclass
class SeedResult:
    seed: int
    choice: Dict[str, float]
    feasibility: Dict[str, float]
    gap: Dict[str, float]
    thresholds: Optional[G.Thresholds] = None
    sample: Optional[G.GapSample] = None
    histogram: Optional[Histogram] = None
    gap_rho2: List[float] = field(default_factory=list)
    sampled_rho2: List[float] = field(default_factory=list)


@dataclass
class ExperimentResult:
    reports: Dict[str, EvalReport]
    seeds: List[SeedResult]
    flags: List[str]


def gap_settings_to_config(cfg: RunConfig, th: G.Thresholds, seed: int) -> G.GapConfig:
    g = cfg.gaps
    return G.GapConfig(
        gamma1=th.gamma1 if g.gamma1 is None else g.gamma1,
        gamma2=th.gamma2 if g.gamma2 is None else g.gamma2,
        gamma_s=(th.gamma_s if g.gamma_s is None else g.gamma_s) if g.early_termination else None,
        c_sub=g.c_sub, n_candidates=g.n_candidates, n_importance=g.n_importance,
        seed=seed, baseline=g.baseline)


def validation_panel(splits: Splits):
    """Consumers used for calibration: ordinary validation plus validation-gap purchasers."""
    ids = np.union1d(splits.val.consumer_ids, splits.gap_val.consumer_ids)
    return splits.full.subset(ids)


def test_panel(splits: Splits):
    ids = np.union1d(splits.test.consumer_ids, splits.gap_test.consumer_ids)
    return splits.full.subset(ids)


def calibrate(model: ChoiceModel, splits: Splits, cfg: RunConfig, seed: int) -> G.Thresholds:
    """Thresholds from the validation split: held-in plus validation-gap designs."""
    full = splits.full
    vpanel = validation_panel(splits)
    base = G.make_baseline(cfg.gaps.baseline, splits.train)
    gap_rho2 = G.induced_gap_rho2(model, full, splits.spec.val_gap_ids, vpanel, base)
    val_ids = list(splits.held_in_ids) + list(splits.spec.val_gap_ids)
    return G.calibrate_thresholds(
        model, full.designs[full.design_rows(val_ids)], gap_rho2,
        G.ChoicePanel(model, vpanel.X_c, base), q=cfg.gaps.q, r=cfg.gaps.r,
        min_agreement=cfg.gaps.min_agreement, c_sub=cfg.gaps.c_sub, n_probe=cfg.gaps.n_probe,
        n_importance=cfg.gaps.n_importance, seed=seed)


def run_gap_stage(model: ChoiceModel, splits: Splits, cfg: RunConfig, seed: int,
                  th: G.Thresholds) -> SeedResult:
    full = splits.full
    tpanel_ds = test_panel(splits)
    base = G.make_baseline(cfg.gaps.baseline, splits.train)
    panel = G.ChoicePanel(model, tpanel_ds.X_c, base)
    sample = G.sample_gap_candidates(model, panel, gap_settings_to_config(cfg, th, seed))

    test_ids = splits.spec.test_gap_ids
    gap_lat = G.latent_means(model, full.designs[full.design_rows(test_ids)])
    acc = np.array([c.h_enc for c in sample.accepted]).reshape(-1, model.K)
    fea = np.array([c.h_enc for c in sample.feasible]).reshape(-1, model.K)
    msqe_acc, msqe_fea = gap_eval(acc, fea, gap_lat) if len(test_ids) else (np.nan, np.nan)

    gap_rho2 = G.induced_gap_rho2(model, full, test_ids, tpanel_ds, base)
    # full-panel scores for every feasible candidate, early-rejected ones included
    sampled = [G.rho_or_zero(panel, c.h_enc).value for c in sample.feasible]
    hist = rho2_histogram({"induced_gaps": gap_rho2, "sampled": sampled})
    s = sample.summary()
    gap = {
        "msqe_accepted": msqe_acc, "msqe_feasible": msqe_fea,
        "n_accepted": float(s["accepted"]), "n_feasible": float(len(sample.feasible)),
        "n_rejected_feasibility": float(s["rejected_feasibility"]),
        "n_early_rejected": float(s["early_rejected"]), "n_clamped": float(s["clamped"]),
        "gamma1": sample.config.gamma1, "gamma2": sample.config.gamma2,
        "gamma_s": np.nan if sample.config.gamma_s is None else sample.config.gamma_s,
        "early_agreement": th.agreement,
        "rho2_induced_mean": hist.means["induced_gaps"], "rho2_sampled_mean": hist.means["sampled"],
    }
    return SeedResult(seed, {}, {}, gap, th, sample, hist, gap_rho2, sampled)


def run_seed(cfg: RunConfig, seed: int, out_dir: Optional[Path] = None) -> SeedResult:
    cfg = with_seed(cfg, seed)
    ds, gt = gen_synthetic_market(cfg.market)
    spec = plant_gap(ds, gt, cfg.market)
    splits, nrm = normalize_splits(split_dataset(ds, spec))
    model, history = train(splits, cfg.model)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(ds, out_dir / "market")
        write_training_log(history, out_dir / "training_log.csv")
        save_checkpoint(model, out_dir / "checkpoint.bin")

    # stage 1
    choice = choice_metrics(model, splits.test, splits.gap_test)

    # stage 2
    full = splits.full
    S, n = cfg.experiment.feasibility_samples, cfg.experiment.n_probes
    held_in = feasibility_eval(model, full.designs[full.design_rows(splits.held_in_ids)], S, seed)
    feas = {"nll_held_in_mean": held_in.mean}
    if spec.test_gap_ids:
        held_out = feasibility_eval(
            model, full.designs[full.design_rows(spec.test_gap_ids)], S, seed)
        feas["nll_held_out_mean"] = held_out.mean
    inside, outside = support_probes(gt, cfg.market, n, seed)
    feas["nll_probe_in_median"] = feasibility_eval(
        model, normalize_designs(nrm, inside), S, seed).median
    feas["nll_probe_out_median"] = feasibility_eval(
        model, normalize_designs(nrm, outside), S, seed).median

    # stage 3
    th = calibrate(model, splits, cfg, seed)
    res = run_gap_stage(model, splits, cfg, seed, th)
    res.choice, res.feasibility = choice, feas
    if out_dir is not None:
        write_candidates(res.sample, model, out_dir / "candidates.csv")
        res.histogram.write_csv(out_dir / "rho2_histogram.csv")
    return res


def write_candidates(sample: G.GapSample, model: ChoiceModel, path) -> None:
    names = model.design_schema.names
    K = model.K
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "status", "feasibility_nll", "rho2", "early", "clamped",
                    "n_endorsers"] + [f"h{k}" for k in range(K)]
                   + [f"h_enc{k}" for k in range(K)] + names)
        for c in sample.candidates:
            w.writerow([c.index, c.status, repr(float(c.feasibility_nll)),
                        "" if c.rho2 is None else repr(float(c.rho2)), int(c.early),
                        int(c.clamped), c.n_endorsers]
                       + [repr(float(v)) for v in c.h] + [repr(float(v)) for v in c.h_enc]
                       + [repr(float(v)) for v in c.x])


def run_experiment(cfg: RunConfig, seeds: Sequence[int],
                   out_dir: Optional[Path] = None) -> ExperimentResult:
    """Run every seed and aggregate one report per stage.

    With ``out_dir`` the bundle is written there: resolved config, per-stage
    reports, a summary, and one directory per seed.
    """
    seeds = list(seeds)
    out_dir = None if out_dir is None else Path(out_dir)
    chash = config_digest(dump_config(cfg, seeds[0]))
    results = []
    for s in seeds:
        log.info("experiment seed %d", s)
        results.append(run_seed(cfg, s, None if out_dir is None else out_dir / f"seed_{s}"))
    reports = {
        "choice": EvalReport("choice", {r.seed: r.choice for r in results}, chash),
        "feasibility": EvalReport("feasibility", {r.seed: r.feasibility for r in results}, chash),
        "gap": EvalReport("gap", {r.seed: r.gap for r in results}, chash),
    }
    flags = []
    top1 = reports["choice"].mean("top1_existing")
    if not top1 >= cfg.experiment.choice_floor:
        flags.append(f"choice model below floor ({top1:.4f} < {cfg.experiment.choice_floor})")
        reports["choice"].flags.extend(flags)
    result = ExperimentResult(reports, results, flags)
    if out_dir is not None:
        write_bundle(result, cfg, seeds, out_dir)
    return result


def write_bundle(result: ExperimentResult, cfg: RunConfig, seeds: Sequence[int],
                 out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(
        f"# bundle_version = {BUNDLE_VERSION}\n# seeds = {','.join(map(str, seeds))}\n"
        + dump_config(cfg, seeds[0]))
    for name, rep in result.reports.items():
        rep.write_csv(out_dir / f"report_{name}.csv")
    lines = []
    for rep in result.reports.values():
        lines += rep.summary_lines()
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")

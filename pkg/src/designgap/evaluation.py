"""Three-stage validation: choice accuracy, design feasibility, and gap recovery.

Every metric here is a deterministic function of a model snapshot and data;
multi-seed aggregation lives in :class:`EvalReport`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .gaps import feasibility_nlls
from .model import ChoiceModel, _positions_in, embed_np, encode_np, rank_designs

HIST_BINS = 20


# -- reports -----------------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-seed metrics for one stage plus their across-seed summary.

    ``std`` is the sample standard deviation (``ddof=1``) and is only present
    with two or more seeds.
    """

    stage: str
    per_seed: Dict[int, Dict[str, float]]
    config_hash: str = ""
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.stage not in ("choice", "feasibility", "gap"):
            raise ValueError(f"unknown stage {self.stage!r}")

    @property
    def seeds(self) -> List[int]:
        return sorted(self.per_seed)

    @property
    def metric_names(self) -> List[str]:
        names = []
        for s in self.seeds:
            names += [k for k in self.per_seed[s] if k not in names]
        return names

    def values(self, name: str) -> np.ndarray:
        return np.array([self.per_seed[s].get(name, np.nan) for s in self.seeds])

    def mean(self, name: str) -> float:
        v = self.values(name)
        v = v[np.isfinite(v)]
        return float(v.mean()) if len(v) else float("nan")

    def std(self, name: str) -> Optional[float]:
        v = self.values(name)
        v = v[np.isfinite(v)]
        return float(v.std(ddof=1)) if len(v) >= 2 else None

    @property
    def metrics(self) -> Dict[str, Tuple[float, Optional[float]]]:
        return {k: (self.mean(k), self.std(k)) for k in self.metric_names}

    def write_csv(self, path) -> None:
        """One row per metric: mean, sample std (blank below two seeds), then each seed."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stage", "metric", "mean", "std"] + [f"seed_{s}" for s in self.seeds])
            for k, (m, sd) in self.metrics.items():
                w.writerow([self.stage, k, _fmt(m), "" if sd is None else _fmt(sd)]
                           + [_fmt(v) for v in self.values(k)])

    def summary_lines(self) -> List[str]:
        out = [f"[{self.stage}] seeds={len(self.seeds)} config={self.config_hash}"]
        for k, (m, sd) in self.metrics.items():
            out.append(f"  {k:<24s} {m:.6g}" + ("" if sd is None else f" ({sd:.3g})"))
        out += [f"  flag: {f}" for f in self.flags]
        return out


def _fmt(v: float) -> str:
    return repr(float(v))


# -- stage 1: choice ------------------------------------------------------------------------------

def topk_accuracy(model: ChoiceModel, ds: Dataset, k: int, mode: str = "existing") -> float:
    """Share of ``ds``'s events whose purchased design ranks in the top ``k``.

    ``existing`` scores against the model's cached catalog. ``nonexisting``
    scores each event against the cached catalog plus only that event's
    purchased design (encoded from ``ds``), appended if it is not already
    there. Ties go to the lower design id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ds.events) == 0:
        return float("nan")
    crow, drow = ds.event_arrays()
    H_c = embed_np(model, ds.X_c[crow])
    logits = H_c @ model.H_d
    ids = model.catalog_ids
    targets = ds.events[:, 1]
    if mode == "existing":
        ranked = rank_designs(logits, ids)[:, :k]
        return float((ranked == _positions_in(ids, targets)[:, None]).any(axis=1).mean())
    if mode != "nonexisting":
        raise ValueError(f"unknown catalog mode {mode!r}")
    mu, _ = encode_np(model, ds.X_d[drow])
    lookup = {int(d): i for i, d in enumerate(ids)}
    hits = np.empty(len(targets), dtype=bool)
    for e, tgt in enumerate(targets):
        if int(tgt) in lookup:
            row, row_ids, pos = logits[e], ids, lookup[int(tgt)]
        else:
            row = np.append(logits[e], H_c[e] @ mu[e])
            row_ids, pos = np.append(ids, tgt), len(ids)
        hits[e] = pos in rank_designs(row, row_ids)[0, :k]
    return float(hits.mean())


def choice_metrics(model: ChoiceModel, held_in_test: Dataset, gap_test: Dataset,
                   ks: Sequence[int] = (1, 5)) -> Dict[str, float]:
    out = {}
    for k in ks:
        out[f"top{k}_existing"] = topk_accuracy(model, held_in_test, k, "existing")
    for k in ks:
        out[f"top{k}_nonexisting"] = topk_accuracy(model, gap_test, k, "nonexisting")
    out["random_top1"] = 1.0 / len(model.catalog_ids)
    return out


# -- stage 2: feasibility --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityResult:
    nll: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.nll))

    @property
    def median(self) -> float:
        return float(np.median(self.nll))


def feasibility_eval(model: ChoiceModel, designs: np.ndarray, S: int,
                     seed: int = 0) -> FeasibilityResult:
    """Feasibility NLL of every raw design row (substream per row)."""
    return FeasibilityResult(feasibility_nlls(model, designs, S, seed))


# -- stage 3: gaps --------------------------------------------------------------------------------

def msqe(points: np.ndarray, gap_latents: np.ndarray) -> np.ndarray:
    """Per point: min over gap latents of squared distance divided by K."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    G = np.atleast_2d(np.asarray(gap_latents, dtype=np.float64))
    if P.size == 0:
        return np.zeros(0)
    d2 = ((P[:, None, :] - G[None, :, :]) ** 2).sum(axis=-1)
    return d2.min(axis=1) / G.shape[1]


def gap_eval(accepted: np.ndarray, random_feasible: np.ndarray,
             gap_latents: np.ndarray) -> Tuple[float, float]:
    """Mean MSqE of accepted and of unfiltered feasible candidates (nan if a set is empty)."""
    a, r = msqe(accepted, gap_latents), msqe(random_feasible, gap_latents)
    return (float(a.mean()) if len(a) else float("nan"),
            float(r.mean()) if len(r) else float("nan"))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    mass: Dict[str, np.ndarray]
    means: Dict[str, float]

    def write_csv(self, path) -> None:
        groups = list(self.mass)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi"] + groups)
            for i in range(len(self.edges) - 1):
                w.writerow([_fmt(self.edges[i]), _fmt(self.edges[i + 1])]
                           + [_fmt(self.mass[g][i]) for g in groups])


def rho2_histogram(groups: Mapping[str, Sequence[float]], bins: int = HIST_BINS) -> Histogram:
    """Per-group normalized histograms of rho-squared on ``[0, 1]``.

    Empty groups get all-zero mass and a nan mean.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    mass, means = {}, {}
    for name, vals in groups.items():
        v = np.clip(np.asarray(vals, dtype=np.float64), 0.0, 1.0)
        counts, _ = np.histogram(v, bins=edges)
        mass[name] = counts / len(v) if len(v) else np.zeros(bins)
        means[name] = float(v.mean()) if len(v) else float("nan")
    return Histogram(edges, mass, means)


def read_histogram(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=np.float64)
    return {g: body[:, j] for j, g in enumerate(head)}

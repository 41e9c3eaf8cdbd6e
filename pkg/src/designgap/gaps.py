"""Design-gap search: feasibility scoring, rho-squared, and rejection sampling.

A concept design is drawn from the latent prior and decoded to its modal
design vector. It is rejected if its importance-sampled negative log marginal
density exceeds ``gamma1``; otherwise it is inserted into the choice set as
one extra alternative and scored by rho-squared over a panel of consumers.
Candidates whose rho-squared falls below ``gamma2`` are rejected.

For a candidate nobody has bought, a consumer counts as a purchaser when the
model ranks the candidate first for that consumer ("model endorsement").
For a real held-out design the recorded purchases are used instead.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .data import Dataset
from .model import ChoiceModel, design_loglik_rows, embed_np, encode_np, modal_decode

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class UndefinedRho2(ValueError):
    """No consumer purchases (or endorses) the candidate, so rho-squared is 0/0."""


# -- feasibility -------------------------------------------------------------------------

def feasibility_nll(model: ChoiceModel, x_blocks: np.ndarray, S: int,
                    rng: Optional[np.random.Generator] = None,
                    z: Optional[np.ndarray] = None) -> float:
    """``-log p_hat(x)`` from ``S`` importance samples drawn from ``q(h | x)``.

    ``log w_s = log p(x | h_s) + log N(h_s; 0, I) - log q(h_s | x)``, combined
    with log-sum-exp.
    """
    x = np.atleast_2d(np.asarray(x_blocks, dtype=np.float64))
    mu, sigma = encode_np(model, model.design_schema.encode(x))
    mu, sigma = mu[0], sigma[0]
    if z is None:
        z = rng.standard_normal((S, model.K))
    z = np.atleast_2d(z)
    h = mu + sigma * z
    log_prior = -0.5 * (h ** 2 + LOG_2PI).sum(axis=1)
    log_q = -0.5 * (z ** 2 + LOG_2PI).sum(axis=1) - np.log(sigma).sum()
    log_w = design_loglik_rows(model, x, h) + log_prior - log_q
    return float(-(logsumexp(log_w) - math.log(len(z))))


def feasibility_nlls(model: ChoiceModel, X_blocks: np.ndarray, S: int, seed: int) -> np.ndarray:
    """Feasibility NLL of every row; row ``i`` uses the substream ``(seed, i)``."""
    return np.array([feasibility_nll(model, x, S, np.random.default_rng([seed, i]))
                     for i, x in enumerate(np.atleast_2d(X_blocks))])


def latent_means(model: ChoiceModel, X_blocks: np.ndarray) -> np.ndarray:
    """Encoder means (rows) for raw design block rows."""
    mu, _ = encode_np(model, model.design_schema.encode(np.atleast_2d(X_blocks)))
    return mu


# -- rho-squared ------------------------------------------------------------------------------

class Rho2(NamedTuple):
    value: float
    clamped: bool
    n_purchasers: int


def rho_squared_from_probs(p_star, p0) -> Rho2:
    """``sum log(p*/p0) / sum log(1/p0)`` over purchasers, clamped to [0, 1].

    Both arrays hold one entry per purchaser of the candidate.

    Raises
    ------
    UndefinedRho2
        When there are no purchasers.
    """
    p_star = np.asarray(p_star, dtype=np.float64)
    p0 = np.broadcast_to(np.asarray(p0, dtype=np.float64), p_star.shape)
    if p_star.size == 0:
        raise UndefinedRho2("undefined rho2: no consumer purchases the candidate")
    num = float(np.sum(np.log(p_star) - np.log(p0)))
    den = float(np.sum(-np.log(p0)))
    value = num / den
    clamped = value < 0.0 or value > 1.0
    return Rho2(min(max(value, 0.0), 1.0), clamped, int(p_star.size))


@dataclass
class Baseline:
    """Reference choice probability for the inserted alternative.

    ``uniform``: ``1 / (D + 1)``. ``share``: empirical purchase shares with the
    newcomer given ``1 / (N + 1)``, where ``N`` counts reference purchases.
    """

    kind: str = "uniform"
    n_purchases: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "share"):
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.kind == "share" and self.n_purchases < 1:
            raise ValueError("share baseline needs the number of reference purchases")

    def candidate_prob(self, n_existing: int) -> float:
        if self.kind == "uniform":
            return 1.0 / (n_existing + 1)
        return 1.0 / (self.n_purchases + 1)


class ChoicePanel:
    """Consumers scored against the model's cached catalog, ready for insertions.

    Embeddings and existing-design logits are computed once. ``full_evaluations``
    counts complete rho-squared evaluations, so early termination is observable.
    """

    def __init__(self, model: ChoiceModel, X_c: np.ndarray, baseline: Optional[Baseline] = None):
        self.model = model
        self.h_c = embed_np(model, X_c)
        self.logits = self.h_c @ model.H_d
        self.lse = logsumexp(self.logits, axis=1)
        self.best = self.logits.max(axis=1)
        self.baseline = baseline or Baseline()
        self.full_evaluations = 0

    def __len__(self) -> int:
        return len(self.h_c)

    def insert(self, h: np.ndarray, rows=None):
        """Log-probability of the inserted alternative and model endorsement per consumer.

        The newcomer ranks after existing designs on exact ties.
        """
        rows = slice(None) if rows is None else rows
        u = self.h_c[rows] @ np.asarray(h, dtype=np.float64)
        logp = u - np.logaddexp(self.lse[rows], u)
        return logp, u > self.best[rows]

    def rho2(self, h: np.ndarray, purchasers=None, rows=None) -> Rho2:
        """Rho-squared of a latent point; ``purchasers`` (boolean mask over the
        selected rows) overrides model endorsement."""
        logp, endorsed = self.insert(h, rows)
        delta = endorsed if purchasers is None else np.asarray(purchasers, bool)
        p0 = self.baseline.candidate_prob(self.model.H_d.shape[1])
        return rho_squared_from_probs(np.exp(logp[delta]), p0)


def rho_squared(model: ChoiceModel, h_candidate: np.ndarray, X_c: np.ndarray,
                baseline: Optional[Baseline] = None, purchasers=None) -> Rho2:
    """One-off rho-squared of ``h_candidate`` over consumers ``X_c``."""
    return ChoicePanel(model, X_c, baseline).rho2(h_candidate, purchasers)


def rho_or_zero(panel: ChoicePanel, h, rows=None) -> Rho2:
    try:
        return panel.rho2(h, rows=rows)
    except UndefinedRho2:
        return Rho2(0.0, False, 0)


class EarlyResult(NamedTuple):
    rho2: Rho2
    early_rejected: bool


def subset_rows(n: int, c_sub: int, seed: int) -> np.ndarray:
    """The consumer subset used for early termination: ``c_sub`` rows in seeded order."""
    return np.sort(np.random.default_rng([seed, 0x5eed]).permutation(n)[:c_sub])


def rho_squared_early(panel: ChoicePanel, h: np.ndarray, gamma_s: float,
                      rows: np.ndarray) -> EarlyResult:
    """Score on the subset ``rows`` first; reject if that falls below ``gamma_s``.

    A subset with no endorsing consumer scores 0. Otherwise the full panel is
    evaluated (unless the subset already is the full panel).
    """
    sub = rho_or_zero(panel, h, rows=rows)
    if len(rows) == len(panel):
        panel.full_evaluations += 1
        return EarlyResult(sub, sub.value < gamma_s)
    if sub.value < gamma_s:
        return EarlyResult(sub, True)
    panel.full_evaluations += 1
    return EarlyResult(rho_or_zero(panel, h), False)


# -- rejection sampler -------------------------------------------------------------------------

@dataclass(frozen=True)
class GapConfig:
    gamma1: float = math.inf
    gamma2: float = 0.5
    gamma_s: Optional[float] = None
    c_sub: Optional[int] = None
    n_candidates: int = 200
    n_importance: int = 64
    seed: int = 0
    baseline: str = "uniform"

    def __post_init__(self):
        if not 0.0 <= self.gamma2 <= 1.0:
            raise ValueError("gamma2 must lie in [0, 1]")
        if self.n_candidates < 1 or self.n_importance < 1:
            raise ValueError("n_candidates and n_importance must be >= 1")
        if self.c_sub is not None and self.c_sub < 1:
            raise ValueError("c_sub must be >= 1")
        if self.baseline not in ("uniform", "share"):
            raise ValueError(f"unknown baseline {self.baseline!r}")


@dataclass
class GapCandidate:
    index: int
    h: np.ndarray          # prior draw the concept was decoded from
    h_enc: np.ndarray      # encoder mean of the decoded concept; its column in the choice set
    x: np.ndarray
    feasibility_nll: float
    rho2: Optional[float]
    status: str
    clamped: bool = False
    early: bool = False
    n_endorsers: int = 0


@dataclass
class GapSample:
    candidates: List[GapCandidate]
    config: GapConfig

    @property
    def accepted(self) -> List[GapCandidate]:
        return [c for c in self.candidates if c.status == "accepted"]

    @property
    def feasible(self) -> List[GapCandidate]:
        return [c for c in self.candidates if c.status != "rejected_feasibility"]

    def summary(self) -> dict:
        out = {s: 0 for s in ("rejected_feasibility", "rejected_rho2", "accepted")}
        for c in self.candidates:
            out[c.status] += 1
        out["early_rejected"] = sum(c.early for c in self.candidates)
        out["clamped"] = sum(c.clamped for c in self.candidates)
        return out


def make_baseline(kind: str, reference: Optional[Dataset] = None) -> Baseline:
    if kind == "share":
        return Baseline("share", len(reference.events))
    return Baseline("uniform")


def sample_gap_candidates(model: ChoiceModel, panel: ChoicePanel, cfg: GapConfig) -> GapSample:
    """Rejection-sample ``cfg.n_candidates`` concepts from the latent prior.

    Candidate ``i`` draws its latent point and importance samples from the
    substream ``(cfg.seed, i)``, so the list is reproducible and independent
    of evaluation order. Every candidate is returned with its status.
    """
    rows = None
    if cfg.gamma_s is not None:
        c_sub = min(cfg.c_sub or len(panel), len(panel))
        rows = subset_rows(len(panel), c_sub, cfg.seed)
    out = []
    for i in range(cfg.n_candidates):
        rng = np.random.default_rng([cfg.seed, i])
        h = rng.standard_normal(model.K)
        x = modal_decode(model, h)[0]
        h_enc = latent_means(model, x)[0]
        nll = feasibility_nll(model, x, cfg.n_importance, rng)
        if not nll <= cfg.gamma1:
            out.append(GapCandidate(i, h, h_enc, x, nll, None, "rejected_feasibility"))
            continue
        early = False
        if rows is not None:
            r, early = rho_squared_early(panel, h_enc, cfg.gamma_s, rows)
        else:
            panel.full_evaluations += 1
            r = rho_or_zero(panel, h_enc)
        status = "accepted" if (not early and r.value >= cfg.gamma2) else "rejected_rho2"
        out.append(GapCandidate(i, h, h_enc, x, nll, r.value, status, r.clamped, early,
                                r.n_purchasers))
    sample = GapSample(out, cfg)
    if not sample.accepted:
        log.warning("no candidates accepted: %s", sample.summary())
    return sample


# -- thresholds --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    gamma1: float
    gamma2: float
    gamma_s: float
    agreement: float


def induced_gap_rho2(model: ChoiceModel, ds: Dataset, gap_ids: Sequence[int],
                     panel_ds: Dataset, baseline: Baseline) -> List[float]:
    """Rho-squared of real held-out designs over the consumers of ``panel_ds``,
    with purchasers taken from recorded events. Designs nobody in the panel
    bought are skipped."""
    panel = ChoicePanel(model, panel_ds.X_c, baseline)
    out = []
    for gid in gap_ids:
        h = latent_means(model, ds.designs[ds.design_rows([gid])])[0]
        buyers = np.isin(panel_ds.consumer_ids, panel_ds.purchasers([gid]))
        if buyers.any():
            out.append(panel.rho2(h, purchasers=buyers).value)
    return out


def early_agreement(sub: np.ndarray, full: np.ndarray, gamma2: float, gamma_s: float) -> float:
    """Share of candidates whose early-terminated verdict matches full thresholding."""
    full_accept = full >= gamma2
    early_accept = (sub >= gamma_s) & full_accept
    return float(np.mean(early_accept == full_accept)) if len(full) else 1.0


def calibrate_thresholds(model: ChoiceModel, val_designs: np.ndarray, gap_rho2: Sequence[float],
                         panel: ChoicePanel, q: float = 95.0, r: float = 50.0,
                         min_agreement: float = 0.9, c_sub: Optional[int] = None,
                         n_probe: int = 100, n_importance: int = 64, seed: int = 0) -> Thresholds:
    """Validation-set thresholds.

    ``gamma1`` is the ``q``-th percentile of feasibility NLL over
    ``val_designs``; ``gamma2`` the ``r``-th percentile of ``gap_rho2`` (the
    validation gaps' rho-squared, 0 when there are none); ``gamma_s`` the
    largest subset cutoff in ``[0, gamma2]`` whose early verdicts agree with
    full thresholding on ``n_probe`` prior samples at least ``min_agreement``
    of the time.
    """
    nll = feasibility_nlls(model, val_designs, n_importance, seed)
    gamma1 = float(np.percentile(nll, q))
    if len(gap_rho2):
        gamma2 = float(np.percentile(np.asarray(gap_rho2), r))
    else:
        log.warning("no validation gaps; gamma2 set to 0")
        gamma2 = 0.0

    c_sub = min(c_sub or max(1, len(panel) // 4), len(panel))
    rows = subset_rows(len(panel), c_sub, seed)
    rng = np.random.default_rng([seed, 0xca1])
    H = latent_means(model, modal_decode(model, rng.standard_normal((n_probe, model.K))))
    full = np.array([rho_or_zero(panel, h).value for h in H])
    sub = np.array([rho_or_zero(panel, h, rows=rows).value for h in H])
    grid = np.unique(np.concatenate([[0.0], sub[sub <= gamma2], [gamma2]]))
    gamma_s, agree = 0.0, early_agreement(sub, full, gamma2, 0.0)
    for g in grid[::-1]:
        a = early_agreement(sub, full, gamma2, g)
        if a >= min_agreement:
            gamma_s, agree = float(g), a
            break
    return Thresholds(gamma1, gamma2, gamma_s, agree)

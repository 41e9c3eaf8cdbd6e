"""Deep multinomial-logit choice model with a variational mixed-type design model.

Designs are encoded to a Gaussian posterior ``q(h_d | x_d)``; a decoder maps
latent points back to per-block likelihoods (Gaussian for real blocks with a
shared isotropic variance, Bernoulli for binary, categorical softmax for
categorical). Consumers are embedded deterministically into the same latent
space and choose among designs by a softmax over ``h_c . h_d``.

Training maximizes the one-sample reparametrized lower bound

    log p(y | h_c, h_d) + log p(x_d | h_d) - kl_weight * KL(q(h_d | x_d) || N(0, I))

with the reconstruction and KL terms counted once per distinct design
chosen in the minibatch.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, Splits, VariableSchema, Block

log = logging.getLogger(__name__)

SIGMA_FLOOR = math.sqrt(ad.VARIANCE_FLOOR)
GROUPS = ("encoder", "decoder", "embedder")
_PREFIX = {"enc": "encoder", "dec": "decoder", "emb": "embedder"}


class NumericalError(FloatingPointError):
    """A loss term became non-finite."""


class TrainingDiverged(NumericalError):
    def __init__(self, message: str, last_good: "ChoiceModel", history: list):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 3
    encoder_hidden: Tuple[int, ...] = (64,)
    decoder_hidden: Tuple[int, ...] = (64,)
    embedder_hidden: Tuple[int, ...] = (64,)
    kl_weight: float = 1.0
    n_samples: int = 1
    epochs: int = 50
    batch_size: int = 128
    optimizer: str = "adam"
    lr_encoder: float = 3e-3
    lr_decoder: float = 3e-3
    lr_embedder: float = 3e-3
    freeze_encoder: bool = False
    freeze_decoder: bool = False
    freeze_embedder: bool = False
    seed: int = 0

    def __post_init__(self):
        for k in ("encoder_hidden", "decoder_hidden", "embedder_hidden"):
            object.__setattr__(self, k, tuple(int(v) for v in getattr(self, k)))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr(self, group: str) -> float:
        return getattr(self, f"lr_{group}")

    def frozen(self, group: str) -> bool:
        return getattr(self, f"freeze_{group}")


@dataclass
class ChoiceModel:
    """Parameters plus the cached latent matrix of the existing catalog.

    ``params`` maps names like ``"enc.0.W"`` to arrays; the prefix names the
    parameter group. ``H_d`` is K x D: column ``j`` is the encoder mean of
    catalog design ``catalog_ids[j]``.
    """

    config: ModelConfig
    design_schema: VariableSchema
    consumer_dim: int
    params: Dict[str, np.ndarray]
    catalog_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    catalog_X: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    H_d: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def K(self) -> int:
        return self.config.latent_dim

    def group(self, name: str) -> str:
        return _PREFIX[name.split(".", 1)[0]]

    def tensors(self) -> Dict[str, Tensor]:
        return {k: Tensor(v, name=k) for k, v in self.params.items()}

    def refresh_cache(self, X_enc: Optional[np.ndarray] = None,
                      ids: Optional[np.ndarray] = None) -> None:
        """Recompute ``H_d`` from the encoder means of the catalog."""
        if X_enc is not None:
            self.catalog_X = np.array(X_enc, dtype=np.float64)
            self.catalog_ids = np.array(ids, dtype=np.int64)
        mu, _ = encode_np(self, self.catalog_X)
        self.H_d = mu.T.copy()

    def copy(self) -> "ChoiceModel":
        return copy.deepcopy(self)


# -- construction ------------------------------------------------------------------------

def _layer_sizes(n_in: int, hidden: Sequence[int]) -> List[Tuple[int, int]]:
    sizes = [n_in, *hidden]
    return list(zip(sizes[:-1], sizes[1:]))


def init_model(cfg: ModelConfig, design_schema: VariableSchema, consumer_dim: int,
               rng: Optional[np.random.Generator] = None) -> ChoiceModel:
    """Glorot-style normal weights, zero biases."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    K = cfg.latent_dim
    p: Dict[str, np.ndarray] = {}

    def dense(name, n_in, n_out):
        p[f"{name}.W"] = rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), (n_in, n_out))
        p[f"{name}.b"] = np.zeros(n_out)

    def trunk(prefix, n_in, hidden):
        for i, (a, b) in enumerate(_layer_sizes(n_in, hidden)):
            dense(f"{prefix}.{i}", a, b)
        return hidden[-1] if hidden else n_in

    h = trunk("enc", design_schema.encoded_width, cfg.encoder_hidden)
    dense("enc.mu", h, K)
    dense("enc.sigma", h, K)
    p["enc.sigma.b"][:] = -1.0

    h = trunk("dec", K, cfg.decoder_hidden)
    n_real = len(design_schema.indices("real"))
    n_bin = len(design_schema.indices("binary"))
    if n_real:
        dense("dec.real", h, n_real)
        dense("dec.var", h, 1)
    if n_bin:
        dense("dec.bin", h, n_bin)
    for j, (_, card) in enumerate(design_schema.categorical):
        dense(f"dec.cat{j}", h, card)

    h = trunk("emb", consumer_dim, cfg.embedder_hidden)
    dense("emb.out", h, K)
    return ChoiceModel(cfg, design_schema, consumer_dim, p)


# -- graph builders -------------------------------------------------------------------------

def _trunk(x, P: Mapping[str, Tensor], prefix: str, n_hidden: int):
    for i in range(n_hidden):
        x = ad.tanh(x @ P[f"{prefix}.{i}.W"] + P[f"{prefix}.{i}.b"])
    return x


def encode_design(model: ChoiceModel, X_enc, P: Optional[Mapping[str, Tensor]] = None):
    """Gaussian posterior parameters ``(mu, sigma)`` for one-hot encoded designs.

    ``sigma = max(softplus(.), sqrt(1e-4))``.
    """
    P = P if P is not None else model.tensors()
    h = _trunk(ad.as_tensor(np.atleast_2d(X_enc)), P, "enc", len(model.config.encoder_hidden))
    mu = h @ P["enc.mu.W"] + P["enc.mu.b"]
    sigma = ad.clamped_softplus(h @ P["enc.sigma.W"] + P["enc.sigma.b"], SIGMA_FLOOR)
    return mu, sigma


def encode_np(model: ChoiceModel, X_enc) -> Tuple[np.ndarray, np.ndarray]:
    mu, sigma = encode_design(model, X_enc)
    return mu.value, sigma.value


@dataclass
class LatentSample:
    h: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray


def sample_latent(mu, sigma, rng: np.random.Generator) -> LatentSample:
    """One reparametrized draw ``h = mu + sigma * z`` with ``z ~ N(0, I)``."""
    mu, sigma = np.asarray(mu, float), np.asarray(sigma, float)
    z = rng.standard_normal(mu.shape)
    return LatentSample(mu + sigma * z, z, mu, sigma)


def decode_design(model: ChoiceModel, H, P: Optional[Mapping[str, Tensor]] = None) -> dict:
    """Per-block likelihood parameters (as logits / pre-activations) for latent rows ``H``.

    Keys: ``real_mean``, ``real_var_raw`` (variance is ``max(softplus, 1e-4)``),
    ``bin_logit``, ``cat_logits`` (one tensor per categorical block).
    """
    P = P if P is not None else model.tensors()
    h = _trunk(ad.as_tensor(np.atleast_2d(H) if not isinstance(H, Tensor) else H), P, "dec",
               len(model.config.decoder_hidden))
    out = {"cat_logits": []}
    if "dec.real.W" in P:
        out["real_mean"] = h @ P["dec.real.W"] + P["dec.real.b"]
        out["real_var_raw"] = h @ P["dec.var.W"] + P["dec.var.b"]
    if "dec.bin.W" in P:
        out["bin_logit"] = h @ P["dec.bin.W"] + P["dec.bin.b"]
    for j in range(len(model.design_schema.categorical)):
        out["cat_logits"].append(h @ P[f"dec.cat{j}.W"] + P[f"dec.cat{j}.b"])
    return out


def decoded_probabilities(decoded: dict) -> dict:
    """Turn decoder outputs into means / variances / probabilities (numpy)."""
    out = {}
    if "real_mean" in decoded:
        out["real_mean"] = decoded["real_mean"].value
        out["real_var"] = np.maximum(np.logaddexp(0.0, decoded["real_var_raw"].value),
                                     ad.VARIANCE_FLOOR)
    if "bin_logit" in decoded:
        out["bin_p"] = ad._sigmoid(decoded["bin_logit"].value)
    out["cat_p"] = [ad.softmax_np(t.value) for t in decoded["cat_logits"]]
    return out


def design_nll(schema: VariableSchema, x_blocks, decoded: dict) -> Tensor:
    """Summed negative log-likelihood of raw block rows ``x_blocks`` under ``decoded``."""
    x = np.atleast_2d(np.asarray(x_blocks, dtype=np.float64))
    terms = []
    real = schema.indices("real")
    if len(real):
        terms.append(ad.gaussian_nll(x[:, real], decoded["real_mean"], decoded["real_var_raw"]))
    binary = schema.indices("binary")
    if len(binary):
        terms.append(ad.bernoulli_nll(decoded["bin_logit"], x[:, binary]))
    for (col, _), logits in zip(schema.categorical, decoded["cat_logits"]):
        terms.append(ad.softmax_cross_entropy(logits, x[:, col].astype(np.intp)))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def design_loglik_rows(model: ChoiceModel, x_blocks: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Row-wise ``log p(x | h)`` in plain numpy (no graph); rows of ``x_blocks`` pair with ``H``."""
    schema = model.design_schema
    H = np.atleast_2d(H)
    n = len(H)
    x = np.broadcast_to(np.atleast_2d(x_blocks), (n, len(schema)))
    raw = decode_design(model, H)
    dec = decoded_probabilities(raw)
    ll = np.zeros(n)
    real = schema.indices("real")
    if len(real):
        var = dec["real_var"][:, 0]
        r = x[:, real] - dec["real_mean"]
        ll -= 0.5 * (len(real) * (ad.LOG_2PI + np.log(var)) + (r ** 2).sum(1) / var)
    binary = schema.indices("binary")
    if len(binary):
        logit = raw["bin_logit"].value
        ll -= (np.logaddexp(0.0, logit) - x[:, binary] * logit).sum(1)
    for (col, _), logits in zip(schema.categorical, raw["cat_logits"]):
        logp = ad.log_softmax_np(logits.value)
        ll += logp[np.arange(n), x[:, col].astype(np.intp)]
    return ll


def modal_decode(model: ChoiceModel, H: np.ndarray) -> np.ndarray:
    """Most probable block values for latent rows: real means, thresholded binaries,
    argmax categories (lowest index on ties)."""
    schema = model.design_schema
    H = np.atleast_2d(H)
    dec = decoded_probabilities(decode_design(model, H))
    x = np.zeros((len(H), len(schema)))
    real = schema.indices("real")
    if len(real):
        x[:, real] = dec["real_mean"]
    binary = schema.indices("binary")
    if len(binary):
        x[:, binary] = (dec["bin_p"] > 0.5).astype(float)
    for j, (col, _) in enumerate(schema.categorical):
        x[:, col] = np.argmax(dec["cat_p"][j], axis=1)
    return x


def embed_consumer(model: ChoiceModel, X_c, P: Optional[Mapping[str, Tensor]] = None):
    """Deterministic consumer embedding ``h_c`` (rows of K)."""
    P = P if P is not None else model.tensors()
    h = _trunk(ad.as_tensor(np.atleast_2d(X_c)), P, "emb", len(model.config.embedder_hidden))
    return h @ P["emb.out.W"] + P["emb.out.b"]


def embed_np(model: ChoiceModel, X_c) -> np.ndarray:
    return embed_consumer(model, X_c).value


def choice_logits(h_c, H_d):
    """Utilities ``h_c . H_d[:, d]``; ``H_d`` is K x D. Works on tensors or arrays."""
    if isinstance(h_c, Tensor) or isinstance(H_d, Tensor):
        return ad.matmul(h_c, H_d)
    return np.asarray(h_c) @ np.asarray(H_d)


def choice_prob(h_c, H_d) -> np.ndarray:
    return ad.softmax_np(np.atleast_2d(choice_logits(h_c, H_d)))


def kl_gauss(mu, sigma) -> Tensor:
    """``KL(N(mu, sigma^2) || N(0, I)) = 0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)``."""
    mu, sigma = ad.as_tensor(mu), ad.as_tensor(sigma)
    s2 = ad.square(sigma)
    inner = s2 + ad.square(mu) - 1.0 - ad.log(s2)
    return 0.5 * ad.reduce_sum(inner)


# -- objective ----------------------------------------------------------------------------

@dataclass
class Catalog:
    """Designs the choice softmax ranges over: one-hot inputs, raw blocks, ids."""

    X_enc: np.ndarray
    X_raw: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "Catalog":
        return cls(ds.X_d, np.array(ds.designs), np.array(ds.design_ids))


@dataclass
class Batch:
    X_c: np.ndarray       # (B, M_c)
    targets: np.ndarray   # (B,) positions into the catalog


@dataclass
class ElboTerms:
    loss: float
    choice_nll: float
    recon_nll: float
    kl: float


def elbo(model: ChoiceModel, catalog: Catalog, batch: Batch,
         rng: Optional[np.random.Generator] = None, z: Optional[np.ndarray] = None,
         P: Optional[Mapping[str, Tensor]] = None) -> Tuple[Tensor, ElboTerms]:
    """Negative lower bound for a minibatch and its three terms.

    ``z`` (shape ``(S, D, K)`` or ``(D, K)``) fixes the standard-normal draws
    for every catalog design; otherwise ``n_samples`` draws come from ``rng``.
    Reconstruction and KL cover the distinct designs chosen in the batch.

    Raises
    ------
    NumericalError
        If any term is non-finite; the message names the term.
    """
    cfg = model.config
    P = P if P is not None else model.tensors()
    D, K = len(catalog.ids), cfg.latent_dim
    if z is None:
        if rng is None:
            raise ValueError("elbo needs either rng or z")
        z = rng.standard_normal((cfg.n_samples, D, K))
    z = np.asarray(z, dtype=np.float64).reshape(-1, D, K)
    S = z.shape[0]

    touched = np.unique(batch.targets)
    mu, sigma = encode_design(model, catalog.X_enc, P)
    h_c = embed_consumer(model, batch.X_c, P)

    choice = recon = None
    for s in range(S):
        H = mu + sigma * z[s]
        c = ad.softmax_cross_entropy(choice_logits(h_c, H.T), batch.targets)
        r = design_nll(model.design_schema, catalog.X_raw[touched],
                       decode_design(model, ad.rows(H, touched), P))
        choice = c if choice is None else choice + c
        recon = r if recon is None else recon + r
    if S > 1:
        choice, recon = choice * (1.0 / S), recon * (1.0 / S)
    kl = kl_gauss(ad.rows(mu, touched), ad.rows(sigma, touched))
    loss = choice + recon + cfg.kl_weight * kl if cfg.kl_weight else choice + recon

    terms = ElboTerms(loss.item(), choice.item(), recon.item(), kl.item())
    for name in ("choice_nll", "recon_nll", "kl", "loss"):
        if not math.isfinite(getattr(terms, name)):
            raise NumericalError(f"non-finite ELBO term: {name}")
    return loss, terms


# -- evaluation helpers used by training ------------------------------------------------------

def rank_designs(probs: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Catalog positions per row ordered by descending probability, ties to lower id."""
    probs = np.atleast_2d(probs)
    tiebreak = np.broadcast_to(np.asarray(ids), probs.shape)
    return np.stack([np.lexsort((tiebreak[i], -probs[i])) for i in range(len(probs))])


def topk_hits(probs: np.ndarray, ids: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    ranked = rank_designs(probs, ids)[:, :k]
    return (ranked == np.asarray(targets)[:, None]).any(axis=1)


def existing_top1(model: ChoiceModel, ds: Dataset) -> float:
    """Top-1 of ``ds``'s events against the model's cached catalog."""
    if len(ds.events) == 0:
        return float("nan")
    crow, _ = ds.event_arrays()
    tgt = _positions_in(model.catalog_ids, ds.events[:, 1])
    probs = choice_prob(embed_np(model, ds.X_c[crow]), model.H_d)
    return float(topk_hits(probs, model.catalog_ids, tgt, 1).mean())


def _positions_in(ids: np.ndarray, wanted: np.ndarray) -> np.ndarray:
    lookup = {int(d): i for i, d in enumerate(ids)}
    return np.array([lookup[int(w)] for w in wanted], dtype=np.intp)


# -- training ---------------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    choice_nll: float
    recon_nll: float
    kl: float
    val_top1: float


def write_training_log(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in fields(EpochRecord)])
        for r in history:
            w.writerow([r.epoch] + [repr(float(getattr(r, f.name))) for f in fields(r)[1:]])


def train(splits: Splits, cfg: ModelConfig,
          model: Optional[ChoiceModel] = None) -> Tuple[ChoiceModel, List[EpochRecord]]:
    """Minibatch training on ``splits.train``; returns the best-validation snapshot.

    Seeds for initialization, shuffling and latent draws are all derived from
    ``cfg.seed``. Validation Top-1 on ``splits.val`` is recorded each epoch
    after the latent cache is refreshed; ties keep the earlier epoch.

    Raises
    ------
    TrainingDiverged
        If the loss becomes non-finite; carries the last good snapshot.
    """
    tr = splits.train
    init_rng, shuffle_rng, z_rng = [np.random.default_rng(s) for s in
                                    np.random.SeedSequence(cfg.seed).spawn(3)]
    if model is None:
        model = init_model(cfg, tr.design_schema, tr.X_c.shape[1], init_rng)
    else:
        model = model.copy()
        model.config = cfg
    catalog = Catalog.from_dataset(tr)
    model.refresh_cache(catalog.X_enc, catalog.ids)
    crow, drow = tr.event_arrays()
    if len(crow) == 0:
        raise ValueError("training split has no events")

    state = ad.OptimizerState(kind=cfg.optimizer, lr=lambda n: cfg.lr(model.group(n)))
    frozen = [n for n in model.params if cfg.frozen(model.group(n))]

    history: List[EpochRecord] = []
    best, best_val = model.copy(), -np.inf
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(crow))
        sums = np.zeros(4)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            P = model.tensors()
            try:
                loss, terms = elbo(model, catalog, Batch(tr.X_c[crow[idx]], drow[idx]),
                                   rng=z_rng, P=P)
            except NumericalError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", best, history) from exc
            ad.backward(loss)
            ad.opt_step(state, model.params, {k: t.grad for k, t in P.items()}, frozen)
            sums += (terms.loss, terms.choice_nll, terms.recon_nll, terms.kl)
        if not all(np.isfinite(v).all() for v in model.params.values()):
            raise TrainingDiverged(f"epoch {epoch}: non-finite parameters", best, history)
        model.refresh_cache()
        val = existing_top1(model, splits.val)
        history.append(EpochRecord(epoch, *sums.tolist(), val))
        log.debug("epoch %d loss %.3f val_top1 %.4f", epoch, sums[0], val)
        if np.isnan(val) or val > best_val:
            best, best_val = model.copy(), (val if not np.isnan(val) else best_val)
    return best, history


# -- checkpoints ----------------------------------------------------------------------------------

MAGIC = b"DGAPCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_array(buf: io.BytesIO, name: str, a: np.ndarray) -> None:
    nb = name.encode()
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(struct.pack("<I", len(nb)) + nb)
    buf.write(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
    buf.write(a.tobytes())


def _unpack_array(buf: io.BytesIO) -> Tuple[str, np.ndarray]:
    (n,) = struct.unpack("<I", buf.read(4))
    name = buf.read(n).decode()
    (ndim,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(buf.read(8 * count), dtype="<f8").astype(np.float64)
    return name, data.reshape(shape)


def save_checkpoint(model: ChoiceModel, path) -> None:
    """Binary checkpoint: magic, version, K, schema digest, JSON header, named arrays.

    Arrays are length-prefixed little-endian float64 records.
    """
    header = json.dumps({
        "config": asdict(model.config),
        "design_schema": [asdict(b) for b in model.design_schema.blocks],
        "consumer_dim": model.consumer_dim,
    }, sort_keys=True).encode()
    digest = model.design_schema.digest().encode()
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, model.K))
    buf.write(struct.pack("<I", len(digest)) + digest)
    buf.write(struct.pack("<I", len(header)) + header)
    arrays = dict(sorted(model.params.items()))
    arrays["cache.catalog_ids"] = model.catalog_ids.astype(np.float64)
    arrays["cache.catalog_X"] = model.catalog_X
    arrays["cache.H_d"] = model.H_d
    buf.write(struct.pack("<I", len(arrays)))
    for k, v in arrays.items():
        _pack_array(buf, k, v)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, verify_cache: bool = True) -> ChoiceModel:
    """Read a checkpoint written by :func:`save_checkpoint`.

    With ``verify_cache`` the stored ``H_d`` is compared against a fresh
    encoding of the stored catalog inputs.
    """
    buf = io.BytesIO(Path(path).read_bytes())
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, K = struct.unpack("<II", buf.read(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", buf.read(4))
    digest = buf.read(n).decode()
    (n,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(n).decode())
    schema = VariableSchema(tuple(Block(**b) for b in header["design_schema"]))
    if schema.digest() != digest:
        raise CheckpointError("schema digest mismatch")
    cfg = ModelConfig(**header["config"])
    if cfg.latent_dim != K:
        raise CheckpointError("latent dimension mismatch between header and config")
    (count,) = struct.unpack("<I", buf.read(4))
    arrays = dict(_unpack_array(buf) for _ in range(count))
    model = ChoiceModel(cfg, schema, int(header["consumer_dim"]),
                        {k: v for k, v in arrays.items() if not k.startswith("cache.")},
                        arrays["cache.catalog_ids"].astype(np.int64),
                        arrays["cache.catalog_X"], arrays["cache.H_d"])
    if verify_cache and model.catalog_X.size:
        mu, _ = encode_np(model, model.catalog_X)
        if not np.array_equal(mu.T, model.H_d):
            raise CheckpointError("cached H_d does not match the encoder")
    return model


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]

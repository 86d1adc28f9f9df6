"""Desk-scale variational recommender: linear Gaussian encoder, softmax decoder over item embeddings.

The reconstruction term is either the exact multinomial log-likelihood
(``sampler_kind="full"``) or sampled softmax with negatives drawn from one of
the proposals in :mod:`midx.samplers` and logits corrected by ``-log Q``.
Gradients are derived by hand; ``tests/test_gradients.py`` checks every path
against central finite differences.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import logsumexp

from . import samplers as smp
from .dataset import InteractionDataset, popularity_vector
from .quantizer import build_index, rebuild

SAMPLER_KINDS = ("exact", "uni", "pop", "uniform", "popularity", "full")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, trace):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch
        self.trace = trace


@dataclass
class TrainConfig:
    latent_dim: int = 32
    codebook_size: int = 16
    sample_count: int = 200
    sampler_kind: str = "uni"
    mc_draws: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 200
    index_rebuild_interval: int = 1
    input_dropout_prob: float = 0.5
    seed: int = 0
    pop_function: str = "log1p"
    beta: float = 1.0
    normalize_input: bool = False
    eval_k: int = 10
    kmeans_iters: int = 20
    init_scale: float = 0.1

    def __post_init__(self):
        if self.sampler_kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler_kind must be one of {SAMPLER_KINDS}, got {self.sampler_kind!r}")
        if self.sampler_kind != "full" and self.sample_count < 1:
            raise ValueError("sample_count must be >= 1 for sampled training")
        if self.sampler_kind in smp.MIDX_KINDS and self.latent_dim % 2:
            raise ValueError("latent_dim must be even for MIDX samplers")
        if self.mc_draws < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("mc_draws and batch_size must be positive, epochs non-negative")
        if not 0.0 <= self.input_dropout_prob < 1.0:
            raise ValueError("input_dropout_prob must lie in [0, 1)")
        if self.index_rebuild_interval < 1:
            raise ValueError("index_rebuild_interval must be >= 1")

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


@dataclass
class ModelParams:
    item_emb: np.ndarray  # (M, D)
    w_mu: np.ndarray  # (M, D)
    b_mu: np.ndarray  # (D,)
    w_logvar: np.ndarray
    b_logvar: np.ndarray

    NAMES = ("item_emb", "w_mu", "b_mu", "w_logvar", "b_logvar")

    @classmethod
    def init(cls, num_items, dim, rng, scale=0.1):
        enc = np.sqrt(2.0 / (num_items + dim))
        return cls(
            item_emb=rng.normal(0.0, scale, (num_items, dim)),
            w_mu=rng.normal(0.0, enc, (num_items, dim)),
            b_mu=np.zeros(dim),
            w_logvar=rng.normal(0.0, enc, (num_items, dim)),
            b_logvar=np.zeros(dim),
        )

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in self.NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: v.copy() for n, v in self.as_dict().items()})

    def save(self, path) -> None:
        np.savez(path, **self.as_dict())

    @classmethod
    def load(cls, path) -> "ModelParams":
        with np.load(path) as f:
            return cls(**{n: f[n] for n in cls.NAMES})


@dataclass
class EpochStats:
    epoch: int
    loss: float
    ndcg: float
    recall: float
    sample_time_ms: float
    train_time_ms: float


@dataclass
class EvalReport:
    k: int
    ndcg: float
    recall: float
    trace: list = field(default_factory=list)

    def trace_rows(self):
        return [asdict(s) for s in self.trace]


# -- encoder and KL --------------------------------------------------------

def encode(y, params: ModelParams, rng=None, dropout_prob: float = 0.0, train: bool = True):
    """Map history vector(s) to (mu, logvar, z, h).

    Training applies inverted dropout to the input and draws
    ``z = mu + exp(logvar / 2) * eps``; ``train=False`` returns ``z = mu``.
    ``h`` is the (possibly dropped-out) input the linear maps saw.
    """
    y = np.asarray(y, dtype=np.float64)
    h = y
    if train and dropout_prob > 0.0:
        keep = rng.random(y.shape) >= dropout_prob
        h = y * keep / (1.0 - dropout_prob)
    mu = h @ params.w_mu + params.b_mu
    logvar = h @ params.w_logvar + params.b_logvar
    if not train:
        return mu, logvar, mu.copy(), h
    eps = rng.standard_normal(mu.shape)
    return mu, logvar, mu + np.exp(0.5 * logvar) * eps, h


def kl_gaussian(mu, logvar) -> float:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dimensions (and rows)."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(-0.5 * np.sum(logvar - mu ** 2 - np.exp(logvar) + 1.0))


def kl_gaussian_grad(mu, logvar):
    return np.asarray(mu, dtype=np.float64).copy(), 0.5 * (np.exp(logvar) - 1.0)


# -- reconstruction terms --------------------------------------------------

def full_softmax_term(z, positives, item_emb):
    """Negative multinomial log-likelihood over all items.

    Returns ``(loss, dz, d_item_emb)`` where ``d_item_emb`` is dense (M, D).
    """
    z = np.asarray(z, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.int64)
    logits = item_emb @ z
    lse = logsumexp(logits)
    loss = float(len(positives) * lse - logits[positives].sum())
    p = np.exp(logits - lse)
    dlogits = len(positives) * p
    np.add.at(dlogits, positives, -1.0)
    return loss, item_emb.T @ dlogits, np.outer(dlogits, z)


def full_softmax_batch(z, y, item_emb):
    """Batched :func:`full_softmax_term`; ``y`` is the (B, M) 0/1 positive matrix."""
    logits = z @ item_emb.T
    lse = logsumexp(logits, axis=1)
    n_pos = y.sum(axis=1)
    losses = n_pos * lse - np.sum(y * logits, axis=1)
    dlogits = n_pos[:, None] * np.exp(logits - lse[:, None]) - y
    return losses, dlogits @ item_emb, dlogits.T @ z


def sampled_softmax_term(z, positives, pos_log_q, samples, item_emb, normalize_over: str = "union"):
    """Sampled softmax with ``-log Q`` logit correction.

    For every positive ``i`` the softmax runs over ``{i} + samples`` (the
    default, ``normalize_over="union"``). ``"samples"`` instead normalises
    over the drawn set only, which is the self-normalised importance
    sampling estimate of the log-partition.

    Returns ``(loss, dz, rows, d_rows)``: the item-embedding gradient is
    non-zero only on ``rows``.
    """
    z = np.asarray(z, dtype=np.float64)
    positives = np.asarray(positives, dtype=np.int64)
    pos_log_q = np.asarray(pos_log_q, dtype=np.float64)
    neg = np.asarray(samples.items, dtype=np.int64)
    neg_log_q = np.asarray(samples.log_q, dtype=np.float64)
    if len(neg) == 0:
        raise ValueError("sampled softmax needs at least one sample")
    if not (np.all(np.isfinite(pos_log_q)) and np.all(np.isfinite(neg_log_q))):
        raise ValueError("log_q must be finite for positives and samples")

    o_pos = item_emb[positives] @ z
    o_neg = item_emb[neg] @ z
    c_neg = o_neg - neg_log_q
    if normalize_over == "union":
        c_pos = o_pos - pos_log_q
        table = np.concatenate([c_pos[:, None], np.broadcast_to(c_neg, (len(positives), len(neg)))], axis=1)
        lse = logsumexp(table, axis=1)
        loss = float(np.sum(lse - c_pos))
        w = np.exp(table - lse[:, None])
        d_pos = w[:, 0] - 1.0
        d_neg = w[:, 1:].sum(axis=0)
    elif normalize_over == "samples":
        lse = logsumexp(c_neg) - np.log(len(neg))
        loss = float(np.sum(lse - o_pos))
        d_pos = -np.ones(len(positives))
        d_neg = len(positives) * np.exp(c_neg - logsumexp(c_neg))
    else:
        raise ValueError(f"normalize_over must be 'union' or 'samples', got {normalize_over!r}")
    rows = np.concatenate([positives, neg])
    dlogit = np.concatenate([d_pos, d_neg])
    dz = dlogit @ item_emb[rows]
    return loss, dz, rows, np.outer(dlogit, z)


# -- metrics ---------------------------------------------------------------

def ranking_metrics(scores, holdout, exclude=(), k: int = 10):
    """NDCG@k (log2 discount, ideal DCG over min(k, |holdout|)) and Recall@k (hits / |holdout|)."""
    scores = np.asarray(scores, dtype=np.float64).copy()
    holdout = np.asarray(holdout, dtype=np.int64)
    if len(exclude):
        scores[np.asarray(exclude, dtype=np.int64)] = -np.inf
    k = min(k, len(scores))
    top = np.argpartition(-scores, k - 1)[:k]
    top = top[np.lexsort((top, -scores[top]))]
    hits = np.isin(top, holdout)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(discounts[hits].sum())
    idcg = float(discounts[:min(k, len(holdout))].sum())
    return dcg / idcg, float(hits.sum()) / len(holdout)


def evaluate(params: ModelParams, ds: InteractionDataset, k: int = 10, trace=()) -> EvalReport:
    """Rank all items by z . q with z = mu(train history); train items are masked out."""
    users = [u for u in range(ds.num_users) if len(ds.holdout[u])]
    if not users:
        raise ValueError("no user has held-out items to evaluate")
    y = np.zeros((len(users), ds.num_items))
    for r, u in enumerate(users):
        y[r, ds.train[u]] = 1.0
    mu, _, _, _ = encode(y, params, train=False)
    scores = mu @ params.item_emb.T
    ndcg = recall = 0.0
    for r, u in enumerate(users):
        n, rc = ranking_metrics(scores[r], ds.holdout[u], ds.train[u], k)
        ndcg += n
        recall += rc
    return EvalReport(k=k, ndcg=ndcg / len(users), recall=recall / len(users), trace=list(trace))


# -- optimisation ----------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay over a dict of arrays."""

    def __init__(self, lr=1e-3, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1 / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p)


class _Proposal:
    """Keeps the index and shared cell tables in step with the item embeddings."""

    def __init__(self, cfg: TrainConfig, ds: InteractionDataset):
        self.cfg = cfg
        self.kind = cfg.sampler_kind
        self.index = None
        self.cells = None
        self.pop = None
        self.static = None
        if self.kind in ("pop", "popularity"):
            self.pop = popularity_vector(ds, cfg.pop_function)
        if self.kind in smp.STATIC_KINDS:
            self.static = smp.static_sampler(self.kind, ds.num_items, self.pop)

    def refresh(self, item_emb):
        if self.kind not in smp.MIDX_KINDS:
            return
        if self.index is None:
            self.index = build_index(item_emb, self.cfg.codebook_size, seed=self.cfg.seed, iters=self.cfg.kmeans_iters)
        else:
            self.index = rebuild(self.index, item_emb, iters=self.cfg.kmeans_iters)
        if self.kind == "uni":
            self.cells = smp.uniform_cell_tables(self.index)
        elif self.kind == "pop":
            self.cells = smp.popularity_cell_tables(self.index, self.pop)

    def context(self, z):
        return smp.prepare(self.kind, z, self.index, self.cells, self.pop, static=self.static)


def batch_loss_and_grads(params: ModelParams, y, positives, cfg: TrainConfig, rng, proposal=None):
    """Mean per-user loss of one mini-batch and gradients for every parameter.

    ``y`` is the (B, M) train history, ``positives`` the per-user item arrays.
    Returns ``(loss, grads, sample_seconds)``.
    """
    b = len(y)
    h_in = y / np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12) if cfg.normalize_input else y
    mu, logvar, _, h = encode(h_in, params, rng, cfg.input_dropout_prob, train=True)
    std = np.exp(0.5 * logvar)
    d_item = np.zeros_like(params.item_emb)
    dmu = np.zeros_like(mu)
    dlogvar = np.zeros_like(logvar)
    recon = np.zeros(b)
    sample_seconds = 0.0
    s_draws = cfg.mc_draws
    for _ in range(s_draws):
        eps = rng.standard_normal(mu.shape)
        z = mu + std * eps
        if cfg.sampler_kind == "full":
            losses, dz, dq = full_softmax_batch(z, y, params.item_emb)
            d_item += dq
        else:
            losses = np.zeros(b)
            dz = np.zeros_like(z)
            for r in range(b):
                t0 = time.perf_counter()
                ctx = proposal.context(z[r])
                draws = smp.sample_batch(ctx, cfg.sample_count, rng)
                pos_lq = ctx.log_prob(positives[r])
                sample_seconds += time.perf_counter() - t0
                losses[r], dz[r], rows, d_rows = sampled_softmax_term(
                    z[r], positives[r], pos_lq, draws, params.item_emb)
                np.add.at(d_item, rows, d_rows)
        recon += losses
        dmu += dz
        dlogvar += dz * eps * 0.5 * std
    recon /= s_draws
    dmu /= s_draws
    dlogvar /= s_draws
    kl_dmu, kl_dlv = kl_gaussian_grad(mu, logvar)
    kl_rows = -0.5 * np.sum(logvar - mu ** 2 - np.exp(logvar) + 1.0, axis=1)
    loss = float(np.mean(recon + cfg.beta * kl_rows))
    dmu = (dmu + cfg.beta * kl_dmu) / b
    dlogvar = (dlogvar + cfg.beta * kl_dlv) / b
    grads = {
        "item_emb": d_item / (b * s_draws),
        "w_mu": h.T @ dmu,
        "b_mu": dmu.sum(axis=0),
        "w_logvar": h.T @ dlogvar,
        "b_logvar": dlogvar.sum(axis=0),
    }
    return loss, grads, sample_seconds


def train(ds: InteractionDataset, cfg: TrainConfig, params: ModelParams | None = None, eval_every: int = 1):
    """Mini-batch AdamW training. Returns ``(params, EvalReport)`` with a per-epoch trace."""
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = ModelParams.init(ds.num_items, cfg.latent_dim, rng, cfg.init_scale)
    y_all = ds.train_matrix()
    users = np.array([u for u in range(ds.num_users) if len(ds.train[u])], dtype=np.int64)
    opt = AdamW(cfg.learning_rate, cfg.weight_decay)
    proposal = _Proposal(cfg, ds)
    has_holdout = any(len(h) for h in ds.holdout)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        t_epoch = time.perf_counter()
        sample_s = 0.0
        if (epoch - 1) % cfg.index_rebuild_interval == 0:
            t0 = time.perf_counter()
            proposal.refresh(params.item_emb)
            sample_s += time.perf_counter() - t0
        order = rng.permutation(users)
        total, seen = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            loss, grads, s = batch_loss_and_grads(
                params, y_all[batch], [ds.train[u] for u in batch], cfg, rng, proposal)
            sample_s += s
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, trace)
            opt.step(params.as_dict(), grads)
            total += loss * len(batch)
            seen += len(batch)
        train_ms = 1000.0 * (time.perf_counter() - t_epoch)
        ndcg = recall = float("nan")
        if has_holdout and (epoch % eval_every == 0 or epoch == cfg.epochs):
            rep = evaluate(params, ds, cfg.eval_k)
            ndcg, recall = rep.ndcg, rep.recall
        trace.append(EpochStats(epoch, total / max(seen, 1), ndcg, recall, 1000.0 * sample_s, train_ms))
    if has_holdout:
        final = evaluate(params, ds, cfg.eval_k, trace)
    else:
        final = EvalReport(cfg.eval_k, float("nan"), float("nan"), trace)
    return params, final

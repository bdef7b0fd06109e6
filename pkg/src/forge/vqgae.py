"""Vector-quantised graph autoencoder over bipartite MIP graphs.

Pipeline per graph: two GraphSAGE-style layers produce node embeddings ``H``;
each row is snapped to its nearest codeword; a linear node decoder and a
linear edge decoder reconstruct the features and the adjacency from the
codewords.

Gradient routing follows the usual VQ-VAE split:

* reconstruction terms reach the encoder through the straight-through copy
  and never touch the codebook;
* the codebook term ``mean ||sg[h] - cw||^2`` moves only codewords;
* the commitment term ``alpha * mean ||sg[cw] - h||^2`` moves only the encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .bigraph import N_FEATURES, BipartiteGraph
from .diffcore import Tensor

log = logging.getLogger(__name__)

EDGE_MODES = ("sampled", "dense_bce", "dense_mse")


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class EncoderParams:
    w_self1: Tensor
    w_nbr1: Tensor
    b1: Tensor
    w_self2: Tensor
    w_nbr2: Tensor
    b2: Tensor
    # mean over {i} ∪ N(i) instead of N(i) alone; keeps degree visible to the encoder
    include_self: bool = True

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, d_in: int = N_FEATURES,
             include_self: bool = True) -> "EncoderParams":
        p = dc.parameter
        return cls(p(_glorot(rng, d_in, d), "enc.w_self1"), p(_glorot(rng, d_in, d), "enc.w_nbr1"),
                   p(np.zeros(d), "enc.b1"),
                   p(_glorot(rng, d, d), "enc.w_self2"), p(_glorot(rng, d, d), "enc.w_nbr2"),
                   p(np.zeros(d), "enc.b2"), include_self)

    @property
    def d(self) -> int:
        return self.w_self1.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.w_self1, self.w_nbr1, self.b1, self.w_self2, self.w_nbr2, self.b2]


@dataclass
class Codebook:
    weights: Tensor                      # (k, d)
    usage: np.ndarray = None             # assignments since the last reset

    def __post_init__(self):
        if self.weights.shape[0] < 2:
            raise ValueError("codebook needs at least two codes")
        if self.usage is None:
            self.usage = np.zeros(self.weights.shape[0], dtype=np.int64)

    @classmethod
    def init(cls, k: int, d: int, rng: np.random.Generator, scale: float = 1.0) -> "Codebook":
        return cls(dc.parameter(rng.normal(0.0, scale, size=(k, d)), "codebook"))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.weights]


@dataclass
class DecoderParams:
    w_feat: Tensor
    b_feat: Tensor
    w_edge: Tensor
    b_edge: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, d_edge: int | None = None) -> "DecoderParams":
        d_edge = d if d_edge is None else d_edge
        p = dc.parameter
        return cls(p(_glorot(rng, d, N_FEATURES), "dec.w_feat"), p(np.zeros(N_FEATURES), "dec.b_feat"),
                   p(_glorot(rng, d, d_edge), "dec.w_edge"), p(np.zeros(d_edge), "dec.b_edge"))

    def tensors(self) -> list[Tensor]:
        return [self.w_feat, self.b_feat, self.w_edge, self.b_edge]


@dataclass
class LossBreakdown:
    edge_recon: float
    feat_recon: float
    codebook: float
    commitment: float
    total: float
    alpha: float

    def as_dict(self) -> dict:
        return {"edge_recon": self.edge_recon, "feat_recon": self.feat_recon,
                "codebook": self.codebook, "commitment": self.commitment,
                "total": self.total}


@dataclass
class Quantized:
    codes: np.ndarray
    cw: Tensor                 # straight-through codewords fed to the decoders
    codebook_loss: Tensor
    commitment_loss: Tensor


@dataclass
class LossTerms:
    """Differentiable pieces of the objective plus intermediate values."""

    total: Tensor
    edge_recon: Tensor
    feat_recon: Tensor
    codebook: Tensor
    commitment: Tensor
    H: Tensor
    quantized: Quantized
    alpha: float

    def breakdown(self) -> LossBreakdown:
        parts = [float(t.value) for t in (self.edge_recon, self.feat_recon, self.codebook, self.commitment)]
        return LossBreakdown(*parts, total=float(self.total.value), alpha=self.alpha)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _sage_layer(h: Tensor, graph: BipartiteGraph, w_self, w_nbr, b, include_self: bool) -> Tensor:
    tgt, src, w = graph.neighbor_index()
    n = graph.n_nodes
    msgs = dc.mul(dc.gather_rows(h, src), w[:, None])
    if include_self:
        agg = dc.segment_mean(dc.concat([msgs, h]), np.concatenate([tgt, np.arange(n)]), n)
    else:
        agg = dc.segment_mean(msgs, tgt, n)
    return dc.add(dc.add(dc.matmul(h, w_self), dc.matmul(agg, w_nbr)), b)


def encode(graph: BipartiteGraph, params: EncoderParams) -> Tensor:
    """Node embeddings ``H`` (N x d): relu after layer 1, linear layer 2."""
    x = Tensor(graph.node_features)
    h = dc.relu(_sage_layer(x, graph, params.w_self1, params.w_nbr1, params.b1, params.include_self))
    return _sage_layer(h, graph, params.w_self2, params.w_nbr2, params.b2, params.include_self)


def assign_codes(h: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Nearest codeword per row; ties resolve to the lowest index."""
    d2 = (h * h).sum(1)[:, None] - 2.0 * h @ codewords.T + (codewords * codewords).sum(1)[None, :]
    return np.argmin(d2, axis=1)


def quantize(H: Tensor, codebook: Codebook, alpha: float = 0.25) -> Quantized:
    codes = assign_codes(H.value, codebook.weights.value)
    n = max(H.shape[0], 1)
    cw_rows = dc.gather_rows(codebook.weights, codes)
    cb_loss = dc.mul(dc.sum(dc.square(dc.sub(dc.stop_gradient(H), cw_rows))), 1.0 / n)
    commit = dc.mul(dc.sum(dc.square(dc.sub(dc.stop_gradient(cw_rows), H))), alpha / n)
    cw = dc.straight_through(H, cw_rows.value)
    return Quantized(codes, cw, cb_loss, commit)


def sample_negative_edges(graph: BipartiteGraph, count: int, rng: np.random.Generator):
    """``count`` uniform constraint/variable pairs that are not edges (with replacement)."""
    m, n = graph.n_constraints, graph.n_variables
    total = m * n
    edge_ids = np.unique(graph.edge_con * n + (graph.edge_var - m))
    if count == 0 or total - len(edge_ids) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    picked = np.zeros(0, dtype=np.int64)
    while len(picked) < count:
        cand = rng.integers(0, total, size=2 * (count - len(picked)) + 8)
        cand = cand[~np.isin(cand, edge_ids)]
        picked = np.concatenate([picked, cand])
    picked = picked[:count]
    return picked // n, picked % n + m


def _pair_logits(z: Tensor, rows, cols) -> Tensor:
    return dc.rowdot(dc.gather_rows(z, rows), dc.gather_rows(z, cols))


def edge_loss(z: Tensor, graph: BipartiteGraph, rng: np.random.Generator | None,
              mode: str = "sampled", negative_ratio: float = 1.0) -> Tensor:
    m, n = graph.n_constraints, graph.n_variables
    if graph.n_edges == 0:
        log.warning("graph %s has no edges; edge reconstruction loss is 0", graph.name)
        return Tensor(np.array(0.0))
    if mode == "sampled":
        neg_c, neg_v = sample_negative_edges(graph, int(round(negative_ratio * graph.n_edges)), rng)
        rows = np.concatenate([graph.edge_con, neg_c])
        cols = np.concatenate([graph.edge_var, neg_v])
        targets = np.concatenate([np.ones(graph.n_edges), np.zeros(len(neg_c))])
        return dc.bce_with_logits(_pair_logits(z, rows, cols), targets)
    if graph.n_nodes > 200:
        raise ValueError("dense edge modes are limited to graphs with at most 200 nodes")
    cc, vv = np.meshgrid(np.arange(m), np.arange(m, m + n), indexing="ij")
    rows, cols = cc.ravel(), vv.ravel()
    target = np.zeros((m, n))
    target[graph.edge_con, graph.edge_var - m] = 1.0
    target = target.ravel()
    if mode == "dense_bce":
        # class-balanced: matches the expectation of the sampled estimator
        n_pos = target.sum()
        n_neg = len(target) - n_pos
        w = np.where(target > 0, 0.5 / n_pos, 0.5 / n_neg if n_neg else 0.0)
        return dc.bce_with_logits(_pair_logits(z, rows, cols), target, weights=w)
    if mode == "dense_mse":
        # literal (A - Z Z^T)^2 over all node pairs with the symmetric adjacency
        N = graph.n_nodes
        A = np.zeros((N, N))
        A[graph.edge_con, graph.edge_var] = 1.0
        A[graph.edge_var, graph.edge_con] = 1.0
        return dc.mse(dc.matmul(z, dc.transpose(z)), A)
    raise ValueError(f"unknown edge mode {mode!r}")


def decode_and_losses(cw: Tensor, graph: BipartiteGraph, dec: DecoderParams,
                      rng: np.random.Generator | None = None, edge_mode: str = "sampled",
                      negative_ratio: float = 1.0):
    """Returns ``(X_hat, edge_recon, feat_recon)`` as tensors."""
    x_hat = dc.add(dc.matmul(cw, dec.w_feat), dec.b_feat)
    n = max(graph.n_nodes, 1)
    feat = dc.mul(dc.sum(dc.square(dc.sub(x_hat, graph.node_features))), 1.0 / n)
    z = dc.add(dc.matmul(cw, dec.w_edge), dec.b_edge)
    edge = edge_loss(z, graph, rng, edge_mode, negative_ratio)
    return x_hat, edge, feat


def loss_terms(graph: BipartiteGraph, enc: EncoderParams, codebook: Codebook, dec: DecoderParams,
               alpha: float = 0.25, rng: np.random.Generator | None = None,
               edge_mode: str = "sampled", negative_ratio: float = 1.0) -> LossTerms:
    rng = np.random.default_rng(0) if rng is None else rng
    H = encode(graph, enc)
    q = quantize(H, codebook, alpha)
    _, edge, feat = decode_and_losses(q.cw, graph, dec, rng, edge_mode, negative_ratio)
    total = dc.add(dc.add(edge, feat), dc.add(q.codebook_loss, q.commitment_loss))
    return LossTerms(total, edge, feat, q.codebook_loss, q.commitment_loss, H, q, alpha)


def total_loss(graph, enc, codebook, dec, alpha: float = 0.25, rng=None,
               edge_mode: str = "sampled") -> LossBreakdown:
    return loss_terms(graph, enc, codebook, dec, alpha, rng, edge_mode).breakdown()


@dataclass
class ForgeModel:
    """Encoder, codebook and decoders travelling together."""

    encoder: EncoderParams
    codebook: Codebook
    decoder: DecoderParams
    alpha: float = 0.25
    edge_mode: str = "sampled"
    heads: dict = field(default_factory=dict)

    @classmethod
    def init(cls, d: int, k: int, seed: int, alpha: float = 0.25, include_self: bool = True,
             d_edge: int | None = None) -> "ForgeModel":
        rng = np.random.default_rng(seed)
        enc = EncoderParams.init(d, rng, include_self=include_self)
        dec = DecoderParams.init(d, rng, d_edge)
        return cls(enc, Codebook.init(k, d, rng), dec, alpha)

    @property
    def d(self) -> int:
        return self.encoder.d

    @property
    def k(self) -> int:
        return self.codebook.k

    def parameters(self) -> list[Tensor]:
        return self.encoder.tensors() + self.codebook.tensors() + self.decoder.tensors()

    def loss_terms(self, graph: BipartiteGraph, rng=None) -> LossTerms:
        return loss_terms(graph, self.encoder, self.codebook, self.decoder, self.alpha, rng, self.edge_mode)

    def encode(self, graph: BipartiteGraph) -> np.ndarray:
        return encode(graph, self.encoder).value

    def codes(self, graph: BipartiteGraph) -> np.ndarray:
        return assign_codes(self.encode(graph), self.codebook.weights.value)

"""Supervised heads on top of a pre-trained checkpoint.

Gap head: mean of the node codewords -> MLP -> ``1 + s * softplus(raw)`` with
``s = +1`` for minimisation and ``-1`` for maximisation, so the prediction sits
on the same side of 1 as every attainable label.

Guidance head: per variable codeword -> MLP -> sigmoid, trained with binary
cross-entropy plus a margin-2 triplet hinge whose negatives are mined in the
unsupervised codeword space.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import roc_auc_score

from . import diffcore as dc
from .bigraph import BipartiteGraph
from .mipmodel import MipInstance, add_pseudo_cut
from .minisolve import MipSolution, solve_lp
from .trainer import Checkpoint
from .vqgae import ForgeModel, encode, quantize

log = logging.getLogger(__name__)

TRIPLET_MARGIN = 2.0
POSITIVES_PER_ANCHOR = 4
MAX_TRIPLETS = 10_000
MIN_POOL = 5
GAP_HEAD = "gap"
GUIDANCE_HEAD = "guidance"
# the freshly initialised head learns faster than the pre-trained encoder beneath it
HEAD_LR_SCALE = 100.0


class HeadError(Exception):
    pass


# ---------------------------------------------------------------------------
# head parameter containers
# ---------------------------------------------------------------------------

@dataclass
class _Mlp:
    w1: dc.Tensor
    b1: dc.Tensor
    w2: dc.Tensor
    b2: dc.Tensor

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator, prefix: str):
        lim1 = math.sqrt(6.0 / (d + hidden))
        lim2 = math.sqrt(6.0 / (hidden + 1))
        p = dc.parameter
        return cls(p(rng.uniform(-lim1, lim1, (d, hidden)), f"{prefix}.w1"), p(np.zeros(hidden), f"{prefix}.b1"),
                   p(rng.uniform(-lim2, lim2, (hidden, 1)), f"{prefix}.w2"), p(np.zeros(1), f"{prefix}.b2"))

    def forward(self, x) -> dc.Tensor:
        h = dc.relu(dc.add(dc.matmul(x, self.w1), self.b1))
        return dc.add(dc.matmul(h, self.w2), self.b2)

    def tensors(self) -> list[dc.Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def arrays(self) -> dict:
        return {"w1": self.w1.value, "b1": self.b1.value, "w2": self.w2.value, "b2": self.b2.value}

    @property
    def d(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]


@dataclass
class GapHead(_Mlp):
    label_min: float = 0.0
    label_max: float = math.inf
    kind = GAP_HEAD

    def meta(self) -> dict:
        return {"label_min": self.label_min, "label_max": self.label_max}

    def predict(self, pooled, minimize: bool) -> dc.Tensor:
        raw = dc.reshape(self.forward(dc.reshape(pooled, (1, -1))), ())
        s = 1.0 if minimize else -1.0
        return dc.add(1.0, dc.mul(dc.softplus(raw), s))

    def clamp(self, g: float) -> float:
        return float(min(max(g, self.label_min), self.label_max))


@dataclass
class GuidanceHead(_Mlp):
    kind = GUIDANCE_HEAD

    def meta(self) -> dict:
        return {}

    def logits(self, cw) -> dc.Tensor:
        return dc.reshape(self.forward(cw), (-1,))


def head_from_arrays(kind: str, arrays: dict, meta: dict):
    p = dc.parameter
    parts = [p(arrays[n], f"{kind}.{n}") for n in ("w1", "b1", "w2", "b2")]
    if kind == GAP_HEAD:
        return GapHead(*parts, label_min=float(meta["label_min"]), label_max=float(meta["label_max"]))
    if kind == GUIDANCE_HEAD:
        return GuidanceHead(*parts)
    raise HeadError(f"unknown head type {kind!r}")


# ---------------------------------------------------------------------------
# shared fine-tuning machinery
# ---------------------------------------------------------------------------

def _fresh_model(checkpoint: Checkpoint, seed: int) -> ForgeModel:
    """Randomly initialised model of the same shape (the from-scratch ablation)."""
    cfg = checkpoint.config
    model = ForgeModel.init(checkpoint.d, checkpoint.k, seed, cfg.alpha, cfg.include_self)
    model.edge_mode = cfg.edge_mode
    return model


def _start(checkpoint: Checkpoint, seed: int, from_scratch: bool) -> Checkpoint:
    out = checkpoint.copy()
    if from_scratch:
        out.model = _fresh_model(checkpoint, seed)
        out.history = []
    return out


def _vq_forward(model: ForgeModel, graph: BipartiteGraph):
    H = encode(graph, model.encoder)
    q = quantize(H, model.codebook, model.alpha)
    return H, q


class _FineTuner:
    """Separate Adams for the encoder, the new head and the codebook (codebook loss only)."""

    def __init__(self, model: ForgeModel, head, lr: float, codebook_lr_scale: float,
                 head_lr_scale: float = 1.0):
        self.groups = [model.encoder.tensors(), head.tensors(), model.codebook.tensors()]
        scales = (1.0, head_lr_scale, codebook_lr_scale)
        self.opts = [dc.Adam(g, lr=lr * s) for g, s in zip(self.groups, scales)]

    def step(self, tape: dc.Tape, loss: dc.Tensor) -> None:
        flat = [t for g in self.groups for t in g]
        grads = tape.gradient(loss, flat)
        pos = 0
        for g, opt in zip(self.groups, self.opts):
            opt.step(grads[pos: pos + len(g)])
            pos += len(g)


def _check_shapes(checkpoint: Checkpoint, graphs) -> None:
    for g in graphs:
        if g.node_features.shape[1] != checkpoint.model.encoder.w_self1.shape[0]:
            raise HeadError(f"{g.name}: feature width does not match the checkpoint")


# ---------------------------------------------------------------------------
# integrality-gap regression
# ---------------------------------------------------------------------------

def _pooled_codewords(q) -> dc.Tensor:
    return dc.mean(q.cw, axis=0)


def finetune_gap(labeled: list[tuple], checkpoint: Checkpoint, epochs: int = 10, lr: float = 1e-4,
                 hidden: int = 32, seed: int = 0, from_scratch: bool = False,
                 codebook_lr_scale: float | None = None, head_lr_scale: float = HEAD_LR_SCALE) -> Checkpoint:
    """Fit a GapHead end to end with mean absolute error; returns a new checkpoint."""
    if not labeled:
        raise HeadError("empty labeled corpus")
    graphs = [checkpoint.prepare(item) for item, _ in labeled]
    labels = np.array([float(g) for _, g in labeled])
    _check_shapes(checkpoint, graphs)
    out = _start(checkpoint, seed, from_scratch)
    model = out.model
    rng = np.random.default_rng([seed, 11])
    head = GapHead(*_Mlp.init(model.d, hidden, rng, "gap").tensors(),
                   label_min=float(labels.min()), label_max=float(labels.max()))
    # start the output at the mean distance from 1 so the head begins at the baseline
    dev = max(float(np.mean(np.abs(labels - 1.0))), 1e-6)
    head.b2.value[:] = dev + math.log(-math.expm1(-dev))
    scale = out.config.codebook_lr_scale if codebook_lr_scale is None else codebook_lr_scale
    tuner = _FineTuner(model, head, lr, scale, head_lr_scale)
    for _ in range(epochs):
        for i in rng.permutation(len(graphs)):
            g = graphs[i]
            with dc.Tape() as tape:
                _, q = _vq_forward(model, g)
                pred = head.predict(_pooled_codewords(q), not g.negated_objective)
                err = dc.absolute(dc.sub(pred, labels[i]))
                loss = dc.add(err, dc.add(q.codebook_loss, q.commitment_loss))
            tuner.step(tape, loss)
    model.heads[GAP_HEAD] = head
    return out.round_to_storage()


def predict_gap(item, checkpoint: Checkpoint, clamp: bool = True) -> float:
    head = checkpoint.heads.get(GAP_HEAD)
    if head is None:
        raise HeadError("checkpoint has no gap head")
    g = checkpoint.prepare(item)
    _, q = _vq_forward(checkpoint.model, g)
    pred = float(head.predict(_pooled_codewords(q), not g.negated_objective).value)
    return head.clamp(pred) if clamp else pred


@dataclass(frozen=True)
class CutResult:
    gap: float
    z_lp: float
    bound: float
    instance: MipInstance


def cut_bound(z_lp: float, gap: float, safety_shrink: float) -> float:
    return z_lp * (1.0 + safety_shrink * (gap - 1.0))


def predict_gap_and_cut(instance: MipInstance, checkpoint: Checkpoint, safety_shrink: float = 0.9,
                        gap: float | None = None) -> CutResult:
    """Predicted gap plus the instance with its pseudo-cut appended.

    ``gap`` overrides the head's prediction (useful for what-if analysis).
    """
    if not 0.0 <= safety_shrink <= 1.0:
        raise ValueError("safety_shrink must lie in [0, 1]")
    lp = solve_lp(instance)
    if not lp.is_optimal:
        raise HeadError(f"{instance.name}: LP relaxation {lp.status}")
    if abs(lp.objective) < 1e-12:
        raise HeadError(f"{instance.name}: z_LP = 0, the gap ratio is undefined")
    g = predict_gap(instance, checkpoint) if gap is None else float(gap)
    bound = cut_bound(lp.objective, g, safety_shrink)
    return CutResult(g, lp.objective, bound, add_pseudo_cut(instance, bound))


def mean_absolute_error(pred, truth) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float))))


def write_gap_report(path, rows: list[dict]) -> None:
    """Rows carry instance, z_lp, gap_pred, bound and optionally label."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["instance", "z_lp", "gap_pred", "bound", "label", "abs_error"])
        for r in rows:
            label = r.get("label")
            err = "" if label is None else repr(abs(r["gap_pred"] - label))
            wr.writerow([r["instance"], repr(float(r["z_lp"])), repr(float(r["gap_pred"])),
                         repr(float(r["bound"])), "" if label is None else repr(float(label)), err])


# ---------------------------------------------------------------------------
# variable guidance
# ---------------------------------------------------------------------------

@dataclass
class GuidanceLabels:
    groups: np.ndarray      # per variable: number of pool solutions containing it; -1 if not binary
    labels: np.ndarray      # per variable: 1 if in any solution, 0 otherwise; -1 if not binary
    pool_size: int

    @property
    def binary(self) -> np.ndarray:
        return np.flatnonzero(self.groups >= 0)


def build_guidance_labels(instance: MipInstance, pool) -> GuidanceLabels:
    sols = [np.asarray(x if not isinstance(x, tuple) else x[1], dtype=float) for x in pool]
    if len(sols) < MIN_POOL:
        log.warning("%s: pool has %d solutions (< %d); labels use what is available",
                    instance.name, len(sols), MIN_POOL)
    binary = instance.binary_mask
    counts = np.zeros(instance.n, dtype=np.int64)
    for x in sols:
        counts += (x >= 0.5).astype(np.int64)
    groups = np.where(binary, counts, -1)
    labels = np.where(binary, (counts >= 1).astype(np.int64), -1)
    return GuidanceLabels(groups, labels, len(sols))


@dataclass
class TripletSet:
    triplets: np.ndarray              # (T, 3) variable indices: anchor, positive, negative
    margin: float = TRIPLET_MARGIN

    def __len__(self) -> int:
        return len(self.triplets)

    def check(self, groups: np.ndarray) -> bool:
        if not len(self.triplets):
            return True
        a, p, n = self.triplets.T
        return bool(np.all(a != p) and np.all(groups[a] == groups[p]) and np.all(groups[a] >= 1)
                    and np.all(groups[n] == 0))


def mine_triplets(groups: np.ndarray, codewords: np.ndarray, rng: np.random.Generator | None = None,
                  per_anchor: int = POSITIVES_PER_ANCHOR, cap: int = MAX_TRIPLETS) -> TripletSet:
    """Anchor/positive pairs share a solution-count group; negative = nearest group-0 codeword."""
    rng = np.random.default_rng(0) if rng is None else rng
    groups = np.asarray(groups)
    negatives = np.flatnonzero(groups == 0)
    if negatives.size == 0:
        log.warning("no group-0 variables; no triplets mined")
        return TripletSet(np.zeros((0, 3), dtype=np.int64))
    neg_cw = codewords[negatives]
    out = []
    for g in np.unique(groups[groups >= 1]):
        members = np.flatnonzero(groups == g)
        if members.size < 2:
            continue
        for a in members:
            others = members[members != a]
            pos = rng.choice(others, size=min(per_anchor, others.size), replace=False)
            d = np.linalg.norm(neg_cw - codewords[a], axis=1)
            n = int(negatives[int(np.argmin(d))])
            out += [(int(a), int(p), n) for p in pos]
            if len(out) >= cap:
                return TripletSet(np.array(out[:cap], dtype=np.int64))
    return TripletSet(np.array(out, dtype=np.int64).reshape(-1, 3))


def triplet_hinge(d_ap, d_an, margin: float = TRIPLET_MARGIN):
    """``max(d(a,p) - d(a,n) + margin, 0)`` on plain numbers or arrays."""
    return np.maximum(np.asarray(d_ap, dtype=float) - np.asarray(d_an, dtype=float) + margin, 0.0)


def _distance(x: dc.Tensor, i, j) -> dc.Tensor:
    diff = dc.sub(dc.gather_rows(x, i), dc.gather_rows(x, j))
    return dc.sqrt(dc.add(dc.sum(dc.square(diff), axis=1), 1e-12))


def triplet_loss(emb: dc.Tensor, triplets: TripletSet) -> dc.Tensor:
    """Mean hinge over the set; ``emb`` rows are indexed like the triplets."""
    if not len(triplets):
        return dc.Tensor(np.array(0.0))
    a, p, n = triplets.triplets.T
    hinge = dc.relu(dc.add(dc.sub(_distance(emb, a, p), _distance(emb, a, n)), triplets.margin))
    return dc.mean(hinge)


@dataclass
class GuidanceExample:
    graph: BipartiteGraph
    labels: GuidanceLabels
    triplets: TripletSet


def prepare_guidance(instance: MipInstance, pool, unsupervised: Checkpoint,
                     rng: np.random.Generator | None = None) -> GuidanceExample:
    """Labels from the pool and triplets mined on the unsupervised checkpoint's codewords."""
    graph = unsupervised.prepare(instance)
    labels = build_guidance_labels(instance, pool)
    codes = unsupervised.model.codes(graph)[graph.n_constraints:]
    cw = unsupervised.model.codebook.weights.value[codes]
    return GuidanceExample(graph, labels, mine_triplets(labels.groups, cw, rng))


def finetune_guidance(examples: list[GuidanceExample], checkpoint: Checkpoint, epochs: int = 25,
                      lr: float = 1e-5, hidden: int = 32, seed: int = 0,
                      codebook_lr_scale: float | None = None, triplet_space: str = "encoder",
                      head_lr_scale: float = HEAD_LR_SCALE) -> Checkpoint:
    """BCE + triplet (equal weights) end to end; returns a new checkpoint.

    The BCE term reads the straight-through codewords. The triplet term measures
    distances on the encoder output ``H`` by default (``triplet_space="codeword"``
    uses the codewords instead). Nodes sharing a code are then still separable,
    where codeword distances would be exactly zero with no gradient.
    """
    if triplet_space not in ("encoder", "codeword"):
        raise ValueError("triplet_space must be 'encoder' or 'codeword'")
    if not examples:
        raise HeadError("empty labeled corpus")
    _check_shapes(checkpoint, [e.graph for e in examples])
    out = checkpoint.copy()
    model = out.model
    rng = np.random.default_rng([seed, 13])
    head = GuidanceHead(*_Mlp.init(model.d, hidden, rng, "guidance").tensors())
    scale = out.config.codebook_lr_scale if codebook_lr_scale is None else codebook_lr_scale
    tuner = _FineTuner(model, head, lr, scale, head_lr_scale)
    for _ in range(epochs):
        for i in rng.permutation(len(examples)):
            ex = examples[i]
            nc = ex.graph.n_constraints
            binary = ex.labels.binary
            if binary.size == 0:
                continue
            with dc.Tape() as tape:
                H, q = _vq_forward(model, ex.graph)
                var_cw = dc.gather_rows(q.cw, nc + binary)
                bce = dc.bce_with_logits(head.logits(var_cw), ex.labels.labels[binary].astype(float))
                # triplet indices are variable indices; rows nc.. of the node matrix
                space = H if triplet_space == "encoder" else q.cw
                trip = triplet_loss(dc.gather_rows(space, np.arange(nc, ex.graph.n_nodes)), ex.triplets)
                loss = dc.add(dc.add(bce, trip), dc.add(q.codebook_loss, q.commitment_loss))
            tuner.step(tape, loss)
    model.heads[GUIDANCE_HEAD] = head
    return out.round_to_storage()


def guidance_scores(item, checkpoint: Checkpoint) -> np.ndarray:
    """Per-variable probability of appearing in a good solution."""
    head = checkpoint.heads.get(GUIDANCE_HEAD)
    if head is None:
        raise HeadError("checkpoint has no guidance head")
    g = checkpoint.prepare(item)
    codes = checkpoint.model.codes(g)[g.n_constraints:]
    cw = checkpoint.model.codebook.weights.value[codes]
    return dc.sigmoid(head.logits(dc.Tensor(cw))).value


def guidance_auc(examples, checkpoint: Checkpoint) -> float:
    """Pooled positive-vs-negative ROC AUC over the binary variables of ``examples``."""
    scores, labels = [], []
    for ex in examples:
        b = ex.labels.binary
        scores.append(guidance_scores(ex.graph, checkpoint)[b])
        labels.append(ex.labels.labels[b])
    y = np.concatenate(labels)
    if y.min() == y.max():
        raise HeadError("AUC needs both positive and negative variables")
    return float(roc_auc_score(y, np.concatenate(scores)))


@dataclass
class HintSet:
    include: list[str] = field(default_factory=list)
    exclude: list[str] = field(default_factory=list)

    def check(self, instance: MipInstance) -> bool:
        names = set(instance.variable_index())
        inc, exc = set(self.include), set(self.exclude)
        return not (inc & exc) and inc <= names and exc <= names


def _decile_masks(scores: np.ndarray, decile: float):
    hi = np.quantile(scores, 1.0 - decile)
    lo = np.quantile(scores, decile)
    top = (scores >= hi) & (scores > lo)
    bottom = (scores <= lo) & (scores < hi)
    return top, bottom


def select_hints(instance: MipInstance, anchor_solution, checkpoint: Checkpoint, radius: float = 0.1,
                 decile: float = 0.1) -> HintSet:
    """Include/exclude hints around the anchor solution's 1s and 0s (binaries only)."""
    x = np.asarray(anchor_solution.values if isinstance(anchor_solution, MipSolution) else anchor_solution,
                   dtype=float)
    g = checkpoint.prepare(instance)
    codes = checkpoint.model.codes(g)[g.n_constraints:]
    cw = checkpoint.model.codebook.weights.value[codes]
    mean_norm = np.linalg.norm(cw, axis=1).mean()
    cw = cw / mean_norm if mean_norm > 0 else cw
    scores = guidance_scores(g, checkpoint)
    binary = instance.binary_mask
    top, bottom = _decile_masks(scores[binary], decile)
    bidx = np.flatnonzero(binary)
    pos_anchor = bidx[x[bidx] >= 0.5]
    neg_anchor = bidx[x[bidx] < 0.5]

    def near(anchors):
        if anchors.size == 0:
            return np.zeros(bidx.size, dtype=bool)
        d = np.linalg.norm(cw[bidx][:, None, :] - cw[anchors][None, :, :], axis=2)
        return (d <= radius).any(axis=1)

    inc = near(pos_anchor) & top
    exc = near(neg_anchor) & bottom
    both = inc & exc
    inc &= ~both
    exc &= ~both
    names = [v.name for v in instance.variables]
    return HintSet([names[j] for j in bidx[inc]], [names[j] for j in bidx[exc]])


def write_hints(hints: HintSet, path) -> None:
    with open(path, "w") as fh:
        for name in hints.include:
            fh.write(f"{name} 1\n")
        for name in hints.exclude:
            fh.write(f"{name} 0\n")


def read_hints(path) -> HintSet:
    out = HintSet()
    with open(path) as fh:
        for no, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ValueError(f"{path}:{no}: expected 'name 0|1'")
            (out.include if parts[1] == "1" else out.exclude).append(parts[0])
    return out

"""Unsupervised pre-training, codebook telemetry and checkpoint persistence.

Checkpoint container layout (all integers little-endian)::

    8 bytes   magic  b"FORGECKP"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header: config, feature scale, loss history, head
              metadata, payload CRC-32 and an array table
              (name, shape, byte offset, byte length)
    payload   raw little-endian float32 arrays, back to back

Parameters are rounded to float32 at the end of every training run, so the
in-memory model and a reloaded one compute identical forward passes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .bigraph import BipartiteGraph, FeatureScale, apply_feature_scale, fit_feature_scale, to_bipartite
from .geninst import CorpusManifest
from .mipmodel import MipInstance, drop_constraints
from .vqgae import EDGE_MODES, Codebook, DecoderParams, EncoderParams, ForgeModel, LossBreakdown, loss_terms

log = logging.getLogger(__name__)

MAGIC = b"FORGECKP"
FORMAT_VERSION = 1
LOSS_COLUMNS = ("epoch", "edge_recon", "feat_recon", "codebook", "commitment", "total", "dead_code_fraction")


class CheckpointError(Exception):
    """Corrupt, truncated or otherwise unreadable checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d: int = 64
    k: int = 128
    alpha: float = 0.25
    learning_rate: float = 1e-4
    # codebook rows move on their own Adam with this learning-rate multiplier
    codebook_lr_scale: float = 10.0
    epochs: int = 10
    seed: int = 0
    fractions: tuple[float, ...] = (0.05, 0.10)
    negative_ratio: float = 1.0
    edge_mode: str = "sampled"
    include_self: bool = True
    reseed_dead: bool = True
    init_noise: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if any(not 0.0 <= f < 1.0 for f in self.fractions):
            raise ValueError("augmentation fractions must lie in [0, 1)")
        if self.edge_mode not in EDGE_MODES:
            raise ValueError(f"edge_mode must be one of {EDGE_MODES}")
        if self.learning_rate <= 0 or self.codebook_lr_scale <= 0:
            raise ValueError("learning rates must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "fractions" in kw:
            kw["fractions"] = tuple(float(f) for f in kw["fractions"])
        return cls(**kw)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PROFILES = {
    "desk": TrainConfig(),
    "full": TrainConfig(d=1024, k=5000, learning_rate=1e-4, epochs=10),
}


@dataclass
class EpochStats:
    epoch: int
    loss: LossBreakdown
    dead_code_fraction: float

    def row(self) -> list:
        b = self.loss
        return [self.epoch, b.edge_recon, b.feat_recon, b.codebook, b.commitment, b.total,
                self.dead_code_fraction]


@dataclass
class Checkpoint:
    model: ForgeModel
    config: TrainConfig
    scale: FeatureScale
    history: list[EpochStats] = field(default_factory=list)
    version: int = FORMAT_VERSION

    @property
    def d(self) -> int:
        return self.model.d

    @property
    def k(self) -> int:
        return self.model.k

    @property
    def heads(self) -> dict:
        return self.model.heads

    def prepare(self, item) -> BipartiteGraph:
        """Graph in this checkpoint's feature scale from an instance or an unscaled graph."""
        graph = to_bipartite(item) if isinstance(item, MipInstance) else item
        if graph.scale is None:
            graph = apply_feature_scale(graph, self.scale)
        return graph

    def checkpoint_id(self) -> str:
        h = hashlib.sha256()
        for _, arr in _named_arrays(self.model):
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()[:12]

    def copy(self) -> "Checkpoint":
        return _decode(*_encode(self))

    def round_to_storage(self) -> "Checkpoint":
        for t in all_tensors(self.model):
            t.value = t.value.astype(np.float32).astype(np.float64)
        return self


def all_tensors(model: ForgeModel) -> list[dc.Tensor]:
    out = model.parameters()
    for name in sorted(model.heads):
        out += model.heads[name].tensors()
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def augment(instances: list[MipInstance], fractions, seed: int) -> list[MipInstance]:
    """Originals followed by their constraint-dropped variants, one per fraction."""
    out = list(instances)
    for i, inst in enumerate(instances):
        for j, f in enumerate(fractions):
            s = int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])
            out.append(drop_constraints(inst, f, s))
    return out


def prepare_corpus(instances: list[MipInstance], config: TrainConfig):
    graphs = [to_bipartite(inst) for inst in augment(instances, config.fractions, config.seed)]
    scale = fit_feature_scale(graphs)
    return [apply_feature_scale(g, scale) for g in graphs], scale


def _init_codebook(model: ForgeModel, graphs: list[BipartiteGraph], rng: np.random.Generator,
                   noise: float) -> None:
    # seed codewords from encoder outputs so the first assignments are meaningful
    rows, total = [], 0
    for g in graphs:
        rows.append(model.encode(g))
        total += g.n_nodes
        if total >= model.k and len(rows) >= 4:
            break
    H = np.concatenate(rows)
    pick = rng.choice(len(H), size=model.k, replace=len(H) < model.k)
    cb = model.codebook.weights.value
    cb[:] = H[pick] + rng.normal(0.0, noise, size=cb.shape)


def _reseed_dead(model: ForgeModel, recent: list[np.ndarray], opt: dc.Adam,
                 rng: np.random.Generator, noise: float) -> None:
    dead = np.flatnonzero(model.codebook.usage == 0)
    if not dead.size or not recent:
        return
    H = np.concatenate(recent)
    pick = rng.choice(len(H), size=dead.size, replace=len(H) < dead.size)
    cb = model.codebook.weights.value
    cb[dead] = H[pick] + rng.normal(0.0, noise, size=(dead.size, cb.shape[1]))
    if opt.state.m:
        opt.state.m[0][dead] = 0.0
        opt.state.v[0][dead] = 0.0


def train_graphs(graphs: list[BipartiteGraph], scale: FeatureScale, config: TrainConfig,
                 progress=None) -> Checkpoint:
    """Pre-train on already scaled graphs (one optimizer step per graph)."""
    if not graphs:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    model = ForgeModel.init(config.d, config.k, config.seed, config.alpha, config.include_self)
    model.edge_mode = config.edge_mode
    body = model.encoder.tensors() + model.decoder.tensors()
    cb = model.codebook.tensors()
    opt = dc.Adam(body, lr=config.learning_rate)
    opt_cb = dc.Adam(cb, lr=config.learning_rate * config.codebook_lr_scale)

    order = rng.permutation(len(graphs))
    _init_codebook(model, [graphs[i] for i in order], rng, config.init_noise)
    history = []
    for epoch in range(1, config.epochs + 1):
        if epoch > 1:
            order = rng.permutation(len(graphs))
        model.codebook.usage[:] = 0
        sums = np.zeros(5)
        recent: list[np.ndarray] = []
        for gi in order:
            with dc.Tape() as tape:
                terms = _loss_terms(model, graphs[gi], rng, config)
            grads = tape.gradient(terms.total, body + cb)
            opt.step(grads[: len(body)])
            opt_cb.step(grads[len(body):])
            b = terms.breakdown()
            if not np.isfinite(b.total):
                raise dc.NumericError(f"non-finite loss at epoch {epoch}")
            sums += (b.edge_recon, b.feat_recon, b.codebook, b.commitment, b.total)
            np.add.at(model.codebook.usage, terms.quantized.codes, 1)
            recent.append(terms.H.value)
            recent = recent[-16:]
        mean = sums / len(graphs)
        dead = float(np.mean(model.codebook.usage == 0))
        stats = EpochStats(epoch, LossBreakdown(*mean[:4], total=mean[4], alpha=config.alpha), dead)
        history.append(stats)
        log.info("epoch %d total %.4f dead %.3f", epoch, mean[4], dead)
        if progress is not None:
            progress(stats)
        if config.reseed_dead and epoch < config.epochs:
            _reseed_dead(model, recent, opt_cb, rng, config.init_noise)
    return Checkpoint(model, config, scale, history).round_to_storage()


def _loss_terms(model: ForgeModel, graph: BipartiteGraph, rng, config: TrainConfig):
    return loss_terms(graph, model.encoder, model.codebook, model.decoder, model.alpha, rng,
                      model.edge_mode, negative_ratio=config.negative_ratio)


def load_instances(manifest: CorpusManifest) -> list[MipInstance]:
    # parse everything up front so a bad file aborts before any training
    return manifest.instances()


def pretrain(manifest: CorpusManifest | list[MipInstance], config: TrainConfig, progress=None) -> Checkpoint:
    instances = manifest if isinstance(manifest, list) else load_instances(manifest)
    graphs, scale = prepare_corpus(instances, config)
    return train_graphs(graphs, scale, config, progress)


@dataclass
class CodebookReport:
    counts: np.ndarray
    dead_fraction: float

    @property
    def used(self) -> int:
        return int(np.count_nonzero(self.counts))


def codebook_report(checkpoint: Checkpoint, corpus) -> CodebookReport:
    """Code usage over a corpus (manifest, instances or graphs)."""
    items = corpus.instances() if isinstance(corpus, CorpusManifest) else list(corpus)
    counts = np.zeros(checkpoint.k, dtype=np.int64)
    for item in items:
        codes = checkpoint.model.codes(checkpoint.prepare(item))
        counts += np.bincount(codes, minlength=checkpoint.k)
    return CodebookReport(counts, float(np.mean(counts == 0)))


def write_loss_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(LOSS_COLUMNS)
        for s in history:
            wr.writerow([s.epoch] + [repr(float(v)) for v in s.row()[1:]])


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_ENCODER_NAMES = ("w_self1", "w_nbr1", "b1", "w_self2", "w_nbr2", "b2")
_DECODER_NAMES = ("w_feat", "b_feat", "w_edge", "b_edge")


def _named_arrays(model: ForgeModel):
    for n in _ENCODER_NAMES:
        yield f"encoder.{n}", getattr(model.encoder, n).value
    yield "codebook.weights", model.codebook.weights.value
    for n in _DECODER_NAMES:
        yield f"decoder.{n}", getattr(model.decoder, n).value
    for head_name in sorted(model.heads):
        for n, arr in model.heads[head_name].arrays().items():
            yield f"head.{head_name}.{n}", arr


def _encode(ckpt: Checkpoint) -> tuple[dict, bytes]:
    table, chunks, offset = [], [], 0
    for name, arr in _named_arrays(ckpt.model):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "<f4",
        "config": ckpt.config.to_dict(),
        "alpha": ckpt.model.alpha,
        "edge_mode": ckpt.model.edge_mode,
        "include_self": ckpt.model.encoder.include_self,
        "feature_scale": ckpt.scale.to_dict(),
        "history": [dict(epoch=s.epoch, dead_code_fraction=s.dead_code_fraction, **s.loss.as_dict())
                    for s in ckpt.history],
        "heads": {n: {"type": h.kind, "meta": h.meta()} for n, h in sorted(ckpt.model.heads.items())},
        "codebook_usage": ckpt.model.codebook.usage.tolist(),
        "payload_crc32": zlib.crc32(payload),
        "payload_bytes": len(payload),
        "arrays": table,
    }
    return header, payload


def _decode(header: dict, payload: bytes) -> Checkpoint:
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).astype(np.float64)
    p = dc.parameter
    enc = EncoderParams(*(p(arrays[f"encoder.{n}"].copy(), f"enc.{n}") for n in _ENCODER_NAMES),
                        include_self=bool(header["include_self"]))
    usage = header.get("codebook_usage")
    codebook = Codebook(p(arrays["codebook.weights"].copy(), "codebook"),
                        np.asarray(usage, dtype=np.int64) if usage else None)
    dec = DecoderParams(*(p(arrays[f"decoder.{n}"].copy(), f"dec.{n}") for n in _DECODER_NAMES))
    model = ForgeModel(enc, codebook, dec, float(header["alpha"]), header["edge_mode"])
    if header["heads"]:
        from .heads import head_from_arrays
        for name, info in header["heads"].items():
            prefix = f"head.{name}."
            sub = {k[len(prefix):]: v.copy() for k, v in arrays.items() if k.startswith(prefix)}
            model.heads[name] = head_from_arrays(info["type"], sub, info["meta"])
    config = TrainConfig.from_dict(header["config"])
    history = [EpochStats(h["epoch"], LossBreakdown(h["edge_recon"], h["feat_recon"], h["codebook"],
                                                    h["commitment"], h["total"], float(header["alpha"])),
                          h["dead_code_fraction"]) for h in header["history"]]
    return Checkpoint(model, config, FeatureScale.from_dict(header["feature_scale"]), history,
                      header["format_version"])


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    header, payload = _encode(checkpoint)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic or truncated)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version}, this build reads version {FORMAT_VERSION}")
    if len(data) < 20 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[20: 20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = data[20 + hlen:]
    if len(payload) != header.get("payload_bytes") or zlib.crc32(payload) != header.get("payload_crc32"):
        raise CheckpointError(f"{path}: payload failed integrity check (truncated or corrupt)")
    try:
        return _decode(header, payload)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint contents ({exc})") from None


def with_heads(checkpoint: Checkpoint, model: ForgeModel) -> Checkpoint:
    return replace(checkpoint, model=model)

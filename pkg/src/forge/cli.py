"""Command-line entry point: ``python -m forge <subcommand> ...``.

Configuration precedence is flags > ``--config`` file > built-in defaults.
The config file holds ``key = value`` lines whose keys are option names of
the chosen subcommand (dashes or underscores); ``#`` starts a comment.

Seeds: one master seed per run (``--seed``, else ``FORGE_SEED``, else 0).
Every stage receives the master seed and derives its own streams from it
with ``numpy.random.SeedSequence([seed, stream])``; data splits use
``derive_seed(seed, "split")``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every successful run writes a JSON run manifest (inputs with SHA-256,
resolved options, config hash and seed) next to its primary output.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import cosine_distance, kmeans, pca_project, vector_arith, write_cluster_csv, \
    write_projection_csv
from .diffcore import NumericError
from .embed import InstanceEmbedding, instance_embedding, label_propagation_embedding, mean_readout, write_store_binary, \
    write_store_csv
from .geninst import FAMILIES, SIZES, CorpusManifest, canonical_family, gen_corpus
from .heads import HeadError, finetune_gap, finetune_guidance, guidance_auc, \
    mean_absolute_error, predict_gap, predict_gap_and_cut, prepare_guidance, select_hints, \
    write_gap_report, write_hints
from .mipmodel import InvalidInstanceError, MpsParseError, read_mps, save_mps
from .minisolve import integrality_gap_label, read_solution, solve_mip
from .trainer import PROFILES, CheckpointError, TrainConfig, codebook_report, load_checkpoint, pretrain, \
    save_checkpoint, write_loss_csv

log = logging.getLogger("forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "FORGE_SEED"
_STREAMS = ("split", "mining", "labels")


class UsageError(Exception):
    pass


def derive_seed(master: int, stream: str) -> int:
    """Child seed for a named stream of the master seed."""
    return int(np.random.SeedSequence([master, _STREAMS.index(stream)]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _load_corpus(path) -> CorpusManifest:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such corpus: {p} (expected a directory with manifest.csv)")
    return CorpusManifest.read(p)


def _corpus_inputs(manifest: CorpusManifest) -> list[Path]:
    return [manifest.resolve(e) for e in manifest]


def _split(n: int, holdout: float, seed: int):
    perm = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    n_test = int(round(holdout * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _pmap(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _label_worker(task):
    path, node_limit, time_limit = task
    inst = read_mps(path)
    return integrality_gap_label(inst, time_limit=time_limit, node_limit=node_limit)


def _pool_worker(task):
    path, node_limit, pool_size = task
    inst = read_mps(path)
    sol = solve_mip(inst, node_limit=node_limit, pool_size=pool_size)
    return [x for _, x in sol.pool]


def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, inputs, manifest path)
# ---------------------------------------------------------------------------

def cmd_gen(args):
    fams = [canonical_family(f) for f in _parse_list(args.families)]
    sizes = _parse_list(args.sizes)
    bad = [s for s in sizes if s not in SIZES]
    if bad:
        raise UsageError(f"unknown size {bad[0]!r}; choose from {', '.join(SIZES)}")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    spec = [(f, s, args.count) for f in fams for s in sizes]
    out = Path(args.out)
    manifest = gen_corpus(spec, args.seed, out)
    print(f"wrote {len(manifest)} instances and {out / 'manifest.csv'}")
    return [out], [], out / "run.json"


def _train_config(args):
    base = PROFILES[args.profile].to_dict()
    for key, flag in (("d", "d"), ("k", "k"), ("epochs", "epochs"), ("learning_rate", "lr"),
                      ("alpha", "alpha")):
        v = getattr(args, flag)
        if v is not None:
            base[key] = v
    base["seed"] = args.seed
    return TrainConfig.from_dict(base)


def cmd_pretrain(args):
    manifest = _load_corpus(args.corpus)
    config = _train_config(args)
    out = Path(args.out)

    def progress(stats):
        log.info("epoch %d total %.6f dead %.3f", stats.epoch, stats.loss.total, stats.dead_code_fraction)

    ckpt = pretrain(manifest, config, progress)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else out.with_suffix(".loss.csv")
    write_loss_csv(ckpt.history, loss_csv)
    first, last = ckpt.history[0], ckpt.history[-1]
    print(f"checkpoint {out} id {ckpt.checkpoint_id()} config {config.digest()}")
    print(f"loss {first.loss.total:.6f} -> {last.loss.total:.6f}; dead codes {last.dead_code_fraction:.3f}")
    return [out, loss_csv], _corpus_inputs(manifest), out.with_suffix(".run.json")


def _embeddings(manifest, ckpt, kind: str, normalized: bool = True):
    vecs, names = [], []
    for entry in manifest:
        inst = manifest.load(entry)
        if kind == "forge":
            vecs.append(instance_embedding(inst, ckpt, normalized).vector)
        elif kind == "mean":
            vecs.append(mean_readout(inst, ckpt))
        else:
            vecs.append(label_propagation_embedding(ckpt.prepare(inst)))
        names.append(inst.name)
    return np.array(vecs), names


def cmd_embed(args):
    manifest = _load_corpus(args.corpus)
    ckpt = load_checkpoint(_require_file(args.ckpt))
    store = []
    cid = ckpt.checkpoint_id()
    for entry in manifest:
        inst = manifest.load(entry)
        e = instance_embedding(inst, ckpt, not args.raw)
        store.append(InstanceEmbedding(e.vector, inst.name, cid, e.normalized, entry.family, entry.size))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "binary" or (args.format == "auto" and out.suffix != ".csv"):
        write_store_binary(store, out)
    else:
        write_store_csv(store, out)
    print(f"wrote {len(store)} embeddings (k={ckpt.k}) to {out}")
    return [out], _corpus_inputs(manifest) + [Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_cluster(args):
    manifest = _load_corpus(args.corpus)
    ckpt = load_checkpoint(_require_file(args.ckpt))
    truth = manifest.labels()
    X, names = _embeddings(manifest, ckpt, "forge")
    res = kmeans(X, args.k_clusters, runs=args.runs, seed=args.seed, truth=truth)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cluster_csv(out, names, [e.family for e in manifest], [e.size for e in manifest], res.assignments)
    outputs = [out]
    print(f"nmi {res.nmi_vs_truth:.6f}")
    if args.baselines:
        for kind in ("mean", "labelprop"):
            Xb, _ = _embeddings(manifest, ckpt, kind)
            rb = kmeans(Xb, args.k_clusters, runs=args.runs, seed=args.seed, truth=truth)
            print(f"nmi_{kind} {rb.nmi_vs_truth:.6f}")
    if args.projection:
        proj = pca_project(X, 2)
        write_projection_csv(args.projection, names, proj.points)
        outputs.append(Path(args.projection))
    return outputs, _corpus_inputs(manifest) + [Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_arith(args):
    manifest = _load_corpus(args.corpus)
    ckpt = load_checkpoint(_require_file(args.ckpt))
    X, names = _embeddings(manifest, ckpt, "forge")
    fams = np.array([e.family for e in manifest])
    groups = {}
    for role in ("minuend", "subtrahend", "addend", "target"):
        fam = canonical_family(getattr(args, role))
        idx = np.flatnonzero(fams == fam)
        if idx.size == 0:
            raise ValueError(f"corpus has no {fam} instances (needed for --{role})")
        groups[role] = idx
    E = X[groups["minuend"]]
    centroid = X[groups["target"]].mean(axis=0)
    shifted = vector_arith(E, X[groups["subtrahend"]], X[groups["addend"]])
    before = float(cosine_distance(E, centroid).mean())
    after = float(cosine_distance(shifted, centroid).mean())
    print(f"mean cosine distance to {canonical_family(args.target)} centroid: before {before:.6f} after {after:.6f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("instance,before,after\n")
        for j, i in enumerate(groups["minuend"]):
            fh.write(f"{names[i]},{cosine_distance(E[j], centroid)[0]!r},{cosine_distance(shifted[j], centroid)[0]!r}\n")
    return [out], _corpus_inputs(manifest) + [Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_finetune_gap(args):
    manifest = _load_corpus(args.corpus)
    ckpt = load_checkpoint(_require_file(args.ckpt))
    paths = _corpus_inputs(manifest)
    labels = _pmap(_label_worker, [(p, args.node_limit, args.time_limit) for p in paths], args.jobs)
    insts = [manifest.load(e) for e in manifest]
    items = [(inst, lab.label) for inst, lab in zip(insts, labels) if lab is not None]
    if len(items) < 2:
        raise ValueError("fewer than two instances have gap labels")
    train_idx, test_idx = _split(len(items), args.holdout, args.seed)
    train = [items[i] for i in train_idx]
    tuned = finetune_gap(train, ckpt, epochs=args.epochs, lr=args.lr, seed=args.seed,
                         from_scratch=args.from_scratch)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(tuned, out)
    outputs = [out]
    if args.labels_out:
        with open(args.labels_out, "w") as fh:
            fh.write("instance,z_lp,z_incumbent,label,status\n")
            for lab in labels:
                if lab is not None:
                    fh.write(f"{lab.name},{lab.z_lp!r},{lab.z_incumbent!r},{lab.label!r},{lab.status}\n")
        outputs.append(Path(args.labels_out))
    print(f"labels {len(items)} of {len(paths)}; trained on {len(train)}")
    if len(test_idx):
        test = [items[i] for i in test_idx]
        pred = [predict_gap(inst, tuned) for inst, _ in test]
        truth = [g for _, g in test]
        base = float(np.mean([g for _, g in train]))
        print(f"holdout mae {mean_absolute_error(pred, truth):.6f} "
              f"baseline {mean_absolute_error([base] * len(truth), truth):.6f}")
    return outputs, paths + [Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_cut(args):
    inst = read_mps(_require_file(args.instance))
    ckpt = load_checkpoint(_require_file(args.ckpt))
    res = predict_gap_and_cut(inst, ckpt, args.shrink)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mps(res.instance, out)
    outputs = [out]
    print(f"z_lp {res.z_lp:.6f} gap {res.gap:.6f} bound {res.bound:.6f}")
    if args.report:
        write_gap_report(args.report, [{"instance": inst.name, "z_lp": res.z_lp, "gap_pred": res.gap,
                                        "bound": res.bound, "label": args.label}])
        outputs.append(Path(args.report))
    return outputs, [Path(args.instance), Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_finetune_guide(args):
    manifest = _load_corpus(args.corpus)
    ckpt = load_checkpoint(_require_file(args.ckpt))
    paths = _corpus_inputs(manifest)
    pools = _pmap(_pool_worker, [(p, args.node_limit, args.pool_size) for p in paths], args.jobs)
    rng = np.random.default_rng(derive_seed(args.seed, "mining"))
    examples = []
    for entry, pool in zip(manifest, pools):
        if pool:
            examples.append(prepare_guidance(manifest.load(entry), pool, ckpt, rng))
    if len(examples) < 2:
        raise ValueError("fewer than two instances have feasible solutions")
    train_idx, test_idx = _split(len(examples), args.holdout, args.seed)
    tuned = finetune_guidance([examples[i] for i in train_idx], ckpt, epochs=args.epochs, lr=args.lr,
                              seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(tuned, out)
    print(f"examples {len(examples)}; trained on {len(train_idx)}")
    if len(test_idx):
        print(f"holdout auc {guidance_auc([examples[i] for i in test_idx], tuned):.6f}")
    return [out], paths + [Path(args.ckpt)], out.with_suffix(".run.json")


def cmd_hints(args):
    inst = read_mps(_require_file(args.instance))
    ckpt = load_checkpoint(_require_file(args.ckpt))
    inputs = [Path(args.instance), Path(args.ckpt)]
    if args.solution:
        anchor = read_solution(_require_file(args.solution), inst)
        inputs.append(Path(args.solution))
    else:
        anchor = solve_mip(inst, node_limit=args.node_limit, pool_size=1)
    if not anchor.has_incumbent:
        raise ValueError(f"{inst.name}: no anchor solution available")
    hints = select_hints(inst, anchor, ckpt, args.radius, args.decile)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_hints(hints, out)
    print(f"include {len(hints.include)} exclude {len(hints.exclude)}")
    return [out], inputs, out.with_suffix(".run.json")


def cmd_report(args):
    ckpt = load_checkpoint(_require_file(args.ckpt))
    cfg = ckpt.config
    print(f"checkpoint {args.ckpt} id {ckpt.checkpoint_id()} format {ckpt.version}")
    print(f"d {ckpt.d} k {ckpt.k} alpha {cfg.alpha} lr {cfg.learning_rate} epochs {cfg.epochs} "
          f"config {cfg.digest()}")
    print(f"heads {','.join(sorted(ckpt.heads)) or 'none'}")
    for s in ckpt.history:
        print(f"epoch {s.epoch} total {s.loss.total:.6f} dead {s.dead_code_fraction:.3f}")
    inputs = [Path(args.ckpt)]
    outputs = []
    if args.corpus:
        manifest = _load_corpus(args.corpus)
        rep = codebook_report(ckpt, manifest)
        print(f"codes used {rep.used}/{ckpt.k} dead fraction {rep.dead_fraction:.3f}")
        inputs += _corpus_inputs(manifest)
    if args.loss_csv:
        write_loss_csv(ckpt.history, args.loss_csv)
        outputs.append(Path(args.loss_csv))
    manifest_path = Path(args.ckpt).with_suffix(".report.run.json")
    return outputs, inputs, manifest_path


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (fallback ${SEED_ENV}, then 0)")
    p.add_argument("--jobs", type=int, default=1, help="workers for label generation")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS and one worker; identical argv gives identical outputs")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--manifest", help="run manifest path (default next to the primary output)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="forge", description="MIP instance embeddings and heads")
    parser.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    p = add("gen", cmd_gen, "generate a corpus of MPS files")
    p.add_argument("--families", default="sc,vc,is", help=f"comma list of {', '.join(FAMILIES)} or aliases")
    p.add_argument("--sizes", default="easy,medium")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", required=True)

    p = add("pretrain", cmd_pretrain, "unsupervised training; writes a checkpoint and loss CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--loss-csv")
    p.add_argument("--out", required=True)

    p = add("embed", cmd_embed, "write instance embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--raw", action="store_true", help="code counts instead of frequencies")
    p.add_argument("--format", choices=["auto", "csv", "binary"], default="auto")
    p.add_argument("--out", required=True)

    p = add("cluster", cmd_cluster, "k-means on embeddings; prints NMI")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--k-clusters", type=int, default=6)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--baselines", action="store_true", help="also score mean readout and label propagation")
    p.add_argument("--projection", help="write a 2-D PCA projection CSV")
    p.add_argument("--out", default="clusters.csv")

    p = add("arith", cmd_arith, "embedding vector arithmetic")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--minuend", default="vc")
    p.add_argument("--subtrahend", default="sc")
    p.add_argument("--addend", default="bp")
    p.add_argument("--target", default="is")
    p.add_argument("--out", default="arith.csv")

    p = add("finetune-gap", cmd_finetune_gap, "label gaps with the mini-solver and fit the gap head")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--node-limit", type=int, default=300)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--from-scratch", action="store_true")
    p.add_argument("--labels-out")
    p.add_argument("--out", required=True)

    p = add("cut", cmd_cut, "predict the gap and append a pseudo-cut")
    p.add_argument("--instance", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--shrink", type=float, default=0.9)
    p.add_argument("--label", type=float, help="true gap, if known, for the report")
    p.add_argument("--report")
    p.add_argument("--out", required=True)

    p = add("finetune-guide", cmd_finetune_guide, "solution pools and guidance-head fine-tuning")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--node-limit", type=int, default=1500)
    p.add_argument("--pool-size", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--out", required=True)

    p = add("hints", cmd_hints, "variable hints around an anchor solution")
    p.add_argument("--instance", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--solution", help="anchor solution file; solved with the mini-solver if absent")
    p.add_argument("--node-limit", type=int, default=1000)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--decile", type=float, default=0.1)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "summarize a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus")
    p.add_argument("--loss-csv")
    return parser


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(_require_file(path)) as fh:
        for no, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{no}: expected key = value")
            key, val = (t.strip() for t in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}


def _preparse_config(parser: argparse.ArgumentParser, argv: list[str]):
    """Find the subcommand and ``--config`` path before the full parse."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((t for t in argv if t in sub.choices), None)
    if command is None:
        return None, None
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv[argv.index(command) + 1:])
    return command, known.config


def _apply_config(parser: argparse.ArgumentParser, command: str, config) -> None:
    """Install the config file's values as subparser defaults."""
    values = read_config_file(config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, val in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help", "func"):
            raise UsageError(f"{config}: unknown option {key!r} for {command}")
        if isinstance(act, argparse._StoreTrueAction):
            low = val.lower()
            if low not in _TRUE | _FALSE:
                raise UsageError(f"{config}: {key} expects true/false")
            defaults[key] = low in _TRUE
        else:
            try:
                defaults[key] = act.type(val) if act.type else val
            except ValueError as exc:
                raise UsageError(f"{config}: bad value for {key}: {exc}") from None
            if act.choices is not None and defaults[key] not in act.choices:
                raise UsageError(f"{config}: {key} must be one of {sorted(act.choices)}")
        # a required flag supplied by the file is no longer required on the command line
        act.required = False
    sp.set_defaults(**defaults)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _resolved_options(args) -> dict:
    skip = {"func", "manifest", "log_level", "jobs", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_run_manifest(path, args, argv, inputs, outputs) -> None:
    options = _resolved_options(args)
    blob = json.dumps(options, sort_keys=True, default=str).encode()
    record = {
        "forge_version": __version__,
        "command": args.command,
        "argv": list(argv),
        "seed": args.seed,
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "options": options,
        "inputs": [{"path": str(p), "sha256": _sha256(Path(p))} for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _thread_limit(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command, config = _preparse_config(parser, argv)
        if config:
            _apply_config(parser, command, config)
        args = parser.parse_args(argv)
        args.seed = _resolve_seed(args)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.deterministic:
            args.jobs = 1
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"forge: error: {exc}", file=sys.stderr)
        return EXIT_DATA

    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.deterministic):
            outputs, inputs, manifest_path = args.func(args)
        write_run_manifest(args.manifest or manifest_path, args, argv, inputs, outputs)
    except UsageError as exc:
        print(f"forge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"forge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, HeadError, MpsParseError, InvalidInstanceError, OSError, ValueError,
            KeyError) as exc:
        print(f"forge: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())

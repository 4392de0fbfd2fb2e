"""Command-line entry point: ``voxcluster <subcommand> ...``.

Option values resolve as: command-line flag, then ``VOX_<NAME>``
environment variable, then the JSON file given by ``--config``, then the
built-in default. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DimensionError, FormatError, VoxError

log = logging.getLogger("voxcluster")

DEFAULTS = {
    "synth": {"speakers": 8, "clips": 10, "seconds": 4.0, "seed": 7},
    "train": {"lr": 0.01, "batch": 32, "epochs": 30, "seed": 42, "dropout": 0.2, "hop": 1.0,
              "reduced": False, "scale": None},
    "embed": {"hop": 1.0},
    "diarize": {"hop": 1.0, "k": None, "viz": False, "seed": 42, "perplexity": None, "tsne_iters": 1000},
    "identify": {"hop": 1.0, "C": 1.0, "epochs": 50, "seed": 42, "space": "embedding"},
    "viz": {"seed": 42, "perplexity": None, "tsne_iters": 1000},
    "features": {"hop": 1.0, "format": "bin"},
}


class Resolved(dict):
    __getattr__ = dict.__getitem__


def _cast(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def resolve(args: argparse.Namespace) -> Resolved:
    cfg_file = {}
    if args.config:
        try:
            cfg_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        cfg_file = {**cfg_file.get("common", {}), **cfg_file.get(args.command, cfg_file)}
    out = Resolved()
    for name, value in vars(args).items():
        if name in ("func",):
            continue
        out[name] = value
    for name, default in DEFAULTS.get(args.command, {}).items():
        value = getattr(args, name, None)
        if value is None:
            env = os.environ.get(f"VOX_{name.upper()}")
            if env is not None:
                value = _cast(env, default)
            elif name in cfg_file:
                value = cfg_file[name]
            else:
                value = default
        out[name] = value
    return out


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_json(out: Path, cfg: Resolved) -> None:
    from .kernels import BACKEND

    record = {"version": __version__, "backend": BACKEND}
    for k, v in sorted(cfg.items()):
        if isinstance(v, Path):
            v = str(v)
        record[k] = v
    (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True, default=str) + "\n")


def _load_model(path):
    from .cnn import CnnModel

    if not Path(path).exists():
        raise ConfigError(f"model file not found: {path}")
    return CnnModel.load(path)


def _load_input(path):
    from .audio import load_clip

    if not Path(path).exists():
        raise ConfigError(f"input file not found: {path}")
    return load_clip(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg) -> None:
    from .audio import SNIPPET_SECONDS
    from .synth import synth_speaker_corpus

    if cfg.seconds < SNIPPET_SECONDS:
        raise ConfigError(f"--seconds must be at least {SNIPPET_SECONDS:g} s (one analysis window)")
    if cfg.speakers < 1 or cfg.clips < 1:
        raise ConfigError("--speakers and --clips must be positive")
    out = _outdir(cfg)
    manifest, _ = synth_speaker_corpus(cfg.speakers, cfg.clips, cfg.seconds, cfg.seed, out_dir=out)
    write_run_json(out, cfg)
    print(f"wrote {len(manifest.entries)} clips for {cfg.speakers} speakers to {out}")


def cmd_train(cfg) -> None:
    from .audio import CorpusManifest
    from .cnn import PAPER_ARCH, REDUCED_ARCH, CnnModel, TrainConfig, scaled_arch, sgd_train
    from .dataset import manifest_snippets
    from dataclasses import replace

    manifest = CorpusManifest.load(cfg.manifest)
    manifest.check_contiguous()
    k = manifest.num_speakers
    if cfg.reduced:
        arch = replace(REDUCED_ARCH, num_classes=k)
    elif cfg.scale:
        arch = scaled_arch(float(cfg.scale), k)
    else:
        arch = replace(PAPER_ARCH, num_classes=k)
    tc = TrainConfig(learning_rate=cfg.lr, batch_size=cfg.batch, epochs=cfg.epochs, seed=cfg.seed,
                     dropout_rate=cfg.dropout)
    arch = replace(arch, dropout=tc.dropout_rate)
    train_split = "train" if manifest.split("train") else None
    tr = manifest_snippets(manifest, train_split, cfg.hop)
    va = manifest_snippets(manifest, "validation", cfg.hop)
    if len(tr) == 0:
        raise ConfigError("no training snippets (clips must be at least 1 s)")
    out = _outdir(cfg)
    model = CnnModel(arch, seed=cfg.seed)
    history = sgd_train(model, tr.x, tr.y, tc, val=(va.x, va.y) if len(va) else None)
    model.save(out / "model.voxcnn")
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for e in history.epochs:
            w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.train_acc:.4f}",
                        "" if e.val_acc is None else f"{e.val_acc:.4f}"])
    write_run_json(out, {**cfg, "architecture": arch.to_json()})
    last = history.epochs[-1] if history.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}: loss {last.train_loss:.4f} train acc {last.train_acc:.3f} "
              f"val acc {last.val_acc if last.val_acc is not None else 'n/a'}")


def _embed_inputs(model, cfg):
    from .audio import CorpusManifest, load_clip
    from .embeddings import EmbeddingSet, embed_clip

    sets = []
    if cfg.manifest:
        manifest = CorpusManifest.load(cfg.manifest)
        for e in manifest.entries:
            sets.append(embed_clip(model, load_clip(e.path), cfg.hop, label=e.speaker))
    for path in cfg.inputs or []:
        sets.append(embed_clip(model, _load_input(path), cfg.hop))
    if not sets:
        raise ConfigError("nothing to embed: give input WAVs or --manifest")
    return EmbeddingSet.concat(sets)


def cmd_embed(cfg) -> None:
    model = _load_model(cfg.model)
    emb = _embed_inputs(model, cfg)
    out = _outdir(cfg)
    emb.save(out / "embeddings")
    emb.to_csv(out / "embeddings.csv")
    write_run_json(out, cfg)
    print(f"wrote {len(emb)} embeddings of dim {emb.dim} to {out}")


def _write_projections(out: Path, emb, labels, cfg, dendro=None, cut_distance=None) -> None:
    from .embeddings import EmbeddingSet, pca_project, tsne_project
    from .svg import dendrogram_svg, scatter_svg

    view = EmbeddingSet(emb.vectors, emb.window_times, emb.clip_refs, labels)
    if len(view) >= 3:
        try:
            proj, _, _ = pca_project(view)
            proj.to_csv(out / "pca.csv")
            (out / "pca.svg").write_text(scatter_svg(proj.points, labels, "PCA"))
        except ConfigError as exc:
            log.warning("PCA skipped: %s", exc)
    if len(view) >= 4:
        proj, _ = tsne_project(view, perplexity=cfg.get("perplexity"), iters=cfg.get("tsne_iters", 1000),
                               seed=cfg.seed)
        proj.to_csv(out / "tsne.csv")
        (out / "tsne.svg").write_text(scatter_svg(proj.points, labels, "t-SNE (cosine)"))
    if dendro is not None:
        (out / "dendrogram.json").write_text(dendro.to_json() + "\n")
        (out / "dendrogram.svg").write_text(dendrogram_svg(dendro, "Average-linkage dendrogram", cut_distance))


def cmd_diarize(cfg) -> None:
    from .segmentation import diarize

    model = _load_model(cfg.model)
    clip = _load_input(cfg.input)
    result = diarize(clip, model, k=cfg.k, hop=cfg.hop)
    out = _outdir(cfg)
    stem = Path(cfg.input).stem
    (out / f"{stem}.rttm").write_text(result.to_rttm())
    (out / f"{stem}.json").write_text(result.to_json() + "\n")
    if cfg.viz:
        _write_projections(out, result.embeddings, result.assignment.labels, cfg, result.dendrogram,
                           result.assignment.cut_distance)
    write_run_json(out, cfg)
    print(f"{stem}: {result.num_speakers} speaker(s), {len(result.segments)} segment(s)")


def _enrollment(model, cfg):
    from .audio import CorpusManifest, ManifestEntry, load_clip
    from .embeddings import EmbeddingSet, embed_clip

    src = Path(cfg.enroll)
    if src.is_dir():
        entries = []
        speakers = sorted(p for p in src.iterdir() if p.is_dir())
        if not speakers:
            raise ConfigError(f"enrollment directory {src} has no speaker sub-directories")
        for label, d in enumerate(speakers):
            entries += [ManifestEntry(p, label) for p in sorted(d.glob("*.wav"))]
        names = [d.name for d in speakers]
    elif src.exists():
        manifest = CorpusManifest.load(src).canonicalize()
        entries = manifest.entries
        names = [str(i) for i in range(manifest.num_speakers)]
    else:
        raise ConfigError(f"enrollment source not found: {src}")
    sets = [embed_clip(model, load_clip(e.path), cfg.hop, label=e.speaker) for e in entries]
    return EmbeddingSet.concat(sets), names


def cmd_identify(cfg) -> None:
    from .embeddings import EmbeddingSet, embed_clip, tsne_project
    from .identify import SvmEnsemble, train_ensemble

    model = _load_model(cfg.model)
    query = embed_clip(model, _load_input(cfg.query), cfg.hop)
    names = None
    if cfg.svm and Path(cfg.svm).exists() and not cfg.enroll:
        ens = SvmEnsemble.load(cfg.svm)
        if ens.dim != query.dim:
            raise DimensionError(f"SVM ensemble expects dim {ens.dim}, model produces {query.dim}")
        pred_votes = ens.votes(query.vectors)
    else:
        if not cfg.enroll:
            raise ConfigError("identify needs --enroll (or an existing --svm file)")
        enroll, names = _enrollment(model, cfg)
        if cfg.space == "tsne":
            joint = EmbeddingSet.concat([enroll, EmbeddingSet(query.vectors, query.window_times, query.clip_refs,
                                                              np.full(len(query), -1))])
            proj, _ = tsne_project(joint, seed=cfg.seed)
            n = len(enroll)
            ens = train_ensemble(proj.points[:n], enroll.labels, cfg.C, cfg.epochs, cfg.seed)
            pred_votes = ens.votes(proj.points[n:])
        else:
            ens = train_ensemble(enroll.vectors, enroll.labels, cfg.C, cfg.epochs, cfg.seed)
            pred_votes = ens.votes(query.vectors)
        if cfg.svm:
            ens.save(cfg.svm)
    out = _outdir(cfg)
    pred = pred_votes.argmax(axis=1)
    with open(out / "identify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "speaker", "votes"])
        for t, p, v in zip(query.window_times, pred, pred_votes):
            label = names[p] if names else str(int(p))
            w.writerow([f"{t:.3f}", label, ";".join(str(int(c)) for c in v)])
    write_run_json(out, cfg)
    counts = np.bincount(pred, minlength=ens.num_classes)
    best = int(counts.argmax())
    print(f"majority speaker: {names[best] if names else best} ({counts[best]}/{len(pred)} windows)")


def cmd_viz(cfg) -> None:
    from .clustering import cluster
    from .embeddings import EmbeddingSet

    emb = EmbeddingSet.load(cfg.embeddings)
    out = _outdir(cfg)
    assign, dendro = cluster(emb)
    labels = emb.labels if emb.labels is not None else assign.labels
    _write_projections(out, emb, labels, cfg, dendro, assign.cut_distance)
    write_run_json(out, cfg)
    print(f"wrote figures to {out}")


def cmd_features(cfg) -> None:
    from .audio import require_windows
    from .binfmt import write_container
    from .features import log_mel_snippet

    clip = _load_input(cfg.input)
    windows = require_windows(clip, cfg.hop)
    out = _outdir(cfg)
    stem = Path(cfg.input).stem
    snippets = [log_mel_snippet(clip, w) for w in windows]
    if cfg.format == "csv":
        with open(out / f"{stem}_mel.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start_time", "band"] + [f"f{i}" for i in range(snippets[0].values.shape[1])])
            for s in snippets:
                for b, row in enumerate(s.values):
                    w.writerow([f"{s.start_time:.3f}", b] + [f"{v:.6g}" for v in row])
    elif cfg.format == "bin":
        header = {"kind": "mel_snippets", "clip": stem, "start_times": [s.start_time for s in snippets]}
        write_container(out / f"{stem}_mel.voxmel", b"VOXMEL01", header,
                        [("snippets", np.stack([s.values for s in snippets]))])
    else:
        raise ConfigError(f"unknown format {cfg.format!r}")
    write_run_json(out, cfg)
    print(f"wrote {len(snippets)} snippets to {out}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--out", default=".", help="output directory (default: .)")
    common.add_argument("--config", help="JSON config file; keys per subcommand or flat")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int)

    p = argparse.ArgumentParser(prog="voxcluster", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic speaker corpus")
    s.add_argument("--speakers", type=int)
    s.add_argument("--clips", type=int, help="clips per speaker")
    s.add_argument("--seconds", type=float, help="clip length in seconds (>= 1)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train the CNN speaker classifier")
    s.add_argument("--manifest", required=True)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--hop", type=float, help="snippet hop in seconds (default 1.0)")
    s.add_argument("--reduced", action="store_const", const=True,
                   help="desk-scale layer sizes (4/8 filters, 32/16 dense units)")
    s.add_argument("--scale", type=float, help="divide every filter/unit count by this factor")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", parents=[common], help="extract L7 embeddings per 1 s window")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest")
    s.add_argument("--hop", type=float)
    s.add_argument("inputs", nargs="*")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("diarize", parents=[common], help="who spoke when, as RTTM + JSON")
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, help="force the number of speakers")
    s.add_argument("--hop", type=float)
    s.add_argument("--viz", action="store_const", const=True, help="also write dendrogram/t-SNE/PCA SVGs")
    s.add_argument("--perplexity", type=float)
    s.add_argument("--tsne-iters", dest="tsne_iters", type=int)
    s.add_argument("input")
    s.set_defaults(func=cmd_diarize)

    s = sub.add_parser("identify", parents=[common], help="label query windows with enrolled speakers")
    s.add_argument("--model", required=True)
    s.add_argument("--enroll", help="manifest CSV or directory with one sub-directory per speaker")
    s.add_argument("--svm", help="ensemble file to save (with --enroll) or load")
    s.add_argument("--C", type=float)
    s.add_argument("--epochs", type=int)
    s.add_argument("--hop", type=float)
    s.add_argument("--space", choices=("embedding", "tsne"))
    s.add_argument("--query", required=True)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("viz", parents=[common], help="PCA/t-SNE/dendrogram figures for saved embeddings")
    s.add_argument("--embeddings", required=True, help="path stem of an embed output (without suffix)")
    s.add_argument("--perplexity", type=float)
    s.add_argument("--tsne-iters", dest="tsne_iters", type=int)
    s.set_defaults(func=cmd_viz)

    s = sub.add_parser("features", parents=[common], help="dump log-mel snippets")
    s.add_argument("action", choices=("dump",))
    s.add_argument("--hop", type=float)
    s.add_argument("--format", choices=("bin", "csv"))
    s.add_argument("input")
    s.set_defaults(func=cmd_features)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        args.func(cfg)
    except (ConfigError, FormatError, DimensionError) as exc:
        print(f"voxcluster {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except VoxError as exc:
        print(f"voxcluster {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"voxcluster {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

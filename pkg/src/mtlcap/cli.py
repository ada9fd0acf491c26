"""Command-line pipeline: prepare -> extract -> train -> caption -> evaluate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime or
training error. The feature-cache directory can be overridden with the
MTLCAP_CACHE_DIR environment variable.
"""

import argparse
import os
import re
import sys

from . import corpus, features, metrics, text, training
from .config import echo_config, load_run_config
from .decoder import beam_decode, greedy_decode
from .encoder import encode
from .errors import (
    CheckpointLacksDecoder,
    ConfigError,
    DataError,
    MissingFile,
    RuntimeFailure,
)
from .seeding import derive_rng, derive_seed

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _labeled_image_id(path: str) -> str:
    """Cache key for auxiliary images: manifest path with separators folded."""
    return re.sub(r"[/\\]", "__", path)


def _resolve(base_file, rel_path):
    return os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(base_file)), rel_path))


def _cache_dir(args):
    cache = getattr(args, "cache_dir", None) or os.environ.get("MTLCAP_CACHE_DIR")
    if not cache:
        raise ConfigError("no cache directory given (use --cache-dir or MTLCAP_CACHE_DIR)")
    return cache


# ---------------------------------------------------------------- prepare

def cmd_prepare(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    records = corpus.convert_flickr_token_file(
        args.tokens, {"train": args.split_train, "val": args.split_val, "test": args.split_test})
    images_root = args.images_root or os.path.dirname(os.path.abspath(args.tokens))
    for rec in records:
        rec.image_path = os.path.relpath(os.path.join(images_root, rec.image_path), args.out)
    if args.train_fraction < 1.0:
        spec = corpus.SplitSpec(seed=args.seed, train_fraction=args.train_fraction)
        records = corpus.subsample_train(records, spec)
    manifest_path = os.path.join(args.out, "manifest.tsv")
    corpus.write_manifest(records, manifest_path)
    counts = {s: sum(1 for r in records if r.split == s) for s in corpus.SPLITS}
    print(f"manifest: {manifest_path}")
    print(f"records: {len(records)} (train {counts['train']}, val {counts['val']}, test {counts['test']})")

    if args.action_dir:
        images, class_names = corpus.load_labeled_folder(args.action_dir)
        for img in images:
            img.image_path = os.path.relpath(os.path.abspath(img.image_path), args.out)
        corpus.write_labeled_manifest(images, os.path.join(args.out, "action_manifest.tsv"))
        with open(os.path.join(args.out, "action_classes.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(class_names) + "\n")
        print(f"action: {len(images)} images, {len(class_names)} classes")

    if args.cifar_batch:
        if not args.object_classes:
            raise ConfigError("--object-classes is required with --cifar-batch")
        with open(args.object_classes, encoding="utf-8") as f:
            class_names = [line.strip() for line in f if line.strip()]
        cifar = corpus.load_cifar_batches(args.cifar_batch)
        bad = [r.label_id for r in cifar if r.label_id >= len(class_names)]
        if bad:
            raise DataError(f"fine label {bad[0]} has no class name (got {len(class_names)} names)")
        from PIL import Image

        images = []
        img_dir = os.path.join(args.out, "object_images")
        for i, rec in enumerate(cifar):
            cdir = os.path.join(img_dir, class_names[rec.label_id])
            os.makedirs(cdir, exist_ok=True)
            path = os.path.join(cdir, f"obj_{i:05d}.png")
            Image.fromarray(rec.pixels).save(path)
            images.append(corpus.LabeledImage(
                os.path.relpath(path, args.out), rec.label_id, class_names[rec.label_id]))
        corpus.write_labeled_manifest(images, os.path.join(args.out, "object_manifest.tsv"))
        with open(os.path.join(args.out, "object_classes.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(class_names) + "\n")
        print(f"object: {len(images)} images, {len(class_names)} classes")
    return EXIT_OK


# ---------------------------------------------------------------- extract

def _extract_targets(args):
    """(image_id, absolute path) for every image named by the given manifests."""
    targets = []
    if args.manifest:
        for rec in corpus.load_caption_manifest(args.manifest):
            targets.append((rec.image_id, _resolve(args.manifest, rec.image_path)))
    for labeled in args.labeled or []:
        for img in corpus.load_labeled_manifest(labeled):
            targets.append((_labeled_image_id(img.image_path), _resolve(labeled, img.image_path)))
    return targets


def cmd_extract(args) -> int:
    cache = _cache_dir(args)
    spec = features.BackboneSpec(args.backbone, weights_ref=args.weights_ref)
    targets = _extract_targets(args)
    if not targets:
        raise ConfigError("nothing to extract: pass --manifest and/or --labeled")
    done = skipped = 0
    failures = []
    for image_id, path in targets:
        if not args.force and os.path.exists(features.cache_path(image_id, cache, args.backbone)):
            skipped += 1
            continue
        try:
            grid = features.extract_features(path, spec)
        except (DataError, RuntimeFailure) as e:
            failures.append((image_id, str(e)))
            print(f"failed: {image_id}: {e}", file=sys.stderr)
            continue
        features.cache_write(image_id, grid, cache, args.backbone)
        done += 1
    print(f"extracted {done}, skipped {skipped}, failed {len(failures)} (cache: {cache})")
    return EXIT_DATA if failures else EXIT_OK


# ---------------------------------------------------------------- train

def _read_grid(image_id, cache, backbone):
    return features.cache_read(image_id, cache, backbone)


def _caption_dataset(cfg, vocab, embeddings, cache):
    records = corpus.load_caption_manifest(cfg.manifest)
    samples = {"train": [], "val": []}
    for rec in records:
        if rec.split == "test":
            continue
        grid = _read_grid(rec.image_id, cache, cfg.backbone)
        for cap in rec.captions:
            seq = text.encode_caption(cap, vocab, cfg.max_caption_len)
            samples[rec.split].append((rec.image_id, grid, seq))
    return training.CaptionDataset(samples["train"], samples["val"], vocab, embeddings)


def _classifier_dataset(manifest_path, cfg, task, cache):
    images = corpus.load_labeled_manifest(manifest_path)
    class_names = sorted({img.label_name for img in images})
    name_order = {n: i for i, n in enumerate(class_names)}
    samples = []
    for img in images:
        grid = _read_grid(_labeled_image_id(img.image_path), cache, cfg.backbone)
        samples.append((_labeled_image_id(img.image_path), grid, name_order[img.label_name]))
    rng = derive_rng(cfg.seed, f"{task}.valsplit")
    order = rng.permutation(len(samples))
    n_val = int(round(cfg.aux_val_fraction * len(samples)))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return training.ClassifierDataset(train, val, class_names)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.phases:
        cfg.phases = tuple(p.strip() for p in args.phases.split(",") if p.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.cache_dir:
        cfg.cache_dir = args.cache_dir
    elif os.environ.get("MTLCAP_CACHE_DIR"):
        cfg.cache_dir = os.environ["MTLCAP_CACHE_DIR"]
    if not cfg.cache_dir:
        raise ConfigError("config needs data.cache_dir (or pass --cache-dir)")
    if not cfg.manifest:
        raise ConfigError("config needs data.manifest")
    tc = cfg.train_config()  # validates phase order before any compute

    records = corpus.load_caption_manifest(cfg.manifest)
    train_records = [r for r in records if r.split == "train"]
    if cfg.vocab:
        vocab = text.Vocabulary.load(cfg.vocab)
    else:
        vocab = text.build_vocabulary(train_records, cfg.vocab_min_count)
    if cfg.embeddings:
        embeddings = text.load_word_vectors(cfg.embeddings, vocab, cfg.embed_dim,
                                            seed=derive_seed(cfg.seed, "embeddings"))
    else:
        embeddings = text.init_embeddings(vocab, cfg.embed_dim, derive_seed(cfg.seed, "embeddings"))

    datasets = {}
    for phase in cfg.phases:
        if phase == "caption":
            datasets["caption"] = _caption_dataset(cfg, vocab, embeddings, cfg.cache_dir)
        else:
            manifest = cfg.action_manifest if phase == "action" else cfg.object_manifest
            if not manifest:
                raise ConfigError(f"config needs data.{phase}_manifest for phase '{phase}'")
            datasets[phase] = _classifier_dataset(manifest, cfg, phase, cfg.cache_dir)

    os.makedirs(args.out, exist_ok=True)
    echo_config(cfg, os.path.join(args.out, "config_echo.ini"))
    vocab.save(os.path.join(args.out, "vocab.txt"))
    for phase in cfg.phases:
        if phase != "caption":
            with open(os.path.join(args.out, f"{phase}_classes.txt"), "w", encoding="utf-8") as f:
                f.write("\n".join(datasets[phase].class_names) + "\n")

    ck = training.run_pipeline(tc, datasets, args.out)
    print(f"phases completed: {', '.join(ck.provenance)}")
    for phase in cfg.phases:
        report_path = os.path.join(args.out, f"report_{phase}.tsv")
        with open(report_path, encoding="utf-8") as f:
            last = f.readlines()[-1].rstrip("\n")
        print(f"{phase}: final epoch [{last}]")
    print(f"checkpoint: {os.path.join(args.out, f'checkpoint_{cfg.phases[-1]}.amtc')}")
    return EXIT_OK


# ---------------------------------------------------------------- caption

def cmd_caption(args) -> int:
    ck = training.ModelCheckpoint.load(args.checkpoint)
    if ck.decoder is None or "caption" not in ck.provenance:
        raise CheckpointLacksDecoder(f"{args.checkpoint} was not trained on captioning")
    vocab = text.Vocabulary.load(args.vocab)
    if len(vocab) != ck.decoder.vocab_size:
        raise DataError(f"vocab has {len(vocab)} tokens, checkpoint expects {ck.decoder.vocab_size}")
    cache = _cache_dir(args)
    records = corpus.load_caption_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    if not records:
        raise DataError(f"no records in split {args.split!r}")

    lines = []
    for rec in records:
        grid = _read_grid(rec.image_id, cache, args.backbone)
        annotations = encode(grid, ck.encoder, False)
        if args.greedy or args.beam == 1:
            seq = greedy_decode(annotations, ck.decoder, ck.attention, args.max_len)
        else:
            seq = beam_decode(annotations, ck.decoder, ck.attention, args.beam, args.max_len)
        lines.append(f"{rec.image_id}\t{text.decode_tokens(seq.ids, vocab)}\n")
    with open(args.out, "w", encoding="utf-8") as f:
        f.writelines(lines)
    print(f"wrote {len(lines)} captions to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def _load_hypotheses(path):
    try:
        f = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    hyps = {}
    with f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            image_id, _, caption = line.partition("\t")
            hyps[image_id] = caption
    return hyps


def cmd_evaluate(args) -> int:
    records = corpus.load_caption_manifest(args.manifest)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    hyps = _load_hypotheses(args.hypotheses)
    report = metrics.evaluate_corpus(records, hyps)
    print(report.table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval_report.txt"), "w", encoding="utf-8") as f:
            f.write(report.table() + "\n")
        with open(os.path.join(args.out, "eval_report.tsv"), "w", encoding="utf-8") as f:
            f.write(report.tsv())
        with open(os.path.join(args.out, "eval_sentences.tsv"), "w", encoding="utf-8") as f:
            f.write(report.sentences_tsv())
        print(f"report written under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- toydata

def cmd_toydata(args) -> int:
    from .toydata import generate_toy_dataset

    summary = generate_toy_dataset(args.out, seed=args.seed)
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="mtlcap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build the unified manifest and auxiliary manifests")
    p.add_argument("--tokens", required=True, help="Flickr-style token file")
    p.add_argument("--split-train", required=True)
    p.add_argument("--split-val", required=True)
    p.add_argument("--split-test", required=True)
    p.add_argument("--images-root", default="", help="directory image names are relative to")
    p.add_argument("--action-dir", default="", help="folder-per-class action images")
    p.add_argument("--cifar-batch", nargs="*", default=[], help="CIFAR binary batch files")
    p.add_argument("--object-classes", default="", help="class-name list for the CIFAR labels")
    p.add_argument("--train-fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("extract", help="populate the feature cache")
    p.add_argument("--manifest", default="", help="caption manifest")
    p.add_argument("--labeled", action="append", default=[], help="labeled manifest (repeatable)")
    p.add_argument("--backbone", default="toy", choices=sorted(features.BACKBONE_SHAPES))
    p.add_argument("--weights-ref", default="")
    p.add_argument("--cache-dir", default="")
    p.add_argument("--force", action="store_true", help="re-extract existing entries")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="run the configured training phases")
    p.add_argument("--config", required=True, help="run-config INI file")
    p.add_argument("--phases", default="", help="override config phases, e.g. 'action,caption'")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--cache-dir", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="generate captions from a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--backbone", default="toy", choices=sorted(features.BACKBONE_SHAPES))
    p.add_argument("--cache-dir", default="")
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--greedy", action="store_true", help="greedy decoding (same as --beam 1)")
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score hypothesis captions (B-2/B-3/B-4/METEOR)")
    p.add_argument("--hypotheses", required=True, help="image_id<TAB>caption file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--out", default="", help="directory for report files")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("toydata", help="write the bundled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toydata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

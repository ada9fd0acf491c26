"""Dataset ingestion: caption manifests, Flickr-style token files, labeled
image folders and CIFAR-format binary batches.

All loaders return plain in-memory records; splits are reproducible from a
SplitSpec alone. The unified manifest is line-delimited UTF-8 text, one
record per line:

    image_id<TAB>image_path<TAB>split<TAB>caption_1<US>caption_2<US>...

where <US> is the unit separator U+001F. Lines starting with '#' are
comments. Image paths are stored relative to the manifest's directory.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadIndex,
    DataError,
    DuplicateImageId,
    EmptyClassDir,
    MalformedLine,
    MissingFile,
    NoClasses,
    TruncatedFile,
    UnsplitImage,
)

SPLITS = ("train", "val", "test")
US = ""

CIFAR_RECORD_LEN = 2 + 3072  # coarse label byte, fine label byte, 32x32x3 pixels


@dataclass
class CaptionRecord:
    """One image with its caption variants and split assignment."""

    image_id: str
    image_path: str
    captions: list[str]
    split: str

    def __post_init__(self):
        if not self.captions:
            raise ValueError(f"record {self.image_id} has no captions")
        if self.split not in SPLITS:
            raise ValueError(f"record {self.image_id} has bad split {self.split!r}")


@dataclass
class LabeledImage:
    image_path: str
    label_id: int
    label_name: str


@dataclass
class CifarImage:
    """One record from a CIFAR-format binary batch (fine label + raw pixels)."""

    label_id: int  # fine label
    coarse_label: int
    pixels: np.ndarray = field(repr=False)  # (32, 32, 3) uint8


@dataclass(frozen=True)
class SplitSpec:
    """Reproducible train-subsample specification."""

    seed: int
    train_fraction: float = 1.0
    source: str = "seeded_subsample"  # or "provided_files"

    def __post_init__(self):
        if not (0.0 < self.train_fraction <= 1.0):
            raise ValueError("train_fraction must be in (0, 1]")
        if self.source not in ("provided_files", "seeded_subsample"):
            raise ValueError(f"bad source {self.source!r}")


def load_caption_manifest(path) -> list[CaptionRecord]:
    """Load a unified manifest file into records, in file order."""
    try:
        f = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    records = []
    seen = set()
    with f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise MalformedLine(line_no, f"expected 4 tab-separated fields, got {len(parts)}")
            image_id, image_path, split, caps = parts
            if split not in SPLITS:
                raise MalformedLine(line_no, f"unknown split {split!r}")
            captions = [c for c in caps.split(US) if c]
            if not captions:
                raise MalformedLine(line_no, "no captions")
            if image_id in seen:
                raise DuplicateImageId(image_id)
            seen.add(image_id)
            records.append(CaptionRecord(image_id, image_path, captions, split))
    return records


def write_manifest(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(f"{rec.image_id}\t{rec.image_path}\t{rec.split}\t{US.join(rec.captions)}\n")


def _read_name_list(path):
    try:
        with open(path, encoding="utf-8") as f:
            return [line.strip() for line in f if line.strip()]
    except FileNotFoundError:
        raise MissingFile(str(path)) from None


def convert_flickr_token_file(token_path, split_files: dict) -> list[CaptionRecord]:
    """Convert a Flickr-style token file ("name.jpg#idx<TAB>caption") plus
    per-split image lists into caption records.

    Captions are grouped per image and ordered by their #index; the split is
    taken from the split files. Records come out in first-appearance order.
    """
    split_of = {}
    for split, path in split_files.items():
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        for name in _read_name_list(path):
            if name in split_of and split_of[name] != split:
                raise DataError(f"image {name} listed in both {split_of[name]} and {split}")
            split_of[name] = split

    try:
        f = open(token_path, encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(token_path)) from None

    caps: dict[str, list[tuple[int, str]]] = {}
    order: list[str] = []
    with f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            head, tab, caption = line.partition("\t")
            if not tab:
                raise MalformedLine(line_no, "no tab separator")
            name, hashmark, idx = head.rpartition("#")
            if not hashmark:
                raise MalformedLine(line_no, "no #index on image name")
            try:
                idx = int(idx)
            except ValueError:
                raise BadIndex(line_no, f"non-integer index {idx!r}") from None
            if name not in caps:
                caps[name] = []
                order.append(name)
            caps[name].append((idx, caption))

    records = []
    for name in order:
        if name not in split_of:
            raise UnsplitImage(name)
        ordered = [c for _, c in sorted(caps[name], key=lambda p: p[0])]
        records.append(CaptionRecord(name, name, ordered, split_of[name]))
    return records


def subsample_train(records, spec: SplitSpec) -> list[CaptionRecord]:
    """Keep ceil(fraction * |train|) train records, chosen by a seeded
    permutation of the lexicographically sorted train image_ids. Val/test
    records pass through untouched; record order is preserved."""
    if spec.train_fraction == 1.0:
        return list(records)
    train_ids = sorted(r.image_id for r in records if r.split == "train")
    k = math.ceil(spec.train_fraction * len(train_ids))
    perm = np.random.default_rng(spec.seed).permutation(len(train_ids))
    keep = {train_ids[i] for i in perm[:k]}
    return [r for r in records if r.split != "train" or r.image_id in keep]


_IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".ppm"}


def load_labeled_folder(root) -> tuple[list[LabeledImage], list[str]]:
    """Load a folder-per-class image layout. label_id is the index of the
    class name in lexicographic order."""
    try:
        entries = sorted(os.listdir(root))
    except FileNotFoundError:
        raise MissingFile(str(root)) from None
    class_names = [e for e in entries if os.path.isdir(os.path.join(root, e))]
    if not class_names:
        raise NoClasses(f"no class subdirectories under {root}")
    images = []
    for label_id, name in enumerate(class_names):
        cdir = os.path.join(root, name)
        files = sorted(
            f for f in os.listdir(cdir)
            if os.path.isfile(os.path.join(cdir, f)) and os.path.splitext(f)[1].lower() in _IMAGE_EXTS
        )
        if not files:
            raise EmptyClassDir(name)
        for fname in files:
            images.append(LabeledImage(os.path.join(root, name, fname), label_id, name))
    return images, class_names


def load_cifar_batches(paths) -> list[CifarImage]:
    """Read CIFAR-format binary batches: per record one coarse label byte,
    one fine label byte, then 3072 pixel bytes (channel-major planes),
    following the dataset's published layout. Pixels come back as
    (32, 32, 3) uint8."""
    out = []
    for path in paths:
        try:
            data = open(path, "rb").read()
        except FileNotFoundError:
            raise MissingFile(str(path)) from None
        if len(data) % CIFAR_RECORD_LEN != 0:
            raise TruncatedFile(str(path))
        arr = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_LEN)
        for row in arr:
            pixels = row[2:].reshape(3, 32, 32).transpose(1, 2, 0)
            out.append(CifarImage(int(row[1]), int(row[0]), pixels))
    return out


def write_cifar_batch(records, path) -> None:
    """Write CifarImage records back to the binary batch format (test fixture
    helper and toy-data generator)."""
    with open(path, "wb") as f:
        for rec in records:
            planes = np.ascontiguousarray(rec.pixels.transpose(2, 0, 1), dtype=np.uint8)
            f.write(bytes([rec.coarse_label, rec.label_id]) + planes.tobytes())


def write_labeled_manifest(images, path) -> None:
    """Labeled-image manifest: path<TAB>label_id<TAB>label_name per line."""
    with open(path, "w", encoding="utf-8") as f:
        for img in images:
            f.write(f"{img.image_path}\t{img.label_id}\t{img.label_name}\n")


def load_labeled_manifest(path) -> list[LabeledImage]:
    try:
        f = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    out = []
    with f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedLine(line_no, f"expected 3 fields, got {len(parts)}")
            try:
                label_id = int(parts[1])
            except ValueError:
                raise MalformedLine(line_no, f"non-integer label {parts[1]!r}") from None
            out.append(LabeledImage(parts[0], label_id, parts[2]))
    return out

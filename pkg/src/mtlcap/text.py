"""Arabic-aware tokenization, vocabulary construction and word embeddings.

The normalization is deliberately minimal: strip diacritics, fold the
common letter variants (alef forms, final ya, ta marbuta), drop tatweel and
collapse whitespace. Everything downstream (vocabulary, encoding, metrics)
operates on the normalized token stream.
"""

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptyCorpus, MalformedVectorLine, MissingFile

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
SPECIALS = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

# tashkeel block U+064B..U+0652, plus tatweel U+0640
_DIACRITICS = re.compile("[ً-ْـ]")
_ALEF_VARIANTS = str.maketrans({"أ": "ا", "إ": "ا", "آ": "ا",
                                "ى": "ي", "ة": "ه"})
# ascii . , ! ? plus Arabic question mark and comma
_PUNCT = re.compile(r"([.,!?؟،])")
_WS = re.compile(r"\s+")


def normalize_arabic(text: str) -> str:
    """Normalize Arabic text: remove diacritics/tatweel, fold letter variants,
    collapse whitespace."""
    text = _DIACRITICS.sub("", text)
    text = text.translate(_ALEF_VARIANTS)
    return _WS.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    """Normalize then split on whitespace, with punctuation as separate tokens."""
    text = normalize_arabic(text)
    text = _PUNCT.sub(r" \1 ", text)
    return text.split()


@dataclass
class Vocabulary:
    """Token <-> id bijection with reserved specials at ids 0..3."""

    tokens: list[str]
    ids: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError(f"first four tokens must be {SPECIALS}")
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                tokens = [line.rstrip("\n") for line in f]
        except FileNotFoundError:
            raise MissingFile(str(path)) from None
        return cls(tokens)


def build_vocabulary(records, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from the captions of (train) records.

    Tokens with corpus frequency >= min_count are kept, ordered by
    descending frequency then lexicographically; specials are prepended.
    """
    if not records:
        raise EmptyCorpus("no records to build a vocabulary from")
    freq: dict[str, int] = {}
    for rec in records:
        for cap in rec.captions:
            for tok in tokenize(cap):
                freq[tok] = freq.get(tok, 0) + 1
    kept = [t for t, c in freq.items() if c >= min_count]
    kept.sort(key=lambda t: (-freq[t], t))
    return Vocabulary(list(SPECIALS) + kept)


@dataclass
class TokenSequence:
    """Decoder input/target ids; starts with START and ends with END."""

    ids: list[int]

    def __len__(self):
        return len(self.ids)


def encode_caption(caption: str, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Encode a caption as [START] + token ids + [END], truncated to max_len.

    Out-of-vocabulary tokens map to UNK. When truncating, END is always the
    last id; PAD never appears (padding is applied externally by batching).
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [vocab.id_of(t) for t in tokenize(caption)]
    ids = ids[: max_len - 2]
    return TokenSequence([START_ID] + ids + [END_ID])


def decode_tokens(ids, vocab: Vocabulary) -> str:
    """Turn an id sequence back into text, stripping specials."""
    words = [vocab.token_of(i) for i in ids if i not in (PAD_ID, START_ID, END_ID, UNK_ID)]
    return " ".join(words)


@dataclass
class EmbeddingMatrix:
    """|V| x dim embedding table. The PAD row is all zeros and stays frozen."""

    dim: int
    vectors: np.ndarray  # (|V|, dim) float64
    trainable: bool = True

    def __post_init__(self):
        if self.vectors.shape[1] != self.dim:
            raise ValueError("vector width does not match dim")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding values")


def init_embeddings(vocab: Vocabulary, dim: int, seed: int) -> EmbeddingMatrix:
    """Fresh embedding table: PAD zeros, everything else uniform(-0.1, 0.1)."""
    rng = np.random.default_rng(seed)
    vec = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    vec[PAD_ID] = 0.0
    return EmbeddingMatrix(dim, vec, trainable=True)


def load_word_vectors(path, vocab: Vocabulary, dim_expected: int, seed: int = 0) -> EmbeddingMatrix:
    """Load a textual word-vector file ("count dim" header, then one token per line).

    Rows for vocabulary tokens found in the file are copied verbatim; missing
    tokens and the START/END/UNK specials are drawn from seeded
    uniform(-0.1, 0.1); PAD stays all zeros.
    """
    try:
        f = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(str(path)) from None
    with f:
        header = f.readline().split()
        if len(header) != 2:
            raise MalformedVectorLine(1, "expected 'count dim' header")
        try:
            _count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise MalformedVectorLine(1, "non-integer header") from None
        if dim != dim_expected:
            raise DimMismatch(dim, dim_expected)

        mat = init_embeddings(vocab, dim_expected, seed)
        found = 0
        for line_no, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise MalformedVectorLine(line_no, f"expected {dim + 1} fields, got {len(parts)}")
            token = parts[0]
            if token not in vocab.ids or token in SPECIALS:
                continue
            try:
                mat.vectors[vocab.ids[token]] = [float(x) for x in parts[1:]]
            except ValueError:
                raise MalformedVectorLine(line_no, "non-numeric value") from None
            found += 1
    mat.vectors[PAD_ID] = 0.0
    return mat


def write_word_vectors(path, tokens, vectors) -> None:
    """Write a textual word-vector file (the same format load_word_vectors reads)."""
    vectors = np.asarray(vectors)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(tokens)} {vectors.shape[1]}\n")
        for tok, row in zip(tokens, vectors):
            f.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlcap.corpus import CaptionRecord
from mtlcap.errors import DimMismatch, EmptyCorpus, MalformedVectorLine
from mtlcap.text import (
    END_ID,
    PAD_ID,
    SPECIALS,
    START_ID,
    UNK_ID,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_caption,
    init_embeddings,
    load_word_vectors,
    normalize_arabic,
    tokenize,
    write_word_vectors,
)


class TestNormalize:
    def test_strips_diacritics(self):
        assert normalize_arabic("كِتَاب") == "كتاب"

    def test_identity_on_ascii(self):
        assert normalize_arabic("abc 123") == "abc 123"

    def test_alef_variants_and_trim(self):
        assert normalize_arabic("  أحمد  ") == "احمد"
        assert normalize_arabic("إلى آخر") == "الي اخر"

    def test_ta_marbuta_and_alef_maqsura(self):
        assert normalize_arabic("مدرسة") == "مدرسه"
        assert normalize_arabic("على") == "علي"

    def test_tatweel_removed_and_whitespace_collapsed(self):
        assert normalize_arabic("كـــتاب") == "كتاب"
        assert normalize_arabic("a \t b\n\nc") == "a b c"


class TestTokenize:
    def test_whitespace_split(self):
        assert tokenize("قطه تجلس") == ["قطه", "تجلس"]

    def test_empty(self):
        assert tokenize("") == []

    def test_punctuation_separated(self):
        assert tokenize("كلب يركض.") == ["كلب", "يركض", "."]
        assert tokenize("ما هذا؟") == ["ما", "هذا", "؟"]
        assert tokenize("a,b!c") == ["a", ",", "b", "!", "c"]


def _records(captions):
    return [CaptionRecord(f"i{k}", f"i{k}.png", [c], "train") for k, c in enumerate(captions)]


class TestVocabulary:
    def test_min_count_filters(self):
        vocab = build_vocabulary(_records(["a b", "a c"]), min_count=2)
        assert vocab.tokens == list(SPECIALS) + ["a"]

    def test_frequency_then_lexicographic_order(self):
        vocab = build_vocabulary(_records(["a b", "a c"]), min_count=1)
        assert vocab.tokens == list(SPECIALS) + ["a", "b", "c"]

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_vocabulary([], min_count=1)

    def test_bijection(self):
        vocab = build_vocabulary(_records(["a b c", "b c d"]), min_count=1)
        for tok, idx in vocab.ids.items():
            assert vocab.tokens[idx] == tok

    def test_save_load_roundtrip(self, tmp_path):
        vocab = build_vocabulary(_records(["قطه تجلس", "كلب يركض"]), min_count=1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert Vocabulary.load(path).tokens == vocab.tokens
        # file format: specials spelled literally on the first four lines
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[:4] == ["<pad>", "<start>", "<end>", "<unk>"]


class TestEncodeCaption:
    @pytest.fixture
    def vocab(self):
        return build_vocabulary(_records(["a b", "a c"]), min_count=1)

    def test_known_tokens(self, vocab):
        seq = encode_caption("a b", vocab, 10)
        assert seq.ids == [START_ID, vocab.ids["a"], vocab.ids["b"], END_ID]

    def test_unknown_tokens_map_to_unk(self, vocab):
        seq = encode_caption("x y", vocab, 10)
        assert seq.ids == [START_ID, UNK_ID, UNK_ID, END_ID]

    def test_truncation_keeps_end_last(self, vocab):
        seq = encode_caption("a b c a b c a b", vocab, 5)
        assert len(seq.ids) == 5
        assert seq.ids[-1] == END_ID
        assert PAD_ID not in seq.ids

    def test_roundtrip_in_vocab(self, vocab):
        caption = "a b c"
        seq = encode_caption(caption, vocab, 10)
        assert decode_tokens(seq.ids, vocab) == caption

    @given(st.integers(2, 12), st.lists(st.sampled_from(["a", "b", "x"]), max_size=15))
    @settings(max_examples=100, deadline=None)
    def test_never_exceeds_max_len_and_id_range(self, max_len, words):
        vocab = build_vocabulary(_records(["a b", "a c"]), min_count=1)
        seq = encode_caption(" ".join(words), vocab, max_len)
        assert 2 <= len(seq.ids) <= max_len
        assert all(0 <= i < len(vocab) for i in seq.ids)
        assert seq.ids[0] == START_ID and seq.ids[-1] == END_ID


class TestEmbeddings:
    @pytest.fixture
    def vocab(self):
        return build_vocabulary(_records(["a b", "a c"]), min_count=1)

    def test_pad_row_is_zero(self, vocab):
        mat = init_embeddings(vocab, 8, seed=3)
        assert np.all(mat.vectors[PAD_ID] == 0.0)

    def test_load_copies_known_rows_verbatim(self, vocab, tmp_path):
        path = tmp_path / "vec.txt"
        write_word_vectors(path, ["a"], np.array([[1.0, 0.0]]))
        mat = load_word_vectors(path, vocab, 2, seed=0)
        assert mat.vectors[vocab.ids["a"]].tolist() == [1.0, 0.0]
        assert mat.trainable

    def test_dim_mismatch(self, vocab, tmp_path):
        path = tmp_path / "vec.txt"
        write_word_vectors(path, ["a"], np.zeros((1, 300)))
        with pytest.raises(DimMismatch):
            load_word_vectors(path, vocab, 100, seed=0)

    def test_malformed_line(self, vocab, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("1 2\na 0.5\n", encoding="utf-8")  # one value short
        with pytest.raises(MalformedVectorLine) as exc:
            load_word_vectors(path, vocab, 2, seed=0)
        assert exc.value.line_no == 2

    def test_missing_rows_seeded_and_reproducible(self, vocab, tmp_path):
        path = tmp_path / "vec.txt"
        write_word_vectors(path, ["a"], np.array([[1.0, 0.0]]))
        m1 = load_word_vectors(path, vocab, 2, seed=9)
        m2 = load_word_vectors(path, vocab, 2, seed=9)
        assert np.array_equal(m1.vectors, m2.vectors)
        missing = m1.vectors[vocab.ids["b"]]
        assert np.all(np.abs(missing) <= 0.1) and np.any(missing != 0.0)

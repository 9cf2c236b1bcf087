"""Corpus machinery against a brute-force alignment oracle, plus
generator, tokenizer and file-format contracts."""
import numpy as np
import pytest
from oracles import all_minimal_scripts, oracle_labels, random_pair

from gedlab.corpus import (
    LABEL_ERR, LABEL_OK, RESERVED_PIECES,
    CorpusFormatError, LabeledSentence, SentencePair,
    build_corpus, build_vocabulary, dp_align_label, edit_distance,
    generate_synthetic_pairs, generator_vocabulary, merge_annotator_labels,
    pairs_to_labeled, read_corpus, read_corpus_sentences, read_pair_file,
    read_vocab_file, subtokenize, tokenize_sentence, write_corpus,
    write_pair_file, write_vocab_file,
)


class TestAlignment:
    def test_single_substitution(self):
        src = "He go to school".split()
        dst = "He goes to school".split()
        assert dp_align_label(src, dst) == ["c", "i", "c", "c"]

    def test_duplicated_word_marks_leftmost(self):
        src = "He goes to the the school".split()
        dst = "He goes to the school".split()
        assert dp_align_label(src, dst) == ["c", "c", "c", "i", "c", "c"]

    def test_missing_word_marks_following_token(self):
        src = "He goes school".split()
        dst = "He goes to school".split()
        assert dp_align_label(src, dst) == ["c", "c", "i"]

    def test_insertion_at_sentence_end_marks_last_token(self):
        src = ["see", "the"]
        dst = ["see", "the", "dog"]
        assert dp_align_label(src, dst) == ["c", "i"]

    def test_identical_sentences_all_clean(self):
        toks = "many dogs chase the cat".split()
        assert dp_align_label(toks, toks) == ["c"] * 5

    def test_empty_side_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            dp_align_label([], ["a"])
        with pytest.raises(ValueError, match="non-empty"):
            dp_align_label(["a"], [])

    def test_agrees_with_oracle_on_random_pairs(self):
        rng = np.random.default_rng(99)
        for _ in range(300):
            src, dst = random_pair(rng)
            assert dp_align_label(src, dst) == oracle_labels(src, dst), (
                src, dst)

    def test_clean_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            src, dst = random_pair(rng)
            labels = dp_align_label(src, dst)
            assert (src == dst) == (labels == [LABEL_OK] * len(src))

    def test_error_count_bounded_by_edit_distance(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            src, dst = random_pair(rng)
            labels = dp_align_label(src, dst)
            assert labels.count(LABEL_ERR) <= edit_distance(src, dst)

    def test_edit_distance_examples(self):
        assert edit_distance(["a"], ["a"]) == 0
        assert edit_distance(["a", "b"], ["a"]) == 1
        assert edit_distance("x y z".split(), "y z w".split()) == 2


class TestMerge:
    def test_union(self):
        assert merge_annotator_labels([["c", "c", "i"], ["c", "i", "c"]]) \
            == ["c", "i", "i"]

    def test_single_annotator_identity(self):
        assert merge_annotator_labels([["c", "i"]]) == ["c", "i"]

    def test_all_clean(self):
        assert merge_annotator_labels([["c"], ["c"]]) == ["c"]

    def test_idempotent_commutative_monotone(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            a = [LABEL_ERR if rng.random() < 0.3 else LABEL_OK for _ in range(n)]
            b = [LABEL_ERR if rng.random() < 0.3 else LABEL_OK for _ in range(n)]
            ab = merge_annotator_labels([a, b])
            assert merge_annotator_labels([ab, ab]) == ab
            assert merge_annotator_labels([b, a]) == ab
            # monotone: one more annotator never flips i back to c
            c = [LABEL_ERR if rng.random() < 0.3 else LABEL_OK for _ in range(n)]
            abc = merge_annotator_labels([a, b, c])
            assert all(not (x == LABEL_ERR and y == LABEL_OK)
                       for x, y in zip(ab, abc))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="annotator 1"):
            merge_annotator_labels([["c", "c"], ["c"]])

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError, match="label"):
            merge_annotator_labels([["c", "x"]])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            merge_annotator_labels([])


class TestGenerator:
    def test_error_rate_zero_gives_equal_sides(self):
        for p in generate_synthetic_pairs(50, seed=1, error_rate=0.0):
            assert p.source == p.corrected

    def test_same_seed_is_deterministic(self):
        a = generate_synthetic_pairs(40, seed=12, error_rate=0.7)
        b = generate_synthetic_pairs(40, seed=12, error_rate=0.7)
        assert a == b

    def test_seed7_single_pair_is_one_injected_error(self):
        (pair,) = generate_synthetic_pairs(1, seed=7, error_rate=1.0)
        assert pair.source != pair.corrected
        assert edit_distance(pair.source, pair.corrected) in (1, 2)

    def test_every_corruption_is_detectable(self):
        # closure: whenever sides differ, at least one token is labeled i
        for p in generate_synthetic_pairs(200, seed=5, error_rate=1.0):
            assert p.source != p.corrected
            assert edit_distance(p.source, p.corrected) in (1, 2)
            labels = dp_align_label(p.source, p.corrected)
            assert LABEL_ERR in labels

    def test_tokens_come_from_fixed_vocabulary(self):
        vocab = set(generator_vocabulary())
        for p in generate_synthetic_pairs(100, seed=2, error_rate=0.5):
            assert set(p.source) <= vocab
            assert set(p.corrected) <= vocab

    def test_vocabulary_is_small_and_sorted(self):
        words = generator_vocabulary()
        assert words == sorted(words)
        assert 100 <= len(words) <= 140

    def test_bad_arguments_rejected(self):
        with pytest.raises(ValueError, match="error_rate"):
            generate_synthetic_pairs(5, seed=0, error_rate=1.5)
        with pytest.raises(ValueError, match=">= 0"):
            generate_synthetic_pairs(-1, seed=0)

    def test_labeling_generated_pairs(self):
        pairs = generate_synthetic_pairs(30, seed=9, error_rate=0.5)
        labeled = pairs_to_labeled(pairs)
        assert len(labeled) == len(pairs)
        for p, s in zip(pairs, labeled):
            assert s.words == list(p.source)
            assert len(s.labels) == len(s.words)


class TestSubtokens:
    def small_vocab(self, *extra):
        pieces = {p: k for k, p in enumerate(RESERVED_PIECES)}
        for p in extra:
            pieces[p] = len(pieces)
        return pieces

    def test_in_vocabulary_word_is_single_piece(self):
        vocab = self.small_vocab("walk", "##ed")
        assert subtokenize("walk", vocab) == ["walk"]

    def test_greedy_continuation(self):
        vocab = self.small_vocab("walk", "##ed")
        assert subtokenize("walked", vocab) == ["walk", "##ed"]

    def test_unknown_word_maps_to_unk(self):
        vocab = self.small_vocab("walk", "##ed")
        assert subtokenize("běh", vocab) == ["[UNK]"]

    def test_longest_prefix_wins(self):
        vocab = self.small_vocab("walk", "walks", "##s")
        assert subtokenize("walks", vocab) == ["walks"]

    def test_reserved_pieces_never_match_text(self):
        vocab = self.small_vocab()
        assert subtokenize("[PAD]", vocab) == ["[UNK]"]

    def test_built_vocabulary_covers_corpus_alphabet(self):
        sents = [["dogs", "run"], ["dogs", "sleep"], ["cat", "naps"]]
        vocab = build_vocabulary(sents)
        # "dogs" appears twice -> whole-word piece; "cat" only once
        assert "dogs" in vocab.piece_to_id
        assert "cat" not in vocab.piece_to_id
        assert [vocab.piece_to_id[p] for p in RESERVED_PIECES] == [0, 1, 2, 3]
        # single characters and continuations exist, so nothing is UNK
        for s in sents:
            for w in s:
                assert subtokenize(w, vocab.piece_to_id) != ["[UNK]"]

    def test_vocabulary_ids_are_lexicographic_after_reserved(self):
        vocab = build_vocabulary([["b", "a", "b"], ["a"]])
        pieces = vocab.pieces_in_order()
        assert pieces[:4] == list(RESERVED_PIECES)
        assert pieces[4:] == sorted(pieces[4:])

    def test_tokenize_sentence_maps_first_subtokens(self):
        vocab = build_vocabulary([["walk", "walked"], ["walk", "walked"]])
        t = tokenize_sentence(["walked", "walk"], ["i", "c"], vocab)
        assert t.words == ["walked", "walk"]
        assert t.first_sub_index[0] == 0
        assert t.first_sub_index[1] == len(
            subtokenize("walked", vocab.piece_to_id))

    def test_truncation_drops_whole_words(self, caplog):
        vocab = build_vocabulary([["aa", "bb"], ["aa", "bb"]])
        words = ["aa", "bb", "aa", "bb"]
        with caplog.at_level("WARNING"):
            t = tokenize_sentence(words, ["c"] * 4, vocab, max_len=3)
        assert t.words == ["aa", "bb", "aa"]
        assert len(t.sub_ids) <= 3
        assert "truncating" in caplog.text

    def test_overlong_first_word_is_cut(self):
        vocab = build_vocabulary([["abcdef"], ["xyz"]])
        t = tokenize_sentence(["abcdef"], ["c"], vocab, max_len=2)
        assert len(t.sub_ids) == 2
        assert t.words == ["abcdef"]


class TestFileIO:
    def test_pair_file_round_trip(self, tmp_path):
        pairs = generate_synthetic_pairs(25, seed=3, error_rate=0.6)
        path = tmp_path / "pairs.tsv"
        write_pair_file(pairs, path)
        assert read_pair_file(path) == pairs

    def test_pair_file_bad_field_count(self, tmp_path):
        path = tmp_path / "pairs.tsv"
        path.write_text("a b\tc d\tx y\n")
        with pytest.raises(CorpusFormatError, match="line 1"):
            read_pair_file(path)

    def test_corpus_round_trip(self, tmp_path):
        sentences = pairs_to_labeled(
            generate_synthetic_pairs(20, seed=6, error_rate=0.5))
        path = tmp_path / "corpus.tsv"
        write_corpus(sentences, path)
        assert read_corpus_sentences(path) == sentences

    def test_corpus_header_states_conventions(self, tmp_path):
        path = tmp_path / "corpus.tsv"
        write_corpus(pairs_to_labeled(
            generate_synthetic_pairs(2, seed=1, error_rate=0.0)), path)
        head = path.read_text().splitlines()[:2]
        assert all(line.startswith("#") for line in head)
        assert "insertion" in head[1]

    def test_empty_file_is_empty_corpus(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert read_corpus_sentences(path) == []
        corpus = read_corpus(path)
        assert corpus.n_sentences == 0

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("dog\tc\ndog\tx\n")
        with pytest.raises(CorpusFormatError, match="line 2"):
            read_corpus_sentences(path)

    def test_wrong_field_count_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("# header\ndog c\n")
        with pytest.raises(CorpusFormatError, match="line 2"):
            read_corpus_sentences(path)

    def test_vocab_file_round_trip(self, tmp_path):
        vocab = build_vocabulary([["dogs", "run"], ["dogs", "run"]])
        path = tmp_path / "vocab.txt"
        write_vocab_file(vocab, path)
        loaded = read_vocab_file(path)
        assert loaded.piece_to_id == vocab.piece_to_id

    def test_vocab_file_requires_reserved_prefix(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("[PAD]\n[UNK]\nnope\n[EOS]\n")
        with pytest.raises(CorpusFormatError, match="reserved"):
            read_vocab_file(path)

    def test_vocab_file_rejects_duplicates(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("[PAD]\n[UNK]\n[BOS]\n[EOS]\na\na\n")
        with pytest.raises(CorpusFormatError, match="duplicate"):
            read_vocab_file(path)

    def test_build_corpus_ids_within_vocab(self):
        corpus = build_corpus(pairs_to_labeled(
            generate_synthetic_pairs(30, seed=11, error_rate=0.5)))
        size = corpus.vocab.n_pieces
        for t in corpus.tokenized:
            assert all(0 <= k < size for k in t.sub_ids)

    def test_sentence_pair_validation(self):
        with pytest.raises(ValueError, match="whitespace"):
            SentencePair(source=["a b"], corrected=["a"])
        with pytest.raises(ValueError):
            SentencePair(source=[], corrected=["a"])

    def test_labeled_sentence_validation(self):
        with pytest.raises(ValueError):
            LabeledSentence(words=["a"], labels=["c", "i"])
        with pytest.raises(ValueError):
            LabeledSentence(words=["a"], labels=["x"])

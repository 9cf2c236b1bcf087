# From raw sentence pairs to a model-ready corpus.  Run from the repo
# root:
#
#   python demos/corpus_pipeline.py

from gedlab import dp_align_label, generate_synthetic_pairs, pairs_to_labeled
from gedlab.corpus import build_corpus, subtokenize

# ---------------------------------------------------------------- pairs
# each pair is (sentence with an injected error, its correction);
# error_rate is the chance a sentence gets one
pairs = generate_synthetic_pairs(200, seed=42, error_rate=0.7)
print("generated", len(pairs), "pairs; the first few with an actual error:\n")
shown = 0
for pair in pairs:
    if pair.source != pair.corrected and shown < 3:
        print("  wrote:  ", " ".join(pair.source))
        print("  meant:  ", " ".join(pair.corrected))
        print("  labels: ", " ".join(dp_align_label(pair.source,
                                                    pair.corrected)))
        print()
        shown += 1

# the aligner reads a minimal edit script off the distance matrix;
# substitutions and deletions mark the token itself, an insertion marks
# the token after the gap
src = "she walk to school yesterday".split()
dst = "she walked to the school yesterday".split()
print("alignment of a two-error sentence:")
print(" ", list(zip(src, dp_align_label(src, dst))), "\n")

# --------------------------------------------------------------- corpus
corpus = build_corpus(pairs_to_labeled(pairs), max_len=32)
n_err = sum(s.labels.count("i") for s in corpus.sentences)
print("corpus:", corpus.n_sentences, "sentences,", corpus.n_words,
      "words,", n_err, "marked tokens")
print("vocabulary:", corpus.vocab.n_pieces, "pieces (reserved ids 0-3)")

# unknown words fall apart into greedy longest-prefix pieces
word = "unseeable"
print("sub-tokens of %r:" % word,
      subtokenize(word, corpus.vocab.piece_to_id))

sent = corpus.tokenized[0]
print("\nfirst tokenized sentence:")
print("  words:          ", sent.words)
print("  piece ids:      ", sent.sub_ids)
print("  word start rows:", sent.first_sub_index)

import numpy as np
import pytest

from maskpolicy.errors import DataError
from maskpolicy.vocab import (
    CLS, ENTITY, MASK, PAD, PLAIN, PUNCTUATION, SEP, SPECIAL, SUBWORD, UNK,
    Vocab, build_vocab, detokenize, tokenize, tokenize_question,
)


@pytest.fixture()
def small_vocab():
    corpus = ["a a a Hello , world . run running Paris is big . Paris wins"] * 3
    return build_vocab(corpus, max_vocab=500, min_freq=2)


def test_specials_reserved():
    v = build_vocab(["a a a"], max_vocab=10, min_freq=1)
    assert v.tokens[PAD] == "[PAD]" and v.tokens[UNK] == "[UNK]"
    assert v.tokens[CLS] == "[CLS]" and v.tokens[SEP] == "[SEP]"
    assert v.tokens[MASK] == "[MASK]"


def test_frequent_word_kept_whole():
    v = build_vocab(["a a a"], max_vocab=10, min_freq=2)
    ctx = tokenize("a", v, max_seq_len=16)
    assert ctx.ids.tolist() == [CLS, v.index["a"], SEP]


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_vocab(["   ", ""], max_vocab=10)


def test_unseen_word_with_uncovered_chars_is_unk(small_vocab):
    ctx = tokenize("Ω", small_vocab, max_seq_len=16)
    assert ctx.ids.tolist() == [CLS, UNK, SEP]
    assert ctx.token_class[1] == SPECIAL


def test_rare_word_splits_into_continuation_pieces(small_vocab):
    # 'gnu' is out of vocab but its characters are covered
    ctx = tokenize("gnu", small_vocab, max_seq_len=16)
    toks = [small_vocab.token_of(i) for i in ctx.ids[1:-1]]
    assert toks == ["g", "##n", "##u"]
    assert ctx.word_start.tolist() == [False, True, False, False, False]
    assert ctx.token_class[2] == SUBWORD


def test_class_rules(small_vocab):
    ctx = tokenize("Hello , world", small_vocab, max_seq_len=16)
    assert ctx.token_class == [SPECIAL, PLAIN, PUNCTUATION, PLAIN, SPECIAL]


def test_lone_punctuation(small_vocab):
    ctx = tokenize(".", small_vocab, max_seq_len=16)
    assert ctx.token_class[1] == PUNCTUATION


def test_capitalized_entity_only_when_not_text_initial(small_vocab):
    ctx = tokenize("Paris is big . Paris wins", small_vocab, max_seq_len=32)
    classes = {}
    for i, (s, e) in enumerate(ctx.offsets):
        if s >= 0:
            classes.setdefault(ctx.text[s:e] + f"@{s}", ctx.token_class[i])
    assert ctx.token_class[1] == PLAIN  # first Paris: text-initial
    second_paris = [i for i, (s, _) in enumerate(ctx.offsets) if s == ctx.text.rindex("Paris")]
    assert ctx.token_class[second_paris[0]] == ENTITY


def test_sigil_token_is_entity(small_vocab):
    v = build_vocab(["@Kova stuff @Kova stuff"], max_vocab=100, min_freq=1)
    ctx = tokenize("stuff @Kova", v, max_seq_len=16)
    assert ctx.token_class[2] == ENTITY


def test_roundtrip_whitespace_normalized():
    rng = np.random.default_rng(0)
    words = ["alpha", "beta", "Gamma", ",", ".", "delta9", "@Mark"]
    lines = [" ".join(rng.choice(words, size=rng.integers(1, 12)))
             for _ in range(1000)]
    vocab = build_vocab(lines, max_vocab=2000, min_freq=1)
    for line in lines:
        ctx = tokenize(line, vocab, max_seq_len=64)
        assert detokenize(ctx, vocab) == " ".join(line.split())


def test_tokenize_deterministic(small_vocab):
    a = tokenize("Hello , world", small_vocab, max_seq_len=16)
    b = tokenize("Hello , world", small_vocab, max_seq_len=16)
    assert a.ids.tolist() == b.ids.tolist()
    assert a.token_class == b.token_class


def test_truncation_flagged(small_vocab):
    ctx = tokenize("a " * 100, small_vocab, max_seq_len=8)
    assert ctx.truncated and len(ctx) == 8
    assert ctx.ids[0] == CLS and ctx.ids[-1] == SEP


def test_offsets_recover_surface(small_vocab):
    text = "Hello , world"
    ctx = tokenize(text, small_vocab, max_seq_len=16)
    for i, (s, e) in enumerate(ctx.offsets):
        if s >= 0 and not small_vocab.token_of(int(ctx.ids[i])).startswith("##"):
            assert text[s:e] == small_vocab.token_of(int(ctx.ids[i]))


def test_question_tokens_have_no_framing(small_vocab):
    ids = tokenize_question("Hello world", small_vocab)
    assert CLS not in ids and SEP not in ids


def test_vocab_json_roundtrip(small_vocab):
    again = Vocab.from_json(small_vocab.to_json())
    assert again.tokens == small_vocab.tokens
    assert again.index == small_vocab.index

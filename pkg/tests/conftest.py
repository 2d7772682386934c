import numpy as np
import pytest

from maskpolicy.vocab import (
    CLS, ENTITY, PLAIN, PUNCTUATION, SEP, SPECIAL, SUBWORD, TokenizedContext,
)


def random_context(rng: np.random.Generator, min_words: int = 3, max_words: int = 20,
                   vocab_size: int = 100, context_id: str = "rc") -> TokenizedContext:
    """A structurally valid random context (CLS + words + SEP) for tests
    that do not need real text."""
    n_words = int(rng.integers(min_words, max_words + 1))
    ids = [CLS]
    word_start = [False]
    classes = [SPECIAL]
    for _ in range(n_words):
        pieces = int(rng.choice([1, 1, 1, 2, 3]))
        head_class = str(rng.choice([PLAIN, PLAIN, PLAIN, ENTITY, PUNCTUATION]))
        for k in range(pieces):
            ids.append(int(rng.integers(5, vocab_size)))
            word_start.append(k == 0)
            classes.append(head_class if k == 0 else SUBWORD)
    ids.append(SEP)
    word_start.append(False)
    classes.append(SPECIAL)
    n = len(ids)
    return TokenizedContext(
        context_id=context_id,
        ids=np.array(ids, dtype=np.int64),
        word_start=np.array(word_start, dtype=bool),
        token_class=classes,
        offsets=[(-1, -1)] * n,
        text="",
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)

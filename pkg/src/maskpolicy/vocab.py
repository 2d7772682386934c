"""Word-level-first vocabulary with greedy character-piece fallback.

Whitespace words above the frequency floor are kept whole; rarer words
are split into greedy longest-match pieces over the piece inventory
(single characters plus any shorter in-vocab word prefix), with pieces
after the first carrying the ``##`` continuation marker. Words containing
characters outside the inventory collapse to a single [UNK].
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
CONTINUATION = "##"
ENTITY_SIGIL = "@"

# token_class values
SPECIAL = "special"
PUNCTUATION = "punctuation"
ENTITY = "entity_candidate"
PLAIN = "plain_word"
SUBWORD = "subword_piece"

_WORD_RE = re.compile(r"\S+")


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {t: i for i, t in enumerate(self.tokens)}
        if self.tokens[:5] != SPECIAL_TOKENS:
            raise ConfigError("special tokens must occupy ids 0-4")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def to_json(self) -> list[str]:
        return list(self.tokens)

    @classmethod
    def from_json(cls, tokens: list[str]) -> "Vocab":
        return cls(list(tokens))


def build_vocab(texts, max_vocab: int, min_freq: int = 2) -> Vocab:
    """Learn a vocabulary from an iterable of corpus lines."""
    word_freq = Counter()
    char_freq = Counter()
    for text in texts:
        for m in _WORD_RE.finditer(text):
            word = m.group()
            word_freq[word] += 1
            char_freq.update(word)
    if not word_freq:
        raise DataError("empty corpus: no words to build a vocabulary from")

    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)

    def push(tok):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    # Character pieces first (both word-initial and continuation forms) so
    # that any corpus word stays representable after frequency filtering.
    chars = sorted(char_freq, key=lambda c: (-char_freq[c], c))
    if len(tokens) + 2 * len(chars) > max_vocab:
        raise ConfigError(
            f"max_vocab {max_vocab} too small for {len(chars)} characters plus specials")
    for c in chars:
        push(c)
        push(CONTINUATION + c)
    for word in sorted(word_freq, key=lambda w: (-word_freq[w], w)):
        if len(tokens) >= max_vocab:
            break
        if word_freq[word] >= min_freq:
            push(word)
    return Vocab(tokens)


@dataclass
class TokenizedContext:
    """A context as token ids with word-boundary and class annotations."""

    context_id: str
    ids: np.ndarray
    word_start: np.ndarray
    token_class: list[str]
    offsets: list[tuple[int, int]]
    text: str
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def maskable(self) -> np.ndarray:
        """Boolean flags for positions a mask plan may touch."""
        return np.array([c != SPECIAL for c in self.token_class], dtype=bool)


def _split_word(word: str, vocab: Vocab) -> list[str] | None:
    """Greedy longest-match split. None when some character is uncovered."""
    pieces = []
    pos = 0
    while pos < len(word):
        prefix = "" if pos == 0 else CONTINUATION
        for end in range(len(word), pos, -1):
            cand = prefix + word[pos:end]
            if cand in vocab.index:
                pieces.append(cand)
                pos = end
                break
        else:
            return None
    return pieces


def _classify(piece: str, word: str, whole: bool, word_idx: int) -> str:
    if piece.startswith(CONTINUATION):
        return SUBWORD
    if piece.startswith(ENTITY_SIGIL) and len(piece) > 1 and any(ch.isalnum() for ch in piece):
        return ENTITY
    if all(not ch.isalnum() for ch in piece):
        return PUNCTUATION
    if whole and word[0].isupper() and word_idx > 0:
        return ENTITY
    return PLAIN


def tokenize(text: str, vocab: Vocab, max_seq_len: int, context_id: str = "") -> TokenizedContext:
    ids = [CLS]
    word_start = [False]
    token_class = [SPECIAL]
    offsets = [(-1, -1)]

    for word_idx, m in enumerate(_WORD_RE.finditer(text)):
        word = m.group()
        if word in vocab.index:
            pieces = [word]
        else:
            pieces = _split_word(word, vocab)
        if pieces is None:
            ids.append(UNK)
            word_start.append(True)
            token_class.append(SPECIAL)
            offsets.append((m.start(), m.end()))
            continue
        pos = m.start()
        whole = len(pieces) == 1
        for k, piece in enumerate(pieces):
            surface_len = len(piece) - (len(CONTINUATION) if k > 0 else 0)
            ids.append(vocab.index[piece])
            word_start.append(k == 0)
            token_class.append(_classify(piece, word, whole, word_idx))
            offsets.append((pos, pos + surface_len))
            pos += surface_len

    truncated = False
    if len(ids) + 1 > max_seq_len:
        ids = ids[: max_seq_len - 1]
        word_start = word_start[: max_seq_len - 1]
        token_class = token_class[: max_seq_len - 1]
        offsets = offsets[: max_seq_len - 1]
        truncated = True
    ids.append(SEP)
    word_start.append(False)
    token_class.append(SPECIAL)
    offsets.append((-1, -1))

    return TokenizedContext(
        context_id=context_id,
        ids=np.array(ids, dtype=np.int64),
        word_start=np.array(word_start, dtype=bool),
        token_class=token_class,
        offsets=offsets,
        text=text,
        truncated=truncated,
    )


def detokenize(ctx_or_ids, vocab: Vocab) -> str:
    ids = ctx_or_ids.ids if isinstance(ctx_or_ids, TokenizedContext) else ctx_or_ids
    words: list[str] = []
    for idx in ids:
        idx = int(idx)
        if idx in (PAD, CLS, SEP):
            continue
        tok = vocab.token_of(idx)
        if tok.startswith(CONTINUATION) and words:
            words[-1] += tok[len(CONTINUATION):]
        else:
            words.append(tok)
    return " ".join(words)


def tokenize_question(text: str, vocab: Vocab) -> list[int]:
    """Question ids without CLS/SEP framing (appended after a context)."""
    out: list[int] = []
    for m in _WORD_RE.finditer(text):
        word = m.group()
        if word in vocab.index:
            out.append(vocab.index[word])
            continue
        pieces = _split_word(word, vocab)
        if pieces is None:
            out.append(UNK)
        else:
            out.extend(vocab.index[p] for p in pieces)
    return out

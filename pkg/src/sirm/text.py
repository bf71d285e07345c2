"""Text pipeline: tokenization, vocabulary, sentence grids, dataset files."""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_URL_RE = re.compile(r"(?:https?://|www\.)\S+")
_USER_RE = re.compile(r"@\w+")
# placeholders survive punctuation splitting; everything else is word chars
# or single punctuation marks
_TOKEN_RE = re.compile(r"<url>|<user>|\w+|[^\w\s]")

SENTENCE_FINAL = {".", "!", "?", ";"}


class DataFormatError(ValueError):
    """Dataset file is unreadable or mostly malformed."""


def tokenize(text):
    """Lowercase, collapse URLs/mentions, split punctuation into own tokens."""
    text = _URL_RE.sub("<url>", text)
    text = _USER_RE.sub("<user>", text)
    return _TOKEN_RE.findall(text.lower())


def segment_sentences(tokens, n):
    """Split a token list into sentences of at most n tokens.

    Splits after sentence-final punctuation; any longer run is chunked into
    consecutive length-n pieces.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    raw = []
    current = []
    for tok in tokens:
        current.append(tok)
        if tok in SENTENCE_FINAL:
            raw.append(current)
            current = []
    if current:
        raw.append(current)
    sentences = []
    for sent in raw:
        for start in range(0, len(sent), n):
            sentences.append(sent[start:start + n])
    return sentences


class Vocabulary:
    """Dense token ids with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens=(), frequencies=None):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        self.frequencies = [0, 0]
        freqs = frequencies if frequencies is not None else [0] * len(tokens)
        for tok, freq in zip(tokens, freqs):
            self._add(tok, freq)

    def _add(self, token, freq):
        if token in self.token_to_id:
            raise ValueError(f"duplicate vocabulary token {token!r}")
        self.token_to_id[token] = len(self.id_to_token)
        self.id_to_token.append(token)
        self.frequencies.append(freq)

    def __len__(self):
        return len(self.id_to_token)

    def lookup(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok, freq in zip(self.id_to_token, self.frequencies):
                f.write(f"{tok}\t{freq}\n")

    @classmethod
    def load(cls, path):
        tokens, freqs = [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    tok, freq = line.split("\t")
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno + 1}: bad vocabulary line")
                tokens.append(tok)
                freqs.append(int(freq))
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise DataFormatError(f"{path}: missing reserved {PAD_TOKEN}/{UNK_TOKEN} entries")
        return cls(tokens[2:], freqs[2:])


def build_vocab(split, min_frequency=2, max_size=30000):
    """Frequency-ordered vocabulary from a training split only.

    Ties are broken by first occurrence order so id assignment is deterministic.
    """
    counts = Counter()
    first_seen = {}
    pos = 0
    for text, _label in split.examples:
        for tok in tokenize(text):
            counts[tok] += 1
            if tok not in first_seen:
                first_seen[tok] = pos
                pos += 1
    if not counts:
        raise DataFormatError("cannot build a vocabulary from an empty corpus")
    kept = [t for t in counts if counts[t] >= min_frequency]
    kept.sort(key=lambda t: (-counts[t], first_seen[t]))
    kept = kept[:max(0, max_size - 2)]
    return Vocabulary(kept, [counts[t] for t in kept])


@dataclass
class ParagraphGrid:
    """A document as an m x n grid of token ids with validity masks."""

    token_ids: np.ndarray   # (m, n) int64
    word_mask: np.ndarray   # (m, n) bool
    sentence_mask: np.ndarray  # (m,) bool
    label: int

    def validate(self, vocab_size):
        assert self.token_ids.shape == self.word_mask.shape
        assert self.sentence_mask.shape == (self.token_ids.shape[0],)
        assert (self.token_ids[~self.word_mask] == PAD_ID).all()
        assert not self.word_mask[~self.sentence_mask].any()
        assert self.word_mask.any()
        assert int(self.token_ids.max()) < vocab_size


def grid_encode(text, vocab, m, n):
    """Tokenize, segment, and render a document onto a fixed (m, n) grid."""
    if m < 1 or n < 1:
        raise ValueError("grid dimensions must be >= 1")
    sentences = segment_sentences(tokenize(text), n)[:m]
    if not sentences:
        sentences = [[UNK_TOKEN]]
    token_ids = np.full((m, n), PAD_ID, dtype=np.int64)
    word_mask = np.zeros((m, n), dtype=bool)
    sentence_mask = np.zeros(m, dtype=bool)
    for i, sent in enumerate(sentences):
        sentence_mask[i] = True
        for j, tok in enumerate(sent[:n]):
            token_ids[i, j] = vocab.lookup(tok)
            word_mask[i, j] = True
    return ParagraphGrid(token_ids, word_mask, sentence_mask, label=0)


@dataclass
class DatasetSplit:
    examples: list  # of (text, label) pairs
    name: str = "train"


def load_dataset(path, fmt="jsonl", name="train"):
    """Load labeled documents from a JSONL or TSV file.

    Malformed lines are logged with their line number and skipped; more than
    10% malformed lines is treated as a format error.
    """
    examples = []
    bad = 0
    total = 0
    try:
        f = open(path, encoding="utf-8")
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            total += 1
            text, label = None, None
            if fmt == "jsonl":
                try:
                    obj = json.loads(line)
                    text, label = obj["text"], obj["label"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    pass
            elif fmt == "tsv":
                parts = line.split("\t", 1)
                if len(parts) == 2:
                    try:
                        label, text = int(parts[0]), parts[1]
                    except ValueError:
                        pass
            else:
                raise ValueError(f"unknown dataset format {fmt!r}")
            if not isinstance(text, str) or not text.strip() or label not in (0, 1):
                logger.warning("%s:%d: malformed line skipped", path, lineno)
                bad += 1
                continue
            examples.append((text, int(label)))
    if total and bad / total > 0.10:
        raise DataFormatError(f"{path}: {bad}/{total} malformed lines")
    logger.info("loaded %d examples from %s (%d skipped)", len(examples), path, bad)
    return DatasetSplit(examples, name=name)


def encode_split(split, vocab, m, n):
    """grid_encode every example of a split, carrying labels over."""
    grids = []
    for text, label in split.examples:
        grid = grid_encode(text, vocab, m, n)
        grid.label = label
        grids.append(grid)
    return grids

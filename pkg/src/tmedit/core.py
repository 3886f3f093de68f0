"""Shared vocabulary, sequence framing, deterministic RNG, and corpus I/O.

Every sequence handled by the engine is a framed token-id tuple: it starts
with <BOS>, ends with <EOS>, and never contains <PAD> in between.  The five
reserved symbols occupy ids 0..4 in every vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"
PLH_TOKEN = "<PLH>"
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"

RESERVED_TOKENS = (BOS_TOKEN, EOS_TOKEN, PLH_TOKEN, PAD_TOKEN, UNK_TOKEN)

BOS, EOS, PLH, PAD, UNK = range(5)

DEFAULT_L_MAX = 1024
DEFAULT_PLH_MARKER = "␣PLH␣"


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class DataError(EngineError):
    """Malformed input data (bad corpus line, bad vocab file, bad config)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BudgetError(EngineError):
    """A configured resource budget (state count, combination count) was exceeded."""


class Vocab:
    """Token <-> id bijection with the five reserved symbols at ids 0..4.

    Immutable after construction.  Unknown tokens map to <UNK>; lookup never
    raises for unseen surface forms.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = list(RESERVED_TOKENS)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for tok in tokens:
            if tok in self._ids:
                raise DataError(f"duplicate vocab token {tok!r}")
            self._ids[tok] = len(self._tokens)
            self._tokens.append(tok)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise DataError(f"token id {idx} out of range (vocab size {len(self._tokens)})")
        return self._tokens[idx]

    @property
    def content_ids(self) -> range:
        """Ids of the non-reserved entries."""
        return range(len(RESERVED_TOKENS), len(self._tokens))

    @classmethod
    def from_file(cls, path: str) -> "Vocab":
        """Load a vocab file: one token per line, id = line index + 5."""
        tokens = []
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                tok = raw.rstrip("\n")
                if not tok or tok != tok.strip():
                    raise DataError(
                        f"bad vocab token {tok!r} (empty or surrounding whitespace)",
                        line=lineno,
                    )
                if tok in RESERVED_TOKENS:
                    raise DataError(f"reserved token {tok!r} not allowed in vocab file", line=lineno)
                tokens.append(tok)
        try:
            return cls(tokens)
        except DataError as exc:
            raise DataError(f"invalid vocab file {path}: {exc}") from exc

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens[len(RESERVED_TOKENS):]:
                fh.write(tok + "\n")

    @classmethod
    def from_texts(cls, texts: Iterable[Sequence[str]]) -> "Vocab":
        """Build a vocab from tokenized lines, first-appearance order."""
        seen: dict[str, None] = {}
        for toks in texts:
            for tok in toks:
                if tok not in seen and tok not in RESERVED_TOKENS:
                    seen[tok] = None
        return cls(seen.keys())


@dataclass(frozen=True)
class TokenSeq:
    """A framed token sequence: ids[0] is <BOS>, ids[-1] is <EOS>.

    ``surfaces``, when present, carries the original surface strings aligned
    with ``ids`` (sentinels included); it is retained so that two <UNK>
    tokens can still be compared by surface form.
    """

    ids: tuple[int, ...]
    surfaces: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise DataError(f"sequence not framed by <BOS>/<EOS>: {self.ids!r}")
        for t in self.ids[1:-1]:
            if t in (BOS, EOS, PAD):
                raise DataError(f"reserved id {t} inside sequence content: {self.ids!r}")
        if self.surfaces is not None and len(self.surfaces) != len(self.ids):
            raise DataError("surfaces length does not match ids length")

    @classmethod
    def from_content(cls, content: Sequence[int], surfaces: Sequence[str] | None = None) -> "TokenSeq":
        ids = (BOS, *content, EOS)
        if surfaces is not None:
            surfaces = (BOS_TOKEN, *surfaces, EOS_TOKEN)
        return cls(ids, tuple(surfaces) if surfaces is not None else None)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], vocab: Vocab) -> "TokenSeq":
        """Frame a list of surface tokens, mapping unseen ones to <UNK>."""
        content = tuple(vocab.id_of(t) for t in tokens)
        return cls.from_content(content, surfaces=tuple(tokens))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content(self) -> tuple[int, ...]:
        return self.ids[1:-1]

    @property
    def content_len(self) -> int:
        return len(self.ids) - 2

    def content_surfaces(self) -> tuple[str, ...] | None:
        if self.surfaces is None:
            return None
        return self.surfaces[1:-1]

    def match_key(self, content_pos: int):
        """Equality key for alignment at a content position.

        Two <UNK> tokens compare equal only when both carry the same surface
        form; an <UNK> without a surface matches nothing.
        """
        t = self.content[content_pos]
        if t != UNK:
            return t
        if self.surfaces is None:
            return ("<unk-opaque>", id(self), content_pos)
        return ("<unk>", self.surfaces[content_pos + 1])

    def match_keys(self) -> list:
        return [self.match_key(i) for i in range(self.content_len)]

    def replace_content(self, content: Sequence[int], surfaces: Sequence[str] | None = None) -> "TokenSeq":
        return TokenSeq.from_content(tuple(content), surfaces)

    def tokens(self, vocab: Vocab) -> list[str]:
        """Surface strings for the content, preferring retained surfaces."""
        out = []
        for pos, t in enumerate(self.content):
            if t == UNK and self.surfaces is not None:
                out.append(self.surfaces[pos + 1])
            else:
                out.append(vocab.token_of(t))
        return out


SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer; decorrelates nearby integers."""
    x = (x + SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Deterministic random stream: Mersenne Twister seeded from a 64-bit state.

    ``derive(index)`` produces an independent child stream from
    splitmix64(seed XOR index); the same (seed, index) pair always yields the
    same stream, which is what makes corpus generation order-independent
    across worker counts.
    """

    def __init__(self, seed: int):
        import random as _random

        self.seed = seed & _MASK64
        self._r = _random.Random(self.seed)

    def derive(self, index: int) -> "Rng":
        return Rng(_splitmix64(self.seed ^ (index & _MASK64)))

    def random(self) -> float:
        return self._r.random()

    def randint(self, a: int, b: int) -> int:
        """Uniform integer in [a, b], both ends included."""
        return self._r.randint(a, b)

    def choice(self, seq):
        if not seq:
            raise EngineError("choice from empty sequence")
        return seq[self._r.randrange(len(seq))]

    def sample(self, population: Sequence, k: int) -> list:
        return self._r.sample(population, k)

    def bernoulli(self, p: float) -> bool:
        return self._r.random() < p


def _line_tokens(obj: dict, lineno: int) -> list[str]:
    if "tokens" in obj:
        toks = obj["tokens"]
        if not isinstance(toks, list) or not all(isinstance(t, str) for t in toks):
            raise DataError('"tokens" must be a list of strings', line=lineno)
        return toks
    if "text" in obj:
        if not isinstance(obj["text"], str):
            raise DataError('"text" must be a string', line=lineno)
        return obj["text"].split()
    raise DataError('record needs a "tokens" or "text" field', line=lineno)


def parse_jsonl(path_or_lines, skip_header: bool = True) -> Iterator[tuple[int, dict]]:
    """Yield (lineno, record) pairs from a JSONL file or iterable of lines.

    Lines holding a ``_header`` key (the CLI config echo) are skipped when
    ``skip_header`` is set.  Malformed JSON raises DataError with the line
    number.
    """
    if isinstance(path_or_lines, str):
        fh = open(path_or_lines, encoding="utf-8")
        own = True
    else:
        fh = path_or_lines
        own = False
    try:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise DataError("record must be a JSON object", line=lineno)
            if skip_header and "_header" in obj:
                continue
            yield lineno, obj
    finally:
        if own:
            fh.close()


def load_corpus(path_or_lines, vocab: Vocab, l_max: int = DEFAULT_L_MAX) -> list[tuple[int, TokenSeq]]:
    """Load a JSONL corpus into framed sequences.

    Each record carries "tokens" (list of strings) or "text" (whitespace
    split) and an optional integer "id"; absent ids default to the 0-based
    record index.  Returns (id, seq) pairs in file order.
    """
    out: list[tuple[int, TokenSeq]] = []
    for lineno, obj in parse_jsonl(path_or_lines):
        toks = _line_tokens(obj, lineno)
        if len(toks) + 2 > l_max:
            raise DataError(
                f"sequence length {len(toks) + 2} exceeds L_max={l_max}", line=lineno
            )
        ident = obj.get("id", len(out))
        if not isinstance(ident, int):
            raise DataError('"id" must be an integer', line=lineno)
        out.append((ident, TokenSeq.from_tokens(toks, vocab)))
    return out


def write_corpus(path, seqs: Iterable[tuple[int, TokenSeq]], vocab: Vocab) -> None:
    """Inverse of load_corpus: one {"id", "tokens"} record per sequence."""
    own = isinstance(path, str)
    fh = open(path, "w", encoding="utf-8") if own else path
    try:
        for ident, seq in seqs:
            fh.write(json.dumps({"id": ident, "tokens": seq.tokens(vocab)}) + "\n")
    finally:
        if own:
            fh.close()


def detokenize(seq: TokenSeq, vocab: Vocab, plh_marker: str = DEFAULT_PLH_MARKER) -> str:
    """Space-joined surface form with sentinels stripped.

    Placeholders render as ``plh_marker`` so partially filled states stay
    visible in logs.
    """
    parts = []
    for pos, t in enumerate(seq.content):
        if t == PLH:
            parts.append(plh_marker)
        elif t == UNK and seq.surfaces is not None:
            parts.append(seq.surfaces[pos + 1])
        else:
            parts.append(vocab.token_of(t))
    return " ".join(parts)

"""Fuzzy-match retrieval over a translation memory.

Similarity between two sequences is 1 - ED/max(len) computed on content
tokens, sentinels excluded.  Retrieval keeps the top-N entries at or above a
threshold; the index prunes candidates with lossless bounds (length band,
common-token count) so the result is identical, set and order, to a
brute-force scan.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import DataError, TokenSeq, Vocab, parse_jsonl, _line_tokens

DEFAULT_TAU = 0.4
DEFAULT_N_MAX = 3


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Unit-cost Levenshtein distance between two item sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _char_form(seq: TokenSeq, vocab: Vocab | None) -> str:
    if seq.surfaces is not None:
        return " ".join(seq.surfaces[1:-1])
    if vocab is None:
        raise DataError("char-level similarity needs surfaces or a vocab")
    return " ".join(vocab.token_of(t) for t in seq.content)


def similarity(a: TokenSeq, b: TokenSeq, char_level: bool = False, vocab: Vocab | None = None) -> float:
    """Fuzzy-match score in [0, 1]; 1.0 iff the contents are identical.

    Token-level by default; ``char_level`` compares the space-joined surface
    strings instead.  Two empty sequences score 1.0 by convention.
    """
    if char_level:
        ca, cb = _char_form(a, vocab), _char_form(b, vocab)
        m = max(len(ca), len(cb))
        return 1.0 if m == 0 else 1.0 - edit_distance(ca, cb) / m
    m = max(a.content_len, b.content_len)
    if m == 0:
        return 1.0
    return 1.0 - edit_distance(a.content, b.content) / m


@dataclass(frozen=True)
class TMEntry:
    id: int
    src: TokenSeq
    tgt: TokenSeq


@dataclass(frozen=True)
class MatchSet:
    """Retrieval result: entries sorted by score desc, ties by id asc."""

    entries: tuple[TMEntry, ...]
    scores: tuple[float, ...]
    tau: float
    n_max: int

    def __post_init__(self):
        if len(self.entries) != len(self.scores):
            raise DataError("entries/scores length mismatch")
        if len(self.entries) > self.n_max:
            raise DataError("match set larger than n_max")
        for s in self.scores:
            if not (0.0 <= s <= 1.0) or s < self.tau:
                raise DataError(f"match score {s} outside [tau, 1]")
        order = [(-s, e.id) for e, s in zip(self.entries, self.scores)]
        if order != sorted(order):
            raise DataError("match set not sorted by (score desc, id asc)")

    def __len__(self) -> int:
        return len(self.entries)

    def targets(self) -> list[TokenSeq]:
        return [e.tgt for e in self.entries]


def load_tm(path_or_lines, vocab: Vocab, l_max: int = 1024) -> list[TMEntry]:
    """Read TM entries from JSONL records with "src" and "tgt" sides.

    Each side is a token list or a "text"-style string; "id" defaults to the
    0-based record index.  Ids must be unique.
    """
    entries: list[TMEntry] = []
    seen: set[int] = set()
    for lineno, obj in parse_jsonl(path_or_lines):
        if "src" not in obj or "tgt" not in obj:
            raise DataError('TM record needs "src" and "tgt" fields', line=lineno)
        sides = []
        for fieldname in ("src", "tgt"):
            val = obj[fieldname]
            if isinstance(val, str):
                toks = val.split()
            elif isinstance(val, list) and all(isinstance(t, str) for t in val):
                toks = val
            else:
                raise DataError(f'"{fieldname}" must be a string or list of strings', line=lineno)
            if len(toks) + 2 > l_max:
                raise DataError(f'"{fieldname}" length {len(toks) + 2} exceeds L_max={l_max}', line=lineno)
            sides.append(TokenSeq.from_tokens(toks, vocab))
        ident = obj.get("id", len(entries))
        if not isinstance(ident, int):
            raise DataError('"id" must be an integer', line=lineno)
        if ident in seen:
            raise DataError(f"duplicate TM entry id {ident}", line=lineno)
        seen.add(ident)
        entries.append(TMEntry(ident, sides[0], sides[1]))
    return entries


class TMIndex:
    """Length-bucketed TM with per-bucket token postings.

    Buckets group entries by source content length; postings map a token id
    to (entry row, count) pairs inside the bucket.  Both only ever discard
    candidates that provably score below the threshold, so retrieval through
    the index equals a full scan.
    """

    def __init__(self, entries: Iterable[TMEntry]):
        self.entries: tuple[TMEntry, ...] = tuple(sorted(entries, key=lambda e: e.id))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate entry ids in index")
        self._buckets: dict[int, dict] = {}
        for row, e in enumerate(self.entries):
            b = self._buckets.setdefault(e.src.content_len, {"rows": [], "toks": []})
            b["rows"].append(row)
            b["toks"].append(e.src.content)
        for length, b in self._buckets.items():
            k = len(b["rows"])
            b["rows"] = np.asarray(b["rows"], dtype=np.int64)
            b["mat"] = (
                np.asarray(b["toks"], dtype=np.int32).reshape(k, length)
                if length > 0
                else np.zeros((k, 0), dtype=np.int32)
            )
            postings: dict[int, list[tuple[int, int]]] = {}
            for pos, toks in enumerate(b["toks"]):
                for tok, cnt in Counter(toks).items():
                    postings.setdefault(tok, []).append((pos, cnt))
            b["postings"] = {
                t: (
                    np.asarray([p for p, _ in lst], dtype=np.int64),
                    np.asarray([c for _, c in lst], dtype=np.int64),
                )
                for t, lst in postings.items()
            }
            del b["toks"]
        self._char_buckets: dict[int, dict] | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def _char_index(self, vocab: Vocab | None) -> dict[int, dict]:
        if self._char_buckets is None:
            buckets: dict[int, dict] = {}
            for row, e in enumerate(self.entries):
                s = _char_form(e.src, vocab)
                b = buckets.setdefault(len(s), {"rows": [], "strs": []})
                b["rows"].append(row)
                b["strs"].append(s)
            for length, b in buckets.items():
                k = len(b["rows"])
                b["rows"] = np.asarray(b["rows"], dtype=np.int64)
                b["mat"] = (
                    np.asarray([[ord(c) for c in s] for s in b["strs"]], dtype=np.int32).reshape(k, length)
                    if length > 0
                    else np.zeros((k, 0), dtype=np.int32)
                )
                b["postings"] = None
                del b["strs"]
            self._char_buckets = buckets
        return self._char_buckets


def build_index(entries: Iterable[TMEntry]) -> TMIndex:
    return TMIndex(entries)


def _batch_edit_distance(query: Sequence[int], mat: np.ndarray) -> np.ndarray:
    """Levenshtein distance from one query to every row of a token matrix."""
    k, length = mat.shape
    offsets = np.arange(length + 1, dtype=np.int32)
    prev = np.broadcast_to(offsets, (k, length + 1)).copy()
    for i, qt in enumerate(query, start=1):
        sub = prev[:, :-1] + (mat != qt)
        best = np.minimum(prev[:, 1:] + 1, sub)
        # cur[j] = min(best[j], cur[j-1]+1) is a running min of best[j]-j
        v = np.concatenate(
            [np.full((k, 1), i, dtype=np.int32), best - offsets[1:]], axis=1
        )
        prev = np.minimum.accumulate(v, axis=1) + offsets
    return prev[:, -1]


def retrieve(
    query: TokenSeq,
    index: TMIndex,
    tau: float = DEFAULT_TAU,
    n_max: int = DEFAULT_N_MAX,
    exclude_id: int | None = None,
    char_level: bool = False,
    vocab: Vocab | None = None,
) -> MatchSet:
    """Top-``n_max`` TM entries whose source scores >= ``tau`` against the query.

    ``exclude_id`` drops the entry with that id when its source is identical
    to the query (leave-one-out evaluation).  Ties in score resolve to the
    lower entry id.
    """
    if not 0.0 <= tau <= 1.0:
        raise DataError(f"tau must be within [0, 1], got {tau}")
    if n_max < 1:
        raise DataError(f"n_max must be >= 1, got {n_max}")
    if char_level:
        buckets = index._char_index(vocab)
        q: Sequence[int] = [ord(c) for c in _char_form(query, vocab)]
    else:
        buckets = index._buckets
        q = query.content
    m = len(q)

    scored: list[tuple[float, int, TMEntry]] = []
    for length, b in buckets.items():
        maxlen = max(m, length)
        if maxlen == 0:
            band = 1.0  # both empty: identical by convention
        else:
            band = 1.0 - abs(m - length) / maxlen
        if band < tau:
            continue
        rows, mat = b["rows"], b["mat"]
        keep = np.ones(len(rows), dtype=bool)
        if maxlen > 0 and b.get("postings") is not None and m > 0:
            common = np.zeros(len(rows), dtype=np.int64)
            for tok, qc in Counter(q).items():
                hit = b["postings"].get(tok)
                if hit is not None:
                    common[hit[0]] += np.minimum(qc, hit[1])
            # ED >= maxlen - common, so the score cannot exceed common/maxlen
            keep = (1.0 - (maxlen - common) / maxlen) >= tau
            if not keep.any():
                continue
        sub_mat = mat[keep]
        sub_rows = rows[keep]
        dists = _batch_edit_distance(q, sub_mat)
        for row, d in zip(sub_rows, dists):
            score = 1.0 if maxlen == 0 else 1.0 - int(d) / maxlen
            if score < tau:
                continue
            entry = index.entries[row]
            if (
                exclude_id is not None
                and entry.id == exclude_id
                and entry.src.ids == query.ids
            ):
                continue
            scored.append((score, entry.id, entry))

    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[:n_max]
    return MatchSet(
        entries=tuple(e for _, _, e in top),
        scores=tuple(s for s, _, _ in top),
        tau=tau,
        n_max=n_max,
    )


def retrieve_brute_force(
    query: TokenSeq,
    entries: Sequence[TMEntry],
    tau: float = DEFAULT_TAU,
    n_max: int = DEFAULT_N_MAX,
    exclude_id: int | None = None,
    char_level: bool = False,
    vocab: Vocab | None = None,
) -> MatchSet:
    """Reference implementation: score every entry, sort, truncate."""
    scored = []
    for e in entries:
        if exclude_id is not None and e.id == exclude_id and e.src.ids == query.ids:
            continue
        s = similarity(query, e.src, char_level=char_level, vocab=vocab)
        if s >= tau:
            scored.append((s, e.id, e))
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[:n_max]
    return MatchSet(
        entries=tuple(e for _, _, e in top),
        scores=tuple(s for s, _, _ in top),
        tau=tau,
        n_max=n_max,
    )

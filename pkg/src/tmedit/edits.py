"""Derivation and replay of edit scripts from an alignment graph.

A script rewrites N retrieved sequences into the reference in four stages:
delete unaligned tokens, insert placeholders to pad every sequence to the
reference length, combine position-wise, then fill the leftover
placeholders.  Positions are content coordinates throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import PLH, PLH_TOKEN, DataError, EngineError, TokenSeq, Vocab
from .alignment import AlignmentGraph

DEFAULT_K_MAX = 64


class GapOverflowError(EngineError):
    """A gap demands more placeholders than one insertion step may emit."""

    def __init__(self, message: str, n: int | None = None, gap: int | None = None, count: int | None = None):
        super().__init__(message)
        self.n = n
        self.gap = gap
        self.count = count


class CombineLengthError(EngineError):
    """Sequences reaching the combination stage disagree in length."""

    def __init__(self, lengths: Sequence[int]):
        super().__init__(f"combination needs equal lengths, got {list(lengths)}")
        self.lengths = tuple(lengths)


class StageError(EngineError):
    """Wraps an error raised while replaying one stage of a script."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class Origin:
    """Where one output token came from: copied from match n, or generated."""

    kind: str
    n: int | None = None
    src: int | None = None

    def __post_init__(self):
        if self.kind not in ("copy", "gen"):
            raise DataError(f"unknown origin kind {self.kind!r}")
        if self.kind == "copy" and (self.n is None or self.src is None):
            raise DataError("copy origin needs n and src")

    def to_json(self) -> dict:
        if self.kind == "copy":
            return {"origin": "copy", "n": self.n, "src": self.src}
        return {"origin": "gen"}


@dataclass(frozen=True)
class Provenance:
    origins: tuple[Origin, ...]

    def copy_count(self) -> int:
        return sum(1 for o in self.origins if o.kind == "copy")

    def check_against(self, output: TokenSeq, matches: Sequence[TokenSeq]) -> None:
        """Every copy origin must point at a token equal to the output token."""
        if len(self.origins) != output.content_len:
            raise DataError("provenance length does not match output length")
        for pos, o in enumerate(self.origins):
            if o.kind == "copy":
                if output.content[pos] != matches[o.n].content[o.src]:
                    raise DataError(
                        f"copy origin at {pos} points at a different token"
                    )


@dataclass(frozen=True)
class EditScript:
    """Stage labels plus the intermediate states they produce.

    ``del_keep`` flags tokens to keep; ``plh_counts`` has one entry per gap
    of the deleted sequence (kept + 1 gaps); ``cmb_keep`` flags positions of
    each padded sequence whose token survives combination; ``tok_fills``
    lists (position, token id) pairs for the remaining placeholders.
    """

    del_keep: tuple[tuple[bool, ...], ...]
    plh_counts: tuple[tuple[int, ...], ...]
    cmb_keep: tuple[tuple[bool, ...], ...]
    tok_fills: tuple[tuple[int, int], ...]
    y_plh: tuple[TokenSeq, ...]
    y_cmb: tuple[TokenSeq, ...]
    y_tok: TokenSeq

    def __post_init__(self):
        n = len(self.del_keep)
        if not (len(self.plh_counts) == len(self.cmb_keep) == len(self.y_plh) == len(self.y_cmb) == n):
            raise DataError("edit script stage arity mismatch")
        for keep, counts, plh in zip(self.del_keep, self.plh_counts, self.y_plh):
            if sum(keep) != plh.content_len:
                raise DataError("y_plh length does not match deletion mask")
            if len(counts) != plh.content_len + 1:
                raise DataError("plh_counts must have one entry per gap")

    def to_json(self, vocab: Vocab) -> dict:
        return {
            "del_keep": [list(m) for m in self.del_keep],
            "plh_counts": [list(c) for c in self.plh_counts],
            "cmb_keep": [list(m) for m in self.cmb_keep],
            "tok_fills": [[pos, vocab.token_of(t)] for pos, t in self.tok_fills],
            "y_plh": [s.tokens(vocab) for s in self.y_plh],
            "y_cmb": [s.tokens(vocab) for s in self.y_cmb],
            "y_tok": self.y_tok.tokens(vocab),
        }


def gap_counts(positions: Sequence[int], ref_len: int) -> tuple[int, ...]:
    """Placeholder counts that rebuild ``ref_len`` slots around kept positions.

    ``positions`` are the ascending reference positions of the kept tokens;
    the result has one entry per gap (leading, between each pair, trailing)
    and sums to ref_len - len(positions).
    """
    counts = []
    prev = -1
    for j in positions:
        if j <= prev:
            raise DataError("kept positions must be strictly increasing")
        counts.append(j - prev - 1)
        prev = j
    if prev >= ref_len:
        raise DataError("kept position beyond reference length")
    counts.append(ref_len - prev - 1)
    return tuple(counts)


def apply_deletion(seq: TokenSeq, keep: Sequence[bool]) -> TokenSeq:
    if len(keep) != seq.content_len:
        raise DataError(
            f"deletion mask length {len(keep)} != content length {seq.content_len}"
        )
    content = tuple(t for t, kp in zip(seq.content, keep) if kp)
    surfaces = seq.content_surfaces()
    if surfaces is not None:
        surfaces = tuple(s for s, kp in zip(surfaces, keep) if kp)
    return TokenSeq.from_content(content, surfaces)


def apply_insertion(seq: TokenSeq, counts: Sequence[int], k_max: int = DEFAULT_K_MAX) -> TokenSeq:
    """Insert counts[g] placeholders into gap g (before token g)."""
    if len(counts) != seq.content_len + 1:
        raise DataError(
            f"need {seq.content_len + 1} gap counts, got {len(counts)}"
        )
    for g, c in enumerate(counts):
        if c < 0:
            raise DataError(f"negative placeholder count at gap {g}")
        if c > k_max:
            raise GapOverflowError(
                f"gap {g} asks for {c} placeholders, K_max={k_max}", gap=g, count=c
            )
    content: list[int] = []
    surfaces_in = seq.content_surfaces()
    surfaces: list[str] | None = [] if surfaces_in is not None else None
    for g, c in enumerate(counts):
        content.extend([PLH] * c)
        if surfaces is not None:
            surfaces.extend([PLH_TOKEN] * c)
        if g < seq.content_len:
            content.append(seq.content[g])
            if surfaces is not None:
                surfaces.append(surfaces_in[g])
    return TokenSeq.from_content(tuple(content), surfaces)


def combine(seqs: Sequence[TokenSeq], keep_masks: Sequence[Sequence[bool]]) -> TokenSeq:
    """Merge equal-length padded sequences position by position.

    A position takes the kept non-placeholder token of the lowest n; with no
    such token it stays a placeholder.
    """
    if len(seqs) != len(keep_masks):
        raise DataError("combine needs one keep mask per sequence")
    if not seqs:
        raise DataError("combine needs at least one sequence")
    lengths = [s.content_len for s in seqs]
    if len(set(lengths)) > 1:
        raise CombineLengthError(lengths)
    for s, m in zip(seqs, keep_masks):
        if len(m) != s.content_len:
            raise DataError("keep mask length mismatch")
    length = lengths[0]
    content: list[int] = []
    have_surfaces = all(s.surfaces is not None for s in seqs)
    surfaces: list[str] | None = [] if have_surfaces else None
    for j in range(length):
        tok = PLH
        surf = PLH_TOKEN
        for n, (s, m) in enumerate(zip(seqs, keep_masks)):
            if m[j] and s.content[j] != PLH:
                tok = s.content[j]
                if have_surfaces:
                    surf = s.surfaces[j + 1]
                break
        content.append(tok)
        if surfaces is not None:
            surfaces.append(surf)
    return TokenSeq.from_content(tuple(content), surfaces)


def fill_tokens(seq: TokenSeq, fills: Sequence[tuple[int, int]], vocab: Vocab | None = None) -> TokenSeq:
    """Replace placeholders at the given content positions with token ids."""
    content = list(seq.content)
    surfaces = list(seq.content_surfaces()) if seq.surfaces is not None else None
    for pos, tok in fills:
        if not 0 <= pos < len(content):
            raise DataError(f"fill position {pos} out of range")
        if content[pos] != PLH:
            raise DataError(f"fill position {pos} does not hold a placeholder")
        content[pos] = tok
        if surfaces is not None:
            surfaces[pos] = vocab.token_of(tok) if vocab is not None else None
    if surfaces is not None and any(s is None for s in surfaces):
        surfaces = None
    return TokenSeq.from_content(tuple(content), surfaces)


def derive_edits(
    graph: AlignmentGraph,
    matches: Sequence[TokenSeq],
    y_ref: TokenSeq,
    k_max: int = DEFAULT_K_MAX,
) -> EditScript:
    """Read the unique edit script off an alignment graph.

    Deletion keeps exactly the edge-incident tokens; placeholder counts are
    the reference-position gaps between consecutive kept tokens (leading and
    trailing included); combination keeps each sequence's tokens at its edge
    positions; fills supply reference tokens at positions no edge covers.
    A gap wider than ``k_max`` raises GapOverflowError, never clamps.
    """
    if len(matches) != graph.n_seqs:
        raise DataError("graph arity does not match the sequence count")
    if y_ref.content_len != graph.ref_len:
        raise DataError("graph reference length does not match y_ref")
    for n, s in enumerate(matches):
        if s.content_len != graph.seq_lens[n]:
            raise DataError(f"graph length for sequence {n} does not match")

    big_r = y_ref.content_len
    del_keep = []
    plh_counts = []
    cmb_keep = []
    y_plh = []
    y_cmb = []
    for n, seq in enumerate(matches):
        pairs = graph.edges_of(n)
        keep = [False] * seq.content_len
        for i, _ in pairs:
            keep[i] = True
        js = [j for _, j in pairs]
        js_set = set(js)
        counts = gap_counts(js, big_r)
        for g, c in enumerate(counts):
            if c > k_max:
                raise GapOverflowError(
                    f"sequence {n} gap {g} needs {c} placeholders, K_max={k_max}",
                    n=n, gap=g, count=c,
                )
        deleted = apply_deletion(seq, keep)
        padded = apply_insertion(deleted, counts, k_max=k_max)
        assert padded.content_len == big_r
        del_keep.append(tuple(keep))
        plh_counts.append(tuple(counts))
        cmb_keep.append(tuple(j in js_set for j in range(big_r)))
        y_plh.append(deleted)
        y_cmb.append(padded)

    covered = graph.covered()
    if matches:
        y_tok = combine(y_cmb, cmb_keep)
    else:
        y_tok = TokenSeq.from_content((PLH,) * big_r, (PLH_TOKEN,) * big_r)
    fills = tuple(
        (j, y_ref.content[j]) for j in range(big_r) if j not in covered
    )
    return EditScript(
        del_keep=tuple(del_keep),
        plh_counts=tuple(plh_counts),
        cmb_keep=tuple(cmb_keep),
        tok_fills=fills,
        y_plh=tuple(y_plh),
        y_cmb=tuple(y_cmb),
        y_tok=y_tok,
    )


def replay(
    script: EditScript,
    matches: Sequence[TokenSeq],
    vocab: Vocab | None = None,
    k_max: int = DEFAULT_K_MAX,
) -> tuple[TokenSeq, Provenance]:
    """Run a script's stages over the sequences it was derived from.

    Returns the final sequence and per-position provenance: positions taken
    from a sequence during combination are copies attributed to the lowest
    contributing n; filled (or still-placeholder) positions are generated.
    Stage failures re-raise as StageError tagged with the stage name.
    """
    if len(matches) != len(script.del_keep):
        raise DataError("replay needs one sequence per deletion mask")

    try:
        deleted = [apply_deletion(s, m) for s, m in zip(matches, script.del_keep)]
        kept_src = [
            [i for i, kp in enumerate(m) if kp] for m in script.del_keep
        ]
    except EngineError as exc:
        raise StageError("del", exc) from exc

    try:
        padded = [
            apply_insertion(s, c, k_max=k_max)
            for s, c in zip(deleted, script.plh_counts)
        ]
        # content position of kept token t after padding
        src_at: list[dict[int, int]] = []
        for n, counts in enumerate(script.plh_counts):
            pos_map = {}
            pos = 0
            for t in range(len(counts) - 1):
                pos += counts[t]
                pos_map[pos] = kept_src[n][t]
                pos += 1
            src_at.append(pos_map)
    except EngineError as exc:
        raise StageError("plh", exc) from exc

    try:
        if padded:
            merged = combine(padded, script.cmb_keep)
        else:
            merged = script.y_tok
        origins: list[Origin] = []
        for j in range(merged.content_len):
            chosen = None
            for n, (s, m) in enumerate(zip(padded, script.cmb_keep)):
                if m[j] and s.content[j] != PLH:
                    chosen = n
                    break
            if chosen is None:
                origins.append(Origin("gen"))
            else:
                origins.append(Origin("copy", n=chosen, src=src_at[chosen][j]))
    except EngineError as exc:
        raise StageError("cmb", exc) from exc

    try:
        final = fill_tokens(merged, script.tok_fills, vocab=vocab)
    except EngineError as exc:
        raise StageError("tok", exc) from exc

    prov = Provenance(tuple(origins))
    prov.check_against(final, matches)
    return final, prov

"""Synthesis of training states for the four decision stages.

Each source/matches/reference triple expands into a mix of state families:
expert intermediates, artificial-match states, noised combination states,
random skeletons for insertion, filler-corrupted states for deletion, and
masked states for token prediction.  All randomness flows through one
per-sample derived stream, so the emitted corpus is reproducible and
independent of worker scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Protocol, Sequence

from .core import PLH, PLH_TOKEN, DataError, EngineError, Rng, TokenSeq, Vocab
from .alignment import kbest_1way, nway_align
from .edits import (
    DEFAULT_K_MAX,
    EditScript,
    apply_insertion,
    derive_edits,
    gap_counts,
)

ALPHA = 0.3
BETA = 0.2
GAMMA = 0.2
DELTA = 0.2
EPSILON = 0.4


@dataclass(frozen=True)
class RollinConfig:
    """Mixture rates for the roll-in families.

    alpha: chance the insertion-training state is the full reference;
    beta: chance of emitting the artificial-match quadruple;
    gamma: chance of emitting a noised combination state, and the per-slot
    replacement rate inside it; delta: chance of emitting a masked token
    state; epsilon: per-token masking rate inside it.
    """

    alpha: float = ALPHA
    beta: float = BETA
    gamma: float = GAMMA
    delta: float = DELTA
    epsilon: float = EPSILON
    n_matches: int = 3
    seed: int = 0
    k: int = 10
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "epsilon"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must be a probability, got {v}")
        if self.n_matches < 0 or self.k < 1 or self.k_max < 0:
            raise DataError("invalid rollin configuration")


@dataclass(frozen=True)
class StateSample:
    """One training example: states for a stage plus the labels to learn.

    ``stage`` names the decision ("del", "plh", "cmb", "tok"); ``labels``
    is stage-shaped: keep flags per state for del/cmb, gap counts per state
    for plh, (position, token id) fills for tok.
    """

    family: str
    stage: str
    states: tuple[TokenSeq, ...]
    labels: tuple
    x: TokenSeq | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self, vocab: Vocab) -> dict:
        if self.stage == "tok":
            labels = [[pos, vocab.token_of(t)] for pos, t in self.labels]
        else:
            labels = [list(l) for l in self.labels]
        rec = {
            "family": self.family,
            "stage": self.stage,
            "states": [s.tokens(vocab) for s in self.states],
            "labels": labels,
            "meta": self.meta,
        }
        if self.x is not None:
            rec["x"] = self.x.tokens(vocab)
        return rec


class Filler(Protocol):
    """Replaces every placeholder in a sequence with a token."""

    def fill(self, seq: TokenSeq, rng: Rng) -> TokenSeq: ...


class Inserter(Protocol):
    """Chooses how many placeholders to push into each gap of a sequence."""

    def counts(self, seq: TokenSeq, rng: Rng) -> list[int]: ...


class UniformVocabFiller:
    """Stub filler: independent uniform draws over the non-reserved vocab."""

    def __init__(self, vocab: Vocab):
        if len(vocab.content_ids) == 0:
            raise DataError("uniform filler needs a non-empty content vocab")
        self._vocab = vocab

    def fill(self, seq: TokenSeq, rng: Rng) -> TokenSeq:
        ids = list(self._vocab.content_ids)
        content = list(seq.content)
        surfaces = list(seq.content_surfaces()) if seq.surfaces is not None else None
        for pos, t in enumerate(content):
            if t == PLH:
                pick = rng.choice(ids)
                content[pos] = pick
                if surfaces is not None:
                    surfaces[pos] = self._vocab.token_of(pick)
        return TokenSeq.from_content(tuple(content), surfaces)


class CopyReferenceFiller:
    """Stub filler for sanity runs: copies the reference token at the slot.

    Position-based, so it is only exact while the state is still
    reference-shaped; out-of-range slots fall back to <UNK>.
    """

    def __init__(self, y_ref: TokenSeq, vocab: Vocab):
        self._ref = y_ref
        self._vocab = vocab

    def fill(self, seq: TokenSeq, rng: Rng) -> TokenSeq:
        from .core import UNK, UNK_TOKEN

        content = list(seq.content)
        surfaces = list(seq.content_surfaces()) if seq.surfaces is not None else None
        for pos, t in enumerate(content):
            if t == PLH:
                if pos < self._ref.content_len:
                    pick = self._ref.content[pos]
                    surf = (
                        self._ref.surfaces[pos + 1]
                        if self._ref.surfaces is not None
                        else self._vocab.token_of(pick)
                    )
                else:
                    pick, surf = UNK, UNK_TOKEN
                content[pos] = pick
                if surfaces is not None:
                    surfaces[pos] = surf
        return TokenSeq.from_content(tuple(content), surfaces)


class GeometricInserter:
    """Stub inserter: geometric placeholder counts, mean 0.5, capped at k_max."""

    def __init__(self, mean: float = 0.5, k_max: int = DEFAULT_K_MAX):
        if mean < 0:
            raise DataError("geometric mean must be non-negative")
        self._p = mean / (1.0 + mean)
        self._k_max = k_max

    def counts(self, seq: TokenSeq, rng: Rng) -> list[int]:
        out = []
        for _ in range(seq.content_len + 1):
            c = 0
            while c < self._k_max and rng.random() < self._p:
                c += 1
            out.append(c)
        return out


def expert_del_labels(y: TokenSeq, y_ref: TokenSeq) -> tuple[bool, ...]:
    """Keep flags of the canonical best 1-way alignment of y into the reference.

    The kept tokens form a common subsequence of maximum length (the LCS).
    """
    best = kbest_1way(y, y_ref, 1)[0]
    kept = {i for i, _ in best.pairs}
    return tuple(i in kept for i in range(y.content_len))


def expert_quadruple(
    x: TokenSeq | None,
    matches: Sequence[TokenSeq],
    y_ref: TokenSeq,
    config: RollinConfig,
    family: str = "expert",
    meta: dict | None = None,
) -> tuple[list[StateSample], EditScript]:
    """The four expert stage-samples read off one derived edit script."""
    graph = nway_align(matches, y_ref, config.k)
    script = derive_edits(graph, matches, y_ref, k_max=config.k_max)
    base = dict(meta or {})
    samples = [
        StateSample(family, "del", tuple(matches), script.del_keep, x, dict(base)),
        StateSample(family, "plh", script.y_plh, script.plh_counts, x, dict(base)),
        StateSample(family, "cmb", script.y_cmb, script.cmb_keep, x, dict(base)),
        StateSample(family, "tok", (script.y_tok,), script.tok_fills, x, dict(base)),
    ]
    return samples, script


def rnd_del_states(y_ref: TokenSeq, n: int, rng: Rng) -> list[TokenSeq]:
    """N contiguous substrings of the reference, as artificial matches.

    Start is uniform over valid offsets, length uniform over what remains;
    empty substrings are allowed and overlaps are not prevented.
    """
    big_r = y_ref.content_len
    surfaces = y_ref.content_surfaces()
    out = []
    for _ in range(n):
        if big_r == 0:
            out.append(TokenSeq.from_content((), () if surfaces is not None else None))
            continue
        start = rng.randint(0, big_r - 1)
        length = rng.randint(0, big_r - start)
        out.append(
            TokenSeq.from_content(
                y_ref.content[start:start + length],
                surfaces[start:start + length] if surfaces is not None else None,
            )
        )
    return out


def sel_noise(
    cmb_seqs: Sequence[TokenSeq],
    matches: Sequence[TokenSeq],
    gamma: float,
    rng: Rng,
) -> tuple[tuple[TokenSeq, ...], int, int]:
    """Replace placeholders with random match tokens, each with rate gamma.

    Draws come uniformly from the multiset of all match content tokens.
    Returns the perturbed sequences plus (replaced, total) placeholder
    counts.
    """
    pool: list[tuple[int, str | None]] = []
    for m in matches:
        surfaces = m.content_surfaces()
        for pos, t in enumerate(m.content):
            pool.append((t, surfaces[pos] if surfaces is not None else None))
    total = 0
    replaced = 0
    out = []
    for seq in cmb_seqs:
        content = list(seq.content)
        surfaces = list(seq.content_surfaces()) if seq.surfaces is not None else None
        for pos, t in enumerate(content):
            if t != PLH:
                continue
            total += 1
            if pool and rng.bernoulli(gamma):
                pick, surf = rng.choice(pool)
                content[pos] = pick
                replaced += 1
                if surfaces is not None:
                    if surf is None:
                        surfaces = None  # pooled token had no surface; drop rather than lie
                    else:
                        surfaces[pos] = surf
        out.append(TokenSeq.from_content(tuple(content), surfaces))
    return tuple(out), replaced, total


def cmb_labels(seqs: Sequence[TokenSeq], y_ref: TokenSeq) -> tuple[tuple[bool, ...], ...]:
    """Keep a position iff its token is real and equals the reference there."""
    rkeys = y_ref.match_keys()
    out = []
    for seq in seqs:
        keep = []
        for j in range(seq.content_len):
            ok = (
                seq.content[j] != PLH
                and j < len(rkeys)
                and seq.match_key(j) == rkeys[j]
            )
            keep.append(ok)
        out.append(tuple(keep))
    return tuple(out)


def random_subsequence(y_ref: TokenSeq, rng: Rng) -> tuple[TokenSeq, list[int]]:
    """Uniform-length, uniform-position subsequence of the reference."""
    big_r = y_ref.content_len
    length = rng.randint(0, big_r)
    positions = sorted(rng.sample(range(big_r), length))
    surfaces = y_ref.content_surfaces()
    sub = TokenSeq.from_content(
        tuple(y_ref.content[p] for p in positions),
        tuple(surfaces[p] for p in positions) if surfaces is not None else None,
    )
    return sub, positions


def rnd_del_1(y_ref: TokenSeq, alpha: float, rng: Rng) -> StateSample:
    """Insertion-training state: the reference itself w.p. alpha, else a
    random subsequence, labeled with the counts that rebuild the reference
    skeleton."""
    big_r = y_ref.content_len
    if rng.bernoulli(alpha):
        counts = gap_counts(list(range(big_r)), big_r)
        return StateSample(
            "post-plh", "plh", (y_ref,), (counts,), None, {"exact_copy": True}
        )
    sub, positions = random_subsequence(y_ref, rng)
    counts = gap_counts(positions, big_r)
    return StateSample(
        "post-plh", "plh", (sub,), (counts,), None, {"exact_copy": False}
    )


def correct_mistakes_state(y_ref: TokenSeq, filler: Filler, rng: Rng) -> StateSample:
    """Deletion-training state: reference with a random mask, filler-filled.

    The kept positions are drawn the same way as the insertion-training
    subsequences, so the two families see matching skeletons.
    """
    sub, positions = random_subsequence(y_ref, rng)
    counts = gap_counts(positions, y_ref.content_len)
    skeleton = apply_insertion(sub, counts, k_max=max(DEFAULT_K_MAX, y_ref.content_len))
    filled = filler.fill(skeleton, rng)
    labels = expert_del_labels(filled, y_ref)
    return StateSample("post-del", "del", (filled,), (labels,), None, {})


def extra_tokens_state(
    y_ref: TokenSeq, inserter: Inserter, filler: Filler, rng: Rng
) -> StateSample:
    """Deletion-training state: reference stretched with filled placeholders."""
    counts = inserter.counts(y_ref, rng)
    bound = max(max(counts, default=0), 1)
    skeleton = apply_insertion(y_ref, counts, k_max=bound)
    filled = filler.fill(skeleton, rng)
    labels = expert_del_labels(filled, y_ref)
    return StateSample("post-del-extra", "del", (filled,), (labels,), None, {})


def rnd_msk(y_ref: TokenSeq, epsilon: float, rng: Rng) -> StateSample:
    """Token-training state: each reference token masked w.p. epsilon."""
    content = list(y_ref.content)
    surfaces = list(y_ref.content_surfaces()) if y_ref.surfaces is not None else None
    fills = []
    for pos, t in enumerate(content):
        if rng.bernoulli(epsilon):
            fills.append((pos, t))
            content[pos] = PLH
            if surfaces is not None:
                surfaces[pos] = PLH_TOKEN
    state = TokenSeq.from_content(tuple(content), surfaces)
    return StateSample(
        "rnd-msk", "tok", (state,), tuple(fills), None,
        {"masked": len(fills), "total": len(content)},
    )


def synth_matches(
    y: TokenSeq,
    n: int,
    r: float,
    f: float,
    filler: Filler,
    rng: Rng,
) -> list[TokenSeq]:
    """Artificial fuzzy matches for pre-training style corpora.

    Each match is a contiguous substring of relative length r, stretched by
    a factor uniform in [1, 1+f] with placeholders at random slots, then
    filled.  r=1, f=0 reproduces the sequence itself.
    """
    if not 0.0 <= r <= 1.0 or f < 0.0:
        raise DataError(f"invalid synth parameters r={r} f={f}")
    big_r = y.content_len
    surfaces = y.content_surfaces()
    out = []
    for _ in range(n):
        m = round(big_r * r)
        start = rng.randint(0, big_r - m) if big_r > m else 0
        base = list(y.content[start:start + m])
        base_surf = list(surfaces[start:start + m]) if surfaces is not None else None
        factor = 1.0 + rng.random() * f
        extra = round(m * factor) - m
        slots = sorted(rng.sample(range(m + extra), extra)) if extra > 0 else []
        content: list[int] = []
        surf: list[str] | None = [] if base_surf is not None else None
        it = iter(base)
        sit = iter(base_surf) if base_surf is not None else None
        slot_set = set(slots)
        for pos in range(m + extra):
            if pos in slot_set:
                content.append(PLH)
                if surf is not None:
                    surf.append(PLH_TOKEN)
            else:
                content.append(next(it))
                if surf is not None:
                    surf.append(next(sit))
        seq = TokenSeq.from_content(tuple(content), tuple(surf) if surf is not None else None)
        out.append(filler.fill(seq, rng))
    return out


def gen_sample(
    x: TokenSeq | None,
    matches: Sequence[TokenSeq],
    y_ref: TokenSeq,
    config: RollinConfig,
    rng: Rng,
    filler: Filler,
    inserter: Inserter,
    sample_index: int = 0,
) -> list[StateSample]:
    """All roll-in families for one triple, in a fixed draw order."""
    meta = {"sample_index": sample_index}
    out: list[StateSample] = []

    samples, script = expert_quadruple(x, matches, y_ref, config, meta=meta)
    out.extend(samples)

    if rng.bernoulli(config.beta):
        subs = rnd_del_states(y_ref, config.n_matches, rng)
        art_samples, _ = expert_quadruple(
            x, subs, y_ref, config, family="rnd-del-N", meta=meta
        )
        out.extend(art_samples)

    if rng.bernoulli(config.gamma):
        noised, replaced, total = sel_noise(script.y_cmb, matches, config.gamma, rng)
        labels = cmb_labels(noised, y_ref)
        out.append(
            StateSample(
                "sel-noise", "cmb", noised, labels, x,
                {**meta, "replaced": replaced, "plh_total": total},
            )
        )

    s = rnd_del_1(y_ref, config.alpha, rng)
    out.append(StateSample(s.family, s.stage, s.states, s.labels, x, {**meta, **s.meta}))

    s = correct_mistakes_state(y_ref, filler, rng)
    out.append(StateSample(s.family, s.stage, s.states, s.labels, x, {**meta, **s.meta}))

    s = extra_tokens_state(y_ref, inserter, filler, rng)
    out.append(StateSample(s.family, s.stage, s.states, s.labels, x, {**meta, **s.meta}))

    if rng.bernoulli(config.delta):
        s = rnd_msk(y_ref, config.epsilon, rng)
        out.append(StateSample(s.family, s.stage, s.states, s.labels, x, {**meta, **s.meta}))

    return out


def gen_corpus(
    triples: Iterable[tuple[TokenSeq | None, Sequence[TokenSeq], TokenSeq]],
    config: RollinConfig,
    filler: Filler,
    inserter: Inserter | None = None,
) -> Iterator[StateSample]:
    """Roll-in states for a corpus of (source, matches, reference) triples.

    Sample index feeds the derived RNG stream, so regenerating any single
    triple reproduces its states exactly.
    """
    if inserter is None:
        inserter = GeometricInserter(0.5, config.k_max)
    root = Rng(config.seed)
    for idx, (x, matches, y_ref) in enumerate(triples):
        rng = root.derive(idx)
        try:
            yield from gen_sample(
                x, matches, y_ref, config, rng, filler, inserter, sample_index=idx
            )
        except EngineError as exc:
            raise RollinSampleError(idx, exc) from exc


class RollinSampleError(EngineError):
    """Tags an engine error with the index of the sample that triggered it."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"sample {index}: {cause}")
        self.index = index


def _is_subsequence(needle: Sequence, haystack: Sequence) -> bool:
    it = iter(haystack)
    return all(any(h == n for h in it) for n in needle)


def validate_sample(sample: StateSample, y_ref: TokenSeq, k_max: int = DEFAULT_K_MAX) -> None:
    """Check label consistency against the reference; raises DataError.

    del labels must keep a subsequence of the reference; plh labels must
    rebuild a reference-length skeleton whose real tokens sit on their
    reference positions; cmb kept tokens must equal the reference; tok
    fills must name the reference token of a placeholder slot.
    """
    rkeys = y_ref.match_keys()
    big_r = y_ref.content_len
    if sample.stage in ("del", "plh", "cmb"):
        if len(sample.states) != len(sample.labels):
            raise DataError("one label row per state required")
    if sample.stage == "del":
        for state, keep in zip(sample.states, sample.labels):
            if len(keep) != state.content_len:
                raise DataError("deletion label length mismatch")
            kept = [state.match_key(i) for i, kp in enumerate(keep) if kp]
            if not _is_subsequence(kept, rkeys):
                raise DataError("kept tokens are not a subsequence of the reference")
    elif sample.stage == "plh":
        for state, counts in zip(sample.states, sample.labels):
            if len(counts) != state.content_len + 1:
                raise DataError("placeholder label length mismatch")
            if any(c > k_max for c in counts):
                raise DataError("placeholder count exceeds K_max")
            padded = apply_insertion(state, counts, k_max=max(k_max, max(counts, default=0)))
            if padded.content_len != big_r:
                raise DataError(
                    f"skeleton length {padded.content_len} != reference length {big_r}"
                )
            pos = 0
            for g, c in enumerate(counts):
                pos += c
                if g < state.content_len:
                    if state.match_key(g) != rkeys[pos]:
                        raise DataError(
                            f"kept token {g} lands at {pos} but differs from the reference"
                        )
                    pos += 1
    elif sample.stage == "cmb":
        for state, keep in zip(sample.states, sample.labels):
            if len(keep) != state.content_len:
                raise DataError("combination label length mismatch")
            for j, kp in enumerate(keep):
                if kp:
                    if state.content[j] == PLH or j >= big_r or state.match_key(j) != rkeys[j]:
                        raise DataError(f"kept combination slot {j} does not match the reference")
    elif sample.stage == "tok":
        (state,) = sample.states
        if state.content_len != big_r:
            raise DataError("token-stage state must be reference length")
        for pos, tok in sample.labels:
            if state.content[pos] != PLH:
                raise DataError(f"fill at {pos} does not target a placeholder")
            if tok != y_ref.content[pos]:
                raise DataError(f"fill at {pos} names a non-reference token")
    else:
        raise DataError(f"unknown stage {sample.stage!r}")

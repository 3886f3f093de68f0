"""Decoding simulation: first pass over retrieved matches, then refinement.

A pluggable policy scores the four decisions (delete, insert, combine,
fill); the engine applies argmax choices through the edit operations and
records a trace that replays byte-for-byte.  Refinement repeats
delete/insert/fill on the single combined sequence until a full round
changes nothing, with a penalty on the zero-insertion logit to discourage
premature convergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import BOS, EOS, PAD, PLH, DataError, Rng, TokenSeq, Vocab
from .alignment import kbest_1way, nway_align
from .edits import (
    DEFAULT_K_MAX,
    CombineLengthError,
    GapOverflowError,
    Origin,
    Provenance,
    apply_deletion,
    apply_insertion,
    combine,
    derive_edits,
    fill_tokens,
)
from .realign import PlhLogits, RealignConfig, realign

NEG = -1e9
DEFAULT_MAX_ITERS = 10
DEFAULT_ZERO_PENALTY = 3.0


class Policy(Protocol):
    """Stage scorers; every method is free of side effects on the state.

    deletion_scores: per sequence, an (len, 2) array of log-probs for
    [keep, delete] per content token.  insertion_logits: per sequence, one
    (K_max+1,) log-prob array per gap (content gaps, len+1 of them).
    combination_scores: per sequence, a (len,) array of keep scores.
    token_logits: {content position -> vocab log-prob array} for each
    placeholder.
    """

    def deletion_scores(self, x: TokenSeq | None, seqs: Sequence[TokenSeq]) -> list[np.ndarray]: ...

    def insertion_logits(self, x: TokenSeq | None, seqs: Sequence[TokenSeq]) -> list[list[np.ndarray]]: ...

    def combination_scores(self, x: TokenSeq | None, seqs: Sequence[TokenSeq]) -> list[np.ndarray]: ...

    def token_logits(self, x: TokenSeq | None, seq: TokenSeq) -> dict[int, np.ndarray]: ...


@dataclass(frozen=True)
class DecodeConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    zero_penalty: float = DEFAULT_ZERO_PENALTY
    use_realign: bool = False
    realign: RealignConfig = field(default_factory=RealignConfig)
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        if self.max_iters < 0:
            raise DataError("max_iters must be non-negative")


@dataclass(frozen=True)
class TraceStep:
    """One recorded stage decision; data is stage-shaped like edit labels."""

    stage: str
    data: tuple
    note: str = ""


@dataclass(frozen=True)
class DecodeResult:
    output: TokenSeq
    provenance: Provenance
    iterations: int
    converged: bool
    trace: tuple[TraceStep, ...]


def replay_trace(trace: Sequence[TraceStep], matches: Sequence[TokenSeq]) -> TokenSeq:
    """Re-apply recorded decisions through the edit operations."""
    seqs = list(matches)
    current: TokenSeq | None = None if matches else TokenSeq.from_content(())
    for step in trace:
        if step.stage == "del":
            if current is None:
                seqs = [apply_deletion(s, m) for s, m in zip(seqs, step.data)]
            else:
                current = apply_deletion(current, step.data[0])
        elif step.stage == "plh":
            if current is None:
                seqs = [
                    apply_insertion(s, c, k_max=max(max(c, default=0), 1))
                    for s, c in zip(seqs, step.data)
                ]
            else:
                c = step.data[0]
                current = apply_insertion(current, c, k_max=max(max(c, default=0), 1))
        elif step.stage == "cmb":
            current = combine(seqs, step.data)
        elif step.stage == "tok":
            current = fill_tokens(current, step.data)
        else:
            raise DataError(f"unknown trace stage {step.stage!r}")
    if current is None:
        raise DataError("trace ended before combination")
    return current


def _argmax_keep(arr: np.ndarray) -> tuple[bool, ...]:
    # ties go to keep
    return tuple(bool(arr[i, 0] >= arr[i, 1]) for i in range(arr.shape[0]))


def _check_fill_token(tok: int) -> int:
    if tok in (BOS, EOS, PAD):
        raise DataError(f"policy emitted reserved token id {tok} as a fill")
    return tok


def _fills_from_policy(policy: Policy, x: TokenSeq | None, seq: TokenSeq) -> tuple[tuple[int, int], ...]:
    logits = policy.token_logits(x, seq)
    plh_positions = [pos for pos, t in enumerate(seq.content) if t == PLH]
    missing = [pos for pos in plh_positions if pos not in logits]
    if missing:
        raise DataError(f"policy returned no distribution for placeholders at {missing}")
    fills = []
    for pos in sorted(logits):
        if seq.content[pos] != PLH:
            raise DataError(f"policy scored non-placeholder position {pos}")
        fills.append((pos, _check_fill_token(int(np.argmax(logits[pos])))))
    return tuple(fills)


def first_pass(
    x: TokenSeq | None,
    matches: Sequence[TokenSeq],
    policy: Policy,
    config: DecodeConfig = DecodeConfig(),
) -> tuple[TokenSeq, list[Origin], list[TraceStep]]:
    """Delete, insert, combine, and fill once across all matches.

    Returns the sequence, per-position origins, and the trace steps taken.
    Raises CombineLengthError when the padded matches disagree in length.
    """
    if not matches:
        raise DataError("first pass needs at least one match")
    trace: list[TraceStep] = []

    dscores = policy.deletion_scores(x, matches)
    if len(dscores) != len(matches):
        raise DataError("one deletion score array per match required")
    keeps = []
    kept_src: list[list[int]] = []
    for seq, arr in zip(matches, dscores):
        if arr.shape != (seq.content_len, 2):
            raise DataError("deletion scores must be (len, 2)")
        keep = _argmax_keep(arr)
        keeps.append(keep)
        kept_src.append([i for i, kp in enumerate(keep) if kp])
    deleted = [apply_deletion(s, k) for s, k in zip(matches, keeps)]
    trace.append(TraceStep("del", tuple(keeps)))

    gap_logits = policy.insertion_logits(x, deleted)
    counts = []
    for seq, gaps in zip(deleted, gap_logits):
        if len(gaps) != seq.content_len + 1:
            raise DataError("one gap distribution per gap required")
        counts.append(tuple(int(np.argmax(g)) for g in gaps))
    note = ""
    if config.use_realign and len(deleted) >= 2:
        framed = [len(s.ids) for s in deleted]
        logits_t = PlhLogits.from_gap_lists(gap_logits, framed)
        plan, _ = realign(logits_t, deleted, config.realign)
        counts = [
            plan.counts_for(n, s.content_len) for n, s in enumerate(deleted)
        ]
        note = "realigned"
    padded = [apply_insertion(s, c, k_max=config.k_max) for s, c in zip(deleted, counts)]
    trace.append(TraceStep("plh", tuple(counts), note=note))

    lengths = [s.content_len for s in padded]
    if len(set(lengths)) > 1:
        raise CombineLengthError(lengths)

    cscores = policy.combination_scores(x, padded)
    if len(cscores) != len(padded):
        raise DataError("one combination score array per match required")
    stack = np.stack([np.asarray(a, dtype=float) for a in cscores])
    if stack.shape != (len(padded), lengths[0]):
        raise DataError("combination scores must be (n, length)")
    choice = np.argmax(stack, axis=0)  # ties resolve to the lowest n
    keep_masks = tuple(
        tuple(bool(choice[j] == n) for j in range(lengths[0]))
        for n in range(len(padded))
    )
    merged = combine(padded, keep_masks)
    trace.append(TraceStep("cmb", keep_masks))

    # origins: map padded positions back to source tokens of the chosen match
    src_at: list[dict[int, int]] = []
    for n, c in enumerate(counts):
        pos_map = {}
        pos = 0
        for t in range(len(c) - 1):
            pos += c[t]
            pos_map[pos] = kept_src[n][t]
            pos += 1
        src_at.append(pos_map)
    origins: list[Origin] = []
    for j in range(merged.content_len):
        n = int(choice[j])
        if merged.content[j] != PLH and padded[n].content[j] != PLH:
            origins.append(Origin("copy", n=n, src=src_at[n][j]))
        else:
            origins.append(Origin("gen"))

    fills = _fills_from_policy(policy, x, merged)
    final = fill_tokens(merged, fills)
    trace.append(TraceStep("tok", fills))
    return final, origins, trace


def _refine_round(
    y: TokenSeq,
    origins: list[Origin],
    x: TokenSeq | None,
    policy: Policy,
    config: DecodeConfig,
    trace: list[TraceStep],
) -> tuple[TokenSeq, list[Origin]]:
    (arr,) = policy.deletion_scores(x, [y])
    if arr.shape != (y.content_len, 2):
        raise DataError("deletion scores must be (len, 2)")
    keep = _argmax_keep(arr)
    y2 = apply_deletion(y, keep)
    origins = [o for o, kp in zip(origins, keep) if kp]
    trace.append(TraceStep("del", (keep,)))

    (gaps,) = policy.insertion_logits(x, [y2])
    if len(gaps) != y2.content_len + 1:
        raise DataError("one gap distribution per gap required")
    counts = []
    for g in gaps:
        pen = np.asarray(g, dtype=float).copy()
        pen[0] -= config.zero_penalty
        counts.append(int(np.argmax(pen)))
    y3 = apply_insertion(y2, counts, k_max=config.k_max)
    new_origins: list[Origin] = []
    for g, c in enumerate(counts):
        new_origins.extend([Origin("gen")] * c)
        if g < len(origins):
            new_origins.append(origins[g])
    origins = new_origins
    trace.append(TraceStep("plh", (tuple(counts),), note="penalized"))

    fills = _fills_from_policy(policy, x, y3)
    y4 = fill_tokens(y3, fills)
    trace.append(TraceStep("tok", fills))
    return y4, origins


def iterative_refine(
    y: TokenSeq,
    origins: list[Origin],
    x: TokenSeq | None,
    policy: Policy,
    config: DecodeConfig,
    trace: list[TraceStep],
) -> tuple[TokenSeq, list[Origin], int, bool]:
    """Delete/insert/fill rounds until a full round is a fixed point.

    Returns (sequence, origins, rounds executed, converged flag).
    """
    iterations = 0
    converged = False
    for _ in range(config.max_iters):
        y_next, origins = _refine_round(y, origins, x, policy, config, trace)
        iterations += 1
        if y_next.ids == y.ids:
            converged = True
            y = y_next
            break
        y = y_next
    return y, origins, iterations, converged


def decode(
    x: TokenSeq | None,
    matches: Sequence[TokenSeq],
    policy: Policy,
    config: DecodeConfig = DecodeConfig(),
) -> DecodeResult:
    """Full decoding: first pass over the matches, then refinement.

    An empty match set degenerates to pure generation: refinement starts
    from the empty sequence and every output token is generated.
    """
    trace: list[TraceStep] = []
    if matches:
        y, origins, steps = first_pass(x, matches, policy, config)
        trace.extend(steps)
    else:
        y = TokenSeq.from_content(())
        origins = []
    y, origins, iterations, converged = iterative_refine(
        y, origins, x, policy, config, trace
    )
    prov = Provenance(tuple(origins))
    prov.check_against(y, matches)
    return DecodeResult(
        output=y,
        provenance=prov,
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
    )


class ExpertPolicy:
    """Oracle policy that recomputes stage labels from the queried state.

    Deletion and insertion re-derive a joint alignment against the
    reference; when the engine follows the expert exactly, the cached edit
    script keeps both stages on one alignment graph.  Combination ranks
    correct tokens above placeholders above wrong tokens; fills name the
    reference token at the slot (anchor-aligned when lengths differ, <UNK>
    past the end).
    """

    def __init__(self, y_ref: TokenSeq, vocab: Vocab, k: int = 10, k_max: int = DEFAULT_K_MAX):
        self._ref = y_ref
        self._vocab = vocab
        self._k = k
        self._k_max = k_max
        self._script = None

    def deletion_scores(self, x, seqs):
        graph = nway_align(seqs, self._ref, self._k)
        try:
            self._script = derive_edits(graph, seqs, self._ref, k_max=self._k_max)
        except GapOverflowError:
            self._script = None
        out = []
        for n, seq in enumerate(seqs):
            keep = set(i for i, _ in graph.edges_of(n))
            arr = np.full((seq.content_len, 2), NEG)
            for i in range(seq.content_len):
                arr[i, 0 if i in keep else 1] = 0.0
            out.append(arr)
        return out

    def _counts_from_pairs(self, seq_len: int, pairs, big_r: int) -> list[int]:
        # unmatched tokens between anchors absorb slots; leftovers pile into
        # the gap right after the previous anchor
        counts = [0] * (seq_len + 1)
        prev_i, prev_j = -1, -1
        for i, j in list(pairs) + [(seq_len, big_r)]:
            span = j - prev_j - 1
            junk = i - prev_i - 1
            counts[prev_i + 1] += max(0, span - junk)
            prev_i, prev_j = i, j
        return counts

    def insertion_logits(self, x, seqs):
        big_r = self._ref.content_len
        cached = (
            self._script is not None
            and tuple(s.ids for s in seqs) == tuple(s.ids for s in self._script.y_plh)
        )
        if cached:
            per_seq_counts = [list(c) for c in self._script.plh_counts]
        else:
            graph = nway_align(seqs, self._ref, self._k)
            per_seq_counts = [
                self._counts_from_pairs(s.content_len, graph.edges_of(n), big_r)
                for n, s in enumerate(seqs)
            ]
        out = []
        for counts in per_seq_counts:
            gaps = []
            for c in counts:
                arr = np.full(self._k_max + 1, NEG)
                arr[min(c, self._k_max)] = 0.0
                gaps.append(arr)
            out.append(gaps)
        return out

    def combination_scores(self, x, seqs):
        rkeys = self._ref.match_keys()
        out = []
        for seq in seqs:
            scores = np.zeros(seq.content_len)
            for j in range(seq.content_len):
                if seq.content[j] == PLH:
                    scores[j] = 1.0
                elif j < len(rkeys) and seq.match_key(j) == rkeys[j]:
                    scores[j] = 2.0
                else:
                    scores[j] = 0.0
            out.append(scores)
        return out

    def _fill_target(self, seq: TokenSeq, pos: int, anchor_map: dict[int, int]) -> int:
        from .core import UNK

        big_r = self._ref.content_len
        if seq.content_len == big_r:
            return self._ref.content[pos]
        for i in range(pos - 1, -1, -1):
            if i in anchor_map:
                j = anchor_map[i] + (pos - i)
                return self._ref.content[j] if 0 <= j < big_r else UNK
        return self._ref.content[pos] if pos < big_r else UNK

    def token_logits(self, x, seq):
        anchor_map: dict[int, int] = {}
        if seq.content_len != self._ref.content_len:
            best = kbest_1way(seq, self._ref, 1)[0]
            anchor_map = dict(best.pairs)
        out = {}
        for pos, t in enumerate(seq.content):
            if t != PLH:
                continue
            target = self._fill_target(seq, pos, anchor_map)
            arr = np.full(len(self._vocab), NEG)
            arr[target] = 0.0
            out[pos] = arr
        return out


class NoisyExpertPolicy:
    """Expert with independent per-decision corruption at a fixed rate.

    ``stages`` picks which decisions get noise; insertion noise is off by
    default because uncoordinated per-sequence length changes abort the
    combination stage.
    """

    def __init__(
        self,
        expert: ExpertPolicy,
        flip_p: float,
        rng: Rng,
        stages: tuple[str, ...] = ("del", "cmb", "tok"),
    ):
        if not 0.0 <= flip_p <= 1.0:
            raise DataError("flip probability must be in [0, 1]")
        self._expert = expert
        self._p = flip_p
        self._rng = rng
        self._stages = stages

    def deletion_scores(self, x, seqs):
        out = self._expert.deletion_scores(x, seqs)
        if "del" in self._stages:
            for arr in out:
                for i in range(arr.shape[0]):
                    if self._rng.bernoulli(self._p):
                        arr[i] = arr[i, ::-1].copy()
        return out

    def insertion_logits(self, x, seqs):
        out = self._expert.insertion_logits(x, seqs)
        if "plh" in self._stages:
            for gaps in out:
                for g, arr in enumerate(gaps):
                    if self._rng.bernoulli(self._p):
                        cur = int(np.argmax(arr))
                        shift = 1 if self._rng.bernoulli(0.5) else -1
                        new = min(max(cur + shift, 0), len(arr) - 1)
                        arr2 = np.full_like(arr, NEG)
                        arr2[new] = 0.0
                        gaps[g] = arr2
        return out

    def combination_scores(self, x, seqs):
        out = self._expert.combination_scores(x, seqs)
        if "cmb" in self._stages:
            for arr in out:
                for j in range(arr.shape[0]):
                    if self._rng.bernoulli(self._p):
                        arr[j] = 3.0
        return out

    def token_logits(self, x, seq):
        out = self._expert.token_logits(x, seq)
        if "tok" in self._stages:
            ids = list(self._expert._vocab.content_ids)
            for pos in out:
                if ids and self._rng.bernoulli(self._p):
                    arr = np.full_like(out[pos], NEG)
                    arr[self._rng.choice(ids)] = 0.0
                    out[pos] = arr
        return out


class UniformStubPolicy:
    """Maximally uninformed policy; every stage is a flat distribution.

    Argmax ties resolve deterministically: keep wins deletion, zero wins
    insertion (so only the refinement penalty triggers growth), the lowest
    sequence wins combination, and fills take the first content token.
    """

    def __init__(self, vocab: Vocab, k_max: int = DEFAULT_K_MAX):
        if len(vocab.content_ids) == 0:
            raise DataError("stub policy needs a non-empty content vocab")
        self._vocab = vocab
        self._k_max = k_max

    def deletion_scores(self, x, seqs):
        return [
            np.full((s.content_len, 2), np.log(0.5)) for s in seqs
        ]

    def insertion_logits(self, x, seqs):
        flat = np.full(self._k_max + 1, -np.log(self._k_max + 1))
        return [
            [flat.copy() for _ in range(s.content_len + 1)] for s in seqs
        ]

    def combination_scores(self, x, seqs):
        return [np.zeros(s.content_len) for s in seqs]

    def token_logits(self, x, seq):
        ids = list(self._vocab.content_ids)
        arr = np.full(len(self._vocab), NEG)
        arr[ids] = -np.log(len(ids))
        return {
            pos: arr.copy() for pos, t in enumerate(seq.content) if t == PLH
        }

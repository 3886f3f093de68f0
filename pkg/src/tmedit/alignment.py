"""Alignment of retrieved sequences against a reference.

An alignment graph is a set of edges (n, i, j) tying content token i of
sequence n to content position j of the reference.  Within one sequence the
edges must not cross: for any two edges, (i - i')(j - j') > 0.  Quality is
the pair (covered reference positions, total edge count), compared
lexicographically; the search is a per-sequence k-best pass followed by an
exhaustive recombination over one choice per sequence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from .core import BudgetError, DataError, TokenSeq

DEFAULT_K = 10
RECOMBINE_BUDGET = 10**6
ORACLE_STATE_BUDGET = 2 * 10**6


@dataclass(frozen=True)
class OneWayAlignment:
    """A monotone matching of one sequence into the reference.

    ``pairs`` holds (i, j) content coordinates, strictly increasing in both.
    """

    pairs: tuple[tuple[int, int], ...]
    score: int

    def __post_init__(self):
        if self.score != len(self.pairs):
            raise DataError("alignment score must equal the number of pairs")
        for (i0, j0), (i1, j1) in zip(self.pairs, self.pairs[1:]):
            if i1 <= i0 or j1 <= j0:
                raise DataError(f"alignment pairs not strictly increasing: {self.pairs!r}")
        for i, j in self.pairs:
            if i < 0 or j < 0:
                raise DataError("negative alignment coordinate")

    def covered(self) -> frozenset[int]:
        return frozenset(j for _, j in self.pairs)


@dataclass(frozen=True)
class CoverageStats:
    covered: int
    total_edges: int

    def ratio(self, ref_len: int) -> float:
        return 1.0 if ref_len == 0 else self.covered / ref_len


@dataclass(frozen=True)
class AlignmentGraph:
    """Bipartite edges between N sequences and one reference, content coords."""

    n_seqs: int
    seq_lens: tuple[int, ...]
    ref_len: int
    edges: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if len(self.seq_lens) != self.n_seqs:
            raise DataError("seq_lens length must equal n_seqs")
        if list(self.edges) != sorted(self.edges):
            raise DataError("edges must be sorted by (n, i, j)")
        per_n: dict[int, list[tuple[int, int]]] = {}
        for n, i, j in self.edges:
            if not 0 <= n < self.n_seqs:
                raise DataError(f"edge sequence index {n} out of range")
            if not 0 <= i < self.seq_lens[n]:
                raise DataError(f"edge token index {i} out of range for sequence {n}")
            if not 0 <= j < self.ref_len:
                raise DataError(f"edge reference index {j} out of range")
            per_n.setdefault(n, []).append((i, j))
        for n, pairs in per_n.items():
            for (i0, j0), (i1, j1) in itertools.combinations(pairs, 2):
                if (i0 - i1) * (j0 - j1) <= 0:
                    raise DataError(
                        f"crossing or duplicate edges in sequence {n}: ({i0},{j0}) vs ({i1},{j1})"
                    )

    def edges_of(self, n: int) -> tuple[tuple[int, int], ...]:
        return tuple((i, j) for en, i, j in self.edges if en == n)

    def covered(self) -> frozenset[int]:
        return frozenset(j for _, _, j in self.edges)

    def coverage_stats(self) -> CoverageStats:
        return CoverageStats(covered=len(self.covered()), total_edges=len(self.edges))


def check_token_property(graph: AlignmentGraph, seqs: Sequence[TokenSeq], y_ref: TokenSeq) -> None:
    """Assert every edge ties equal tokens; raises DataError otherwise."""
    rkeys = y_ref.match_keys()
    keys = [s.match_keys() for s in seqs]
    for n, i, j in graph.edges:
        if keys[n][i] != rkeys[j]:
            raise DataError(f"edge ({n},{i},{j}) ties unequal tokens")


def kbest_1way(y: TokenSeq, y_ref: TokenSeq, k: int = DEFAULT_K) -> list[OneWayAlignment]:
    """The k best monotone matchings of ``y`` into ``y_ref``.

    Ranked by (score desc, pair list asc); distinct alignments only.  The
    first entry scores the LCS length, and the empty matching is always
    present when k permits.  Each DP cell keeps its own k best suffix
    matchings, so the pass is O(|y|·|y_ref|·k) cells.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    a = y.match_keys()
    b = y_ref.match_keys()
    la, lb = len(a), len(b)
    empty_cell = [(0, ())]
    below = [empty_cell] * (lb + 1)
    for i in range(la - 1, -1, -1):
        row: list = [None] * (lb + 1)
        row[lb] = empty_cell
        for j in range(lb - 1, -1, -1):
            cands = list(row[j + 1]) + list(below[j])
            if a[i] == b[j]:
                for neg, pairs in below[j + 1]:
                    cands.append((neg - 1, ((i, j),) + pairs))
            cands.sort()
            cell = []
            prev = None
            for item in cands:
                if item != prev:
                    cell.append(item)
                    prev = item
                    if len(cell) == k:
                        break
            row[j] = cell
        below = row
    return [OneWayAlignment(pairs, -neg) for neg, pairs in below[0]]


def recombine(
    candidates: Sequence[Sequence[OneWayAlignment]],
    ref_len: int,
    seq_lens: Sequence[int],
    budget: int = RECOMBINE_BUDGET,
) -> AlignmentGraph:
    """Pick one alignment per sequence maximizing (coverage, total edges).

    Exhaustive over the cross product of candidate lists, pruned with an
    optimistic coverage bound; ties resolve to the lexicographically
    smallest index tuple.  The pruning never changes the result: a branch is
    cut only when even the union of everything it could still add stays
    strictly below the incumbent coverage.
    """
    n = len(candidates)
    if n != len(seq_lens):
        raise DataError("candidates/seq_lens length mismatch")
    total = 1
    for lst in candidates:
        if not lst:
            raise DataError("empty candidate list for a sequence")
        total *= len(lst)
        if total > budget:
            raise BudgetError(
                f"recombination space {total}+ exceeds budget {budget}"
            )
    cov = [[cand.covered() for cand in lst] for lst in candidates]
    suffix_union = [frozenset()] * (n + 1)
    for m in range(n - 1, -1, -1):
        u = frozenset().union(*cov[m]) if cov[m] else frozenset()
        suffix_union[m] = suffix_union[m + 1] | u

    best = (-1, -1)
    best_choice: tuple[int, ...] | None = None

    def walk(m: int, chosen: list[int], covered: frozenset[int], edges: int):
        nonlocal best, best_choice
        if m == n:
            score = (len(covered), edges)
            if score > best:
                best = score
                best_choice = tuple(chosen)
            return
        if len(covered | suffix_union[m]) < best[0]:
            return
        for idx, cand in enumerate(candidates[m]):
            chosen.append(idx)
            walk(m + 1, chosen, covered | cov[m][idx], edges + cand.score)
            chosen.pop()

    walk(0, [], frozenset(), 0)
    assert best_choice is not None
    edges = []
    for m, idx in enumerate(best_choice):
        edges.extend((m, i, j) for i, j in candidates[m][idx].pairs)
    return AlignmentGraph(
        n_seqs=n,
        seq_lens=tuple(seq_lens),
        ref_len=ref_len,
        edges=tuple(sorted(edges)),
    )


def nway_align(
    seqs: Sequence[TokenSeq],
    y_ref: TokenSeq,
    k: int = DEFAULT_K,
    budget: int = RECOMBINE_BUDGET,
) -> AlignmentGraph:
    """Two-step joint alignment: per-sequence k-best, then recombination."""
    if not seqs:
        return AlignmentGraph(0, (), y_ref.content_len, ())
    candidates = [kbest_1way(s, y_ref, k) for s in seqs]
    graph = recombine(
        candidates, y_ref.content_len, [s.content_len for s in seqs], budget=budget
    )
    check_token_property(graph, seqs, y_ref)
    return graph


def exact_nway_oracle(
    seqs: Sequence[TokenSeq],
    y_ref: TokenSeq,
    budget: int = ORACLE_STATE_BUDGET,
) -> AlignmentGraph:
    """True optimum of (coverage, edges) by dynamic programming.

    State is (reference prefix j, per-sequence prefixes i_1..i_N); moves
    either skip one sequence token, skip the reference position, or match
    the reference position into any nonempty subset of sequences whose next
    token equals it.  Exact but exponential in N; refuses instances whose
    state count exceeds ``budget``.
    """
    if not seqs:
        return AlignmentGraph(0, (), y_ref.content_len, ())
    keys = [s.match_keys() for s in seqs]
    rkeys = y_ref.match_keys()
    lens = [len(ks) for ks in keys]
    big_r = len(rkeys)
    n = len(seqs)
    states = big_r
    for l in lens:
        states *= l + 1
    if states > budget:
        raise BudgetError(
            f"oracle state count {states} exceeds budget {budget}"
        )

    origin = tuple([0] * n)
    val: dict[tuple[int, ...], tuple[int, int]] = {origin: (0, 0)}
    parent: dict[tuple, tuple] = {}
    ranges = [range(l + 1) for l in lens]

    for j in range(big_r + 1):
        nxt: dict[tuple[int, ...], tuple[int, int]] = {}
        for ivec in itertools.product(*ranges):
            v = val.get(ivec)
            if v is None:
                continue
            # skip one token of any sequence; destination comes later in
            # row-major order, so it is relaxed before being visited
            for m in range(n):
                if ivec[m] < lens[m]:
                    dest = ivec[:m] + (ivec[m] + 1,) + ivec[m + 1:]
                    if v > val.get(dest, (-1, -1)):
                        val[dest] = v
                        parent[(j, dest)] = ((j, ivec), ())
            if j == big_r:
                continue
            # skip the reference position
            if v > nxt.get(ivec, (-1, -1)):
                nxt[ivec] = v
                parent[(j + 1, ivec)] = ((j, ivec), ())
            # match it into a nonempty subset of eligible sequences
            elig = [m for m in range(n) if ivec[m] < lens[m] and keys[m][ivec[m]] == rkeys[j]]
            for size in range(1, len(elig) + 1):
                for sub in itertools.combinations(elig, size):
                    dest = list(ivec)
                    for m in sub:
                        dest[m] += 1
                    dest_t = tuple(dest)
                    cand = (v[0] + 1, v[1] + size)
                    if cand > nxt.get(dest_t, (-1, -1)):
                        nxt[dest_t] = cand
                        parent[(j + 1, dest_t)] = (
                            (j, ivec),
                            tuple((m, ivec[m], j) for m in sub),
                        )
        if j < big_r:
            val = nxt

    best_ivec = None
    best_v = (-1, -1)
    for ivec in itertools.product(*ranges):
        v = val.get(ivec)
        if v is not None and v > best_v:
            best_v = v
            best_ivec = ivec

    edges: list[tuple[int, int, int]] = []
    state = (big_r, best_ivec)
    while state[1] != origin or state[0] != 0:
        prev, added = parent[state]
        edges.extend(added)
        state = prev
    graph = AlignmentGraph(
        n_seqs=n,
        seq_lens=tuple(lens),
        ref_len=big_r,
        edges=tuple(sorted(edges)),
    )
    check_token_property(graph, seqs, y_ref)
    return graph


def set_cover_decision(
    universe_size: int,
    subsets: Sequence[Sequence[int]],
    choices: Sequence[Sequence[int]],
    p: int,
    budget: int = RECOMBINE_BUDGET,
) -> bool:
    """Does some selection of one subset per choice list cover >= p elements?

    Exhaustive over the cross product of ``choices`` (indices into
    ``subsets``), with early exit on the first witness.
    """
    sets = []
    for s in subsets:
        fs = frozenset(s)
        for el in fs:
            if not 0 <= el < universe_size:
                raise DataError(f"subset element {el} outside universe of size {universe_size}")
        sets.append(fs)
    total = 1
    for lst in choices:
        for idx in lst:
            if not 0 <= idx < len(sets):
                raise DataError(f"choice index {idx} out of range")
        total *= len(lst)
        if total > budget:
            raise BudgetError(f"selection space {total}+ exceeds budget {budget}")
    for pick in itertools.product(*choices):
        covered = frozenset().union(*(sets[idx] for idx in pick)) if pick else frozenset()
        if len(covered) >= p:
            return True
    return False


def set_cover_from_single_pool(
    universe_size: int,
    subsets: Sequence[Sequence[int]],
    k: int,
    budget: int = RECOMBINE_BUDGET,
) -> bool:
    """Classic cover decision: can k subsets from one pool cover everything?

    Reduces to the per-choice form by repeating the full pool k times and
    demanding the whole universe.
    """
    all_idx = list(range(len(subsets)))
    return set_cover_decision(
        universe_size, subsets, [all_idx] * k, universe_size, budget=budget
    )

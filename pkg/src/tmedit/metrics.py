"""Provenance-split n-gram precision and match-quality statistics.

Output n-grams are classed by the origins of their tokens (copied from a
match vs generated); each class's bag is clipped independently against the
full reference n-gram counts, then pooled corpus-level as sum of clipped
over sum of emitted.  Unit shares report how much of each order's mass a
class holds.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .core import DataError, TokenSeq
from .edits import Provenance

UNIGRAM_CLASSES = ("copy", "gen")
BIGRAM_CLASSES = ("copy-copy", "copy-gen", "gen-copy", "gen-gen")


@dataclass(frozen=True)
class ClassStat:
    precision: float
    share: float
    units: int
    clipped: int


@dataclass(frozen=True)
class OriginStats:
    """Per-order, per-class modified precision and unit share."""

    orders: dict[int, dict[str, ClassStat]]

    def to_json(self) -> dict:
        return {
            str(order): {
                cls: {
                    "precision": st.precision,
                    "share": st.share,
                    "units": st.units,
                    "clipped": st.clipped,
                }
                for cls, st in per.items()
            }
            for order, per in self.orders.items()
        }


def _ngram_class(kinds: Sequence[str]) -> str:
    return "-".join(kinds)


def origin_ngram_stats(
    results: Sequence[tuple[TokenSeq, Provenance]],
    refs: Sequence[TokenSeq],
    max_order: int = 2,
) -> OriginStats:
    """Corpus-level clipped precision split by token origin.

    For each sentence and order, the output n-grams fall into origin
    classes; every class bag is clipped against the sentence's full
    reference counts on its own.  Precision is corpus sum(clipped) /
    sum(units); a class with no units reports 0.0.  Shares are class units
    over the order's total units and sum to one when the total is positive.
    """
    if len(results) != len(refs):
        raise DataError("one reference per decode result required")
    if max_order < 1:
        raise DataError("max_order must be >= 1")
    class_names = {1: UNIGRAM_CLASSES, 2: BIGRAM_CLASSES}
    num: dict[int, Counter] = {o: Counter() for o in range(1, max_order + 1)}
    den: dict[int, Counter] = {o: Counter() for o in range(1, max_order + 1)}

    for (out, prov), ref in zip(results, refs):
        toks = out.content
        if len(prov.origins) != len(toks):
            raise DataError("provenance length does not match output")
        kinds = [o.kind for o in prov.origins]
        for order in range(1, max_order + 1):
            ref_counts = Counter(
                tuple(ref.content[j:j + order]) for j in range(ref.content_len - order + 1)
            )
            bags: dict[str, Counter] = {}
            for i in range(len(toks) - order + 1):
                cls = _ngram_class(kinds[i:i + order])
                bags.setdefault(cls, Counter())[tuple(toks[i:i + order])] += 1
            for cls, bag in bags.items():
                den[order][cls] += sum(bag.values())
                num[order][cls] += sum(
                    min(c, ref_counts[g]) for g, c in bag.items()
                )

    orders: dict[int, dict[str, ClassStat]] = {}
    for order in range(1, max_order + 1):
        names = class_names.get(order)
        if names is None:
            names = tuple(sorted(den[order]))
        total = sum(den[order][c] for c in names)
        per = {}
        for cls in names:
            units = den[order][cls]
            clipped = num[order][cls]
            per[cls] = ClassStat(
                precision=(clipped / units) if units else 0.0,
                share=(units / total) if total else 0.0,
                units=units,
                clipped=clipped,
            )
        orders[order] = per
    return OriginStats(orders)


@dataclass(frozen=True)
class CoverNoise:
    cover: float
    noise: float


def cover_noise(y_ref: TokenSeq, matches: Sequence[TokenSeq]) -> CoverNoise:
    """How much of the reference the matches supply, and how much junk rides along.

    cover: clipped multiset overlap between the reference and the pooled
    match tokens, over the reference length (1.0 for an empty reference).
    noise: fraction of match tokens absent from the reference (0.0 with no
    match tokens).
    """
    ref_counts = Counter(y_ref.content)
    pool = Counter()
    for m in matches:
        pool.update(m.content)
    ref_total = sum(ref_counts.values())
    pool_total = sum(pool.values())
    covered = sum(min(c, pool[t]) for t, c in ref_counts.items())
    noisy = sum(c for t, c in pool.items() if ref_counts[t] == 0)
    return CoverNoise(
        cover=(covered / ref_total) if ref_total else 1.0,
        noise=(noisy / pool_total) if pool_total else 0.0,
    )

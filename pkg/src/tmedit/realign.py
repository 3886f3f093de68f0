"""Cross-sequence realignment of placeholder-count plans.

Given per-gap count distributions for N padded sequences, the realigner
nudges a continuous relaxation of the counts so that identical tokens in
different sequences land on the same absolute positions, then rounds back
to integers.  Three terms drive the descent: a Gaussian likelihood anchor
around each distribution's mean, the summed distance of every token to its
nearest same-token neighbour in another sequence, and a late-schedule
integerness penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BOS, BOS_TOKEN, EOS, EOS_TOKEN, DataError, EngineError, TokenSeq

DEFAULT_D_MAX = 4.0
DEFAULT_STEPS = 100
DEFAULT_STEP_SIZE = 0.1
DEFAULT_T0 = 30
DEFAULT_T1 = 80
DEFAULT_MU_FINAL = 1.0
VAR_MIN = 0.25
VAR_MAX = 4.0


@dataclass(frozen=True)
class RealignConfig:
    d_max: float = DEFAULT_D_MAX
    steps: int = DEFAULT_STEPS
    step_size: float = DEFAULT_STEP_SIZE
    t0: int = DEFAULT_T0
    t1: int = DEFAULT_T1
    mu_final: float = DEFAULT_MU_FINAL
    var_min: float = VAR_MIN
    var_max: float = VAR_MAX

    def __post_init__(self):
        if self.d_max <= 0:
            raise DataError("d_max must be positive")
        if self.steps < 1 or self.step_size <= 0:
            raise DataError("need steps >= 1 and a positive step size")
        if not 0 <= self.t0 <= self.t1 <= self.steps:
            raise DataError("schedule needs 0 <= t0 <= t1 <= steps")
        if not 0 < self.var_min <= self.var_max:
            raise DataError("variance clamp needs 0 < var_min <= var_max")

    def mu_t(self, t: int) -> float:
        """Integerness weight: zero, then quadratic ramp, then flat."""
        if t < self.t0:
            return 0.0
        if t <= self.t1:
            if self.t1 == self.t0:
                return self.mu_final
            return self.mu_final * (t - self.t0) ** 2 / (self.t1 - self.t0) ** 2
        return self.mu_final


@dataclass(frozen=True, eq=False)
class PlhLogits:
    """Per-gap count log-probabilities for N sequences padded to length L.

    ``values`` is (N, L-1, K_max+1); gap g sits between framed tokens g and
    g+1 of its sequence, so ``gap_mask[n, g]`` is set iff g < len_n - 1.
    Unmasked slices must be normalized (log-sum-exp within 1e-4 of 0).
    """

    values: np.ndarray
    gap_mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.gap_mask, dtype=bool)
        if v.ndim != 3 or m.shape != v.shape[:2]:
            raise DataError(
                f"logits must be (N, L-1, K+1) with a matching mask, got {v.shape} / {m.shape}"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gap_mask", m)
        if m.any():
            lse = _logsumexp(v[m], axis=-1)
            if np.max(np.abs(lse)) > 1e-4:
                raise DataError("gap distributions are not normalized")

    @property
    def n_seqs(self) -> int:
        return self.values.shape[0]

    @property
    def k_max(self) -> int:
        return self.values.shape[2] - 1

    @classmethod
    def from_gap_lists(
        cls,
        per_seq: Sequence[Sequence[np.ndarray]],
        seq_framed_lens: Sequence[int],
        pad_len: int | None = None,
    ) -> "PlhLogits":
        """Stack per-sequence gap arrays into one padded tensor.

        ``per_seq[n]`` holds len_n - 1 arrays of shape (K+1); padding slices
        hold a degenerate all-mass-on-zero distribution and are masked out.
        """
        if len(per_seq) != len(seq_framed_lens):
            raise DataError("one gap list per sequence required")
        big_l = pad_len if pad_len is not None else max(seq_framed_lens)
        n = len(per_seq)
        kk = None
        for gaps, ln in zip(per_seq, seq_framed_lens):
            if len(gaps) != ln - 1:
                raise DataError(f"expected {ln - 1} gap arrays, got {len(gaps)}")
            for g in gaps:
                if kk is None:
                    kk = len(g)
                elif len(g) != kk:
                    raise DataError("gap arrays disagree on K_max")
        if kk is None:
            raise DataError("cannot build logits with no gaps at all")
        values = np.full((n, big_l - 1, kk), -1e9)
        values[:, :, 0] = 0.0
        mask = np.zeros((n, big_l - 1), dtype=bool)
        for nn, (gaps, ln) in enumerate(zip(per_seq, seq_framed_lens)):
            for g, arr in enumerate(gaps):
                values[nn, g] = np.asarray(arr, dtype=float)
                mask[nn, g] = True
        return cls(values, mask)


@dataclass(frozen=True, eq=False)
class PlhPlan:
    """Integer placeholder counts per gap; padding gaps are zero."""

    counts: np.ndarray
    gap_mask: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        m = np.asarray(self.gap_mask, dtype=bool)
        if c.shape != m.shape:
            raise DataError("plan/mask shape mismatch")
        if not np.issubdtype(c.dtype, np.integer):
            raise DataError("plan counts must be integers")
        if (c < 0).any():
            raise DataError("negative placeholder count in plan")
        if c[~m].any():
            raise DataError("padding gaps must hold zero")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "gap_mask", m)

    def counts_for(self, n: int, content_len: int) -> tuple[int, ...]:
        """Gap counts for one sequence, in apply_insertion order."""
        return tuple(int(v) for v in self.counts[n, : content_len + 1])


@dataclass(frozen=True)
class RealignReport:
    loss_before: dict
    loss_after: dict
    changes: int
    p_continuous: np.ndarray = field(repr=False, compare=False, default=None)


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    hi = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(hi, axis) + np.log(np.sum(np.exp(a - hi), axis=axis))


def _framed_key(seq: TokenSeq, i: int):
    if i == 0:
        return BOS_TOKEN
    if i == len(seq.ids) - 1:
        return EOS_TOKEN
    return seq.match_key(i - 1)


def token_match_mask(seqs: Sequence[TokenSeq], pad_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(valid, match) masks over the padded framed token grid.

    ``match[n, i, m, j]`` is set iff both slots are real tokens, the
    sequences differ, and the tokens are equal (sentinels match their own
    kind; padding never matches).
    """
    n = len(seqs)
    big_l = pad_len if pad_len is not None else max(len(s.ids) for s in seqs)
    valid = np.zeros((n, big_l), dtype=bool)
    ids = np.zeros((n, big_l), dtype=np.int64)
    key_ids: dict = {}
    for nn, s in enumerate(seqs):
        if len(s.ids) > big_l:
            raise DataError("sequence longer than the padded grid")
        for i in range(len(s.ids)):
            key = _framed_key(s, i)
            kid = key_ids.setdefault(key, len(key_ids))
            ids[nn, i] = kid
            valid[nn, i] = True
    eq = ids[:, :, None, None] == ids[None, None, :, :]
    cross = ~np.eye(n, dtype=bool)[:, None, :, None]
    both = valid[:, :, None, None] & valid[None, None, :, :]
    return valid, eq & cross & both


def positions(p: np.ndarray) -> np.ndarray:
    """Absolute framed-token positions implied by gap counts.

    X[n, i] = i + sum of the counts of the gaps before token i.
    """
    n, lm1 = p.shape
    x = np.zeros((n, lm1 + 1))
    x[:, 1:] = np.cumsum(p, axis=1)
    return x + np.arange(lm1 + 1)


@dataclass(frozen=True, eq=False)
class _Prepared:
    mu: np.ndarray
    var: np.ndarray
    gap_mask: np.ndarray
    valid: np.ndarray
    match: np.ndarray
    k_max: int


def prepare(logits: PlhLogits, seqs: Sequence[TokenSeq], config: RealignConfig) -> _Prepared:
    if len(seqs) != logits.n_seqs:
        raise DataError("one sequence per logits row required")
    big_l = logits.values.shape[1] + 1
    for nn, s in enumerate(seqs):
        if len(s.ids) > big_l:
            raise DataError(f"sequence {nn} longer than the logits grid")
        expect = np.zeros(big_l - 1, dtype=bool)
        expect[: len(s.ids) - 1] = True
        if not np.array_equal(logits.gap_mask[nn], expect):
            raise DataError(f"gap mask of sequence {nn} does not match its length")
    p = np.exp(logits.values - _logsumexp(logits.values, axis=-1)[..., None])
    k = np.arange(logits.values.shape[2])
    mu = (p * k).sum(-1)
    var = (p * k * k).sum(-1) - mu * mu
    var = np.clip(var, config.var_min, config.var_max)
    valid, match = token_match_mask(seqs, pad_len=big_l)
    return _Prepared(
        mu=mu, var=var, gap_mask=logits.gap_mask, valid=valid, match=match,
        k_max=logits.k_max,
    )


def _nearest(prep: _Prepared, x: np.ndarray, d_max: float):
    """Distance to the nearest connected same-token slot, argmin frozen.

    Connections require a token match and current distance < d_max; ties in
    the argmin break toward the lowest (m, j).  Unconnected tokens get
    distance 0 and no argmin.
    """
    d = np.abs(x[:, :, None, None] - x[None, None, :, :])
    g = prep.match & (d < d_max)
    big = np.where(g, d, np.inf)
    n, big_l = x.shape
    flat = big.reshape(n, big_l, n * big_l)
    arg = flat.argmin(axis=-1)
    dmin = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    connected = np.isfinite(dmin) & prep.valid
    dist = np.where(connected, dmin, 0.0)
    return dist, arg, connected


def losses(
    p: np.ndarray,
    prep: _Prepared,
    config: RealignConfig,
    t: int,
) -> dict:
    """All three loss terms at one point; pure in ``p``."""
    mask = prep.gap_mask
    l_lik = float((((p - prep.mu) ** 2 / (2.0 * prep.var)) * mask).sum())
    x = positions(p)
    dist, _, _ = _nearest(prep, x, config.d_max)
    l_align = float(dist.sum())
    mu_t = config.mu_t(t)
    l_int = float(mu_t * ((np.sin(math.pi * p) ** 2) * mask).sum())
    return {
        "lik": l_lik,
        "align": l_align,
        "int": l_int,
        "total": l_lik + l_align + l_int,
    }


def loss_grads(
    p: np.ndarray,
    prep: _Prepared,
    config: RealignConfig,
    t: int,
) -> tuple[dict, np.ndarray]:
    """Loss terms and the subgradient w.r.t. the gap counts.

    The alignment term routes sign(X_own - X_target) into both endpoints
    with the connection graph and argmins frozen at the current point, then
    through the prefix-sum Jacobian of positions: dX[n, i]/dP[n, g] = 1 for
    g < i.
    """
    mask = prep.gap_mask
    g_lik = ((p - prep.mu) / prep.var) * mask

    x = positions(p)
    dist, arg, connected = _nearest(prep, x, config.d_max)
    n, big_l = x.shape
    gx = np.zeros_like(x)
    own_n, own_i = np.nonzero(connected)
    if own_n.size:
        tgt = arg[own_n, own_i]
        tgt_n, tgt_i = np.divmod(tgt, big_l)
        sgn = np.sign(x[own_n, own_i] - x[tgt_n, tgt_i])
        np.add.at(gx, (own_n, own_i), sgn)
        np.add.at(gx, (tgt_n, tgt_i), -sgn)
    # suffix sums: dL/dP[n, g] = sum over tokens after gap g
    sfx = np.cumsum(gx[:, ::-1], axis=1)[:, ::-1]
    g_align = sfx[:, 1:] * mask

    mu_t = config.mu_t(t)
    g_int = mu_t * math.pi * np.sin(2.0 * math.pi * p) * mask

    l_lik = float((((p - prep.mu) ** 2 / (2.0 * prep.var)) * mask).sum())
    l_align = float(dist.sum())
    l_int = float(mu_t * ((np.sin(math.pi * p) ** 2) * mask).sum())
    terms = {
        "lik": l_lik,
        "align": l_align,
        "int": l_int,
        "total": l_lik + l_align + l_int,
    }
    return terms, g_lik + g_align + g_int


def realign(
    logits: PlhLogits,
    seqs: Sequence[TokenSeq],
    config: RealignConfig = RealignConfig(),
) -> tuple[PlhPlan, RealignReport]:
    """Descend from the argmax plan and round back to integers.

    Plain subgradient steps, each followed by clamping into [0, K_max] and
    re-zeroing padded gaps; the connection graph is rebuilt every step.
    Rounding is half-up.  The report carries the loss breakdown before and
    after, and the total integer change w.r.t. the argmax plan.
    """
    prep = prepare(logits, seqs, config)
    p0 = np.argmax(logits.values, axis=-1).astype(float)
    p0[~prep.gap_mask] = 0.0
    loss_before = losses(p0, prep, config, t=0)

    p = p0.copy()
    for t in range(config.steps):
        _, grad = loss_grads(p, prep, config, t)
        p = np.clip(p - config.step_size * grad, 0.0, float(prep.k_max))
        p[~prep.gap_mask] = 0.0
        if not np.isfinite(p).all():
            raise EngineError(f"realignment diverged at step {t}")

    rounded = np.clip(np.floor(p + 0.5), 0.0, float(prep.k_max)).astype(np.int64)
    rounded[~prep.gap_mask] = 0
    loss_after = losses(rounded.astype(float), prep, config, t=config.steps)
    changes = int(np.abs(rounded - p0.astype(np.int64)).sum())
    plan = PlhPlan(counts=rounded, gap_mask=prep.gap_mask.copy())
    report = RealignReport(
        loss_before=loss_before,
        loss_after=loss_after,
        changes=changes,
        p_continuous=p,
    )
    return plan, report

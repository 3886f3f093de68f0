"""Command-line interface.

JSONL in, JSONL out; "-" means stdio.  The first output line echoes the
effective configuration as a {"_header": ...} record, which every reader
here skips.  Exit codes: 0 success, 1 usage, 2 bad data or exceeded
budgets, 3 internal error.  TMEDIT_THREADS (or --threads) sizes the
order-preserving worker pool; outputs are byte-identical regardless.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import yaml

from . import alignment, decode as decode_mod, edits as edits_mod, metrics, realign as realign_mod, rollin as rollin_mod, tm as tm_mod
from .core import (
    DEFAULT_L_MAX,
    DEFAULT_PLH_MARKER,
    DataError,
    EngineError,
    Rng,
    TokenSeq,
    Vocab,
    load_corpus,
    parse_jsonl,
)


class UsageError(Exception):
    pass


@dataclass
class EngineConfig:
    """Every tunable in one place; YAML file keys match the field names."""

    tau: float = 0.4
    n_max: int = 3
    k: int = 10
    k_max: int = 64
    l_max: int = DEFAULT_L_MAX
    seed: int = 0
    threads: int = 0  # 0: use TMEDIT_THREADS, else 1
    alpha: float = 0.3
    beta: float = 0.2
    gamma: float = 0.2
    delta: float = 0.2
    epsilon: float = 0.4
    d_max: float = 4.0
    realign_steps: int = 100
    realign_step_size: float = 0.1
    realign_t0: int = 30
    realign_t1: int = 80
    realign_mu: float = 1.0
    max_iters: int = 10
    zero_penalty: float = 3.0
    use_realign: bool = False
    char_level: bool = False
    exclude_self: bool = False
    synth_r: float = 0.8
    synth_f: float = 0.5
    plh_marker: str = DEFAULT_PLH_MARKER

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise DataError(f"tau must be in [0, 1], got {self.tau}")
        if self.n_max < 1 or self.k < 1 or self.k_max < 0 or self.l_max < 2:
            raise DataError("n_max/k must be >= 1, k_max >= 0, l_max >= 2")
        if self.threads < 0:
            raise DataError("threads must be >= 0")

    def effective_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("TMEDIT_THREADS", "")
        if env.strip():
            try:
                n = int(env)
            except ValueError as exc:
                raise DataError(f"TMEDIT_THREADS must be an integer, got {env!r}") from exc
            if n < 1:
                raise DataError("TMEDIT_THREADS must be >= 1")
            return n
        return 1

    def realign_config(self) -> realign_mod.RealignConfig:
        return realign_mod.RealignConfig(
            d_max=self.d_max,
            steps=self.realign_steps,
            step_size=self.realign_step_size,
            t0=self.realign_t0,
            t1=self.realign_t1,
            mu_final=self.realign_mu,
        )

    def rollin_config(self) -> rollin_mod.RollinConfig:
        return rollin_mod.RollinConfig(
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            delta=self.delta,
            epsilon=self.epsilon,
            n_matches=self.n_max,
            seed=self.seed,
            k=self.k,
            k_max=self.k_max,
        )

    def decode_config(self) -> decode_mod.DecodeConfig:
        return decode_mod.DecodeConfig(
            max_iters=self.max_iters,
            zero_penalty=self.zero_penalty,
            use_realign=self.use_realign,
            realign=self.realign_config(),
            k_max=self.k_max,
        )


_FIELD_NAMES = {f.name for f in dataclasses.fields(EngineConfig)}


def load_config(config_path: str | None, args: argparse.Namespace) -> EngineConfig:
    merged = dataclasses.asdict(EngineConfig.__new__(EngineConfig)) if False else {
        f.name: f.default for f in dataclasses.fields(EngineConfig)
    }
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise DataError(f"config file {config_path} must hold a mapping")
        unknown = set(data) - _FIELD_NAMES
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
    for name in _FIELD_NAMES:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    return EngineConfig(**merged)


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return sys.stdin.readlines()
    with open(path, encoding="utf-8") as fh:
        return fh.readlines()


class _Out:
    def __init__(self, path: str):
        self._own = path != "-"
        self._fh = open(path, "w", encoding="utf-8") if self._own else sys.stdout

    def emit(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, ensure_ascii=False) + "\n")

    def close(self) -> None:
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()


def _header(command: str, config: EngineConfig) -> dict:
    return {"_header": {"command": command, "config": dataclasses.asdict(config)}}


def _vocab_from_sources(*token_iters: Iterable[Sequence[str]]) -> Vocab:
    def chain():
        for it in token_iters:
            yield from it
    return Vocab.from_texts(chain())


def _tokens_of_records(lines: list[str]) -> list[list[str]]:
    out = []
    for lineno, obj in parse_jsonl(iter(lines)):
        if "tokens" in obj or "text" in obj:
            from .core import _line_tokens

            out.append(_line_tokens(obj, lineno))
        else:
            for key in ("src", "tgt", "ref"):
                val = obj.get(key)
                if isinstance(val, str):
                    out.append(val.split())
                elif isinstance(val, list):
                    out.append([t for t in val if isinstance(t, str)])
            for key in ("matches", "seqs", "states"):
                val = obj.get(key)
                if isinstance(val, list):
                    for item in val:
                        if isinstance(item, str):
                            out.append(item.split())
                        elif isinstance(item, list):
                            out.append([t for t in item if isinstance(t, str)])
                        elif isinstance(item, dict):
                            for side in ("src", "tgt"):
                                sv = item.get(side)
                                if isinstance(sv, str):
                                    out.append(sv.split())
                                elif isinstance(sv, list):
                                    out.append([t for t in sv if isinstance(t, str)])
    return out


def _load_vocab(args, *line_lists: list[str]) -> Vocab:
    if getattr(args, "vocab", None):
        return Vocab.from_file(args.vocab)
    return _vocab_from_sources(*[_tokens_of_records(ls) for ls in line_lists])


def _seq_from_value(val, vocab: Vocab, lineno: int, l_max: int) -> TokenSeq:
    if isinstance(val, str):
        toks = val.split()
    elif isinstance(val, list) and all(isinstance(t, str) for t in val):
        toks = val
    else:
        raise DataError("sequence must be a string or list of strings", line=lineno)
    if len(toks) + 2 > l_max:
        raise DataError(f"sequence length {len(toks) + 2} exceeds L_max={l_max}", line=lineno)
    try:
        return TokenSeq.from_tokens(toks, vocab)
    except DataError as exc:
        raise DataError(str(exc), line=lineno) from exc


def _load_match_lines(lines: list[str], vocab: Vocab, l_max: int) -> list[list[TokenSeq]]:
    out = []
    for lineno, obj in parse_jsonl(iter(lines)):
        if "matches" not in obj or not isinstance(obj["matches"], list):
            raise DataError('record needs a "matches" list', line=lineno)
        row = []
        for item in obj["matches"]:
            if isinstance(item, dict):
                if "tgt" not in item:
                    raise DataError('match object needs a "tgt" side', line=lineno)
                item = item["tgt"]
            row.append(_seq_from_value(item, vocab, lineno, l_max))
        out.append(row)
    return out


def ordered_map(fn: Callable, items: Sequence, threads: int) -> list:
    """Map preserving order; thread count never changes the results."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _build_filler(kind: str, vocab: Vocab, y_ref: TokenSeq | None):
    if kind == "uniform":
        return rollin_mod.UniformVocabFiller(vocab)
    if kind == "copy-ref":
        if y_ref is None:
            raise DataError("copy-ref filler needs a reference")
        return rollin_mod.CopyReferenceFiller(y_ref, vocab)
    raise DataError(f"unknown filler {kind!r}")


def cmd_build_index(args, cfg: EngineConfig) -> int:
    tm_lines = _read_lines(args.tm)
    vocab = _load_vocab(args, tm_lines)
    entries = tm_mod.load_tm(iter(tm_lines), vocab, l_max=cfg.l_max)
    index = tm_mod.build_index(entries)
    out = _Out(args.out)
    out.emit(_header("build-index", cfg))
    for e in index.entries:
        out.emit({"id": e.id, "src": e.src.tokens(vocab), "tgt": e.tgt.tokens(vocab)})
    out.close()
    return 0


def cmd_retrieve(args, cfg: EngineConfig) -> int:
    tm_lines = _read_lines(args.tm)
    q_lines = _read_lines(args.queries)
    vocab = _load_vocab(args, tm_lines, q_lines)
    entries = tm_mod.load_tm(iter(tm_lines), vocab, l_max=cfg.l_max)
    index = tm_mod.build_index(entries)
    queries = load_corpus(iter(q_lines), vocab, l_max=cfg.l_max)
    out = _Out(args.out)
    out.emit(_header("retrieve", cfg))
    for qid, q in queries:
        ms = tm_mod.retrieve(
            q, index, tau=cfg.tau, n_max=cfg.n_max,
            exclude_id=qid if cfg.exclude_self else None,
            char_level=cfg.char_level, vocab=vocab,
        )
        out.emit({
            "id": qid,
            "matches": [
                {"id": e.id, "score": s, "src": e.src.tokens(vocab), "tgt": e.tgt.tokens(vocab)}
                for e, s in zip(ms.entries, ms.scores)
            ],
        })
    out.close()
    return 0


def _zip_same_length(a: list, b: list, what: str) -> None:
    if len(a) != len(b):
        raise DataError(f"{what}: {len(a)} vs {len(b)} records")


def cmd_align(args, cfg: EngineConfig) -> int:
    m_lines = _read_lines(args.matches)
    r_lines = _read_lines(args.refs)
    vocab = _load_vocab(args, m_lines, r_lines)
    match_rows = _load_match_lines(m_lines, vocab, cfg.l_max)
    refs = load_corpus(iter(r_lines), vocab, l_max=cfg.l_max)
    _zip_same_length(match_rows, refs, "matches/refs length mismatch")
    out = _Out(args.out)
    out.emit(_header("align", cfg))
    for row, (_, ref) in zip(match_rows, refs):
        if args.oracle:
            graph = alignment.exact_nway_oracle(row, ref)
        else:
            graph = alignment.nway_align(row, ref, k=cfg.k)
        st = graph.coverage_stats()
        out.emit({
            "edges": [list(e) for e in graph.edges],
            "covered": st.covered,
            "total_edges": st.total_edges,
            "ref_len": graph.ref_len,
        })
    out.close()
    return 0


def cmd_edits(args, cfg: EngineConfig) -> int:
    m_lines = _read_lines(args.matches)
    r_lines = _read_lines(args.refs)
    vocab = _load_vocab(args, m_lines, r_lines)
    match_rows = _load_match_lines(m_lines, vocab, cfg.l_max)
    refs = load_corpus(iter(r_lines), vocab, l_max=cfg.l_max)
    _zip_same_length(match_rows, refs, "matches/refs length mismatch")
    out = _Out(args.out)
    out.emit(_header("edits", cfg))
    for row, (_, ref) in zip(match_rows, refs):
        graph = alignment.nway_align(row, ref, k=cfg.k)
        script = edits_mod.derive_edits(graph, row, ref, k_max=cfg.k_max)
        final, prov = edits_mod.replay(script, row, vocab=vocab, k_max=cfg.k_max)
        rec = script.to_json(vocab)
        rec["output"] = final.tokens(vocab)
        rec["provenance"] = [o.to_json() for o in prov.origins]
        out.emit(rec)
    out.close()
    return 0


def cmd_rollin(args, cfg: EngineConfig) -> int:
    tm_lines = _read_lines(args.tm)
    c_lines = _read_lines(args.corpus)
    vocab = _load_vocab(args, tm_lines, c_lines)
    entries = tm_mod.load_tm(iter(tm_lines), vocab, l_max=cfg.l_max)
    index = tm_mod.build_index(entries)
    bitext = tm_mod.load_tm(iter(c_lines), vocab, l_max=cfg.l_max)
    rcfg = cfg.rollin_config()
    inserter = rollin_mod.GeometricInserter(0.5, cfg.k_max)
    root = Rng(cfg.seed)

    def work(idx_entry):
        idx, pair = idx_entry
        rng = root.derive(idx)
        ms = tm_mod.retrieve(
            pair.src, index, tau=cfg.tau, n_max=cfg.n_max,
            exclude_id=pair.id if cfg.exclude_self else None,
        )
        filler = _build_filler(args.filler, vocab, pair.tgt)
        try:
            samples = rollin_mod.gen_sample(
                pair.src, ms.targets(), pair.tgt, rcfg, rng, filler, inserter,
                sample_index=idx,
            )
        except EngineError as exc:
            raise rollin_mod.RollinSampleError(idx, exc) from exc
        return [s.to_json(vocab) for s in samples]

    results = ordered_map(work, list(enumerate(bitext)), cfg.effective_threads())
    out = _Out(args.out)
    out.emit(_header("rollin", cfg))
    for recs in results:
        for rec in recs:
            out.emit(rec)
    out.close()
    return 0


def cmd_synth(args, cfg: EngineConfig) -> int:
    c_lines = _read_lines(args.corpus)
    vocab = _load_vocab(args, c_lines)
    refs = load_corpus(iter(c_lines), vocab, l_max=cfg.l_max)
    root = Rng(cfg.seed)
    out = _Out(args.out)
    out.emit(_header("synth", cfg))
    for idx, (ident, ref) in enumerate(refs):
        rng = root.derive(idx)
        filler = _build_filler(args.filler, vocab, ref)
        matches = rollin_mod.synth_matches(
            ref, cfg.n_max, cfg.synth_r, cfg.synth_f, filler, rng
        )
        out.emit({
            "id": ident,
            "ref": ref.tokens(vocab),
            "matches": [m.tokens(vocab) for m in matches],
        })
    out.close()
    return 0


def cmd_realign(args, cfg: EngineConfig) -> int:
    s_lines = _read_lines(args.seqs)
    l_lines = _read_lines(args.logits)
    vocab = _load_vocab(args, s_lines)
    seq_rows = []
    for lineno, obj in parse_jsonl(iter(s_lines)):
        if "seqs" not in obj or not isinstance(obj["seqs"], list):
            raise DataError('record needs a "seqs" list', line=lineno)
        seq_rows.append([
            _seq_from_value(v, vocab, lineno, cfg.l_max) for v in obj["seqs"]
        ])
    logit_rows = []
    for lineno, obj in parse_jsonl(iter(l_lines)):
        if "values" not in obj or not isinstance(obj["values"], list):
            raise DataError('record needs a "values" list', line=lineno)
        logit_rows.append(obj["values"])
    _zip_same_length(seq_rows, logit_rows, "seqs/logits length mismatch")
    rcfg = cfg.realign_config()
    out = _Out(args.out)
    out.emit(_header("realign", cfg))
    import numpy as np

    for seqs, values in zip(seq_rows, logit_rows):
        per_seq = [[np.asarray(g, dtype=float) for g in gaps] for gaps in values]
        framed = [len(s.ids) for s in seqs]
        logits = realign_mod.PlhLogits.from_gap_lists(per_seq, framed)
        plan, report = realign_mod.realign(logits, seqs, rcfg)
        out.emit({
            "plan": [
                list(plan.counts_for(n, s.content_len)) for n, s in enumerate(seqs)
            ],
            "changes": report.changes,
            "loss_before": report.loss_before,
            "loss_after": report.loss_after,
        })
    out.close()
    return 0


def _parse_policy(spec: str):
    if spec == "expert":
        return ("expert", None)
    if spec == "stub":
        return ("stub", None)
    if spec.startswith("noisy:"):
        try:
            p = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(f"bad noise rate in policy {spec!r}") from exc
        return ("noisy", p)
    raise UsageError(f"unknown policy {spec!r} (expert, noisy:<p>, stub)")


def cmd_decode(args, cfg: EngineConfig) -> int:
    kind, noise = _parse_policy(args.policy)
    tm_lines = _read_lines(args.tm)
    s_lines = _read_lines(args.src)
    r_lines = _read_lines(args.refs) if args.refs else []
    if kind in ("expert", "noisy") and not r_lines:
        raise UsageError(f"policy {kind} needs --refs")
    vocab = _load_vocab(args, tm_lines, s_lines, r_lines)
    entries = tm_mod.load_tm(iter(tm_lines), vocab, l_max=cfg.l_max)
    index = tm_mod.build_index(entries)
    sources = load_corpus(iter(s_lines), vocab, l_max=cfg.l_max)
    refs = load_corpus(iter(r_lines), vocab, l_max=cfg.l_max) if r_lines else None
    if refs is not None:
        _zip_same_length(sources, refs, "src/refs length mismatch")
    dcfg = cfg.decode_config()
    root = Rng(cfg.seed)

    def work(item):
        idx, (qid, src) = item
        ms = tm_mod.retrieve(
            src, index, tau=cfg.tau, n_max=cfg.n_max,
            exclude_id=qid if cfg.exclude_self else None,
        )
        if kind == "stub":
            policy = decode_mod.UniformStubPolicy(vocab, cfg.k_max)
        else:
            y_ref = refs[idx][1]
            expert = decode_mod.ExpertPolicy(y_ref, vocab, k=cfg.k, k_max=cfg.k_max)
            policy = (
                expert
                if kind == "expert"
                else decode_mod.NoisyExpertPolicy(expert, noise, root.derive(idx))
            )
        res = decode_mod.decode(src, ms.targets(), policy, dcfg)
        return {
            "id": qid,
            "output": res.output.tokens(vocab),
            "provenance": [o.to_json() for o in res.provenance.origins],
            "iterations": res.iterations,
            "converged": res.converged,
        }

    results = ordered_map(work, list(enumerate(sources)), cfg.effective_threads())
    out = _Out(args.out)
    out.emit(_header("decode", cfg))
    for rec in results:
        out.emit(rec)
    out.close()
    return 0


def cmd_stats(args, cfg: EngineConfig) -> int:
    res_lines = _read_lines(args.results)
    ref_lines = _read_lines(args.refs)
    m_lines = _read_lines(args.matches) if args.matches else None
    vocab = _load_vocab(args, res_lines, ref_lines, *( [m_lines] if m_lines else [] ))
    refs = load_corpus(iter(ref_lines), vocab, l_max=cfg.l_max)
    results = []
    for lineno, obj in parse_jsonl(iter(res_lines)):
        if "output" not in obj or "provenance" not in obj:
            raise DataError('record needs "output" and "provenance"', line=lineno)
        seq = _seq_from_value(obj["output"], vocab, lineno, cfg.l_max)
        origins = []
        for o in obj["provenance"]:
            if not isinstance(o, dict) or "origin" not in o:
                raise DataError("malformed provenance entry", line=lineno)
            if o["origin"] == "copy":
                origins.append(edits_mod.Origin("copy", n=o.get("n"), src=o.get("src")))
            elif o["origin"] == "gen":
                origins.append(edits_mod.Origin("gen"))
            else:
                raise DataError(f"unknown origin {o['origin']!r}", line=lineno)
        results.append((seq, edits_mod.Provenance(tuple(origins))))
    _zip_same_length(results, refs, "results/refs length mismatch")
    stats = metrics.origin_ngram_stats(results, [r for _, r in refs], max_order=args.max_order)
    report = {"origin_ngrams": stats.to_json()}
    if m_lines is not None:
        match_rows = _load_match_lines(m_lines, vocab, cfg.l_max)
        _zip_same_length(match_rows, refs, "matches/refs length mismatch")
        cns = [
            metrics.cover_noise(ref, row)
            for (_, ref), row in zip(refs, match_rows)
        ]
        report["cover"] = sum(c.cover for c in cns) / len(cns) if cns else 1.0
        report["noise"] = sum(c.noise for c in cns) / len(cns) if cns else 0.0
        report["per_line"] = [
            {"cover": c.cover, "noise": c.noise} for c in cns
        ]
    out = _Out(args.out)
    out.emit(_header("stats", cfg))
    out.emit(report)
    out.close()
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file; flags override it")
    p.add_argument("--vocab", help="vocab file, one token per line (ids from 5)")
    p.add_argument("--out", default="-", help="output path or - for stdout")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--n-max", type=int, default=None, dest="n_max")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None, dest="k_max")
    p.add_argument("--l-max", type=int, default=None, dest="l_max")


def build_parser() -> _Parser:
    top = _Parser(prog="tmedit", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="validate and normalize a TM file")
    _add_common(p)
    p.add_argument("--tm", required=True)
    p.set_defaults(fn=cmd_build_index)

    p = sub.add_parser("retrieve", help="fuzzy-match queries against a TM")
    _add_common(p)
    p.add_argument("--tm", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--exclude-self", action=argparse.BooleanOptionalAction, default=None, dest="exclude_self")
    p.add_argument("--char-level", action=argparse.BooleanOptionalAction, default=None, dest="char_level")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("align", help="align match sets against references")
    _add_common(p)
    p.add_argument("--matches", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--oracle", action="store_true", help="exact search instead of the heuristic")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("edits", help="derive and replay edit scripts")
    _add_common(p)
    p.add_argument("--matches", required=True)
    p.add_argument("--refs", required=True)
    p.set_defaults(fn=cmd_edits)

    p = sub.add_parser("rollin", help="emit roll-in training states for a bitext")
    _add_common(p)
    p.add_argument("--tm", required=True)
    p.add_argument("--corpus", required=True, help="bitext JSONL with src/tgt")
    p.add_argument("--filler", default="uniform", choices=("uniform", "copy-ref"))
    p.add_argument("--exclude-self", action=argparse.BooleanOptionalAction, default=None, dest="exclude_self")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(fn=cmd_rollin)

    p = sub.add_parser("synth", help="make artificial fuzzy matches for references")
    _add_common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--filler", default="uniform", choices=("uniform", "copy-ref"))
    p.add_argument("--r", type=float, default=None, dest="synth_r")
    p.add_argument("--f", type=float, default=None, dest="synth_f")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("realign", help="realign placeholder plans across sequences")
    _add_common(p)
    p.add_argument("--seqs", required=True)
    p.add_argument("--logits", required=True)
    p.add_argument("--d-max", type=float, default=None, dest="d_max")
    p.add_argument("--steps", type=int, default=None, dest="realign_steps")
    p.add_argument("--step-size", type=float, default=None, dest="realign_step_size")
    p.add_argument("--t0", type=int, default=None, dest="realign_t0")
    p.add_argument("--t1", type=int, default=None, dest="realign_t1")
    p.add_argument("--mu-final", type=float, default=None, dest="realign_mu")
    p.set_defaults(fn=cmd_realign)

    p = sub.add_parser("decode", help="simulate decoding with a policy")
    _add_common(p)
    p.add_argument("--tm", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--refs", help="reference corpus (required for expert/noisy)")
    p.add_argument("--policy", default="stub", help="expert | noisy:<p> | stub")
    p.add_argument("--realign", action=argparse.BooleanOptionalAction, default=None, dest="use_realign")
    p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p.add_argument("--penalty", type=float, default=None, dest="zero_penalty")
    p.add_argument("--exclude-self", action=argparse.BooleanOptionalAction, default=None, dest="exclude_self")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("stats", help="origin-split n-gram report for decode outputs")
    _add_common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--matches", help="optional match sets for cover/noise")
    p.add_argument("--max-order", type=int, default=2, dest="max_order")
    p.set_defaults(fn=cmd_stats)

    return top


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args)
        return args.fn(args, cfg)
    except UsageError as exc:
        print(json.dumps({"error": {"type": "usage", "message": str(exc)}}), file=sys.stderr)
        return 1
    except EngineError as exc:
        print(
            json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 2
    except Exception as exc:  # internal invariant violation
        print(
            json.dumps({"error": {"type": f"internal:{type(exc).__name__}", "message": str(exc)}}),
            file=sys.stderr,
        )
        return 3


if __name__ == "__main__":
    sys.exit(main())

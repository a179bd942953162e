"""Samples, WIKIHOP-format IO, masking and the synthetic multi-hop generator."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class DataError(ValueError):
    """Raised for malformed records or infeasible generator settings."""


def tokenize(text: str) -> list[str]:
    """Split on whitespace after separating punctuation into its own tokens.

    Source case is preserved; matching code lowercases via :func:`normalize`.
    Underscores count as word characters so ``__MASK1__`` stays one token.
    """
    return _TOKEN_RE.findall(text)


def normalize(tokens) -> tuple[str, ...]:
    return tuple(t.lower() for t in tokens)


def mask_token(k: int) -> str:
    return f"__MASK{k}__"


@dataclass(frozen=True)
class Document:
    doc_id: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise DataError(f"document {self.doc_id} has no tokens")


@dataclass(frozen=True)
class Sample:
    id: str
    query: str
    query_tokens: tuple[str, ...]
    supports: tuple[Document, ...]
    candidates: tuple[str, ...]
    answer_index: int | None = None

    def __post_init__(self):
        if not self.supports:
            raise DataError(f"{self.id}: no supporting documents")
        for pos, doc in enumerate(self.supports):
            if doc.doc_id != pos:
                raise DataError(f"{self.id}: document {pos} carries doc_id {doc.doc_id}")
        norm = [normalize(tokenize(c)) for c in self.candidates]
        if any(not n for n in norm):
            raise DataError(f"{self.id}: empty candidate")
        if len(set(norm)) != len(norm):
            raise DataError(f"{self.id}: duplicate candidates after normalization")
        if self.answer_index is not None and not 0 <= self.answer_index < len(self.candidates):
            raise DataError(f"{self.id}: answer index {self.answer_index} out of range")

    @cached_property
    def candidate_tokens(self) -> tuple[tuple[str, ...], ...]:
        """Normalized token sequence of every candidate."""
        return tuple(normalize(tokenize(c)) for c in self.candidates)

    @property
    def answer(self) -> str | None:
        return None if self.answer_index is None else self.candidates[self.answer_index]


def split_query(query: str) -> list[str]:
    relation, _, entity = query.strip().partition(" ")
    rel_tokens = [t for t in relation.split("_") if t]
    return rel_tokens + tokenize(entity)


def sample_from_record(rec: dict) -> Sample:
    rid = rec.get("id", "<missing id>") if isinstance(rec, dict) else "<non-object>"
    try:
        query = rec["query"]
        supports = rec["supports"]
        candidates = rec["candidates"]
        if not isinstance(query, str) or not isinstance(supports, list) or not isinstance(candidates, list):
            raise TypeError("query must be a string; supports and candidates must be lists")
        if not all(isinstance(s, str) for s in supports + candidates):
            raise TypeError("supports and candidates must hold strings")
        docs = tuple(Document(i, tuple(tokenize(s))) for i, s in enumerate(supports))
        answer_index = None
        if rec.get("answer") is not None:
            target = normalize(tokenize(rec["answer"]))
            matches = [i for i, c in enumerate(candidates) if normalize(tokenize(c)) == target]
            if not matches:
                raise DataError(f"answer {rec['answer']!r} is not among the candidates")
            answer_index = matches[0]
        return Sample(
            id=str(rec["id"]),
            query=query,
            query_tokens=tuple(split_query(query)),
            supports=docs,
            candidates=tuple(candidates),
            answer_index=answer_index,
        )
    except (KeyError, TypeError, DataError) as exc:
        raise DataError(f"record {rid}: {exc}") from exc


def sample_to_record(sample: Sample) -> dict:
    rec = {
        "id": sample.id,
        "query": sample.query,
        "supports": [" ".join(d.tokens) for d in sample.supports],
        "candidates": list(sample.candidates),
    }
    if sample.answer_index is not None:
        rec["answer"] = sample.answer
    return rec


def load_wikihop(path) -> list[Sample]:
    """Load a QAngaroo-style JSON array of records."""
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise DataError(f"{path}: expected a JSON array of records")
    return [sample_from_record(r) for r in records]


def dumps_wikihop(samples) -> str:
    return json.dumps([sample_to_record(s) for s in samples], indent=1, ensure_ascii=False) + "\n"


def save_wikihop(samples, path) -> None:
    Path(path).write_text(dumps_wikihop(samples), encoding="utf-8")


# --------------------------------------------------------------------------
# masking


def _mask_tokens(tokens, order, cand_tokens):
    toks = list(tokens)
    for k in order:
        pattern = cand_tokens[k]
        n = len(pattern)
        out, i = [], 0
        while i < len(toks):
            if tuple(t.lower() for t in toks[i : i + n]) == pattern:
                out.append(mask_token(k + 1))
                i += n
            else:
                out.append(toks[i])
                i += 1
        toks = out
    return tuple(toks)


def apply_mask(sample: Sample) -> Sample:
    """Replace candidate mentions with ``__MASKk__`` placeholders, longest candidate first."""
    cand_tokens = sample.candidate_tokens
    order = sorted(range(len(cand_tokens)), key=lambda k: (-len(cand_tokens[k]), k))
    docs = tuple(Document(d.doc_id, _mask_tokens(d.tokens, order, cand_tokens)) for d in sample.supports)
    return Sample(
        id=sample.id,
        query=sample.query,
        query_tokens=sample.query_tokens,
        supports=docs,
        candidates=tuple(mask_token(k + 1) for k in range(len(sample.candidates))),
        answer_index=sample.answer_index,
    )


# --------------------------------------------------------------------------
# synthetic multi-hop data

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()

# Facts whose subject is a query head are written "S rel O" so the head sits inside
# the object's +-2 context window.  Later hops are written "S , which rel O" which
# keeps the subject out of the object's window: only graph propagation links them.
FIRST_HOP = "{s} {r} {o} ."
LATER_HOP = "{s} , which {r} {o} ."


@dataclass(frozen=True)
class SyntheticConfig:
    n_entities: int = 20
    n_relations: int = 4
    n_distractor_docs: int = 2
    n_candidates: int = 5
    hops: int = 2
    n_samples: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.hops < 1:
            raise DataError("hops must be >= 1")
        if self.n_candidates < 2:
            raise DataError("n_candidates must be >= 2")
        if self.n_candidates > self.n_entities:
            raise DataError("n_candidates cannot exceed n_entities")
        if self.n_relations < self.hops + 1:
            raise DataError(f"need at least {self.hops + 1} relations for {self.hops} hops")
        if self.n_samples < 0 or self.n_distractor_docs < 0:
            raise DataError("counts must be non-negative")
        # gold chain, parallel chain and one branch entity must all be distinct
        if self.n_entities < 2 * (self.hops + 1) + 1:
            raise DataError(
                f"n_entities={self.n_entities} too small for a {self.hops}-hop chain plus distractors"
            )


def _names(rng, n, syllables, suffix="", capital=False):
    names, seen = [], set()
    while len(names) < n:
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables)) + suffix
        if word not in seen:
            seen.add(word)
            names.append(word.capitalize() if capital else word)
    return names


def _fact_text(s, r, o, first):
    return (FIRST_HOP if first else LATER_HOP).format(s=s, r=r, o=o)


@dataclass
class _Facts:
    rows: list = field(default_factory=list)  # (subject, relation, object, first_hop)

    def add(self, s, r, o, first):
        self.rows.append((s, r, o, first))


def _chain_answers(rows, head, relations):
    frontier = {head}
    for hop, rel in enumerate(relations):
        frontier = {o for s, r, o, first in rows if s in frontier and r == rel and first == (hop == 0)}
    return frontier


def _one_sample(rng, cfg: SyntheticConfig, entities, relations, index):
    k = cfg.hops
    for _ in range(100):
        rels = [relations[i] for i in rng.choice(len(relations), size=k, replace=False)]
        branch_rel = rng.choice([r for r in relations if r != rels[-1]])
        picked = [entities[i] for i in rng.choice(len(entities), size=2 * (k + 1) + 1, replace=False)]
        chain, parallel, branch = picked[: k + 1], picked[k + 1 : 2 * (k + 1)], picked[-1]

        facts = _Facts()
        for c in (chain, parallel):
            for j in range(k):
                facts.add(c[j], rels[j], c[j + 1], j == 0)
        facts.add(chain[k - 1], branch_rel, branch, k == 1)

        # candidate priority: gold, bridges, parallel chain, branch, then anything else mentioned
        pool = [chain[k]] + chain[1:k] + [parallel[k]] + parallel[1:k] + [branch]
        if len(pool) < cfg.n_candidates:
            others = [e for e in entities if e not in pool and e not in (chain[0], parallel[0])]
            extra = [others[i] for i in rng.choice(len(others), size=cfg.n_candidates - len(pool), replace=False)]
            pool += extra
        cands = pool[: cfg.n_candidates]

        protected = set(chain[:k])
        noise_subjects = [e for e in entities if e not in protected]
        noise_objects = list(cands)
        for _d in range(cfg.n_distractor_docs):
            s = noise_subjects[rng.integers(len(noise_subjects))]
            o = noise_objects[rng.integers(len(noise_objects))]
            if s == o:
                continue
            facts.add(s, relations[rng.integers(len(relations))], o, True)

        # pad with "X rel c" facts until every candidate has the same mention count, so
        # mention frequency carries no signal about the answer
        counts = {c: sum(c in (s, o) for s, _r, o, _f in facts.rows) for c in cands}
        target = max(counts.values())
        fillers = [e for e in entities if e not in cands and e not in protected]
        for c in cands:
            for _ in range(target - counts[c]):
                facts.add(fillers[rng.integers(len(fillers))], relations[rng.integers(len(relations))], c, True)

        if _chain_answers(facts.rows, chain[0], rels) != {chain[k]}:
            continue
        texts = [_fact_text(*row) for row in facts.rows]
        mentioned = {t for text in texts for t in tokenize(text)}
        if not all(c in mentioned for c in cands):
            continue
        perm = rng.permutation(len(texts))
        supports = tuple(Document(i, tuple(tokenize(texts[p]))) for i, p in enumerate(perm))
        cand_perm = [cands[i] for i in rng.permutation(len(cands))]
        query = "_".join(rels) + " " + chain[0]
        return Sample(
            id=f"synth_{cfg.seed}_{index}",
            query=query,
            query_tokens=tuple(split_query(query)),
            supports=supports,
            candidates=tuple(c.lower() for c in cand_perm),
            answer_index=cand_perm.index(chain[k]),
        )
    raise DataError("could not build a sample with a unique chain answer; loosen the configuration")


def generate_synthetic(cfg: SyntheticConfig) -> list[Sample]:
    """Deterministic ``hops``-step chain questions with a parallel-chain distractor.

    Each sample's documents state one fact each.  The query names the chain's head and
    the composed relation; the gold tail is reachable only by following every hop, while
    a second chain with the same relations but a different head yields an equally
    plausible-looking tail.
    """
    cfg.validate()
    # the vocabulary depends only on its size so datasets drawn with different seeds share it
    vocab_rng = np.random.default_rng(0)
    entities = _names(vocab_rng, cfg.n_entities, 2, capital=True)
    relations = _names(vocab_rng, cfg.n_relations, 2, suffix="ed")
    rng = np.random.default_rng(cfg.seed)
    return [_one_sample(rng, cfg, entities, relations, i) for i in range(cfg.n_samples)]

"""Entity graph over candidate mentions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .data import Document, Sample


class Relation(IntEnum):
    WITHIN_DOC = 0
    CROSS_DOC = 1


RELATION_NAMES = {Relation.WITHIN_DOC: "within", Relation.CROSS_DOC: "cross"}
_NAME_TO_RELATION = {v: k for k, v in RELATION_NAMES.items()}


@dataclass(frozen=True, order=True)
class Mention:
    candidate_index: int
    doc_index: int
    start: int
    end: int

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


@dataclass(frozen=True)
class EntityGraph:
    nodes: tuple[Mention, ...]
    edges: tuple[tuple[int, int, Relation], ...]

    def __post_init__(self):
        for i, j, rel in self.edges:
            if not 0 <= i < j < len(self.nodes):
                raise ValueError(f"bad edge ({i}, {j}, {rel})")

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def __len__(self):
        return len(self.nodes)

    def neighbors(self, relation: Relation) -> list[list[int]]:
        """Per-node neighbor lists for one relation, both directions."""
        out = [[] for _ in self.nodes]
        for i, j, rel in self.edges:
            if rel == relation:
                out[i].append(j)
                out[j].append(i)
        return out

    def adjacency(self):
        """Dense ``(2, T, T)`` 0/1 array, symmetric per relation."""
        adj = np.zeros((len(Relation), len(self.nodes), len(self.nodes)))
        for i, j, rel in self.edges:
            adj[rel, i, j] = adj[rel, j, i] = 1.0
        return adj

    def to_json(self) -> dict:
        return {
            "nodes": [{"cand": m.candidate_index, "doc": m.doc_index, "start": m.start, "end": m.end} for m in self.nodes],
            "edges": [[i, j, RELATION_NAMES[r]] for i, j, r in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EntityGraph":
        nodes = tuple(Mention(n["cand"], n["doc"], n["start"], n["end"]) for n in obj["nodes"])
        edges = tuple((int(i), int(j), _NAME_TO_RELATION[r]) for i, j, r in obj["edges"])
        return cls(nodes, edges)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def find_mentions(doc: Document, candidates) -> list[Mention]:
    """All token-span occurrences of each normalized candidate in ``doc``.

    Different candidates may overlap; one candidate's occurrences are taken
    left to right without overlap.
    """
    toks = [t.lower() for t in doc.tokens]
    found = []
    for k, cand in enumerate(candidates):
        n = len(cand)
        if n == 0:
            continue
        i = 0
        while i + n <= len(toks):
            if tuple(toks[i : i + n]) == tuple(cand):
                found.append(Mention(k, doc.doc_id, i, i + n))
                i += n
            else:
                i += 1
    found.sort(key=lambda m: (m.start, m.candidate_index))
    return found


def build_graph(sample: Sample, node_cap: int = 500) -> EntityGraph:
    if node_cap < 1:
        raise ValueError("node_cap must be >= 1")
    nodes = []
    for doc in sample.supports:
        nodes.extend(find_mentions(doc, sample.candidate_tokens))
    nodes = nodes[:node_cap]

    by_doc: dict[int, list[int]] = {}
    by_cand: dict[int, list[int]] = {}
    for idx, m in enumerate(nodes):
        by_doc.setdefault(m.doc_index, []).append(idx)
        by_cand.setdefault(m.candidate_index, []).append(idx)

    edges = []
    for members in by_doc.values():
        for a, i in enumerate(members):
            for j in members[a + 1 :]:
                edges.append((i, j, Relation.WITHIN_DOC))
    for members in by_cand.values():
        for a, i in enumerate(members):
            for j in members[a + 1 :]:
                if nodes[i].doc_index != nodes[j].doc_index:
                    edges.append((i, j, Relation.CROSS_DOC))
    edges.sort()
    return EntityGraph(tuple(nodes), tuple(edges))

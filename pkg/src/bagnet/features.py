"""Multi-level node and query features.

Fixed (non-learned) inputs come from providers: token embeddings, contextual
embeddings and NER/POS tags.  The learned part is the node encoder (mean over the
span, one linear layer, tanh), the two-layer BiLSTM query encoder and the two tag
embedding tables, which nodes and queries share.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from torch import nn

from .config import FeatureConfig, ModelConfig
from .data import Document, Sample
from .graph import EntityGraph, build_graph


class FeatureError(RuntimeError):
    pass


def _seeded_rng(seed: int, *parts) -> np.random.Generator:
    key = "\x1f".join([str(seed), *map(str, parts)]).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


# --------------------------------------------------------------------------
# token-level embeddings


class HashEmbedding:
    """Unit-norm pseudo-random vector per (lowercased) token."""

    source = "hash-deterministic"

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._vec = lru_cache(maxsize=None)(self._compute)

    def _compute(self, token: str) -> np.ndarray:
        v = _seeded_rng(self.seed, "tok", token).standard_normal(self.dim)
        v /= np.linalg.norm(v)
        v.flags.writeable = False
        return v

    def vector(self, token: str) -> np.ndarray:
        return self._vec(token.lower())


class FileEmbedding:
    """word2vec text format: ``token v1 ... vdim`` per line. Unknown tokens map to zeros."""

    source = "file-backed"

    def __init__(self, path):
        self.table: dict[str, np.ndarray] = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    parts = line.rstrip().split(" ")
                    if len(parts) == 2 and lineno == 1:
                        continue  # word2vec "count dim" header
                    if len(parts) < 2:
                        continue
                    self.table[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            raise FeatureError(f"cannot read embedding file {path}: {exc}") from exc
        dims = {v.shape[0] for v in self.table.values()}
        if len(dims) != 1:
            raise FeatureError(f"embedding file {path}: inconsistent or missing vectors")
        self.dim = dims.pop()
        self._zero = np.zeros(self.dim)

    def vector(self, token: str) -> np.ndarray:
        v = self.table.get(token)
        if v is None:
            v = self.table.get(token.lower(), self._zero)
        return v


def embed_tokens(tokens, provider) -> np.ndarray:
    if not len(tokens):
        return np.zeros((0, provider.dim))
    return np.stack([provider.vector(t) for t in tokens])


# --------------------------------------------------------------------------
# contextual embeddings


class HashWindowContext:
    """Contextual stand-in: each token mixes its +-``window`` neighbours.

    ``v_i = normalize(sum_o R_o e(tok_{i+o}))`` over in-document offsets ``o``, with
    ``e`` a :class:`HashEmbedding` and ``R_o`` a seeded random orthogonal matrix per
    offset, so a neighbour's identity is linearly recoverable from the mix.
    """

    source = "hash-window"

    def __init__(self, dim: int, seed: int = 0, window: int = 2):
        self.dim = dim
        self.window = window
        self.base = HashEmbedding(dim, seed)
        self.rotations = {}
        for o in range(-window, window + 1):
            q, r = np.linalg.qr(_seeded_rng(seed, "offset", o).standard_normal((dim, dim)))
            self.rotations[o] = q * np.sign(np.diag(r))

    def embed(self, doc: Document, sample_id: str | None = None) -> np.ndarray:
        base = embed_tokens(doc.tokens, self.base)
        n = len(doc.tokens)
        out = np.zeros((n, self.dim))
        for o, rot in self.rotations.items():
            lo, hi = max(0, -o), min(n, n - o)
            if lo < hi:
                out[lo:hi] += base[lo + o : hi + o] @ rot.T
        out /= np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-12)
        return out


class FileContext:
    """JSON-lines ``{doc_id, vectors, [sample_id]}`` of precomputed contextual vectors."""

    source = "file-backed"

    def __init__(self, path):
        self.table: dict = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    self.table[(obj.get("sample_id"), int(obj["doc_id"]))] = np.asarray(obj["vectors"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise FeatureError(f"cannot read contextual file {path}: {exc}") from exc
        if not self.table:
            raise FeatureError(f"contextual file {path} is empty")
        self.dim = next(iter(self.table.values())).shape[1]

    def embed(self, doc: Document, sample_id: str | None = None) -> np.ndarray:
        vec = self.table.get((sample_id, doc.doc_id))
        if vec is None:
            vec = self.table.get((None, doc.doc_id))
        if vec is None:
            raise FeatureError(f"no contextual vectors for document {doc.doc_id} (sample {sample_id})")
        if vec.shape[0] != len(doc.tokens):
            raise FeatureError(f"document {doc.doc_id}: {vec.shape[0]} vectors for {len(doc.tokens)} tokens")
        return vec


def contextual_embed(doc: Document, provider, sample_id: str | None = None) -> np.ndarray:
    return provider.embed(doc, sample_id)


# --------------------------------------------------------------------------
# tags

FUNCTION_WORDS = frozenset(
    """a an the and or but nor of in on at to from by for with without as into onto
    is are was were be been being has have had do does did which who whom whose that
    this these those it its he she they them his her their we our you your i me my
    not no so than then there here if while""".split()
)

NER_TAGS = ("<pad>", "<unk>", "O", "ENT", "NUM")
POS_TAGS = ("<pad>", "<unk>", "NOUN", "VERB", "ADV", "FUNC", "NUM")


def tag_tokens(tokens) -> tuple[list[str], list[str]]:
    """Rule-based NER/POS stand-in."""
    ner, pos = [], []
    for tok in tokens:
        has_digit = any(ch.isdigit() for ch in tok)
        low = tok.lower()
        if has_digit:
            ner.append("NUM")
        elif tok.isalpha() and tok[0].isupper():
            ner.append("ENT")
        else:
            ner.append("O")
        if has_digit:
            pos.append("NUM")
        elif low in FUNCTION_WORDS:
            pos.append("FUNC")
        elif low.endswith("ly"):
            pos.append("ADV")
        elif low.endswith(("ed", "ing")):
            pos.append("VERB")
        else:
            pos.append("NOUN")
    return ner, pos


class StubTagger:
    source = "stub"

    def tags(self, doc: Document, sample_id: str | None = None):
        return tag_tokens(doc.tokens)


class FileTagger:
    source = "file-backed"

    def __init__(self, path):
        self.table: dict = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        self.table[(obj.get("sample_id"), int(obj["doc_id"]))] = (list(obj["ner"]), list(obj["pos"]))
        except (OSError, ValueError, KeyError) as exc:
            raise FeatureError(f"cannot read tag file {path}: {exc}") from exc

    def tags(self, doc: Document, sample_id: str | None = None):
        found = self.table.get((sample_id, doc.doc_id)) or self.table.get((None, doc.doc_id))
        if found is None:
            return tag_tokens(doc.tokens)
        return found


def tag_ids(tags, vocab) -> np.ndarray:
    index = {t: i for i, t in enumerate(vocab)}
    return np.asarray([index.get(t, 1) for t in tags], dtype=np.int64)


# --------------------------------------------------------------------------
# featurization


@dataclass
class SampleFeatures:
    """Fixed per-sample inputs, ready for batching."""

    sample_id: str
    graph: EntityGraph
    node_input: np.ndarray  # (T, token_dim [+ ctx_dim]) span means
    node_ner: np.ndarray
    node_pos: np.ndarray
    adjacency: np.ndarray  # (2, T, T)
    node_candidate: np.ndarray
    query_input: np.ndarray  # (M, token_dim)
    query_ner: np.ndarray
    query_pos: np.ndarray
    n_candidates: int
    gold: int | None

    @property
    def answerable(self) -> bool:
        return self.gold is not None and bool(np.any(self.node_candidate == self.gold))


class Featurizer:
    def __init__(self, model: ModelConfig, features: FeatureConfig, node_cap=500, query_cap=25):
        self.model = model
        self.node_cap = node_cap
        self.query_cap = query_cap
        seed = features.feature_seed
        if features.embeddings == "hash":
            self.tokens = HashEmbedding(model.token_dim, seed)
        else:
            self.tokens = FileEmbedding(features.embeddings)
        if features.contextual == "hash-window":
            self.context = HashWindowContext(model.ctx_dim, seed)
        else:
            self.context = FileContext(features.contextual)
        self.tagger = StubTagger() if features.tags == "stub" else FileTagger(features.tags)
        if self.tokens.dim != model.token_dim:
            raise FeatureError(f"token embeddings have dim {self.tokens.dim}, config says {model.token_dim}")
        if self.context.dim != model.ctx_dim:
            raise FeatureError(f"contextual vectors have dim {self.context.dim}, config says {model.ctx_dim}")

    def __call__(self, sample: Sample, graph: EntityGraph | None = None) -> SampleFeatures:
        if graph is None:
            graph = build_graph(sample, self.node_cap)
        use_ctx = self.model.use_ctx
        width = self.model.node_input_dim
        per_doc = {}
        node_input = np.zeros((len(graph), width))
        node_ner = np.zeros(len(graph), dtype=np.int64)
        node_pos = np.zeros(len(graph), dtype=np.int64)
        for t, m in enumerate(graph.nodes):
            if m.doc_index not in per_doc:
                doc = sample.supports[m.doc_index]
                mats = [embed_tokens(doc.tokens, self.tokens)]
                if use_ctx:
                    mats.append(contextual_embed(doc, self.context, sample.id))
                ner, pos = self.tagger.tags(doc, sample.id)
                per_doc[m.doc_index] = (np.concatenate(mats, axis=1), tag_ids(ner, NER_TAGS), tag_ids(pos, POS_TAGS))
            rows, ner_ids, pos_ids = per_doc[m.doc_index]
            if not 0 <= m.start < m.end <= rows.shape[0]:
                raise FeatureError(f"{sample.id}: span {m.span} outside document {m.doc_index}")
            node_input[t] = rows[m.start : m.end].mean(axis=0)
            node_ner[t] = ner_ids[m.start]
            node_pos[t] = pos_ids[m.start]

        q_tokens = list(sample.query_tokens[: self.query_cap])
        if not q_tokens:
            raise FeatureError(f"{sample.id}: empty query")
        q_ner, q_pos = tag_tokens(q_tokens)
        return SampleFeatures(
            sample_id=sample.id,
            graph=graph,
            node_input=node_input,
            node_ner=node_ner,
            node_pos=node_pos,
            adjacency=graph.adjacency(),
            node_candidate=np.asarray([m.candidate_index for m in graph.nodes], dtype=np.int64),
            query_input=embed_tokens(q_tokens, self.tokens),
            query_ner=tag_ids(q_ner, NER_TAGS),
            query_pos=tag_ids(q_pos, POS_TAGS),
            n_candidates=len(sample.candidates),
            gold=sample.answer_index,
        )


# --------------------------------------------------------------------------
# learned encoders


def glorot(shape, generator: torch.Generator) -> torch.Tensor:
    fan_out, fan_in = shape[0], shape[-1]
    bound = (6.0 / (fan_in + fan_out)) ** 0.5
    return (torch.rand(shape, generator=generator, dtype=torch.float64) * 2 - 1) * bound


def encode_nodes(node_input, ner_ids, pos_ids, weight, bias, tags=None):
    """``tanh(W mean + b)`` followed by the first-token NER and POS embeddings."""
    enc = torch.tanh(node_input @ weight.T + bias)
    if tags is None:
        return enc
    return torch.cat([enc, tags.ner[ner_ids], tags.pos[pos_ids]], dim=-1)


def lstm_direction(x, w_ih, w_hh, b):
    """One LSTM pass over ``x`` of shape (B, M, in); gate order i, f, g, o."""
    batch, steps, _ = x.shape
    hidden = w_hh.shape[1]
    h = x.new_zeros(batch, hidden)
    c = x.new_zeros(batch, hidden)
    pre = x @ w_ih.T + b
    outs = []
    for t in range(steps):
        gates = pre[:, t] + h @ w_hh.T
        i, f, g, o = gates.split(hidden, dim=-1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        outs.append(h)
    return torch.stack(outs, dim=1)


def reverse_padded(x, lengths):
    """Reverse each sequence's first ``lengths[b]`` steps, leaving padding in place."""
    steps = x.shape[1]
    ar = torch.arange(steps).unsqueeze(0)
    lens = lengths.unsqueeze(1)
    idx = torch.where(ar < lens, lens - 1 - ar, ar)
    return x.gather(1, idx.unsqueeze(-1).expand_as(x))


class TagEmbeddings(nn.Module):
    def __init__(self, d_ner, d_pos, gen):
        super().__init__()
        self.ner = nn.Parameter(glorot((len(NER_TAGS), d_ner), gen))
        self.pos = nn.Parameter(glorot((len(POS_TAGS), d_pos), gen))


class NodeEncoder(nn.Module):
    def __init__(self, in_dim, out_dim, gen):
        super().__init__()
        self.weight = nn.Parameter(glorot((out_dim, in_dim), gen))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=torch.float64))

    def forward(self, node_input, ner_ids, pos_ids, tags=None):
        return encode_nodes(node_input, ner_ids, pos_ids, self.weight, self.bias, tags)


class BiLSTM(nn.Module):
    """Stacked bidirectional LSTM; each layer emits [forward; backward]."""

    def __init__(self, in_dim, hidden, layers, gen, forget_bias=1.0):
        super().__init__()
        self.hidden = hidden
        self.cells = nn.ParameterList()
        for layer in range(layers):
            width = in_dim if layer == 0 else 2 * hidden
            for _direction in range(2):
                b = torch.zeros(4 * hidden, dtype=torch.float64)
                b[hidden : 2 * hidden] = forget_bias
                self.cells.append(nn.Parameter(glorot((4 * hidden, width), gen)))
                self.cells.append(nn.Parameter(glorot((4 * hidden, hidden), gen)))
                self.cells.append(nn.Parameter(b))

    @property
    def layers(self):
        return len(self.cells) // 6

    def forward(self, x, lengths):
        out = x
        for layer in range(self.layers):
            fw = self.cells[6 * layer : 6 * layer + 3]
            bw = self.cells[6 * layer + 3 : 6 * layer + 6]
            fwd = lstm_direction(out, *fw)
            bwd = reverse_padded(lstm_direction(reverse_padded(out, lengths), *bw), lengths)
            out = torch.cat([fwd, bwd], dim=-1)
        return out


class QueryEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        self.lstm = BiLSTM(cfg.token_dim, cfg.lstm_hidden, cfg.lstm_layers, gen)

    def forward(self, query_input, lengths, ner_ids, pos_ids, tags=None):
        enc = self.lstm(query_input, lengths)
        if tags is None:
            return enc
        return torch.cat([enc, tags.ner[ner_ids], tags.pos[pos_ids]], dim=-1)


def encode_query(query_input, lengths, ner_ids, pos_ids, encoder: QueryEncoder, tags=None):
    if query_input.shape[1] == 0:
        raise FeatureError("empty query")
    return encoder(query_input, lengths, ner_ids, pos_ids, tags)

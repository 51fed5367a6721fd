"""Retrieval metrics: cosine kNN, dictionary-induction precision@k and
terminology accuracy@1.

Mapping models plug in through ``retrieval_maps(direction)``, which
returns ``(query_fn, candidate_fn)``: the transform applied to the query
side and to the candidate side before cosine ranking. ``None`` as a model
means both are the identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .vecstore import AnchorDataset, ContextCorpus, EmbeddingTable, concat_layers, l2_normalize

log = logging.getLogger(__name__)

DIRECTIONS = ("a_to_b", "b_to_a")
INDUCTION_KS = (1, 5, 10)


class MissingTermError(KeyError):
    pass


@dataclass
class EvalReport:
    metric: str
    direction: str
    value: float
    values: dict[tuple[str, str], float] = field(default_factory=dict)
    per_query: list[tuple[str, str, list[str]]] | None = None
    missing: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"{m}\t{d}\t{v:.10g}" for (m, d), v in self.values.items()]
        if (self.metric, self.direction) not in self.values:
            lines.append(f"{self.metric}\t{self.direction}\t{self.value:.10g}")
        return "\n".join(lines) + "\n"

    def per_query_tsv(self) -> str:
        rows = ["query\tgold\tretrieved"]
        rows += [f"{q}\t{g}\t{' '.join(r)}" for q, g, r in self.per_query or []]
        return "\n".join(rows) + "\n"


def _identity(x: np.ndarray) -> np.ndarray:
    return x


def retrieval_maps(model, direction: str) -> tuple[Callable, Callable]:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    if model is None:
        return _identity, _identity
    return model.retrieval_maps(direction)


# ---------------------------------------------------------------------------
# kNN
# ---------------------------------------------------------------------------

def cosine_similarities(queries: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; any zero-norm row scores 0 against everything."""
    q = l2_normalize(np.atleast_2d(queries))
    c = l2_normalize(np.atleast_2d(candidates))
    return q @ c.T


def topk_indices(queries: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k most similar candidates per query; ties keep candidate order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    sims = cosine_similarities(queries, candidates)
    return np.argsort(-sims, axis=1, kind="stable")[:, :k]


def knn_cosine(query: np.ndarray, candidates: EmbeddingTable, k: int) -> list[str]:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (candidates.dim,):
        raise ValueError(f"query dim {query.shape} does not match table dim {candidates.dim}")
    idx = topk_indices(query[None, :], candidates.vectors, min(k, len(candidates)))[0]
    return [candidates.tokens[i] for i in idx]


@dataclass
class PrecisionResult:
    value: float
    hits: int
    total: int
    missing: list[str]
    retrieved: list[list[str]]


def precision_details(mapped_queries: Sequence[tuple[np.ndarray, str]], candidates: EmbeddingTable, k: int) -> PrecisionResult:
    keep = [(v, g) for v, g in mapped_queries if g in candidates]
    missing = [g for _, g in mapped_queries if g not in candidates]
    if missing:
        log.warning("%d queries have gold tokens absent from the candidates and were skipped", len(missing))
    if not keep:
        return PrecisionResult(0.0, 0, 0, missing, [])
    Q = np.array([v for v, _ in keep], dtype=np.float64)
    idx = topk_indices(Q, candidates.vectors, min(k, len(candidates)))
    gold = np.array([candidates.index(g) for _, g in keep])
    hits = int(np.sum(np.any(idx == gold[:, None], axis=1)))
    retrieved = [[candidates.tokens[j] for j in row] for row in idx]
    return PrecisionResult(hits / len(keep), hits, len(keep), missing, retrieved)


def precision_at_k(mapped_queries: Sequence[tuple[np.ndarray, str]], candidates: EmbeddingTable, k: int) -> float:
    """Fraction of queries whose gold token is among the k nearest candidates."""
    return precision_details(mapped_queries, candidates, k).value


# ---------------------------------------------------------------------------
# Dictionary induction
# ---------------------------------------------------------------------------

def induction_vocab(lemmas: Sequence[str], vectors: np.ndarray) -> EmbeddingTable:
    """Unique lemmas (first-seen order) with vectors averaged over occurrences."""
    order: dict[str, int] = {}
    for lem in lemmas:
        order.setdefault(lem, len(order))
    inv = np.array([order[lem] for lem in lemmas], dtype=np.int64)
    sums = np.zeros((len(order), vectors.shape[1]))
    np.add.at(sums, inv, vectors)
    counts = np.bincount(inv, minlength=len(order)).astype(np.float64)
    return EmbeddingTable(list(order), sums / counts[:, None])


def induction_score(model, eval_ds: AnchorDataset, ks: Sequence[int] = INDUCTION_KS,
                    keep_queries: bool = False) -> EvalReport:
    """Average of precision@k over ``ks`` in both directions on ``eval_ds``."""
    if len(eval_ds) == 0:
        raise ValueError("induction_score needs a non-empty evaluation dataset")
    values: dict[tuple[str, str], float] = {}
    per_query = [] if keep_queries else None
    kmax = max(ks)
    for direction in DIRECTIONS:
        qf, cf = retrieval_maps(model, direction)
        if direction == "a_to_b":
            q_vecs, q_lem, c_lem, c_vecs = eval_ds.vecs_a, eval_ds.lemmas_a, eval_ds.lemmas_b, eval_ds.vecs_b
        else:
            q_vecs, q_lem, c_lem, c_vecs = eval_ds.vecs_b, eval_ds.lemmas_b, eval_ds.lemmas_a, eval_ds.vecs_a
        vocab = induction_vocab(c_lem, c_vecs)
        cands = EmbeddingTable(vocab.tokens, cf(vocab.vectors))
        mapped = qf(q_vecs)
        queries = list(zip(mapped, c_lem))
        top = precision_details(queries, cands, kmax)
        gold_idx = np.array([cands.index(g) for g in c_lem])
        tok_idx = np.array([[cands.index(t) for t in row] for row in top.retrieved])
        for k in ks:
            hit = np.any(tok_idx[:, :k] == gold_idx[:, None], axis=1)
            values[(f"precision_at_{k}", direction)] = float(hit.mean())
        if per_query is not None:
            per_query += [(f"{direction}:{q}", g, r) for q, g, r in zip(q_lem, c_lem, top.retrieved)]
    avg = float(np.mean(list(values.values())))
    values[("induction_avg", "both")] = avg
    return EvalReport("induction_avg", "both", avg, values, per_query)


# ---------------------------------------------------------------------------
# Terminology alignment
# ---------------------------------------------------------------------------

@dataclass
class TermEntry:
    term: str
    vector: np.ndarray | None = None

    def __post_init__(self):
        if not self.term.strip():
            raise ValueError("term must be non-empty")

    @property
    def words(self) -> list[str]:
        return self.term.split()


class TermIndex:
    """Surface-form index over a corpus, using concatenated layer vectors."""

    def __init__(self, corpus: ContextCorpus, static_table: EmbeddingTable | None = None):
        self.corpus = corpus
        self.static_table = static_table
        self._sums: dict[str, np.ndarray] = {}
        self._counts: dict[str, int] = {}
        self._seqs = []
        for ctx in corpus.contexts:
            surfaces = [t.surface for t in ctx.tokens]
            vecs = np.array([concat_layers(t) for t in ctx.tokens])
            self._seqs.append((surfaces, vecs))
            for s, v in zip(surfaces, vecs):
                if s in self._sums:
                    self._sums[s] = self._sums[s] + v
                    self._counts[s] += 1
                else:
                    self._sums[s] = v.copy()
                    self._counts[s] = 1

    def word_vector(self, word: str) -> np.ndarray:
        if word in self._counts:
            return self._sums[word] / self._counts[word]
        if self.static_table is not None and word in self.static_table:
            return np.array(self.static_table[word], dtype=np.float64)
        raise MissingTermError(f"word {word!r} occurs neither in the corpus nor in the static table")

    def occurrences(self, words: Sequence[str]) -> list[np.ndarray]:
        """Per-occurrence mean vectors of a contiguous surface sequence."""
        n = len(words)
        out = []
        for surfaces, vecs in self._seqs:
            for i in range(len(surfaces) - n + 1):
                if surfaces[i:i + n] == list(words):
                    out.append(vecs[i:i + n].mean(axis=0))
        return out


def term_vector(term: TermEntry | str, corpus: ContextCorpus | TermIndex,
                static_table: EmbeddingTable | None = None) -> np.ndarray:
    """Vector for a (possibly multi-word) term.

    Corpus occurrences are averaged; a multi-word term that never occurs
    contiguously falls back to the mean of its words' average vectors.
    """
    if isinstance(term, str):
        term = TermEntry(term)
    index = corpus if isinstance(corpus, TermIndex) else TermIndex(corpus, static_table)
    words = term.words
    if len(words) == 1:
        return index.word_vector(words[0])
    occ = index.occurrences(words)
    if occ:
        return np.mean(occ, axis=0)
    try:
        return np.mean([index.word_vector(w) for w in words], axis=0)
    except MissingTermError as e:
        raise MissingTermError(f"term {term.term!r} has no coverage: {e}") from None


def _term_matrix(terms) -> np.ndarray:
    if isinstance(terms, np.ndarray):
        return np.asarray(terms, dtype=np.float64)
    rows = []
    for t in terms:
        if isinstance(t, TermEntry):
            if t.vector is None:
                raise ValueError(f"term {t.term!r} has no vector; compute it with term_vector first")
            rows.append(t.vector)
        else:
            rows.append(t)
    return np.array(rows, dtype=np.float64)


def terminology_accuracy(src_terms, trg_terms, mapper=None, direction: str = "both") -> EvalReport:
    """accuracy@1 over gold-aligned term lists (``src[i]`` translates to ``trg[i]``).

    For ``direction="both"`` the headline value is the mean of the two
    directional accuracies.
    """
    S = _term_matrix(src_terms)
    T = _term_matrix(trg_terms)
    if len(S) == 0 or len(T) == 0:
        raise ValueError("terminology_accuracy needs non-empty term lists")
    if len(S) != len(T):
        raise ValueError("source and target term lists must be aligned pairwise")
    dirs = DIRECTIONS if direction == "both" else (direction,)
    values = {}
    for d in dirs:
        qf, cf = retrieval_maps(mapper, d)
        q, c = (S, T) if d == "a_to_b" else (T, S)
        nearest = topk_indices(qf(q), cf(c), 1)[:, 0]
        values[("accuracy_at_1", d)] = float(np.mean(nearest == np.arange(len(q))))
    head = float(np.mean(list(values.values())))
    if direction == "both":
        values[("accuracy_at_1", "both")] = head
    return EvalReport("accuracy_at_1", direction, head, values)


class LayerwiseMapper:
    """Apply one model per layer slice of concatenated layer vectors."""

    def __init__(self, models: Sequence, dims: Sequence[int]):
        if len(models) != len(dims):
            raise ValueError("need one model per layer slice")
        self.models = list(models)
        self.bounds = np.cumsum([0, *dims])

    def retrieval_maps(self, direction: str):
        maps = [retrieval_maps(m, direction) for m in self.models]

        def side(which):
            def f(X):
                X = np.atleast_2d(X)
                if X.shape[1] != self.bounds[-1]:
                    raise ValueError(f"vector dim {X.shape[1]} != total layer dim {self.bounds[-1]}")
                parts = [maps[i][which](X[:, self.bounds[i]:self.bounds[i + 1]]) for i in range(len(maps))]
                return np.hstack(parts)
            return f

        return side(0), side(1)

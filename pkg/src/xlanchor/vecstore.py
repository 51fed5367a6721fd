"""Text formats for embedding tables, contextual corpora, anchor datasets
and bilingual dictionaries.

All vectors are written with 9 significant digits and re-quantised to
float32 on load, so ``load(save(x)) == x`` for anything that was itself
loaded (or is float32-representable). Any structural problem is a
:class:`FormatError` carrying the file name and line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

CORPUS_MAGIC = "XLANCHOR-CTX"
PAIRS_MAGIC = "XLANCHOR-PAIRS"
DICT_MAGIC = "xlanchor-dict"
FORMAT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def _check_token(tok: str, what: str = "token") -> None:
    if not tok or any(c.isspace() for c in tok):
        raise ValueError(f"{what} {tok!r} is empty or contains whitespace")


def quantize(v) -> np.ndarray:
    """Round to the nearest float32, returned as float64."""
    return np.asarray(v, dtype=np.float64).astype(np.float32).astype(np.float64)


def format_vector(v: np.ndarray) -> str:
    """Nine significant digits of the float32 rounding, enough to recover it exactly."""
    return " ".join(f"{x:.9g}" for x in quantize(v).tolist())


def _parse_floats(text: str, n: int, path, line: int, what: str = "vector") -> np.ndarray:
    parts = text.split(" ")
    if len(parts) != n:
        raise FormatError(path, line, f"{what} has {len(parts)} values, expected {n}")
    try:
        v = np.array([float(p) for p in parts])
    except ValueError as e:
        raise FormatError(path, line, f"non-numeric {what} field: {e}") from None
    if not np.all(np.isfinite(v)):
        raise FormatError(path, line, f"non-finite value in {what}")
    return quantize(v)


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8", newline="\n") as f:
        text = f.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _write_text(path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")


# ---------------------------------------------------------------------------
# Static embedding tables
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    tokens: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(len(self.tokens), -1)
        self._index = {}
        for i, t in enumerate(self.tokens):
            _check_token(t)
            if t in self._index:
                raise ValueError(f"duplicate token {t!r}")
            self._index[t] = i

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self._index[token]]

    def __eq__(self, other) -> bool:
        return (isinstance(other, EmbeddingTable) and self.tokens == other.tokens
                and self.vectors.shape == other.vectors.shape and np.array_equal(self.vectors, other.vectors))


def load_embeddings(path) -> EmbeddingTable:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(path, 1, "missing 'N D' header")
    head = lines[0].split(" ")
    try:
        n, dim = int(head[0]), int(head[1])
        if len(head) != 2 or n < 0 or dim < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise FormatError(path, 1, f"malformed header {lines[0]!r}") from None
    if len(lines) - 1 != n:
        raise FormatError(path, len(lines), f"header announces {n} entries, file has {len(lines) - 1}")
    tokens, vecs, seen = [], np.zeros((n, dim)), set()
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        tok, _, rest = line.partition(" ")
        if not tok:
            raise FormatError(path, lineno, "empty token")
        if "\t" in tok:
            raise FormatError(path, lineno, "token contains a tab")
        if tok in seen:
            raise FormatError(path, lineno, f"duplicate token {tok!r}")
        seen.add(tok)
        tokens.append(tok)
        vecs[i] = _parse_floats(rest, dim, path, lineno)
    return EmbeddingTable(tokens, vecs)


def save_embeddings(table: EmbeddingTable, path) -> None:
    lines = [f"{len(table)} {table.dim}"]
    lines += [f"{t} {format_vector(v)}" for t, v in zip(table.tokens, table.vectors)]
    _write_text(path, lines)


# ---------------------------------------------------------------------------
# Contextual corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayeredTokenEmbedding:
    surface: str
    lemma: str
    layer_vecs: tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class Context:
    context_id: int
    tokens: list[LayeredTokenEmbedding]


@dataclass
class ContextCorpus:
    dims: tuple[int, int, int]
    contexts: list[Context] = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        prev = None
        for ctx in self.contexts:
            if not ctx.tokens:
                raise ValueError(f"context {ctx.context_id} has no tokens")
            if prev is not None and ctx.context_id <= prev:
                raise ValueError(f"context ids must strictly increase ({prev} then {ctx.context_id})")
            prev = ctx.context_id
            for tok in ctx.tokens:
                if tuple(len(v) for v in tok.layer_vecs) != self.dims:
                    raise ValueError(f"token {tok.surface!r} in context {ctx.context_id} has wrong layer dims")

    def context_ids(self) -> list[int]:
        return [c.context_id for c in self.contexts]


def load_context_corpus(path) -> ContextCorpus:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(path, 1, f"missing '{CORPUS_MAGIC}' header")
    head = lines[0].split(" ")
    if len(head) != 5 or head[0] != CORPUS_MAGIC:
        raise FormatError(path, 1, f"bad magic/header {lines[0]!r}")
    if head[1] != str(FORMAT_VERSION):
        raise FormatError(path, 1, f"unsupported version {head[1]}")
    try:
        dims = tuple(int(x) for x in head[2:])
    except ValueError:
        raise FormatError(path, 1, "non-integer layer dimension") from None
    if min(dims) < 1:
        raise FormatError(path, 1, "layer dimensions must be positive")
    contexts: list[Context] = []
    i = 1
    prev_id = None
    while i < len(lines):
        lineno = i + 1
        line = lines[i]
        if not line.startswith("#"):
            raise FormatError(path, lineno, "expected context block header '#<id> <num_tokens>'")
        parts = line[1:].split(" ")
        try:
            cid, ntok = int(parts[0]), int(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise FormatError(path, lineno, f"malformed context header {line!r}") from None
        if ntok < 1:
            raise FormatError(path, lineno, "context must contain at least one token")
        if prev_id is not None and cid <= prev_id:
            raise FormatError(path, lineno, f"context id {cid} not greater than previous {prev_id}")
        prev_id = cid
        if i + ntok >= len(lines):
            raise FormatError(path, len(lines), f"context #{cid} is short: expected {ntok} token lines")
        tokens = []
        for j in range(ntok):
            tl = i + 1 + j
            fields = lines[tl].split("\t")
            if len(fields) != 5:
                raise FormatError(path, tl + 1, f"token line has {len(fields)} tab-separated fields, expected 5")
            surface, lemma = fields[0], fields[1]
            if not surface or not lemma or " " in surface or " " in lemma:
                raise FormatError(path, tl + 1, "surface/lemma must be non-empty and space-free")
            vecs = tuple(_parse_floats(fields[2 + k], dims[k], path, tl + 1, f"layer {k} vector") for k in range(3))
            tokens.append(LayeredTokenEmbedding(surface, lemma, vecs))
        contexts.append(Context(cid, tokens))
        i += ntok + 1
    return ContextCorpus(dims, contexts)


def save_context_corpus(corpus: ContextCorpus, path) -> None:
    def gen() -> Iterator[str]:
        yield f"{CORPUS_MAGIC} {FORMAT_VERSION} {corpus.dims[0]} {corpus.dims[1]} {corpus.dims[2]}"
        for ctx in corpus.contexts:
            yield f"#{ctx.context_id} {len(ctx.tokens)}"
            for tok in ctx.tokens:
                vecs = "\t".join(format_vector(v) for v in tok.layer_vecs)
                yield f"{tok.surface}\t{tok.lemma}\t{vecs}"
    _write_text(path, gen())


# ---------------------------------------------------------------------------
# Anchor datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnchorRecord:
    context_id: int
    lemma_a: str
    lemma_b: str
    vec_a: np.ndarray
    vec_b: np.ndarray


@dataclass
class AnchorDataset:
    """Per-layer anchors, stored column-wise (``vecs_a``/``vecs_b`` are n x dim)."""

    layer: int
    lang_a: str
    lang_b: str
    dim: int
    context_ids: list[int] = field(default_factory=list)
    lemmas_a: list[str] = field(default_factory=list)
    lemmas_b: list[str] = field(default_factory=list)
    vecs_a: np.ndarray = None
    vecs_b: np.ndarray = None

    def __post_init__(self):
        n = len(self.context_ids)
        if self.vecs_a is None:
            self.vecs_a = np.zeros((n, self.dim))
        if self.vecs_b is None:
            self.vecs_b = np.zeros((n, self.dim))
        self.vecs_a = np.asarray(self.vecs_a, dtype=np.float64).reshape(n, self.dim)
        self.vecs_b = np.asarray(self.vecs_b, dtype=np.float64).reshape(n, self.dim)
        if not (len(self.lemmas_a) == len(self.lemmas_b) == n):
            raise ValueError("anchor dataset columns have different lengths")
        if self.layer not in (0, 1, 2):
            raise ValueError(f"layer must be 0, 1 or 2, got {self.layer}")

    def __len__(self) -> int:
        return len(self.context_ids)

    @classmethod
    def from_records(cls, layer: int, lang_a: str, lang_b: str, dim: int, records: Iterable[AnchorRecord]):
        recs = list(records)
        return cls(layer, lang_a, lang_b, dim,
                   [r.context_id for r in recs], [r.lemma_a for r in recs], [r.lemma_b for r in recs],
                   np.array([r.vec_a for r in recs]).reshape(len(recs), dim),
                   np.array([r.vec_b for r in recs]).reshape(len(recs), dim))

    @property
    def records(self) -> list[AnchorRecord]:
        return [AnchorRecord(c, la, lb, va, vb) for c, la, lb, va, vb in
                zip(self.context_ids, self.lemmas_a, self.lemmas_b, self.vecs_a, self.vecs_b)]

    def triples(self) -> list[tuple[int, str, str]]:
        return list(zip(self.context_ids, self.lemmas_a, self.lemmas_b))

    def subset(self, idx) -> "AnchorDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return AnchorDataset(self.layer, self.lang_a, self.lang_b, self.dim,
                             [self.context_ids[i] for i in idx], [self.lemmas_a[i] for i in idx],
                             [self.lemmas_b[i] for i in idx], self.vecs_a[idx], self.vecs_b[idx])

    def __eq__(self, other) -> bool:
        return (isinstance(other, AnchorDataset)
                and (self.layer, self.lang_a, self.lang_b, self.dim) == (other.layer, other.lang_a, other.lang_b, other.dim)
                and self.triples() == other.triples()
                and np.array_equal(self.vecs_a, other.vecs_a) and np.array_equal(self.vecs_b, other.vecs_b))


def save_anchor_dataset(ds: AnchorDataset, path) -> None:
    def gen() -> Iterator[str]:
        yield f"{PAIRS_MAGIC} {FORMAT_VERSION} {ds.dim} {ds.lang_a} {ds.lang_b} {ds.layer}"
        for c, la, lb, va, vb in zip(ds.context_ids, ds.lemmas_a, ds.lemmas_b, ds.vecs_a, ds.vecs_b):
            yield f"{c}\t{la}\t{lb}\t{format_vector(va)}\t{format_vector(vb)}"
    _write_text(path, gen())


def load_anchor_dataset(path) -> AnchorDataset:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(path, 1, f"missing '{PAIRS_MAGIC}' header")
    head = lines[0].split(" ")
    if len(head) != 6 or head[0] != PAIRS_MAGIC:
        raise FormatError(path, 1, f"bad magic/header {lines[0]!r}")
    if head[1] != str(FORMAT_VERSION):
        raise FormatError(path, 1, f"unsupported version {head[1]}")
    try:
        dim, layer = int(head[2]), int(head[5])
    except ValueError:
        raise FormatError(path, 1, "non-integer dim/layer") from None
    if dim < 1 or layer not in (0, 1, 2):
        raise FormatError(path, 1, "dim must be positive and layer in {0,1,2}")
    n = len(lines) - 1
    cids, la, lb = [], [], []
    va, vb = np.zeros((n, dim)), np.zeros((n, dim))
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        fields = line.split("\t")
        if len(fields) != 5:
            raise FormatError(path, lineno, f"record has {len(fields)} tab-separated fields, expected 5")
        try:
            cids.append(int(fields[0]))
        except ValueError:
            raise FormatError(path, lineno, f"non-integer context id {fields[0]!r}") from None
        if not fields[1] or not fields[2] or " " in fields[1] or " " in fields[2]:
            raise FormatError(path, lineno, "lemmas must be non-empty and space-free")
        la.append(fields[1])
        lb.append(fields[2])
        va[i] = _parse_floats(fields[3], dim, path, lineno, "vec_a")
        vb[i] = _parse_floats(fields[4], dim, path, lineno, "vec_b")
    return AnchorDataset(layer, head[3], head[4], dim, cids, la, lb, va, vb)


# ---------------------------------------------------------------------------
# Bilingual dictionaries (plain pairs; see anchors.BilingualDictionary)
# ---------------------------------------------------------------------------

def read_dictionary_file(path) -> tuple[list[tuple[str, str]], dict]:
    """Return the pairs in file order and any ``# xlanchor-dict`` metadata.

    Lemmas may contain spaces here; cleaning decides what to keep.
    """
    meta: dict = {}
    pairs = []
    for i, line in enumerate(_read_lines(path)):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) >= 3 and parts[0] == DICT_MAGIC:
                meta = {"lang_a": parts[1], "lang_b": parts[2]}
                if len(parts) >= 4:
                    meta["provenance"] = parts[3]
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(path, i + 1, f"dictionary line has {len(fields)} tab-separated fields, expected 2")
        pairs.append((fields[0], fields[1]))
    return pairs, meta


def write_dictionary_file(path, pairs: Iterable[tuple[str, str]], lang_a: str | None = None,
                          lang_b: str | None = None, provenance: str | None = None) -> None:
    lines = []
    if lang_a and lang_b:
        lines.append(f"# {DICT_MAGIC} {lang_a} {lang_b}" + (f" {provenance}" if provenance else ""))
    lines += [f"{a}\t{b}" for a, b in pairs]
    _write_text(path, lines)


# ---------------------------------------------------------------------------
# Vector helpers
# ---------------------------------------------------------------------------

def concat_layers(token: LayeredTokenEmbedding) -> np.ndarray:
    """Layer 0, 1 and 2 vectors joined end to end."""
    if len(token.layer_vecs) != 3:
        raise ValueError("token must carry exactly three layer vectors")
    return np.concatenate([np.asarray(v, dtype=np.float64) for v in token.layer_vecs])


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Scale each row to unit length; zero rows stay zero."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norms, out=v.copy(), where=norms > 0)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


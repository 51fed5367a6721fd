"""Synthetic stand-ins for real embeddings, used by tests and experiment scripts."""

from __future__ import annotations

import numpy as np

from .numerics import Rng
from .vecstore import AnchorDataset, Context, ContextCorpus, LayeredTokenEmbedding, l2_normalize


def random_orthogonal(rng: Rng, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal((dim, dim)))
    return q * np.sign(np.diag(r))


def warped_pairs(rng: Rng, n: int, dim: int, warp: float = 0.1):
    """Unit pairs with ``y = normalize(Q x + warp * tanh(M x))``; returns ``(X, Y, Q, M)``."""
    X = l2_normalize(rng.normal((n, dim)))
    Q = random_orthogonal(rng, dim)
    M = rng.normal((dim, dim)) / np.sqrt(dim)
    Y = l2_normalize(X @ Q.T + warp * np.tanh(X @ M.T))
    return X, Y, Q, M


def pair_datasets(X: np.ndarray, Y: np.ndarray, n_eval: int, layer: int = 0,
                  lang_a: str = "xa", lang_b: str = "xb") -> tuple[AnchorDataset, AnchorDataset]:
    """Train/eval anchor datasets from row-aligned arrays; each row gets its own lemma pair."""
    n, dim = X.shape
    ids = list(range(n))
    la = [f"a{i}" for i in ids]
    lb = [f"b{i}" for i in ids]
    k = n - n_eval
    tr = AnchorDataset(layer, lang_a, lang_b, dim, ids[:k], la[:k], lb[:k], X[:k], Y[:k])
    ev = AnchorDataset(layer, lang_a, lang_b, dim, ids[k:], la[k:], lb[k:], X[k:], Y[k:])
    return tr, ev


def random_corpus(rng: Rng, n_contexts: int, dims=(3, 4, 5), vocab: int = 12, max_len: int = 6,
                  prefix: str = "w") -> ContextCorpus:
    """Corpus of random contexts over a small vocabulary (surface == lemma upper-cased)."""
    contexts = []
    for cid in range(n_contexts):
        length = 1 + int(rng.integers(max_len, 1)[0])
        words = rng.integers(vocab, length)
        toks = [LayeredTokenEmbedding(f"{prefix}{w}".upper(), f"{prefix}{w}",
                                      tuple(np.round(rng.normal(d), 4) for d in dims)) for w in words]
        contexts.append(Context(cid, toks))
    return ContextCorpus(tuple(dims), contexts)

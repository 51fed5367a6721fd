"""Supervised linear maps between anchor vector sets.

``procrustes`` gives the orthogonal W minimising ``|XW - Y|_F``;
``least_squares_map`` the unconstrained minimiser ``pinv(X) Y``.
``fit_vecmap`` wraps either with the five option switches that decide
which sides are normalised and which are transformed when the map is
used. "Source"/"eval" is the language whose vectors are mapped at
evaluation time (``lang_a``), "target"/"train" the one a downstream model
was trained on (``lang_b``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import numpy as np

from .numerics import ShapeError, svd
from .vecstore import AnchorDataset, FormatError, l2_normalize

MODES = ("orthogonal", "least_squares")
LINEAR_MAGIC = "XLMAP-LINEAR"


@dataclass(frozen=True)
class VecmapOptions:
    map_train_side: bool = False
    normalize_at_train: bool = False
    map_eval_side: bool = True
    normalize_at_eval: bool = False
    normalize_for_fit: bool = False

    def bits(self) -> str:
        return "".join("1" if getattr(self, f.name) else "0" for f in fields(self))

    @classmethod
    def from_bits(cls, bits: str) -> "VecmapOptions":
        if len(bits) != 5 or set(bits) - {"0", "1"}:
            raise ValueError(f"option bits must be five 0/1 characters, got {bits!r}")
        return cls(*(b == "1" for b in bits))

    def describe(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PRESETS = {
    "ELMoVM": VecmapOptions(True, True, True, True, True),
    "orth": VecmapOptions(False, False, True, False, True),
    "nonorm": VecmapOptions(False, False, True, False, False),
    "evalnorm": VecmapOptions(False, False, True, True, False),
    "def": VecmapOptions(False, False, True, True, True),
}


def preset(name: str) -> VecmapOptions:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def center_normalize(X: np.ndarray, mean: np.ndarray) -> np.ndarray:
    """Unit length, subtract ``mean``, unit length again."""
    return l2_normalize(l2_normalize(X) - mean)


@dataclass
class LinearMapModel:
    """``W`` maps source rows onto target rows (``X @ W ~ Y``).

    ``src_matrix``/``trg_matrix`` are what is actually applied to each side
    (``W`` and the identity when only the eval side is mapped; the two
    orthogonal SVD factors when both are). ``reverse`` is the separately
    fitted target-to-source map of least-squares models.
    """

    W: np.ndarray
    mode: str
    options: VecmapOptions
    mean_src: np.ndarray
    mean_trg: np.ndarray
    src_matrix: np.ndarray
    trg_matrix: np.ndarray
    reverse: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def prepare(self, X: np.ndarray, side: str) -> np.ndarray:
        if side == "source_eval":
            return center_normalize(X, self.mean_src) if self.options.normalize_at_eval else X
        return center_normalize(X, self.mean_trg) if self.options.normalize_at_train else X

    def retrieval_maps(self, direction: str):
        def src(X):
            return apply_linear(self, X, "source_eval")

        def trg(X):
            return apply_linear(self, X, "target_train")

        if direction == "a_to_b":
            return src, trg
        if self.mode == "orthogonal":
            # cosine against src-side images equals mapping back with W^T
            return trg, src
        return (lambda Y: self.prepare(Y, "target_train") @ self.reverse), (lambda X: self.prepare(X, "source_eval"))


def _check_pair(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape != Y.shape:
        raise ShapeError(f"X and Y must be matrices of equal shape, got {X.shape} and {Y.shape}")
    if X.shape[0] == 0:
        raise ValueError("no anchor pairs to fit")
    return X, Y


def orthogonal_factors(X: np.ndarray, Y: np.ndarray):
    """``(U, V)`` from ``X^T Y = U S V^T``; the Procrustes solution is ``U V^T``."""
    U, _, Vt = svd(X.T @ Y)
    return U, Vt.T


def pinv(X: np.ndarray) -> np.ndarray:
    U, S, Vt = svd(X)
    cutoff = max(X.shape) * np.finfo(float).eps * (S[0] if S.size else 0.0)
    keep = S > cutoff
    if not keep.all():
        warnings.warn(f"rank-deficient input (rank {int(keep.sum())} < {len(S)}); returning minimum-norm solution",
                      RuntimeWarning, stacklevel=3)
    inv = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def _plain(W, mode, d, reverse=None) -> LinearMapModel:
    eye = np.eye(d)
    return LinearMapModel(W, mode, PRESETS["nonorm"], np.zeros(d), np.zeros(d), W, eye, reverse)


def procrustes(X: np.ndarray, Y: np.ndarray) -> LinearMapModel:
    """Orthogonal map minimising ``|X W - Y|_F``."""
    X, Y = _check_pair(X, Y)
    U, V = orthogonal_factors(X, Y)
    return _plain(U @ V.T, "orthogonal", X.shape[1])


def least_squares_map(X: np.ndarray, Y: np.ndarray) -> LinearMapModel:
    """Unconstrained least-squares map ``pinv(X) Y`` (plus the reverse ``pinv(Y) X``)."""
    X, Y = _check_pair(X, Y)
    return _plain(pinv(X) @ Y, "least_squares", X.shape[1], pinv(Y) @ X)


def fit_vecmap(anchors: AnchorDataset, options: VecmapOptions, mode: str = "orthogonal") -> LinearMapModel:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if len(anchors) == 0:
        raise ValueError("cannot fit a map on an empty anchor dataset")
    X, Y = anchors.vecs_a, anchors.vecs_b
    d = anchors.dim
    mean_src = l2_normalize(X).mean(axis=0)
    mean_trg = l2_normalize(Y).mean(axis=0)
    if options.normalize_for_fit:
        X = center_normalize(X, mean_src)
        Y = center_normalize(Y, mean_trg)
    eye = np.eye(d)
    reverse = None
    if mode == "orthogonal":
        U, V = orthogonal_factors(X, Y)
        W = U @ V.T
        if options.map_train_side and options.map_eval_side:
            src_m, trg_m = U, V
        elif options.map_train_side:
            src_m, trg_m = eye, W.T
        elif options.map_eval_side:
            src_m, trg_m = W, eye
        else:
            src_m, trg_m = eye, eye
    else:
        W = pinv(X) @ Y
        reverse = pinv(Y) @ X
        if options.map_eval_side:
            src_m, trg_m = W, eye
        elif options.map_train_side:
            src_m, trg_m = eye, reverse
        else:
            src_m, trg_m = eye, eye
    return LinearMapModel(W, mode, options, mean_src, mean_trg, src_m, trg_m, reverse)


def apply_linear(model: LinearMapModel, vectors: np.ndarray, side: str) -> np.ndarray:
    """Transform vectors of one side exactly as the model's options dictate."""
    if side not in ("source_eval", "target_train"):
        raise ValueError(f"side must be 'source_eval' or 'target_train', got {side!r}")
    V = np.asarray(vectors, dtype=np.float64)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    if V.shape[1] != model.dim:
        raise ShapeError(f"vector dim {V.shape[1]} != model dim {model.dim}")
    M = model.src_matrix if side == "source_eval" else model.trg_matrix
    out = model.prepare(V, side) @ M
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def save_linear(model: LinearMapModel, path) -> None:
    """Text model file; floats use shortest round-trip repr, so loading is exact."""
    d = model.dim
    lines = [f"{LINEAR_MAGIC} 1 {d} {model.mode} {model.options.bits()}",
             _fmt(model.mean_src), _fmt(model.mean_trg)]
    for block in (model.W, model.src_matrix, model.trg_matrix):
        lines += [_fmt(row) for row in block]
    if model.reverse is not None:
        lines += [_fmt(row) for row in model.reverse]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_linear(path) -> LinearMapModel:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head = lines[0].split(" ") if lines else []
    if len(head) != 5 or head[0] != LINEAR_MAGIC:
        raise FormatError(path, 1, "not a linear model file")
    if head[1] != "1":
        raise FormatError(path, 1, f"unsupported version {head[1]}")
    try:
        d = int(head[2])
        options = VecmapOptions.from_bits(head[4])
    except ValueError as e:
        raise FormatError(path, 1, str(e)) from None
    mode = head[3]
    if mode not in MODES:
        raise FormatError(path, 1, f"unknown mode {mode!r}")
    nblocks = 4 if mode == "least_squares" else 3
    if len(lines) != 3 + nblocks * d:
        raise FormatError(path, len(lines), f"expected {3 + nblocks * d} lines, found {len(lines)}")

    def row(i):
        parts = lines[i].split(" ")
        if len(parts) != d:
            raise FormatError(path, i + 1, f"expected {d} values, found {len(parts)}")
        try:
            return np.array([float(p) for p in parts])
        except ValueError:
            raise FormatError(path, i + 1, "non-numeric value") from None

    mean_src, mean_trg = row(1), row(2)
    blocks = [np.array([row(3 + b * d + i) for i in range(d)]) for b in range(nblocks)]
    reverse = blocks[3] if mode == "least_squares" else None
    return LinearMapModel(blocks[0], mode, options, mean_src, mean_trg, blocks[1], blocks[2], reverse)

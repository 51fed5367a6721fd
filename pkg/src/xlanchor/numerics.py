"""Dense linear algebra and a small trainable network kernel.

Everything here works on float64 numpy arrays. The network pieces
(dense layers, batch norm, losses, Adam) are deliberately explicit so
that every backward pass can be checked against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

__all__ = [
    "ShapeError",
    "SvdNotConverged",
    "svd",
    "Rng",
    "DenseLayer",
    "BatchNormLayer",
    "Network",
    "dense_forward",
    "dense_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "bce_loss",
    "mse_loss",
    "AdamState",
    "adam_step",
    "GradCheckReport",
    "grad_check",
    "network_grad_check",
]


class ShapeError(ValueError):
    pass


class SvdNotConverged(RuntimeError):
    def __init__(self, sweeps: int, off: float):
        super().__init__(f"one-sided Jacobi SVD did not converge after {sweeps} sweeps (off-diagonal ratio {off:.3e})")
        self.sweeps = sweeps
        self.off = off


# ---------------------------------------------------------------------------
# SVD (one-sided Jacobi, Hestenes)
# ---------------------------------------------------------------------------

def _complete_orthonormal(U: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of U not flagged in ``keep`` by an orthonormal completion."""
    m = U.shape[0]
    kept = U[:, keep]
    d = kept.shape[1]
    # QR of [kept | I]: the trailing columns span the orthogonal complement
    Q, _ = np.linalg.qr(np.hstack([kept, np.eye(m)]))
    out = U.copy()
    out[:, ~keep] = Q[:, d:d + int((~keep).sum())]
    return out


@numba.njit(cache=True)
def _jacobi_sweeps(At, Vt, tol, max_sweeps):
    """Cyclic one-sided Jacobi on the rows of ``At``; returns (sweeps, off)."""
    n, m = At.shape
    # columns whose squared norm falls below this are rounding noise; rotating
    # them against large columns never settles, so they are left alone
    total = 0.0
    for p in range(n):
        for k in range(m):
            total += At[p, k] * At[p, k]
    tiny = (n * 2.220446049250313e-16) ** 2 * total
    off = 0.0
    for sweep in range(1, max_sweeps + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    x = At[p, k]
                    y = At[q, k]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if alpha <= tiny or beta <= tiny:
                    continue
                scale = np.sqrt(alpha * beta)
                ratio = abs(gamma) / scale
                if ratio > off:
                    off = ratio
                if ratio <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    x = At[p, k]
                    y = At[q, k]
                    At[p, k] = c * x - s * y
                    At[q, k] = s * x + c * y
                for k in range(n):
                    x = Vt[p, k]
                    y = Vt[q, k]
                    Vt[p, k] = c * x - s * y
                    Vt[q, k] = s * x + c * y
        if off <= tol:
            return sweep, off
    return -1, off


def _jacobi_tall(a: np.ndarray, max_sweeps: int, tol: float):
    m, n = a.shape
    # rows of the transpose are the columns being orthogonalised
    At = np.array(a.T, order="C")
    Vt = np.eye(n)
    sweeps, off = _jacobi_sweeps(At, Vt, tol, max_sweeps)
    if sweeps < 0:
        raise SvdNotConverged(max_sweeps, off)
    sig = np.linalg.norm(At, axis=1)
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    At = At[order]
    Vt = Vt[order]
    smax = sig[0]
    eps = np.finfo(float).eps
    # columns the sweep treated as rounding noise were never orthogonalised,
    # so they count as zero singular values too (margin of 2 over the kernel)
    noise = 2.0 * n * eps * np.linalg.norm(a)
    keep = sig > max(max(m, n) * eps * smax, noise)
    U = np.zeros((m, n))
    U[:, keep] = (At[keep] / sig[keep, None]).T
    if not keep.all():
        U = _complete_orthonormal(U, keep)
        sig = np.where(keep, sig, 0.0)
    return U, sig, Vt


def svd(m: np.ndarray, max_sweeps: int = 60, tol: float | None = None):
    """Thin SVD ``m = U @ diag(S) @ Vt`` by one-sided Jacobi rotations.

    Column pairs are swept cyclically until every pair is orthogonal to
    within ``tol`` (relative). ``S`` is sorted descending. Raises
    :class:`SvdNotConverged` if ``max_sweeps`` sweeps leave any pair with
    normalised inner product above ``tol``.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"svd needs a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd input contains non-finite entries")
    if tol is None:
        tol = 4.0 * np.finfo(float).eps
    m_rows, n_cols = a.shape
    if m_rows > 2 * n_cols:
        # tall: rotate the small triangular factor instead of the full matrix
        Q, R = np.linalg.qr(a)
        Ur, S, Vt = _jacobi_tall(R, max_sweeps, tol)
        return Q @ Ur, S, Vt
    if m_rows >= n_cols:
        return _jacobi_tall(a, max_sweeps, tol)
    U, S, Vt = _jacobi_tall(a.T, max_sweeps, tol)
    return Vt.T, S, U.T


# ---------------------------------------------------------------------------
# Random numbers
# ---------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Rng:
    """Counter-based SplitMix64 stream.

    Output ``k`` is ``mix(seed + (k + 1) * 0x9E3779B97F4A7C15 mod 2**64)``,
    i.e. exactly the sequence a sequential SplitMix64 generator seeded
    with ``seed`` produces. Being counter based it vectorises, and the
    whole state is the pair ``(seed, counter)``.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def copy(self) -> "Rng":
        return Rng(self.seed, self.counter)

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + k * _GAMMA
        return _splitmix(z)

    def random(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return u.reshape(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normals via Box-Muller (two uniforms per draw)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        u = self.random(2 * n)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:n]))
        return (r * np.cos(2.0 * np.pi * u[n:])).reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        return np.minimum((self.random(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")

    def spawn(self, index: int) -> "Rng":
        """Independent child stream; does not advance this one."""
        with np.errstate(over="ignore"):
            z = np.array([self.seed ^ ((0x5851F42D4C957F2D * (index + 1)) & _MASK64)], dtype=np.uint64)
        return Rng(int(_splitmix(z)[0]))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "identity")
_ONE_BELOW = np.nextafter(1.0, 0.0)
_TINY = np.nextafter(0.0, 1.0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _TINY, _ONE_BELOW)


def _activate(kind: str, z: np.ndarray, alpha: float) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, alpha * z)
    if kind == "tanh":
        # keep the open interval (-1, 1) even where tanh rounds to +-1
        return np.clip(np.tanh(z), -_ONE_BELOW, _ONE_BELOW)
    if kind == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, out: np.ndarray, alpha: float) -> np.ndarray:
    """Derivative of the activation expressed through its output."""
    if kind == "identity":
        return np.ones_like(out)
    if kind == "relu":
        return (out > 0).astype(out.dtype)
    if kind == "leaky_relu":
        return np.where(out > 0, 1.0, alpha)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    alpha: float = 0.2

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"dense layer: weight {self.weight.shape} incompatible with bias {self.bias.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.alpha < 1.0:
            raise ValueError("leaky_relu alpha must lie in (0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    @classmethod
    def init(cls, rng: Rng, in_dim: int, out_dim: int, activation: str = "identity", alpha: float = 0.2):
        """Scaled-uniform (Glorot) weights, zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-limit, limit, (in_dim, out_dim)), np.zeros(out_dim), activation, alpha)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"dense layer expects (*, {layer.in_dim}) input, got {x.shape}")
    return _activate(layer.activation, x @ layer.weight + layer.bias, layer.alpha)


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray, out: np.ndarray | None = None):
    """Return ``(grad_input, grad_weight, grad_bias)``.

    ``out`` is the forward output; it is recomputed when not supplied.
    """
    if out is None:
        out = dense_forward(layer, x)
    if grad_out.shape != out.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {out.shape}")
    gz = grad_out * _activation_grad(layer.activation, out, layer.alpha)
    return gz @ layer.weight.T, x.T @ gz, gz.sum(axis=0)


@dataclass
class BatchNormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("batch norm epsilon must be positive")

    @classmethod
    def init(cls, features: int, momentum: float = 0.99, epsilon: float = 1e-3):
        return cls(np.ones(features), np.zeros(features), np.zeros(features), np.ones(features), momentum, epsilon)

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.gamma, self.beta]


def batchnorm_forward(layer: BatchNormLayer, x: np.ndarray, training: bool, update_stats: bool = True) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != layer.features:
        raise ShapeError(f"batch norm expects (*, {layer.features}) input, got {x.shape}")
    if not training:
        xhat = (x - layer.running_mean) / np.sqrt(layer.running_var + layer.epsilon)
        return layer.gamma * xhat + layer.beta
    n = x.shape[0]
    if n < 2:
        raise ShapeError("batch norm in training mode needs a batch of at least 2")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    if update_stats:
        mom = layer.momentum
        layer.running_mean *= mom
        layer.running_mean += (1.0 - mom) * mean
        layer.running_var *= mom
        layer.running_var += (1.0 - mom) * var * (n / (n - 1))
    xhat = (x - mean) / np.sqrt(var + layer.epsilon)
    return layer.gamma * xhat + layer.beta


def batchnorm_backward(layer: BatchNormLayer, x: np.ndarray, grad_out: np.ndarray):
    """Training-mode gradients ``(grad_input, grad_gamma, grad_beta)``."""
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    xhat = (x - mean) * inv_std
    g_gamma = (grad_out * xhat).sum(axis=0)
    g_beta = grad_out.sum(axis=0)
    gxhat = grad_out * layer.gamma
    gx = inv_std / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
    return gx, g_gamma, g_beta


class Network:
    """A plain stack of dense and batch-norm layers."""

    def __init__(self, layers: Sequence[DenseLayer | BatchNormLayer]):
        self.layers = list(layers)

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self) -> list[np.ndarray]:
        return [b for layer in self.layers if isinstance(layer, BatchNormLayer)
                for b in (layer.running_mean, layer.running_var)]

    @property
    def in_dim(self) -> int:
        first = self.layers[0]
        return first.in_dim if isinstance(first, DenseLayer) else first.features

    def forward(self, x: np.ndarray, training: bool = False, update_stats: bool = True):
        """Return the output and the per-layer activations needed by :meth:`backward`."""
        acts = [x]
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                x = dense_forward(layer, x)
            else:
                x = batchnorm_forward(layer, x, training, update_stats)
            acts.append(x)
        return x, acts

    def __call__(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.forward(x, training, update_stats=False)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray, param_grads: bool = True):
        """Backpropagate through a training-mode forward pass.

        Returns ``(grad_input, grads)`` with ``grads`` aligned to :meth:`params`
        (empty when ``param_grads`` is false).
        """
        grads: list[np.ndarray] = []
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, DenseLayer) and not param_grads:
                out = acts[i + 1]
                g = (g * _activation_grad(layer.activation, out, layer.alpha)) @ layer.weight.T
            elif isinstance(layer, DenseLayer):
                g, gw, gb = dense_backward(layer, acts[i], g, acts[i + 1])
                grads[:0] = [gw, gb]
            else:
                g, gg, gbeta = batchnorm_backward(layer, acts[i], g)
                grads[:0] = [gg, gbeta]
        return g, grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

PROB_CLAMP = 1e-7


def bce_loss(predicted: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy and its gradient w.r.t. ``predicted``.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is zero
    where clamping was active.
    """
    p_raw = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p_raw.shape != t.shape:
        raise ShapeError(f"bce: predicted {p_raw.shape} vs target {t.shape}")
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.size
    loss = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))
    grad = (-(t / p) + (1.0 - t) / (1.0 - p)) / n
    grad = np.where((p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP), grad, 0.0)
    return loss, grad


def mse_loss(predicted: np.ndarray, target: np.ndarray):
    diff = predicted - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)

    def effective_lr(self) -> float:
        return self.lr / (1.0 + self.lr_decay * self.step)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """Update ``params`` in place and return them.

    The learning rate used is ``lr / (1 + lr_decay * step)`` with ``step``
    the number of updates already applied.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam: parameter, gradient and state counts differ")
    lr = state.effective_lr()
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam: shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_array: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def grad_check(loss: Callable[[], float], arrays: Sequence[np.ndarray], analytic: Sequence[np.ndarray],
               h: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss`` re-evaluates the scalar objective reading ``arrays`` (which are
    perturbed in place and restored). The error per array is
    ``|a - n| / (|a| + |n|)`` in the Frobenius norm.
    """
    errs = []
    for arr, ga in zip(arrays, analytic):
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss()
            flat[i] = orig - h
            fm = loss()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        errs.append(_rel_error(np.asarray(ga), num))
    return GradCheckReport(max(errs, default=0.0), tolerance, errs)


def network_grad_check(net: Network, x: np.ndarray, rng: Rng, training: bool = True,
                       tolerance: float = 1e-4, h: float = 1e-5,
                       head: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None) -> GradCheckReport:
    """Check parameter and input gradients of ``net`` under a scalar head.

    The default head is a fixed random linear functional of the output.
    """
    x = np.array(x, dtype=np.float64)
    if head is None:
        out0 = net(x, training)
        proj = rng.normal(out0.shape)

        def head(out):
            return float(np.sum(out * proj)), proj

    def loss() -> float:
        return head(net.forward(x, training, update_stats=False)[0])[0]

    out, acts = net.forward(x, training, update_stats=False)
    _, g_out = head(out)
    g_in, grads = net.backward(acts, g_out)
    return grad_check(loss, net.params() + [x], grads + [g_in], h, tolerance)

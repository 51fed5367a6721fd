"""Bidirectional GAN mapping between two embedding spaces.

Two generators map L1 -> L2 (``g1``) and L2 -> L1 (``g2``). Two
discriminators look at concatenated ``(L1 vector, L2 vector)`` pairs:
``d_valid`` separates genuine translation pairs from fakes, ``d_domain``
tells ``(x, g1(x))`` apart from ``(g2(y), y)``.

One training step updates both discriminators on a freshly drawn batch
and then both generators against the updated discriminators, adding a
supervised mean-squared error towards the gold translation vector.
"""

from __future__ import annotations

import copy
import logging
import struct
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .numerics import AdamState, BatchNormLayer, DenseLayer, Network, Rng, adam_step, bce_loss, mse_loss
from .vecstore import AnchorDataset, l2_normalize
from .xeval import induction_score

log = logging.getLogger(__name__)

NETWORKS = ("g1", "g2", "d_valid", "d_domain")


class GanNumericalError(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class GanFormatError(ValueError):
    pass


@dataclass
class GanTrainConfig:
    batch_size: int = 256
    lr: float = 2e-5
    lr_decay: float = 1e-5
    iterations: int = 10000
    checkpoint_every: int = 1000
    checkpoint_start: int = 0
    seed: int = 0
    sup_weight: float = 1.0
    gen_hidden: tuple[int, int, int] = (2048, 4096, 2048)
    disc_hidden: tuple[int, int, int] = (2048, 2048, 1024)
    leaky_alpha: float = 0.2
    bn_momentum: float = 0.99
    # generator output-layer init is shrunk by this factor; None means
    # 1/sqrt(dim), the per-component scale of a unit vector
    gen_out_scale: float | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        self.gen_hidden = tuple(self.gen_hidden)
        self.disc_hidden = tuple(self.disc_hidden)


PRESETS = {
    # fixed-length training
    "10k": dict(iterations=10000, checkpoint_every=0),
    # checkpoints every 2000 iterations from 6000 to 50000, best one kept
    "sweep": dict(iterations=50000, checkpoint_every=2000, checkpoint_start=6000),
}


def preset_config(name: str, **overrides) -> GanTrainConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown GAN preset {name!r}; choose from {sorted(PRESETS)}")
    return GanTrainConfig(**{**PRESETS[name], **overrides})


@dataclass
class CheckpointScore:
    iteration: int
    avg_precision: float


@dataclass
class GanModel:
    layer: int
    dim: int
    g1: Network
    g2: Network
    d_valid: Network
    d_domain: Network
    adam: dict[str, AdamState]
    rng: Rng
    iteration: int = 0

    def networks(self) -> dict[str, Network]:
        return {"g1": self.g1, "g2": self.g2, "d_valid": self.d_valid, "d_domain": self.d_domain}

    def copy(self) -> "GanModel":
        return copy.deepcopy(self)

    def rounded(self) -> "GanModel":
        """Copy with parameters and batch-norm statistics rounded to float32, as a model file stores them."""
        out = self.copy()
        for net in out.networks().values():
            for arr in net.params() + net.buffers():
                arr[...] = arr.astype(np.float32)
        return out

    def retrieval_maps(self, direction: str):
        if direction == "a_to_b":
            return (lambda X: map_vector(self, X, "a_to_b")), l2_normalize
        return (lambda X: map_vector(self, X, "b_to_a")), l2_normalize


def _generator(rng: Rng, dim: int, hidden, momentum: float, out_scale: float = 1.0) -> Network:
    layers = []
    prev = dim
    for width in hidden:
        layers.append(DenseLayer.init(rng, prev, width, "relu"))
        layers.append(BatchNormLayer.init(width, momentum))
        prev = width
    out = DenseLayer.init(rng, prev, dim, "tanh")
    out.weight *= out_scale
    layers.append(out)
    return Network(layers)


def _discriminator(rng: Rng, dim: int, hidden, alpha: float) -> Network:
    layers = []
    prev = 2 * dim
    for width in hidden:
        layers.append(DenseLayer.init(rng, prev, width, "leaky_relu", alpha))
        prev = width
    layers.append(DenseLayer.init(rng, prev, 1, "sigmoid"))
    return Network(layers)


def init_gan(dim: int, config: GanTrainConfig, layer: int = 0) -> GanModel:
    if dim < 1:
        raise ValueError("dim must be positive")
    rng = Rng(config.seed)
    out_scale = config.gen_out_scale if config.gen_out_scale is not None else 1.0 / np.sqrt(dim)
    g1 = _generator(rng, dim, config.gen_hidden, config.bn_momentum, out_scale)
    g2 = _generator(rng, dim, config.gen_hidden, config.bn_momentum, out_scale)
    dv = _discriminator(rng, dim, config.disc_hidden, config.leaky_alpha)
    dd = _discriminator(rng, dim, config.disc_hidden, config.leaky_alpha)
    nets = {"g1": g1, "g2": g2, "d_valid": dv, "d_domain": dd}
    adam = {k: AdamState.for_params(n.params(), lr=config.lr, lr_decay=config.lr_decay) for k, n in nets.items()}
    return GanModel(layer, dim, g1, g2, dv, dd, adam, rng)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

@dataclass
class TrainingBatch:
    """Row indices into the training arrays for one step.

    ``gen`` rows feed both generators. ``real`` rows are genuine pairs for
    ``d_valid``. Fake row ``i`` has type ``fake_kind[i]`` (cycling 0, 1, 2):
    0 pairs ``x[rand_a[i]]`` with a mismatched ``y[rand_b[i]]``, 1 pairs
    ``x[gen[i]]`` with ``g1(x[gen[i]])``, 2 pairs ``g2(y[gen[i]])`` with
    ``y[gen[i]]``.
    """

    gen: np.ndarray
    real: np.ndarray
    fake_kind: np.ndarray
    rand_a: np.ndarray
    rand_b: np.ndarray

    @property
    def size(self) -> int:
        return len(self.gen)


def make_training_batch(train, rng: Rng, batch_size: int) -> TrainingBatch:
    n = len(train)
    if n < batch_size:
        raise ValueError(f"dataset of {n} pairs is smaller than batch size {batch_size}")
    if n < 2:
        raise ValueError("need at least two pairs to draw mismatched fakes")
    gen = rng.permutation(n)[:batch_size]
    real = rng.integers(n, batch_size)
    rand_a = rng.integers(n, batch_size)
    rand_b = (rand_a + 1 + rng.integers(n - 1, batch_size)) % n
    kind = np.arange(batch_size) % 3
    return TrainingBatch(gen, real, kind, rand_a, rand_b)


def materialize_batch(batch: TrainingBatch, X: np.ndarray, Y: np.ndarray, fake_b: np.ndarray, fake_a: np.ndarray):
    """Build discriminator inputs and labels.

    ``fake_b = g1(X[batch.gen])`` and ``fake_a = g2(Y[batch.gen])``.
    Returns ``(dvalid_in, dvalid_labels, ddomain_in, ddomain_labels)``; inputs
    are ``(2 * batch, 2 * dim)``.
    """
    B = batch.size
    xg, yg = X[batch.gen], Y[batch.gen]
    real = np.hstack([X[batch.real], Y[batch.real]])
    fake_x = np.where((batch.fake_kind == 2)[:, None], fake_a, np.where((batch.fake_kind == 0)[:, None], X[batch.rand_a], xg))
    fake_y = np.where((batch.fake_kind == 1)[:, None], fake_b, np.where((batch.fake_kind == 0)[:, None], Y[batch.rand_b], yg))
    dvalid_in = np.vstack([real, np.hstack([fake_x, fake_y])])
    dvalid_lab = np.concatenate([np.ones(B), np.zeros(B)])[:, None]
    ddomain_in = np.vstack([np.hstack([xg, fake_b]), np.hstack([fake_a, yg])])
    ddomain_lab = np.concatenate([np.ones(B), np.zeros(B)])[:, None]
    return dvalid_in, dvalid_lab, ddomain_in, ddomain_lab


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _disc_update(net: Network, state: AdamState, inputs: np.ndarray, labels: np.ndarray) -> float:
    p, acts = net.forward(inputs, training=True)
    loss, g = bce_loss(p, labels)
    _, grads = net.backward(acts, g)
    adam_step(state, net.params(), grads)
    return loss


def _adv_grad(net: Network, inputs: np.ndarray, target: float):
    p, acts = net.forward(inputs, training=True)
    loss, g = bce_loss(p, np.full_like(p, target))
    g_in, _ = net.backward(acts, g, param_grads=False)
    return loss, g_in


def train_step(model: GanModel, batch: TrainingBatch, X: np.ndarray, Y: np.ndarray, sup_weight: float = 1.0) -> dict[str, float]:
    """One discriminator update followed by one generator update.

    ``X`` and ``Y`` are the (normalised) training arrays the batch indexes.
    """
    d = model.dim
    xg, yg = X[batch.gen], Y[batch.gen]
    out1, acts1 = model.g1.forward(xg, training=True)
    out2, acts2 = model.g2.forward(yg, training=True)

    dv_in, dv_lab, dd_in, dd_lab = materialize_batch(batch, X, Y, out1, out2)
    losses = {
        "d_valid": _disc_update(model.d_valid, model.adam["d_valid"], dv_in, dv_lab),
        "d_domain": _disc_update(model.d_domain, model.adam["d_domain"], dd_in, dd_lab),
    }

    # generator 1: pairs (x, g1(x)) should look genuine and look like g2 output
    in1 = np.hstack([xg, out1])
    lv1, gv1 = _adv_grad(model.d_valid, in1, 1.0)
    ld1, gd1 = _adv_grad(model.d_domain, in1, 0.0)
    ls1, gs1 = mse_loss(out1, yg)
    grad1 = gv1[:, d:] + gd1[:, d:] + sup_weight * gs1
    _, grads = model.g1.backward(acts1, grad1)
    adam_step(model.adam["g1"], model.g1.params(), grads)

    in2 = np.hstack([out2, yg])
    lv2, gv2 = _adv_grad(model.d_valid, in2, 1.0)
    ld2, gd2 = _adv_grad(model.d_domain, in2, 1.0)
    ls2, gs2 = mse_loss(out2, xg)
    grad2 = gv2[:, :d] + gd2[:, :d] + sup_weight * gs2
    _, grads = model.g2.backward(acts2, grad2)
    adam_step(model.adam["g2"], model.g2.params(), grads)

    model.iteration += 1
    losses.update(g1_adv=lv1 + ld1, g2_adv=lv2 + ld2, g1_sup=ls1, g2_sup=ls2)
    for k, v in losses.items():
        if not np.isfinite(v):
            raise GanNumericalError(model.iteration, f"{k} loss")
    return losses


def _train_arrays(ds: AnchorDataset) -> tuple[np.ndarray, np.ndarray]:
    return l2_normalize(ds.vecs_a), l2_normalize(ds.vecs_b)


def train(model: GanModel, train_ds: AnchorDataset, eval_ds: AnchorDataset | None, config: GanTrainConfig,
          on_checkpoint: Callable[[GanModel, CheckpointScore], None] | None = None,
          on_step: Callable[[GanModel, dict], None] | None = None):
    """Run ``config.iterations`` steps; score induction on ``eval_ds`` at checkpoints.

    A checkpoint happens whenever the model's iteration counter is a
    multiple of ``checkpoint_every`` and at least ``checkpoint_start``.
    Returns ``(model, scores)``.
    """
    if train_ds.dim != model.dim:
        raise ValueError(f"training data dim {train_ds.dim} != model dim {model.dim}")
    if eval_ds is not None and (eval_ds.layer, eval_ds.lang_a, eval_ds.lang_b) != (train_ds.layer, train_ds.lang_a, train_ds.lang_b):
        raise ValueError("train and eval datasets belong to different layers or language pairs")
    X, Y = _train_arrays(train_ds)
    for st in model.adam.values():
        st.lr, st.lr_decay = config.lr, config.lr_decay
    scores: list[CheckpointScore] = []
    for _ in range(config.iterations):
        batch = make_training_batch(X, model.rng, config.batch_size)
        losses = train_step(model, batch, X, Y, config.sup_weight)
        if on_step is not None:
            on_step(model, losses)
        ce = config.checkpoint_every
        if ce and eval_ds is not None and model.iteration % ce == 0 and model.iteration >= config.checkpoint_start:
            score = CheckpointScore(model.iteration, induction_score(model, eval_ds).value)
            log.info("iteration %d: induction avg %.4f", score.iteration, score.avg_precision)
            scores.append(score)
            if on_checkpoint is not None:
                on_checkpoint(model, score)
    return model, scores


def map_vector(model: GanModel, v: np.ndarray, direction: str = "a_to_b") -> np.ndarray:
    """Map one vector or a stack of rows with inference-mode batch norm."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    X = np.atleast_2d(v)
    if X.shape[1] != model.dim:
        raise ValueError(f"vector dim {X.shape[1]} != model dim {model.dim}")
    if direction == "a_to_b":
        net = model.g1
    elif direction == "b_to_a":
        net = model.g2
    else:
        raise ValueError(f"unknown direction {direction!r}")
    out = net(l2_normalize(X), training=False)
    return out[0] if single else out


def select_best_iteration(scores: list[CheckpointScore]) -> int:
    """Iteration with the highest score; the earliest one wins ties."""
    if not scores:
        raise ValueError("no checkpoint scores to select from")
    best = min(scores, key=lambda s: (-s.avg_precision, s.iteration))
    return best.iteration


def write_scores(scores: list[CheckpointScore], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("iteration\tavg_precision\n")
        for s in scores:
            f.write(f"{s.iteration}\t{s.avg_precision:.17g}\n")


def read_scores(path) -> list[CheckpointScore]:
    out = []
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    for i, line in enumerate(lines):
        if not line.strip() or (i == 0 and line.startswith("iteration")):
            continue
        it, val = line.split("\t")
        out.append(CheckpointScore(int(it), float(val)))
    return out


# ---------------------------------------------------------------------------
# Binary model files
# ---------------------------------------------------------------------------

MAGIC = b"XLGAN"
VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1, "leaky_relu": 2, "tanh": 3, "sigmoid": 4}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_FLAG_STATE = 1


def _layer_arrays(layer) -> list[np.ndarray]:
    if isinstance(layer, DenseLayer):
        return [layer.weight, layer.bias]
    return [layer.gamma, layer.beta, layer.running_mean, layer.running_var]


def save_gan(model: GanModel, path, include_state: bool = False) -> None:
    """Write the model; parameters as float32 little-endian.

    With ``include_state`` a trailer holds the float64 parameters, Adam
    moments and RNG position so training can resume exactly.
    """
    nets = model.networks()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HIBQB", VERSION, model.dim, model.layer, model.iteration, _FLAG_STATE if include_state else 0)
    for name in NETWORKS:
        net = nets[name]
        out += struct.pack("<H", len(net.layers))
        for layer in net.layers:
            if isinstance(layer, DenseLayer):
                out += struct.pack("<BBIId", 0, _ACT_CODES[layer.activation], layer.in_dim, layer.out_dim, layer.alpha)
            else:
                out += struct.pack("<BBIId", 1, 0, layer.features, layer.features, layer.momentum)
                out += struct.pack("<d", layer.epsilon)
    for name in NETWORKS:
        for layer in nets[name].layers:
            for arr in _layer_arrays(layer):
                out += np.asarray(arr, dtype="<f4").tobytes()
    if include_state:
        out += struct.pack("<QQ", model.rng.seed, model.rng.counter)
        for name in NETWORKS:
            st = model.adam[name]
            out += struct.pack("<Qddddd", st.step, st.lr, st.beta1, st.beta2, st.epsilon, st.lr_decay)
            for arr in st.m + st.v:
                out += np.asarray(arr, dtype="<f8").tobytes()
            for layer in nets[name].layers:
                for arr in _layer_arrays(layer):
                    out += np.asarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise GanFormatError("truncated GAN model file")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def array(self, shape, dtype: str) -> np.ndarray:
        n = int(np.prod(shape))
        size = n * np.dtype(dtype).itemsize
        if self.pos + size > len(self.data):
            raise GanFormatError("truncated GAN model file")
        arr = np.frombuffer(self.data, dtype=dtype, count=n, offset=self.pos).astype(np.float64).reshape(shape)
        self.pos += size
        return arr


def load_gan(path) -> GanModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MAGIC)] != MAGIC:
        raise GanFormatError(f"{path}: not a GAN model file (bad magic)")
    r = _Reader(data)
    r.pos = len(MAGIC)
    version, dim, layer_id, iteration, flags = r.unpack("<HIBQB")
    if version != VERSION:
        raise GanFormatError(f"{path}: unsupported version {version}")
    nets: dict[str, Network] = {}
    for name in NETWORKS:
        (nlayers,) = r.unpack("<H")
        layers = []
        for _ in range(nlayers):
            kind, act, a, b, extra = r.unpack("<BBIId")
            if kind == 0:
                if act not in _ACT_NAMES:
                    raise GanFormatError(f"{path}: unknown activation code {act}")
                layers.append(DenseLayer(np.zeros((a, b)), np.zeros(b), _ACT_NAMES[act], extra if extra > 0 else 0.2))
            elif kind == 1:
                (eps,) = r.unpack("<d")
                layers.append(BatchNormLayer(np.ones(a), np.zeros(a), np.zeros(a), np.ones(a), extra, eps))
            else:
                raise GanFormatError(f"{path}: unknown layer kind {kind}")
        nets[name] = Network(layers)

    def fill(dtype: str):
        for name in NETWORKS:
            for layer in nets[name].layers:
                for arr in _layer_arrays(layer):
                    arr[...] = r.array(arr.shape, dtype)

    fill("<f4")
    adam = {k: AdamState.for_params(n.params()) for k, n in nets.items()}
    rng = Rng(0)
    if flags & _FLAG_STATE:
        seed, counter = r.unpack("<QQ")
        rng = Rng(seed, counter)
        for name in NETWORKS:
            step, lr, b1, b2, eps, decay = r.unpack("<Qddddd")
            params = nets[name].params()
            m = [r.array(p.shape, "<f8") for p in params]
            v = [r.array(p.shape, "<f8") for p in params]
            adam[name] = AdamState(m, v, step, lr, b1, b2, eps, decay)
            for layer in nets[name].layers:
                for arr in _layer_arrays(layer):
                    arr[...] = r.array(arr.shape, "<f8")
    if r.pos != len(data):
        raise GanFormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    g1 = nets["g1"]
    if g1.in_dim != dim:
        raise GanFormatError(f"{path}: generator input {g1.in_dim} disagrees with header dim {dim}")
    return GanModel(layer_id, dim, nets["g1"], nets["g2"], nets["d_valid"], nets["d_domain"], adam, rng, iteration)


def config_dict(config: GanTrainConfig) -> dict:
    return asdict(config)

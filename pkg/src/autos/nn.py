"""Small tanh MLP with hand-written backprop, momentum SGD and a gradient oracle.

Parameters of a :class:`Model` are exposed as a flat list
``[W_0, b_0, ..., W_L, b_L, P_w, P_b]``; gradients use the same layout so
optimizers, aggregation and the finite-difference check all work on plain
lists of arrays.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(PROB_FLOOR))

Params = list  # list[np.ndarray]


@dataclass
class Model:
    """Feature extractor (tanh MLP) followed by an affine decision layer."""

    phi_layers: list[tuple[np.ndarray, np.ndarray]]
    decision_w: np.ndarray  # (C, hidden); rows are the class weight vectors
    decision_b: np.ndarray  # (C,)

    def __post_init__(self):
        width = None
        for W, b in self.phi_layers:
            if width is not None and W.shape[1] != width:
                raise ShapeError(f"layer input {W.shape[1]} does not match previous width {width}")
            if b.shape != (W.shape[0],):
                raise ShapeError("bias shape does not match layer")
            width = W.shape[0]
        if self.decision_w.shape[1] != width or self.decision_b.shape != (self.decision_w.shape[0],):
            raise ShapeError("decision layer does not match feature width")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.phi_layers[0][0].shape[1], self.decision_w.shape[1], self.decision_w.shape[0])

    def params(self) -> Params:
        out = []
        for W, b in self.phi_layers:
            out += [W, b]
        return out + [self.decision_w, self.decision_b]

    @classmethod
    def from_params(cls, params: Sequence[np.ndarray]) -> "Model":
        params = [np.array(p, dtype=np.float64) for p in params]
        layers = [(params[i], params[i + 1]) for i in range(0, len(params) - 2, 2)]
        return cls(layers, params[-2], params[-1])

    def copy(self) -> "Model":
        return Model.from_params(self.params())

    def zeros_like(self) -> Params:
        return [np.zeros_like(p) for p in self.params()]


def init_model(d_in: int, hidden: int, C: int, rng: np.random.Generator, n_hidden: int = 1) -> Model:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    widths = [d_in] + [hidden] * n_hidden
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append((rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)))
    bound = 1.0 / np.sqrt(hidden)
    return Model(layers, rng.uniform(-bound, bound, (C, hidden)), rng.uniform(-bound, bound, C))


@dataclass
class Hyperparams:
    mu: float = 0.1
    eta0: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    alpha: float | None = None  # None -> per radius metric, see alpha_for
    lam: float = 0.5
    beta: float = 0.003
    gamma: float = 0.5
    theta: float = 0.4
    delta: float = 1.0
    sigma_mode: str = "epoch"  # epoch | progress | never
    radius_metric: str = "mean"  # mean | rms | max
    density_exponent: str = "1"  # "1" (as printed) or "d" (true ball volume)
    tau: float = 10.0
    epochs: int = 30

    def __post_init__(self):
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        for name in ("momentum", "lam", "beta", "gamma", "theta", "delta", "tau"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.radius_metric not in ("mean", "rms", "max"):
            raise ValueError(f"unknown radius metric {self.radius_metric!r}")
        if str(self.density_exponent) not in ("1", "d"):
            raise ValueError("density_exponent must be '1' or 'd'")
        self.density_exponent = str(self.density_exponent)
        if self.sigma_mode not in ("epoch", "progress", "never"):
            raise ValueError(f"unknown sigma mode {self.sigma_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @property
    def radius_alpha(self) -> float:
        return alpha_for(self.radius_metric) if self.alpha is None else self.alpha


def alpha_for(metric: str) -> float:
    """Radius multiplier: 1 for mean and max radii, 1.5 for the RMS radius."""
    return 1.5 if metric == "rms" else 1.0


@dataclass
class TrainState:
    velocity: Params
    epoch_index: int = 0
    progress: float = 0.0

    @classmethod
    def for_params(cls, params: Params, epoch_index=0, progress=0.0) -> "TrainState":
        return cls([np.zeros_like(p) for p in params], epoch_index, progress)


# --------------------------------------------------------------- forward

@dataclass
class _Cache:
    inputs: list = field(default_factory=list)  # input to each phi layer
    acts: list = field(default_factory=list)  # tanh outputs
    logits: np.ndarray | None = None


def _check_batch(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise ShapeError(f"batch of shape {x.shape} does not match model input width {model.dims[0]}")
    return x


def _forward(model: Model, x: np.ndarray) -> _Cache:
    cache = _Cache()
    h = _check_batch(model, x)
    for W, b in model.phi_layers:
        cache.inputs.append(h)
        h = np.tanh(h @ W.T + b)
        cache.acts.append(h)
    cache.logits = h @ model.decision_w.T + model.decision_b
    return cache


def logits(model: Model, x: np.ndarray) -> np.ndarray:
    return _forward(model, x).logits


def forward(model: Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (features, probabilities) for a batch."""
    cache = _forward(model, x)
    return cache.acts[-1], softmax(cache.logits, axis=1)


def safe_log_probs(z: np.ndarray) -> np.ndarray:
    return np.maximum(log_softmax(z, axis=1), LOG_FLOOR)


def backward(model: Model, cache: _Cache, dlogits: np.ndarray) -> Params:
    """Gradient of a scalar loss given its gradient w.r.t. the logits."""
    h = cache.acts[-1]
    grads = [dlogits.T @ h, dlogits.sum(axis=0)]
    dh = dlogits @ model.decision_w
    for i in range(len(model.phi_layers) - 1, -1, -1):
        W, _ = model.phi_layers[i]
        dpre = dh * (1.0 - cache.acts[i] ** 2)
        grads = [dpre.T @ cache.inputs[i], dpre.sum(axis=0)] + grads
        dh = dpre @ W
    return grads


def loss_and_grads(model: Model, x: np.ndarray,
                   head: Callable[[np.ndarray], tuple[float, np.ndarray]]) -> tuple[float, Params]:
    """Run forward, let ``head`` map logits to (loss, dloss/dlogits), backprop."""
    cache = _forward(model, x)
    loss, dz = head(cache.logits)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    return float(loss), backward(model, cache, dz)


# ---------------------------------------------------------------- losses

def label_smooth(onehot, mu: float, C: int | None = None) -> np.ndarray:
    """(1 - mu) * y + mu / C, row-wise for 2-D input."""
    y = np.asarray(onehot, dtype=np.float64)
    C = y.shape[-1] if C is None else C
    return (1.0 - mu) * y + mu / C


def one_hot(labels, C: int) -> np.ndarray:
    return np.eye(C)[np.asarray(labels, dtype=np.int64)]


def cross_entropy_head(targets: np.ndarray):
    """Mean over rows of -sum_c targets * log softmax(z)."""
    targets = np.asarray(targets, dtype=np.float64)

    def head(z):
        n = z.shape[0]
        loss = -np.sum(targets * safe_log_probs(z)) / n
        p = softmax(z, axis=1)
        return loss, (p * targets.sum(axis=1, keepdims=True) - targets) / n

    return head


def smoothed_ce_loss(model: Model, x: np.ndarray, labels, mu: float) -> tuple[float, Params]:
    """Label-smoothed cross entropy of the source classifier, with exact grads."""
    C = model.dims[2]
    return loss_and_grads(model, x, cross_entropy_head(label_smooth(one_hot(labels, C), mu, C)))


def mean_cross_entropy(p_ref: np.ndarray, probs: np.ndarray) -> float:
    """Mean over rows of -sum p_ref * log probs (probs clamped)."""
    return float(-np.mean(np.sum(p_ref * np.log(np.maximum(probs, PROB_FLOOR)), axis=1)))


# ------------------------------------------------------------- optimizer

def sgd_step(params: Params, grads: Params, state: TrainState, eta: float, momentum: float) -> Params:
    """Classical momentum: v <- momentum * v + g; w <- w - eta * v. Returns new arrays."""
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError("params, grads and momentum buffers differ in length")
    out = []
    for i, (w, g) in enumerate(zip(params, grads)):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {w.shape}")
        state.velocity[i] = momentum * state.velocity[i] + g
        out.append(w - eta * state.velocity[i])
    return out


def train_step(model: Model, grads: Params, state: TrainState, eta: float, momentum: float) -> Model:
    return Model.from_params(sgd_step(model.params(), grads, state, eta, momentum))


def schedules(eta0: float, p: float, epoch_index: int) -> tuple[float, float]:
    """Learning rate eta0 / (1 + 10 p)^0.75 and selection slack sigma = 1 / (2 * epoch)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress {p} outside [0, 1]")
    if epoch_index < 1:
        raise ValueError("epoch_index starts at 1")
    return eta0 / (1.0 + 10.0 * p) ** 0.75, 1.0 / (2.0 * epoch_index)


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------- oracle

def finite_diff_grad(loss_fn: Callable[[Params], float], params: Sequence[np.ndarray],
                     eps: float = 1e-4) -> Params:
    """Central differences, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for arr in work:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn(work)
            flat[j] = orig - eps
            down = loss_fn(work)
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("non-finite loss during finite differencing")
            gflat[j] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(a: Params, b: Params, floor: float = 1e-8) -> float:
    num = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    den = max(max(float(np.max(np.abs(x))) for x in a), max(float(np.max(np.abs(y))) for y in b), floor)
    return num / den


# ------------------------------------------------------------ checkpoint

def model_to_dict(model: Model, seed: int | None = None, **extra) -> dict:
    d_in, hidden, C = model.dims
    doc = {
        "dims": {"d_in": d_in, "hidden": hidden, "C": C, "n_hidden": len(model.phi_layers)},
        "seed": seed,
        "params": [{"shape": list(p.shape), "values": p.reshape(-1).tolist()} for p in model.params()],
    }
    doc.update(extra)
    return doc


def model_from_dict(doc: dict) -> Model:
    params = [np.array(p["values"], dtype=np.float64).reshape(p["shape"]) for p in doc["params"]]
    return Model.from_params(params)


def save_checkpoint(model: Model, path, seed: int | None = None, **extra) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model, seed, **extra), indent=1) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[Model, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return model_from_dict(doc), doc

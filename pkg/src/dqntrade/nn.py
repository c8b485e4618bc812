"""Dueling Q-network with layer-normalized tanh towers, hand-derived
backpropagation and Adam, in float64 numpy.

Two independent towers read the same observation:

    action_value: fc0 -> LN0 -> tanh -> fc1 -> LN1 -> tanh -> out (n_actions)
    state_value:  fc0 -> LN0 -> tanh -> fc1 -> LN1 -> tanh -> out (1)

and are combined as q = v + a - mean(a).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

TOWERS = ("action_value", "state_value")
LN_EPS = 1e-5


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int = 180
    hidden: tuple = (64, 64)
    n_actions: int = 3

    def __post_init__(self):
        if self.input_dim < 1 or self.n_actions < 1 or not self.hidden or min(self.hidden) < 2:
            raise ConfigError(f"invalid network spec {self}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def tower_out(self, tower: str) -> int:
        return self.n_actions if tower == "action_value" else 1

    def param_shapes(self) -> list[tuple[str, tuple]]:
        """Parameter names and shapes in the fixed serialization order."""
        shapes = []
        for tower in TOWERS:
            fan_in = self.input_dim
            for i, h in enumerate(self.hidden):
                shapes += [
                    (f"{tower}/fc{i}/w", (fan_in, h)),
                    (f"{tower}/fc{i}/b", (h,)),
                    (f"{tower}/ln{i}/gamma", (h,)),
                    (f"{tower}/ln{i}/beta", (h,)),
                ]
                fan_in = h
            shapes += [
                (f"{tower}/out/w", (fan_in, self.tower_out(tower))),
                (f"{tower}/out/b", (self.tower_out(tower),)),
            ]
        return shapes


def layer_norm(x, gamma, beta, eps: float = LN_EPS):
    """gamma * (x - mean) / sqrt(var + eps) + beta over the last axis
    (population variance)."""
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def init_params(spec: MlpSpec, rng: np.random.Generator) -> dict:
    params = {}
    for name, shape in spec.param_shapes():
        kind = name.rsplit("/", 1)[1]
        if kind == "w":
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif kind == "gamma":
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _views(flat: np.ndarray, spec: MlpSpec) -> dict:
    views, off = {}, 0
    for name, shape in spec.param_shapes():
        n = int(np.prod(shape))
        views[name] = flat[off : off + n].reshape(shape)
        off += n
    return views


def _n_flat(spec: MlpSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in spec.param_shapes())


@dataclass
class ForwardCache:
    x: np.ndarray
    layers: dict = field(default_factory=dict)


class QNetwork:
    """One dueling Q-function (both towers).

    All parameters live in one contiguous vector ``flat``; ``params`` maps
    names to reshaped views of it. Gradients use the same layout.
    """

    def __init__(self, spec: MlpSpec, params: dict):
        self.spec = spec
        self.flat = np.empty(_n_flat(spec))
        self.params = _views(self.flat, spec)
        for name, shape in spec.param_shapes():
            self.params[name][...] = np.asarray(params[name], dtype=float).reshape(shape)
        self.grad_flat = np.zeros_like(self.flat)
        self.grads = _views(self.grad_flat, spec)

    @classmethod
    def create(cls, spec: MlpSpec, rng: np.random.Generator) -> "QNetwork":
        return cls(spec, init_params(spec, rng))

    def copy(self) -> "QNetwork":
        return QNetwork(self.spec, self.params)

    @property
    def n_params(self) -> int:
        return self.flat.size

    def _tower_forward(self, tower: str, x: np.ndarray, cache: dict | None):
        p = self.params
        h = x
        for i in range(len(self.spec.hidden)):
            z = h @ p[f"{tower}/fc{i}/w"] + p[f"{tower}/fc{i}/b"]
            c = z - z.mean(axis=1, keepdims=True)
            s = np.sqrt((c * c).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = c / s
            out = np.tanh(p[f"{tower}/ln{i}/gamma"] * xhat + p[f"{tower}/ln{i}/beta"])
            if cache is not None:
                cache[(tower, i)] = (h, xhat, s, out)
            h = out
        if cache is not None:
            cache[(tower, "out")] = h
        return h @ p[f"{tower}/out/w"] + p[f"{tower}/out/b"]

    def forward(self, obs) -> tuple[np.ndarray, ForwardCache]:
        """Q-values for a batch (B, input_dim) or a single observation, plus
        the activation cache needed by ``backward``."""
        x = np.asarray(obs, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.spec.input_dim:
            raise DataError(f"observation shape {x.shape} does not match input_dim {self.spec.input_dim}")
        cache = ForwardCache(x2)
        a = self._tower_forward("action_value", x2, cache.layers)
        v = self._tower_forward("state_value", x2, cache.layers)
        q = v + a - a.mean(axis=1, keepdims=True)
        return (q[0] if single else q), cache

    def q_values(self, obs) -> np.ndarray:
        return self.forward(obs)[0]

    def _tower_backward(self, tower: str, dout: np.ndarray, cache: dict, grads: dict):
        p = self.params
        h = cache[(tower, "out")]
        np.matmul(h.T, dout, out=grads[f"{tower}/out/w"])
        dout.sum(axis=0, out=grads[f"{tower}/out/b"])
        dh = dout @ p[f"{tower}/out/w"].T
        for i in reversed(range(len(self.spec.hidden))):
            h_in, xhat, s, out = cache[(tower, i)]
            du = dh * (1.0 - out * out)
            (du * xhat).sum(axis=0, out=grads[f"{tower}/ln{i}/gamma"])
            du.sum(axis=0, out=grads[f"{tower}/ln{i}/beta"])
            dxhat = du * p[f"{tower}/ln{i}/gamma"]
            dz = (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            ) / s
            np.matmul(h_in.T, dz, out=grads[f"{tower}/fc{i}/w"])
            dz.sum(axis=0, out=grads[f"{tower}/fc{i}/b"])
            if i > 0:
                dh = dz @ p[f"{tower}/fc{i}/w"].T

    def backward(self, cache: ForwardCache, dq) -> dict:
        """Gradients of sum(dq * q) with respect to every trainable parameter.

        The returned dict holds views into ``grad_flat``, which is overwritten
        by the next call; copy it to keep it.
        """
        dq = np.asarray(dq, dtype=float)
        if dq.ndim == 1:
            dq = dq[None, :]
        da = dq - dq.mean(axis=1, keepdims=True)
        dv = dq.sum(axis=1, keepdims=True)
        self._tower_backward("action_value", da, cache.layers, self.grads)
        self._tower_backward("state_value", dv, cache.layers, self.grads)
        return self.grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """Bias-corrected Adam update, applied in place; returns ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class DQNModel:
    """Online and target Q-networks plus the frozen ``eps`` scalar.

    ``eps`` is bookkeeping only: it is never read by the forward pass and
    never trained, but it is counted and serialized.
    """

    def __init__(self, online: QNetwork, target: QNetwork | None = None, eps=None):
        self.online = online
        self.target = target if target is not None else online.copy()
        self.eps = np.ones(1) if eps is None else np.asarray(eps, dtype=float).reshape(1)

    @classmethod
    def create(cls, spec: MlpSpec, rng: np.random.Generator) -> "DQNModel":
        return cls(QNetwork.create(spec, rng))

    @property
    def spec(self) -> MlpSpec:
        return self.online.spec

    def n_parameters(self) -> int:
        return self.online.n_params + self.target.n_params + self.eps.size

    def hard_update_target(self) -> QNetwork:
        np.copyto(self.target.flat, self.online.flat)
        return self.target

    def copy(self) -> "DQNModel":
        return DQNModel(self.online.copy(), self.target.copy(), self.eps.copy())


# ----------------------------------------------------------------------------
# Binary checkpoint format (all integers and floats little-endian):
#   magic  b"DQNQ"        4 bytes
#   endian b"<"           1 byte tag
#   version u32 = 1
#   input_dim u32, n_actions u32, n_hidden u32, hidden sizes u32 * n_hidden
#   eps f64
#   online parameters, then target parameters, each in MlpSpec.param_shapes()
#   order, row-major f64.

MAGIC = b"DQNQ"
VERSION = 1


def save_model(model: DQNModel, path: str | Path) -> Path:
    path = Path(path)
    spec = model.spec
    head = MAGIC + b"<" + struct.pack("<4I", VERSION, spec.input_dim, spec.n_actions, len(spec.hidden))
    head += struct.pack(f"<{len(spec.hidden)}I", *spec.hidden)
    chunks = [head, model.eps.astype("<f8").tobytes()]
    for net in (model.online, model.target):
        for name, _ in spec.param_shapes():
            chunks.append(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_model(path: str | Path) -> DQNModel:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC or buf[4:5] != b"<":
        raise DataError(f"{path}: not a Q-network checkpoint")
    version, input_dim, n_actions, n_hidden = struct.unpack_from("<4I", buf, 5)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 5 + 16
    hidden = struct.unpack_from(f"<{n_hidden}I", buf, off)
    off += 4 * n_hidden
    spec = MlpSpec(input_dim, tuple(hidden), n_actions)
    eps = np.frombuffer(buf, "<f8", 1, off).astype(float)
    off += 8
    nets = []
    for _ in range(2):
        params = {}
        for name, shape in spec.param_shapes():
            count = int(np.prod(shape))
            params[name] = np.frombuffer(buf, "<f8", count, off).astype(float).reshape(shape)
            off += 8 * count
        nets.append(QNetwork(spec, params))
    if off != len(buf):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return DQNModel(nets[0], nets[1], eps)


"""Small dense tanh networks with hand-written reverse mode, Adam, and checkpoints.

Parameters live in one flat float64 vector per network; weight matrices and
bias vectors are views into it. That makes federated averaging and
checkpointing plain vector operations.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np


class StaleCacheError(RuntimeError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PolicyParams:
    """Flat parameter vector plus the layer sizes needed to rebuild the net."""
    sizes: tuple
    flat: np.ndarray

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64)
        if flat.shape != (num_params(self.sizes),):
            raise ValueError(f"parameter vector of length {flat.size} does not fit sizes {self.sizes}")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))


def num_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class ForwardCache:
    activations: list
    version: int
    owner: int


class DenseNet:
    """Affine layers with tanh between them and an identity output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, out_scale: float = 1.0,
                 params: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self._version = 0
        n = num_params(self.sizes)
        if params is not None:
            flat = np.array(params, dtype=np.float64)
            if flat.shape != (n,):
                raise ValueError("parameter vector has the wrong length")
        else:
            flat = np.zeros(n)
            if rng is not None:
                self._flat = flat
                self._bind()
                for li, W in enumerate(self.weights):
                    bound = np.sqrt(6.0 / W.shape[0])  # He-uniform
                    W[...] = rng.uniform(-bound, bound, size=W.shape)
                    if li == len(self.weights) - 1:
                        W *= out_scale
        self._flat = flat
        self._bind()

    def _bind(self):
        self.weights, self.biases = [], []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(self._flat[off:off + a * b].reshape(a, b))
            off += a * b
            self.biases.append(self._flat[off:off + b])
            off += b

    @property
    def params(self) -> np.ndarray:
        return self._flat

    @params.setter
    def params(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._flat.shape:
            raise ValueError("parameter vector has the wrong length")
        self._flat[...] = value
        self._version += 1

    @property
    def n_params(self) -> int:
        return self._flat.size

    def flatten(self) -> PolicyParams:
        return PolicyParams(self.sizes, self._flat.copy())

    @classmethod
    def unflatten(cls, pp: PolicyParams) -> "DenseNet":
        return cls(pp.sizes, params=pp.flat)

    def copy(self) -> "DenseNet":
        return DenseNet(self.sizes, params=self._flat.copy())

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if li < last:
                h = np.tanh(h)
            acts.append(h)
        if cache:
            return h, ForwardCache(acts, self._version, id(self))
        return h

    __call__ = forward

    def backward(self, cache: ForwardCache, grad_out) -> np.ndarray:
        """Gradient of ``sum(grad_out * output)`` w.r.t. the flat parameters."""
        if cache.owner != id(self) or cache.version != self._version:
            raise StaleCacheError("forward cache does not match current parameters")
        acts = cache.activations
        delta = np.asarray(grad_out, dtype=np.float64)
        if delta.shape != acts[-1].shape:
            raise ValueError("output gradient shape mismatch")
        grad = np.zeros_like(self._flat)
        offsets = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            offsets.append(off)
            off += a * b + b
        for li in range(len(self.weights) - 1, -1, -1):
            a_in = acts[li]
            n_in, n_out = self.weights[li].shape
            o = offsets[li]
            if delta.ndim == 1:
                gW = np.outer(a_in, delta)
                gb = delta
            else:
                gW = a_in.T @ delta
                gb = delta.sum(axis=0)
            grad[o:o + n_in * n_out] = gW.ravel()
            grad[o + n_in * n_out:o + n_in * n_out + n_out] = gb
            if li > 0:
                delta = (delta @ self.weights[li].T) * (1.0 - a_in ** 2)
        return grad


class Adam:
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Return updated parameters for a descent step along ``grads``."""
        grads = np.asarray(grads, dtype=np.float64)
        if grads.shape != params.shape or self.m.shape != params.shape:
            raise ValueError("gradient/parameter/optimizer shapes differ")
        if not np.all(np.isfinite(grads)):
            bad = int(np.count_nonzero(~np.isfinite(grads)))
            raise NonFiniteGradientError(f"{bad} non-finite gradient entries; step rejected")
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def apply(self, net: DenseNet, grads: np.ndarray) -> None:
        net.params = self.step(net.params, grads)

    def reset(self) -> None:
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0

    def state(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t}


# --- checkpoints -------------------------------------------------------------
#
# layout: b"SEMOFFCK" | u32 version | u64 header length | JSON header | raw <f8 arrays
# in header order. Floats are never printed, so round-trips are bit exact.

_MAGIC = b"SEMOFFCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, nets: dict[str, DenseNet], optimizers: dict[str, Adam] | None = None,
                    meta: dict[str, Any] | None = None) -> None:
    optimizers = optimizers or {}
    arrays: list[np.ndarray] = []
    entries = []
    for name, net in nets.items():
        entry = {"name": name, "sizes": list(net.sizes), "arrays": ["params"]}
        arrays.append(net.params)
        if name in optimizers:
            opt = optimizers[name]
            entry["optimizer"] = opt.state()
            entry["arrays"] += ["adam_m", "adam_v"]
            arrays += [opt.m, opt.v]
        entries.append(entry)
    header = json.dumps({"version": CHECKPOINT_VERSION, "nets": entries, "meta": meta or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, Adam], dict]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a semoff checkpoint")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    off = 20 + hlen
    nets, opts = {}, {}
    for entry in header["nets"]:
        n = num_params(entry["sizes"])
        chunks = {}
        for arr_name in entry["arrays"]:
            chunks[arr_name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
            off += 8 * n
        nets[entry["name"]] = DenseNet(entry["sizes"], params=chunks["params"])
        if "optimizer" in entry:
            st = entry["optimizer"]
            opt = Adam(n, st["lr"], st["beta1"], st["beta2"], st["eps"])
            opt.m, opt.v, opt.t = chunks["adam_m"], chunks["adam_v"], st["t"]
            opts[entry["name"]] = opt
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return nets, opts, header["meta"]

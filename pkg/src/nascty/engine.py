"""Minimal 1-D CNN engine: forward, backprop, Adam, training.

Activations are laid out as ``(batch, length, channels)`` until ``Flatten``.
Convolutions are stride-1 cross-correlations with 'same' zero padding;
pooling drops a partial final window. All arithmetic runs in the network's
dtype (float32 by default, float64 for gradient checks).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels as K
from ._kernels import SELU_ALPHA, SELU_SCALE

LOG_CLAMP = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# im2col is used while the column matrix stays below this many bytes
_IM2COL_LIMIT = 1 << 27


# ---------------------------------------------------------------- layer specs

@dataclass(frozen=True)
class Conv1D:
    n_filters: int
    kernel_size: int


@dataclass(frozen=True)
class BatchNorm:
    pass


@dataclass(frozen=True)
class Activation:
    kind: str = "selu"  # "selu" | "relu"


@dataclass(frozen=True)
class Pool:
    kind: str  # "avg" | "max"
    size: int
    stride: int


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    n_neurons: int


@dataclass(frozen=True)
class SoftmaxOutput:
    n_classes: int = 256


SPEC_TYPES = {cls.__name__: cls for cls in (Conv1D, BatchNorm, Activation, Pool, Flatten, Dense, SoftmaxOutput)}


def spec_to_dict(spec):
    return {"type": type(spec).__name__, **asdict(spec)}


def spec_from_dict(d):
    d = dict(d)
    cls = SPEC_TYPES[d.pop("type")]
    return cls(**d)


def pooled_length(length, size, stride):
    """Output length of a window-``size``, step-``stride`` pool; partial windows dropped."""
    return (length - size) // stride + 1


class ShapeError(ValueError):
    def __init__(self, layer_index, message):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


# --------------------------------------------------------------------- layers

class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.state = {}  # non-trainable buffers

    def forward(self, x, training):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class ConvLayer(Layer):
    def __init__(self, spec, in_channels, rng, dtype):
        super().__init__()
        k, f = spec.kernel_size, spec.n_filters
        fan_in = in_channels * k
        self.k = k
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (in_channels, k, f)).astype(dtype)
        self.params["b"] = np.zeros(f, dtype=dtype)

    def _pad(self, x):
        left = (self.k - 1) // 2
        return np.pad(x, ((0, 0), (left, self.k - 1 - left), (0, 0)))

    def forward(self, x, training):
        n, length, c = x.shape
        W = self.params["W"]
        xp = self._pad(x)
        self._xp = xp
        self._shape = x.shape
        if n * length * c * self.k * x.itemsize <= _IM2COL_LIMIT:
            cols = sliding_window_view(xp, self.k, axis=1).reshape(n * length, c * self.k)
            self._cols = cols
            out = cols @ W.reshape(c * self.k, -1)
        else:
            self._cols = None
            out = np.zeros((n * length, W.shape[2]), dtype=x.dtype)
            for j in range(self.k):
                out += xp[:, j:j + length, :].reshape(n * length, c) @ W[:, j, :]
        out += self.params["b"]
        return out.reshape(n, length, -1)

    def backward(self, dout):
        n, length, c = self._shape
        W = self.params["W"]
        d2 = dout.reshape(n * length, -1)
        self.grads["b"] = d2.sum(axis=0)
        if self._cols is not None:
            self.grads["W"] = (self._cols.T @ d2).reshape(W.shape)
            dcols = (d2 @ W.reshape(c * self.k, -1).T).reshape(n, length, c, self.k)
            dxp = K.col2im_add(dcols, length, self.k)
        else:
            dW = np.empty_like(W)
            dxp = np.zeros_like(self._xp)
            for j in range(self.k):
                xj = self._xp[:, j:j + length, :].reshape(n * length, c)
                dW[:, j, :] = xj.T @ d2
                dxp[:, j:j + length, :] += (d2 @ W[:, j, :].T).reshape(n, length, c)
            self.grads["W"] = dW
        left = (self.k - 1) // 2
        self._cols = self._xp = None
        return dxp[:, left:left + length, :]


class BatchNormLayer(Layer):
    """Normalizes over every axis except the last (channels / features)."""

    def __init__(self, channels, dtype):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.state["running_mean"] = np.zeros(channels, dtype=dtype)
        self.state["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training):
        shape = x.shape
        x2 = np.ascontiguousarray(x).reshape(-1, shape[-1])
        if training:
            mu, var = K.bn_stats(x2)
            for key, batch in (("running_mean", mu), ("running_var", var)):
                run = self.state[key]
                run *= BN_MOMENTUM
                run += (1 - BN_MOMENTUM) * batch
        else:
            mu = self.state["running_mean"].astype(np.float64)
            var = self.state["running_var"].astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat, y = K.bn_apply(x2, mu, inv_std, self.params["gamma"], self.params["beta"])
        self._cache = (xhat, inv_std, shape)
        return y.reshape(shape)

    def backward(self, dout):
        xhat, inv_std, shape = self._cache
        d2 = np.ascontiguousarray(dout).reshape(-1, shape[-1])
        dx, dgamma, dbeta = K.bn_backward(xhat, d2, self.params["gamma"], inv_std)
        self.grads["gamma"] = dgamma.astype(dout.dtype)
        self.grads["beta"] = dbeta.astype(dout.dtype)
        return dx.reshape(shape)


class ActivationLayer(Layer):
    def __init__(self, kind):
        super().__init__()
        if kind not in ("selu", "relu"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x, training):
        if self.kind == "relu":
            self._y = np.maximum(x, 0)
        else:
            self._y = K.selu_forward(np.ascontiguousarray(x))
        return self._y

    def backward(self, dout):
        if self.kind == "relu":
            return dout * (self._y > 0)
        return K.selu_backward(self._y, np.ascontiguousarray(dout))


def selu_grad(x):
    return np.where(np.asarray(x) > 0, SELU_SCALE, SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(x, 0)))


class PoolLayer(Layer):
    def __init__(self, spec):
        super().__init__()
        if spec.kind not in ("avg", "max"):
            raise ValueError(f"unknown pooling kind {spec.kind!r}")
        self.kind, self.size, self.stride = spec.kind, spec.size, spec.stride

    def forward(self, x, training):
        x = np.ascontiguousarray(x)
        length = x.shape[1]
        lout = pooled_length(length, self.size, self.stride)
        self._length = length
        if self.kind == "avg":
            return K.avgpool_forward(x, self.size, self.stride, lout)
        out, self._arg = K.maxpool_forward(x, self.size, self.stride, lout)
        return out

    def backward(self, dout):
        dout = np.ascontiguousarray(dout)
        if self.kind == "avg":
            return K.avgpool_backward(dout, self._length, self.size, self.stride)
        return K.maxpool_backward(dout, self._arg, self._length)


class FlattenLayer(Layer):
    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class DenseLayer(Layer):
    def __init__(self, n_in, n_out, rng, dtype, init="he"):
        super().__init__()
        if init == "he":
            W = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
            W = rng.uniform(-limit, limit, (n_in, n_out))
        self.params["W"] = W.astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, training):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class SoftmaxOutputLayer(DenseLayer):
    """Glorot-uniform dense layer followed by softmax.

    ``backward`` takes the gradient with respect to the logits; the loss
    supplies it directly as ``(probs - onehot) / n``.
    """

    def __init__(self, n_in, n_classes, rng, dtype):
        super().__init__(n_in, n_classes, rng, dtype, init="glorot")

    def forward(self, x, training):
        return softmax(super().forward(x, training))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -------------------------------------------------------------------- network

class Network:
    """Layers built from specs plus Adam state; the trainable unit.

    Parameter shapes are fixed by ``specs`` and ``input_length``.
    """

    def __init__(self, specs, input_length, seed=0, dtype=np.float32):
        self.specs = list(specs)
        self.input_length = int(input_length)
        self.dtype = np.dtype(dtype)
        self.init_seed = int(seed)
        self.train_seed: Optional[int] = None
        self.step = 0
        self.adam_m = {}
        self.adam_v = {}
        self.layers = self._build(np.random.default_rng(seed))

    def _build(self, rng):
        if not self.specs or not isinstance(self.specs[-1], SoftmaxOutput):
            raise ShapeError(len(self.specs), "network must end with a SoftmaxOutput layer")
        layers = []
        length, channels, flat = self.input_length, 1, None
        for i, spec in enumerate(self.specs):
            if flat is not None and isinstance(spec, (Conv1D, Pool, Flatten)):
                raise ShapeError(i, f"{type(spec).__name__} after Flatten")
            if flat is None and isinstance(spec, (Dense, SoftmaxOutput)):
                raise ShapeError(i, f"{type(spec).__name__} needs a Flatten before it")
            if isinstance(spec, Conv1D):
                if spec.n_filters < 1 or spec.kernel_size < 1:
                    raise ShapeError(i, f"invalid Conv1D {spec}")
                layers.append(ConvLayer(spec, channels, rng, self.dtype))
                channels = spec.n_filters
            elif isinstance(spec, BatchNorm):
                layers.append(BatchNormLayer(channels if flat is None else flat, self.dtype))
            elif isinstance(spec, Activation):
                layers.append(ActivationLayer(spec.kind))
            elif isinstance(spec, Pool):
                if spec.size < 1 or spec.stride < 1:
                    raise ShapeError(i, f"invalid Pool {spec}")
                length = pooled_length(length, spec.size, spec.stride)
                if length < 1:
                    raise ShapeError(i, f"pooling collapses the sequence to length {length}")
                layers.append(PoolLayer(spec))
            elif isinstance(spec, Flatten):
                flat = length * channels
                layers.append(FlattenLayer())
            elif isinstance(spec, Dense):
                layers.append(DenseLayer(flat, spec.n_neurons, rng, self.dtype))
                flat = spec.n_neurons
            elif isinstance(spec, SoftmaxOutput):
                if i != len(self.specs) - 1:
                    raise ShapeError(i, "SoftmaxOutput must be the last layer")
                layers.append(SoftmaxOutputLayer(flat, spec.n_classes, rng, self.dtype))
            else:
                raise ShapeError(i, f"unsupported layer spec {spec!r}")
        return layers

    @property
    def n_classes(self):
        return self.specs[-1].n_classes

    def parameters(self):
        """Ordered ``{"<layer>.<name>": array}`` view of trainable tensors."""
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def buffers(self):
        return {f"{i}.{name}": b for i, layer in enumerate(self.layers) for name, b in layer.state.items()}

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def forward(self, x, training=False):
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.input_length:
            raise ShapeError(0, f"expected batch of shape (n, {self.input_length}), got {x.shape}")
        out = x.astype(self.dtype, copy=False)[:, :, None]
        for layer in self.layers:
            out = layer.forward(out, training)
        return out

    def predict(self, x, batch_size=512):
        x = np.asarray(x)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return {f"{i}.{name}": g for i, layer in enumerate(self.layers) for name, g in layer.grads.items()}


def init_parameters(specs, input_length, seed=0, dtype=np.float32) -> Network:
    return Network(specs, input_length, seed=seed, dtype=dtype)


def forward(net: Network, batch, training=False):
    return net.forward(batch, training=training)


def cce_loss(probs, labels) -> float:
    """Mean categorical cross-entropy against integer labels, log clamped at 1e-12."""
    probs = np.asarray(probs)
    labels = np.asarray(labels).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError(f"labels must lie in [0, {probs.shape[1] - 1}]")
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p_true.astype(np.float64), LOG_CLAMP))))


def backward(net: Network, batch, labels, training=True):
    """Loss and gradients of the mean CCE with respect to every parameter."""
    labels = np.asarray(labels).astype(np.int64)
    probs = net.forward(batch, training=training)
    loss = cce_loss(probs, labels)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1
    dlogits /= len(labels)
    return loss, net.backward(dlogits)


def adam_step(net: Network, grads, lr=1e-3):
    net.step += 1
    t = net.step
    c1 = 1 - ADAM_BETA1 ** t
    c2 = 1 - ADAM_BETA2 ** t
    for name, p in net.parameters().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(int(name.split(".")[0]), f"gradient {name} has shape {g.shape}, parameter {p.shape}")
        m = net.adam_m.setdefault(name, np.zeros_like(p))
        v = net.adam_v.setdefault(name, np.zeros_like(p))
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype, copy=False)
    return net


def train(net: Network, traces, labels, epochs=10, batch_size=100, lr=1e-3, seed=0, callback=None):
    """Mini-batch Adam on mean CCE; the sample order is reshuffled each epoch from ``seed``.

    Returns the list of per-epoch mean training losses.
    """
    x = np.asarray(traces, dtype=net.dtype)
    y = np.asarray(labels).astype(np.int64)
    rng = np.random.default_rng(seed)
    net.train_seed = int(seed)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = backward(net, x[idx], y[idx])
            adam_step(net, grads, lr)
            total += loss * len(idx)
        history.append(total / len(x))
        if callback is not None:
            callback(epoch, history[-1])
    return history


def evaluate_loss(net: Network, traces, labels, batch_size=512):
    return cce_loss(net.predict(traces, batch_size), labels)


# ------------------------------------------------------------- serialization

NET_MAGIC = b"NASCTYNN"
NET_VERSION = 1


def save_network(net: Network, path):
    """JSON header (specs, tensor table) followed by raw little-endian tensor blobs."""
    tensors = {}
    tensors.update({f"param/{k}": v for k, v in net.parameters().items()})
    tensors.update({f"buffer/{k}": v for k, v in net.buffers().items()})
    tensors.update({f"adam_m/{k}": v for k, v in net.adam_m.items()})
    tensors.update({f"adam_v/{k}": v for k, v in net.adam_v.items()})
    table, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=net.dtype.newbyteorder("<")).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": NET_VERSION,
        "specs": [spec_to_dict(s) for s in net.specs],
        "input_length": net.input_length,
        "dtype": net.dtype.name,
        "init_seed": net.init_seed,
        "train_seed": net.train_seed,
        "step": net.step,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(NET_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs))


def load_network(path) -> Network:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != NET_MAGIC:
        raise ValueError(f"{path}: not a network file")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    header = json.loads(buf[12:12 + hlen])
    if header["version"] != NET_VERSION:
        raise ValueError(f"{path}: unsupported network file version {header['version']}")
    dtype = np.dtype(header["dtype"])
    net = Network([spec_from_dict(d) for d in header["specs"]], header["input_length"],
                  seed=header["init_seed"], dtype=dtype)
    net.train_seed = header["train_seed"]
    net.step = header["step"]
    base = 12 + hlen
    params, buffers = net.parameters(), net.buffers()
    for t in header["tensors"]:
        arr = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=t["nbytes"] // dtype.itemsize,
                            offset=base + t["offset"]).reshape(t["shape"]).astype(dtype)
        kind, name = t["name"].split("/", 1)
        if kind == "param":
            params[name][...] = arr
        elif kind == "buffer":
            buffers[name][...] = arr
        elif kind == "adam_m":
            net.adam_m[name] = arr.copy()
        else:
            net.adam_v[name] = arr.copy()
    return net

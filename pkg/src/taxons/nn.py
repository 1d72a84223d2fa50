"""Minimal neural-network engine: dense, convolutional and transposed-convolutional
layers with exact reverse-mode gradients of a mean-squared-error loss, Adam
updates, finite-difference gradient verification and a binary on-disk format.

Everything is float64 and deterministic: forward/backward are pure functions of
(parameters, input, target).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

# Self-normalizing-unit constants (Klambauer et al. fixed-point values).
SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

ACTIVATIONS = ("linear", "relu", "tanh", "selu")
LAYER_KINDS = ("dense", "conv", "tconv", "flatten", "reshape")

_MAGIC = "taxons-net-v1"


class ShapeError(ValueError):
    """An input, target or parameter array does not match the declared shape."""


class GradientError(ValueError):
    """A gradient update was rejected (wrong shape or non-finite values)."""


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "selu":
        return SELU_LAMBDA * np.where(z > 0.0, z, SELU_ALPHA * np.expm1(z))
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, z: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient with respect to the pre-activation z."""
    if name == "linear":
        return dout
    if name == "relu":
        return dout * (z > 0.0)
    if name == "tanh":
        t = np.tanh(z)
        return dout * (1.0 - t * t)
    if name == "selu":
        return dout * (SELU_LAMBDA * np.where(z > 0.0, 1.0, SELU_ALPHA * np.exp(z)))
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    Dense layers use ``in_dim``/``out_dim``; conv kinds use the channel,
    kernel, stride and padding fields; ``reshape`` uses ``shape``.
    """

    kind: str
    activation: str = "linear"
    in_dim: int | None = None
    out_dim: int | None = None
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    shape: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        conv_fields = (self.kernel, self.stride, self.padding)
        if self.kind in ("conv", "tconv"):
            if any(f is None for f in conv_fields):
                raise ValueError(f"{self.kind} layer requires kernel, stride and padding")
            if self.in_channels is None or self.out_channels is None:
                raise ValueError(f"{self.kind} layer requires in_channels and out_channels")
        else:
            if any(f is not None for f in conv_fields):
                raise ValueError(f"{self.kind} layer must not set kernel/stride/padding")
        if self.kind == "dense" and (self.in_dim is None or self.out_dim is None):
            raise ValueError("dense layer requires in_dim and out_dim")
        if self.kind == "reshape" and self.shape is None:
            raise ValueError("reshape layer requires a target shape")

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape algebra: the output shape this layer produces for input_shape."""
        if self.kind == "dense":
            if input_shape != (self.in_dim,):
                raise ShapeError(f"dense layer expects {(self.in_dim,)}, got {input_shape}")
            return (self.out_dim,)
        if self.kind == "conv":
            c, h, w = _expect_chw(input_shape)
            if c != self.in_channels:
                raise ShapeError(f"conv layer expects {self.in_channels} channels, got {c}")
            oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
            ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
            if oh <= 0 or ow <= 0:
                raise ShapeError(f"conv layer output collapses for input {input_shape}")
            return (self.out_channels, oh, ow)
        if self.kind == "tconv":
            c, h, w = _expect_chw(input_shape)
            if c != self.in_channels:
                raise ShapeError(f"tconv layer expects {self.in_channels} channels, got {c}")
            oh = (h - 1) * self.stride - 2 * self.padding + self.kernel
            ow = (w - 1) * self.stride - 2 * self.padding + self.kernel
            return (self.out_channels, oh, ow)
        if self.kind == "flatten":
            return (int(np.prod(input_shape)),)
        # reshape
        if int(np.prod(input_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {input_shape} into {self.shape}")
        return tuple(self.shape)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "activation": self.activation}
        for name in ("in_dim", "out_dim", "in_channels", "out_channels",
                     "kernel", "stride", "padding"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        if self.shape is not None:
            d["shape"] = list(self.shape)
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        return LayerSpec(**d)


def _expect_chw(shape):
    if len(shape) != 3:
        raise ShapeError(f"expected a (channels, height, width) input, got {shape}")
    return shape


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------

def _im2col(x, k, stride, pad):
    """(N, C, H, W) -> (N, C*k*k, out_h*out_w) patch matrix."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        ie = i + stride * oh
        for j in range(k):
            je = j + stride * ow
            cols[:, :, i, j] = x[:, :, i:ie:stride, j:je:stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(cols, x_shape, k, stride, pad):
    """Scatter-add inverse of _im2col."""
    n, c, h, w = x_shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        ie = i + stride * oh
        for j in range(k):
            je = j + stride * ow
            xp[:, :, i:ie:stride, j:je:stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:-pad, pad:-pad])
    return xp


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class _Layer:
    """One layer: owns its parameter arrays and the local forward/backward math."""

    def __init__(self, spec: LayerSpec, input_shape):
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.output_shape = spec.output_shape(self.input_shape)
        self.weight: np.ndarray | None = None
        self.bias: np.ndarray | None = None

    def init_params(self, rng: np.random.Generator):
        spec = self.spec
        if spec.kind == "dense":
            fan_in = spec.in_dim
            self.weight = _fan_in_uniform(rng, (spec.in_dim, spec.out_dim), fan_in)
            self.bias = np.zeros(spec.out_dim)
        elif spec.kind == "conv":
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            self.weight = _fan_in_uniform(
                rng, (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel), fan_in)
            self.bias = np.zeros(spec.out_channels)
        elif spec.kind == "tconv":
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            self.weight = _fan_in_uniform(
                rng, (spec.in_channels, spec.out_channels, spec.kernel, spec.kernel), fan_in)
            self.bias = np.zeros(spec.out_channels)

    def alloc_params(self):
        self.init_params(np.random.default_rng(0))
        if self.weight is not None:
            self.weight[:] = 0.0

    @property
    def params(self):
        return [] if self.weight is None else [self.weight, self.bias]

    def forward(self, x, want_cache=False):
        spec = self.spec
        n = x.shape[0]
        if spec.kind == "flatten":
            return x.reshape(n, -1), None
        if spec.kind == "reshape":
            return x.reshape((n,) + self.output_shape), None
        if spec.kind == "dense":
            z = x @ self.weight + self.bias
            cache = (x, z) if want_cache else None
            return activate(spec.activation, z), cache
        if spec.kind == "conv":
            cols = _im2col(x, spec.kernel, spec.stride, spec.padding)
            wmat = self.weight.reshape(spec.out_channels, -1)
            z = np.matmul(wmat, cols) + self.bias[:, None]
            z = z.reshape((n,) + self.output_shape)
            cache = (x.shape, cols, z) if want_cache else None
            return activate(spec.activation, z), cache
        # tconv: the linear map is the transpose of a conv from output space to
        # input space whose weight is self.weight read as (out=C_in, in=C_out).
        wmat = self.weight.reshape(spec.in_channels, -1)
        xmat = x.reshape(n, spec.in_channels, -1)
        dcols = np.matmul(wmat.T, xmat)
        z = _col2im(dcols, (n,) + self.output_shape, spec.kernel, spec.stride, spec.padding)
        z += self.bias[None, :, None, None]
        cache = (x, z) if want_cache else None
        return activate(spec.activation, z), cache

    def backward(self, dout, cache):
        """Returns (dx, param_grads)."""
        spec = self.spec
        n = dout.shape[0]
        if spec.kind == "flatten":
            return dout.reshape((n,) + self.input_shape), []
        if spec.kind == "reshape":
            return dout.reshape((n,) + self.input_shape), []
        if spec.kind == "dense":
            x, z = cache
            dz = activate_grad(spec.activation, z, dout)
            dw = x.T @ dz
            db = dz.sum(axis=0)
            return dz @ self.weight.T, [dw, db]
        if spec.kind == "conv":
            x_shape, cols, z = cache
            dz = activate_grad(spec.activation, z, dout).reshape(n, spec.out_channels, -1)
            db = dz.sum(axis=(0, 2))
            dw = _stacked_outer(dz, cols).reshape(self.weight.shape)
            wmat = self.weight.reshape(spec.out_channels, -1)
            dcols = np.matmul(wmat.T, dz)
            dx = _col2im(dcols, x_shape, spec.kernel, spec.stride, spec.padding)
            return dx, [dw, db]
        # tconv
        x, z = cache
        dz = activate_grad(spec.activation, z, dout)
        db = dz.sum(axis=(0, 2, 3))
        cols = _im2col(dz, spec.kernel, spec.stride, spec.padding)
        xmat = x.reshape(n, spec.in_channels, -1)
        dw = _stacked_outer(xmat, cols).reshape(self.weight.shape)
        wmat = self.weight.reshape(spec.in_channels, -1)
        dx = np.matmul(wmat, cols).reshape((n,) + self.input_shape)
        return dx, [dw, db]


def _stacked_outer(a, b):
    """sum_n a[n] @ b[n].T for (N, R, L) x (N, K, L) stacks, as one matmul."""
    n, r, l = a.shape
    k = b.shape[1]
    am = np.ascontiguousarray(a.transpose(1, 0, 2)).reshape(r, n * l)
    bm = np.ascontiguousarray(b.transpose(0, 2, 1)).reshape(n * l, k)
    return am @ bm


def _fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class Network:
    """An ordered stack of layers with a declared input shape.

    Construction validates the whole shape chain, so a network that builds
    never hits a runtime shape error on correctly-shaped inputs.
    """

    def __init__(self, specs, input_shape, rng: np.random.Generator | None = None):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.layers: list[_Layer] = []
        shape = self.input_shape
        for spec in self.specs:
            layer = _Layer(spec, shape)
            if rng is None:
                layer.alloc_params()
            else:
                layer.init_params(rng)
            self.layers.append(layer)
            shape = layer.output_shape
        self.output_shape = shape

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    def _check_input(self, x, shape, name):
        x = np.asarray(x, dtype=np.float64)
        if x.shape == shape:
            return x[None], False
        if x.ndim == len(shape) + 1 and x.shape[1:] == shape:
            return x, True
        raise ShapeError(f"{name} shape {x.shape} does not match declared {shape}")

    def forward(self, x, start: int = 0, stop: int | None = None):
        """Deterministic forward pass. Accepts a single input of the declared
        shape or a batch with one extra leading axis; returns the same form.

        start/stop select a contiguous sub-stack of layers (used to run the
        encoder half of a combined autoencoder network).
        """
        stop = len(self.layers) if stop is None else stop
        in_shape = self.input_shape if start == 0 else self.layers[start].input_shape
        x, batched = self._check_input(x, in_shape, "input")
        for layer in self.layers[start:stop]:
            x, _ = layer.forward(x)
        return x if batched else x[0]

    def loss(self, x, target) -> float:
        """Mean squared error over all output elements."""
        y = self.forward(x)
        t, _ = _target_like(y, target, self.output_shape)
        d = y - t
        return float(np.mean(d * d))

    def backward(self, x, target):
        """Returns (loss, grads) where grads is a list of arrays parallel to
        parameters(); gradients are the exact analytic gradients of the mean
        squared error between forward(x) and target."""
        x, _ = self._check_input(x, self.input_shape, "input")
        caches = []
        out = x
        for layer in self.layers:
            out, cache = layer.forward(out, want_cache=True)
            caches.append(cache)
        t, _ = _target_like(out, target, self.output_shape)
        diff = out - t
        loss = float(np.mean(diff * diff))
        dout = (2.0 / diff.size) * diff
        grads: list[np.ndarray] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dout, pgrads = layer.backward(dout, cache)
            grads = pgrads + grads
        return loss, grads


def _target_like(y, target, declared_shape):
    t = np.asarray(target, dtype=np.float64)
    if t.shape == declared_shape and y.shape[0] == 1:
        return t[None], False
    if t.shape == y.shape:
        return t, True
    raise ShapeError(f"target shape {t.shape} does not match output {y.shape}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for one network's parameter list."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @staticmethod
    def for_network(net: Network, lr: float = 0.001) -> "AdamState":
        params = net.parameters()
        return AdamState(lr=lr,
                         m=[np.zeros_like(p) for p in params],
                         v=[np.zeros_like(p) for p in params])


def adam_step(net: Network, grads, state: AdamState):
    """One in-place Adam update. Rejects non-finite or mis-shaped gradients."""
    params = net.parameters()
    if len(grads) != len(params):
        raise GradientError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise GradientError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise GradientError("non-finite gradient element")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def grad_check(net: Network, x, target, eps: float = 1e-5,
               max_checks: int = 1500, rng: np.random.Generator | None = None,
               grads=None) -> float:
    """Max relative error between analytic gradients and central differences.

    Every parameter is checked, or a random subsample of max_checks positions
    when the network is larger than that. A precomputed gradient list can be
    passed to verify it against the finite-difference oracle.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if grads is None:
        _, grads = net.backward(x, target)
    params = net.parameters()
    positions = [(ai, i) for ai, p in enumerate(params) for i in range(p.size)]
    if len(positions) > max_checks:
        rng = rng or np.random.default_rng(0)
        chosen = rng.choice(len(positions), size=max_checks, replace=False)
        positions = [positions[int(i)] for i in chosen]
    worst = 0.0
    for ai, i in positions:
        p = params[ai]
        orig = p.flat[i]
        p.flat[i] = orig + eps
        lp = net.loss(x, target)
        p.flat[i] = orig - eps
        lm = net.loss(x, target)
        p.flat[i] = orig
        numeric = (lp - lm) / (2.0 * eps)
        analytic = grads[ai].flat[i]
        denom = max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Serialization: JSON header + flat little-endian float64 stream
# ---------------------------------------------------------------------------

def save_network(net: Network, path, meta: dict | None = None):
    arrays = []
    blobs = []
    offset = 0
    for li, layer in enumerate(net.layers):
        for name, arr in (("weight", layer.weight), ("bias", layer.bias)):
            if arr is None:
                continue
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            arrays.append({"layer": li, "name": name,
                           "shape": list(arr.shape), "offset": offset})
            blobs.append(raw)
            offset += len(raw)
    header = {
        "magic": _MAGIC,
        "input_shape": list(net.input_shape),
        "layers": [s.to_dict() for s in net.specs],
        "arrays": arrays,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        for raw in blobs:
            fh.write(raw)


def load_network(path):
    """Returns (network, meta)."""
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blob = fh.read()
    if header.get("magic") != _MAGIC:
        raise ValueError(f"{path}: not a serialized network")
    specs = [LayerSpec.from_dict(d) for d in header["layers"]]
    net = Network(specs, tuple(header["input_shape"]), rng=None)
    for entry in header["arrays"]:
        layer = net.layers[entry["layer"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
        arr = arr.reshape(shape).astype(np.float64)
        if entry["name"] == "weight":
            layer.weight = arr
        else:
            layer.bias = arr
    return net, header["meta"]

"""Minimal numpy convolutional network emitting an S x S probability map.

Tensors are NCHW. The hot path runs in float32; :func:`grad_check` works on a
float64 shadow copy. A network is single-owner mutable state, but inference
(``mode="infer"``) stores nothing on the network and may run concurrently.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from sotrack.config import TrainHyper

DELTA = 1e-7

KINDS = (
    "conv",
    "relu",
    "maxpool",
    "multiscale-pool",
    "fully-connected",
    "dropout",
    "sigmoid-map",
)
KIND_TAGS = {kind: i + 1 for i, kind in enumerate(KINDS)}

WEIGHT_MAGIC = b"SODL"
WEIGHT_VERSION = 1


class NetError(Exception):
    """Base class for network errors."""


class BuildError(NetError, ValueError):
    pass


class DimensionError(NetError, ValueError):
    pass


class StateError(NetError, RuntimeError):
    pass


class TrainingError(NetError, RuntimeError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class WeightFileError(NetError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedVersionError(WeightFileError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack. Only the fields relevant to ``kind`` are used.

    ``in_channels`` / ``in_features`` are optional declarations; when given
    they must match what the previous layer produces.
    """

    kind: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int | None = None
    size: int = 2
    grids: tuple[int, ...] = ()
    units: int = 0
    p: float = 0.0
    in_channels: int | None = None
    in_features: int | None = None

    def __post_init__(self):
        if self.kind not in KIND_TAGS:
            raise BuildError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def conv(cls, filters: int, kernel: int, stride: int = 1, pad: int | None = None,
             in_channels: int | None = None) -> LayerSpec:
        return cls("conv", filters=filters, kernel=kernel, stride=stride, pad=pad,
                   in_channels=in_channels)

    @classmethod
    def relu(cls) -> LayerSpec:
        return cls("relu")

    @classmethod
    def maxpool(cls, size: int = 2) -> LayerSpec:
        return cls("maxpool", size=size)

    @classmethod
    def multiscale_pool(cls, grids=(1, 2, 4)) -> LayerSpec:
        return cls("multiscale-pool", grids=tuple(grids))

    @classmethod
    def fc(cls, units: int, in_features: int | None = None) -> LayerSpec:
        return cls("fully-connected", units=units, in_features=in_features)

    @classmethod
    def dropout(cls, p: float = 0.5) -> LayerSpec:
        return cls("dropout", p=p)

    @classmethod
    def sigmoid_map(cls) -> LayerSpec:
        return cls("sigmoid-map")

    def describe(self, index: int) -> str:
        return f"layer {index} ({self.kind})"


@dataclass(frozen=True)
class NetSpec:
    """Architecture: the layer stack plus map geometry (map size S, stride r)."""

    layers: tuple[LayerSpec, ...]
    map_size: int
    stride: int = 2
    channels: int = 3

    @property
    def input_side(self) -> int:
        return self.map_size * self.stride

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.input_side, self.input_side)


def desk_layers(map_size: int, hidden: int = 512, filters: int = 16) -> tuple[LayerSpec, ...]:
    """Default desk-scale stack: 3 x (conv 5x5, relu, 2x2 pool), pyramid pool, 2 FC."""
    block = (LayerSpec.conv(filters, 5), LayerSpec.relu(), LayerSpec.maxpool(2))
    return block * 3 + (
        LayerSpec.multiscale_pool((1, 2, 4)),
        LayerSpec.fc(hidden),
        LayerSpec.relu(),
        LayerSpec.dropout(0.5),
        LayerSpec.fc(map_size * map_size),
        LayerSpec.sigmoid_map(),
    )


def paper_layers(map_size: int = 50) -> tuple[LayerSpec, ...]:
    """Best-effort 7 conv + 3 FC profile (kernel sizes are a guess)."""
    return (
        LayerSpec.conv(32, 5), LayerSpec.relu(), LayerSpec.maxpool(2),
        LayerSpec.conv(32, 5), LayerSpec.relu(), LayerSpec.maxpool(2),
        LayerSpec.conv(64, 3), LayerSpec.relu(),
        LayerSpec.conv(64, 3), LayerSpec.relu(), LayerSpec.maxpool(2),
        LayerSpec.conv(64, 3), LayerSpec.relu(),
        LayerSpec.conv(64, 3), LayerSpec.relu(),
        LayerSpec.conv(64, 3), LayerSpec.relu(),
        LayerSpec.multiscale_pool((1, 2, 4)),
        LayerSpec.fc(1024), LayerSpec.relu(), LayerSpec.dropout(0.5),
        LayerSpec.fc(512), LayerSpec.relu(),
        LayerSpec.fc(map_size * map_size),
        LayerSpec.sigmoid_map(),
    )


def tiny_spec() -> NetSpec:
    """Small stack used for gradient checking (a few hundred parameters)."""
    layers = (
        LayerSpec.conv(4, 3), LayerSpec.relu(), LayerSpec.maxpool(2),
        LayerSpec.conv(4, 3), LayerSpec.relu(),
        LayerSpec.multiscale_pool((1, 2)),
        LayerSpec.fc(16), LayerSpec.relu(), LayerSpec.dropout(0.5),
        LayerSpec.fc(16),
        LayerSpec.sigmoid_map(),
    )
    return NetSpec(layers=layers, map_size=4, stride=2)


# --------------------------------------------------------------------------
# layer kernels: forward returns (output, cache); backward returns
# (input gradient, [param gradients]).


def _conv_pad(spec: LayerSpec) -> int:
    return spec.kernel // 2 if spec.pad is None else spec.pad


def _conv_forward(spec, params, x):
    W, b = params
    k, s, pad = spec.kernel, spec.stride, _conv_pad(spec)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    y = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
    y = y.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(y), (xp, win, x.shape)


def _conv_backward(spec, params, dy, cache):
    W, _ = params
    xp, win, xshape = cache
    k, s, pad = spec.kernel, spec.stride, _conv_pad(spec)
    dW = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    db = dy.sum(axis=(0, 2, 3))
    dcols = np.tensordot(dy, W, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros(xp.shape, dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[..., i, j]
    dx = dxp[:, :, pad:pad + xshape[2], pad:pad + xshape[3]] if pad else dxp
    return dx, [dW.astype(dy.dtype, copy=False), db]


def _maxpool_forward(spec, x):
    n, c, h, w = x.shape
    s = spec.size
    ho, wo = h // s, w // s
    blocks = x[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s)
    blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def _maxpool_backward(spec, dy, cache):
    idx, xshape = cache
    n, c, h, w = xshape
    s = spec.size
    ho, wo = dy.shape[2], dy.shape[3]
    dblocks = np.zeros((n, c, ho, wo, s * s), dtype=dy.dtype)
    np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=-1)
    dblocks = dblocks.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, :, :ho * s, :wo * s] = dblocks.reshape(n, c, ho * s, wo * s)
    return dx


def _pool_bins(length: int, n: int) -> list[tuple[int, int]]:
    return [((i * length) // n, -((-(i + 1) * length) // n)) for i in range(n)]


def _mspool_forward(spec, x):
    n, c, h, w = x.shape
    outs, idxs = [], []
    for g in spec.grids:
        out = np.empty((n, c, g, g), dtype=x.dtype)
        gidx = []
        for bi, (r0, r1) in enumerate(_pool_bins(h, g)):
            for bj, (c0, c1) in enumerate(_pool_bins(w, g)):
                region = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
                am = region.argmax(axis=-1)
                out[:, :, bi, bj] = np.take_along_axis(region, am[..., None], axis=-1)[..., 0]
                gidx.append((r0, r1, c0, c1, am))
        outs.append(out.reshape(n, -1))
        idxs.append(gidx)
    return np.concatenate(outs, axis=1), (idxs, x.shape)


def _mspool_backward(spec, dy, cache):
    idxs, xshape = cache
    n, c, h, w = xshape
    dx = np.zeros(xshape, dtype=dy.dtype)
    offset = 0
    for g, gidx in zip(spec.grids, idxs):
        dg = dy[:, offset:offset + c * g * g].reshape(n, c, g, g)
        offset += c * g * g
        for k, (r0, r1, c0, c1, am) in enumerate(gidx):
            bi, bj = divmod(k, g)
            dregion = np.zeros((n, c, (r1 - r0) * (c1 - c0)), dtype=dy.dtype)
            np.put_along_axis(dregion, am[..., None], dg[:, :, bi, bj][..., None], axis=-1)
            dx[:, :, r0:r1, c0:c1] += dregion.reshape(n, c, r1 - r0, c1 - c0)
    return dx


def _out_shape(spec: LayerSpec, shape: tuple, index: int, map_size: int) -> tuple:
    """Shape produced by ``spec`` given input ``shape`` (without batch axis)."""
    where = spec.describe(index)
    if spec.kind == "conv":
        if len(shape) != 3:
            raise BuildError(f"{where} needs a C x H x W input, previous layer gives {shape}")
        if spec.in_channels is not None and spec.in_channels != shape[0]:
            raise BuildError(f"{where} declares {spec.in_channels} input channels, "
                             f"layer {index - 1} produces {shape[0]}")
        if spec.filters < 1 or spec.kernel < 1 or spec.stride < 1:
            raise BuildError(f"{where}: filters, kernel and stride must be positive")
        pad = _conv_pad(spec)
        ho = (shape[1] + 2 * pad - spec.kernel) // spec.stride + 1
        wo = (shape[2] + 2 * pad - spec.kernel) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise BuildError(f"{where}: kernel larger than input {shape}")
        return (spec.filters, ho, wo)
    if spec.kind in ("relu", "dropout"):
        if spec.kind == "dropout" and not 0.0 <= spec.p < 1.0:
            raise BuildError(f"{where}: drop probability must be in [0, 1)")
        return shape
    if spec.kind == "maxpool":
        if len(shape) != 3 or shape[1] < spec.size or shape[2] < spec.size:
            raise BuildError(f"{where} cannot pool input {shape}")
        return (shape[0], shape[1] // spec.size, shape[2] // spec.size)
    if spec.kind == "multiscale-pool":
        if len(shape) != 3 or not spec.grids:
            raise BuildError(f"{where} needs a C x H x W input and at least one grid")
        if max(spec.grids) > min(shape[1], shape[2]):
            raise BuildError(f"{where}: grid {max(spec.grids)} exceeds feature map {shape[1:]}")
        return (shape[0] * sum(g * g for g in spec.grids),)
    if spec.kind == "fully-connected":
        width = int(np.prod(shape))
        if spec.in_features is not None and spec.in_features != width:
            raise BuildError(f"{where} declares input width {spec.in_features}, "
                             f"layer {index - 1} produces {width}")
        if spec.units < 1:
            raise BuildError(f"{where}: units must be positive")
        return (spec.units,)
    # sigmoid-map
    width = int(np.prod(shape))
    if width != map_size * map_size:
        raise BuildError(f"{where} receives {width} values from layer {index - 1}, "
                         f"expected {map_size}x{map_size}={map_size * map_size}")
    return (map_size, map_size)


def _param_shapes(spec: LayerSpec, in_shape: tuple) -> list[tuple[int, ...]]:
    if spec.kind == "conv":
        return [(spec.filters, in_shape[0], spec.kernel, spec.kernel), (spec.filters,)]
    if spec.kind == "fully-connected":
        return [(spec.units, int(np.prod(in_shape))), (spec.units,)]
    return []


@dataclass
class Network:
    spec: NetSpec
    params: list[list[np.ndarray]]
    velocity: list[list[np.ndarray]]
    shapes: list[tuple]
    rng: np.random.Generator
    dtype: type = np.float32
    dropout_enabled: bool = True
    grads: list[list[np.ndarray]] | None = None
    _cache: list | None = field(default=None, repr=False)

    @property
    def layers(self) -> tuple[LayerSpec, ...]:
        return self.spec.layers

    @property
    def map_size(self) -> int:
        return self.spec.map_size

    @property
    def num_params(self) -> int:
        return sum(p.size for group in self.params for p in group)

    def forward(self, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
        """Run the stack on an (N, C, H, W) batch and return (N, S, S) maps.

        ``mode="train"`` draws dropout masks from the network RNG and caches
        the activations that :meth:`backward` needs.
        """
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        x = np.asarray(batch)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.spec.input_shape:
            raise DimensionError(f"expected patches of shape {self.spec.input_shape}, "
                                 f"got {x.shape[1:] if x.ndim == 4 else x.shape}")
        x = x.astype(self.dtype, copy=False)
        train = mode == "train"
        caches = [] if train else None
        for spec, params in zip(self.spec.layers, self.params):
            cache = None
            if spec.kind == "conv":
                x, cache = _conv_forward(spec, params, x)
            elif spec.kind == "relu":
                cache = x > 0
                x = x * cache
            elif spec.kind == "maxpool":
                x, cache = _maxpool_forward(spec, x)
            elif spec.kind == "multiscale-pool":
                x, cache = _mspool_forward(spec, x)
            elif spec.kind == "fully-connected":
                W, b = params
                x2 = x.reshape(x.shape[0], -1)
                cache = (x2, x.shape)
                x = x2 @ W.T + b
            elif spec.kind == "dropout":
                if train and self.dropout_enabled and spec.p > 0:
                    keep = self.rng.random(x.shape) >= spec.p
                    cache = keep.astype(self.dtype) / self.dtype(1.0 - spec.p)
                    x = x * cache
            else:  # sigmoid-map
                n = x.shape[0]
                p = np.clip(expit(x.reshape(n, -1)), DELTA, 1.0 - DELTA)
                x = p.astype(self.dtype, copy=False).reshape(n, self.map_size, self.map_size)
                cache = x
            if train:
                caches.append(cache)
        if train:
            self._cache = caches
        return x

    def backward(self, targets: np.ndarray) -> list[list[np.ndarray]]:
        """Gradients of the batch loss (cell sum, batch mean) for every parameter.

        Uses the activations and dropout masks cached by the last train-mode
        forward pass.
        """
        if self._cache is None:
            raise StateError("backward called without a preceding train-mode forward")
        caches = self._cache
        pred = caches[-1]
        t = np.asarray(targets, dtype=self.dtype)
        if t.ndim == 2:
            t = t[None]
        if t.shape != pred.shape:
            raise DimensionError(f"targets shape {t.shape} does not match output {pred.shape}")
        n = pred.shape[0]
        grads: list[list[np.ndarray]] = [[] for _ in self.spec.layers]
        dy = None
        for i in range(len(self.spec.layers) - 1, -1, -1):
            spec, params, cache = self.spec.layers[i], self.params[i], caches[i]
            if spec.kind == "sigmoid-map":
                dy = _sigmoid_map_backward(pred, t, n)
            elif spec.kind == "dropout":
                if cache is not None:
                    dy = dy * cache
            elif spec.kind == "fully-connected":
                W, _ = params
                x2, xshape = cache
                grads[i] = [dy.T @ x2, dy.sum(axis=0)]
                dy = (dy @ W).reshape(xshape)
            elif spec.kind == "multiscale-pool":
                dy = _mspool_backward(spec, dy, cache)
            elif spec.kind == "maxpool":
                dy = _maxpool_backward(spec, dy, cache)
            elif spec.kind == "relu":
                dy = dy * cache
            else:
                dy, grads[i] = _conv_backward(spec, params, dy, cache)
        self.grads = grads
        return grads

    def copy(self, dtype=None, dropout: bool | None = None) -> Network:
        """Deep copy, optionally cast to another float dtype."""
        dt = self.dtype if dtype is None else dtype
        return Network(
            spec=self.spec,
            params=[[p.astype(dt, copy=True) for p in group] for group in self.params],
            velocity=[[v.astype(dt, copy=True) for v in group] for group in self.velocity],
            shapes=list(self.shapes),
            rng=copy.deepcopy(self.rng),
            dtype=dt,
            dropout_enabled=self.dropout_enabled if dropout is None else dropout,
        )

    def state_equal(self, other: Network) -> bool:
        return all(
            a.dtype == b.dtype and np.array_equal(a, b)
            for ga, gb in zip(self.params + self.velocity, other.params + other.velocity)
            for a, b in zip(ga, gb)
        )


def _sigmoid_map_backward(pred: np.ndarray, targets: np.ndarray, n: int) -> np.ndarray:
    # sigmoid + cross-entropy collapses to (p - t); 1/n for the batch mean
    return ((pred - targets) / pred.dtype.type(n)).reshape(n, -1)


def build_network(spec: NetSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Validate the layer chain and initialise parameters.

    Weights are uniform in (-a, a) with a = sqrt(6 / (fan_in + fan_out));
    biases and momentum buffers start at zero.
    """
    if spec.map_size < 1 or spec.stride < 1 or spec.channels < 1:
        raise BuildError("map size, stride and channels must be positive")
    if not spec.layers or spec.layers[-1].kind != "sigmoid-map":
        raise BuildError("the final layer must be sigmoid-map")
    rng = np.random.Generator(np.random.PCG64(seed))
    shape: tuple = spec.input_shape
    shapes, params = [], []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "sigmoid-map" and i != len(spec.layers) - 1:
            raise BuildError(f"{layer.describe(i)}: sigmoid-map must be the last layer")
        pshapes = _param_shapes(layer, shape)
        group = []
        if pshapes:
            wshape = pshapes[0]
            if layer.kind == "conv":
                rf = wshape[2] * wshape[3]
                fan_in, fan_out = wshape[1] * rf, wshape[0] * rf
            else:
                fan_in, fan_out = wshape[1], wshape[0]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            group = [rng.uniform(-a, a, size=wshape).astype(dtype),
                     np.zeros(pshapes[1], dtype=dtype)]
        params.append(group)
        shape = _out_shape(layer, shape, i, spec.map_size)
        shapes.append(shape)
    velocity = [[np.zeros_like(p) for p in group] for group in params]
    return Network(spec=spec, params=params, velocity=velocity, shapes=shapes, rng=rng,
                   dtype=dtype)


def forward(net: Network, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    return net.forward(batch, mode)


def backward(net: Network, targets: np.ndarray) -> list[list[np.ndarray]]:
    return net.backward(targets)


def map_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Cross-entropy summed over map cells (averaged over a leading batch axis).

    L = sum_ij -(1 - t_ij) log(1 - p_ij) - t_ij log(p_ij)
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.ndim < 2:
        raise DimensionError("maps must be at least 2-D")
    per_cell = -(1.0 - t) * np.log1p(-p) - t * np.log(p)
    per_map = per_cell.sum(axis=(-2, -1))
    return float(np.mean(per_map))


def sgd_step(net: Network, grads: list[list[np.ndarray]], hyper: TrainHyper) -> Network:
    """Momentum SGD with weight decay, in place.

    v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
    """
    for i, group in enumerate(grads):
        for g in group:
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in layer {i} "
                                    f"({net.spec.layers[i].kind})", layer=i)
    lr, mom, wd = hyper.learning_rate, hyper.momentum, hyper.weight_decay
    for params, vel, group in zip(net.params, net.velocity, grads):
        for w, v, g in zip(params, vel, group):
            v *= mom
            v -= lr * (g + wd * w)
            w += v
    return net


def train_step(net: Network, batch: np.ndarray, targets: np.ndarray,
               hyper: TrainHyper) -> float:
    """One forward/backward/update on a batch; returns the pre-update loss."""
    pred = net.forward(batch, "train")
    loss = map_loss(pred, targets)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    sgd_step(net, net.backward(targets), hyper)
    return loss


def _switch_pattern(net: Network) -> list[np.ndarray]:
    """Which ReLUs are active and which inputs win each max-pool, from the cache."""
    pattern = []
    for spec, cache in zip(net.spec.layers, net._cache):
        if spec.kind == "relu":
            pattern.append(cache)
        elif spec.kind == "maxpool":
            pattern.append(cache[0])
        elif spec.kind == "multiscale-pool":
            pattern.extend(entry[4] for group in cache[0] for entry in group)
    return pattern


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(net: Network, sample: tuple[np.ndarray, np.ndarray], eps: float = 1e-3,
               min_eps: float = 1e-7) -> float:
    """Max relative error between backprop and central finite differences.

    Runs on a float64 copy of ``net`` with dropout disabled; ``net`` itself
    is not modified. If the +/-eps probes flip a ReLU or change a max-pool
    winner, the loss is not differentiable across the probe interval, so
    eps is shrunk tenfold for that parameter (down to ``min_eps``).
    """
    x, t = sample
    shadow = net.copy(dtype=np.float64, dropout=False)
    shadow.forward(x, "train")
    base = _switch_pattern(shadow)
    analytic = shadow.backward(t)

    def probe(flat, k, value):
        flat[k] = value
        loss = map_loss(shadow.forward(x, "train"), t)
        return loss, _switch_pattern(shadow)

    worst = 0.0
    for params, grads in zip(shadow.params, analytic):
        for w, g in zip(params, grads):
            flat, gflat = w.reshape(-1), g.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                h = eps
                while True:
                    up, pat_up = probe(flat, k, orig + h)
                    down, pat_down = probe(flat, k, orig - h)
                    smooth = _same_pattern(pat_up, base) and _same_pattern(pat_down, base)
                    if smooth or h / 10 < min_eps:
                        break
                    h /= 10
                flat[k] = orig
                num = (up - down) / (2.0 * h)
                ana = float(gflat[k])
                denom = max(abs(ana), abs(num), 1e-8)
                worst = max(worst, abs(ana - num) / denom)
    return worst


# --------------------------------------------------------------------------
# weight file: "SODL", u32 version, u32 record count, then per parameter
# tensor: u32 kind tag, u32 rank, u32 dims[rank], f32 data (little-endian).


def save_weights(net: Network, path) -> None:
    chunks = [WEIGHT_MAGIC]
    records = [(KIND_TAGS[spec.kind], p) for spec, group in zip(net.spec.layers, net.params)
               for p in group]
    chunks.append(struct.pack("<II", WEIGHT_VERSION, len(records)))
    for tag, p in records:
        chunks.append(struct.pack(f"<II{p.ndim}I", tag, p.ndim, *p.shape))
        chunks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path, spec: NetSpec, seed: int = 0) -> Network:
    """Build a network for ``spec`` and fill it from a weight file."""
    data = Path(path).read_bytes()
    net = build_network(spec, seed)
    if len(data) < 12:
        raise WeightFileError("file too short for header", len(data))
    if data[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"bad magic {data[:4]!r}", 0)
    version, count = struct.unpack_from("<II", data, 4)
    if version != WEIGHT_VERSION:
        raise UnsupportedVersionError(f"unsupported weight file version {version}", 4)
    expected = [(KIND_TAGS[layer.kind], p) for layer, group in zip(spec.layers, net.params)
                for p in group]
    if count != len(expected):
        raise WeightFileError(f"file holds {count} tensors, architecture needs {len(expected)}", 8)
    off = 12
    for tag, p in expected:
        if off + 8 > len(data):
            raise WeightFileError("truncated tensor header", off)
        ftag, rank = struct.unpack_from("<II", data, off)
        if ftag != tag:
            raise WeightFileError(f"kind tag {ftag} where {tag} expected", off)
        off += 8
        if off + 4 * rank > len(data):
            raise WeightFileError("truncated tensor dims", off)
        dims = struct.unpack_from(f"<{rank}I", data, off)
        if tuple(dims) != p.shape:
            raise WeightFileError(f"tensor shape {tuple(dims)} where {p.shape} expected", off)
        off += 4 * rank
        nbytes = 4 * p.size
        if off + nbytes > len(data):
            raise WeightFileError("truncated tensor data", off)
        p[...] = np.frombuffer(data, dtype="<f4", count=p.size, offset=off).reshape(p.shape)
        off += nbytes
    if off != len(data):
        raise WeightFileError("trailing bytes after last tensor", off)
    return net

"""A small numpy CNN engine: enough layers, loss and SGD to train the
SymbolNet family of classifiers from scratch.

Tensors are numpy arrays shaped (batch, channels, height, width) up to the
first fully-connected layer and (batch, units) after it.
"""
from __future__ import annotations

import base64
import csv
import io
import json
import logging

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from glyphline.errors import InvalidInput, ModelError, ShapeMismatch
from glyphline.utils import atomic_write, canonical_json, validate

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Shape = Tuple[int, ...]

CHECKPOINT_FORMAT = 'glyphline-checkpoint'
CHECKPOINT_VERSION = 1


class LayerKind(str, Enum):
    CONV = 'conv'
    MAXPOOL = 'maxpool'
    RELU = 'relu'
    DROPOUT = 'dropout'
    FC = 'fc'
    SOFTMAX = 'softmax'


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    params: Dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, 'kind', LayerKind(self.kind))

    @classmethod
    def conv(cls, out_channels: int, kernel: int = 5, stride: int = 1) -> LayerSpec:
        return cls(LayerKind.CONV, {'out_channels': out_channels, 'kernel': kernel, 'stride': stride})

    @classmethod
    def maxpool(cls, size: int = 2) -> LayerSpec:
        return cls(LayerKind.MAXPOOL, {'size': size})

    @classmethod
    def relu(cls) -> LayerSpec:
        return cls(LayerKind.RELU)

    @classmethod
    def dropout(cls, p: float = 0.5) -> LayerSpec:
        return cls(LayerKind.DROPOUT, {'p': p})

    @classmethod
    def fc(cls, units: int) -> LayerSpec:
        return cls(LayerKind.FC, {'units': units})

    @classmethod
    def softmax(cls) -> LayerSpec:
        return cls(LayerKind.SOFTMAX)

    @classmethod
    def from_dict(cls, d: Dict) -> LayerSpec:
        return cls(d['kind'], dict(d.get('params', {})))

    def to_dict(self) -> Dict:
        return {'kind': self.kind.value, 'params': dict(self.params)}


def symbolnet(input_shape: Shape = (1, 32, 32), classes: int = 2, dropout: float = 0.5) -> List[LayerSpec]:
    """Two 5x5 convolutions (20 and 50 filters) each followed by 2x2 max
    pooling, dropout, a 500-unit hidden layer and the class layer"""
    return [
        LayerSpec.conv(20, kernel=5),
        LayerSpec.maxpool(2),
        LayerSpec.conv(50, kernel=5),
        LayerSpec.maxpool(2),
        LayerSpec.dropout(dropout),
        LayerSpec.fc(500),
        LayerSpec.relu(),
        LayerSpec.fc(classes),
        LayerSpec.softmax(),
    ]


class Layer:
    """Base layer; parameters live in the owning Network, keyed by name"""
    param_names: Tuple[str, ...] = ()

    def __init__(self, spec: LayerSpec, index: int, input_shape: Shape):
        self.spec = spec
        self.index = index
        self.input_shape = tuple(input_shape)
        self.output_shape = self.infer_shape(self.input_shape)
        self._cache = None

    @property
    def kind(self) -> str:
        return self.spec.kind.value

    def infer_shape(self, shape: Shape) -> Shape:
        return shape

    def check(self, x: Tensor):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(self.index, self.kind, self.input_shape, tuple(x.shape[1:]))

    def init_params(self, rng: np.random.Generator, dtype) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: Tensor, params: Dict, mode: str, rng: np.random.Generator) -> Tensor:
        raise NotImplementedError

    def backward(self, grad: Tensor, params: Dict) -> Tuple[Tensor, Dict[str, np.ndarray]]:
        raise NotImplementedError


def _he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    param_names = ('weight', 'bias')

    def infer_shape(self, shape):
        if len(shape) != 3:
            raise ShapeMismatch(self.index, self.kind, '(channels, height, width)', shape)
        k, s = self.spec.params['kernel'], self.spec.params.get('stride', 1)
        c, h, w = shape
        if h < k or w < k:
            raise ShapeMismatch(self.index, self.kind, f"at least {k}x{k}", shape)
        return (self.spec.params['out_channels'], (h - k) // s + 1, (w - k) // s + 1)

    def init_params(self, rng, dtype):
        k = self.spec.params['kernel']
        c = self.input_shape[0]
        f = self.spec.params['out_channels']
        return {
            'weight': _he_uniform(rng, (f, c, k, k), c * k * k, dtype),
            'bias': np.zeros(f, dtype=dtype),
        }

    def forward(self, x, params, mode, rng):
        s = self.spec.params.get('stride', 1)
        k = self.spec.params['kernel']
        _, ho, wo = self.output_shape
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        windows = windows[:, :, ::s, ::s][:, :, :ho, :wo]
        out = np.tensordot(windows, params['weight'], axes=([1, 4, 5], [1, 2, 3]))
        self._cache = (x.shape, windows)
        return out.transpose(0, 3, 1, 2) + params['bias'][None, :, None, None]

    def backward(self, grad, params):
        x_shape, windows = self._cache
        s = self.spec.params.get('stride', 1)
        k = self.spec.params['kernel']
        _, ho, wo = self.output_shape
        weight = params['weight']
        grads = {
            'weight': np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3])),
            'bias': grad.sum(axis=(0, 2, 3)),
        }
        dx = np.zeros(x_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.einsum('nfhw,fc->nchw', grad, weight[:, :, i, j])
        return dx, grads


class MaxPool(Layer):
    def infer_shape(self, shape):
        size = self.spec.params.get('size', 2)
        if len(shape) != 3 or shape[1] < size or shape[2] < size:
            raise ShapeMismatch(self.index, self.kind, f"(channels, >={size}, >={size})", shape)
        return (shape[0], shape[1] // size, shape[2] // size)

    def forward(self, x, params, mode, rng):
        size = self.spec.params.get('size', 2)
        n, c = x.shape[:2]
        _, ho, wo = self.output_shape
        windows = x[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
        windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
        # first maximum wins so the gradient goes to exactly one input
        winner = windows.argmax(axis=-1)
        self._cache = (x.shape, winner)
        return np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def backward(self, grad, params):
        x_shape, winner = self._cache
        size = self.spec.params.get('size', 2)
        n, c, ho, wo = grad.shape
        routed = np.zeros((n, c, ho, wo, size * size), dtype=grad.dtype)
        np.put_along_axis(routed, winner[..., None], grad[..., None], axis=-1)
        routed = routed.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(x_shape, dtype=grad.dtype)
        dx[:, :, :ho * size, :wo * size] = routed.reshape(n, c, ho * size, wo * size)
        return dx, {}


class ReLU(Layer):
    def forward(self, x, params, mode, rng):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype)

    def backward(self, grad, params):
        return np.where(self._cache, grad, 0).astype(grad.dtype), {}


class Dropout(Layer):
    """Inverted dropout: active in train mode only, eval is the identity"""

    def __init__(self, spec, index, input_shape):
        super().__init__(spec, index, input_shape)
        p = spec.params.get('p', 0.5)
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.frozen_mask = None

    def forward(self, x, params, mode, rng):
        if mode != 'train' or self.p == 0:
            self._cache = None
            return x
        if self.frozen_mask is not None and self.frozen_mask.shape == x.shape:
            mask = self.frozen_mask
        else:
            mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / x.dtype.type(1 - self.p)
        self._cache = mask
        return x * mask

    def backward(self, grad, params):
        if self._cache is None:
            return grad, {}
        return grad * self._cache, {}


class FullyConnected(Layer):
    param_names = ('weight', 'bias')

    def infer_shape(self, shape):
        return (self.spec.params['units'],)

    def init_params(self, rng, dtype):
        fan_in = int(np.prod(self.input_shape))
        units = self.spec.params['units']
        return {
            'weight': _he_uniform(rng, (units, fan_in), fan_in, dtype),
            'bias': np.zeros(units, dtype=dtype),
        }

    def forward(self, x, params, mode, rng):
        flat = x.reshape(x.shape[0], -1)
        self._cache = (x.shape, flat)
        return flat @ params['weight'].T + params['bias']

    def backward(self, grad, params):
        x_shape, flat = self._cache
        grads = {'weight': grad.T @ flat, 'bias': grad.sum(axis=0)}
        return (grad @ params['weight']).reshape(x_shape), grads


class Softmax(Layer):
    def infer_shape(self, shape):
        if len(shape) != 1:
            raise ShapeMismatch(self.index, self.kind, '(units,)', shape)
        return shape

    def forward(self, x, params, mode, rng):
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, grad, params):
        # the loss gradient arrives already taken with respect to the logits
        return grad, {}


LAYERS = {
    LayerKind.CONV: Conv2D,
    LayerKind.MAXPOOL: MaxPool,
    LayerKind.RELU: ReLU,
    LayerKind.DROPOUT: Dropout,
    LayerKind.FC: FullyConnected,
    LayerKind.SOFTMAX: Softmax,
}


def cross_entropy(probs: Tensor, targets: np.ndarray) -> float:
    """Mean negative log-likelihood of the target classes"""
    picked = probs[np.arange(len(targets)), targets].astype(np.float64)
    return float(-np.log(np.maximum(picked, 1e-30)).mean())


class Network:
    """Sequential network ending in a softmax layer

    Parameters are named `layer{index}.weight` and `layer{index}.bias`.
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Shape, seed: int = 0, dtype=np.float32):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
        if not self.specs or self.specs[-1].kind != LayerKind.SOFTMAX:
            raise ModelError("Network must end with a softmax layer")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.layers: List[Layer] = []
        shape = self.input_shape
        for index, spec in enumerate(self.specs):
            layer = LAYERS[spec.kind](spec, index, shape)
            self.layers.append(layer)
            shape = layer.output_shape
        self.output_shape = shape

        init_rng, dropout_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)]
        self._dropout_rng = dropout_rng
        self.params: Dict[str, np.ndarray] = {}
        for layer in self.layers:
            for name, value in layer.init_params(init_rng, self.dtype).items():
                self.params[f"layer{layer.index}.{name}"] = value
        self._probs = None

    @property
    def classes(self) -> int:
        return self.output_shape[0]

    def reseed(self, seed: int):
        """Restart the dropout generator"""
        self._dropout_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])

    def layer_params(self, layer: Layer) -> Dict[str, np.ndarray]:
        return {name: self.params[f"layer{layer.index}.{name}"] for name in layer.param_names}

    def get_params(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def set_params(self, params: Dict[str, np.ndarray]):
        if set(params) != set(self.params):
            raise ModelError(f"parameter names differ: {sorted(set(params) ^ set(self.params))}")
        for name, value in params.items():
            if value.shape != self.params[name].shape:
                raise ModelError(f"{name}: expected shape {self.params[name].shape}, got {value.shape}")
            self.params[name] = np.asarray(value, dtype=self.dtype).copy()

    def forward(self, x: Tensor, mode: str = 'eval') -> Tensor:
        """Class probabilities for a batch, shape (batch, classes)"""
        if mode not in ('train', 'eval'):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode}")
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape):
            x = x[None]
        for layer in self.layers:
            layer.check(x)
            x = layer.forward(x, self.layer_params(layer), mode, self._dropout_rng)
        self._probs = x
        return x

    def backward(self, targets: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of the mean softmax cross-entropy of the last forward
        batch with respect to every parameter"""
        if self._probs is None:
            raise ModelError("backward called before forward")
        targets = np.asarray(targets, dtype=np.int64)
        n = len(targets)
        grad = self._probs.copy()
        grad[np.arange(n), targets] -= 1
        grad /= n
        grads = {}
        for layer in reversed(self.layers):
            grad, layer_grads = layer.backward(grad, self.layer_params(layer))
            for name, value in layer_grads.items():
                grads[f"layer{layer.index}.{name}"] = value.astype(self.dtype)
        return grads

    def predict(self, x: Tensor, batch: int = 100) -> Tensor:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == len(self.input_shape):
            x = x[None]
        parts = [self.forward(x[i:i + batch], mode='eval') for i in range(0, len(x), batch)]
        return np.concatenate(parts) if parts else np.zeros((0, self.classes), dtype=self.dtype)

    def freeze_dropout(self, masks: Optional[Dict[int, np.ndarray]]):
        """Pin dropout masks by layer index; None releases them"""
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.frozen_mask = None if masks is None else masks.get(layer.index)

    def to_dict(self, metadata: Dict = None) -> Dict:
        params = {}
        for name, value in self.params.items():
            data = np.ascontiguousarray(value, dtype='<f4').tobytes()
            params[name] = {'shape': list(value.shape), 'data': base64.b64encode(data).decode('ascii')}
        return {
            'format': CHECKPOINT_FORMAT,
            'version': CHECKPOINT_VERSION,
            'input_shape': list(self.input_shape),
            'layers': [s.to_dict() for s in self.specs],
            'params': params,
            'metadata': metadata or {},
        }

    @classmethod
    def from_dict(cls, d: Dict, dtype=np.float32) -> Tuple[Network, Dict]:
        if d.get('format') != CHECKPOINT_FORMAT:
            raise ModelError(f"not a checkpoint: format {d.get('format')}")
        if d.get('version') != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {d.get('version')}")
        net = cls([LayerSpec.from_dict(s) for s in d['layers']], d['input_shape'], dtype=dtype)
        params = {}
        for name, entry in d['params'].items():
            raw = np.frombuffer(base64.b64decode(entry['data']), dtype='<f4')
            params[name] = raw.reshape(entry['shape'])
        net.set_params(params)
        return net, d.get('metadata', {})

    def save(self, path: str, metadata: Dict = None) -> str:
        return atomic_write(path, canonical_json(self.to_dict(metadata)))

    @classmethod
    def load(cls, path: str) -> Tuple[Network, Dict]:
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ModelError(f"checkpoint not found: {path}")
        except (ValueError, UnicodeDecodeError) as err:
            raise ModelError(f"corrupt checkpoint {path}: {err}")
        if not isinstance(d, dict):
            raise ModelError(f"corrupt checkpoint {path}: not a JSON object")
        problems = validate(d, 'checkpoint') if d.get('format') == CHECKPOINT_FORMAT else []
        if problems:
            raise ModelError(f"corrupt checkpoint {path}: {problems[0]}")
        try:
            return cls.from_dict(d)
        except (KeyError, TypeError, ValueError) as err:
            raise ModelError(f"corrupt checkpoint {path}: {err}")


LR_POLICIES = ('step', 'inv')


@dataclass(frozen=True)
class SolverConfig:
    base_lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_policy: str = 'inv'
    gamma: float = 0.0001
    power: float = 0.75
    step_size: int = 1000
    max_iter: int = 10000
    train_batch: int = 100
    val_batch: int = 52
    rng_seed: int = 0
    val_interval: int = 500
    display: int = 100
    target_accuracy: Optional[float] = None

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_policy not in LR_POLICIES:
            raise ValueError(f"lr_policy must be one of {LR_POLICIES}, got {self.lr_policy}")
        if self.lr_policy == 'step' and self.step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {self.step_size}")
        if min(self.max_iter, self.train_batch, self.val_batch, self.val_interval, self.display) < 1:
            raise ValueError("iteration counts and batch sizes must be >= 1")
        if self.target_accuracy is not None and not 0 < self.target_accuracy <= 1:
            raise ValueError(f"target_accuracy must be in (0, 1], got {self.target_accuracy}")

    @classmethod
    def symbolnet(cls, **kwargs) -> SolverConfig:
        """The glyph classifier solver: inv policy, 10000 iterations"""
        return cls(**kwargs)

    @classmethod
    def region(cls, **kwargs) -> SolverConfig:
        """The region classifier solver: step policy every 1000 iterations"""
        defaults = dict(
            lr_policy='step', gamma=0.1, step_size=1000, weight_decay=0.0002,
            max_iter=20000, train_batch=30, val_batch=20,
        )
        defaults.update(kwargs)
        return cls(**defaults)

    @classmethod
    def from_dict(cls, d: Dict) -> SolverConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown solver settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> Dict:
        return asdict(self)


def lr_at(cfg: SolverConfig, iteration: int) -> float:
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if cfg.lr_policy == 'step':
        return cfg.base_lr * cfg.gamma ** (iteration // cfg.step_size)
    return cfg.base_lr * (1.0 + cfg.gamma * iteration) ** (-cfg.power)


def sgd_step(
    params: Dict[str, np.ndarray],
    velocity: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    cfg: SolverConfig,
    iteration: int,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Momentum SGD with L2 weight decay; returns new params and velocity"""
    lr = lr_at(cfg, iteration)
    new_params, new_velocity = {}, {}
    for name, p in params.items():
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
        if v.shape != p.shape or grads[name].shape != p.shape:
            raise InvalidInput(f"{name}: parameter {p.shape}, velocity {v.shape}, gradient {grads[name].shape}")
        dtype = p.dtype.type
        v = dtype(cfg.momentum) * v - dtype(lr) * (grads[name] + dtype(cfg.weight_decay) * p)
        new_velocity[name] = v.astype(p.dtype)
        new_params[name] = (p + v).astype(p.dtype)
    return new_params, new_velocity


class TraceRow(NamedTuple):
    iteration: int
    loss: float
    lr: float
    val_accuracy: Optional[float]


@dataclass
class TrainingResult:
    net: Network
    trace: List[TraceRow]
    best_val_accuracy: Optional[float]
    best_iteration: Optional[int]
    iterations: int


def accuracy(net: Network, x: Tensor, y: np.ndarray, batch: int = 100) -> float:
    if len(y) == 0:
        raise InvalidInput("accuracy needs at least one sample")
    predicted = net.predict(x, batch=batch).argmax(axis=1)
    return float((predicted == np.asarray(y)).mean())


def _batches(rng: np.random.Generator, count: int, size: int):
    """Endless stream of index batches over shuffled epochs"""
    pending = np.zeros(0, dtype=np.int64)
    while True:
        while len(pending) < size:
            pending = np.concatenate([pending, rng.permutation(count)])
        yield pending[:size]
        pending = pending[size:]


def train(
    net: Network,
    x: Tensor,
    y: np.ndarray,
    cfg: SolverConfig,
    x_val: Tensor = None,
    y_val: np.ndarray = None,
) -> TrainingResult:
    """Minibatch training with validation on a schedule

    The validation set (the training set when none is given) is scored
    every `val_interval` iterations and after the last one; the network
    ends up holding the best-scoring parameters.
    """
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0 or len(x) != len(y):
        raise InvalidInput(f"training set needs matching non-empty inputs and labels ({len(x)} vs {len(y)})")
    if y.min() < 0 or y.max() >= net.classes:
        raise InvalidInput(f"labels must lie in 0..{net.classes - 1}")
    if x_val is None or y_val is None or len(y_val) == 0:
        x_val, y_val = x, y
    y_val = np.asarray(y_val, dtype=np.int64)

    net.reseed(cfg.rng_seed)
    batches = _batches(np.random.default_rng(cfg.rng_seed), len(y), cfg.train_batch)
    velocity: Dict[str, np.ndarray] = {}
    trace: List[TraceRow] = []
    best_acc, best_iter, best_params = None, None, None

    iteration = 0
    for iteration in range(cfg.max_iter):
        lr = lr_at(cfg, iteration)
        index = next(batches)
        probs = net.forward(x[index], mode='train')
        loss = cross_entropy(probs, y[index])
        grads = net.backward(y[index])
        net.params, velocity = sgd_step(net.params, velocity, grads, cfg, iteration)

        val_acc = None
        last = iteration == cfg.max_iter - 1
        if (iteration + 1) % cfg.val_interval == 0 or last:
            val_acc = accuracy(net, x_val, y_val, batch=cfg.val_batch)
            if best_acc is None or val_acc > best_acc:
                best_acc, best_iter, best_params = val_acc, iteration, net.get_params()
            logger.info(f"iteration {iteration}: validation accuracy {val_acc:.4f}")
        if iteration % cfg.display == 0:
            logger.info(f"iteration {iteration}: loss {loss:.6f}, lr {lr:.6g}")
        trace.append(TraceRow(iteration, loss, lr, val_acc))

        if val_acc is not None and cfg.target_accuracy is not None and val_acc >= cfg.target_accuracy:
            logger.info(f"target accuracy {cfg.target_accuracy} reached at iteration {iteration}")
            break

    if best_params is not None:
        net.set_params(best_params)
    return TrainingResult(net, trace, best_acc, best_iter, iteration + 1)


def write_trace(trace: Sequence[TraceRow], path: str) -> str:
    """CSV of iteration, loss, lr, val_accuracy; off-schedule accuracies blank"""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(TraceRow._fields)
    for row in trace:
        writer.writerow([
            row.iteration, repr(float(row.loss)), repr(float(row.lr)),
            '' if row.val_accuracy is None else repr(float(row.val_accuracy)),
        ])
    return atomic_write(path, out.getvalue())


def read_trace(path: str) -> List[TraceRow]:
    with open(path, newline='') as f:
        return [
            TraceRow(
                int(r['iteration']), float(r['loss']), float(r['lr']),
                float(r['val_accuracy']) if r['val_accuracy'] else None,
            )
            for r in csv.DictReader(f)
        ]

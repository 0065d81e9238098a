"""Model assembly, forward pass, loss/backprop, and BN finalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, NumericError
from ..seeding import substream
from .layers import BatchNorm, Conv2d, Dense, Flatten, Layer, MaxPool, ReLU, Softmax

__all__ = [
    "LayerSpec",
    "CnnModel",
    "build_model",
    "default_model",
    "forward",
    "loss_and_backward",
    "cross_entropy",
    "finalize_bn",
]

_KINDS = {
    "conv2d": Conv2d,
    "batchnorm": BatchNorm,
    "relu": ReLU,
    "maxpool": MaxPool,
    "flatten": Flatten,
    "dense": Dense,
    "softmax": Softmax,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")


@dataclass
class CnnModel:
    """An ordered layer stack with shape-checked construction.

    The stack must end in softmax after a dense layer sized to the class
    count, and carry at least two batch-normalization layers (there is
    deliberately no dropout).
    """

    specs: list[LayerSpec]
    layers: list[Layer]
    input_shape: tuple[int, int, int]
    class_labels: tuple[str, ...]
    dtype: object = np.float32

    @property
    def bn_layers(self) -> list[BatchNorm]:
        return [l for l in self.layers if isinstance(l, BatchNorm)]

    def set_eval_stats(self, which: str) -> None:
        if which not in ("moving", "population"):
            raise ConfigError(f"unknown statistics set {which!r}")
        for bn in self.bn_layers:
            bn.eval_stats = which

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                out[f"{i}.{layer.kind}.{name}"] = value
        return out

    def set_parameters(self, values: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for name in layer.params():
                key = f"{i}.{layer.kind}.{name}"
                layer.params()[name][...] = values[key]


def build_model(
    specs: list[LayerSpec],
    input_shape: tuple[int, int, int],
    class_labels,
    seed: int = 0,
    dtype=np.float32,
) -> CnnModel:
    class_labels = tuple(class_labels)
    layers: list[Layer] = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        cls = _KINDS[spec.kind]
        if spec.kind in ("conv2d", "dense"):
            layer = cls(**spec.args, rng=substream(seed, "init", i), dtype=dtype)
        elif spec.kind == "batchnorm":
            layer = cls(**spec.args, dtype=dtype)
        else:
            layer = cls(**spec.args)
        # shape compatibility check while tracing
        if spec.kind == "conv2d" and shape[-1] != layer.in_channels:
            raise ConfigError(f"layer {i}: conv2d expects {layer.in_channels} channels, input has {shape[-1]}")
        if spec.kind == "batchnorm" and shape[-1] != layer.channels:
            raise ConfigError(f"layer {i}: batchnorm channels {layer.channels} != {shape[-1]}")
        if spec.kind == "dense" and shape != (layer.in_features,):
            raise ConfigError(f"layer {i}: dense expects ({layer.in_features},), input is {shape}")
        if spec.kind == "maxpool" and (shape[0] % layer.window or shape[1] % layer.window):
            raise ConfigError(f"layer {i}: maxpool window does not tile {shape}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    if not layers or layers[-1].kind != "softmax":
        raise ConfigError("model must end with a softmax layer")
    dense = [l for l in layers if isinstance(l, Dense)]
    if not dense or dense[-1].out_features != len(class_labels):
        raise ConfigError("final dense output size must equal the class count")
    if sum(isinstance(l, BatchNorm) for l in layers) < 2:
        raise ConfigError("model must contain at least two batchnorm layers")
    return CnnModel(
        specs=list(specs),
        layers=layers,
        input_shape=tuple(input_shape),
        class_labels=class_labels,
        dtype=dtype,
    )


def default_model(class_labels, input_hw=(128, 128), seed: int = 0, dtype=np.float32) -> CnnModel:
    """Reference stack: three conv/BN/ReLU/pool blocks (16/32/64), dense, softmax."""
    h, w = input_hw
    if h % 8 or w % 8:
        raise ConfigError("input height and width must be divisible by 8")
    channels = [16, 32, 64]
    specs: list[LayerSpec] = []
    prev = 1
    for c in channels:
        specs.append(LayerSpec("conv2d", {"kernel": 3, "in_channels": prev, "out_channels": c}))
        specs.append(LayerSpec("batchnorm", {"channels": c}))
        specs.append(LayerSpec("relu"))
        specs.append(LayerSpec("maxpool", {"window": 2, "stride": 2}))
        prev = c
    specs.append(LayerSpec("flatten"))
    specs.append(
        LayerSpec("dense", {"in_features": (h // 8) * (w // 8) * channels[-1], "out_features": len(tuple(class_labels))})
    )
    specs.append(LayerSpec("softmax"))
    return build_model(specs, (h, w, 1), class_labels, seed=seed, dtype=dtype)


def forward(model: CnnModel, batch: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Class probabilities for a batch.

    Train mode uses mini-batch BN statistics and updates the running
    averages; eval mode uses the model's selected finalized statistics.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    x = _as_input(model, batch)
    train = mode == "train"
    for layer in model.layers:
        x = layer.forward(x, train=train)
    return x


def forward_batch_stats(model: CnnModel, batch: np.ndarray) -> np.ndarray:
    """Forward pass where BN layers use the batch's own statistics.

    No state is updated; this is how validation during training behaves
    when statistics finalization is deferred to the end.
    """
    x = _as_input(model, batch)
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            x = layer.forward_batch_stats(x)
        else:
            x = layer.forward(x, train=False)
    return x


def _as_input(model: CnnModel, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch)
    if x.ndim == 3:
        x = x[..., None]
    if x.ndim != 4 or x.shape[1:] != model.input_shape:
        raise DataError(f"batch shape {x.shape} incompatible with input {model.input_shape}")
    return x.astype(model.dtype, copy=False)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy from logits via log-sum-exp (stable for |logit| up to ~1e4)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


def loss_and_backward(model: CnnModel, batch: np.ndarray, labels: np.ndarray) -> tuple[float, dict]:
    """Mean cross-entropy over the batch and gradients for every parameter.

    Runs a train-mode forward (so BN running averages update), then
    backpropagates from the logits directly, which folds softmax and
    cross-entropy into the numerically stable combined gradient.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or len(labels) != len(batch):
        raise DataError("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= len(model.class_labels):
        raise DataError("labels outside the class set")
    x = _as_input(model, batch)
    for layer in model.layers[:-1]:
        x = layer.forward(x, train=True)
    logits = x
    probs = model.layers[-1].forward(logits, train=True)
    loss = cross_entropy(logits.astype(np.float64), labels)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    n = len(labels)
    dlogits = probs.astype(logits.dtype).copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grad = dlogits
    for layer in reversed(model.layers[:-1]):
        grad = layer.backward(grad)

    grads = {}
    for i, layer in enumerate(model.layers):
        for name, value in layer.grads().items():
            grads[f"{i}.{layer.kind}.{name}"] = value
    return loss, grads


def finalize_bn(model: CnnModel, batches, mode: str) -> CnnModel:
    """Fix the BN statistics used at evaluation time.

    mode "population": one pass over the training batches with BN layers
    running in eval mode on their current running averages, collecting
    the exact mean/variance of every BN input; those become the
    population statistics and are selected for evaluation.
    mode "moving_average": the running averages accumulated during
    training are the finalized statistics (they are also copied into the
    population slots so both sets are always serializable).
    """
    if mode not in ("population", "moving_average"):
        raise ConfigError(f"unknown bn finalization mode {mode!r}")
    if mode == "moving_average":
        for bn in model.bn_layers:
            bn.population_mean = bn.moving_mean.copy()
            bn.population_var = bn.moving_var.copy()
        model.set_eval_stats("moving")
        return model

    for bn in model.bn_layers:
        bn.collecting = True
        bn._acc = None
    model.set_eval_stats("moving")
    count = 0
    for batch in batches:
        count += len(batch)
        forward(model, batch, mode="eval")
    if count == 0:
        for bn in model.bn_layers:
            bn.collecting = False
        raise DataError("finalize_bn requires nonempty training data")
    for bn in model.bn_layers:
        bn.collecting = False
        bn.finish_collection()
    model.set_eval_stats("population")
    return model

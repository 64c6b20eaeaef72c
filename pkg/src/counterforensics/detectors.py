"""Manipulation detectors sharing one scoring contract: ``score > threshold`` means manipulated.

Variants:

- ``spam_linear``: SPAM feature + linear max-margin classifier.
- ``cozz_net_hard`` / ``cozz_net_soft``: the SPAM pipeline written as a CNN. Stage 1 turns
  the residual into 2T+1 channel scores ``c*r - q*c^2/2`` whose argmax is the quantised bin;
  stage 2 matches every co-occurrence pattern against the one-hot channels (score = number
  of matching positions, uniquely maximal at the true tuple); global average pooling yields
  the L1 histogram, followed by symmetrisation and the linear head. The hard variant uses
  channel hardmax and reproduces ``extract_spam`` exactly; the soft variant swaps in a
  temperature softmax so gradients flow.
- ``bayar_net``: small CNN whose first layer is a constrained prediction-error filter bank.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Literal, get_args

import numpy as np
import numpy.typing as npt

from ._seeding import fingerprint_of
from ._types import Tensor
from .diffnet import (
    Affine,
    BinAggregate,
    Conv2d,
    FullyConnected,
    GlobalAvgPool,
    HardmaxChannels,
    L2Normalize,
    Layer,
    MaxPool2d,
    Network,
    Parallel,
    ReLU,
    Sgd,
    Softmax,
    backward,
    forward,
    load_network_parameters,
    loss_and_gradient,
    network_from_spec,
    project_network_bayar,
    read_container,
    scores_from_output,
    write_container,
)
from .errors import (
    InvalidArgumentError,
    ModelFormatError,
    TrainingDivergedError,
    UnsupportedOperationError,
)
from .imaging import ImagePatch
from .spamfeat import RESIDUAL_TAPS, SUPPORT, SpamConfig, extract_spam

Variant = Literal["spam_linear", "cozz_net_hard", "cozz_net_soft", "bayar_net"]
VARIANTS: tuple[str, ...] = get_args(Variant)
DIFFERENTIABLE_VARIANTS = frozenset({"cozz_net_soft", "bayar_net"})
DEFAULT_SOFT_TEMPERATURE = 0.1
BAYAR_INPUT_SCALE = 1.0 / 16.0
COZZNET_BATCH = 2
BAYAR_BATCH = 32
HALF_STEP_TIE_BREAK = 1e-6

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class DetectorModel:
    variant: Variant
    spam_config: SpamConfig | None = None
    weights: Tensor | None = None
    bias: float = 0.0
    network: Network | None = None
    threshold: float = 0.0
    patch_size: int | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown detector variant: {self.variant!r}")
        if self.variant == "spam_linear":
            if self.spam_config is None or self.weights is None:
                raise InvalidArgumentError("spam_linear needs a SpamConfig and weights")
            if self.weights.shape != (self.spam_config.dimension,):
                raise InvalidArgumentError(
                    f"weights have shape {self.weights.shape}, "
                    f"feature dimension is {self.spam_config.dimension}"
                )
        elif self.network is None:
            raise InvalidArgumentError(f"{self.variant} needs a network")

    @property
    def differentiable(self) -> bool:
        return self.variant in DIFFERENTIABLE_VARIANTS

    def fingerprint(self) -> str:
        payload: dict[str, Any] = {
            "variant": self.variant,
            "threshold": self.threshold,
            "patch_size": self.patch_size,
        }
        if self.spam_config is not None:
            payload["spam"] = self.spam_config.to_dict()
        if self.network is not None:
            payload["network"] = self.network.spec()
        return fingerprint_of(payload)


@dataclass(frozen=True, slots=True)
class TrainSet:
    patches: tuple[ImagePatch, ...]
    labels: tuple[int, ...]
    device_ids: tuple[int, ...]
    keys: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        count = len(self.patches)
        if len(self.labels) != count or len(self.device_ids) != count:
            raise InvalidArgumentError("patches, labels and device ids must align")
        if self.keys and len(self.keys) != count:
            raise InvalidArgumentError("keys must align with patches")
        if any(label not in (0, 1) for label in self.labels):
            raise InvalidArgumentError("labels must be 0 (pristine) or 1 (manipulated)")

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def devices(self) -> frozenset[int]:
        return frozenset(self.device_ids)

    def class_counts(self) -> tuple[int, int]:
        positives = sum(self.labels)
        return len(self.labels) - positives, positives

    def require_classes(self, minimum: int = 1) -> None:
        negatives, positives = self.class_counts()
        if negatives < minimum or positives < minimum:
            raise InvalidArgumentError(
                f"need >= {minimum} examples per class, got "
                f"{negatives} pristine / {positives} manipulated"
            )

    def subset(self, indices: Sequence[int]) -> TrainSet:
        return TrainSet(
            patches=tuple(self.patches[i] for i in indices),
            labels=tuple(self.labels[i] for i in indices),
            device_ids=tuple(self.device_ids[i] for i in indices),
            keys=tuple(self.keys[i] for i in indices) if self.keys else (),
        )

    def tensor(self) -> Tensor:
        return patches_to_tensor(self.patches)


TestSet = TrainSet


@dataclass(frozen=True, slots=True)
class LinearHyper:
    epochs: int = 50
    lr: float = 0.05
    l2: float = 1e-4
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.l2 < 0:
            raise InvalidArgumentError("lr must be > 0 and l2 >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "l2": self.l2,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


@dataclass(frozen=True, slots=True)
class NetHyper:
    epochs: int = 20
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    validation_fraction: float = 0.1
    seed: int = 0
    train_layers: Literal["head", "all"] = "head"

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise InvalidArgumentError("lr must be > 0 and momentum in [0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise InvalidArgumentError("validation_fraction must lie in [0, 1)")
        if self.train_layers not in ("head", "all"):
            raise InvalidArgumentError(f"unknown train_layers: {self.train_layers!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "validation_fraction": self.validation_fraction,
            "seed": self.seed,
            "train_layers": self.train_layers,
        }


def patches_to_tensor(patches: Sequence[ImagePatch]) -> Tensor:
    if not patches:
        raise InvalidArgumentError("no patches")
    return np.stack([patch.as_float() for patch in patches])[:, None, :, :]


def _check_finite(values: Tensor, what: str, trace: Sequence[float] = ()) -> None:
    if not np.all(np.isfinite(values)):
        raise TrainingDivergedError(f"non-finite {what}", loss_trace=trace)


def fit_linear_classifier(
    features: npt.ArrayLike, labels: npt.ArrayLike, hyper: LinearHyper | None = None
) -> tuple[Tensor, float]:
    """Hinge-loss SGD on standardised features; the scaling is folded back into ``(w, b)``."""
    settings = hyper or LinearHyper()
    data = np.asarray(features, dtype=np.float64)
    targets = np.asarray(labels, dtype=np.int64)
    if data.ndim != 2 or targets.shape != (data.shape[0],):
        raise InvalidArgumentError("features must be (n, d) with one label per row")
    positives = int(targets.sum())
    if min(positives, len(targets) - positives) < 2:
        raise InvalidArgumentError("need >= 2 examples of each class")

    mean = data.mean(axis=0)
    spread = data.std(axis=0)
    spread[spread == 0] = 1.0
    standardized = (data - mean) / spread
    signs = 2.0 * targets - 1.0

    rng = np.random.default_rng(settings.seed)
    weights = np.zeros(data.shape[1])
    bias = 0.0
    trace: list[float] = []
    for epoch in range(settings.epochs):
        rate = settings.lr / (1.0 + 0.1 * epoch)
        order = rng.permutation(len(targets))
        for start in range(0, len(order), settings.batch_size):
            batch = order[start : start + settings.batch_size]
            margins = signs[batch] * (standardized[batch] @ weights + bias)
            active = margins < 1.0
            grad_w = settings.l2 * weights - (
                signs[batch][active, None] * standardized[batch][active]
            ).sum(axis=0) / len(batch)
            grad_b = -float(signs[batch][active].sum()) / len(batch)
            weights -= rate * grad_w
            bias -= rate * grad_b
        hinge = np.maximum(0.0, 1.0 - signs * (standardized @ weights + bias))
        trace.append(float(hinge.mean() + 0.5 * settings.l2 * weights @ weights))
        _check_finite(np.append(weights, bias), "linear classifier weights", trace)
        logger.debug("Linear epoch=%s objective=%.6f", epoch, trace[-1])

    raw_weights = weights / spread
    raw_bias = bias - float(mean @ raw_weights)
    return raw_weights, raw_bias


def spam_features(patches: Sequence[ImagePatch], cfg: SpamConfig) -> Tensor:
    return np.stack([extract_spam(patch, cfg).values for patch in patches])


def spam_linear_from_features(
    features: npt.ArrayLike,
    labels: npt.ArrayLike,
    cfg: SpamConfig,
    hyper: LinearHyper | None = None,
    *,
    patch_size: int | None = None,
) -> DetectorModel:
    weights, bias = fit_linear_classifier(features, labels, hyper)
    return DetectorModel(
        variant="spam_linear",
        spam_config=cfg,
        weights=weights,
        bias=bias,
        patch_size=patch_size,
    )


def _uniform_patch_size(patches: Sequence[ImagePatch]) -> int:
    shapes = {patch.shape for patch in patches}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"patches must share one size, got {sorted(shapes)}")
    height, width = shapes.pop()
    if height != width:
        raise InvalidArgumentError(f"patches must be square, got {width}x{height}")
    return height


def train_spam_linear(
    train: TrainSet, cfg: SpamConfig | None = None, hyper: LinearHyper | None = None
) -> DetectorModel:
    resolved = cfg or SpamConfig()
    train.require_classes(2)
    features = spam_features(train.patches, resolved)
    model = spam_linear_from_features(
        features,
        train.labels,
        resolved,
        hyper,
        patch_size=_uniform_patch_size(train.patches),
    )
    logger.info(
        "Trained detector variant=spam_linear examples=%s dimension=%s",
        len(train),
        resolved.dimension,
    )
    return model


def _stage_kernel(direction: str, length: int) -> tuple[int, int]:
    return (1, length) if direction == "horizontal" else (length, 1)


def _place_taps(weight: Tensor, direction: str, values: Tensor) -> None:
    if direction == "horizontal":
        weight[:, :, 0, :] = values
    else:
        weight[:, :, :, 0] = values


def _cozz_branch(
    direction: str, cfg: SpamConfig, mode: Literal["hard", "soft"], temperature: float
) -> list[Layer]:
    bins = cfg.bins
    order = cfg.cooc_order
    prefix = direction[0]
    centers = np.arange(bins, dtype=np.float64) - cfg.truncation
    bias = -cfg.q * centers * centers / 2.0
    if mode == "hard":
        # hardmax keeps the lowest channel on a tie; half steps must round away from zero
        bias = bias + HALF_STEP_TIE_BREAK * np.abs(centers)

    quantize = Conv2d(
        1,
        bins,
        _stage_kernel(direction, SUPPORT),
        bias=bias,
        name=f"{prefix}_quantize",
        trainable=False,
    )
    taps = np.array(RESIDUAL_TAPS, dtype=np.float64)
    _place_taps(quantize.weight, direction, (centers[:, None] * taps)[:, None, :])

    patterns = cfg.raw_bins
    pattern = Conv2d(
        bins,
        patterns,
        _stage_kernel(direction, order),
        name=f"{prefix}_pattern",
        trainable=False,
    )
    codes = np.arange(patterns, dtype=np.int64)
    digits = (codes[:, None] // bins ** np.arange(order)) % bins
    match = np.zeros((patterns, bins, order))
    match[codes[:, None], digits, np.arange(order)[None, :]] = 1.0
    _place_taps(pattern.weight, direction, match)

    def selector(stage: str) -> Layer:
        if mode == "hard":
            return HardmaxChannels(name=f"{prefix}_{stage}_hardmax")
        return Softmax(temperature, name=f"{prefix}_{stage}_softmax")

    layers: list[Layer] = [
        quantize,
        selector("quantize"),
        pattern,
        selector("pattern"),
        GlobalAvgPool(name=f"{prefix}_pool"),
    ]
    if cfg.symmetrize:
        layers.append(BinAggregate(cfg.truncation, order, name=f"{prefix}_symmetrize"))
    return layers


def build_cozznet(
    cfg: SpamConfig,
    linear: tuple[npt.ArrayLike, float],
    mode: Literal["hard", "soft"] = "hard",
    temperature: float = DEFAULT_SOFT_TEMPERATURE,
    *,
    patch_size: int = 64,
) -> DetectorModel:
    """The pooled L1 histogram is rebased to ``cfg.normalization`` before the head."""
    if mode not in ("hard", "soft"):
        raise InvalidArgumentError(f"unknown cozznet mode: {mode!r}")
    if temperature <= 0:
        raise InvalidArgumentError("temperature must be > 0")
    if patch_size < cfg.min_patch_size:
        raise InvalidArgumentError(
            f"patch_size {patch_size} below the minimum {cfg.min_patch_size}"
        )
    weights = np.asarray(linear[0], dtype=np.float64).reshape(-1)
    if weights.shape[0] != cfg.dimension:
        raise InvalidArgumentError(
            f"linear weights have {weights.shape[0]} entries, "
            f"feature dimension is {cfg.dimension}"
        )

    layers: list[Layer] = [
        Parallel(
            [
                _cozz_branch(direction, cfg, mode, temperature)
                for direction in ("horizontal", "vertical")
            ],
            name="spam",
        )
    ]
    if cfg.normalization == "l2":
        layers.append(L2Normalize(name="rebase_l2"))
    elif cfg.normalization == "none":
        sites = patch_size * (patch_size - SUPPORT - cfg.cooc_order + 2)
        layers.append(Affine(float(sites), name="rebase_counts"))
    layers.append(
        FullyConnected(
            cfg.dimension,
            2,
            weight=np.vstack([np.zeros_like(weights), weights]),
            bias=np.array([0.0, float(linear[1])]),
            name="head",
        )
    )
    variant: Variant = "cozz_net_hard" if mode == "hard" else "cozz_net_soft"
    logger.debug(
        "Built cozznet mode=%s temperature=%s patch_size=%s", mode, temperature, patch_size
    )
    return DetectorModel(
        variant=variant,
        spam_config=cfg,
        network=Network(layers=layers, loss="softmax_cross_entropy"),
        patch_size=patch_size,
    )


def cozznet_histogram(model: DetectorModel, x: ImagePatch) -> Tensor:
    if model.variant not in ("cozz_net_hard", "cozz_net_soft") or model.network is None:
        raise InvalidArgumentError(f"{model.variant} has no pooled histogram stage")
    check_input(model, x)
    out, _ = model.network.layers[0].forward(patches_to_tensor([x]))
    return out[0]


def _head_index(network: Network) -> int:
    for index in range(len(network.layers) - 1, -1, -1):
        if isinstance(network.layers[index], FullyConnected):
            return index
    raise InvalidArgumentError("network has no fully connected head")


def _minibatches(count: int, batch_size: int, rng: np.random.Generator) -> list[Tensor]:
    order = rng.permutation(count)
    return [order[start : start + batch_size] for start in range(0, count, batch_size)]


def _validation_split(
    count: int, fraction: float, rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    order = rng.permutation(count)
    held_out = int(round(count * fraction))
    if held_out == 0:
        return order, order
    return order[held_out:], order[:held_out]


def _accuracy(net: Network, inputs: Tensor, labels: Tensor, batch_size: int) -> float:
    scores = np.concatenate(
        [
            scores_from_output(forward(net, inputs[start : start + batch_size])[0])
            for start in range(0, len(inputs), batch_size)
        ]
    )
    return float(np.mean((scores > 0).astype(np.int64) == labels))


def _train_network(
    net: Network,
    inputs: Tensor,
    labels: Tensor,
    hyper: NetHyper,
    *,
    constrained: bool,
    label: str,
) -> Network:
    rng = np.random.default_rng(hyper.seed)
    train_index, validation_index = _validation_split(
        len(labels), hyper.validation_fraction, rng
    )
    optimizer = Sgd(lr=hyper.lr, momentum=hyper.momentum)
    if constrained:
        project_network_bayar(net, rng=rng)

    best = net.copy()
    best_accuracy = -1.0
    trace: list[float] = []
    for epoch in range(hyper.epochs):
        losses: list[float] = []
        for batch in _minibatches(len(train_index), hyper.batch_size, rng):
            rows = train_index[batch]
            output, cache = forward(net, inputs[rows])
            loss, d_output = loss_and_gradient(output, labels[rows], net.loss)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{label}: non-finite loss at epoch {epoch}", loss_trace=trace + [loss]
                )
            grads, _ = backward(net, cache, d_output)
            optimizer.step(net, grads)
            if constrained:
                project_network_bayar(net, rng=rng)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        accuracy = _accuracy(
            net, inputs[validation_index], labels[validation_index], hyper.batch_size
        )
        logger.info(
            "Training epoch detector=%s epoch=%s loss=%.6f val_acc=%.4f",
            label,
            epoch,
            trace[-1],
            accuracy,
        )
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best = net.copy()
    return best


def build_bayar_network(seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)

    def he(shape: tuple[int, ...], fan_in: int) -> Tensor:
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

    first = Conv2d(
        1,
        8,
        (5, 5),
        constrained=True,
        weight=rng.uniform(0.0, 1.0, (8, 1, 5, 5)),
        name="constrained",
    )
    layers: list[Layer] = [
        Affine(BAYAR_INPUT_SCALE, name="input_scale"),
        first,
        MaxPool2d(2, name="pool1"),
        Conv2d(8, 16, (3, 3), weight=he((16, 8, 3, 3), 72), name="conv2"),
        ReLU(name="relu2"),
        MaxPool2d(2, name="pool2"),
        Conv2d(16, 16, (3, 3), weight=he((16, 16, 3, 3), 144), name="conv3"),
        ReLU(name="relu3"),
        GlobalAvgPool(name="gap"),
        FullyConnected(16, 64, weight=he((64, 16), 16), name="fc1"),
        ReLU(name="relu_fc1"),
        FullyConnected(64, 32, weight=he((32, 64), 64), name="fc2"),
        ReLU(name="relu_fc2"),
        FullyConnected(32, 2, weight=he((2, 32), 32), name="fc3"),
    ]
    net = Network(layers=layers, loss="softmax_cross_entropy")
    project_network_bayar(net, rng=rng)
    return net


def train_bayar(train: TrainSet, hyper: NetHyper | None = None) -> DetectorModel:
    settings = hyper or NetHyper()
    train.require_classes(2)
    patch_size = _uniform_patch_size(train.patches)
    net = build_bayar_network(settings.seed)
    best = _train_network(
        net,
        train.tensor(),
        np.asarray(train.labels, dtype=np.int64),
        settings,
        constrained=True,
        label="bayar_net",
    )
    return DetectorModel(variant="bayar_net", network=best, patch_size=patch_size)


def finetune_cozznet(
    model: DetectorModel, train: TrainSet, hyper: NetHyper | None = None
) -> DetectorModel:
    settings = hyper or NetHyper(epochs=10, lr=0.05)
    if model.variant not in ("cozz_net_hard", "cozz_net_soft") or model.network is None:
        raise InvalidArgumentError(f"cannot fine-tune a {model.variant} detector")
    train.require_classes(1)
    check_input(model, train.patches[0])
    labels = np.asarray(train.labels, dtype=np.int64)
    net = model.network.copy()
    head_index = _head_index(net)

    if settings.train_layers == "head":
        body = Network(layers=net.layers[:head_index], loss=net.loss)
        features = np.concatenate(
            [
                forward(body, patches_to_tensor(train.patches[start : start + COZZNET_BATCH]))[0]
                for start in range(0, len(train), COZZNET_BATCH)
            ]
        )
        head = Network(layers=net.layers[head_index:], loss=net.loss)
        trained_head = _train_network(
            head, features, labels, settings, constrained=False, label=model.variant
        )
        net = Network(layers=body.layers + trained_head.layers, loss=net.loss)
    else:
        if model.variant != "cozz_net_soft":
            raise UnsupportedOperationError(
                "end-to-end fine-tuning needs the soft variant (hardmax has no gradient)"
            )
        for layer in net.iter_layers():
            if isinstance(layer, Conv2d):
                layer.trainable = True
        net = _train_network(
            net, train.tensor(), labels, settings, constrained=False, label=model.variant
        )
    return replace(model, network=net)


def check_input(model: DetectorModel, x: ImagePatch) -> None:
    if model.patch_size is not None and x.shape != (model.patch_size, model.patch_size):
        raise InvalidArgumentError(
            f"{model.variant} expects {model.patch_size}x{model.patch_size} patches, "
            f"got {x.width}x{x.height}"
        )


def _default_batch(model: DetectorModel) -> int:
    return BAYAR_BATCH if model.variant == "bayar_net" else COZZNET_BATCH


def score_batch(
    model: DetectorModel, patches: Sequence[ImagePatch], *, batch_size: int | None = None
) -> Tensor:
    for patch in patches:
        check_input(model, patch)
    if not patches:
        return np.zeros(0)
    if model.variant == "spam_linear":
        assert model.spam_config is not None and model.weights is not None
        return spam_features(patches, model.spam_config) @ model.weights + model.bias

    assert model.network is not None
    step = batch_size or _default_batch(model)
    scores = [
        scores_from_output(
            forward(model.network, patches_to_tensor(patches[start : start + step]))[0]
        )
        for start in range(0, len(patches), step)
    ]
    return np.concatenate(scores)


def score(model: DetectorModel, x: ImagePatch) -> float:
    """Positive means manipulated: ``w.f + b`` for spam_linear, logit difference for nets."""
    return float(score_batch(model, [x])[0])


def predict(model: DetectorModel, x: ImagePatch) -> int:
    return int(score(model, x) > model.threshold)


def save_detector(model: DetectorModel, path: str | Path) -> None:
    header: dict[str, Any] = {
        "kind": "detector",
        "variant": model.variant,
        "threshold": model.threshold,
        "patch_size": model.patch_size,
        "fingerprint": model.fingerprint(),
        "spam": model.spam_config.to_dict() if model.spam_config else None,
    }
    if model.network is not None:
        header["network"] = model.network.spec()
        arrays = model.network.parameters()
    else:
        assert model.weights is not None
        arrays = [model.weights, np.array([model.bias])]
    write_container(path, header, arrays)
    logger.debug("Saved detector variant=%s path=%s", model.variant, path)


def load_detector(path: str | Path) -> DetectorModel:
    header, arrays = read_container(path)
    if header.get("kind") != "detector":
        raise ModelFormatError(f"{path}: container holds {header.get('kind')!r}, not a detector")
    spam = header.get("spam")
    cfg = SpamConfig.from_dict(spam) if spam else None
    common = {
        "variant": header["variant"],
        "spam_config": cfg,
        "threshold": float(header.get("threshold", 0.0)),
        "patch_size": header.get("patch_size"),
    }
    if "network" in header:
        net = network_from_spec(header["network"])
        load_network_parameters(net, arrays, path)
        model = DetectorModel(network=net, **common)
    else:
        if len(arrays) != 2 or arrays[1].shape != (1,):
            raise ModelFormatError(f"{path}: spam_linear needs (weights, bias) blobs")
        model = DetectorModel(weights=arrays[0], bias=float(arrays[1][0]), **common)
    if model.fingerprint() != header.get("fingerprint"):
        raise ModelFormatError(f"{path}: fingerprint mismatch")
    return model


"""Minimal sequential network engine on float64 numpy tensors.

Model container layout (little-endian)::

    8 bytes   magic  b"CFXMODEL"
    u16       format version (1)
    u32       header length L
    L bytes   UTF-8 JSON header: kind, layer specs, loss, fingerprint, meta,
              and "params": [{"shape": [...]}, ...] in blob order
    ...       one float64 blob per header param, C order, no padding
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar, Literal

import numpy as np
import numpy.typing as npt

from ._types import Tensor
from .errors import (
    DegenerateKernelError,
    InvalidArgumentError,
    ModelFormatError,
    ShapeMismatchError,
    TrainingDivergedError,
    UnsupportedOperationError,
)
from .spamfeat import SymmetryTable, build_symmetry_table

LossKind = Literal["softmax_cross_entropy", "hinge"]
MODEL_MAGIC = b"CFXMODEL"
MODEL_FORMAT_VERSION = 1
BAYAR_TOLERANCE = 1e-12

logger = logging.getLogger(__name__)


class Layer:
    kind: ClassVar[str] = "layer"

    def __init__(self, *, name: str | None = None, trainable: bool = True) -> None:
        self.name = name or self.kind
        self.trainable = trainable

    def parameters(self) -> list[Tensor]:
        return []

    def trainable_mask(self) -> list[bool]:
        return [self.trainable] * len(self.parameters())

    def load_parameters(self, values: Iterator[Tensor]) -> None:
        for target in self.parameters():
            source = next(values)
            if source.shape != target.shape:
                raise ModelFormatError(
                    f"{self.name}: parameter shape {source.shape} != {target.shape}"
                )
            np.copyto(target, source)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        raise NotImplementedError

    def spec(self) -> dict[str, Any]:
        return {"kind": self.kind, "name": self.name, "trainable": self.trainable}

    def _require_ndim(self, x: Tensor, ndim: int) -> None:
        if x.ndim != ndim:
            raise ShapeMismatchError(
                self.name, f"expected a {ndim}-D input, got shape {x.shape}"
            )


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: tuple[int, int],
        *,
        stride: int = 1,
        padding: int = 0,
        constrained: bool = False,
        weight: Tensor | None = None,
        bias: Tensor | None = None,
        name: str | None = None,
        trainable: bool = True,
    ) -> None:
        super().__init__(name=name, trainable=trainable)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = (int(kernel[0]), int(kernel[1]))
        self.stride = stride
        self.padding = padding
        self.constrained = constrained
        shape = (out_channels, in_channels) + self.kernel
        self.weight = (
            np.zeros(shape) if weight is None else np.array(weight, dtype=np.float64)
        )
        self.bias = (
            np.zeros(out_channels) if bias is None else np.array(bias, dtype=np.float64)
        )
        if self.weight.shape != shape or self.bias.shape != (out_channels,):
            raise ShapeMismatchError(self.name, "weight/bias shapes do not match spec")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def _windows(self, padded: Tensor, out_h: int, out_w: int) -> Iterator[tuple[int, int, Tensor]]:
        step = self.stride
        for i in range(self.kernel[0]):
            for j in range(self.kernel[1]):
                yield i, j, padded[
                    :,
                    :,
                    i : i + step * (out_h - 1) + 1 : step,
                    j : j + step * (out_w - 1) + 1 : step,
                ]

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 4)
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                self.name, f"expected {self.in_channels} channels, got {x.shape[1]}"
            )
        pad = self.padding
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        out_h = (padded.shape[2] - self.kernel[0]) // self.stride + 1
        out_w = (padded.shape[3] - self.kernel[1]) // self.stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchError(
                self.name, f"input {x.shape[2:]} smaller than kernel {self.kernel}"
            )
        out = np.zeros((x.shape[0], out_h, out_w, self.out_channels))
        for i, j, window in self._windows(padded, out_h, out_w):
            out += np.tensordot(window, self.weight[:, :, i, j], axes=([1], [1]))
        out += self.bias
        return out.transpose(0, 3, 1, 2), (x.shape, padded, out_h, out_w)

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        input_shape, padded, out_h, out_w = cache
        dy_last = dy.transpose(0, 2, 3, 1)
        d_weight = np.zeros_like(self.weight)
        d_padded = np.zeros_like(padded)
        step = self.stride
        for i, j, window in self._windows(padded, out_h, out_w):
            d_weight[:, :, i, j] = np.tensordot(dy_last, window, axes=([0, 1, 2], [0, 2, 3]))
            d_padded[
                :,
                :,
                i : i + step * (out_h - 1) + 1 : step,
                j : j + step * (out_w - 1) + 1 : step,
            ] += np.tensordot(dy_last, self.weight[:, :, i, j], axes=([3], [0])).transpose(
                0, 3, 1, 2
            )
        d_bias = dy.sum(axis=(0, 2, 3))
        pad = self.padding
        dx = d_padded[:, :, pad : pad + input_shape[2], pad : pad + input_shape[3]]
        return dx, [d_weight, d_bias]

    def spec(self) -> dict[str, Any]:
        return {
            **super().spec(),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": list(self.kernel),
            "stride": self.stride,
            "padding": self.padding,
            "constrained": self.constrained,
        }


class MaxPool2d(Layer):
    kind = "maxpool"

    def __init__(self, size: int = 2, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)
        if size < 1:
            raise InvalidArgumentError("pool size must be >= 1")
        self.size = size

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 4)
        n, c, h, w = x.shape
        k = self.size
        out_h, out_w = h // k, w // k
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchError(self.name, f"input {x.shape[2:]} smaller than pool {k}")
        windows = (
            x[:, :, : out_h * k, : out_w * k]
            .reshape(n, c, out_h, k, out_w, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, out_h, out_w, k * k)
        )
        argmax = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
        return out, (x.shape, argmax)

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        input_shape, argmax = cache
        n, c, h, w = input_shape
        k = self.size
        out_h, out_w = argmax.shape[2], argmax.shape[3]
        windows = np.zeros((n, c, out_h, out_w, k * k))
        np.put_along_axis(windows, argmax[..., None], dy[..., None], axis=-1)
        routed = (
            windows.reshape(n, c, out_h, out_w, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, out_h * k, out_w * k)
        )
        dx = np.zeros(input_shape)
        dx[:, :, : out_h * k, : out_w * k] = routed
        return dx, []

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "size": self.size}


class GlobalAvgPool(Layer):
    kind = "global_avgpool"

    def __init__(self, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 4)
        area = x.shape[2] * x.shape[3]
        return x.sum(axis=(2, 3)) / area, x.shape

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        shape = cache
        area = shape[2] * shape[3]
        return np.broadcast_to(dy[:, :, None, None] / area, shape).copy(), []


class ReLU(Layer):
    kind = "relu"

    def __init__(self, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        active = x > 0
        return np.where(active, x, 0.0), active

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        return dy * cache, []


class FullyConnected(Layer):
    kind = "fully_connected"

    def __init__(
        self,
        in_features: int,
        out_features: int,
        *,
        weight: Tensor | None = None,
        bias: Tensor | None = None,
        name: str | None = None,
        trainable: bool = True,
    ) -> None:
        super().__init__(name=name, trainable=trainable)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = (
            np.zeros((out_features, in_features))
            if weight is None
            else np.array(weight, dtype=np.float64)
        )
        self.bias = (
            np.zeros(out_features) if bias is None else np.array(bias, dtype=np.float64)
        )
        if self.weight.shape != (out_features, in_features) or self.bias.shape != (
            out_features,
        ):
            raise ShapeMismatchError(self.name, "weight/bias shapes do not match spec")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 2)
        if x.shape[1] != self.in_features:
            raise ShapeMismatchError(
                self.name, f"expected {self.in_features} features, got {x.shape[1]}"
            )
        return x @ self.weight.T + self.bias, x

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        x = cache
        return dy @ self.weight, [dy.T @ x, dy.sum(axis=0)]

    def spec(self) -> dict[str, Any]:
        return {
            **super().spec(),
            "in_features": self.in_features,
            "out_features": self.out_features,
        }


class Softmax(Layer):
    kind = "softmax"

    def __init__(self, temperature: float = 1.0, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)
        if temperature <= 0:
            raise InvalidArgumentError("softmax temperature must be > 0")
        self.temperature = temperature

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        scaled = x / self.temperature
        exp = np.exp(scaled - scaled.max(axis=1, keepdims=True))
        out = exp / exp.sum(axis=1, keepdims=True)
        return out, out

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        out = cache
        inner = (dy * out).sum(axis=1, keepdims=True)
        return out * (dy - inner) / self.temperature, []

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "temperature": self.temperature}


class HardmaxChannels(Layer):
    """One-hot of the channel argmax; ties go to the lowest channel index."""

    kind = "hardmax_channels"

    def __init__(self, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        winners = x.argmax(axis=1)
        out = np.zeros_like(x)
        np.put_along_axis(out, np.expand_dims(winners, 1), 1.0, axis=1)
        return out, None

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        raise UnsupportedOperationError(
            f"{self.name}: hardmax is not differentiable; build the softmax variant"
        )


class BinAggregate(Layer):
    kind = "bin_aggregate"

    def __init__(self, truncation: int, order: int, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)
        self.truncation = truncation
        self.order = order
        self.table: SymmetryTable = build_symmetry_table(truncation, order)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 2)
        if x.shape[1] != self.table.class_of.shape[0]:
            raise ShapeMismatchError(
                self.name,
                f"expected {self.table.class_of.shape[0]} bins, got {x.shape[1]}",
            )
        return self.table.project(x), None

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        return dy[:, self.table.class_of], []

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "truncation": self.truncation, "order": self.order}


class L2Normalize(Layer):
    kind = "l2_normalize"

    def __init__(self, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        self._require_ndim(x, 2)
        norm = np.linalg.norm(x, axis=1, keepdims=True)
        out = x / norm
        return out, (out, norm)

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        out, norm = cache
        inner = (dy * out).sum(axis=1, keepdims=True)
        return (dy - out * inner) / norm, []


class Affine(Layer):
    kind = "affine"

    def __init__(self, scale: float, shift: float = 0.0, *, name: str | None = None) -> None:
        super().__init__(name=name, trainable=False)
        self.scale = scale
        self.shift = shift

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        return self.scale * x + self.shift, None

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        return self.scale * dy, []

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "scale": self.scale, "shift": self.shift}


def _forward_chain(layers: Sequence[Layer], x: Tensor) -> tuple[Tensor, list[Any]]:
    caches: list[Any] = []
    for layer in layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def _backward_chain(
    layers: Sequence[Layer], caches: Sequence[Any], dy: Tensor
) -> tuple[Tensor, list[Tensor]]:
    grads_by_layer: list[list[Tensor]] = []
    for layer, cache in zip(reversed(layers), reversed(caches)):
        dy, grads = layer.backward(cache, dy)
        grads_by_layer.append(grads)
    flat = [grad for grads in reversed(grads_by_layer) for grad in grads]
    return dy, flat


class Parallel(Layer):
    kind = "parallel"

    def __init__(self, branches: Sequence[Sequence[Layer]], *, name: str | None = None) -> None:
        super().__init__(name=name)
        if not branches:
            raise InvalidArgumentError("parallel layer needs at least one branch")
        self.branches = [list(branch) for branch in branches]

    def parameters(self) -> list[Tensor]:
        return [p for branch in self.branches for layer in branch for p in layer.parameters()]

    def trainable_mask(self) -> list[bool]:
        return [m for branch in self.branches for layer in branch for m in layer.trainable_mask()]

    def load_parameters(self, values: Iterator[Tensor]) -> None:
        for branch in self.branches:
            for layer in branch:
                layer.load_parameters(values)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        outputs: list[Tensor] = []
        caches: list[list[Any]] = []
        for branch in self.branches:
            out, branch_caches = _forward_chain(branch, x)
            outputs.append(out)
            caches.append(branch_caches)
        trailing = {out.shape[2:] for out in outputs}
        if len(trailing) != 1 or len({out.shape[0] for out in outputs}) != 1:
            raise ShapeMismatchError(
                self.name, f"branch outputs cannot be concatenated: {[o.shape for o in outputs]}"
            )
        widths = [out.shape[1] for out in outputs]
        return np.concatenate(outputs, axis=1), (caches, widths)

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        caches, widths = cache
        dx: Tensor | None = None
        grads: list[Tensor] = []
        bounds = np.cumsum([0] + widths)
        for index, branch in enumerate(self.branches):
            d_branch = dy[:, bounds[index] : bounds[index + 1]]
            d_in, branch_grads = _backward_chain(branch, caches[index], d_branch)
            dx = d_in if dx is None else dx + d_in
            grads.extend(branch_grads)
        assert dx is not None
        return dx, grads

    def spec(self) -> dict[str, Any]:
        return {
            **super().spec(),
            "branches": [[layer.spec() for layer in branch] for branch in self.branches],
        }


class Residual(Layer):
    kind = "residual"

    def __init__(self, body: Sequence[Layer], *, name: str | None = None) -> None:
        super().__init__(name=name)
        self.body = list(body)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.body for p in layer.parameters()]

    def trainable_mask(self) -> list[bool]:
        return [m for layer in self.body for m in layer.trainable_mask()]

    def load_parameters(self, values: Iterator[Tensor]) -> None:
        for layer in self.body:
            layer.load_parameters(values)

    def forward(self, x: Tensor) -> tuple[Tensor, Any]:
        out, caches = _forward_chain(self.body, x)
        if out.shape != x.shape:
            raise ShapeMismatchError(
                self.name, f"body maps {x.shape} to {out.shape}; shapes must match"
            )
        return x + out, caches

    def backward(self, cache: Any, dy: Tensor) -> tuple[Tensor, list[Tensor]]:
        d_body, grads = _backward_chain(self.body, cache, dy)
        return dy + d_body, grads

    def spec(self) -> dict[str, Any]:
        return {**super().spec(), "body": [layer.spec() for layer in self.body]}


@dataclass(slots=True)
class Network:
    layers: list[Layer] = field(default_factory=list)
    loss: LossKind = "softmax_cross_entropy"

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def trainable_mask(self) -> list[bool]:
        return [m for layer in self.layers for m in layer.trainable_mask()]

    def iter_layers(self) -> Iterator[Layer]:
        stack = list(reversed(self.layers))
        while stack:
            layer = stack.pop()
            yield layer
            if isinstance(layer, Parallel):
                for branch in reversed(layer.branches):
                    stack.extend(reversed(branch))
            elif isinstance(layer, Residual):
                stack.extend(reversed(layer.body))

    @property
    def differentiable(self) -> bool:
        return not any(isinstance(layer, HardmaxChannels) for layer in self.iter_layers())

    def copy(self) -> Network:
        return copy.deepcopy(self)

    def spec(self) -> dict[str, Any]:
        return {"loss": self.loss, "layers": [layer.spec() for layer in self.layers]}


def forward(net: Network, x: Tensor) -> tuple[Tensor, list[Any]]:
    return _forward_chain(net.layers, np.asarray(x, dtype=np.float64))


def backward(
    net: Network, cache: Sequence[Any], upstream: Tensor
) -> tuple[list[Tensor], Tensor]:
    """Return ``(parameter gradients aligned with net.parameters(), input gradient)``."""
    dx, grads = _backward_chain(net.layers, cache, upstream)
    return grads, dx


def scores_from_output(output: Tensor) -> Tensor:
    if output.ndim != 2 or output.shape[1] not in (1, 2):
        raise InvalidArgumentError(f"cannot read scores from output shape {output.shape}")
    if output.shape[1] == 1:
        return output[:, 0]
    return output[:, 1] - output[:, 0]


def loss_and_gradient(
    output: Tensor, labels: npt.ArrayLike, kind: LossKind
) -> tuple[float, Tensor]:
    targets = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch = output.shape[0]
    if targets.shape[0] != batch:
        raise InvalidArgumentError(f"{targets.shape[0]} labels for a batch of {batch}")

    if kind == "softmax_cross_entropy":
        shifted = output - output.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -float(log_probs[np.arange(batch), targets].mean())
        grad = np.exp(log_probs)
        grad[np.arange(batch), targets] -= 1.0
        return loss, grad / batch

    if kind == "hinge":
        signs = 2.0 * targets - 1.0
        margins = 1.0 - signs * scores_from_output(output)
        loss = float(np.maximum(margins, 0.0).mean())
        d_score = np.where(margins > 0, -signs, 0.0) / batch
        grad = np.zeros_like(output)
        if output.shape[1] == 1:
            grad[:, 0] = d_score
        else:
            grad[:, 1] = d_score
            grad[:, 0] = -d_score
        return loss, grad

    raise InvalidArgumentError(f"unknown loss: {kind!r}")


def input_gradient(net: Network, x: Tensor, label: int | npt.ArrayLike) -> Tensor:
    if not net.differentiable:
        raise UnsupportedOperationError("network contains a hardmax layer")
    batch = np.asarray(x, dtype=np.float64)
    output, cache = forward(net, batch)
    labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (batch.shape[0],))
    _, d_output = loss_and_gradient(output, labels, net.loss)
    _, dx = backward(net, cache, d_output)
    return dx


def sgd_step(
    net: Network,
    grads: Sequence[Tensor],
    *,
    lr: float,
    momentum: float = 0.0,
    velocity: list[Tensor] | None = None,
) -> Network:
    """Classical momentum, in place; pass the same ``velocity`` list across steps."""
    if lr <= 0:
        raise InvalidArgumentError("learning rate must be > 0")
    params = net.parameters()
    if len(grads) != len(params):
        raise InvalidArgumentError(f"{len(grads)} gradients for {len(params)} parameters")
    if not all(np.all(np.isfinite(grad)) for grad in grads):
        raise TrainingDivergedError("non-finite gradient")

    if velocity is not None and not velocity:
        velocity.extend(np.zeros_like(param) for param in params)
    for index, (param, grad, trainable) in enumerate(
        zip(params, grads, net.trainable_mask())
    ):
        if not trainable:
            continue
        if velocity is None:
            param -= lr * grad
            continue
        velocity[index] *= momentum
        velocity[index] -= lr * grad
        param += velocity[index]
    return net


@dataclass(slots=True)
class Sgd:
    lr: float
    momentum: float = 0.0
    velocity: list[Tensor] = field(default_factory=list)

    def step(self, net: Network, grads: Sequence[Tensor]) -> Network:
        return sgd_step(
            net, grads, lr=self.lr, momentum=self.momentum, velocity=self.velocity
        )


@dataclass(frozen=True, slots=True, eq=False)
class ConstrainedKernel:
    weights: Tensor

    @property
    def center(self) -> tuple[int, int]:
        return (self.weights.shape[0] // 2, self.weights.shape[1] // 2)


def project_bayar(kernel: ConstrainedKernel) -> ConstrainedKernel:
    """Centre weight -1, off-centre weights rescaled to sum to 1."""
    weights = np.array(kernel.weights, dtype=np.float64)
    center = kernel.center
    off_center = np.ones(weights.shape, dtype=bool)
    off_center[center] = False
    total = float(weights[off_center].sum())
    if abs(total) <= BAYAR_TOLERANCE:
        raise DegenerateKernelError(total)
    if weights[center] == -1.0 and abs(total - 1.0) <= BAYAR_TOLERANCE:
        return ConstrainedKernel(weights)
    weights[off_center] /= total
    weights[center] = -1.0
    return ConstrainedKernel(weights)


def project_network_bayar(net: Network, *, rng: np.random.Generator | None = None) -> int:
    """Returns how many degenerate filters had to be reinitialised."""
    resets = 0
    for layer in net.iter_layers():
        if not (isinstance(layer, Conv2d) and layer.constrained):
            continue
        for out_index in range(layer.out_channels):
            for in_index in range(layer.in_channels):
                kernel = ConstrainedKernel(layer.weight[out_index, in_index])
                try:
                    projected = project_bayar(kernel)
                except DegenerateKernelError:
                    generator = rng or np.random.default_rng(out_index * 7919 + in_index)
                    fresh = generator.uniform(0.0, 1.0, layer.kernel)
                    projected = project_bayar(ConstrainedKernel(fresh))
                    resets += 1
                    logger.warning(
                        "Reinitialised degenerate constrained filter layer=%s out=%s in=%s",
                        layer.name,
                        out_index,
                        in_index,
                    )
                layer.weight[out_index, in_index] = projected.weights
    return resets


def _layer_from_spec(spec: dict[str, Any]) -> Layer:
    kind = spec.get("kind")
    name = spec.get("name")
    trainable = bool(spec.get("trainable", True))
    if kind == Conv2d.kind:
        return Conv2d(
            int(spec["in_channels"]),
            int(spec["out_channels"]),
            (int(spec["kernel"][0]), int(spec["kernel"][1])),
            stride=int(spec.get("stride", 1)),
            padding=int(spec.get("padding", 0)),
            constrained=bool(spec.get("constrained", False)),
            name=name,
            trainable=trainable,
        )
    if kind == MaxPool2d.kind:
        return MaxPool2d(int(spec["size"]), name=name)
    if kind == GlobalAvgPool.kind:
        return GlobalAvgPool(name=name)
    if kind == ReLU.kind:
        return ReLU(name=name)
    if kind == FullyConnected.kind:
        return FullyConnected(
            int(spec["in_features"]),
            int(spec["out_features"]),
            name=name,
            trainable=trainable,
        )
    if kind == Softmax.kind:
        return Softmax(float(spec["temperature"]), name=name)
    if kind == HardmaxChannels.kind:
        return HardmaxChannels(name=name)
    if kind == BinAggregate.kind:
        return BinAggregate(int(spec["truncation"]), int(spec["order"]), name=name)
    if kind == L2Normalize.kind:
        return L2Normalize(name=name)
    if kind == Affine.kind:
        return Affine(float(spec["scale"]), float(spec["shift"]), name=name)
    if kind == Parallel.kind:
        return Parallel(
            [[_layer_from_spec(item) for item in branch] for branch in spec["branches"]],
            name=name,
        )
    if kind == Residual.kind:
        return Residual([_layer_from_spec(item) for item in spec["body"]], name=name)
    raise ModelFormatError(f"unknown layer kind: {kind!r}")


def network_from_spec(spec: dict[str, Any]) -> Network:
    try:
        layers = [_layer_from_spec(item) for item in spec["layers"]]
        return Network(layers=layers, loss=spec.get("loss", "softmax_cross_entropy"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed network spec: {exc}") from exc


def write_container(path: str | Path, header: dict[str, Any], arrays: Sequence[Tensor]) -> None:
    payload_header = dict(header)
    payload_header["params"] = [{"shape": list(array.shape)} for array in arrays]
    encoded = json.dumps(payload_header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<HI", MODEL_FORMAT_VERSION, len(encoded)))
        handle.write(encoded)
        for array in arrays:
            handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_container(path: str | Path) -> tuple[dict[str, Any], list[Tensor]]:
    data = Path(path).read_bytes()
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    offset = len(MODEL_MAGIC)
    try:
        version, header_length = struct.unpack_from("<HI", data, offset)
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated header") from exc
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    offset += struct.calcsize("<HI")
    try:
        header = json.loads(data[offset : offset + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header") from exc
    offset += header_length

    arrays: list[Tensor] = []
    for entry in header.get("params", []):
        shape = tuple(int(extent) for extent in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise ModelFormatError(f"{path}: truncated parameter blob")
        blob = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64)
        arrays.append(blob.reshape(shape))
        offset = end
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


def save_network(
    net: Network, path: str | Path, *, meta: dict[str, Any] | None = None
) -> None:
    header = {"kind": "network", "network": net.spec(), "meta": meta or {}}
    write_container(path, header, net.parameters())
    logger.debug("Saved network path=%s params=%s", path, len(net.parameters()))


def load_network_parameters(net: Network, arrays: Sequence[Tensor], path: str | Path) -> None:
    values = iter(arrays)
    try:
        for layer in net.layers:
            layer.load_parameters(values)
    except StopIteration as exc:
        raise ModelFormatError(f"{path}: missing parameter blobs") from exc
    surplus = sum(1 for _ in values)
    if surplus:
        raise ModelFormatError(f"{path}: {surplus} unused parameter blobs")


def load_network(path: str | Path) -> tuple[Network, dict[str, Any]]:
    header, arrays = read_container(path)
    if header.get("kind") != "network":
        raise ModelFormatError(f"{path}: container holds {header.get('kind')!r}, not a network")
    net = network_from_spec(header["network"])
    load_network_parameters(net, arrays, path)
    return net, dict(header.get("meta", {}))

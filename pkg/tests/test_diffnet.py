from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from counterforensics.diffnet import (
    MODEL_MAGIC,
    Affine,
    BinAggregate,
    ConstrainedKernel,
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
    Residual,
    Sgd,
    Softmax,
    backward,
    forward,
    input_gradient,
    load_network,
    loss_and_gradient,
    project_bayar,
    project_network_bayar,
    save_network,
    scores_from_output,
    sgd_step,
    write_container,
)
from counterforensics.errors import (
    DegenerateKernelError,
    ModelFormatError,
    ShapeMismatchError,
    TrainingDivergedError,
    UnsupportedOperationError,
)

EPS = 1e-6


def _numeric_input_gradient(layer: Layer, x: np.ndarray, probe: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + EPS
        plus = float((layer.forward(x)[0] * probe).sum())
        x[index] = original - EPS
        minus = float((layer.forward(x)[0] * probe).sum())
        x[index] = original
        grad[index] = (plus - minus) / (2 * EPS)
    return grad


def _numeric_parameter_gradients(
    layer: Layer, x: np.ndarray, probe: np.ndarray
) -> list[np.ndarray]:
    grads = []
    for param in layer.parameters():
        grad = np.zeros_like(param)
        for index in np.ndindex(param.shape):
            original = param[index]
            param[index] = original + EPS
            plus = float((layer.forward(x)[0] * probe).sum())
            param[index] = original - EPS
            minus = float((layer.forward(x)[0] * probe).sum())
            param[index] = original
            grad[index] = (plus - minus) / (2 * EPS)
        grads.append(grad)
    return grads


def _check_layer(layer: Layer, x: np.ndarray, *, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    out, cache = layer.forward(x)
    probe = rng.standard_normal(out.shape)

    dx, grads = layer.backward(cache, probe)

    np.testing.assert_allclose(dx, _numeric_input_gradient(layer, x, probe), atol=1e-5)
    for analytic, numeric in zip(grads, _numeric_parameter_gradients(layer, x, probe)):
        np.testing.assert_allclose(analytic, numeric, atol=1e-5)


def _random_conv(
    rng: np.random.Generator, in_channels: int, out_channels: int, size: int, **kwargs: int
) -> Conv2d:
    return Conv2d(
        in_channels,
        out_channels,
        (size, size),
        weight=rng.standard_normal((out_channels, in_channels, size, size)),
        bias=rng.standard_normal(out_channels),
        **kwargs,
    )


def test_empty_network_is_identity() -> None:
    x = np.arange(6, dtype=np.float64).reshape(1, 6)

    out, _ = forward(Network(), x)

    assert np.array_equal(out, x)


def test_relu_and_unit_conv_examples() -> None:
    relu_out, _ = ReLU().forward(np.array([-1.0, 0.0, 2.0]))
    assert relu_out.tolist() == [0.0, 0.0, 2.0]

    conv = Conv2d(1, 1, (1, 1), weight=np.full((1, 1, 1, 1), 2.0), bias=np.ones(1))
    out, _ = conv.forward(np.full((1, 1, 1, 1), 3.0))
    assert out.item() == 7.0


def test_relu_subgradient_at_zero_is_zero() -> None:
    layer = ReLU()
    _, cache = layer.forward(np.array([[0.0, 1.0]]))

    dx, _ = layer.backward(cache, np.array([[5.0, 5.0]]))

    assert dx.tolist() == [[0.0, 5.0]]


@pytest.mark.parametrize(("stride", "padding"), [(1, 0), (2, 1), (1, 2)])
def test_conv_gradients(stride: int, padding: int) -> None:
    rng = np.random.default_rng(stride * 10 + padding)
    layer = _random_conv(rng, 2, 3, 3, stride=stride, padding=padding)

    _check_layer(layer, rng.standard_normal((2, 2, 6, 5)))


def test_rectangular_conv_gradients() -> None:
    rng = np.random.default_rng(1)
    layer = Conv2d(1, 2, (4, 1), weight=rng.standard_normal((2, 1, 4, 1)))

    _check_layer(layer, rng.standard_normal((1, 1, 7, 3)))


def test_pooling_and_activation_gradients() -> None:
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 5, 6))

    _check_layer(MaxPool2d(2), x.copy())
    _check_layer(GlobalAvgPool(), x.copy())
    _check_layer(ReLU(), x.copy())
    _check_layer(Softmax(0.5), x.copy())
    _check_layer(Affine(0.25, -3.0), x.copy())


def test_dense_gradients() -> None:
    rng = np.random.default_rng(3)
    layer = FullyConnected(4, 3, weight=rng.standard_normal((3, 4)), bias=rng.standard_normal(3))

    _check_layer(layer, rng.standard_normal((5, 4)))
    _check_layer(L2Normalize(), rng.standard_normal((3, 7)))
    _check_layer(BinAggregate(1, 2), rng.standard_normal((2, 9)))


def test_container_gradients() -> None:
    rng = np.random.default_rng(4)
    parallel = Parallel(
        [
            [_random_conv(rng, 1, 2, 3), GlobalAvgPool()],
            [_random_conv(rng, 1, 1, 2), ReLU(), GlobalAvgPool()],
        ]
    )
    residual = Residual([_random_conv(rng, 2, 2, 3, padding=1), ReLU()])

    _check_layer(parallel, rng.standard_normal((2, 1, 5, 5)))
    _check_layer(residual, rng.standard_normal((1, 2, 4, 4)))


def test_maxpool_ties_go_to_first_position() -> None:
    layer = MaxPool2d(2)
    x = np.ones((1, 1, 2, 2))
    out, cache = layer.forward(x)

    dx, _ = layer.backward(cache, np.ones_like(out))

    assert dx[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_hardmax_is_one_hot_and_refuses_backward() -> None:
    layer = HardmaxChannels()
    out, cache = layer.forward(np.array([[[[1.0]], [[3.0]], [[3.0]]]]))

    assert out[0, :, 0, 0].tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(UnsupportedOperationError):
        layer.backward(cache, np.ones_like(out))

    net = Network(layers=[HardmaxChannels()])
    assert not net.differentiable
    with pytest.raises(UnsupportedOperationError):
        input_gradient(net, np.ones((1, 2, 1, 1)), 0)


def test_shape_mismatch_names_the_layer() -> None:
    net = Network(layers=[FullyConnected(3, 1, name="head")])

    with pytest.raises(ShapeMismatchError) as excinfo:
        forward(net, np.ones((1, 4)))

    assert excinfo.value.layer == "head"


def test_linear_network_input_gradient_is_weight_vector() -> None:
    weight = np.array([[0.5, -2.0, 3.0]])
    net = Network(layers=[FullyConnected(3, 1, weight=weight)])
    x = np.array([[0.1, 0.2, 0.3]])

    out, cache = forward(net, x)
    _, dx = backward(net, cache, np.ones_like(out))

    assert np.array_equal(dx[0], weight[0])


def test_hinge_input_gradient_is_signed_weights() -> None:
    weight = np.array([[1.0, -1.0]])
    net = Network(layers=[FullyConnected(2, 1, weight=weight)], loss="hinge")
    x = np.zeros((1, 2))

    assert np.array_equal(input_gradient(net, x, 1)[0], -weight[0])
    assert np.array_equal(input_gradient(net, x, 0)[0], weight[0])


def test_input_gradient_is_zero_outside_receptive_field() -> None:
    rng = np.random.default_rng(5)
    net = Network(
        layers=[
            _random_conv(rng, 1, 2, 2, stride=2),
            GlobalAvgPool(),
            FullyConnected(2, 2, weight=rng.standard_normal((2, 2))),
        ]
    )

    dx = input_gradient(net, rng.standard_normal((1, 1, 5, 5)), 1)

    assert not dx[0, 0, 4, :].any()
    assert not dx[0, 0, :, 4].any()


def test_cross_entropy_loss_and_gradient() -> None:
    output = np.array([[0.0, 0.0], [2.0, 0.0]])

    loss, grad = loss_and_gradient(output, [1, 0], "softmax_cross_entropy")

    expected = 0.5 * (np.log(2.0) + np.log1p(np.exp(-2.0)))
    assert loss == pytest.approx(expected)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)
    assert scores_from_output(output).tolist() == [0.0, -2.0]


def test_sgd_plain_step_and_zero_gradients() -> None:
    layer = FullyConnected(1, 1)
    net = Network(layers=[layer])

    sgd_step(net, [np.ones((1, 1)), np.zeros(1)], lr=0.1)
    assert layer.weight.item() == pytest.approx(-0.1)

    before = [p.copy() for p in net.parameters()]
    sgd_step(net, [np.zeros((1, 1)), np.zeros(1)], lr=0.1, momentum=0.9, velocity=[])
    assert all(np.array_equal(a, b) for a, b in zip(before, net.parameters()))


def test_sgd_momentum_matches_unrolled_recurrence() -> None:
    layer = FullyConnected(1, 1, weight=np.array([[1.0]]))
    net = Network(layers=[layer])
    optimizer = Sgd(lr=0.1, momentum=0.9)
    g1, g2 = 2.0, -1.0

    optimizer.step(net, [np.array([[g1]]), np.zeros(1)])
    optimizer.step(net, [np.array([[g2]]), np.zeros(1)])

    v1 = -0.1 * g1
    v2 = 0.9 * v1 - 0.1 * g2
    assert layer.weight.item() == pytest.approx(1.0 + v1 + v2)


def test_sgd_skips_frozen_layers_and_rejects_nan() -> None:
    frozen = FullyConnected(1, 1, weight=np.array([[4.0]]), trainable=False)
    net = Network(layers=[frozen])

    sgd_step(net, [np.ones((1, 1)), np.ones(1)], lr=1.0)
    assert frozen.weight.item() == 4.0

    with pytest.raises(TrainingDivergedError):
        sgd_step(net, [np.full((1, 1), np.nan), np.ones(1)], lr=1.0)


def test_project_bayar_examples() -> None:
    kernel = np.full((5, 5), 2.0)
    projected = project_bayar(ConstrainedKernel(kernel)).weights
    assert projected[2, 2] == -1.0
    off_center = np.delete(projected.ravel(), 12)
    np.testing.assert_allclose(off_center, 1.0 / 24.0)

    assert np.array_equal(project_bayar(ConstrainedKernel(projected)).weights, projected)

    negative = np.zeros((3, 3))
    negative[0, 0] = -2.0
    negative[2, 2] = -2.0
    flipped = project_bayar(ConstrainedKernel(negative)).weights
    assert flipped[0, 0] == 0.5
    assert flipped[1, 1] == -1.0
    assert np.delete(flipped.ravel(), 4).sum() == pytest.approx(1.0)


def test_project_bayar_rejects_degenerate_kernel() -> None:
    kernel = np.zeros((3, 3))
    kernel[1, 1] = 7.0

    with pytest.raises(DegenerateKernelError):
        project_bayar(ConstrainedKernel(kernel))


def test_project_network_reinitialises_degenerate_filters() -> None:
    conv = Conv2d(1, 2, (3, 3), constrained=True)
    conv.weight[0] = np.full((1, 3, 3), 2.0)
    conv.weight[1] = np.zeros((1, 3, 3))
    conv.weight[1, 0, 1, 1] = 5.0
    net = Network(layers=[conv])

    resets = project_network_bayar(net, rng=np.random.default_rng(0))

    assert resets == 1
    for out_index in range(2):
        filt = conv.weight[out_index, 0]
        assert filt[1, 1] == -1.0
        assert np.delete(filt.ravel(), 4).sum() == pytest.approx(1.0, abs=1e-12)


def test_network_save_load_round_trip(tmp_path: Path) -> None:
    rng = np.random.default_rng(6)
    net = Network(
        layers=[
            Affine(0.5),
            _random_conv(rng, 1, 2, 3, padding=1),
            ReLU(),
            MaxPool2d(2),
            GlobalAvgPool(),
            FullyConnected(2, 2, weight=rng.standard_normal((2, 2))),
        ]
    )
    x = rng.standard_normal((2, 1, 6, 6))
    path = tmp_path / "net.cfm"

    save_network(net, path, meta={"note": "round-trip"})
    loaded, meta = load_network(path)

    assert meta == {"note": "round-trip"}
    assert loaded.spec() == net.spec()
    assert np.array_equal(forward(loaded, x)[0], forward(net, x)[0])
    assert path.read_bytes()[: len(MODEL_MAGIC)] == MODEL_MAGIC


def test_load_network_rejects_corrupt_files(tmp_path: Path) -> None:
    net = Network(layers=[FullyConnected(2, 1)])
    path = tmp_path / "net.cfm"
    save_network(net, path)

    truncated = tmp_path / "truncated.cfm"
    truncated.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ModelFormatError):
        load_network(truncated)

    foreign = tmp_path / "foreign.cfm"
    foreign.write_bytes(b"NOTAMODEL" + path.read_bytes())
    with pytest.raises(ModelFormatError, match="magic"):
        load_network(foreign)


def test_load_network_rejects_unused_parameter_blobs(tmp_path: Path) -> None:
    net = Network(layers=[FullyConnected(2, 1)])
    path = tmp_path / "padded.cfm"
    header = {"kind": "network", "network": net.spec(), "meta": {}}
    write_container(path, header, [*net.parameters(), np.zeros(3)])

    with pytest.raises(ModelFormatError, match="1 unused"):
        load_network(path)


def test_load_network_rejects_missing_parameter_blobs(tmp_path: Path) -> None:
    net = Network(layers=[FullyConnected(2, 1)])
    path = tmp_path / "short.cfm"
    header = {"kind": "network", "network": net.spec(), "meta": {}}
    write_container(path, header, net.parameters()[:1])

    with pytest.raises(ModelFormatError, match="missing"):
        load_network(path)


def test_copy_is_independent() -> None:
    layer = FullyConnected(1, 1)
    net = Network(layers=[layer])

    clone = net.copy()
    sgd_step(clone, [np.ones((1, 1)), np.ones(1)], lr=1.0)

    assert layer.weight.item() == 0.0

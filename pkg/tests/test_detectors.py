from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from counterforensics.detectors import (
    DetectorModel,
    LinearHyper,
    NetHyper,
    TrainSet,
    build_bayar_network,
    build_cozznet,
    cozznet_histogram,
    finetune_cozznet,
    fit_linear_classifier,
    load_detector,
    predict,
    save_detector,
    score,
    score_batch,
    train_bayar,
    train_spam_linear,
)
from counterforensics.diffnet import ConstrainedKernel, Conv2d, project_bayar, save_network
from counterforensics.errors import (
    InvalidArgumentError,
    ModelFormatError,
    UnsupportedOperationError,
)
from counterforensics.imaging import (
    ImagePatch,
    default_devices,
    generate_synthetic_image,
    read_pgm,
    write_pgm,
)
from counterforensics.manipulations import ManipulationSpec, apply
from counterforensics.spamfeat import SpamConfig, extract_spam


def _random_patch(seed: int, size: int = 16) -> ImagePatch:
    rng = np.random.default_rng(seed)
    return ImagePatch.from_array(rng.integers(0, 256, size=(size, size)))


def _task_set(count: int, size: int, spec: ManipulationSpec, *, seed: int = 0) -> TrainSet:
    devices = default_devices(3)
    patches: list[ImagePatch] = []
    labels: list[int] = []
    device_ids: list[int] = []
    for index in range(count):
        device = devices[index % len(devices)]
        pristine = generate_synthetic_image(device, size, size, seed=seed * 1000 + index)
        patches.extend([pristine, apply(pristine, spec)])
        labels.extend([0, 1])
        device_ids.extend([device.device_id] * 2)
    return TrainSet(tuple(patches), tuple(labels), tuple(device_ids))


def _random_linear(cfg: SpamConfig, seed: int = 0) -> tuple[np.ndarray, float]:
    rng = np.random.default_rng(seed)
    return rng.standard_normal(cfg.dimension), float(rng.standard_normal())


def test_fit_linear_classifier_separates_blobs() -> None:
    rng = np.random.default_rng(0)
    negatives = rng.normal(-1.0, 0.2, size=(40, 5))
    positives = rng.normal(1.0, 0.2, size=(40, 5))
    features = np.vstack([negatives, positives])
    labels = np.array([0] * 40 + [1] * 40)

    weights, bias = fit_linear_classifier(features, labels, LinearHyper(epochs=50))

    predictions = (features @ weights + bias > 0).astype(int)
    assert np.array_equal(predictions, labels)


def test_fit_linear_classifier_is_deterministic() -> None:
    rng = np.random.default_rng(1)
    features = rng.standard_normal((30, 4))
    labels = np.array([0, 1] * 15)

    first = fit_linear_classifier(features, labels, LinearHyper(seed=3))
    second = fit_linear_classifier(features, labels, LinearHyper(seed=3))

    assert np.array_equal(first[0], second[0])
    assert first[1] == second[1]


def test_fit_linear_classifier_requires_two_classes() -> None:
    with pytest.raises(InvalidArgumentError):
        fit_linear_classifier(np.ones((4, 2)), np.zeros(4, dtype=int))
    with pytest.raises(InvalidArgumentError):
        fit_linear_classifier(np.ones((4, 2)), np.array([0, 0, 0, 1]))


def test_spam_linear_score_is_affine_in_feature() -> None:
    cfg = SpamConfig()
    weights, bias = _random_linear(cfg)
    model = DetectorModel(variant="spam_linear", spam_config=cfg, weights=weights, bias=bias)
    patch = _random_patch(0)

    expected = float(extract_spam(patch, cfg).values @ weights + bias)

    assert score(model, patch) == pytest.approx(expected, abs=1e-12)
    assert score(model, patch) == score(model, patch)
    assert predict(model, patch) == int(score(model, patch) > 0)


def test_detector_model_validates_weights() -> None:
    with pytest.raises(InvalidArgumentError):
        DetectorModel(variant="spam_linear", spam_config=SpamConfig(), weights=np.ones(3))
    with pytest.raises(InvalidArgumentError):
        DetectorModel(variant="bayar_net")
    with pytest.raises(InvalidArgumentError):
        DetectorModel(variant="svm", network=build_bayar_network())  # type: ignore[arg-type]


def test_train_set_rejects_misaligned_inputs() -> None:
    patch = _random_patch(0)

    with pytest.raises(InvalidArgumentError):
        TrainSet((patch,), (0, 1), (0,))
    with pytest.raises(InvalidArgumentError):
        TrainSet((patch,), (2,), (0,))


def test_train_spam_linear_rejects_single_class() -> None:
    patch = _random_patch(0)
    single = TrainSet((patch, patch, patch), (0, 0, 0), (0, 0, 0))

    with pytest.raises(InvalidArgumentError):
        train_spam_linear(single)


def test_train_spam_linear_detects_strong_blur() -> None:
    train = _task_set(24, 32, ManipulationSpec.blur(1.10), seed=1)
    test = _task_set(12, 32, ManipulationSpec.blur(1.10), seed=2)

    model = train_spam_linear(train)

    scores = score_batch(model, test.patches)
    accuracy = np.mean((scores > 0).astype(int) == np.array(test.labels))
    assert model.patch_size == 32
    assert accuracy >= 0.9


def test_hard_cozznet_histogram_equals_direct_extraction() -> None:
    cfg = SpamConfig()
    model = build_cozznet(cfg, _random_linear(cfg), "hard", patch_size=16)
    l1 = SpamConfig(normalization="l1")

    for seed in range(100):
        patch = _random_patch(seed)
        assert np.array_equal(cozznet_histogram(model, patch), extract_spam(patch, l1).values)


@pytest.mark.parametrize("q", [2.0, 2.5, 3.0])
def test_hard_cozznet_matches_extraction_for_half_step_residuals(q: float) -> None:
    cfg = SpamConfig(q=q)
    linear = _random_linear(cfg, seed=2)
    net = build_cozznet(cfg, linear, "hard", patch_size=16)
    reference = DetectorModel(
        variant="spam_linear", spam_config=cfg, weights=linear[0], bias=linear[1]
    )
    l1 = SpamConfig(q=q, normalization="l1")

    for seed in range(20):
        patch = _random_patch(seed)
        assert np.array_equal(cozznet_histogram(net, patch), extract_spam(patch, l1).values)
        assert score(net, patch) == pytest.approx(score(reference, patch), abs=1e-9)


@pytest.mark.parametrize("normalization", ["l2", "l1", "none"])
def test_hard_cozznet_score_matches_spam_linear(normalization: str) -> None:
    cfg = SpamConfig(normalization=normalization)  # type: ignore[arg-type]
    linear = _random_linear(cfg, seed=4)
    reference = DetectorModel(
        variant="spam_linear", spam_config=cfg, weights=linear[0], bias=linear[1]
    )
    net = build_cozznet(cfg, linear, "hard", patch_size=16)

    for seed in range(10):
        patch = _random_patch(50 + seed)
        assert score(net, patch) == pytest.approx(score(reference, patch), abs=1e-9)


def test_soft_cozznet_converges_to_hard_as_temperature_drops() -> None:
    cfg = SpamConfig()
    linear = _random_linear(cfg)
    patch = _random_patch(7)
    hard = cozznet_histogram(build_cozznet(cfg, linear, "hard", patch_size=16), patch)

    gaps = [
        float(
            np.abs(
                cozznet_histogram(
                    build_cozznet(cfg, linear, "soft", temperature, patch_size=16), patch
                )
                - hard
            ).max()
        )
        for temperature in (1.0, 0.1, 0.01)
    ]

    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-9


def test_cozznet_variants_and_validation() -> None:
    cfg = SpamConfig()
    linear = _random_linear(cfg)

    hard = build_cozznet(cfg, linear, "hard", patch_size=16)
    soft = build_cozznet(cfg, linear, "soft", patch_size=16)

    assert hard.variant == "cozz_net_hard" and not hard.differentiable
    assert soft.variant == "cozz_net_soft" and soft.differentiable
    assert soft.network is not None and soft.network.differentiable
    with pytest.raises(InvalidArgumentError):
        build_cozznet(cfg, (np.ones(5), 0.0))
    with pytest.raises(InvalidArgumentError):
        score(hard, _random_patch(0, size=20))


def test_finetune_head_keeps_body_and_improves_fit() -> None:
    cfg = SpamConfig()
    train = _task_set(8, 16, ManipulationSpec.blur(1.10), seed=3)
    model = build_cozznet(cfg, (np.zeros(cfg.dimension), 0.0), "hard", patch_size=16)

    tuned = finetune_cozznet(
        model, train, NetHyper(epochs=30, lr=2.0, batch_size=4, validation_fraction=0.0)
    )

    assert tuned.network is not None and model.network is not None
    assert tuned.network.spec() == model.network.spec()
    scores = score_batch(tuned, train.patches)
    accuracy = np.mean((scores > 0).astype(int) == np.array(train.labels))
    assert accuracy > 0.5


def test_finetune_all_layers_needs_soft_variant() -> None:
    cfg = SpamConfig()
    train = _task_set(2, 16, ManipulationSpec.blur(1.10))
    model = build_cozznet(cfg, _random_linear(cfg), "hard", patch_size=16)

    with pytest.raises(UnsupportedOperationError):
        finetune_cozznet(model, train, NetHyper(epochs=1, train_layers="all"))


def test_bayar_network_first_layer_is_constrained() -> None:
    net = build_bayar_network(seed=2)
    first = next(layer for layer in net.iter_layers() if isinstance(layer, Conv2d))

    assert first.constrained
    for filt in first.weight[:, 0]:
        assert filt[2, 2] == -1.0
        assert np.delete(filt.ravel(), 12).sum() == pytest.approx(1.0, abs=1e-12)


def test_train_bayar_keeps_constraint_at_every_snapshot() -> None:
    train = _task_set(8, 24, ManipulationSpec.median(7), seed=4)

    model = train_bayar(train, NetHyper(epochs=2, batch_size=8, validation_fraction=0.25))

    assert model.network is not None
    first = next(layer for layer in model.network.iter_layers() if isinstance(layer, Conv2d))
    for filt in first.weight[:, 0]:
        assert np.array_equal(project_bayar(ConstrainedKernel(filt)).weights, filt)
    assert np.isfinite(score_batch(model, train.patches)).all()


def test_detector_save_load_round_trip(tmp_path: Path) -> None:
    cfg = SpamConfig()
    linear = _random_linear(cfg, seed=5)
    patch = _random_patch(9)
    models = [
        DetectorModel(variant="spam_linear", spam_config=cfg, weights=linear[0], bias=linear[1]),
        build_cozznet(cfg, linear, "soft", patch_size=16),
        DetectorModel(variant="bayar_net", network=build_bayar_network(1), patch_size=16),
    ]

    for index, model in enumerate(models):
        path = tmp_path / f"model-{index}.cfm"
        save_detector(model, path)
        loaded = load_detector(path)
        assert loaded.variant == model.variant
        assert loaded.fingerprint() == model.fingerprint()
        assert score(loaded, patch) == score(model, patch)


def test_score_survives_pgm_round_trip(tmp_path: Path) -> None:
    cfg = SpamConfig()
    model = build_cozznet(cfg, _random_linear(cfg), "hard", patch_size=16)
    patch = _random_patch(10)
    path = tmp_path / "patch.pgm"

    write_pgm(patch, path)

    assert score(model, read_pgm(path)) == score(model, patch)


def test_load_detector_rejects_plain_networks(tmp_path: Path) -> None:
    path = tmp_path / "net.cfm"
    save_network(build_bayar_network(0), path)

    with pytest.raises(ModelFormatError):
        load_detector(path)


@pytest.mark.slow
def test_bayar_detects_median_filtering() -> None:
    spec = ManipulationSpec.median(7)
    train = _task_set(150, 32, spec, seed=5)
    test = _task_set(50, 32, spec, seed=6)

    model = train_bayar(train, NetHyper(epochs=15, lr=0.01, batch_size=16))

    scores = score_batch(model, test.patches)
    positives = np.array(test.labels) == 1
    assert np.mean(scores[positives] > 0) >= 0.95


@pytest.mark.slow
def test_bayar_with_shuffled_labels_stays_at_chance() -> None:
    spec = ManipulationSpec.median(7)
    train = _task_set(100, 32, spec, seed=7)
    test = _task_set(50, 32, spec, seed=8)
    shuffled = np.random.default_rng(0).permutation(train.labels)
    noisy = TrainSet(train.patches, tuple(int(v) for v in shuffled), train.device_ids)

    model = train_bayar(noisy, NetHyper(epochs=5, batch_size=16))

    scores = score_batch(model, test.patches)
    accuracy = np.mean((scores > 0).astype(int) == np.array(test.labels))
    assert 0.4 <= accuracy <= 0.6

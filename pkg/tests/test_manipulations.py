from __future__ import annotations

import numpy as np
import pytest

from counterforensics.errors import InvalidArgumentError
from counterforensics.imaging import ImagePatch, default_devices, generate_synthetic_image, mse
from counterforensics.manipulations import (
    ANNEX_K_LUMINANCE,
    ManipulationSpec,
    apply,
    gaussian_blur,
    gaussian_kernel,
    jpeg_roundtrip,
    median_filter,
    quality_table,
    resize,
    benchmark_specs,
)


def _constant(value: int, size: int = 16) -> ImagePatch:
    return ImagePatch.from_array(np.full((size, size), value, dtype=np.uint8))


def _textured(size: int = 64) -> ImagePatch:
    return generate_synthetic_image(default_devices()[1], size, size, seed=4)


def test_table_one_task_ids() -> None:
    assert [spec.task_id for spec in benchmark_specs()] == [
        "blur-1.10",
        "jpeg-70",
        "median-7",
        "resize-1.500",
        "blur-0.50",
        "jpeg-90",
        "median-3",
        "resize-1.010",
    ]


def test_spec_dict_round_trip_preserves_task_id() -> None:
    for spec in benchmark_specs():
        assert ManipulationSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize(
    "payload",
    [
        {"kind": "blur", "sigma": 0.0},
        {"kind": "jpeg", "quality": 0},
        {"kind": "median", "kernel": 4},
        {"kind": "resize", "scale": -1.0},
        {"kind": "sharpen"},
    ],
)
def test_spec_rejects_invalid_parameters(payload: dict[str, object]) -> None:
    with pytest.raises(InvalidArgumentError):
        ManipulationSpec.from_dict(payload)


def test_gaussian_kernel_radius_and_normalisation() -> None:
    assert gaussian_kernel(0.5).shape == (5,)
    assert gaussian_kernel(1.1).shape == (9,)
    assert gaussian_kernel(1.1).sum() == pytest.approx(1.0)


def test_blur_keeps_constant_patch() -> None:
    patch = _constant(77)

    assert gaussian_blur(patch, 1.10) == patch
    assert apply(patch, ManipulationSpec.blur(1.10)) == patch


def test_blur_impulse_center_value() -> None:
    values = np.zeros((9, 9), dtype=np.uint8)
    values[4, 4] = 255
    kernel = gaussian_kernel(1.10)
    center = kernel[kernel.shape[0] // 2]

    blurred = gaussian_blur(ImagePatch.from_array(values), 1.10)

    assert blurred.pixels[4, 4] == int(np.floor(255.0 * center * center + 0.5))


def test_median_examples() -> None:
    assert median_filter(_constant(31), 3) == _constant(31)

    window = ImagePatch.from_array([[0, 0, 0], [0, 255, 255], [255, 255, 10]])
    assert median_filter(window, 3).pixels[1, 1] == 10

    salt = np.zeros((7, 7), dtype=np.uint8)
    salt[3, 3] = 255
    assert not median_filter(ImagePatch.from_array(salt), 3).pixels.any()


def test_median_rejects_even_kernel() -> None:
    with pytest.raises(InvalidArgumentError):
        median_filter(_constant(0), 4)


def test_resize_identity_and_bilinear_weights() -> None:
    patch = _textured(32)
    assert resize(patch, 1.0) == patch

    upscaled = resize(ImagePatch.from_array([[0, 100]]), 2.0)
    assert upscaled.width == 4
    assert all(row == [0, 25, 75, 100] for row in upscaled.pixels.tolist())


def test_resize_task_keeps_dimensions() -> None:
    patch = _textured(128)

    assert resize(patch, 1.01).shape == (129, 129)
    assert apply(patch, ManipulationSpec.resizing(1.01)).shape == (128, 128)
    assert apply(patch, ManipulationSpec.resizing(0.5)).shape == (128, 128)


def test_resize_rejects_empty_result() -> None:
    with pytest.raises(InvalidArgumentError):
        resize(_constant(0, size=2), 0.1)


def test_quality_table_at_fifty_is_annex_k() -> None:
    assert np.array_equal(quality_table(50), ANNEX_K_LUMINANCE)
    assert quality_table(100).min() == 1
    with pytest.raises(InvalidArgumentError):
        quality_table(101)


def test_jpeg_keeps_mid_gray_patch() -> None:
    patch = _constant(128)

    assert jpeg_roundtrip(patch, 70) == patch


def test_jpeg_lower_quality_distorts_more() -> None:
    patch = _textured(64)

    coarse = mse(patch, jpeg_roundtrip(patch, 70))
    fine = mse(patch, jpeg_roundtrip(patch, 90))

    assert coarse >= fine
    assert coarse > 0


def test_jpeg_handles_sizes_off_the_block_grid() -> None:
    patch = _textured(20)

    assert jpeg_roundtrip(patch, 90).shape == (20, 20)


def test_apply_is_deterministic_for_every_task() -> None:
    patch = _textured(64)

    for spec in benchmark_specs():
        assert apply(patch, spec) == apply(patch, spec)
        assert apply(patch, spec).shape == patch.shape

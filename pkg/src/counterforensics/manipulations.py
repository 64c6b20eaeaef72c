from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Literal, Mapping, get_args

import numpy as np
from scipy import fft, ndimage

from ._types import Tensor
from .errors import InvalidArgumentError
from .imaging import ImagePatch, round_clip

ManipulationKind = Literal["blur", "jpeg", "median", "resize"]
MANIPULATION_KINDS: tuple[str, ...] = get_args(ManipulationKind)

JPEG_BLOCK = 8

# ITU-T T.81 Annex K, table K.1 (luminance).
ANNEX_K_LUMINANCE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ManipulationSpec:
    kind: ManipulationKind
    sigma: float | None = None
    quality: int | None = None
    kernel: int | None = None
    scale: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in MANIPULATION_KINDS:
            raise InvalidArgumentError(f"unknown manipulation kind: {self.kind!r}")
        if self.kind == "blur" and (self.sigma is None or self.sigma <= 0):
            raise InvalidArgumentError("blur requires sigma > 0")
        if self.kind == "jpeg" and (
            self.quality is None or not 1 <= self.quality <= 100
        ):
            raise InvalidArgumentError("jpeg requires quality in [1, 100]")
        if self.kind == "median" and (
            self.kernel is None or self.kernel < 3 or self.kernel % 2 == 0
        ):
            raise InvalidArgumentError("median requires an odd kernel >= 3")
        if self.kind == "resize" and (self.scale is None or self.scale <= 0):
            raise InvalidArgumentError("resize requires scale > 0")

    @classmethod
    def blur(cls, sigma: float) -> ManipulationSpec:
        return cls(kind="blur", sigma=sigma)

    @classmethod
    def jpeg(cls, quality: int) -> ManipulationSpec:
        return cls(kind="jpeg", quality=quality)

    @classmethod
    def median(cls, kernel: int) -> ManipulationSpec:
        return cls(kind="median", kernel=kernel)

    @classmethod
    def resizing(cls, scale: float) -> ManipulationSpec:
        return cls(kind="resize", scale=scale)

    @property
    def task_id(self) -> str:
        if self.kind == "blur":
            return f"blur-{self.sigma:.2f}"
        if self.kind == "jpeg":
            return f"jpeg-{self.quality}"
        if self.kind == "median":
            return f"median-{self.kernel}"
        return f"resize-{self.scale:.3f}"

    def to_dict(self) -> dict[str, Any]:
        parameter = {
            "blur": ("sigma", self.sigma),
            "jpeg": ("quality", self.quality),
            "median": ("kernel", self.kernel),
            "resize": ("scale", self.scale),
        }[self.kind]
        return {"kind": self.kind, parameter[0]: parameter[1]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ManipulationSpec:
        kind = data.get("kind")
        if kind == "blur":
            return cls.blur(float(data["sigma"]))
        if kind == "jpeg":
            return cls.jpeg(int(data["quality"]))
        if kind == "median":
            return cls.median(int(data["kernel"]))
        if kind == "resize":
            return cls.resizing(float(data["scale"]))
        raise InvalidArgumentError(f"unknown manipulation kind: {kind!r}")


def benchmark_specs() -> list[ManipulationSpec]:
    """The four easy settings followed by the four challenging ones."""
    return [
        ManipulationSpec.blur(1.10),
        ManipulationSpec.jpeg(70),
        ManipulationSpec.median(7),
        ManipulationSpec.resizing(1.5),
        ManipulationSpec.blur(0.50),
        ManipulationSpec.jpeg(90),
        ManipulationSpec.median(3),
        ManipulationSpec.resizing(1.01),
    ]


def gaussian_kernel(sigma: float) -> Tensor:
    """Truncated 1-D Gaussian with radius ceil(3*sigma), renormalised to unit sum."""
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be > 0")
    radius = math.ceil(3.0 * sigma)
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(taps * taps) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(x: ImagePatch, sigma: float) -> ImagePatch:
    kernel = gaussian_kernel(sigma)
    values = ndimage.correlate1d(x.as_float(), kernel, axis=0, mode="mirror")
    values = ndimage.correlate1d(values, kernel, axis=1, mode="mirror")
    return ImagePatch.from_array(round_clip(values))


def median_filter(x: ImagePatch, kernel: int) -> ImagePatch:
    if kernel < 3 or kernel % 2 == 0:
        raise InvalidArgumentError(f"median kernel must be odd and >= 3, got {kernel}")
    filtered = ndimage.median_filter(x.pixels, size=kernel, mode="mirror")
    return ImagePatch.from_array(filtered)


def _scaled_extent(extent: int, scale: float) -> int:
    return int(math.floor(scale * extent + 0.5))


def _bilinear_taps(
    extent_in: int, extent_out: int, scale: float
) -> tuple[np.ndarray, np.ndarray, Tensor]:
    destination = np.arange(extent_out, dtype=np.float64)
    source = np.clip((destination + 0.5) / scale - 0.5, 0.0, extent_in - 1)
    lower = np.floor(source).astype(np.int64)
    upper = np.minimum(lower + 1, extent_in - 1)
    return lower, upper, source - lower


def resize(x: ImagePatch, scale: float) -> ImagePatch:
    """Bilinear resize with half-pixel centres and edge clamping."""
    if scale <= 0:
        raise InvalidArgumentError("scale must be > 0")
    out_height = _scaled_extent(x.height, scale)
    out_width = _scaled_extent(x.width, scale)
    if out_height < 1 or out_width < 1:
        raise InvalidArgumentError(
            f"scale {scale} maps {x.width}x{x.height} to an empty image"
        )

    values = x.as_float()
    top, bottom, row_weight = _bilinear_taps(x.height, out_height, scale)
    values = (
        values[top, :] * (1.0 - row_weight)[:, None]
        + values[bottom, :] * row_weight[:, None]
    )
    left, right, col_weight = _bilinear_taps(x.width, out_width, scale)
    values = values[:, left] * (1.0 - col_weight) + values[:, right] * col_weight
    return ImagePatch.from_array(round_clip(values))


def _fit_axis(values: np.ndarray, target: int, axis: int) -> np.ndarray:
    extent = values.shape[axis]
    if extent > target:
        start = (extent - target) // 2
        return np.take(values, np.arange(start, start + target), axis=axis)
    if extent < target:
        before = (target - extent) // 2
        widths = [(0, 0), (0, 0)]
        widths[axis] = (before, target - extent - before)
        return np.pad(values, widths, mode="edge")
    return values


def resize_to_shape(x: ImagePatch, height: int, width: int) -> ImagePatch:
    """Centre-crop (or centre edge-pad) a patch back to ``height`` x ``width``."""
    values = _fit_axis(_fit_axis(x.pixels, height, axis=0), width, axis=1)
    return ImagePatch.from_array(values)


def quality_table(quality: int) -> np.ndarray:
    if not 1 <= quality <= 100:
        raise InvalidArgumentError(f"JPEG quality must lie in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    return np.clip((ANNEX_K_LUMINANCE * scale + 50) // 100, 1, 255)


def _round_half_away(values: Tensor) -> Tensor:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def jpeg_roundtrip(x: ImagePatch, quality: int) -> ImagePatch:
    """Decode-equivalent single-channel baseline JPEG (no entropy coding)."""
    table = quality_table(quality).astype(np.float64)

    pad_bottom = (-x.height) % JPEG_BLOCK
    pad_right = (-x.width) % JPEG_BLOCK
    values = np.pad(x.as_float(), ((0, pad_bottom), (0, pad_right)), mode="edge")
    rows, cols = values.shape[0] // JPEG_BLOCK, values.shape[1] // JPEG_BLOCK

    blocks = (
        (values - 128.0)
        .reshape(rows, JPEG_BLOCK, cols, JPEG_BLOCK)
        .transpose(0, 2, 1, 3)
    )
    coefficients = fft.dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    dequantized = _round_half_away(coefficients / table) * table
    restored = fft.idctn(dequantized, type=2, axes=(2, 3), norm="ortho") + 128.0
    restored = restored.transpose(0, 2, 1, 3).reshape(values.shape)

    return ImagePatch.from_array(round_clip(restored[: x.height, : x.width]))


def apply(x: ImagePatch, spec: ManipulationSpec) -> ImagePatch:
    """Apply a manipulation; the result always keeps the input dimensions."""
    logger.debug("Applying manipulation task=%s size=%sx%s", spec.task_id, x.width, x.height)
    if spec.kind == "blur":
        assert spec.sigma is not None
        return gaussian_blur(x, spec.sigma)
    if spec.kind == "jpeg":
        assert spec.quality is not None
        return jpeg_roundtrip(x, spec.quality)
    if spec.kind == "median":
        assert spec.kernel is not None
        return median_filter(x, spec.kernel)
    assert spec.scale is not None
    return resize_to_shape(resize(x, spec.scale), x.height, x.width)

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from ._seeding import derive_seed
from ._types import PixelArray, Tensor
from .errors import CounterForensicsError, InvalidArgumentError, PgmParseError

MIN_SYNTHETIC_SIZE = 16
PEAK = 255.0

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, eq=False)
class ImagePatch:
    """Grayscale 8-bit patch; ``pixels`` is a read-only ``(height, width)`` uint8 array."""

    width: int
    height: int
    pixels: PixelArray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidArgumentError(
                f"patch dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.pixels.dtype != np.uint8:
            raise InvalidArgumentError(f"pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.shape != (self.height, self.width):
            raise InvalidArgumentError(
                f"pixels shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}"
            )

    @classmethod
    def from_array(cls, values: npt.ArrayLike) -> ImagePatch:
        """Build a patch from integer values in [0, 255]; the input is copied."""
        array = np.asarray(values)
        if array.ndim != 2:
            raise InvalidArgumentError(f"expected a 2-D array, got {array.ndim}-D")
        if array.size and (array.min() < 0 or array.max() > 255):
            raise InvalidArgumentError("pixel values must lie in [0, 255]")
        if array.dtype.kind == "f" and not np.array_equal(array, np.rint(array)):
            raise InvalidArgumentError("pixel values must be integers")
        pixels = np.array(array, dtype=np.uint8, order="C", copy=True)
        pixels.flags.writeable = False
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)

    @classmethod
    def from_float(cls, values: npt.ArrayLike) -> ImagePatch:
        """Round half up and clip real values to a valid patch."""
        return cls.from_array(round_clip(np.asarray(values, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def as_float(self) -> Tensor:
        return self.pixels.astype(np.float64)

    def digest(self) -> str:
        header = f"{self.width}x{self.height}:".encode("ascii")
        return hashlib.sha256(header + self.pixels.tobytes()).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImagePatch):
            return NotImplemented
        return self.shape == other.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True)
class DeviceSpec:
    device_id: int
    noise_sigma: float
    gamma: float
    base_texture_scale: float

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        if self.gamma <= 0:
            raise InvalidArgumentError("gamma must be > 0")
        if self.base_texture_scale < 1:
            raise InvalidArgumentError("base_texture_scale must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "device_id": self.device_id,
            "noise_sigma": self.noise_sigma,
            "gamma": self.gamma,
            "base_texture_scale": self.base_texture_scale,
        }


def default_devices(count: int = 9) -> tuple[DeviceSpec, ...]:
    """Parametric stand-ins for distinct cameras: noise, tone curve and texture differ."""
    if count < 2:
        raise InvalidArgumentError("at least two devices are needed for a split")
    return tuple(
        DeviceSpec(
            device_id=index,
            noise_sigma=1.2 + 0.25 * ((3 * index) % count),
            gamma=0.85 + 0.05 * ((5 * index) % count),
            base_texture_scale=2.0 + 0.75 * ((7 * index) % count),
        )
        for index in range(count)
    )


@dataclass(frozen=True, slots=True)
class DatasetSpec:
    devices: tuple[DeviceSpec, ...] = field(default_factory=default_devices)
    images_per_device: int = 8
    patch_size: int = 64
    patches_per_image: int = 64
    patch_stride: int = 32
    seed: int = 0
    image_width: int = 320
    image_height: int = 320

    def __post_init__(self) -> None:
        if len(self.devices) < 2:
            raise InvalidArgumentError("a dataset needs at least two devices")
        device_ids = [device.device_id for device in self.devices]
        if len(set(device_ids)) != len(device_ids):
            raise InvalidArgumentError("device ids must be unique")
        if self.images_per_device < 1:
            raise InvalidArgumentError("images_per_device must be >= 1")
        if self.patches_per_image < 1:
            raise InvalidArgumentError("patches_per_image must be >= 1")
        if not 1 <= self.patch_stride <= self.patch_size:
            raise InvalidArgumentError("patch_stride must lie in [1, patch_size]")
        if self.patch_size > min(self.image_width, self.image_height):
            raise InvalidArgumentError("patch_size exceeds the image dimensions")

    def to_dict(self) -> dict[str, Any]:
        return {
            "devices": [device.to_dict() for device in self.devices],
            "images_per_device": self.images_per_device,
            "patch_size": self.patch_size,
            "patches_per_image": self.patches_per_image,
            "patch_stride": self.patch_stride,
            "seed": self.seed,
            "image_width": self.image_width,
            "image_height": self.image_height,
        }


@dataclass(frozen=True, slots=True)
class PatchRecord:
    patch: ImagePatch
    device_id: int
    image_index: int
    patch_index: int

    @property
    def key(self) -> str:
        return f"d{self.device_id}-i{self.image_index:04d}-p{self.patch_index:03d}"


def round_clip(values: Tensor) -> PixelArray:
    """Round half up and clip to [0, 255]."""
    return np.clip(np.floor(values + 0.5), 0.0, PEAK).astype(np.uint8)


def _device_streams(
    spec: DeviceSpec, seed: int
) -> tuple[np.random.Generator, np.random.Generator]:
    sequence = np.random.SeedSequence(
        entropy=(int(seed) % (1 << 64), int(spec.device_id) % (1 << 32))
    )
    texture_seq, noise_seq = sequence.spawn(2)
    return np.random.default_rng(texture_seq), np.random.default_rng(noise_seq)


def _unit_field(raw: Tensor) -> Tensor:
    spread = float(raw.std())
    if spread == 0.0:
        return np.zeros_like(raw)
    return (raw - raw.mean()) / spread


def texture_field(spec: DeviceSpec, width: int, height: int, seed: int) -> Tensor:
    """Band-limited scene content in gray levels, before sensor noise and tone mapping."""
    rng, _ = _device_streams(spec, seed)
    scale = spec.base_texture_scale
    coarse = ndimage.gaussian_filter(
        rng.standard_normal((height, width)), sigma=4.0 * scale, mode="wrap"
    )
    fine = ndimage.gaussian_filter(
        rng.standard_normal((height, width)), sigma=scale, mode="wrap"
    )
    mixed = _unit_field(0.75 * _unit_field(coarse) + 0.25 * _unit_field(fine))
    return 128.0 + 40.0 * mixed


def generate_synthetic_image(
    spec: DeviceSpec, width: int, height: int, seed: int
) -> ImagePatch:
    if width < MIN_SYNTHETIC_SIZE or height < MIN_SYNTHETIC_SIZE:
        raise InvalidArgumentError(
            f"synthetic images must be at least {MIN_SYNTHETIC_SIZE}x"
            f"{MIN_SYNTHETIC_SIZE}, got {width}x{height}"
        )

    values = texture_field(spec, width, height, seed)
    if spec.noise_sigma > 0:
        _, noise_rng = _device_streams(spec, seed)
        values = values + spec.noise_sigma * noise_rng.standard_normal((height, width))
    if spec.gamma != 1.0:
        values = PEAK * (np.clip(values, 0.0, PEAK) / PEAK) ** spec.gamma

    return ImagePatch.from_array(round_clip(values))


def extract_patches(
    image: ImagePatch,
    patch_size: int,
    stride: int,
    *,
    max_patches: int | None = None,
) -> list[ImagePatch]:
    """Cut a top-left anchored grid of patches in raster order.

    ``max_patches`` truncates the raster scan, which is how the per-image cap is applied.
    """
    if patch_size < 1 or stride < 1:
        raise InvalidArgumentError("patch_size and stride must be >= 1")
    if patch_size > min(image.width, image.height):
        raise InvalidArgumentError(
            f"patch size {patch_size} exceeds image {image.width}x{image.height}"
        )

    patches: list[ImagePatch] = []
    for top in range(0, image.height - patch_size + 1, stride):
        for left in range(0, image.width - patch_size + 1, stride):
            if max_patches is not None and len(patches) >= max_patches:
                return patches
            block = image.pixels[top : top + patch_size, left : left + patch_size]
            patches.append(ImagePatch.from_array(block))
    return patches


def build_dataset(spec: DatasetSpec) -> list[PatchRecord]:
    records: list[PatchRecord] = []
    for device in spec.devices:
        for image_index in range(spec.images_per_device):
            image_seed = derive_seed(spec.seed, "image", device.device_id, image_index)
            image = generate_synthetic_image(
                device, spec.image_width, spec.image_height, image_seed
            )
            patches = extract_patches(
                image,
                spec.patch_size,
                spec.patch_stride,
                max_patches=spec.patches_per_image,
            )
            records.extend(
                PatchRecord(
                    patch=patch,
                    device_id=device.device_id,
                    image_index=image_index,
                    patch_index=patch_index,
                )
                for patch_index, patch in enumerate(patches)
            )
        logger.debug(
            "Generated device patches device_id=%s images=%s total_records=%s",
            device.device_id,
            spec.images_per_device,
            len(records),
        )
    logger.info("Built dataset devices=%s patches=%s", len(spec.devices), len(records))
    return records


def _check_same_shape(a: ImagePatch, b: ImagePatch) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(
            f"patch dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mse(a: ImagePatch, b: ImagePatch) -> float:
    _check_same_shape(a, b)
    diff = a.as_float() - b.as_float()
    return float(np.mean(diff * diff))


def psnr_from_mse(error: float) -> float | None:
    if error <= 0.0:
        return None
    return 10.0 * math.log10(PEAK * PEAK / error)


def psnr(a: ImagePatch, b: ImagePatch) -> float | None:
    """Peak signal-to-noise ratio in dB; ``None`` marks identical patches (infinite PSNR)."""
    return psnr_from_mse(mse(a, b))


def write_pgm(patch: ImagePatch, path: str | Path) -> None:
    header = f"P5\n{patch.width} {patch.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + patch.pixels.tobytes())


def _skip_whitespace_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        byte = data[pos : pos + 1]
        if byte.isspace():
            pos += 1
        elif byte == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    return pos


def _read_header_int(data: bytes, pos: int, name: str, path: str) -> tuple[int, int]:
    pos = _skip_whitespace_and_comments(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PgmParseError(f"expected {name} in PGM header", offset=start, path=path)
    return int(data[start:pos]), pos


def parse_pgm(data: bytes, *, path: str = "<bytes>") -> ImagePatch:
    if data[:2] != b"P5":
        raise PgmParseError("missing P5 magic number", offset=0, path=path)

    width, pos = _read_header_int(data, 2, "width", path)
    height, pos = _read_header_int(data, pos, "height", path)
    maxval_offset = _skip_whitespace_and_comments(data, pos)
    maxval, pos = _read_header_int(data, pos, "maxval", path)

    if width < 1 or height < 1:
        raise PgmParseError(
            f"invalid dimensions {width}x{height}", offset=maxval_offset, path=path
        )
    if maxval != 255:
        raise PgmParseError(
            f"unsupported maxval {maxval} (only 255 is supported)",
            offset=maxval_offset,
            path=path,
        )
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PgmParseError(
            "expected a single whitespace byte after maxval", offset=pos, path=path
        )
    pos += 1

    expected = width * height
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise PgmParseError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            offset=len(data),
            path=path,
        )

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return ImagePatch.from_array(pixels)


def read_pgm(path: str | Path) -> ImagePatch:
    resolved = Path(path)
    logger.debug("Reading PGM path=%s", resolved)
    return parse_pgm(resolved.read_bytes(), path=str(resolved))


def _luma_bt601(rgb: npt.NDArray[np.uint8]) -> PixelArray:
    channels = rgb.astype(np.int64)
    luma = (
        299 * channels[..., 0] + 587 * channels[..., 1] + 114 * channels[..., 2] + 500
    ) // 1000
    return luma.astype(np.uint8)


def load_image(path: str | Path) -> ImagePatch:
    """Load a PGM natively, or a PNG through Pillow (``counterforensics[png]``)."""
    resolved = Path(path)
    if resolved.suffix.lower() != ".png":
        return read_pgm(resolved)

    try:
        from PIL import Image
    except ImportError as exc:
        raise CounterForensicsError(
            "PNG support requires Pillow; install counterforensics[png]"
        ) from exc

    with Image.open(resolved) as image:
        if image.mode == "L":
            return ImagePatch.from_array(np.asarray(image, dtype=np.uint8))
        rgb = np.asarray(image.convert("RGB"), dtype=np.uint8)
    return ImagePatch.from_array(_luma_bt601(rgb))

"""SPAM residual co-occurrence features with incremental single-pixel updates."""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Mapping

import numpy as np
import numpy.typing as npt

from ._seeding import fingerprint_of
from ._types import IntArray, Tensor
from .errors import InvalidArgumentError
from .imaging import ImagePatch

Direction = Literal["horizontal", "vertical"]
Normalization = Literal["l2", "l1", "none"]
DIRECTIONS: tuple[Direction, Direction] = ("horizontal", "vertical")
RESIDUAL_TAPS = (-1, 3, -3, 1)
SUPPORT = len(RESIDUAL_TAPS)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class SpamConfig:
    q: float = 3.0
    truncation: int = 2
    cooc_order: int = 4
    symmetrize: bool = True
    normalization: Normalization = "l2"

    def __post_init__(self) -> None:
        if self.q <= 0:
            raise InvalidArgumentError("quantization step q must be > 0")
        if self.truncation < 1:
            raise InvalidArgumentError("truncation T must be >= 1")
        if self.cooc_order < 2:
            raise InvalidArgumentError("cooc_order must be >= 2")
        if self.normalization not in ("l2", "l1", "none"):
            raise InvalidArgumentError(
                f"unknown normalization: {self.normalization!r}"
            )

    @property
    def bins(self) -> int:
        return 2 * self.truncation + 1

    @property
    def raw_bins(self) -> int:
        return self.bins**self.cooc_order

    @property
    def dimension(self) -> int:
        per_direction = (
            build_symmetry_table(self.truncation, self.cooc_order).class_count
            if self.symmetrize
            else self.raw_bins
        )
        return 2 * per_direction

    @property
    def min_patch_size(self) -> int:
        return max(8, SUPPORT - 1 + self.cooc_order)

    def to_dict(self) -> dict[str, Any]:
        return {
            "q": self.q,
            "truncation": self.truncation,
            "cooc_order": self.cooc_order,
            "symmetrize": self.symmetrize,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SpamConfig:
        return cls(
            q=float(data.get("q", 3.0)),
            truncation=int(data.get("truncation", 2)),
            cooc_order=int(data.get("cooc_order", 4)),
            symmetrize=bool(data.get("symmetrize", True)),
            normalization=data.get("normalization", "l2"),
        )

    def fingerprint(self) -> str:
        return fingerprint_of({"spam": self.to_dict()})


@dataclass(frozen=True, slots=True)
class ResidualMap:
    direction: Direction
    values: IntArray
    truncation: int

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    def along_scan(self) -> IntArray:
        return self.values if self.direction == "horizontal" else self.values.T


@dataclass(slots=True)
class CoocHistogram:
    direction: Direction
    counts: IntArray
    total: int

    def copy(self) -> CoocHistogram:
        return CoocHistogram(self.direction, self.counts.copy(), self.total)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CoocHistogram):
            return NotImplemented
        return (
            self.direction == other.direction
            and self.total == other.total
            and bool(np.array_equal(self.counts, other.counts))
        )


@dataclass(frozen=True, slots=True)
class SymmetryTable:
    class_of: IntArray
    class_count: int

    def project(self, values: Tensor) -> Tensor:
        if values.ndim == 1:
            return np.bincount(self.class_of, weights=values, minlength=self.class_count)
        flat = values.reshape(-1, values.shape[-1])
        projected = np.stack(
            [
                np.bincount(self.class_of, weights=row, minlength=self.class_count)
                for row in flat
            ]
        )
        return projected.reshape(values.shape[:-1] + (self.class_count,))


@dataclass(frozen=True, slots=True, eq=False)
class SpamFeature:
    values: Tensor
    normalization: Normalization
    config_fingerprint: str = ""

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


def _check_direction(direction: str) -> Direction:
    if direction not in DIRECTIONS:
        raise InvalidArgumentError(f"unknown direction: {direction!r}")
    return direction  # type: ignore[return-value]


def residual(x: ImagePatch, direction: Direction) -> IntArray:
    _check_direction(direction)
    values = x.pixels.astype(np.int64)
    if direction == "vertical":
        values = values.T
    if values.shape[1] < SUPPORT:
        raise InvalidArgumentError(
            f"patch too small for a {direction} residual: need >= {SUPPORT} pixels"
        )
    taps = RESIDUAL_TAPS
    scan_length = values.shape[1] - SUPPORT + 1
    out = sum(
        tap * values[:, offset : offset + scan_length]
        for offset, tap in enumerate(taps)
    )
    out = np.asarray(out, dtype=np.int64)
    return out if direction == "horizontal" else out.T


def quantize_truncate(
    raw: npt.ArrayLike,
    q: float,
    truncation: int,
    *,
    direction: Direction = "horizontal",
) -> ResidualMap:
    if q <= 0:
        raise InvalidArgumentError("quantization step q must be > 0")
    scaled = np.asarray(raw, dtype=np.float64) / q
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    clamped = np.clip(rounded, -truncation, truncation).astype(np.int64)
    return ResidualMap(
        direction=_check_direction(direction), values=clamped, truncation=truncation
    )


def quantize_scalar(raw: int, q: float, truncation: int) -> int:
    scaled = raw / q
    magnitude = math.floor(abs(scaled) + 0.5)
    value = magnitude if scaled > 0 else -magnitude
    return max(-truncation, min(truncation, value))


def _encode_rows(lines: IntArray, truncation: int, order: int) -> IntArray:
    base = 2 * truncation + 1
    sites = lines.shape[1] - order + 1
    codes = np.zeros((lines.shape[0], sites), dtype=np.int64)
    for k in range(order):
        codes += (lines[:, k : k + sites] + truncation) * base**k
    return codes


def cooc_histogram(m: ResidualMap, order: int) -> CoocHistogram:
    lines = m.along_scan()
    if lines.shape[1] < order:
        raise InvalidArgumentError(
            f"residual grid too small for order-{order} co-occurrences "
            f"along {m.direction}"
        )
    codes = _encode_rows(lines, m.truncation, order)
    base = 2 * m.truncation + 1
    counts = np.bincount(codes.ravel(), minlength=base**order).astype(np.int64)
    return CoocHistogram(direction=m.direction, counts=counts, total=int(codes.size))


@lru_cache(maxsize=16)
def build_symmetry_table(truncation: int, order: int) -> SymmetryTable:
    """Merge bins equivalent under sign negation, sequence reversal, or both.

    Classes are numbered in ascending order of their smallest raw index.
    """
    base = 2 * truncation + 1
    codes = np.arange(base**order, dtype=np.int64)
    powers = base ** np.arange(order, dtype=np.int64)
    digits = (codes[:, None] // powers) % base - truncation

    def encode(tuples: IntArray) -> IntArray:
        return ((tuples + truncation) * powers).sum(axis=1)

    orbit = np.stack(
        [
            codes,
            encode(-digits),
            encode(digits[:, ::-1]),
            encode(-digits[:, ::-1]),
        ]
    )
    representatives = orbit.min(axis=0)
    _, class_of = np.unique(representatives, return_inverse=True)
    class_of = class_of.astype(np.int64).reshape(-1)
    return SymmetryTable(class_of=class_of, class_count=int(class_of.max()) + 1)


def _check_patch_size(x: ImagePatch, cfg: SpamConfig) -> None:
    if min(x.width, x.height) < cfg.min_patch_size:
        raise InvalidArgumentError(
            f"SPAM extraction needs patches of at least "
            f"{cfg.min_patch_size}x{cfg.min_patch_size}, got {x.width}x{x.height}"
        )


def histograms(x: ImagePatch, cfg: SpamConfig) -> tuple[CoocHistogram, CoocHistogram]:
    _check_patch_size(x, cfg)
    pair = tuple(
        cooc_histogram(
            quantize_truncate(
                residual(x, direction), cfg.q, cfg.truncation, direction=direction
            ),
            cfg.cooc_order,
        )
        for direction in DIRECTIONS
    )
    return pair[0], pair[1]


def feature_from_histograms(
    pair: Sequence[CoocHistogram], cfg: SpamConfig
) -> SpamFeature:
    table = build_symmetry_table(cfg.truncation, cfg.cooc_order)
    blocks: list[Tensor] = []
    for hist in pair:
        block = hist.counts.astype(np.float64)
        if cfg.normalization == "l1":
            block = block / hist.total
        if cfg.symmetrize:
            block = table.project(block)
        blocks.append(block)
    values = np.concatenate(blocks)
    if cfg.normalization == "l2":
        values = values / np.linalg.norm(values)
    return SpamFeature(
        values=values,
        normalization=cfg.normalization,
        config_fingerprint=cfg.fingerprint(),
    )


def extract_spam(x: ImagePatch, cfg: SpamConfig | None = None) -> SpamFeature:
    resolved = cfg or SpamConfig()
    return feature_from_histograms(histograms(x, resolved), resolved)


@dataclass(frozen=True, slots=True)
class SpamEdit:
    pixel: tuple[int, int]
    delta: int
    new_value: int
    residual_updates: tuple[tuple[int, int, int, tuple[int, ...]], ...]
    bin_changes: tuple[tuple[int, int, int], ...]
    version: int


@dataclass(slots=True)
class SpamState:
    config: SpamConfig
    image: IntArray
    scan_maps: list[IntArray]
    hists: list[CoocHistogram]
    version: int = 0
    _powers: tuple[int, ...] = field(default=())

    @classmethod
    def from_patch(cls, x: ImagePatch, cfg: SpamConfig | None = None) -> SpamState:
        resolved = cfg or SpamConfig()
        _check_patch_size(x, resolved)
        scan_maps: list[IntArray] = []
        hists: list[CoocHistogram] = []
        for direction in DIRECTIONS:
            quantized = quantize_truncate(
                residual(x, direction), resolved.q, resolved.truncation, direction=direction
            )
            scan_maps.append(np.array(quantized.along_scan(), dtype=np.int64, copy=True))
            hists.append(cooc_histogram(quantized, resolved.cooc_order))
        return cls(
            config=resolved,
            image=x.pixels.astype(np.int64),
            scan_maps=scan_maps,
            hists=hists,
            _powers=tuple(resolved.bins**k for k in range(resolved.cooc_order)),
        )

    def patch(self) -> ImagePatch:
        return ImagePatch.from_array(self.image)

    def histograms(self) -> tuple[CoocHistogram, CoocHistogram]:
        return self.hists[0], self.hists[1]

    def feature(self) -> SpamFeature:
        return feature_from_histograms(self.hists, self.config)

    def _encode(self, window: Sequence[int]) -> int:
        offset = self.config.truncation
        return sum((value + offset) * power for value, power in zip(window, self._powers))

    def propose(self, pixel: tuple[int, int], delta: int) -> SpamEdit:
        row, col = pixel
        height, width = self.image.shape
        if not (0 <= row < height and 0 <= col < width):
            raise InvalidArgumentError(f"pixel {pixel} outside {width}x{height} patch")
        new_value = int(self.image[row, col]) + delta
        if not 0 <= new_value <= 255:
            raise InvalidArgumentError(
                f"edit moves pixel {pixel} to {new_value}, outside [0, 255]"
            )

        cfg = self.config
        order = cfg.cooc_order
        updates: list[tuple[int, int, int, tuple[int, ...]]] = []
        changes: list[tuple[int, int, int]] = []
        lines = ((row, col, self.image[row, :]), (col, row, self.image[:, col]))

        for direction_index, (line_index, position, pixels) in enumerate(lines):
            scan_line = self.scan_maps[direction_index][line_index]
            residual_count = scan_line.shape[0]
            first = max(0, position - SUPPORT + 1)
            last = min(residual_count - 1, position)

            new_quantized: list[int] = []
            for start in range(first, last + 1):
                raw = 0
                for tap_index, tap in enumerate(RESIDUAL_TAPS):
                    index = start + tap_index
                    raw += tap * (new_value if index == position else int(pixels[index]))
                new_quantized.append(quantize_scalar(raw, cfg.q, cfg.truncation))

            old_quantized = scan_line[first : last + 1].tolist()
            if new_quantized == old_quantized:
                continue
            updates.append((direction_index, line_index, first, tuple(new_quantized)))

            site_first = max(0, first - order + 1)
            site_last = min(residual_count - order, last)
            old_window = scan_line[site_first : site_last + order].tolist()
            new_window = list(old_window)
            new_window[first - site_first : last - site_first + 1] = new_quantized
            for site in range(site_first, site_last + 1):
                offset = site - site_first
                old_code = self._encode(old_window[offset : offset + order])
                new_code = self._encode(new_window[offset : offset + order])
                if old_code != new_code:
                    changes.append((direction_index, old_code, -1))
                    changes.append((direction_index, new_code, 1))

        return SpamEdit(
            pixel=(row, col),
            delta=delta,
            new_value=new_value,
            residual_updates=tuple(updates),
            bin_changes=tuple(changes),
            version=self.version,
        )

    def commit(self, edit: SpamEdit) -> None:
        if edit.version != self.version:
            raise InvalidArgumentError("stale edit: the state changed after propose()")
        self.image[edit.pixel] = edit.new_value
        for direction_index, line_index, first, values in edit.residual_updates:
            self.scan_maps[direction_index][line_index, first : first + len(values)] = values
        for direction_index, code, sign in edit.bin_changes:
            self.hists[direction_index].counts[code] += sign
        self.version += 1


def incremental_update(
    state: SpamState, pixel: tuple[int, int], delta: int
) -> tuple[CoocHistogram, CoocHistogram]:
    if delta != 0:
        state.commit(state.propose(pixel, delta))
    return state.histograms()


def write_features_csv(
    path: str | Path,
    rows: Sequence[tuple[str, int, SpamFeature]],
    cfg: SpamConfig,
) -> None:
    if not rows:
        raise InvalidArgumentError("no features to write")
    dimension = rows[0][2].dimension
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [f"spam_config={cfg.fingerprint()}", "label"]
            + [f"f{index:04d}" for index in range(dimension)]
        )
        for key, label, feature in rows:
            writer.writerow([key, label] + [repr(float(v)) for v in feature.values])
    logger.debug("Wrote features path=%s rows=%s dimension=%s", path, len(rows), dimension)


def read_features_csv(
    path: str | Path, cfg: SpamConfig | None = None
) -> list[tuple[str, int, SpamFeature]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or not header[0].startswith("spam_config="):
            raise InvalidArgumentError(f"{path}: missing feature CSV header")
        fingerprint = header[0].split("=", 1)[1]
        if cfg is not None and cfg.fingerprint() != fingerprint:
            raise InvalidArgumentError(
                f"{path}: features were extracted with config {fingerprint}, "
                f"expected {cfg.fingerprint()}"
            )
        normalization: Normalization = cfg.normalization if cfg is not None else "l2"
        return [
            (
                row[0],
                int(row[1]),
                SpamFeature(
                    values=np.array([float(value) for value in row[2:]]),
                    normalization=normalization,
                    config_fingerprint=fingerprint,
                ),
            )
            for row in reader
        ]

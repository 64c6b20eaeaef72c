from __future__ import annotations

import itertools
from pathlib import Path

import numpy as np
import pytest

from counterforensics.errors import InvalidArgumentError
from counterforensics.imaging import ImagePatch
from counterforensics.spamfeat import (
    ResidualMap,
    SpamConfig,
    SpamState,
    build_symmetry_table,
    cooc_histogram,
    extract_spam,
    histograms,
    incremental_update,
    quantize_scalar,
    quantize_truncate,
    read_features_csv,
    residual,
    write_features_csv,
)


def _random_patch(seed: int, size: int = 16) -> ImagePatch:
    rng = np.random.default_rng(seed)
    return ImagePatch.from_array(rng.integers(0, 256, size=(size, size)))


def _brute_force_classes(truncation: int, order: int) -> int:
    seen: set[tuple[int, ...]] = set()
    classes = 0
    for values in itertools.product(range(-truncation, truncation + 1), repeat=order):
        if values in seen:
            continue
        classes += 1
        negated = tuple(-v for v in values)
        seen.update({values, negated, values[::-1], negated[::-1]})
    return classes


def test_residual_annihilates_quadratics() -> None:
    constant = ImagePatch.from_array(np.full((10, 10), 50, dtype=np.uint8))
    assert not residual(constant, "horizontal").any()
    assert not residual(constant, "vertical").any()

    columns = np.arange(10)
    ramp = ImagePatch.from_array(np.tile(columns, (10, 1)))
    quadratic = ImagePatch.from_array(np.tile(columns * columns, (10, 1)))
    assert not residual(ramp, "horizontal").any()
    assert not residual(quadratic, "horizontal").any()


def test_residual_shapes_follow_direction() -> None:
    patch = _random_patch(0, size=12)

    assert residual(patch, "horizontal").shape == (12, 9)
    assert residual(patch, "vertical").shape == (9, 12)


def test_residual_taps() -> None:
    patch = ImagePatch.from_array([[0, 0, 0, 10], [0, 0, 0, 0]])

    assert residual(patch, "horizontal").tolist() == [[10], [0]]


def test_quantize_examples() -> None:
    quantized = quantize_truncate(np.array([[0, 10, -4, 4, -100]]), 3.0, 2)

    assert quantized.values.tolist() == [[0, 2, -1, 1, -2]]
    assert [quantize_scalar(v, 3.0, 2) for v in (0, 10, -4, 4, -100)] == [0, 2, -1, 1, -2]


def test_quantize_rounds_halves_away_from_zero() -> None:
    assert quantize_truncate(np.array([[3, -3]]), 2.0, 2).values.tolist() == [[2, -2]]
    assert quantize_scalar(3, 2.0, 2) == 2
    assert quantize_scalar(-3, 2.0, 2) == -2


def test_cooc_histogram_zero_map_lands_on_center_bin() -> None:
    zero = ResidualMap("horizontal", np.zeros((3, 6), dtype=np.int64), truncation=2)

    hist = cooc_histogram(zero, 4)

    assert hist.total == 9
    assert hist.counts[312] == 9
    assert hist.counts.sum() == 9


def test_cooc_histogram_positional_encoding() -> None:
    single = ResidualMap("horizontal", np.array([[-2, -1, 0, 1]]), truncation=2)

    assert int(np.flatnonzero(cooc_histogram(single, 4).counts)[0]) == 430


def test_cooc_histogram_rejects_short_grid() -> None:
    short = ResidualMap("horizontal", np.zeros((2, 3), dtype=np.int64), truncation=2)

    with pytest.raises(InvalidArgumentError):
        cooc_histogram(short, 4)


@pytest.mark.parametrize(("truncation", "order", "expected"), [(2, 4, 169), (1, 2, 4)])
def test_symmetry_class_counts(truncation: int, order: int, expected: int) -> None:
    table = build_symmetry_table(truncation, order)

    assert table.class_count == expected
    assert _brute_force_classes(truncation, order) == expected


def test_symmetry_merges_negated_reversals() -> None:
    table = build_symmetry_table(2, 4)

    def code(values: tuple[int, ...]) -> int:
        return sum((v + 2) * 5**k for k, v in enumerate(values))

    assert table.class_of[code((1, 0, 0, -1))] == table.class_of[code((-1, 0, 0, 1))]
    assert table.class_of[code((1, 2, 0, 0))] == table.class_of[code((0, 0, 2, 1))]
    assert table.class_of[code((1, 2, 0, 0))] != table.class_of[code((1, 0, 0, 0))]
    assert table.class_of[0] == 0


def test_extract_spam_dimensions_and_unit_norm() -> None:
    patch = _random_patch(1)

    feature = extract_spam(patch)
    raw = extract_spam(patch, SpamConfig(symmetrize=False))

    assert feature.dimension == 338
    assert SpamConfig().dimension == 338
    assert raw.dimension == 1250
    assert np.linalg.norm(feature.values) == pytest.approx(1.0)


def test_extract_spam_l1_blocks_sum_to_one() -> None:
    feature = extract_spam(_random_patch(2), SpamConfig(normalization="l1"))

    assert feature.values[:169].sum() == pytest.approx(1.0)
    assert feature.values[169:].sum() == pytest.approx(1.0)


def test_extract_spam_constant_patch_mass_in_zero_class() -> None:
    patch = ImagePatch.from_array(np.full((12, 12), 99, dtype=np.uint8))
    table = build_symmetry_table(2, 4)
    zero_class = int(table.class_of[312])

    feature = extract_spam(patch, SpamConfig(normalization="l1"))

    assert feature.values[zero_class] == 1.0
    assert feature.values[169 + zero_class] == 1.0
    assert feature.values.sum() == 2.0


def test_extract_spam_rejects_small_patch() -> None:
    with pytest.raises(InvalidArgumentError):
        extract_spam(_random_patch(0, size=7))


def test_incremental_update_with_zero_delta_is_a_no_op() -> None:
    patch = _random_patch(3)
    state = SpamState.from_patch(patch)

    before = tuple(h.copy() for h in state.histograms())
    after = incremental_update(state, (4, 4), 0)

    assert after == before
    assert state.version == 0


def test_incremental_update_matches_full_recompute() -> None:
    rng = np.random.default_rng(7)
    for trial in range(200):
        patch = _random_patch(100 + trial, size=12)
        state = SpamState.from_patch(patch)
        row, col = (int(v) for v in rng.integers(0, 12, size=2))
        value = int(patch.pixels[row, col])
        delta = int(rng.integers(-value, 256 - value))

        updated = incremental_update(state, (row, col), delta)

        edited = patch.pixels.astype(np.int64)
        edited[row, col] += delta
        assert updated == histograms(ImagePatch.from_array(edited), SpamConfig())


def test_sequential_edits_match_one_shot_extraction() -> None:
    rng = np.random.default_rng(8)
    patch = _random_patch(9, size=32)
    state = SpamState.from_patch(patch)

    for _ in range(2000):
        row, col = (int(v) for v in rng.integers(0, 32, size=2))
        value = int(state.image[row, col])
        delta = int(rng.choice([-2, -1, 1, 2]))
        if 0 <= value + delta <= 255:
            incremental_update(state, (row, col), delta)

    final = state.patch()
    assert state.histograms() == histograms(final, SpamConfig())
    assert np.array_equal(state.feature().values, extract_spam(final).values)


@pytest.mark.slow
def test_long_edit_sequence_on_full_size_patch() -> None:
    rng = np.random.default_rng(10)
    patch = _random_patch(11, size=128)
    state = SpamState.from_patch(patch)

    for _ in range(10_000):
        row, col = (int(v) for v in rng.integers(0, 128, size=2))
        value = int(state.image[row, col])
        delta = 1 if value < 255 else -1
        incremental_update(state, (row, col), delta)

    assert state.histograms() == histograms(state.patch(), SpamConfig())


def test_propose_does_not_mutate_and_stale_commit_fails() -> None:
    state = SpamState.from_patch(_random_patch(12))
    snapshot = tuple(h.copy() for h in state.histograms())

    first = state.propose((5, 5), 1 if state.image[5, 5] < 255 else -1)
    second = state.propose((6, 6), 1 if state.image[6, 6] < 255 else -1)

    assert state.histograms() == snapshot
    state.commit(first)
    with pytest.raises(InvalidArgumentError, match="stale"):
        state.commit(second)


def test_propose_rejects_out_of_range_pixel_value() -> None:
    patch = ImagePatch.from_array(np.full((10, 10), 255, dtype=np.uint8))
    state = SpamState.from_patch(patch)

    with pytest.raises(InvalidArgumentError):
        state.propose((0, 0), 1)
    with pytest.raises(InvalidArgumentError):
        state.propose((10, 0), -1)


def test_features_csv_round_trip(tmp_path: Path) -> None:
    cfg = SpamConfig()
    rows = [(f"p{i}", i % 2, extract_spam(_random_patch(i), cfg)) for i in range(3)]
    path = tmp_path / "features.csv"

    write_features_csv(path, rows, cfg)
    loaded = read_features_csv(path, cfg)

    assert [(key, label) for key, label, _ in loaded] == [("p0", 0), ("p1", 1), ("p2", 0)]
    for (_, _, original), (_, _, restored) in zip(rows, loaded):
        assert np.array_equal(original.values, restored.values)

    with pytest.raises(InvalidArgumentError):
        read_features_csv(path, SpamConfig(normalization="l1"))

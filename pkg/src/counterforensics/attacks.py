"""Counter-forensic attacks against the detectors.

- ``fgsm`` / ``pgd``: integer-step gradient-sign noise against differentiable detectors.
- ``icm_attack``: greedy single-pixel edits in feature space against ``spam_linear``, either
  pulling the feature back to the pristine one or pushing the score across the boundary.
- ``train_restorer`` / ``restore``: a residual generator trained against a detector copy.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal, Mapping, get_args

import numpy as np

from ._types import Tensor
from .detectors import (
    DetectorModel,
    check_input,
    patches_to_tensor,
    predict,
    score,
)
from .diffnet import (
    Affine,
    Conv2d,
    Layer,
    Network,
    ReLU,
    Residual,
    Sgd,
    backward,
    forward,
    input_gradient,
    loss_and_gradient,
    project_network_bayar,
)
from .errors import InvalidArgumentError, TrainingDivergedError, UnsupportedTargetError
from .imaging import ImagePatch, psnr_from_mse, round_clip
from .spamfeat import (
    RESIDUAL_TAPS,
    SpamConfig,
    SpamFeature,
    SpamState,
    build_symmetry_table,
    extract_spam,
)

AttackMethod = Literal["fgsm", "pgd", "icm", "gan"]
IcmMode = Literal["restore_pristine", "cross_boundary"]
ATTACK_METHODS: tuple[str, ...] = get_args(AttackMethod)
ICM_MODES: tuple[str, ...] = get_args(IcmMode)
MANIPULATED = 1
PRISTINE = 0
_IMPROVEMENT_EPS = 1e-12

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class AttackConfig:
    method: AttackMethod = "fgsm"
    epsilon: int = 1
    pgd_steps: int = 10
    pgd_alpha: float = 1.0
    icm_mode: IcmMode = "cross_boundary"
    icm_deltas: tuple[int, ...] = (-1, 1)
    distortion_T: float = 6.0
    max_sweeps: int = 20
    margin: float = 0.01
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in ATTACK_METHODS:
            raise InvalidArgumentError(f"unknown attack method: {self.method!r}")
        if isinstance(self.epsilon, bool) or not isinstance(self.epsilon, int):
            raise InvalidArgumentError("epsilon must be an integer number of gray levels")
        if self.epsilon < 1:
            raise InvalidArgumentError("epsilon must be >= 1")
        if self.pgd_steps < 1 or self.pgd_alpha <= 0:
            raise InvalidArgumentError("pgd needs steps >= 1 and alpha > 0")
        if self.icm_mode not in ICM_MODES:
            raise InvalidArgumentError(f"unknown ICM mode: {self.icm_mode!r}")
        if not self.icm_deltas or any(
            not isinstance(delta, int) or delta == 0 for delta in self.icm_deltas
        ):
            raise InvalidArgumentError("icm_deltas must be non-zero integers")
        if self.distortion_T <= 0:
            raise InvalidArgumentError("distortion_T must be > 0")
        if self.max_sweeps < 1:
            raise InvalidArgumentError("max_sweeps must be >= 1")
        if self.margin < 0 or self.tolerance < 0:
            raise InvalidArgumentError("margin and tolerance must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "epsilon": self.epsilon,
            "pgd_steps": self.pgd_steps,
            "pgd_alpha": self.pgd_alpha,
            "icm_mode": self.icm_mode,
            "icm_deltas": list(self.icm_deltas),
            "distortion_T": self.distortion_T,
            "max_sweeps": self.max_sweeps,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AttackConfig:
        defaults = cls()
        return cls(
            method=data.get("method", defaults.method),
            epsilon=int(data.get("epsilon", defaults.epsilon)),
            pgd_steps=int(data.get("pgd_steps", defaults.pgd_steps)),
            pgd_alpha=float(data.get("pgd_alpha", defaults.pgd_alpha)),
            icm_mode=data.get("icm_mode", defaults.icm_mode),
            icm_deltas=tuple(int(d) for d in data.get("icm_deltas", defaults.icm_deltas)),
            distortion_T=float(data.get("distortion_T", defaults.distortion_T)),
            max_sweeps=int(data.get("max_sweeps", defaults.max_sweeps)),
            margin=float(data.get("margin", defaults.margin)),
            tolerance=float(data.get("tolerance", defaults.tolerance)),
            seed=int(data.get("seed", defaults.seed)),
        )

    @property
    def label(self) -> str:
        if self.method == "fgsm":
            return f"fgsm-e{self.epsilon}"
        if self.method == "pgd":
            return f"pgd-e{self.epsilon}-s{self.pgd_steps}"
        if self.method == "icm":
            return f"icm-{self.icm_mode}"
        return "gan"


@dataclass(frozen=True, slots=True, eq=False)
class AttackResult:
    adversarial: ImagePatch
    success: bool
    psnr_db: float | None
    sweeps_or_steps: int
    objective_trace: tuple[float, ...] = ()
    mse: float = 0.0


@dataclass(slots=True)
class AttackRecord:
    key: str
    task_id: str
    target: str
    method: str
    success: bool
    psnr_db: float | None
    iterations: int
    sha256: str

    @classmethod
    def from_result(
        cls, key: str, task_id: str, target: str, method: str, result: AttackResult
    ) -> AttackRecord:
        return cls(
            key=key,
            task_id=task_id,
            target=target,
            method=method,
            success=result.success,
            psnr_db=result.psnr_db,
            iterations=result.sweeps_or_steps,
            sha256=result.adversarial.digest(),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "task_id": self.task_id,
            "target": self.target,
            "method": self.method,
            "success": self.success,
            "psnr_db": self.psnr_db,
            "iterations": self.iterations,
            "sha256": self.sha256,
        }

    def to_json(self, *, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AttackRecord:
        psnr_value = data.get("psnr_db")
        return cls(
            key=str(data["key"]),
            task_id=str(data["task_id"]),
            target=str(data["target"]),
            method=str(data["method"]),
            success=bool(data["success"]),
            psnr_db=None if psnr_value is None else float(psnr_value),
            iterations=int(data["iterations"]),
            sha256=str(data["sha256"]),
        )


def _result(
    model: DetectorModel,
    x0: ImagePatch,
    adversarial: ImagePatch,
    iterations: int,
    trace: Sequence[float],
) -> AttackResult:
    diff = adversarial.as_float() - x0.as_float()
    error = float(np.mean(diff * diff))
    return AttackResult(
        adversarial=adversarial,
        success=predict(model, adversarial) == PRISTINE,
        psnr_db=psnr_from_mse(error),
        sweeps_or_steps=iterations,
        objective_trace=tuple(float(value) for value in trace),
        mse=error,
    )


def _require_differentiable(model: DetectorModel) -> Network:
    if not model.differentiable or model.network is None:
        raise UnsupportedTargetError(
            model.variant,
            f"{model.variant} has no usable input gradient; use icm_attack instead",
        )
    return model.network


def _pixel_gradient(net: Network, values: Tensor) -> Tensor:
    return input_gradient(net, values[None, None, :, :], MANIPULATED)[0, 0]


def fgsm(model: DetectorModel, x0: ImagePatch, eps: int) -> AttackResult:
    net = _require_differentiable(model)
    if isinstance(eps, bool) or not isinstance(eps, int) or eps < 1:
        raise InvalidArgumentError("eps must be an integer >= 1")
    check_input(model, x0)
    values = x0.as_float()
    step = eps * np.sign(_pixel_gradient(net, values))
    adversarial = ImagePatch.from_array(np.clip(values + step, 0.0, 255.0))
    return _result(model, x0, adversarial, 1, (score(model, x0), score(model, adversarial)))


def pgd(model: DetectorModel, x0: ImagePatch, cfg: AttackConfig) -> AttackResult:
    net = _require_differentiable(model)
    check_input(model, x0)
    origin = x0.as_float()
    lower = np.maximum(origin - cfg.epsilon, 0.0)
    upper = np.minimum(origin + cfg.epsilon, 255.0)

    values = origin.copy()
    candidate = x0
    trace = [score(model, x0)]
    steps = 0
    for steps in range(1, cfg.pgd_steps + 1):
        values = np.clip(values + cfg.pgd_alpha * np.sign(_pixel_gradient(net, values)), 0.0, 255.0)
        values = np.clip(values, lower, upper)
        candidate = ImagePatch.from_array(round_clip(values))
        trace.append(score(model, candidate))
        if trace[-1] <= model.threshold:
            break
    logger.debug("PGD finished steps=%s score=%.6f", steps, trace[-1])
    return _result(model, x0, candidate, steps, trace)


class _ObjectiveTracker:
    """Keeps the ICM objective current under bin-count changes in O(changed bins).

    Counts ``s`` are the (symmetrised) class counts of both directions, concatenated. With
    L2 normalisation the feature is ``s / |s|``; otherwise it is ``a * s`` for a fixed
    per-entry scale ``a``.
    """

    def __init__(
        self,
        counts: Tensor,
        cfg: SpamConfig,
        scale: Tensor,
        *,
        weights: Tensor | None,
        bias: float,
        margin: float,
        target: Tensor | None,
    ) -> None:
        self.counts = counts.astype(np.float64)
        self.l2 = cfg.normalization == "l2"
        self.scale = scale
        self.bias = bias
        self.margin = margin
        self.weights = weights
        self.target = target
        self.norm_sq = float(self.counts @ self.counts)
        if weights is not None:
            self.coeff = weights if self.l2 else weights * scale
            self.dot = float(self.coeff @ self.counts)
        else:
            assert target is not None
            self.coeff = target if self.l2 else scale
            self.target_sq = float(target @ target)
            if self.l2:
                self.dot = float(target @ self.counts)
            else:
                residual = scale * self.counts - target
                self.dot = float(residual @ residual)
        self.value = self._objective(self.dot, self.norm_sq)

    def _objective(self, dot: float, norm_sq: float) -> float:
        if self.weights is not None:
            margin_score = dot / np.sqrt(norm_sq) if self.l2 else dot
            return max(0.0, margin_score + self.bias + self.margin)
        if self.l2:
            return 1.0 - 2.0 * dot / np.sqrt(norm_sq) + self.target_sq
        return dot

    def _moved(self, changes: Mapping[int, int]) -> tuple[float, float]:
        dot = self.dot
        norm_sq = self.norm_sq
        for index, delta in changes.items():
            current = self.counts[index]
            norm_sq += delta * (2.0 * current + delta)
            if self.weights is None and not self.l2:
                assert self.target is not None
                before = self.scale[index] * current - self.target[index]
                after = self.scale[index] * (current + delta) - self.target[index]
                dot += after * after - before * before
            else:
                dot += self.coeff[index] * delta
        return dot, norm_sq

    def evaluate(self, changes: Mapping[int, int]) -> float:
        return self._objective(*self._moved(changes))

    def apply(self, changes: Mapping[int, int]) -> None:
        self.dot, self.norm_sq = self._moved(changes)
        for index, delta in changes.items():
            self.counts[index] += delta
        self.value = self._objective(self.dot, self.norm_sq)


def _class_layout(cfg: SpamConfig) -> tuple[Tensor, int]:
    if cfg.symmetrize:
        table = build_symmetry_table(cfg.truncation, cfg.cooc_order)
        return table.class_of, table.class_count
    return np.arange(cfg.raw_bins, dtype=np.int64), cfg.raw_bins


def _class_counts(state: SpamState, class_of: Tensor, classes: int) -> Tensor:
    return np.concatenate(
        [
            np.bincount(class_of, weights=hist.counts, minlength=classes)
            for hist in state.histograms()
        ]
    )


def _feature_scale(state: SpamState, cfg: SpamConfig, classes: int) -> Tensor:
    if cfg.normalization == "l1":
        return np.concatenate([np.full(classes, 1.0 / hist.total) for hist in state.histograms()])
    return np.ones(2 * classes)


def _full_objective(
    patch: ImagePatch,
    detector: DetectorModel,
    cfg: AttackConfig,
    f_target: SpamFeature | None,
) -> float:
    assert detector.spam_config is not None and detector.weights is not None
    feature = extract_spam(patch, detector.spam_config).values
    if f_target is None:
        return max(0.0, float(detector.weights @ feature) + detector.bias + cfg.margin)
    gap = feature - f_target.values
    return float(gap @ gap)


def icm_attack(
    detector: DetectorModel,
    x0: ImagePatch,
    f_target: SpamFeature | None,
    cfg: AttackConfig,
    *,
    full_recompute: bool = False,
) -> AttackResult:
    if detector.variant != "spam_linear":
        raise UnsupportedTargetError(
            detector.variant, "the ICM attack needs the spam_linear feature geometry"
        )
    assert detector.spam_config is not None and detector.weights is not None
    spam = detector.spam_config
    if cfg.icm_mode == "restore_pristine":
        if f_target is None:
            raise InvalidArgumentError("restore_pristine mode needs the pristine feature")
        if f_target.dimension != spam.dimension:
            raise InvalidArgumentError(
                f"target feature has dimension {f_target.dimension}, expected {spam.dimension}"
            )
    elif f_target is not None:
        raise InvalidArgumentError("cross_boundary mode takes no target feature")
    check_input(detector, x0)

    if cfg.icm_mode == "cross_boundary" and predict(detector, x0) == PRISTINE:
        return _result(detector, x0, x0, 0, (0.0,))

    state = SpamState.from_patch(x0, spam)
    class_of, classes = _class_layout(spam)
    tracker = _ObjectiveTracker(
        _class_counts(state, class_of, classes),
        spam,
        _feature_scale(state, spam, classes),
        weights=detector.weights if f_target is None else None,
        bias=detector.bias,
        margin=cfg.margin,
        target=None if f_target is None else f_target.values,
    )
    goal = 0.0 if f_target is None else cfg.tolerance
    objective = (
        _full_objective(x0, detector, cfg, f_target) if full_recompute else tracker.value
    )
    trace = [objective]
    origin = x0.pixels.astype(np.int64)
    height, width = origin.shape
    budget = cfg.distortion_T * height * width
    sse = 0.0
    rng = np.random.default_rng(cfg.seed)

    sweeps = 0
    done = objective <= goal
    while not done and sweeps < cfg.max_sweeps:
        sweeps += 1
        accepted = 0
        for site in rng.permutation(height * width):
            row, col = divmod(int(site), width)
            current = int(state.image[row, col])
            offset = current - int(origin[row, col])
            best: tuple[float, Any, dict[int, int], float] | None = None
            for delta in cfg.icm_deltas:
                if not 0 <= current + delta <= 255:
                    continue
                moved_sse = sse + (offset + delta) ** 2 - offset**2
                if moved_sse > budget:
                    continue
                edit = state.propose((row, col), delta)
                changes: dict[int, int] = {}
                for direction_index, code, sign in edit.bin_changes:
                    index = direction_index * classes + int(class_of[code])
                    changes[index] = changes.get(index, 0) + sign
                if full_recompute:
                    trial = state.image.copy()
                    trial[row, col] += delta
                    value = _full_objective(
                        ImagePatch.from_array(trial), detector, cfg, f_target
                    )
                else:
                    value = tracker.evaluate(changes)
                limit = objective if best is None else best[0]
                if value < limit - _IMPROVEMENT_EPS:
                    best = (value, edit, changes, moved_sse)
            if best is None:
                continue
            objective, edit, changes, sse = best
            state.commit(edit)
            tracker.apply(changes)
            trace.append(objective)
            accepted += 1
            if objective <= goal:
                done = True
                break
        logger.debug(
            "ICM sweep=%s accepted=%s objective=%.8f mse=%.4f",
            sweeps,
            accepted,
            objective,
            sse / (height * width),
        )
        if accepted == 0:
            break

    result = _result(detector, x0, state.patch(), sweeps, trace)
    if not result.success:
        logger.warning(
            "ICM attack did not flip the detector mode=%s sweeps=%s objective=%.6f",
            cfg.icm_mode,
            sweeps,
            objective,
        )
    return result


def pristine_target(detector: DetectorModel, pristine: ImagePatch) -> SpamFeature:
    if detector.spam_config is None:
        raise InvalidArgumentError(f"{detector.variant} has no SPAM configuration")
    return extract_spam(pristine, detector.spam_config)


@dataclass(frozen=True, slots=True)
class RestorerHyper:
    epochs: int = 20
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 8
    lambda_adv: float = 1.0
    lambda_pix: float = 10.0
    lambda_feat: float = 1.0
    discriminator_ratio: int = 1
    discriminator_lr: float = 1e-3
    channels: int = 16
    blocks: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.discriminator_lr <= 0:
            raise InvalidArgumentError("learning rates must be > 0")
        if min(self.lambda_adv, self.lambda_pix, self.lambda_feat) < 0:
            raise InvalidArgumentError("loss weights must be >= 0")
        if self.discriminator_ratio < 0:
            raise InvalidArgumentError("discriminator_ratio must be >= 0 (0 freezes it)")
        if self.channels < 1 or self.blocks < 0:
            raise InvalidArgumentError("channels must be >= 1 and blocks >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "lambda_adv": self.lambda_adv,
            "lambda_pix": self.lambda_pix,
            "lambda_feat": self.lambda_feat,
            "discriminator_ratio": self.discriminator_ratio,
            "discriminator_lr": self.discriminator_lr,
            "channels": self.channels,
            "blocks": self.blocks,
            "seed": self.seed,
        }


@dataclass(slots=True)
class Restorer:
    network: Network
    patch_size: int | None = None
    discriminator: Network | None = None
    loss_trace: list[float] = field(default_factory=list)
    pixel_trace: list[float] = field(default_factory=list)
    adversarial_trace: list[float] = field(default_factory=list)
    discriminator_trace: list[float] = field(default_factory=list)


def build_restorer_network(channels: int = 16, blocks: int = 4, seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)

    def conv(in_channels: int, out_channels: int, gain: float, name: str) -> Conv2d:
        std = gain * np.sqrt(2.0 / (9 * in_channels))
        return Conv2d(
            in_channels,
            out_channels,
            (3, 3),
            padding=1,
            weight=rng.normal(0.0, std, (out_channels, in_channels, 3, 3)),
            name=name,
        )

    body: list[Layer] = [
        Affine(1.0 / 64.0, -2.0, name="to_unit"),
        conv(1, channels, 1.0, "stem"),
        ReLU(name="stem_relu"),
    ]
    for index in range(blocks):
        body.append(
            Residual(
                [
                    conv(channels, channels, 1.0, f"block{index}_a"),
                    ReLU(name=f"block{index}_relu"),
                    conv(channels, channels, 0.1, f"block{index}_b"),
                ],
                name=f"block{index}",
            )
        )
    body.append(Conv2d(channels, 1, (3, 3), padding=1, name="head"))
    body.append(Affine(64.0, name="to_pixels"))
    return Network(layers=[Residual(body, name="global_skip")], loss="softmax_cross_entropy")


def _highpass_filters() -> list[Conv2d]:
    taps = np.array(RESIDUAL_TAPS, dtype=np.float64)
    return [
        Conv2d(1, 1, (1, 4), weight=taps.reshape(1, 1, 1, 4), name="hp_h", trainable=False),
        Conv2d(1, 1, (4, 1), weight=taps.reshape(1, 1, 4, 1), name="hp_v", trainable=False),
    ]


def _restoration_losses(
    generated: Tensor, pristine: Tensor, filters: Sequence[Conv2d]
) -> tuple[float, Tensor, float, Tensor]:
    peak_sq = 255.0 * 255.0
    gap = generated - pristine
    pixel = float(np.mean(gap * gap)) / peak_sq
    d_pixel = 2.0 * gap / (gap.size * peak_sq)

    feature = 0.0
    d_feature = np.zeros_like(generated)
    for hp in filters:
        response, cache = hp.forward(generated)
        reference, _ = hp.forward(pristine)
        diff = response - reference
        feature += float(np.mean(diff * diff)) / peak_sq
        d_feature += hp.backward(cache, 2.0 * diff / (diff.size * peak_sq))[0]
    return pixel, d_pixel, feature, d_feature


def train_restorer(
    detector: DetectorModel,
    train_pairs: Sequence[tuple[ImagePatch, ImagePatch]],
    hyper: RestorerHyper | None = None,
) -> Restorer:
    settings = hyper or RestorerHyper()
    detector_net = _require_differentiable(detector)
    if not train_pairs:
        raise InvalidArgumentError("no training pairs")
    for manipulated, pristine in train_pairs:
        if manipulated.shape != pristine.shape:
            raise InvalidArgumentError("restorer pairs must share dimensions")
        check_input(detector, manipulated)

    inputs = patches_to_tensor([pair[0] for pair in train_pairs])
    targets = patches_to_tensor([pair[1] for pair in train_pairs])
    generator = build_restorer_network(settings.channels, settings.blocks, settings.seed)
    discriminator = detector_net.copy()
    has_constraint = any(
        isinstance(layer, Conv2d) and layer.constrained for layer in discriminator.iter_layers()
    )
    generator_opt = Sgd(lr=settings.lr, momentum=settings.momentum)
    discriminator_opt = Sgd(lr=settings.discriminator_lr, momentum=settings.momentum)
    filters = _highpass_filters()
    rng = np.random.default_rng(settings.seed)
    restorer = Restorer(
        network=generator, patch_size=detector.patch_size, discriminator=discriminator
    )

    generator_steps = 0
    for epoch in range(settings.epochs):
        totals: list[float] = []
        pixels: list[float] = []
        adversarial: list[float] = []
        disc_losses: list[float] = []
        order = rng.permutation(len(train_pairs))
        for start in range(0, len(order), settings.batch_size):
            rows = order[start : start + settings.batch_size]
            batch_in, batch_target = inputs[rows], targets[rows]
            generated, cache = forward(generator, batch_in)

            pixel, d_pixel, feature, d_feature = _restoration_losses(
                generated, batch_target, filters
            )
            total = settings.lambda_pix * pixel + settings.lambda_feat * feature
            d_generated = settings.lambda_pix * d_pixel + settings.lambda_feat * d_feature
            adv_loss = 0.0
            if settings.lambda_adv > 0:
                logits, disc_cache = forward(discriminator, generated)
                adv_loss, d_logits = loss_and_gradient(
                    logits, np.full(len(rows), PRISTINE), discriminator.loss
                )
                _, d_from_adv = backward(discriminator, disc_cache, d_logits)
                total += settings.lambda_adv * adv_loss
                d_generated = d_generated + settings.lambda_adv * d_from_adv

            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"restorer loss diverged at epoch {epoch}",
                    loss_trace=restorer.loss_trace + [total],
                )
            grads, _ = backward(generator, cache, d_generated)
            generator_opt.step(generator, grads)
            generator_steps += 1
            totals.append(total)
            pixels.append(pixel)
            adversarial.append(adv_loss)

            if (
                settings.lambda_adv > 0
                and settings.discriminator_ratio > 0
                and generator_steps % settings.discriminator_ratio == 0
            ):
                fakes = np.clip(generated, 0.0, 255.0)
                batch = np.concatenate([batch_target, fakes])
                labels = np.concatenate(
                    [np.full(len(rows), PRISTINE), np.full(len(rows), MANIPULATED)]
                )
                logits, disc_cache = forward(discriminator, batch)
                disc_loss, d_logits = loss_and_gradient(logits, labels, discriminator.loss)
                disc_grads, _ = backward(discriminator, disc_cache, d_logits)
                discriminator_opt.step(discriminator, disc_grads)
                if has_constraint:
                    project_network_bayar(discriminator, rng=rng)
                disc_losses.append(disc_loss)

        restorer.loss_trace.append(float(np.mean(totals)))
        restorer.pixel_trace.append(float(np.mean(pixels)))
        restorer.adversarial_trace.append(float(np.mean(adversarial)))
        if disc_losses:
            restorer.discriminator_trace.append(float(np.mean(disc_losses)))
        logger.info(
            "Restorer epoch=%s loss=%.6f pixel_mse=%.6f adversarial=%.6f",
            epoch,
            restorer.loss_trace[-1],
            restorer.pixel_trace[-1],
            restorer.adversarial_trace[-1],
        )
    return restorer


def restore(restorer: Restorer | Network, x: ImagePatch) -> ImagePatch:
    network = restorer.network if isinstance(restorer, Restorer) else restorer
    if isinstance(restorer, Restorer) and restorer.patch_size is not None:
        if x.shape != (restorer.patch_size, restorer.patch_size):
            raise InvalidArgumentError(
                f"restorer expects {restorer.patch_size}x{restorer.patch_size} patches, "
                f"got {x.width}x{x.height}"
            )
    output, _ = forward(network, patches_to_tensor([x]))
    return ImagePatch.from_array(round_clip(output[0, 0]))


def run_attack(
    model: DetectorModel,
    x0: ImagePatch,
    cfg: AttackConfig,
    *,
    f_target: SpamFeature | None = None,
    restorer: Restorer | None = None,
) -> AttackResult:
    if cfg.method == "fgsm":
        return fgsm(model, x0, cfg.epsilon)
    if cfg.method == "pgd":
        return pgd(model, x0, cfg)
    if cfg.method == "icm":
        return icm_attack(model, x0, f_target, cfg)
    if restorer is None:
        raise InvalidArgumentError("gan attacks need a trained restorer")
    adversarial = restore(restorer, x0)
    return _result(model, x0, adversarial, 1, (score(model, x0), score(model, adversarial)))

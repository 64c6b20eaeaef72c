"""Experiment configuration: frozen dataclasses parsed from TOML."""

from __future__ import annotations

import sys
from collections.abc import Iterable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from ._seeding import fingerprint_of
from .attacks import AttackConfig, RestorerHyper
from .detectors import VARIANTS, LinearHyper, NetHyper, Variant
from .errors import ConfigError, CounterForensicsError
from .imaging import DatasetSpec, DeviceSpec, default_devices
from .manipulations import ManipulationSpec, benchmark_specs
from .spamfeat import SpamConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_TOP_LEVEL_KEYS = {"seed", "output_dir", "dataset", "manipulations", "detectors", "attacks", "split"}
_DATASET_KEYS = {
    "devices",
    "device_count",
    "images_per_device",
    "patch_size",
    "patches_per_image",
    "patch_stride",
    "image_width",
    "image_height",
    "seed",
}
_DEVICE_KEYS = {"device_id", "noise_sigma", "gamma", "base_texture_scale"}
_MANIPULATION_KEYS = {"kind", "sigma", "quality", "kernel", "scale"}
_DETECTOR_KEYS = {"id", "variant", "spam", "linear", "net", "temperature", "source", "finetune"}
_SPAM_KEYS = {"q", "truncation", "cooc_order", "symmetrize", "normalization"}
_LINEAR_KEYS = {"epochs", "lr", "l2", "batch_size"}
_NET_KEYS = {"epochs", "lr", "momentum", "batch_size", "validation_fraction", "train_layers"}
_ATTACK_KEYS = {
    "target",
    "evaluators",
    "max_patches",
    "restorer",
    "method",
    "epsilon",
    "pgd_steps",
    "pgd_alpha",
    "icm_mode",
    "icm_deltas",
    "distortion_T",
    "max_sweeps",
    "margin",
    "tolerance",
}
_RESTORER_KEYS = {
    "epochs",
    "lr",
    "momentum",
    "batch_size",
    "lambda_adv",
    "lambda_pix",
    "lambda_feat",
    "discriminator_ratio",
    "discriminator_lr",
    "channels",
    "blocks",
}
_SPLIT_KEYS = {"train_devices"}


def _check_keys(data: Mapping[str, Any], allowed: Iterable[str], where: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a table, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")


@dataclass(frozen=True, slots=True)
class DetectorSpec:
    """One detector to train per task; Cozzolino nets are built from ``source``."""

    detector_id: str
    variant: Variant
    spam: SpamConfig = field(default_factory=SpamConfig)
    linear: LinearHyper = field(default_factory=LinearHyper)
    net: NetHyper = field(default_factory=NetHyper)
    temperature: float = 0.1
    source: str | None = None
    finetune: bool = False

    def __post_init__(self) -> None:
        if not self.detector_id:
            raise ConfigError("detector id must not be empty")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown detector variant: {self.variant!r}")
        if self.variant.startswith("cozz_net") and not self.source:
            raise ConfigError(f"{self.detector_id}: cozz nets need a spam_linear source")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.detector_id,
            "variant": self.variant,
            "spam": self.spam.to_dict(),
            "linear": self.linear.to_dict(),
            "net": self.net.to_dict(),
            "temperature": self.temperature,
            "source": self.source,
            "finetune": self.finetune,
        }


@dataclass(frozen=True, slots=True)
class CampaignSpec:
    """An attack against ``target``; ``evaluators`` defaults to every detector."""

    target: str
    attack: AttackConfig = field(default_factory=AttackConfig)
    evaluators: tuple[str, ...] = ()
    max_patches: int | None = None
    restorer: RestorerHyper | None = None

    def __post_init__(self) -> None:
        if self.max_patches is not None and self.max_patches < 1:
            raise ConfigError("max_patches must be >= 1")

    @property
    def campaign_id(self) -> str:
        return f"{self.target}-{self.attack.label}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "attack": self.attack.to_dict(),
            "evaluators": list(self.evaluators),
            "max_patches": self.max_patches,
            "restorer": None if self.restorer is None else self.restorer.to_dict(),
        }


def _default_detectors() -> tuple[DetectorSpec, ...]:
    return (
        DetectorSpec("spam", "spam_linear"),
        DetectorSpec("bayar", "bayar_net"),
    )


def _default_campaigns() -> tuple[CampaignSpec, ...]:
    return (CampaignSpec("bayar", AttackConfig(method="fgsm", epsilon=1)),)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    manipulations: tuple[ManipulationSpec, ...] = field(
        default_factory=lambda: tuple(benchmark_specs())
    )
    detectors: tuple[DetectorSpec, ...] = field(default_factory=_default_detectors)
    campaigns: tuple[CampaignSpec, ...] = field(default_factory=_default_campaigns)
    train_devices: int = 6
    seed: int = 0
    output_dir: Path = Path("runs/default")

    def __post_init__(self) -> None:
        device_count = len(self.dataset.devices)
        if not 1 <= self.train_devices < device_count:
            raise ConfigError(
                f"train_devices must lie in [1, {device_count - 1}], got {self.train_devices}"
            )
        if not self.manipulations:
            raise ConfigError("at least one manipulation is required")
        task_ids = [spec.task_id for spec in self.manipulations]
        if len(set(task_ids)) != len(task_ids):
            raise ConfigError("manipulations must be distinct")
        ids = [spec.detector_id for spec in self.detectors]
        if len(set(ids)) != len(ids):
            raise ConfigError("detector ids must be unique")
        by_id = {spec.detector_id: spec for spec in self.detectors}
        for position, spec in enumerate(self.detectors):
            if spec.source is None:
                continue
            source = by_id.get(spec.source)
            if source is None or source.variant != "spam_linear":
                raise ConfigError(f"{spec.detector_id}: source must name a spam_linear detector")
            if ids.index(spec.source) > position:
                raise ConfigError(f"{spec.detector_id}: source must be listed before it")
        for campaign in self.campaigns:
            if campaign.target not in by_id:
                raise ConfigError(f"attack target {campaign.target!r} is not a detector")
            missing = set(campaign.evaluators) - set(by_id)
            if missing:
                raise ConfigError(f"unknown evaluators: {', '.join(sorted(missing))}")

    def detector(self, detector_id: str) -> DetectorSpec:
        for spec in self.detectors:
            if spec.detector_id == detector_id:
                return spec
        raise ConfigError(f"unknown detector: {detector_id!r}")

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=seed, dataset=replace(self.dataset, seed=seed))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset.to_dict(),
            "manipulations": [spec.to_dict() for spec in self.manipulations],
            "detectors": [spec.to_dict() for spec in self.detectors],
            "campaigns": [campaign.to_dict() for campaign in self.campaigns],
            "train_devices": self.train_devices,
            "seed": self.seed,
        }

    def fingerprint(self) -> str:
        return fingerprint_of(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        _check_keys(data, _TOP_LEVEL_KEYS, "config")
        try:
            seed = int(data.get("seed", 0))
            kwargs: dict[str, Any] = {
                "seed": seed,
                "dataset": _dataset_from(data.get("dataset", {}), seed),
            }
            if "output_dir" in data:
                kwargs["output_dir"] = Path(str(data["output_dir"]))
            if "manipulations" in data:
                kwargs["manipulations"] = tuple(
                    _manipulation_from(item) for item in data["manipulations"]
                )
            if "detectors" in data:
                kwargs["detectors"] = tuple(_detector_from(item) for item in data["detectors"])
            if "attacks" in data:
                kwargs["campaigns"] = tuple(_campaign_from(item) for item in data["attacks"])
            split = data.get("split", {})
            _check_keys(split, _SPLIT_KEYS, "split")
            if "train_devices" in split:
                kwargs["train_devices"] = int(split["train_devices"])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (CounterForensicsError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_toml(cls, path: str | Path) -> ExperimentConfig:
        try:
            with Path(path).open("rb") as handle:
                data = tomllib.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def _dataset_from(data: Mapping[str, Any], seed: int) -> DatasetSpec:
    _check_keys(data, _DATASET_KEYS, "dataset")
    if "devices" in data:
        devices = []
        for item in data["devices"]:
            _check_keys(item, _DEVICE_KEYS, "dataset.devices")
            devices.append(
                DeviceSpec(
                    device_id=int(item["device_id"]),
                    noise_sigma=float(item["noise_sigma"]),
                    gamma=float(item["gamma"]),
                    base_texture_scale=float(item["base_texture_scale"]),
                )
            )
        device_specs = tuple(devices)
    else:
        device_specs = default_devices(int(data.get("device_count", 9)))
    defaults = DatasetSpec()
    return DatasetSpec(
        devices=device_specs,
        images_per_device=int(data.get("images_per_device", defaults.images_per_device)),
        patch_size=int(data.get("patch_size", defaults.patch_size)),
        patches_per_image=int(data.get("patches_per_image", defaults.patches_per_image)),
        patch_stride=int(data.get("patch_stride", defaults.patch_stride)),
        seed=int(data.get("seed", seed)),
        image_width=int(data.get("image_width", defaults.image_width)),
        image_height=int(data.get("image_height", defaults.image_height)),
    )


def _manipulation_from(data: Mapping[str, Any]) -> ManipulationSpec:
    _check_keys(data, _MANIPULATION_KEYS, "manipulations")
    return ManipulationSpec.from_dict(data)


def _detector_from(data: Mapping[str, Any]) -> DetectorSpec:
    _check_keys(data, _DETECTOR_KEYS, "detectors")
    spam = data.get("spam", {})
    linear = data.get("linear", {})
    net = data.get("net", {})
    _check_keys(spam, _SPAM_KEYS, "detectors.spam")
    _check_keys(linear, _LINEAR_KEYS, "detectors.linear")
    _check_keys(net, _NET_KEYS, "detectors.net")
    return DetectorSpec(
        detector_id=str(data["id"]),
        variant=data["variant"],
        spam=SpamConfig.from_dict(spam),
        linear=LinearHyper(**linear),
        net=NetHyper(**net),
        temperature=float(data.get("temperature", 0.1)),
        source=data.get("source"),
        finetune=bool(data.get("finetune", False)),
    )


def _campaign_from(data: Mapping[str, Any]) -> CampaignSpec:
    _check_keys(data, _ATTACK_KEYS, "attacks")
    attack_fields = {
        key: value
        for key, value in data.items()
        if key not in {"target", "evaluators", "max_patches", "restorer"}
    }
    restorer = data.get("restorer")
    if restorer is not None:
        _check_keys(restorer, _RESTORER_KEYS, "attacks.restorer")
    max_patches = data.get("max_patches")
    return CampaignSpec(
        target=str(data["target"]),
        attack=AttackConfig.from_dict(attack_fields),
        evaluators=tuple(str(item) for item in data.get("evaluators", ())),
        max_patches=None if max_patches is None else int(max_patches),
        restorer=None if restorer is None else RestorerHyper(**restorer),
    )

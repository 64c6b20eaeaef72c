from __future__ import annotations

import logging

from ._seeding import derive_seed
from .attacks import (
    AttackConfig,
    AttackRecord,
    AttackResult,
    Restorer,
    RestorerHyper,
    build_restorer_network,
    fgsm,
    icm_attack,
    pgd,
    restore,
    run_attack,
    train_restorer,
)
from .config import CampaignSpec, DetectorSpec, ExperimentConfig
from .detectors import (
    DetectorModel,
    LinearHyper,
    NetHyper,
    TestSet,
    TrainSet,
    build_bayar_network,
    build_cozznet,
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
from .errors import (
    ConfigError,
    CounterForensicsError,
    DegenerateKernelError,
    IntegrityError,
    InvalidArgumentError,
    ModelFormatError,
    PgmParseError,
    ShapeMismatchError,
    TrainingDivergedError,
    UnsupportedOperationError,
    UnsupportedTargetError,
)
from .harness import (
    Workspace,
    build_task,
    configure_verbose_logging,
    emit_report,
    evaluate,
    read_metrics_csv,
    run_experiment,
    split_by_device,
    transfer_matrix,
)
from .imaging import (
    DatasetSpec,
    DeviceSpec,
    ImagePatch,
    PatchRecord,
    build_dataset,
    default_devices,
    generate_synthetic_image,
    load_image,
    mse,
    psnr,
    read_pgm,
    write_pgm,
)
from .manipulations import ManipulationSpec, apply, benchmark_specs
from .models import MetricsRow, TransferCell
from .spamfeat import (
    SpamConfig,
    SpamFeature,
    SpamState,
    extract_spam,
    incremental_update,
)

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "AttackConfig",
    "AttackRecord",
    "AttackResult",
    "CampaignSpec",
    "ConfigError",
    "CounterForensicsError",
    "DatasetSpec",
    "DegenerateKernelError",
    "DetectorModel",
    "DetectorSpec",
    "DeviceSpec",
    "ExperimentConfig",
    "ImagePatch",
    "IntegrityError",
    "InvalidArgumentError",
    "LinearHyper",
    "ManipulationSpec",
    "MetricsRow",
    "ModelFormatError",
    "NetHyper",
    "PatchRecord",
    "PgmParseError",
    "Restorer",
    "RestorerHyper",
    "ShapeMismatchError",
    "SpamConfig",
    "SpamFeature",
    "SpamState",
    "TestSet",
    "TrainSet",
    "TrainingDivergedError",
    "TransferCell",
    "UnsupportedOperationError",
    "UnsupportedTargetError",
    "Workspace",
    "apply",
    "build_bayar_network",
    "build_cozznet",
    "build_dataset",
    "build_restorer_network",
    "build_task",
    "configure_verbose_logging",
    "default_devices",
    "derive_seed",
    "emit_report",
    "evaluate",
    "extract_spam",
    "fgsm",
    "finetune_cozznet",
    "fit_linear_classifier",
    "generate_synthetic_image",
    "icm_attack",
    "incremental_update",
    "load_detector",
    "load_image",
    "mse",
    "pgd",
    "predict",
    "psnr",
    "read_metrics_csv",
    "read_pgm",
    "restore",
    "run_attack",
    "run_experiment",
    "save_detector",
    "score",
    "score_batch",
    "split_by_device",
    "benchmark_specs",
    "train_bayar",
    "train_restorer",
    "train_spam_linear",
    "transfer_matrix",
    "write_pgm",
]

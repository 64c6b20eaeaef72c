from __future__ import annotations

import csv
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from ._seeding import derive_seed, fingerprint_of
from .attacks import (
    AttackRecord,
    Restorer,
    RestorerHyper,
    pristine_target,
    run_attack,
    train_restorer,
)
from .config import CampaignSpec, DetectorSpec, ExperimentConfig
from .detectors import (
    DetectorModel,
    TestSet,
    TrainSet,
    build_cozznet,
    finetune_cozznet,
    score_batch,
    spam_linear_from_features,
    train_bayar,
    train_spam_linear,
)
from .errors import IntegrityError, InvalidArgumentError
from .imaging import DatasetSpec, ImagePatch, PatchRecord, build_dataset, read_pgm, write_pgm
from .manipulations import ManipulationSpec, apply
from .models import MetricsRow, TransferCell
from .spamfeat import SpamConfig, SpamFeature

PRISTINE_SUFFIX = "/pristine"
MANIPULATED_SUFFIX = "/manipulated"

logger = logging.getLogger(__name__)


def configure_verbose_logging(*, enabled: bool) -> None:
    if not enabled:
        return

    package_logger = logging.getLogger("counterforensics")
    package_logger.setLevel(logging.DEBUG)

    has_non_null_handler = any(
        not isinstance(handler, logging.NullHandler)
        for handler in package_logger.handlers
    )
    if has_non_null_handler:
        return

    handler = logging.StreamHandler()
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
    )
    package_logger.addHandler(handler)
    package_logger.propagate = False


@dataclass(frozen=True, slots=True)
class TaskData:
    """Pristine patches paired with their manipulated versions for one manipulation."""

    spec: ManipulationSpec
    records: tuple[PatchRecord, ...]
    manipulated: tuple[ImagePatch, ...]

    @property
    def task_id(self) -> str:
        return self.spec.task_id

    @property
    def device_ids(self) -> tuple[int, ...]:
        return tuple(sorted({record.device_id for record in self.records}))

    def labelled(self, devices: Sequence[int]) -> TrainSet:
        wanted = set(devices)
        patches: list[ImagePatch] = []
        labels: list[int] = []
        device_ids: list[int] = []
        keys: list[str] = []
        for record, manipulated in zip(self.records, self.manipulated):
            if record.device_id not in wanted:
                continue
            for suffix, label, patch in (
                (PRISTINE_SUFFIX, 0, record.patch),
                (MANIPULATED_SUFFIX, 1, manipulated),
            ):
                patches.append(patch)
                labels.append(label)
                device_ids.append(record.device_id)
                keys.append(record.key + suffix)
        return TrainSet(tuple(patches), tuple(labels), tuple(device_ids), tuple(keys))


def build_task(records: Sequence[PatchRecord], spec: ManipulationSpec) -> TaskData:
    if not records:
        raise InvalidArgumentError("no patches to manipulate")
    manipulated = tuple(apply(record.patch, spec) for record in records)
    logger.info("Built task task=%s pairs=%s", spec.task_id, len(records))
    return TaskData(spec=spec, records=tuple(records), manipulated=manipulated)


def split_devices(
    device_ids: Sequence[int], train_count: int, seed: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    devices = sorted(set(device_ids))
    if not 1 <= train_count < len(devices):
        raise InvalidArgumentError(
            f"train_count must lie in [1, {len(devices) - 1}], got {train_count}"
        )
    rng = np.random.default_rng(derive_seed(seed, "split"))
    chosen = {int(device) for device in rng.choice(devices, size=train_count, replace=False)}
    train = tuple(device for device in devices if device in chosen)
    test = tuple(device for device in devices if device not in chosen)
    return train, test


def split_by_device(task: TaskData, train_count: int, seed: int) -> tuple[TrainSet, TestSet]:
    """Device-disjoint train/test sets; every patch of a device lands on one side."""
    train_devices, test_devices = split_devices(task.device_ids, train_count, seed)
    train = task.labelled(train_devices)
    test = task.labelled(test_devices)
    if train.devices & test.devices:
        raise IntegrityError("device leakage between train and test")
    logger.info(
        "Split task=%s train_devices=%s test_devices=%s",
        task.task_id,
        list(train_devices),
        list(test_devices),
    )
    return train, test


def evaluate(
    model: DetectorModel,
    test: TestSet,
    *,
    task_id: str = "",
    detector_id: str | None = None,
) -> MetricsRow:
    test.require_classes(1)
    predicted = score_batch(model, test.patches) > model.threshold
    labels = np.asarray(test.labels, dtype=bool)
    row = MetricsRow(
        task_id=task_id,
        detector_id=detector_id or model.variant,
        true_negatives=int(np.sum(~predicted & ~labels)),
        false_positives=int(np.sum(predicted & ~labels)),
        true_positives=int(np.sum(predicted & labels)),
        false_negatives=int(np.sum(~predicted & labels)),
    )
    logger.info(
        "Evaluated detector=%s task=%s fpr=%.2f tpr=%.2f acc=%.2f",
        row.detector_id,
        task_id,
        row.fpr,
        row.tpr,
        row.acc,
    )
    return row


def _base_key(key: str) -> str:
    return key.rsplit("/", 1)[0]


@dataclass(slots=True)
class CampaignOutcome:
    cells: list[TransferCell] = field(default_factory=list)
    records: list[AttackRecord] = field(default_factory=list)
    adversarial: dict[str, ImagePatch] = field(default_factory=dict)


def transfer_matrix(
    detectors: Mapping[str, DetectorModel],
    campaign: CampaignSpec,
    test: TestSet,
    *,
    task_id: str = "",
    restorer: Restorer | None = None,
    cache: dict[tuple[str, str, str], ImagePatch] | None = None,
) -> CampaignOutcome:
    """Attack the manipulated test patches once, then score them with every evaluator."""
    target = detectors.get(campaign.target)
    if target is None:
        raise InvalidArgumentError(f"unknown attack target: {campaign.target!r}")
    evaluators = list(campaign.evaluators) or list(detectors)
    adversarial_cache = {} if cache is None else cache

    pristine_by_key = {
        _base_key(key): patch
        for key, patch, label in zip(test.keys, test.patches, test.labels)
        if label == 0
    }
    attacked = [
        (key, patch)
        for key, patch, label in zip(test.keys, test.patches, test.labels)
        if label == 1
    ]
    if campaign.max_patches is not None:
        attacked = attacked[: campaign.max_patches]
    if not attacked:
        raise InvalidArgumentError("no manipulated patches to attack")

    outcome = CampaignOutcome()
    digests: dict[str, str] = {}
    method = campaign.attack.label
    for key, patch in attacked:
        cache_key = (campaign.campaign_id, task_id, key)
        if cache_key not in adversarial_cache:
            f_target: SpamFeature | None = None
            if campaign.attack.method == "icm" and campaign.attack.icm_mode == "restore_pristine":
                f_target = pristine_target(target, pristine_by_key[_base_key(key)])
            result = run_attack(
                target, patch, campaign.attack, f_target=f_target, restorer=restorer
            )
            adversarial_cache[cache_key] = result.adversarial
            outcome.records.append(
                AttackRecord.from_result(key, task_id, campaign.target, method, result)
            )
        adversarial = adversarial_cache[cache_key]
        digests[key] = adversarial.digest()
        outcome.adversarial[key] = adversarial

    keys = [key for key, _ in attacked]
    for evaluator_id in evaluators:
        batch = [adversarial_cache[(campaign.campaign_id, task_id, key)] for key in keys]
        for key, patch in zip(keys, batch):
            if patch.digest() != digests[key]:
                raise IntegrityError(f"adversarial bytes changed for {key}")
        model = detectors[evaluator_id]
        detected = int(np.sum(score_batch(model, batch) > model.threshold))
        cell = TransferCell(
            target_id=campaign.target,
            evaluator_id=evaluator_id,
            task_id=task_id,
            method=method,
            attacked=len(batch),
            detected=detected,
        )
        outcome.cells.append(cell)
        logger.info(
            "Transfer target=%s evaluator=%s task=%s method=%s tpr=%.2f",
            cell.target_id,
            evaluator_id,
            task_id,
            method,
            cell.tpr_under_attack,
        )
    return outcome


_METRICS_COLUMNS = [
    "task_id",
    "detector_id",
    "true_negatives",
    "false_positives",
    "true_positives",
    "false_negatives",
    "fpr",
    "tpr",
    "acc",
]
_TRANSFER_COLUMNS = [
    "target_id",
    "evaluator_id",
    "task_id",
    "method",
    "attacked",
    "detected",
    "tpr_under_attack",
]


def _preamble(fingerprint: str, seed: int) -> str:
    return f"# config={fingerprint} seed={seed}"


def _write_csv(
    path: Path, columns: list[str], rows: Sequence[dict[str, Any]], fingerprint: str, seed: int
) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(_preamble(fingerprint, seed) + "\n")
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _format_cell(row[column]) for column in columns})


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _ordered(values: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(values))


def _metrics_markdown(rows: Sequence[MetricsRow], fingerprint: str, seed: int) -> str:
    detectors = _ordered([row.detector_id for row in rows])
    tasks = _ordered([row.task_id for row in rows])
    lookup = {(row.task_id, row.detector_id): row for row in rows}
    header = ["Task"] + [
        f"{detector} {metric}" for detector in detectors for metric in ("FPR", "TPR", "ACC")
    ]
    lines = [
        "# Detection performance",
        "",
        f"Config `{fingerprint}`, seed {seed}.",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|",
    ]
    for task in tasks:
        cells = [task]
        for detector in detectors:
            row = lookup.get((task, detector))
            if row is None:
                cells.extend(["-", "-", "-"])
            else:
                cells.extend(f"{value:.2f}" for value in (row.fpr, row.tpr, row.acc))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _transfer_markdown(cells: Sequence[TransferCell], fingerprint: str, seed: int) -> str:
    lines = [
        "# TPR under attack",
        "",
        f"Config `{fingerprint}`, seed {seed}.",
    ]
    campaigns = _ordered([f"{cell.target_id}\x1f{cell.method}" for cell in cells])
    for campaign in campaigns:
        target, method = campaign.split("\x1f")
        subset = [c for c in cells if c.target_id == target and c.method == method]
        evaluators = _ordered([cell.evaluator_id for cell in subset])
        lookup = {(cell.task_id, cell.evaluator_id): cell for cell in subset}
        lines.extend(
            [
                "",
                f"## Target: {target} ({method})",
                "",
                "| Task | " + " | ".join(evaluators) + " |",
                "|---|" + "|".join(["---:"] * len(evaluators)) + "|",
            ]
        )
        for task in _ordered([cell.task_id for cell in subset]):
            values = [
                f"{lookup[(task, evaluator)].tpr_under_attack:.2f}"
                if (task, evaluator) in lookup
                else "-"
                for evaluator in evaluators
            ]
            lines.append(f"| {task} | " + " | ".join(values) + " |")
    return "\n".join(lines) + "\n"


def emit_report(
    rows: Sequence[MetricsRow],
    cells: Sequence[TransferCell],
    path: str | Path,
    *,
    fingerprint: str = "",
    seed: int = 0,
) -> list[Path]:
    """Write metrics (and transfer, when present) tables as CSV and Markdown under ``path``."""
    if not rows and not cells:
        raise InvalidArgumentError("nothing to report")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if rows:
        metrics_csv = directory / "metrics.csv"
        _write_csv(
            metrics_csv, _METRICS_COLUMNS, [row.to_dict() for row in rows], fingerprint, seed
        )
        metrics_md = directory / "metrics.md"
        metrics_md.write_text(_metrics_markdown(rows, fingerprint, seed), encoding="utf-8")
        written.extend([metrics_csv, metrics_md])
    if cells:
        transfer_csv = directory / "transfer.csv"
        _write_csv(
            transfer_csv,
            _TRANSFER_COLUMNS,
            [cell.to_dict() for cell in cells],
            fingerprint,
            seed,
        )
        transfer_md = directory / "transfer.md"
        transfer_md.write_text(_transfer_markdown(cells, fingerprint, seed), encoding="utf-8")
        written.extend([transfer_csv, transfer_md])
    logger.info("Wrote report directory=%s files=%s", directory, len(written))
    return written


def _read_csv(path: str | Path) -> tuple[str, int, list[dict[str, str]]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        first = handle.readline().strip()
        fingerprint, seed = "", 0
        if first.startswith("# "):
            fields = dict(item.split("=", 1) for item in first[2:].split())
            fingerprint = fields.get("config", "")
            seed = int(fields.get("seed", 0))
        else:
            handle.seek(0)
        return fingerprint, seed, list(csv.DictReader(handle))


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    return [MetricsRow.from_dict(row) for row in _read_csv(path)[2]]


def read_transfer_csv(path: str | Path) -> list[TransferCell]:
    return [TransferCell.from_dict(row) for row in _read_csv(path)[2]]


def read_report_header(path: str | Path) -> tuple[str, int]:
    fingerprint, seed, _ = _read_csv(path)
    return fingerprint, seed


def train_detector(
    spec: DetectorSpec,
    train: TrainSet,
    trained: Mapping[str, DetectorModel],
    *,
    seed: int,
    features: Sequence[SpamFeature] | None = None,
) -> DetectorModel:
    """Train one detector; ``features`` (aligned with ``train``) skips SPAM extraction."""
    if spec.variant == "spam_linear":
        hyper = replace(spec.linear, seed=seed)
        if features is not None:
            return spam_linear_from_features(
                np.stack([feature.values for feature in features]),
                train.labels,
                spec.spam,
                hyper,
                patch_size=train.patches[0].height,
            )
        return train_spam_linear(train, spec.spam, hyper)
    if spec.variant == "bayar_net":
        return train_bayar(train, replace(spec.net, seed=seed))

    if spec.source is None or spec.source not in trained:
        raise InvalidArgumentError(
            f"{spec.detector_id}: source detector {spec.source!r} has not been trained"
        )
    source = trained[spec.source]
    assert source.spam_config is not None and source.weights is not None
    mode = "hard" if spec.variant == "cozz_net_hard" else "soft"
    model = build_cozznet(
        source.spam_config,
        (source.weights, source.bias),
        mode,
        spec.temperature,
        patch_size=source.patch_size or train.patches[0].height,
    )
    if spec.finetune:
        model = finetune_cozznet(model, train, replace(spec.net, seed=seed))
    return model


def seeded_campaign(campaign: CampaignSpec, seed: int) -> CampaignSpec:
    return replace(campaign, attack=replace(campaign.attack, seed=seed))


def train_restorer_for(
    campaign: CampaignSpec,
    target: DetectorModel,
    train: TrainSet,
    *,
    seed: int,
) -> Restorer:
    pristine_by_key = {
        _base_key(key): patch
        for key, patch, label in zip(train.keys, train.patches, train.labels)
        if label == 0
    }
    pairs = [
        (patch, pristine_by_key[_base_key(key)])
        for key, patch, label in zip(train.keys, train.patches, train.labels)
        if label == 1
    ]
    hyper = replace(campaign.restorer or RestorerHyper(), seed=seed)
    return train_restorer(target, pairs, hyper)


class Workspace:
    """On-disk layout shared by the CLI stages::

        <root>/dataset/index.json
        <root>/dataset/device_<d>/<key>.pgm
        <root>/tasks/<task>/manifest.json, <key>.pgm
        <root>/features/<task>.csv
        <root>/models/<task>/<detector>.cfm
        <root>/attacks/<task>/<campaign>/<key>.pgm, log.jsonl
        <root>/reports/metrics.{csv,md}, transfer.{csv,md}
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def task_dir(self, task_id: str) -> Path:
        return self.root / "tasks" / task_id

    def features_path(self, task_id: str) -> Path:
        return self.root / "features" / f"{task_id}.csv"

    def model_path(self, task_id: str, detector_id: str) -> Path:
        return self.root / "models" / task_id / f"{detector_id}.cfm"

    def attack_dir(self, task_id: str, campaign_id: str) -> Path:
        return self.root / "attacks" / task_id / campaign_id

    @staticmethod
    def _save_patches(directory: Path, items: Sequence[tuple[str, ImagePatch]]) -> list[dict[str, str]]:
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for key, patch in items:
            name = f"{key.replace('/', '_')}.pgm"
            write_pgm(patch, directory / name)
            entries.append({"key": key, "file": name, "sha256": patch.digest()})
        return entries

    @staticmethod
    def _load_patch(directory: Path, entry: Mapping[str, str]) -> ImagePatch:
        patch = read_pgm(directory / entry["file"])
        if patch.digest() != entry["sha256"]:
            raise IntegrityError(f"{directory / entry['file']}: content hash mismatch")
        return patch

    def save_dataset(self, records: Sequence[PatchRecord], spec: DatasetSpec) -> Path:
        index: dict[str, Any] = {
            "fingerprint": fingerprint_of(spec.to_dict()),
            "spec": spec.to_dict(),
            "records": [],
        }
        for device_id in sorted({record.device_id for record in records}):
            device_records = [r for r in records if r.device_id == device_id]
            entries = self._save_patches(
                self.dataset_dir / f"device_{device_id}",
                [(record.key, record.patch) for record in device_records],
            )
            for record, entry in zip(device_records, entries):
                index["records"].append(
                    {
                        **entry,
                        "file": f"device_{device_id}/{entry['file']}",
                        "device_id": record.device_id,
                        "image_index": record.image_index,
                        "patch_index": record.patch_index,
                    }
                )
        path = self.dataset_dir / "index.json"
        path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")
        logger.info("Saved dataset root=%s patches=%s", self.dataset_dir, len(records))
        return path

    def load_dataset(self) -> list[PatchRecord]:
        index = json.loads((self.dataset_dir / "index.json").read_text(encoding="utf-8"))
        return [
            PatchRecord(
                patch=self._load_patch(self.dataset_dir, entry),
                device_id=int(entry["device_id"]),
                image_index=int(entry["image_index"]),
                patch_index=int(entry["patch_index"]),
            )
            for entry in index["records"]
        ]

    def save_task(self, task: TaskData) -> Path:
        directory = self.task_dir(task.task_id)
        entries = self._save_patches(
            directory,
            [(record.key, patch) for record, patch in zip(task.records, task.manipulated)],
        )
        manifest = {"spec": task.spec.to_dict(), "records": entries}
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return path

    def load_task(self, task_id: str, records: Sequence[PatchRecord]) -> TaskData:
        directory = self.task_dir(task_id)
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
        by_key = {record.key: record for record in records}
        ordered: list[PatchRecord] = []
        manipulated: list[ImagePatch] = []
        for entry in manifest["records"]:
            ordered.append(by_key[entry["key"]])
            manipulated.append(self._load_patch(directory, entry))
        return TaskData(
            spec=ManipulationSpec.from_dict(manifest["spec"]),
            records=tuple(ordered),
            manipulated=tuple(manipulated),
        )

    def save_attacks(
        self, task_id: str, campaign_id: str, outcome: CampaignOutcome
    ) -> Path:
        directory = self.attack_dir(task_id, campaign_id)
        self._save_patches(directory, sorted(outcome.adversarial.items()))
        log_path = directory / "log.jsonl"
        with log_path.open("w", encoding="utf-8") as handle:
            for record in outcome.records:
                handle.write(record.to_json() + "\n")
        return log_path

    def load_attack_log(self, task_id: str, campaign_id: str) -> list[AttackRecord]:
        path = self.attack_dir(task_id, campaign_id) / "log.jsonl"
        with path.open(encoding="utf-8") as handle:
            return [AttackRecord.from_dict(json.loads(line)) for line in handle if line.strip()]


@dataclass(slots=True)
class ExperimentResult:
    rows: list[MetricsRow] = field(default_factory=list)
    cells: list[TransferCell] = field(default_factory=list)
    attack_records: list[AttackRecord] = field(default_factory=list)
    report_paths: list[Path] = field(default_factory=list)


def run_experiment(
    config: ExperimentConfig, *, workspace: Workspace | None = None
) -> ExperimentResult:
    """Dataset, tasks, detectors, attacks and report as a pure function of ``config``."""
    records = build_dataset(config.dataset)
    if workspace is not None:
        workspace.save_dataset(records, config.dataset)

    result = ExperimentResult()
    for spec in config.manipulations:
        task = build_task(records, spec)
        if workspace is not None:
            workspace.save_task(task)
        train, test = split_by_device(task, config.train_devices, config.seed)

        trained: dict[str, DetectorModel] = {}
        for detector in config.detectors:
            seed = derive_seed(config.seed, "train", task.task_id, detector.detector_id)
            trained[detector.detector_id] = train_detector(detector, train, trained, seed=seed)
            result.rows.append(
                evaluate(
                    trained[detector.detector_id],
                    test,
                    task_id=task.task_id,
                    detector_id=detector.detector_id,
                )
            )

        for campaign in config.campaigns:
            seed = derive_seed(config.seed, "attack", task.task_id, campaign.campaign_id)
            seeded = seeded_campaign(campaign, seed)
            restorer = None
            if campaign.attack.method == "gan":
                restorer = train_restorer_for(
                    seeded, trained[campaign.target], train, seed=seed
                )
            outcome = transfer_matrix(
                trained, seeded, test, task_id=task.task_id, restorer=restorer
            )
            result.cells.extend(outcome.cells)
            result.attack_records.extend(outcome.records)
            if workspace is not None:
                workspace.save_attacks(task.task_id, campaign.campaign_id, outcome)

    if workspace is not None:
        result.report_paths = emit_report(
            result.rows,
            result.cells,
            workspace.reports_dir,
            fingerprint=config.fingerprint(),
            seed=config.seed,
        )
    return result


def spam_config_for(config: ExperimentConfig) -> SpamConfig:
    """SPAM settings of the first spam_linear detector (defaults when there is none)."""
    for detector in config.detectors:
        if detector.variant == "spam_linear":
            return detector.spam
    return SpamConfig()

from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from ._seeding import derive_seed
from .attacks import AttackRecord
from .config import ExperimentConfig
from .detectors import DetectorModel, load_detector, save_detector
from .errors import ConfigError, CounterForensicsError, IntegrityError
from .harness import (
    Workspace,
    build_task,
    configure_verbose_logging,
    emit_report,
    evaluate,
    read_metrics_csv,
    read_transfer_csv,
    run_experiment,
    seeded_campaign,
    spam_config_for,
    split_by_device,
    train_detector,
    train_restorer_for,
    transfer_matrix,
)
from .imaging import build_dataset
from .manipulations import ManipulationSpec
from .models import MetricsRow, TransferCell
from .spamfeat import SpamFeature, extract_spam, read_features_csv, write_features_csv


class _ParserExit(Exception):
    def __init__(self, status: int, message: str | None = None) -> None:
        self.status = status
        self.message = message
        super().__init__(message)


class _ArgumentParser(argparse.ArgumentParser):
    def exit(self, status: int = 0, message: str | None = None) -> NoReturn:
        raise _ParserExit(status, message)

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _default_prog() -> str:
    program_name = Path(sys.argv[0]).name
    if program_name == "__main__.py":
        return "python -m counterforensics"
    if program_name:
        return program_name
    return "counterforensics"


def _add_shared_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        type=Path,
        default=None,
        help="Experiment TOML file (defaults to the built-in desk-scale setup)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override the master seed from the config",
    )
    parser.add_argument(
        "--workspace",
        type=Path,
        default=None,
        help="Artifact directory (defaults to output_dir from the config)",
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging",
    )


def _add_task_filter(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--task",
        action="append",
        default=None,
        help="Restrict to a task id such as blur-1.10 (repeatable)",
    )


def _build_parser(*, prog: str | None = None) -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog=_default_prog() if prog is None else prog,
    )
    _add_shared_arguments(parser)
    subparsers = parser.add_subparsers(dest="command", required=True)

    dataset_parser = subparsers.add_parser("dataset", help="Synthetic dataset stage")
    dataset_commands = dataset_parser.add_subparsers(dest="action", required=True)
    dataset_build = dataset_commands.add_parser("build", help="Generate and store the patches")
    _add_shared_arguments(dataset_build)

    manipulate_parser = subparsers.add_parser(
        "manipulate", help="Apply every configured manipulation to the dataset"
    )
    _add_shared_arguments(manipulate_parser)
    _add_task_filter(manipulate_parser)

    features_parser = subparsers.add_parser("features", help="Feature stage")
    features_commands = features_parser.add_subparsers(dest="action", required=True)
    features_extract = features_commands.add_parser(
        "extract", help="Write SPAM features of every task to CSV"
    )
    _add_shared_arguments(features_extract)
    _add_task_filter(features_extract)

    train_parser = subparsers.add_parser("train", help="Train the configured detectors")
    _add_shared_arguments(train_parser)
    _add_task_filter(train_parser)
    train_parser.add_argument(
        "--detector",
        action="append",
        default=None,
        help="Restrict to a detector id (repeatable)",
    )

    evaluate_parser = subparsers.add_parser("evaluate", help="Score detectors on the test devices")
    _add_shared_arguments(evaluate_parser)
    _add_task_filter(evaluate_parser)

    attack_parser = subparsers.add_parser("attack", help="Run the configured attack campaigns")
    _add_shared_arguments(attack_parser)
    _add_task_filter(attack_parser)

    report_parser = subparsers.add_parser("report", help="Rebuild CSV and Markdown reports")
    _add_shared_arguments(report_parser)

    run_parser = subparsers.add_parser("run", help="Run the whole pipeline in one process")
    _add_shared_arguments(run_parser)

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = (
        ExperimentConfig.from_toml(args.config) if args.config is not None else ExperimentConfig()
    )
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _workspace(args: argparse.Namespace, config: ExperimentConfig) -> Workspace:
    return Workspace(args.workspace if args.workspace is not None else config.output_dir)


def _selected_tasks(config: ExperimentConfig, wanted: Sequence[str] | None) -> list[ManipulationSpec]:
    if not wanted:
        return list(config.manipulations)
    known = {spec.task_id: spec for spec in config.manipulations}
    unknown = [task for task in wanted if task not in known]
    if unknown:
        raise ConfigError(f"unknown task ids: {', '.join(unknown)}")
    return [known[task] for task in wanted]


def _print_rows(rows: Sequence[MetricsRow]) -> None:
    for row in rows:
        print(
            f"{row.task_id}\t{row.detector_id}\t"
            f"FPR {row.fpr:.2f}\tTPR {row.tpr:.2f}\tACC {row.acc:.2f}"
        )


def _print_cells(cells: Sequence[TransferCell]) -> None:
    for cell in cells:
        print(
            f"{cell.task_id}\t{cell.target_id}->{cell.evaluator_id}\t"
            f"{cell.method}\tTPR {cell.tpr_under_attack:.2f}"
        )


def _run_dataset_build(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = build_dataset(config.dataset)
    path = workspace.save_dataset(records, config.dataset)
    print(f"{len(records)} patches -> {path}")


def _run_manipulate(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = workspace.load_dataset()
    for spec in _selected_tasks(config, args.task):
        path = workspace.save_task(build_task(records, spec))
        print(f"{spec.task_id} -> {path}")


def _run_features_extract(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = workspace.load_dataset()
    cfg = spam_config_for(config)
    for spec in _selected_tasks(config, args.task):
        task = workspace.load_task(spec.task_id, records)
        labelled = task.labelled(task.device_ids)
        rows = [
            (key, label, extract_spam(patch, cfg))
            for key, label, patch in zip(labelled.keys, labelled.labels, labelled.patches)
        ]
        path = workspace.features_path(spec.task_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_features_csv(path, rows, cfg)
        print(f"{spec.task_id}: {len(rows)} features -> {path}")


def _stored_features(
    workspace: Workspace, task_id: str, config: ExperimentConfig, keys: Sequence[str]
) -> dict[str, list[SpamFeature]]:
    """Feature rows from ``features extract`` per spam_linear detector whose config matches."""
    path = workspace.features_path(task_id)
    found: dict[str, list[SpamFeature]] = {}
    if not path.exists():
        return found
    for detector in config.detectors:
        if detector.variant != "spam_linear":
            continue
        try:
            rows = read_features_csv(path, detector.spam)
        except CounterForensicsError:
            continue
        by_key = {key: feature for key, _, feature in rows}
        if all(key in by_key for key in keys):
            found[detector.detector_id] = [by_key[key] for key in keys]
    return found


def _run_train(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = workspace.load_dataset()
    wanted = set(args.detector or [])
    unknown = wanted - {detector.detector_id for detector in config.detectors}
    if unknown:
        raise ConfigError(f"unknown detector ids: {', '.join(sorted(unknown))}")

    for spec in _selected_tasks(config, args.task):
        task = workspace.load_task(spec.task_id, records)
        train, _ = split_by_device(task, config.train_devices, config.seed)
        features = _stored_features(workspace, spec.task_id, config, train.keys)
        trained: dict[str, DetectorModel] = {}
        for detector in config.detectors:
            path = workspace.model_path(spec.task_id, detector.detector_id)
            if wanted and detector.detector_id not in wanted:
                if path.exists():
                    trained[detector.detector_id] = load_detector(path)
                continue
            seed = derive_seed(config.seed, "train", spec.task_id, detector.detector_id)
            model = train_detector(
                detector,
                train,
                trained,
                seed=seed,
                features=features.get(detector.detector_id),
            )
            trained[detector.detector_id] = model
            path.parent.mkdir(parents=True, exist_ok=True)
            save_detector(model, path)
            print(f"{spec.task_id}\t{detector.detector_id} -> {path}")


def _load_models(
    workspace: Workspace, task_id: str, config: ExperimentConfig
) -> dict[str, DetectorModel]:
    return {
        detector.detector_id: load_detector(
            workspace.model_path(task_id, detector.detector_id)
        )
        for detector in config.detectors
    }


def _run_evaluate(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = workspace.load_dataset()
    rows: list[MetricsRow] = []
    for spec in _selected_tasks(config, args.task):
        task = workspace.load_task(spec.task_id, records)
        _, test = split_by_device(task, config.train_devices, config.seed)
        for detector_id, model in _load_models(workspace, spec.task_id, config).items():
            rows.append(evaluate(model, test, task_id=spec.task_id, detector_id=detector_id))
    emit_report(
        rows, [], workspace.reports_dir, fingerprint=config.fingerprint(), seed=config.seed
    )
    _print_rows(rows)


def _run_attack(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    records = workspace.load_dataset()
    cells: list[TransferCell] = []
    for spec in _selected_tasks(config, args.task):
        task = workspace.load_task(spec.task_id, records)
        train, test = split_by_device(task, config.train_devices, config.seed)
        models = _load_models(workspace, spec.task_id, config)
        for campaign in config.campaigns:
            seed = derive_seed(config.seed, "attack", spec.task_id, campaign.campaign_id)
            seeded = seeded_campaign(campaign, seed)
            restorer = None
            if campaign.attack.method == "gan":
                restorer = train_restorer_for(seeded, models[campaign.target], train, seed=seed)
            outcome = transfer_matrix(
                models, seeded, test, task_id=spec.task_id, restorer=restorer
            )
            log_path = workspace.save_attacks(spec.task_id, campaign.campaign_id, outcome)
            _check_attack_log(workspace, spec.task_id, campaign.campaign_id, outcome.records)
            print(f"{spec.task_id}\t{campaign.campaign_id}: {len(outcome.records)} attacks -> {log_path}")
            cells.extend(outcome.cells)
    emit_report(
        [], cells, workspace.reports_dir, fingerprint=config.fingerprint(), seed=config.seed
    )
    _print_cells(cells)


def _check_attack_log(
    workspace: Workspace, task_id: str, campaign_id: str, records: Sequence[AttackRecord]
) -> None:
    stored = workspace.load_attack_log(task_id, campaign_id)
    if [record.to_dict() for record in stored] != [record.to_dict() for record in records]:
        raise IntegrityError(f"attack log for {task_id}/{campaign_id} did not round-trip")


def _run_report(args: argparse.Namespace, config: ExperimentConfig) -> None:
    workspace = _workspace(args, config)
    metrics_path = workspace.reports_dir / "metrics.csv"
    transfer_path = workspace.reports_dir / "transfer.csv"
    rows = read_metrics_csv(metrics_path) if metrics_path.exists() else []
    cells = read_transfer_csv(transfer_path) if transfer_path.exists() else []
    for path in emit_report(
        rows, cells, workspace.reports_dir, fingerprint=config.fingerprint(), seed=config.seed
    ):
        print(path)


def _run_run(args: argparse.Namespace, config: ExperimentConfig) -> None:
    result = run_experiment(config, workspace=_workspace(args, config))
    _print_rows(result.rows)
    _print_cells(result.cells)
    for path in result.report_paths:
        print(path)


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser(prog="counterforensics" if argv is not None else None)

    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        configure_verbose_logging(enabled=getattr(args, "debug", False))
        config = _load_config(args)

        if args.command == "dataset":
            _run_dataset_build(args, config)
        elif args.command == "manipulate":
            _run_manipulate(args, config)
        elif args.command == "features":
            _run_features_extract(args, config)
        elif args.command == "train":
            _run_train(args, config)
        elif args.command == "evaluate":
            _run_evaluate(args, config)
        elif args.command == "attack":
            _run_attack(args, config)
        elif args.command == "report":
            _run_report(args, config)
        elif args.command == "run":
            _run_run(args, config)
        else:
            parser.error(f"unknown command: {args.command}")

        return 0
    except _ParserExit as exc:
        stream = sys.stderr if exc.status else sys.stdout
        if exc.message:
            print(exc.message, file=stream, end="")
        return exc.status
    except KeyboardInterrupt:
        return 130
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (CounterForensicsError, OSError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 3

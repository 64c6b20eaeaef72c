from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any, Mapping


def _percent(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0


@dataclass(slots=True)
class MetricsRow:
    """Confusion counts of one detector on one task; rates are percentages."""

    task_id: str
    detector_id: str
    true_negatives: int
    false_positives: int
    true_positives: int
    false_negatives: int

    @property
    def negatives(self) -> int:
        return self.true_negatives + self.false_positives

    @property
    def positives(self) -> int:
        return self.true_positives + self.false_negatives

    @property
    def fpr(self) -> float:
        return _percent(self.false_positives, self.negatives)

    @property
    def tpr(self) -> float:
        return _percent(self.true_positives, self.positives)

    @property
    def acc(self) -> float:
        return _percent(
            self.true_positives + self.true_negatives, self.negatives + self.positives
        )

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload.update(
            fpr=round(self.fpr, 2), tpr=round(self.tpr, 2), acc=round(self.acc, 2)
        )
        return payload

    def to_json(self, *, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MetricsRow:
        return cls(
            task_id=str(data["task_id"]),
            detector_id=str(data["detector_id"]),
            true_negatives=int(data["true_negatives"]),
            false_positives=int(data["false_positives"]),
            true_positives=int(data["true_positives"]),
            false_negatives=int(data["false_negatives"]),
        )


@dataclass(slots=True)
class TransferCell:
    """TPR of ``evaluator_id`` on patches attacked against ``target_id``."""

    target_id: str
    evaluator_id: str
    task_id: str
    method: str
    attacked: int
    detected: int

    @property
    def tpr_under_attack(self) -> float:
        return _percent(self.detected, self.attacked)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["tpr_under_attack"] = round(self.tpr_under_attack, 2)
        return payload

    def to_json(self, *, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TransferCell:
        return cls(
            target_id=str(data["target_id"]),
            evaluator_id=str(data["evaluator_id"]),
            task_id=str(data["task_id"]),
            method=str(data["method"]),
            attacked=int(data["attacked"]),
            detected=int(data["detected"]),
        )

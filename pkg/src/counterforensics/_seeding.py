from __future__ import annotations

import hashlib
import json
from typing import Any

_SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, *labels: object) -> int:
    """Derive a stable non-negative 63-bit seed from a master seed and labels.

    The derivation depends only on the values (never on ``hash()`` or call order), so
    per-cell seeds stay identical across processes and parallel schedules.
    """
    payload = "\x1f".join([str(int(master))] + [str(label) for label in labels])
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & _SEED_MASK


def fingerprint_of(payload: Any) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()

"""Seed derivation and canonical JSON helpers."""

import hashlib
import json

import numpy as np


def child_seed(base: int, *tags: int) -> int:
    """Derive an independent 64-bit seed from a base seed and integer tags.

    Stable across runs and platforms (SeedSequence's mixing is fixed).
    """
    ss = np.random.SeedSequence([int(base) & (2**63 - 1), *[int(t) for t in tags]])
    return int(ss.generate_state(1, np.uint64)[0])


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, compact separators, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()

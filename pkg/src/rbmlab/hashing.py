"""Canonical digests of estimator and experiment configurations."""
from __future__ import annotations

import hashlib


def canonical_digest(mapping: dict) -> str:
    """Order-independent short hash of a flat key/value mapping."""
    parts = []
    for key in sorted(mapping):
        val = mapping[key]
        if isinstance(val, float):
            text = repr(val)
        elif isinstance(val, (list, tuple)):
            text = ",".join(repr(float(v)) if isinstance(v, float) else repr(v) for v in val)
        else:
            text = repr(val)
        parts.append(f"{key}={text}")
    blob = "\n".join(parts).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

"""Named, reproducible random substreams.

One master seed per run is split into independent streams keyed by purpose
("init", "dropout/gnn", "pairs", ...). The derivation is a plain SHA-256 of
"<purpose>:<seed>" truncated to 64 bits, so it can be reproduced in any
language without numpy's SeedSequence internals.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{purpose}:{master_seed}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(master_seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, purpose))

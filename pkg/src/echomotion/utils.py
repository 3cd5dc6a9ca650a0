"""Seeding and determinism helpers.

With ECM_DETERMINISTIC=1 all math runs single-threaded with torch's
deterministic algorithms enabled, so repeated runs with the same seed
produce bit-identical artifacts.
"""

import hashlib
import os
import random

import numpy as np
import torch

DETERMINISM_ENV = "ECM_DETERMINISTIC"


def deterministic_mode_requested() -> bool:
    return os.environ.get(DETERMINISM_ENV, "") == "1"


def configure_determinism() -> bool:
    """Apply the single-threaded deterministic math mode if requested.

    Returns True when the mode is active. Safe to call more than once.
    """
    if not deterministic_mode_requested():
        return False
    torch.set_num_threads(1)
    try:
        if torch.get_num_interop_threads() != 1:
            torch.set_num_interop_threads(1)
    except RuntimeError:
        # interop pool already started; intra-op threading above is what matters
        pass
    torch.use_deterministic_algorithms(True)
    return True


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()

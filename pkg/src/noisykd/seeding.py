"""Named, independent RNG streams derived from one master seed."""

import hashlib

import numpy as np


def derive_seed(master, name):
    digest = hashlib.sha256(f"{int(master)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master, name):
    return np.random.default_rng(derive_seed(master, name))

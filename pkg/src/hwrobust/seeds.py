"""Labelled seed derivation: every stage draws from its own substream of the root seed."""
import zlib

import numpy as np

STAGES = ("train", "init", "map", "variation", "attack", "injection", "data")


def derive(root, label, *extra):
    """Integer seed for ``label`` under ``root``; changing one label never shifts another."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(label.encode()), *map(int, extra)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng(root, label, *extra):
    return np.random.default_rng(derive(root, label, *extra))

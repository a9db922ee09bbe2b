"""Deterministic random streams.

All randomness in the package flows from Philox4x64-10, a counter-based
generator keyed by a (seed, stream) pair. The same pair yields the same
sequence on every platform and every run, which keeps scene synthesis,
RANSAC, augmentation, and training byte-reproducible end to end.

Stream ids below are fixed constants; per-item substreams (for example one
RANSAC stream per cluster) are derived with :func:`substream`.
"""

import numpy as np

STREAM_SCENE = 0
STREAM_SCENE_IMAGE = 1
STREAM_DATASET = 2
STREAM_INIT_CORRECTOR = 3
STREAM_INIT_HEAD = 4
STREAM_TRAIN_NAIVE = 5
STREAM_TRAIN_SLC = 6
STREAM_TRAIN_STUDENT = 7
STREAM_AUGMENT = 8

# Base for families of substreams; indices are added to the base.
RANSAC_BASE = 1 << 20
DATASET_BASE = 1 << 24

_MASK64 = (1 << 64) - 1


def stream(seed, stream_id):
    """Generator for the given (seed, stream) pair."""
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def substream(seed, base, index):
    """Generator for item ``index`` of a substream family."""
    return stream(seed, base + int(index))

"""
Utility Functions Module

Small helpers shared by the pipeline: deterministic random streams and the
conversions between milliseconds and frame indices used by the evaluation
protocol.

Features:
- Named, independent RNG streams derived from one run seed
- Millisecond <-> frame conversion at a given sampling rate

Dependencies:
- numpy: For numpy.random.Generator / SeedSequence
"""

import zlib
from typing import Iterable, List

import numpy as np


def make_rng(seed: int, *stream: str) -> np.random.Generator:
    """
    Create a Generator for one named stream of a run.

    Every stream of a run derives from the single run seed, so one `--seed`
    governs all randomness while independent consumers (window sampling,
    initialization, masking, noise) never share a stream.

    Args:
        seed (int): Run seed
        *stream (str): Stream path, e.g. ("train", "init")

    Returns:
        np.random.Generator: PCG64 generator seeded from (seed, crc32(stream))

    Example:
        init_rng = make_rng(7, "train", "init")
        window_rng = make_rng(7, "train", "windows")
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(part.encode("utf-8")) for part in stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def ms_to_frame(ms: float, fps: float) -> int:
    """
    Convert a horizon in milliseconds to a 1-based frame count.

    Example:
        ms_to_frame(80, 25)   # 2
        ms_to_frame(400, 25)  # 10
    """
    return int(round(ms * fps / 1000.0))


def horizons_to_frames(horizons_ms: Iterable[float], fps: float) -> List[int]:
    """Map every horizon of a table to its 1-based frame count."""
    return [ms_to_frame(h, fps) for h in horizons_ms]


def frame_to_ms(frame: int, fps: float) -> float:
    """Inverse of ms_to_frame for display purposes."""
    return 1000.0 * frame / fps

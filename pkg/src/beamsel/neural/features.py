"""Input preparation for the two classifiers."""

from __future__ import annotations

import numpy as np


def downscale_mask(mask: np.ndarray, size: int = 32) -> np.ndarray:
    """Max-pool a binary image into size x size blocks: any 1 in a block -> 1.

    Block boundaries are floor(i * dim / size), so non-divisible image sizes
    get near-uniform blocks deterministically.
    """
    rows, cols = mask.shape
    if rows < size or cols < size:
        raise ValueError(f"mask {mask.shape} smaller than target {size}x{size}")
    row_bounds = (np.arange(size) * rows) // size
    col_bounds = (np.arange(size) * cols) // size
    reduced = np.maximum.reduceat(mask, row_bounds, axis=0)
    reduced = np.maximum.reduceat(reduced, col_bounds, axis=1)
    return reduced.astype(np.float64)


def sequence_features(gps_history: np.ndarray, beam_history: np.ndarray,
                      standardizer, num_beams: int) -> np.ndarray:
    """Per-step triples (std lon, std lat, previous beam / num_beams)."""
    gps = standardizer.transform(np.asarray(gps_history, dtype=np.float64))
    prev = np.asarray(beam_history, dtype=np.float64)[:, None] / num_beams
    return np.hstack([gps, prev])

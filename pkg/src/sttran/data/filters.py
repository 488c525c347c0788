"""Ingestion-time detection filters."""

from __future__ import annotations

import logging

import numpy as np

from .types import FrameDetections

log = logging.getLogger(__name__)

FILTERED_MODES = ("sgcls", "sgdet")


def small_box_mask(boxes: np.ndarray, min_short_edge: float = 16.0) -> np.ndarray:
    """True for boxes whose shorter edge is strictly larger than ``min_short_edge``."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.minimum(b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]) > min_short_edge


def filter_small_boxes(det: FrameDetections, min_short_edge: float = 16.0, mode: str = "sgdet") -> FrameDetections:
    """Drop boxes with short edge <= ``min_short_edge``; a no-op outside SGCLS/SGDET."""
    if mode not in FILTERED_MODES:
        return det
    keep = np.flatnonzero(small_box_mask(det.boxes, min_short_edge))
    if len(keep) < det.n_objects:
        log.debug("dropped %d small boxes", det.n_objects - len(keep))
    return det.subset(keep)

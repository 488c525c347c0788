"""Frame-order perturbations of training videos (shuffle or reverse)."""

from __future__ import annotations

import copy
import math

import numpy as np

from .types import FrameRecord, VideoSample

PERTURB_MODES = ("shuffle", "reverse")


def choose_subset(n_videos: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices of a seeded random floor(fraction * n) subset."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    k = math.floor(fraction * n_videos + 1e-9)
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(n_videos)[:k])


def reorder(video: VideoSample, order: np.ndarray) -> VideoSample:
    """New video whose i-th frame is the original ``order[i]``, renumbered from 1.

    Annotations and features travel with their frame.
    """
    frames = []
    for new, old in enumerate(order, 1):
        src = video.frames[int(old)]
        gt = copy.copy(src.gt)
        gt.frame = new
        frames.append(FrameRecord(gt, src.detections))
    return VideoSample(video.video_id, frames)


def perturbation_orders(frame_counts: list[int], fraction: float, mode: str, seed: int) -> dict[int, np.ndarray]:
    """Video index -> new frame order for the seeded subset of videos."""
    if mode not in PERTURB_MODES:
        raise ValueError(f"mode must be one of {PERTURB_MODES}")
    chosen = choose_subset(len(frame_counts), fraction, seed)
    rng = np.random.default_rng([seed, 1])
    orders = {}
    for i in chosen:
        n = frame_counts[i]
        orders[int(i)] = np.arange(n)[::-1] if mode == "reverse" else rng.permutation(n)
    return orders


def apply_orders(videos: list[VideoSample], orders: dict[int, np.ndarray]) -> list[VideoSample]:
    return [reorder(v, orders[i]) if i in orders else v for i, v in enumerate(videos)]


def perturb_videos(videos: list[VideoSample], fraction: float, mode: str, seed: int) -> tuple[list[VideoSample], np.ndarray]:
    """Shuffle or reverse the frame order of a seeded subset of videos.

    Returns the new list and the sorted indices of the perturbed videos.
    """
    orders = perturbation_orders([v.n_frames for v in videos], fraction, mode, seed)
    return apply_orders(videos, orders), np.array(sorted(orders), dtype=np.int64)

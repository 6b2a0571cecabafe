"""Image-quality metrics and the median-split quality label."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dicom import PixelSlab
from .errors import DegenerateDistribution, EmptyImage

HIST_BINS = 256


@dataclass(frozen=True)
class QualityMetrics:
    entropy_power: float
    spectral_flatness: float


@dataclass(frozen=True)
class QualityLabel:
    score: float
    label: int  # 1 = good


def _as_image(pixels) -> np.ndarray:
    if isinstance(pixels, PixelSlab):
        img = pixels.image
    else:
        img = np.asarray(pixels)
    if img.size == 0:
        raise EmptyImage("no samples")
    return img.astype(np.float64)


def entropy_power(pixels) -> float:
    """(1/2πe)·exp(2h), h = histogram entropy in nats plus ln(bin width)."""
    values = _as_image(pixels).ravel()
    lo, hi = values.min(), values.max()
    if hi == lo:
        return 0.0
    counts, _ = np.histogram(values, bins=HIST_BINS, range=(lo, hi))
    p = counts[counts > 0] / values.size
    h = -np.sum(p * np.log(p)) + math.log((hi - lo) / HIST_BINS)
    return float(math.exp(2.0 * h) / (2.0 * math.pi * math.e))


def spectral_flatness(pixels) -> float:
    """Wiener entropy of the 2-D power spectrum with the DC bin left out."""
    img = _as_image(pixels)
    if img.ndim != 2 or min(img.shape) < 2:
        raise EmptyImage(f"need at least 2x2 pixels, got {img.shape}")
    power = np.abs(np.fft.fft2(img)) ** 2
    total = power.sum()
    ac = np.delete(power.ravel(), 0)
    arith = ac.mean()
    if total == 0 or arith <= 1e-12 * total:
        return 0.0
    with np.errstate(divide="ignore"):
        geo = math.exp(np.mean(np.log(ac)))
    return float(min(geo / arith, 1.0))


def compute_metrics(pixels) -> QualityMetrics:
    return QualityMetrics(entropy_power(pixels), spectral_flatness(pixels))


def _minmax(column: np.ndarray, name: str) -> np.ndarray:
    lo, hi = column.min(), column.max()
    if hi == lo:
        raise DegenerateDistribution(f"{name} is constant across the cohort")
    return (column - lo) / (hi - lo)


def combine_scores(metrics: Sequence[QualityMetrics], weights=(0.5, 0.5)) -> np.ndarray:
    if len(metrics) < 2:
        raise DegenerateDistribution("need at least two images to normalize")
    ep = _minmax(np.array([m.entropy_power for m in metrics], float), "entropy_power")
    sf = _minmax(np.array([m.spectral_flatness for m in metrics], float), "spectral_flatness")
    w_ep, w_sf = weights
    return (w_ep * ep + w_sf * sf) / (w_ep + w_sf)


def median_split(scores) -> np.ndarray:
    """Class 1 (good) strictly below the median; ties at the median are bad."""
    scores = np.asarray(scores, dtype=float)
    return (scores < np.median(scores)).astype(int)


def combine_and_label(metrics: Sequence[QualityMetrics], weights=(0.5, 0.5)) -> list[QualityLabel]:
    scores = combine_scores(metrics, weights)
    return [QualityLabel(float(s), int(c)) for s, c in zip(scores, median_split(scores))]

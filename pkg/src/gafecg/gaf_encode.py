"""Gramian angular field encoding of fixed-length beats.

A beat is downsampled to 128 points by piecewise aggregate approximation,
rescaled to [-1, 1], mapped to polar angles phi = arccos(x), and expanded
into a 128x128 matrix: the summation field cos(phi_i + phi_j) or the
difference field sin(phi_i - phi_j). The matrix is quantized to uint8 for
storage as a grayscale image.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateBeat, InvalidInput
from .png_io import write_gray_png

IMAGE_SIZE = 128
GAF_KINDS = ("gasf", "gadf")
WORKERS_ENV = "GAF_ECG_THREADS"


def paa_downsample(x: np.ndarray, target: int = IMAGE_SIZE) -> np.ndarray:
    """Piecewise aggregate approximation: mean of each of ``target`` frames.

    Frame ``i`` covers samples ``[floor(i*n/target), floor((i+1)*n/target))``,
    so frame sizes differ by at most one and every sample is used once.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput(f"expected a 1-D series, got shape {x.shape}")
    n = len(x)
    if target < 1 or target > n:
        raise InvalidInput(f"target={target} not in [1, {n}]")
    bounds = (np.arange(target + 1) * n) // target
    sums = np.add.reduceat(x, bounds[:-1])
    return sums / np.diff(bounds)


def minmax_rescale(x: np.ndarray) -> np.ndarray:
    """Rescale to [-1, 1] with the endpoints mapped exactly to -1 and +1."""
    x = np.asarray(x, dtype=np.float64)
    lo = float(np.min(x))
    hi = float(np.max(x))
    if hi == lo:
        raise DegenerateBeat("constant series; min-max rescale undefined")
    scaled = ((x - lo) + (x - hi)) / (hi - lo)
    return np.clip(scaled, -1.0, 1.0)


def to_polar(x: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to polar angles arccos(x) in [0, pi]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < -1.0) or np.any(x > 1.0):
        raise InvalidInput("values outside [-1, 1]; rescale first")
    return np.arccos(x)


def gasf(angles: np.ndarray) -> np.ndarray:
    """Summation field cos(phi_i + phi_j); symmetric by construction."""
    phi = np.asarray(angles, dtype=np.float64)
    return np.cos(phi[:, None] + phi[None, :])


def gadf(angles: np.ndarray) -> np.ndarray:
    """Difference field sin(phi_i - phi_j); zero diagonal, antisymmetric."""
    phi = np.asarray(angles, dtype=np.float64)
    return np.sin(phi[:, None] - phi[None, :])


def quantize(matrix: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to uint8 with round-half-up: -1 -> 0, 0 -> 128, 1 -> 255."""
    g = np.asarray(matrix, dtype=np.float64)
    if np.any(g < -1.0 - 1e-12) or np.any(g > 1.0 + 1e-12):
        raise InvalidInput("matrix entries outside [-1, 1]")
    levels = np.floor((np.clip(g, -1.0, 1.0) + 1.0) / 2.0 * 255.0 + 0.5)
    return levels.astype(np.uint8)


@dataclass
class GafImage:
    """One encoded beat ready to store as a grayscale PNG."""

    pixels: np.ndarray  # (IMAGE_SIZE, IMAGE_SIZE) uint8
    kind: str  # "gasf" | "gadf"
    label: str  # "healthy" | "mi"
    record_id: str
    r_peak_index: int

    @property
    def file_name(self) -> str:
        safe_record = self.record_id.replace("/", "__")
        return f"{safe_record}_r{self.r_peak_index:07d}_{self.kind}.png"


def encode_series(samples: np.ndarray, kind: str) -> np.ndarray:
    """Encode one series into a quantized IMAGE_SIZE x IMAGE_SIZE uint8 field."""
    if kind not in GAF_KINDS:
        raise InvalidInput(f"kind must be one of {GAF_KINDS}, got {kind!r}")
    angles = to_polar(minmax_rescale(paa_downsample(samples, IMAGE_SIZE)))
    field = gasf(angles) if kind == "gasf" else gadf(angles)
    return quantize(field)


def encode_beat(beat, kind: str) -> GafImage:
    """Encode a segmented beat (``gafecg.qrs_segment.Beat``)."""
    return GafImage(
        pixels=encode_series(beat.samples, kind),
        kind=kind,
        label=beat.label,
        record_id=beat.source_record,
        r_peak_index=int(beat.r_peak_index),
    )


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError as exc:
            raise InvalidInput(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
        if n < 1:
            raise InvalidInput(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    return min(8, os.cpu_count() or 1)


def encode_beats(beats, kind: str, workers: int | None = None) -> list[GafImage]:
    """Encode many beats, preserving input order regardless of worker count."""
    if workers is None:
        workers = _worker_count()
    beats = list(beats)
    if workers <= 1 or len(beats) < 2:
        return [encode_beat(b, kind) for b in beats]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: encode_beat(b, kind), beats))


MANIFEST_FIELDS = ["path", "label", "record_id", "r_peak_index", "kind", "noise_variant"]


def write_images(images, out_dir: str | Path, noise_variant: str = "noisy") -> Path:
    """Write PNGs plus a ``manifest.csv`` index; returns the manifest path.

    ``noise_variant`` records whether the beats came from raw ("noisy") or
    denoised ("clean") signals. Manifest rows are sorted by file name so
    output is independent of encode order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for image in images:
        write_gray_png(out_dir / image.file_name, image.pixels)
        rows.append(
            {
                "path": image.file_name,
                "label": image.label,
                "record_id": image.record_id,
                "r_peak_index": image.r_peak_index,
                "kind": image.kind,
                "noise_variant": noise_variant,
            }
        )
    rows.sort(key=lambda r: r["path"])
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return manifest

"""Synthetic ECG with known R-peak positions.

Beats are sums of Gaussian bumps (P, QRS complex, T wave) placed on an
exact beat grid, so detector accuracy can be measured in samples. Two
morphologies are provided: a plain "healthy" beat and an "mi" beat with a
deep Q wave, reduced R amplitude, an elevated ST segment and an inverted
T wave, mimicking inferior-infarction changes in lead II.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .wfdb_ingest import Label, write_record

# (amplitude mV, center offset from R in ms, width sigma in ms)
MORPHOLOGIES: dict[str, tuple[tuple[float, float, float], ...]] = {
    "healthy": (
        (0.15, -160.0, 25.0),  # P
        (-0.10, -25.0, 8.0),  # Q
        (1.00, 0.0, 10.0),  # R
        (-0.15, 28.0, 9.0),  # S
        (0.35, 220.0, 50.0),  # T
    ),
    "mi": (
        (0.12, -160.0, 25.0),  # P
        (-0.40, -30.0, 12.0),  # pathological Q
        (0.70, 0.0, 10.0),  # reduced R
        (-0.10, 28.0, 9.0),  # S
        (0.22, 110.0, 45.0),  # elevated ST
        (-0.25, 230.0, 50.0),  # inverted T
    ),
}


@dataclass
class SyntheticEcg:
    samples: np.ndarray
    r_indices: np.ndarray  # exact R-apex sample positions
    sampling_rate: float
    morphology: str


def synth_ecg(
    duration_s: float,
    bpm: float = 60.0,
    sampling_rate: float = 1000.0,
    morphology: str = "healthy",
    amplitude: float = 1.0,
    rr_jitter: float = 0.0,
    seed: int | None = None,
) -> SyntheticEcg:
    """Generate ``duration_s`` seconds of ECG at ``bpm`` beats per minute.

    ``rr_jitter`` scales multiplicative Gaussian jitter on each RR interval
    (0.05 means sigma of 5% of the interval). R positions land on exact
    sample indices.
    """
    if morphology not in MORPHOLOGIES:
        raise InvalidInput(f"unknown morphology {morphology!r}")
    if duration_s <= 0 or bpm <= 0:
        raise InvalidInput("duration and bpm must be positive")
    n = int(round(duration_s * sampling_rate))
    rng = np.random.default_rng(seed)
    rr = sampling_rate * 60.0 / bpm
    # Keep the first and last beat fully inside the record.
    first = 0.5 * sampling_rate
    limit = n - 0.45 * sampling_rate
    r_positions = []
    pos = first
    while pos < limit:
        r_positions.append(int(round(pos)))
        step = rr
        if rr_jitter > 0:
            step = rr * (1.0 + rr_jitter * float(rng.standard_normal()))
            step = max(step, 0.3 * sampling_rate)  # floor at 200 bpm
        pos += step
    r_indices = np.array(r_positions, dtype=np.int64)
    t = np.arange(n, dtype=np.float64)
    x = np.zeros(n, dtype=np.float64)
    for amp, center_ms, sigma_ms in MORPHOLOGIES[morphology]:
        center = center_ms * sampling_rate / 1000.0
        sigma = sigma_ms * sampling_rate / 1000.0
        for r in r_indices:
            mu = r + center
            lo = max(0, int(mu - 5 * sigma))
            hi = min(n, int(mu + 5 * sigma) + 1)
            if lo < hi:
                seg = t[lo:hi]
                x[lo:hi] += amp * np.exp(-0.5 * ((seg - mu) / sigma) ** 2)
    return SyntheticEcg(
        samples=amplitude * x,
        r_indices=r_indices,
        sampling_rate=sampling_rate,
        morphology=morphology,
    )


def add_white_noise(samples: np.ndarray, snr_db: float, seed: int = 0) -> np.ndarray:
    """Add Gaussian noise at the given signal-to-noise ratio in dB."""
    x = np.asarray(samples, dtype=np.float64)
    power = float(np.mean(x**2))
    if power == 0.0:
        raise InvalidInput("signal power is zero; SNR undefined")
    noise_std = np.sqrt(power / (10.0 ** (snr_db / 10.0)))
    rng = np.random.default_rng(seed)
    return x + noise_std * rng.standard_normal(len(x))


def add_drift(
    samples: np.ndarray,
    amplitude: float,
    freq_hz: float = 0.3,
    sampling_rate: float = 1000.0,
    phase: float = 0.0,
) -> np.ndarray:
    """Add sinusoidal baseline wander."""
    x = np.asarray(samples, dtype=np.float64)
    t = np.arange(len(x), dtype=np.float64) / sampling_rate
    return x + amplitude * np.sin(2.0 * np.pi * freq_hz * t + phase)


def write_toy_corpus(
    root: str | Path,
    n_healthy: int = 3,
    n_mi: int = 3,
    duration_s: float = 30.0,
    seed: int = 0,
    snr_db: float = 24.0,
    drift_mv: float = 0.15,
) -> dict:
    """Write a small dataset tree mimicking the real archive layout.

    Each subject gets one record under ``patientNNN/s0001`` with class
    comments in the header. Returns ground truth (record ids, labels and
    R-peak positions) and writes it to ``truth.json`` in the tree root.
    """
    root = Path(root)
    truth: dict[str, dict] = {}
    index = 0
    for label, count in ((Label.HEALTHY, n_healthy), (Label.MI, n_mi)):
        for k in range(count):
            index += 1
            rng = np.random.default_rng(seed + index)
            bpm = float(rng.uniform(58.0, 92.0))
            morphology = "healthy" if label is Label.HEALTHY else "mi"
            ecg = synth_ecg(
                duration_s,
                bpm=bpm,
                morphology=morphology,
                rr_jitter=0.03,
                seed=seed + 1000 + index,
            )
            noisy = add_white_noise(ecg.samples, snr_db, seed=seed + 2000 + index)
            noisy = add_drift(
                noisy,
                drift_mv,
                freq_hz=float(rng.uniform(0.2, 0.4)),
                phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            )
            patient = f"patient{index:03d}"
            if label is Label.MI:
                diagnosis = [
                    " Reason for admission: Myocardial infarction",
                    " Acute infarction (localization): inferior",
                ]
            else:
                diagnosis = [" Reason for admission: Healthy control"]
            write_record(
                root / patient,
                "s0001",
                noisy,
                sampling_rate=ecg.sampling_rate,
                lead_name="ii",
                comments=[" age: 55", " sex: n/a"] + diagnosis,
            )
            record_id = f"{patient}/s0001"
            truth[record_id] = {
                "label": label.value,
                "r_indices": ecg.r_indices.tolist(),
                "bpm": bpm,
            }
    (root / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True))
    return truth

"""Synthetic labeled test set for the model-verification loop.

Each file is a fixed-length noise signal with zero or more planted
high-energy band-pattern events, so ground truth exists by construction.
Signals are stored as encoded AudioChunk structs (`<id>.sig`) next to a
labels CSV (file, event_count, event_positions).
"""
from __future__ import annotations

import csv
import os
import random
from dataclasses import dataclass, field

import numpy as np

from ..wire import WInt, WList, WString, WStruct, decode, encode, float_list
from .models import EVENT_TONE_AMPLITUDE, NOISE_SIGMA, event_tone_freqs


@dataclass
class DatasetSpec:
    n_files: int = 278
    total_events: int = 281
    sample_rate_hz: int = 8000
    duration_s: int = 6
    seed: int = 1337
    max_events_per_file: int = 6
    event_len_s: float = 0.3
    silent_lead_files: int = 6  # files whose first second is silence
    bands: int = 32
    f_min: float = 50.0


@dataclass
class LabelRow:
    file_id: str
    event_count: int
    positions: list[int] = field(default_factory=list)  # sample index of event centers


def _event_wave(spec: DatasetSpec) -> np.ndarray:
    length = int(spec.event_len_s * spec.sample_rate_hz)
    t = np.arange(length) / spec.sample_rate_hz
    wave = np.zeros(length)
    freqs = event_tone_freqs(spec.bands, spec.sample_rate_hz, spec.f_min)
    for freq in freqs:
        wave += np.sin(2.0 * np.pi * freq * t)
    envelope = np.hanning(length)
    return wave * envelope * (EVENT_TONE_AMPLITUDE / len(freqs))


def _assign_event_counts(spec: DatasetSpec, rng: random.Random) -> list[int]:
    counts = [0] * spec.n_files
    placed = 0
    while placed < spec.total_events:
        index = rng.randrange(spec.n_files)
        if counts[index] < spec.max_events_per_file:
            counts[index] += 1
            placed += 1
    return counts


def generate_dataset(directory: str, spec: DatasetSpec | None = None) -> list[LabelRow]:
    """Write signal files and labels.csv; returns the label rows."""
    spec = spec or DatasetSpec()
    os.makedirs(directory, exist_ok=True)
    rng = random.Random(spec.seed)
    counts = _assign_event_counts(spec, rng)
    event = _event_wave(spec)
    labels: list[LabelRow] = []
    n_samples = spec.duration_s * spec.sample_rate_hz
    slots = spec.duration_s  # one-second slots
    for file_index, event_count in enumerate(counts):
        file_id = f"sample_{file_index:04d}"
        noise_rng = np.random.default_rng((spec.seed, file_index))
        signal = noise_rng.normal(0.0, NOISE_SIGMA, n_samples)
        silent_lead = file_index < spec.silent_lead_files
        if silent_lead:
            signal[: spec.sample_rate_hz] = 0.0
        available = list(range(1, slots) if silent_lead else range(slots))
        chosen = sorted(rng.sample(available, min(event_count, len(available))))
        positions = []
        for slot in chosen:
            # keep the whole event inside its slot
            center_frac = 0.35 + 0.3 * rng.random()
            center = int((slot + center_frac) * spec.sample_rate_hz)
            start = center - len(event) // 2
            signal[start:start + len(event)] += event
            positions.append(center)
        path = os.path.join(directory, f"{file_id}.sig")
        payload = WStruct("AudioChunk", {
            "id": WString(file_id),
            "sample_rate_hz": WInt(spec.sample_rate_hz),
            "samples": float_list(signal.tolist()),
        })
        with open(path, "wb") as fh:
            fh.write(encode(payload))
        labels.append(LabelRow(file_id, len(positions), positions))
    write_labels(os.path.join(directory, "labels.csv"), labels)
    return labels


def write_labels(path: str, labels: list[LabelRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "event_count", "event_positions"])
        for row in labels:
            writer.writerow([row.file_id, row.event_count,
                             ";".join(str(p) for p in row.positions)])


def load_labels(path: str) -> list[LabelRow]:
    labels = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            positions = [int(p) for p in row["event_positions"].split(";") if p]
            labels.append(LabelRow(row["file"], int(row["event_count"]), positions))
    return labels


def read_signal_file(path: str) -> WStruct:
    with open(path, "rb") as fh:
        value, _ = decode(fh.read())
    return value


def signal_files(directory: str) -> list[str]:
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.endswith(".sig")
    )

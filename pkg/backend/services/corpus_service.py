"""
Synthetic speaker corpus.

Each subject has its own waveform family; samples of one subject differ in
phase and amplitude, and held-out copies add seeded uniform noise. Files are
written as `<root>/<subject>/<name>.csv` in the CSV sample format.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np

from services.pipeline_stages import RATE_HEADER
from utils.errors import PipelineError

logger = logging.getLogger(__name__)

SUBJECTS = (1, 2, 3, 4)
SAMPLE_LENGTH = 256
SAMPLE_RATE = 8000
HELD_OUT_NOISE = 0.05


@dataclass(frozen=True)
class CorpusEntry:
    subject_id: int
    name: str
    path: str

    @property
    def label(self) -> str:
        return f"{self.subject_id}/{self.name}"


def waveform(subject_id: int, index: int, length: int = SAMPLE_LENGTH) -> np.ndarray:
    t = np.arange(length, dtype=np.float64) / length
    phase = 0.1 + 0.37 * index
    amplitude = 0.8 + 0.05 * index
    if subject_id == 1:
        shape = np.sin(2 * np.pi * 3 * t + phase)
    elif subject_id == 2:
        shape = np.exp(-4 * t) * np.sin(2 * np.pi * 3 * t + phase)
    elif subject_id == 3:
        shape = np.sign(np.sin(2 * np.pi * 12 * t + phase))
    elif subject_id == 4:
        cycle = np.mod(24 * t + phase / (2 * np.pi), 1.0)
        shape = 2 * np.abs(2 * cycle - 1) - 1
    else:
        raise PipelineError(f"no waveform family for subject {subject_id}")
    return amplitude * shape


def write_csv_sample(path: str, values, rate: int = SAMPLE_RATE) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{RATE_HEADER}{rate}\n")
        for value in values:
            f.write(f"{float(value)!r}\n")


def generate_corpus(root: str, per_subject: int = 4, noise: float = 0.0, seed: int = 0,
                    prefix: str = "sample", subjects=SUBJECTS) -> list[CorpusEntry]:
    """Write the corpus; with noise > 0 every value gets uniform noise in [-noise, noise]"""
    rng = np.random.default_rng(seed)
    entries = []
    for subject_id in subjects:
        for index in range(per_subject):
            values = waveform(subject_id, index)
            if noise > 0:
                values = values + rng.uniform(-noise, noise, size=values.shape)
            name = f"{prefix}_{index:02d}"
            path = os.path.join(root, str(subject_id), f"{name}.csv")
            write_csv_sample(path, values)
            entries.append(CorpusEntry(subject_id, name, path))
    logger.info(f"Generated {len(entries)} samples under {root} (noise={noise}, seed={seed})")
    return entries


def list_corpus(root: str) -> list[CorpusEntry]:
    """Corpus entries ordered by (subject, name)"""
    if not os.path.isdir(root):
        raise PipelineError(f"corpus directory {root} does not exist")
    entries = []
    for subject_dir in os.listdir(root):
        full = os.path.join(root, subject_dir)
        if not os.path.isdir(full):
            continue
        try:
            subject_id = int(subject_dir)
        except ValueError:
            raise PipelineError(f"corpus subdirectory '{subject_dir}' is not a subject id")
        for file_name in os.listdir(full):
            stem, ext = os.path.splitext(file_name)
            if ext in (".csv", ".raw"):
                entries.append(CorpusEntry(subject_id, stem, os.path.join(full, file_name)))
    if not entries:
        raise PipelineError(f"corpus directory {root} holds no samples")
    return sorted(entries, key=lambda e: (e.subject_id, e.name))

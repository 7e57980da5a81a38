"""
The four recognition stages: sample loading, preprocessing, feature
extraction and training/classification.

Stage functions are pure. The `*_procedure` wrappers at the bottom take and
return canonical values so workers can run them from a procedure table.
"""

import logging
import math
import os

import numpy as np

from models.pipeline import (
    SAMPLE_FORMATS,
    Centroid,
    Configuration,
    FeatureVector,
    ResultSet,
    Sample,
    TrainingSet,
)
from services.procedures import ProcedureTable
from utils.errors import (
    AllSilence,
    EmptySample,
    EmptyTrainingSet,
    MethodMismatch,
    SampleFormatError,
    SampleTooShort,
)

logger = logging.getLogger(__name__)

SILENCE_THRESHOLD = 0.01
BAND_COUNT = 4
RATE_HEADER = "rate="
RATE_SIDECAR_SUFFIX = ".rate"


# ------------------------------------------------------------------ loading

def _load_csv(path: str) -> Sample:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise EmptySample(f"{path} is empty")
    header = lines[0]
    if not header.startswith(RATE_HEADER):
        raise SampleFormatError(f"{path}: first line must be '{RATE_HEADER}<n>'")
    try:
        rate = int(header[len(RATE_HEADER):])
        values = tuple(float(line) for line in lines[1:])
    except ValueError as e:
        raise SampleFormatError(f"{path}: {e}")
    if not values:
        raise EmptySample(f"{path} holds no samples")
    if rate <= 0:
        raise SampleFormatError(f"{path}: rate must be positive")
    return Sample(values, rate, None, path)


def _load_raw(path: str) -> Sample:
    sidecar = path + RATE_SIDECAR_SUFFIX
    try:
        with open(sidecar, "r", encoding="utf-8") as f:
            rate = int(f.read().strip())
    except (OSError, ValueError) as e:
        raise SampleFormatError(f"{path}: unreadable rate sidecar: {e}")
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        raise EmptySample(f"{path} is empty")
    if len(data) % 8:
        raise SampleFormatError(f"{path}: length {len(data)} is not a multiple of 8")
    if rate <= 0:
        raise SampleFormatError(f"{path}: rate must be positive")
    values = np.frombuffer(data, dtype="<f8")
    return Sample(tuple(float(x) for x in values), rate, None, path)


def load_sample(path: str, sample_format: int) -> Sample:
    if sample_format not in SAMPLE_FORMATS:
        raise SampleFormatError(f"unknown sample format {sample_format}")
    if not os.path.isfile(path):
        raise SampleFormatError(f"{path} does not exist")
    if sample_format == 1:
        return _load_csv(path)
    return _load_raw(path)


def write_raw_sample(path: str, samples, rate: int) -> None:
    """Write the raw little-endian float64 format with its rate sidecar"""
    np.asarray(samples, dtype="<f8").tofile(path)
    with open(path + RATE_SIDECAR_SUFFIX, "w", encoding="utf-8") as f:
        f.write(f"{rate}\n")


# ------------------------------------------------------------ preprocessing

def _normalize(values: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(values)))
    if peak == 0.0:
        return values
    return values / peak


def preprocess(sample: Sample, cfg: Configuration) -> Sample:
    values = _normalize(np.asarray(sample.samples, dtype=np.float64))
    if cfg.preprocessing_method == 2:
        loud = np.flatnonzero(np.abs(values) >= SILENCE_THRESHOLD)
        if loud.size == 0:
            raise AllSilence(f"every value of {sample.source_path or 'the sample'} is below {SILENCE_THRESHOLD}")
        values = values[loud[0]:loud[-1] + 1]
    return sample.replace_samples(values)


# -------------------------------------------------------- feature extraction

def _zero_crossing_rate(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    negative = values < 0
    crossings = int(np.count_nonzero(negative[1:] != negative[:-1]))
    return crossings / (len(values) - 1)


def extract_features(sample: Sample, cfg: Configuration) -> FeatureVector:
    method = cfg.feature_extraction_method
    values = np.asarray(sample.samples, dtype=np.float64)
    if method == 2 and len(values) < 2 * BAND_COUNT:
        raise SampleTooShort(f"band energies need at least {2 * BAND_COUNT} values, got {len(values)}")
    n = len(values)
    squares = values * values
    features = [
        math.fsum(values) / n,
        math.sqrt(math.fsum(squares) / n),
        _zero_crossing_rate(values),
        float(np.min(values)),
        float(np.max(values)),
    ]
    if method == 2:
        for band in np.array_split(squares, BAND_COUNT):
            features.append(math.fsum(band) / len(band))
    return FeatureVector(tuple(features), method)


# -------------------------------------------------- training / classification

def train(vector: FeatureVector, subject_id: int, training_set: TrainingSet) -> TrainingSet:
    """Returns a new training set; the input is left untouched"""
    if not training_set.empty and training_set.method_id != vector.method_id:
        raise MethodMismatch(f"training set uses method {training_set.method_id}, vector uses {vector.method_id}")
    centroids = dict(training_set.centroids)
    existing = centroids.get(subject_id)
    centroids[subject_id] = existing.add(vector.values) if existing else Centroid.of(vector.values)
    return TrainingSet(vector.method_id, centroids)


def _distance(method: int, left: tuple[float, ...], right: tuple[float, ...]) -> float:
    diff = np.abs(np.asarray(left) - np.asarray(right))
    if method == 2:
        return float(np.max(diff)) if diff.size else 0.0
    return math.sqrt(math.fsum(diff * diff))


def classify(vector: FeatureVector, training_set: TrainingSet, cfg: Configuration) -> ResultSet:
    if training_set.empty:
        raise EmptyTrainingSet("nothing has been trained yet")
    if training_set.method_id != vector.method_id:
        raise MethodMismatch(f"training set uses method {training_set.method_id}, vector uses {vector.method_id}")
    distances = [
        (subject, _distance(cfg.classification_method, vector.values, training_set.centroids[subject].mean()))
        for subject in training_set.subjects()
    ]
    ranked = tuple(sorted(distances, key=lambda item: (item[1], item[0])))
    return ResultSet(ranked, cfg.classification_method)


# ------------------------------------------------------ procedure wrappers

STAGE_PROCEDURES = ("load", "preprocess", "extract", "train", "classify")


def load_procedure(path: str, sample_format: int) -> dict:
    return load_sample(path, sample_format).to_value()


def preprocess_procedure(sample: dict, cfg: dict) -> dict:
    return preprocess(Sample.from_value(sample), Configuration(**cfg)).to_value()


def extract_procedure(sample: dict, cfg: dict) -> dict:
    return extract_features(Sample.from_value(sample), Configuration(**cfg)).to_value()


def train_procedure(vector: dict, subject_id: int, training_set: dict) -> dict:
    return train(FeatureVector.from_value(vector), subject_id, TrainingSet.from_value(training_set)).to_value()


def classify_procedure(vector: dict, training_set: dict, cfg: dict) -> dict:
    return classify(FeatureVector.from_value(vector), TrainingSet.from_value(training_set),
                    Configuration(**cfg)).to_value()


def register_stage_procedures(table: ProcedureTable) -> ProcedureTable:
    table.register("load", load_procedure)
    table.register("preprocess", preprocess_procedure)
    table.register("extract", extract_procedure)
    table.register("train", train_procedure)
    table.register("classify", classify_procedure)
    return table

"""
Pipeline data types: configuration, samples, feature vectors, training and
result sets.

Every type converts to and from a canonical value (plain dicts, lists and
floats) so it can travel as a procedural demand argument, be cached in a
warehouse, and be dumped by the storage manager without losing bits.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

from pydantic import BaseModel, ConfigDict, field_validator

from utils.errors import ConfigurationError

# Method-id registries. New algorithms are added here and in pipeline_stages.
PREPROCESSING_METHODS = {1: "normalize", 2: "normalize-silence-removal"}
FEATURE_METHODS = {1: "statistics", 2: "statistics-band-energies"}
FEATURE_LENGTHS = {1: 5, 2: 9}
CLASSIFICATION_METHODS = {1: "euclidean", 2: "chebyshev"}
SAMPLE_FORMATS = {1: "csv", 2: "raw-f64le"}

_REGISTRIES = {
    "preprocessing_method": PREPROCESSING_METHODS,
    "feature_extraction_method": FEATURE_METHODS,
    "classification_method": CLASSIFICATION_METHODS,
    "sample_format": SAMPLE_FORMATS,
}


class Configuration(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    preprocessing_method: int
    feature_extraction_method: int
    classification_method: int
    current_subject: int
    sample_format: int

    @field_validator("preprocessing_method", "feature_extraction_method",
                     "classification_method", "sample_format")
    @classmethod
    def _registered(cls, v: int, info):
        if v not in _REGISTRIES[info.field_name]:
            raise ValueError(f"unknown method id {v}")
        return v

    @classmethod
    def parse(cls, data: dict) -> "Configuration":
        """Validate a configuration mapping, naming the first offending field"""
        missing = [name for name in cls.model_fields if name not in data]
        if missing:
            raise ConfigurationError(missing[0], "field is required")
        for name, registry in _REGISTRIES.items():
            value = data[name]
            if not isinstance(value, int) or isinstance(value, bool) or value not in registry:
                raise ConfigurationError(name, f"unknown method id {value!r}")
        try:
            return cls(**data)
        except ValueError as e:
            raise ConfigurationError("configuration", str(e))

    @classmethod
    def default(cls) -> "Configuration":
        return cls(preprocessing_method=1, feature_extraction_method=2, classification_method=1,
                   current_subject=0, sample_format=1)

    def clone(self, **changes) -> "Configuration":
        """Prototype copy; changed fields are validated like fresh ones"""
        data = self.model_copy(deep=True).model_dump()
        data.update(changes)
        return Configuration.parse(data)

    def to_value(self) -> dict:
        return self.model_dump()


@dataclass(frozen=True)
class Sample:
    samples: tuple[float, ...]
    rate: int
    subject_id: int | None = None
    source_path: str | None = None

    def __post_init__(self):
        if not self.samples:
            raise ValueError("a sample holds at least one value")
        if self.rate <= 0:
            raise ValueError("sample rate must be positive")

    def to_value(self) -> dict:
        return {"samples": list(self.samples), "rate": self.rate,
                "subject": self.subject_id, "path": self.source_path}

    @classmethod
    def from_value(cls, value: dict) -> "Sample":
        return cls(tuple(float(x) for x in value["samples"]), int(value["rate"]),
                   value.get("subject"), value.get("path"))

    def replace_samples(self, samples) -> "Sample":
        return Sample(tuple(float(x) for x in samples), self.rate, self.subject_id, self.source_path)


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    method_id: int

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")
        expected = FEATURE_LENGTHS.get(self.method_id)
        if expected is not None and len(self.values) != expected:
            raise ValueError(f"method {self.method_id} produces {expected} features, got {len(self.values)}")

    def to_value(self) -> dict:
        return {"values": list(self.values), "method": self.method_id}

    @classmethod
    def from_value(cls, value: dict) -> "FeatureVector":
        return cls(tuple(float(x) for x in value["values"]), int(value["method"]))


@dataclass(frozen=True)
class Centroid:
    """
    Running feature total and sample count for one subject. The total is
    held as exact rationals, so it comes out the same whatever order the
    samples were trained in; the mean is rounded once, at classify time.
    """

    sum: tuple[Fraction, ...]
    count: int

    @classmethod
    def of(cls, values: tuple[float, ...]) -> "Centroid":
        return cls(tuple(Fraction(v) for v in values), 1)

    def add(self, values: tuple[float, ...]) -> "Centroid":
        if len(values) != len(self.sum):
            raise ValueError(f"expected {len(self.sum)} features, got {len(values)}")
        return Centroid(tuple(total + Fraction(v) for total, v in zip(self.sum, values)), self.count + 1)

    def mean(self) -> tuple[float, ...]:
        return tuple(float(total / self.count) for total in self.sum)

    def to_value(self) -> dict:
        # rationals travel as "n/d" text; 64-bit integers cannot hold them
        return {"sum": [str(total) for total in self.sum], "count": self.count}

    @classmethod
    def from_value(cls, value: dict) -> "Centroid":
        return cls(tuple(Fraction(total) for total in value["sum"]), int(value["count"]))


@dataclass(frozen=True)
class TrainingSet:
    method_id: int | None = None
    centroids: dict[int, Centroid] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.centroids

    def subjects(self) -> list[int]:
        return sorted(self.centroids)

    def to_value(self) -> dict:
        return {
            "method": self.method_id,
            "centroids": [
                {"subject": subject, **self.centroids[subject].to_value()}
                for subject in self.subjects()
            ],
        }

    @classmethod
    def from_value(cls, value: dict) -> "TrainingSet":
        centroids = {
            int(entry["subject"]): Centroid.from_value(entry)
            for entry in value["centroids"]
        }
        return cls(value["method"], centroids)


@dataclass(frozen=True)
class ResultSet:
    ranked: tuple[tuple[int, float], ...]
    method_id: int

    @property
    def top(self) -> int:
        return self.ranked[0][0]

    def to_value(self) -> dict:
        return {"ranked": [[subject, distance] for subject, distance in self.ranked],
                "method": self.method_id}

    @classmethod
    def from_value(cls, value: dict) -> "ResultSet":
        return cls(tuple((int(s), float(d)) for s, d in value["ranked"]), int(value["method"]))

import random

import pytest

from models.pipeline import Configuration, FeatureVector, Sample, TrainingSet
from services.pipeline_service import stage_table
from services.pipeline_stages import (
    classify,
    extract_features,
    load_sample,
    preprocess,
    train,
    write_raw_sample,
)
from utils.errors import (
    AllSilence,
    ConfigurationError,
    EmptySample,
    EmptyTrainingSet,
    MethodMismatch,
    SampleFormatError,
    SampleTooShort,
)

CFG = Configuration.default()
STATS = CFG.clone(feature_extraction_method=1)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv(tmp_path):
    sample = load_sample(_write(tmp_path / "a.csv", "rate=8000\n0.5\n-1.0\n"), 1)
    assert sample.samples == (0.5, -1.0)
    assert sample.rate == 8000


@pytest.mark.parametrize("text, error", [
    ("", EmptySample),
    ("rate=8000\n", EmptySample),
    ("0.5\n1.0\n", SampleFormatError),
    ("rate=8000\nabc\n", SampleFormatError),
    ("rate=0\n1.0\n", SampleFormatError),
])
def test_bad_csv_samples(tmp_path, text, error):
    with pytest.raises(error):
        load_sample(_write(tmp_path / "bad.csv", text), 1)


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(SampleFormatError):
        load_sample(str(tmp_path / "missing.csv"), 1)


def test_raw_format_round_trip(tmp_path):
    path = str(tmp_path / "a.raw")
    write_raw_sample(path, [0.25, -0.5, 1.0], 16000)
    sample = load_sample(path, 2)
    assert sample.samples == (0.25, -0.5, 1.0)
    assert sample.rate == 16000


def test_raw_length_must_be_whole_doubles(tmp_path):
    path = tmp_path / "a.raw"
    path.write_bytes(b"\x00" * 12)
    (tmp_path / "a.raw.rate").write_text("8000\n", encoding="utf-8")
    with pytest.raises(SampleFormatError):
        load_sample(str(path), 2)


def test_normalize_scales_to_unit_peak():
    assert preprocess(Sample((0.5, -2.0), 8000), CFG).samples == (0.25, -1.0)


def test_silence_removal_trims_both_ends():
    sample = Sample((0.0, 0.001, 0.5, 1.0, 0.002, 0.0), 8000)
    trimmed = preprocess(sample, CFG.clone(preprocessing_method=2))
    assert trimmed.samples == (0.5, 1.0)


@pytest.mark.parametrize("values", [(0.0, 0.0, 0.0), (0.0, 0.0)])
def test_all_silence(values):
    with pytest.raises(AllSilence):
        preprocess(Sample(values, 8000), CFG.clone(preprocessing_method=2))


def test_statistics_features():
    vector = extract_features(Sample((1.0, -1.0, 1.0, -1.0), 8000), STATS)
    assert vector.values == (0.0, 1.0, 1.0, -1.0, 1.0)
    assert vector.method_id == 1


def test_band_energies_need_enough_values():
    with pytest.raises(SampleTooShort):
        extract_features(Sample((1.0,) * 7, 8000), CFG)
    assert len(extract_features(Sample((1.0,) * 8, 8000), CFG).values) == 9


def test_training_order_does_not_matter():
    a, b, c = (FeatureVector((float(i),) * 5, 1) for i in (1, 2, 3))
    forward = train(c, 2, train(b, 1, train(a, 1, TrainingSet())))
    backward = train(a, 1, train(b, 1, train(c, 2, TrainingSet())))
    assert forward == backward
    assert forward.centroids[1].mean() == (1.5,) * 5


def test_shuffled_training_corpora_give_identical_centroids():
    # magnitudes chosen so plain float addition depends on the order
    rows = [(0.1, 1e16, 3.0, -2.5, 7.25), (0.2, 1.0, -1e16, 0.5, 1e-9), (0.3, -1e16, 1e16, 1e-3, -7.0),
            (1e-17, 2.0, 4.0, 8.0, 16.0), (5.5, 1.0, 1.0, -1.0, 0.1)]
    samples = [(FeatureVector(row, 1), 1 + index % 2) for index, row in enumerate(rows)]

    def trained(order):
        training = TrainingSet()
        for vector, subject in order:
            training = train(vector, subject, training)
        return training

    expected = trained(samples)
    generator = random.Random(3)
    for _ in range(12):
        shuffled = samples[:]
        generator.shuffle(shuffled)
        result = trained(shuffled)
        assert result == expected
        assert result.to_value() == expected.to_value()
    assert [c.count for c in expected.centroids.values()] == [3, 2]


def test_training_set_value_stays_the_same_size():
    training = TrainingSet()
    sizes = []
    for step in range(20):
        training = train(FeatureVector((float(step),) * 5, 1), 1, training)
        (entry,) = training.to_value()["centroids"]
        sizes.append(len(entry["sum"]))
    assert sizes == [5] * 20
    assert entry["count"] == 20
    assert TrainingSet.from_value(training.to_value()) == training
    assert training.centroids[1].mean() == (9.5,) * 5


def test_classification_ranks_nearest_first():
    training = train(FeatureVector((0.0,) * 5, 1), 1, TrainingSet())
    training = train(FeatureVector((10.0,) * 5, 1), 2, training)
    result = classify(FeatureVector((9.0,) * 5, 1), training, STATS)
    assert result.top == 2
    assert [subject for subject, _ in result.ranked] == [2, 1]


def test_chebyshev_distance():
    training = train(FeatureVector((0.0, 0.0, 0.0, 0.0, 0.0), 1), 1, TrainingSet())
    result = classify(FeatureVector((1.0, 3.0, 0.0, 0.0, 0.0), 1), training, STATS.clone(classification_method=2))
    assert result.ranked == ((1, 3.0),)


def test_classify_needs_training():
    with pytest.raises(EmptyTrainingSet):
        classify(FeatureVector((0.0,) * 5, 1), TrainingSet(), STATS)


def test_methods_must_agree():
    training = train(FeatureVector((0.0,) * 5, 1), 1, TrainingSet())
    with pytest.raises(MethodMismatch):
        train(FeatureVector((0.0,) * 9, 2), 1, training)
    with pytest.raises(MethodMismatch):
        classify(FeatureVector((0.0,) * 9, 2), training, CFG)


def test_configuration_names_the_offending_field():
    data = CFG.to_value()
    data.pop("classification_method")
    with pytest.raises(ConfigurationError) as excinfo:
        Configuration.parse(data)
    assert str(excinfo.value).startswith("classification_method")
    with pytest.raises(ConfigurationError) as excinfo:
        CFG.clone(feature_extraction_method=7)
    assert str(excinfo.value).startswith("feature_extraction_method")


def test_clone_leaves_the_prototype_alone():
    sample_cfg = CFG.clone(current_subject=3)
    assert sample_cfg.current_subject == 3
    assert CFG.current_subject == 0


def test_stage_failures_become_error_records(tmp_path):
    record = stage_table().invoke("load", (str(tmp_path / "missing.csv"), 1))
    assert record["error"] == "FormatError"

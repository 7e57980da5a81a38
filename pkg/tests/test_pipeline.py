import pytest

from config.settings import RuntimeSettings
from models.pipeline import Configuration
from models.tiers import TierStatus
from services.corpus_service import HELD_OUT_NOISE, generate_corpus, list_corpus
from services.pipeline_service import (
    load_training_set,
    run_pipeline_distributed,
    run_pipeline_local,
    save_training_set,
)
from services.runtime import boot_instance
from services.warehouse import CLASSIFICATION_STAGE

CFG = Configuration.default()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(str(root), per_subject=3)
    return list_corpus(str(root))


@pytest.fixture
def instance():
    booted = boot_instance(RuntimeSettings.for_simulation(3))
    yield booted
    booted.shutdown()


def test_corpus_listing_is_ordered(corpus):
    assert [e.label for e in corpus][:3] == ["1/sample_00", "1/sample_01", "1/sample_02"]
    assert len(corpus) == 12


def test_closed_set_accuracy_is_perfect(corpus):
    report = run_pipeline_local(corpus, corpus, CFG)
    assert report.accuracy == 1.0
    assert report.training_set.subjects() == [1, 2, 3, 4]
    # four stage calls per trained sample, four per classified one
    assert report.demands == 8 * len(corpus)


def test_held_out_noisy_samples_are_recognized(corpus, tmp_path):
    held_out = generate_corpus(str(tmp_path), per_subject=3, noise=HELD_OUT_NOISE, seed=5, prefix="held")
    trained = run_pipeline_local(corpus, [], CFG)
    report = run_pipeline_local([], held_out, CFG, training_set=trained.training_set)
    assert report.accuracy >= 0.75


def test_report_format(corpus):
    report = run_pipeline_local(corpus[:1], corpus[:1], CFG)
    lines = report.render().splitlines()
    assert lines[0] == "sample=1/sample_00 subject=1 phase=train trained"
    assert lines[1].startswith("sample=1/sample_00 subject=1 phase=classify predicted=1 ranking=1:")
    assert lines[-1] == "accuracy=1.0 demands=8"


def test_bad_sample_is_reported_and_skipped(corpus, tmp_path):
    broken = tmp_path / "9" / "broken.csv"
    broken.parent.mkdir()
    broken.write_text("no header\n", encoding="utf-8")
    entries = list_corpus(str(tmp_path)) + corpus[:4]
    report = run_pipeline_local(entries, [], CFG)
    (failed,) = [o for o in report.outcomes if o.error is not None]
    assert failed.label == "9/broken"
    assert failed.error == "FormatError"
    assert report.training_set.subjects() == [1, 2]


def test_distributed_run_matches_local_run(instance, corpus):
    local = run_pipeline_local(corpus, corpus, CFG)
    distributed = run_pipeline_distributed(instance, corpus, corpus, CFG)
    assert distributed.render() == local.render()
    assert distributed.training_set == local.training_set


def test_distributed_run_records_every_result(instance, corpus):
    report = run_pipeline_distributed(instance, corpus, corpus[:4], CFG)
    classification = instance.generator().classification
    assert classification.training_set == report.training_set
    assert sorted(classification.results) == sorted(e.label for e in corpus[:4])
    assert len(instance.log.events("txn_committed")) == len(corpus) + 4


def test_classification_stage_triggers_cache_sync(instance, corpus):
    run_pipeline_distributed(instance, corpus[:4], corpus[:2], CFG)
    stages = [e.get("stage") for e in instance.log.events("stage_entered")]
    assert stages == [CLASSIFICATION_STAGE]
    assert instance.log.events("caches_synced")


def test_replacement_generator_replays_the_log(instance, corpus):
    run_pipeline_distributed(instance, corpus, corpus[:4], CFG)
    old = instance.generator()
    instance.kill_tier(old.tier_id)
    instance.run_until(
        lambda: any(e.get("tier") == old.tier_id for e in instance.log.events("tier_healed")), max_steps=200)
    assert instance.gmt.tier(old.tier_id).status == TierStatus.DEALLOCATED
    replacement = instance.generator()
    assert replacement.tier_id != old.tier_id
    assert replacement.classification.results == old.classification.results
    assert replacement.classification.training_set == old.classification.training_set


def test_training_set_file_round_trip(corpus, tmp_path):
    trained = run_pipeline_local(corpus, [], CFG)
    path = str(tmp_path / "training.img")
    save_training_set(path, trained.training_set)
    assert load_training_set(path) == trained.training_set

"""
Recognition pipeline driver.

One program describes the whole run: for each sample a chain of stage
procedure calls (load, preprocess, extract, then train or classify), where
every call depends on the previous call's value. The same program runs
locally against a procedure table, or on a generator tier where each call
becomes a procedural demand served by the workers; both produce the same
report.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Generator

from models.demands import Context, is_error_record
from models.pipeline import Configuration, ResultSet, TrainingSet
from models.recovery import DumpMode
from services.corpus_service import CorpusEntry
from services.evaluator import LocalServices, ProcedureRequest, Waiting
from services.pipeline_stages import register_stage_procedures
from services.procedures import ProcedureTable
from services.storage_service import dump_state, read_image, restore_state, write_image
from services.warehouse import CLASSIFICATION_STAGE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SampleOutcome:
    label: str
    subject_id: int
    phase: str
    result: ResultSet | None = None
    error: str | None = None

    def render(self) -> str:
        head = f"sample={self.label} subject={self.subject_id} phase={self.phase}"
        if self.error is not None:
            return f"{head} error={self.error}"
        if self.result is None:
            return f"{head} trained"
        ranking = ",".join(f"{subject}:{distance!r}" for subject, distance in self.result.ranked)
        return f"{head} predicted={self.result.top} ranking={ranking}"


@dataclass
class PipelineReport:
    outcomes: list[SampleOutcome] = field(default_factory=list)
    demands: int = 0
    training_set: TrainingSet = field(default_factory=TrainingSet)

    def classified(self) -> list[SampleOutcome]:
        return [o for o in self.outcomes if o.phase == "classify"]

    @property
    def accuracy(self) -> float:
        attempted = self.classified()
        if not attempted:
            return 0.0
        correct = sum(1 for o in attempted if o.result is not None and o.result.top == o.subject_id)
        return correct / len(attempted)

    def render(self) -> str:
        lines = [o.render() for o in self.outcomes]
        lines.append(f"accuracy={self.accuracy!r} demands={self.demands}")
        return "\n".join(lines) + "\n"


class StageRecorder:
    """Receives training and classification results; the distributed run records them in the WAL"""

    def record_training(self, training_set: TrainingSet) -> TrainingSet:
        return training_set

    def record_result(self, label: str, result: ResultSet) -> ResultSet:
        return result


StageHook = Callable[[str, bool], None]


def pipeline_program(train_entries: list[CorpusEntry], classify_entries: list[CorpusEntry],
                     cfg: Configuration, training_set: TrainingSet | None = None,
                     recorder=None, on_stage: StageHook | None = None) -> Generator:
    """
    Generator yielding ProcedureRequests and receiving their values (or
    error records). Returns the PipelineReport.
    """
    recorder = recorder or StageRecorder()
    report = PipelineReport(training_set=training_set or TrainingSet())
    ctx = Context()

    def call(name: str, *args):
        report.demands += 1
        return (yield ProcedureRequest(name, args, ctx))

    def features(entry: CorpusEntry, sample_cfg: Configuration):
        cfg_value = sample_cfg.to_value()
        value = yield from call("load", entry.path, sample_cfg.sample_format)
        if is_error_record(value):
            return value
        value = yield from call("preprocess", value, cfg_value)
        if is_error_record(value):
            return value
        return (yield from call("extract", value, cfg_value))

    for entry in train_entries:
        sample_cfg = cfg.clone(current_subject=entry.subject_id)
        vector = yield from features(entry, sample_cfg)
        if not is_error_record(vector):
            vector = yield from call("train", vector, sample_cfg.current_subject,
                                     report.training_set.to_value())
        if is_error_record(vector):
            report.outcomes.append(SampleOutcome(entry.label, entry.subject_id, "train", error=vector["error"]))
            continue
        report.training_set = recorder.record_training(TrainingSet.from_value(vector))
        report.outcomes.append(SampleOutcome(entry.label, entry.subject_id, "train"))

    if classify_entries and on_stage:
        on_stage(CLASSIFICATION_STAGE, True)
    for entry in classify_entries:
        vector = yield from features(entry, cfg)
        if not is_error_record(vector):
            vector = yield from call("classify", vector, report.training_set.to_value(), cfg.to_value())
        if is_error_record(vector):
            report.outcomes.append(SampleOutcome(entry.label, entry.subject_id, "classify", error=vector["error"]))
            continue
        result = recorder.record_result(entry.label, ResultSet.from_value(vector))
        report.outcomes.append(SampleOutcome(entry.label, entry.subject_id, "classify", result=result))
    if classify_entries and on_stage:
        on_stage(CLASSIFICATION_STAGE, False)
    return report


class PipelineMachine:
    """
    Drives a pipeline program against evaluation services. Same contract as
    an Evaluation (advance / waiting_on / resume / done / result), so a
    generator tier can run it as a job.
    """

    def __init__(self, program: Generator | None, services, stage: str | None = None):
        self.program = program
        self.services = services
        self.stage = stage
        self.waiting_on: Any = None
        self.done = False
        self.result: Any = None
        self._send: Any = None

    def advance(self) -> bool:
        if self.done:
            return True
        if self.waiting_on is not None:
            return False
        while True:
            try:
                request = self.program.send(self._send)
            except StopIteration as stop:
                self.done = True
                self.result = stop.value
                return True
            self._send = None
            outcome = self.services.call_procedure(request)
            if isinstance(outcome, Waiting):
                self.waiting_on = outcome.handle
                return False
            self._send = outcome

    def resume(self, value: Any) -> None:
        if self.waiting_on is None:
            raise RuntimeError("pipeline is not waiting")
        self.waiting_on = None
        self._send = value


def stage_table(procedures: ProcedureTable | None = None) -> ProcedureTable:
    return register_stage_procedures(procedures or ProcedureTable())


def run_pipeline_local(train_entries: list[CorpusEntry], classify_entries: list[CorpusEntry],
                       cfg: Configuration, training_set: TrainingSet | None = None,
                       recorder=None) -> PipelineReport:
    """Sequential run in this process; the oracle for the distributed run"""
    machine = PipelineMachine(pipeline_program(train_entries, classify_entries, cfg, training_set, recorder),
                              LocalServices(stage_table()))
    machine.advance()
    return machine.result


def run_pipeline_distributed(runtime, train_entries: list[CorpusEntry], classify_entries: list[CorpusEntry],
                             cfg: Configuration, training_set: TrainingSet | None = None,
                             max_steps: int = 200_000) -> PipelineReport:
    """runPipelineDistributed: the program runs as a job on a live generator tier"""

    def build(dgt) -> PipelineMachine:
        machine = PipelineMachine(None, dgt.services())

        def on_stage(stage: str, entered: bool) -> None:
            # results computed inside the stage are labelled in the warehouse
            machine.stage = stage if entered else None
            dgt.forensics.emit("stage_entered" if entered else "stage_exited", stage=stage)

        machine.program = pipeline_program(train_entries, classify_entries, cfg, training_set,
                                           dgt.classification, on_stage)
        return machine

    report = runtime.run_job(build, max_steps=max_steps)
    logger.info(f"Distributed pipeline finished: accuracy={report.accuracy} demands={report.demands}")
    return report


def save_training_set(path: str, training_set: TrainingSet) -> None:
    write_image(path, dump_state(training_set, DumpMode.GZIP_BINARY))


def load_training_set(path: str) -> TrainingSet:
    return TrainingSet.from_value(restore_state(read_image(path)))

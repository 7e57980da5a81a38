"""
Exception hierarchy for the eductive runtime.

Every failure the runtime reports is an EductiveError subclass so outer
surfaces (FastAPI app, CLI) can translate them in one place.
"""


class EductiveError(Exception):
    """Base class for all runtime errors"""

    kind = "EductiveError"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message or self.kind


# ---------------------------------------------------------------- compiler

class CompileError(EductiveError):
    kind = "CompileError"


class LucidSyntaxError(CompileError):
    kind = "SyntaxError"

    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col
        self.detail = message


class UnknownDimension(CompileError):
    kind = "UnknownDimension"

    def __init__(self, name: str):
        super().__init__(f"dimension '{name}' is not declared")
        self.name = name


class UndefinedIdentifier(CompileError):
    kind = "UndefinedIdentifier"

    def __init__(self, name: str):
        super().__init__(f"identifier '{name}' is not defined")
        self.name = name


class DuplicateDefinition(CompileError):
    kind = "DuplicateDefinition"

    def __init__(self, name: str):
        super().__init__(f"identifier '{name}' is defined more than once")
        self.name = name


class DimensionShadowing(CompileError):
    kind = "DimensionShadowing"

    def __init__(self, name: str):
        super().__init__(f"dimension '{name}' shadows an enclosing declaration")
        self.name = name


class GeerFormatError(CompileError):
    kind = "FormatError"


class GeerVersionError(CompileError):
    kind = "VersionError"

    def __init__(self, version):
        super().__init__(f"unsupported geer version {version!r}")
        self.version = version


# -------------------------------------------------------------- evaluation

class EvaluationError(EductiveError):
    kind = "EvaluationError"


class DivideByZero(EvaluationError):
    kind = "DivideByZero"


class DepthExceeded(EvaluationError):
    kind = "DepthExceeded"

    def __init__(self, limit: int):
        super().__init__(f"evaluation depth exceeded {limit} frames")
        self.limit = limit


class ProceduralFailure(EvaluationError):
    kind = "ProceduralFailure"

    def __init__(self, name: str, detail: str):
        super().__init__(f"procedure '{name}' failed: {detail}")
        self.name = name
        self.detail = detail


class UnknownProcedure(EvaluationError):
    kind = "UnknownProcedure"

    def __init__(self, name: str):
        super().__init__(f"unknown procedure '{name}'")
        self.name = name


class EvaluationTypeError(EvaluationError):
    kind = "TypeError"


# ------------------------------------------------------------------- store

class StoreError(EductiveError):
    kind = "StoreError"


class StoreUnavailable(StoreError):
    kind = "StoreUnavailable"


class UnknownSignature(StoreError):
    kind = "UnknownSignature"

    def __init__(self, signature: str):
        super().__init__(f"unknown demand signature {signature}")
        self.signature = signature


# ------------------------------------------------------------------- tiers

class TierError(EductiveError):
    kind = "TierError"


class DuplicateNode(TierError):
    kind = "DuplicateNode"


class GmtUnavailable(TierError):
    kind = "GmtUnavailable"


class CapacityExceeded(TierError):
    kind = "CapacityExceeded"


class NoDstAvailable(TierError):
    kind = "NoDstAvailable"


class Unauthenticated(TierError):
    kind = "Unauthenticated"


class UnknownTier(TierError):
    kind = "UnknownTier"

    def __init__(self, tier_id: str):
        super().__init__(f"unknown tier '{tier_id}'")
        self.tier_id = tier_id


class NoCapacity(TierError):
    kind = "NoCapacity"


# --------------------------------------------------------------- transport

class TransportError(EductiveError):
    kind = "TransportError"


class TransportDown(TransportError):
    kind = "TransportDown"


class FrameTooLarge(TransportError):
    kind = "FrameTooLarge"


class FrameFormatError(TransportError):
    kind = "FrameFormatError"


class AllProtocolsDown(TransportError):
    kind = "AllProtocolsDown"


# ---------------------------------------------------------------- recovery

class RecoveryError(EductiveError):
    kind = "RecoveryError"


class IllegalTransition(RecoveryError):
    kind = "IllegalTransition"

    def __init__(self, state, event):
        super().__init__(f"event {event} is illegal in state {state}")
        self.state = state
        self.event = event


class LogWriteFailure(RecoveryError):
    kind = "LogWriteFailure"


class CorruptLog(RecoveryError):
    kind = "CorruptLog"

    def __init__(self, position: int, reason: str = ""):
        super().__init__(f"corrupt log at byte {position}" + (f": {reason}" if reason else ""))
        self.position = position


class IntegrityFailure(RecoveryError):
    kind = "IntegrityFailure"


class ImageFormatError(RecoveryError):
    kind = "FormatError"


class TxnIdOverflow(RecoveryError):
    kind = "TxnIdOverflow"


# ---------------------------------------------------------------- pipeline

class PipelineError(EductiveError):
    kind = "PipelineError"


class SampleFormatError(PipelineError):
    kind = "FormatError"


class EmptySample(PipelineError):
    kind = "EmptySample"


class AllSilence(PipelineError):
    kind = "AllSilence"


class SampleTooShort(PipelineError):
    kind = "SampleTooShort"


class MethodMismatch(PipelineError):
    kind = "MethodMismatch"


class EmptyTrainingSet(PipelineError):
    kind = "EmptyTrainingSet"


class ConfigurationError(PipelineError):
    kind = "ConfigurationError"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ----------------------------------------------------------------- runtime

class InstanceError(EductiveError):
    kind = "InstanceError"


class ScenarioError(InstanceError):
    kind = "ScenarioError"

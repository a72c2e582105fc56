"""Exception types raised across the toolkit."""


class GwshmError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(GwshmError, ValueError):
    """Bad configuration or input that fails a documented precondition."""


class NoRootFound(GwshmError):
    pass


class MultipleRoots(GwshmError):
    pass


class PoleError(GwshmError, ZeroDivisionError):
    """Dispersion residual evaluated exactly on a pole."""


class DamageOutsidePlate(ValidationError):
    pass


class DegenerateEnvelope(GwshmError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyClass(GwshmError):
    pass


class DegenerateData(GwshmError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SingleCluster(GwshmError):
    pass


class CoincidentSensors(ValidationError):
    pass


class EmptySdcTable(ValidationError):
    pass


class WindowOutsideRecord(GwshmError):
    pass


class ZeroEnergyWindow(GwshmError):
    pass


class ZeroEnergyBand(GwshmError):
    pass


class ZeroVarianceWindow(GwshmError):
    pass


class MissingArtifact(GwshmError):
    pass


class StageError(GwshmError):
    """Pipeline stage failure, tagged with the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

"""Exception types shared across the engine."""


class SocnavError(Exception):
    """Base class for all engine errors."""


class NonFiniteForce(SocnavError):
    """A force component came back NaN or infinite (plugin bug)."""


class MissingLeader(SocnavError):
    """A pedestrian group has no designated leader."""


class UnknownPlugin(SocnavError):
    """A config referenced a behavior plugin that is not registered."""


class CoincidentAgents(SocnavError):
    """Two agents share an identical position (resolved internally)."""


class StaleFrame(SocnavError):
    """A semantic frame arrived with a timestamp older than the stored one."""


class PlacementExhausted(SocnavError):
    """Random placement ran out of retries before siting everything."""


class NoPath(SocnavError):
    """Global planner found start and goal disconnected."""


class UnreachableGoal(SocnavError):
    """No mutually reachable start/goal pair could be sampled."""


class SpawnCollision(SocnavError):
    """A scenario pose lies on an occupied cell."""


class StageOutOfRange(SocnavError):
    """Curriculum stage index beyond the file's stage list."""


class DegenerateTrace(SocnavError):
    """Episode trace too short to compute trajectory metrics."""


class TraceCorrupt(SocnavError):
    """Trace file failed its checksum or framing checks."""


class ConfigError(SocnavError):
    """Config file failed schema validation. Carries field diagnostics."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = ""
        if field is not None:
            prefix += f"{field}: "
        if line is not None:
            prefix += f"(line {line}) "
        super().__init__(prefix + message)

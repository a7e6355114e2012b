"""Exception hierarchy shared by every rumex module."""


class RumexError(Exception):
    """Base class. ``code`` is the machine-readable name surfaced by the CLI."""

    code = "RumexError"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class UnknownNode(RumexError, KeyError):
    code = "UnknownNode"

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class DuplicateId(RumexError, ValueError):
    code = "DuplicateId"


class DisconnectedRumour(RumexError, ValueError):
    code = "DisconnectedRumour"


class FeatureDimMismatch(RumexError, ValueError):
    code = "FeatureDimMismatch"


class SchemaMismatch(RumexError, ValueError):
    code = "SchemaMismatch"


class InfeasibleEdgeCount(RumexError, ValueError):
    code = "InfeasibleEdgeCount"


class EmptySeedSet(RumexError, ValueError):
    code = "EmptySeedSet"


class SizeLimitExceeded(RumexError, ValueError):
    code = "SizeLimitExceeded"


class NoEdges(RumexError, ValueError):
    code = "NoEdges"


class ZeroVector(RumexError, ValueError):
    code = "ZeroVector"


class NonFiniteLoss(RumexError, FloatingPointError):
    code = "NonFiniteLoss"


class TooManySubsets(RumexError, ValueError):
    code = "TooManySubsets"


class StaleQuery(RumexError, ValueError):
    code = "StaleQuery"


class NotCalibrated(RumexError, RuntimeError):
    code = "NotCalibrated"


class ModelMissing(RumexError, RuntimeError):
    code = "ModelMissing"


class ConfigError(RumexError, ValueError):
    code = "ConfigError"


class IoError(RumexError, OSError):
    code = "IoError"
